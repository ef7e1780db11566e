# Copyright the dwdmqkd-nsca authors. All Rights Reserved.
#
# Licensed under the Apache License, Version 2.0 (the "License"). You
# may not use this file except in compliance with the License. A copy of
# the License is located at
#
#     http://www.apache.org/licenses/LICENSE-2.0
#
# or in the "license" file accompanying this file. This file is
# distributed on an "AS IS" BASIS, WITHOUT WARRANTIES OR CONDITIONS OF
# ANY KIND, either express or implied. See the License for the specific
# language governing permissions and limitations under the License.

"""Exceptions raised by the package. All of them are ``ValueError`` subclasses."""


class TopologyError(ValueError):
    """Raised for a topology that violates the structural constraints."""


class ChannelStateError(ValueError):
    """Raised for an illegal channel state transition or a link of the wrong kind."""


class SchemaMismatchError(ValueError):
    """Raised when a feature vector or dataset does not match a model's schema."""


class ModelFormatError(ValueError):
    """Raised when a model file cannot be read back into a valid model."""


class ConfigError(ValueError):
    """Raised for an invalid scenario or physics configuration."""
