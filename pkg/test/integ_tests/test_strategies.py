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

import pytest
from scipy.stats import spearmanr

from dwdmqkd.nsca.config import StrategyConfig, StrategyKind
from dwdmqkd.nsca.harness import calibrate_pp, run_experiment, sweep


@pytest.fixture(scope="module")
def results(comparison, ring_model):
    return run_experiment(comparison, model=ring_model)


def test_ml_nsca_beats_fixed_band(results):
    ml, fb = results["ML-NSCA"], results["FB"]
    assert ml.mean_skr_bps >= 1.10 * fb.mean_skr_bps
    assert ml.mean_skr_bps - ml.ci_half_width_bps > fb.mean_skr_bps + fb.ci_half_width_bps


def test_oracle_bounds_ml_nsca(results):
    oracle, ml = results["Oracle"], results["ML-NSCA"]
    assert oracle.mean_skr_bps >= ml.mean_skr_bps
    for a, b in zip(oracle.runs, ml.runs):
        assert a.repetition == b.repetition
        assert a.mean_skr_bps >= b.mean_skr_bps - 1e-9


def test_ml_nsca_beats_calibrated_pp(comparison, results):
    target = results["ML-NSCA"].reallocations
    calibration = calibrate_pp(comparison, target)
    pp = StrategyConfig(StrategyKind.PP, ts=10, threshold_bps=calibration.threshold_bps)
    pp_result = run_experiment(comparison.replace(strategies=(pp,)))["PP"]
    assert results["ML-NSCA"].mean_skr_bps >= pp_result.mean_skr_bps


def decreasing(frame, strategy):
    rows = frame[frame["strategy"] == strategy]
    rho, _ = spearmanr(rows["value"], rows["mean_skr_bps"])
    return rho <= -0.8


@pytest.mark.parametrize("kind", list(StrategyKind))
def test_key_rate_falls_with_load(comparison, ring_model, kind):
    strategy = StrategyConfig(kind, ts=10)
    scenario = comparison.replace(strategies=(strategy,))
    frame = sweep(scenario, "TL", [10.0, 20.0, 30.0, 40.0], ring_model)
    assert decreasing(frame, strategy.label)


@pytest.mark.parametrize("kind", list(StrategyKind))
def test_key_rate_falls_with_length(comparison, ring_model, kind):
    strategy = StrategyConfig(kind, ts=10)
    scenario = comparison.replace(strategies=(strategy,))
    frame = sweep(scenario, "link_length", [5.0, 10.0, 20.0, 40.0], ring_model)
    assert decreasing(frame, strategy.label)


def test_ml_nsca_prefers_short_windows(comparison, ring_model):
    ml = StrategyConfig(StrategyKind.ML_NSCA, ts=10)
    scenario = comparison.replace(strategies=(ml,))
    frame = sweep(scenario, "TS", [5, 10, 20, 40], ring_model)
    assert decreasing(frame, "ML-NSCA")
