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

"""Noise in a quantum channel sharing a fibre with classical channels, and the
resulting decoy-state secure key rate.

Noise sources are co-propagating spontaneous Raman scattering, four-wave mixing
and adjacent-channel crosstalk, on top of detector dark counts. Raman and FWM
light is generated in the fibre and then crosses the receiver-side DWDM stage,
so it is attenuated by the DWDM insertion loss before detection. The key rate is
the asymptotic GLLP bound with infinitely many decoy states.

All powers are in W unless a name says otherwise; classical channel powers are
passed in mW as stored by :class:`~dwdmqkd.nsca.network.Network`.
"""

import dataclasses
import json
import logging
import math
from dataclasses import dataclass
from typing import Any, Dict, List, Mapping, Tuple

import numpy as np
from numpy.typing import ArrayLike
from scipy.constants import c as SPEED_OF_LIGHT
from scipy.constants import h as PLANCK
from scipy.special import entr

from dwdmqkd.nsca.errors import ConfigError
from dwdmqkd.nsca.network import Network

logger = logging.getLogger(__name__)

_BACKGROUND_ERROR = 0.5
_GRID_TOLERANCE_HZ = 1e3


@dataclass(frozen=True)
class RamanProfile:
    """Spontaneous Raman coefficient rho versus wavelength offset.

    The table gives the Stokes side (quantum channel at a longer wavelength than
    the pump) in 1/(km nm); the anti-Stokes side is the same curve scaled by
    ``anti_stokes_factor``. Offsets beyond the table clamp to its last entry.
    """

    offsets_nm: Tuple[float, ...] = (0.0, 0.8, 1.6, 3.2, 4.8, 6.4, 8.0, 9.6, 11.2, 12.8, 16.0, 20.0)
    coefficients: Tuple[float, ...] = (
        0.0,
        0.30e-10,
        0.60e-10,
        1.10e-10,
        1.50e-10,
        1.80e-10,
        2.10e-10,
        2.35e-10,
        2.60e-10,
        2.80e-10,
        3.20e-10,
        3.60e-10,
    )
    anti_stokes_factor: float = 0.6

    def __post_init__(self):
        object.__setattr__(self, "offsets_nm", tuple(float(x) for x in self.offsets_nm))
        object.__setattr__(self, "coefficients", tuple(float(x) for x in self.coefficients))
        if len(self.offsets_nm) != len(self.coefficients) or not self.offsets_nm:
            raise ConfigError("Raman profile needs matching, non-empty offset/coefficient tables")
        if any(b <= a for a, b in zip(self.offsets_nm, self.offsets_nm[1:])):
            raise ConfigError("Raman profile offsets must be strictly increasing")
        if min(self.coefficients) < 0 or not 0 <= self.anti_stokes_factor <= 1:
            raise ConfigError(
                "Raman coefficients must be non-negative and the anti-Stokes factor in [0, 1]"
            )

    @classmethod
    def constant(cls, rho: float, anti_stokes_factor: float = 1.0) -> "RamanProfile":
        """RamanProfile: A flat profile, handy for closed-form checks."""
        return cls((0.0, 1.0), (rho, rho), anti_stokes_factor)

    def coefficient(self, delta_nm: ArrayLike) -> np.ndarray:
        """Raman coefficient for offsets ``lambda_q - lambda_pump`` in nm."""
        delta = np.asarray(delta_nm, dtype=float)
        rho = np.interp(np.abs(delta), self.offsets_nm, self.coefficients)
        return np.where(delta < 0, rho * self.anti_stokes_factor, rho)


@dataclass(frozen=True)
class QkdParams:
    """Physical constants of the QKD link and the classical co-propagation.

    Args:
        gate_rate_hz (float): Detector gating (pulse) frequency f_rep. Default: 10 MHz.
        detector_efficiency (float): Single-photon detector efficiency. Default: 0.10.
        dark_count_prob (float): Dark count probability per gate Y_0. Default: 3e-6.
        gate_duration_s (float): Detector gate duration. Default: 500 ps.
        visibility (float): Interferometer visibility V. Default: 0.95.
        filter_bandwidth_ghz (float): Receiver filter bandwidth B_f. Default: 15 GHz.
        dwdm_insertion_loss_db (float): Insertion loss of the DWDM system. Default: 8 dB.
        fiber_attenuation_db_per_km (float): Fibre loss alpha. Default: 0.2 dB/km.
        mean_photon_number (float): Signal-state mean photon number mu_s. Default: 0.5.
        raman_profile (RamanProfile): Spontaneous Raman coefficient table.
        nonlinear_coefficient (float): Fibre nonlinearity gamma in 1/(W km). Default: 1.3.
        dispersion_ps_nm_km (float): Chromatic dispersion D. Default: 17.
        error_correction_efficiency (float): f_EC. Default: 1.16.
        sifting_factor (float): Basis sifting factor q. Default: 0.5.
        adjacent_isolation_db (float): Demultiplexer isolation toward adjacent channels.
            Default: 100 dB.
    """

    gate_rate_hz: float = 1e7
    detector_efficiency: float = 0.10
    dark_count_prob: float = 3e-6
    gate_duration_s: float = 500e-12
    visibility: float = 0.95
    filter_bandwidth_ghz: float = 15.0
    dwdm_insertion_loss_db: float = 8.0
    fiber_attenuation_db_per_km: float = 0.2
    mean_photon_number: float = 0.5
    raman_profile: RamanProfile = dataclasses.field(default_factory=RamanProfile)
    nonlinear_coefficient: float = 1.3
    dispersion_ps_nm_km: float = 17.0
    error_correction_efficiency: float = 1.16
    sifting_factor: float = 0.5
    adjacent_isolation_db: float = 100.0

    def __post_init__(self):
        for name in ("detector_efficiency", "visibility", "sifting_factor"):
            value = getattr(self, name)
            if not 0 < value <= 1:
                raise ConfigError(f"{name} must lie in (0, 1], got {value}")
        if not 0 <= self.dark_count_prob <= 1:
            raise ConfigError(f"dark_count_prob must lie in [0, 1], got {self.dark_count_prob}")
        for name in (
            "gate_rate_hz",
            "gate_duration_s",
            "filter_bandwidth_ghz",
            "mean_photon_number",
        ):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        for name in (
            "dwdm_insertion_loss_db",
            "fiber_attenuation_db_per_km",
            "nonlinear_coefficient",
            "dispersion_ps_nm_km",
            "adjacent_isolation_db",
        ):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be non-negative, got {getattr(self, name)}")
        if self.error_correction_efficiency < 1:
            raise ConfigError(
                f"error_correction_efficiency must be >= 1, got {self.error_correction_efficiency}"
            )

    @property
    def alpha_per_km(self) -> float:
        """float: Fibre attenuation in 1/km (linear units)."""
        return self.fiber_attenuation_db_per_km * math.log(10.0) / 10.0

    @property
    def detector_misalignment(self) -> float:
        """float: Intrinsic detection error e_det = (1 - V) / 2."""
        return (1.0 - self.visibility) / 2.0

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "QkdParams":
        """Builds parameters from a physics-file mapping; unknown keys are rejected."""
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"Unknown physics parameters: {sorted(unknown)}")
        values = dict(data)
        if "raman_profile" in values and not isinstance(values["raman_profile"], RamanProfile):
            values["raman_profile"] = RamanProfile(**values["raman_profile"])
        return cls(**values)

    def to_dict(self) -> Dict[str, Any]:
        return dataclasses.asdict(self)


def load_qkd_params(path: str) -> QkdParams:
    """QkdParams: Defaults overridden by the JSON physics file at ``path``."""
    with open(path) as f:
        return QkdParams.from_dict(json.load(f))


@dataclass(frozen=True)
class NoiseBreakdown:
    """Noise at the quantum receiver input inside the filter bandwidth."""

    raman_w: float
    fwm_w: float
    crosstalk_w: float
    p_noise_click: float

    @property
    def total_w(self) -> float:
        return self.raman_w + self.fwm_w + self.crosstalk_w


@dataclass(frozen=True)
class SkrEstimate:
    gain: float
    qber: float
    single_photon_gain: float
    single_photon_error: float
    rate_bps: float
    noise: NoiseBreakdown


def binary_entropy(x: ArrayLike) -> np.ndarray:
    """Binary entropy H2 in bits, with H2(0) = H2(1) = 0."""
    p = np.clip(np.asarray(x, dtype=float), 0.0, 1.0)
    return (entr(p) + entr(1.0 - p)) / math.log(2.0)


def filter_bandwidth_nm(wavelength_m: float, params: QkdParams) -> float:
    """float: The receiver filter bandwidth expressed in nm at ``wavelength_m``."""
    return wavelength_m**2 * params.filter_bandwidth_ghz * 1e9 / SPEED_OF_LIGHT * 1e9


def raman_noise_power(
    powers_mw: ArrayLike,
    wavelengths_m: ArrayLike,
    qch_wavelength_m: float,
    length_km: float,
    params: QkdParams,
) -> float:
    """Forward spontaneous Raman power at the fibre output inside the filter.

    ``sum_c P_c * exp(-alpha L) * L * rho(lambda_q - lambda_c) * d_lambda_f``.

    Args:
        powers_mw (ArrayLike): Launch powers of the classical channels in mW.
        wavelengths_m (ArrayLike): Their wavelengths in m.
        qch_wavelength_m (float): Quantum channel wavelength in m.
        length_km (float): Fibre length, positive.
        params (QkdParams): Physical constants.

    Returns:
        float: Noise power in W.
    """
    if length_km <= 0:
        raise ValueError(f"Fibre length must be positive, got {length_km}")
    powers_w = np.asarray(powers_mw, dtype=float) * 1e-3
    if powers_w.size == 0:
        return 0.0
    delta_nm = (qch_wavelength_m - np.asarray(wavelengths_m, dtype=float)) * 1e9
    rho = params.raman_profile.coefficient(delta_nm)
    span = math.exp(-params.alpha_per_km * length_km) * length_km
    return float(np.sum(powers_w * rho) * span * filter_bandwidth_nm(qch_wavelength_m, params))


def fwm_triples(frequencies_hz: ArrayLike, qch_frequency_hz: float) -> List[Tuple[int, int, int]]:
    """Mixing triples landing on the quantum channel.

    Returns positions ``(i, j, k)`` into ``frequencies_hz`` with ``i <= j``,
    ``k`` distinct from both and ``f_i + f_j - f_k = f_q``.
    """
    f = np.asarray(frequencies_hz, dtype=float)
    n = f.size
    if n < 2:
        return []
    mixed = f[:, None, None] + f[None, :, None] - f[None, None, :]
    i, j, k = np.indices((n, n, n))
    on_grid = np.abs(mixed - qch_frequency_hz) < _GRID_TOLERANCE_HZ
    hit = on_grid & (i <= j) & (k != i) & (k != j)
    return [(int(a), int(b), int(c)) for a, b, c in zip(i[hit], j[hit], k[hit])]


def fwm_efficiency(
    delta_beta_per_km: ArrayLike, length_km: float, params: QkdParams
) -> np.ndarray:
    """Phase-matching efficiency of a mixing product for phase mismatch ``delta_beta``."""
    alpha = params.alpha_per_km
    delta_beta = np.asarray(delta_beta_per_km, dtype=float)
    l_eff = _effective_length(length_km, alpha)
    numerator = np.abs(1.0 - np.exp((-alpha + 1j * delta_beta) * length_km)) ** 2
    denominator = (alpha**2 + delta_beta**2) * l_eff**2
    safe = np.where(denominator > 0, denominator, 1.0)
    return np.where(denominator > 0, numerator / safe, 1.0)


def fwm_noise_power(
    powers_mw: ArrayLike,
    frequencies_hz: ArrayLike,
    qch_frequency_hz: float,
    length_km: float,
    params: QkdParams,
) -> float:
    """Four-wave-mixing power generated on the quantum channel frequency.

    Each triple contributes
    ``(eta / 9) * D^2 * gamma^2 * P_i P_j P_k * exp(-alpha L) * L_eff^2`` with
    degeneracy ``D = 3`` when ``i == j`` and 6 otherwise.

    Args:
        powers_mw (ArrayLike): Launch powers of the classical channels in mW.
        frequencies_hz (ArrayLike): Their grid frequencies in Hz.
        qch_frequency_hz (float): Quantum channel frequency in Hz.
        length_km (float): Fibre length in km.
        params (QkdParams): Physical constants.

    Returns:
        float: Noise power in W.
    """
    triples = fwm_triples(frequencies_hz, qch_frequency_hz)
    if not triples:
        return 0.0
    p = np.asarray(powers_mw, dtype=float) * 1e-3
    f = np.asarray(frequencies_hz, dtype=float)
    i, j, k = (np.array(t) for t in zip(*triples))
    wavelength = SPEED_OF_LIGHT / qch_frequency_hz
    dispersion_si = params.dispersion_ps_nm_km * 1e-6
    delta_beta = (
        2.0 * math.pi * wavelength**2 / SPEED_OF_LIGHT
        * np.abs(f[i] - f[k]) * np.abs(f[j] - f[k]) * dispersion_si * 1e3
    )
    eta = fwm_efficiency(delta_beta, length_km, params)
    degeneracy = np.where(i == j, 3.0, 6.0)
    alpha = params.alpha_per_km
    l_eff = _effective_length(length_km, alpha)
    products = (
        eta / 9.0 * degeneracy**2 * params.nonlinear_coefficient**2 * p[i] * p[j] * p[k]
    )
    return float(np.sum(products) * math.exp(-alpha * length_km) * l_eff**2)


def crosstalk_noise_power(
    powers_mw: ArrayLike, channels: ArrayLike, qch_index: int, isolation_db: float
) -> float:
    """Leakage of the channels adjacent to the quantum channel through the demultiplexer.

    Non-adjacent channels are treated as fully suppressed.
    """
    if isolation_db < 0:
        raise ValueError(f"Isolation must be non-negative, got {isolation_db}")
    idx = np.asarray(channels)
    if idx.size == 0:
        return 0.0
    adjacent = np.abs(idx - qch_index) == 1
    powers_w = np.asarray(powers_mw, dtype=float)[adjacent] * 1e-3
    return float(np.sum(powers_w) * 10.0 ** (-isolation_db / 10.0))


def noise_click_prob(total_noise_w: float, qch_wavelength_m: float, params: QkdParams) -> float:
    """float: Probability per gate that noise light yields a detector click."""
    if total_noise_w < 0:
        raise ValueError(f"Noise power must be non-negative, got {total_noise_w}")
    photon_energy = PLANCK * SPEED_OF_LIGHT / qch_wavelength_m
    rate = total_noise_w / photon_energy
    return min(1.0, rate * params.gate_duration_s * params.detector_efficiency)


def gain_and_qber(
    channel_loss_db: float, p_noise: float, params: QkdParams
) -> Tuple[float, float]:
    """Overall gain and QBER of the signal state.

    Args:
        channel_loss_db (float): Fibre loss plus DWDM insertion loss.
        p_noise (float): Noise click probability per gate.
        params (QkdParams): Physical constants.

    Returns:
        Tuple[float, float]: ``(Q_mu, E_mu)``.
    """
    if channel_loss_db < 0:
        raise ValueError(f"Channel loss must be non-negative, got {channel_loss_db}")
    eta = _transmittance(channel_loss_db, params)
    background = min(1.0, params.dark_count_prob + p_noise)
    signal_clicks = -math.expm1(-params.mean_photon_number * eta)
    gain = signal_clicks + background * math.exp(-params.mean_photon_number * eta)
    if gain <= 0:
        return 0.0, 0.5
    errors = _BACKGROUND_ERROR * background + params.detector_misalignment * signal_clicks
    return gain, min(0.5, errors / gain)


def skr_gllp(
    gain: float, qber: float, channel_loss_db: float, p_noise: float, params: QkdParams
) -> float:
    """Asymptotic decoy-state GLLP lower bound on the secure key rate.

    Returns:
        float: Key rate in bit/s, clamped at zero.
    """
    single_gain, single_error = _single_photon(channel_loss_db, p_noise, params)
    per_pulse = -gain * params.error_correction_efficiency * binary_entropy(qber) + single_gain * (
        1.0 - binary_entropy(single_error)
    )
    return max(0.0, float(params.sifting_factor * params.gate_rate_hz * per_pulse))


def link_loss_db(length_km: float, params: QkdParams) -> float:
    """float: Fibre loss plus DWDM insertion loss seen by the quantum signal."""
    return params.fiber_attenuation_db_per_km * length_km + params.dwdm_insertion_loss_db


def noise_breakdown(
    network: Network, link: int, qch_index: int, params: QkdParams
) -> NoiseBreakdown:
    """NoiseBreakdown: Noise on ``qch_index`` of ``link`` for the current occupancy."""
    channels, powers_mw = network.data_channels(link)
    length = network.link(link).length_km
    freqs = network.frequencies_hz[channels - 1]
    q_freq = float(network.frequencies_hz[qch_index - 1])
    q_wavelength = SPEED_OF_LIGHT / q_freq
    receiver = 10.0 ** (-params.dwdm_insertion_loss_db / 10.0)
    raman = raman_noise_power(powers_mw, SPEED_OF_LIGHT / freqs, q_wavelength, length, params)
    fwm = fwm_noise_power(powers_mw, freqs, q_freq, length, params)
    crosstalk = crosstalk_noise_power(powers_mw, channels, qch_index, params.adjacent_isolation_db)
    total = (raman + fwm) * receiver + crosstalk
    return NoiseBreakdown(
        raman * receiver, fwm * receiver, crosstalk, noise_click_prob(total, q_wavelength, params)
    )


def evaluate_link_skr(
    network: Network, link: int, qch_index: int, params: QkdParams
) -> SkrEstimate:
    """Key rate of a quantum channel on ``qch_index`` of MUX ``link`` right now.

    Args:
        network (Network): Current occupancy snapshot.
        link (int): Index of a MUX link.
        qch_index (int): 1-based channel the quantum channel occupies (or would occupy).
        params (QkdParams): Physical constants.

    Returns:
        SkrEstimate: Gains, error rates, key rate and the noise that produced them.
    """
    if not network.link(link).is_mux:
        raise ValueError(f"Link {link} is a data-only link")
    noise = noise_breakdown(network, link, qch_index, params)
    loss = link_loss_db(network.link(link).length_km, params)
    gain, qber = gain_and_qber(loss, noise.p_noise_click, params)
    single_gain, single_error = _single_photon(loss, noise.p_noise_click, params)
    rate = skr_gllp(gain, qber, loss, noise.p_noise_click, params)
    return SkrEstimate(gain, qber, single_gain, single_error, rate, noise)


def link_key_rate(network: Network, link: int, params: QkdParams) -> float:
    """float: Total key rate of all quantum channels placed on ``link``."""
    return sum(
        evaluate_link_skr(network, link, ch, params).rate_bps
        for ch in network.quantum_channels(link)
    )


def _effective_length(length_km: float, alpha: float) -> float:
    if alpha == 0:
        return length_km
    return -math.expm1(-alpha * length_km) / alpha


def _transmittance(channel_loss_db: float, params: QkdParams) -> float:
    return 10.0 ** (-channel_loss_db / 10.0) * params.detector_efficiency


def _single_photon(
    channel_loss_db: float, p_noise: float, params: QkdParams
) -> Tuple[float, float]:
    eta = _transmittance(channel_loss_db, params)
    background = min(1.0, params.dark_count_prob + p_noise)
    mu = params.mean_photon_number
    yield_1 = background + eta - background * eta
    gain_1 = mu * math.exp(-mu) * yield_1
    if yield_1 <= 0:
        return gain_1, 0.5
    error_1 = (_BACKGROUND_ERROR * background + params.detector_misalignment * eta) / yield_1
    return gain_1, min(0.5, error_1)
