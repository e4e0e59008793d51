"""Underwater acoustic channel primitives.

Pure functions for absorption, propagation loss, Rayleigh fading, ambient
noise, SINR and achievable rate. All randomness comes in through an
explicitly passed numpy Generator, so every function here is safe to call
from any number of workers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

# Frequency below which the low-frequency absorption formula applies (kHz).
LOW_FREQ_CROSSOVER_KHZ = 0.4

# Reference intensity of a 1 uPa rms plane wave in seawater, W/m^2. Used to
# put the ambient-noise level on the same linear scale as transmit powers;
# only ratios enter the SINR, so the absolute calibration cancels out.
MICROPASCAL_SQ_TO_WATT = 0.67e-18


@dataclass(frozen=True)
class ChannelParams:
    """Static parameters of the acoustic channel and the receiver threshold."""

    carrier_freq_khz: float = 25.0
    bandwidth_hz: float = 5000.0
    spreading_k: float = 1.5
    anomaly_db: float = 0.0
    transducer_eff: float = 0.9
    sinr_threshold_db: float = 10.0
    noise_band_hz: float = 5000.0
    shipping: float = 0.0
    wind_mps: float = 10.0

    def __post_init__(self):
        if self.carrier_freq_khz <= 0:
            raise ValueError("carrier frequency must be positive")
        if self.bandwidth_hz <= 0 or self.noise_band_hz <= 0:
            raise ValueError("bandwidths must be positive")
        if not 0 < self.transducer_eff <= 1:
            raise ValueError("transducer efficiency must be in (0, 1]")
        if self.spreading_k not in (1.0, 1.5, 2.0):
            raise ValueError("spreading factor must be 1, 1.5 or 2")
        if self.anomaly_db < 0:
            raise ValueError("transmission anomaly must be >= 0 dB")
        if not 0 <= self.shipping <= 1:
            raise ValueError("shipping activity must be in [0, 1]")
        if self.wind_mps < 0:
            raise ValueError("wind speed must be >= 0")

    @property
    def sinr_threshold_linear(self) -> float:
        return db_to_linear(self.sinr_threshold_db)


@dataclass(frozen=True)
class LinkGeometry:
    """Transmitter-receiver separation in km."""

    distance_km: float

    def __post_init__(self):
        if self.distance_km < 0:
            raise ValueError("distance must be >= 0")


def db_to_linear(x_db: float) -> float:
    return 10.0 ** (x_db / 10.0)


def linear_to_db(x: float) -> float:
    return 10.0 * math.log10(x)


def thorp_absorption_db_per_km(fc_khz: float) -> float:
    """Absorption coefficient alpha(fc) in dB/km, fc in kHz.

    Uses the classic empirical fit above LOW_FREQ_CROSSOVER_KHZ and its
    low-frequency companion below.
    """
    if fc_khz < 0:
        raise ValueError("frequency must be >= 0")
    f2 = fc_khz * fc_khz
    if fc_khz >= LOW_FREQ_CROSSOVER_KHZ:
        return 0.11 * f2 / (1.0 + f2) + 44.0 * f2 / (4100.0 + f2) + 2.75e-4 * f2 + 0.003
    return 0.11 * f2 / (1.0 + f2) + 0.011 * f2 + 0.002


def transmission_loss(geom: LinkGeometry, params: ChannelParams) -> float:
    """Linear propagation gain G <= 1 over one link (Urick spreading + absorption).

    G = (1000 d)^-k * 10^-((alpha(fc) d + A) / 10) with d in km. Diverges as
    d -> 0, so zero distance is rejected.
    """
    d = geom.distance_km
    if d <= 0:
        raise ValueError("transmission loss is singular at zero distance")
    alpha = thorp_absorption_db_per_km(params.carrier_freq_khz)
    spreading = (1000.0 * d) ** (-params.spreading_k)
    return spreading * 10.0 ** (-(alpha * d + params.anomaly_db) / 10.0)


def sample_fading(rng: np.random.Generator, size=None):
    """Unit-mean Rayleigh fading amplitude(s) rho >= 0.

    Inverse-CDF sampling of P[rho <= x] = 1 - exp(-pi x^2 / 4), which has
    mean exactly 1.
    """
    u = rng.random(size)
    return np.sqrt(-4.0 * np.log1p(-u) / math.pi)


def channel_gain(loss: float, rho: float) -> float:
    """Instantaneous channel gain g = G * rho^2."""
    if loss < 0 or rho < 0:
        raise ValueError("loss and fading amplitude must be >= 0")
    return loss * rho * rho


def ambient_noise_psd_db(params: ChannelParams) -> float:
    """Total ambient-noise PSD at the carrier, dB re uPa^2/Hz.

    Four empirical components summed in linear power: turbulence, shipping,
    wind-driven waves and thermal agitation.
    """
    f = params.carrier_freq_khz
    s = params.shipping
    w = params.wind_mps
    turb = 17.0 - 30.0 * math.log10(f)
    ship = 40.0 + 20.0 * (s - 0.5) + 26.0 * math.log10(f) - 60.0 * math.log10(f + 0.03)
    wave = 50.0 + 7.5 * math.sqrt(w) + 20.0 * math.log10(f) - 40.0 * math.log10(f + 0.4)
    thermal = -15.0 + 20.0 * math.log10(f)
    total = sum(db_to_linear(x) for x in (turb, ship, wave, thermal))
    return linear_to_db(total)


def ambient_noise_power(params: ChannelParams) -> float:
    """Ambient noise power over the band around the carrier, in watts.

    PSD (linear uPa^2/Hz) times the band, scaled by the documented
    uPa^2 -> W reference so noise and received signal share one unit.
    """
    psd_linear = db_to_linear(ambient_noise_psd_db(params))
    return psd_linear * params.noise_band_hz * MICROPASCAL_SQ_TO_WATT


def sinr(
    tx_powers,
    gains_to_receiver,
    intended_index: int,
    ext_interference: float,
    noise: float,
    eta0: float,
) -> float:
    """Linear SINR at one receiver.

    gamma = eta0 p_i g_i / (eta0 sum_{j != i} p_j g_j + I_s + I_a). Noise may
    be zero only when interference keeps the denominator positive.
    """
    n = len(tx_powers)
    if n == 0:
        raise ValueError("at least one transmitter required")
    if len(gains_to_receiver) != n:
        raise ValueError("powers and gains must have equal length")
    if not 0 <= intended_index < n:
        raise ValueError("intended transmitter index out of range")
    if ext_interference < 0 or noise < 0:
        raise ValueError("interference and noise must be >= 0")
    signal = eta0 * tx_powers[intended_index] * gains_to_receiver[intended_index]
    interference = eta0 * sum(
        p * g for j, (p, g) in enumerate(zip(tx_powers, gains_to_receiver)) if j != intended_index
    )
    denom = interference + ext_interference + noise
    if denom <= 0:
        return math.inf if signal > 0 else 0.0
    return signal / denom


def data_rate(gamma_linear: float, params: ChannelParams) -> float:
    """Achievable rate in bps: Shannon capacity gated by the SINR threshold."""
    if gamma_linear < 0:
        raise ValueError("SINR must be >= 0")
    if gamma_linear < params.sinr_threshold_linear:
        return 0.0
    return params.bandwidth_hz * math.log2(1.0 + gamma_linear)
