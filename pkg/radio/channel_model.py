"""
Radio channel between a gNB and the UE.

Received power is composed in dB as

    P_recv = P_t - PL(d) + F + 10 log10(p_LOS(d))

with a log-distance path loss PL, a Rayleigh term F drawn from a complex
Gaussian coefficient and an empirical line-of-sight probability used as a
continuous attenuator. RSRP samples are smoothed per link with a moving
average over the last N samples.
"""

import math
from collections import deque
from dataclasses import dataclass
from typing import Deque

import numpy as np

from errors import ConfigError

# |h|^2 floor, keeps the dB transform finite
FADING_POWER_FLOOR = 1e-12

# distance scale of the LoS density term, metres
LOS_DECAY_DISTANCE_M = 39.0

# below this distance the LoS probability saturates at 1
LOS_CUTOFF_DISTANCE_M = 20.0


@dataclass(frozen=True)
class ChannelParams:
    """
    Propagation parameters.

    Parameters:
    -----------
    alpha : float
        Path-loss exponent
    d0 : float
        Reference distance in metres
    epsilon_los : float
        LoS density constant, in (0, 1)
    fading_enabled : bool
        Draw the Rayleigh coefficient; otherwise only the (d0/d)^2 gain remains
    avg_window : int
        Number of raw samples in the RSRP moving average
    pure_fading : bool
        Drop the (d0/d) factor from the fading term
    """
    alpha: float = 2.8
    d0: float = 1.0
    epsilon_los: float = 0.8
    fading_enabled: bool = True
    avg_window: int = 5
    pure_fading: bool = False

    def __post_init__(self):
        if not self.alpha > 0:
            raise ConfigError(f"alpha must be positive, got {self.alpha}")
        if not self.d0 > 0:
            raise ConfigError(f"d0 must be positive, got {self.d0}")
        if not 0 < self.epsilon_los < 1:
            raise ConfigError(f"epsilon_los must lie in (0, 1), got {self.epsilon_los}")
        if int(self.avg_window) != self.avg_window or self.avg_window < 1:
            raise ConfigError(f"avg_window must be an integer >= 1, got {self.avg_window}")


def dbm_to_mw(power_dbm: float) -> float:
    return 10.0 ** (power_dbm / 10.0)


def mw_to_dbm(power_mw: float) -> float:
    return 10.0 * math.log10(power_mw)


def path_loss(d: float, p: ChannelParams) -> float:
    """Log-distance attenuation in dB; distances below d0 are clamped to d0."""
    d = max(d, p.d0)
    return 10.0 * p.alpha * math.log10(d / p.d0)


def _distance_gain(d: float, p: ChannelParams) -> float:
    if p.pure_fading:
        return 1.0
    return p.d0 / max(d, p.d0)


def fading_sample(rng: np.random.Generator, d: float, p: ChannelParams) -> float:
    """
    Small-scale fading term F = 10 log10(|(d0/d) h|^2) in dB.

    h = x + jy with x, y ~ N(0, 1). With fading disabled the coefficient is
    dropped and only the distance gain is returned.
    """
    gain = _distance_gain(d, p)
    if not p.fading_enabled:
        return 10.0 * math.log10(gain * gain)
    x, y = rng.standard_normal(2)
    h_power = max(x * x + y * y, FADING_POWER_FLOOR)
    return 10.0 * math.log10(gain * gain * h_power)


def los_probability(d: float, p: ChannelParams) -> float:
    """Empirical LoS probability min(20/d, 1)(1 - eps^(d/39)) + eps^(d/39)."""
    if d <= 0:
        return 1.0
    decay = p.epsilon_los ** (d / LOS_DECAY_DISTANCE_M)
    return min(LOS_CUTOFF_DISTANCE_M / d, 1.0) * (1.0 - decay) + decay


def received_power(pt: float, d: float, rng: np.random.Generator, p: ChannelParams) -> float:
    """Raw RSRP sample in dBm for transmit power pt (dBm) at distance d (m)."""
    d = max(d, p.d0)
    return pt - path_loss(d, p) + fading_sample(rng, d, p) + 10.0 * math.log10(los_probability(d, p))


def mean_received_power(pt: float, d: float, p: ChannelParams) -> float:
    """Received power with the Rayleigh draw removed; deterministic in (pt, d)."""
    d = max(d, p.d0)
    gain = _distance_gain(d, p)
    return pt - path_loss(d, p) + 20.0 * math.log10(gain) + 10.0 * math.log10(los_probability(d, p))


def link_rng(seed: int, episode: int, gnb_id: int) -> np.random.Generator:
    """Independent RNG stream of one (UE, gNB) link."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(episode, 1, gnb_id)))


class RsrpWindow:
    """Moving average over the last N raw RSRP samples of one link."""

    def __init__(self, size: int):
        if size < 1:
            raise ValueError("window size must be >= 1")
        self.size = size
        self._samples: Deque[float] = deque(maxlen=size)

    def __len__(self) -> int:
        return len(self._samples)

    def push(self, sample: float) -> float:
        self._samples.append(sample)
        return self.mean()

    def mean(self) -> float:
        if not self._samples:
            raise ValueError("empty RSRP window")
        return float(np.mean(self._samples))

    def clear(self):
        self._samples.clear()


def push_and_average(w: RsrpWindow, sample: float) -> float:
    """Append a raw sample (evicting the oldest beyond N) and return the mean."""
    return w.push(sample)
