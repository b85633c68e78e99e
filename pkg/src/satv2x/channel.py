"""Radio layer: link gains, noise, co-channel interference and Shannon capacity.

Everything here is a pure function. Link math is linear (mW, Hz); dB only
appears in :class:`LinkBudgetConfig` and the conversion helpers.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple

import numpy as np


class ChannelDomainError(ValueError):
    pass


class GeometryError(ValueError):
    pass


def db_to_linear(db):
    return np.power(10.0, np.asarray(db, dtype=np.float64) / 10.0)


def linear_to_db(lin):
    return 10.0 * np.log10(lin)


def dbm_to_mw(dbm):
    return db_to_linear(dbm)


@dataclass(frozen=True)
class LinkBudgetConfig:
    carrier_frequency_terrestrial: float = 3.5e9
    carrier_frequency_sat: float = 30e9
    pathloss_exponent_v2i: float = 3.76
    pathloss_exponent_v2v: float = 3.76
    sat_altitude: float = 550e3
    elevation_deg: float = 90.0
    tx_gain_sat: float = 43.2
    rx_gain_sat: float = 30.5
    # atmospheric attenuation with the 2.2 dB scintillation loss folded in
    atmospheric_loss: float = 2.2
    noise_psd: float = -174.0
    noise_figure_vehicle: float = 9.0
    noise_figure_bs: float = 5.0
    noise_figure_sat: float = 1.2
    antenna_gain_vehicle: float = 3.0
    antenna_gain_bs: float = 8.0
    antenna_height_vehicle: float = 1.5
    antenna_height_bs: float = 25.0
    shadowing_std: float = 8.0

    def __post_init__(self):
        if not (self.pathloss_exponent_v2i > 0 and self.pathloss_exponent_v2v > 0):
            raise ValueError("path-loss exponent must be > 0")
        if self.sat_altitude <= 0:
            raise ValueError("sat_altitude must be > 0")
        if self.carrier_frequency_terrestrial <= 0 or self.carrier_frequency_sat <= 0:
            raise ValueError("carrier frequencies must be > 0")
        if not 0 < self.elevation_deg <= 90:
            raise ValueError("elevation_deg must be in (0, 90]")
        if self.shadowing_std < 0:
            raise ValueError("shadowing_std must be >= 0")
        gains = (self.tx_gain_sat, self.rx_gain_sat, self.atmospheric_loss,
                 self.antenna_gain_vehicle, self.antenna_gain_bs)
        if not all(math.isfinite(g) for g in gains):
            raise ValueError("link-budget gains must be finite")


class FadingDraw(NamedTuple):
    shadowing: float  # dB
    fast: float  # |h|^2


def draw_fading(rng: np.random.Generator, shadowing_std: float, size=None) -> FadingDraw:
    """Log-normal shadowing and unit-mean exponential |h|^2 (Rayleigh amplitude)."""
    return FadingDraw(rng.normal(0.0, shadowing_std, size), rng.exponential(1.0, size))


def terrestrial_gain(dist, kappa: float, fading: FadingDraw):
    dist = np.asarray(dist, dtype=np.float64)
    if np.any(dist <= 0):
        raise ChannelDomainError("terrestrial_gain needs dist > 0 (co-located transceivers)")
    return dist ** (-kappa) * fading.fast * db_to_linear(fading.shadowing)


def free_space_loss(dist, freq):
    """Free-space path loss in dB for ``dist`` in m and ``freq`` in Hz."""
    dist = np.asarray(dist, dtype=np.float64)
    freq = np.asarray(freq, dtype=np.float64)
    if np.any(dist <= 0) or np.any(freq <= 0):
        raise ChannelDomainError("free_space_loss needs dist > 0 and freq > 0")
    return 20.0 * np.log10(dist / 1e3) + 20.0 * np.log10(freq / 1e9) + 92.45


def slant_range(altitude: float, elevation_deg: float, earth_radius: float = 6371e3) -> float:
    """Ground-to-satellite distance for a fixed elevation angle."""
    el = math.radians(elevation_deg)
    re = earth_radius
    return math.sqrt((re + altitude) ** 2 - (re * math.cos(el)) ** 2) - re * math.sin(el)


def satellite_gain(cfg: LinkBudgetConfig, slant: float) -> float:
    if slant < cfg.sat_altitude * (1.0 - 1e-12):
        raise GeometryError(f"slant range {slant} m below altitude {cfg.sat_altitude} m")
    budget = (cfg.tx_gain_sat + cfg.rx_gain_sat - cfg.atmospheric_loss
              - free_space_loss(slant, cfg.carrier_frequency_sat))
    return float(db_to_linear(budget))


def noise_power(bandwidth: float, noise_figure: float, psd: float = -174.0) -> float:
    """Thermal noise plus receiver noise figure, in mW."""
    if bandwidth <= 0:
        raise ChannelDomainError("bandwidth must be > 0")
    return float(dbm_to_mw(psd + 10.0 * math.log10(bandwidth) + noise_figure))


class Assignment(NamedTuple):
    agent: int
    subchannel: int
    power: float  # mW
    gain: float  # from this agent's transmitter to the receiver of interest


def interference_power(me: int, assignments: Iterable[Assignment]) -> float:
    """Co-channel interference at ``me``'s receiver: sum of P_j g_j over j != me on me's subchannel.

    ``assignments`` must contain ``me``'s own entry (its gain is ignored) and
    only terrestrial transmissions. Without an entry for ``me`` the result is 0.
    """
    assignments = list(assignments)
    mine = [a.subchannel for a in assignments if a.agent == me]
    if not mine:
        return 0.0
    total = 0.0
    for a in assignments:
        if a.agent != me and a.subchannel == mine[0]:
            total += a.power * a.gain
    return total


def interference_vector(subchannel: np.ndarray, power: np.ndarray, cross_gain: np.ndarray,
                        active: np.ndarray) -> np.ndarray:
    """Interference at every receiver at once.

    ``cross_gain[i, j]`` is the gain from transmitter ``j`` to receiver of
    link ``i`` on ``i``'s subchannel. Only ``active`` transmitters contribute.
    """
    same = (subchannel[:, None] == subchannel[None, :]) & active[None, :]
    np.fill_diagonal(same, False)
    return np.sum(np.where(same, cross_gain * power[None, :], 0.0), axis=1)


def sinr(power, gain, noise, interference):
    return np.asarray(power) * np.asarray(gain) / (np.asarray(noise) + np.asarray(interference))


def capacity(bandwidth, power, gain, noise, interference=0.0):
    """Shannon capacity in bit/s."""
    noise = np.asarray(noise, dtype=np.float64)
    if np.any(noise <= 0):
        raise ChannelDomainError("noise power must be > 0")
    return np.asarray(bandwidth) * np.log2(1.0 + sinr(power, gain, noise, interference))
