"""
Optical/electronic readout chain: photon rates, shot noise, APD + TIA
low-pass, and lock-in demodulation.
"""

from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np
from scipy.signal import lfilter

from .constants import CONSTANTS
from .lindblad import DEFAULT_SCHEME, DensityState, LevelScheme, V2Rates
from .trace import Trace

C_LIGHT = 299792458.0


@dataclass(frozen=True)
class DetectorConfig:
    collection_efficiency: float = 0.01
    responsivity_a_per_w: float = 0.5
    wavelength_m: float = 916e-9
    tia_gain_v_per_a: float = 1e7
    bandwidth_hz: float = 100e3
    sample_rate_hz: float = 1e6
    dark_rate: float = 0.0

    def __post_init__(self):
        for name in ("collection_efficiency", "responsivity_a_per_w", "tia_gain_v_per_a",
                     "bandwidth_hz", "sample_rate_hz", "dark_rate"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.collection_efficiency > 1:
            raise ValueError("collection_efficiency must be <= 1")
        if self.sample_rate_hz < 2 * self.bandwidth_hz:
            raise ValueError("sample_rate_hz must be at least twice bandwidth_hz")

    @property
    def amps_per_photon_rate(self) -> float:
        """Photocurrent (A) per detected photon/s."""
        return self.responsivity_a_per_w * CONSTANTS.h * C_LIGHT / self.wavelength_m

    @property
    def volts_per_photon_rate(self) -> float:
        return self.amps_per_photon_rate * self.tia_gain_v_per_a


@dataclass(frozen=True)
class EmissionModel:
    """Per-level photon emission rates, or the phenomenological r0 (1 + c s) mode.

    In rate mode the emission of one center is multiplied by ``n_centers``.
    In phenomenological mode ``s`` is the |+-3/2> fraction of the ground
    population and ``r0`` is the detected rate of the fully +-1/2-polarized
    ensemble; collection efficiency is already folded into ``r0``.
    """

    emission_rates: Tuple[float, ...] = field(default_factory=lambda: EmissionModel.default_rates())
    mode: str = "rate"  # "rate" | "phenomenological"
    r0: float = 1e9
    contrast_c: float = 0.006
    n_centers: float = 1.0

    def __post_init__(self):
        if self.mode not in ("rate", "phenomenological"):
            raise ValueError(f"unknown emission mode {self.mode!r}")
        if any(r < 0 for r in self.emission_rates):
            raise ValueError("emission rates must be >= 0")
        if not 0 <= self.contrast_c < 1:
            raise ValueError("contrast_c must be in [0, 1)")
        if self.r0 < 0:
            raise ValueError("r0 must be >= 0")
        if not self.n_centers > 0:
            raise ValueError("n_centers must be > 0")

    @staticmethod
    def default_rates(rates: V2Rates = V2Rates(), scheme: LevelScheme = DEFAULT_SCHEME):
        em = [0.0] * scheme.n_levels
        for k in scheme.excited_indices:
            em[k] = rates.radiative
        return tuple(em)


def spin_signal(pops: np.ndarray, scheme: LevelScheme = DEFAULT_SCHEME) -> np.ndarray:
    """|+-3/2> fraction of the ground-state population (last axis = levels)."""
    g = list(scheme.ground_indices)
    ground = pops[..., g]
    return (ground[..., 0] + ground[..., 3]) / ground.sum(axis=-1)


def fluorescence_rate(state, em: EmissionModel = EmissionModel(), det: DetectorConfig = DetectorConfig(),
                      scheme: LevelScheme = DEFAULT_SCHEME):
    """Detected photon rate (1/s) for a state, a population vector, or a stack of either."""
    if isinstance(state, DensityState):
        pops = state.populations
    else:
        a = np.asarray(state)
        pops = np.real(np.einsum("...ii->...i", a)) if a.ndim >= 2 and a.shape[-1] == a.shape[-2] else np.real(a)
    if em.mode == "phenomenological":
        return em.r0 * (1.0 + em.contrast_c * spin_signal(pops, scheme)) + det.dark_rate
    return det.collection_efficiency * em.n_centers * (pops @ np.asarray(em.emission_rates)) + det.dark_rate


def poisson_readout(rate: Trace, dt: Optional[float] = None, seed=None) -> Trace:
    """Poisson photon counts per bin with mean rate * dt."""
    lam = np.asarray(rate.y, dtype=float)
    if np.any(lam < 0):
        raise ValueError("rates must be >= 0")
    dt = rate.dt if dt is None else dt
    rng = np.random.default_rng(seed)
    return Trace(rate.t, rng.poisson(lam * dt), rate.x_name, "counts")


def detector_filter(counts: Trace, det: DetectorConfig = DetectorConfig()) -> Trace:
    """APD/TIA output voltage: one-pole low-pass of the photocurrent.

    Bin n covers [t_n, t_n + dt); the filter starts from rest and output
    sample n is the voltage at the end of that bin.
    """
    dt = counts.dt
    v_in = np.asarray(counts.y, dtype=float) / dt * det.volts_per_photon_rate
    if np.isinf(det.bandwidth_hz):
        v = v_in
    else:
        q = np.exp(-2.0 * np.pi * det.bandwidth_hz * dt)
        v = lfilter([1.0 - q], [1.0, -q], v_in)
    return Trace(counts.t + dt, v, counts.x_name, "voltage_v")


def lock_in(voltage: Trace, f_mod: float, reference: str = "sine", phase_rad: float = 0.0):
    """Demodulate over the largest integer number of modulation periods.

    Returns (X, Y, R, theta). With the sine reference X = (2/T) int V sin,
    Y = (2/T) int V cos. The square reference uses sign(sin) and sign(cos)
    scaled by 1/T so a +-A square wave in phase gives X = A.
    """
    t = voltage.t
    dt = voltage.dt
    v = np.asarray(voltage.y, dtype=float)
    period = 1.0 / f_mod
    n_per = int(np.floor(len(t) * dt / period + 1e-9))
    if n_per < 1:
        raise ValueError(f"trace of {len(t) * dt:.6g} s is shorter than one modulation period ({period:.6g} s)")
    m = min(int(round(n_per * period / dt)), len(t))
    vv = v[:m]
    arg = 2.0 * np.pi * f_mod * t[:m] + phase_rad
    if reference == "sine":
        x = 2.0 * np.mean(vv * np.sin(arg))
        y = 2.0 * np.mean(vv * np.cos(arg))
    elif reference == "square":
        x = np.mean(vv * np.sign(np.sin(arg)))
        y = np.mean(vv * np.sign(np.cos(arg)))
    else:
        raise ValueError(f"unknown reference {reference!r}")
    return float(x), float(y), float(np.hypot(x, y)), float(np.arctan2(y, x))


def contrast(signal_resonant, signal_off):
    """(resonant - off) / off, signed."""
    on = np.asarray(signal_resonant, dtype=float)
    off = np.asarray(signal_off, dtype=float)
    if np.any(off <= 0):
        raise ValueError("signal_off must be > 0")
    out = (on - off) / off
    return float(out) if out.ndim == 0 else out
