"""
Shot-noise-limited magnetic field sensitivities (T/sqrt(Hz)) for CW-ODMR,
pulsed ODMR, Ramsey and Hahn-echo AC magnetometry.

The CW expression carries Planck's constant h, the pulsed and Ramsey
expressions the reduced constant hbar. Both are kept as written for the
respective protocols, so the formulas differ by 2 pi in that factor.
"""

from dataclasses import dataclass
from typing import Dict, Optional, Tuple

import numpy as np

from .constants import CONSTANTS
from .readout import poisson_readout
from .trace import Trace

G_E = CONSTANTS.g_e
T2_STAR_MIN = 1e-9
_INV_PHI = (np.sqrt(5.0) - 1.0) / 2.0


def _positive(**kw):
    for k, v in kw.items():
        if not (np.isfinite(v) and v > 0):
            raise ValueError(f"{k} must be > 0, got {v}")


def h_over_gmu(g_e: float = G_E) -> float:
    """h / (g_e mu_B) in T s (field per frequency)."""
    _positive(g_e=g_e)
    return CONSTANTS.h / (g_e * CONSTANTS.mu_b)


def hbar_over_gmu(g_e: float = G_E) -> float:
    _positive(g_e=g_e)
    return CONSTANTS.hbar / (g_e * CONSTANTS.mu_b)


def eta_cw(delta_nu: float, c: float, r: float, g_e: float = G_E) -> float:
    """CW-ODMR sensitivity, 4/(3 sqrt 3) h/(g mu_B) dnu / (C sqrt R).

    Parameters
    ----------
    delta_nu : float
        Resonance FWHM (Hz).
    c : float
        Contrast fraction.
    r : float
        Detected photon rate (1/s).
    """
    _positive(delta_nu=delta_nu, c=c, r=r)
    return 4.0 / (3.0 * np.sqrt(3.0)) * h_over_gmu(g_e) * delta_nu / (c * np.sqrt(r))


def eta_pulsed(c: float, n: float, t2_star: float, t_i: float, t_r: float, g_e: float = G_E) -> float:
    """Pulsed-ODMR sensitivity with pi-pulse length T2*.

    Raises for T2* below 1 ns, where the expression diverges.
    """
    _positive(c=c, n=n, t2_star=t2_star, t_i=t_i, t_r=t_r)
    if t2_star < T2_STAR_MIN:
        raise ValueError(f"t2_star = {t2_star:.3g} s is below {T2_STAR_MIN:g} s; eta diverges")
    return (8.0 / (3.0 * np.sqrt(3.0)) * hbar_over_gmu(g_e) / (c * np.sqrt(n))
            * np.sqrt(t_i + t2_star + t_r) / t2_star)


def eta_ramsey(c: float, n: float, tau: float, t2_star: float, p: float = 1.0, delta_ms: int = 1,
               t_i: float = 12e-6, t_r: float = 12e-6, g_e: float = G_E) -> float:
    """Ramsey sensitivity at free precession time `tau`."""
    _positive(c=c, n=n, tau=tau, t2_star=t2_star, t_i=t_i, t_r=t_r)
    if p < 1:
        raise ValueError(f"stretch exponent p must be >= 1, got {p}")
    if delta_ms not in (1, 2):
        raise ValueError(f"delta_ms must be 1 or 2, got {delta_ms}")
    decay = np.exp(-(tau / t2_star) ** p)
    return (hbar_over_gmu(g_e) / delta_ms / (c * decay * np.sqrt(n))
            * np.sqrt(t_i + tau + t_r) / tau)


def eta_hahn_ac(c: float, n: float, t2: float, p: float = 1.0, delta_ms: int = 1,
                t_i: float = 12e-6, t_r: float = 12e-6, g_e: float = G_E,
                half_period: bool = False) -> Tuple[float, float]:
    """AC sensitivity of the echo at tau = T2, and the matched field frequency.

    The Ramsey expression with T2* replaced by T2 is evaluated at tau = T2.
    The matched frequency is 1/tau, or 1/(2 tau) with `half_period`, the
    convention where each free-evolution half spans half a field period.
    """
    eta = eta_ramsey(c, n, t2, t2, p, delta_ms, t_i, t_r, g_e)
    return eta, (0.5 if half_period else 1.0) / t2


def golden_section(f, lo: float, hi: float, rtol: float = 1e-4) -> float:
    """Minimizer of a unimodal `f` on [lo, hi]; stops when the bracket is
    narrower than rtol times its midpoint."""
    a, b = lo, hi
    c = b - _INV_PHI * (b - a)
    d = a + _INV_PHI * (b - a)
    fc, fd = f(c), f(d)
    while (b - a) > rtol * 0.5 * (a + b):
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - _INV_PHI * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + _INV_PHI * (b - a)
            fd = f(d)
    return 0.5 * (a + b)


@dataclass(frozen=True)
class SensitivityInputs:
    """Inputs of the four calculators.

    `n` is the count per readout of the pulsed protocol; `n_ramsey` and
    `n_hahn` override it for those protocols when their readouts differ.
    """

    c: float = 0.006
    r: float = 1e12
    n: float = 1.08e6
    delta_nu: float = 10e6
    t2_star: float = 230e-9
    t2: float = 2.8e-6
    t_i: float = 12e-6
    t_r: float = 12e-6
    tau: Optional[float] = None  # None: optimize
    p: float = 1.0
    delta_ms: int = 1
    g_e: float = G_E
    n_ramsey: Optional[float] = None
    n_hahn: Optional[float] = None

    def __post_init__(self):
        for k in ("n_ramsey", "n_hahn"):
            if getattr(self, k) is not None:
                _positive(**{k: getattr(self, k)})
        for k in ("c", "r", "n", "delta_nu", "t2_star", "t2", "t_i", "t_r", "g_e"):
            _positive(**{k: getattr(self, k)})
        if self.tau is not None:
            _positive(tau=self.tau)
        if self.p < 1:
            raise ValueError("p must be >= 1")
        if self.delta_ms not in (1, 2):
            raise ValueError("delta_ms must be 1 or 2")


def optimal_tau(inp: SensitivityInputs, rtol: float = 1e-4) -> Tuple[float, float]:
    """Ramsey free-precession time minimizing eta over [T2*/100, 10 T2*]."""
    n = inp.n if inp.n_ramsey is None else inp.n_ramsey

    def eta(tau):
        return eta_ramsey(inp.c, n, tau, inp.t2_star, inp.p, inp.delta_ms, inp.t_i, inp.t_r, inp.g_e)

    tau = golden_section(eta, inp.t2_star / 100.0, 10.0 * inp.t2_star, rtol)
    return tau, eta(tau)


def report(inp: SensitivityInputs) -> Dict[str, float]:
    """All four sensitivities (T/sqrt(Hz)) plus the Ramsey tau and echo frequency."""
    n_r = inp.n if inp.n_ramsey is None else inp.n_ramsey
    n_h = inp.n if inp.n_hahn is None else inp.n_hahn
    if inp.tau is None:
        tau, eta_r = optimal_tau(inp)
    else:
        tau = inp.tau
        eta_r = eta_ramsey(inp.c, n_r, tau, inp.t2_star, inp.p, inp.delta_ms, inp.t_i, inp.t_r, inp.g_e)
    eta_h, f_opt = eta_hahn_ac(inp.c, n_h, inp.t2, inp.p, inp.delta_ms, inp.t_i, inp.t_r, inp.g_e)
    return {
        "eta_cw_t_per_rthz": eta_cw(inp.delta_nu, inp.c, inp.r, inp.g_e),
        "eta_pulsed_t_per_rthz": eta_pulsed(inp.c, inp.n, inp.t2_star, inp.t_i, inp.t_r, inp.g_e),
        "eta_ramsey_t_per_rthz": eta_r,
        "tau_ramsey_s": tau,
        "eta_hahn_t_per_rthz": eta_h,
        "f_ac_hz": f_opt,
    }


def simulate_pulsed_eta(c: float, n: float, t2_star: float, t_i: float, t_r: float,
                        n_estimates: int = 400, shots: int = 100, g_e: float = G_E,
                        seed=None) -> float:
    """Empirical pulsed-ODMR sensitivity from Poisson-sampled readouts.

    A pi pulse of length T2* gives a Lorentzian dip of depth C and FWHM
    1/(pi T2*). The drive sits at the maximum-slope detuning; every field
    estimate averages `shots` readouts of mean N(1 - C L) photons and is
    converted to field through the local slope. Returns
    std(B) * sqrt(shots * (t_I + T2* + t_R)).
    """
    _positive(c=c, n=n, t2_star=t2_star, t_i=t_i, t_r=t_r)
    hw = 1.0 / (2.0 * np.pi * t2_star)
    d0 = hw / np.sqrt(3.0)
    line = lambda d: hw * hw / (d * d + hw * hw)
    mean = n * (1.0 - c * line(d0))
    slope_f = n * c * 2.0 * d0 * hw * hw / (d0 * d0 + hw * hw) ** 2  # dS/d(detuning)
    t_seq = t_i + t2_star + t_r
    rate = Trace(np.arange(n_estimates * shots) * t_seq, np.full(n_estimates * shots, mean / t_seq))
    counts = poisson_readout(rate, t_seq, seed).y.reshape(n_estimates, shots).mean(axis=1)
    b_est = (counts - mean) / slope_f * h_over_gmu(g_e)
    return float(np.std(b_est, ddof=1) * np.sqrt(shots * t_seq))
