"""
Hybrid 10-level Lindblad model of the V2 center.

The ground quartet (levels 0-3) is treated coherently; the excited quartet
(4-7) and the two metastable levels (8, 9) only carry populations. Every
jump operator and Hamiltonian term respects that partition, so the
generator leaves the subspace {ground-block coherences} + {all populations}
invariant. Propagation exploits this by exponentiating the generator
restricted to that subspace, which is exact and keeps every forbidden
coherence at exactly zero.

Hamiltonians are given in Hz (H/h); rates in 1/s.
"""

from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Callable, Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
from scipy.integrate import solve_ivp
from scipy.linalg import expm

from .constants import GAMMA_HZ_PER_T
from .spin import SX, SZ, Drive, HamiltonianParams, ground_hamiltonian, rotating_frame_hamiltonian

TWO_PI = 2.0 * np.pi


class IntegrationError(RuntimeError):
    pass


class InvalidStateError(ValueError):
    pass


# ---------------------------------------------------------------------------
# level bookkeeping

@dataclass(frozen=True)
class LevelScheme:
    n_levels: int = 10
    ground_indices: Tuple[int, ...] = (0, 1, 2, 3)
    excited_indices: Tuple[int, ...] = (4, 5, 6, 7)
    metastable_indices: Tuple[int, ...] = (8, 9)
    ground_labels: Tuple[str, ...] = ("+3/2", "+1/2", "-1/2", "-3/2")

    def __post_init__(self):
        idx = list(self.ground_indices) + list(self.excited_indices) + list(self.metastable_indices)
        if sorted(idx) != list(range(self.n_levels)):
            raise ValueError("level index sets must be disjoint and cover 0..n_levels-1")
        if len(self.ground_indices) != 4:
            raise ValueError("the coherent ground block must have 4 levels (spin 3/2)")
        if len(self.ground_labels) != len(self.ground_indices):
            raise ValueError("one m_S label per ground level required")

    @property
    def allowed_mask(self) -> np.ndarray:
        """Boolean mask of density-matrix entries that may be nonzero."""
        return _masks(self)[0].copy()

    @property
    def allowed_flat(self) -> np.ndarray:
        """Row-major flat indices of the allowed entries."""
        return _masks(self)[1]

    def embed_ground(self, op4: np.ndarray) -> np.ndarray:
        out = np.zeros((self.n_levels, self.n_levels), dtype=complex)
        g = np.asarray(self.ground_indices)
        out[np.ix_(g, g)] = op4
        return out


@lru_cache(maxsize=8)
def _masks(scheme: LevelScheme):
    mask = np.eye(scheme.n_levels, dtype=bool)
    g = np.asarray(scheme.ground_indices)
    mask[np.ix_(g, g)] = True
    flat = np.flatnonzero(mask.ravel())
    flat.setflags(write=False)
    return mask, flat


DEFAULT_SCHEME = LevelScheme()


@dataclass(frozen=True)
class Rate:
    from_level: int
    to_level: int
    rate: float
    laser_dependent: bool = False

    def __post_init__(self):
        if self.from_level == self.to_level:
            raise ValueError(f"self-transition on level {self.from_level}")
        if self.rate < 0:
            raise ValueError(f"negative rate {self.rate} for {self.from_level}->{self.to_level}")


@dataclass(frozen=True)
class RateSet:
    """Incoherent transitions. Laser-dependent entries are the rates at the
    reference laser power and scale linearly with power."""

    rates: Tuple[Rate, ...]
    reference_power_w: float = 36e-3

    def active(self, laser_power_w: float) -> List[Tuple[int, int, float]]:
        """(from, to, rate) triples for the given laser power (0 = off)."""
        if laser_power_w < 0:
            raise ValueError("laser power must be >= 0")
        scale = laser_power_w / self.reference_power_w
        out = []
        for r in self.rates:
            k = r.rate * scale if r.laser_dependent else r.rate
            if k > 0:
                out.append((r.from_level, r.to_level, k))
        return out


@dataclass(frozen=True)
class V2Rates:
    """Named parameters of the default V2 rate model (1/s).

    Spin-conserving optical pumping g(m) -> e(m) and radiative decay
    e(m) -> g(m); spin-selective intersystem crossing e(+-3/2) -> level 8,
    e(+-1/2) -> level 9; both metastable levels return preferentially to
    g(+-1/2). With k_isc_half > k_isc_three_half the +-1/2 states are
    both the optically pumped and the darker ones, so a resonant RF drive
    raises the fluorescence (positive ODMR contrast).

    The numbers are a calibration, not measured values. With 36 mW laser,
    B1 = 41.9 uT, T1 = 157 us and T2 = 2.8 us they give a steady-state CW
    contrast of +0.77 % at zero field and +0.41 % on one line of the
    250 uT Zeeman doublet (see docs/calibration.md).
    """

    pump: float = 2.0e6
    radiative: float = 1.6e8
    isc_half: float = 3.0e7
    isc_three_half: float = 2.0e7
    ms_to_half: float = 2.0e6
    ms_to_three_half: float = 0.95e6

    def rate_set(self, scheme: LevelScheme = DEFAULT_SCHEME, reference_power_w: float = 36e-3) -> RateSet:
        g, e, (ms_a, ms_b) = scheme.ground_indices, scheme.excited_indices, scheme.metastable_indices
        rates = []
        for gi, ei in zip(g, e):
            rates.append(Rate(gi, ei, self.pump, laser_dependent=True))
            rates.append(Rate(ei, gi, self.radiative))
        # +-3/2 are ground indices 0 and 3; +-1/2 are 1 and 2
        three_half = (g[0], g[3])
        half = (g[1], g[2])
        for k in three_half:
            rates.append(Rate(e[g.index(k)], ms_a, self.isc_three_half))
        for k in half:
            rates.append(Rate(e[g.index(k)], ms_b, self.isc_half))
        for ms in (ms_a, ms_b):
            for k in half:
                rates.append(Rate(ms, k, 0.5 * self.ms_to_half))
            for k in three_half:
                rates.append(Rate(ms, k, 0.5 * self.ms_to_three_half))
        return RateSet(tuple(rates), reference_power_w)


@dataclass(frozen=True)
class RelaxationParams:
    alpha: float = 0.0
    beta: float = 0.0

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0:
            raise ValueError(f"alpha and beta must be >= 0, got {self.alpha}, {self.beta}")


def alpha_beta_from_times(t1: float, t2: float) -> RelaxationParams:
    """alpha = 1/(3 T1), beta = 1/T2 - (5/2) alpha.

    ``np.inf`` is accepted for either time and switches the term off.
    """
    if not (t1 > 0 and t2 > 0):
        raise ValueError(f"T1 and T2 must be > 0, got T1={t1}, T2={t2}")
    alpha = 1.0 / (3.0 * t1)
    beta = 1.0 / t2 - 2.5 * alpha
    if beta < 0:
        raise ValueError(
            f"inconsistent (T1, T2) = ({t1:g} s, {t2:g} s): beta = {beta:g} 1/s < 0; "
            f"T2 must not exceed 6/5 T1 = {1.2 * t1:g} s")
    return RelaxationParams(alpha, beta)


@dataclass
class DensityState:
    rho: np.ndarray
    scheme: LevelScheme = DEFAULT_SCHEME

    def __post_init__(self):
        self.rho = np.asarray(self.rho, dtype=complex)
        check_state(self.rho, self.scheme)

    @classmethod
    def from_populations(cls, pops, scheme: LevelScheme = DEFAULT_SCHEME):
        pops = np.asarray(pops, dtype=float)
        return cls(np.diag(pops / pops.sum()).astype(complex), scheme)

    @classmethod
    def ground_pure(cls, psi4, scheme: LevelScheme = DEFAULT_SCHEME):
        psi = np.asarray(psi4, dtype=complex)
        psi = psi / np.linalg.norm(psi)
        return cls(scheme.embed_ground(np.outer(psi, psi.conj())), scheme)

    @property
    def populations(self) -> np.ndarray:
        return np.real(np.diag(self.rho)).copy()


def check_state(rho: np.ndarray, scheme: LevelScheme = DEFAULT_SCHEME, herm_tol: float = 1e-10,
                trace_tol: float = 1e-9, pos_tol: float = 1e-9) -> None:
    """Raise InvalidStateError unless `rho` is a valid block-structured state."""
    n = scheme.n_levels
    if rho.shape != (n, n):
        raise InvalidStateError(f"expected shape {(n, n)}, got {rho.shape}")
    herm = np.max(np.abs(rho - rho.conj().T))
    if herm > herm_tol:
        raise InvalidStateError(f"not Hermitian (max deviation {herm:.3g})")
    tr = np.trace(rho)
    if abs(tr - 1.0) > trace_tol:
        raise InvalidStateError(f"trace {tr.real:.12g} deviates from 1")
    if np.any(rho[~scheme.allowed_mask] != 0):
        raise InvalidStateError("nonzero coherence outside the ground block")
    lam = np.linalg.eigvalsh(0.5 * (rho + rho.conj().T))[0]
    if lam < -pos_tol:
        raise InvalidStateError(f"negative eigenvalue {lam:.3g}")


@dataclass(frozen=True)
class EvolutionSettings:
    method: str = "expm"  # "expm" or "adaptive"
    dt_max: float = 1e-9
    rel_tol: float = 1e-9
    abs_tol: float = 1e-12
    frame: str = "rotating"  # "rotating" or "lab"

    def __post_init__(self):
        if self.method not in ("expm", "adaptive"):
            raise ValueError(f"unknown method {self.method!r}")
        if self.frame not in ("rotating", "lab"):
            raise ValueError(f"unknown frame {self.frame!r}")
        if not (self.dt_max > 0 and self.rel_tol > 0 and self.abs_tol > 0):
            raise ValueError("dt_max and tolerances must be > 0")
        if self.frame == "lab" and self.method == "expm":
            # lab-frame Hamiltonian is time dependent
            object.__setattr__(self, "method", "adaptive")


# ---------------------------------------------------------------------------
# operators and generator

def jump_operator(u: int, v: int, r: float, n_levels: int = 10) -> np.ndarray:
    """sqrt(r) |u><v|."""
    if u == v:
        raise ValueError(f"jump operator needs distinct levels, got u = v = {u}")
    if r < 0:
        raise ValueError(f"rate must be >= 0, got {r}")
    op = np.zeros((n_levels, n_levels), dtype=complex)
    op[u, v] = np.sqrt(r)
    return op


def relaxation_operators(p: RelaxationParams, scheme: LevelScheme = DEFAULT_SCHEME):
    """sqrt(2 alpha) Sx and sqrt(2 beta) Sz embedded in the ground block."""
    l_alpha = scheme.embed_ground(np.sqrt(2.0 * p.alpha) * SX)
    l_beta = scheme.embed_ground(np.sqrt(2.0 * p.beta) * SZ)
    return l_alpha, l_beta


def secular_relaxation_operators(p: RelaxationParams, scheme: LevelScheme = DEFAULT_SCHEME):
    """Relaxation operators for the drive-rotating frame.

    In that frame the |+-3/2> <-> |+-1/2> parts of Sx carry a phase
    exp(+-i 2 pi f t), so products of parts with different frequencies
    average out on the 1/alpha time scale. Sx is split into its lowering
    (into |+-3/2>), raising and static (|+1/2> <-> |-1/2>) parts, each
    with rate 2 alpha; the Sz operator is frame invariant.
    """
    down = np.zeros((4, 4), dtype=complex)
    for a, b in ((0, 1), (3, 2)):
        down[a, b] = SX[a, b]
    mid = np.zeros((4, 4), dtype=complex)
    mid[1, 2], mid[2, 1] = SX[1, 2], SX[2, 1]
    k = np.sqrt(2.0 * p.alpha)
    ops = [scheme.embed_ground(k * down), scheme.embed_ground(k * down.conj().T), scheme.embed_ground(k * mid)]
    return ops + [scheme.embed_ground(np.sqrt(2.0 * p.beta) * SZ)]


def dissipator(rho: np.ndarray, op: np.ndarray) -> np.ndarray:
    ldl = op.conj().T @ op
    return op @ rho @ op.conj().T - 0.5 * (rho @ ldl + ldl @ rho)


def lindblad_rhs(rho: np.ndarray, h: np.ndarray, ops: Sequence[np.ndarray]) -> np.ndarray:
    """d rho/dt for H in Hz: -i 2 pi [H, rho] + sum_i D[L_i] rho."""
    rho = np.asarray(rho)
    h = np.asarray(h)
    n = rho.shape[0]
    if rho.shape != (n, n) or h.shape != (n, n):
        raise ValueError(f"dimension mismatch: rho {rho.shape}, H {h.shape}")
    out = -1j * TWO_PI * (h @ rho - rho @ h)
    for op in ops:
        if op.shape != (n, n):
            raise ValueError(f"dimension mismatch: jump operator {op.shape}, rho {rho.shape}")
        out = out + dissipator(rho, op)
    return out


def liouvillian(h: np.ndarray, ops: Sequence[np.ndarray]) -> np.ndarray:
    """Superoperator acting on row-major vec(rho)."""
    n = h.shape[0]
    eye = np.eye(n)
    sup = -1j * TWO_PI * (np.kron(h, eye) - np.kron(eye, h.T))
    for op in ops:
        ldl = op.conj().T @ op
        sup += np.kron(op, op.conj()) - 0.5 * (np.kron(ldl, eye) + np.kron(eye, ldl.T))
    return sup


def commutator_superop(h: np.ndarray) -> np.ndarray:
    n = h.shape[0]
    eye = np.eye(n)
    return -1j * TWO_PI * (np.kron(h, eye) - np.kron(eye, h.T))


# ---------------------------------------------------------------------------
# model

@dataclass(frozen=True)
class Controls:
    """Piecewise-constant control values for one segment.

    ``frame_hz`` is the rotating-frame reference frequency. It has to be the
    same for every segment of a sequence so that free-evolution phases are
    accumulated against the drive carrier.
    """

    laser_w: float = 0.0
    b1_t: float = 0.0
    phase_rad: float = 0.0
    frame_hz: float = 70e6


@dataclass(frozen=True)
class V2Model:
    spin: HamiltonianParams = HamiltonianParams()
    rates: RateSet = field(default_factory=lambda: V2Rates().rate_set())
    relaxation: RelaxationParams = RelaxationParams()
    scheme: LevelScheme = DEFAULT_SCHEME
    # ensemble-member knobs: shift of both |+-1/2>-|+-3/2> lines, drive scale
    detuning_hz: float = 0.0
    b1_scale: float = 1.0

    def with_member(self, detuning_hz: float = 0.0, b1_scale: float = 1.0) -> "V2Model":
        return replace(self, detuning_hz=detuning_hz, b1_scale=b1_scale)

    def member_spin(self, b1_t: float = 0.0, f_hz: float = 70e6, phase_rad: float = 0.0) -> HamiltonianParams:
        return replace(self.spin, drive=Drive(b1_t * self.b1_scale, f_hz, phase_rad))

    def detuning_term(self) -> np.ndarray:
        """Shift of the |+-3/2> levels moving both lines by detuning_hz."""
        return self.scheme.embed_ground(np.diag([self.detuning_hz, 0.0, 0.0, self.detuning_hz]))

    def rotating_hamiltonian(self, c: Controls) -> np.ndarray:
        p = self.member_spin(c.b1_t, c.frame_hz, c.phase_rad)
        h = self.scheme.embed_ground(rotating_frame_hamiltonian(p, c.frame_hz))
        return h + self.detuning_term() if self.detuning_hz else h

    def jump_operators(self, laser_w: float, frame: str = "rotating") -> List[np.ndarray]:
        n = self.scheme.n_levels
        ops = [jump_operator(u, v, r, n) for (v, u, r) in self.rates.active(laser_w)]
        relax = secular_relaxation_operators if frame == "rotating" else relaxation_operators
        ops.extend(op for op in relax(self.relaxation, self.scheme) if np.any(op))
        return ops

    def generator(self, c: Controls) -> np.ndarray:
        return liouvillian(self.rotating_hamiltonian(c), self.jump_operators(c.laser_w))


def _reduce(sup: np.ndarray, scheme: LevelScheme) -> np.ndarray:
    idx = scheme.allowed_flat
    mask = np.zeros(sup.shape[0], dtype=bool)
    mask[idx] = True
    leak = np.abs(sup[np.ix_(~mask, mask)])
    if leak.size and leak.max() != 0.0:
        raise ValueError("generator couples allowed entries to forbidden coherences")
    return np.ascontiguousarray(sup[np.ix_(mask, mask)])


def _to_reduced(rho: np.ndarray, scheme: LevelScheme) -> np.ndarray:
    return rho.ravel()[scheme.allowed_flat].astype(complex)


def _from_reduced(vec: np.ndarray, scheme: LevelScheme) -> np.ndarray:
    n = scheme.n_levels
    out = np.zeros(n * n, dtype=complex)
    out[scheme.allowed_flat] = vec
    return out.reshape(n, n)


class _PropagatorCache:
    """Reduced generators and their exponentials, keyed on exact inputs."""

    def __init__(self, model: V2Model):
        self.model = model
        self._gen: Dict[Controls, np.ndarray] = {}
        self._exp: Dict[Tuple[Controls, float], np.ndarray] = {}
        self.prefix: Dict[tuple, np.ndarray] = {}  # reduced states after shared segment prefixes

    def generator(self, c: Controls) -> np.ndarray:
        g = self._gen.get(c)
        if g is None:
            g = _reduce(self.model.generator(c), self.model.scheme)
            self._gen[c] = g
        return g

    def propagator(self, c: Controls, dt: float) -> np.ndarray:
        key = (c, float(dt))
        u = self._exp.get(key)
        if u is None:
            u = expm(self.generator(c) * dt)
            self._exp[key] = u
        return u

    def integral(self, c: Controls, dt: float) -> np.ndarray:
        """(exp(L dt), int_0^dt exp(L s) ds) via the augmented exponential."""
        key = (c, float(dt), "int")
        hit = self._exp.get(key)
        if hit is None:
            g = self.generator(c)
            m = g.shape[0]
            aug = np.zeros((2 * m, 2 * m), dtype=complex)
            aug[:m, :m] = g
            aug[:m, m:] = np.eye(m)
            e = expm(aug * dt)
            hit = (e[:m, :m], e[:m, m:])
            self._exp[key] = hit
        return hit


@lru_cache(maxsize=32)
def _cache_for(model: V2Model) -> _PropagatorCache:
    return _PropagatorCache(model)


class StateTrace(NamedTuple):
    t: np.ndarray
    states: np.ndarray  # (n, N, N)

    @property
    def final(self) -> np.ndarray:
        return self.states[-1]

    def populations(self) -> np.ndarray:
        return np.real(np.einsum("kii->ki", self.states))


Segment = Tuple[Controls, float]


def propagate(model: V2Model, rho0, segments: Sequence[Segment],
              settings: EvolutionSettings = EvolutionSettings(), t_eval=None,
              check: bool = True) -> StateTrace:
    """Evolve `rho0` through piecewise-constant `segments` of (Controls, duration).

    States are returned at `t_eval` (absolute times from 0); by default at
    t = 0 and at every segment boundary.
    """
    scheme = model.scheme
    rho0 = rho0.rho if isinstance(rho0, DensityState) else np.asarray(rho0, dtype=complex)
    if check:
        check_state(rho0, scheme)
    durations = np.array([d for _, d in segments], dtype=float)
    if np.any(durations < 0):
        raise ValueError("segment durations must be >= 0")
    bounds = np.concatenate([[0.0], np.cumsum(durations)])
    if t_eval is None:
        t_eval = bounds
    t_eval = np.asarray(t_eval, dtype=float)
    if np.any(np.diff(t_eval) < 0) or (t_eval.size and (t_eval[0] < 0 or t_eval[-1] > bounds[-1] * (1 + 1e-12))):
        raise ValueError("t_eval must be sorted and within the sequence duration")

    if settings.frame == "lab":
        out = _propagate_lab(model, rho0, segments, bounds, t_eval, settings)
    elif settings.method == "adaptive":
        out = _propagate_adaptive(model, rho0, segments, bounds, t_eval, settings)
    else:
        out = _propagate_expm(model, rho0, segments, bounds, t_eval)
    states = np.array([_from_reduced(v, scheme) for v in out]) if len(out) else np.zeros((0, 10, 10), complex)
    if check and len(states):
        try:
            check_state(states[-1], scheme)
        except InvalidStateError as exc:
            raise IntegrationError(f"final state invalid after propagation: {exc}") from exc
    return StateTrace(t_eval, states)


def _samples_in(bounds, t_eval, i, last):
    t0, t1 = bounds[i], bounds[i + 1]
    if last:
        return np.flatnonzero((t_eval >= t0) & (t_eval <= t1 * (1 + 1e-12)))
    return np.flatnonzero((t_eval >= t0) & (t_eval < t1))


def _propagate_expm(model, rho0, segments, bounds, t_eval):
    cache = _cache_for(model)
    vec = _to_reduced(rho0, model.scheme)
    out = [None] * len(t_eval)
    for i, (c, dur) in enumerate(segments):
        for k in _samples_in(bounds, t_eval, i, i == len(segments) - 1):
            dt = min(t_eval[k], bounds[i + 1]) - bounds[i]
            out[k] = cache.propagator(c, dt) @ vec if dt > 0 else vec.copy()
        if dur > 0:
            vec = cache.propagator(c, dur) @ vec
    return [vec.copy() if o is None else o for o in out]


def _integrate_segments(rhs_for, vec, segments, bounds, t_eval, settings):
    out = [None] * len(t_eval)
    for i, (c, dur) in enumerate(segments):
        sel = _samples_in(bounds, t_eval, i, i == len(segments) - 1)
        if dur == 0:
            for k in sel:
                out[k] = vec.copy()
            continue
        t0, t1 = bounds[i], bounds[i + 1]
        sol = solve_ivp(rhs_for(c), (t0, t1), vec, method="DOP853", dense_output=True,
                        rtol=settings.rel_tol, atol=settings.abs_tol, max_step=settings.dt_max)
        if sol.status != 0:
            raise IntegrationError(f"adaptive integration failed in segment {i} "
                                   f"(t = {sol.t[-1]:.6g} s): {sol.message}")
        for k in sel:
            out[k] = sol.sol(min(t_eval[k], t1))
        vec = sol.y[:, -1]
    return [vec.copy() if o is None else o for o in out]


def _propagate_adaptive(model, rho0, segments, bounds, t_eval, settings):
    cache = _cache_for(model)

    def rhs_for(c):
        g = cache.generator(c)
        return lambda t, y: g @ y

    return _integrate_segments(rhs_for, _to_reduced(rho0, model.scheme), segments, bounds, t_eval, settings)


def _propagate_lab(model, rho0, segments, bounds, t_eval, settings):
    """Explicit adaptive integration of the lab-frame equation."""
    scheme = model.scheme
    spin = model.member_spin()
    static = scheme.embed_ground(ground_hamiltonian(replace(spin, drive=None))) + model.detuning_term()
    sx_sup = _reduce(commutator_superop(scheme.embed_ground(SX)), scheme)
    gamma = spin.gamma_hz_per_t

    def rhs_for(c):
        base = _reduce(liouvillian(static, model.jump_operators(c.laser_w, "lab")), scheme)
        amp = gamma * c.b1_t * model.b1_scale
        w = TWO_PI * c.frame_hz
        if not amp:
            return lambda t, y: base @ y
        return lambda t, y: base @ y + (amp * np.cos(w * t + c.phase_rad)) * (sx_sup @ y)

    return _integrate_segments(rhs_for, _to_reduced(rho0, scheme), segments, bounds, t_eval, settings)


# ---------------------------------------------------------------------------
# steady state

def steady_state(model: V2Model, c: Controls, residual_tol: float = 1e-10) -> DensityState:
    """Null vector of the generator normalized to unit trace.

    The residual contract is scale free: ||L rho_ss||_F <= residual_tol * ||L||_2.
    """
    scheme = model.scheme
    g = _cache_for(model).generator(c)
    s = np.linalg.svd(g, compute_uv=False)
    if s[-2] <= 1e-13 * s[0]:
        raise ValueError("generator null space is degenerate; propagate to long times instead")
    idx = scheme.allowed_flat
    n = scheme.n_levels
    trace_row = np.array([1.0 if (k // n) == (k % n) else 0.0 for k in idx], dtype=complex)
    a = np.vstack([g, trace_row])
    b = np.zeros(a.shape[0], dtype=complex)
    b[-1] = 1.0
    # scale the trace row to the generator norm for conditioning
    a[-1] *= s[0]
    b[-1] *= s[0]
    x, *_ = np.linalg.lstsq(a, b, rcond=None)
    # one step of iterative refinement
    r = b - a @ x
    dx, *_ = np.linalg.lstsq(a, r, rcond=None)
    x = x + dx
    rho = _from_reduced(x, scheme)
    rho = 0.5 * (rho + rho.conj().T)
    rho /= np.trace(rho).real
    res = np.linalg.norm(g @ _to_reduced(rho, scheme))
    if res > residual_tol * s[0]:
        raise ValueError(f"steady-state residual {res:.3g} exceeds tolerance")
    return DensityState(rho, scheme)


# ---------------------------------------------------------------------------
# ensemble averaging

@dataclass(frozen=True)
class LorentzianDetuning:
    hwhm_hz: float

    def nodes(self, n: int, rng: Optional[np.random.Generator] = None):
        if self.hwhm_hz == 0:
            return np.zeros(1), np.ones(1)
        if rng is not None:
            u = rng.random(n)
            return self.hwhm_hz * np.tan(np.pi * (u - 0.5)), np.full(n, 1.0 / n)
        # Gauss-Legendre in the cumulative variable u, delta = G tan(pi (u - 1/2))
        x, w = np.polynomial.legendre.leggauss(n)
        u = 0.5 * (x + 1.0)
        return self.hwhm_hz * np.tan(np.pi * (u - 0.5)), 0.5 * w


@dataclass(frozen=True)
class UniformScale:
    """Drive-amplitude scale uniform on [1 - spread, 1 + spread]."""

    spread: float

    def __post_init__(self):
        if not 0 <= self.spread < 1:
            raise ValueError("spread must be in [0, 1)")

    def nodes(self, n: int, rng: Optional[np.random.Generator] = None):
        if self.spread == 0:
            return np.ones(1), np.ones(1)
        if rng is not None:
            return 1.0 + self.spread * (2 * rng.random(n) - 1), np.full(n, 1.0 / n)
        x, w = np.polynomial.legendre.leggauss(n)
        return 1.0 + self.spread * x, 0.5 * w


def ensemble_nodes(detuning: Optional[LorentzianDetuning] = None,
                   b1_scale: Optional[UniformScale] = None, n: int = 64,
                   seed: Optional[int] = None, method: str = "quadrature"):
    """Tensor-product (detuning, b1_scale, weight) triples."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if method not in ("quadrature", "monte_carlo"):
        raise ValueError(f"unknown method {method!r}")
    if method == "monte_carlo":
        ss = np.random.SeedSequence(seed)
        rng_d, rng_b = (np.random.default_rng(s) for s in ss.spawn(2))
    else:
        rng_d = rng_b = None
    d, wd = (detuning or LorentzianDetuning(0.0)).nodes(n, rng_d)
    b, wb = (b1_scale or UniformScale(0.0)).nodes(n, rng_b)
    if method == "monte_carlo" and d.size > 1 and b.size > 1:
        # paired draws rather than a tensor product
        return list(zip(d, b, wd))
    return [(di, bi, wdi * wbi) for di, wdi in zip(d, wd) for bi, wbi in zip(b, wb)]


def ensemble_average(run: Callable[..., np.ndarray], detuning: Optional[LorentzianDetuning] = None,
                     b1_scale: Optional[UniformScale] = None, n: int = 64, seed: Optional[int] = None,
                     method: str = "quadrature", workers: int = 1) -> np.ndarray:
    """Weighted mean of ``run(detuning_hz=..., b1_scale=...)`` over the distributions."""
    nodes = ensemble_nodes(detuning, b1_scale, n, seed, method)
    if workers > 1:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(workers) as pool:
            results = list(pool.map(lambda nd: np.asarray(run(detuning_hz=nd[0], b1_scale=nd[1])), nodes))
    else:
        results = [np.asarray(run(detuning_hz=d, b1_scale=b)) for d, b, _ in nodes]
    acc = np.zeros_like(results[0], dtype=float if np.isrealobj(results[0]) else complex)
    for (_, _, w), r in zip(nodes, results):
        acc = acc + w * r
    return acc
