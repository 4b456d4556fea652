"""
Execute pulse sequences on the Lindblad model and turn them into readout
signals: mean photon counts per shot, RF-off references and contrast,
optionally averaged over an inhomogeneous ensemble.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from typing import List, Optional, Sequence

import numpy as np
from scipy.integrate import simpson

from .lindblad import (Controls, EvolutionSettings, IntegrationError, InvalidStateError, LorentzianDetuning,
                       UniformScale, V2Model, check_state,
                       _cache_for, _from_reduced, _to_reduced, ensemble_nodes, propagate, steady_state)
from .protocols import LockinSequence, PulseSequence, Segment
from .readout import (DetectorConfig, EmissionModel, contrast, detector_filter, fluorescence_rate,
                      lock_in, poisson_readout, spin_signal)
from .trace import Trace


@dataclass(frozen=True)
class Ensemble:
    detuning: Optional[LorentzianDetuning] = None
    b1_scale: Optional[UniformScale] = None
    n: int = 1
    method: str = "quadrature"
    seed: Optional[int] = None

    def nodes(self):
        if self.detuning is None and self.b1_scale is None:
            return [(0.0, 1.0, 1.0)]
        return ensemble_nodes(self.detuning, self.b1_scale, self.n, self.seed, self.method)


@dataclass(frozen=True)
class Experiment:
    model: V2Model = field(default_factory=V2Model)
    emission: EmissionModel = field(default_factory=EmissionModel)
    detector: DetectorConfig = field(default_factory=DetectorConfig)
    settings: EvolutionSettings = field(default_factory=EvolutionSettings)
    ensemble: Ensemble = field(default_factory=Ensemble)
    init_laser_w: float = 36e-3

    def member(self, detuning_hz: float, b1_scale: float) -> "Experiment":
        return Experiment(self.model.with_member(detuning_hz, b1_scale), self.emission, self.detector,
                          self.settings, Ensemble(), self.init_laser_w)


def segment_controls(seg: Segment, frame_hz: float) -> Controls:
    if seg.rf is None:
        return Controls(seg.laser_w, 0.0, 0.0, frame_hz)
    return Controls(seg.laser_w, seg.rf.b1_t, seg.rf.phase_rad, frame_hz)


def sequence_frame(seq: PulseSequence, model: V2Model) -> float:
    f = seq.carrier_hz
    return f if f is not None else 2.0 * model.spin.d_hz


@lru_cache(maxsize=512)
def _pumped_state(model: V2Model, laser_w: float, frame_hz: float) -> np.ndarray:
    return steady_state(model, Controls(laser_w, 0.0, 0.0, frame_hz)).rho


def pumped_state(exp: Experiment, frame_hz: float = 70e6) -> np.ndarray:
    """Laser-on, RF-off steady state (the state at the start of every sequence)."""
    return _pumped_state(exp.model, exp.init_laser_w, frame_hz)


def _window_counts(exp: Experiment, rho: np.ndarray, c: Controls, width: float) -> float:
    """Detected photons integrated over `width` starting from `rho`."""
    em, det = exp.emission, exp.detector
    if em.mode == "phenomenological":
        pops = np.real(np.diag(rho))
        return float((em.r0 * (1.0 + em.contrast_c * spin_signal(pops, exp.model.scheme)) + det.dark_rate) * width)
    scheme = exp.model.scheme
    if exp.settings.frame == "rotating" and exp.settings.method == "expm":
        _, integ = _cache_for(exp.model).integral(c, width)
        pops_int = np.real(np.diag(_from_reduced(integ @ _to_reduced(rho, scheme), scheme)))
        return float(det.collection_efficiency * em.n_centers * (pops_int @ np.asarray(em.emission_rates))
                     + det.dark_rate * width)
    t = np.linspace(0.0, width, 401)
    tr = propagate(exp.model, rho, [(c, width)], exp.settings, t_eval=t, check=False)
    rate = fluorescence_rate(tr.states, em, det, scheme)
    return float(simpson(rate, x=t))


def readout_counts(exp: Experiment, seq: PulseSequence, frame: Optional[float] = None) -> float:
    """Mean detected photons per shot in the readout window (single member).

    Steady-state (CW) sequences return the detected photon rate (1/s).
    `frame` overrides the rotating-frame frequency taken from the carrier.
    """
    model = exp.model
    if frame is None:
        frame = sequence_frame(seq, model)
    if seq.steady_state:
        if exp.settings.frame != "rotating":
            raise ValueError("steady-state (CW) protocols need the rotating frame")
        seg = seq.segments[0]
        rho = steady_state(model, segment_controls(seg, frame)).rho
        return float(fluorescence_rate(rho, exp.emission, exp.detector, model.scheme))
    ro = seq.readout
    rho = pumped_state(exp, frame)
    pre = [(segment_controls(s, frame), s.duration) for s in seq.segments[:ro.segment]]
    c_ro = segment_controls(seq.segments[ro.segment], frame)
    if ro.start > 0:
        pre.append((c_ro, ro.start))
    if pre and exp.settings.frame == "rotating" and exp.settings.method == "expm":
        rho = _evolve_memo(exp, frame, pre)
    elif pre:
        rho = propagate(model, rho, pre, exp.settings).final
    return _window_counts(exp, rho, c_ro, ro.width)


def _evolve_memo(exp: Experiment, frame: float, pre) -> np.ndarray:
    """Pumped state carried through `pre`, reusing states after shared prefixes.

    Sweeps differ only in the later segments, so the state after each
    prefix is memoized on the model's propagator cache.
    """
    scheme = exp.model.scheme
    cache = _cache_for(exp.model)
    key = (exp.init_laser_w, frame)
    vec = cache.prefix.get(key)
    if vec is None:
        vec = _to_reduced(pumped_state(exp, frame), scheme)
        cache.prefix[key] = vec
    for c, dur in pre:
        key = key + ((c, float(dur)),)
        nxt = cache.prefix.get(key)
        if nxt is None:
            nxt = cache.propagator(c, dur) @ vec if dur > 0 else vec
            cache.prefix[key] = nxt
        vec = nxt
    rho = _from_reduced(vec, scheme)
    try:
        check_state(rho, scheme)
    except InvalidStateError as exc:
        raise IntegrationError(f"state invalid after propagation: {exc}") from exc
    return rho


def reference_counts(exp: Experiment, seq: PulseSequence) -> float:
    """RF-off counterpart of ``readout_counts``; for sequences without RF
    (T1) the fully pumped state read out directly."""
    frame = sequence_frame(seq, exp.model)
    if seq.steady_state or seq.rf_time > 0:
        # same frame as the signal so free-evolution propagators are shared
        return readout_counts(exp, seq.rf_off(), frame)
    c_ro = segment_controls(seq.segments[seq.readout.segment], frame)
    return _window_counts(exp, pumped_state(exp, frame), c_ro, seq.readout.width)


@dataclass
class SweepResult:
    values: np.ndarray
    signal: np.ndarray
    reference: np.ndarray

    @property
    def contrast(self) -> np.ndarray:
        return contrast(self.signal, self.reference)


def run_sweep(exp: Experiment, seqs: Sequence[PulseSequence], values=None, workers: int = 1) -> SweepResult:
    """Signal and reference for every sequence, averaged over the ensemble.

    Ensemble members are dispatched to a thread pool; each fills its own
    slot and the weighted sum runs in a fixed order, so the result does not
    depend on `workers`.
    """
    nodes = exp.ensemble.nodes()
    n_pts = len(seqs)
    sig = np.zeros((len(nodes), n_pts))
    ref = np.zeros((len(nodes), n_pts))

    def work(j):
        d, b, _ = nodes[j]
        mem = exp.member(d, b)
        for i, s in enumerate(seqs):
            sig[j, i] = readout_counts(mem, s)
            ref[j, i] = reference_counts(mem, s)

    if workers > 1 and len(nodes) > 1:
        with ThreadPoolExecutor(workers) as pool:
            list(pool.map(work, range(len(nodes))))
    else:
        for j in range(len(nodes)):
            work(j)
    w = np.array([nd[2] for nd in nodes])
    if values is None:
        values = np.arange(n_pts, dtype=float)
    return SweepResult(np.asarray(values, dtype=float), w @ sig, w @ ref)


# ---------------------------------------------------------------------------
# time-resolved path through the detector chain

def rate_trace(exp: Experiment, segments: Sequence[Segment], frame_hz: float, dt: float,
               rho0: Optional[np.ndarray] = None, oversample: int = 4) -> Trace:
    """Detected photon rate averaged over bins of width `dt`."""
    total = float(sum(s.duration for s in segments))
    n_bins = int(round(total / dt))
    if rho0 is None:
        rho0 = pumped_state(exp, frame_hz)
    sub = dt / oversample
    t_eval = (np.arange(n_bins * oversample) + 0.5) * sub
    t_eval = t_eval[t_eval <= total]
    segs = [(segment_controls(s, frame_hz), s.duration) for s in segments]
    tr = propagate(exp.model, rho0, segs, exp.settings, t_eval=t_eval, check=False)
    rate = fluorescence_rate(tr.states, exp.emission, exp.detector, exp.model.scheme)
    rate = np.pad(rate, (0, n_bins * oversample - len(rate)), mode="edge")
    return Trace(np.arange(n_bins) * dt, rate.reshape(n_bins, oversample).mean(axis=1), "t_s", "rate_per_s")


def lockin_rate(exp: Experiment, lseq: LockinSequence, n_periods: int = 10) -> Trace:
    """Noiseless detected photon rate over `n_periods` modulation periods.

    Every repetition is assumed to start from the pumped state, so one
    sequence per half is simulated and tiled.
    """
    dt = 1.0 / exp.detector.sample_rate_hz
    frame = sequence_frame(lseq.base, exp.model)
    base_on = rate_trace(exp, lseq.base.segments, frame, dt)
    base_off = rate_trace(exp, lseq.base.rf_off().segments, frame, dt)
    half_bins = int(round(0.5 / lseq.f_mod / dt))
    n_seq_bins = len(base_on.y)
    # idle bins keep the dark rate of the detector
    period = np.full(2 * half_bins, exp.detector.dark_rate)
    for h, base in enumerate((base_off.y, base_on.y)):
        start = h * half_bins
        for r in range(lseq.n_repeat):
            period[start + r * n_seq_bins:start + (r + 1) * n_seq_bins] = base
    rate = np.tile(period, n_periods)
    return Trace(np.arange(rate.size) * dt, rate, "t_s", "rate_per_s")


def demodulate(rate: Trace, f_mod: float, det: DetectorConfig, seed=None, shot_noise: bool = True):
    """Counts (Poisson if `shot_noise`), detector filter and lock-in.

    The first modulation period carries the filter start-up transient and
    is dropped when more than one period is available. The RF-on half is
    the second half period, so the reference is -sin. Returns
    (X, Y, R, theta) in volts.
    """
    dt = rate.dt
    counts = poisson_readout(rate, dt, seed) if shot_noise else Trace(rate.t, rate.y * dt, "t_s", "counts")
    v = detector_filter(counts, det)
    per = int(round(1.0 / f_mod / dt))
    if len(v.t) >= 2 * per:
        v = Trace(v.t[per:], v.y[per:], v.x_name, v.y_name)
    return lock_in(v, f_mod, phase_rad=np.pi)


def lockin_measurement(exp: Experiment, lseq: LockinSequence, n_periods: int = 10, seed=None,
                       shot_noise: bool = True):
    """Simulate the modulated measurement through APD, TIA and lock-in.

    Returns (X, Y, R, theta).
    """
    rate = lockin_rate(exp, lseq, n_periods)
    return demodulate(rate, lseq.f_mod, exp.detector, seed, shot_noise)
