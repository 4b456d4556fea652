"""
Pulse sequences and sweep plans for the ODMR measurement protocols.

Sequences are immutable value objects. Every pulsed protocol has the form
laser(t_I) -> RF/free-evolution block -> laser(t_R), with the data point
taken from a readout window at the start of the second laser pulse.
"""

from dataclasses import dataclass, field, replace
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .constants import GAMMA_HZ_PER_T
from .spin import rabi_frequency

KINDS = ("cw_odmr", "pulsed_odmr", "rabi", "ramsey", "hahn_echo", "t1")

# Final pi/2 phases for the echo readout. "y" is the readout that maps the
# refocused coherence onto the opposite population, giving the mirrored trace.
ECHO_PHASES = {"x": 0.0, "y": np.pi}


class PlanError(ValueError):
    pass


@dataclass(frozen=True)
class RF:
    b1_t: float
    f_hz: float
    phase_rad: float = 0.0


@dataclass(frozen=True)
class Segment:
    duration: float
    laser_w: float = 0.0  # 0 = laser off
    rf: Optional[RF] = None
    label: str = ""

    def __post_init__(self):
        if self.duration < 0:
            raise ValueError(f"segment duration must be >= 0, got {self.duration}")
        if self.laser_w < 0:
            raise ValueError("laser power must be >= 0")

    @property
    def rf_on(self) -> bool:
        return self.rf is not None and self.rf.b1_t > 0


@dataclass(frozen=True)
class ReadoutWindow:
    segment: int
    start: float = 0.0
    width: float = 2e-6


@dataclass(frozen=True)
class PulseSequence:
    segments: Tuple[Segment, ...]
    readout: Optional[ReadoutWindow] = None
    kind: str = ""
    steady_state: bool = False

    def __post_init__(self):
        if self.readout is not None:
            r = self.readout
            if not 0 <= r.segment < len(self.segments):
                raise ValueError("readout window references a missing segment")
            seg = self.segments[r.segment]
            if r.start < 0 or r.width <= 0 or r.start + r.width > seg.duration * (1 + 1e-12):
                raise ValueError("readout window must lie within its segment")

    @property
    def duration(self) -> float:
        return float(sum(s.duration for s in self.segments))

    @property
    def rf_time(self) -> float:
        return float(sum(s.duration for s in self.segments if s.rf_on))

    @property
    def carrier_hz(self) -> Optional[float]:
        """The single RF carrier of the sequence, or None without RF."""
        freqs = {s.rf.f_hz for s in self.segments if s.rf is not None}
        if len(freqs) > 1:
            raise ValueError(f"sequence uses several RF carriers: {sorted(freqs)}")
        return freqs.pop() if freqs else None

    def rf_off(self) -> "PulseSequence":
        """Same timing with every RF segment switched off."""
        segs = tuple(replace(s, rf=None) for s in self.segments)
        return replace(self, segments=segs)


@dataclass(frozen=True)
class SweepPlan:
    values: Tuple[float, ...]
    t_i: float = 12e-6
    t_r: float = 12e-6
    b1_t: float = 41.9e-6
    f_drive_hz: float = 70e6
    detuning_hz: Optional[float] = None
    final_phase: Optional[str] = None
    laser_w: float = 36e-3
    readout_s: float = 2e-6
    gamma_hz_per_t: float = GAMMA_HZ_PER_T
    t_pi: Optional[float] = None  # overrides the analytic calibration
    t_wait: float = 0.0  # dark settle time after the init pulse

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.size == 0:
            raise PlanError("sweep list is empty")
        if np.any(np.diff(v) <= 0):
            raise PlanError("sweep values must be strictly increasing")
        object.__setattr__(self, "values", tuple(float(x) for x in v))

    @property
    def pi_time(self) -> float:
        if self.t_pi is not None:
            return self.t_pi
        return pi_pulse_duration(self.b1_t, self.gamma_hz_per_t)


def pi_pulse_duration(b1_t: float, gamma: float = GAMMA_HZ_PER_T) -> float:
    """t_pi = 1 / (2 Omega_R) with Omega_R = (sqrt(3)/2) gamma B1."""
    if not b1_t > 0:
        raise ValueError(f"b1_t must be > 0 for a pi pulse, got {b1_t}")
    return 1.0 / (2.0 * rabi_frequency(b1_t, gamma))


def _pulsed(plan: SweepPlan, middle: Sequence[Segment], kind: str) -> PulseSequence:
    if plan.readout_s > plan.t_r:
        raise PlanError("readout window longer than the readout laser pulse")
    if plan.t_wait < 0:
        raise PlanError("t_wait must be >= 0")
    settle = (Segment(plan.t_wait, label="settle"),) if plan.t_wait > 0 else ()
    segs = (Segment(plan.t_i, plan.laser_w, label="init"),
            *settle,
            *middle,
            Segment(plan.t_r, plan.laser_w, label="readout"))
    return PulseSequence(segs, ReadoutWindow(len(segs) - 1, 0.0, plan.readout_s), kind)


def _require(plan: SweepPlan, name: str, kind: str):
    if getattr(plan, name) is None:
        raise PlanError(f"{kind} plan is missing required parameter {name!r}")
    return getattr(plan, name)


def make_protocol(kind: str, plan: SweepPlan) -> List[PulseSequence]:
    """One PulseSequence per sweep value.

    Swept variable per kind: cw_odmr / pulsed_odmr - RF frequency (Hz);
    rabi - RF pulse length (s); ramsey, hahn_echo - total free evolution
    time tau (s); t1 - dark time (s).
    """
    if kind not in KINDS:
        raise PlanError(f"unknown protocol {kind!r}; expected one of {KINDS}")
    seqs = []
    if kind == "cw_odmr":
        for f in plan.values:
            seg = Segment(1e-3, plan.laser_w, RF(plan.b1_t, f), label="cw")
            seqs.append(PulseSequence((seg,), None, kind, steady_state=True))
        return seqs

    if kind == "t1":
        for tau in plan.values:
            seqs.append(_pulsed(plan, [Segment(tau, label="dark")], kind))
        return seqs

    if kind in ("rabi", "pulsed_odmr", "ramsey", "hahn_echo") and not plan.b1_t > 0:
        raise PlanError(f"{kind} plan needs b1_t > 0")
    t_pi = plan.pi_time
    f0 = plan.f_drive_hz

    if kind == "rabi":
        for tau in plan.values:
            seqs.append(_pulsed(plan, [Segment(tau, rf=RF(plan.b1_t, f0), label="rf")], kind))
    elif kind == "pulsed_odmr":
        for f in plan.values:
            seqs.append(_pulsed(plan, [Segment(t_pi, rf=RF(plan.b1_t, f), label="pi")], kind))
    elif kind == "ramsey":
        delta = _require(plan, "detuning_hz", kind)
        rf = RF(plan.b1_t, f0 + delta)
        for tau in plan.values:
            mid = [Segment(t_pi / 2, rf=rf, label="pi/2"),
                   Segment(tau, label="free"),
                   Segment(t_pi / 2, rf=rf, label="pi/2")]
            seqs.append(_pulsed(plan, mid, kind))
    elif kind == "hahn_echo":
        phase_name = _require(plan, "final_phase", kind)
        if phase_name not in ECHO_PHASES:
            raise PlanError(f"hahn_echo final_phase must be one of {sorted(ECHO_PHASES)}, got {phase_name!r}")
        rf = RF(plan.b1_t, f0)
        rf_final = RF(plan.b1_t, f0, ECHO_PHASES[phase_name])
        for tau in plan.values:
            mid = [Segment(t_pi / 2, rf=rf, label="pi/2"),
                   Segment(tau / 2, label="free"),
                   Segment(t_pi, rf=rf, label="pi"),
                   Segment(tau / 2, label="free"),
                   Segment(t_pi / 2, rf=rf_final, label="pi/2")]
            seqs.append(_pulsed(plan, mid, kind))
    return seqs


@dataclass(frozen=True)
class LockinSequence:
    """One modulation period: RF-off (low) half, then RF-on (high) half."""

    segments: Tuple[Segment, ...]
    halves: Tuple[str, ...]  # "low" / "high" per segment
    f_mod: float
    n_repeat: int
    base: PulseSequence

    @property
    def duration(self) -> float:
        return float(sum(s.duration for s in self.segments))


def wrap_lockin(seq: PulseSequence, n_repeat: int = 5, f_mod: float = 1e3) -> LockinSequence:
    """Repeat `seq` n_repeat times per half of a square modulation period.

    The low half keeps the laser pattern but forces RF off; both halves are
    padded with dark idle time to fill 1/(2 f_mod).
    """
    if n_repeat < 1:
        raise ValueError("n_repeat must be >= 1")
    if not f_mod > 0:
        raise ValueError("f_mod must be > 0")
    half = 0.5 / f_mod
    busy = n_repeat * seq.duration
    if busy > half * (1 + 1e-12):
        f_max = 1.0 / (2.0 * busy)
        raise ValueError(f"{n_repeat} sequences of {seq.duration:.6g} s do not fit in a half period; "
                         f"f_mod must be <= {f_max:.6g} Hz")
    pad = max(half - busy, 0.0)
    segs, tags = [], []
    for tag, s in (("low", seq.rf_off()), ("high", seq)):
        for _ in range(n_repeat):
            segs.extend(s.segments)
            tags.extend([tag] * len(s.segments))
        if pad > 0:
            segs.append(Segment(pad, label="idle"))
            tags.append(tag)
    return LockinSequence(tuple(segs), tuple(tags), f_mod, n_repeat, seq)
