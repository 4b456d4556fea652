"""
Spin-3/2 operator algebra and the V2 ground-state Hamiltonian.

All 4x4 operators use the fixed basis ordering

    index:  0       1       2       3
    m_S:   +3/2    +1/2    -1/2    -3/2

Hamiltonians are returned as H/h, i.e. in Hz.
"""

from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np

from .constants import GAMMA_HZ_PER_T

M_VALUES = np.array([1.5, 0.5, -0.5, -1.5])

# (upper, lower) index pairs of the two |+-1/2> <-> |+-3/2> transitions
PLUS_TRANSITION = (0, 1)
MINUS_TRANSITION = (3, 2)


class SpinOperators(NamedTuple):
    sx: np.ndarray
    sy: np.ndarray
    sz: np.ndarray


def spin_matrices(s: float = 1.5) -> SpinOperators:
    """Return Sx, Sy, Sz for spin `s` in descending-m order (hbar = 1)."""
    m = np.arange(s, -s - 1, -1)
    dim = len(m)
    # <m+1|S+|m> = sqrt(s(s+1) - m(m+1))
    s_plus = np.zeros((dim, dim), dtype=complex)
    for k in range(1, dim):
        s_plus[k - 1, k] = np.sqrt(s * (s + 1) - m[k] * (m[k] + 1))
    s_minus = s_plus.conj().T
    sx = 0.5 * (s_plus + s_minus)
    sy = -0.5j * (s_plus - s_minus)
    sz = np.diag(m).astype(complex)
    return SpinOperators(sx, sy, sz)


SX, SY, SZ = spin_matrices()


@dataclass(frozen=True)
class Drive:
    b1_t: float
    f_hz: float
    phase_rad: float = 0.0

    def __post_init__(self):
        if self.b1_t < 0:
            raise ValueError(f"b1_t must be >= 0, got {self.b1_t}")


@dataclass(frozen=True)
class HamiltonianParams:
    """Ground-state parameters.

    The static field ``b0_t`` is along the symmetry axis. A transverse
    component is not representable and is rejected by
    :func:`axial_field`.
    """

    d_hz: float = 35e6
    gamma_hz_per_t: float = GAMMA_HZ_PER_T
    b0_t: float = 0.0
    drive: Optional[Drive] = None

    def __post_init__(self):
        if not self.d_hz > 0:
            raise ValueError(f"d_hz must be > 0, got {self.d_hz}")
        if not self.gamma_hz_per_t > 0:
            raise ValueError(f"gamma_hz_per_t must be > 0, got {self.gamma_hz_per_t}")


def axial_field(b0_vec, tol: float = 0.0) -> float:
    """Return the axial component of a static field vector (Tesla).

    Raises if the field has a transverse part larger than `tol`.
    """
    bx, by, bz = (float(v) for v in b0_vec)
    if np.hypot(bx, by) > tol:
        raise ValueError("transverse B0 is not supported; align B0 with the symmetry axis")
    return bz


def static_hamiltonian(p: HamiltonianParams) -> np.ndarray:
    """D (Sz^2 - 5/4) + gamma B0 Sz, in Hz."""
    return p.d_hz * (SZ @ SZ - 1.25 * np.eye(4)) + p.gamma_hz_per_t * p.b0_t * SZ


def ground_hamiltonian(p: HamiltonianParams, t: float = 0.0) -> np.ndarray:
    """Lab-frame ground Hamiltonian H(t)/h in Hz."""
    h = static_hamiltonian(p)
    if p.drive is not None and p.drive.b1_t > 0:
        d = p.drive
        h = h + p.gamma_hz_per_t * d.b1_t * np.cos(2 * np.pi * d.f_hz * t + d.phase_rad) * SX
    return h


def level_energies(p: HamiltonianParams) -> np.ndarray:
    """Closed-form E(m) = D (m^2 - 5/4) + gamma B0 m in Hz, basis order."""
    m = M_VALUES
    return p.d_hz * (m**2 - 1.25) + p.gamma_hz_per_t * p.b0_t * m


def rotating_frame_hamiltonian(p: HamiltonianParams, f_drive: Optional[float] = None) -> np.ndarray:
    """Time-independent Hamiltonian (Hz) in the frame rotating at `f_drive`.

    The |+-3/2> levels are rotated at the drive frequency, so the diagonal
    holds the detunings of the two |+-1/2> <-> |+-3/2> transitions and the
    off-diagonal the RWA couplings (gamma B1 / 2) <a|Sx|b> e^(-+i phase).
    The |+1/2> <-> |-1/2> coupling oscillates at the drive frequency in this
    frame and is dropped.
    """
    if p.drive is None:
        raise ValueError("rotating frame needs a drive; use the lab-frame path without one")
    if f_drive is None:
        f_drive = p.drive.f_hz
    if not f_drive > 0:
        raise ValueError(f"f_drive must be > 0, got {f_drive}")

    e = level_energies(p)
    diag = e - np.array([f_drive, 0.0, 0.0, f_drive])
    # reference energy: mean of the |+-1/2> pair keeps the numbers small
    diag = diag - 0.5 * (e[1] + e[2])
    h = np.diag(diag).astype(complex)

    g = 0.5 * p.gamma_hz_per_t * p.drive.b1_t
    ph = np.exp(-1j * p.drive.phase_rad)
    for a, b in (PLUS_TRANSITION, MINUS_TRANSITION):
        h[a, b] = g * SX[a, b] * ph
        h[b, a] = np.conj(h[a, b])
    return h


def rabi_frequency(b1_t: float, gamma_hz_per_t: float = GAMMA_HZ_PER_T) -> float:
    """RWA Rabi frequency (sqrt(3)/2) gamma B1 of the +-1/2 <-> +-3/2 lines, Hz."""
    return 0.5 * np.sqrt(3.0) * gamma_hz_per_t * b1_t


def transition_matrix_element(state_a, state_b, b1_vec) -> complex:
    """<b| B1 . S |a> for normalized 4-vectors."""
    a = np.asarray(state_a, dtype=complex)
    b = np.asarray(state_b, dtype=complex)
    for name, v in (("state_a", a), ("state_b", b)):
        if abs(np.linalg.norm(v) - 1.0) > 1e-9:
            raise ValueError(f"{name} is not normalized (norm {np.linalg.norm(v):.12g})")
    bx, by, bz = b1_vec
    op = bx * SX + by * SY + bz * SZ
    return complex(b.conj() @ op @ a)


def resonance_frequencies(p: HamiltonianParams) -> tuple:
    """The two |+-1/2> <-> |+-3/2> transition frequencies, ascending (Hz)."""
    e = level_energies(p)
    f_plus_line = e[PLUS_TRANSITION[0]] - e[PLUS_TRANSITION[1]]
    f_minus_line = e[MINUS_TRANSITION[0]] - e[MINUS_TRANSITION[1]]
    lo, hi = sorted((f_plus_line, f_minus_line))
    return lo, hi
