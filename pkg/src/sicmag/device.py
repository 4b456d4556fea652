"""
Device-level helpers: quasi-static RF drive fields of the microstrip and
the pickup coil, proton implantation depth from a stopping-power table,
and V2 ensemble bookkeeping.
"""

from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Optional, Tuple

import numpy as np

from .constants import CONSTANTS
from .trace import SchemaError, read_csv, write_csv

C_LIGHT = 299792458.0
EPS_R_SIC = 9.7
DEFAULT_TABLE = "h_in_4h_sic.csv"


@dataclass(frozen=True)
class MicrostripGeometry:
    width_m: float = 3e-3
    thickness_m: float = 3e-6  # metallization; the sheet model ignores it
    current_a: float = 0.2
    frequency_hz: float = 70e6
    eps_r: float = EPS_R_SIC

    def __post_init__(self):
        if not self.width_m > 0:
            raise ValueError("width_m must be > 0")
        if self.thickness_m < 0:
            raise ValueError("thickness_m must be >= 0")
        if self.frequency_hz < 0 or self.eps_r < 1:
            raise ValueError("frequency_hz must be >= 0 and eps_r >= 1")

    @property
    def wavelength_m(self) -> float:
        """Guided wavelength estimate c / (f sqrt(eps_r))."""
        return np.inf if self.frequency_hz == 0 else C_LIGHT / (self.frequency_hz * np.sqrt(self.eps_r))


@dataclass(frozen=True)
class CoilGeometry:
    radius_m: float = 5e-3
    turns: int = 10
    current_a: float = 0.1

    def __post_init__(self):
        if not self.radius_m > 0:
            raise ValueError("radius_m must be > 0")
        if self.turns < 1:
            raise ValueError("turns must be >= 1")


def microstrip_b1(g: MicrostripGeometry, x: float = 0.0, h: float = 3e-6):
    """In-plane field (T) of a uniform sheet current of width w.

    B = mu0 I / (2 pi w) [atan((w/2 - x)/h) + atan((w/2 + x)/h)]

    The frequency only enters the quasi-static check: the strip and the
    evaluation point must lie within a tenth of the guided wavelength.
    """
    x = np.asarray(x, dtype=float)
    if np.any(np.asarray(h) <= 0):
        raise ValueError("h must be > 0")
    extent = max(g.width_m, float(np.max(np.abs(x))), float(np.max(h)))
    if extent > g.wavelength_m / 10.0:
        raise ValueError(f"quasi-static model invalid: geometry {extent:.3g} m exceeds a tenth of "
                         f"the {g.wavelength_m:.3g} m wavelength")
    w = g.width_m
    b = CONSTANTS.mu_0 * g.current_a / (2.0 * np.pi * w) * (np.arctan((w / 2 - x) / h) + np.arctan((w / 2 + x) / h))
    return float(b) if b.ndim == 0 else b


def coil_b1_center(g: CoilGeometry) -> float:
    """Field at the center of `turns` stacked loops, mu0 N I / (2 R)."""
    return CONSTANTS.mu_0 * g.turns * g.current_a / (2.0 * g.radius_m)


# ---------------------------------------------------------------------------
# stopping power and implantation depth

@dataclass(frozen=True)
class StoppingTable:
    energy_kev: Tuple[float, ...]
    stopping_kev_per_um: Tuple[float, ...]
    source: str = ""

    def __post_init__(self):
        e = np.asarray(self.energy_kev, dtype=float)
        s = np.asarray(self.stopping_kev_per_um, dtype=float)
        if e.ndim != 1 or e.shape != s.shape or e.size < 2:
            raise ValueError("energy and stopping columns must be 1-D, equal length, >= 2 rows")
        if np.any(np.diff(e) <= 0) or e[0] <= 0:
            raise ValueError("energies must be positive and strictly increasing")
        if np.any(s <= 0):
            raise ValueError("stopping powers must be > 0")
        object.__setattr__(self, "energy_kev", tuple(float(v) for v in e))
        object.__setattr__(self, "stopping_kev_per_um", tuple(float(v) for v in s))

    @classmethod
    def from_csv(cls, path) -> "StoppingTable":
        cols = read_csv(path)
        for name in ("energy_kev", "stopping_kev_per_um"):
            if name not in cols:
                raise SchemaError(f"{path}: stopping table needs column {name!r}, found {list(cols)}")
        src = ""
        for line in Path(path).read_text(encoding="utf-8").splitlines():
            if line.startswith("# source:"):
                src = line.split(":", 1)[1].strip()
        return cls(tuple(cols["energy_kev"]), tuple(cols["stopping_kev_per_um"]), src or str(path))

    def to_csv(self, path, comments=()) -> None:
        write_csv(path, {"energy_kev": np.asarray(self.energy_kev),
                         "stopping_kev_per_um": np.asarray(self.stopping_kev_per_um)},
                  [f"source: {self.source}", *comments])


@lru_cache(maxsize=1)
def default_table() -> StoppingTable:
    """The shipped proton-in-4H-SiC table."""
    with resources.as_file(resources.files("sicmag") / "data" / DEFAULT_TABLE) as p:
        return StoppingTable.from_csv(p)


# Bethe + low-energy blend used to generate the shipped table
_ME_EV = 0.51099895e6
_MP_EV = 938.27208816e6
_RE_CM = 2.8179403262e-13
_AVOGADRO = 6.02214076e23


def model_stopping(e_kev, density_g_cm3: float = 3.21, molar_mass: float = 40.096, z_per_unit: int = 20,
                   i_ev: float = 136.0, k_low: float = 84.76) -> np.ndarray:
    """Proton electronic stopping (keV/um) from a two-branch model.

    The high-energy branch is the relativistic Bethe formula with the log
    written as ln(1 + 2 m c^2 beta^2 gamma^2 / I) so it stays positive; the
    low-energy branch is k E^0.45. They are combined harmonically,
    S = S_lo S_hi / (S_lo + S_hi).

    Defaults are for SiC: I from Bragg additivity of Si (173 eV) and
    C (78 eV); k_low is the silicon value that reproduces a 16 um range at
    1 MeV, scaled by the SiC / Si electron density ratio.
    """
    e = np.asarray(e_kev, dtype=float)
    t = e * 1e3
    gam = 1.0 + t / _MP_EV
    b2 = 1.0 - 1.0 / gam ** 2
    n_e = density_g_cm3 / molar_mass * _AVOGADRO * z_per_unit
    k = 4.0 * np.pi * _RE_CM ** 2 * _ME_EV * n_e  # eV/cm
    s_hi = k / b2 * np.log1p(2.0 * _ME_EV * b2 * gam ** 2 / i_ev) / 1e7  # keV/um
    s_lo = k_low * e ** 0.45
    return s_lo * s_hi / (s_lo + s_hi)


def model_stopping_table(e_max_kev: float = 2000.0, step_kev: float = 5.0, e_min_kev: float = 1.0) -> StoppingTable:
    """Tabulate ``model_stopping`` on a log grid up to 10 keV and a linear
    grid with `step_kev` spacing above."""
    low = np.geomspace(e_min_kev, 10.0, 13, endpoint=False)
    high = np.arange(10.0, e_max_kev + 0.5 * step_kev, step_kev)
    e = np.concatenate([low, high])
    return StoppingTable(tuple(e), tuple(np.round(model_stopping(e), 6)),
                         "Bethe + k E^0.45 model for H in 4H-SiC (sicmag.device.model_stopping)")


def csda_range(e_kev: float, table: Optional[StoppingTable] = None) -> float:
    """CSDA range (um), the integral of dE / S(E) from 0 to `e_kev`.

    Trapezoidal over the table nodes, with S linear between nodes. Below
    the lowest node S follows the power law through the first two nodes
    (linear in log-log), integrated analytically.
    """
    table = default_table() if table is None else table
    e = np.asarray(table.energy_kev)
    s = np.asarray(table.stopping_kev_per_um)
    if e_kev < 0:
        raise ValueError("energy must be >= 0")
    if e_kev > e[-1]:
        raise ValueError(f"energy {e_kev} keV above the table span ({e[-1]} keV)")
    if e_kev == 0:
        return 0.0
    m = np.log(s[1] / s[0]) / np.log(e[1] / e[0])
    if m >= 1:
        raise ValueError("stopping rises too steeply at the table's low end to extrapolate to 0")
    # S = s0 (E/e0)^m below e0
    e_lo = min(e_kev, e[0])
    r = e[0] ** m * e_lo ** (1.0 - m) / (s[0] * (1.0 - m))
    if e_kev <= e[0]:
        return float(r)
    k = int(np.searchsorted(e, e_kev, side="right"))
    inv = 1.0 / s[:k]
    r += float(np.sum(np.diff(e[:k]) * 0.5 * (inv[1:] + inv[:-1])))
    if e_kev > e[k - 1]:
        s_end = np.interp(e_kev, e, s)
        r += (e_kev - e[k - 1]) * 0.5 * (1.0 / s[k - 1] + 1.0 / s_end)
    return float(r)


@dataclass
class ImplantProfile:
    depth_um: np.ndarray
    density: np.ndarray  # vacancies / um^3
    peak_depth_um: float

    @property
    def total(self) -> float:
        """Areal vacancy count (1/um^2)."""
        return float(np.trapezoid(self.density, self.depth_um))


def vacancy_profile(e_kev: float, table: Optional[StoppingTable] = None, straggle_frac: float = 0.10,
                    dose_per_um2: float = 1.0, vacancies_per_ion: float = 1.0, n: int = 2001) -> ImplantProfile:
    """Gaussian vacancy depth profile centered on the CSDA range.

    sigma = straggle_frac * range. The depth grid spans [0, range + 6 sigma]
    and the profile is normalized on it so that its trapezoidal integral is
    dose * vacancies_per_ion.
    """
    if not 0 < straggle_frac < 0.5:
        raise ValueError("straggle_frac must be in (0, 0.5)")
    if not dose_per_um2 > 0:
        raise ValueError("dose must be > 0")
    if vacancies_per_ion < 0:
        raise ValueError("vacancies_per_ion must be >= 0")
    r = csda_range(e_kev, table)
    sig = straggle_frac * r
    z = np.linspace(0.0, r + 6.0 * sig, n)
    g = np.exp(-0.5 * ((z - r) / sig) ** 2)
    dens = dose_per_um2 * vacancies_per_ion * g / np.trapezoid(g, z)
    return ImplantProfile(z, dens, r)


def ensemble_count(density_per_um3: float, volume_um3: float) -> float:
    """Number of centers in a volume."""
    if density_per_um3 < 0 or volume_um3 < 0:
        raise ValueError("density and volume must be >= 0")
    return float(density_per_um3 * volume_um3)
