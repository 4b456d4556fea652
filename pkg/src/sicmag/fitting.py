"""
Levenberg-Marquardt curve fitting for the ODMR line shapes and decay
traces, with data-driven initial guesses.

Parameter order per model:

    lorentzian         x0, gamma, a, b
    double_lorentzian  x1, gamma1, a1, x2, gamma2, a2, b
    exp_decay          a, t_c, b
    damped_cosine      a, t_c, f, phi, b
    stretched_exp      a, t_c, p, b

``gamma`` is the half width at half maximum.
"""

from dataclasses import dataclass, field
from typing import Callable, Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
from scipy.signal import find_peaks, peak_widths

from .trace import Trace

MAX_ITER = 200
GTOL = 1e-10
LAMBDA0 = 1e-3
LAMBDA_MAX = 1e20


class FitError(ValueError):
    pass


# ---------------------------------------------------------------------------
# model functions and analytic Jacobians (columns follow the parameter order)

def _lor(x, x0, g, a):
    u = x - x0
    den = u * u + g * g
    return a * g * g / den, u, den


def lorentzian(x, x0, gamma, a, b):
    return b + _lor(x, x0, gamma, a)[0]


def _jac_lor(x, x0, g, a):
    l, u, den = _lor(x, x0, g, a)
    d_x0 = 2.0 * a * g * g * u / den ** 2
    d_g = 2.0 * a * g * u * u / den ** 2
    d_a = g * g / den
    return d_x0, d_g, d_a


def _f_lorentzian(x, p):
    return lorentzian(x, *p)


def _j_lorentzian(x, p):
    return np.column_stack([*_jac_lor(x, *p[:3]), np.ones_like(x)])


def double_lorentzian(x, x1, g1, a1, x2, g2, a2, b):
    return b + _lor(x, x1, g1, a1)[0] + _lor(x, x2, g2, a2)[0]


def _f_double(x, p):
    return double_lorentzian(x, *p)


def _j_double(x, p):
    return np.column_stack([*_jac_lor(x, *p[0:3]), *_jac_lor(x, *p[3:6]), np.ones_like(x)])


def exp_decay(x, a, t_c, b):
    return b + a * np.exp(-x / t_c)


def _f_exp(x, p):
    return exp_decay(x, *p)


def _j_exp(x, p):
    a, t, _ = p
    e = np.exp(-x / t)
    return np.column_stack([e, a * e * x / t ** 2, np.ones_like(x)])


def damped_cosine(x, a, t_c, f, phi, b):
    return b + a * np.exp(-x / t_c) * np.cos(2.0 * np.pi * f * x + phi)


def _f_dcos(x, p):
    return damped_cosine(x, *p)


def _j_dcos(x, p):
    a, t, f, phi, _ = p
    e = np.exp(-x / t)
    arg = 2.0 * np.pi * f * x + phi
    c, s = np.cos(arg), np.sin(arg)
    return np.column_stack([e * c, a * e * c * x / t ** 2, -a * e * s * 2.0 * np.pi * x,
                            -a * e * s, np.ones_like(x)])


def stretched_exp(x, a, t_c, p, b):
    return b + a * np.exp(-(np.abs(x) / t_c) ** p)


def _f_str(x, q):
    return stretched_exp(x, *q)


def _j_str(x, q):
    a, t, p, _ = q
    r = np.abs(x) / t
    rp = r ** p
    e = np.exp(-rp)
    with np.errstate(divide="ignore", invalid="ignore"):
        lr = np.where(r > 0, np.log(np.where(r > 0, r, 1.0)), 0.0)
    return np.column_stack([e, a * e * p * rp / t, -a * e * rp * lr, np.ones_like(x)])


# ---------------------------------------------------------------------------
# initial guesses

def _half_width(x, dev, i):
    """HWHM around index i from the half-level crossings of |dev|."""
    half = 0.5 * abs(dev[i])
    mag = np.abs(dev)
    lo = i
    while lo > 0 and mag[lo] > half:
        lo -= 1
    hi = i
    while hi < len(x) - 1 and mag[hi] > half:
        hi += 1
    w = 0.5 * (x[hi] - x[lo])
    return w if w > 0 else (x[-1] - x[0]) / 10.0


def _guess_lorentzian(x, y):
    b = np.median(y)
    dev = y - b
    i = int(np.argmax(np.abs(dev)))
    return np.array([x[i], _half_width(x, dev, i), dev[i], b])


def _guess_double(x, y):
    b = np.median(y)
    dev = y - b
    # peaks or dips, whichever side deviates more from the median baseline
    sign = 1.0 if dev.max() >= -dev.min() else -1.0
    pk, props = find_peaks(sign * dev, prominence=0)
    if len(pk) >= 2:
        top = np.sort(pk[np.argsort(props["prominences"])[-2:]])
        widths = peak_widths(sign * dev, top, rel_height=0.5)[0]
        dx = np.mean(np.diff(x))
        out = []
        for i, w in zip(top, widths):
            out += [x[i], max(0.5 * w * dx, dx), dev[i]]
        return np.array(out + [b])
    p = _guess_lorentzian(x, y)
    return np.array([p[0] - p[1], p[1], p[2], p[0] + p[1], p[1], p[2], b])


def _tail_baseline(y):
    k = max(len(y) // 10, 1)
    return float(np.mean(y[-k:]))


def _log_envelope_tc(x, dev, amp):
    """Decay constant from a straight-line fit to log|dev|."""
    mag = np.abs(dev)
    keep = mag > 0.1 * abs(amp)
    if keep.sum() >= 2 and np.ptp(x[keep]) > 0:
        slope = np.polyfit(x[keep], np.log(mag[keep]), 1)[0]
        if slope < 0:
            return -1.0 / slope
    return (x[-1] - x[0]) / 3.0


def _guess_exp(x, y):
    b = _tail_baseline(y)
    a = y[0] - b
    return np.array([a, _log_envelope_tc(x - x[0], y - b, a), b])


def _guess_str(x, y):
    a, t, b = _guess_exp(x, y)
    return np.array([a, t, 1.0, b])


def _dominant_frequency(x, y):
    """Peak of the zero-padded discrete spectrum of the mean-subtracted data."""
    n = len(x)
    dx = (x[-1] - x[0]) / (n - 1)
    xu = x[0] + dx * np.arange(n)
    yu = np.interp(xu, x, y) - np.mean(y)
    m = 16 * n
    spec = np.abs(np.fft.rfft(yu, m))
    freqs = np.fft.rfftfreq(m, dx)
    spec[freqs < 1.0 / (x[-1] - x[0])] = 0.0  # below one cycle in the window
    return float(freqs[int(np.argmax(spec))]) if spec.any() else 1.0 / (x[-1] - x[0])


def _guess_dcos(x, y):
    f = _dominant_frequency(x, y)
    # envelope of the local extrema of the mean-subtracted data
    dev = y - np.mean(y)
    ext, _ = find_peaks(np.abs(dev))
    ext = np.r_[0, ext] if len(ext) else np.arange(len(x))
    t = _log_envelope_tc(x[ext] - x[0], dev[ext], np.max(np.abs(dev[ext])))
    # with f and t_c fixed the remaining parameters are linear
    e = np.exp(-(x - x[0]) / t)
    w = 2.0 * np.pi * f * x
    basis = np.column_stack([e * np.cos(w), e * np.sin(w), np.ones_like(x)])
    (c1, c2, b), *_ = np.linalg.lstsq(basis, y, rcond=None)
    # a cos(w + phi) = a cos(phi) cos(w) - a sin(phi) sin(w), referenced to x = 0
    a = np.hypot(c1, c2) * np.exp(x[0] / t)
    phi = np.arctan2(-c2, c1)
    return np.array([a, t, f, phi, b])


@dataclass(frozen=True)
class FitModel:
    kind: str
    names: Tuple[str, ...]
    func: Callable
    jac: Callable
    guess: Callable
    positive: Tuple[int, ...]  # indices that must stay > 0


MODELS: Dict[str, FitModel] = {
    "lorentzian": FitModel("lorentzian", ("x0", "gamma", "a", "b"),
                           _f_lorentzian, _j_lorentzian, _guess_lorentzian, ()),
    "double_lorentzian": FitModel("double_lorentzian", ("x1", "gamma1", "a1", "x2", "gamma2", "a2", "b"),
                                  _f_double, _j_double, _guess_double, ()),
    "exp_decay": FitModel("exp_decay", ("a", "t_c", "b"), _f_exp, _j_exp, _guess_exp, (1,)),
    "damped_cosine": FitModel("damped_cosine", ("a", "t_c", "f", "phi", "b"),
                              _f_dcos, _j_dcos, _guess_dcos, (1,)),
    "stretched_exp": FitModel("stretched_exp", ("a", "t_c", "p", "b"), _f_str, _j_str, _guess_str, (1, 2)),
}


def get_model(kind) -> FitModel:
    if isinstance(kind, FitModel):
        return kind
    try:
        return MODELS[kind]
    except KeyError:
        raise FitError(f"unknown model {kind!r}; expected one of {sorted(MODELS)}") from None


def _canonical(kind: str, p: np.ndarray) -> np.ndarray:
    """Map sign-symmetric parameters onto the documented ranges."""
    p = p.copy()
    if kind == "lorentzian":
        p[1] = abs(p[1])
    elif kind == "double_lorentzian":
        p[1], p[4] = abs(p[1]), abs(p[4])
        if p[3] < p[0]:
            p[[0, 1, 2, 3, 4, 5]] = p[[3, 4, 5, 0, 1, 2]]
    elif kind == "damped_cosine":
        if p[2] < 0:
            p[2], p[3] = -p[2], -p[3]
        if p[0] < 0:
            p[0], p[3] = -p[0], p[3] + np.pi
        p[3] = (p[3] + np.pi) % (2.0 * np.pi) - np.pi
    return p


# ---------------------------------------------------------------------------

@dataclass
class FitResult:
    kind: str
    names: Tuple[str, ...]
    params: np.ndarray
    sigma: np.ndarray
    rms: float
    converged: bool
    iterations: int
    history: List[float] = field(default_factory=list)  # RMS after each accepted step

    def __getitem__(self, name: str) -> float:
        return float(self.params[self.names.index(name)])

    def as_dict(self) -> Dict[str, float]:
        return {n: float(v) for n, v in zip(self.names, self.params)}

    def evaluate(self, x) -> np.ndarray:
        return get_model(self.kind).func(np.asarray(x, dtype=float), self.params)


def fit_curve(kind, x, y=None, init: Optional[Sequence[float]] = None, max_iter: int = MAX_ITER,
              gtol: float = GTOL) -> FitResult:
    """Levenberg-Marquardt least squares fit of one of the model families.

    Parameters
    ----------
    kind : str or FitModel
    x, y : array_like
        Data; `x` may also be a Trace, in which case `y` is omitted.
    init : sequence of float, optional
        Starting parameters. Data-driven guesses are used when omitted.

    Returns
    -------
    FitResult
        Not converging within `max_iter` iterations is reported through
        ``converged = False``, not an exception.

    Notes
    -----
    Marquardt scaling of the damping term by diag(J^T J), lambda starts at
    1e-3 and moves by x10 / /10. Convergence is declared when every gradient
    component, scaled by its Jacobian column norm and the data norm, is
    below `gtol`.
    """
    if isinstance(x, Trace):
        x, y = x.t, x.y
    model = get_model(kind)
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    k = len(model.names)
    if x.ndim != 1 or x.shape != y.shape:
        raise FitError("x and y must be 1-D arrays of equal length")
    if len(x) < 2 + k:
        raise FitError(f"{model.kind} needs at least {2 + k} points, got {len(x)}")
    if np.any(np.diff(x) <= 0):
        raise FitError("x must be strictly increasing")
    if not np.all(np.isfinite(y)) or not np.all(np.isfinite(x)):
        raise FitError("data contain non-finite values")
    if np.ptp(y) == 0:
        raise FitError("degenerate data: y has zero variance")

    p = np.array(model.guess(x, y) if init is None else init, dtype=float)
    if p.shape != (k,):
        raise FitError(f"{model.kind} takes {k} parameters {model.names}")
    if any(p[i] <= 0 for i in model.positive):
        raise FitError(f"initial {', '.join(model.names[i] for i in model.positive)} must be > 0")

    ynorm = np.linalg.norm(y)
    r = y - model.func(x, p)
    cost = r @ r
    lam = LAMBDA0
    history = [float(np.sqrt(cost / len(x)))]
    converged = False
    it = 0
    while it < max_iter:
        it += 1
        jac = model.jac(x, p)
        g = jac.T @ r
        jtj = jac.T @ jac
        cn = np.sqrt(np.diag(jtj))
        if np.all(np.abs(g) <= gtol * np.where(cn > 0, cn, 1.0) * ynorm):
            converged = True
            break
        d = np.diag(jtj).copy()
        d[d == 0] = 1.0
        improved = False
        while lam <= LAMBDA_MAX:
            try:
                step = np.linalg.solve(jtj + lam * np.diag(d), g)
            except np.linalg.LinAlgError:
                lam *= 10.0
                continue
            trial = p + step
            if any(trial[i] <= 0 for i in model.positive):
                lam *= 10.0
                continue
            r_new = y - model.func(x, trial)
            c_new = r_new @ r_new
            if np.isfinite(c_new) and c_new < cost:
                p, r, cost = trial, r_new, c_new
                lam = max(lam / 10.0, 1e-15)
                improved = True
                break
            lam *= 10.0
        if not improved:
            # no downhill step at any damping: at the optimum to rounding
            jac = model.jac(x, p)
            g = jac.T @ r
            cn = np.sqrt(np.sum(jac * jac, axis=0))
            converged = bool(np.all(np.abs(g) <= gtol * np.where(cn > 0, cn, 1.0) * ynorm))
            break
        history.append(float(np.sqrt(cost / len(x))))

    jac = model.jac(x, p)
    dof = max(len(x) - k, 1)
    jtj = jac.T @ jac
    s2 = cost / dof
    # rank test on the column-normalized normal matrix; parameter scales
    # differ by many decades (seconds vs hertz)
    cn = np.sqrt(np.diag(jtj))
    if np.any(cn == 0) or np.linalg.matrix_rank(jtj / np.outer(cn, cn), tol=1e-12) < k:
        sigma = np.full(k, np.inf)
        converged = False
    else:
        cov = np.linalg.pinv(jtj / np.outer(cn, cn)) / np.outer(cn, cn) * s2
        sigma = np.sqrt(np.clip(np.diag(cov), 0.0, None))
    pc = _canonical(model.kind, p)
    if model.kind == "double_lorentzian" and not np.array_equal(pc[:3], p[:3]):
        sigma = sigma[[3, 4, 5, 0, 1, 2, 6]]
    return FitResult(model.kind, model.names, pc, sigma, float(np.sqrt(cost / len(x))),
                     converged, it, history)


def fwhm(fit: FitResult):
    """Full width at half maximum, 2 gamma, per Lorentzian line.

    Returns a float for a single Lorentzian and a (fwhm1, fwhm2) tuple for
    a double Lorentzian, in the order of increasing center.
    """
    if fit.kind == "lorentzian":
        return 2.0 * abs(fit["gamma"])
    if fit.kind == "double_lorentzian":
        return 2.0 * abs(fit["gamma1"]), 2.0 * abs(fit["gamma2"])
    raise FitError(f"fwhm needs a Lorentzian fit, got {fit.kind!r}")


class RabiFit(NamedTuple):
    omega_r_hz: float
    decay_s: float
    fit: FitResult

    @property
    def converged(self) -> bool:
        """False when the fit failed or the oscillation is not resolved."""
        return self.fit.converged and abs(self.fit["a"]) > 3.0 * self.fit.sigma[0]


def extract_rabi(trace: Trace, init=None) -> RabiFit:
    """Rabi frequency and decay from a damped-cosine fit of a Rabi trace."""
    fit = fit_curve("damped_cosine", trace.t, trace.y, init)
    return RabiFit(fit["f"], fit["t_c"], fit)
