"""
Command line entry point: ``sicmag simulate|fit|sensitivity|device``.

Exit codes: 0 success, 2 invalid input (config, CSV schema, arguments),
3 numerical failure.
"""

import argparse
import hashlib
import json
import sys
import time
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from . import __version__
from .config import FREQ_KINDS, ConfigError, RunConfig, load_config
from .device import (CoilGeometry, MicrostripGeometry, StoppingTable, coil_b1_center, csda_range, ensemble_count,
                     microstrip_b1, vacancy_profile)
from .experiment import rate_trace, run_sweep, sequence_frame
from .fitting import FitError, fit_curve, fwhm
from .lindblad import IntegrationError, InvalidStateError
from .protocols import PlanError, make_protocol
from .sensitivity import report
from .trace import SchemaError, format_csv, read_csv

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC = 0, 2, 3
NUMERIC_ERRORS = (IntegrationError, InvalidStateError, np.linalg.LinAlgError, FloatingPointError)
INPUT_ERRORS = (ConfigError, SchemaError, FitError, PlanError, ValueError, OSError)


def _usage_exit(prog, message):
    sys.stderr.write(f"{prog}: error: {message}\n")
    raise SystemExit(EXIT_INPUT)


# ---------------------------------------------------------------------------
# output helpers

def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _write(out: Path, name: str, text: str, files: List[Path]) -> Path:
    p = out / name
    p.parent.mkdir(parents=True, exist_ok=True)
    p.write_text(text, encoding="utf-8", newline="\n")
    files.append(p)
    return p


def write_manifest(out: Path, files: Sequence[Path], command: str, config: Optional[dict], t0: float) -> Path:
    """Digest list of the emitted files; written last, so its presence marks a complete run."""
    entries = [{"path": str(p.relative_to(out)), "sha256": _sha256(p), "bytes": p.stat().st_size}
               for p in files]
    doc = {"tool": "sicmag", "version": __version__, "command": command, "config": config,
           "duration_s": round(time.perf_counter() - t0, 6), "files": entries}
    p = out / "manifest.json"
    p.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return p


def verify_manifest(out) -> bool:
    out = Path(out)
    doc = json.loads((out / "manifest.json").read_text(encoding="utf-8"))
    return all(_sha256(out / e["path"]) == e["sha256"] for e in doc["files"])


def _gnuplot(csv_name: str, xcol: int, ycols: Sequence[int], xlabel: str, ylabel: str) -> str:
    plots = ", \\\n     ".join(f"'{csv_name}' using {xcol}:{c} with linespoints" for c in ycols)
    return ("set datafile separator ','\n"
            "set datafile commentschars '#'\n"
            "set key autotitle columnhead\n"
            f"set xlabel '{xlabel}'\n"
            f"set ylabel '{ylabel}'\n"
            f"plot {plots}\n")


# ---------------------------------------------------------------------------
# simulate

def sweep_table(cfg: RunConfig, workers: int = 1) -> Dict[str, np.ndarray]:
    """Run the configured sweep and assemble the CSV columns."""
    kind = cfg.kind
    exp = cfg.experiment()
    plan = cfg.plan()
    seqs = make_protocol(kind, plan)
    res = run_sweep(exp, seqs, plan.values, workers=workers)
    noise = cfg["noise"]
    shots = noise["shots"]
    if kind == "cw_odmr":
        # rates integrated over the configured window
        t_int = noise["integration_s"]
        sig, ref, m = res.signal * t_int, res.reference * t_int, 1
    else:
        sig, ref, m = res.signal, res.reference, max(shots, 1)
    cols = {("freq_hz" if kind in FREQ_KINDS else "tau_s"): res.values,
            "signal_counts": sig,
            "signal_std_counts": np.sqrt(sig / m),
            "reference_counts": ref,
            "contrast": res.contrast,
            # std of (S - R)/R for independent Poisson means averaged over m shots
            "contrast_std": np.sqrt(sig / m) / ref * np.sqrt(1.0 + sig / ref)}
    if shots > 0:
        # one child seed per sweep slot, independent of evaluation order
        children = np.random.SeedSequence(cfg.seed).spawn(len(sig))
        noisy = np.empty(len(sig))
        for i, ss in enumerate(children):
            rng = np.random.default_rng(ss)
            s_n = rng.poisson(sig[i] * shots)
            r_n = rng.poisson(ref[i] * shots)
            noisy[i] = (s_n - r_n) / r_n if r_n > 0 else np.nan
        cols["contrast_noisy"] = noisy
    return cols


def cmd_simulate(args) -> int:
    t0 = time.perf_counter()
    cfg = load_config(args.config).with_overrides(seed=args.seed).with_frame(args.frame)
    if cfg.kind is None:
        raise ConfigError("protocol.kind: required for simulate")
    if cfg.stochastic and cfg.seed is None:
        raise ConfigError("seed: required for stochastic runs (noise.shots > 0 or monte_carlo ensemble)")
    out = Path(args.out or cfg.data.get("out_dir") or "sicmag_out")
    out.mkdir(parents=True, exist_ok=True)
    cols = sweep_table(cfg, args.threads)
    files: List[Path] = []
    _write(out, "sweep.csv", format_csv(cols, [f"sicmag {__version__} simulate {cfg.kind}"]), files)
    if cfg["output"]["traces"] and cfg.kind != "cw_odmr":
        exp = cfg.experiment()
        dt = 1.0 / exp.detector.sample_rate_hz / 100.0
        for i, seq in enumerate(make_protocol(cfg.kind, cfg.plan())):
            tr = rate_trace(exp, seq.segments, sequence_frame(seq, exp.model), dt)
            _write(out, f"traces/point_{i:04d}.csv", format_csv({tr.x_name: tr.t, tr.y_name: tr.y}), files)
    xname = next(iter(cols))
    _write(out, "plot.gp", _gnuplot("sweep.csv", 1, [5], xname, "contrast"), files)
    _write(out, "config.json", cfg.to_json(), files)
    write_manifest(out, files, "simulate", cfg.to_dict(), t0)
    print(f"wrote {len(files)} files to {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# fit

def _derived(fit) -> Dict[str, float]:
    d: Dict[str, float] = {}
    if fit.kind == "lorentzian":
        d["fwhm"] = fwhm(fit)
    elif fit.kind == "double_lorentzian":
        d["fwhm1"], d["fwhm2"] = fwhm(fit)
        d["splitting"] = fit["x2"] - fit["x1"]
    elif fit.kind in ("exp_decay", "stretched_exp", "damped_cosine"):
        d["decay_time"] = fit["t_c"]
        if fit.kind == "damped_cosine":
            d["frequency"] = fit["f"]
    return d


def fit_report(fit, source: str, xname: str, yname: str) -> Dict:
    return {"model": fit.kind, "source": source, "x": xname, "y": yname, "converged": bool(fit.converged),
            "iterations": fit.iterations, "rms": fit.rms,
            "params": fit.as_dict(), "sigma": {n: float(s) for n, s in zip(fit.names, fit.sigma)},
            "derived": _derived(fit)}


def format_report(rep: Dict) -> str:
    lines = [f"model      {rep['model']}", f"input      {rep['source']} ({rep['x']} -> {rep['y']})",
             f"converged  {str(rep['converged']).lower()}", f"iterations {rep['iterations']}",
             f"rms        {rep['rms']:.6g}", "", "parameter        value          sigma"]
    for n, v in rep["params"].items():
        lines.append(f"{n:<12} {v:>14.8g} {rep['sigma'][n]:>14.4g}")
    if rep["derived"]:
        lines += ["", "derived"]
        lines += [f"{n:<12} {v:>14.8g}" for n, v in rep["derived"].items()]
    return "\n".join(lines) + "\n"


def _column(cols, names, sel, default):
    if sel is None:
        sel = default
    if isinstance(sel, str) and sel.isdigit():
        sel = int(sel)
    if isinstance(sel, int):
        if not 0 <= sel < len(names):
            raise SchemaError(f"column index {sel} out of range for {names}")
        sel = names[sel]
    if sel not in cols:
        raise SchemaError(f"column {sel!r} not in {names}")
    return sel


def cmd_fit(args) -> int:
    t0 = time.perf_counter()
    src = Path(args.csv)
    cols = read_csv(src)
    names = list(cols)
    xn = _column(cols, names, args.x, 0)
    yn = _column(cols, names, args.y, "contrast" if "contrast" in cols else (1 if len(names) > 1 else 0))
    fit = fit_curve(args.kind, cols[xn], cols[yn])
    rep = fit_report(fit, src.name, xn, yn)
    text = format_report(rep)
    sys.stdout.write(text)
    out = Path(args.out) if args.out else src.parent / f"{src.stem}_{args.kind}_fit"
    out.mkdir(parents=True, exist_ok=True)
    files: List[Path] = []
    _write(out, "fit_report.txt", text, files)
    _write(out, "fit_report.json", json.dumps(rep, indent=2, sort_keys=True) + "\n", files)
    _write(out, "fit_curve.csv", format_csv({xn: cols[xn], yn: cols[yn], "fit": fit.evaluate(cols[xn])}), files)
    _write(out, "plot.gp", _gnuplot("fit_curve.csv", 1, [2, 3], xn, yn), files)
    write_manifest(out, files, "fit", {"model": args.kind, "input": str(src), "x": xn, "y": yn}, t0)
    return EXIT_OK


# ---------------------------------------------------------------------------
# sensitivity and device

def cmd_sensitivity(args) -> int:
    t0 = time.perf_counter()
    cfg = load_config(args.config)
    inp = cfg.sensitivity_inputs()
    rep = report(inp)
    rows = [("eta_cw", rep["eta_cw_t_per_rthz"] * 1e9, "nT/sqrt(Hz)"),
            ("eta_pulsed", rep["eta_pulsed_t_per_rthz"] * 1e9, "nT/sqrt(Hz)"),
            ("eta_ramsey", rep["eta_ramsey_t_per_rthz"] * 1e9, "nT/sqrt(Hz)"),
            ("tau_ramsey", rep["tau_ramsey_s"] * 1e9, "ns"),
            ("eta_hahn_ac", rep["eta_hahn_t_per_rthz"] * 1e9, "nT/sqrt(Hz)"),
            ("f_ac", rep["f_ac_hz"] * 1e-3, "kHz")]
    text = "".join(f"{n:<12} {v:>12.4f} {u}\n" for n, v, u in rows)
    sys.stdout.write(text)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        files: List[Path] = []
        _write(out, "sensitivity.txt", text, files)
        _write(out, "sensitivity.json", json.dumps(rep, indent=2, sort_keys=True) + "\n", files)
        write_manifest(out, files, "sensitivity", cfg["sensitivity"], t0)
    return EXIT_OK


def cmd_device(args) -> int:
    t0 = time.perf_counter()
    table = StoppingTable.from_csv(args.table) if getattr(args, "table", None) else None
    extra = {}
    if args.what == "microstrip":
        g = MicrostripGeometry(args.width_m, args.thickness_m, args.current_a, args.frequency_hz)
        res = {"b1_t": microstrip_b1(g, args.x_m, args.h_m)}
        text = f"b1 {res['b1_t'] * 1e6:.4f} uT\n"
    elif args.what == "coil":
        res = {"b1_t": coil_b1_center(CoilGeometry(args.radius_m, args.turns, args.current_a))}
        text = f"b1 {res['b1_t'] * 1e6:.4f} uT\n"
    elif args.what == "range":
        res = {"range_um": csda_range(args.energy_kev, table)}
        text = f"range {res['range_um']:.4f} um\n"
    elif args.what == "profile":
        p = vacancy_profile(args.energy_kev, table, args.straggle_frac, args.dose_per_um2, args.vacancies_per_ion)
        res = {"peak_depth_um": p.peak_depth_um, "total_per_um2": p.total}
        text = f"peak_depth {p.peak_depth_um:.4f} um\ntotal {p.total:.6g} 1/um^2\n"
        extra["profile.csv"] = format_csv({"depth_um": p.depth_um, "density_per_um3": p.density})
    else:
        res = {"count": ensemble_count(args.density_per_um3, args.volume_um3)}
        text = f"count {res['count']:.6g}\n"
    sys.stdout.write(text)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        files: List[Path] = []
        _write(out, "device.json", json.dumps(res, indent=2, sort_keys=True) + "\n", files)
        for name, body in extra.items():
            _write(out, name, body, files)
        params = {k: v for k, v in vars(args).items() if k not in ("func", "out", "config")}
        write_manifest(out, files, f"device {args.what}", params, t0)
    return EXIT_OK


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration")
    common.add_argument("--seed", type=int, help="RNG seed (overrides the config)")
    common.add_argument("--out", help="output directory")
    common.add_argument("--threads", type=int, default=1, help="worker threads for ensemble members")
    common.add_argument("--frame", choices=("lab", "rotating"), help="integration frame (overrides the config)")

    p = argparse.ArgumentParser(prog="sicmag", description="V2 ensemble ODMR magnetometer simulator")
    p.add_argument("--version", action="version", version=f"sicmag {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", parents=[common], help="run a protocol sweep")
    s.set_defaults(func=cmd_simulate)

    f = sub.add_parser("fit", parents=[common], help="fit a curve model to a CSV column")
    f.add_argument("kind", choices=("lorentzian", "double_lorentzian", "exp_decay", "damped_cosine",
                                    "stretched_exp"))
    f.add_argument("csv")
    f.add_argument("--x", help="x column name or index (default 0)")
    f.add_argument("--y", help="y column name or index (default contrast, else 1)")
    f.set_defaults(func=cmd_fit)

    se = sub.add_parser("sensitivity", parents=[common], help="shot-noise sensitivity table")
    se.set_defaults(func=cmd_sensitivity)

    d = sub.add_parser("device", parents=[common], help="RF field, implant range and ensemble size")
    dsub = d.add_subparsers(dest="what", required=True)
    m = dsub.add_parser("microstrip", parents=[common])
    m.add_argument("--current-a", type=float, default=0.2)
    m.add_argument("--width-m", type=float, default=3e-3)
    m.add_argument("--thickness-m", type=float, default=3e-6)
    m.add_argument("--frequency-hz", type=float, default=70e6)
    m.add_argument("--x-m", type=float, default=0.0)
    m.add_argument("--h-m", type=float, default=3e-6)
    c = dsub.add_parser("coil", parents=[common])
    c.add_argument("--turns", type=int, default=10)
    c.add_argument("--radius-m", type=float, default=5e-3)
    c.add_argument("--current-a", type=float, default=0.1)
    for name in ("range", "profile"):
        r = dsub.add_parser(name, parents=[common])
        r.add_argument("--energy-kev", type=float, required=True)
        r.add_argument("--table", help="stopping table CSV (energy_kev, stopping_kev_per_um)")
        if name == "profile":
            r.add_argument("--straggle-frac", type=float, default=0.10)
            r.add_argument("--dose-per-um2", type=float, default=1.0)
            r.add_argument("--vacancies-per-ion", type=float, default=1.0)
    n = dsub.add_parser("count", parents=[common])
    n.add_argument("--density-per-um3", type=float, default=350.0)
    n.add_argument("--volume-um3", type=float, default=1.83e5)
    d.set_defaults(func=cmd_device)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    if args.threads < 1:
        _usage_exit("sicmag", "--threads must be >= 1")
    try:
        return args.func(args)
    except NUMERIC_ERRORS as exc:
        sys.stderr.write(f"sicmag: numerical failure: {exc}\n")
        return EXIT_NUMERIC
    except INPUT_ERRORS as exc:
        sys.stderr.write(f"sicmag: invalid input: {exc}\n")
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
