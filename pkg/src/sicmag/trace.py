"""Sampled series and the CSV interchange format.

CSV files are UTF-8 with a mandatory header row of unit-suffixed column
names (``tau_s``, ``freq_hz``, ``signal_counts``...). Lines starting with
``#`` are comments. Floats are written with ``repr`` so a file re-read and
re-written is byte identical.
"""

import csv
import io
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Mapping, Union

import numpy as np


class SchemaError(ValueError):
    pass


@dataclass
class Trace:
    t: np.ndarray
    y: np.ndarray
    x_name: str = "t_s"
    y_name: str = "y"

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=float)
        self.y = np.asarray(self.y)
        if self.t.ndim != 1 or len(self.t) != len(self.y):
            raise ValueError("t must be 1-D and match y in length")

    @property
    def dt(self) -> float:
        d = np.diff(self.t)
        if d.size == 0:
            raise ValueError("trace has fewer than two samples")
        if not np.allclose(d, d[0], rtol=1e-9, atol=0):
            raise ValueError("trace is not uniformly sampled")
        return float(d[0])

    def to_csv(self, path) -> None:
        write_csv(path, {self.x_name: self.t, self.y_name: self.y})

    @classmethod
    def from_csv(cls, path, x: Union[str, int] = 0, y: Union[str, int] = 1) -> "Trace":
        cols = read_csv(path)
        names = list(cols)
        xn = names[x] if isinstance(x, int) else x
        yn = names[y] if isinstance(y, int) else y
        for n in (xn, yn):
            if n not in cols:
                raise SchemaError(f"column {n!r} not in {names}")
        return cls(cols[xn], cols[yn], xn, yn)


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def format_csv(columns: Mapping[str, np.ndarray], comments: List[str] = ()) -> str:
    names = list(columns)
    if not names:
        raise SchemaError("no columns")
    data = [np.asarray(columns[n]).ravel() for n in names]
    n = len(data[0])
    if any(len(d) != n for d in data):
        raise SchemaError("columns differ in length")
    buf = io.StringIO()
    for c in comments:
        buf.write(f"# {c}\n")
    buf.write(",".join(names) + "\n")
    for i in range(n):
        buf.write(",".join(_fmt(d[i]) for d in data) + "\n")
    return buf.getvalue()


def write_csv(path, columns: Mapping[str, np.ndarray], comments: List[str] = ()) -> None:
    Path(path).write_text(format_csv(columns, comments), encoding="utf-8", newline="\n")


def read_csv(path) -> Dict[str, np.ndarray]:
    text = Path(path).read_text(encoding="utf-8")
    lines = [ln for ln in text.splitlines() if ln.strip() and not ln.lstrip().startswith("#")]
    if not lines:
        raise SchemaError(f"{path}: empty file")
    rows = list(csv.reader(lines))
    header = [h.strip() for h in rows[0]]
    if len(set(header)) != len(header) or any(not h for h in header):
        raise SchemaError(f"{path}: bad header {header}")
    try:
        float(header[0])
    except ValueError:
        pass
    else:
        raise SchemaError(f"{path}: header row is missing")
    if len(rows) < 2:
        raise SchemaError(f"{path}: no data rows")
    out: Dict[str, List[float]] = {h: [] for h in header}
    for lineno, r in enumerate(rows[1:], start=2):
        if len(r) != len(header):
            raise SchemaError(f"{path}: row {lineno} has {len(r)} fields, expected {len(header)}")
        for h, v in zip(header, r):
            try:
                out[h].append(float(v))
            except ValueError:
                raise SchemaError(f"{path}: row {lineno}, column {h!r}: not a number: {v!r}") from None
    return {h: np.asarray(v) for h, v in out.items()}
