"""Trace records, relative-position error statistics and file export."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from .quaternion import euler_from_quat, wrap_angle

_VEC = {3: ("x", "y", "z"), 4: ("w", "x", "y", "z")}
_SIZES = {
    "truth_position": 3,
    "truth_velocity": 3,
    "truth_attitude": 4,
    "est_position": 3,
    "est_velocity": 3,
    "est_attitude": 4,
    "cov_diag": 12,
}


@dataclass(frozen=True)
class TraceRecord:
    """One control tick: inertial-frame truth and estimate of the relative state."""

    timestamp: float
    truth_position: tuple
    truth_velocity: tuple
    truth_attitude: tuple
    est_position: tuple
    est_velocity: tuple
    est_attitude: tuple
    cov_diag: tuple
    accepted: int = 0
    gated: int = 0
    dropped: int = 0
    diverged: int = 0


def _column_names(name: str) -> list[str]:
    n = _SIZES.get(name)
    if n is None:
        return [name]
    if name == "cov_diag":
        return [f"{name}_{k}" for k in range(n)]
    return [f"{name}_{c}" for c in _VEC[n]]


TRACE_COLUMNS = [c for f in fields(TraceRecord) for c in _column_names(f.name)]
TRACE_HEADER = ",".join(TRACE_COLUMNS)


def _flatten(rec: TraceRecord) -> list:
    row = []
    for f in fields(TraceRecord):
        v = getattr(rec, f.name)
        if f.name in _SIZES:
            row.extend(float(x) for x in v)
        else:
            row.append(v)
    return row


def export_trace(trace, path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        fh.write(TRACE_HEADER + "\n")
        for rec in trace:
            fh.write(",".join(repr(x) if isinstance(x, float) else str(x) for x in _flatten(rec)) + "\n")
    return path


def read_trace(path) -> list[TraceRecord]:
    path = Path(path)
    out = []
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != TRACE_COLUMNS:
            raise ValueError(f"{path}: trace header does not match the expected schema")
        for row in reader:
            vals = iter(row)
            kw = {}
            for f in fields(TraceRecord):
                n = _SIZES.get(f.name)
                if n is None:
                    raw = next(vals)
                    kw[f.name] = float(raw) if f.name == "timestamp" else int(raw)
                else:
                    kw[f.name] = tuple(float(next(vals)) for _ in range(n))
            out.append(TraceRecord(**kw))
    return out


@dataclass(frozen=True)
class ErrorStats:
    e_qx: float
    e_qy: float
    e_qz: float
    sigma_qx: float
    sigma_qy: float
    sigma_qz: float
    mean_qx: float
    mean_qy: float
    mean_qz: float
    max_abs_qx: float
    max_abs_qy: float
    max_abs_qz: float
    n_samples: int

    @property
    def rmse(self) -> np.ndarray:
        return np.array([self.e_qx, self.e_qy, self.e_qz])

    @property
    def sd(self) -> np.ndarray:
        return np.array([self.sigma_qx, self.sigma_qy, self.sigma_qz])

    @property
    def max_abs(self) -> np.ndarray:
        return np.array([self.max_abs_qx, self.max_abs_qy, self.max_abs_qz])

    def as_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


def position_errors(trace) -> np.ndarray:
    return np.array([np.subtract(r.est_position, r.truth_position) for r in trace], dtype=float).reshape(-1, 3)


def stats_from_errors(err) -> ErrorStats:
    err = np.asarray(err, dtype=float).reshape(-1, 3)
    if len(err) < 2:
        raise ValueError("need at least two error samples")
    rmse = np.sqrt(np.mean(err ** 2, axis=0))
    mean = err.mean(axis=0)
    # Population SD, so that rmse^2 = mean^2 + sd^2 exactly.
    sd = np.sqrt(np.mean((err - mean) ** 2, axis=0))
    mx = np.max(np.abs(err), axis=0)
    return ErrorStats(*map(float, rmse), *map(float, sd), *map(float, mean), *map(float, mx), len(err))


def compute_stats(trace) -> ErrorStats:
    if len(trace) == 0:
        raise ValueError("empty trace")
    return stats_from_errors(position_errors(trace))


def summarize(stats: ErrorStats, label: str = "run") -> str:
    """Aligned plain-text table with one row of per-axis figures."""
    head = ["", "e_qx", "e_qy", "e_qz", "sigma_qx", "sigma_qy", "sigma_qz", "max_qx", "max_qy", "max_qz"]
    vals = [stats.e_qx, stats.e_qy, stats.e_qz, stats.sigma_qx, stats.sigma_qy, stats.sigma_qz,
            stats.max_abs_qx, stats.max_abs_qy, stats.max_abs_qz]
    width = max(len(label), 4)
    lines = [
        "RMSE (m), SD (m) and max |error| (m) of relative position estimate",
        f"{head[0]:<{width}}  " + "  ".join(f"{h:>8}" for h in head[1:]),
        f"{label:<{width}}  " + "  ".join(f"{v:8.3f}" for v in vals),
        f"samples: {stats.n_samples}",
    ]
    return "\n".join(lines) + "\n"


def format_kv(values: dict) -> str:
    out = []
    for k, v in values.items():
        out.append(f"{k} = {repr(float(v)) if isinstance(v, float) else v}")
    return "\n".join(out) + "\n"


def parse_kv(text: str) -> dict:
    out = {}
    for line in text.splitlines():
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        k, _, v = line.partition("=")
        v = v.strip()
        try:
            out[k.strip()] = int(v)
        except ValueError:
            try:
                out[k.strip()] = float(v)
            except ValueError:
                out[k.strip()] = v
    return out


def write_summary(stats: ErrorStats, out_dir, label: str = "run", extra: dict | None = None) -> tuple[Path, Path]:
    out_dir = Path(out_dir)
    txt = out_dir / "summary.txt"
    kv = out_dir / "summary.kv"
    txt.write_text(summarize(stats, label))
    values = stats.as_dict()
    if extra:
        values.update(extra)
    kv.write_text(format_kv(values))
    return txt, kv


def mean_speed(trace, field_name: str = "est_velocity") -> float:
    v = np.array([getattr(r, field_name) for r in trace], dtype=float)
    return float(np.mean(np.linalg.norm(v, axis=1)))


def yaw_errors(trace) -> np.ndarray:
    """Absolute yaw difference between estimated and true MAV attitude, rad."""
    out = []
    for r in trace:
        _, _, ye = euler_from_quat(r.est_attitude)
        _, _, yt = euler_from_quat(r.truth_attitude)
        out.append(abs(wrap_angle(ye - yt)))
    return np.array(out)


def finite_trace(trace) -> bool:
    return all(math.isfinite(x) for r in trace for x in _flatten(r) if isinstance(x, float))
