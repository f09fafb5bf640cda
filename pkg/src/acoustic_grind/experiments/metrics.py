"""Estimation, force-control and material-removal metrics."""
from __future__ import annotations

import csv
from dataclasses import asdict, dataclass, field

import numpy as np

from ..plant import Workpiece


@dataclass
class Metrics:
    rmse: float = float("nan")
    residual_mean: float = float("nan")
    residual_std: float = float("nan")
    outliers: int = 0
    sse: float = float("nan")
    steady_std: float = float("nan")
    rise_time: float = float("nan")
    overshoot: float = float("nan")  # percent
    d_max: float = float("nan")
    d_min: float = float("nan")
    depth_range: float = float("nan")
    trial_depths: list[float] = field(default_factory=list)
    mrr_series: list[float] = field(default_factory=list)
    linearity_residual: float = float("nan")

    def as_row(self) -> dict:
        row = asdict(self)
        row["trial_depths"] = " ".join(f"{d:.6g}" for d in self.trial_depths)
        row["mrr_series"] = " ".join(f"{v:.6g}" for v in self.mrr_series)
        return row


def eval_estimation(measured, estimated) -> tuple[Metrics, np.ndarray]:
    """RMSE and residual statistics; returns the metrics and the (n, 2) scatter pairs."""
    f = np.asarray(measured, dtype=float)
    g = np.asarray(estimated, dtype=float)
    if f.shape != g.shape:
        raise ValueError(f"pairing mismatch: {f.shape} vs {g.shape}")
    ok = np.isfinite(f) & np.isfinite(g)
    if not ok.any():
        raise ValueError("no paired force samples to evaluate")
    r = g[ok] - f[ok]
    sigma = float(np.std(r))
    m = Metrics(
        rmse=float(np.sqrt(np.mean(r ** 2))),
        residual_mean=float(np.mean(r)),
        residual_std=sigma,
        outliers=int(np.sum(np.abs(r - np.mean(r)) > 3 * sigma)) if sigma > 0 else 0,
    )
    return m, np.column_stack((f[ok], g[ok]))


def eval_control(t, force, target: float, steady_window: tuple[float, float],
                 start: float | None = None) -> Metrics:
    """Step-response figures for a force trace against a constant target.

    ``start`` is the step instant (default: first sample). Rise time is the
    10 to 90 % crossing interval, overshoot is relative to the target, and
    SSE is the absolute mean error over ``steady_window``.
    """
    t = np.asarray(t, dtype=float)
    f = np.asarray(force, dtype=float)
    if t.size == 0:
        raise ValueError("empty force trace")
    lo, hi = steady_window
    if lo >= hi or lo < t[0] - 1e-12 or hi > t[-1] + 1e-12:
        raise ValueError(f"steady window {steady_window} outside log span [{t[0]}, {t[-1]}]")
    if target <= 0:
        raise ValueError("target must be positive")
    t0 = t[0] if start is None else start
    after = t >= t0 - 1e-12
    ta, fa = t[after], f[after]
    m = Metrics()

    def crossing(level: float) -> float:
        idx = np.flatnonzero(fa >= level)
        if idx.size == 0:
            return float("nan")
        i = idx[0]
        if i == 0:
            return ta[0]
        # linear interpolation between the samples bracketing the crossing
        return ta[i - 1] + (level - fa[i - 1]) * (ta[i] - ta[i - 1]) / (fa[i] - fa[i - 1])

    m.rise_time = crossing(0.9 * target) - crossing(0.1 * target)
    m.overshoot = max(0.0, (float(np.max(fa)) - target) / target * 100.0)
    steady = (t >= lo) & (t <= hi)
    err = f[steady] - target
    m.sse = float(abs(np.mean(err)))
    m.steady_std = float(np.std(f[steady]))
    return m


def eval_mrr(trial_depths, workpiece: Workpiece | None = None, removal_rates=None) -> Metrics:
    """Depth statistics over a sequence of fixed-point trials."""
    d = np.asarray(trial_depths, dtype=float)
    m = Metrics(trial_depths=[float(x) for x in d])
    if d.size:
        m.d_max = float(d.max())
        m.d_min = float(d.min())
        m.depth_range = m.d_max - m.d_min
    if workpiece is not None and d.size:
        m.mrr_series = [float(v) for v in fixed_point_mrr(d, workpiece)]
    elif removal_rates is not None:
        m.mrr_series = [float(v) for v in removal_rates]
    return m


def fixed_point_mrr(depth, workpiece: Workpiece):
    """Mean removal rate implied by a fixed-point depth: w_d * h * d / t_s."""
    return workpiece.disc_width * workpiece.thickness * np.asarray(depth) / workpiece.trial_duration


def fixed_point_depth(mean_rate: float, workpiece: Workpiece, duration: float | None = None) -> float:
    t_s = workpiece.trial_duration if duration is None else duration
    return mean_rate * t_s / (workpiece.disc_width * workpiece.thickness)


def line_linearity(positions, depths) -> float:
    """RMS residual of a straight-line fit to a depth profile along a path."""
    x = np.asarray(positions, dtype=float)
    d = np.asarray(depths, dtype=float)
    if x.size < 2:
        return 0.0
    coef = np.polyfit(x, d, 1)
    return float(np.sqrt(np.mean((np.polyval(coef, x) - d) ** 2)))


def write_metrics_csv(rows: dict[str, Metrics], path) -> None:
    """One row per named experiment."""
    names = list(rows)
    if not names:
        raise ValueError("no metrics to write")
    fields = ["name"] + list(rows[names[0]].as_row())
    try:
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=fields)
            w.writeheader()
            for name in names:
                w.writerow({"name": name, **rows[name].as_row()})
    except OSError as exc:
        raise OSError(f"cannot write metrics to {path}: {exc}") from exc
