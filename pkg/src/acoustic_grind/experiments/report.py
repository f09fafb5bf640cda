"""SVG plots and a plain-text summary for finished experiments."""
from __future__ import annotations

import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .closed_loop import ExperimentLog  # noqa: E402
from .metrics import Metrics  # noqa: E402

# Measured on physical hardware; the simulated acceptance thresholds are looser.
HARDWARE_REFERENCE = {
    "estimation_rmse_N": 0.23,
    "control_sse_N": 0.05,
    "control_steady_std_N": 0.07,
    "ft_depth_range_mm": 0.38,
    "afrg_depth_range_mm": 0.09,
}
THRESHOLDS = {
    "estimation_rmse_N": 0.30,
    "control_sse_N": 0.10,
    "control_steady_std_N": 0.15,
    "control_overshoot_pct": 30.0,
    "depth_range_ratio": 1 / 3,
    "noise_degradation_ratio": 2.0,
    "latency_p99_ms": 50.0,
}


def _out(out_dir) -> Path:
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create report directory {out}: {exc}") from exc
    return out


def plot_spectrogram(log: ExperimentLog, path, force_key: str = "f_measured") -> None:
    """Band-limited normalized PSD frames with the force trace on a second axis."""
    if not log.frames:
        raise ValueError("log has no PSD frames")
    times = np.array([f.frame_time for f in log.frames])
    values = np.array([f.values for f in log.frames]).T
    fig, ax = plt.subplots(figsize=(9, 4))
    bins = values.shape[0]
    ax.imshow(values, aspect="auto", origin="lower", cmap="magma",
              extent=(times[0], times[-1], 0, bins))
    ax.set_xlabel("time (s)")
    ax.set_ylabel("band bin")
    twin = ax.twinx()
    t = np.array([r["t"] for r in log.records])
    twin.plot(t, [r[force_key] for r in log.records], color="cyan", lw=1, label="F_n")
    if any(np.isfinite(r["f_hat"]) for r in log.records):
        twin.plot(t, [r["f_hat"] for r in log.records], color="lime", lw=1, label="estimate")
    twin.set_ylabel("force (N)")
    twin.legend(loc="upper right")
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)


def plot_residuals(pairs: np.ndarray, metrics: Metrics, hist_path, scatter_path) -> None:
    f, g = pairs[:, 0], pairs[:, 1]
    r = g - f
    fig, ax = plt.subplots(figsize=(5, 4))
    ax.hist(r, bins=50, color="steelblue")
    ax.set_xlabel("residual (N)")
    ax.set_ylabel("count")
    ax.set_title(f"RMSE {metrics.rmse:.3f} N, mean {metrics.residual_mean:+.3f} N")
    fig.tight_layout()
    fig.savefig(hist_path, format="svg")
    plt.close(fig)

    outlier = np.abs(r - r.mean()) > 3 * r.std() if r.std() > 0 else np.zeros_like(r, bool)
    fig, ax = plt.subplots(figsize=(5, 5))
    ax.scatter(f[~outlier], g[~outlier], s=4, alpha=0.4, label="pairs")
    ax.scatter(f[outlier], g[outlier], s=10, color="red", label=f"outliers ({outlier.sum()})")
    lo, hi = float(min(f.min(), g.min())), float(max(f.max(), g.max()))
    ax.plot([lo, hi], [lo, hi], "k--", lw=1, label="x = y")
    ax.set_xlabel("measured force (N)")
    ax.set_ylabel("estimated force (N)")
    ax.legend()
    fig.tight_layout()
    fig.savefig(scatter_path, format="svg")
    plt.close(fig)


def plot_force_trace(t, force, target: float, metrics: Metrics, steady_window, path,
                     estimate=None) -> None:
    fig, ax = plt.subplots(figsize=(8, 4))
    ax.plot(t, force, lw=1, label="measured F_n")
    if estimate is not None:
        ax.plot(t, estimate, lw=1, alpha=0.7, label="estimate")
    ax.axhline(target, color="k", ls="--", lw=1, label="target")
    ax.axvspan(*steady_window, color="grey", alpha=0.15, label="steady window")
    text = (f"rise {metrics.rise_time:.2f} s\novershoot {metrics.overshoot:.1f} %\n"
            f"SSE {metrics.sse:.3f} N\nstd {metrics.steady_std:.3f} N")
    ax.text(0.02, 0.97, text, transform=ax.transAxes, va="top", family="monospace",
            bbox=dict(facecolor="white", alpha=0.8))
    ax.set_xlabel("time since contact (s)")
    ax.set_ylabel("force (N)")
    ax.legend(loc="lower right")
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)


def plot_depth_profiles(profiles: dict[str, tuple[np.ndarray, np.ndarray]], path) -> None:
    """``profiles`` maps a label to (positions m, depths m)."""
    fig, ax = plt.subplots(figsize=(8, 4))
    for label, (x, d) in profiles.items():
        ax.plot(np.asarray(x) * 1e3, np.asarray(d) * 1e3, lw=1, label=label)
    ax.set_xlabel("position along workpiece (mm)")
    ax.set_ylabel("depth (mm)")
    ax.invert_yaxis()
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)


def write_summary(path, metrics: dict[str, Metrics], config: dict, extra: dict | None = None) -> None:
    lines = ["# metrics"]
    for name, m in metrics.items():
        lines.append(f"[{name}]")
        for key, value in m.as_row().items():
            if isinstance(value, float) and np.isnan(value):
                continue
            if value in ("", 0) and key in ("trial_depths", "mrr_series", "outliers"):
                continue
            lines.append(f"  {key} = {value}")
    if extra:
        lines.append("")
        lines.append("# additional results")
        for key, value in extra.items():
            lines.append(f"  {key} = {value}")
    lines.append("")
    lines.append("# acceptance thresholds (simulation)")
    lines += [f"  {k} = {v:.6g}" for k, v in THRESHOLDS.items()]
    lines.append("# hardware reference values")
    lines += [f"  {k} = {v}" for k, v in HARDWARE_REFERENCE.items()]
    lines.append("")
    lines.append("# configuration (every default in effect)")
    lines.append(json.dumps(config, indent=2, default=str))
    try:
        Path(path).write_text("\n".join(lines) + "\n")
    except OSError as exc:
        raise OSError(f"cannot write summary {path}: {exc}") from exc


def report(logs: dict[str, ExperimentLog], metrics: dict[str, Metrics], out_dir,
           config: dict | None = None, extra: dict | None = None,
           workpiece=None) -> list[Path]:
    """Render every plot the logs support and the summary; returns written paths."""
    from .metrics import eval_control, eval_estimation

    out = _out(out_dir)
    written = []
    profiles = {}
    for name, log in logs.items():
        if log.frames:
            p = out / f"{name}_spectrogram.svg"
            plot_spectrogram(log, p)
            written.append(p)
        contact = [r for r in log.records if r["phase"] == "contact"]
        if not contact:
            continue
        f = np.array([r["f_measured"] for r in contact])
        g = np.array([r["f_hat"] for r in contact])
        if np.isfinite(g).any():
            m, pairs = eval_estimation(f, g)
            hist, scat = out / f"{name}_residuals.svg", out / f"{name}_scatter.svg"
            plot_residuals(pairs, m, hist, scat)
            written += [hist, scat]
        trials = sorted({r["trial"] for r in contact})
        first = [r for r in contact if r["trial"] == trials[0]]
        target = first[-1]["f_target"]
        if target > 0 and len(first) > 4:
            t = np.array([r["t"] for r in first])
            t = t - t[0] + (t[1] - t[0])
            window = (min(10.0, t[-1] / 2), t[-1])
            tt = np.concatenate(([0.0], t))
            ff = np.concatenate(([0.0], [r["f_measured"] for r in first]))
            m = eval_control(tt, ff, target, window, start=0.0)
            p = out / f"{name}_force_trace.svg"
            est = np.concatenate(([np.nan], [r["f_hat"] for r in first]))
            plot_force_trace(tt, ff, target, m, window, p,
                             estimate=est if np.isfinite(est).any() else None)
            written.append(p)
        if log.depth_field is not None:
            n = len(log.depth_field)
            res = workpiece.grid_resolution if workpiece is not None else 1e-4
            profiles[name] = ((np.arange(n) + 0.5) * res, log.depth_field)
    if profiles:
        p = out / "depth_profiles.svg"
        plot_depth_profiles(profiles, p)
        written.append(p)
    if config is None:
        config = {name: log.settings for name, log in logs.items()}
    p = out / "summary.txt"
    write_summary(p, metrics, config, extra)
    written.append(p)
    return written
