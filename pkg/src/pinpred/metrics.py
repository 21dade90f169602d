"""Evaluation metrics: error statistics, correlation, CSI scores, alpha calibration.

The latent velocity and pressure fields come out of training only up to a
global scale, so comparisons against reference data go through two routes:
Pearson correlation (scale-blind) and an explicit scale factor alpha fitted
either from the full first frame or from a single trusted point, after
which plain MSE applies to u_hat / alpha.

CSI uses the standard contingency table: an event is a value >= tau, hits
need both fields eventful, misses are truth-only, false alarms are
prediction-only. An empty table scores 0 by convention.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

# Thresholds for intensity fields rescaled to 0..255.
DEFAULT_CSI_LEVELS = (219.0, 181.0, 160.0, 133.0, 74.0, 16.0)


@dataclass(frozen=True)
class CsiThresholds:
    values: tuple[float, ...] = DEFAULT_CSI_LEVELS

    def __post_init__(self):
        vals = tuple(float(v) for v in self.values)
        if not vals:
            raise ValueError("need at least one threshold")
        if any(b >= a for a, b in zip(vals, vals[1:])):
            raise ValueError("thresholds must be strictly decreasing")
        object.__setattr__(self, "values", vals)


@dataclass(frozen=True)
class MetricReport:
    """Bundle of evaluation results; latent-side fields stay None when absent."""

    mse: float
    mae: float
    per_frame_mse: tuple[float, ...]
    correlation: dict[str, float] = field(default_factory=dict)
    csi: dict[float, float] = field(default_factory=dict)
    csi_m: float | None = None
    alpha_initial_field: float | None = None
    alpha_single_point: float | None = None
    calibrated_mse: float | None = None

    def __post_init__(self):
        if self.mse < 0 or self.mae < 0:
            raise ValueError("error metrics must be nonnegative")
        for name, r in self.correlation.items():
            if not -1.0 <= r <= 1.0:
                raise ValueError(f"correlation[{name}] outside [-1, 1]: {r}")
        for tau, s in self.csi.items():
            if not 0.0 <= s <= 1.0:
                raise ValueError(f"csi[{tau}] outside [0, 1]: {s}")
        if self.csi_m is not None and not 0.0 <= self.csi_m <= 1.0:
            raise ValueError(f"csi_m outside [0, 1]: {self.csi_m}")


def _as_frames(a, name):
    a = np.asarray(a, dtype=np.float64)
    if a.ndim == 3:
        a = a[None]
    if a.ndim != 4:
        raise ValueError(f"{name} must be (T,H,W) or (N,T,H,W), got shape {a.shape}")
    return a


def error_metrics(pred, truth) -> tuple[float, float, np.ndarray]:
    """(mse, mae, per-frame mse over the t axis); inputs (T,H,W) or (N,T,H,W)."""
    p = _as_frames(pred, "pred")
    t = _as_frames(truth, "truth")
    if p.shape != t.shape:
        raise ValueError(f"shape mismatch: pred {p.shape} vs truth {t.shape}")
    d = p - t
    per_frame = (d * d).mean(axis=(0, 2, 3))
    return float((d * d).mean()), float(np.abs(d).mean()), per_frame


def correlation(pred, truth) -> float:
    """Pearson coefficient over all elements; constant inputs are rejected."""
    p = np.asarray(pred, dtype=np.float64).ravel()
    t = np.asarray(truth, dtype=np.float64).ravel()
    if p.shape != t.shape:
        raise ValueError(f"shape mismatch: pred {p.shape} vs truth {t.shape}")
    p = p - p.mean()
    t = t - t.mean()
    denom = np.sqrt((p * p).sum() * (t * t).sum())
    if denom == 0.0:
        raise ValueError("undefined correlation: an input has zero variance")
    return float(np.clip((p * t).sum() / denom, -1.0, 1.0))


def csi(pred, truth, tau: float) -> float:
    """hits / (hits + misses + false alarms) at event level tau; 0 if no events."""
    p = np.asarray(pred, dtype=np.float64)
    t = np.asarray(truth, dtype=np.float64)
    if p.shape != t.shape:
        raise ValueError(f"shape mismatch: pred {p.shape} vs truth {t.shape}")
    pe = p >= tau
    te = t >= tau
    hits = int(np.count_nonzero(pe & te))
    misses = int(np.count_nonzero(te & ~pe))
    false_alarms = int(np.count_nonzero(pe & ~te))
    denom = hits + misses + false_alarms
    return hits / denom if denom else 0.0


def csi_mean(pred, truth, thresholds: CsiThresholds = CsiThresholds()) -> float:
    return float(np.mean([csi(pred, truth, tau) for tau in thresholds.values]))


def calibrate_alpha(u_hat, u_true, mode: str = "initial_field", point=None) -> tuple[float, float]:
    """Fit the latent scale (u_hat ~ alpha * u_true) and score u_hat/alpha.

    initial_field: least-squares alpha over frame 0. single_point: ratio at
    one trusted location, by default the strongest cell of the true frame 0
    (an explicit `point` index tuple into frame 0 overrides).
    """
    uh = _as_frames(u_hat, "u_hat")
    ut = _as_frames(u_true, "u_true")
    if uh.shape != ut.shape:
        raise ValueError(f"shape mismatch: u_hat {uh.shape} vs u_true {ut.shape}")
    if mode == "initial_field":
        ref = ut[:, 0]
        denom = float((ref * ref).sum())
        if denom == 0.0:
            raise ValueError("zero reference field, alpha undefined")
        alpha = float((uh[:, 0] * ref).sum() / denom)
    elif mode == "single_point":
        frame = ut[0, 0]
        idx = tuple(point) if point is not None else np.unravel_index(np.abs(frame).argmax(), frame.shape)
        ref = float(frame[idx])
        if ref == 0.0:
            raise ValueError("zero reference value, alpha undefined")
        alpha = float(uh[0, 0][idx] / ref)
    else:
        raise ValueError(f"unknown calibration mode {mode!r}")
    if alpha == 0.0:
        raise ValueError("calibrated scale is zero")
    return alpha, float(((uh / alpha - ut) ** 2).mean())


def format_report(report: MetricReport) -> str:
    lines = [f"mse  {report.mse:.6g}", f"mae  {report.mae:.6g}"]
    for name in sorted(report.correlation):
        lines.append(f"corr[{name}]  {report.correlation[name]:.4f}")
    for tau in sorted(report.csi, reverse=True):
        lines.append(f"csi[{tau:g}]  {report.csi[tau]:.4f}")
    if report.csi_m is not None:
        lines.append(f"csi_m  {report.csi_m:.4f}")
    if report.alpha_initial_field is not None:
        lines.append(f"alpha(initial_field)  {report.alpha_initial_field:.6g}")
    if report.alpha_single_point is not None:
        lines.append(f"alpha(single_point)  {report.alpha_single_point:.6g}")
    if report.calibrated_mse is not None:
        lines.append(f"calibrated latent mse  {report.calibrated_mse:.6g}")
    return "\n".join(lines)


def write_metric_csv(report: MetricReport, path) -> None:
    """Summary row plus one row per frame of the error curve."""
    import csv

    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["kind", "frame", "mse", "mae", "csi_m"])
        w.writerow(["summary", "", f"{report.mse:.9g}", f"{report.mae:.9g}",
                    "" if report.csi_m is None else f"{report.csi_m:.9g}"])
        for i, v in enumerate(report.per_frame_mse):
            w.writerow(["frame", i, f"{v:.9g}", "", ""])
