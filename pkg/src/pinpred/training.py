"""Training harness: epoch loop, validation, checkpoint selection, ablations.

Sequences are batched along the leading tensor axis, which keeps the
gradient reduction a plain sum in a fixed order; runs are reproducible to
the byte for a given seed and backend. Each sequence contributes one
training sample: the first K frames seed the rollout and the next
`train_horizon` frames are targets, with the model's own predictions fed
back in between (no teacher forcing).

Validation selects the checkpoint by plain MSE at the training horizon.
A non-finite loss aborts with the offending component named; the ablation
runner downgrades that abort (and rollouts that blow up during evaluation)
to a "diverged" row, because one known-bad configuration is expected to do
exactly that.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import autodiff as ad
from . import losses, metrics
from .config import RunConfig
from .dataio import DatasetFile
from .geometry import (MASK1_RADIUS, MASK2_RADIUS, GridSpec, ObstacleMap, SpatialEmbedding,
                       boundary_mask, compute_sdf, spatial_embedding)
from .networks import CorrectionNet, InferenceNet, embedding_channels, init_params, inv_pe, inv_re
from .optim import ParamStore, adam_step, step_lr
from .predictor import RolloutConfig, StencilOps, mask_tensors, rollout, rollout_graph
from .simulate import SequenceRecord


class TrainingDiverged(RuntimeError):
    """Raised when a loss component stops being finite; names the component."""

    def __init__(self, component: str, epoch: int):
        super().__init__(f"non-finite {component} loss at epoch {epoch}")
        self.component = component
        self.epoch = epoch


@dataclass(frozen=True)
class EpochStats:
    epoch: int
    data: float
    physical: float
    temporal: float
    total: float
    lr: float


@dataclass
class TrainResult:
    store: ParamStore
    log: list[EpochStats]
    best_epoch: int | None
    best_val_mse: float | None


@dataclass(frozen=True)
class ValidationResult:
    report: metrics.MetricReport
    persistence_mse: float
    persistence_mae: float


def split_dataset(records: list[SequenceRecord], seed: int):
    """Deterministic 80/10/10 split by sequence; tiny sets hold out one each."""
    n = len(records)
    order = np.random.default_rng(seed).permutation(n)
    n_hold = n // 10 if n >= 10 else (1 if n >= 3 else 0)
    cut1 = n - 2 * n_hold
    cut2 = n - n_hold
    train = [records[i] for i in order[:cut1]]
    val = [records[i] for i in order[cut1:cut2]]
    test = [records[i] for i in order[cut2:]]
    return train, val, test


def rollout_settings(cfg: RunConfig, steps: int) -> RolloutConfig:
    return RolloutConfig(
        k=cfg.k,
        steps=steps,
        use_correction=not cfg.no_correction,
        use_ck_latent=cfg.use_ck_latent,
        changed_operator=cfg.changed_operator,
        mask_pde_update=cfg.mask_pde_update,
    )


def domain_masks(obstacles: ObstacleMap, grid: GridSpec):
    sdf = compute_sdf(obstacles, grid)
    return boundary_mask(sdf, MASK1_RADIUS), boundary_mask(sdf, MASK2_RADIUS)


def _batch_tensors(batch: list[SequenceRecord], k: int, horizon: int, psi_ch: np.ndarray):
    """(window frame tensors, truth tensors, tiled embedding) for one batch."""
    frames = np.stack([r.frames[: k + horizon] for r in batch]).astype(np.float32)
    window = [ad.Tensor(frames[:, j, None]) for j in range(k)]
    truth = [ad.Tensor(frames[:, k + j, None]) for j in range(horizon)]
    psi_t = ad.Tensor(np.broadcast_to(psi_ch, (len(batch),) + psi_ch.shape).copy())
    return window, truth, psi_t


def _batch_loss(store, out, window, truth, keep1, keep2, ops, dt, cfg: RunConfig):
    data_terms = [
        losses.data_loss_graph(cp, ch, t, keep2)
        for cp, ch, t in zip(out["c_prime"], out["c_hat"], truth)
    ]
    physical = None
    if not cfg.no_physical:
        physical = losses.physical_loss_graph(
            out["u_mid"], out["p_mid"], inv_re(store), ops, keep1, keep2, keep2, dt,
            include_e1=not cfg.no_e1, literal_sign=cfg.literal_e1_sign,
        )
    temporal_terms = []
    if not cfg.no_temporal:
        c_ks = [window[-1]] + out["c_hat"][:-1]
        temporal_terms = [
            losses.temporal_loss_graph(cm, ck, t, keep2)
            for cm, ck, t in zip(out["c_mid"], c_ks, truth)
        ]
    return losses.total_loss(data_terms, physical, temporal_terms, cfg.loss_weights())


def _check_finite(breakdown: losses.LossBreakdown, epoch: int):
    for component in ("data", "physical", "temporal", "total"):
        if not np.isfinite(getattr(breakdown, component)):
            raise TrainingDiverged(component, epoch)


def _val_mse(store, cfg: RunConfig, records, psi: SpatialEmbedding, masks, horizon: int) -> float:
    infer_net = InferenceNet(store, cfg.network())
    corr_net = None if cfg.no_correction else CorrectionNet(store, cfg.network())
    rcfg = rollout_settings(cfg, horizon)
    pe = float(inv_pe(store).data)
    errs = []
    for r in records:
        try:
            with np.errstate(over="ignore", invalid="ignore"):
                preds, _ = rollout(r.frames[: cfg.k], psi, infer_net, corr_net, pe, masks, rcfg)
        except ValueError as e:
            if "finite" in str(e):
                return float("inf")
            raise
        errs.append(((preds - r.frames[cfg.k : cfg.k + horizon]) ** 2).mean())
    return float(np.mean(errs))


def train(cfg: RunConfig, data: DatasetFile) -> TrainResult:
    records = data.records
    if not records:
        raise ValueError("dataset is empty")
    need = cfg.k + cfg.train_horizon
    if data.frames_per_seq < need:
        raise ValueError(f"sequences have {data.frames_per_seq} frames, need {need} (K + train horizon)")

    grid = data.grid
    netcfg = cfg.network()
    store = init_params(cfg.seed, netcfg)
    masks = domain_masks(data.obstacles, grid)
    psi = spatial_embedding(data.obstacles, grid)
    psi_ch = embedding_channels(psi, np.float32)
    ops = StencilOps(grid.dx, np.float32)
    train_set, val_set, _ = split_dataset(records, cfg.seed)
    if not train_set:
        raise ValueError("training split is empty")
    val_for_selection = val_set or train_set
    rcfg = rollout_settings(cfg, cfg.train_horizon)

    keeps_by_batch = {}

    def keeps(b):
        if b not in keeps_by_batch:
            keeps_by_batch[b] = mask_tensors(masks, b, np.float32)
        return keeps_by_batch[b]

    log: list[EpochStats] = []
    best_epoch = None
    best_val = None
    best_arrays = None
    for epoch in range(cfg.epochs):
        lr = step_lr(epoch, cfg.lr, cfg.sched_step, cfg.sched_gamma)
        order = np.random.default_rng((cfg.seed, epoch)).permutation(len(train_set))
        sums = np.zeros(4)
        n_batches = 0
        for start in range(0, len(order), cfg.batch_size):
            batch = [train_set[i] for i in order[start : start + cfg.batch_size]]
            window, truth, psi_t = _batch_tensors(batch, cfg.k, cfg.train_horizon, psi_ch)
            keep1, keep2 = keeps(len(batch))
            store.zero_grads()
            # overflow shows up as a non-finite component, not a warning storm
            with np.errstate(over="ignore", invalid="ignore"):
                out = rollout_graph(
                    window, psi_t, InferenceNet(store, netcfg),
                    None if cfg.no_correction else CorrectionNet(store, netcfg),
                    inv_pe(store), ops, keep1, keep2, grid.dt, rcfg,
                )
                total, breakdown = _batch_loss(store, out, window, truth, keep1, keep2, ops, grid.dt, cfg)
            _check_finite(breakdown, epoch)
            ad.backward(total)
            adam_step(store, lr)
            sums += (breakdown.data, breakdown.physical, breakdown.temporal, breakdown.total)
            n_batches += 1
        avg = sums / n_batches
        log.append(EpochStats(epoch, avg[0], avg[1], avg[2], avg[3], lr))

        val_mse = _val_mse(store, cfg, val_for_selection, psi, masks, cfg.train_horizon)
        if not np.isfinite(val_mse):
            raise TrainingDiverged("validation", epoch)
        if best_val is None or val_mse < best_val:
            best_val = val_mse
            best_epoch = epoch
            best_arrays = store.arrays()

    if best_arrays is not None:
        store.load_arrays(best_arrays)
    return TrainResult(store, log, best_epoch, best_val)


def write_loss_log(path, log: list[EpochStats]):
    import csv

    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "data", "physical", "temporal", "total", "lr"])
        for row in log:
            w.writerow([row.epoch, f"{row.data:.9g}", f"{row.physical:.9g}",
                        f"{row.temporal:.9g}", f"{row.total:.9g}", f"{row.lr:.9g}"])


def validate(
    cfg: RunConfig,
    store: ParamStore,
    records: list[SequenceRecord],
    obstacles: ObstacleMap,
    grid: GridSpec,
    horizon: int | None = None,
) -> ValidationResult:
    """Rollout metrics vs ground truth, persistence baseline, latent diagnostics."""
    horizon = horizon if horizon is not None else cfg.test_horizon
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    if not records:
        raise ValueError("nothing to validate")
    masks = domain_masks(obstacles, grid)
    psi = spatial_embedding(obstacles, grid)
    infer_net = InferenceNet(store, cfg.network())
    corr_net = None if cfg.no_correction else CorrectionNet(store, cfg.network())
    rcfg = rollout_settings(cfg, horizon)
    pe = float(inv_pe(store).data)

    preds, truths, ux_hat, uy_hat, p_hat = [], [], [], [], []
    for r in records:
        if r.frames.shape[0] < cfg.k + horizon:
            raise ValueError(f"sequence too short for horizon {horizon}")
        p, lat = rollout(r.frames[: cfg.k], psi, infer_net, corr_net, pe, masks, rcfg)
        preds.append(p)
        truths.append(r.frames[cfg.k : cfg.k + horizon])
        ux_hat.append(np.stack([s.u_mid.u_x for s in lat]))
        uy_hat.append(np.stack([s.u_mid.u_y for s in lat]))
        p_hat.append(np.stack([s.p_mid.values for s in lat]))

    preds = np.stack(preds)
    truths = np.stack(truths)
    mse, mae, curve = metrics.error_metrics(preds, truths)

    ux_true = np.stack([r.u_true[cfg.k : cfg.k + horizon, 0] for r in records])
    uy_true = np.stack([r.u_true[cfg.k : cfg.k + horizon, 1] for r in records])
    pp_true = np.stack([r.p_true[cfg.k : cfg.k + horizon] for r in records])
    corr = {}
    for name, hat, true in (
        ("u_x", np.stack(ux_hat), ux_true),
        ("u_y", np.stack(uy_hat), uy_true),
        ("p", np.stack(p_hat), pp_true),
    ):
        try:
            corr[name] = metrics.correlation(hat, true)
        except ValueError:
            pass  # constant field on one side, correlation undefined

    alpha_field = alpha_point = calibrated = None
    try:
        alpha_field, calibrated = metrics.calibrate_alpha(ux_hat[0], ux_true[0], "initial_field")
        alpha_point, _ = metrics.calibrate_alpha(ux_hat[0], ux_true[0], "single_point")
    except ValueError:
        pass  # zero reference or zero latent scale

    report = metrics.MetricReport(
        mse=mse, mae=mae, per_frame_mse=tuple(curve), correlation=corr,
        alpha_initial_field=alpha_field, alpha_single_point=alpha_point, calibrated_mse=calibrated,
    )
    last_seen = np.stack([r.frames[cfg.k - 1] for r in records])
    persist = np.broadcast_to(last_seen[:, None], truths.shape)
    p_mse, p_mae, _ = metrics.error_metrics(persist, truths)
    return ValidationResult(report, p_mse, p_mae)


ABLATION_SETTINGS = (
    ("Normal", {}),
    ("no Physical Constraint", {"no_physical": True}),
    ("no Temporal Constraint", {"no_temporal": True}),
    ("no Velocity-Pressure Constraint", {"no_e1": True}),
    ("no Correction Network", {"no_correction": True}),
    ("Changed Operator", {"changed_operator": True}),
    ("Replaced c(t') with c(t_k)", {"use_ck_latent": True}),
    ("Literal Momentum Sign", {"literal_e1_sign": True}),
)


def run_ablations(cfg: RunConfig, data: DatasetFile) -> list[dict]:
    """Train and score each ablation; a blow-up becomes a 'diverged' row."""
    rows = []
    _, _, test_set = split_dataset(data.records, cfg.seed)
    if not test_set:
        _, test_set, _ = split_dataset(data.records, cfg.seed)
    horizon = min(cfg.test_horizon, data.frames_per_seq - cfg.k)
    for label, flags in ABLATION_SETTINGS:
        variant = replace(cfg, **flags)
        try:
            with np.errstate(all="ignore"):
                result = train(variant, data)
                val = validate(variant, result.store, test_set or data.records, data.obstacles, data.grid, horizon)
            if not (np.isfinite(val.report.mae) and np.isfinite(val.report.mse)):
                raise TrainingDiverged("evaluation", -1)
            rows.append({"setting": label, "mae": val.report.mae, "mse": val.report.mse})
        except (TrainingDiverged, ValueError, FloatingPointError, OverflowError):
            rows.append({"setting": label, "mae": float("inf"), "mse": float("inf")})
    return rows
