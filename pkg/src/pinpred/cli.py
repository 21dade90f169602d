"""Command-line entry points: generate, train, predict, evaluate, ablate.

Exit codes: 0 success, 1 usage or config error, 2 numerical failure
(CFL violation, training blow-up, non-finite rollout). Every command is
deterministic: identical inputs and seed produce byte-identical outputs.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys

import numpy as np

from . import metrics
from .config import RunConfig, apply_overrides, config_text, load_config, load_config_text
from .dataio import RawRecord, load_checkpoint, read_dataset, save_checkpoint, write_dataset, write_pgm
from .geometry import spatial_embedding
from .networks import CorrectionNet, InferenceNet, init_params, inv_pe
from .predictor import rollout
from .simulate import cfl_numbers, check_cfl, generate_dataset, velocity_field
from .training import (
    TrainingDiverged,
    rollout_settings,
    run_ablations,
    train,
    write_loss_log,
    domain_masks,
)

# --ablate names, dashed on the command line
_ABLATIONS = {
    "no-physical": "no_physical",
    "no-temporal": "no_temporal",
    "no-e1": "no_e1",
    "no-correction": "no_correction",
    "use-ck-latent": "use_ck_latent",
    "changed-operator": "changed_operator",
    "literal-e1-sign": "literal_e1_sign",
}


def _load_cfg(args, **overrides) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    if getattr(args, "ablate", None):
        if args.ablate not in _ABLATIONS:
            raise ValueError(f"unknown ablation {args.ablate!r}; choose from {', '.join(_ABLATIONS)}")
        overrides[_ABLATIONS[args.ablate]] = True
    return apply_overrides(cfg, **overrides)


def cmd_generate(args) -> int:
    cfg = _load_cfg(args, seed=args.seed)
    out = args.out or cfg.dataset
    grid, obstacles, scenario = cfg.grid(), cfg.obstacles(), cfg.scenario()
    u, _ = velocity_field(scenario, grid)
    adv, diff = cfl_numbers(u, scenario.inv_pe, grid)
    try:
        check_cfl(u, scenario.inv_pe, grid)
        records = generate_dataset([scenario], cfg.frames_per_seq, cfg.count, grid, obstacles)
    except ValueError as e:
        if "CFL" in str(e):
            print(f"error: {e}", file=sys.stderr)
            return 2
        raise
    write_dataset(out, records, obstacles, grid=grid)
    print(f"wrote {len(records)} records ({cfg.frames_per_seq} frames, "
          f"{grid.height}x{grid.width}) to {out}")
    print(f"advective CFL {adv:.3f}  diffusive CFL {diff:.3f}")
    return 0


def cmd_train(args) -> int:
    cfg = _load_cfg(args, seed=args.seed, epochs=args.epochs, dataset=args.dataset)
    out = args.out or os.path.join(cfg.out_dir, "model.ckpt")
    data = read_dataset(cfg.dataset)
    flags = [k for k, f in _ABLATIONS.items() if getattr(cfg, f)]
    if not cfg.mask_pde_update:
        flags.append("unmasked-update")
    header = f"lr={cfg.lr:g} epochs={cfg.epochs} batch={cfg.batch_size} K={cfg.k}"
    if flags:
        header += "  ablation: " + " ".join(flags)
    print(header)
    try:
        result = train(cfg, data)
    except TrainingDiverged as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    save_checkpoint(out, result.store, config_text(cfg))
    write_loss_log(str(out) + ".loss.csv", result.log)
    if result.best_epoch is not None:
        print(f"best epoch {result.best_epoch}  val mse {result.best_val_mse:.6g}")
    print(f"wrote {out}")
    return 0


def cmd_predict(args) -> int:
    arrays, cfg_text = load_checkpoint(args.checkpoint)
    cfg = load_config_text(cfg_text)
    data = read_dataset(args.dataset)
    if (cfg.height, cfg.width) != data.grid.shape:
        print(f"error: checkpoint grid {cfg.height}x{cfg.width} does not match "
              f"dataset grid {data.grid.shape[0]}x{data.grid.shape[1]}", file=sys.stderr)
        return 1
    if data.frames_per_seq < cfg.k:
        raise ValueError(f"sequences have {data.frames_per_seq} frames, the model needs {cfg.k}")
    horizon = args.horizon if args.horizon is not None else cfg.test_horizon
    if horizon < 1:
        raise ValueError("horizon must be >= 1")

    store = init_params(0, cfg.network())
    store.load_arrays(arrays)
    grid = data.grid
    masks = domain_masks(data.obstacles, grid)
    psi = spatial_embedding(data.obstacles, grid)
    infer_net = InferenceNet(store, cfg.network())
    corr_net = None if cfg.no_correction else CorrectionNet(store, cfg.network())
    rcfg = rollout_settings(cfg, horizon)
    pe = float(inv_pe(store).data)

    out_records = []
    for r in data.records:
        try:
            preds, lat = rollout(r.frames[: cfg.k], psi, infer_net, corr_net, pe, masks, rcfg)
        except ValueError as e:
            if "finite" in str(e):
                print(f"error: rollout diverged: {e}", file=sys.stderr)
                return 2
            raise
        u_mid = np.stack([np.stack([s.u_mid.u_x, s.u_mid.u_y]) for s in lat])
        p_mid = np.stack([s.p_mid.values for s in lat])
        out_records.append(RawRecord(preds, u_mid, p_mid, r.scenario, grid, r.seed))
    write_dataset(args.out, out_records, data.obstacles, grid=grid, start=cfg.k)

    if args.images:
        os.makedirs(args.images, exist_ok=True)
        first = out_records[0]
        with open(os.path.join(args.images, "index.txt"), "w") as idx:
            for t in range(horizon):
                for name, field in (("c", first.frames[t]), ("u_x", first.u_true[t, 0]),
                                    ("u_y", first.u_true[t, 1]), ("p", first.p_true[t])):
                    fname = f"{name}_{t:03d}.pgm"
                    lo, hi = write_pgm(os.path.join(args.images, fname), field)
                    idx.write(f"{fname} {lo!r} {hi!r}\n")

    print(f"wrote {len(out_records)} sequences x {horizon} frames to {args.out}")
    return 0


def _rescale_255(a: np.ndarray, lo: float, hi: float) -> np.ndarray:
    if hi <= lo:
        return np.zeros_like(a)
    return (a - lo) / (hi - lo) * 255.0


def cmd_evaluate(args) -> int:
    preds = read_dataset(args.predictions, validate=False)
    truth = read_dataset(args.dataset)
    if preds.grid != truth.grid:
        print(f"error: prediction grid {preds.grid.shape} does not match truth grid {truth.grid.shape}",
              file=sys.stderr)
        return 1
    if len(preds.records) != len(truth.records):
        print(f"error: {len(preds.records)} prediction sequences vs {len(truth.records)} truth sequences",
              file=sys.stderr)
        return 1
    for i, (pr, tr) in enumerate(zip(preds.records, truth.records)):
        if pr.seed != tr.seed:
            print(f"error: record {i} seed mismatch (prediction {pr.seed}, truth {tr.seed})", file=sys.stderr)
            return 1
    start = preds.start
    horizon = min(preds.frames_per_seq, truth.frames_per_seq - start)
    if horizon < 1:
        print(f"error: no overlap (predictions start at frame {start}, truth has {truth.frames_per_seq})",
              file=sys.stderr)
        return 1

    thresholds = metrics.DEFAULT_CSI_LEVELS
    if args.thresholds:
        thresholds = tuple(float(v) for v in args.thresholds.split(","))
    levels = metrics.CsiThresholds(thresholds)

    p_frames = np.stack([r.frames[:horizon] for r in preds.records])
    t_frames = np.stack([r.frames[start : start + horizon] for r in truth.records])
    mse, mae, curve = metrics.error_metrics(p_frames, t_frames)

    # thresholds are on a 0-255 scale; both sides share the truth's mapping
    lo, hi = float(t_frames.min()), float(t_frames.max())
    p255, t255 = _rescale_255(p_frames, lo, hi), _rescale_255(t_frames, lo, hi)
    csi_by_tau = {tau: metrics.csi(p255, t255, tau) for tau in levels.values}
    csi_m = metrics.csi_mean(p255, t255, levels)

    corr = {}
    alpha_field = alpha_point = calibrated = None
    ux_hat = np.stack([r.u_true[:horizon, 0] for r in preds.records])
    uy_hat = np.stack([r.u_true[:horizon, 1] for r in preds.records])
    pp_hat = np.stack([r.p_true[:horizon] for r in preds.records])
    ux_true = np.stack([r.u_true[start : start + horizon, 0] for r in truth.records])
    uy_true = np.stack([r.u_true[start : start + horizon, 1] for r in truth.records])
    pp_true = np.stack([r.p_true[start : start + horizon] for r in truth.records])
    for name, hat, true in (("u_x", ux_hat, ux_true), ("u_y", uy_hat, uy_true), ("p", pp_hat, pp_true)):
        try:
            corr[name] = metrics.correlation(hat, true)
        except ValueError:
            pass
    try:
        alpha_field, calibrated = metrics.calibrate_alpha(ux_hat[0], ux_true[0], "initial_field")
        alpha_point, _ = metrics.calibrate_alpha(ux_hat[0], ux_true[0], "single_point")
    except ValueError:
        pass

    report = metrics.MetricReport(
        mse=mse, mae=mae, per_frame_mse=tuple(curve), correlation=corr,
        csi=csi_by_tau, csi_m=csi_m,
        alpha_initial_field=alpha_field, alpha_single_point=alpha_point, calibrated_mse=calibrated,
    )

    # persistence: repeat the last frame the model saw
    persist = np.stack([
        np.broadcast_to(r.frames[start - 1 : start] if start >= 1 else r.frames[:1], t_frames.shape[1:])
        for r in truth.records
    ])
    per_mse, per_mae, per_curve = metrics.error_metrics(persist, t_frames)

    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["kind", "frame", "mse", "mae", "csi_m", "persistence_mse", "persistence_mae", "value"])
        w.writerow(["summary", "", f"{mse:.9g}", f"{mae:.9g}", f"{csi_m:.9g}",
                    f"{per_mse:.9g}", f"{per_mae:.9g}", ""])
        for i in range(horizon):
            w.writerow(["frame", i, f"{curve[i]:.9g}", "", "", f"{per_curve[i]:.9g}", "", ""])
        for tau in levels.values:
            w.writerow(["csi", "", "", "", "", "", "", f"{tau:g}:{csi_by_tau[tau]:.9g}"])
        for name in sorted(corr):
            w.writerow([f"correlation_{name}", "", "", "", "", "", "", f"{corr[name]:.9g}"])
        if alpha_field is not None:
            w.writerow(["alpha_initial_field", "", "", "", "", "", "", f"{alpha_field:.9g}"])
            w.writerow(["calibrated_mse", "", "", "", "", "", "", f"{calibrated:.9g}"])
        if alpha_point is not None:
            w.writerow(["alpha_single_point", "", "", "", "", "", "", f"{alpha_point:.9g}"])

    with open(str(args.out) + ".txt", "w") as fh:
        fh.write(metrics.format_report(report))
        fh.write(f"\npersistence mse  {per_mse:.6g}\npersistence mae  {per_mae:.6g}\n")

    print(f"mse {mse:.6g}  mae {mae:.6g}  csi_m {csi_m:.4f}  "
          f"(persistence mse {per_mse:.6g})")
    print(f"wrote {args.out}")
    return 0


def cmd_ablate(args) -> int:
    cfg = _load_cfg(args, seed=args.seed, epochs=args.epochs, dataset=args.dataset)
    data = read_dataset(cfg.dataset)
    rows = run_ablations(cfg, data)
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["setting", "mae", "mse"])
        for row in rows:
            w.writerow([row["setting"],
                        "inf" if not np.isfinite(row["mae"]) else f"{row['mae']:.9g}",
                        "inf" if not np.isfinite(row["mse"]) else f"{row['mse']:.9g}"])
    for row in rows:
        print(f"{row['setting']:<34} mae {row['mae']:<12.6g} mse {row['mse']:.6g}")
    print(f"wrote {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pinpred", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, seed=False, epochs=False, ablate=False, dataset=False):
        p.add_argument("--config", metavar="PATH", help="INI config file (defaults otherwise)")
        if seed:
            p.add_argument("--seed", type=int, metavar="N")
        if epochs:
            p.add_argument("--epochs", type=int, metavar="N")
        if ablate:
            p.add_argument("--ablate", metavar="NAME", help=f"one of: {', '.join(_ABLATIONS)}")
        if dataset:
            p.add_argument("--dataset", metavar="PATH", help="dataset file (overrides config)")

    p = sub.add_parser("generate", help="simulate sequences into a dataset file")
    common(p, seed=True)
    p.add_argument("--out", metavar="PATH", help="output dataset path (default from config)")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", help="fit the predictor and save a checkpoint")
    common(p, seed=True, epochs=True, ablate=True, dataset=True)
    p.add_argument("--out", metavar="PATH", help="checkpoint path (default <out_dir>/model.ckpt)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="roll the model forward and store predictions")
    p.add_argument("--checkpoint", required=True, metavar="PATH")
    p.add_argument("--dataset", required=True, metavar="PATH", help="seed frames come from here")
    p.add_argument("--horizon", type=int, metavar="N", help="frames to predict (default from checkpoint)")
    p.add_argument("--images", metavar="DIR", help="dump c, u_x, u_y, p graymaps for the first sequence")
    p.add_argument("--out", required=True, metavar="PATH")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("evaluate", help="score a prediction file against truth")
    p.add_argument("--predictions", required=True, metavar="PATH")
    p.add_argument("--dataset", required=True, metavar="PATH", help="ground-truth dataset")
    p.add_argument("--thresholds", metavar="CSV", help="comma-separated CSI levels (0-255 scale)")
    p.add_argument("--out", required=True, metavar="PATH", help="metrics CSV (plus .txt summary)")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("ablate", help="train every ablation variant and tabulate errors")
    common(p, seed=True, epochs=True, dataset=True)
    p.add_argument("--out", required=True, metavar="PATH", help="ablation table CSV")
    p.set_defaults(func=cmd_ablate)

    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as e:
        return 0 if e.code in (0, None) else 1
    try:
        return args.func(args)
    except TrainingDiverged as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except (ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
