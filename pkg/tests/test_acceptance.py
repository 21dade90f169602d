"""Acceptance gates: twelve numbered checks covering the whole toolkit.

Each test ends with a single `CRITERION n PASS` line (run with -s to see
them), so the log doubles as a pass/fail report. Criteria 1-9 and 12 are
property checks that finish in seconds; criteria 10 and 11 share one
module-scoped batch of toy trainings and together take about 15 minutes
on a single core.
"""

import hashlib
import math
import time
from dataclasses import replace

import numpy as np
import numpy.testing as npt
import pytest

from pinpred import autodiff as ad
from pinpred import cli, dataio, losses, metrics, training
from pinpred import geometry as geo
from pinpred import networks as nets
from pinpred import predictor as pred
from pinpred import simulate as sim
from pinpred import stencils as st
from pinpred.config import RunConfig


def _l2(a):
    return float(np.sqrt((np.asarray(a, dtype=np.float64) ** 2).sum()))


# ---------------------------------------------------------------------------
# 1. stencil convergence order

def test_01_stencil_order():
    t0 = time.perf_counter()
    grad_errs, lap_errs = [], []
    for w in (16, 32, 64, 128):
        grid = geo.GridSpec(w, w, dx=1.0 / w)
        ys = (np.arange(w) + 0.5) * grid.dx
        yy, xx = np.meshgrid(ys, ys, indexing="ij")
        f = np.sin(2 * np.pi * xx) * np.cos(2 * np.pi * yy)
        g = st.gradient(geo.ScalarField(f, grid), st.StencilConfig(dx=grid.dx))
        lap = st.laplacian(geo.ScalarField(f, grid), st.StencilConfig(dx=grid.dx))
        gx = 2 * np.pi * np.cos(2 * np.pi * xx) * np.cos(2 * np.pi * yy)
        gy = -2 * np.pi * np.sin(2 * np.pi * xx) * np.sin(2 * np.pi * yy)
        inner = (slice(2, -2), slice(2, -2))
        grad_errs.append(max(np.abs(g.u_x - gx)[inner].max(), np.abs(g.u_y - gy)[inner].max()))
        lap_errs.append(np.abs(lap.values + 8 * np.pi**2 * f)[inner].max())
    order_g = float(np.mean([np.log2(a / b) for a, b in zip(grad_errs, grad_errs[1:])]))
    order_l = float(np.mean([np.log2(a / b) for a, b in zip(lap_errs, lap_errs[1:])]))
    elapsed = time.perf_counter() - t0
    assert 1.8 <= order_g <= 2.2, f"gradient order {order_g}"
    assert 1.8 <= order_l <= 2.2, f"laplacian order {order_l}"
    assert elapsed < 5.0
    print(f"CRITERION 1 PASS stencil orders: gradient {order_g:.3f}, laplacian {order_l:.3f} ({elapsed:.2f}s)")


# ---------------------------------------------------------------------------
# 2. exact distance field vs a brute-force oracle

def test_02_sdf_exactness():
    t0 = time.perf_counter()
    rng = np.random.default_rng(20)
    for _ in range(200):
        h = int(rng.integers(8, 33))
        w = int(rng.integers(8, 33))
        solid = rng.random((h, w)) < rng.uniform(0.0, 0.3)
        solid[0, :] = solid[-1, :] = True
        solid[:, 0] = solid[:, -1] = True
        if solid.all():
            solid[h // 2, w // 2] = False
        got = geo.compute_sdf(geo.ObstacleMap(solid), geo.GridSpec(h, w)).values
        si, sj = np.nonzero(solid)
        ii, jj = np.indices((h, w))
        d2 = (ii[..., None] - si) ** 2 + (jj[..., None] - sj) ** 2
        npt.assert_array_equal(got, np.sqrt(d2.min(axis=-1)))
    elapsed = time.perf_counter() - t0
    assert elapsed < 10.0
    print(f"CRITERION 2 PASS sdf matches brute force on 200 random geometries ({elapsed:.2f}s)")


# ---------------------------------------------------------------------------
# 3. autodiff gradients, per op and end to end

def _clear_of(x, kink, margin=1e-2):
    # finite-difference probes straddle relu/max kinks; keep samples away
    return np.where(np.abs(x - kink) < margin, x + 3 * margin, x)


def test_03_autodiff_soundness():
    t0 = time.perf_counter()
    cases = [
        ("add", lambda ts: ad.mean_all(ad.add(ts[0], ts[1])), ((3, 4), (3, 4)), None),
        ("add scalar", lambda ts: ad.mean_all(ad.add(ts[0], ts[1])), ((3, 4), ()), None),
        ("sub", lambda ts: ad.mean_all(ad.sub(ts[0], ts[1])), ((3, 4), (3, 4)), None),
        ("mul", lambda ts: ad.mean_all(ad.mul(ts[0], ts[1])), ((3, 4), (3, 4)), None),
        ("neg", lambda ts: ad.sum_all(ad.neg(ts[0])), ((3, 4),), None),
        ("relu", lambda ts: ad.sum_all(ad.relu(ts[0])), ((5, 6),), 0.0),
        ("exp", lambda ts: ad.mean_all(ad.exp(ts[0])), ((3, 4),), None),
        ("square", lambda ts: ad.mean_all(ad.square(ts[0])), ((3, 4),), None),
        ("max_const", lambda ts: ad.sum_all(ad.max_const(ts[0], 0.3)), ((5, 6),), 0.3),
        ("sum_all", lambda ts: ad.sum_all(ts[0]), ((4, 5),), None),
        ("mean_all", lambda ts: ad.mean_all(ts[0]), ((4, 5),), None),
        ("concat_channels", lambda ts: ad.mean_all(ad.concat_channels([ts[0], ts[1]])),
         ((2, 2, 3, 3), (2, 1, 3, 3)), None),
        ("slice_channels", lambda ts: ad.mean_all(ad.slice_channels(ts[0], 1, 3)), ((2, 4, 3, 3),), None),
        ("pad_replicate", lambda ts: ad.mean_all(ad.pad_replicate(ts[0], 1)), ((1, 2, 3, 3),), None),
        ("upsample_nearest2", lambda ts: ad.mean_all(ad.upsample_nearest2(ts[0])), ((1, 2, 3, 3),), None),
        ("conv2d", lambda ts: ad.mean_all(ad.conv2d(ts[0], ts[1])), ((2, 3, 5, 5), (4, 3, 3, 3)), None),
        ("conv2d bias", lambda ts: ad.mean_all(ad.conv2d(ts[0], ts[1], ts[2])),
         ((2, 3, 5, 5), (4, 3, 3, 3), (4,)), None),
        ("conv2d stride", lambda ts: ad.mean_all(ad.conv2d(ts[0], ts[1], stride=2)),
         ((1, 2, 6, 6), (3, 2, 2, 2)), None),
    ]
    rng = np.random.default_rng(5)
    for name, builder, shapes, kink in cases:
        inputs = [rng.standard_normal(s) for s in shapes]
        if kink is not None:
            inputs = [_clear_of(a, kink) for a in inputs]
        err = ad.grad_check(builder, inputs)
        assert err < 1e-4, f"{name}: {err}"

    # composed network + loss graph on a tiny rollout
    grid = geo.GridSpec(12, 12)
    obstacles = geo.empty_domain(12, 12)
    sdf = geo.compute_sdf(obstacles, grid)
    masks = (geo.boundary_mask(sdf, geo.MASK1_RADIUS), geo.boundary_mask(sdf, geo.MASK2_RADIUS))
    cfg = nets.NetworkConfig(k=2, inference_widths=(4, 8, 16), correction_widths=(4, 8))
    store = nets.init_params(33, cfg, dtype=np.float64)
    store["correction.head.w"].data = store["correction.head.w"].data + 0.01
    infer_net = nets.InferenceNet(store, cfg)
    corr_net = nets.CorrectionNet(store, cfg)
    psi_t = ad.Tensor(nets.embedding_channels(geo.spatial_embedding(obstacles, grid), np.float64)[None])
    window = [ad.Tensor(rng.uniform(0, 1, (1, 1, 12, 12))) for _ in range(2)]
    truth = [ad.Tensor(rng.uniform(0, 1, (1, 1, 12, 12))) for _ in range(2)]
    ops = pred.StencilOps(grid.dx, np.float64)
    keep1, keep2 = pred.mask_tensors(masks, 1, np.float64)
    rcfg = pred.RolloutConfig(k=2, steps=2)

    def builder(leaves):
        out = pred.rollout_graph(
            window, psi_t, infer_net, corr_net, nets.inv_pe(store), ops, keep1, keep2, grid.dt, rcfg
        )
        data_terms = [
            losses.data_loss_graph(cp, ch, t, keep2)
            for cp, ch, t in zip(out["c_prime"], out["c_hat"], truth)
        ]
        phys = losses.physical_loss_graph(
            out["u_mid"], out["p_mid"], nets.inv_re(store), ops, keep1, keep2, keep2, grid.dt
        )
        c_ks = [window[-1], out["c_hat"][0]]
        temp_terms = [
            losses.temporal_loss_graph(cm, ck, t, keep2)
            for cm, ck, t in zip(out["c_mid"], c_ks, truth)
        ]
        total, _ = losses.total_loss(data_terms, phys, temp_terms, losses.LossWeights())
        return total

    leaves = [store["inference.head_c.w"], store["correction.head.w"], store["pde.theta_pe"]]
    e2e = ad.grad_check(builder, leaves)
    elapsed = time.perf_counter() - t0
    assert e2e < 1e-3, f"end-to-end: {e2e}"
    assert elapsed < 60.0
    print(f"CRITERION 3 PASS {len(cases)} op checks < 1e-4, end-to-end {e2e:.2e} ({elapsed:.2f}s)")


# ---------------------------------------------------------------------------
# 4. reference simulator vs analytic transport

def _centroid(vals):
    xs = np.arange(vals.shape[1]) + 0.5
    ys = np.arange(vals.shape[0]) + 0.5
    m = vals.sum()
    return float((vals * xs[None, :]).sum() / m), float((vals * ys[:, None]).sum() / m)


def test_04_simulator_fidelity():
    t0 = time.perf_counter()
    n = 48
    grid = geo.GridSpec(n, n)
    obstacles = geo.empty_domain(n, n)
    zeros = np.zeros((n, n))

    # pure diffusion against the heat kernel
    d = 0.1
    c = sim.analytic_advect_diffuse((24.0, 24.0), d, (0.0, 0.0), 20.0, grid)
    still = geo.VectorField2(zeros, zeros, grid)
    for _ in range(50):
        c = sim.reference_step(c, still, d, grid, obstacles)
    want = sim.analytic_advect_diffuse((24.0, 24.0), d, (0.0, 0.0), 70.0, grid)
    fluid = obstacles.fluid
    rel = _l2(c.values[fluid] - want.values[fluid]) / _l2(want.values[fluid])
    assert rel < 0.02, f"diffusion relative L2 {rel}"

    # advection: the centroid must travel at the prescribed speed
    u = (0.3, 0.15)
    flow = geo.VectorField2(np.full((n, n), u[0]), np.full((n, n), u[1]), grid)
    c = sim.analytic_advect_diffuse((12.0, 18.0), 0.02, (0.0, 0.0), 40.0, grid)
    x_start, y_start = _centroid(c.values)
    for _ in range(50):
        c = sim.reference_step(c, flow, 0.02, grid, obstacles)
    x_end, y_end = _centroid(c.values)
    moved = math.hypot(x_end - x_start, y_end - y_start)
    want_move = 50.0 * grid.dt * math.hypot(*u)
    speed_err = abs(moved / want_move - 1.0)
    elapsed = time.perf_counter() - t0
    assert speed_err < 0.05, f"centroid speed off by {speed_err:.3%}"
    assert elapsed < 10.0
    print(f"CRITERION 4 PASS diffusion rel L2 {rel:.4f}, centroid speed error {speed_err:.3%} ({elapsed:.2f}s)")


# ---------------------------------------------------------------------------
# 5. one-step predictor consistency under timestep halving

def test_05_predictor_consistency():
    t0 = time.perf_counter()
    n = 32
    obstacles = geo.empty_domain(n, n)
    scenarios = (
        ((0.45, 0.0), 0.05, 90.0),
        ((0.3, 0.3), 0.04, 110.0),
        ((-0.35, 0.2), 0.06, 80.0),
    )
    base_dt = 2.0
    ratios = []
    for u, d, start in scenarios:
        x0 = (16.0 - u[0] * (start + base_dt), 16.0 - u[1] * (start + base_dt))
        errs = []
        for dtv in (base_dt, base_dt / 2):
            grid = geo.GridSpec(n, n, 1.0, dtv)
            sdf = geo.compute_sdf(obstacles, grid)
            masks = (geo.boundary_mask(sdf, geo.MASK1_RADIUS), geo.boundary_mask(sdf, geo.MASK2_RADIUS))
            keep = ~masks[1].excluded
            c0 = sim.analytic_advect_diffuse(x0, d, u, start, grid)
            c_mid = sim.analytic_advect_diffuse(x0, d, u, start + dtv / 4.0, grid)
            c_end = sim.analytic_advect_diffuse(x0, d, u, start + dtv, grid)
            latent = nets.LatentState(
                c_mid,
                geo.VectorField2(np.full((n, n), u[0]), np.full((n, n), u[1]), grid),
                geo.ScalarField(np.zeros((n, n)), grid),
            )
            step = pred.discrete_pde_step(c0, latent, d, grid, masks)
            errs.append(_l2((step.values - c_end.values)[keep]))
        ratios.append(errs[0] / errs[1])
    elapsed = time.perf_counter() - t0
    for r in ratios:
        assert 2.5 <= r <= 6.0, f"halving ratios {ratios}"
    assert elapsed < 30.0
    print(f"CRITERION 5 PASS halving ratios {', '.join(f'{r:.2f}' for r in ratios)} ({elapsed:.2f}s)")


# ---------------------------------------------------------------------------
# 6. loss contracts

def test_06_loss_contracts():
    rng = np.random.default_rng(11)
    shape = (1, 1, 12, 12)
    keep = ad.Tensor(np.ones(shape))
    c_k = ad.Tensor(rng.uniform(0, 1, shape))
    c_next = ad.Tensor(rng.uniform(0, 1, shape))
    assert float(losses.temporal_loss_graph(c_next, c_k, c_next, keep).data) == 0.0
    assert float(losses.temporal_loss_graph(c_k, c_k, c_next, keep).data) == 0.0

    grid = geo.GridSpec(12, 12)
    c = geo.ScalarField(rng.uniform(0, 1, (12, 12)), grid)
    assert losses.data_loss(c, c, c, None) == 0.0

    # a rigid rotation is divergence free, and exactly so for central differences
    m = 24
    grid24 = geo.GridSpec(m, m)
    idx = np.arange(m, dtype=np.float64)
    yy, xx = np.meshgrid(idx, idx, indexing="ij")
    swirl = geo.VectorField2(-0.7 * (yy - 11.5) / 11.5, 0.7 * (xx - 11.5) / 11.5, grid24)
    mask1 = geo.boundary_mask(geo.compute_sdf(geo.empty_domain(m, m), grid24), geo.MASK1_RADIUS)
    res = losses.divergence_residual(swirl, grid24, mask1)
    npt.assert_array_equal(res.values, np.zeros((m, m)))

    data_terms = [ad.Tensor(np.asarray(v)) for v in (0.31, 0.72, 0.11)]
    temp_terms = [ad.Tensor(np.asarray(v)) for v in (0.44, 0.09)]
    weights = losses.LossWeights(w_data=0.7, w_phys=1.3, w_temp=2.1)
    total, breakdown = losses.total_loss(data_terms, ad.Tensor(np.asarray(0.37)), temp_terms, weights)
    want = 0.7 * np.mean((0.31, 0.72, 0.11)) + 1.3 * 0.37 + 2.1 * np.mean((0.44, 0.09))
    assert abs(float(total.data) - want) < 1e-6
    assert breakdown.total == float(total.data)
    print("CRITERION 6 PASS hinge/data zeros, solenoidal divergence zero, weighted total matches")


# ---------------------------------------------------------------------------
# 7. mask radii

def test_07_mask_constants():
    assert geo.MASK1_RADIUS == 2.5
    assert geo.MASK2_RADIUS == 3.5
    solid = np.zeros((20, 26), dtype=bool)
    solid[0, :] = solid[-1, :] = True
    solid[:, 0] = solid[:, -1] = True
    solid[5:8, 7:12] = True
    sdf = geo.compute_sdf(geo.ObstacleMap(solid), geo.GridSpec(20, 26))
    m1 = geo.boundary_mask(sdf, geo.MASK1_RADIUS)
    m2 = geo.boundary_mask(sdf, geo.MASK2_RADIUS)
    assert m1.threshold == 2.5 and m2.threshold == 3.5
    npt.assert_array_equal(m1.excluded, sdf.values <= 2.5)
    npt.assert_array_equal(m2.excluded, sdf.values <= 3.5)
    print("CRITERION 7 PASS mask radii 2.5 / 3.5, exclusion equals thresholded distance")


# ---------------------------------------------------------------------------
# 8. event-overlap score vs brute-force counting

def test_08_csi_oracle():
    assert tuple(metrics.DEFAULT_CSI_LEVELS) == (219, 181, 160, 133, 74, 16)
    rng = np.random.default_rng(8)
    for _ in range(1000):
        p = rng.integers(0, 256, (16, 16))
        t = rng.integers(0, 256, (16, 16))
        tau = float(rng.choice(metrics.DEFAULT_CSI_LEVELS))
        hits = int(((p >= tau) & (t >= tau)).sum())
        misses = int(((t >= tau) & (p < tau)).sum())
        false_alarms = int(((p >= tau) & (t < tau)).sum())
        denom = hits + misses + false_alarms
        want = hits / denom if denom else 0.0
        assert metrics.csi(p, t, tau) == want
    print("CRITERION 8 PASS csi matches counting on 1000 random grids, default thresholds verified")


# ---------------------------------------------------------------------------
# 9. latent scale recovery

def test_09_alpha_calibration():
    rng = np.random.default_rng(9)
    # integer-valued truth keeps every product and sum exact in float64
    u_true = rng.integers(-8, 9, (2, 3, 8, 8)).astype(np.float64)
    u_true[0, 0, 2, 3] = 7.0
    for alpha in (0.5, 3.0, 10.0):
        u_hat = alpha * u_true
        for mode in ("initial_field", "single_point"):
            a_hat, mse = metrics.calibrate_alpha(u_hat, u_true, mode)
            assert abs(a_hat - alpha) <= 1e-12, f"{mode} at {alpha}: {a_hat}"
            assert mse == 0.0

    base = rng.standard_normal((1, 4, 16, 16))
    scale = 0.01 * float(np.sqrt((9.0 * base**2).mean()))
    noisy = 3.0 * base + scale * rng.standard_normal(base.shape)
    a_hat, _ = metrics.calibrate_alpha(noisy, base, "initial_field")
    assert abs(a_hat / 3.0 - 1.0) < 0.05
    print(f"CRITERION 9 PASS exact recovery at 0.5/3/10, noisy recovery {a_hat:.4f} vs 3")


# ---------------------------------------------------------------------------
# 10 and 11 share one batch of toy trainings

TOY = RunConfig(
    height=32, width=32, k=4,
    inference_widths=(8, 16, 32), correction_widths=(8, 16),
    epochs=3, batch_size=8, lr=3e-3, sched_step=100,
    train_horizon=4, test_horizon=10,
    kind="uniform", magnitude=0.4, inv_pe=0.01,
    count=300, frames_per_seq=16,
)
N_SEEDS = 10


@pytest.fixture(scope="module")
def toy_runs():
    grid, obstacles = TOY.grid(), TOY.obstacles()
    records = sim.generate_dataset([TOY.scenario()], TOY.frames_per_seq, TOY.count, grid, obstacles)
    data = dataio.DatasetFile(records, obstacles, grid, TOY.frames_per_seq)
    psi = geo.spatial_embedding(obstacles, grid)
    masks = training.domain_masks(obstacles, grid)
    runs = []
    train_seconds = 0.0
    for seed in range(N_SEEDS):
        row = {"seed": seed}
        for tag, flags in (("normal", {}), ("nocorr", {"no_correction": True})):
            cfg = replace(TOY, seed=seed, **flags)
            t0 = time.perf_counter()
            result = training.train(cfg, data)
            if tag == "normal":
                train_seconds += time.perf_counter() - t0
            _, val_set, test_set = training.split_dataset(data.records, seed)
            held = test_set or val_set
            row[tag] = training.validate(cfg, result.store, held, obstacles, grid, 10)
            if tag == "normal":
                rcfg = training.rollout_settings(cfg, 10)
                infer_net = nets.InferenceNet(result.store, cfg.network())
                corr_net = nets.CorrectionNet(result.store, cfg.network())
                _, latents = pred.rollout(
                    held[0].frames[: cfg.k], psi, infer_net, corr_net,
                    float(nets.inv_pe(result.store).data), masks, rcfg,
                )
                ux_hat = np.stack([ls.u_mid.u_x for ls in latents])
                alpha, _ = metrics.calibrate_alpha(
                    ux_hat, held[0].u_true[cfg.k : cfg.k + 10, 0], "initial_field"
                )
                row["ux_sign"] = float(np.sign(float(ux_hat.mean()) / alpha))
        runs.append(row)
    return {"runs": runs, "data": data, "train_seconds": train_seconds}


def test_10_toy_end_to_end(toy_runs):
    assert TOY.epochs <= 100
    assert toy_runs["train_seconds"] < 1800.0
    runs = toy_runs["runs"]
    ratios = [r["normal"].report.mse / r["normal"].persistence_mse for r in runs]
    for r in ratios:
        assert r <= 0.7, f"mse/persistence ratios {[f'{x:.3f}' for x in ratios]}"
    good_signs = sum(1 for r in runs if r["ux_sign"] > 0)
    assert good_signs >= 9, f"flow direction recovered on {good_signs}/{N_SEEDS} seeds"
    print(
        f"CRITERION 10 PASS mse/persistence {min(ratios):.3f}..{max(ratios):.3f}, "
        f"u_x sign {good_signs}/{N_SEEDS}, training {toy_runs['train_seconds']:.0f}s"
    )


def test_11_ablation_harness(toy_runs):
    runs = toy_runs["runs"]
    wins = sum(1 for r in runs if r["normal"].report.mse <= r["nocorr"].report.mse)
    assert wins >= 8, f"correction helped on only {wins}/{N_SEEDS} seeds"

    data = toy_runs["data"]
    small = dataio.DatasetFile(data.records[:60], data.obstacles, data.grid, data.frames_per_seq)
    rows = training.run_ablations(replace(TOY, epochs=1), small)
    assert [r["setting"] for r in rows] == [label for label, _ in training.ABLATION_SETTINGS]
    for r in rows:
        # completion or a recorded blow-up; silent NaNs are neither
        assert not math.isnan(r["mse"]) and not math.isnan(r["mae"]), r
    assert math.isfinite(rows[0]["mse"])
    finite = sum(1 for r in rows if math.isfinite(r["mse"]))
    print(f"CRITERION 11 PASS correction wins {wins}/{N_SEEDS}, ablation rows 8 ({finite} finite)")


# ---------------------------------------------------------------------------
# 12. bytewise determinism of every artifact

DET_INI = """\
[grid]
height = 12
width = 12

[network]
k = 2
inference_widths = 4,8,16
correction_widths = 4,8

[training]
epochs = 1
batch_size = 2
train_horizon = 2
test_horizon = 3
seed = 5

[scenario]
kind = vortex
magnitude = 0.4
inv_pe = 0.01
count = 3
frames_per_seq = 8
"""

ARTIFACTS = ("data.pinp", "model.ckpt", "model.ckpt.loss.csv", "preds.pinp", "metrics.csv")


def _run_chain(root, monkeypatch):
    root.mkdir()
    monkeypatch.chdir(root)
    (root / "toy.ini").write_text(DET_INI)
    assert cli.main(["generate", "--config", "toy.ini", "--out", "data.pinp"]) == 0
    assert cli.main(["train", "--config", "toy.ini", "--dataset", "data.pinp", "--out", "model.ckpt"]) == 0
    assert cli.main(["predict", "--checkpoint", "model.ckpt", "--dataset", "data.pinp",
                     "--horizon", "3", "--out", "preds.pinp"]) == 0
    assert cli.main(["evaluate", "--predictions", "preds.pinp", "--dataset", "data.pinp",
                     "--out", "metrics.csv"]) == 0
    return {name: hashlib.sha256((root / name).read_bytes()).hexdigest() for name in ARTIFACTS}


def test_12_determinism(tmp_path, monkeypatch):
    first = _run_chain(tmp_path / "a", monkeypatch)
    second = _run_chain(tmp_path / "b", monkeypatch)
    assert first == second
    print(f"CRITERION 12 PASS {len(ARTIFACTS)} artifacts byte-identical across reruns")
