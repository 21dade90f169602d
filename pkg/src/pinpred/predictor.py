"""The discrete transport predictor: one-step update and sliding-window rollout.

The one-step update advances the previous frame with advection and
diffusion evaluated on the *inferred mid-interval* state:

    c'(t_{k+1}) = c(t_k) + (-u(t') . grad c(t') + inv_pe * lap c(t')) * dt

Stencils are realized as fixed-kernel convolutions so the step lives on
the autodiff tape; they compute exactly the same arithmetic as
:mod:`pinpred.stencils`. First-order terms are suppressed by Mask1,
second-order by Mask2, and the whole update is zeroed at Mask2 points, so
near boundaries the prediction holds the previous value until correction.

Two intentionally degraded variants used by ablations are kept behind
flags: `use_ck_latent` differences the previous frame instead of the
inferred mid-state, and `changed_operator` replaces the transport update
with a bare c + u_x + u_y (no dt), which is the known-divergent form.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .geometry import BoundaryMask, GridSpec, ScalarField
from .networks import CorrectionNet, InferenceNet, LatentState, embedding_channels
from .geometry import SpatialEmbedding, VectorField2


class StencilOps:
    """Difference stencils as constant conv kernels for one (dx, dtype)."""

    def __init__(self, dx: float, dtype=np.float32):
        kx = np.array([[[[-1.0, 0.0, 1.0]]]]) / (2.0 * dx)
        ky = kx.reshape(1, 1, 3, 1)
        klap = np.array([[[[0.0, 1.0, 0.0], [1.0, -4.0, 1.0], [0.0, 1.0, 0.0]]]]) / (dx * dx)
        self.kx = ad.Tensor(kx.astype(dtype))
        self.ky = ad.Tensor(ky.astype(dtype))
        self.klap = ad.Tensor(klap.astype(dtype))

    def ddx(self, t: ad.Tensor) -> ad.Tensor:
        return ad.conv2d(t, self.kx)

    def ddy(self, t: ad.Tensor) -> ad.Tensor:
        return ad.conv2d(t, self.ky)

    def lap(self, t: ad.Tensor) -> ad.Tensor:
        return ad.conv2d(t, self.klap)


@dataclass(frozen=True)
class RolloutConfig:
    k: int = 4
    steps: int = 1
    use_correction: bool = True
    use_ck_latent: bool = False
    changed_operator: bool = False
    mask_pde_update: bool = True

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("window length k must be >= 1")
        if self.steps < 0:
            raise ValueError("steps must be nonnegative")


def mask_tensors(masks: tuple[BoundaryMask, BoundaryMask], batch: int, dtype=np.float32):
    """(keep1, keep2) constant weight tensors tiled over the batch."""
    m1, m2 = masks
    k1 = np.broadcast_to(m1.weights(dtype), (batch, 1) + m1.excluded.shape).copy()
    k2 = np.broadcast_to(m2.weights(dtype), (batch, 1) + m2.excluded.shape).copy()
    return ad.Tensor(k1), ad.Tensor(k2)


def pde_step_graph(
    c_k: ad.Tensor,
    c_mid: ad.Tensor,
    u_mid: ad.Tensor,
    inv_pe_t: ad.Tensor,
    ops: StencilOps,
    keep1: ad.Tensor,
    keep2: ad.Tensor,
    dt: float,
    cfg: RolloutConfig,
) -> ad.Tensor:
    ux = ad.slice_channels(u_mid, 0, 1)
    uy = ad.slice_channels(u_mid, 1, 2)
    if cfg.changed_operator:
        update = ad.add(ux, uy)
        if cfg.mask_pde_update:
            update = ad.mul(keep2, update)
        return ad.add(c_k, update)
    c_src = c_k if cfg.use_ck_latent else c_mid
    adv = ad.add(ad.mul(ux, ops.ddx(c_src)), ad.mul(uy, ops.ddy(c_src)))
    adv = ad.mul(keep1, adv)
    diff = ad.mul(inv_pe_t, ad.mul(keep2, ops.lap(c_src)))
    update = ad.sub(diff, adv)
    if cfg.mask_pde_update:
        update = ad.mul(keep2, update)
    return ad.add(c_k, ad.mul(update, dt))


def discrete_pde_step(
    c_k: ScalarField,
    latent: LatentState,
    inv_pe: float,
    grid: GridSpec,
    masks: tuple[BoundaryMask, BoundaryMask],
    cfg: RolloutConfig = RolloutConfig(),
) -> ScalarField:
    """Typed single-field wrapper over the graph-level step (float64)."""
    if inv_pe < 0:
        raise ValueError("inv_pe must be nonnegative")
    if latent.c_mid.grid.shape != grid.shape:
        raise ValueError("latent fields do not match the grid")
    ops = StencilOps(grid.dx, np.float64)
    keep1, keep2 = mask_tensors(masks, 1, np.float64)
    out = pde_step_graph(
        ad.Tensor(c_k.values[None, None]),
        ad.Tensor(latent.c_mid.values[None, None]),
        ad.Tensor(np.stack([latent.u_mid.u_x, latent.u_mid.u_y])[None]),
        ad.Tensor(np.asarray(float(inv_pe))),
        ops,
        keep1,
        keep2,
        grid.dt,
        cfg,
    )
    return ScalarField(out.data[0, 0], grid)


def rollout_graph(
    window: list[ad.Tensor],
    psi_t: ad.Tensor,
    infer_net: InferenceNet,
    corr_net: CorrectionNet | None,
    inv_pe_t: ad.Tensor,
    ops: StencilOps,
    keep1: ad.Tensor,
    keep2: ad.Tensor,
    dt: float,
    cfg: RolloutConfig,
    latent_fn=None,
) -> dict[str, list[ad.Tensor]]:
    """Recurrent rollout on the tape; every intermediate is kept for the losses.

    `latent_fn(step, window) -> (c_mid, u_mid, p_mid)` replaces the
    inference net when given (oracle injection in tests).
    """
    if len(window) != cfg.k:
        raise ValueError(f"window has {len(window)} frames, expected {cfg.k}")
    window = list(window)
    out = {"c_prime": [], "c_hat": [], "c_mid": [], "u_mid": [], "p_mid": []}
    for step in range(cfg.steps):
        if latent_fn is None:
            x = ad.concat_channels(window + [psi_t])
            c_mid, u_mid, p_mid = infer_net(x)
        else:
            c_mid, u_mid, p_mid = latent_fn(step, window)
        c_k = window[-1]
        c_prime = pde_step_graph(c_k, c_mid, u_mid, inv_pe_t, ops, keep1, keep2, dt, cfg)
        if cfg.use_correction and corr_net is not None:
            c_hat = corr_net(c_prime, c_k)
        else:
            c_hat = c_prime
        out["c_prime"].append(c_prime)
        out["c_hat"].append(c_hat)
        out["c_mid"].append(c_mid)
        out["u_mid"].append(u_mid)
        out["p_mid"].append(p_mid)
        window = window[1:] + [c_hat]
    return out


def rollout(
    initial_window: np.ndarray,
    psi: SpatialEmbedding,
    infer_net: InferenceNet,
    corr_net: CorrectionNet | None,
    inv_pe: float,
    masks: tuple[BoundaryMask, BoundaryMask],
    cfg: RolloutConfig,
) -> tuple[np.ndarray, list[LatentState]]:
    """Typed rollout: K seed frames in, `cfg.steps` predicted frames out."""
    grid = psi.sdf.grid
    if initial_window.shape != (cfg.k,) + grid.shape:
        raise ValueError(f"window shape {initial_window.shape} does not match (K={cfg.k}, {grid.shape})")
    dtype = infer_net.store[infer_net.store.names()[0]].data.dtype
    frames = [ad.Tensor(f[None, None].astype(dtype)) for f in initial_window]
    psi_t = ad.Tensor(embedding_channels(psi, dtype)[None])
    ops = StencilOps(grid.dx, dtype)
    keep1, keep2 = mask_tensors(masks, 1, dtype)
    out = rollout_graph(
        frames, psi_t, infer_net, corr_net, ad.Tensor(np.asarray(inv_pe, dtype=dtype)),
        ops, keep1, keep2, grid.dt, cfg,
    )
    preds = np.stack([t.data[0, 0].astype(np.float64) for t in out["c_hat"]]) if out["c_hat"] else np.zeros((0,) + grid.shape)
    latents = [
        LatentState(
            c_mid=ScalarField(c.data[0, 0], grid),
            u_mid=VectorField2(u.data[0, 0], u.data[0, 1], grid),
            p_mid=ScalarField(p.data[0, 0], grid),
        )
        for c, u, p in zip(out["c_mid"], out["u_mid"], out["p_mid"])
    ]
    return preds, latents
