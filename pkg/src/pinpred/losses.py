"""Training losses: data fit, flow-physics residuals, and a temporal hinge.

Three constraints, each a masked mean over cells:

  data      (c' - c)^2 + (chat - c)^2, prediction errors before and after
            the learned correction
  physical  |e1|^2 + e2^2 where e1 is the forward-Euler momentum residual
            of the inferred velocity/pressure pair and e2 = div(u) * dt
  temporal  max((c(t') - c(t_k))^2 - (c(t_{k+1}) - c(t_k))^2, 0), pinning
            the inferred mid-interval state between the bracketing frames

The momentum residual needs two consecutive inferred velocities for its
time difference, so the first rollout step contributes only e2.

Everything is built from tape ops so gradients flow to the networks; the
typed wrappers at the bottom run the same graphs on float64 for tests and
evaluation. Stencil pieces carry the usual suppression masks: first
derivatives Mask1, second derivatives Mask2.

Sign note: the default residual is e1 = du - rhs*dt, the discrepancy of an
explicit Euler step. `literal_e1_sign` flips it to du + rhs*dt for
comparison runs; both square to the same loss when the flow is steady.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .geometry import BoundaryMask, GridSpec, ScalarField, VectorField2
from .predictor import StencilOps, mask_tensors


@dataclass(frozen=True)
class LossWeights:
    w_data: float = 1.0
    w_phys: float = 1.0
    w_temp: float = 1.0

    def __post_init__(self):
        for name in ("w_data", "w_phys", "w_temp"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")


@dataclass(frozen=True)
class LossBreakdown:
    """Unweighted component values plus the weighted total, as plain floats."""

    data: float
    physical: float
    temporal: float
    total: float


# ---------------------------------------------------------------------------
# graph-level pieces (batched NCHW tensors)

def masked_mean_graph(t: ad.Tensor, keep: ad.Tensor) -> ad.Tensor:
    """Mean of t over cells where keep is 1. keep must match t's shape."""
    n = float(keep.data.sum())
    if n <= 0:
        raise ValueError("mask keeps no cells")
    return ad.mul(ad.sum_all(ad.mul(keep, t)), 1.0 / n)


def data_loss_graph(c_prime, c_hat, c_true, keep):
    err = ad.add(ad.square(ad.sub(c_prime, c_true)), ad.square(ad.sub(c_hat, c_true)))
    return masked_mean_graph(err, keep)


def momentum_residual_graph(
    u_k: ad.Tensor,
    u_next: ad.Tensor,
    p_k: ad.Tensor,
    inv_re_t: ad.Tensor,
    ops: StencilOps,
    keep1: ad.Tensor,
    keep2: ad.Tensor,
    dt: float,
    literal_sign: bool = False,
):
    """(e1x, e1y) tensors for one consecutive pair of inferred states."""
    ux = ad.slice_channels(u_k, 0, 1)
    uy = ad.slice_channels(u_k, 1, 2)
    adv_x = ad.add(ad.mul(ux, ops.ddx(ux)), ad.mul(uy, ops.ddy(ux)))
    adv_y = ad.add(ad.mul(ux, ops.ddx(uy)), ad.mul(uy, ops.ddy(uy)))
    first_x = ad.mul(keep1, ad.neg(ad.add(adv_x, ops.ddx(p_k))))
    first_y = ad.mul(keep1, ad.neg(ad.add(adv_y, ops.ddy(p_k))))
    second_x = ad.mul(inv_re_t, ad.mul(keep2, ops.lap(ux)))
    second_y = ad.mul(inv_re_t, ad.mul(keep2, ops.lap(uy)))
    rhs_x = ad.mul(ad.add(first_x, second_x), dt)
    rhs_y = ad.mul(ad.add(first_y, second_y), dt)
    du_x = ad.sub(ad.slice_channels(u_next, 0, 1), ux)
    du_y = ad.sub(ad.slice_channels(u_next, 1, 2), uy)
    if literal_sign:
        return ad.add(du_x, rhs_x), ad.add(du_y, rhs_y)
    return ad.sub(du_x, rhs_x), ad.sub(du_y, rhs_y)


def divergence_residual_graph(u: ad.Tensor, ops: StencilOps, keep1: ad.Tensor, dt: float) -> ad.Tensor:
    div = ad.add(ops.ddx(ad.slice_channels(u, 0, 1)), ops.ddy(ad.slice_channels(u, 1, 2)))
    return ad.mul(keep1, ad.mul(div, dt))


def physical_loss_graph(
    u_mids: list[ad.Tensor],
    p_mids: list[ad.Tensor],
    inv_re_t: ad.Tensor,
    ops: StencilOps,
    keep1: ad.Tensor,
    keep2: ad.Tensor,
    keep_eval: ad.Tensor,
    dt: float,
    include_e1: bool = True,
    literal_sign: bool = False,
) -> ad.Tensor:
    """Mean over steps of the masked cell-mean of |e1|^2 + e2^2."""
    if not u_mids:
        raise ValueError("physical loss needs at least one rollout step")
    step_terms = []
    for i, u in enumerate(u_mids):
        contrib = ad.square(divergence_residual_graph(u, ops, keep1, dt))
        if include_e1 and i > 0:
            e1x, e1y = momentum_residual_graph(
                u_mids[i - 1], u, p_mids[i - 1], inv_re_t, ops, keep1, keep2, dt, literal_sign
            )
            contrib = ad.add(contrib, ad.add(ad.square(e1x), ad.square(e1y)))
        step_terms.append(masked_mean_graph(contrib, keep_eval))
    return mean_terms(step_terms)


def temporal_loss_graph(c_mid, c_k, c_next, keep):
    gap = ad.sub(ad.square(ad.sub(c_mid, c_k)), ad.square(ad.sub(c_next, c_k)))
    return masked_mean_graph(ad.relu(gap), keep)


def mean_terms(terms: list[ad.Tensor]) -> ad.Tensor:
    """Average of scalar tensors; empty lists average to 0 (no graph node)."""
    if not terms:
        return ad.Tensor(np.asarray(0.0))
    acc = terms[0]
    for t in terms[1:]:
        acc = ad.add(acc, t)
    return ad.mul(acc, 1.0 / len(terms))


def total_loss(
    data_terms: list[ad.Tensor],
    physical_term: ad.Tensor | None,
    temporal_terms: list[ad.Tensor],
    weights: LossWeights,
) -> tuple[ad.Tensor, LossBreakdown]:
    """Weighted sum of step-averaged components, plus the recorded breakdown.

    data_terms and temporal_terms hold one scalar per rollout step;
    physical_term is already step-averaged (or None when ablated).
    """
    data = mean_terms(data_terms)
    phys = physical_term if physical_term is not None else ad.Tensor(np.asarray(0.0, dtype=data.dtype))
    temp = mean_terms(temporal_terms) if temporal_terms else ad.Tensor(np.asarray(0.0, dtype=data.dtype))
    total = ad.add(
        ad.mul(data, weights.w_data),
        ad.add(ad.mul(phys, weights.w_phys), ad.mul(temp, weights.w_temp)),
    )
    breakdown = LossBreakdown(
        data=float(data.data), physical=float(phys.data), temporal=float(temp.data), total=float(total.data)
    )
    return total, breakdown


# ---------------------------------------------------------------------------
# typed wrappers (float64, no tape reuse; for tests and offline evaluation)

def _keep_tensor(exclude: BoundaryMask | None, shape, dtype=np.float64) -> ad.Tensor:
    if exclude is None:
        return ad.Tensor(np.ones((1, 1) + shape, dtype=dtype))
    return ad.Tensor(exclude.weights(dtype)[None, None])


def _scalar_t(f: ScalarField) -> ad.Tensor:
    return ad.Tensor(f.values[None, None])


def _vector_t(f: VectorField2) -> ad.Tensor:
    return ad.Tensor(np.stack([f.u_x, f.u_y])[None])


def data_loss(
    c_hat_prime: ScalarField, c_hat: ScalarField, c_true: ScalarField, exclude: BoundaryMask | None
) -> float:
    keep = _keep_tensor(exclude, c_true.grid.shape)
    return float(data_loss_graph(_scalar_t(c_hat_prime), _scalar_t(c_hat), _scalar_t(c_true), keep).data)


def momentum_residual(
    u_k: VectorField2,
    u_next: VectorField2,
    p_k: ScalarField,
    inv_re: float,
    grid: GridSpec,
    masks: tuple[BoundaryMask, BoundaryMask],
    literal_e1_sign: bool = False,
) -> VectorField2:
    ops = StencilOps(grid.dx, np.float64)
    keep1, keep2 = mask_tensors(masks, 1, np.float64)
    e1x, e1y = momentum_residual_graph(
        _vector_t(u_k),
        _vector_t(u_next),
        _scalar_t(p_k),
        ad.Tensor(np.asarray(float(inv_re))),
        ops,
        keep1,
        keep2,
        grid.dt,
        literal_e1_sign,
    )
    return VectorField2(e1x.data[0, 0], e1y.data[0, 0], grid)


def divergence_residual(u: VectorField2, grid: GridSpec, mask1: BoundaryMask) -> ScalarField:
    ops = StencilOps(grid.dx, np.float64)
    keep1 = ad.Tensor(mask1.weights(np.float64)[None, None])
    return ScalarField(divergence_residual_graph(_vector_t(u), ops, keep1, grid.dt).data[0, 0], grid)


def physical_loss(
    u_mids: list[VectorField2],
    p_mids: list[ScalarField],
    inv_re: float,
    grid: GridSpec,
    masks: tuple[BoundaryMask, BoundaryMask],
    exclude: BoundaryMask | None,
    include_e1: bool = True,
    literal_e1_sign: bool = False,
) -> float:
    ops = StencilOps(grid.dx, np.float64)
    keep1, keep2 = mask_tensors(masks, 1, np.float64)
    keep_eval = _keep_tensor(exclude, grid.shape)
    out = physical_loss_graph(
        [_vector_t(u) for u in u_mids],
        [_scalar_t(p) for p in p_mids],
        ad.Tensor(np.asarray(float(inv_re))),
        ops,
        keep1,
        keep2,
        keep_eval,
        grid.dt,
        include_e1,
        literal_e1_sign,
    )
    return float(out.data)


def temporal_loss(
    c_mid: ScalarField, c_k: ScalarField, c_next_true: ScalarField, exclude: BoundaryMask | None
) -> float:
    keep = _keep_tensor(exclude, c_k.grid.shape)
    return float(temporal_loss_graph(_scalar_t(c_mid), _scalar_t(c_k), _scalar_t(c_next_true), keep).data)
