"""Ground-truth sequence generator with prescribed incompressible flows.

A passive scalar is transported through fixed analytic velocity fields
(uniform stream, solid-body vortex, parabolic channel), so the latent
velocity, pressure, and diffusivity behind every sequence are known
exactly. Advection uses flux-form first-order upwind differences with
faces into solid cells blocked (zero normal flow); diffusion is the
5-point Laplacian against zero-concentration walls. This scheme is
deliberately not the central-difference scheme the learned predictor
uses, so the predictor cannot trivially invert the generator.

Units are dimensionless: with the default dx = dt = 1 a speed is cells
per frame, and the advective CFL number equals the speed itself.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .geometry import GridSpec, ObstacleMap, ScalarField, VectorField2
from .stencils import _lap

ADVECTIVE_CFL_LIMIT = 0.8
DIFFUSIVE_CFL_LIMIT = 0.8

_SEED_STRIDE = 0x9E3779B97F4A7C15  # odd 64-bit stride decorrelates per-record seeds


@dataclass(frozen=True)
class SourceSpec:
    """Disk injector: adds `rate` concentration per frame within `radius` of `center` (x, y)."""

    center: tuple[float, float]
    radius: float
    rate: float


@dataclass(frozen=True)
class FlowScenario:
    kind: str  # uniform | vortex | channel
    magnitude: float  # peak speed
    inv_pe: float  # diffusivity (inverse Peclet number)
    seed: int
    source: SourceSpec | None = None

    def __post_init__(self):
        if self.kind not in ("uniform", "vortex", "channel"):
            raise ValueError(f"unknown scenario kind {self.kind!r}")
        if self.magnitude < 0:
            raise ValueError("magnitude must be nonnegative")
        if self.inv_pe < 0:
            raise ValueError("inv_pe must be nonnegative")


@dataclass(frozen=True)
class SequenceRecord:
    """One simulated sequence plus the exact latent fields that produced it."""

    frames: np.ndarray  # (N, H, W) concentration
    u_true: np.ndarray  # (N, 2, H, W) velocity, x component first
    p_true: np.ndarray  # (N, H, W) pressure
    scenario: FlowScenario
    grid: GridSpec
    seed: int  # the per-record seed actually used (stored in dataset files)

    def __post_init__(self):
        if self.frames.ndim != 3 or self.frames.shape[1:] != self.grid.shape:
            raise ValueError(f"frames shape {self.frames.shape} does not match grid {self.grid.shape}")
        if (self.frames < 0).any():
            raise ValueError("concentration must stay nonnegative")


def velocity_field(scenario: FlowScenario, grid: GridSpec) -> tuple[VectorField2, ScalarField]:
    """Prescribed (u, p) for a scenario; every kind is divergence-free under central differences."""
    h, w = grid.shape
    yy, xx = np.meshgrid(np.arange(h) + 0.5, np.arange(w) + 0.5, indexing="ij")
    mag = scenario.magnitude
    if scenario.kind == "uniform":
        u_x = np.full((h, w), mag)
        u_y = np.zeros((h, w))
        p = np.zeros((h, w))
    elif scenario.kind == "vortex":
        ry = yy - h / 2.0
        rx = xx - w / 2.0
        r = np.hypot(rx, ry)
        r_max = r.max()
        u_x = mag * (-ry) / r_max
        u_y = mag * rx / r_max
        p = 0.5 * mag**2 * (r / r_max) ** 2
    else:  # channel
        s = (yy - 0.5) / (h - 1)  # 0 at the top wall centers, 1 at the bottom
        u_x = 4.0 * mag * s * (1.0 - s)
        u_y = np.zeros((h, w))
        p = mag * (0.5 - xx / w)  # linear drop along the flow
    return VectorField2(u_x, u_y, grid), ScalarField(p, grid)


def cfl_numbers(u: VectorField2, inv_pe: float, grid: GridSpec) -> tuple[float, float]:
    adv = grid.dt * (np.abs(u.u_x).max() + np.abs(u.u_y).max()) / grid.dx
    diff = grid.dt * inv_pe * 4.0 / grid.dx**2
    return float(adv), float(diff)


def check_cfl(u: VectorField2, inv_pe: float, grid: GridSpec) -> None:
    adv, diff = cfl_numbers(u, inv_pe, grid)
    if adv > ADVECTIVE_CFL_LIMIT:
        raise ValueError(f"advective CFL {adv:.3f} exceeds limit {ADVECTIVE_CFL_LIMIT}")
    if diff > DIFFUSIVE_CFL_LIMIT:
        raise ValueError(f"diffusive CFL {diff:.3f} exceeds limit {DIFFUSIVE_CFL_LIMIT}")


def reference_step(
    c: ScalarField, u: VectorField2, inv_pe: float, grid: GridSpec, obstacles: ObstacleMap
) -> ScalarField:
    """One forward-Euler transport step; see the module docstring for the scheme."""
    check_cfl(u, inv_pe, grid)
    vals = c.values
    dx, dt = grid.dx, grid.dt
    fluid = obstacles.fluid

    tend = np.zeros_like(vals)
    # x faces sit between (i, j) and (i, j+1); upwind flux, blocked at solids
    uf = 0.5 * (u.u_x[:, :-1] + u.u_x[:, 1:])
    uf = np.where(fluid[:, :-1] & fluid[:, 1:], uf, 0.0)
    flux = np.where(uf > 0, uf * vals[:, :-1], uf * vals[:, 1:])
    tend[:, :-1] -= flux / dx
    tend[:, 1:] += flux / dx
    # y faces between (i, j) and (i+1, j)
    vf = 0.5 * (u.u_y[:-1, :] + u.u_y[1:, :])
    vf = np.where(fluid[:-1, :] & fluid[1:, :], vf, 0.0)
    flux = np.where(vf > 0, vf * vals[:-1, :], vf * vals[1:, :])
    tend[:-1, :] -= flux / dx
    tend[1:, :] += flux / dx

    if inv_pe > 0:
        tend += inv_pe * _lap(vals, dx)
    out = vals + dt * tend
    np.maximum(out, 0.0, out=out)
    out[obstacles.solid] = 0.0
    return ScalarField(out, grid)


def analytic_advect_diffuse(
    x0: tuple[float, float], d: float, u: tuple[float, float], t: float, grid: GridSpec
) -> ScalarField:
    """Free-space unit-mass solution c = exp(-|x - x0 - u t|^2 / 4dt) / (4 pi d t).

    x0 and u are (x, y) in physical units; the field is sampled at cell
    centers, so the discrete mass approximates 1/dx^2 away from walls.
    """
    if d <= 0:
        raise ValueError("diffusivity must be positive")
    if t <= 0:
        raise ValueError("time must be positive")
    h, w = grid.shape
    ys = (np.arange(h) + 0.5) * grid.dx
    xs = (np.arange(w) + 0.5) * grid.dx
    yy, xx = np.meshgrid(ys, xs, indexing="ij")
    cx = x0[0] + u[0] * t
    cy = x0[1] + u[1] * t
    r2 = (xx - cx) ** 2 + (yy - cy) ** 2
    return ScalarField(np.exp(-r2 / (4.0 * d * t)) / (4.0 * np.pi * d * t), grid)


def initial_blobs(rng: np.random.Generator, obstacles: ObstacleMap, grid: GridSpec) -> ScalarField:
    """Sum of 1-3 random Gaussian bumps centered on fluid cells."""
    h, w = grid.shape
    yy, xx = np.meshgrid(np.arange(h) + 0.5, np.arange(w) + 0.5, indexing="ij")
    vals = np.zeros((h, w))
    for _ in range(int(rng.integers(1, 4))):
        for _ in range(100):
            cy = rng.uniform(2.0, h - 2.0)
            cx = rng.uniform(2.0, w - 2.0)
            if not obstacles.solid[int(cy), int(cx)]:
                break
        sigma = rng.uniform(1.5, 3.0)
        amp = rng.uniform(0.5, 1.5)
        vals += amp * np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2.0 * sigma**2))
    vals[obstacles.solid] = 0.0
    return ScalarField(vals, grid)


def record_seed(scenario: FlowScenario, index: int) -> int:
    return (scenario.seed + index * _SEED_STRIDE) % 2**64


def _generate_record(
    scenario: FlowScenario, index: int, frames_per_seq: int, grid: GridSpec, obstacles: ObstacleMap
) -> SequenceRecord:
    seed = record_seed(scenario, index)
    rng = np.random.default_rng(seed)
    u, p = velocity_field(scenario, grid)
    source_mask = None
    if scenario.source is not None:
        h, w = grid.shape
        yy, xx = np.meshgrid(np.arange(h) + 0.5, np.arange(w) + 0.5, indexing="ij")
        sx, sy = scenario.source.center
        source_mask = (np.hypot(xx - sx, yy - sy) <= scenario.source.radius) & obstacles.fluid

    c = initial_blobs(rng, obstacles, grid)
    frames = np.empty((frames_per_seq,) + grid.shape)
    frames[0] = c.values
    for k in range(1, frames_per_seq):
        c = reference_step(c, u, scenario.inv_pe, grid, obstacles)
        if source_mask is not None:
            vals = c.values.copy()
            vals[source_mask] += scenario.source.rate
            c = ScalarField(vals, grid)
        frames[k] = c.values

    u_true = np.broadcast_to(np.stack([u.u_x, u.u_y]), (frames_per_seq, 2) + grid.shape).copy()
    p_true = np.broadcast_to(p.values, (frames_per_seq,) + grid.shape).copy()
    return SequenceRecord(frames, u_true, p_true, scenario, grid, seed)


def generate_dataset(
    scenarios: list[FlowScenario],
    frames_per_seq: int,
    count: int,
    grid: GridSpec,
    obstacles: ObstacleMap,
    workers: int | None = None,
) -> list[SequenceRecord]:
    """`count` sequences cycling through `scenarios`; byte-reproducible for fixed seeds.

    Records are independent, so they can be generated in parallel; results
    are assembled in submission order, which keeps the output identical for
    any worker count (PINP_THREADS, default serial).
    """
    if count < 0:
        raise ValueError("count must be nonnegative")
    if count == 0:
        return []
    if not scenarios:
        raise ValueError("need at least one scenario")
    if frames_per_seq < 2:
        raise ValueError("sequences need at least two frames")
    for sc in scenarios:
        u, _ = velocity_field(sc, grid)
        check_cfl(u, sc.inv_pe, grid)

    if workers is None:
        workers = int(os.environ.get("PINP_THREADS", "1"))
    jobs = [(scenarios[i % len(scenarios)], i) for i in range(count)]
    if workers <= 1:
        return [_generate_record(sc, i, frames_per_seq, grid, obstacles) for sc, i in jobs]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(_generate_record, sc, i, frames_per_seq, grid, obstacles) for sc, i in jobs]
        return [f.result() for f in futures]
