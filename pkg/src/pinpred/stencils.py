"""Second-order central-difference operators with replicate edge padding.

Edges are handled by extending the outermost value (so every output cell is
defined), and callers suppress the unreliable near-boundary cells with the
masks from :mod:`pinpred.geometry`. Masks act on operator *outputs*, which
keeps each operator linear.

The private ``_ddx``/``_ddy``/``_lap`` helpers work on bare 2D arrays and
are shared with the reference simulator; the public API speaks the field
types.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import BoundaryMask, ScalarField, VectorField2


@dataclass(frozen=True)
class StencilConfig:
    """Spacing for the difference quotients; padding is always replicate."""

    dx: float = 1.0

    def __post_init__(self):
        if self.dx <= 0:
            raise ValueError(f"dx must be positive, got {self.dx}")


def _pad(a: np.ndarray) -> np.ndarray:
    return np.pad(a, 1, mode="edge")


def _ddx(a: np.ndarray, dx: float) -> np.ndarray:
    p = _pad(a)
    return (p[1:-1, 2:] - p[1:-1, :-2]) / (2.0 * dx)


def _ddy(a: np.ndarray, dx: float) -> np.ndarray:
    p = _pad(a)
    return (p[2:, 1:-1] - p[:-2, 1:-1]) / (2.0 * dx)


def _lap(a: np.ndarray, dx: float) -> np.ndarray:
    p = _pad(a)
    return (p[1:-1, 2:] + p[1:-1, :-2] + p[2:, 1:-1] + p[:-2, 1:-1] - 4.0 * a) / (dx * dx)


def gradient(f: ScalarField, cfg: StencilConfig) -> VectorField2:
    """Central-difference (df/dx, df/dy); exact on affine fields away from edges."""
    return VectorField2(_ddx(f.values, cfg.dx), _ddy(f.values, cfg.dx), f.grid)


def laplacian(f: ScalarField, cfg: StencilConfig) -> ScalarField:
    """5-point d2f/dx2 + d2f/dy2; exact on quadratics away from edges."""
    return ScalarField(_lap(f.values, cfg.dx), f.grid)


def divergence(u: VectorField2, cfg: StencilConfig) -> ScalarField:
    return ScalarField(_ddx(u.u_x, cfg.dx) + _ddy(u.u_y, cfg.dx), u.grid)


def advection_term(u: VectorField2, c: ScalarField, cfg: StencilConfig) -> ScalarField:
    """u . grad(c), unsigned; callers apply the minus sign of the transport equation."""
    return ScalarField(u.u_x * _ddx(c.values, cfg.dx) + u.u_y * _ddy(c.values, cfg.dx), c.grid)


def apply_mask(f: ScalarField, m: BoundaryMask) -> ScalarField:
    if f.values.shape != m.excluded.shape:
        raise ValueError("field and mask must share a grid")
    return ScalarField(np.where(m.excluded, 0.0, f.values), f.grid)
