"""Latent-state inference network, correction network, and learnable transport scalars.

The inference net is a 2D U-Net: the K past frames enter as channels next
to the four geometry channels, three encoder levels with stride-2 2x2
downsampling convs, and a decoder of nearest-neighbor upsampling, one conv,
and a skip concatenation per level. Three linear 1x1 heads emit the
mid-interval concentration (1 ch), velocity (2 ch), and pressure (1 ch) in
one pass. With the default widths the receptive radius is 20 cells.

The correction net is the same idea one level deep and much narrower; its
output head is zero-initialized, so correction starts as the exact
identity and can only learn to deviate.

Transport coefficients are stored as log values and exposed through exp,
which keeps them positive under any optimizer trajectory.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .geometry import ScalarField, SpatialEmbedding, VectorField2
from .optim import ParamStore

THETA_INIT = math.log(0.01)


@dataclass(frozen=True)
class NetworkConfig:
    k: int = 4
    inference_widths: tuple[int, int, int] = (32, 64, 128)
    correction_widths: tuple[int, int] = (16, 32)

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("window length k must be >= 1")
        if len(self.inference_widths) != 3 or len(self.correction_widths) != 2:
            raise ValueError("expected 3 inference widths and 2 correction widths")

    @property
    def input_channels(self) -> int:
        return self.k + 4


@dataclass(frozen=True)
class LatentState:
    """Mid-interval fields inferred from the past window."""

    c_mid: ScalarField
    u_mid: VectorField2
    p_mid: ScalarField


def _add_conv(store: ParamStore, rng, name: str, c_in: int, c_out: int, k: int, zero: bool = False):
    if zero:
        w = np.zeros((c_out, c_in, k, k))
    else:
        bound = math.sqrt(6.0 / (c_in * k * k))
        w = rng.uniform(-bound, bound, size=(c_out, c_in, k, k))
    store.add(f"{name}.w", w)
    store.add(f"{name}.b", np.zeros(c_out))


def init_params(seed: int, cfg: NetworkConfig = NetworkConfig(), dtype=np.float32) -> ParamStore:
    """All parameters for both networks plus the transport scalars.

    Fan-in-scaled uniform weights, zero biases, zero correction head;
    creation order is fixed so a seed pins every byte.
    """
    rng = np.random.default_rng(seed)
    store = ParamStore()
    w1, w2, w3 = cfg.inference_widths
    v1, v2 = cfg.correction_widths

    _add_conv(store, rng, "inference.enc1a", cfg.input_channels, w1, 3)
    _add_conv(store, rng, "inference.enc1b", w1, w1, 3)
    _add_conv(store, rng, "inference.down1", w1, w2, 2)
    _add_conv(store, rng, "inference.enc2a", w2, w2, 3)
    _add_conv(store, rng, "inference.enc2b", w2, w2, 3)
    _add_conv(store, rng, "inference.down2", w2, w3, 2)
    _add_conv(store, rng, "inference.bot_a", w3, w3, 3)
    _add_conv(store, rng, "inference.bot_b", w3, w3, 3)
    _add_conv(store, rng, "inference.dec2", w3, w2, 3)
    _add_conv(store, rng, "inference.dec1", 2 * w2, w1, 3)
    _add_conv(store, rng, "inference.head_c", 2 * w1, 1, 1)
    _add_conv(store, rng, "inference.head_u", 2 * w1, 2, 1)
    _add_conv(store, rng, "inference.head_p", 2 * w1, 1, 1)

    _add_conv(store, rng, "correction.enc1a", 2, v1, 3)
    _add_conv(store, rng, "correction.enc1b", v1, v1, 3)
    _add_conv(store, rng, "correction.down", v1, v2, 2)
    _add_conv(store, rng, "correction.bot_a", v2, v2, 3)
    _add_conv(store, rng, "correction.bot_b", v2, v2, 3)
    _add_conv(store, rng, "correction.dec", v2, v1, 3)
    _add_conv(store, rng, "correction.head", 2 * v1, 1, 1, zero=True)

    store.add("pde.theta_pe", np.asarray(THETA_INIT))
    store.add("pde.theta_re", np.asarray(THETA_INIT))

    if dtype != np.float32:
        for name in store.names():
            t = store[name]
            t.data = t.data.astype(dtype)
    return store


def _block(store: ParamStore, x: ad.Tensor, name: str, stride: int = 1, relu: bool = True) -> ad.Tensor:
    y = ad.conv2d(x, store[f"{name}.w"], store[f"{name}.b"], stride=stride)
    return ad.relu(y) if relu else y


class InferenceNet:
    """Past window plus geometry channels -> (c', u', p') tensors, batched NCHW."""

    def __init__(self, store: ParamStore, cfg: NetworkConfig):
        self.store = store
        self.cfg = cfg

    def __call__(self, x: ad.Tensor) -> tuple[ad.Tensor, ad.Tensor, ad.Tensor]:
        if x.shape[1] != self.cfg.input_channels:
            raise ValueError(f"expected {self.cfg.input_channels} input channels, got {x.shape[1]}")
        if x.shape[2] % 4 or x.shape[3] % 4:
            raise ValueError(f"H and W must be divisible by 4, got {x.shape[2:]}")
        s = self.store
        e1 = _block(s, _block(s, x, "inference.enc1a"), "inference.enc1b")
        e2 = _block(s, _block(s, _block(s, e1, "inference.down1", stride=2), "inference.enc2a"), "inference.enc2b")
        bot = _block(s, _block(s, _block(s, e2, "inference.down2", stride=2), "inference.bot_a"), "inference.bot_b")
        d2 = ad.concat_channels([_block(s, ad.upsample_nearest2(bot), "inference.dec2"), e2])
        d1 = ad.concat_channels([_block(s, ad.upsample_nearest2(d2), "inference.dec1"), e1])
        c = _block(s, d1, "inference.head_c", relu=False)
        u = _block(s, d1, "inference.head_u", relu=False)
        p = _block(s, d1, "inference.head_p", relu=False)
        return c, u, p


class CorrectionNet:
    """Residual refinement: returns c_hat_prime + delta(c_hat_prime, c_prev)."""

    def __init__(self, store: ParamStore, cfg: NetworkConfig):
        self.store = store
        self.cfg = cfg

    def delta(self, c_hat_prime: ad.Tensor, c_prev: ad.Tensor) -> ad.Tensor:
        if c_hat_prime.shape != c_prev.shape:
            raise ValueError(f"shape mismatch: {c_hat_prime.shape} vs {c_prev.shape}")
        s = self.store
        x = ad.concat_channels([c_hat_prime, c_prev])
        e1 = _block(s, _block(s, x, "correction.enc1a"), "correction.enc1b")
        bot = _block(s, _block(s, _block(s, e1, "correction.down", stride=2), "correction.bot_a"), "correction.bot_b")
        d = ad.concat_channels([_block(s, ad.upsample_nearest2(bot), "correction.dec"), e1])
        return _block(s, d, "correction.head", relu=False)

    def __call__(self, c_hat_prime: ad.Tensor, c_prev: ad.Tensor) -> ad.Tensor:
        return ad.add(c_hat_prime, self.delta(c_hat_prime, c_prev))


def inv_pe(store: ParamStore) -> ad.Tensor:
    return ad.exp(store["pde.theta_pe"])


def inv_re(store: ParamStore) -> ad.Tensor:
    return ad.exp(store["pde.theta_re"])


def embedding_channels(psi: SpatialEmbedding, dtype=np.float32) -> np.ndarray:
    """Geometry channels as fed to the nets; sdf rescaled to O(1) by 2/(H+W)."""
    ch = psi.channels().astype(dtype)
    h, w = psi.sdf.grid.shape
    ch[2] *= 2.0 / (h + w)
    return ch


def infer_latent(window: np.ndarray, psi: SpatialEmbedding, net: InferenceNet) -> LatentState:
    """Single-sequence typed wrapper around the batched forward pass."""
    grid = psi.sdf.grid
    if window.ndim != 3 or window.shape != (net.cfg.k,) + grid.shape:
        raise ValueError(f"window shape {window.shape} does not match (K={net.cfg.k}, {grid.shape})")
    dtype = net.store[net.store.names()[0]].data.dtype
    x = np.concatenate([window.astype(dtype), embedding_channels(psi, dtype)])[None]
    c, u, p = net(ad.Tensor(x))
    return LatentState(
        c_mid=ScalarField(c.data[0, 0], grid),
        u_mid=VectorField2(u.data[0, 0], u.data[0, 1], grid),
        p_mid=ScalarField(p.data[0, 0], grid),
    )


def correct(c_hat_prime: ScalarField, c_prev: ScalarField, net: CorrectionNet) -> ScalarField:
    dtype = net.store[net.store.names()[0]].data.dtype
    a = ad.Tensor(c_hat_prime.values.astype(dtype)[None, None])
    b = ad.Tensor(c_prev.values.astype(dtype)[None, None])
    return ScalarField(net(a, b).data[0, 0], c_hat_prime.grid)


def parameter_count(store: ParamStore, prefix: str) -> int:
    return sum(store[n].data.size for n in store.names() if n.startswith(prefix))
