"""Convolution kernels with a compiled core and a pure-numpy fallback.

The compiled extension is preferred when present; otherwise the numpy
implementation is used. ``PINP_KERNELS=numpy`` or ``PINP_KERNELS=compiled``
forces the choice (forcing ``compiled`` raises if the extension is absent).

Only two layouts are supported, because they are the only ones the package
ever builds: odd kernels at stride 1 with replicate padding, and 2x2
kernels at stride 2 without padding. The public entry points validate
shapes and dtypes; the backend modules assume clean inputs.
"""

import os

import numpy as np

from . import fallback as _fallback

_requested = os.environ.get("PINP_KERNELS", "").strip().lower()
if _requested not in ("", "compiled", "numpy"):
    raise ValueError(f"PINP_KERNELS must be 'compiled' or 'numpy', got {_requested!r}")

_impl = None
if _requested in ("", "compiled"):
    try:
        from . import _core as _impl
    except ImportError:
        if _requested == "compiled":
            raise ImportError("PINP_KERNELS=compiled but the compiled extension is not built")
        _impl = None

if _impl is None:
    _impl = _fallback
    BACKEND = "numpy"
else:
    BACKEND = "compiled"

_DTYPES = (np.float32, np.float64)


def _as_input(a, name):
    a = np.ascontiguousarray(a)
    if not a.flags.writeable:
        # the compiled core takes writable memoryviews
        a = a.copy()
    if a.ndim != 4:
        raise ValueError(f"{name} must be 4D, got shape {a.shape}")
    if a.dtype not in _DTYPES:
        raise ValueError(f"{name} must be float32 or float64, got {a.dtype}")
    return a


def _check_pair(a, b, name_a, name_b):
    if a.dtype != b.dtype:
        raise ValueError(f"{name_a} is {a.dtype} but {name_b} is {b.dtype}")


def _check_kernel(w, stride):
    kh, kw = w.shape[2], w.shape[3]
    if stride == 1:
        if kh % 2 == 0 or kw % 2 == 0:
            raise ValueError(f"stride-1 kernels must have odd sizes, got {kh}x{kw}")
    elif stride == 2:
        if kh != 2 or kw != 2:
            raise ValueError(f"stride-2 kernels must be 2x2, got {kh}x{kw}")
    else:
        raise ValueError(f"stride must be 1 or 2, got {stride}")


def conv2d_forward(x, w, stride=1):
    """Convolve x (N,C,H,W) with w (CO,C,kH,kW); see module doc for layouts."""
    x = _as_input(x, "x")
    w = _as_input(w, "w")
    _check_pair(x, w, "x", "w")
    _check_kernel(w, stride)
    if x.shape[1] != w.shape[1]:
        raise ValueError(f"channel mismatch: x has {x.shape[1]}, w expects {w.shape[1]}")
    if stride == 1:
        return _impl.forward_s1(x, w)
    if x.shape[2] % 2 or x.shape[3] % 2:
        raise ValueError(f"stride-2 input must have even H and W, got {x.shape[2:]}")
    return _impl.forward_s2(x, w)


def conv2d_backward_input(gy, w, stride=1):
    """Gradient of conv2d_forward w.r.t. its input."""
    gy = _as_input(gy, "gy")
    w = _as_input(w, "w")
    _check_pair(gy, w, "gy", "w")
    _check_kernel(w, stride)
    if gy.shape[1] != w.shape[0]:
        raise ValueError(f"channel mismatch: gy has {gy.shape[1]}, w produces {w.shape[0]}")
    if stride == 1:
        return _impl.backward_input_s1(gy, w)
    return _impl.backward_input_s2(gy, w)


def conv2d_backward_weight(gy, x, kh, kw, stride=1):
    """Gradient of conv2d_forward w.r.t. the kernel."""
    gy = _as_input(gy, "gy")
    x = _as_input(x, "x")
    _check_pair(gy, x, "gy", "x")
    if stride == 1:
        if kh % 2 == 0 or kw % 2 == 0:
            raise ValueError(f"stride-1 kernels must have odd sizes, got {kh}x{kw}")
        return _impl.backward_weight_s1(gy, x, kh, kw)
    if stride == 2:
        if kh != 2 or kw != 2:
            raise ValueError(f"stride-2 kernels must be 2x2, got {kh}x{kw}")
        return _impl.backward_weight_s2(gy, x)
    raise ValueError(f"stride must be 1 or 2, got {stride}")
