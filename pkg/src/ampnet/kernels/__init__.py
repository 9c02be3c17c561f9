"""Dense numeric primitives: checked matmul, 3x3 convolution, ReLU, seeded RNG.

Feature maps use a channel-major batch layout ``(C, N, H, W)``. A single map
``(C, H, W)`` is accepted and treated as ``N = 1``. With one channel the
layout coincides with ``(N, 1, H, W)``, so images enter and leave a CNN with
a plain reshape.

The im2col gather and col2im scatter come from the compiled ``_cconv``
extension when it is importable, otherwise from the NumPy fallback. Set
``AMPNET_PURE_PYTHON=1`` to force the fallback. ``BACKEND`` names the one in
use.

Random numbers come from NumPy's PCG64 bit generator (O'Neill 2014, 128-bit
LCG state with a 64-bit permuted output) and normals from NumPy's ziggurat
sampler; both are stable across platforms for a given seed.
"""
import os

import numpy as np

from . import _numpy_backend

if os.environ.get("AMPNET_PURE_PYTHON"):
    _impl = _numpy_backend
    BACKEND = "numpy"
else:
    try:
        from . import _cconv as _impl
        BACKEND = "cython"
    except ImportError:
        _impl = _numpy_backend
        BACKEND = "numpy"

__all__ = [
    "BACKEND",
    "matmul",
    "conv2d_forward",
    "conv2d_backward",
    "narrows",
    "relu",
    "relu_backward",
    "make_rng",
    "gaussian_matrix",
    "im2col3x3",
    "col2im3x3",
]

im2col3x3 = _impl.im2col3x3
col2im3x3 = _impl.col2im3x3


def matmul(a, b):
    """Matrix product that names both shapes when they do not conform."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ValueError(f"cannot multiply {a.shape} by {b.shape}")
    return a @ b


def _as_batch(x):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 3:
        return np.ascontiguousarray(x[:, None]), True
    if x.ndim != 4:
        raise ValueError(f"feature map must be (C, H, W) or (C, N, H, W), got {x.shape}")
    return np.ascontiguousarray(x), False


def narrows(weight):
    """True when a layer has fewer outputs than inputs.

    Such layers contract channels before touching the 3x3 neighbourhood, so
    they never materialize the wide ``(C_in*9, N*H*W)`` column matrix.
    """
    return weight.shape[0] < weight.shape[1]


def _flipped(weight):
    """Kernel with taps reversed, laid out ``(C_out*9, C_in)``."""
    cout, cin = weight.shape[:2]
    return np.ascontiguousarray(
        weight[:, :, ::-1, ::-1].reshape(cout, cin, 9).transpose(0, 2, 1)
    ).reshape(cout * 9, cin)


def conv2d_forward(x, weight, bias=None, cols=None):
    """3x3 same-size convolution (cross-correlation), stride 1, zero padding 1.

    ``weight`` is ``(C_out, C_in, 3, 3)``; ``bias`` is ``(C_out,)`` or None.
    ``cols`` may pass a precomputed ``im2col3x3`` of ``x``; it is ignored for
    narrowing layers.
    """
    xb, single = _as_batch(x)
    weight = np.asarray(weight, dtype=np.float64)
    if weight.ndim != 4 or weight.shape[2:] != (3, 3):
        raise ValueError(f"kernel must be (C_out, C_in, 3, 3), got {weight.shape}")
    C, N, H, W = xb.shape
    Cout = weight.shape[0]
    if weight.shape[1] != C:
        raise ValueError(f"input has {C} channels but the kernel expects {weight.shape[1]}")
    if narrows(weight):
        out = col2im3x3(_flipped(weight) @ xb.reshape(C, -1), Cout, N, H, W).reshape(Cout, -1)
    else:
        if cols is None:
            cols = im2col3x3(xb)
        out = weight.reshape(Cout, -1) @ cols
    if bias is not None:
        out += np.asarray(bias, dtype=np.float64)[:, None]
    out = out.reshape(Cout, N, H, W)
    return out[:, 0] if single else out


def conv2d_backward(grad_out, x, weight, need_input_grad=True, cols=None):
    """Gradients of a scalar loss through :func:`conv2d_forward`.

    Returns ``(grad_input, grad_weight, grad_bias)``. ``grad_input`` is None
    when ``need_input_grad`` is false. When ``C_out <= C_in`` the input
    gradient is a convolution of ``grad_out`` with the flipped, transposed
    kernel; otherwise it is scattered back with col2im.
    """
    xb, single = _as_batch(x)
    gb, _ = _as_batch(grad_out)
    weight = np.asarray(weight, dtype=np.float64)
    C, N, H, W = xb.shape
    Cout = weight.shape[0]
    if weight.shape[1] != C:
        raise ValueError(f"input has {C} channels but the kernel expects {weight.shape[1]}")
    if gb.shape != (Cout, N, H, W):
        raise ValueError(f"grad_out shape {gb.shape} does not match output {(Cout, N, H, W)}")
    g = gb.reshape(Cout, -1)
    gcols = None
    if narrows(weight):
        gcols = im2col3x3(gb)
        # rows of gcols are (o, flipped tap)
        gw = (gcols @ xb.reshape(C, -1).T).reshape(Cout, 9, C)[:, ::-1]
        grad_weight = np.ascontiguousarray(gw.transpose(0, 2, 1)).reshape(weight.shape)
    else:
        if cols is None:
            cols = im2col3x3(xb)
        grad_weight = (g @ cols.T).reshape(weight.shape)
    grad_bias = g.sum(axis=1)
    grad_input = None
    if need_input_grad:
        if Cout <= C:
            if gcols is None:
                gcols = im2col3x3(gb)
            flipped = np.ascontiguousarray(weight[:, :, ::-1, ::-1].transpose(1, 0, 2, 3))
            grad_input = (flipped.reshape(C, -1) @ gcols).reshape(C, N, H, W)
        else:
            grad_input = col2im3x3(weight.reshape(Cout, -1).T @ g, C, N, H, W)
        if single:
            grad_input = grad_input[:, 0]
    return grad_input, grad_weight, grad_bias


def relu(x):
    return np.maximum(x, 0.0)


def relu_backward(grad, cached_input):
    """Pass ``grad`` where the forward input was strictly positive."""
    if cached_input is None:
        raise ValueError("relu backward needs the cached forward input")
    grad = np.asarray(grad, dtype=np.float64)
    if grad.shape != np.shape(cached_input):
        raise ValueError(f"grad shape {grad.shape} != cached shape {np.shape(cached_input)}")
    return grad * (cached_input > 0)


def make_rng(seed):
    return np.random.Generator(np.random.PCG64(seed))


def gaussian_matrix(rng, rows, cols, variance):
    """i.i.d. N(0, variance) entries."""
    if not variance > 0:
        raise ValueError(f"variance must be positive, got {variance}")
    return rng.standard_normal((rows, cols)) * np.sqrt(variance)
