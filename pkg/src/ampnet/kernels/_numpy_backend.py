"""Pure NumPy gather/scatter for 3x3, stride-1, zero-pad-1 convolution.

Same contract as the compiled ``_cconv`` module; used when the extension is
not built or ``AMPNET_PURE_PYTHON`` is set.
"""
import numpy as np


def im2col3x3(x):
    C, N, H, W = x.shape
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    cols = np.empty((C, 3, 3, N, H, W))
    for dy in range(3):
        for dx in range(3):
            cols[:, dy, dx] = xp[:, :, dy:dy + H, dx:dx + W]
    return cols.reshape(C * 9, N * H * W)


def col2im3x3(cols, C, N, H, W):
    if cols.shape != (C * 9, N * H * W):
        raise ValueError(
            f"columns of shape {cols.shape} do not match feature map {(C, N, H, W)}"
        )
    g = cols.reshape(C, 3, 3, N, H, W)
    out = np.zeros((C, N, H + 2, W + 2))
    for dy in range(3):
        for dx in range(3):
            out[:, :, dy:dy + H, dx:dx + W] += g[:, dy, dx]
    return np.ascontiguousarray(out[:, :, 1:-1, 1:-1])
