"""Splitting images into n x n blocks, merging them back, and (de)vectorizing.

Blocks are ordered row-major over the block grid and flattened row-major
within a block. Images whose sides are not multiples of ``n`` are
reflect-padded on the right/bottom; merging crops the padding again. Every
function here only moves values around, so round trips are bit-exact.
"""
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class BlockGeometry:
    n: int
    height: int
    width: int

    def __post_init__(self):
        if self.n < 1:
            raise ValueError(f"block size must be >= 1, got {self.n}")
        if self.height < 1 or self.width < 1:
            raise ValueError(f"image must be non-empty, got {self.height}x{self.width}")

    @property
    def blocks_per_col(self):
        return -(-self.height // self.n)

    @property
    def blocks_per_row(self):
        return -(-self.width // self.n)

    @property
    def num_blocks(self):
        return self.blocks_per_col * self.blocks_per_row

    @property
    def padded_shape(self):
        return self.blocks_per_col * self.n, self.blocks_per_row * self.n

    @property
    def pad(self):
        """Per-side padding as (top, bottom, left, right)."""
        ph, pw = self.padded_shape
        return 0, ph - self.height, 0, pw - self.width

    def row_index(self):
        return _reflect_index(self.height, self.padded_shape[0])

    def col_index(self):
        return _reflect_index(self.width, self.padded_shape[1])


@dataclass(frozen=True)
class BlockGrid:
    geometry: BlockGeometry
    blocks: np.ndarray  # (num_blocks, n, n)

    def __post_init__(self):
        g = self.geometry
        if self.blocks.shape != (g.num_blocks, g.n, g.n):
            raise ValueError(
                f"grid holds blocks of shape {self.blocks.shape}, geometry "
                f"{g.height}x{g.width} with n={g.n} needs {(g.num_blocks, g.n, g.n)}"
            )

    @property
    def n(self):
        return self.geometry.n


def _reflect_index(size, padded):
    idx = np.arange(padded)
    if size == 1:
        return np.zeros(padded, dtype=np.intp)
    period = 2 * (size - 1)
    idx = idx % period
    return np.where(idx < size, idx, period - idx)


def pad_images(images, geometry):
    """Reflect-pad a stack ``(..., L, P)`` up to the block-aligned shape."""
    ph, pw = geometry.padded_shape
    if (ph, pw) == (geometry.height, geometry.width):
        return images
    return images[..., geometry.row_index()[:, None], geometry.col_index()[None, :]]


def pad_images_adjoint(grad_padded, geometry):
    """Adjoint of :func:`pad_images`: fold padded gradients onto their sources."""
    ph, pw = geometry.padded_shape
    if (ph, pw) == (geometry.height, geometry.width):
        return grad_padded
    L, P = geometry.height, geometry.width
    rows = geometry.row_index()
    cols = geometry.col_index()
    tmp = grad_padded[..., :, :P].copy()
    for j in range(P, pw):
        tmp[..., :, cols[j]] += grad_padded[..., :, j]
    out = tmp[..., :L, :].copy()
    for i in range(L, ph):
        out[..., rows[i], :] += tmp[..., i, :]
    return out


def images_to_columns(images, geometry):
    """Stack ``(B, L, P)`` -> columns ``(n*n, B*I)``, image-major then block order."""
    images = np.asarray(images, dtype=np.float64)
    n = geometry.n
    bh, bw = geometry.blocks_per_col, geometry.blocks_per_row
    padded = pad_images(images, geometry)
    b = padded.shape[0]
    blocks = padded.reshape(b, bh, n, bw, n).transpose(0, 1, 3, 2, 4)
    return blocks.reshape(b * bh * bw, n * n).T.copy()


def columns_to_images(columns, geometry):
    """Inverse of :func:`images_to_columns`; crops padding."""
    n = geometry.n
    bh, bw = geometry.blocks_per_col, geometry.blocks_per_row
    if columns.shape[0] != n * n or columns.shape[1] % (bh * bw):
        raise ValueError(
            f"columns of shape {columns.shape} do not fit n={n} with {bh * bw} blocks per image"
        )
    b = columns.shape[1] // (bh * bw)
    img = columns.T.reshape(b, bh, bw, n, n).transpose(0, 1, 3, 2, 4).reshape(b, bh * n, bw * n)
    return np.ascontiguousarray(img[:, : geometry.height, : geometry.width])


def columns_to_images_adjoint(grad_images, geometry):
    """Adjoint of :func:`columns_to_images`: zero-fill the cropped padding."""
    ph, pw = geometry.padded_shape
    b = grad_images.shape[0]
    full = np.zeros((b, ph, pw))
    full[:, : geometry.height, : geometry.width] = grad_images
    n = geometry.n
    bh, bw = geometry.blocks_per_col, geometry.blocks_per_row
    return full.reshape(b, bh, n, bw, n).transpose(0, 1, 3, 2, 4).reshape(-1, n * n).T.copy()


def images_to_columns_adjoint(grad_columns, geometry):
    """Adjoint of :func:`images_to_columns`."""
    n = geometry.n
    bh, bw = geometry.blocks_per_col, geometry.blocks_per_row
    b = grad_columns.shape[1] // (bh * bw)
    padded = grad_columns.T.reshape(b, bh, bw, n, n).transpose(0, 1, 3, 2, 4).reshape(b, bh * n, bw * n)
    return pad_images_adjoint(padded, geometry)


def split(image, n):
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 2 or image.size == 0:
        raise ValueError(f"expected a non-empty 2-D image, got shape {image.shape}")
    geometry = BlockGeometry(n, *image.shape)
    cols = images_to_columns(image[None], geometry)
    return BlockGrid(geometry, cols.T.reshape(-1, n, n).copy())


def merge(grid, n=None):
    if n is not None and n != grid.n:
        raise ValueError(f"grid was split with n={grid.n}, asked to merge with n={n}")
    g = grid.geometry
    if grid.blocks.shape != (g.num_blocks, g.n, g.n):
        raise ValueError(f"grid of {grid.blocks.shape[0]} blocks disagrees with {g}")
    return columns_to_images(grid.blocks.reshape(g.num_blocks, -1).T, g)[0]


def vectorize(grid):
    """Columns ``(n*n, I)``, column i holding block i flattened row-major."""
    return grid.blocks.reshape(grid.geometry.num_blocks, -1).T.copy()


def devectorize(columns, geometry):
    columns = np.asarray(columns, dtype=np.float64)
    n = geometry.n
    if columns.shape != (n * n, geometry.num_blocks):
        raise ValueError(
            f"columns of shape {columns.shape} do not match n={n} with "
            f"{geometry.num_blocks} blocks (expected {(n * n, geometry.num_blocks)})"
        )
    return BlockGrid(geometry, columns.T.reshape(-1, n, n).copy())
