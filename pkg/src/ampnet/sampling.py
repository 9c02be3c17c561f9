"""Block-wise linear sampling ``Y = A vec(split(X, n))`` with one shared matrix."""
from dataclasses import dataclass

import numpy as np

from .blocking import BlockGeometry, images_to_columns
from .kernels import gaussian_matrix, matmul


@dataclass
class SamplingModel:
    A: np.ndarray  # (M, n*n)
    n: int
    ratio: float
    trainable: bool = False

    def __post_init__(self):
        self.A = np.asarray(self.A, dtype=np.float64)
        if self.A.shape[1] != self.n * self.n:
            raise ValueError(f"A has {self.A.shape[1]} columns, block size {self.n} needs {self.n * self.n}")
        if not np.all(np.isfinite(self.A)):
            raise ValueError("sampling matrix has non-finite entries")

    @property
    def M(self):
        return self.A.shape[0]


@dataclass(frozen=True)
class Measurement:
    Y: np.ndarray  # (M, I) for one image, (M, B*I) for a batch
    geometry: BlockGeometry


def ratio_to_m(ratio, n):
    """Measurements per block: ``round(ratio * n^2)``, at least 1."""
    if not 0 < ratio <= 1:
        raise ValueError(f"CS ratio must lie in (0, 1], got {ratio}")
    return max(1, int(round(ratio * n * n)))


def orthonormalize_rows(A):
    """Row-orthonormal basis of A's row space via QR of A^T, diag(R) >= 0."""
    q, r = np.linalg.qr(A.T)
    signs = np.where(np.diag(r) < 0, -1.0, 1.0)
    return (q * signs).T.copy()


def init_sampling_matrix(rng, M, n, ratio=None, trainable=False, orthonormalize=True):
    """Gaussian ``N(0, 1/M)`` matrix, rows orthonormalized unless told otherwise.

    ``orthonormalize=False`` exposes the raw i.i.d. draw used by the classical
    AMP noise analysis.
    """
    if not 1 <= M <= n * n:
        raise ValueError(f"need 1 <= M <= n^2 = {n * n}, got M={M}")
    A = gaussian_matrix(rng, M, n * n, 1.0 / M)
    if orthonormalize:
        A = orthonormalize_rows(A)
    if ratio is None:
        ratio = M / (n * n)
    return SamplingModel(A, n, ratio, trainable)


def measure(model, image):
    image = np.asarray(image, dtype=np.float64)
    geometry = BlockGeometry(model.n, *image.shape)
    cols = images_to_columns(image[None], geometry)
    return Measurement(matmul(model.A, cols), geometry)


def residual(model, measurement, image):
    """``Z = Y - A vec(split(X, n))``."""
    image = np.asarray(image, dtype=np.float64)
    geometry = BlockGeometry(model.n, *image.shape)
    if geometry != measurement.geometry:
        raise ValueError(f"image geometry {geometry} does not match measurement {measurement.geometry}")
    return measurement.Y - matmul(model.A, images_to_columns(image[None], geometry))
