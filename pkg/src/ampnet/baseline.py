"""Classical iterative soft thresholding in the AMP form, without Onsager term."""
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class BaselineConfig:
    iterations: int = 30
    threshold: float = None  # fixed lambda; None derives it from the data
    threshold_schedule: str = "decaying"  # "fixed" | "decaying"
    threshold_scale: float = 0.5  # lambda_0 = scale * max|A^T y| when threshold is None
    decay: float = 0.9

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.threshold is not None and self.threshold < 0:
            raise ValueError("threshold must be nonnegative")
        if self.threshold_schedule not in ("fixed", "decaying"):
            raise ValueError(f"unknown threshold schedule {self.threshold_schedule!r}")


def soft_threshold(v, lam):
    return np.sign(v) * np.maximum(np.abs(v) - lam, 0.0)


def amp_baseline(A, y, cfg=BaselineConfig(), x0=None):
    """Iterate ``z = y - A x; x = soft(A^T z + x, lambda_t)``."""
    A = np.asarray(A, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if A.shape[0] != y.shape[0]:
        raise ValueError(f"A {A.shape} and y {y.shape} do not conform")
    x = np.zeros(A.shape[1]) if x0 is None else np.array(x0, dtype=np.float64)
    lam0 = cfg.threshold
    if lam0 is None:
        lam0 = cfg.threshold_scale * np.max(np.abs(A.T @ y), initial=0.0)
    for t in range(cfg.iterations):
        lam = lam0 * cfg.decay**t if cfg.threshold_schedule == "decaying" else lam0
        z = y - A @ x
        x = soft_threshold(A.T @ z + x, lam)
    return x


def nmse(estimate, truth):
    return float(np.sum((estimate - truth) ** 2) / np.sum(truth**2))


def sparse_problem(rng, N=256, M=128, k=10):
    """i.i.d. ``N(0, 1/M)`` matrix and a k-sparse Gaussian signal."""
    A = rng.standard_normal((M, N)) / np.sqrt(M)
    x = np.zeros(N)
    support = rng.choice(N, size=k, replace=False)
    x[support] = rng.standard_normal(k)
    return A, x, A @ x
