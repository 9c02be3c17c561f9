"""MSE, PSNR and SSIM on [0, 1] images.

SSIM uses the Gaussian-window formulation of Wang et al. (2004): 11x11
window, sigma 1.5, K1 = 0.01, K2 = 0.03, data range 1, averaged over all
window positions that fit inside the image (no padding).
"""
from dataclasses import dataclass
import math

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

WINDOW = 11
SIGMA = 1.5
K1, K2 = 0.01, 0.03


@dataclass(frozen=True)
class QualityReport:
    mse: float
    psnr: float
    ssim: float


def _pair(truth, estimate):
    truth = np.asarray(truth, dtype=np.float64)
    estimate = np.asarray(estimate, dtype=np.float64)
    if truth.shape != estimate.shape:
        raise ValueError(f"image shapes differ: {truth.shape} vs {estimate.shape}")
    return truth, estimate


def mse(truth, estimate):
    truth, estimate = _pair(truth, estimate)
    return float(np.mean((truth - estimate) ** 2))


def psnr(truth, estimate, peak=1.0):
    if not peak > 0:
        raise ValueError("peak must be positive")
    err = mse(truth, estimate)
    if err == 0:
        return math.inf
    return 20 * math.log10(peak) - 10 * math.log10(err)


def gaussian_window(size=WINDOW, sigma=SIGMA):
    ax = np.arange(size) - (size - 1) / 2
    g = np.exp(-(ax**2) / (2 * sigma**2))
    g /= g.sum()
    return np.outer(g, g)


def ssim(truth, estimate, data_range=1.0):
    truth, estimate = _pair(truth, estimate)
    if truth.ndim != 2 or min(truth.shape) < WINDOW:
        raise ValueError(f"SSIM needs a 2-D image of at least {WINDOW}x{WINDOW}, got {truth.shape}")
    w = gaussian_window()

    def filt(img):
        return np.tensordot(sliding_window_view(img, w.shape), w, axes=2)

    c1 = (K1 * data_range) ** 2
    c2 = (K2 * data_range) ** 2
    mx, my = filt(truth), filt(estimate)
    sxx = filt(truth * truth) - mx * mx
    syy = filt(estimate * estimate) - my * my
    sxy = filt(truth * estimate) - mx * my
    num = (2 * mx * my + c1) * (2 * sxy + c2)
    den = (mx * mx + my * my + c1) * (sxx + syy + c2)
    return float(np.mean(num / den))


def quality(truth, estimate, peak=1.0):
    return QualityReport(mse(truth, estimate), psnr(truth, estimate, peak), ssim(truth, estimate))
