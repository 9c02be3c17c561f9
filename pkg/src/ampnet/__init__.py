"""Block compressive sensing with AMP-Net: sampling, unrolled denoising
reconstruction, learned deblocking, and a trainable sampling matrix."""
__version__ = "0.1.0"

from .blocking import BlockGeometry, BlockGrid, devectorize, merge, split, vectorize
from .kernels import BACKEND
from .metrics import psnr, ssim
from .model import AmpNetModel, build_model, forward, param_count
from .sampling import SamplingModel, init_sampling_matrix, measure, ratio_to_m

__all__ = [
    "BACKEND",
    "AmpNetModel",
    "BlockGeometry",
    "BlockGrid",
    "SamplingModel",
    "build_model",
    "devectorize",
    "forward",
    "init_sampling_matrix",
    "measure",
    "merge",
    "param_count",
    "psnr",
    "ratio_to_m",
    "split",
    "ssim",
    "vectorize",
]
