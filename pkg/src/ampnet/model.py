"""AMP-Net reconstruction: linear initialization, unrolled denoising modules,
optional whole-image deblocking.

Each module k computes, per block column ``v`` of the current estimate,

    x_k = alpha_k A^T (y - A v) + v - (alpha_k A^T A - I) N_k(v)

where ``N_k`` is a four-layer CNN estimating the residual ``x_true - v``.
Deblocking applies ``X - D_k(X)`` to the merged image. The forward pass here
is the inference path; :mod:`ampnet.training` repeats it with a tape.
"""
from dataclasses import dataclass, field

import numpy as np

from .blocking import (
    BlockGeometry,
    columns_to_images,
    devectorize,
    images_to_columns,
)
from .kernels import conv2d_backward, conv2d_forward, im2col3x3, make_rng, narrows, relu, relu_backward
from .sampling import Measurement, SamplingModel, init_sampling_matrix, ratio_to_m

VARIANTS = ("plain", "B", "M", "BM")
LAYER_CHANNELS = ((1, 32), (32, 32), (32, 32), (32, 1))


@dataclass
class ConvStack:
    """Four 3x3 conv layers; ReLU and bias on the first three only."""

    weights: list
    biases: list

    def __post_init__(self):
        if len(self.weights) != 4 or len(self.biases) != 3:
            raise ValueError("a conv stack has four kernels and three biases")
        for w, (cin, cout) in zip(self.weights, LAYER_CHANNELS):
            if w.shape != (cout, cin, 3, 3):
                raise ValueError(f"kernel shape {w.shape} != {(cout, cin, 3, 3)}")

    @classmethod
    def random(cls, rng):
        weights = [
            rng.standard_normal((cout, cin, 3, 3)) * np.sqrt(2.0 / (cin * 9))
            for cin, cout in LAYER_CHANNELS
        ]
        biases = [np.zeros(cout) for _, cout in LAYER_CHANNELS[:3]]
        return cls(weights, biases)

    @classmethod
    def zeros(cls):
        return cls(
            [np.zeros((cout, cin, 3, 3)) for cin, cout in LAYER_CHANNELS],
            [np.zeros(cout) for _, cout in LAYER_CHANNELS[:3]],
        )

    def named_arrays(self, prefix):
        out = {}
        for j, w in enumerate(self.weights, 1):
            out[f"{prefix}.conv{j}.weight"] = w
            if j <= 3:
                out[f"{prefix}.conv{j}.bias"] = self.biases[j - 1]
        return out

    def num_params(self):
        return sum(w.size for w in self.weights) + sum(b.size for b in self.biases)

    def copy(self):
        return ConvStack([w.copy() for w in self.weights], [b.copy() for b in self.biases])


def stack_forward(stack, x, keep=False, cache_budget=None):
    """Run a conv stack on ``(1, N, H, W)``.

    With ``keep`` also returns a cache for :func:`stack_backward`: the input
    of every layer, plus its im2col columns while ``cache_budget`` (a
    one-element list of remaining bytes) allows.
    """
    inputs, cols = [], []
    h = x
    for j in range(4):
        c = None
        if keep:
            inputs.append(h)
            if not narrows(stack.weights[j]):
                c = im2col3x3(np.ascontiguousarray(h))
            if c is not None and cache_budget is not None and c.nbytes <= cache_budget[0]:
                cache_budget[0] -= c.nbytes
                cols.append(c)
            else:
                cols.append(None)
        bias = stack.biases[j] if j < 3 else None
        h = conv2d_forward(h, stack.weights[j], bias, cols=c)
        if j < 3:
            h = relu(h)
    return (h, (inputs, cols)) if keep else h


def stack_backward(stack, grad_out, cache, need_input_grad=True):
    """Reverse of :func:`stack_forward`; returns ``(grad_x, grad_weights, grad_biases)``."""
    inputs, cols = cache
    gw = [None] * 4
    gb = [None] * 3
    g = grad_out
    for j in (3, 2, 1, 0):
        want = need_input_grad or j > 0
        gin, gw[j], gbias = conv2d_backward(
            g, inputs[j], stack.weights[j], need_input_grad=want, cols=cols[j]
        )
        if j < 3:
            gb[j] = gbias
        if j > 0:
            # inputs[j] is the ReLU output of layer j-1; it is > 0 exactly where its input was
            g = relu_backward(gin, inputs[j])
        else:
            g = gin
    return g, gw, gb


@dataclass
class AmpNetModel:
    sampling: SamplingModel
    B: np.ndarray  # (n*n, M)
    alphas: np.ndarray  # (K,)
    denoisers: list
    deblockers: list = None
    variant: str = "plain"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        K = len(self.denoisers)
        if K < 1:
            raise ValueError("need at least one denoising module")
        self.alphas = np.asarray(self.alphas, dtype=np.float64).reshape(K)
        if self.has_deblocker != (self.deblockers is not None):
            raise ValueError(f"variant {self.variant!r} and deblocker presence disagree")
        if self.deblockers is not None and len(self.deblockers) != K:
            raise ValueError(f"{len(self.deblockers)} deblockers for {K} modules")
        self.sampling.trainable = "M" in self.variant
        n2, M = self.n * self.n, self.sampling.M
        if self.B.shape != (n2, M):
            raise ValueError(f"B has shape {self.B.shape}, expected {(n2, M)}")

    @property
    def K(self):
        return len(self.denoisers)

    @property
    def n(self):
        return self.sampling.n

    @property
    def M(self):
        return self.sampling.M

    @property
    def A(self):
        return self.sampling.A

    @property
    def has_deblocker(self):
        return "B" in self.variant

    def arrays(self, trainable_only=False):
        """Named parameter arrays (live views) in a fixed order."""
        out = {}
        if not trainable_only or self.sampling.trainable:
            out["A"] = self.sampling.A
        out["B"] = self.B
        for k in range(self.K):
            out[f"alpha{k + 1}"] = self.alphas[k:k + 1]
        for k, stack in enumerate(self.denoisers, 1):
            out.update(stack.named_arrays(f"denoiser{k}"))
        if self.deblockers is not None:
            for k, stack in enumerate(self.deblockers, 1):
                out.update(stack.named_arrays(f"deblocker{k}"))
        return out

    def parameters(self):
        return self.arrays(trainable_only=True)

    def copy(self):
        return AmpNetModel(
            SamplingModel(self.A.copy(), self.n, self.sampling.ratio, self.sampling.trainable),
            self.B.copy(),
            self.alphas.copy(),
            [s.copy() for s in self.denoisers],
            None if self.deblockers is None else [s.copy() for s in self.deblockers],
            self.variant,
            dict(self.meta),
        )


def build_model(K=9, n=33, ratio=0.25, variant="plain", seed=0, zero_cnn=False):
    """Fresh model: orthonormal Gaussian A, B = A^T, alpha = 1, He-initialized CNNs.

    A depends only on ``(seed, n, ratio)``, so every variant and K built with
    the same seed share the initial sampling matrix.
    """
    a_seq, cnn_seq = np.random.SeedSequence(seed).spawn(2)
    M = ratio_to_m(ratio, n)
    sampling = init_sampling_matrix(make_rng(a_seq), M, n, ratio=ratio)
    rng = make_rng(cnn_seq)
    make = (lambda: ConvStack.zeros()) if zero_cnn else (lambda: ConvStack.random(rng))
    denoisers = [make() for _ in range(K)]
    deblockers = [make() for _ in range(K)] if "B" in variant else None
    return AmpNetModel(
        sampling, sampling.A.T.copy(), np.ones(K), denoisers, deblockers, variant,
        {"seed": seed},
    )


def param_count(model, include_matrices=False):
    total = model.K + sum(s.num_params() for s in model.denoisers)
    if model.deblockers is not None:
        total += sum(s.num_params() for s in model.deblockers)
    if include_matrices:
        total += model.B.size
        if model.sampling.trainable:
            total += model.A.size
    return total


def _check_measurement(model, measurement):
    if measurement.geometry.n != model.n:
        raise ValueError(f"measurement uses n={measurement.geometry.n}, model n={model.n}")
    if measurement.Y.shape[0] != model.M:
        raise ValueError(f"measurement has {measurement.Y.shape[0]} rows, model M={model.M}")
    if measurement.Y.shape[1] % measurement.geometry.num_blocks:
        raise ValueError(
            f"measurement has {measurement.Y.shape[1]} columns, not a multiple of "
            f"{measurement.geometry.num_blocks} blocks"
        )


def _unbatch(images, measurement):
    return images[0] if measurement.Y.shape[1] == measurement.geometry.num_blocks else images


def init_estimate(model, measurement):
    """``X0 = merge(devec(B Y))``, cropped to the measured image size."""
    _check_measurement(model, measurement)
    return _unbatch(columns_to_images(model.B @ measurement.Y, measurement.geometry), measurement)


def denoiser_forward(theta, grid):
    """Apply the CNN to every block of ``grid`` independently."""
    g = grid.geometry
    out = stack_forward(theta, grid.blocks[None])
    return devectorize(out[0].reshape(g.num_blocks, -1).T, g)


def _step_columns(model, k, Y, V):
    """One denoising module on block columns ``V``; returns new columns."""
    A = model.A
    alpha = model.alphas[k - 1]
    n = model.n
    Z = Y - A @ V
    D = stack_forward(model.denoisers[k - 1], V.T.reshape(1, -1, n, n))
    D = D.reshape(-1, n * n).T
    return alpha * (A.T @ (Z - A @ D)) + V + D


def reconstruction_step(model, k, measurement, X_prev):
    """Denoising module k (1-based) applied to the estimate ``X_prev``."""
    if not 1 <= k <= model.K:
        raise ValueError(f"module index {k} outside 1..{model.K}")
    _check_measurement(model, measurement)
    g = measurement.geometry
    X_prev = np.asarray(X_prev, dtype=np.float64)
    batch = X_prev.reshape(-1, g.height, g.width)
    V = images_to_columns(batch, g)
    out = columns_to_images(_step_columns(model, k, measurement.Y, V), g)
    return out.reshape(X_prev.shape)


def deblock(omega, X):
    """``X - D(X)`` on whole images (``(L, P)`` or ``(B, L, P)``)."""
    X = np.asarray(X, dtype=np.float64)
    batch = X.reshape(-1, *X.shape[-2:])
    out = batch - stack_forward(omega, batch[None])[0]
    return out.reshape(X.shape)


def forward(model, measurement):
    """Full reconstruction: init, then K denoising (+ deblocking) modules."""
    _check_measurement(model, measurement)
    g = measurement.geometry
    Y = measurement.Y
    X = columns_to_images(model.B @ Y, g)
    for k in range(1, model.K + 1):
        V = images_to_columns(X, g)
        X = columns_to_images(_step_columns(model, k, Y, V), g)
        if model.deblockers is not None:
            X = deblock(model.deblockers[k - 1], X)
    return _unbatch(X, measurement)


def measure_batch(model, images):
    """Measure a stack ``(B, L, P)`` of same-sized images in one product."""
    images = np.asarray(images, dtype=np.float64)
    g = BlockGeometry(model.n, *images.shape[-2:])
    return Measurement(model.A @ images_to_columns(images.reshape(-1, *images.shape[-2:]), g), g)


def noise_term(A, x_true, x_est, alpha=1.0):
    """Both sides of ``alpha A^T(A x - A v) + v = x + (alpha A^T A - I)(x - v)``.

    Returns ``(lhs, rhs)``; ``rhs - x_true`` is the noise term the denoiser
    has to remove.
    """
    A = np.asarray(A, dtype=np.float64)
    x_true = np.asarray(x_true, dtype=np.float64)
    x_est = np.asarray(x_est, dtype=np.float64)
    if A.shape[1] != x_true.shape[0] or x_true.shape != x_est.shape:
        raise ValueError(f"A {A.shape}, x_true {x_true.shape}, x_est {x_est.shape} do not conform")
    lhs = alpha * (A.T @ (A @ x_true - A @ x_est)) + x_est
    d = x_true - x_est
    rhs = x_true + alpha * (A.T @ (A @ d)) - d
    return lhs, rhs
