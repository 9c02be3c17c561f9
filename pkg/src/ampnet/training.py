"""MSE loss, reverse-mode gradients through the unrolled network, Adam, fit loop.

The network shape is fixed by its config, so the backward pass walks an
explicit tape of the forward intermediates instead of a general autodiff
graph. :func:`grad_A_oracle` evaluates the closed-form sampling-matrix
gradient independently, as a cross-check for the tape on deblocker-free
models.
"""
from dataclasses import dataclass, field
import logging
import math

import numpy as np

from .blocking import (
    BlockGeometry,
    columns_to_images,
    columns_to_images_adjoint,
    images_to_columns,
    images_to_columns_adjoint,
)
from .kernels import make_rng
from .metrics import psnr
from .model import forward, init_estimate, measure_batch, stack_backward, stack_forward

log = logging.getLogger(__name__)


class NonFiniteError(FloatingPointError):
    pass


@dataclass
class TrainConfig:
    learning_rate: float = 1e-4
    batch_size: int = 32
    epochs: int = 100
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if not self.learning_rate >= 0:
            raise ValueError("learning_rate must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")


def loss(batch_truth, batch_recon):
    """Mean squared error over every pixel of every image in the batch."""
    truth = np.asarray(batch_truth, dtype=np.float64)
    recon = np.asarray(batch_recon, dtype=np.float64)
    if truth.shape != recon.shape:
        raise ValueError(f"batch shapes differ: {truth.shape} vs {recon.shape}")
    return float(np.mean((truth - recon) ** 2))


def _geometry(model, images):
    images = np.asarray(images, dtype=np.float64)
    if images.ndim == 2:
        images = images[None]
    if images.ndim != 3:
        raise ValueError(f"expected a batch (B, L, P), got shape {images.shape}")
    return images, BlockGeometry(model.n, images.shape[1], images.shape[2])


def forward_tape(model, images, cache_bytes=768 * 2**20):
    """Forward pass from ground-truth images, keeping what backward needs.

    ``cache_bytes`` bounds the im2col columns kept for the backward pass;
    layers beyond the budget recompute them.
    """
    images, g = _geometry(model, images)
    budget = [cache_bytes]
    A, n = model.A, model.n
    Xc = images_to_columns(images, g)
    Y = A @ Xc
    X = columns_to_images(model.B @ Y, g)
    steps = []
    for k in range(model.K):
        V = images_to_columns(X, g)
        Z = Y - A @ V
        D_map, d_inputs = stack_forward(
            model.denoisers[k], V.T.reshape(1, -1, n, n), keep=True, cache_budget=budget
        )
        D = D_map.reshape(-1, n * n).T
        R = Z - A @ D
        X = columns_to_images(model.alphas[k] * (A.T @ R) + V + D, g)
        b_inputs = None
        if model.deblockers is not None:
            E, b_inputs = stack_forward(model.deblockers[k], X[None], keep=True, cache_budget=budget)
            X = X - E[0]
        steps.append({"V": V, "D": D, "R": R, "d_inputs": d_inputs, "b_inputs": b_inputs})
    return {"images": images, "geometry": g, "Xc": Xc, "Y": Y, "steps": steps, "output": X}


def backward(model, images, tape=None):
    """Loss and exact gradients for every trainable array of ``model``.

    Returns ``(loss, grads)`` where ``grads`` maps the names of
    ``model.parameters()`` to arrays of the same shapes.
    """
    if tape is None:
        tape = forward_tape(model, images)
    images, g = tape["images"], tape["geometry"]
    A, n = model.A, model.n
    train_A = model.sampling.trainable
    out = tape["output"]
    value = loss(images, out)
    grads = {}
    gX = 2.0 * (out - images) / out.size
    gY = np.zeros_like(tape["Y"])
    gA = np.zeros_like(A) if train_A else None
    for k in reversed(range(model.K)):
        st = tape["steps"][k]
        alpha = model.alphas[k]
        if model.deblockers is not None:
            gE = -gX[None]
            g_in, gw, gb = stack_backward(model.deblockers[k], gE, st["b_inputs"])
            grads.update(_stack_grads(f"deblocker{k + 1}", gw, gb))
            gX = gX + g_in[0]
        u = columns_to_images_adjoint(gX, g)
        Au = A @ u
        grads[f"alpha{k + 1}"] = np.array([np.sum(Au * st["R"])])
        gR = alpha * Au
        AtgR = A.T @ gR
        gD = u - AtgR
        gV = u - AtgR  # Z = R + A D, so dL/dZ = dL/dR
        gY += gR
        if train_A:
            gA += alpha * (st["R"] @ u.T) - gR @ (st["D"] + st["V"]).T
        g_blocks, gw, gb = stack_backward(
            model.denoisers[k], gD.T.reshape(1, -1, n, n), st["d_inputs"]
        )
        grads.update(_stack_grads(f"denoiser{k + 1}", gw, gb))
        gV += g_blocks.reshape(-1, n * n).T
        gX = images_to_columns_adjoint(gV, g)
    g0 = columns_to_images_adjoint(gX, g)
    grads["B"] = g0 @ tape["Y"].T
    gY += model.B.T @ g0
    if train_A:
        gA += gY @ tape["Xc"].T
        grads["A"] = gA
    params = model.parameters()
    ordered = {}
    for name, p in params.items():
        gr = grads[name]
        if not np.all(np.isfinite(gr)):
            raise NonFiniteError(f"non-finite gradient for {name}")
        ordered[name] = gr.reshape(p.shape)
    if not math.isfinite(value):
        raise NonFiniteError("non-finite loss")
    return value, ordered


def _stack_grads(prefix, gw, gb):
    out = {}
    for j in range(4):
        out[f"{prefix}.conv{j + 1}.weight"] = gw[j]
        if j < 3:
            out[f"{prefix}.conv{j + 1}.bias"] = gb[j]
    return out


def grad_A_oracle(model, images, upstream=None):
    """Closed-form gradient of the loss w.r.t. A for deblocker-free models.

    Per block, with ``g_k`` the gradient w.r.t. the block estimate ``x_k``:

        sampling part:       B^T g_0 x_true^T
        module k part:       alpha_k A (g_k xh^T + xh g_k^T),
                             xh = x_true - x_{k-1} - N_k(x_{k-1})
        recursion:           g_{k-1} = (I + J_k)^T (I - alpha_k A^T A) g_k

    where ``J_k`` is the Jacobian of the block CNN, applied through its
    backward pass. ``upstream`` may supply ``[g_0, ..., g_K]`` as block
    columns; otherwise they are computed with the recursion above.
    """
    if model.deblockers is not None:
        raise ValueError("the closed-form A gradient only covers models without deblocking")
    images, g = _geometry(model, images)
    if g.padded_shape != (g.height, g.width):
        raise ValueError("the closed-form A gradient needs image sides divisible by n")
    A, B, n = model.A, model.B, model.n
    x_true = images_to_columns(images, g)
    xs = [B @ (A @ x_true)]
    nets = []
    for k in range(model.K):
        v = xs[-1]
        Nmap, inputs = stack_forward(model.denoisers[k], v.T.reshape(1, -1, n, n), keep=True)
        Nv = Nmap.reshape(-1, n * n).T
        nets.append((Nv, inputs))
        xh = x_true - v - Nv
        xs.append(v + Nv + model.alphas[k] * (A.T @ (A @ xh)))
    if upstream is None:
        count = images.size
        gk = 2.0 * (xs[-1] - x_true) / count
        upstream = [None] * (model.K + 1)
        upstream[model.K] = gk
        for k in reversed(range(model.K)):
            h = gk - model.alphas[k] * (A.T @ (A @ gk))
            jt, _, _ = stack_backward(model.denoisers[k], h.T.reshape(1, -1, n, n), nets[k][1])
            gk = h + jt.reshape(-1, n * n).T
            upstream[k] = gk
    grad = B.T @ upstream[0] @ x_true.T
    for k in range(model.K):
        xh = x_true - xs[k] - nets[k][0]
        gk = upstream[k + 1]
        grad += model.alphas[k] * (A @ (gk @ xh.T + xh @ gk.T))
    return grad


@dataclass
class AdamState:
    m: dict
    v: dict
    t: int = 0

    @classmethod
    def for_params(cls, params):
        return cls({k: np.zeros_like(p) for k, p in params.items()},
                   {k: np.zeros_like(p) for k, p in params.items()})


def adam_step(params, grads, state, cfg):
    """In-place Adam update of ``params`` with bias correction."""
    state.t += 1
    lr, b1, b2 = cfg.learning_rate, cfg.beta1, cfg.beta2
    c1 = 1 - b1**state.t
    c2 = 1 - b2**state.t
    for name, p in params.items():
        gr = grads[name]
        if gr.shape != p.shape:
            raise ValueError(f"gradient for {name} has shape {gr.shape}, parameter {p.shape}")
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1 - b1) * gr
        v *= b2
        v += (1 - b2) * gr * gr
        p -= lr * (m / c1) / (np.sqrt(v / c2) + cfg.eps)
    return params, state


def reconstruct_batch(model, images, chunk=64):
    """Sample and reconstruct a stack of ground-truth images."""
    images, _ = _geometry(model, images)
    outs = []
    for i in range(0, len(images), chunk):
        part = images[i:i + chunk]
        outs.append(forward(model, measure_batch(model, part)).reshape(part.shape))
    return np.concatenate(outs)


def init_only_batch(model, images, chunk=256):
    """Initialization-module output ``merge(B A x)`` for a stack of images."""
    images, _ = _geometry(model, images)
    outs = []
    for i in range(0, len(images), chunk):
        part = images[i:i + chunk]
        outs.append(init_estimate(model, measure_batch(model, part)).reshape(part.shape))
    return np.concatenate(outs)


def mean_psnr(truth, recon):
    return float(np.mean([psnr(t, r) for t, r in zip(truth, recon)]))


@dataclass
class History:
    records: list = field(default_factory=list)

    def add(self, **rec):
        self.records.append(rec)

    def column(self, key):
        return [r[key] for r in self.records]


def fit(model, train_set, val_set, cfg, log_path=None, on_epoch=None):
    """Mini-batch Adam training; returns ``(best_model, history)``.

    Validation PSNR is measured before training (epoch 0) and after every
    epoch; the snapshot with the highest validation PSNR is returned.
    Non-finite losses abort with :class:`NonFiniteError` naming the epoch
    and batch.
    """
    train_set = np.asarray(train_set, dtype=np.float64)
    val_set = np.asarray(val_set, dtype=np.float64)
    if len(train_set) == 0 or len(val_set) == 0:
        raise ValueError("training and validation sets must be non-empty")
    rng = make_rng(np.random.SeedSequence(cfg.seed).spawn(3)[2])
    params = model.parameters()
    state = AdamState.for_params(params)
    history = History()
    best_psnr = mean_psnr(val_set, reconstruct_batch(model, val_set))
    best = model.copy()
    history.add(epoch=0, train_loss=None, val_psnr=best_psnr)
    _emit(log_path, history.records[-1], mode="w")
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(len(train_set))
        total, count = 0.0, 0
        for b, start in enumerate(range(0, len(order), cfg.batch_size)):
            batch = train_set[order[start:start + cfg.batch_size]]
            try:
                value, grads = backward(model, batch)
            except NonFiniteError as exc:
                raise NonFiniteError(f"epoch {epoch}, batch {b}: {exc}") from exc
            adam_step(params, grads, state, cfg)
            total += value * len(batch)
            count += len(batch)
        val = mean_psnr(val_set, reconstruct_batch(model, val_set))
        history.add(epoch=epoch, train_loss=total / count, val_psnr=val)
        _emit(log_path, history.records[-1])
        log.info("epoch %d loss %.6g val psnr %.3f", epoch, total / count, val)
        if val > best_psnr:
            best_psnr = val
            best = model.copy()
        if on_epoch is not None:
            on_epoch(epoch, model, history)
    best.meta.update(epoch=int(np.argmax(history.column("val_psnr"))), val_psnr=best_psnr, seed=cfg.seed)
    return best, history


def _emit(path, record, mode="a"):
    if path is None:
        return
    loss_txt = "nan" if record["train_loss"] is None else repr(record["train_loss"])
    with open(path, mode) as fh:
        fh.write(f"epoch={record['epoch']} train_loss={loss_txt} val_psnr={record['val_psnr']!r}\n")
