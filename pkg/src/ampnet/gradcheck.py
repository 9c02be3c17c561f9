"""Finite-difference and closed-form checks of the reverse pass.

Central differences are only meaningful when no ReLU switches sign inside
the stencil, so every probe compares the activation pattern at both ends and
draws a fresh direction if it changed.
"""
import numpy as np

from .kernels import make_rng
from .model import build_model
from .training import backward, forward_tape, grad_A_oracle, loss


def perturbed_model(K=2, n=8, ratio=0.25, variant="BM", seed=0):
    """Small model moved off its symmetric initialization.

    At ``alpha = 1`` with orthonormal A and ``B = A^T`` several gradients are
    exactly zero, which makes relative errors meaningless.
    """
    model = build_model(K=K, n=n, ratio=ratio, variant=variant, seed=seed)
    rng = make_rng(np.random.SeedSequence(seed).spawn(4)[3])
    model.sampling.A += 0.05 * rng.standard_normal(model.A.shape)
    model.B += 0.05 * rng.standard_normal(model.B.shape)
    model.alphas[:] = rng.uniform(0.6, 1.4, size=model.K)
    stacks = model.denoisers + (model.deblockers or [])
    for s in stacks:
        for b in s.biases:
            b += 0.05 * rng.standard_normal(b.shape)
        s.weights[-1] *= 0.3
    return model


def _pattern(model, images):
    tape = forward_tape(model, images, cache_bytes=0)
    bits = []
    for st in tape["steps"]:
        for key in ("d_inputs", "b_inputs"):
            if st[key] is not None:
                bits.extend((a > 0).ravel() for a in st[key][0][1:])
    return loss(tape["images"], tape["output"]), np.concatenate(bits)


def finite_difference_check(model, images, step=1e-5, probes=2, seed=0, max_redraws=20):
    """Max relative error between backward and central differences, per leaf.

    Each leaf gets ``probes`` random unit directions plus the coordinate of
    its largest-magnitude gradient entry.
    """
    images = np.asarray(images, dtype=np.float64)
    _, grads = backward(model, images)
    rng = make_rng(seed)
    results = {}
    for name, p in model.parameters().items():
        g = grads[name]
        directions = []
        for _ in range(probes):
            d = rng.standard_normal(p.shape)
            directions.append(d / np.linalg.norm(d))
        e = np.zeros(p.shape)
        e.flat[np.argmax(np.abs(g))] = 1.0
        directions.append(e)
        worst = 0.0
        for d in directions:
            for _ in range(max_redraws):
                p += step * d
                lp, pat_p = _pattern(model, images)
                p -= 2 * step * d
                lm, pat_m = _pattern(model, images)
                p += step * d
                if np.array_equal(pat_p, pat_m):
                    break
                d = rng.standard_normal(p.shape)
                d /= np.linalg.norm(d)
            else:
                raise RuntimeError(f"{name}: every probe crossed a ReLU kink")
            fd = (lp - lm) / (2 * step)
            an = float(np.sum(g * d))
            denom = max(abs(fd), abs(an))
            worst = max(worst, abs(fd - an) / denom if denom > 0 else 0.0)
        results[name] = worst
    return results


def oracle_check(model, images):
    """Max abs difference between the taped and closed-form A gradients."""
    if not model.sampling.trainable:
        raise ValueError("the A gradient is only computed for trainable sampling matrices")
    _, grads = backward(model, images)
    return float(np.max(np.abs(grads["A"] - grad_A_oracle(model, images))))
