"""Compare the compiled and NumPy im2col/col2im backends.

Usage: python benchmarks/bench_kernels.py [--repeat N]

Times the gather/scatter alone and one full conv stack forward+backward on a
training-sized batch (32 patches of 33x33 at n=33, i.e. the layout the
denoisers see), and checks the two backends agree bit for bit.
"""
import argparse
import time

import numpy as np

from ampnet.kernels import _numpy_backend, make_rng

try:
    from ampnet.kernels import _cconv
except ImportError:
    _cconv = None


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return min(times)


def stack_pass(backend, x, weights):
    """Forward+backward through 1->32->32->32->1 using the given gather/scatter."""
    h = x
    saved = []
    for w in weights:
        cols = backend.im2col3x3(h)
        saved.append((h.shape, cols))
        h = (w.reshape(w.shape[0], -1) @ cols).reshape(w.shape[0], *h.shape[1:])
    g = np.ones_like(h)
    for w, (shape, cols) in zip(reversed(weights), reversed(saved)):
        g2 = g.reshape(g.shape[0], -1)
        _ = g2 @ cols.T
        g = backend.col2im3x3(w.reshape(w.shape[0], -1).T @ g2, *shape)
    return g


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args(argv)

    rng = make_rng(0)
    x = rng.standard_normal((32, 32, 33, 33))
    cols = _numpy_backend.im2col3x3(x)
    image = rng.standard_normal((1, 32, 33, 33))
    weights = [rng.standard_normal((co, ci, 3, 3)) for ci, co in ((1, 32), (32, 32), (32, 32), (32, 1))]

    backends = [("numpy", _numpy_backend)]
    if _cconv is None:
        print("compiled extension not built; timing the NumPy fallback only")
    else:
        backends.append(("cython", _cconv))
        assert np.array_equal(_cconv.im2col3x3(x), cols)
        assert np.array_equal(_cconv.col2im3x3(cols, *x.shape), _numpy_backend.col2im3x3(cols, *x.shape))
        print("backends agree bit for bit")

    rows = []
    for name, b in backends:
        rows.append((
            name,
            best_of(lambda: b.im2col3x3(x), args.repeat),
            best_of(lambda: b.col2im3x3(cols, *x.shape), args.repeat),
            best_of(lambda: stack_pass(b, image, weights), args.repeat),
        ))
    print(f"{'backend':<8} {'im2col ms':>10} {'col2im ms':>10} {'stack f+b ms':>13}")
    for name, a, c, s in rows:
        print(f"{name:<8} {a * 1e3:10.2f} {c * 1e3:10.2f} {s * 1e3:13.2f}")
    if len(rows) == 2:
        (_, a0, c0, s0), (_, a1, c1, s1) = rows
        print(f"speedup  {a0 / a1:10.2f} {c0 / c1:10.2f} {s0 / s1:13.2f}")


if __name__ == "__main__":
    main()
