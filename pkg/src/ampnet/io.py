"""File formats: binary PGM images, packed patch stores, model checkpoints.

Patch store::

    u64 count, u64 height, u64 width        (little-endian)
    count*height*width f64 values           (little-endian, row-major)

Checkpoint::

    b"AMPN"  u32 version  u32 header_len    (little-endian)
    header_len bytes of UTF-8 JSON: structure, metadata, array table
    concatenated little-endian f64 arrays in table order

Writers go through a temporary file and an atomic rename, so a failed write
leaves nothing behind.
"""
import contextlib
import json
import os
import re
import struct
import tempfile

import numpy as np

from .model import LAYER_CHANNELS, VARIANTS, AmpNetModel, ConvStack, param_count
from .sampling import SamplingModel

MAGIC = b"AMPN"
VERSION = 1


class FormatError(ValueError):
    pass


@contextlib.contextmanager
def atomic_write(path, mode="wb"):
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, mode) as fh:
            yield fh
        os.replace(tmp, path)
    except BaseException:
        with contextlib.suppress(FileNotFoundError):
            os.unlink(tmp)
        raise


# -- PGM ----------------------------------------------------------------------

_TOKEN = re.compile(rb"(?:\s|#[^\n]*\n?)*([^\s#]+)")


def _header_tokens(data, count):
    pos = 0
    out = []
    for _ in range(count):
        m = _TOKEN.match(data, pos)
        if m is None:
            raise FormatError("truncated PGM header")
        out.append(m.group(1))
        pos = m.end()
    return out, pos


def read_pgm(path):
    """Binary (P5) PGM as float64 in [0, 1]."""
    with open(path, "rb") as fh:
        data = fh.read()
    if not data.startswith(b"P5"):
        raise FormatError(f"{path}: not a binary PGM (P5) file")
    tokens, pos = _header_tokens(data, 4)
    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError as exc:
        raise FormatError(f"{path}: malformed PGM header") from exc
    if width < 1 or height < 1 or not 0 < maxval < 65536:
        raise FormatError(f"{path}: invalid PGM dimensions or maxval")
    pos += 1  # single whitespace byte after maxval
    dtype = np.dtype("u1") if maxval < 256 else np.dtype(">u2")
    nbytes = width * height * dtype.itemsize
    raster = data[pos:pos + nbytes]
    if len(raster) != nbytes:
        raise FormatError(f"{path}: expected {nbytes} pixel bytes, found {len(raster)}")
    pixels = np.frombuffer(raster, dtype=dtype).reshape(height, width)
    return pixels.astype(np.float64) / maxval


def to_uint8(image):
    return np.clip(np.round(np.asarray(image, dtype=np.float64) * 255), 0, 255).astype(np.uint8)


def write_pgm(path, image):
    """8-bit P5 PGM; values are clipped to [0, 1] and rounded."""
    pixels = to_uint8(image)
    if pixels.ndim != 2:
        raise ValueError(f"expected a 2-D image, got shape {pixels.shape}")
    h, w = pixels.shape
    with atomic_write(path) as fh:
        fh.write(b"P5\n%d %d\n255\n" % (w, h))
        fh.write(pixels.tobytes())


# -- patch store ----------------------------------------------------------------

_PATCH_HEADER = struct.Struct("<QQQ")


def write_patches(path, patches):
    patches = np.asarray(patches, dtype="<f8")
    if patches.ndim != 3:
        raise ValueError(f"patches must be (count, height, width), got {patches.shape}")
    with atomic_write(path) as fh:
        fh.write(_PATCH_HEADER.pack(*patches.shape))
        fh.write(np.ascontiguousarray(patches).tobytes())


def read_patches(path):
    with open(path, "rb") as fh:
        head = fh.read(_PATCH_HEADER.size)
        if len(head) != _PATCH_HEADER.size:
            raise FormatError(f"{path}: truncated patch header")
        count, h, w = _PATCH_HEADER.unpack(head)
        body = fh.read()
    if len(body) != count * h * w * 8:
        raise FormatError(f"{path}: expected {count * h * w * 8} data bytes, found {len(body)}")
    return np.frombuffer(body, dtype="<f8").astype(np.float64).reshape(count, h, w)


# -- checkpoints --------------------------------------------------------------

_PREFIX = struct.Struct("<4sII")


def _jsonable(meta):
    out = {}
    for k, v in meta.items():
        if isinstance(v, np.generic):
            v = v.item()
        if isinstance(v, float) and not np.isfinite(v):
            v = repr(v)
        out[k] = v
    return out


def save_checkpoint(model, path, metadata=None):
    arrays = model.arrays()
    header = {
        "structure": {
            "variant": model.variant,
            "K": model.K,
            "n": model.n,
            "M": model.M,
            "ratio": model.sampling.ratio,
        },
        "metadata": _jsonable({**model.meta, **(metadata or {})}),
        "param_count": param_count(model),
        "arrays": [{"name": k, "shape": list(v.shape)} for k, v in arrays.items()],
    }
    blob = json.dumps(header, sort_keys=True).encode()
    with atomic_write(path) as fh:
        fh.write(_PREFIX.pack(MAGIC, VERSION, len(blob)))
        fh.write(blob)
        for v in arrays.values():
            fh.write(np.ascontiguousarray(v, dtype="<f8").tobytes())


def load_checkpoint(path):
    """Rebuild a model from :func:`save_checkpoint` output; returns ``(model, header)``."""
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < _PREFIX.size:
        raise FormatError(f"{path}: truncated checkpoint")
    magic, version, hlen = _PREFIX.unpack_from(data)
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}, not an AMP-Net checkpoint")
    if version != VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {version}")
    if len(data) < _PREFIX.size + hlen:
        raise FormatError(f"{path}: truncated checkpoint header")
    try:
        header = json.loads(data[_PREFIX.size:_PREFIX.size + hlen])
        st = header["structure"]
        variant, K, n, M = st["variant"], int(st["K"]), int(st["n"]), int(st["M"])
        table = header["arrays"]
    except (ValueError, KeyError, TypeError) as exc:
        raise FormatError(f"{path}: malformed checkpoint header ({exc})") from exc

    if variant not in VARIANTS or K < 1 or n < 1 or not 1 <= M <= n * n:
        raise FormatError(f"{path}: invalid structure {st}")
    expected = _expected_shapes(variant, K, n, M)
    got = {e["name"]: tuple(e["shape"]) for e in table}
    if got != expected:
        bad = sorted(set(got.items()) ^ set(expected.items()))
        raise FormatError(f"{path}: shape table does not match a {variant} K={K} model: {bad[:4]}")

    offset = _PREFIX.size + hlen
    arrays = {}
    for entry in table:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape))
        chunk = data[offset:offset + 8 * count]
        if len(chunk) != 8 * count:
            raise FormatError(f"{path}: truncated while reading {entry['name']}")
        arrays[entry["name"]] = np.frombuffer(chunk, dtype="<f8").astype(np.float64).reshape(shape)
        offset += 8 * count
    if offset != len(data):
        raise FormatError(f"{path}: {len(data) - offset} trailing bytes")

    def stack(prefix):
        return ConvStack(
            [arrays[f"{prefix}.conv{j}.weight"] for j in range(1, 5)],
            [arrays[f"{prefix}.conv{j}.bias"] for j in range(1, 4)],
        )

    meta = dict(header.get("metadata", {}))
    model = AmpNetModel(
        SamplingModel(arrays["A"], n, float(st.get("ratio", M / (n * n)))),
        arrays["B"],
        np.array([arrays[f"alpha{k}"][0] for k in range(1, K + 1)]),
        [stack(f"denoiser{k}") for k in range(1, K + 1)],
        [stack(f"deblocker{k}") for k in range(1, K + 1)] if "B" in variant else None,
        variant,
        meta,
    )
    return model, header


def _expected_shapes(variant, K, n, M):
    shapes = {"A": (M, n * n), "B": (n * n, M)}
    for k in range(1, K + 1):
        shapes[f"alpha{k}"] = (1,)
    prefixes = [f"denoiser{k}" for k in range(1, K + 1)]
    if "B" in variant:
        prefixes += [f"deblocker{k}" for k in range(1, K + 1)]
    for p in prefixes:
        for j, (cin, cout) in enumerate(LAYER_CHANNELS, 1):
            shapes[f"{p}.conv{j}.weight"] = (cout, cin, 3, 3)
            if j <= 3:
                shapes[f"{p}.conv{j}.bias"] = (cout,)
    return shapes
