import json
import os
import struct

import numpy as np
import pytest

from ampnet.data import PatchRecipe, extract_patches, list_images
from ampnet.io import (
    FormatError,
    atomic_write,
    load_checkpoint,
    read_patches,
    read_pgm,
    save_checkpoint,
    write_patches,
    write_pgm,
)
from ampnet.kernels import make_rng
from ampnet.model import build_model, forward, param_count
from ampnet.sampling import measure


def test_pgm_round_trip(tmp_path):
    img = np.arange(12, dtype=np.uint8).reshape(3, 4) * 20 / 255.0
    path = tmp_path / "a.pgm"
    write_pgm(path, img)
    assert np.array_equal(read_pgm(path), img)
    assert path.read_bytes().startswith(b"P5\n4 3\n255\n")


def test_pgm_clips_on_export(tmp_path):
    path = tmp_path / "c.pgm"
    write_pgm(path, np.array([[-0.5, 0.5, 1.5]]))
    assert np.array_equal(read_pgm(path), [[0.0, 128 / 255, 1.0]])


def test_pgm_header_comments_and_16_bit(tmp_path):
    path = tmp_path / "b.pgm"
    path.write_bytes(b"P5\n# comment\n2 1\n# another\n65535\n" + np.array([0, 65535], ">u2").tobytes())
    assert np.array_equal(read_pgm(path), [[0.0, 1.0]])


@pytest.mark.parametrize(
    "blob", [b"P2\n1 1\n255\n0", b"P5\n2 2\n255\n\x00", b"P5\n2", b"P5\nx 2\n255\n\x00\x00"]
)
def test_pgm_malformed(tmp_path, blob):
    path = tmp_path / "bad.pgm"
    path.write_bytes(blob)
    with pytest.raises(FormatError):
        read_pgm(path)


def test_atomic_write_leaves_nothing_on_failure(tmp_path):
    path = tmp_path / "x.bin"
    with pytest.raises(RuntimeError):
        with atomic_write(path) as fh:
            fh.write(b"partial")
            raise RuntimeError("boom")
    assert os.listdir(tmp_path) == []


def test_patch_store_round_trip(tmp_path):
    patches = make_rng(0).random((5, 3, 4))
    path = tmp_path / "p.bin"
    write_patches(path, patches)
    assert np.array_equal(read_patches(path), patches)
    assert path.stat().st_size == 24 + 5 * 12 * 8


def test_patch_store_truncated(tmp_path):
    path = tmp_path / "p.bin"
    write_patches(path, np.zeros((2, 2, 2)))
    path.write_bytes(path.read_bytes()[:-1])
    with pytest.raises(FormatError, match="expected"):
        read_patches(path)


@pytest.mark.parametrize("variant", ["plain", "B", "M", "BM"])
def test_checkpoint_round_trip(tmp_path, variant):
    model = build_model(K=2, n=8, ratio=0.25, variant=variant, seed=3)
    model.alphas[:] = [0.5, 1.5]
    path = tmp_path / "m.ampn"
    save_checkpoint(model, path, {"epoch": 4, "val_psnr": float("inf")})
    loaded, header = load_checkpoint(path)
    assert loaded.variant == variant and loaded.sampling.trainable == ("M" in variant)
    assert header["param_count"] == param_count(model)
    assert header["metadata"]["epoch"] == 4
    for name, arr in model.arrays().items():
        assert np.array_equal(arr, loaded.arrays()[name]), name
    m = measure(model.sampling, make_rng(1).random((16, 16)))
    assert np.array_equal(forward(model, m), forward(loaded, m))


def _checkpoint(tmp_path):
    path = tmp_path / "m.ampn"
    save_checkpoint(build_model(K=1, n=4, ratio=0.5, variant="B"), path)
    return path


def test_checkpoint_bad_magic(tmp_path):
    path = _checkpoint(tmp_path)
    path.write_bytes(b"XXXX" + path.read_bytes()[4:])
    with pytest.raises(FormatError, match="magic"):
        load_checkpoint(path)


def test_checkpoint_bad_version(tmp_path):
    path = _checkpoint(tmp_path)
    data = path.read_bytes()
    path.write_bytes(data[:4] + struct.pack("<I", 99) + data[8:])
    with pytest.raises(FormatError, match="version"):
        load_checkpoint(path)


def test_checkpoint_truncated_and_trailing(tmp_path):
    path = _checkpoint(tmp_path)
    data = path.read_bytes()
    path.write_bytes(data[:-8])
    with pytest.raises(FormatError, match="truncated"):
        load_checkpoint(path)
    path.write_bytes(data + b"\x00")
    with pytest.raises(FormatError, match="trailing"):
        load_checkpoint(path)


def test_checkpoint_shape_table_mismatch(tmp_path):
    path = _checkpoint(tmp_path)
    data = path.read_bytes()
    hlen = struct.unpack_from("<I", data, 8)[0]
    header = json.loads(data[12:12 + hlen])
    header["structure"]["variant"] = "plain"
    blob = json.dumps(header).encode()
    path.write_bytes(data[:8] + struct.pack("<I", len(blob)) + blob + data[12 + hlen:])
    with pytest.raises(FormatError, match="shape table"):
        load_checkpoint(path)


def test_extract_patches(tmp_path, caplog):
    rng = make_rng(0)
    write_pgm(tmp_path / "a.pgm", rng.random((40, 50)))
    write_pgm(tmp_path / "b.pgm", rng.random((20, 20)))
    (tmp_path / "c.pgm").write_bytes(b"junk")
    (tmp_path / "notes.txt").write_text("ignored")
    assert [os.path.basename(p) for p in list_images(tmp_path)] == ["a.pgm", "b.pgm", "c.pgm"]
    patches, manifest = extract_patches(tmp_path, PatchRecipe("t", 6, 33), make_rng(1))
    assert patches.shape == (6, 33, 33)
    assert [m["patches"] for m in manifest] == [6, 0, 0]
    assert "skipping b.pgm" in caplog.text
    again, _ = extract_patches(tmp_path, PatchRecipe("t", 6, 33), make_rng(1))
    assert np.array_equal(patches, again)
    src = read_pgm(tmp_path / "a.pgm")
    # every patch is a contiguous window of the source image
    windows = np.lib.stride_tricks.sliding_window_view(src, (33, 33)).reshape(-1, 33, 33)
    for p in patches:
        assert np.any(np.all(windows == p, axis=(1, 2)))


def test_extract_patches_unknown_recipe(tmp_path):
    with pytest.raises(ValueError, match="recipe"):
        extract_patches(tmp_path, "set9", make_rng(0))
