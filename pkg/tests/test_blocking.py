import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ampnet.blocking import (
    BlockGeometry,
    BlockGrid,
    columns_to_images,
    columns_to_images_adjoint,
    devectorize,
    images_to_columns,
    images_to_columns_adjoint,
    merge,
    split,
    vectorize,
)
from ampnet.kernels import make_rng


def test_split_zero_image_divisible():
    grid = split(np.zeros((66, 66)), 33)
    assert grid.blocks.shape == (4, 33, 33)
    assert not grid.blocks.any()
    assert grid.geometry.pad == (0, 0, 0, 0)


def test_split_99_round_trip():
    x = make_rng(0).random((99, 99))
    grid = split(x, 33)
    assert grid.geometry.num_blocks == 9
    assert np.array_equal(merge(grid, 33), x)


def test_split_100_pads_to_132():
    x = make_rng(1).random((100, 100))
    grid = split(x, 33)
    assert grid.geometry.padded_shape == (132, 132)
    assert grid.geometry.num_blocks == 16
    assert grid.geometry.pad == (0, 32, 0, 32)
    assert np.array_equal(merge(grid, 33), x)


def test_padding_is_reflection():
    x = np.arange(15.0).reshape(3, 5)
    grid = split(x, 4)
    padded = np.block([[grid.blocks[0], grid.blocks[1]]])
    assert np.array_equal(padded[:, :5], np.vstack([x, x[1]]))
    assert np.array_equal(padded[0, 5:], [x[0, 3], x[0, 2], x[0, 1]])


def test_merge_quadrants():
    blocks = np.stack([np.full((2, 2), v) for v in (1.0, 2.0, 3.0, 4.0)])
    img = merge(BlockGrid(BlockGeometry(2, 4, 4), blocks), 2)
    expected = np.array([[1, 1, 2, 2], [1, 1, 2, 2], [3, 3, 4, 4], [3, 3, 4, 4]], dtype=float)
    assert np.array_equal(img, expected)


def test_merge_256_round_trip():
    x = make_rng(2).random((256, 256))
    assert np.array_equal(merge(split(x, 33), 33), x)


def test_grid_with_wrong_block_count_rejected():
    with pytest.raises(ValueError, match="blocks"):
        BlockGrid(BlockGeometry(2, 4, 4), np.zeros((3, 2, 2)))


def test_merge_rejects_other_n():
    with pytest.raises(ValueError):
        merge(split(np.zeros((4, 4)), 2), 4)


def test_vectorize_row_major():
    grid = BlockGrid(BlockGeometry(2, 2, 2), np.array([[[1.0, 2.0], [3.0, 4.0]]]))
    assert np.array_equal(vectorize(grid), [[1], [2], [3], [4]])


def test_vectorize_round_trip_and_shape():
    grid = split(make_rng(3).random((99, 99)), 33)
    cols = vectorize(grid)
    assert cols.shape == (1089, 9)
    assert np.array_equal(devectorize(cols, grid.geometry).blocks, grid.blocks)


def test_devectorize_zero_column():
    grid = devectorize(np.zeros((4, 1)), BlockGeometry(2, 2, 2))
    assert np.array_equal(grid.blocks, np.zeros((1, 2, 2)))


def test_devectorize_round_trip():
    m = make_rng(4).random((1089, 4))
    assert np.array_equal(vectorize(devectorize(m, BlockGeometry(33, 66, 66))), m)


def test_devectorize_rejects_bad_rows():
    with pytest.raises(ValueError, match="1088"):
        devectorize(np.zeros((1088, 9)), BlockGeometry(33, 99, 99))


@pytest.mark.parametrize("side", [66, 99, 100, 256])
@pytest.mark.parametrize("n", [33, 8])
def test_round_trip_bit_exact(side, n):
    x = make_rng(side + n).standard_normal((side, side))
    grid = split(x, n)
    assert np.array_equal(merge(grid, n), x)
    assert np.array_equal(devectorize(vectorize(grid), grid.geometry).blocks, grid.blocks)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 40), st.integers(1, 40), st.integers(1, 12))
def test_split_is_partition(h, w, n):
    x = np.arange(h * w, dtype=np.float64).reshape(h, w)
    grid = split(x, n)
    g = grid.geometry
    # the top-left h x w of the padded canvas holds every pixel exactly once
    canvas = grid.blocks.reshape(g.blocks_per_col, g.blocks_per_row, n, n)
    canvas = canvas.transpose(0, 2, 1, 3).reshape(g.padded_shape)
    assert np.array_equal(np.sort(canvas[:h, :w].ravel()), np.arange(h * w))
    assert np.array_equal(merge(grid), x)


def test_column_maps_adjoint():
    rng = make_rng(5)
    g = BlockGeometry(4, 10, 7)
    x = rng.standard_normal((2, 10, 7))
    c = rng.standard_normal((16, 2 * g.num_blocks))
    lhs = np.sum(images_to_columns(x, g) * c)
    assert abs(lhs - np.sum(x * images_to_columns_adjoint(c, g))) < 1e-10
    lhs = np.sum(columns_to_images(c, g) * x)
    assert abs(lhs - np.sum(c * columns_to_images_adjoint(x, g))) < 1e-10


def test_single_pixel_image():
    grid = split(np.array([[0.5]]), 3)
    assert np.all(grid.blocks == 0.5)
    assert np.array_equal(merge(grid), [[0.5]])
