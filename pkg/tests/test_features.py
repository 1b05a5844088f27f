import numpy as np
import pytest

from impalloc.features import (FeatureTensor, FilterBank, LayerSpec, conv_layer, cross_correlate,
                               default_bank, leaky, load_bank, max_pool, run_stack, save_bank)
from impalloc.image import rescale_keep_aspect

IDENTITY = np.array([[0, 0, 0], [0, 1, 0], [0, 0, 0]], dtype=float)


def brute_conv(x, kernels, padding):
    """Direct cross-correlation, one output sample at a time."""
    c_in, h, w = x.shape
    out = np.zeros((kernels.shape[0], h, w))
    for n in range(kernels.shape[0]):
        for y in range(h):
            for xx in range(w):
                acc = 0.0
                for c in range(c_in):
                    for dy in range(3):
                        for dx in range(3):
                            sy, sx = y + dy - 1, xx + dx - 1
                            if padding == "edge":
                                sy, sx = min(max(sy, 0), h - 1), min(max(sx, 0), w - 1)
                            elif not (0 <= sy < h and 0 <= sx < w):
                                continue
                            acc += kernels[n, c, dy, dx] * x[c, sy, sx]
                out[n, y, xx] = acc
    return out


def brute_pool(x):
    c, h, w = x.shape
    out = np.zeros((c, h // 2, w // 2))
    for k in range(c):
        for i in range(h // 2):
            for j in range(w // 2):
                out[k, i, j] = max(x[k, 2 * i + a, 2 * j + b] for a in range(2) for b in range(2))
    return out


@pytest.mark.parametrize("padding", ["edge", "zero"])
def test_cross_correlate_matches_brute_force(rng, padding):
    x = rng.normal(size=(3, 9, 7))
    k = rng.normal(size=(4, 3, 3, 3))
    np.testing.assert_allclose(cross_correlate(x, k, padding), brute_conv(x, k, padding), rtol=1e-12, atol=1e-12)


@pytest.mark.parametrize("padding", ["edge", "zero"])
def test_identity_kernel(rng, padding):
    x = rng.uniform(0, 1, (1, 8, 8))
    out = conv_layer(x, LayerSpec(IDENTITY[None, None], slope=0.1), padding)
    np.testing.assert_array_equal(out.data[0], x[0])


def test_zero_kernel():
    x = np.ones((2, 6, 6))
    out = conv_layer(x, LayerSpec(np.zeros((3, 2, 3, 3))))
    assert np.all(out.data == 0)


@pytest.mark.parametrize("padding", ["edge", "zero"])
def test_constant_input_interior(padding):
    v = 0.7
    kern = np.arange(1, 10, dtype=float).reshape(3, 3) / 10.0  # sum 4.5
    x = np.full((1, 6, 6), v)
    oracle = brute_conv(x, kern[None, None], padding)
    out = conv_layer(x, LayerSpec(kern[None, None]), padding).data
    assert oracle[0, 1:-1, 1:-1] == pytest.approx(np.full((4, 4), v * 4.5))
    np.testing.assert_allclose(out, oracle, rtol=1e-12)


def test_edge_padding_keeps_constant_everywhere():
    out = cross_correlate(np.full((1, 5, 5), 2.0), np.ones((1, 1, 3, 3)), "edge")
    assert np.allclose(out, 18.0)


def test_leaky_activation():
    t = np.array([-2.0, -0.5, 0.0, 1.5])
    assert leaky(t, 0.1).tolist() == pytest.approx([-0.2, -0.05, 0.0, 1.5])


def test_channel_mismatch_raises():
    with pytest.raises(ValueError):
        cross_correlate(np.zeros((2, 4, 4)), np.zeros((1, 3, 3, 3)))


def test_linearity_pre_activation(rng):
    k = rng.normal(size=(5, 2, 3, 3))
    x, y = rng.normal(size=(2, 16, 16)), rng.normal(size=(2, 16, 16))
    a, b = 1.7, -0.4
    lhs = cross_correlate(a * x + b * y, k)
    rhs = a * cross_correlate(x, k) + b * cross_correlate(y, k)
    np.testing.assert_allclose(lhs, rhs, rtol=1e-9, atol=1e-12)


def test_filter_permutation(rng):
    spec = LayerSpec(rng.normal(size=(6, 2, 3, 3)))
    perm = rng.permutation(6)
    x = rng.normal(size=(2, 10, 12))
    out = conv_layer(x, spec).data
    permuted = conv_layer(x, LayerSpec(spec.weights[perm])).data
    np.testing.assert_array_equal(permuted, out[perm])


def test_pool_constant():
    out = max_pool(np.full((2, 6, 8), 3.5))
    assert out.data.shape == (2, 3, 4)
    assert np.all(out.data == 3.5)


def test_pool_window():
    assert max_pool(np.array([[1.0, 2.0], [3.0, 4.0]])).data.tolist() == [[[4.0]]]


def test_pool_odd_dims_truncate(rng):
    x = rng.normal(size=(1, 5, 5))
    out = max_pool(x).data
    assert out.shape == (1, 2, 2)
    np.testing.assert_array_equal(out, brute_pool(x))


def test_pool_equals_window_max(rng):
    x = rng.normal(size=(3, 16, 14))
    out = max_pool(x).data
    np.testing.assert_array_equal(out, brute_pool(x))
    for a in range(2):
        for b in range(2):
            assert np.all(out >= x[:, a:32:2, b:28:2][:, :8, :7])


def test_pool_too_small():
    with pytest.raises(ValueError):
        max_pool(np.zeros((1, 1, 4)))


def test_layer_spec_validation():
    with pytest.raises(ValueError):
        LayerSpec(np.zeros((1, 1, 5, 5)))
    with pytest.raises(ValueError):
        LayerSpec(np.zeros((1, 1, 3, 3)), slope=1.0)
    with pytest.raises(ValueError):
        FilterBank([LayerSpec(np.zeros((2, 1, 3, 3))), LayerSpec(np.zeros((1, 3, 3, 3)))])


def test_run_stack_first_layer_size(rng):
    img = rng.integers(0, 256, (416, 416), dtype=np.uint8)
    bank = default_bank()
    tensor, info = run_stack(img, bank, 1)
    assert tensor.data.shape == (bank.layers[0].filters, 416, 416)
    assert info.size == 416 and info.scale == 1.0


def test_run_stack_third_layer_dims(rng):
    img = rng.integers(0, 256, (416, 416), dtype=np.uint8)
    bank = default_bank()
    assert bank.layers[0].pool and bank.layers[1].pool
    tensor, info = run_stack(img, bank, 3)
    assert (tensor.height, tensor.width) == (104, 104)
    assert info.size == 104 and info.scale == pytest.approx(0.25)


def test_run_stack_identity_bank(rng):
    img = rng.integers(0, 256, (40, 30), dtype=np.uint8)
    bank = FilterBank([LayerSpec(IDENTITY[None, None])])
    tensor, info = run_stack(img, bank, 1, size=64)
    scaled, _ = rescale_keep_aspect(img, 64)
    np.testing.assert_allclose(tensor.data[0], scaled / 255.0)
    assert (info.src_width, info.src_height) == (30, 40)


def test_run_stack_bad_layer(rng):
    with pytest.raises(ValueError):
        run_stack(np.zeros((32, 32), dtype=np.uint8), default_bank(), 8)


def test_dimension_law(rng):
    img = rng.integers(0, 256, (300, 400), dtype=np.uint8)
    bank = default_bank()
    pools = 0
    for layer in range(1, len(bank) + 1):
        tensor, info = run_stack(img, bank, layer, size=160)
        assert tensor.width == 160 // 2**pools
        assert abs(tensor.height - 120 / 2**pools) <= 1
        assert info.width == tensor.width
        pools += int(bank.layers[layer - 1].pool)


def test_default_bank_shape():
    bank = default_bank()
    assert len(bank) == 7
    assert all(8 <= spec.filters <= 32 for spec in bank.layers)
    assert [spec.pool for spec in bank.layers][:2] == [True, True]


def test_bank_roundtrip(tmp_path):
    bank = default_bank()
    save_bank(tmp_path / "bank.json", bank)
    loaded = load_bank(tmp_path / "bank.json")
    assert len(loaded) == len(bank) and loaded.padding == bank.padding
    for a, b in zip(bank.layers, loaded.layers):
        np.testing.assert_array_equal(a.weights, b.weights)
        assert (a.slope, a.pool) == (b.slope, b.pool)


def test_bank_file_bad(tmp_path):
    (tmp_path / "b.json").write_text('{"layers": [{"weights": [[[1, 2, 3]]]}]}')
    with pytest.raises(ValueError):
        load_bank(tmp_path / "b.json")


def test_feature_tensor_properties():
    t = FeatureTensor(2, np.zeros((3, 5, 7)))
    assert (t.channels, t.height, t.width) == (3, 5, 7)
