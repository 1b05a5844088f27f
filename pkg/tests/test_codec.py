import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from impalloc.codec import (dct2, decode_image, dequantize, encode_image, idct2, parse_header, psnr, qstep,
                            quantize, weighted_psnr, zigzag_order)
from impalloc.entropy import MalformedStreamError, level_bits
from impalloc.importance import uniform_grid
from impalloc.rate_control import RateControlSession, plan_blocks


def dct_matrix(n):
    """Orthonormal DCT-II basis built directly from its definition."""
    m = np.empty((n, n))
    for k in range(n):
        scale = math.sqrt(1 / n) if k == 0 else math.sqrt(2 / n)
        for i in range(n):
            m[k, i] = scale * math.cos(math.pi * (2 * i + 1) * k / (2 * n))
    return m


@pytest.mark.parametrize("n", [8, 16])
def test_dct_matches_definition(rng, n):
    x = rng.uniform(-128, 127, (n, n))
    m = dct_matrix(n)
    np.testing.assert_allclose(dct2(x), m @ x @ m.T, atol=1e-9)


@pytest.mark.parametrize("n, v", [(8, 37.0), (16, -12.5)])
def test_dct_constant_block(n, v):
    c = dct2(np.full((n, n), v))
    assert c[0, 0] == pytest.approx(v * n)
    c[0, 0] = 0
    assert np.max(np.abs(c)) < 1e-9


@pytest.mark.parametrize("n", [8, 16])
def test_dct_roundtrip_and_parseval(rng, n):
    x = rng.uniform(-128, 127, (n, n))
    c = dct2(x)
    assert np.max(np.abs(idct2(c) - x)) <= 1e-6
    assert np.sum(c**2) == pytest.approx(np.sum(x**2), rel=1e-6)


def test_dct_bad_size():
    with pytest.raises(ValueError):
        dct2(np.zeros((4, 4)))


def test_qstep_values():
    assert qstep(4) == 1.0
    assert qstep(10) == 2.0
    assert qstep(22) == 8.0


def test_quantize_pure_rounding_at_qp4():
    c = np.array([0.49, 0.5, 1.5, -0.5, -2.51, 3.2])
    assert quantize(c, 4).tolist() == [0, 1, 2, -1, -3, 3]


def test_quantize_below_half_step_is_zero():
    assert quantize(np.array([0.99, -0.99]), 10).tolist() == [0, 0]
    assert quantize(np.array([1.0]), 10).tolist() == [1]


@given(st.lists(st.floats(-4000, 4000), min_size=1, max_size=32), st.integers(0, 51))
def test_dequantize_quantize_idempotent(values, qp):
    levels = quantize(np.array(values), qp)
    np.testing.assert_array_equal(quantize(dequantize(levels, qp), qp), levels)


def test_zigzag_jpeg_order():
    assert zigzag_order(8)[:10].tolist() == [0, 1, 8, 16, 9, 2, 3, 10, 17, 24]
    assert zigzag_order(8)[-1] == 63
    assert sorted(zigzag_order(16).tolist()) == list(range(256))


def test_psnr_values():
    a = np.zeros((8, 8), dtype=np.uint8)
    assert psnr(a, a) == math.inf
    b = a.copy()
    b[::2] = 1
    b[1::2] = 1
    assert psnr(a, b) == pytest.approx(48.1308, abs=1e-4)
    with pytest.raises(ValueError):
        psnr(a, np.zeros((4, 4)))


def test_weighted_psnr_uniform_equals_psnr(rng):
    a = rng.integers(0, 256, (16, 16))
    b = rng.integers(0, 256, (16, 16))
    assert weighted_psnr(a, b, np.full((16, 16), 0.3)) == pytest.approx(psnr(a, b), rel=1e-12)
    assert weighted_psnr(a, b, np.zeros((16, 16))) == psnr(a, b)


def test_weighted_psnr_emphasis():
    a = np.zeros((4, 4))
    b = a.copy()
    b[0, 0] = 10
    w = np.zeros((4, 4))
    w[0, 0] = 1
    assert weighted_psnr(a, b, w) < psnr(a, b)


def test_qp51_is_the_cheapest(corpus_images):
    img = corpus_images["camera"]
    bits = [encode_image(img, qp=q, cu_size=8).payload_bits for q in (22, 37, 45, 51)]
    assert bits[-1] == min(bits)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 40), st.integers(1, 40), st.integers(0, 51),
       st.sampled_from([8, 16]))
def test_roundtrip_fuzz(seed, w, h, qp, cu):
    img = np.random.default_rng(seed).integers(0, 256, (h, w), dtype=np.uint8)
    res = encode_image(img, qp=qp, cu_size=cu)
    assert np.array_equal(decode_image(res.data), res.recon)
    header = parse_header(res.data)
    assert header.payload_bits == res.payload_bits
    assert len(res.data) - header.payload_offset == -(-res.payload_bits // 8)


def test_qp0_near_lossless(rng):
    img = rng.integers(0, 256, (16, 16), dtype=np.uint8)
    res = encode_image(img, qp=0, cu_size=8)
    assert np.max(np.abs(res.recon.astype(int) - img)) <= 1


def test_block_bits_match_entropy_coder(rng):
    img = rng.integers(0, 256, (32, 24), dtype=np.uint8)
    res = encode_image(img, qp=30, cu_size=8)
    assert res.block_bits.shape == (4, 3)
    assert res.payload_bits == parse_header(res.data).payload_bits


def test_lower_qp_never_fewer_bits_per_block(corpus_images):
    img = corpus_images["coins"][:64, :64]
    prev = None
    for qp in range(51, -1, -3):
        bits = encode_image(img, qp=qp, cu_size=16).block_bits
        if prev is not None:
            assert np.all(bits >= prev)
        prev = bits


def test_session_mode_roundtrip(corpus_images):
    img = corpus_images["chelsea"]
    h, w = img.shape
    grid = uniform_grid(w, h, 16)
    target = encode_image(img, qp=30).payload_bits
    session = RateControlSession(plan_blocks(grid, target))
    res = encode_image(img, session=session)
    assert session.done
    assert np.array_equal(session.bits_actual.reshape(res.block_bits.shape), res.block_bits)
    assert np.array_equal(session.qp_a.reshape(res.qp_map.shape), res.qp_map)
    assert np.array_equal(decode_image(res.data), res.recon)


def test_encode_argument_errors(rng):
    img = rng.integers(0, 256, (16, 16), dtype=np.uint8)
    with pytest.raises(ValueError):
        encode_image(img)
    with pytest.raises(ValueError):
        encode_image(img, qp=52)
    with pytest.raises(ValueError):
        encode_image(img, qp=10, cu_size=4)
    with pytest.raises(ValueError):
        encode_image(np.zeros((0, 4), dtype=np.uint8), qp=10)


def test_malformed_streams(rng):
    img = rng.integers(0, 256, (24, 24), dtype=np.uint8)
    data = encode_image(img, qp=20, cu_size=8).data
    with pytest.raises(MalformedStreamError):
        decode_image(b"XXXX" + data[4:])
    with pytest.raises(MalformedStreamError):
        decode_image(data[:8])
    with pytest.raises(MalformedStreamError):
        decode_image(data[:-1])
    bad_version = bytearray(data)
    bad_version[4] = 9
    with pytest.raises(MalformedStreamError):
        decode_image(bytes(bad_version))


def test_all_zero_block_costs_one_bit():
    res = encode_image(np.full((16, 16), 128, dtype=np.uint8), qp=30, cu_size=16)
    assert res.payload_bits == 1
    assert level_bits(np.zeros(256, dtype=int)) == 1
