import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from PIL import Image

from blindpty.field import (
    FieldSizeError,
    cfft2,
    crop_center,
    extract_block,
    fft2,
    field_to_rgb,
    icfft2,
    ifft2,
    pad_embed,
    render_png,
)


def _rand(rng, n, m=None):
    m = n if m is None else m
    return rng.standard_normal((n, m)) + 1j * rng.standard_normal((n, m))


def test_constant_field_has_single_dc_bin():
    n, c = 8, 0.7 - 0.2j
    F = fft2(np.full((n, n), c))
    assert F[0, 0] == pytest.approx(c * n)
    F[0, 0] = 0
    assert np.max(np.abs(F)) < 1e-12


def test_matches_naive_dft_matrix():
    rng = np.random.default_rng(0)
    f = _rand(rng, 6, 5)
    Wy = np.exp(-2j * np.pi * np.outer(np.arange(6), np.arange(6)) / 6)
    Wx = np.exp(-2j * np.pi * np.outer(np.arange(5), np.arange(5)) / 5)
    naive = Wy @ f @ Wx.T / np.sqrt(30)
    assert np.max(np.abs(fft2(f) - naive)) < 1e-12


@pytest.mark.parametrize("n", [32, 64, 128, 512])
def test_roundtrip(n):
    f = _rand(np.random.default_rng(n), n)
    assert np.max(np.abs(ifft2(fft2(f)) - f)) < 1e-10
    assert np.max(np.abs(icfft2(cfft2(f)) - f)) < 1e-10


def test_parseval_128():
    f = _rand(np.random.default_rng(1), 128)
    e_direct = sum(abs(v) ** 2 for v in f.ravel())
    assert np.sum(np.abs(fft2(f)) ** 2) == pytest.approx(e_direct, rel=1e-12)


def test_pad_embed_2x2_into_6():
    x = np.array([[2, 3], [4, 5]], dtype=complex)
    p = pad_embed(x, 6)
    assert np.array_equal(p[2:4, 2:4], x)
    mask = np.ones((6, 6), bool)
    mask[2:4, 2:4] = False
    assert np.sum(mask) == 32
    assert np.all(p[mask] == 1 + 0j)


def test_pad_embed_full_scale_block():
    x = np.zeros((256, 256), complex)
    p = pad_embed(x, 768)
    rows = np.where(np.any(p == 0, axis=1))[0]
    assert rows[0] == 256 and rows[-1] == 511


def test_pad_extract_bit_exact():
    x = _rand(np.random.default_rng(2), 7)
    assert np.array_equal(extract_block(pad_embed(x, 21), x.shape), x)


def test_pad_too_small():
    with pytest.raises(FieldSizeError):
        pad_embed(np.ones((4, 4)), 3)


def test_crop_examples():
    a = np.arange(16).reshape(4, 4)
    assert np.array_equal(crop_center(a, 4), a)
    assert crop_center(a, 2).tolist() == [[5, 6], [9, 10]]
    big = np.arange(768)[:, None] * np.ones((1, 768))
    c = crop_center(big, 512)
    assert c[0, 0] == 128 and c[-1, 0] == 639
    with pytest.raises(FieldSizeError):
        crop_center(a, 5)


def test_crop_odd_difference_drops_bottom_right():
    a = np.arange(25).reshape(5, 5)
    assert crop_center(a, 4).tolist() == a[:4, :4].tolist()


def test_render_modes(tmp_path):
    ones = np.ones((3, 3), complex)
    rgb = field_to_rgb(ones, "complex")
    assert np.all(rgb == [255, 0, 0])
    zeros = np.zeros((3, 3), complex)
    assert np.all(field_to_rgb(zeros, "complex") == 0)
    assert np.all(field_to_rgb(zeros, "magnitude") == 0)
    # phase pi/2 -> hue 0.25 -> (r, g, b) = (0.5, 1, 0)
    assert field_to_rgb(np.full((1, 1), 1j), "phase")[0, 0].tolist() == [128, 255, 0]
    path = tmp_path / "f.png"
    render_png(np.full((4, 5), 1j), path, "magnitude")
    img = np.asarray(Image.open(path))
    assert img.shape == (4, 5, 3) and np.all(img == 255)


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 12), st.integers(0, 12), st.integers(0, 10**6))
def test_pad_embed_free_space_exact(h, extra, seed):
    x = _rand(np.random.default_rng(seed), h)
    n = h + extra
    p = pad_embed(x, n)
    o = (n - h) // 2
    outside = np.ones((n, n), bool)
    outside[o:o + h, o:o + h] = False
    assert np.all(p[outside] == 1 + 0j)
    assert np.array_equal(p[o:o + h, o:o + h], x)
