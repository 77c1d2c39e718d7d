import numpy as np
import pytest

from tagpaint.lineart import (XdogParams, brightness_scale, gaussian_blur,
                              gaussian_kernel, grayscale, jitter_params,
                              sprite_default, xdog)


def reflect_index(i: int, n: int) -> int:
    # matches numpy pad mode="reflect": no edge duplication
    while i < 0 or i >= n:
        if i < 0:
            i = -i
        if i >= n:
            i = 2 * n - 2 - i
    return i


def blur_oracle(img: np.ndarray, sigma: float) -> np.ndarray:
    """O(n^2 r^2) full 2-D convolution with the outer-product kernel."""
    k1 = gaussian_kernel(sigma)
    r = len(k1) // 2
    k2 = np.outer(k1, k1)
    h, w = img.shape
    out = np.zeros_like(img, dtype=np.float64)
    for y in range(h):
        for x in range(w):
            acc = 0.0
            for dy in range(-r, r + 1):
                for dx in range(-r, r + 1):
                    yy = reflect_index(y + dy, h)
                    xx = reflect_index(x + dx, w)
                    acc += k2[dy + r, dx + r] * img[yy, xx]
            out[y, x] = acc
    return out


def xdog_oracle(gray: np.ndarray, p: XdogParams) -> np.ndarray:
    d = blur_oracle(gray, p.sigma) - p.tau * blur_oracle(gray, p.k * p.sigma)
    out = np.where(d >= p.eps, 1.0, 1.0 + np.tanh(p.phi * (d - p.eps)))
    return np.clip(out, 0.0, 1.0)


def test_grayscale_constants():
    white = np.ones((2, 2, 3))
    assert np.allclose(grayscale(white), 1.0)
    red = np.zeros((2, 2, 3))
    red[..., 0] = 1.0
    assert np.allclose(grayscale(red), 0.299)


def test_grayscale_matches_scalar_loop():
    rng = np.random.default_rng(0)
    img = rng.random((5, 7, 3))
    got = grayscale(img)
    for y in range(5):
        for x in range(7):
            expect = (0.299 * img[y, x, 0] + 0.587 * img[y, x, 1]
                      + 0.114 * img[y, x, 2])
            assert abs(got[y, x] - expect) < 1e-12


def test_params_validation():
    with pytest.raises(ValueError):
        XdogParams(sigma=0, k=1.6, tau=0.9, eps=0.01, phi=100)
    with pytest.raises(ValueError):
        XdogParams(sigma=1, k=1.0, tau=0.9, eps=0.01, phi=100)
    with pytest.raises(ValueError):
        XdogParams(sigma=1, k=1.6, tau=0.9, eps=0.01, phi=0)


def test_xdog_constant_white_above_threshold():
    img = np.ones((8, 8))
    p = XdogParams(sigma=1.0, k=1.6, tau=0.99, eps=0.005, phi=100)
    # D = 1 - 0.99 = 0.01 >= eps everywhere
    assert np.array_equal(xdog(img, p), np.ones((8, 8)))


def test_xdog_tau_one_uniform():
    img = np.full((8, 8), 0.37)
    p = XdogParams(sigma=1.0, k=1.6, tau=1.0, eps=0.01, phi=150)
    expected = np.clip(1.0 + np.tanh(-p.phi * p.eps), 0.0, 1.0)
    assert np.allclose(xdog(img, p), expected, atol=1e-12)


def test_blur_matches_bruteforce_oracle():
    rng = np.random.default_rng(1)
    img = rng.random((16, 16))
    for sigma in (0.5, 1.0, 2.3):
        assert np.abs(gaussian_blur(img, sigma)
                      - blur_oracle(img, sigma)).max() <= 1e-6


def test_xdog_step_edge_matches_oracle():
    img = np.ones((8, 8))
    img[:, 4:] = 0.2
    p = XdogParams(sigma=0.6, k=1.6, tau=0.95, eps=0.01, phi=150)
    assert np.abs(xdog(img, p) - xdog_oracle(img, p)).max() <= 1e-6


def test_xdog_output_bounded():
    rng = np.random.default_rng(2)
    for _ in range(5):
        img = rng.random((12, 12))
        p = XdogParams(sigma=rng.uniform(0.4, 2.0), k=1.6,
                       tau=rng.uniform(0.5, 1.1), eps=rng.uniform(0, 0.05),
                       phi=rng.uniform(10, 300))
        out = xdog(img, p)
        assert out.min() >= 0.0 and out.max() <= 1.0


def test_xdog_translation_equivariance():
    rng = np.random.default_rng(3)
    patch = rng.random((24, 24))
    p = sprite_default(64)
    shift = 3
    canvas1 = np.ones((64, 64))
    canvas2 = np.ones((64, 64))
    canvas1[10:34, 10:34] = patch
    canvas2[10 + shift:34 + shift, 10:34] = patch
    out1 = xdog(canvas1, p)
    out2 = xdog(canvas2, p)
    m = 10  # margin beyond both blur radii
    a = out1[10 + m:34 - m, 10 + m:34 - m]
    b = out2[10 + m + shift:34 - m + shift, 10 + m:34 - m]
    assert np.abs(a - b).max() < 1e-9


def test_blur_radius_guard():
    with pytest.raises(ValueError, match="radius"):
        gaussian_blur(np.ones((4, 4)), 5.0)


def test_brightness_scale():
    img = np.array([[0.2, 1.0], [0.0, 0.5]])
    assert np.allclose(brightness_scale(img, 3.0),
                       [[0.6, 1.0], [0.0, 1.0]])
    assert np.array_equal(brightness_scale(img, 1.0), img)
    out = brightness_scale(img, 7.0)
    assert np.all(out >= img) and out.max() <= 1.0
    with pytest.raises(ValueError):
        brightness_scale(img, 0.5)


def test_jitter_keeps_tau_below_one():
    rng = np.random.default_rng(0)
    base = sprite_default(64)
    for _ in range(200):
        p = jitter_params(base, rng)
        assert p.tau < 1.0
        assert 0.9 * base.sigma <= p.sigma <= 1.1 * base.sigma
