import math

import numpy as np
import pytest

from dynenh import imgcore


def test_rgb_to_ycbcr_known_colors():
    red = np.zeros((1, 1, 3))
    red[0, 0, 0] = 1.0
    ycc = imgcore.rgb_to_ycbcr(red)
    assert ycc.y[0, 0] == pytest.approx(0.299, abs=1e-12)
    assert ycc.cb[0, 0] == pytest.approx(-0.299 * 0.564, abs=1e-9)
    assert ycc.cr[0, 0] == pytest.approx(0.701 * 0.713, abs=1e-9)
    white = np.ones((1, 1, 3))
    ycc = imgcore.rgb_to_ycbcr(white)
    assert ycc.y[0, 0] == pytest.approx(1.0, abs=1e-12)
    assert abs(ycc.cb[0, 0]) < 1e-12 and abs(ycc.cr[0, 0]) < 1e-12


def test_ycbcr_roundtrip(rng):
    # interior values avoid the clamp so the inverse is exact to float error
    for _ in range(20):
        img = rng.uniform(0.1, 0.9, (9, 7, 3))
        back = imgcore.ycbcr_to_rgb(imgcore.rgb_to_ycbcr(img))
        assert np.abs(back - img).max() < 1e-6


def test_luminance_edit_preserves_chroma(rng):
    img = rng.uniform(0.3, 0.7, (8, 8, 3))
    ycc = imgcore.rgb_to_ycbcr(img)
    edited = imgcore.YCbCr(np.clip(ycc.y * 1.05, 0, 1), ycc.cb, ycc.cr)
    back = imgcore.rgb_to_ycbcr(imgcore.ycbcr_to_rgb(edited))
    assert np.abs(back.cb - ycc.cb).max() < 1e-6
    assert np.abs(back.cr - ycc.cr).max() < 1e-6


def test_convolve2d_identity_and_shift():
    p = np.arange(30, dtype=np.float64).reshape(5, 6) / 30.0
    ident = np.zeros((3, 3))
    ident[1, 1] = 1.0
    assert np.array_equal(imgcore.convolve2d(p, ident, (1, 1)), p)
    shift = np.zeros((3, 3))
    shift[1, 0] = 1.0  # tap one column to the left of the anchor
    out = imgcore.convolve2d(p, shift, (1, 1))
    assert np.array_equal(out[:, 1:], p[:, :-1])
    assert np.array_equal(out[:, 0], p[:, 0])  # replicate edge


def test_convolve2d_matches_direct_sum(rng):
    p = rng.uniform(0, 1, (10, 11))
    k = rng.uniform(-1, 1, (3, 4))
    anchor = (1, 2)
    padded = np.pad(p, ((1, 1), (2, 1)), mode="edge")
    expect = np.zeros_like(p)
    for u in range(3):
        for v in range(4):
            expect += k[u, v] * padded[u : u + 10, v : v + 11]
    got = imgcore.convolve2d(p, k, anchor)
    assert np.abs(got - expect).max() < 1e-12


def test_convolve2d_linearity(rng):
    p = rng.uniform(0, 1, (8, 8))
    k1 = rng.uniform(-1, 1, (3, 3))
    k2 = rng.uniform(-1, 1, (3, 3))
    lhs = imgcore.convolve2d(p, k1 + 2.0 * k2, (1, 1))
    rhs = imgcore.convolve2d(p, k1, (1, 1)) + 2.0 * imgcore.convolve2d(p, k2, (1, 1))
    assert np.abs(lhs - rhs).max() < 1e-10


def test_convolve2d_validates_anchor():
    p = np.zeros((4, 4))
    with pytest.raises(ValueError):
        imgcore.convolve2d(p, np.zeros((3, 3)), (3, 1))
    with pytest.raises(ValueError):
        imgcore.convolve2d(p, np.zeros((3, 3)), (1, -1))


def test_convolve2d_kernel_wider_than_plane():
    # replicate padding keeps oversized kernels well defined
    p = np.full((3, 3), 0.6)
    k = np.full((5, 5), 1.0 / 25.0)
    out = imgcore.convolve2d(p, k, (2, 2))
    assert np.abs(out - 0.6).max() < 1e-12


def test_box_filter_matches_naive(rng):
    for _ in range(100):
        h = int(rng.integers(3, 16))
        w = int(rng.integers(3, 16))
        r = int(rng.integers(1, 4))
        p = rng.uniform(0, 1, (h, w))
        padded = np.pad(p, r, mode="edge")
        n = 2 * r + 1
        expect = np.zeros_like(p)
        for u in range(n):
            for v in range(n):
                expect += padded[u : u + h, v : v + w]
        expect /= n * n
        assert np.abs(imgcore.box_filter(p, r) - expect).max() < 1e-10


def test_psnr_values():
    a = np.zeros((4, 4))
    b = np.full((4, 4), 0.1)
    assert imgcore.psnr(a, b) == pytest.approx(20.0, abs=1e-9)
    assert imgcore.psnr(a, a) == math.inf


def test_mse_simple():
    a = np.zeros((2, 2))
    b = np.array([[1.0, 0.0], [0.0, 0.0]])
    assert imgcore.mse(a, b) == pytest.approx(0.25)


def test_gaussian_blur_preserves_constant():
    p = np.full((9, 9), 0.37)
    out = imgcore.gaussian_blur(p, 1.5)
    assert np.abs(out - 0.37).max() < 1e-12


def test_gaussian_kernel_normalized():
    k = imgcore.gaussian_kernel1d(1.1)
    assert k.sum() == pytest.approx(1.0, abs=1e-12)
    assert k.size == 2 * math.ceil(3 * 1.1) + 1


def test_resize_bilinear_identity(rng):
    p = rng.uniform(0, 1, (7, 5))
    assert np.array_equal(imgcore.resize_bilinear(p, 7, 5), p)


def test_resize_bilinear_constant():
    p = np.full((6, 8), 0.42)
    out = imgcore.resize_bilinear(p, 3, 5)
    assert np.abs(out - 0.42).max() < 1e-12


def test_center_crop_and_square(rng):
    p = rng.uniform(0, 1, (8, 6))
    c = imgcore.center_square(p)
    assert c.shape == (6, 6)
    assert np.array_equal(c, p[1:7, :])
    img = rng.uniform(0, 1, (10, 9, 3))
    cc = imgcore.center_crop(img, 5)
    assert cc.shape == (5, 5, 3)
    assert np.array_equal(cc, img[2:7, 2:7, :])


def test_plane_file_roundtrip(tmp_path, rng):
    p = rng.uniform(0, 1, (11, 7))
    path = tmp_path / "x.plane"
    imgcore.write_plane_file(path, p)
    back = imgcore.read_plane_file(path)
    assert back.shape == p.shape
    assert np.array_equal(back, p)  # bit-exact


def test_plane_file_rejects_garbage(tmp_path):
    path = tmp_path / "bad.plane"
    path.write_bytes(b"NOPE 3 3\n" + b"\x00" * 72)
    with pytest.raises(ValueError):
        imgcore.read_plane_file(path)


def test_png_roundtrip_quantized(tmp_path, rng):
    img = rng.uniform(0, 1, (6, 5, 3))
    path = tmp_path / "x.png"
    imgcore.write_image(path, img)
    back = imgcore.read_image(path)
    # quantization to 8 bits, then exact roundtrip of the quantized values
    quant = np.clip(np.rint(img * 255), 0, 255) / 255.0
    assert np.abs(back - quant).max() < 1e-12


def test_write_image_rejects_unknown_suffix(tmp_path):
    with pytest.raises(ValueError):
        imgcore.write_image(tmp_path / "x.bmp", np.zeros((3, 3)))


def test_clamp01_and_as_plane():
    a = np.array([[-0.5, 0.5], [1.5, 1.0]])
    out = imgcore.clamp01(a)
    assert out.min() == 0.0 and out.max() == 1.0
    with pytest.raises(ValueError):
        imgcore.as_plane(np.zeros((2, 2, 3)))
    with pytest.raises(ValueError):
        imgcore.as_rgb(np.zeros((2, 2)))
