"""Shared image primitives: planes, color conversion, filtering, resampling, file I/O.

A plane is a 2-D float64 array of intensities, nominally in [0, 1] for image
data and unrestricted for kernels and residuals.  RGB images are (h, w, 3)
float64 arrays, channels last.  All neighborhood operations use replicate
(clamp-to-edge) padding so borders never darken.
"""

from __future__ import annotations

import math
from pathlib import Path
from typing import NamedTuple

import numpy as np
from PIL import Image

# BT.601 full-range luma weights; chroma planes are zero-centered differences.
_KR, _KG, _KB = 0.299, 0.587, 0.114
_CB_SCALE = 0.564  # scales B - Y
_CR_SCALE = 0.713  # scales R - Y


class YCbCr(NamedTuple):
    """Luma plane plus two zero-centered chroma planes of equal shape."""

    y: np.ndarray
    cb: np.ndarray
    cr: np.ndarray


def as_plane(p) -> np.ndarray:
    a = np.asarray(p, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] < 1 or a.shape[1] < 1:
        raise ValueError(f"plane must be 2-D and non-empty, got shape {a.shape}")
    return a


def as_rgb(img) -> np.ndarray:
    a = np.asarray(img, dtype=np.float64)
    if a.ndim != 3 or a.shape[2] != 3 or a.shape[0] < 1 or a.shape[1] < 1:
        raise ValueError(f"RGB image must have shape (h, w, 3), got {a.shape}")
    return a


def clamp01(a) -> np.ndarray:
    return np.clip(a, 0.0, 1.0)


def rgb_to_ycbcr(img) -> YCbCr:
    """BT.601 full-range conversion.  Input is clamped to [0, 1] first."""
    rgb = clamp01(as_rgb(img))
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    y = _KR * r + _KG * g + _KB * b
    return YCbCr(y, _CB_SCALE * (b - y), _CR_SCALE * (r - y))


def ycbcr_to_rgb(ycc: YCbCr) -> np.ndarray:
    """Inverse of rgb_to_ycbcr; the result is clamped to [0, 1]."""
    y, cb, cr = (as_plane(c) for c in ycc)
    if not (y.shape == cb.shape == cr.shape):
        raise ValueError("y, cb, cr must share one shape")
    r = y + cr / _CR_SCALE
    b = y + cb / _CB_SCALE
    g = (y - _KR * r - _KB * b) / _KG
    return clamp01(np.stack([r, g, b], axis=-1))


def luminance(img) -> np.ndarray:
    return rgb_to_ycbcr(img).y


def convolve2d(p, kernel, anchor: tuple[int, int]) -> np.ndarray:
    """Correlate `kernel` over `p` with replicate padding; output matches `p`.

    out(i, j) = sum_{u,v} kernel(u, v) * p(i + u - anchor[0], j + v - anchor[1]),
    out-of-range reads clamped to the nearest edge pixel.  Accumulation is one
    shifted add per tap, so a one-hot kernel reproduces its input bit-exactly.
    """
    p = as_plane(p)
    k = as_plane(kernel)
    kh, kw = k.shape
    h, w = p.shape
    ar, ac = anchor
    if not (0 <= ar < kh and 0 <= ac < kw):
        raise ValueError(f"anchor {anchor} outside kernel of shape {k.shape}")
    padded = np.pad(p, ((ar, kh - 1 - ar), (ac, kw - 1 - ac)), mode="edge")
    out = np.zeros_like(p)
    for u in range(kh):
        for v in range(kw):
            out += k[u, v] * padded[u : u + h, v : v + w]
    return out


def box_filter(p, radius: int) -> np.ndarray:
    """Mean over (2r+1)^2 replicate-padded windows in O(h*w) via an integral image."""
    p = as_plane(p)
    r = int(radius)
    if r < 0:
        raise ValueError(f"radius must be >= 0, got {radius}")
    if r == 0:
        return p.copy()
    h, w = p.shape
    padded = np.pad(p, r, mode="edge")
    s = np.zeros((padded.shape[0] + 1, padded.shape[1] + 1), dtype=np.float64)
    s[1:, 1:] = padded.cumsum(axis=0).cumsum(axis=1)
    n = 2 * r + 1
    win = s[n : n + h, n : n + w] - s[0:h, n : n + w] - s[n : n + h, 0:w] + s[0:h, 0:w]
    return win / float(n * n)


def mse(a, b) -> float:
    a = as_plane(a)
    b = as_plane(b)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    d = a - b
    return float(np.mean(d * d))


def psnr(a, b) -> float:
    """Peak signal-to-noise ratio in dB against peak 1.0; +inf for identical planes."""
    m = mse(a, b)
    return math.inf if m == 0.0 else 10.0 * math.log10(1.0 / m)


def gaussian_kernel1d(sigma: float) -> np.ndarray:
    """Normalized 1-D Gaussian truncated at 3*sigma (radius = ceil(3*sigma))."""
    if sigma <= 0:
        raise ValueError(f"sigma must be > 0, got {sigma}")
    r = int(math.ceil(3.0 * sigma))
    x = np.arange(-r, r + 1, dtype=np.float64)
    k = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return k / k.sum()


def gaussian_blur(p, sigma: float) -> np.ndarray:
    """Separable Gaussian blur, replicate padded, truncated at 3*sigma."""
    k = gaussian_kernel1d(sigma)
    r = (k.size - 1) // 2
    tmp = convolve2d(p, k[np.newaxis, :], (0, r))
    return convolve2d(tmp, k[:, np.newaxis], (r, 0))


def resize_bilinear(p, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resample with half-pixel-center coordinates."""
    p = as_plane(p)
    h, w = p.shape
    if out_h < 1 or out_w < 1:
        raise ValueError(f"output extent must be >= 1, got ({out_h}, {out_w})")
    if (out_h, out_w) == (h, w):
        return p.copy()
    rows = (np.arange(out_h, dtype=np.float64) + 0.5) * (h / out_h) - 0.5
    cols = (np.arange(out_w, dtype=np.float64) + 0.5) * (w / out_w) - 0.5
    r0 = np.clip(np.floor(rows).astype(int), 0, h - 1)
    c0 = np.clip(np.floor(cols).astype(int), 0, w - 1)
    r1 = np.minimum(r0 + 1, h - 1)
    c1 = np.minimum(c0 + 1, w - 1)
    fr = np.clip(rows - r0, 0.0, 1.0)[:, None]
    fc = np.clip(cols - c0, 0.0, 1.0)[None, :]
    top = p[np.ix_(r0, c0)] * (1 - fc) + p[np.ix_(r0, c1)] * fc
    bot = p[np.ix_(r1, c0)] * (1 - fc) + p[np.ix_(r1, c1)] * fc
    return top * (1 - fr) + bot * fr


def center_crop(a, extent: int) -> np.ndarray:
    """Crop the central extent x extent window of a plane or RGB image."""
    arr = np.asarray(a, dtype=np.float64)
    h, w = arr.shape[0], arr.shape[1]
    e = int(extent)
    if e < 1 or h < e or w < e:
        raise ValueError(f"cannot crop {e}x{e} from {h}x{w}")
    r = (h - e) // 2
    c = (w - e) // 2
    return arr[r : r + e, c : c + e].copy()


def center_square(p) -> np.ndarray:
    """Center-crop a plane to its shorter side."""
    p = as_plane(p)
    return center_crop(p, min(p.shape))


def read_image(path) -> np.ndarray:
    """Read an 8-bit PNG/PPM file as an RGB float image, intensities v/255."""
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float64)
    return arr / 255.0


def write_image(path, img) -> None:
    """Write a plane or RGB image as 8-bit PNG/PPM, intensities round(v*255)."""
    arr = np.asarray(img, dtype=np.float64)
    data = np.clip(np.rint(arr * 255.0), 0, 255).astype(np.uint8)
    if data.ndim == 2:
        pil = Image.fromarray(data, mode="L")
    elif data.ndim == 3 and data.shape[2] == 3:
        pil = Image.fromarray(data, mode="RGB")
    else:
        raise ValueError(f"expected (h, w) or (h, w, 3), got {arr.shape}")
    suffix = Path(path).suffix.lower()
    if suffix not in (".png", ".ppm"):
        raise ValueError(f"unsupported image suffix {suffix!r} (use .png or .ppm)")
    pil.save(path)


def write_plane_file(path, p) -> None:
    """Write a plane as 'P-PLANE h w\\n' plus row-major little-endian float64."""
    p = as_plane(p)
    with open(path, "wb") as f:
        f.write(f"P-PLANE {p.shape[0]} {p.shape[1]}\n".encode("ascii"))
        f.write(np.ascontiguousarray(p, dtype="<f8").tobytes())


def read_plane_file(path) -> np.ndarray:
    with open(path, "rb") as f:
        header = f.readline().decode("ascii", errors="replace").split()
        if len(header) != 3 or header[0] != "P-PLANE":
            raise ValueError(f"{path}: not a P-PLANE file")
        try:
            h, w = int(header[1]), int(header[2])
        except ValueError as exc:
            raise ValueError(f"{path}: bad P-PLANE dimensions {header[1:]}") from exc
        data = np.frombuffer(f.read(), dtype="<f8")
    if h < 1 or w < 1 or data.size != h * w:
        raise ValueError(f"{path}: expected {h}x{w} values, found {data.size}")
    return data.reshape(h, w).astype(np.float64)
