"""Classical enhancement methods and the targets they define.

Five methods operate on a luminance plane: three edge-aware smoothers
(weighted-least-squares, bilateral, guided) whose smoothed output is turned
into a detail-boost target base + c*(y - base), plus histogram equalization
and unsharp masking which are targets as-is.  Targets are deterministic so
they can be cached on disk and reused across runs.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from . import imgcore


class EnhanceMethod(enum.Enum):
    BF = "bf"
    WLS = "wls"
    GF = "gf"
    HISTEQ = "histeq"
    IMSHARP = "imsharp"


# Fusion order; K = len(METHODS).
METHODS: tuple[EnhanceMethod, ...] = tuple(EnhanceMethod)


def method_from_name(name: str) -> EnhanceMethod:
    try:
        return EnhanceMethod(name.lower())
    except ValueError:
        raise ValueError(
            f"unknown enhancement method {name!r}; choose from "
            f"{[m.value for m in METHODS]}"
        ) from None


@dataclass(frozen=True)
class EnhanceParams:
    """Knobs for target synthesis.

    The smoothing filters adapt to image geometry/statistics: the bilateral
    sigmas scale with the image diagonal and intensity spread, the guided
    radius with the shorter side, its regularizer with intensity variance.
    """

    wls_lambda: float = 0.125
    wls_alpha: float = 1.2
    wls_eps: float = 1e-4
    bf_sigma_spatial_frac: float = 0.02
    bf_sigma_range_frac: float = 0.5
    gf_radius_frac: float = 0.04
    gf_eps_frac: float = 0.01
    sharp_radius: float = 1.0
    sharp_amount: float = 2.0
    detail_boost: float = 1.2

    def __post_init__(self):
        if self.wls_lambda < 0:
            raise ValueError("wls_lambda must be >= 0")
        if self.wls_eps <= 0 or self.gf_eps_frac < 0:
            raise ValueError("regularizers must be positive")
        if self.sharp_radius <= 0:
            raise ValueError("sharp_radius must be > 0")


class WlsConvergenceError(RuntimeError):
    """Conjugate gradient failed to reach the residual tolerance."""

    def __init__(self, residual: float, iterations: int):
        super().__init__(
            f"WLS solver stalled after {iterations} iterations, "
            f"max|residual| = {residual:.3e}"
        )
        self.residual = residual
        self.iterations = iterations


def _wls_weights(y: np.ndarray, alpha: float, eps: float):
    """Smoothness weights from log-luminance gradients.

    ax[i, j] weights the horizontal edge (i, j)-(i, j+1); ay the vertical
    edge (i, j)-(i+1, j).  Large gradients get small weights so edges survive.
    """
    ll = np.log(y + 1e-4)
    gx = ll[:, 1:] - ll[:, :-1]
    gy = ll[1:, :] - ll[:-1, :]
    ax = 1.0 / (np.abs(gx) ** alpha + eps)
    ay = 1.0 / (np.abs(gy) ** alpha + eps)
    return ax, ay


def _wls_apply(u: np.ndarray, ax: np.ndarray, ay: np.ndarray, lam: float) -> np.ndarray:
    """Apply the 5-point operator (I + lam*L) with edge weights ax, ay."""
    dx = ax * (u[:, 1:] - u[:, :-1])
    dy = ay * (u[1:, :] - u[:-1, :])
    lap = np.zeros_like(u)
    lap[:, :-1] -= dx
    lap[:, 1:] += dx
    lap[:-1, :] -= dy
    lap[1:, :] += dy
    # lap(p) = -sum_{q~p} a_pq (u_q - u_p), i.e. the weighted graph Laplacian
    return u + lam * lap


def wls_smooth(
    y,
    lam: float = 0.125,
    alpha: float = 1.2,
    eps: float = 1e-4,
    tol: float = 1e-6,
    max_iter: int = 20000,
) -> np.ndarray:
    """Edge-aware smoothing by solving (I + lam*A) u = y.

    A is the 5-point weighted Laplacian built from log-luminance gradients.
    Solved matrix-free with Jacobi-preconditioned conjugate gradient until
    max|(I + lam*A) u - y| < tol; raises WlsConvergenceError past max_iter.
    """
    y = imgcore.as_plane(y)
    if lam == 0.0:
        return y.copy()
    ax, ay = _wls_weights(y, alpha, eps)

    diag = np.ones_like(y)
    diag[:, :-1] += lam * ax
    diag[:, 1:] += lam * ax
    diag[:-1, :] += lam * ay
    diag[1:, :] += lam * ay

    u = y.copy()
    r = y - _wls_apply(u, ax, ay, lam)
    z = r / diag
    p = r / diag
    rz = float(np.sum(r * z))
    for it in range(max_iter):
        if float(np.max(np.abs(r))) < tol:
            true_r = y - _wls_apply(u, ax, ay, lam)
            if float(np.max(np.abs(true_r))) < tol:
                return u
            # recursive residual drifted; restart from the true one
            r = true_r
            z = r / diag
            p = r / diag
            rz = float(np.sum(r * z))
        ap = _wls_apply(p, ax, ay, lam)
        pap = float(np.sum(p * ap))
        if pap <= 0.0:
            break
        step = rz / pap
        u += step * p
        r -= step * ap
        z = r / diag
        rz_new = float(np.sum(r * z))
        p = z + (rz_new / rz) * p
        rz = rz_new
    final = float(np.max(np.abs(y - _wls_apply(u, ax, ay, lam))))
    if final < tol:
        return u
    raise WlsConvergenceError(final, max_iter)


def bilateral(y, sigma_spatial: float, sigma_range: float) -> np.ndarray:
    """Direct bilateral filter over a square window truncated at 3*sigma_spatial."""
    y = imgcore.as_plane(y)
    if sigma_spatial <= 0 or sigma_range <= 0:
        raise ValueError("bilateral sigmas must be > 0")
    h, w = y.shape
    r = int(math.ceil(3.0 * sigma_spatial))
    padded = np.pad(y, r, mode="edge")
    num = np.zeros_like(y)
    den = np.zeros_like(y)
    inv2ss = 1.0 / (2.0 * sigma_spatial * sigma_spatial)
    inv2sr = 1.0 / (2.0 * sigma_range * sigma_range)
    for du in range(-r, r + 1):
        for dv in range(-r, r + 1):
            sw = math.exp(-(du * du + dv * dv) * inv2ss)
            shifted = padded[r + du : r + du + h, r + dv : r + dv + w]
            wgt = sw * np.exp(-((shifted - y) ** 2) * inv2sr)
            num += wgt * shifted
            den += wgt
    return num / den


def guided(y, guide, radius: int, eps: float) -> np.ndarray:
    """Guided filter via box filters: out = mean_a * guide + mean_b, O(h*w)."""
    y = imgcore.as_plane(y)
    g = imgcore.as_plane(guide)
    if y.shape != g.shape:
        raise ValueError(f"input {y.shape} and guide {g.shape} must match")
    if radius < 1:
        raise ValueError("radius must be >= 1")
    if eps <= 0:
        raise ValueError("eps must be > 0")
    mean_g = imgcore.box_filter(g, radius)
    mean_y = imgcore.box_filter(y, radius)
    mean_gy = imgcore.box_filter(g * y, radius)
    mean_gg = imgcore.box_filter(g * g, radius)
    var_g = mean_gg - mean_g * mean_g
    a = (mean_gy - mean_g * mean_y) / (var_g + eps)
    b = mean_y - a * mean_g
    return imgcore.box_filter(a, radius) * g + imgcore.box_filter(b, radius)


def hist_equalize(y) -> np.ndarray:
    """256-bin histogram equalization; a constant plane comes back unchanged."""
    y = imgcore.as_plane(y)
    idx = np.minimum((imgcore.clamp01(y) * 256.0).astype(np.int64), 255)
    counts = np.bincount(idx.ravel(), minlength=256)
    cdf = np.cumsum(counts) / idx.size
    occupied = np.flatnonzero(counts)
    cdf_min = cdf[occupied[0]]
    if cdf_min >= 1.0:
        return y.copy()
    return (cdf[idx] - cdf_min) / (1.0 - cdf_min)


def unsharp(y, radius: float, amount: float) -> np.ndarray:
    """clamp(y + amount * (y - gaussian_blur(y, radius))), blur truncated at 3*radius."""
    y = imgcore.as_plane(y)
    return imgcore.clamp01(y + amount * (y - imgcore.gaussian_blur(y, radius)))


def _detail_boost(y: np.ndarray, base: np.ndarray, c: float) -> np.ndarray:
    return imgcore.clamp01(base + c * (y - base))


def make_target(method: EnhanceMethod, y, params: EnhanceParams | None = None) -> np.ndarray:
    """Synthesize the training target for one method on a luminance plane."""
    params = params or EnhanceParams()
    y = imgcore.as_plane(y)
    h, w = y.shape
    if method is EnhanceMethod.IMSHARP:
        return unsharp(y, params.sharp_radius, params.sharp_amount)
    if method is EnhanceMethod.HISTEQ:
        return hist_equalize(y)
    if method is EnhanceMethod.WLS:
        base = wls_smooth(y, params.wls_lambda, params.wls_alpha, params.wls_eps)
    elif method is EnhanceMethod.BF:
        sigma_s = params.bf_sigma_spatial_frac * math.hypot(h, w)
        sigma_r = max(params.bf_sigma_range_frac * float(np.std(y)), 1e-6)
        base = bilateral(y, sigma_s, sigma_r)
    elif method is EnhanceMethod.GF:
        radius = max(1, int(round(params.gf_radius_frac * min(h, w))))
        eps = max(params.gf_eps_frac * float(np.var(y)), 1e-4)
        base = guided(y, y, radius, eps)
    else:
        raise ValueError(f"unhandled method {method}")
    return _detail_boost(y, base, params.detail_boost)


def make_all_targets(y, params: EnhanceParams | None = None) -> dict[EnhanceMethod, np.ndarray]:
    return {m: make_target(m, y, params) for m in METHODS}
