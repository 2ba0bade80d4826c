"""Per-image enhancement kernels predicted by a small network.

A filter-generating network maps a luminance patch to the taps of one s x s
kernel; the kernel is then convolved over the same image's full-resolution
luminance.  Gradients of the enhancement error flow through the convolution
into the taps and from there into every network parameter, so the network
learns a different kernel for every image.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import imgcore
from .autonet import Conv, Fc, Flatten, MaxPool, Net, ParamBlocks, Relu

FILTER_SIZES = (5, 6, 7)


@dataclass(frozen=True)
class DynamicFilter:
    """An s x s kernel applied at a fixed anchor with replicate padding."""

    taps: np.ndarray

    def __post_init__(self):
        taps = np.asarray(self.taps, dtype=np.float64)
        if taps.ndim != 2 or taps.shape[0] != taps.shape[1]:
            raise ValueError(f"taps must be square, got shape {taps.shape}")
        if taps.shape[0] not in FILTER_SIZES:
            raise ValueError(f"filter size {taps.shape[0]} not in {FILTER_SIZES}")
        object.__setattr__(self, "taps", taps)

    @property
    def size(self) -> int:
        return self.taps.shape[0]

    @property
    def anchor(self) -> tuple[int, int]:
        a = (self.size - 1) // 2
        return (a, a)


def identity_filter(size: int) -> DynamicFilter:
    taps = np.zeros((size, size), dtype=np.float64)
    a = (size - 1) // 2
    taps[a, a] = 1.0
    return DynamicFilter(taps)


@dataclass(frozen=True)
class EnhanceNetConfig:
    """Architecture of the filter-generating network.

    The head width is filter_size**2; its output vector is reshaped row-major
    into the kernel.  Input is a single-channel input_extent^2 luminance patch.
    """

    filter_size: int = 6
    input_extent: int = 64
    conv1_channels: int = 8
    conv2_channels: int = 16
    conv_kernel: int = 5
    conv_stride: int = 2
    pool: int = 2
    hidden: int = 128

    def __post_init__(self):
        if self.filter_size not in FILTER_SIZES:
            raise ValueError(f"filter_size {self.filter_size} not in {FILTER_SIZES}")
        if self.input_extent < 16:
            raise ValueError("input_extent must be >= 16")

    @property
    def head_size(self) -> int:
        return self.filter_size * self.filter_size


def paper_scale_config() -> EnhanceNetConfig:
    """Full-scale variant used only for the parameter-count audit (~570k)."""
    return EnhanceNetConfig(
        filter_size=6,
        input_extent=224,
        conv1_channels=8,
        conv2_channels=16,
        conv_kernel=5,
        conv_stride=2,
        pool=2,
        hidden=52,
    )


def build_enhance_net(cfg: EnhanceNetConfig) -> Net:
    specs = [
        Conv(cfg.conv1_channels, cfg.conv_kernel, cfg.conv_stride),
        Relu(),
        Conv(cfg.conv2_channels, cfg.conv_kernel, cfg.conv_stride),
        Relu(),
        MaxPool(cfg.pool),
        Flatten(),
        Fc(cfg.hidden),
        Relu(),
        Fc(cfg.head_size),
    ]
    return Net(specs, (1, cfg.input_extent, cfg.input_extent))


def head_block_names(net: Net) -> tuple[str, str]:
    """Names of the last fully connected layer's weight and bias blocks."""
    fc_names = [n for n, _ in net.param_layout if n.startswith("fc")]
    return fc_names[-2], fc_names[-1]


def init_identity(cfg: EnhanceNetConfig, net: Net, rng: np.random.Generator) -> ParamBlocks:
    """Standard init everywhere except the head: zero weights, identity bias.

    The head bias is the flattened identity kernel, so before any training the
    predicted filter is exactly the identity and the enhanced image equals the
    input bit for bit.
    """
    params = net.init_params(rng)
    w_name, b_name = head_block_names(net)
    params[w_name][:] = 0.0
    bias = params[b_name]
    bias[:] = 0.0
    bias[:] = identity_filter(cfg.filter_size).taps.reshape(-1)
    return params


def prepare_input(y, extent: int) -> np.ndarray:
    """Luminance plane -> (1, extent, extent) tensor.

    Non-square planes are center-cropped to their shorter side first, then
    bilinearly resized; a plane already at the target extent passes through
    untouched, which keeps training on matched crops exact.
    """
    y = imgcore.as_plane(y)
    if y.shape != (extent, extent):
        y = imgcore.center_square(y)
        y = imgcore.resize_bilinear(y, extent, extent)
    return y[np.newaxis, :, :]


def generate_filter(net: Net, cfg: EnhanceNetConfig, params: ParamBlocks, y) -> tuple[DynamicFilter, list]:
    """Predict the kernel for one image; the tape supports backprop later."""
    x = prepare_input(y, cfg.input_extent)
    out, tape = net.forward(params, x)
    taps = out.reshape(cfg.filter_size, cfg.filter_size)
    return DynamicFilter(taps), tape


def apply_filter(y, filt: DynamicFilter) -> np.ndarray:
    """Convolve the predicted kernel over full-resolution luminance."""
    return imgcore.convolve2d(y, filt.taps, filt.anchor)


def tap_gradient(y, grad_out, size: int) -> np.ndarray:
    """d(loss)/d(taps) given d(loss)/d(filtered plane).

    G(u, v) = sum_{i,j} grad_out(i, j) * y(i + u - a, j + v - a) with replicate
    reads, the exact adjoint of apply_filter w.r.t. the kernel.
    """
    y = imgcore.as_plane(y)
    g = imgcore.as_plane(grad_out)
    if y.shape != g.shape:
        raise ValueError(f"plane {y.shape} and gradient {g.shape} must match")
    a = (size - 1) // 2
    h, w = y.shape
    padded = np.pad(y, ((a, size - 1 - a), (a, size - 1 - a)), mode="edge")
    taps = np.empty((size, size), dtype=np.float64)
    for u in range(size):
        for v in range(size):
            taps[u, v] = float(np.sum(g * padded[u : u + h, v : v + w]))
    return taps


def enhancement_loss_and_grads(
    net: Net, cfg: EnhanceNetConfig, params: ParamBlocks, y, target
) -> tuple[float, ParamBlocks, np.ndarray]:
    """MSE between the filtered plane and its target, plus network gradients.

    Returns (mse, gradients, filtered plane).  The gradient path runs through
    both the predicted taps and the convolution.
    """
    y = imgcore.as_plane(y)
    t = imgcore.as_plane(target)
    if y.shape != t.shape:
        raise ValueError(f"plane {y.shape} and target {t.shape} must match")
    filt, tape = generate_filter(net, cfg, params, y)
    filtered = apply_filter(y, filt)
    diff = filtered - t
    loss = float(np.mean(diff * diff))
    g_taps = tap_gradient(y, (2.0 / diff.size) * diff, cfg.filter_size)
    grads, _ = net.backward(params, tape, g_taps.reshape(-1))
    return loss, grads, filtered


def write_filter(path_base, filt: DynamicFilter) -> None:
    """Write taps as both a raw plane file and a readable text matrix."""
    base = Path(path_base)
    imgcore.write_plane_file(base.with_suffix(base.suffix + ".plane"), filt.taps)
    lines = [
        " ".join(f"{v: .17g}" for v in row)
        for row in filt.taps
    ]
    base.with_suffix(base.suffix + ".txt").write_text("\n".join(lines) + "\n", encoding="ascii")


def read_filter(path) -> DynamicFilter:
    return DynamicFilter(imgcore.read_plane_file(path))
