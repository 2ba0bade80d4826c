"""Minimal differentiable network engine: layers, loss, SGD, checkpoints.

Everything is float64 and single-sample: activations are (channels, h, w)
arrays or flat vectors, parameters live in named blocks.  Every analytic
gradient here is checked against central finite differences in the test
suite; that check is the correctness anchor for the whole package.
"""

from __future__ import annotations

import bisect
from dataclasses import dataclass

import numpy as np

_CHECKPOINT_MAGIC = b"DYNENHNET 1\n"


# ---------------------------------------------------------------------------
# layer specs


@dataclass(frozen=True)
class Conv:
    """Valid (unpadded) strided convolution in correlation convention."""

    channels: int
    kernel: int
    stride: int = 1


@dataclass(frozen=True)
class Relu:
    pass


@dataclass(frozen=True)
class MaxPool:
    """Non-overlapping size x size max pooling; trailing remainder is dropped."""

    size: int = 2


@dataclass(frozen=True)
class Flatten:
    pass


@dataclass(frozen=True)
class Fc:
    width: int


LayerSpec = Conv | Relu | MaxPool | Flatten | Fc


# ---------------------------------------------------------------------------
# parameter storage


class ParamBlocks:
    """Ordered named float64 arrays, flat-addressable for finite differences.

    Used for both parameters and gradients (identical layout).
    """

    def __init__(self, blocks: dict[str, np.ndarray]):
        self.blocks = {k: np.asarray(v, dtype=np.float64) for k, v in blocks.items()}
        self._offsets: list[int] = []
        self._names: list[str] = []
        total = 0
        for name, arr in self.blocks.items():
            self._names.append(name)
            self._offsets.append(total)
            total += arr.size
        self._total = total

    def __getitem__(self, name: str) -> np.ndarray:
        return self.blocks[name]

    def __setitem__(self, name: str, value) -> None:
        if name not in self.blocks:
            raise KeyError(f"unknown block {name!r}")
        arr = np.asarray(value, dtype=np.float64)
        if arr.shape != self.blocks[name].shape:
            raise ValueError(
                f"block {name!r} has shape {self.blocks[name].shape}, got {arr.shape}"
            )
        self.blocks[name] = arr

    def __contains__(self, name: str) -> bool:
        return name in self.blocks

    def names(self) -> list[str]:
        return list(self._names)

    @property
    def total_count(self) -> int:
        return self._total

    def copy(self) -> "ParamBlocks":
        return ParamBlocks({k: v.copy() for k, v in self.blocks.items()})

    def zeros_like(self) -> "ParamBlocks":
        return ParamBlocks({k: np.zeros_like(v) for k, v in self.blocks.items()})

    def _locate(self, index: int) -> tuple[str, int]:
        if not 0 <= index < self._total:
            raise IndexError(f"flat index {index} out of range 0..{self._total - 1}")
        pos = bisect.bisect_right(self._offsets, index) - 1
        return self._names[pos], index - self._offsets[pos]

    def get_flat(self, index: int) -> float:
        name, off = self._locate(index)
        return float(self.blocks[name].ravel()[off])

    def add_flat(self, index: int, delta: float) -> None:
        name, off = self._locate(index)
        self.blocks[name].ravel()[off] += delta

    def allclose(self, other: "ParamBlocks", **kw) -> bool:
        return self.names() == other.names() and all(
            np.allclose(self.blocks[n], other.blocks[n], **kw) for n in self.names()
        )


# ---------------------------------------------------------------------------
# shape inference and the network


def _out_extent(extent: int, kernel: int, stride: int) -> int:
    return (extent - kernel) // stride + 1


class Net:
    """A feed-forward stack built from layer specs with shapes fixed at build.

    Shape or spec problems surface here as ValueError, never as silent
    broadcasting later.
    """

    def __init__(self, specs, input_shape):
        self.specs: tuple[LayerSpec, ...] = tuple(specs)
        self.input_shape = tuple(int(d) for d in input_shape)
        self.shapes: list[tuple[int, ...]] = [self.input_shape]
        self.layer_names: list[str] = []
        self.param_layout: list[tuple[str, tuple[int, ...]]] = []
        counts = {"conv": 0, "fc": 0}
        shape = self.input_shape
        for spec in self.specs:
            if isinstance(spec, Conv):
                if len(shape) != 3:
                    raise ValueError(f"conv needs (c, h, w) input, got {shape}")
                c, h, w = shape
                if spec.kernel < 1 or spec.kernel > min(h, w):
                    raise ValueError(f"conv kernel {spec.kernel} does not fit {shape}")
                if spec.stride < 1:
                    raise ValueError("conv stride must be >= 1")
                counts["conv"] += 1
                name = f"conv{counts['conv']}"
                self.param_layout.append((f"{name}.w", (spec.channels, c, spec.kernel, spec.kernel)))
                self.param_layout.append((f"{name}.b", (spec.channels,)))
                shape = (
                    spec.channels,
                    _out_extent(h, spec.kernel, spec.stride),
                    _out_extent(w, spec.kernel, spec.stride),
                )
            elif isinstance(spec, Relu):
                name = "relu"
            elif isinstance(spec, MaxPool):
                if len(shape) != 3:
                    raise ValueError(f"maxpool needs (c, h, w) input, got {shape}")
                if spec.size < 1 or shape[1] < spec.size or shape[2] < spec.size:
                    raise ValueError(f"maxpool size {spec.size} does not fit {shape}")
                name = "maxpool"
                shape = (shape[0], shape[1] // spec.size, shape[2] // spec.size)
            elif isinstance(spec, Flatten):
                if len(shape) != 3:
                    raise ValueError(f"flatten needs (c, h, w) input, got {shape}")
                name = "flatten"
                shape = (shape[0] * shape[1] * shape[2],)
            elif isinstance(spec, Fc):
                if len(shape) != 1:
                    raise ValueError(f"fc needs a flat input, got {shape}")
                if spec.width < 1:
                    raise ValueError("fc width must be >= 1")
                counts["fc"] += 1
                name = f"fc{counts['fc']}"
                self.param_layout.append((f"{name}.w", (spec.width, shape[0])))
                self.param_layout.append((f"{name}.b", (spec.width,)))
                shape = (spec.width,)
            else:
                raise ValueError(f"unknown layer spec {spec!r}")
            self.layer_names.append(name)
            self.shapes.append(shape)

    @property
    def output_shape(self) -> tuple[int, ...]:
        return self.shapes[-1]

    @property
    def param_count(self) -> int:
        return sum(int(np.prod(s)) for _, s in self.param_layout)

    def init_params(self, rng: np.random.Generator) -> ParamBlocks:
        """Uniform +-sqrt(6 / (fan_in + fan_out)) weights, zero biases."""
        blocks: dict[str, np.ndarray] = {}
        for name, shape in self.param_layout:
            if name.endswith(".b"):
                blocks[name] = np.zeros(shape, dtype=np.float64)
                continue
            if len(shape) == 4:  # conv: (out_c, in_c, k, k)
                fan_in = shape[1] * shape[2] * shape[3]
                fan_out = shape[0] * shape[2] * shape[3]
            else:  # fc: (out, in)
                fan_in = shape[1]
                fan_out = shape[0]
            limit = float(np.sqrt(6.0 / (fan_in + fan_out)))
            blocks[name] = rng.uniform(-limit, limit, size=shape)
        return ParamBlocks(blocks)

    def _check_params(self, params: ParamBlocks) -> None:
        for name, shape in self.param_layout:
            if name not in params or params[name].shape != shape:
                raise ValueError(f"parameter block {name} missing or has wrong shape")

    # -- forward ------------------------------------------------------------

    def forward(self, params: ParamBlocks, x) -> tuple[np.ndarray, list]:
        self._check_params(params)
        a = np.asarray(x, dtype=np.float64)
        if a.shape != self.input_shape:
            raise ValueError(f"input shape {a.shape} != expected {self.input_shape}")
        tape: list = []
        for spec, name in zip(self.specs, self.layer_names):
            if isinstance(spec, Conv):
                a, cache = _conv_forward(a, params[f"{name}.w"], params[f"{name}.b"], spec.stride)
            elif isinstance(spec, Relu):
                cache = a > 0.0
                a = np.maximum(a, 0.0)
            elif isinstance(spec, MaxPool):
                a, cache = _maxpool_forward(a, spec.size)
            elif isinstance(spec, Flatten):
                cache = a.shape
                a = a.reshape(-1)
            else:  # Fc
                cache = a
                a = params[f"{name}.w"] @ a + params[f"{name}.b"]
            tape.append(cache)
        return a, tape

    # -- backward -----------------------------------------------------------

    def backward(self, params: ParamBlocks, tape: list, grad_out) -> tuple[ParamBlocks, np.ndarray]:
        """Gradients of a scalar loss w.r.t. every parameter and the input."""
        self._check_params(params)
        if len(tape) != len(self.specs):
            raise ValueError(f"tape has {len(tape)} entries for {len(self.specs)} layers")
        g = np.asarray(grad_out, dtype=np.float64)
        if g.shape != self.output_shape:
            raise ValueError(f"grad shape {g.shape} != output shape {self.output_shape}")
        grads: dict[str, np.ndarray] = {}
        for i in range(len(self.specs) - 1, -1, -1):
            spec, name, cache = self.specs[i], self.layer_names[i], tape[i]
            if isinstance(spec, Conv):
                g, gw, gb = _conv_backward(g, cache, params[f"{name}.w"], spec.stride)
                grads[f"{name}.w"] = gw
                grads[f"{name}.b"] = gb
            elif isinstance(spec, Relu):
                g = g * cache
            elif isinstance(spec, MaxPool):
                g = _maxpool_backward(g, cache, spec.size)
            elif isinstance(spec, Flatten):
                g = g.reshape(cache)
            else:  # Fc
                x = cache
                grads[f"{name}.w"] = np.outer(g, x)
                grads[f"{name}.b"] = g.copy()
                g = params[f"{name}.w"].T @ g
        ordered = {name: grads[name] for name, _ in self.param_layout}
        return ParamBlocks(ordered), g


def _conv_windows(x: np.ndarray, k: int, stride: int) -> np.ndarray:
    """(c, h, w) -> (positions, c*k*k) patch matrix in row-major window order."""
    win = np.lib.stride_tricks.sliding_window_view(x, (k, k), axis=(1, 2))
    win = win[:, ::stride, ::stride]
    c, oh, ow = win.shape[0], win.shape[1], win.shape[2]
    return win.transpose(1, 2, 0, 3, 4).reshape(oh * ow, c * k * k), oh, ow


def _conv_forward(x, w, b, stride):
    oc, _, k, _ = w.shape
    patches, oh, ow = _conv_windows(x, k, stride)
    out = patches @ w.reshape(oc, -1).T + b
    return out.T.reshape(oc, oh, ow), x


def _conv_backward(grad_out, x, w, stride):
    oc, ic, k, _ = w.shape
    oh, ow = grad_out.shape[1], grad_out.shape[2]
    g2 = grad_out.reshape(oc, oh * ow)
    patches, _, _ = _conv_windows(x, k, stride)
    grad_w = (g2 @ patches).reshape(w.shape)
    grad_b = g2.sum(axis=1)
    per_patch = (g2.T @ w.reshape(oc, -1)).reshape(oh, ow, ic, k, k)
    grad_x = np.zeros_like(x)
    for u in range(k):
        for v in range(k):
            grad_x[:, u : u + oh * stride : stride, v : v + ow * stride : stride] += (
                per_patch[:, :, :, u, v].transpose(2, 0, 1)
            )
    return grad_x, grad_w, grad_b


def _maxpool_forward(x, m):
    c, h, w = x.shape
    oh, ow = h // m, w // m
    xw = x[:, : oh * m, : ow * m].reshape(c, oh, m, ow, m)
    xw = xw.transpose(0, 1, 3, 2, 4).reshape(c, oh, ow, m * m)
    idx = xw.argmax(axis=3)  # first max in row-major window order on ties
    out = np.take_along_axis(xw, idx[..., None], axis=3)[..., 0]
    return out, (idx, x.shape)


def _maxpool_backward(grad_out, cache, m):
    idx, in_shape = cache
    c, h, w = in_shape
    oh, ow = h // m, w // m
    g4 = np.zeros((c, oh, ow, m * m), dtype=np.float64)
    np.put_along_axis(g4, idx[..., None], grad_out[..., None], axis=3)
    g = g4.reshape(c, oh, ow, m, m).transpose(0, 1, 3, 2, 4).reshape(c, oh * m, ow * m)
    if (oh * m, ow * m) != (h, w):
        full = np.zeros(in_shape, dtype=np.float64)
        full[:, : oh * m, : ow * m] = g
        return full
    return g


# ---------------------------------------------------------------------------
# loss


def softmax_cross_entropy(logits, label: int) -> tuple[float, np.ndarray]:
    """Stable softmax + negative log-likelihood; returns (loss, dloss/dlogits)."""
    z = np.asarray(logits, dtype=np.float64)
    if z.ndim != 1 or z.size < 2:
        raise ValueError(f"logits must be a vector of length >= 2, got shape {z.shape}")
    if not 0 <= int(label) < z.size:
        raise ValueError(f"label {label} outside 0..{z.size - 1}")
    shifted = z - z.max()
    log_norm = float(np.log(np.sum(np.exp(shifted))))
    loss = log_norm - float(shifted[int(label)])
    grad = np.exp(shifted - log_norm)
    grad[int(label)] -= 1.0
    return loss, grad


def softmax_probs(logits) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    shifted = z - z.max()
    e = np.exp(shifted)
    return e / e.sum()


# ---------------------------------------------------------------------------
# SGD


@dataclass(frozen=True)
class SgdConfig:
    learning_rate: float
    weight_decay: float = 5e-4
    momentum: float = 0.9
    lr_decay_factor: float = 0.1
    lr_decay_every: int = 15000

    def lr_at(self, step: int) -> float:
        return self.learning_rate * self.lr_decay_factor ** (step // self.lr_decay_every)


class SgdOptimizer:
    """Momentum SGD with coupled weight decay and a stepped learning-rate decay.

    v <- momentum*v + grad + weight_decay*param; param <- param - lr(step)*scale*v.
    `block_lr_scale` holds optional per-block multipliers (missing blocks use 1).
    """

    def __init__(self, cfg: SgdConfig, params: ParamBlocks,
                 block_lr_scale: dict[str, float] | None = None):
        self.cfg = cfg
        self.velocity = params.zeros_like()
        self.block_lr_scale = dict(block_lr_scale or {})
        self.steps = 0

    def step(self, params: ParamBlocks, grads: ParamBlocks) -> None:
        lr = self.cfg.lr_at(self.steps)
        for name in params.names():
            v = self.velocity[name]
            v *= self.cfg.momentum
            v += grads[name]
            v += self.cfg.weight_decay * params[name]
            params[name] -= lr * self.block_lr_scale.get(name, 1.0) * v
        self.steps += 1


# ---------------------------------------------------------------------------
# checkpoints


def save_params(path, params: ParamBlocks) -> None:
    """Versioned binary checkpoint: magic, block manifest, little-endian float64."""
    with open(path, "wb") as f:
        f.write(_CHECKPOINT_MAGIC)
        f.write(f"{len(params.blocks)}\n".encode("ascii"))
        for name, arr in params.blocks.items():
            dims = " ".join(str(d) for d in arr.shape)
            f.write(f"{name} {arr.ndim} {dims}\n".encode("ascii"))
        for arr in params.blocks.values():
            f.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_params(path) -> ParamBlocks:
    with open(path, "rb") as f:
        magic = f.readline(len(_CHECKPOINT_MAGIC) + 1)
        if magic != _CHECKPOINT_MAGIC:
            raise ValueError(f"{path}: not a network checkpoint (bad magic)")
        try:
            count = int(f.readline().decode("ascii").strip())
        except ValueError as exc:
            raise ValueError(f"{path}: corrupt checkpoint manifest") from exc
        layout: list[tuple[str, tuple[int, ...]]] = []
        for _ in range(count):
            parts = f.readline().decode("ascii").split()
            if len(parts) < 2:
                raise ValueError(f"{path}: corrupt checkpoint manifest")
            name, ndim = parts[0], int(parts[1])
            shape = tuple(int(d) for d in parts[2 : 2 + ndim])
            if len(shape) != ndim:
                raise ValueError(f"{path}: corrupt shape for block {name}")
            layout.append((name, shape))
        blocks: dict[str, np.ndarray] = {}
        for name, shape in layout:
            n = int(np.prod(shape)) if shape else 1
            raw = f.read(8 * n)
            if len(raw) != 8 * n:
                raise ValueError(f"{path}: truncated data for block {name}")
            blocks[name] = np.frombuffer(raw, dtype="<f8").reshape(shape).astype(np.float64)
    return ParamBlocks(blocks)
