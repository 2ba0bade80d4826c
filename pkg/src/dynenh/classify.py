"""Classifier network over RGB inputs plus evaluation metrics."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .autonet import Conv, Fc, Flatten, MaxPool, Net, ParamBlocks, Relu

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ClassNetConfig:
    class_count: int
    input_extent: int = 64
    conv1_channels: int = 16
    conv2_channels: int = 32
    kernel: int = 3
    pool: int = 2
    hidden: int = 128

    def __post_init__(self):
        if self.class_count < 2:
            raise ValueError("class_count must be >= 2")
        if self.input_extent < 16:
            raise ValueError("input_extent must be >= 16")


def build_class_net(cfg: ClassNetConfig) -> Net:
    specs = [
        Conv(cfg.conv1_channels, cfg.kernel),
        Relu(),
        MaxPool(cfg.pool),
        Conv(cfg.conv2_channels, cfg.kernel),
        Relu(),
        MaxPool(cfg.pool),
        Flatten(),
        Fc(cfg.hidden),
        Relu(),
        Fc(cfg.class_count),
    ]
    return Net(specs, (3, cfg.input_extent, cfg.input_extent))


def body_lr_scales(net: Net, body_scale: float, head_scale: float = 1.0) -> dict[str, float]:
    """Per-block learning-rate multipliers: conv body vs the two fc layers."""
    scales: dict[str, float] = {}
    for name, _ in net.param_layout:
        scales[name] = head_scale if name.startswith("fc") else body_scale
    return scales


def image_to_tensor(img) -> np.ndarray:
    a = np.asarray(img, dtype=np.float64)
    if a.ndim != 3 or a.shape[2] != 3:
        raise ValueError(f"expected (h, w, 3) image, got {a.shape}")
    return a.transpose(2, 0, 1)


def tensor_to_image(t) -> np.ndarray:
    return np.asarray(t, dtype=np.float64).transpose(1, 2, 0)


INPUT_CENTER = 0.5  # mid-gray reference subtracted from inputs, like mean-pixel centering


def classnet_forward(net: Net, params: ParamBlocks, img) -> tuple[np.ndarray, list]:
    """Forward an (extent, extent, 3) image; returns (logits, tape).

    Inputs are centered by subtracting the mid-gray reference; the shift is
    constant, so image-space gradients are unaffected.
    """
    return net.forward(params, image_to_tensor(img) - INPUT_CENTER)


def accuracy(probs, labels) -> float:
    """Fraction of argmax matches; ties resolve to the lowest class index."""
    p = np.asarray(probs, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    if p.ndim != 2 or p.shape[0] != y.shape[0]:
        raise ValueError(f"predictions {p.shape} and labels {y.shape} do not line up")
    if p.shape[0] == 0:
        raise ValueError("cannot score an empty evaluation set")
    return float(np.mean(p.argmax(axis=1) == y))


def mean_average_precision(scores, label_sets) -> float:
    """Unweighted mean over classes of average precision.

    Samples are ranked per class by descending score, ties broken by sample
    index; AP averages precision at each positive's rank.  Classes with no
    positive samples are excluded (logged).
    """
    s = np.asarray(scores, dtype=np.float64)
    if s.ndim != 2 or s.shape[0] != len(label_sets):
        raise ValueError(f"scores {s.shape} and {len(label_sets)} label sets do not line up")
    if s.shape[0] == 0:
        raise ValueError("cannot score an empty evaluation set")
    aps = []
    for c in range(s.shape[1]):
        positives = np.array([c in ls for ls in label_sets], dtype=bool)
        if not positives.any():
            log.warning("class %d has no positive samples; excluded from mAP", c)
            continue
        order = np.argsort(-s[:, c], kind="stable")
        hits = positives[order]
        ranks = np.flatnonzero(hits) + 1
        found = np.arange(1, ranks.size + 1)
        aps.append(float(np.mean(found / ranks)))
    if not aps:
        raise ValueError("no class has positive samples")
    return float(np.mean(aps))
