"""Finite-difference verification of every hand-written backward pass.

Each row perturbs randomly chosen parameter coordinates by +/-eps, forms the
central difference of the scalar loss, and compares it with the analytic
gradient at relative tolerance |a - f| / max(1, |a|, |f|).  Inputs are kept
away from clamp boundaries and pooling ties so the loss is differentiable at
the probed point.
"""

from __future__ import annotations

import time

import numpy as np

from .autonet import Conv, Fc, Flatten, MaxPool, Net, ParamBlocks, Relu, softmax_cross_entropy
from .classify import ClassNetConfig, build_class_net, classnet_forward
from .dynfilter import EnhanceNetConfig, build_enhance_net, enhancement_loss_and_grads, init_identity
from .pipeline import a1_sample_loss_and_grads

TOLERANCE = 1e-4
DEFAULT_COORDS = 100
DEFAULT_EPS = 1e-5


def fd_max_rel_error(make_loss, params: ParamBlocks, rng, coords=DEFAULT_COORDS, eps=DEFAULT_EPS):
    """Worst relative error between analytic and central-difference gradients.

    ``make_loss`` re-evaluates the model against the current parameter values
    and returns (loss, grads); perturbation happens in place.
    """
    _, grads = make_loss()
    total = params.total_count
    picks = rng.choice(total, size=min(coords, total), replace=False)
    worst = 0.0
    for i in picks:
        i = int(i)
        params.add_flat(i, eps)
        lp = make_loss()[0]
        params.add_flat(i, -2.0 * eps)
        lm = make_loss()[0]
        params.add_flat(i, eps)
        fd = (lp - lm) / (2.0 * eps)
        a = grads.get_flat(i)
        worst = max(worst, abs(a - fd) / max(1.0, abs(a), abs(fd)))
    return float(worst)


def _net_ce_row(name, specs, input_shape, label, rng):
    net = Net(specs, input_shape)
    params = net.init_params(rng)
    x = rng.uniform(-1.0, 1.0, input_shape)

    def make_loss():
        out, tape = net.forward(params, x)
        loss, glogits = softmax_cross_entropy(out, label)
        grads, _ = net.backward(params, tape, glogits)
        return loss, grads

    return name, fd_max_rel_error(make_loss, params, rng)


def _softmax_row(rng):
    logits = rng.uniform(-3.0, 3.0, 10)
    label = 4
    _, analytic = softmax_cross_entropy(logits, label)
    worst = 0.0
    for i in range(logits.size):
        logits[i] += DEFAULT_EPS
        lp = softmax_cross_entropy(logits, label)[0]
        logits[i] -= 2.0 * DEFAULT_EPS
        lm = softmax_cross_entropy(logits, label)[0]
        logits[i] += DEFAULT_EPS
        fd = (lp - lm) / (2.0 * DEFAULT_EPS)
        worst = max(worst, abs(analytic[i] - fd) / max(1.0, abs(analytic[i]), abs(fd)))
    return "softmax_xent", float(worst)


def _classnet_row(rng):
    ccfg = ClassNetConfig(class_count=4, input_extent=16, conv1_channels=4, conv2_channels=6, hidden=16)
    net = build_class_net(ccfg)
    params = net.init_params(rng)
    img = rng.uniform(0.1, 0.9, (16, 16, 3))

    def make_loss():
        logits, tape = classnet_forward(net, params, img)
        loss, glogits = softmax_cross_entropy(logits, 2)
        grads, _ = net.backward(params, tape, glogits)
        return loss, grads

    return "classnet", fd_max_rel_error(make_loss, params, rng)


def _enhance_cfg():
    return EnhanceNetConfig(
        filter_size=5, input_extent=24, conv1_channels=4, conv2_channels=6, hidden=16
    )


def _enhance_row(rng):
    ecfg = _enhance_cfg()
    net = build_enhance_net(ecfg)
    params = net.init_params(rng)
    y = rng.uniform(0.2, 0.8, (24, 24))
    target = rng.uniform(0.2, 0.8, (24, 24))

    def make_loss():
        loss, grads, _ = enhancement_loss_and_grads(net, ecfg, params, y, target)
        return loss, grads

    return "enhance_chain", fd_max_rel_error(make_loss, params, rng)


def _joint_rows(rng):
    """Joint loss probed through both networks; near-identity kernel keeps the
    enhanced image clear of the clamp."""
    ecfg = _enhance_cfg()
    enh_net = build_enhance_net(ecfg)
    eparams = init_identity(ecfg, enh_net, rng)
    head_w = enh_net.layer_names[-1] + ".w"
    eparams[head_w] += 0.01 * rng.standard_normal(eparams[head_w].shape)
    ccfg = ClassNetConfig(class_count=3, input_extent=24, conv1_channels=4, conv2_channels=6, hidden=16)
    cls_net = build_class_net(ccfg)
    cparams = cls_net.init_params(rng)
    rgb = rng.uniform(0.25, 0.75, (24, 24, 3))
    from . import imgcore

    y = imgcore.luminance(rgb)
    target = rng.uniform(0.3, 0.7, (24, 24))

    def make_loss_e():
        out = a1_sample_loss_and_grads(
            enh_net, ecfg, eparams, cls_net, cparams, rgb, y, target, 1
        )
        return out["loss_mse"] + out["loss_cls"], out["egrads"]

    def make_loss_c():
        out = a1_sample_loss_and_grads(
            enh_net, ecfg, eparams, cls_net, cparams, rgb, y, target, 1
        )
        return out["loss_mse"] + out["loss_cls"], out["cgrads"]

    return [
        ("joint_chain_enhance", fd_max_rel_error(make_loss_e, eparams, rng)),
        ("joint_chain_classnet", fd_max_rel_error(make_loss_c, cparams, rng)),
    ]


def run_all(seed: int = 0):
    """All gradient checks.  Returns (rows, elapsed_seconds)."""
    rng = np.random.default_rng(seed)
    t0 = time.perf_counter()
    rows = [
        _net_ce_row("fc", [Flatten(), Fc(8), Fc(3)], (2, 4, 4), 1, rng),
        _net_ce_row("relu", [Flatten(), Fc(8), Relu(), Fc(3)], (2, 4, 4), 0, rng),
        _net_ce_row("conv", [Conv(3, 3, stride=2), Relu(), Flatten(), Fc(4)], (2, 9, 9), 2, rng),
        _net_ce_row(
            "maxpool", [Conv(2, 3), Relu(), MaxPool(2), Flatten(), Fc(3)], (1, 8, 8), 1, rng
        ),
        _net_ce_row("flatten", [Flatten(), Fc(5)], (3, 4, 4), 3, rng),
        _softmax_row(rng),
        _classnet_row(rng),
        _enhance_row(rng),
    ]
    rows.extend(_joint_rows(rng))
    return rows, time.perf_counter() - t0
