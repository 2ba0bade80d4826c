"""Training pipelines: single-filter, static-bank, and multi-filter variants.

Four trainable setups share one classifier architecture:

* ``fc``  - classifier on plain RGB (the baseline, and phase 1 of the rest).
* ``a1``  - one filter-generating network + classifier, trained jointly on
  enhancement MSE plus classification loss.
* ``a2``  - a bank of fixed filters (per-image kernels averaged into one
  static kernel per method) feeding K+1 streams into the classifier; only the
  classifier trains, streams weighted by the error-derived rule.
* ``a3``  - K filter-generating networks trained jointly with the classifier;
  stream weights are recomputed per sample from current enhancement errors
  and frozen as a running mean over the final epoch.

Enhanced RGB images are rebuilt by adding the luminance delta to every
channel before clamping: algebraically identical to converting back from
YCbCr (chroma differences cancel exactly) but free of float round-trip
residue, so an identity kernel reproduces the input bit for bit.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import dataio, imgcore
from .autonet import Net, ParamBlocks, SgdConfig, SgdOptimizer, softmax_cross_entropy, softmax_probs
from .classify import ClassNetConfig, body_lr_scales, build_class_net, classnet_forward
from .dynfilter import (
    DynamicFilter,
    EnhanceNetConfig,
    apply_filter,
    build_enhance_net,
    generate_filter,
    identity_filter,
    init_identity,
    tap_gradient,
)
from .enhance import METHODS, EnhanceMethod

log = logging.getLogger(__name__)

APPROACHES = ("fc", "a1", "a2", "a3")


# ---------------------------------------------------------------------------
# stream weights


@dataclass(frozen=True)
class StreamWeights:
    """Per-method fusion weights; the RGB stream always carries weight 1."""

    values: np.ndarray
    rgb: float = 1.0

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 1 or v.size < 2:
            raise ValueError(f"need a vector of >= 2 weights, got shape {v.shape}")
        if not np.all(v > 0.0):
            raise ValueError(f"stream weights must be strictly positive, got {v}")
        if abs(float(v.sum()) - 1.0) > 1e-9:
            raise ValueError(f"stream weights must sum to 1, got {v.sum()!r}")
        if self.rgb != 1.0:
            raise ValueError("the RGB stream weight is fixed at 1")
        object.__setattr__(self, "values", v)

    @property
    def count(self) -> int:
        return self.values.size


def equal_weights(k: int = len(METHODS)) -> StreamWeights:
    return StreamWeights(np.full(k, 1.0 / k))


def compute_weights_from_mse(mses) -> StreamWeights:
    """Turn per-stream enhancement errors into fusion weights.

    Steps: normalize errors to fractions; min-max flip them so the smallest
    error maps to 1 and the largest to 0; repair the zero by subtracting half
    the second-smallest value everywhere and adding the second-smallest to the
    zero entries; renormalize to sum 1.  Smaller error never gets a smaller
    weight; the repaired worst stream can tie the second-worst.  All-equal
    errors fall back to uniform weights.
    """
    m = np.asarray(mses, dtype=np.float64)
    if m.ndim != 1 or m.size < 2:
        raise ValueError(f"need >= 2 stream errors, got shape {m.shape}")
    if not np.all(np.isfinite(m)) or np.any(m < 0.0):
        raise ValueError(f"stream errors must be finite and >= 0, got {m}")
    k = m.size
    if float(m.max()) == float(m.min()):
        log.warning("all %d stream errors equal (%g); using uniform weights", k, m[0])
        return equal_weights(k)
    w = m / m.sum()
    w = (w - w.max()) / (w.min() - w.max())
    zeros = np.flatnonzero(w == 0.0)
    s2 = float(np.unique(w)[1])  # second-smallest distinct value
    w = w - s2 / 2.0
    w[zeros] += s2
    if zeros.size > 1:
        log.warning("%d streams tied at the worst error; repaired all of them", zeros.size)
    return StreamWeights(w / w.sum())


def fused_predict(stream_probs, weights: StreamWeights) -> np.ndarray:
    """Weighted sum of per-stream class probabilities, renormalized.

    Expects K+1 rows of probabilities with the RGB stream last.
    """
    p = np.asarray(stream_probs, dtype=np.float64)
    if p.ndim != 2 or p.shape[0] != weights.count + 1:
        raise ValueError(
            f"expected {weights.count + 1} stream rows (RGB last), got shape {p.shape}"
        )
    fused = weights.values @ p[:-1] + weights.rgb * p[-1]
    return fused / fused.sum()


# ---------------------------------------------------------------------------
# static filter bank


@dataclass(frozen=True)
class StaticFilterBank:
    """One fixed kernel per method plus the identity kernel for RGB."""

    filters: tuple[DynamicFilter, ...]

    def __post_init__(self):
        if len(self.filters) != len(METHODS):
            raise ValueError(f"bank needs {len(METHODS)} filters, got {len(self.filters)}")
        sizes = {f.size for f in self.filters}
        if len(sizes) != 1:
            raise ValueError(f"bank filters must share one size, got {sorted(sizes)}")

    @property
    def size(self) -> int:
        return self.filters[0].size

    @property
    def identity(self) -> DynamicFilter:
        return identity_filter(self.size)


def identity_bank(size: int = 6) -> StaticFilterBank:
    return StaticFilterBank(tuple(identity_filter(size) for _ in METHODS))


# ---------------------------------------------------------------------------
# run configuration and training items


@dataclass(frozen=True)
class TrainConfig:
    approach: str
    epochs: int
    methods: tuple[EnhanceMethod, ...] = METHODS
    weighting: str = "mse"
    filter_size: int = 6
    batch_size: int = 8
    phase1_epochs: int = 0
    sgd: SgdConfig = field(default_factory=lambda: SgdConfig(0.01))
    # kernel taps sit in a stiff quadratic bowl; the generating nets need a
    # far smaller step than the classifier to stay stable
    enhance_lr_scale: float = 0.01
    classnet_body_scale: float = 0.1
    classnet_head_scale: float = 1.0
    input_extent: int = 64
    flips: bool = True
    jitter: float = 0.0
    mse_term: bool = True
    seed: int = 0
    record_batches: bool = False

    def __post_init__(self):
        if self.approach not in APPROACHES:
            raise ValueError(f"approach must be one of {APPROACHES}, got {self.approach!r}")
        if self.approach == "a1" and len(self.methods) != 1:
            raise ValueError("a1 trains exactly one method")
        if self.approach in ("a2", "a3") and tuple(self.methods) != METHODS:
            raise ValueError("a2/a3 use all methods in canonical order")
        if self.epochs < 0 or self.phase1_epochs < 0:
            raise ValueError("epoch counts must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.weighting not in ("mse", "equal"):
            raise ValueError(f"weighting must be 'mse' or 'equal', got {self.weighting!r}")


@dataclass(frozen=True)
class TrainItem:
    """One training sample: full-resolution RGB, label, optional targets."""

    rgb: np.ndarray
    label: int
    targets: dict[EnhanceMethod, np.ndarray] | None = None
    path: str | None = None


def _require_targets(items: list[TrainItem], methods) -> None:
    for i, item in enumerate(items):
        for m in methods:
            if item.targets is None or m not in item.targets:
                where = item.path or f"sample {i}"
                raise ValueError(f"missing {m.value} target for {where}")


def luminance_delta_image(rgb, y, y_new):
    """Rebuild RGB from an edited luminance plane by adding the delta per channel.

    Returns (image, mask) where mask marks pixels the clamp left untouched;
    gradients w.r.t. the luminance delta flow only through those pixels.
    """
    pre = rgb + (y_new - y)[:, :, None]
    return np.clip(pre, 0.0, 1.0), (pre >= 0.0) & (pre <= 1.0)


# ---------------------------------------------------------------------------
# per-sample losses (shared by trainers and the gradient-check suite)


def a1_sample_loss_and_grads(
    enh_net: Net,
    ecfg: EnhanceNetConfig,
    eparams: ParamBlocks,
    cls_net: Net,
    cparams: ParamBlocks,
    rgb,
    y,
    target,
    label: int,
    mse_term: bool = True,
):
    """Joint loss for one sample: enhancement MSE + classification loss.

    The classification gradient reaches the filter-generating network through
    the enhanced image, the luminance delta, and the predicted taps.
    """
    filt, etape = generate_filter(enh_net, ecfg, eparams, y)
    filtered = apply_filter(y, filt)
    diff = filtered - target
    loss_mse = float(np.mean(diff * diff))
    iprime, mask = luminance_delta_image(rgb, y, filtered)
    logits, ctape = classnet_forward(cls_net, cparams, iprime)
    loss_cls, glogits = softmax_cross_entropy(logits, label)
    cgrads, gx = cls_net.backward(cparams, ctape, glogits)
    g_yp = (gx.transpose(1, 2, 0) * mask).sum(axis=2)
    if mse_term:
        g_yp = g_yp + (2.0 / diff.size) * diff
    gtaps = tap_gradient(y, g_yp, ecfg.filter_size)
    egrads, _ = enh_net.backward(eparams, etape, gtaps.reshape(-1))
    return {
        "loss_mse": loss_mse,
        "loss_cls": loss_cls,
        "egrads": egrads,
        "cgrads": cgrads,
        "logits": logits,
    }


def _stream_loss_and_grads(cls_net, cparams, image, label, loss_weight):
    """Classification loss for one stream, gradient scaled by the stream weight."""
    logits, tape = classnet_forward(cls_net, cparams, image)
    loss, glogits = softmax_cross_entropy(logits, label)
    cgrads, gx = cls_net.backward(cparams, tape, loss_weight * glogits)
    return loss, cgrads, gx, logits


# ---------------------------------------------------------------------------
# gradient accumulation helpers


class _GradSum:
    def __init__(self, template: ParamBlocks):
        self.total = template.zeros_like()
        self.count = 0

    def add(self, grads: ParamBlocks) -> None:
        for name in self.total.names():
            self.total[name] += grads[name]
        self.count += 1

    def mean(self) -> ParamBlocks:
        out = self.total.copy()
        for name in out.names():
            out[name] /= max(self.count, 1)
        return out


def _spawn_rngs(seed: int, n: int) -> list[np.random.Generator]:
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(n)]


def _epoch_batches(order: np.ndarray, batch_size: int):
    for start in range(0, order.size, batch_size):
        yield order[start : start + batch_size]


def _train_view(item: TrainItem, aug: dataio.AugmentConfig, rng, methods=()):
    draw = dataio.draw_augment(aug, item.rgb.shape[0], item.rgb.shape[1], rng)
    rgb = dataio.apply_augment_rgb(item.rgb, draw, aug)
    y = imgcore.luminance(rgb)
    targets = {
        m: dataio.apply_augment_plane(item.targets[m], draw, aug) for m in methods
    }
    return rgb, y, targets


def eval_view(item: TrainItem, extent: int):
    rgb = imgcore.center_crop(item.rgb, extent)
    return rgb, imgcore.luminance(rgb)


def _check_labels(items, class_count):
    for i, item in enumerate(items):
        if not 0 <= item.label < class_count:
            where = item.path or f"sample {i}"
            raise ValueError(f"label {item.label} outside 0..{class_count - 1} for {where}")


# ---------------------------------------------------------------------------
# trainers


def train_baseline(cfg: TrainConfig, ccfg: ClassNetConfig, items: list[TrainItem]):
    """Classifier on plain RGB.  Returns (params, log_rows)."""
    _check_labels(items, ccfg.class_count)
    cls_net = build_class_net(ccfg)
    _, rng_cls, rng_shuffle, rng_aug = _spawn_rngs(cfg.seed, 4)
    cparams = cls_net.init_params(rng_cls)
    opt = SgdOptimizer(cfg.sgd, cparams)
    aug = dataio.AugmentConfig(cfg.input_extent, cfg.flips, cfg.jitter)
    rows = []
    total_epochs = cfg.phase1_epochs + cfg.epochs
    for epoch in range(total_epochs):
        order = rng_shuffle.permutation(len(items))
        loss_sum, hit_sum = 0.0, 0
        for batch in _epoch_batches(order, cfg.batch_size):
            gsum = _GradSum(cparams)
            for i in batch:
                rgb, _, _ = _train_view(items[i], aug, rng_aug)
                loss, cgrads, _, logits = _stream_loss_and_grads(
                    cls_net, cparams, rgb, items[i].label, 1.0
                )
                gsum.add(cgrads)
                loss_sum += loss
                hit_sum += int(int(np.argmax(logits)) == items[i].label)
            opt.step(cparams, gsum.mean())
        rows.append(
            {
                "phase": 1,
                "epoch": epoch,
                "loss_cls": loss_sum / len(items),
                "train_acc": hit_sum / len(items),
            }
        )
    return cparams, rows


def _pretrain_classifier(cfg, ccfg, cls_net, cparams, items, rng_shuffle, rng_aug, rows):
    """Phase 1: RGB-only epochs before the full pipeline engages."""
    if cfg.phase1_epochs == 0:
        return
    opt = SgdOptimizer(cfg.sgd, cparams)
    aug = dataio.AugmentConfig(cfg.input_extent, cfg.flips, cfg.jitter)
    for epoch in range(cfg.phase1_epochs):
        order = rng_shuffle.permutation(len(items))
        loss_sum, hit_sum = 0.0, 0
        for batch in _epoch_batches(order, cfg.batch_size):
            gsum = _GradSum(cparams)
            for i in batch:
                rgb, _, _ = _train_view(items[i], aug, rng_aug)
                loss, cgrads, _, logits = _stream_loss_and_grads(
                    cls_net, cparams, rgb, items[i].label, 1.0
                )
                gsum.add(cgrads)
                loss_sum += loss
                hit_sum += int(int(np.argmax(logits)) == items[i].label)
            opt.step(cparams, gsum.mean())
        rows.append(
            {
                "phase": 1,
                "epoch": epoch,
                "loss_cls": loss_sum / len(items),
                "train_acc": hit_sum / len(items),
            }
        )


def train_approach1(cfg: TrainConfig, ccfg: ClassNetConfig, items: list[TrainItem]):
    """Joint single-method training.  Returns (eparams, cparams, log_rows)."""
    method = cfg.methods[0]
    _check_labels(items, ccfg.class_count)
    _require_targets(items, [method])
    ecfg = EnhanceNetConfig(filter_size=cfg.filter_size, input_extent=cfg.input_extent)
    enh_net = build_enhance_net(ecfg)
    cls_net = build_class_net(ccfg)
    rng_enh, rng_cls, rng_shuffle, rng_aug = _spawn_rngs(cfg.seed, 4)
    eparams = init_identity(ecfg, enh_net, rng_enh)
    cparams = cls_net.init_params(rng_cls)
    rows: list[dict] = []
    _pretrain_classifier(cfg, ccfg, cls_net, cparams, items, rng_shuffle, rng_aug, rows)
    scales = body_lr_scales(cls_net, cfg.classnet_body_scale, cfg.classnet_head_scale)
    copt = SgdOptimizer(cfg.sgd, cparams, scales if cfg.phase1_epochs else None)
    eopt = SgdOptimizer(cfg.sgd, eparams, {n: cfg.enhance_lr_scale for n in eparams.names()})
    aug = dataio.AugmentConfig(cfg.input_extent, cfg.flips, cfg.jitter)
    for epoch in range(cfg.epochs):
        order = rng_shuffle.permutation(len(items))
        mse_sum, cls_sum, hit_sum = 0.0, 0.0, 0
        for batch in _epoch_batches(order, cfg.batch_size):
            egsum, cgsum = _GradSum(eparams), _GradSum(cparams)
            for i in batch:
                rgb, y, targets = _train_view(items[i], aug, rng_aug, [method])
                out = a1_sample_loss_and_grads(
                    enh_net, ecfg, eparams, cls_net, cparams,
                    rgb, y, targets[method], items[i].label, cfg.mse_term,
                )
                egsum.add(out["egrads"])
                cgsum.add(out["cgrads"])
                mse_sum += out["loss_mse"]
                cls_sum += out["loss_cls"]
                hit_sum += int(int(np.argmax(out["logits"])) == items[i].label)
            eopt.step(eparams, egsum.mean())
            copt.step(cparams, cgsum.mean())
        rows.append(
            {
                "phase": 2,
                "epoch": epoch,
                "loss_mse": mse_sum / len(items),
                "loss_cls": cls_sum / len(items),
                "loss_total": (mse_sum + cls_sum) / len(items),
                "train_acc": hit_sum / len(items),
            }
        )
    return eparams, cparams, rows


def derive_static_filters(
    enh_net: Net,
    ecfg: EnhanceNetConfig,
    params_by_method: dict[EnhanceMethod, ParamBlocks],
    items: list[TrainItem],
) -> StaticFilterBank:
    """Element-wise mean of per-image kernels over the training set."""
    if not items:
        raise ValueError("cannot derive static filters from an empty set")
    filters = []
    for m in METHODS:
        if m not in params_by_method:
            raise ValueError(f"no trained parameters for method {m.value}")
        total = np.zeros((ecfg.filter_size, ecfg.filter_size), dtype=np.float64)
        for item in items:
            y = imgcore.luminance(item.rgb)
            filt, _ = generate_filter(enh_net, ecfg, params_by_method[m], y)
            total += filt.taps
        filters.append(DynamicFilter(total / len(items)))
    return StaticFilterBank(tuple(filters))


def compute_static_mse_weights(
    bank: StaticFilterBank, items: list[TrainItem]
) -> StreamWeights:
    """Weights from mean enhancement error of each static kernel over a set."""
    _require_targets(items, METHODS)
    sums = np.zeros(len(METHODS), dtype=np.float64)
    for item in items:
        y = imgcore.luminance(item.rgb)
        for k, m in enumerate(METHODS):
            filtered = apply_filter(y, bank.filters[k])
            sums[k] += imgcore.mse(filtered, item.targets[m])
    return compute_weights_from_mse(sums / len(items))


def train_stat(
    cfg: TrainConfig,
    ccfg: ClassNetConfig,
    bank: StaticFilterBank,
    weights: StreamWeights,
    items: list[TrainItem],
):
    """Classifier over K+1 fixed streams.  Returns (cparams, log_rows, batch_rows).

    Loss per sample is sum_k W_k * L_k with the RGB stream fixed at weight 1;
    only classifier parameters move.
    """
    _check_labels(items, ccfg.class_count)
    if weights.count != len(METHODS):
        raise ValueError(f"need {len(METHODS)} stream weights, got {weights.count}")
    cls_net = build_class_net(ccfg)
    _, rng_cls, rng_shuffle, rng_aug = _spawn_rngs(cfg.seed, 4)
    cparams = cls_net.init_params(rng_cls)
    rows: list[dict] = []
    batch_rows: list[dict] = []
    _pretrain_classifier(cfg, ccfg, cls_net, cparams, items, rng_shuffle, rng_aug, rows)
    scales = body_lr_scales(cls_net, cfg.classnet_body_scale, cfg.classnet_head_scale)
    opt = SgdOptimizer(cfg.sgd, cparams, scales if cfg.phase1_epochs else None)
    aug = dataio.AugmentConfig(cfg.input_extent, cfg.flips, cfg.jitter)
    all_filters = bank.filters + (bank.identity,)
    stream_weights = np.append(weights.values, weights.rgb)
    for epoch in range(cfg.epochs):
        order = rng_shuffle.permutation(len(items))
        loss_sum, hit_sum = 0.0, 0
        for bnum, batch in enumerate(_epoch_batches(order, cfg.batch_size)):
            gsum = _GradSum(cparams)
            batch_total = 0.0
            batch_streams = np.zeros(len(all_filters), dtype=np.float64)
            for i in batch:
                rgb, y, _ = _train_view(items[i], aug, rng_aug)
                sample_probs = []
                for k, filt in enumerate(all_filters):
                    streamed, _ = luminance_delta_image(rgb, y, apply_filter(y, filt))
                    loss, cgrads, _, logits = _stream_loss_and_grads(
                        cls_net, cparams, streamed, items[i].label, stream_weights[k]
                    )
                    gsum.add(cgrads)
                    batch_total += stream_weights[k] * loss
                    batch_streams[k] += loss
                    sample_probs.append(softmax_probs(logits))
                fused = fused_predict(np.array(sample_probs), weights)
                hit_sum += int(int(np.argmax(fused)) == items[i].label)
            loss_sum += batch_total
            if cfg.record_batches:
                batch_rows.append(
                    {
                        "epoch": epoch,
                        "batch": bnum,
                        "loss_total": batch_total / batch.size,
                        "stream_losses": (batch_streams / batch.size).tolist(),
                    }
                )
            opt.step(cparams, gsum.mean())
        rows.append(
            {
                "phase": 2,
                "epoch": epoch,
                "loss_total": loss_sum / len(items),
                "train_acc": hit_sum / len(items),
            }
        )
    return cparams, rows, batch_rows


def train_dyn(cfg: TrainConfig, ccfg: ClassNetConfig, items: list[TrainItem]):
    """K filter-generating networks + classifier, jointly trained.

    Returns (params_by_method, cparams, frozen_weights, log_rows).  Per-sample
    stream weights come from current enhancement errors (constants for the
    step, no gradient through the rule); the frozen weights are their running
    mean over the final epoch.
    """
    _check_labels(items, ccfg.class_count)
    _require_targets(items, METHODS)
    ecfg = EnhanceNetConfig(filter_size=cfg.filter_size, input_extent=cfg.input_extent)
    enh_net = build_enhance_net(ecfg)
    cls_net = build_class_net(ccfg)
    rng_enh, rng_cls, rng_shuffle, rng_aug = _spawn_rngs(cfg.seed, 4)
    enh_seeds = np.random.SeedSequence(int(rng_enh.integers(2**63))).spawn(len(METHODS))
    params_by_method = {
        m: init_identity(ecfg, enh_net, np.random.default_rng(s))
        for m, s in zip(METHODS, enh_seeds)
    }
    cparams = cls_net.init_params(rng_cls)
    rows: list[dict] = []
    _pretrain_classifier(cfg, ccfg, cls_net, cparams, items, rng_shuffle, rng_aug, rows)
    scales = body_lr_scales(cls_net, cfg.classnet_body_scale, cfg.classnet_head_scale)
    copt = SgdOptimizer(cfg.sgd, cparams, scales if cfg.phase1_epochs else None)
    eopts = {
        m: SgdOptimizer(
            cfg.sgd, params_by_method[m],
            {n: cfg.enhance_lr_scale for n in params_by_method[m].names()},
        )
        for m in METHODS
    }
    aug = dataio.AugmentConfig(cfg.input_extent, cfg.flips, cfg.jitter)
    frozen_sum = np.zeros(len(METHODS), dtype=np.float64)
    frozen_n = 0
    for epoch in range(cfg.epochs):
        final_epoch = epoch == cfg.epochs - 1
        order = rng_shuffle.permutation(len(items))
        mse_sum, wcls_sum, hit_sum = 0.0, 0.0, 0
        weight_sum = np.zeros(len(METHODS), dtype=np.float64)
        for batch in _epoch_batches(order, cfg.batch_size):
            egsums = {m: _GradSum(params_by_method[m]) for m in METHODS}
            cgsum = _GradSum(cparams)
            for i in batch:
                rgb, y, targets = _train_view(items[i], aug, rng_aug, METHODS)
                per_method = []
                mses = np.empty(len(METHODS), dtype=np.float64)
                for k, m in enumerate(METHODS):
                    filt, tape = generate_filter(enh_net, ecfg, params_by_method[m], y)
                    filtered = apply_filter(y, filt)
                    diff = filtered - targets[m]
                    mses[k] = float(np.mean(diff * diff))
                    per_method.append((filt, tape, filtered, diff))
                if cfg.weighting == "equal":
                    w_sample = equal_weights(len(METHODS))
                else:
                    w_sample = compute_weights_from_mse(mses)
                weight_sum += w_sample.values
                if final_epoch:
                    frozen_sum += w_sample.values
                    frozen_n += 1
                sample_probs = []
                for k, m in enumerate(METHODS):
                    filt, tape, filtered, diff = per_method[k]
                    streamed, mask = luminance_delta_image(rgb, y, filtered)
                    loss, cgrads, gx, logits = _stream_loss_and_grads(
                        cls_net, cparams, streamed, items[i].label, w_sample.values[k]
                    )
                    cgsum.add(cgrads)
                    wcls_sum += w_sample.values[k] * loss
                    g_yp = w_sample.values[k] * (gx.transpose(1, 2, 0) * mask).sum(axis=2)
                    if cfg.mse_term:
                        g_yp = g_yp + (2.0 / diff.size) * diff
                    gtaps = tap_gradient(y, g_yp, ecfg.filter_size)
                    egrads, _ = enh_net.backward(params_by_method[m], tape, gtaps.reshape(-1))
                    egsums[m].add(egrads)
                    sample_probs.append(softmax_probs(logits))
                rgb_loss, rgb_grads, _, rgb_logits = _stream_loss_and_grads(
                    cls_net, cparams, rgb, items[i].label, 1.0
                )
                cgsum.add(rgb_grads)
                wcls_sum += rgb_loss
                sample_probs.append(softmax_probs(rgb_logits))
                if cfg.mse_term:
                    mse_sum += float(mses.sum())
                fused = fused_predict(np.array(sample_probs), w_sample)
                hit_sum += int(int(np.argmax(fused)) == items[i].label)
            for m in METHODS:
                eopts[m].step(params_by_method[m], egsums[m].mean())
            copt.step(cparams, cgsum.mean())
        row = {
            "phase": 2,
            "epoch": epoch,
            "loss_mse": mse_sum / len(items),
            "loss_cls": wcls_sum / len(items),
            "loss_total": (mse_sum + wcls_sum) / len(items),
            "train_acc": hit_sum / len(items),
        }
        for k, m in enumerate(METHODS):
            row[f"w_{m.value}"] = weight_sum[k] / len(items)
        rows.append(row)
    frozen = frozen_sum / max(frozen_n, 1)
    weights = StreamWeights(frozen / frozen.sum())
    return params_by_method, cparams, weights, rows


# ---------------------------------------------------------------------------
# evaluation


def predict_rgb(cls_net, cparams, items, extent):
    probs = np.empty((len(items), cls_net.specs[-1].width), dtype=np.float64)
    for n, item in enumerate(items):
        rgb, _ = eval_view(item, extent)
        logits, _ = classnet_forward(cls_net, cparams, rgb)
        probs[n] = softmax_probs(logits)
    return probs


def predict_streams_static(cls_net, cparams, bank: StaticFilterBank, items, extent):
    """(n, K+1, C) probabilities; stream order is METHODS then RGB."""
    all_filters = bank.filters + (bank.identity,)
    out = np.empty((len(items), len(all_filters), cls_net.specs[-1].width), dtype=np.float64)
    for n, item in enumerate(items):
        rgb, y = eval_view(item, extent)
        for k, filt in enumerate(all_filters):
            streamed, _ = luminance_delta_image(rgb, y, apply_filter(y, filt))
            logits, _ = classnet_forward(cls_net, cparams, streamed)
            out[n, k] = softmax_probs(logits)
    return out


def predict_streams_dynamic(
    enh_net, ecfg, params_by_method, cls_net, cparams, items, extent, methods=METHODS
):
    """(n, len(methods)+1, C) probabilities; per-image kernels, RGB last."""
    out = np.empty((len(items), len(methods) + 1, cls_net.specs[-1].width), dtype=np.float64)
    for n, item in enumerate(items):
        rgb, y = eval_view(item, extent)
        for k, m in enumerate(methods):
            filt, _ = generate_filter(enh_net, ecfg, params_by_method[m], y)
            streamed, _ = luminance_delta_image(rgb, y, apply_filter(y, filt))
            logits, _ = classnet_forward(cls_net, cparams, streamed)
            out[n, k] = softmax_probs(logits)
        logits, _ = classnet_forward(cls_net, cparams, rgb)
        out[n, len(methods)] = softmax_probs(logits)
    return out


def fuse_all(stream_probs, weights: StreamWeights) -> np.ndarray:
    return np.array([fused_predict(rows, weights) for rows in stream_probs])


def enhancement_psnr(enh_net, ecfg, eparams, items, method: EnhanceMethod):
    """Mean PSNR of enhanced and untouched luminance against cached targets."""
    _require_targets(items, [method])
    enhanced, untouched = [], []
    for item in items:
        y = imgcore.luminance(item.rgb)
        t = item.targets[method]
        filt, _ = generate_filter(enh_net, ecfg, eparams, y)
        enhanced.append(imgcore.psnr(apply_filter(y, filt), t))
        untouched.append(imgcore.psnr(y, t))
    return float(np.mean(enhanced)), float(np.mean(untouched))
