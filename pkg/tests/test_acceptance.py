"""End-to-end checks for the package's headline guarantees.

Each test computes one measured result, records a PASS/FAIL line for the
terminal summary, then asserts.  The corpus-scale tests at the bottom are the
expensive ones; everything above them runs in seconds.
"""

import math
import subprocess
import sys
import time

import numpy as np
import pytest

from dynenh import gradcheck
from dynenh.autonet import SgdConfig
from dynenh.classify import ClassNetConfig, accuracy, build_class_net
from dynenh.dataio import (
    default_cache_dir,
    generate_targets,
    load_items,
    synth_texture_dataset,
)
from dynenh.dynfilter import (
    EnhanceNetConfig,
    apply_filter,
    build_enhance_net,
    generate_filter,
    init_identity,
)
from dynenh.enhance import METHODS, EnhanceMethod, EnhanceParams, _wls_weights, guided, wls_smooth
from dynenh.imgcore import box_filter, gaussian_blur, luminance, mse
from dynenh.pipeline import (
    StaticFilterBank,
    TrainConfig,
    compute_static_mse_weights,
    compute_weights_from_mse,
    derive_static_filters,
    enhancement_psnr,
    equal_weights,
    fuse_all,
    identity_bank,
    predict_rgb,
    predict_streams_dynamic,
    predict_streams_static,
    train_approach1,
    train_baseline,
    train_dyn,
    train_stat,
)

# Corpus-scale training knobs, shared by the PSNR-gain and accuracy-ordering
# tests.  Flips stay off: class identity is a texture orientation and a
# horizontal flip maps it onto another class's orientation.
CORPUS_SEED = 0
CORPUS_SPLIT = (0.7, 0.0, 0.3)
BASELINE_LR = 0.01
A1_EPOCHS = 30
A1_LR_SCALE = 0.03
A1_PHASE1 = 10
FUSED_EPOCHS = 30
FUSED_PHASE1 = 10
FUSED_LR_SCALE = 0.05
FUSED_SEEDS = (0, 1, 2, 3, 4)


@pytest.fixture(scope="session")
def tiny_corpus(tmp_path_factory):
    """3 classes x 8 images at 24 px with all targets cached; loads in seconds."""
    root = tmp_path_factory.mktemp("tiny_corpus")
    man = synth_texture_dataset(
        root, class_count=3, per_class=8, extent=24, seed=11,
        split=(0.6, 0.0, 0.4), split_seed=0,
    )
    cache = default_cache_dir(man.root)
    generate_targets(man, METHODS, EnhanceParams(), cache)
    train = load_items(man, "train", METHODS, cache)
    test = load_items(man, "test", METHODS, cache)
    return train, test


@pytest.fixture(scope="session")
def texture_corpus(tmp_path_factory):
    """The full 8-class blurred-texture corpus used by the training criteria."""
    root = tmp_path_factory.mktemp("texture_corpus")
    man = synth_texture_dataset(
        root, class_count=8, per_class=25, extent=64, seed=CORPUS_SEED,
        split=CORPUS_SPLIT, split_seed=CORPUS_SEED,
    )
    cache = default_cache_dir(man.root)
    generate_targets(man, METHODS, EnhanceParams(), cache)
    return man, cache


TINY_CCFG = ClassNetConfig(class_count=3, input_extent=24)
TINY_ECFG = EnhanceNetConfig(filter_size=6, input_extent=24)


def test_every_gradient_matches_finite_differences(acceptance):
    rows, elapsed = gradcheck.run_all(seed=0)
    names = {name for name, _ in rows}
    expected = {
        "fc", "relu", "conv", "maxpool", "flatten", "softmax",
        "classnet", "enhance_chain", "joint_chain_enhance", "joint_chain_classnet",
    }
    worst = max(err for _, err in rows)
    ok = expected <= names and worst < gradcheck.TOLERANCE and elapsed < 60.0
    acceptance(
        "analytic gradients vs finite differences",
        f"max rel err {worst:.2e} over {len(rows)} checks in {elapsed:.1f}s",
        ok,
    )
    assert expected <= names
    assert worst < gradcheck.TOLERANCE
    assert elapsed < 60.0


def _naive_box(p: np.ndarray, r: int) -> np.ndarray:
    h, w = p.shape
    out = np.empty_like(p)
    for i in range(h):
        for j in range(w):
            acc = 0.0
            for di in range(-r, r + 1):
                for dj in range(-r, r + 1):
                    ii = min(max(i + di, 0), h - 1)
                    jj = min(max(j + dj, 0), w - 1)
                    acc += p[ii, jj]
            out[i, j] = acc / float((2 * r + 1) ** 2)
    return out


def _naive_guided(y: np.ndarray, r: int, eps: float) -> np.ndarray:
    mean_g = _naive_box(y, r)
    mean_gy = _naive_box(y * y, r)
    var_g = mean_gy - mean_g * mean_g
    a = (mean_gy - mean_g * mean_g) / (var_g + eps)
    b = mean_g - a * mean_g
    return _naive_box(a, r) * y + _naive_box(b, r)


def test_filters_match_independent_solvers(acceptance):
    t0 = time.perf_counter()
    rng = np.random.default_rng(5)

    # edge-aware smoothing vs an explicitly assembled dense system
    y = np.clip(gaussian_blur(rng.random((32, 32)), 1.5) + 0.15 * rng.random((32, 32)), 0.02, 0.98)
    lam, alpha, eps = 0.125, 1.2, 1e-4
    u = wls_smooth(y, lam, alpha, eps, tol=2e-7)
    ax, ay = _wls_weights(y, alpha, eps)
    n = y.size
    dense = np.eye(n)

    def pixel(i, j):
        return i * 32 + j

    for i in range(32):
        for j in range(31):
            p, q, w = pixel(i, j), pixel(i, j + 1), lam * ax[i, j]
            dense[p, p] += w
            dense[q, q] += w
            dense[p, q] -= w
            dense[q, p] -= w
    for i in range(31):
        for j in range(32):
            p, q, w = pixel(i, j), pixel(i + 1, j), lam * ay[i, j]
            dense[p, p] += w
            dense[q, q] += w
            dense[p, q] -= w
            dense[q, p] -= w
    wls_residual = float(np.max(np.abs(dense @ u.ravel() - y.ravel())))
    u_direct = np.linalg.solve(dense, y.ravel()).reshape(32, 32)
    wls_gap = float(np.max(np.abs(u - u_direct)))

    # guided filter vs per-window regression
    yg = rng.random((16, 16))
    guided_gap = float(np.max(np.abs(guided(yg, yg, 2, 1e-3) - _naive_guided(yg, 2, 1e-3))))

    # integral-image box means vs direct window sums
    box_gap = 0.0
    for _ in range(100):
        h = int(rng.integers(1, 13))
        w = int(rng.integers(1, 13))
        r = int(rng.integers(0, 5))
        p = rng.random((h, w))
        box_gap = max(box_gap, float(np.max(np.abs(box_filter(p, r) - _naive_box(p, r)))))

    elapsed = time.perf_counter() - t0
    ok = wls_residual < 1e-6 and guided_gap < 1e-8 and box_gap < 1e-10 and elapsed < 60.0
    acceptance(
        "filter implementations vs naive solvers",
        f"wls residual {wls_residual:.2e} (direct gap {wls_gap:.2e}), "
        f"guided gap {guided_gap:.2e}, box gap {box_gap:.2e} in {elapsed:.1f}s",
        ok,
    )
    assert wls_residual < 1e-6
    assert guided_gap < 1e-8
    assert box_gap < 1e-10
    assert elapsed < 60.0


def test_identity_init_passes_images_through_untouched(acceptance, tiny_corpus):
    train, _ = tiny_corpus
    net = build_enhance_net(TINY_ECFG)
    params = init_identity(TINY_ECFG, net, np.random.default_rng(3))
    exact = True
    for item in train:
        y = luminance(item.rgb)
        filt, _ = generate_filter(net, TINY_ECFG, params, y)
        exact = exact and np.array_equal(apply_filter(y, filt), y)

    # with zero learning rate the kernels stay at identity, so the recorded
    # enhancement error must equal mse(Y, T) computed directly
    cfg = TrainConfig(
        approach="a1", epochs=1, methods=(EnhanceMethod.IMSHARP,),
        sgd=SgdConfig(0.0), enhance_lr_scale=0.0, flips=False,
        input_extent=24, seed=3,
    )
    _, _, rows = train_approach1(cfg, TINY_CCFG, train)
    recorded = rows[-1]["loss_mse"]
    direct = float(np.mean([mse(luminance(it.rgb), it.targets[EnhanceMethod.IMSHARP]) for it in train]))
    gap = abs(recorded - direct)
    ok = exact and math.isclose(recorded, direct, rel_tol=1e-12, abs_tol=0.0)
    acceptance(
        "identity initialization is exact",
        f"pass-through bit-exact: {exact}, recorded-vs-direct mse gap {gap:.2e}",
        ok,
    )
    assert exact
    assert math.isclose(recorded, direct, rel_tol=1e-12, abs_tol=0.0)


def test_error_driven_weights_hold_their_contracts(acceptance):
    rng = np.random.default_rng(9)
    positive, normalized, ordered = True, True, True
    for _ in range(1000):
        errs = rng.uniform(1e-4, 1.0, size=5)
        w = compute_weights_from_mse(errs).values
        positive = positive and bool(np.all(w > 0.0))
        normalized = normalized and abs(float(w.sum()) - 1.0) <= 1e-9
        for i in range(5):
            for j in range(5):
                if errs[i] < errs[j] and w[i] < w[j]:
                    ordered = False
    fixture = compute_weights_from_mse(np.array([2.0, 1.0, 4.0, 8.0, 5.0])).values
    expected = np.array([0.29032258, 0.35483871, 0.16129032, 0.09677419, 0.09677419])
    fixture_gap = float(np.max(np.abs(fixture - expected)))
    ok = positive and normalized and ordered and fixture_gap < 1e-5
    acceptance(
        "stream weighting rule",
        f"1000 draws: positive {positive}, sum-to-one {normalized}, "
        f"monotone {ordered}; fixture gap {fixture_gap:.2e}",
        ok,
    )
    assert positive and normalized and ordered
    assert fixture_gap < 1e-5


def test_static_stream_loss_decomposes_exactly(acceptance, tiny_corpus):
    train, _ = tiny_corpus
    bank = identity_bank(6)
    weights = compute_static_mse_weights(bank, train)
    cfg = TrainConfig(
        approach="a2", epochs=2, flips=False, input_extent=24,
        seed=5, record_batches=True,
    )
    _, _, batch_rows = train_stat(cfg, TINY_CCFG, bank, weights, train)
    stream_w = np.append(weights.values, weights.rgb)
    worst = max(
        abs(row["loss_total"] - float(np.dot(stream_w, row["stream_losses"])))
        for row in batch_rows
    )
    expected_batches = 2 * math.ceil(len(train) / cfg.batch_size)
    ok = worst <= 1e-12 and len(batch_rows) == expected_batches
    acceptance(
        "static-stream loss decomposition",
        f"max |total - sum(w*per-stream)| = {worst:.2e} over {len(batch_rows)} batches",
        ok,
    )
    assert len(batch_rows) == expected_batches
    assert worst <= 1e-12


def test_identity_streams_collapse_to_rgb_accuracy(acceptance, tiny_corpus):
    train, test = tiny_corpus
    cfg = TrainConfig(approach="fc", epochs=4, flips=False, input_extent=24, seed=2)
    cparams, _ = train_baseline(cfg, TINY_CCFG, train)
    cnet = build_class_net(TINY_CCFG)
    labels = np.array([it.label for it in test])
    rgb_acc = accuracy(predict_rgb(cnet, cparams, test, 24), labels)
    probs = predict_streams_static(cnet, cparams, identity_bank(6), test, 24)
    fused_acc = accuracy(fuse_all(probs, equal_weights()), labels)
    ok = fused_acc == rgb_acc
    acceptance(
        "degenerate fusion equals the plain classifier",
        f"fused {fused_acc:.4f} vs rgb {rgb_acc:.4f} (identity kernels, equal weights)",
        ok,
    )
    assert fused_acc == rgb_acc


def test_static_filters_equal_brute_force_mean(acceptance, tiny_corpus):
    train, _ = tiny_corpus
    cfg = TrainConfig(
        approach="a3", epochs=1, flips=False, input_extent=24, seed=4,
        sgd=SgdConfig(0.01), enhance_lr_scale=0.05,
    )
    params_by_method, _, _, _ = train_dyn(cfg, TINY_CCFG, train)
    ten = train[:10]
    net = build_enhance_net(TINY_ECFG)
    bank = derive_static_filters(net, TINY_ECFG, params_by_method, ten)
    worst = 0.0
    for k, m in enumerate(METHODS):
        stack = [
            generate_filter(net, TINY_ECFG, params_by_method[m], luminance(it.rgb))[0].taps
            for it in ten
        ]
        manual = np.mean(stack, axis=0)
        worst = max(worst, float(np.max(np.abs(bank.filters[k].taps - manual))))
    ok = worst <= 1e-12
    acceptance(
        "static kernels are the mean of per-image kernels",
        f"max tap gap {worst:.2e} over {len(METHODS)} methods x 10 images",
        ok,
    )
    assert worst <= 1e-12


def test_repeated_runs_are_byte_identical(acceptance, tmp_path):
    data = tmp_path / "data"
    base = [sys.executable, "-m", "dynenh.cli"]
    split = ["--split", "0.6,0.0,0.4", "--split-seed", "0"]

    def run(cmd):
        proc = subprocess.run(cmd, capture_output=True, text=True)
        assert proc.returncode == 0, proc.stderr
        return proc

    run(base + [
        "synth-data", "--out", str(data), "--classes", "3", "--per-class", "8",
        "--extent", "24", "--seed", "11",
    ] + split)
    run(base + ["gen-targets", "--data", str(data), "--methods", "imsharp"] + split)

    outputs = {}
    for tag in ("first", "second"):
        runs_root = tmp_path / f"runs_{tag}"
        run(base + [
            "train", "--data", str(data), "--runs-root", str(runs_root),
            "--approach", "a1", "--method", "imsharp", "--epochs", "2",
            "--extent", "24", "--seed", "6", "--no-flips",
        ] + split)
        run_dir = next(p for p in runs_root.iterdir() if p.is_dir())
        run(base + ["eval", "--run", str(run_dir), "--split", "test"])
        outputs[tag] = (
            (run_dir / "log.csv").read_bytes(),
            (run_dir / "summary.csv").read_bytes(),
        )
    log_same = outputs["first"][0] == outputs["second"][0]
    summary_same = outputs["first"][1] == outputs["second"][1]
    ok = log_same and summary_same
    acceptance(
        "repeated commands are byte-identical",
        f"log.csv identical: {log_same}, summary.csv identical: {summary_same}",
        ok,
    )
    assert log_same
    assert summary_same


def test_joint_training_sharpens_heldout_images(acceptance, texture_corpus):
    man, cache = texture_corpus
    t0 = time.perf_counter()
    train = load_items(man, "train", (EnhanceMethod.IMSHARP,), cache)
    test = load_items(man, "test", (EnhanceMethod.IMSHARP,), cache)
    cfg = TrainConfig(
        approach="a1", epochs=A1_EPOCHS, phase1_epochs=A1_PHASE1,
        methods=(EnhanceMethod.IMSHARP,), seed=7,
        sgd=SgdConfig(BASELINE_LR), enhance_lr_scale=A1_LR_SCALE, flips=False,
    )
    ecfg = EnhanceNetConfig(filter_size=cfg.filter_size, input_extent=cfg.input_extent)
    ccfg = ClassNetConfig(class_count=8, input_extent=cfg.input_extent)
    eparams, _, _ = train_approach1(cfg, ccfg, train)
    net = build_enhance_net(ecfg)
    enhanced, untouched = enhancement_psnr(net, ecfg, eparams, test, EnhanceMethod.IMSHARP)
    gain = enhanced - untouched
    elapsed = time.perf_counter() - t0
    ok = gain >= 3.0 and elapsed < 600.0
    acceptance(
        "joint training sharpens held-out images",
        f"mean PSNR gain {gain:+.2f} dB over {len(test)} images in {elapsed:.0f}s",
        ok,
    )
    assert gain >= 3.0
    assert elapsed < 600.0


def test_learned_enhancement_lifts_fused_accuracy(acceptance, texture_corpus):
    man, cache = texture_corpus
    t0 = time.perf_counter()
    train = load_items(man, "train", METHODS, cache)
    test = load_items(man, "test", METHODS, cache)
    labels = np.array([it.label for it in test])
    ccfg = ClassNetConfig(class_count=8, input_extent=64)
    ecfg = EnhanceNetConfig(filter_size=6, input_extent=64)
    cnet = build_class_net(ccfg)
    enet = build_enhance_net(ecfg)

    base_accs, dyn_accs, stat_accs = [], [], []
    for seed in FUSED_SEEDS:
        cfg = TrainConfig(
            approach="fc", epochs=FUSED_EPOCHS, seed=seed,
            sgd=SgdConfig(BASELINE_LR), flips=False,
        )
        bparams, _ = train_baseline(cfg, ccfg, train)
        base_accs.append(accuracy(predict_rgb(cnet, bparams, test, 64), labels))

        cfg = TrainConfig(
            approach="a3", epochs=FUSED_EPOCHS, phase1_epochs=FUSED_PHASE1, seed=seed,
            sgd=SgdConfig(BASELINE_LR), enhance_lr_scale=FUSED_LR_SCALE, flips=False,
        )
        params_by_method, cparams, frozen, _ = train_dyn(cfg, ccfg, train)
        probs = predict_streams_dynamic(enet, ecfg, params_by_method, cnet, cparams, test, 64)
        dyn_accs.append(accuracy(fuse_all(probs, frozen), labels))

        bank = derive_static_filters(enet, ecfg, params_by_method, train)
        static_w = compute_static_mse_weights(bank, train)
        cfg = TrainConfig(
            approach="a2", epochs=FUSED_EPOCHS, phase1_epochs=FUSED_PHASE1, seed=seed,
            sgd=SgdConfig(BASELINE_LR), flips=False,
        )
        c2params, _, _ = train_stat(cfg, ccfg, bank, static_w, train)
        probs = predict_streams_static(cnet, c2params, bank, test, 64)
        stat_accs.append(accuracy(fuse_all(probs, static_w), labels))

    base_med = float(np.median(base_accs))
    dyn_med = float(np.median(dyn_accs))
    stat_med = float(np.median(stat_accs))
    margin = 100.0 * (dyn_med - base_med)
    elapsed = time.perf_counter() - t0
    ok = margin >= 2.0 and stat_med >= base_med and elapsed < 2700.0
    acceptance(
        "enhancement streams lift fused accuracy",
        f"median over {len(FUSED_SEEDS)} seeds: baseline {base_med:.3f}, "
        f"static {stat_med:.3f}, dynamic {dyn_med:.3f} "
        f"(margin {margin:+.1f} pts) in {elapsed:.0f}s",
        ok,
    )
    assert margin >= 2.0
    assert stat_med >= base_med
    assert elapsed < 2700.0
