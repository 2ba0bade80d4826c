import numpy as np
import pytest

from dynenh import imgcore
from dynenh.dynfilter import (
    FILTER_SIZES,
    DynamicFilter,
    EnhanceNetConfig,
    apply_filter,
    build_enhance_net,
    enhancement_loss_and_grads,
    generate_filter,
    identity_filter,
    init_identity,
    paper_scale_config,
    prepare_input,
    read_filter,
    tap_gradient,
    write_filter,
)

SMALL = EnhanceNetConfig(filter_size=5, input_extent=24, conv1_channels=4,
                         conv2_channels=6, hidden=16)


class TestFilter:
    def test_identity_filter_reproduces_plane(self, rng):
        y = rng.uniform(0, 1, (17, 13))
        for size in FILTER_SIZES:
            out = apply_filter(y, identity_filter(size))
            assert np.array_equal(out, y), size

    def test_rejects_bad_shapes(self):
        with pytest.raises(ValueError):
            DynamicFilter(np.zeros((5, 6)))
        with pytest.raises(ValueError):
            DynamicFilter(np.zeros((3, 3)))

    def test_even_size_anchor(self):
        assert identity_filter(6).anchor == (2, 2)
        assert identity_filter(7).anchor == (3, 3)


class TestIdentityInit:
    def test_untrained_net_is_bit_exact_identity(self, rng):
        net = build_enhance_net(SMALL)
        params = init_identity(SMALL, net, rng)
        y = rng.uniform(0, 1, (24, 24))
        filt, _ = generate_filter(net, SMALL, params, y)
        assert np.array_equal(filt.taps, identity_filter(5).taps)
        assert np.array_equal(apply_filter(y, filt), y)

    def test_holds_at_full_resolution(self, rng):
        net = build_enhance_net(SMALL)
        params = init_identity(SMALL, net, rng)
        y = rng.uniform(0, 1, (50, 40))
        filt, _ = generate_filter(net, SMALL, params, y)
        assert np.array_equal(apply_filter(y, filt), y)


class TestPrepareInput:
    def test_matched_extent_passthrough(self, rng):
        y = rng.uniform(0, 1, (24, 24))
        x = prepare_input(y, 24)
        assert np.array_equal(x[0], y)

    def test_resizes_nonsquare(self, rng):
        y = rng.uniform(0, 1, (40, 30))
        x = prepare_input(y, 24)
        assert x.shape == (1, 24, 24)


class TestLossAndGrads:
    def test_mse_value_exact(self, rng):
        net = build_enhance_net(SMALL)
        params = init_identity(SMALL, net, rng)
        y = rng.uniform(0, 1, (24, 24))
        t = rng.uniform(0, 1, (24, 24))
        loss, _, filtered = enhancement_loss_and_grads(net, SMALL, params, y, t)
        assert np.array_equal(filtered, y)
        assert abs(loss - np.mean((y - t) ** 2)) < 1e-15

    def test_tap_gradient_is_adjoint(self, rng):
        # <apply(y, K), G> == <K, tap_gradient(y, G)> for random K, G
        y = rng.uniform(0, 1, (12, 12))
        for _ in range(5):
            taps = rng.normal(size=(5, 5))
            g = rng.normal(size=(12, 12))
            lhs = float(np.sum(apply_filter(y, DynamicFilter(taps)) * g))
            rhs = float(np.sum(taps * tap_gradient(y, g, 5)))
            assert abs(lhs - rhs) < 1e-9 * max(1.0, abs(lhs))

    def test_gradient_matches_finite_differences(self, rng):
        net = build_enhance_net(SMALL)
        params = init_identity(SMALL, net, rng)
        head_w = [n for n in params.names() if n.startswith("fc")][-2]
        params[head_w] += 0.01 * rng.normal(size=params[head_w].shape)
        y = rng.uniform(0.2, 0.8, (24, 24))
        t = np.clip(y + 0.05 * rng.normal(size=y.shape), 0, 1)
        _, grads, _ = enhancement_loss_and_grads(net, SMALL, params, y, t)
        eps = 1e-5
        idx = rng.choice(params.total_count, size=60, replace=False)
        for i in idx:
            params.add_flat(int(i), eps)
            lp, _, _ = enhancement_loss_and_grads(net, SMALL, params, y, t)
            params.add_flat(int(i), -2 * eps)
            lm, _, _ = enhancement_loss_and_grads(net, SMALL, params, y, t)
            params.add_flat(int(i), eps)
            fd = (lp - lm) / (2 * eps)
            an = grads.get_flat(int(i))
            assert abs(fd - an) / max(1.0, abs(fd), abs(an)) < 1e-4

    def test_shape_mismatch_rejected(self, rng):
        net = build_enhance_net(SMALL)
        params = init_identity(SMALL, net, rng)
        with pytest.raises(ValueError):
            enhancement_loss_and_grads(
                net, SMALL, params, np.zeros((24, 24)), np.zeros((20, 20))
            )


class TestDistinctness:
    def test_distinct_images_distinct_filters(self, rng):
        # perturb the head so the map is not constant, then check that
        # different inputs really produce different kernels
        net = build_enhance_net(SMALL)
        params = init_identity(SMALL, net, rng)
        head_w = [n for n in params.names() if n.startswith("fc")][-2]
        params[head_w] += 0.05 * rng.normal(size=params[head_w].shape)
        a, _ = generate_filter(net, SMALL, params, rng.uniform(0, 1, (24, 24)))
        b, _ = generate_filter(net, SMALL, params, rng.uniform(0, 1, (24, 24)))
        assert not np.array_equal(a.taps, b.taps)
        assert np.abs(a.taps - b.taps).max() > 1e-6


class TestIo:
    def test_write_read_roundtrip_bit_exact(self, tmp_path, rng):
        filt = DynamicFilter(rng.normal(size=(6, 6)))
        base = tmp_path / "wls.static"
        write_filter(base, filt)
        loaded = read_filter(tmp_path / "wls.static.plane")
        assert np.array_equal(loaded.taps, filt.taps)

    def test_text_sidecar_written(self, tmp_path, rng):
        filt = DynamicFilter(rng.normal(size=(5, 5)))
        write_filter(tmp_path / "f", filt)
        text = (tmp_path / "f.txt").read_text()
        assert len(text.strip().splitlines()) == 5
        first = float(text.split()[0])
        assert abs(first - filt.taps[0, 0]) < 1e-12


class TestPaperScale:
    def test_config_shapes(self):
        cfg = paper_scale_config()
        net = build_enhance_net(cfg)
        assert cfg.filter_size == 6
        assert net.output_shape == (cfg.head_size,)
