"""Scikit-learn style wrappers around the training pipelines.

Estimators take a stack of RGB images shaped (n, h, w, 3) with float values
in [0, 1] and integer labels.  Constructor arguments are stored verbatim;
everything learned during ``fit`` lands in trailing-underscore attributes.
Enhancement targets are derived on the fly inside ``fit``, so no cache
directory is involved.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .autonet import SgdConfig, softmax_probs
from .classify import ClassNetConfig, build_class_net, classnet_forward
from .dynfilter import apply_filter, generate_filter
from .enhance import METHODS, EnhanceParams, make_target, method_from_name
from .pipeline import (
    TrainConfig,
    TrainItem,
    compute_static_mse_weights,
    derive_static_filters,
    equal_weights,
    eval_view,
    fuse_all,
    luminance_delta_image,
    predict_streams_dynamic,
    predict_streams_static,
    train_approach1,
    train_baseline,
    train_dyn,
    train_stat,
)
from . import imgcore


def _check_images(X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 4 or X.shape[3] != 3:
        raise ValueError(f"expected images shaped (n, h, w, 3), got {X.shape}")
    if X.shape[0] == 0:
        raise ValueError("need at least one image")
    if not np.all(np.isfinite(X)):
        raise ValueError("images must be finite")
    if X.min() < 0.0 or X.max() > 1.0:
        raise ValueError("image values must lie in [0, 1]")
    return X


def _encode_labels(y):
    y = np.asarray(y)
    if y.ndim != 1:
        raise ValueError(f"labels must be one-dimensional, got shape {y.shape}")
    classes = np.unique(y)
    if classes.size < 2:
        raise ValueError("need at least two classes")
    return classes, np.searchsorted(classes, y)


def _make_items(X, y_enc, methods) -> list[TrainItem]:
    params = EnhanceParams()
    items = []
    for img, label in zip(X, y_enc):
        targets = None
        if methods:
            yplane = imgcore.luminance(img)
            targets = {m: make_target(m, yplane, params) for m in methods}
        items.append(TrainItem(img, int(label), targets))
    return items


class _FitSettings:
    """Mixin translating constructor knobs into a TrainConfig."""

    def _train_config(self, approach, methods, weighting="mse", mse_term=True):
        return TrainConfig(
            approach=approach,
            epochs=self.epochs,
            methods=methods,
            weighting=weighting,
            filter_size=self.filter_size,
            batch_size=self.batch_size,
            phase1_epochs=self.phase1_epochs,
            sgd=SgdConfig(learning_rate=self.lr),
            input_extent=self.extent,
            flips=self.flips,
            jitter=self.jitter,
            mse_term=mse_term,
            seed=self.seed,
        )

    def _class_config(self, n_classes):
        return ClassNetConfig(n_classes, input_extent=self.extent)


class ClassicalEnhancer(TransformerMixin, BaseEstimator):
    """Stateless transformer applying one classical enhancement method."""

    def __init__(self, method: str = "imsharp"):
        self.method = method

    def fit(self, X, y=None):
        X = _check_images(X)
        method_from_name(self.method)
        self.n_features_in_ = X[0].size
        return self

    def transform(self, X):
        check_is_fitted(self, "n_features_in_")
        X = _check_images(X)
        m = method_from_name(self.method)
        params = EnhanceParams()
        out = np.empty_like(X)
        for i, img in enumerate(X):
            yplane = imgcore.luminance(img)
            enhanced = make_target(m, yplane, params)
            out[i] = luminance_delta_image(img, yplane, enhanced)[0]
        return out


class RgbClassifier(ClassifierMixin, _FitSettings, BaseEstimator):
    """Convolutional classifier on untouched RGB images."""

    def __init__(self, epochs=10, batch_size=8, lr=0.01, extent=64,
                 flips=True, jitter=0.0, seed=0):
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.extent = extent
        self.flips = flips
        self.jitter = jitter
        self.seed = seed

    # knobs unused by the baseline but required by the shared config builder
    phase1_epochs = 0
    filter_size = 6

    def fit(self, X, y):
        X = _check_images(X)
        self.classes_, y_enc = _encode_labels(y)
        items = _make_items(X, y_enc, ())
        ccfg = self._class_config(self.classes_.size)
        cfg = self._train_config("fc", ())
        self.cparams_, self.log_ = train_baseline(cfg, ccfg, items)
        self.ccfg_ = ccfg
        self.net_ = build_class_net(ccfg)
        return self

    def predict_proba(self, X):
        check_is_fitted(self, "cparams_")
        X = _check_images(X)
        probs = []
        for img in X:
            rgb, _ = eval_view(TrainItem(img, 0), self.extent)
            logits, _ = classnet_forward(self.net_, self.cparams_, rgb)
            probs.append(softmax_probs(logits))
        return np.array(probs)

    def predict(self, X):
        probs = self.predict_proba(X)
        return self.classes_[np.argmax(probs, axis=1)]


class SingleFilterClassifier(ClassifierMixin, _FitSettings, BaseEstimator):
    """One filter-generating network + classifier, trained jointly."""

    def __init__(self, method="imsharp", epochs=10, phase1_epochs=0, batch_size=8,
                 lr=0.01, filter_size=6, extent=64, flips=True, jitter=0.0,
                 mse_term=True, seed=0):
        self.method = method
        self.epochs = epochs
        self.phase1_epochs = phase1_epochs
        self.batch_size = batch_size
        self.lr = lr
        self.filter_size = filter_size
        self.extent = extent
        self.flips = flips
        self.jitter = jitter
        self.mse_term = mse_term
        self.seed = seed

    def fit(self, X, y):
        X = _check_images(X)
        self.classes_, y_enc = _encode_labels(y)
        m = method_from_name(self.method)
        items = _make_items(X, y_enc, (m,))
        ccfg = self._class_config(self.classes_.size)
        cfg = self._train_config("a1", (m,), mse_term=self.mse_term)
        from .dynfilter import EnhanceNetConfig, build_enhance_net

        self.eparams_, self.cparams_, self.log_ = train_approach1(cfg, ccfg, items)
        self.ecfg_ = EnhanceNetConfig(filter_size=self.filter_size, input_extent=self.extent)
        self.enh_net_ = build_enhance_net(self.ecfg_)
        self.ccfg_ = ccfg
        self.net_ = build_class_net(ccfg)
        return self

    def filters(self, X):
        """Per-image kernel taps, shaped (n, s, s)."""
        check_is_fitted(self, "eparams_")
        X = _check_images(X)
        out = []
        for img in X:
            yplane = imgcore.luminance(img)
            filt, _ = generate_filter(self.enh_net_, self.ecfg_, self.eparams_, yplane)
            out.append(filt.taps)
        return np.array(out)

    def enhance(self, X):
        """Enhanced RGB images via each image's own kernel."""
        check_is_fitted(self, "eparams_")
        X = _check_images(X)
        out = np.empty_like(X)
        for i, img in enumerate(X):
            yplane = imgcore.luminance(img)
            filt, _ = generate_filter(self.enh_net_, self.ecfg_, self.eparams_, yplane)
            out[i] = luminance_delta_image(img, yplane, apply_filter(yplane, filt))[0]
        return out

    def predict_proba(self, X):
        check_is_fitted(self, "cparams_")
        X = _check_images(X)
        m = method_from_name(self.method)
        items = [TrainItem(img, 0) for img in X]
        sp = predict_streams_dynamic(
            self.enh_net_, self.ecfg_, {m: self.eparams_}, self.net_, self.cparams_,
            items, self.extent, (m,),
        )
        return sp[:, 0, :]

    def predict(self, X):
        probs = self.predict_proba(X)
        return self.classes_[np.argmax(probs, axis=1)]


class StaticFilterClassifier(ClassifierMixin, _FitSettings, BaseEstimator):
    """Classifier over fixed enhancement streams from an averaged kernel bank.

    With ``bank=None`` a quick per-method joint training derives the bank from
    the fit data before the classifier trains on the frozen streams.
    """

    def __init__(self, bank=None, weighting="equal", epochs=10, phase1_epochs=0,
                 bank_epochs=3, batch_size=8, lr=0.01, filter_size=6, extent=64,
                 flips=True, jitter=0.0, seed=0):
        self.bank = bank
        self.weighting = weighting
        self.epochs = epochs
        self.phase1_epochs = phase1_epochs
        self.bank_epochs = bank_epochs
        self.batch_size = batch_size
        self.lr = lr
        self.filter_size = filter_size
        self.extent = extent
        self.flips = flips
        self.jitter = jitter
        self.seed = seed

    def _derive_bank(self, items, ccfg):
        from .dynfilter import EnhanceNetConfig, build_enhance_net

        ecfg = EnhanceNetConfig(filter_size=self.filter_size, input_extent=self.extent)
        net = build_enhance_net(ecfg)
        params_by_method = {}
        for m in METHODS:
            cfg = TrainConfig(
                approach="a1", epochs=self.bank_epochs, methods=(m,),
                filter_size=self.filter_size, batch_size=self.batch_size,
                sgd=SgdConfig(learning_rate=self.lr), input_extent=self.extent,
                flips=self.flips, jitter=self.jitter, seed=self.seed,
            )
            eparams, _, _ = train_approach1(cfg, ccfg, items)
            params_by_method[m] = eparams
        return derive_static_filters(net, ecfg, params_by_method, items)

    def fit(self, X, y):
        X = _check_images(X)
        self.classes_, y_enc = _encode_labels(y)
        items = _make_items(X, y_enc, METHODS)
        ccfg = self._class_config(self.classes_.size)
        self.bank_ = self.bank if self.bank is not None else self._derive_bank(items, ccfg)
        if self.weighting == "equal":
            self.stream_weights_ = equal_weights()
        else:
            self.stream_weights_ = compute_static_mse_weights(self.bank_, items)
        cfg = self._train_config("a2", METHODS, weighting=self.weighting)
        self.cparams_, self.log_, _ = train_stat(
            cfg, ccfg, self.bank_, self.stream_weights_, items
        )
        self.ccfg_ = ccfg
        self.net_ = build_class_net(ccfg)
        return self

    def predict_proba(self, X):
        check_is_fitted(self, "cparams_")
        X = _check_images(X)
        items = [TrainItem(img, 0) for img in X]
        sp = predict_streams_static(self.net_, self.cparams_, self.bank_, items, self.extent)
        return fuse_all(sp, self.stream_weights_)

    def predict(self, X):
        probs = self.predict_proba(X)
        return self.classes_[np.argmax(probs, axis=1)]


class MultiFilterClassifier(ClassifierMixin, _FitSettings, BaseEstimator):
    """All filter-generating networks trained jointly with the classifier."""

    def __init__(self, epochs=10, phase1_epochs=0, batch_size=8, lr=0.01,
                 filter_size=6, extent=64, flips=True, jitter=0.0,
                 weighting="mse", mse_term=True, seed=0):
        self.epochs = epochs
        self.phase1_epochs = phase1_epochs
        self.batch_size = batch_size
        self.lr = lr
        self.filter_size = filter_size
        self.extent = extent
        self.flips = flips
        self.jitter = jitter
        self.weighting = weighting
        self.mse_term = mse_term
        self.seed = seed

    def fit(self, X, y):
        X = _check_images(X)
        self.classes_, y_enc = _encode_labels(y)
        items = _make_items(X, y_enc, METHODS)
        ccfg = self._class_config(self.classes_.size)
        cfg = self._train_config("a3", METHODS, weighting=self.weighting, mse_term=self.mse_term)
        from .dynfilter import EnhanceNetConfig, build_enhance_net

        self.params_by_method_, self.cparams_, self.stream_weights_, self.log_ = train_dyn(
            cfg, ccfg, items
        )
        self.ecfg_ = EnhanceNetConfig(filter_size=self.filter_size, input_extent=self.extent)
        self.enh_net_ = build_enhance_net(self.ecfg_)
        self.ccfg_ = ccfg
        self.net_ = build_class_net(ccfg)
        return self

    def predict_proba(self, X):
        check_is_fitted(self, "cparams_")
        X = _check_images(X)
        items = [TrainItem(img, 0) for img in X]
        sp = predict_streams_dynamic(
            self.enh_net_, self.ecfg_, self.params_by_method_, self.net_, self.cparams_,
            items, self.extent, METHODS,
        )
        return fuse_all(sp, self.stream_weights_)

    def predict(self, X):
        probs = self.predict_proba(X)
        return self.classes_[np.argmax(probs, axis=1)]
