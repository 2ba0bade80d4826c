"""Datasets, target caching, augmentation, and a synthetic texture corpus.

A dataset is either a directory with one subdirectory per class or a
`manifest.csv` (UTF-8, header ``path,label`` plus optional extra label
columns for multi-label evaluation).  Classes are ordered lexicographically;
splits are stratified per class from a seeded shuffle, so the same root,
fractions, and seed always produce the same split.

Enhancement targets are cached next to the dataset as little-endian float64
plane files, one per image and method, and regenerated only when missing or
stale.  A seeded 5% spot check re-derives skipped entries and repairs any
mismatch.
"""

from __future__ import annotations

import concurrent.futures
import logging
import math
import os
from dataclasses import dataclass

import numpy as np

from . import imgcore
from .enhance import METHODS, EnhanceMethod, EnhanceParams, make_target, method_from_name

log = logging.getLogger(__name__)

IMAGE_SUFFIXES = (".png", ".ppm", ".jpg", ".jpeg")
_SPOT_CHECK_SEED = 20260822
_SPOT_CHECK_FRACTION = 0.05


# ---------------------------------------------------------------------------
# dataset loading


@dataclass(frozen=True)
class Sample:
    path: str
    label: int
    label_set: tuple[int, ...]


@dataclass(frozen=True)
class DatasetManifest:
    root: str
    class_names: tuple[str, ...]
    train: tuple[Sample, ...]
    val: tuple[Sample, ...]
    test: tuple[Sample, ...]
    seed: int

    def split(self, name: str) -> tuple[Sample, ...]:
        if name not in ("train", "val", "test"):
            raise ValueError(f"unknown split {name!r}")
        return getattr(self, name)

    @property
    def class_count(self) -> int:
        return len(self.class_names)


def _check_split_fractions(split) -> tuple[float, float, float]:
    fr = tuple(float(f) for f in split)
    if len(fr) != 3 or any(f < 0.0 for f in fr):
        raise ValueError(f"split must be three fractions >= 0, got {split}")
    if abs(sum(fr) - 1.0) > 1e-9:
        raise ValueError(f"split fractions must sum to 1, got {fr}")
    return fr


def _scan_class_dirs(root: str) -> tuple[tuple[str, ...], dict[str, list[str]]]:
    # leading underscore or dot marks support directories (target cache etc.)
    names = sorted(
        d for d in os.listdir(root)
        if os.path.isdir(os.path.join(root, d)) and not d.startswith(("_", "."))
    )
    if not names:
        raise ValueError(f"no class subdirectories under {root}")
    by_class = {}
    for name in names:
        files = sorted(
            os.path.join(root, name, f)
            for f in os.listdir(os.path.join(root, name))
            if f.lower().endswith(IMAGE_SUFFIXES)
        )
        if not files:
            raise ValueError(f"class directory {name!r} holds no images")
        by_class[name] = files
    return names, by_class


def _read_manifest_csv(root: str, path: str):
    with open(path, encoding="utf-8") as fh:
        lines = [ln.rstrip("\n") for ln in fh if ln.strip()]
    if not lines or not lines[0].startswith("path,label"):
        raise ValueError(f"{path}: header must start with 'path,label'")
    rows = []
    names = set()
    for ln in lines[1:]:
        cells = ln.split(",")
        if len(cells) < 2 or not cells[0] or not cells[1]:
            raise ValueError(f"{path}: bad row {ln!r}")
        extras = tuple(c for c in cells[2:] if c)
        rows.append((os.path.join(root, cells[0]), cells[1], extras))
        names.add(cells[1])
        names.update(extras)
    if not rows:
        raise ValueError(f"{path}: no data rows")
    return sorted(names), rows


def load_dataset(root: str, split=(0.6, 0.2, 0.2), seed: int = 0) -> DatasetManifest:
    """Scan a dataset root and produce a deterministic stratified split."""
    root = os.path.abspath(root)
    if not os.path.isdir(root):
        raise FileNotFoundError(f"dataset root {root} does not exist")
    fr = _check_split_fractions(split)
    manifest_path = os.path.join(root, "manifest.csv")
    samples_by_class: dict[int, list[Sample]] = {}
    if os.path.isfile(manifest_path):
        class_names, rows = _read_manifest_csv(root, manifest_path)
        index = {n: i for i, n in enumerate(class_names)}
        for path, label_name, extras in rows:
            label = index[label_name]
            label_set = tuple(sorted({label, *(index[e] for e in extras)}))
            samples_by_class.setdefault(label, []).append(Sample(path, label, label_set))
    else:
        class_names, by_class = _scan_class_dirs(root)
        for label, name in enumerate(class_names):
            samples_by_class[label] = [
                Sample(p, label, (label,)) for p in by_class[name]
            ]
    for label, group in sorted(samples_by_class.items()):
        for s in group:
            if not os.path.isfile(s.path):
                raise FileNotFoundError(f"listed image missing: {s.path}")
    train, val, test = [], [], []
    for label in range(len(class_names)):
        group = samples_by_class.get(label, [])
        if not group:
            raise ValueError(f"class {class_names[label]!r} has no samples")
        rng = np.random.default_rng(np.random.SeedSequence([seed, label]))
        order = rng.permutation(len(group))
        n = len(group)
        n_train = max(1, int(round(fr[0] * n)))
        n_val = min(int(round(fr[1] * n)), n - n_train)
        for j, idx in enumerate(order):
            if j < n_train:
                train.append(group[idx])
            elif j < n_train + n_val:
                val.append(group[idx])
            else:
                test.append(group[idx])
    return DatasetManifest(
        root, tuple(class_names), tuple(train), tuple(val), tuple(test), seed
    )


# ---------------------------------------------------------------------------
# target cache


def target_cache_path(cache_dir: str, root: str, image_path: str, method: EnhanceMethod) -> str:
    rel = os.path.relpath(os.path.abspath(image_path), os.path.abspath(root))
    flat = rel.replace(os.sep, "__").replace("/", "__")
    stem = os.path.splitext(flat)[0]
    return os.path.join(cache_dir, f"{stem}.{method.value}.plane")


def _atomic_write_plane(path: str, plane: np.ndarray) -> None:
    tmp = path + ".tmp"
    imgcore.write_plane_file(tmp, plane)
    os.replace(tmp, path)


def _cache_entry_fresh(dst: str, src: str) -> bool:
    if not os.path.isfile(dst):
        return False
    if os.path.getmtime(dst) < os.path.getmtime(src):
        return False
    try:
        with open(dst, "rb") as fh:
            head = fh.readline()
        parts = head.split()
        return len(parts) == 3 and parts[0] == b"P-PLANE"
    except OSError:
        return False


def _target_job(src: str, dsts: list[str], method_names: list[str], params: EnhanceParams):
    y = imgcore.luminance(imgcore.read_image(src))
    for mname, dst in zip(method_names, dsts):
        _atomic_write_plane(dst, make_target(method_from_name(mname), y, params))
    return len(dsts)


def generate_targets(
    manifest: DatasetManifest,
    methods=METHODS,
    params: EnhanceParams | None = None,
    cache_dir: str | None = None,
    threads: int = 1,
    force: bool = False,
) -> dict:
    """Fill the target cache for every split.  Returns work counts."""
    params = params or EnhanceParams()
    cache_dir = cache_dir or default_cache_dir(manifest.root)
    os.makedirs(cache_dir, exist_ok=True)
    all_samples = manifest.train + manifest.val + manifest.test
    jobs = []
    skipped: list[tuple[str, str, EnhanceMethod]] = []
    for s in all_samples:
        dsts, names = [], []
        for m in methods:
            dst = target_cache_path(cache_dir, manifest.root, s.path, m)
            if not force and _cache_entry_fresh(dst, s.path):
                skipped.append((s.path, dst, m))
            else:
                dsts.append(dst)
                names.append(m.value)
        if dsts:
            jobs.append((s.path, dsts, names))
    if threads > 1 and len(jobs) > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=threads) as pool:
            futures = [pool.submit(_target_job, *job, params) for job in jobs]
            written = sum(f.result() for f in futures)
    else:
        written = sum(_target_job(*job, params) for job in jobs)
    repaired = 0
    if skipped:
        rng = np.random.default_rng(
            np.random.SeedSequence([_SPOT_CHECK_SEED, len(skipped)])
        )
        n_check = max(1, math.ceil(_SPOT_CHECK_FRACTION * len(skipped)))
        picks = rng.choice(len(skipped), size=min(n_check, len(skipped)), replace=False)
        for idx in sorted(picks):
            src, dst, m = skipped[idx]
            fresh = make_target(m, imgcore.luminance(imgcore.read_image(src)), params)
            stored = imgcore.read_plane_file(dst)
            if stored.shape != fresh.shape or not np.array_equal(stored, fresh):
                log.warning("stale cached target repaired: %s", dst)
                _atomic_write_plane(dst, fresh)
                repaired += 1
    return {"written": written, "skipped": len(skipped), "repaired": repaired}


def default_cache_dir(root: str) -> str:
    env = os.environ.get("DYNENH_CACHE_DIR")
    return env if env else os.path.join(root, "_targets")


def load_items(manifest, split_name: str, methods, cache_dir=None):
    """Materialize a split as training items with cached targets attached.

    ``methods=()`` loads images only.
    """
    from .pipeline import TrainItem

    cache_dir = cache_dir or default_cache_dir(manifest.root)
    items = []
    for s in manifest.split(split_name):
        rgb = imgcore.read_image(s.path)
        targets = {}
        for m in methods:
            dst = target_cache_path(cache_dir, manifest.root, s.path, m)
            if not os.path.isfile(dst):
                raise FileNotFoundError(
                    f"missing cached target {dst} for {s.path}; run `dynenh gen-targets` first"
                )
            targets[m] = imgcore.read_plane_file(dst)
        items.append(TrainItem(rgb, s.label, targets if methods else None, s.path))
    return items


# ---------------------------------------------------------------------------
# augmentation


@dataclass(frozen=True)
class AugmentConfig:
    crop_extent: int
    enable_flips: bool = True
    jitter: float = 0.0

    def __post_init__(self):
        if self.crop_extent < 1:
            raise ValueError("crop_extent must be >= 1")
        if not 0.0 <= self.jitter < 1.0:
            raise ValueError("jitter must be in [0, 1)")


@dataclass(frozen=True)
class AugmentDraw:
    row: int
    col: int
    flip: bool
    gains: tuple[float, float, float]


def draw_augment(cfg: AugmentConfig, h: int, w: int, rng) -> AugmentDraw:
    """Sample one augmentation: corner-or-center crop, flip, channel gains.

    The same number of random draws is consumed regardless of settings, so a
    stream shared across samples stays aligned when options change.
    """
    e = cfg.crop_extent
    if h < e or w < e:
        raise ValueError(f"image {h}x{w} smaller than crop extent {e}")
    corners = ((0, 0), (0, w - e), (h - e, 0), (h - e, w - e), ((h - e) // 2, (w - e) // 2))
    row, col = corners[int(rng.integers(len(corners)))]
    flip = bool(rng.integers(2)) and cfg.enable_flips
    g = rng.uniform(1.0 - cfg.jitter, 1.0 + cfg.jitter, 3)
    return AugmentDraw(row, col, flip, (float(g[0]), float(g[1]), float(g[2])))


def apply_augment_rgb(img, draw: AugmentDraw, cfg: AugmentConfig) -> np.ndarray:
    e = cfg.crop_extent
    out = img[draw.row : draw.row + e, draw.col : draw.col + e, :]
    if draw.flip:
        out = out[:, ::-1, :]
    if draw.gains != (1.0, 1.0, 1.0):
        out = imgcore.clamp01(out * np.asarray(draw.gains))
    return np.ascontiguousarray(out, dtype=np.float64)


def apply_augment_plane(plane, draw: AugmentDraw, cfg: AugmentConfig) -> np.ndarray:
    """Crop and flip only: targets follow geometry, never photometric jitter."""
    e = cfg.crop_extent
    out = plane[draw.row : draw.row + e, draw.col : draw.col + e]
    if draw.flip:
        out = out[:, ::-1]
    return np.ascontiguousarray(out, dtype=np.float64)


# ---------------------------------------------------------------------------
# synthetic oriented-texture corpus


# Class identity lives in a fine texture orientation that blurring all but
# erases, while a long-wave distractor stripe in some other orientation
# survives the blur, so the degraded image's dominant structure misleads.
# On top of that every image gets its own global gain/offset draw, so the
# corpus has no shared photometric frame.  Detail amplification restores the
# texture's lead; histogram equalization restores the shared frame.
_TEX_COEF = 0.12
_BG_COEF = 0.07
_DIST_AMP = 0.09
_DIST_LAM = 10.0
_GAIN_JITTER = 0.28
_OFFSET_JITTER = 0.10


def class_orientation(label: int, class_count: int) -> float:
    return math.pi * label / class_count


def _texture_plane(extent: int, theta: float, theta_d: float, rng) -> np.ndarray:
    """Near-theta sinusoid stack plus one long-wave stripe along theta_d."""
    yy, xx = np.mgrid[0:extent, 0:extent].astype(np.float64)
    t = np.zeros((extent, extent), dtype=np.float64)
    for j in range(6):
        ang = theta + rng.uniform(-0.13, 0.13)
        lam = (4.2 if j % 2 == 0 else 5.6) * rng.uniform(0.9, 1.1)
        phase = rng.uniform(0.0, 2.0 * math.pi)
        t += np.sin((2.0 * math.pi / lam) * (xx * math.cos(ang) + yy * math.sin(ang)) + phase)
    t = (t - t.mean()) / max(t.std(), 1e-12)
    d_lam = _DIST_LAM * rng.uniform(0.9, 1.1)
    d_phase = rng.uniform(0.0, 2.0 * math.pi)
    d = np.sin((2.0 * math.pi / d_lam) * (xx * math.cos(theta_d) + yy * math.sin(theta_d)) + d_phase)
    bg = rng.standard_normal((extent, extent))
    bg = imgcore.gaussian_blur(bg, 3.0)
    bg = (bg - bg.mean()) / max(bg.std(), 1e-12)
    return np.clip(0.5 + _BG_COEF * bg + _TEX_COEF * t + _DIST_AMP * d, 0.02, 0.98)


def _synth_one(
    seed: int,
    label: int,
    i: int,
    class_count: int,
    extent: int,
    blur_sigma: float,
    photometric_jitter: float,
):
    rng = np.random.default_rng(np.random.SeedSequence([seed, label, i]))
    other = (label + 1 + int(rng.integers(class_count - 1))) % class_count
    clean = _texture_plane(
        extent,
        class_orientation(label, class_count),
        class_orientation(other, class_count),
        rng,
    )
    degraded = imgcore.gaussian_blur(clean, blur_sigma)
    gain = 1.0 + photometric_jitter * _GAIN_JITTER * rng.uniform(-1.0, 1.0)
    offset = photometric_jitter * _OFFSET_JITTER * rng.uniform(-1.0, 1.0)
    degraded = gain * degraded + offset
    return clean, np.clip(degraded, 0.0, 1.0), rng


def synth_texture_images(
    class_count: int,
    per_class: int,
    extent: int,
    seed: int,
    blur_sigma: float = 1.1,
    photometric_jitter: float = 1.0,
):
    """Yield (clean, degraded, label) planes for the synthetic corpus."""
    if class_count < 2 or per_class < 1 or extent < 16:
        raise ValueError("need class_count >= 2, per_class >= 1, extent >= 16")
    for label in range(class_count):
        for i in range(per_class):
            clean, degraded, _ = _synth_one(
                seed, label, i, class_count, extent, blur_sigma, photometric_jitter
            )
            yield clean, degraded, label


def synth_texture_dataset(
    out_dir: str,
    class_count: int = 8,
    per_class: int = 25,
    extent: int = 64,
    seed: int = 0,
    blur_sigma: float = 1.1,
    photometric_jitter: float = 1.0,
    split=(0.5, 0.2, 0.3),
    split_seed: int = 0,
) -> DatasetManifest:
    """Write a degraded oriented-texture dataset as PNGs and split it."""
    out_dir = os.path.abspath(out_dir)
    width = len(str(class_count - 1))
    pad = len(str(per_class - 1))
    for label in range(class_count):
        cls_dir = os.path.join(out_dir, f"c{label:0{width}d}")
        os.makedirs(cls_dir, exist_ok=True)
        for i in range(per_class):
            _, degraded, rng = _synth_one(
                seed, label, i, class_count, extent, blur_sigma, photometric_jitter
            )
            gains = rng.uniform(0.96, 1.04, 3)
            rgb = imgcore.clamp01(degraded[:, :, None] * gains)
            imgcore.write_image(os.path.join(cls_dir, f"img_{i:0{pad}d}.png"), rgb)
    return load_dataset(out_dir, split, split_seed)


def oriented_gradient_energy(plane, theta: float) -> float:
    """Mean squared directional derivative along theta (central differences)."""
    p = imgcore.as_plane(plane)
    gy, gx = np.gradient(p)
    d = gx * math.cos(theta) + gy * math.sin(theta)
    return float(np.mean(d * d))


def _texture_band(p: np.ndarray) -> np.ndarray:
    return imgcore.gaussian_blur(p, 0.8) - imgcore.gaussian_blur(p, 2.2)


def _broadband_floor(p: np.ndarray) -> float:
    gy, gx = np.gradient(p)
    return float(np.mean(gx * gx + gy * gy))


def texture_cue_salience(plane, label: int, class_count: int) -> float:
    """Margin of the true orientation's band-passed energy over its best
    rival, relative to the plane's total gradient energy.

    The ratio tracks how prominently the class cue stands out against
    everything else a local reader contends with; blurring collapses it,
    detail amplification restores it.
    """
    p = imgcore.as_plane(plane)
    band = _texture_band(p)
    e = [
        oriented_gradient_energy(band, class_orientation(c, class_count))
        for c in range(class_count)
    ]
    rival = max(e[c] for c in range(class_count) if c != label)
    return (e[label] - rival) / _broadband_floor(p)


def classify_by_structure(plane, class_count: int) -> int:
    """Pick the class whose orientation dominates the texture band."""
    band = _texture_band(imgcore.as_plane(plane))
    energies = [
        oriented_gradient_energy(band, class_orientation(c, class_count))
        for c in range(class_count)
    ]
    return int(np.argmax(energies))
