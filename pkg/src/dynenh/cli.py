"""Command line interface.

Subcommands: gen-targets, synth-data, train, eval, export-filters,
gradcheck, report.  Exit codes: 0 success, 2 usage or missing-precondition
errors (bad flags, unknown config keys, absent target cache), 1 anything
that fails at runtime.

Options resolve as flags > config file > defaults; config files hold one
``key=value`` per line with ``#`` comments.  Every training run lands in its
own timestamped directory under --runs-root containing config.txt,
inputs.txt, log.csv, checkpoints, and an evaluation summary.  File contents
are byte-deterministic for a fixed config and seed; timestamps appear only
in directory names.
"""

from __future__ import annotations

import argparse
import hashlib
import logging
import os
import sys
import time

import numpy as np

from . import dataio, imgcore
from .autonet import SgdConfig, load_params, save_params
from .classify import ClassNetConfig, build_class_net, mean_average_precision
from .dynfilter import (
    DynamicFilter,
    EnhanceNetConfig,
    apply_filter,
    build_enhance_net,
    generate_filter,
    read_filter,
    write_filter,
)
from .enhance import METHODS, EnhanceParams, method_from_name
from .gradcheck import TOLERANCE, run_all
from .pipeline import (
    StaticFilterBank,
    StreamWeights,
    TrainConfig,
    compute_static_mse_weights,
    enhancement_psnr,
    equal_weights,
    fuse_all,
    predict_rgb,
    predict_streams_dynamic,
    predict_streams_static,
    train_approach1,
    train_baseline,
    train_dyn,
    train_stat,
)

log = logging.getLogger(__name__)


class UsageError(Exception):
    """Bad invocation or unmet precondition; maps to exit code 2."""


# ---------------------------------------------------------------------------
# config plumbing


def _coerce(s: str):
    if s == "":
        return None
    if s in ("true", "True"):
        return True
    if s in ("false", "False"):
        return False
    try:
        return int(s)
    except ValueError:
        pass
    try:
        return float(s)
    except ValueError:
        pass
    return s


def _read_config_file(path: str) -> dict:
    if not os.path.isfile(path):
        raise UsageError(f"config file not found: {path}")
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{lineno}: expected key=value, got {raw.rstrip()!r}")
            key, value = line.split("=", 1)
            out[key.strip()] = _coerce(value.strip())
    return out


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _resolve_config(defaults: dict, config_path, flag_values: dict) -> dict:
    cfg = dict(defaults)
    if config_path:
        for key, value in _read_config_file(config_path).items():
            if key not in cfg:
                raise UsageError(f"unknown config key {key!r}")
            cfg[key] = value
    for key, value in flag_values.items():
        if value is not None:
            cfg[key] = value
    return cfg


def _echo_config(cfg: dict, dest=None) -> str:
    text = "".join(f"{k}={_fmt(cfg[k])}\n" for k in sorted(cfg))
    sys.stdout.write(text)
    if dest:
        with open(dest, "w", encoding="utf-8") as fh:
            fh.write(text)
    return text


def _parse_split(value) -> tuple[float, float, float]:
    parts = str(value).split(",")
    if len(parts) != 3:
        raise UsageError(f"split must be three comma-separated fractions, got {value!r}")
    try:
        return tuple(float(p) for p in parts)  # type: ignore[return-value]
    except ValueError as e:
        raise UsageError(f"bad split {value!r}: {e}") from None


def _write_csv(path: str, columns: list[str], rows: list[dict]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(",".join(columns) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(row.get(c)) for c in columns) + "\n")


_LOG_COLUMNS = ["phase", "epoch", "loss_mse", "loss_cls", "loss_total", "train_acc"] + [
    f"w_{m.value}" for m in METHODS
]


# ---------------------------------------------------------------------------
# run directories


def _new_run_dir(runs_root: str, prefix: str) -> str:
    os.makedirs(runs_root, exist_ok=True)
    stamp = time.strftime("%Y%m%d-%H%M%S")
    base = os.path.join(runs_root, f"{prefix}-{stamp}")
    path, n = base, 1
    while True:
        try:
            os.makedirs(path, exist_ok=False)
            return path
        except FileExistsError:
            n += 1
            path = f"{base}-{n}"


def _acquire_lock(run_dir: str) -> str:
    lock = os.path.join(run_dir, ".lock")
    fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    os.write(fd, f"{os.getpid()}\n".encode())
    os.close(fd)
    return lock


def _check_unlocked(run_dir: str) -> None:
    if os.path.exists(os.path.join(run_dir, ".lock")):
        raise RuntimeError(f"run {run_dir} is locked (training in progress or crashed)")


# ---------------------------------------------------------------------------
# shared loading


def _cache_dir_for(cfg: dict) -> str:
    return cfg.get("cache_dir") or dataio.default_cache_dir(cfg["data"])


def _manifest_for(cfg: dict) -> dataio.DatasetManifest:
    return dataio.load_dataset(cfg["data"], _parse_split(cfg["split"]), cfg["split_seed"])


def _methods_for(approach: str, method, need_targets_for_mse=False):
    if approach == "fc":
        return ()
    if approach == "a1":
        if not method:
            raise UsageError("a1 needs --method")
        return (method_from_name(method),)
    if approach == "a2":
        return METHODS if need_targets_for_mse else ()
    return METHODS


def _train_config(cfg: dict, approach: str, methods) -> TrainConfig:
    return TrainConfig(
        approach=approach,
        epochs=cfg["epochs"],
        methods=methods if approach == "a1" else METHODS,
        weighting=cfg["weighting"],
        filter_size=cfg["filter_size"],
        batch_size=cfg["batch_size"],
        phase1_epochs=cfg["phase1_epochs"],
        sgd=SgdConfig(
            learning_rate=cfg["lr"],
            weight_decay=cfg["weight_decay"],
            momentum=cfg["momentum"],
            lr_decay_factor=cfg["lr_decay_factor"],
            lr_decay_every=cfg["lr_decay_every"],
        ),
        enhance_lr_scale=cfg["enhance_lr_scale"],
        classnet_body_scale=cfg["body_scale"],
        classnet_head_scale=cfg["head_scale"],
        input_extent=cfg["extent"],
        flips=cfg["flips"],
        jitter=cfg["jitter"],
        mse_term=cfg["mse_term"],
        seed=cfg["seed"],
        record_batches=cfg["record_batches"],
    )


def _load_bank(bank_dir: str) -> StaticFilterBank:
    filters = []
    for m in METHODS:
        path = os.path.join(bank_dir, f"{m.value}.static.plane")
        if not os.path.isfile(path):
            raise UsageError(
                f"bank file missing: {path}; run `dynenh export-filters` first"
            )
        filters.append(read_filter(path))
    return StaticFilterBank(tuple(filters))


def _write_weights_csv(path: str, weights: StreamWeights) -> None:
    rows = [{"stream": m.value, "weight": float(w)} for m, w in zip(METHODS, weights.values)]
    rows.append({"stream": "rgb", "weight": weights.rgb})
    _write_csv(path, ["stream", "weight"], rows)


def _read_weights_csv(path: str) -> StreamWeights:
    with open(path, encoding="utf-8") as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    values = {}
    for ln in lines[1:]:
        stream, weight = ln.split(",")
        values[stream] = float(weight)
    return StreamWeights(np.array([values[m.value] for m in METHODS]))


# ---------------------------------------------------------------------------
# train


_TRAIN_DEFAULTS = {
    "data": None,
    "approach": "a3",
    "method": None,
    "bank": None,
    "weighting": "mse",
    "epochs": 10,
    "phase1_epochs": 0,
    "batch_size": 8,
    "lr": 0.01,
    "momentum": 0.9,
    "weight_decay": 5e-4,
    "lr_decay_factor": 0.1,
    "lr_decay_every": 15000,
    "enhance_lr_scale": 0.01,
    "body_scale": 0.1,
    "head_scale": 1.0,
    "filter_size": 6,
    "extent": 64,
    "flips": True,
    "jitter": 0.0,
    "mse_term": True,
    "seed": 0,
    "split": "0.6,0.2,0.2",
    "split_seed": 0,
    "cache_dir": None,
    "record_batches": False,
}


def _cmd_train(args) -> int:
    flags = {k: getattr(args, k) for k in _TRAIN_DEFAULTS}
    cfg = _resolve_config(_TRAIN_DEFAULTS, args.config, flags)
    if not cfg["data"]:
        raise UsageError("train needs --data")
    approach = cfg["approach"]
    if approach not in ("fc", "a1", "a2", "a3"):
        raise UsageError(f"unknown approach {cfg['approach']!r}")
    if approach == "a2" and not cfg["bank"]:
        raise UsageError("a2 needs --bank (directory from `dynenh export-filters`)")
    cfg["data"] = os.path.abspath(cfg["data"])
    manifest = _manifest_for(cfg)
    cache_dir = _cache_dir_for(cfg)
    methods = _methods_for(approach, cfg["method"], cfg["weighting"] == "mse")
    tcfg = _train_config(cfg, approach, methods)
    ccfg = ClassNetConfig(manifest.class_count, input_extent=cfg["extent"])
    run_dir = _new_run_dir(args.runs_root, approach)
    lock = _acquire_lock(run_dir)
    cfg_record = dict(cfg)
    cfg_record["class_names"] = ",".join(manifest.class_names)
    cfg_record["cache_dir"] = cache_dir
    config_text = _echo_config(cfg_record, os.path.join(run_dir, "config.txt"))
    _write_inputs_digest(run_dir, manifest, config_text)
    print(f"run dir: {run_dir}")
    train_items = dataio.load_items(manifest, "train", methods, cache_dir)
    print(f"training approach {approach} on {len(train_items)} images, "
          f"{manifest.class_count} classes")
    batch_rows: list[dict] = []
    if approach == "fc":
        cparams, rows = train_baseline(tcfg, ccfg, train_items)
        save_params(os.path.join(run_dir, "classnet.ckpt"), cparams)
    elif approach == "a1":
        eparams, cparams, rows = train_approach1(tcfg, ccfg, train_items)
        save_params(os.path.join(run_dir, "classnet.ckpt"), cparams)
        save_params(os.path.join(run_dir, f"enhance.{methods[0].value}.ckpt"), eparams)
    elif approach == "a2":
        bank = _load_bank(cfg["bank"])
        if cfg["weighting"] == "equal":
            weights = equal_weights()
        else:
            weights = compute_static_mse_weights(bank, train_items)
        cparams, rows, batch_rows = train_stat(tcfg, ccfg, bank, weights, train_items)
        save_params(os.path.join(run_dir, "classnet.ckpt"), cparams)
        bank_dir = os.path.join(run_dir, "bank")
        os.makedirs(bank_dir, exist_ok=True)
        for m, filt in zip(METHODS, bank.filters):
            write_filter(os.path.join(bank_dir, f"{m.value}.static"), filt)
        _write_weights_csv(os.path.join(run_dir, "weights.csv"), weights)
    else:
        params_by_method, cparams, weights, rows = train_dyn(tcfg, ccfg, train_items)
        save_params(os.path.join(run_dir, "classnet.ckpt"), cparams)
        for m in METHODS:
            save_params(os.path.join(run_dir, f"enhance.{m.value}.ckpt"), params_by_method[m])
        _write_weights_csv(os.path.join(run_dir, "weights.csv"), weights)
    _write_csv(os.path.join(run_dir, "log.csv"), _LOG_COLUMNS, rows)
    if batch_rows:
        _write_batches_csv(os.path.join(run_dir, "batches.csv"), batch_rows)
    os.remove(lock)
    _do_eval(run_dir, "val", dump_count=0)
    return 0


def _write_inputs_digest(run_dir, manifest, config_text) -> None:
    h = hashlib.sha256()
    h.update(config_text.encode())
    for split in ("train", "val", "test"):
        for s in manifest.split(split):
            rel = os.path.relpath(s.path, manifest.root)
            h.update(f"{split},{rel},{s.label}\n".encode())
    with open(os.path.join(run_dir, "inputs.txt"), "w", encoding="utf-8") as fh:
        fh.write(h.hexdigest() + "\n")


def _write_batches_csv(path, batch_rows) -> None:
    columns = ["epoch", "batch", "loss_total"] + [f"loss_{m.value}" for m in METHODS] + ["loss_rgb"]
    rows = []
    for br in batch_rows:
        row = {"epoch": br["epoch"], "batch": br["batch"], "loss_total": br["loss_total"]}
        for k, m in enumerate(METHODS):
            row[f"loss_{m.value}"] = br["stream_losses"][k]
        row["loss_rgb"] = br["stream_losses"][len(METHODS)]
        rows.append(row)
    _write_csv(path, columns, rows)


# ---------------------------------------------------------------------------
# eval / report


def _load_run(run_dir: str):
    config_path = os.path.join(run_dir, "config.txt")
    if not os.path.isfile(config_path):
        raise UsageError(f"no config.txt in {run_dir}")
    cfg = _read_config_file(config_path)
    manifest = _manifest_for(cfg)
    stored = tuple(str(cfg["class_names"]).split(","))
    if manifest.class_names != stored:
        raise RuntimeError(
            f"dataset classes {manifest.class_names} no longer match run config {stored}"
        )
    ccfg = ClassNetConfig(manifest.class_count, input_extent=cfg["extent"])
    cls_net = build_class_net(ccfg)
    cparams = load_params(os.path.join(run_dir, "classnet.ckpt"))
    out = {
        "cfg": cfg,
        "manifest": manifest,
        "ccfg": ccfg,
        "cls_net": cls_net,
        "cparams": cparams,
        "approach": cfg["approach"],
    }
    if cfg["approach"] in ("a1", "a3"):
        ecfg = EnhanceNetConfig(filter_size=cfg["filter_size"], input_extent=cfg["extent"])
        enh_net = build_enhance_net(ecfg)
        methods = (
            (method_from_name(cfg["method"]),) if cfg["approach"] == "a1" else METHODS
        )
        out["ecfg"] = ecfg
        out["enh_net"] = enh_net
        out["methods"] = methods
        out["eparams"] = {
            m: load_params(os.path.join(run_dir, f"enhance.{m.value}.ckpt")) for m in methods
        }
    if cfg["approach"] == "a2":
        out["bank"] = _load_bank(os.path.join(run_dir, "bank"))
        out["methods"] = METHODS
    if cfg["approach"] in ("a2", "a3"):
        out["weights"] = _read_weights_csv(os.path.join(run_dir, "weights.csv"))
    return out


def _accuracy(preds: np.ndarray, labels: np.ndarray) -> float:
    return float(np.mean(preds == labels))


def _do_eval(run_dir: str, split: str, dump_count: int) -> int:
    run = _load_run(run_dir)
    cfg, manifest = run["cfg"], run["manifest"]
    cache_dir = cfg["cache_dir"]
    approach = run["approach"]
    need_targets = approach in ("a1", "a3") or (dump_count > 0 and approach == "a2")
    methods = run.get("methods", ())
    items = dataio.load_items(manifest, split, methods if need_targets else (), cache_dir)
    if not items:
        print(f"split {split} is empty; nothing to evaluate")
        return 0
    labels = np.array([it.label for it in items])
    extent = cfg["extent"]
    cls_net, cparams = run["cls_net"], run["cparams"]
    summary_rows: list[dict] = []
    if approach == "fc":
        probs = predict_rgb(cls_net, cparams, items, extent)
        fused = probs
        summary_rows.append({"stream": "rgb", "metric": "accuracy",
                             "value": _accuracy(probs.argmax(1), labels)})
    elif approach == "a1":
        m = methods[0]
        sp = predict_streams_dynamic(
            run["enh_net"], run["ecfg"], run["eparams"], cls_net, cparams,
            items, extent, methods,
        )
        fused = sp[:, 0, :]
        summary_rows.append({"stream": m.value, "metric": "accuracy",
                             "value": _accuracy(sp[:, 0, :].argmax(1), labels)})
        summary_rows.append({"stream": "rgb", "metric": "accuracy",
                             "value": _accuracy(sp[:, 1, :].argmax(1), labels)})
    elif approach == "a2":
        sp = predict_streams_static(cls_net, cparams, run["bank"], items, extent)
        fused = fuse_all(sp, run["weights"])
        for k, m in enumerate(METHODS):
            summary_rows.append({"stream": m.value, "metric": "accuracy",
                                 "value": _accuracy(sp[:, k, :].argmax(1), labels)})
        summary_rows.append({"stream": "rgb", "metric": "accuracy",
                             "value": _accuracy(sp[:, -1, :].argmax(1), labels)})
    else:
        sp = predict_streams_dynamic(
            run["enh_net"], run["ecfg"], run["eparams"], cls_net, cparams,
            items, extent, METHODS,
        )
        fused = fuse_all(sp, run["weights"])
        for k, m in enumerate(METHODS):
            summary_rows.append({"stream": m.value, "metric": "accuracy",
                                 "value": _accuracy(sp[:, k, :].argmax(1), labels)})
        summary_rows.append({"stream": "rgb", "metric": "accuracy",
                             "value": _accuracy(sp[:, -1, :].argmax(1), labels)})
    preds = fused.argmax(1)
    summary_rows.append({"stream": "fused", "metric": "accuracy", "value": _accuracy(preds, labels)})
    label_sets = [set(s.label_set) for s in manifest.split(split)]
    if any(len(ls) > 1 for ls in label_sets):
        summary_rows.append({"stream": "fused", "metric": "map",
                             "value": mean_average_precision(fused, label_sets)})
    if approach in ("a1", "a3"):
        for m in methods:
            enh_db, id_db = enhancement_psnr(
                run["enh_net"], run["ecfg"], run["eparams"][m], items, m
            )
            summary_rows.append({"stream": m.value, "metric": "psnr_enhanced_db", "value": enh_db})
            summary_rows.append({"stream": m.value, "metric": "psnr_identity_db", "value": id_db})
    for row in summary_rows:
        row["value"] = float(row["value"])
    eval_rows = [
        {"path": os.path.relpath(it.path, manifest.root), "label": int(lb), "pred": int(pr),
         "correct": int(lb == pr)}
        for it, lb, pr in zip(items, labels, preds)
    ]
    _write_csv(os.path.join(run_dir, f"eval_{split}.csv"),
               ["path", "label", "pred", "correct"], eval_rows)
    _write_csv(os.path.join(run_dir, "summary.csv"), ["stream", "metric", "value"], summary_rows)
    for row in summary_rows:
        print(f"{row['stream']:10s} {row['metric']:18s} {row['value']:.6f}")
    if dump_count > 0:
        _dump_enhanced(run, items[:dump_count], run_dir)
    return 0


def _dump_enhanced(run, items, run_dir: str) -> None:
    if run["approach"] == "fc":
        raise UsageError("--dump-enhanced needs an approach with enhancement streams")
    out_dir = os.path.join(run_dir, "enhanced")
    os.makedirs(out_dir, exist_ok=True)
    for item in items:
        stem = os.path.splitext(os.path.basename(item.path))[0]
        y = imgcore.luminance(item.rgb)
        for m in run["methods"]:
            if run["approach"] == "a2":
                filt = run["bank"].filters[list(METHODS).index(m)]
            else:
                filt, _ = generate_filter(run["enh_net"], run["ecfg"], run["eparams"][m], y)
            enhanced = apply_filter(y, filt)
            target = item.targets[m]
            diffc = imgcore.clamp01(1.0 - (target - enhanced))
            base = os.path.join(out_dir, f"{stem}.{m.value}")
            imgcore.write_image(base + ".target.png", imgcore.clamp01(target))
            imgcore.write_image(base + ".enhanced.png", imgcore.clamp01(enhanced))
            imgcore.write_image(base + ".diffc.png", diffc)


def _cmd_eval(args) -> int:
    _check_unlocked(args.run)
    return _do_eval(args.run, args.split, args.dump_enhanced)


def _cmd_report(args) -> int:
    _check_unlocked(args.run)
    rv = _do_eval(args.run, args.split, 0)
    if args.plots:
        _write_loss_svg(args.run)
        print(f"wrote {os.path.join(args.run, 'loss.svg')}")
    return rv


def _write_loss_svg(run_dir: str) -> None:
    path = os.path.join(run_dir, "log.csv")
    if not os.path.isfile(path):
        raise UsageError(f"no log.csv in {run_dir}")
    with open(path, encoding="utf-8") as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    columns = lines[0].split(",")
    series = []
    for ln in lines[1:]:
        row = dict(zip(columns, ln.split(",")))
        val = row.get("loss_total") or row.get("loss_cls")
        if val:
            series.append(float(val))
    if not series:
        raise RuntimeError("log.csv holds no loss values to plot")
    w, h, ml, mb = 640, 360, 60, 40
    lo, hi = min(series), max(series)
    span = (hi - lo) or 1.0
    pts = []
    for i, v in enumerate(series):
        x = ml + (w - ml - 20) * (i / max(len(series) - 1, 1))
        y = (h - mb) - (h - mb - 20) * ((v - lo) / span)
        pts.append(f"{x:.2f},{y:.2f}")
    svg = (
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}">\n'
        f'<rect width="{w}" height="{h}" fill="white"/>\n'
        f'<line x1="{ml}" y1="20" x2="{ml}" y2="{h - mb}" stroke="black"/>\n'
        f'<line x1="{ml}" y1="{h - mb}" x2="{w - 20}" y2="{h - mb}" stroke="black"/>\n'
        f'<text x="5" y="25" font-size="12">{hi:.4g}</text>\n'
        f'<text x="5" y="{h - mb}" font-size="12">{lo:.4g}</text>\n'
        f'<text x="{w // 2}" y="{h - 10}" font-size="12">epoch</text>\n'
        f'<polyline fill="none" stroke="steelblue" stroke-width="1.5" '
        f'points="{" ".join(pts)}"/>\n</svg>\n'
    )
    with open(os.path.join(run_dir, "loss.svg"), "w", encoding="utf-8") as fh:
        fh.write(svg)


# ---------------------------------------------------------------------------
# gen-targets / synth-data / export-filters / gradcheck


def _cmd_gen_targets(args) -> int:
    manifest = dataio.load_dataset(args.data, _parse_split(args.split), args.split_seed)
    methods = METHODS if args.methods == "all" else tuple(
        method_from_name(p) for p in args.methods.split(",")
    )
    cache_dir = args.cache_dir or dataio.default_cache_dir(manifest.root)
    stats = dataio.generate_targets(
        manifest, methods, EnhanceParams(), cache_dir, threads=args.threads, force=args.force
    )
    print(
        f"targets: {stats['written']} written, {stats['skipped']} up to date, "
        f"{stats['repaired']} repaired -> {cache_dir}"
    )
    return 0


def _cmd_synth_data(args) -> int:
    manifest = dataio.synth_texture_dataset(
        args.out,
        class_count=args.classes,
        per_class=args.per_class,
        extent=args.extent,
        seed=args.seed,
        blur_sigma=args.blur_sigma,
        photometric_jitter=args.photometric_jitter,
        split=_parse_split(args.split),
        split_seed=args.split_seed,
    )
    print(
        f"wrote {args.classes * args.per_class} images under {manifest.root} "
        f"({len(manifest.train)} train / {len(manifest.val)} val / {len(manifest.test)} test)"
    )
    return 0


def _cmd_export_filters(args) -> int:
    runs = [os.path.abspath(r) for r in args.runs]
    loaded = [_load_run(r) for r in runs]
    roots = {ld["manifest"].root for ld in loaded}
    if len(roots) > 1:
        raise UsageError(f"runs draw on different datasets: {sorted(roots)}")
    by_method = {}
    ecfg = None
    enh_net = None
    for ld in loaded:
        if ld["approach"] not in ("a1", "a3"):
            raise UsageError(f"{ld['approach']} runs carry no filter-generating networks")
        for m in ld["methods"]:
            if m in by_method:
                raise UsageError(f"method {m.value} appears in more than one run")
            by_method[m] = ld["eparams"][m]
        ecfg = ld["ecfg"]
        enh_net = ld["enh_net"]
    manifest = loaded[0]["manifest"]
    out_dir = args.out or os.path.join(runs[0], "filters")
    os.makedirs(out_dir, exist_ok=True)
    items = dataio.load_items(manifest, args.split, (), loaded[0]["cfg"]["cache_dir"])
    per_image = 0
    for m in sorted(by_method, key=lambda mm: list(METHODS).index(mm)):
        total = np.zeros((ecfg.filter_size, ecfg.filter_size))
        for item in items:
            y = imgcore.luminance(item.rgb)
            filt, _ = generate_filter(enh_net, ecfg, by_method[m], y)
            total += filt.taps
            if args.per_image:
                rel = os.path.relpath(item.path, manifest.root)
                stem = os.path.splitext(rel.replace(os.sep, "__"))[0]
                write_filter(os.path.join(out_dir, f"{stem}.{m.value}"), filt)
                per_image += 1
        write_filter(
            os.path.join(out_dir, f"{m.value}.static"), DynamicFilter(total / len(items))
        )
    missing = [m.value for m in METHODS if m not in by_method]
    if missing:
        log.warning("bank incomplete, missing methods: %s", ", ".join(missing))
    print(
        f"exported {len(by_method)} static filters"
        + (f" and {per_image} per-image filters" if per_image else "")
        + f" -> {out_dir}"
    )
    return 0


def _cmd_gradcheck(args) -> int:
    rows, elapsed = run_all(args.seed)
    ok = True
    for name, err in rows:
        status = "PASS" if err <= TOLERANCE else "FAIL"
        ok = ok and err <= TOLERANCE
        print(f"{name:24s} {err:12.3e}  {status}")
    print(f"{len(rows)} checks in {elapsed:.1f}s, tolerance {TOLERANCE:g}")
    return 0 if ok else 1


# ---------------------------------------------------------------------------
# parser


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dynenh",
        description="Per-image enhancement kernels trained jointly with a classifier.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-targets", help="fill the enhancement target cache")
    p.add_argument("--data", required=True)
    p.add_argument("--methods", default="all", help="comma list of bf,wls,gf,histeq,imsharp")
    p.add_argument("--cache-dir", default=None)
    p.add_argument("--threads", type=int, default=int(os.environ.get("DYNENH_THREADS", "1")))
    p.add_argument("--split", default="0.6,0.2,0.2")
    p.add_argument("--split-seed", type=int, default=0)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=_cmd_gen_targets)

    p = sub.add_parser("synth-data", help="write the synthetic oriented-texture corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--classes", type=int, default=8)
    p.add_argument("--per-class", type=int, default=25)
    p.add_argument("--extent", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--blur-sigma", type=float, default=1.1)
    p.add_argument("--photometric-jitter", type=float, default=1.0)
    p.add_argument("--split", default="0.5,0.2,0.3")
    p.add_argument("--split-seed", type=int, default=0)
    p.set_defaults(func=_cmd_synth_data)

    p = sub.add_parser("train", help="train one of the four setups")
    p.add_argument("--config", default=None, help="key=value file; flags override it")
    p.add_argument("--runs-root", default="runs")
    for key, default in _TRAIN_DEFAULTS.items():
        flag = "--" + key.replace("_", "-")
        if isinstance(default, bool):
            p.add_argument(flag, action=argparse.BooleanOptionalAction, default=None)
        elif isinstance(default, int):
            p.add_argument(flag, type=int, default=None)
        elif isinstance(default, float):
            p.add_argument(flag, type=float, default=None)
        else:
            p.add_argument(flag, default=None)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="evaluate a finished run on a split")
    p.add_argument("--run", required=True)
    p.add_argument("--split", default="test", choices=("train", "val", "test"))
    p.add_argument("--dump-enhanced", type=int, default=0, metavar="N",
                   help="write target/enhanced/diffc PNGs for the first N images")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("export-filters", help="export per-image and averaged kernels")
    p.add_argument("--runs", nargs="+", required=True)
    p.add_argument("--out", default=None)
    p.add_argument("--split", default="train", choices=("train", "val", "test"))
    p.add_argument("--per-image", action="store_true")
    p.set_defaults(func=_cmd_export_filters)

    p = sub.add_parser("gradcheck", help="finite-difference checks of every backward pass")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_gradcheck)

    p = sub.add_parser("report", help="regenerate summary.csv (and optional loss plot)")
    p.add_argument("--run", required=True)
    p.add_argument("--split", default="val", choices=("train", "val", "test"))
    p.add_argument("--plots", action="store_true")
    p.set_defaults(func=_cmd_report)

    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        return args.func(args)
    except (UsageError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except Exception as e:  # noqa: BLE001 - CLI boundary
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
