"""Batch command line: extract, train, evaluate, ablate (plus `synth` for a demo corpus).

Every flag can also be set through an environment variable named
``TIMBREBOOST_<FLAG>``, e.g. ``TIMBREBOOST_WORKERS=4``; explicit flags win.
"""

from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import fields, replace
from pathlib import Path

import numpy as np

from .audio_io import WavError, SampleRateMismatchError, load_wav
from .dataset import (CLASS_NAMES, FeatureFileError, FeatureTable, ManifestError, apply_scaler,
                      fit_scaler, load_manifest, read_feature_table, split_train_test, subset_split,
                      write_feature_table, MinMaxScaler)
from .evaluation import ConfusionMatrix, format_percent
from .features import FeatureConfig, extract_clip_features, feature_names
from .gbt import TrainConfig, load_model, predict_classes, save_model, train
from .kvconfig import read_key_values, write_key_values

log = logging.getLogger("timbreboost")

ENV_PREFIX = "TIMBREBOOST_"

EXIT_OK = 0
EXIT_CONFIG = 3
EXIT_DATA = 4
EXIT_PARTIAL = 5

ABLATION_COMBOS = (
    ("A", ("time",)),
    ("B", ("frequency",)),
    ("C", ("cepstral",)),
    ("D", ("time", "frequency")),
    ("E", ("time", "cepstral")),
    ("F", ("frequency", "cepstral")),
    ("G", ("time", "frequency", "cepstral")),
    ("H", ("time", "frequency", "cepstral", "autocorr")),
)


class ConfigError(Exception):
    pass


class DataError(Exception):
    pass


def load_config(path=None) -> tuple[FeatureConfig, TrainConfig]:
    """Read one flat key-value file holding feature and/or training settings."""
    if path is None:
        return FeatureConfig(), TrainConfig()
    try:
        mapping = read_key_values(path)
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    feature_keys = {f.name for f in fields(FeatureConfig)}
    train_keys = {f.name for f in fields(TrainConfig)}
    unknown = set(mapping) - feature_keys - train_keys
    if unknown:
        raise ConfigError(f"{path}: unknown key(s) {', '.join(sorted(unknown))}")
    try:
        fc = FeatureConfig.from_mapping({k: v for k, v in mapping.items() if k in feature_keys})
        tc = TrainConfig.from_mapping({k: v for k, v in mapping.items() if k in train_keys})
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return fc, tc


# -- extract ---------------------------------------------------------------

def _extract_one(args):
    path, uid, config = args
    try:
        clip = load_wav(path, source_id=uid)
        return extract_clip_features(clip, config).values, None
    except (OSError, WavError, SampleRateMismatchError, ValueError) as exc:
        return None, f"{type(exc).__name__}: {exc}"


def extract_table(manifest, config: FeatureConfig, workers: int = 1):
    """Features for every manifest entry; returns (table, [(uuid, reason), ...])."""
    jobs = [(e.clip_path, e.uuid, config) for e in manifest.entries]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_extract_one, jobs, chunksize=8))
    else:
        results = []
        for i, job in enumerate(jobs, 1):
            results.append(_extract_one(job))
            if i % 100 == 0 or i == len(jobs):
                log.info("extracted %d/%d clips", i, len(jobs))
    ids, labels, rows, failures = [], [], [], []
    for entry, (values, err) in zip(manifest.entries, results):
        if err is not None:
            failures.append((entry.uuid, err))
            log.warning("failed %s: %s", entry.uuid, err)
            continue
        ids.append(entry.uuid)
        labels.append(entry.label)
        rows.append(values)
    names = feature_names(config)
    values = np.array(rows, dtype=np.float64).reshape(len(rows), len(names))
    return FeatureTable(ids, labels, names, values), failures


def cmd_extract(manifest_path, config_path, out_path, workers: int = 1):
    try:
        manifest = load_manifest(manifest_path)
    except (OSError, ManifestError) as exc:
        raise ConfigError(str(exc)) from None
    feature_config, _ = load_config(config_path)
    table, failures = extract_table(manifest, feature_config, workers)
    if len(table) == 0:
        raise DataError(f"all {len(failures)} clips failed")
    write_feature_table(out_path, table)
    fail_path = Path(str(out_path) + ".failures.csv")
    if failures:
        with open(fail_path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["uuid", "reason"])
            w.writerows(failures)
    elif fail_path.exists():
        fail_path.unlink()
    print(f"wrote {len(table)} rows x {len(table.names)} features to {out_path}")
    if failures:
        print(f"{len(failures)} clip(s) failed; see {fail_path}")
    return table, failures


# -- train -----------------------------------------------------------------

def _sidecars(model_path):
    model_path = Path(model_path)
    stem = model_path.with_suffix("")
    return (Path(f"{stem}.scaler.csv"), Path(f"{stem}.split.csv"), Path(f"{stem}.metrics.txt"))


def train_on_table(table: FeatureTable, train_config: TrainConfig, seed: int, ratio: float,
                   use_subset=None):
    y = table.label_indices()
    if len(set(y.tolist())) < 2:
        raise DataError("training needs at least two classes")
    split = subset_split(use_subset, seed) if use_subset is not None else split_train_test(len(table), ratio, seed)
    scaler = fit_scaler(table.values[split.train_indices])
    X_train = apply_scaler(scaler, table.values[split.train_indices])
    X_test = apply_scaler(scaler, table.values[split.test_indices])
    ensemble = train(X_train, y[split.train_indices], train_config, num_classes=len(CLASS_NAMES))
    ensemble.feature_names = tuple(table.names)
    train_acc = float(np.mean(predict_classes(ensemble, X_train) == y[split.train_indices]))
    test_pred = predict_classes(ensemble, X_test)
    cm = ConfusionMatrix.from_predictions(y[split.test_indices], test_pred)
    return ensemble, scaler, split, train_acc, cm


def _subsets_for(table: FeatureTable, manifest_path):
    try:
        manifest = load_manifest(manifest_path)
    except (OSError, ManifestError) as exc:
        raise ConfigError(str(exc)) from None
    by_id = {e.uuid: e.subset for e in manifest.entries}
    missing = [s for s in table.source_ids if not by_id.get(s)]
    if missing:
        raise DataError(f"{len(missing)} feature rows have no subset in {manifest_path} (e.g. {missing[0]})")
    return [by_id[s] for s in table.source_ids]


def cmd_train(features_path, config_path, seed: int, model_out, ratio: float = 0.7,
              subset_manifest=None):
    """Split, scale, train and persist the model with scaler, split and metrics sidecars.

    With `subset_manifest` the manifest's subset column decides the split
    ('training' rows train, everything else tests) instead of a seeded shuffle.
    """
    try:
        table = read_feature_table(features_path)
    except FeatureFileError as exc:
        raise DataError(str(exc)) from None
    _, train_config = load_config(config_path)
    subsets = _subsets_for(table, subset_manifest) if subset_manifest else None
    try:
        ensemble, scaler, split, train_acc, cm = train_on_table(table, train_config, seed, ratio, subsets)
    except ValueError as exc:
        raise DataError(str(exc)) from None
    scaler_path, split_path, metrics_path = _sidecars(model_out)
    save_model(ensemble, model_out)
    scaler.save(scaler_path)
    with open(split_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["source_id", "subset"])
        subset = np.empty(len(table), dtype=object)
        subset[split.train_indices] = "train"
        subset[split.test_indices] = "test"
        w.writerows(zip(table.source_ids, subset))
    metrics = {"split_seed": seed, "split_ratio": repr(ratio), "n_train": len(split.train_indices),
               "n_test": len(split.test_indices), "train_accuracy": repr(train_acc),
               "test_accuracy": repr(cm.accuracy)}
    metrics.update(train_config.to_mapping())
    write_key_values(metrics_path, metrics)
    print(f"train accuracy: {format_percent(train_acc)}")
    print(f"test accuracy:  {format_percent(cm.accuracy)}")
    return train_acc, cm.accuracy


# -- evaluate --------------------------------------------------------------

def write_report(cm: ConfusionMatrix, out_dir, extra=None):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    cm.write_csv(out_dir / "confusion_matrix.csv")
    cm.write_per_class_csv(out_dir / "per_class.csv")
    metrics = {"accuracy": repr(cm.accuracy), "n": cm.total}
    metrics.update(extra or {})
    write_key_values(out_dir / "metrics.txt", metrics)


def cmd_evaluate(model_path, features_path, out_dir, subset: str = "test"):
    """Confusion matrix of the model on `features_path`.

    With subset='test' only rows recorded as test in the model's split file
    are scored; subset='all' scores every row.
    """
    try:
        ensemble = load_model(model_path)
        table = read_feature_table(features_path)
        scaler_path, split_path, _ = _sidecars(model_path)
        scaler = MinMaxScaler.load(scaler_path)
    except (OSError, ValueError) as exc:
        raise DataError(str(exc)) from None
    if ensemble.feature_names and list(ensemble.feature_names) != table.names:
        raise DataError(f"feature file columns do not match the model's {len(ensemble.feature_names)} features")
    if subset == "test":
        if not split_path.exists():
            raise DataError(f"no split record at {split_path}; use --subset all")
        with open(split_path, newline="", encoding="utf-8") as fh:
            test_ids = {r["source_id"] for r in csv.DictReader(fh) if r["subset"] == "test"}
        table = table.rows([i for i, s in enumerate(table.source_ids) if s in test_ids])
    if len(table) == 0:
        raise DataError("no rows to evaluate")
    try:
        pred = predict_classes(ensemble, apply_scaler(scaler, table.values))
    except ValueError as exc:
        raise DataError(str(exc)) from None
    cm = ConfusionMatrix.from_predictions(table.label_indices(), pred)
    write_report(cm, out_dir, {"subset": subset})
    print(f"accuracy: {format_percent(cm.accuracy)} on {cm.total} clips")
    for name, p, r in zip(cm.class_names, cm.precision(), cm.recall()):
        print(f"  {name:<28} precision {format_percent(p):>8}  recall {format_percent(r):>8}")
    return cm


# -- ablate ----------------------------------------------------------------

def combo_columns(names, domains, config: FeatureConfig):
    wanted = set(feature_names(replace(config, domains=tuple(domains))))
    return [n for n in names if n in wanted]


def cmd_ablate(manifest_path, config_path, out_dir, seed: int = 0, ratio: float = 0.7, workers: int = 1):
    """Run every domain combination A-H with one split and one set of hyperparameters.

    Features are extracted once with all domains enabled and each
    combination trains on its own column subset.
    """
    try:
        manifest = load_manifest(manifest_path)
    except (OSError, ManifestError) as exc:
        raise ConfigError(str(exc)) from None
    feature_config, train_config = load_config(config_path)
    full = replace(feature_config, domains=("time", "frequency", "cepstral", "autocorr"))
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    table, failures = extract_table(manifest, full, workers)
    if len(table) == 0:
        raise DataError("all clips failed")
    write_feature_table(out_dir / "features_all.csv", table)
    hyper = train_config.to_mapping()
    rows = []
    for combo, domains in ABLATION_COMBOS:
        cols = combo_columns(table.names, domains, feature_config)
        try:
            _, _, _, _, cm = train_on_table(table.select_columns(cols), train_config, seed, ratio)
            acc, err = repr(cm.accuracy), ""
            print(f"{combo} {'+'.join(domains):<34} dim {len(cols):>2}  accuracy {format_percent(cm.accuracy)}")
        except (DataError, ValueError) as exc:
            acc, err = "", str(exc)
            print(f"{combo} failed: {exc}")
        rows.append([combo, "+".join(domains), len(cols), acc, seed, err] + list(hyper.values()))
    with open(out_dir / "ablation.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["combo", "domains", "dimension", "accuracy", "split_seed", "error"] + list(hyper))
        w.writerows(rows)
    if failures:
        with open(out_dir / "failures.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["uuid", "reason"])
            w.writerows(failures)
    return rows, failures


# -- argument parsing ------------------------------------------------------

def _env(name, default=None):
    return os.environ.get(ENV_PREFIX + name.upper().replace("-", "_"), default)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="timbreboost", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", default=_env("verbose") is not None)
    sub = parser.add_subparsers(dest="command", required=True)

    def flag(p, name, required=False, **kw):
        default = _env(name, kw.pop("default", None))
        p.add_argument(f"--{name}", default=default, required=required and default is None, **kw)

    p = sub.add_parser("extract", help="compute one feature row per manifest clip")
    flag(p, "manifest", required=True)
    flag(p, "config")
    flag(p, "out", required=True)
    flag(p, "workers", type=int, default=1)

    p = sub.add_parser("train", help="split, scale and fit the boosted ensemble")
    flag(p, "features", required=True)
    flag(p, "config")
    flag(p, "model", required=True)
    flag(p, "seed", type=int, default=0)
    flag(p, "split-ratio", type=float, default=0.7)
    flag(p, "subset-manifest", help="split by this manifest's subset column instead of shuffling")

    p = sub.add_parser("evaluate", help="confusion matrix and accuracy report")
    flag(p, "model", required=True)
    flag(p, "features", required=True)
    flag(p, "out", required=True)
    flag(p, "subset", choices=("test", "all"), default="test")

    p = sub.add_parser("ablate", help="train and score feature-domain combinations A-H")
    flag(p, "manifest", required=True)
    flag(p, "config")
    flag(p, "out", required=True)
    flag(p, "seed", type=int, default=0)
    flag(p, "split-ratio", type=float, default=0.7)
    flag(p, "workers", type=int, default=1)

    p = sub.add_parser("synth", help="write a seeded synthetic 8-class corpus")
    flag(p, "out", required=True)
    flag(p, "clips-per-class", type=int, default=100)
    flag(p, "duration", type=float, default=1.0)
    flag(p, "seed", type=int, default=0)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        if args.command == "extract":
            _, failures = cmd_extract(args.manifest, args.config, args.out, int(args.workers))
            return EXIT_PARTIAL if failures else EXIT_OK
        if args.command == "train":
            cmd_train(args.features, args.config, int(args.seed), args.model, float(args.split_ratio),
                      args.subset_manifest)
        elif args.command == "evaluate":
            cmd_evaluate(args.model, args.features, args.out, args.subset)
        elif args.command == "ablate":
            _, failures = cmd_ablate(args.manifest, args.config, args.out, int(args.seed),
                                     float(args.split_ratio), int(args.workers))
            return EXIT_PARTIAL if failures else EXIT_OK
        elif args.command == "synth":
            from .synth import make_corpus
            path = make_corpus(args.out, int(args.clips_per_class), float(args.duration), seed=int(args.seed))
            print(f"wrote {path}")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
