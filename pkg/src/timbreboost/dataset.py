"""Manifests, train/test splitting, Min-Max scaling and feature tables."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

CLASS_NAMES = (
    "clarinet",
    "distorted electric guitar",
    "female singer",
    "flute",
    "piano",
    "tenor saxophone",
    "trumpet",
    "violin",
)

REQUIRED_COLUMNS = ("uuid", "instrument", "path")


class ManifestError(ValueError):
    pass


class FeatureFileError(ValueError):
    pass


@dataclass(frozen=True)
class ManifestEntry:
    clip_path: Path
    label: str
    uuid: str
    subset: str | None = None


@dataclass(frozen=True)
class DatasetManifest:
    entries: tuple
    class_names: tuple = CLASS_NAMES

    def __len__(self):
        return len(self.entries)

    def label_index(self, label: str) -> int:
        return self.class_names.index(label)


@dataclass(frozen=True)
class SplitAssignment:
    train_indices: np.ndarray
    test_indices: np.ndarray
    seed: int
    ratio: float


@dataclass(frozen=True)
class MinMaxScaler:
    min: np.ndarray
    max: np.ndarray

    def __post_init__(self):
        if self.min.shape != self.max.shape or np.any(self.min > self.max):
            raise ValueError("scaler needs matching min <= max vectors")

    def save(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow([repr(float(v)) for v in self.min])
            w.writerow([repr(float(v)) for v in self.max])

    @classmethod
    def load(cls, path) -> "MinMaxScaler":
        with open(path, newline="", encoding="utf-8") as fh:
            rows = [r for r in csv.reader(fh) if r]
        if len(rows) != 2:
            raise ValueError(f"{path}: expected two rows (min, max)")
        return cls(np.array(rows[0], dtype=np.float64), np.array(rows[1], dtype=np.float64))


def load_manifest(path, class_names=CLASS_NAMES) -> DatasetManifest:
    """Read a comma-separated manifest with `uuid`, `instrument`, `path` columns.

    Relative clip paths resolve against the manifest's directory. An
    optional `subset` column is kept for the dataset's own split.
    """
    path = Path(path)
    text = path.read_text(encoding="utf-8-sig")
    if not text.strip():
        raise ManifestError(f"{path}: empty manifest")
    reader = csv.DictReader(text.splitlines())
    header = [c.strip() for c in (reader.fieldnames or [])]
    missing = [c for c in REQUIRED_COLUMNS if c not in header]
    if missing:
        raise ManifestError(f"{path}: missing column(s) {', '.join(missing)}")
    entries = []
    for row_no, row in enumerate(reader, start=2):
        row = {k.strip(): (v or "").strip() for k, v in row.items() if k is not None}
        label = row["instrument"]
        if label not in class_names:
            raise ManifestError(f"{path}: row {row_no}: unknown label {label!r}")
        clip = Path(row["path"])
        if not clip.is_absolute():
            clip = path.parent / clip
        entries.append(ManifestEntry(clip, label, row["uuid"], row.get("subset") or None))
    return DatasetManifest(tuple(entries), tuple(class_names))


def write_manifest(path, rows) -> None:
    """Write (uuid, instrument, path[, subset]) tuples as a manifest."""
    rows = list(rows)
    with_subset = any(len(r) > 3 for r in rows)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(REQUIRED_COLUMNS + (("subset",) if with_subset else ()))
        for r in rows:
            w.writerow([str(v) for v in r])


def split_train_test(manifest_or_count, ratio: float = 0.7, seed: int = 0) -> SplitAssignment:
    """Seeded shuffle, then the first round(ratio * n) indices train.

    Only the entry count matters, never the labels.
    """
    n = manifest_or_count if isinstance(manifest_or_count, int) else len(manifest_or_count)
    if not 0 < ratio < 1:
        raise ValueError("ratio must be strictly between 0 and 1")
    if n < 2:
        raise ValueError("need at least 2 entries to split")
    perm = np.random.default_rng(seed).permutation(n)
    k = int(round(ratio * n))
    return SplitAssignment(np.sort(perm[:k]), np.sort(perm[k:]), seed, ratio)


def subset_split(subsets, seed: int = 0) -> SplitAssignment:
    """Split by a manifest-provided subset column ('training' vs anything else)."""
    subsets = list(subsets)
    train_idx = np.array([i for i, s in enumerate(subsets) if s in ("train", "training")], dtype=int)
    test_idx = np.array([i for i, s in enumerate(subsets) if s not in ("train", "training")], dtype=int)
    if len(train_idx) == 0 or len(test_idx) == 0:
        raise ValueError("subset column must name both training and test rows")
    return SplitAssignment(train_idx, test_idx, seed, len(train_idx) / len(subsets))


def fit_scaler(train_features) -> MinMaxScaler:
    X = np.asarray(train_features, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ValueError("cannot fit a scaler on an empty matrix")
    return MinMaxScaler(X.min(axis=0), X.max(axis=0))


def apply_scaler(scaler: MinMaxScaler, features) -> np.ndarray:
    """(x - min) / (max - min) per column; constant columns map to 0, nothing is clipped."""
    X = np.asarray(features, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != len(scaler.min):
        raise ValueError(f"expected {len(scaler.min)} columns, got {X.shape[-1]}")
    span = scaler.max - scaler.min
    const = span == 0
    out = (X - scaler.min) / np.where(const, 1.0, span)
    out[:, const] = 0.0
    return out


def invert_scaler(scaler: MinMaxScaler, scaled) -> np.ndarray:
    return np.asarray(scaled, dtype=np.float64) * (scaler.max - scaler.min) + scaler.min


# -- feature tables --------------------------------------------------------

@dataclass(frozen=True)
class FeatureTable:
    source_ids: list
    labels: list
    names: list
    values: np.ndarray

    def __len__(self):
        return len(self.source_ids)

    def label_indices(self, class_names=CLASS_NAMES) -> np.ndarray:
        try:
            return np.array([class_names.index(l) for l in self.labels], dtype=int)
        except ValueError as exc:
            raise FeatureFileError(f"unknown label in feature table: {exc}") from None

    def select_columns(self, names) -> "FeatureTable":
        idx = [self.names.index(n) for n in names]
        return FeatureTable(self.source_ids, self.labels, list(names), self.values[:, idx])

    def rows(self, indices) -> "FeatureTable":
        indices = np.asarray(indices, dtype=int)
        return FeatureTable([self.source_ids[i] for i in indices], [self.labels[i] for i in indices],
                            self.names, self.values[indices])


def write_feature_table(path, table: FeatureTable) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["source_id", "label"] + list(table.names))
        for sid, label, row in zip(table.source_ids, table.labels, table.values):
            w.writerow([sid, label] + [repr(float(v)) for v in row])


def read_feature_table(path) -> FeatureTable:
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise FeatureFileError(f"cannot read feature file {path}: {exc}") from None
    if not rows or rows[0][:2] != ["source_id", "label"]:
        raise FeatureFileError(f"{path}: missing 'source_id,label,...' header")
    names = rows[0][2:]
    ids, labels, values = [], [], []
    for lineno, r in enumerate(rows[1:], start=2):
        if not r:
            continue
        if len(r) != len(names) + 2:
            raise FeatureFileError(f"{path}:{lineno}: expected {len(names) + 2} fields, got {len(r)}")
        try:
            values.append([float(v) for v in r[2:]])
        except ValueError:
            raise FeatureFileError(f"{path}:{lineno}: non-numeric feature value") from None
        ids.append(r[0])
        labels.append(r[1])
    arr = np.array(values, dtype=np.float64).reshape(len(values), len(names))
    return FeatureTable(ids, labels, names, arr)


def medley_manifest(metadata_csv, audio_dir, out_path) -> Path:
    """Build a manifest from Medley-solos-DB metadata (subset, instrument, instrument_id, uuid4).

    Audio files are expected as ``Medley-solos-DB_{subset}-{instrument_id}_{uuid4}.wav``.
    """
    audio_dir = Path(audio_dir)
    rows = []
    with open(metadata_csv, newline="", encoding="utf-8") as fh:
        for r in csv.DictReader(fh):
            name = f"Medley-solos-DB_{r['subset']}-{r['instrument_id']}_{r['uuid4']}.wav"
            rows.append((r["uuid4"], r["instrument"], str(audio_dir / name), r["subset"]))
    write_manifest(out_path, rows)
    return Path(out_path)
