"""
Tabular dataset loading.

Reads a JSON dataset config plus a CSV file, one-hot encodes categorical
features, standardizes continuous features with statistics fitted on the
train split only, and assigns seeded train/validation/test splits.
"""
import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
import pandas as pd
from sklearn.datasets import make_blobs
from sklearn.preprocessing import StandardScaler

from .errors import BoundsError, ConfigError, DataError, ParseError

logger = logging.getLogger(__name__)

KINDS = ("continuous", "categorical", "binary")
MONOTONICITY = ("free", "increase-only", "decrease-only")
SPLITS = ("train", "validation", "test")
MISSING_TOKENS = {"", "?", "na", "nan", "null", "none"}


@dataclass(frozen=True)
class FeatureSpec:
    """One logical input feature as described in the dataset config"""
    name: str
    kind: str = "continuous"
    actionable: bool = False
    monotonicity: str = "free"
    group_key: bool = False

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"feature {self.name!r}: unknown kind {self.kind!r} (expected one of {KINDS})")
        if self.monotonicity not in MONOTONICITY:
            raise ConfigError(
                f"feature {self.name!r}: unknown monotonicity {self.monotonicity!r} (expected one of {MONOTONICITY})"
            )
        if self.kind == "categorical" and self.actionable:
            raise ConfigError(f"feature {self.name!r}: categorical features cannot be actionable")

    @classmethod
    def from_dict(cls, entry: Dict[str, Any]) -> "FeatureSpec":
        if "name" not in entry:
            raise ConfigError(f"feature entry without a name: {entry}")
        unknown = set(entry) - {"name", "kind", "actionable", "monotonicity", "group_key"}
        if unknown:
            raise ConfigError(f"feature {entry['name']!r}: unknown keys {sorted(unknown)}")
        return cls(
            name=str(entry["name"]),
            kind=entry.get("kind", "continuous"),
            actionable=bool(entry.get("actionable", False)),
            monotonicity=entry.get("monotonicity", "free"),
            group_key=bool(entry.get("group_key", False)),
        )


@dataclass(frozen=True)
class DatasetConfig:
    name: str
    label_column: str
    positive_label: str
    features: Tuple[FeatureSpec, ...]
    positive_label_meaning: str = ""
    train_fraction: float = 0.8
    test_holdout: int = 0
    test_subsample: Optional[int] = None
    delta_max: float = 0.75
    group_majority: Optional[str] = None
    constraints: Tuple[Dict[str, Any], ...] = ()
    training: Dict[str, Any] = field(default_factory=dict)
    csv_path: Optional[Path] = None
    source: Optional[Path] = None

    def __post_init__(self):
        if not self.features:
            raise ConfigError(f"dataset {self.name!r}: no features configured")
        names = [spec.name for spec in self.features]
        if len(set(names)) != len(names):
            raise ConfigError(f"dataset {self.name!r}: duplicate feature names")
        if self.label_column in names:
            raise ConfigError(f"dataset {self.name!r}: label column {self.label_column!r} listed as a feature")
        if sum(spec.group_key for spec in self.features) > 1:
            raise ConfigError(f"dataset {self.name!r}: at most one feature may be the group key")
        if self.group_majority is not None and self.group_key is None:
            raise ConfigError(f"dataset {self.name!r}: group_majority set without a group-key feature")
        if not 0.0 < self.train_fraction <= 1.0:
            raise ConfigError(f"train_fraction must be in (0, 1], got {self.train_fraction}")
        if self.test_holdout < 0:
            raise ConfigError(f"test_holdout must be >= 0, got {self.test_holdout}")
        if self.delta_max <= 0:
            raise ConfigError(f"delta_max must be > 0, got {self.delta_max}")

    @property
    def group_key(self) -> Optional[FeatureSpec]:
        for spec in self.features:
            if spec.group_key:
                return spec
        return None


def load_config(config_path: str) -> DatasetConfig:
    """Read a JSON dataset config"""
    path = Path(config_path)
    try:
        with open(path, "r", encoding="utf-8") as f:
            raw = json.load(f)
    except FileNotFoundError:
        raise ConfigError(f"dataset config not found: {path}")
    except json.JSONDecodeError as e:
        raise ConfigError(f"dataset config {path} is not valid JSON: {e}")

    for key in ("label_column", "positive_label", "features"):
        if key not in raw:
            raise ConfigError(f"dataset config {path} is missing {key!r}")

    csv_path = None
    if raw.get("csv"):
        csv_path = Path(raw["csv"])
        if not csv_path.is_absolute():
            csv_path = path.parent / csv_path

    test_subsample = raw.get("test_subsample")
    return DatasetConfig(
        name=raw.get("name", path.stem),
        label_column=str(raw["label_column"]),
        positive_label=str(raw["positive_label"]),
        features=tuple(FeatureSpec.from_dict(entry) for entry in raw["features"]),
        positive_label_meaning=raw.get("positive_label_meaning", ""),
        train_fraction=float(raw.get("train_fraction", 0.8)),
        test_holdout=int(raw.get("test_holdout", 0)),
        test_subsample=int(test_subsample) if test_subsample is not None else None,
        delta_max=float(raw.get("delta_max", 0.75)),
        group_majority=str(raw["group_majority"]) if raw.get("group_majority") is not None else None,
        constraints=tuple(raw.get("constraints", ())),
        training=dict(raw.get("training", {})),
        csv_path=csv_path,
        source=path,
    )


@dataclass(frozen=True)
class DatasetBundle:
    """
    Encoded, standardized and split dataset.

    Columns are the expanded model inputs (one-hot columns are named
    ``feature=level``). ``means``/``stds`` hold the standardization of
    every column; non-continuous columns carry the identity (0, 1).
    """
    X: np.ndarray
    y: np.ndarray
    split: np.ndarray
    columns: Tuple[str, ...]
    column_specs: Tuple[FeatureSpec, ...]
    specs: Tuple[FeatureSpec, ...]
    means: np.ndarray
    stds: np.ndarray
    row_ids: np.ndarray
    groups: Optional[np.ndarray] = None
    positive_label_meaning: str = ""
    config: Optional[DatasetConfig] = None

    @property
    def n_features(self) -> int:
        return self.X.shape[1]

    @property
    def standardization(self) -> Dict[str, Tuple[float, float]]:
        return {
            name: (float(mean), float(std))
            for name, spec, mean, std in zip(self.columns, self.column_specs, self.means, self.stds)
            if spec.kind == "continuous"
        }

    def indices(self, split: str) -> np.ndarray:
        if split not in SPLITS:
            raise ConfigError(f"unknown split {split!r} (expected one of {SPLITS})")
        return np.flatnonzero(self.split == split)

    def rows(self, split: str) -> Tuple[np.ndarray, np.ndarray]:
        idx = self.indices(split)
        return self.X[idx], self.y[idx]

    def group_values(self, split: str) -> np.ndarray:
        if self.groups is None:
            raise ConfigError("dataset has no group-key feature")
        return self.groups[self.indices(split)]


def load_dataset(config_path: str, csv_path: Optional[str] = None, seed: int = 0) -> DatasetBundle:
    """
    Load, encode, split and standardize a dataset.

    ``csv_path`` defaults to the ``csv`` entry of the config.
    """
    config = load_config(config_path)
    if csv_path is None:
        if config.csv_path is None:
            raise ConfigError(f"no CSV given and config {config_path} has no 'csv' entry")
        csv_path = config.csv_path
    return build_bundle(config, read_csv(csv_path), seed)


def prepare_dataset(config_path: str, csv_path: Optional[str] = None, seed: int = 0) -> DatasetBundle:
    """load_dataset followed by the config's test subsample, if any"""
    bundle = load_dataset(config_path, csv_path, seed)
    if bundle.config is not None and bundle.config.test_subsample is not None:
        bundle = subsample_test(bundle, bundle.config.test_subsample, seed)
    return bundle


def read_csv(csv_path) -> pd.DataFrame:
    path = Path(csv_path)
    if not path.exists():
        raise ConfigError(f"CSV file not found: {path}")
    # Everything as text; parsing happens per feature kind
    return pd.read_csv(path, dtype=str, keep_default_na=False, skipinitialspace=True)


def build_bundle(config: DatasetConfig, frame: pd.DataFrame, seed: int) -> DatasetBundle:
    """Turn a raw text frame into a DatasetBundle following ``config``"""
    frame = frame.rename(columns=lambda c: str(c).strip())
    used = [config.label_column] + [spec.name for spec in config.features]
    missing_columns = [name for name in used if name not in frame.columns]
    if missing_columns:
        raise ConfigError(f"CSV is missing configured columns: {missing_columns}")

    frame = frame[used].apply(lambda col: col.str.strip())
    frame.index = pd.RangeIndex(len(frame))
    missing = frame.apply(lambda col: col.str.lower().isin(MISSING_TOKENS)).any(axis=1)
    if missing.any():
        logger.info("Dropping %d of %d rows with missing values", int(missing.sum()), len(frame))
    frame = frame[~missing]
    if frame.empty:
        raise DataError("no rows left after dropping missing values")

    row_ids = frame.index.to_numpy()
    y = _label_vector(frame[config.label_column], config.positive_label)

    blocks: List[np.ndarray] = []
    columns: List[str] = []
    column_specs: List[FeatureSpec] = []
    groups = None
    for spec in config.features:
        values = frame[spec.name]
        if spec.kind == "categorical":
            levels = sorted(values.unique())
            for level in levels:
                blocks.append((values == level).to_numpy(dtype=float))
                columns.append(f"{spec.name}={level}")
                column_specs.append(FeatureSpec(name=f"{spec.name}={level}", kind="categorical"))
        else:
            numbers = _numeric_column(values, spec)
            blocks.append(numbers)
            columns.append(spec.name)
            column_specs.append(spec)
        if spec.group_key:
            groups = values.to_numpy(dtype=str)

    X = np.column_stack(blocks).astype(float)
    split = assign_splits(len(y), seed, config.train_fraction, config.test_holdout)

    means = np.zeros(X.shape[1])
    stds = np.ones(X.shape[1])
    continuous = np.array([spec.kind == "continuous" for spec in column_specs])
    if continuous.any():
        train = split == "train"
        scaler = StandardScaler().fit(X[train][:, continuous])
        X[:, continuous] = scaler.transform(X[:, continuous])
        means[continuous] = scaler.mean_
        stds[continuous] = scaler.scale_
        for name, var in zip(np.array(columns)[continuous], scaler.var_):
            if var == 0:
                logger.warning("Continuous column %r is constant on the train split", name)

    for array in (X, y, split, means, stds, row_ids):
        array.setflags(write=False)
    if groups is not None:
        groups.setflags(write=False)

    logger.info(
        "Loaded %s: %d rows, %d columns (train=%d, validation=%d, test=%d)",
        config.name, len(y), X.shape[1],
        int((split == "train").sum()), int((split == "validation").sum()), int((split == "test").sum()),
    )
    return DatasetBundle(
        X=X,
        y=y,
        split=split,
        columns=tuple(columns),
        column_specs=tuple(column_specs),
        specs=config.features,
        means=means,
        stds=stds,
        row_ids=row_ids,
        groups=groups,
        positive_label_meaning=config.positive_label_meaning,
        config=config,
    )


def _label_vector(values: pd.Series, positive_label: str) -> np.ndarray:
    """1 where the raw label equals the configured positive label"""
    matches = values == positive_label
    numbers = pd.to_numeric(values, errors="coerce")
    try:
        positive = float(positive_label)
    except ValueError:
        positive = None
    if positive is not None and numbers.notna().all():
        matches = numbers == positive
    return matches.to_numpy(dtype=int)


def _numeric_column(values: pd.Series, spec: FeatureSpec) -> np.ndarray:
    numbers = pd.to_numeric(values, errors="coerce")
    bad = numbers.isna() | ~np.isfinite(numbers.fillna(0.0))
    if bad.any():
        row = bad.idxmax()
        raise ParseError(
            f"non-numeric value {values[row]!r} in {spec.kind} column {spec.name!r}",
            row=int(row),
            column=spec.name,
        )
    if spec.kind == "binary" and not numbers.isin([0, 1]).all():
        row = (~numbers.isin([0, 1])).idxmax()
        raise ParseError(f"binary column {spec.name!r} holds {values[row]!r}", row=int(row), column=spec.name)
    return numbers.to_numpy(dtype=float)


def assign_splits(n_rows: int, seed: int, train_fraction: float = 0.8, test_holdout: int = 0) -> np.ndarray:
    """
    Seeded split tags: ``train_fraction`` of the rows go to train, the rest
    is validation minus ``test_holdout`` rows held out as the test split.
    Depends only on (seed, n_rows) for a fixed configuration.
    """
    order = np.random.default_rng(seed).permutation(n_rows)
    n_train = int(np.floor(train_fraction * n_rows + 0.5))
    held = order[n_train:]
    if n_train == 0:
        raise ConfigError(f"empty train split ({n_rows} rows, train_fraction={train_fraction})")
    if test_holdout > len(held):
        raise ConfigError(f"test_holdout={test_holdout} exceeds the {len(held)} non-train rows")
    if train_fraction < 1.0 and len(held) - test_holdout == 0:
        raise ConfigError(f"empty validation split ({n_rows} rows, test_holdout={test_holdout})")

    split = np.full(n_rows, "train", dtype="<U10")
    split[held[:test_holdout]] = "test"
    split[held[test_holdout:]] = "validation"
    return split


def subsample_test(bundle: DatasetBundle, n: int, seed: int) -> DatasetBundle:
    """Keep ``n`` test rows chosen uniformly without replacement; other splits untouched"""
    test_idx = bundle.indices("test")
    if n < 0 or n > len(test_idx):
        raise BoundsError(f"cannot keep {n} test rows, test split has {len(test_idx)}")
    chosen = np.random.default_rng(seed).choice(test_idx, size=n, replace=False)
    keep = np.ones(len(bundle.y), dtype=bool)
    keep[test_idx] = False
    keep[chosen] = True
    return _select_rows(bundle, keep)


def _select_rows(bundle: DatasetBundle, keep: np.ndarray) -> DatasetBundle:
    def take(array):
        if array is None:
            return None
        out = array[keep]
        out.setflags(write=False)
        return out

    return replace(
        bundle,
        X=take(bundle.X),
        y=take(bundle.y),
        split=take(bundle.split),
        row_ids=take(bundle.row_ids),
        groups=take(bundle.groups),
    )


def destandardize(bundle: DatasetBundle, X: np.ndarray) -> np.ndarray:
    """Map standardized rows (or a single row) back to raw units"""
    return np.asarray(X, dtype=float) * bundle.stds + bundle.means


def write_toy_dataset(
    directory: str,
    n: int = 200,
    seed: int = 0,
    separation: float = 1.0,
    spread: float = 1.0,
) -> Tuple[Path, Path]:
    """
    Write a two-blob toy dataset and its config.

    ``income`` is actionable, ``tenure`` is not, ``group`` is a binary
    group-key column. Returns (config_path, csv_path).
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    points, labels = make_blobs(
        n_samples=n,
        centers=[[-separation, -separation], [separation, separation]],
        cluster_std=spread,
        random_state=seed,
    )
    rng = np.random.default_rng(seed)
    frame = pd.DataFrame({
        "income": np.round(points[:, 0], 6),
        "tenure": np.round(points[:, 1], 6),
        "group": (rng.random(n) < 0.3).astype(int),
        "approved": np.where(labels == 1, "yes", "no"),
    })
    csv_path = directory / "toy.csv"
    frame.to_csv(csv_path, index=False)

    config = {
        "name": "toy",
        "csv": csv_path.name,
        "label_column": "approved",
        "positive_label": "yes",
        "positive_label_meaning": "application approved",
        "features": [
            {"name": "income", "kind": "continuous", "actionable": True},
            {"name": "tenure", "kind": "continuous"},
            {"name": "group", "kind": "binary", "group_key": True},
        ],
        "train_fraction": 0.8,
        "test_holdout": max(1, n // 10),
        "delta_max": 0.75,
        "training": {"batch_size": 15, "epochs": 15},
    }
    config_path = directory / "toy.json"
    with open(config_path, "w", encoding="utf-8") as f:
        json.dump(config, f, indent=2)
    return config_path, csv_path
