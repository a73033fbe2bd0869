"""Synthetic classification data, CSV ingestion and classification-to-bandit conversion."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .core import LoggedDataset, PolicyTable, _freeze
from .policies import GibbsPolicy, gibbs_probs


class CsvFormatError(ValueError):
    """Structured CSV parse failure, carrying 1-based row/column positions."""

    def __init__(self, message: str, row: int | None = None, column: int | None = None):
        where = []
        if row is not None:
            where.append(f"row {row}")
        if column is not None:
            where.append(f"column {column}")
        suffix = f" ({', '.join(where)})" if where else ""
        super().__init__(message + suffix)
        self.row = row
        self.column = column


@dataclass(frozen=True)
class ClassificationDataset:
    """Feature matrix plus 1-based integer labels in 1..K."""

    features: np.ndarray
    labels: np.ndarray
    num_classes: int

    def __post_init__(self) -> None:
        features = np.asarray(self.features, dtype=float)
        labels = np.asarray(self.labels, dtype=np.int64)
        if features.ndim != 2 or features.shape[0] < 1:
            raise ValueError("features must be a non-empty 2-d array")
        if labels.shape != (features.shape[0],):
            raise ValueError("labels length does not match features")
        if not np.all(np.isfinite(features)):
            raise ValueError("features contain non-finite values")
        if np.any(labels < 1) or np.any(labels > self.num_classes):
            raise ValueError(f"labels must lie in 1..{self.num_classes}")
        object.__setattr__(self, "features", _freeze(features))
        object.__setattr__(self, "labels", _freeze(labels))

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]


@dataclass(frozen=True)
class GeneratorConfig:
    """Knobs of the synthetic multiclass generator."""

    n: int
    d: int = 20
    num_classes: int = 5
    informative_dims: int = 10
    class_separation: float = 2.0
    noise_scale: float = 1.0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.n < 1:
            raise ValueError("n must be positive")
        if not 1 <= self.informative_dims <= self.d:
            raise ValueError("informative_dims must lie in 1..d")
        if self.num_classes < 2:
            raise ValueError("need at least two classes")
        if self.class_separation <= 0:
            raise ValueError("class_separation must be positive")
        if self.noise_scale < 0:
            raise ValueError("noise_scale must be non-negative")
        if self.num_classes > 2 ** self.informative_dims:
            raise ValueError(
                f"{self.num_classes} classes need {self.num_classes} distinct hypercube "
                f"vertices but only {2 ** self.informative_dims} exist"
            )


def _class_centroids(cfg: GeneratorConfig, rng: np.random.Generator) -> np.ndarray:
    """K distinct vertices of (class_separation * {-1/2, +1/2}^m), seed-chosen.

    Vertices are drawn by their integer codes so the construction works for
    any informative dimension count without materializing the full cube.
    """
    m = cfg.informative_dims
    chosen: list[int] = []
    seen: set[int] = set()
    while len(chosen) < cfg.num_classes:
        code = int(rng.integers(0, 2 ** m))
        if code not in seen:
            seen.add(code)
            chosen.append(code)
    bits = np.array([[(code >> j) & 1 for j in range(m)] for code in chosen], dtype=float)
    return cfg.class_separation * (bits - 0.5)


def generate_classification(cfg: GeneratorConfig) -> ClassificationDataset:
    """Gaussian blobs around hypercube-vertex centroids, uniform labels.

    Non-informative dimensions are pure noise with the same scale.  The
    construction is deterministic given the config (seed included).
    """
    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed))
    centroids = _class_centroids(cfg, rng)
    labels = rng.integers(1, cfg.num_classes + 1, size=cfg.n)
    features = rng.normal(scale=cfg.noise_scale, size=(cfg.n, cfg.d)) if cfg.noise_scale > 0 else np.zeros((cfg.n, cfg.d))
    features[:, : cfg.informative_dims] += centroids[labels - 1]
    return ClassificationDataset(features=features, labels=labels, num_classes=cfg.num_classes)


def save_csv(ds: ClassificationDataset, path, label_column: str = "label", header: bool = True) -> None:
    """Write the dataset as UTF-8 comma-separated values, label column last."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        if header:
            writer.writerow([f"x{j + 1}" for j in range(ds.d)] + [label_column])
        for row, label in zip(ds.features, ds.labels):
            writer.writerow([repr(float(v)) for v in row] + [int(label)])


def load_csv(path, label_column: str | int = "label", has_header: bool = True) -> ClassificationDataset:
    """Load a classification CSV.

    ``label_column`` is a header name when ``has_header`` is true, otherwise a
    0-based column index.  Feature cells must parse as floats; label values of
    any type are remapped to 1..K by first appearance.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise CsvFormatError("empty file")

    if has_header:
        headers = rows[0]
        body = rows[1:]
        if isinstance(label_column, int):
            label_idx = label_column
        else:
            try:
                label_idx = headers.index(label_column)
            except ValueError:
                raise CsvFormatError(f"missing label column {label_column!r}", row=1) from None
        start_row = 2
    else:
        body = rows
        if not isinstance(label_column, int):
            raise CsvFormatError("label_column must be a column index when the file has no header")
        label_idx = label_column
        start_row = 1
    if not body:
        raise CsvFormatError("empty dataset")

    width = len(body[0])
    if not 0 <= label_idx < width:
        raise CsvFormatError(f"label column index {label_idx} out of range for {width} columns")

    features = np.empty((len(body), width - 1))
    raw_labels: list[str] = []
    for i, row in enumerate(body):
        if len(row) != width:
            raise CsvFormatError(f"expected {width} cells, found {len(row)}", row=start_row + i)
        value = row[label_idx].strip()
        if value == "":
            raise CsvFormatError("missing label", row=start_row + i, column=label_idx + 1)
        raw_labels.append(value)
        j_out = 0
        for j, cell in enumerate(row):
            if j == label_idx:
                continue
            try:
                features[i, j_out] = float(cell)
            except ValueError:
                raise CsvFormatError(
                    f"non-numeric feature cell {cell!r}", row=start_row + i, column=j + 1
                ) from None
            j_out += 1

    mapping: dict[str, int] = {}
    labels = np.empty(len(raw_labels), dtype=np.int64)
    for i, value in enumerate(raw_labels):
        if value not in mapping:
            mapping[value] = len(mapping) + 1
        labels[i] = mapping[value]
    return ClassificationDataset(features=features, labels=labels, num_classes=len(mapping))


def log_interactions(ds: ClassificationDataset, behavior, seed: int) -> LoggedDataset:
    """Simulate logging: sample one action per context from the behavior policy.

    ``behavior`` is a :class:`GibbsPolicy` (evaluated at the dataset's labels)
    or a ready :class:`PolicyTable`.  The reward is 1 exactly when the sampled
    action equals the context's label, and the exact behavior probability rows
    used for sampling are stored in the result.
    """
    if isinstance(behavior, GibbsPolicy):
        table = gibbs_probs(behavior)
    elif isinstance(behavior, PolicyTable):
        table = behavior
    else:
        raise TypeError(f"unsupported behavior type {type(behavior).__name__}")
    if table.n != ds.n:
        raise ValueError("behavior table row count does not match the dataset")

    rng = np.random.default_rng(np.random.SeedSequence(seed))
    u = rng.random(ds.n)
    cdf = np.cumsum(table.probs, axis=1)
    actions = np.minimum((cdf <= u[:, None]).sum(axis=1), table.num_actions - 1) + 1
    rewards = (actions == ds.labels).astype(float)
    return LoggedDataset(
        contexts=ds.features,
        actions=actions,
        rewards=rewards,
        behavior_table=table,
    )


def split(ds: ClassificationDataset, train_fraction: float, seed: int) -> tuple[ClassificationDataset, ClassificationDataset]:
    """Seeded permutation split into disjoint, exhaustive train/test parts."""
    if not 0.0 < train_fraction < 1.0:
        raise ValueError("train_fraction must lie strictly between 0 and 1")
    n_train = int(round(ds.n * train_fraction))
    if n_train < 1 or n_train >= ds.n:
        raise ValueError("both split sides must be non-empty")
    perm = np.random.default_rng(np.random.SeedSequence(seed)).permutation(ds.n)
    train_idx, test_idx = np.sort(perm[:n_train]), np.sort(perm[n_train:])
    make = lambda idx: ClassificationDataset(
        features=ds.features[idx], labels=ds.labels[idx], num_classes=ds.num_classes
    )
    return make(train_idx), make(test_idx)
