"""Tabular dataset handling: CSV ingestion, one-hot encoding, class
filtering, stratified folds, and a synthetic three-class generator.

A :class:`Dataset` moves through two states. ``load_csv`` produces a *raw*
dataset whose feature matrix has dtype ``object`` (floats, category
strings, ``None`` for missing). ``encode`` turns it into the numeric form
every other module consumes: float64 matrix, categoricals expanded to
one-hot groups, no missing values.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import DataError, MissingValueError, ParseError

NUMERIC = "numeric"
CATEGORICAL = "categorical"
ONEHOT = "onehot"

DATASET_CACHE_VERSION = "forestcase-dataset-v1"


@dataclass(frozen=True)
class ColumnMeta:
    name: str
    kind: str  # numeric | categorical | onehot
    group: str | None = None  # one-hot group id (the source column)


@dataclass
class Dataset:
    """Feature matrix plus labels, per-column metadata and row identifiers.

    ``labels`` are dense integers in ``{0..L-1}`` ordered by first
    appearance; ``label_names`` maps them back to the original values.
    """

    features: np.ndarray
    labels: np.ndarray
    column_meta: list[ColumnMeta]
    row_ids: list[str]
    label_names: list = field(default_factory=list)

    @property
    def n_rows(self) -> int:
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    @property
    def n_classes(self) -> int:
        return len(self.label_names)

    @property
    def is_encoded(self) -> bool:
        return self.features.dtype == np.float64 and not any(
            m.kind == CATEGORICAL for m in self.column_meta
        )

    def column_names(self) -> list[str]:
        return [m.name for m in self.column_meta]

    def onehot_groups(self) -> dict[str, list[int]]:
        """Map one-hot group id to the column indices it spans."""
        groups: dict[str, list[int]] = {}
        for j, m in enumerate(self.column_meta):
            if m.kind == ONEHOT:
                groups.setdefault(m.group, []).append(j)
        return groups

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.n_classes)

    def subset(self, rows: np.ndarray) -> "Dataset":
        """Row subset preserving order, metadata, and dense label ids."""
        rows = np.asarray(rows)
        return Dataset(
            features=self.features[rows],
            labels=self.labels[rows],
            column_meta=list(self.column_meta),
            row_ids=[self.row_ids[i] for i in rows],
            label_names=list(self.label_names),
        )

    def validate(self, strict: bool = True) -> None:
        """Check the encoded-dataset invariants; raises ``DataError``.

        With ``strict`` the label set must be exactly ``{0..L-1}`` with every
        class occupied; relaxed mode (row subsets) only checks bounds.
        """
        if not self.is_encoded:
            raise DataError("dataset is not encoded")
        if self.features.shape[0] != self.labels.shape[0]:
            raise DataError("features and labels disagree on row count")
        if len(self.row_ids) != self.n_rows:
            raise DataError("row_ids length mismatch")
        if len(self.column_meta) != self.n_features:
            raise DataError("column_meta length mismatch")
        if not np.isfinite(self.features).all():
            raise DataError("encoded dataset contains non-finite values")
        if self.labels.size and (
            self.labels.min() < 0 or self.labels.max() >= self.n_classes
        ):
            raise DataError("labels out of range")
        if strict:
            counts = self.class_counts()
            if (counts == 0).any():
                empty = [self.label_names[c] for c in np.flatnonzero(counts == 0)]
                raise DataError(f"empty classes: {empty}")
        for gid, cols in self.onehot_groups().items():
            block = self.features[:, cols]
            if not np.isin(block, (0.0, 1.0)).all():
                raise DataError(f"one-hot group '{gid}' has non-binary values")
            if (block.sum(axis=1) > 1).any():
                raise DataError(f"one-hot group '{gid}' has rows summing past 1")


@dataclass(frozen=True)
class FoldPlan:
    """Stratified fold assignment for cross-validation."""

    k_folds: int
    assignments: np.ndarray  # length-n fold index per row
    seed: int

    def test_rows(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.assignments == fold)

    def train_rows(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.assignments != fold)

    def iter_folds(self):
        for f in range(self.k_folds):
            yield f, self.train_rows(f), self.test_rows(f)


def _dense_labels(raw_labels: list) -> tuple[np.ndarray, list]:
    """Dense integer labels ordered by first appearance."""
    names: list = []
    index: dict = {}
    out = np.empty(len(raw_labels), dtype=np.int64)
    for i, v in enumerate(raw_labels):
        if v not in index:
            index[v] = len(names)
            names.append(v)
        out[i] = index[v]
    return out, names


def load_csv(
    path,
    schema: dict[str, str],
    label_column: str,
    delimiter: str = ",",
    missing_markers: tuple[str, ...] = ("", "NA"),
    id_column: str | None = None,
) -> Dataset:
    """Read a CSV into a raw (un-encoded) :class:`Dataset`.

    ``schema`` declares each feature column as ``"numeric"`` or
    ``"categorical"``; columns not declared (other than the label and id
    columns) are ignored. Column kinds are never inferred. Cells matching
    ``missing_markers`` become missing values to be resolved by
    :func:`encode`; anything else unparseable in a numeric column raises
    :class:`ParseError` naming the cell.
    """
    for name, kind in schema.items():
        if kind not in (NUMERIC, CATEGORICAL):
            raise DataError(f"schema kind for '{name}' must be numeric|categorical")
    try:
        fh = open(path, encoding="utf-8", newline="")
    except FileNotFoundError:
        raise DataError(f"no such file: {path}") from None
    with fh:
        reader = csv.reader(fh, delimiter=delimiter)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"empty CSV: {path}") from None
        col_of = {name: i for i, name in enumerate(header)}
        if label_column not in col_of:
            raise DataError(f"label column '{label_column}' not in header")
        missing_cols = [c for c in schema if c not in col_of]
        if missing_cols:
            raise DataError(f"schema columns missing from header: {missing_cols}")
        if id_column is not None and id_column not in col_of:
            raise DataError(f"id column '{id_column}' not in header")

        feat_names = [c for c in header if c in schema]
        feat_pos = [col_of[c] for c in feat_names]
        kinds = [schema[c] for c in feat_names]
        label_pos = col_of[label_column]
        id_pos = col_of[id_column] if id_column is not None else None

        rows: list[list] = []
        raw_labels: list = []
        row_ids: list[str] = []
        markers = set(missing_markers)
        for r, record in enumerate(reader):
            if len(record) != len(header):
                raise ParseError(
                    f"row {r + 2}: expected {len(header)} fields, got {len(record)}",
                    row=r,
                )
            vals: list = []
            for name, pos, kind in zip(feat_names, feat_pos, kinds):
                cell = record[pos].strip()
                if cell in markers:
                    vals.append(None)
                elif kind == NUMERIC:
                    try:
                        vals.append(float(cell))
                    except ValueError:
                        raise ParseError(
                            f"row {r + 2}, column '{name}': "
                            f"cannot parse {cell!r} as numeric",
                            row=r,
                            column=name,
                        ) from None
                else:
                    vals.append(cell)
            rows.append(vals)
            raw_labels.append(record[label_pos].strip())
            row_ids.append(record[id_pos].strip() if id_pos is not None else str(r))

    if not rows:
        raise DataError(f"CSV has a header but no data rows: {path}")
    labels, label_names = _dense_labels(raw_labels)
    features = np.empty((len(rows), len(feat_names)), dtype=object)
    for i, vals in enumerate(rows):
        features[i, :] = vals
    meta = [ColumnMeta(name=n, kind=k) for n, k in zip(feat_names, kinds)]
    return Dataset(features, labels, meta, row_ids, label_names)


def encode(dataset: Dataset, missing_policy: str = "error") -> Dataset:
    """Produce the numeric form: one-hot categoricals, resolved missings.

    ``missing_policy="zero"`` maps missing numerics to 0.0 and missing
    categoricals to an all-zero one-hot group; ``"error"`` raises
    :class:`MissingValueError` naming the first offending cell. Idempotent
    on already-encoded data.
    """
    if missing_policy not in ("zero", "error"):
        raise DataError(f"unknown missing_policy: {missing_policy!r}")
    n = dataset.n_rows
    out_cols: list[np.ndarray] = []
    out_meta: list[ColumnMeta] = []
    for j, m in enumerate(dataset.column_meta):
        col = dataset.features[:, j]
        if m.kind in (NUMERIC, ONEHOT):
            vals = np.empty(n, dtype=np.float64)
            for i, v in enumerate(col):
                if v is None or (isinstance(v, float) and np.isnan(v)):
                    if missing_policy == "error":
                        raise MissingValueError(
                            f"missing value at row id '{dataset.row_ids[i]}', "
                            f"column '{m.name}'"
                        )
                    vals[i] = 0.0
                else:
                    vals[i] = float(v)
            out_cols.append(vals)
            out_meta.append(m)
        elif m.kind == CATEGORICAL:
            levels: list[str] = []
            seen: set = set()
            for v in col:
                if v is not None and v not in seen:
                    seen.add(v)
                    levels.append(v)
            blocks = {lv: np.zeros(n, dtype=np.float64) for lv in levels}
            for i, v in enumerate(col):
                if v is None:
                    if missing_policy == "error":
                        raise MissingValueError(
                            f"missing value at row id '{dataset.row_ids[i]}', "
                            f"column '{m.name}'"
                        )
                    continue  # all-zero group row
                blocks[v][i] = 1.0
            for lv in levels:
                out_cols.append(blocks[lv])
                out_meta.append(
                    ColumnMeta(name=f"{m.name}={lv}", kind=ONEHOT, group=m.name)
                )
        else:
            raise DataError(f"unknown column kind: {m.kind!r}")
    features = np.column_stack(out_cols) if out_cols else np.zeros((n, 0))
    encoded = Dataset(
        features=np.ascontiguousarray(features, dtype=np.float64),
        labels=dataset.labels.copy(),
        column_meta=out_meta,
        row_ids=list(dataset.row_ids),
        label_names=list(dataset.label_names),
    )
    encoded.validate()
    return encoded


def filter_classes(dataset: Dataset, keep) -> Dataset:
    """Keep rows whose original label value is in ``keep``; re-index labels.

    ``keep`` entries are matched against ``label_names`` (the original
    values seen at load time). Surviving labels are re-densified by first
    appearance; relative row order is preserved.
    """
    wanted: list[int] = []
    for v in keep:
        if v in dataset.label_names:
            wanted.append(dataset.label_names.index(v))
        elif str(v) in [str(x) for x in dataset.label_names]:
            wanted.append([str(x) for x in dataset.label_names].index(str(v)))
        else:
            raise DataError(
                f"label {v!r} not observed; have {dataset.label_names!r}"
            )
    if len(set(wanted)) < 2:
        raise DataError("filter_classes must keep at least 2 classes")
    mask = np.isin(dataset.labels, sorted(set(wanted)))
    rows = np.flatnonzero(mask)
    sub = dataset.subset(rows)
    relabeled, new_names_idx = _dense_labels(list(sub.labels))
    sub.labels = relabeled
    sub.label_names = [dataset.label_names[i] for i in new_names_idx]
    return sub


def stratified_folds(dataset: Dataset, k: int, seed: int) -> FoldPlan:
    """Assign rows to ``k`` folds, keeping per-class counts within one.

    Deterministic for a fixed seed. Every class must have at least ``k``
    members.
    """
    if k < 2:
        raise DataError("need at least 2 folds")
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    assignments = np.full(dataset.n_rows, -1, dtype=np.int64)
    for c in range(dataset.n_classes):
        members = np.flatnonzero(dataset.labels == c)
        if members.size < k:
            raise DataError(
                f"class {dataset.label_names[c]!r} has {members.size} rows, "
                f"fewer than k={k}"
            )
        members = members[rng.permutation(members.size)]
        offset = c % k
        for pos, row in enumerate(members):
            assignments[row] = (pos + offset) % k
    return FoldPlan(k_folds=k, assignments=assignments, seed=seed)


def synth_three_class(n: int, seed: int) -> Dataset:
    """Synthetic 3-class clustered dataset: 14 numeric + 2 categorical columns.

    Cluster means sit 6 within-cluster standard deviations apart along the
    first feature, so shallow trees separate the classes. Returned raw
    (categoricals un-encoded); run :func:`encode` before use.
    """
    if n < 30:
        raise DataError("synth_three_class needs n >= 30")
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    counts = [n // 3] * 3
    for i in range(n - sum(counts)):
        counts[i] += 1
    means = rng.normal(0.0, 1.0, size=(3, 14))
    means[:, 0] = [0.0, 6.0, 12.0]
    cat1_levels = ["alpha", "beta", "gamma"]
    cat2_levels = ["u", "v"]

    num = np.vstack(
        [rng.normal(means[c], 1.0, size=(counts[c], 14)) for c in range(3)]
    )
    labels = np.repeat(np.arange(3), counts)
    cat1 = []
    for c in range(3):
        for _ in range(counts[c]):
            lvl = c if rng.random() >= 0.1 else int(rng.integers(0, 3))
            cat1.append(cat1_levels[lvl])
    cat2 = [cat2_levels[int(rng.integers(0, 2))] for _ in range(n)]

    perm = rng.permutation(n)
    features = np.empty((n, 16), dtype=object)
    for i, p in enumerate(perm):
        features[i, :14] = num[p]
        features[i, 14] = cat1[p]
        features[i, 15] = cat2[p]
    meta = [ColumnMeta(name=f"x{j:02d}", kind=NUMERIC) for j in range(14)]
    meta.append(ColumnMeta(name="segment", kind=CATEGORICAL))
    meta.append(ColumnMeta(name="channel", kind=CATEGORICAL))
    raw_labels = [int(labels[p]) for p in perm]
    dense, names = _dense_labels(raw_labels)
    return Dataset(
        features=features,
        labels=dense,
        column_meta=meta,
        row_ids=[f"s{i:04d}" for i in range(n)],
        label_names=names,
    )


def save_dataset(dataset: Dataset, path) -> None:
    """Binary snapshot of an encoded dataset (versioned npz)."""
    if not dataset.is_encoded:
        raise DataError("only encoded datasets can be cached")
    meta_json = json.dumps(
        {
            "version": DATASET_CACHE_VERSION,
            "columns": [
                {"name": m.name, "kind": m.kind, "group": m.group}
                for m in dataset.column_meta
            ],
            "label_names": [str(v) for v in dataset.label_names],
        }
    )
    with open(path, "wb") as fh:  # keep the exact filename (no .npz suffix)
        np.savez(
            fh,
            meta=np.array(meta_json),
            features=dataset.features,
            labels=dataset.labels,
            row_ids=np.array(dataset.row_ids, dtype=np.str_),
        )


def load_dataset(path) -> Dataset:
    """Load a snapshot written by :func:`save_dataset`."""
    try:
        with np.load(path, allow_pickle=False) as z:
            meta = json.loads(str(z["meta"]))
            if meta.get("version") != DATASET_CACHE_VERSION:
                raise DataError(
                    f"unsupported dataset cache version: {meta.get('version')!r}"
                )
            ds = Dataset(
                features=np.ascontiguousarray(z["features"], dtype=np.float64),
                labels=z["labels"].astype(np.int64),
                column_meta=[
                    ColumnMeta(name=c["name"], kind=c["kind"], group=c["group"])
                    for c in meta["columns"]
                ],
                row_ids=[str(s) for s in z["row_ids"]],
                label_names=list(meta["label_names"]),
            )
    except FileNotFoundError:
        raise DataError(f"no such file: {path}") from None
    ds.validate()
    return ds
