import warnings

import numpy as np
import pytest

from forestcase.data import Dataset, encode, synth_three_class
from forestcase.forest import ForestParams, TrainedForest, TreeRecord, fit


@pytest.fixture(scope="session")
def blob_dataset() -> Dataset:
    """Well-separated 3-class data, 120 rows, encoded."""
    return encode(synth_three_class(120, seed=0), missing_policy="zero")


@pytest.fixture(scope="session")
def blob_forest(blob_dataset) -> TrainedForest:
    return fit(blob_dataset, ForestParams(n_trees=60, seed=1))


@pytest.fixture(scope="session")
def digits_dataset() -> Dataset:
    from forestcase.pipeline import load_digits49

    return load_digits49()


def random_tiny_forest(seed, max_trees=10, max_n=20, max_k=4):
    """A small random dataset plus a forest fit on it (for oracle tests)."""
    rng = np.random.default_rng(seed)
    n = int(rng.integers(8, max_n + 1))
    k = int(rng.integers(2, max_k + 1))
    trees = int(rng.integers(2, max_trees + 1))
    X = rng.normal(size=(n, k))
    y = rng.integers(0, 2, size=n)
    y[: n // 2] = 0  # both classes occupied
    y[n // 2] = 1
    from forestcase.data import ColumnMeta

    ds = Dataset(
        features=np.ascontiguousarray(X),
        labels=y.astype(np.int64),
        column_meta=[ColumnMeta(name=f"x{j}", kind="numeric") for j in range(k)],
        row_ids=[str(i) for i in range(n)],
        label_names=[0, 1],
    )
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        model = fit(
            ds,
            ForestParams(
                n_trees=trees,
                max_features=0.75,
                max_depth=int(rng.integers(2, 5)),
                seed=int(rng.integers(0, 2**31)),
            ),
        )
    return ds, model


def handmade_forest(leaf_lists, inbag_lists, n_classes=2):
    """Forest stub with prescribed leaf assignments and multiplicities.

    The tree structures are single-leaf roots; only the bookkeeping
    matrices matter to the proximity formulas under test.
    """
    n = len(leaf_lists[0])
    trees = []
    for leaf, inbag in zip(leaf_lists, inbag_lists):
        trees.append(
            TreeRecord(
                feature=np.array([-1], dtype=np.int64),
                threshold=np.array([0.0]),
                left=np.array([-1], dtype=np.int64),
                right=np.array([-1], dtype=np.int64),
                votes_weighted=np.zeros((1, n_classes)),
                votes_raw=np.zeros((1, n_classes)),
                inbag_multiplicity=np.asarray(inbag, dtype=np.int64),
                leaf_assignment=np.asarray(leaf, dtype=np.int64),
            )
        )
    return TrainedForest(
        trees=trees,
        params=ForestParams(n_trees=len(trees)),
        n_classes=n_classes,
        n_features=1,
        train_row_ids=[str(i) for i in range(n)],
        data_fingerprint="handmade",
    )
