"""End-to-end experiment orchestration.

For each stratified fold: grid-search the forest on the training split,
fit it, build the configured proximity matrices, tune the per-class
prototype count on an inner split, select prototypes and critics under
every configured backend, sweep every training row as a factual query,
and score the whole lot under both evaluation distance backends. Fold
results are averaged, a final full-data fit drives the MDS embedding,
and everything lands in a deterministic report.

Every random decision derives from the single master seed through a fixed
``SeedSequence`` spawn-key scheme (see ``_seed``), so identical configs
reproduce byte-identical reports. Wall-clock timing is kept out of the
serialized artifacts for the same reason.
"""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.spatial.distance import cdist

from .data import (
    ColumnMeta,
    Dataset,
    encode,
    filter_classes,
    load_csv,
    stratified_folds,
    synth_three_class,
)
from .errors import ConfigError, DataError, StageError
from .explain import (
    ExplanationBundle,
    PrototypeSet,
    counter_factual,
    factual_pairs,
    hdp_prototypes,
    kmedoids_prototypes,
    select_critics,
    semi_factual,
)
from .forest import (
    ForestParams,
    TrainedForest,
    fit,
    grid_search,
    oob_predict,
    predict,
    predict_proba,
    save_forest,
    weighted_f1,
)
from .metrics import (
    compactness,
    diversity,
    masked_mean,
    nearest_prototype_f1,
    ood_distance,
    outlier_score,
    prototype_assignments,
    robustness,
    sparsity,
)
from .proximity import (
    DistanceMatrix,
    L2Standardizer,
    compute_proximity,
    extend_proximity,
    l2_distance,
    pairwise_l2,
    to_distance,
)

CONFIG_VERSION = 1

# spawn-key stage ids for the master-seed derivation scheme
_S_FOLDS = 0
_S_GRID = 1
_S_FIT = 2
_S_TUNE = 3
_S_FINAL = 4
_S_MDS = 5
_S_SYNTH = 6
_S_QUERY = 7

FOREST_BACKENDS = ("original", "oob", "gap")
ALL_BACKENDS = ("l2",) + FOREST_BACKENDS
METHODS = ("kmedoids", "hdp")


def _seed(master: int, *key: int) -> int:
    return int(np.random.SeedSequence(master, spawn_key=key).generate_state(1)[0])


@dataclass
class ExperimentConfig:
    dataset: dict
    output_dir: str = "out"
    master_seed: int = 0
    k_folds: int = 5
    forest_grid: dict = field(
        default_factory=lambda: {
            "n_trees": [100, 300, 500],
            "max_features": ["sqrt", "log2", 0.5],
            "max_depth": [8, 16, None],
        }
    )
    class_weighting: str = "balanced"
    min_leaf: int = 1
    inner_cv: int = 5
    proximity_kinds: list = field(default_factory=lambda: list(FOREST_BACKENDS))
    selection_backends: list = field(default_factory=lambda: list(ALL_BACKENDS))
    prototype_methods: list = field(default_factory=lambda: list(METHODS))
    count_range: list = field(default_factory=lambda: [1, 10])
    critic_count: object = "match"  # "match" (= prototype total) or an int
    hdp_k_neighbors: int | None = None
    eval_backends: list = field(default_factory=lambda: ["l2", "gap"])
    numeric_tol: float = 0.0
    ood_exclude_self: bool = True
    robustness_k: int = 10
    max_queries: int | None = None
    mds_enabled: bool = True
    mds_max_iter: int = 300

    def validate(self) -> None:
        if not isinstance(self.dataset, dict) or "source" not in self.dataset:
            raise ConfigError("dataset.source is required")
        if self.dataset["source"] not in ("csv", "synthetic", "digits49"):
            raise ConfigError(f"unknown dataset source: {self.dataset['source']!r}")
        if self.dataset["source"] == "csv":
            for req in ("path", "schema", "label_column"):
                if req not in self.dataset:
                    raise ConfigError(f"csv dataset needs '{req}'")
        if self.k_folds < 2:
            raise ConfigError("k_folds must be >= 2")
        if self.inner_cv < 2:
            raise ConfigError("inner_cv must be >= 2")
        for b in self.selection_backends:
            if b not in ALL_BACKENDS:
                raise ConfigError(f"unknown selection backend: {b!r}")
            if b != "l2" and b not in self.proximity_kinds:
                raise ConfigError(
                    f"selection backend {b!r} needs its proximity kind computed"
                )
        for b in self.eval_backends:
            if b not in ALL_BACKENDS:
                raise ConfigError(f"unknown eval backend: {b!r}")
            if b != "l2" and b not in self.proximity_kinds:
                raise ConfigError(
                    f"eval backend {b!r} needs its proximity kind computed"
                )
        for m in self.prototype_methods:
            if m not in METHODS:
                raise ConfigError(f"unknown prototype method: {m!r}")
        if not self.prototype_methods or not self.selection_backends:
            raise ConfigError("need at least one method and one backend")
        if (
            len(self.count_range) != 2
            or int(self.count_range[0]) < 1
            or int(self.count_range[0]) > int(self.count_range[1])
        ):
            raise ConfigError("count_range must be [lo, hi] with 1 <= lo <= hi")
        if self.critic_count != "match" and int(self.critic_count) < 1:
            raise ConfigError("critic_count must be 'match' or a positive int")
        if self.class_weighting not in ("none", "balanced"):
            raise ConfigError(f"unknown class_weighting: {self.class_weighting!r}")

    def to_dict(self) -> dict:
        return {
            "version": CONFIG_VERSION,
            "dataset": self.dataset,
            "output_dir": self.output_dir,
            "master_seed": self.master_seed,
            "k_folds": self.k_folds,
            "forest_grid": self.forest_grid,
            "class_weighting": self.class_weighting,
            "min_leaf": self.min_leaf,
            "inner_cv": self.inner_cv,
            "proximity_kinds": self.proximity_kinds,
            "selection_backends": self.selection_backends,
            "prototype_methods": self.prototype_methods,
            "count_range": self.count_range,
            "critic_count": self.critic_count,
            "hdp_k_neighbors": self.hdp_k_neighbors,
            "eval_backends": self.eval_backends,
            "numeric_tol": self.numeric_tol,
            "ood_exclude_self": self.ood_exclude_self,
            "robustness_k": self.robustness_k,
            "max_queries": self.max_queries,
            "mds_enabled": self.mds_enabled,
            "mds_max_iter": self.mds_max_iter,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        version = d.pop("version", CONFIG_VERSION)
        if version != CONFIG_VERSION:
            raise ConfigError(f"unsupported config version: {version!r}")
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            cfg = cls(**d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None
        cfg.validate()
        return cfg

    @classmethod
    def from_file(cls, path) -> "ExperimentConfig":
        try:
            with open(path, encoding="utf-8") as fh:
                raw = fh.read()
        except FileNotFoundError:
            raise ConfigError(f"no such config file: {path}") from None
        try:
            obj = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise ConfigError(
                f"config is not valid JSON (line {exc.lineno}, col {exc.colno}): "
                f"{exc.msg}"
            ) from None
        if not isinstance(obj, dict):
            raise ConfigError("config root must be a JSON object")
        return cls.from_dict(obj)

    def config_hash(self) -> str:
        return hashlib.sha256(
            json.dumps(self.to_dict(), sort_keys=True).encode()
        ).hexdigest()


def load_config_dataset(config: ExperimentConfig) -> Dataset:
    """Materialize and encode the dataset a config points at."""
    spec = config.dataset
    source = spec["source"]
    if source == "synthetic":
        raw = synth_three_class(
            int(spec.get("n", 300)), seed=_seed(config.master_seed, _S_SYNTH)
        )
        return encode(raw, missing_policy=spec.get("missing_policy", "zero"))
    if source == "digits49":
        return load_digits49()
    raw = load_csv(
        spec["path"],
        schema=spec["schema"],
        label_column=spec["label_column"],
        delimiter=spec.get("delimiter", ","),
        missing_markers=tuple(spec.get("missing_markers", ["", "NA"])),
        id_column=spec.get("id_column"),
    )
    if spec.get("filter_classes"):
        raw = filter_classes(raw, spec["filter_classes"])
    return encode(raw, missing_policy=spec.get("missing_policy", "error"))


def load_digits49() -> Dataset:
    """The 8x8 digits data filtered to classes 4 and 9."""
    try:
        from sklearn.datasets import load_digits
    except ImportError:
        raise ConfigError(
            "the digits49 dataset needs scikit-learn "
            "(pip install forestcase[digits])"
        ) from None
    bunch = load_digits()
    n, k = bunch.data.shape
    ds = Dataset(
        features=bunch.data.astype(np.float64),
        labels=bunch.target.astype(np.int64),
        column_meta=[ColumnMeta(name=f"p{j:02d}", kind="numeric") for j in range(k)],
        row_ids=[f"d{i:04d}" for i in range(n)],
        label_names=list(range(10)),
    )
    return filter_classes(ds, [4, 9])


@dataclass
class MDSResult:
    coords: np.ndarray
    stress: float
    stress_history: np.ndarray

    @property
    def n_iter(self) -> int:
        return len(self.stress_history) - 1  # history includes the start


def mds_embed(
    dist: DistanceMatrix, dim: int = 2, max_iter: int = 300, seed: int = 0,
    tol: float = 1e-9,
) -> MDSResult:
    """Metric MDS by stress majorization from a classical-scaling start.

    Raw stress ``sum_{i<j} (d_ij - |y_i - y_j|)^2`` is non-increasing
    across iterations (each Guttman transform is accepted only if it does
    not increase stress, which majorization guarantees up to rounding).
    Stops at ``max_iter`` or when the relative stress drop falls below
    ``tol``. The seed only matters when the classical start is degenerate.
    """
    dist.validate()
    D = dist.values
    n = D.shape[0]
    iu = np.triu_indices(n, k=1)

    # classical scaling (double centering + top eigenvectors)
    J = np.eye(n) - np.full((n, n), 1.0 / n)
    B = -0.5 * J @ (D**2) @ J
    evals, evecs = np.linalg.eigh(B)
    order = np.argsort(evals)[::-1][:dim]
    lam = np.clip(evals[order], 0.0, None)
    X = evecs[:, order] * np.sqrt(lam)[None, :]
    if D.max() > 0 and not X.any():
        rng = np.random.default_rng(np.random.SeedSequence(seed))
        X = rng.normal(0.0, float(D.mean()) / 10.0, size=(n, dim))

    def _stress(coords):
        d = cdist(coords, coords)
        return float(((D - d)[iu] ** 2).sum()), d

    stress, d = _stress(X)
    history = [stress]
    for _ in range(max_iter):
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.where(d > 0, D / np.where(d > 0, d, 1.0), 0.0)
        Bz = -ratio
        np.fill_diagonal(Bz, 0.0)
        np.fill_diagonal(Bz, -Bz.sum(axis=1))
        X_new = Bz @ X / n
        stress_new, d_new = _stress(X_new)
        if stress_new > stress:
            break  # rounding noise at convergence; keep the better iterate
        X, d = X_new, d_new
        prev, stress = stress, stress_new
        history.append(stress)
        if prev == 0.0 or (prev - stress) / prev < tol:
            break
    return MDSResult(coords=X, stress=stress, stress_history=np.asarray(history))


@dataclass
class _FoldContext:
    """Everything selection and scoring need for one training fold."""

    train: Dataset
    test: Dataset
    model: TrainedForest
    prox: dict  # kind -> ProximityMatrix
    dists: dict  # backend -> DistanceMatrix
    std: L2Standardizer
    probs: np.ndarray  # forest probabilities of the training rows


def _selection_matrix(ctx: _FoldContext, method: str, backend: str):
    """Matrix a selector consumes: HDP reads proximities, PAM distances."""
    if method == "hdp" and backend != "l2":
        return ctx.prox[backend]
    return ctx.dists[backend]


def _select_prototypes(
    ctx: _FoldContext, config: ExperimentConfig, method: str, backend: str,
    count: int,
) -> PrototypeSet:
    mat = _selection_matrix(ctx, method, backend)
    if method == "kmedoids":
        ps = kmedoids_prototypes(ctx.dists[backend], ctx.train.labels, count)
    else:
        ps = hdp_prototypes(
            mat, ctx.train.labels, count, k_neighbors=config.hdp_k_neighbors
        )
    ps.backend = backend
    return ps


def _witness_matrix(ctx: _FoldContext, backend: str):
    return ctx.prox[backend] if backend != "l2" else ctx.dists["l2"]


def _outlier_matrix(ctx: _FoldContext):
    """Proximity used for outlier scores: GAP when computed, else the
    first configured kind, else the L2 affinity view."""
    if "gap" in ctx.prox:
        return ctx.prox["gap"]
    if ctx.prox:
        return ctx.prox[sorted(ctx.prox)[0]]
    return ctx.dists["l2"]


def _test_proto_distances(
    ctx: _FoldContext, backend: str, proto_idx: np.ndarray
) -> np.ndarray:
    """Distances from test rows to training prototypes under a backend."""
    if backend == "l2":
        return pairwise_l2(
            ctx.std, ctx.test.features, ctx.train.features[proto_idx]
        )
    rows = extend_proximity(ctx.model, ctx.test.features, backend)
    return 1.0 - rows[:, proto_idx]


def _train_proto_distances(
    ctx: _FoldContext, backend: str, proto_idx: np.ndarray
) -> np.ndarray:
    return ctx.dists[backend].values[:, proto_idx]


def build_fold_context(
    train: Dataset, test: Dataset, params: ForestParams,
    config: ExperimentConfig,
) -> _FoldContext:
    model = fit(train, params)
    prox = {kind: compute_proximity(model, kind) for kind in config.proximity_kinds}
    std = L2Standardizer.fit(train)
    dists = {"l2": l2_distance(train, std)}
    for kind, p in prox.items():
        dists[kind] = to_distance(p)
    probs = predict_proba(model, train.features)
    return _FoldContext(
        train=train, test=test, model=model, prox=prox, dists=dists,
        std=std, probs=probs,
    )


def tune_prototype_count(
    train_fold: Dataset, method: str, backend: str, search_range,
    *, params: ForestParams, config: ExperimentConfig | None = None,
    seed: int = 0, _ctx: dict | None = None,
) -> int:
    """Per-class prototype count maximizing inner-validation F1.

    The training fold is split 80/20 (stratified, deterministic in
    ``seed``); prototypes are selected on the 80% under every candidate
    count and scored by nearest-prototype weighted F1 on the 20%. Ties go
    to the smallest count.
    """
    config = config or ExperimentConfig(dataset={"source": "synthetic"})
    if _ctx is None:
        _ctx = build_tuning_context(train_fold, params, config, seed)
    ictx: _FoldContext = _ctx["ctx"]
    counts = list(search_range)
    min_class = int(ictx.train.class_counts().min())
    counts = [c for c in counts if c <= min_class]
    if not counts:
        raise DataError("count search range exceeds the smallest class")
    best_count, best_f1 = None, -1.0
    for count in counts:
        ps = _select_prototypes(ictx, config, method, backend, count)
        proto_idx, _ = ps.flatten()
        d = _test_proto_distances(ictx, backend, proto_idx)
        f1 = nearest_prototype_f1(d, ps, ictx.test.labels)
        if f1 > best_f1:
            best_count, best_f1 = count, f1
    return int(best_count)


def build_tuning_context(
    train_fold: Dataset, params: ForestParams, config: ExperimentConfig,
    seed: int,
) -> dict:
    """Inner 80/20 split context shared by all (method, backend) tunings.

    Classes smaller than 5 shrink the split ratio so stratification stays
    possible (the validation part is one of ``min(5, smallest class)``
    stratified folds).
    """
    k_inner = min(5, int(train_fold.class_counts().min()))
    if k_inner < 2:
        raise DataError("prototype-count tuning needs >= 2 rows per class")
    plan = stratified_folds(train_fold, k_inner, seed)
    inner_train = train_fold.subset(plan.train_rows(0))
    inner_val = train_fold.subset(plan.test_rows(0))
    inner_params = replace(params, seed=_seed(seed, 0))
    ctx = build_fold_context(inner_train, inner_val, inner_params, config)
    return {"ctx": ctx}


def _metric_record(values) -> dict:
    mean, n_masked = masked_mean(values)
    return {"mean": mean, "n_masked": n_masked, "n": len(list(values))}


def _scalar_record(value: float) -> dict:
    return {"mean": float(value), "n_masked": 0, "n": 1}


def _prototype_metrics(
    ctx: _FoldContext, config: ExperimentConfig, ps: PrototypeSet
) -> dict:
    proto_idx, _ = ps.flatten()
    pooled = proto_idx.tolist()
    out: dict = {}
    outlier_mat = _outlier_matrix(ctx)
    out["outlier_score"] = _metric_record(
        [outlier_score(p, outlier_mat, ctx.train.labels) for p in pooled]
    )
    for eb in config.eval_backends:
        d = ctx.dists[eb]
        assigned = prototype_assignments(ps, d, ctx.train.labels)
        out.setdefault("ood_distance", {})[eb] = _metric_record(
            [
                ood_distance(p, d, exclude_self=config.ood_exclude_self)
                for p in pooled
            ]
        )
        out.setdefault("diversity", {})[eb] = _scalar_record(diversity(pooled, d))
        out.setdefault("compactness", {})[eb] = _metric_record(
            [compactness(p, assigned.get(p, np.array([])), d) for p in pooled]
        )
    return out


def _critic_metrics(
    ctx: _FoldContext, config: ExperimentConfig, indices: np.ndarray
) -> dict:
    pooled = indices.tolist()
    out: dict = {}
    outlier_mat = _outlier_matrix(ctx)
    out["outlier_score"] = _metric_record(
        [outlier_score(c, outlier_mat, ctx.train.labels) for c in pooled]
    )
    for eb in config.eval_backends:
        d = ctx.dists[eb]
        out.setdefault("ood_distance", {})[eb] = _metric_record(
            [
                ood_distance(c, d, exclude_self=config.ood_exclude_self)
                for c in pooled
            ]
        )
        out.setdefault("diversity", {})[eb] = _scalar_record(diversity(pooled, d))
    return out


def _factual_metrics(
    ctx: _FoldContext, config: ExperimentConfig, pairs, which: str
) -> dict:
    """Per-query factual metrics averaged over queries, per eval backend."""
    expl = [
        p.semi_factual if which == "semi" else p.counter_factual for p in pairs
    ]
    queries = [p.query for p in pairs]
    out: dict = {
        "sparsity": _metric_record(
            [
                sparsity(
                    ctx.train.features[q], ctx.train.features[e],
                    ctx.train, numeric_tol=config.numeric_tol,
                )
                for q, e in zip(queries, expl)
            ]
        )
    }
    unique_expl = sorted(set(expl))
    for eb in config.eval_backends:
        d = ctx.dists[eb]
        out.setdefault("distance", {})[eb] = _metric_record(
            [float(d.values[q, e]) for q, e in zip(queries, expl)]
        )
        out.setdefault("ood_distance", {})[eb] = _metric_record(
            [
                ood_distance(e, d, exclude_self=config.ood_exclude_self)
                for e in expl
            ]
        )
        out.setdefault("robustness", {})[eb] = _metric_record(
            [
                robustness(e, ctx.probs, d, k=config.robustness_k)
                for e in expl
            ]
        )
        out.setdefault("diversity", {})[eb] = _scalar_record(
            diversity(unique_expl, d)
        )
    return out


def run_fold(
    dataset: Dataset, train_rows: np.ndarray, test_rows: np.ndarray,
    config: ExperimentConfig, fold: int,
) -> tuple[dict, _FoldContext]:
    """Run every stage of one fold; returns (report dict, fold context)."""
    train = dataset.subset(train_rows)
    test = dataset.subset(test_rows)

    grid = dict(config.forest_grid)
    grid.setdefault("class_weighting", [config.class_weighting])
    grid.setdefault("min_leaf", [config.min_leaf])
    grid.setdefault("seed", [_seed(config.master_seed, _S_GRID, fold)])
    inner_plan = stratified_folds(
        train, config.inner_cv, _seed(config.master_seed, _S_GRID, fold, 1)
    )
    gs = grid_search(train, grid, inner_plan)
    best = replace(gs.best, seed=_seed(config.master_seed, _S_FIT, fold))

    ctx = build_fold_context(train, test, best, config)
    test_f1 = weighted_f1(predict(ctx.model, test.features), test.labels)

    oob = oob_predict(ctx.model)
    defined = oob >= 0
    gap_recovery = None
    if "gap" in ctx.prox:
        votes = np.zeros((train.n_rows, train.n_classes))
        for c in range(train.n_classes):
            votes[:, c] = ctx.prox["gap"].values[:, train.labels == c].sum(axis=1)
        rec = np.argmax(votes, axis=1)
        gap_recovery = float((rec[defined] == oob[defined]).mean())

    report: dict = {
        "fold": fold,
        "forest": {
            "params": best.to_dict(),
            "test_f1": test_f1,
            "oob_defined_fraction": float(defined.mean()),
            "oob_f1": weighted_f1(oob[defined], train.labels[defined])
            if defined.any()
            else None,
            "gap_recovery_rate": gap_recovery,
        },
        "prototypes": {},
        "critics": {},
        "factuals": {},
        "bundles": {},
    }

    tune_seed = _seed(config.master_seed, _S_TUNE, fold)
    tctx = build_tuning_context(train, best, config, tune_seed)
    lo, hi = int(config.count_range[0]), int(config.count_range[1])
    search = range(lo, hi + 1)

    pairs_by_backend = {}
    for backend in config.selection_backends:
        queries = None
        if config.max_queries is not None and config.max_queries < train.n_rows:
            rng = np.random.default_rng(
                np.random.SeedSequence(
                    config.master_seed, spawn_key=(_S_QUERY, fold)
                )
            )
            queries = np.sort(
                rng.choice(train.n_rows, size=config.max_queries, replace=False)
            )
        pairs = factual_pairs(ctx.dists[backend], train.labels, queries)
        pairs_by_backend[backend] = pairs
        report["factuals"][backend] = {
            "n_queries": len(pairs),
            "semi": _factual_metrics(ctx, config, pairs, "semi"),
            "counter": _factual_metrics(ctx, config, pairs, "counter"),
        }

    for method in config.prototype_methods:
        report["prototypes"][method] = {}
        report["critics"][method] = {}
        report["bundles"][method] = {}
        for backend in config.selection_backends:
            count = tune_prototype_count(
                train, method, backend, search,
                params=best, config=config, seed=tune_seed, _ctx=tctx,
            )
            ps = _select_prototypes(ctx, config, method, backend, count)
            proto_idx, _ = ps.flatten()

            m_critics = (
                ps.total if config.critic_count == "match"
                else int(config.critic_count)
            )
            m_critics = min(m_critics, train.n_rows - ps.total)
            critics = select_critics(
                ps, _witness_matrix(ctx, backend), m_critics
            )

            f1s = {}
            for eb in sorted(set([backend] + list(config.eval_backends))):
                d_test = _test_proto_distances(ctx, eb, proto_idx)
                f1s[eb] = nearest_prototype_f1(d_test, ps, test.labels)

            report["prototypes"][method][backend] = {
                "count_per_class": count,
                "total": ps.total,
                "indices": {
                    str(ctx.train.label_names[c]): [
                        train.row_ids[i] for i in ps.per_class[c]
                    ]
                    for c in sorted(ps.per_class)
                },
                "test_f1": f1s,
                "metrics": _prototype_metrics(ctx, config, ps),
            }
            report["critics"][method][backend] = {
                "indices": [train.row_ids[int(i)] for i in critics.indices],
                "witness_mean": float(critics.witness_values.mean()),
                "metrics": _critic_metrics(ctx, config, critics.indices),
            }
            report["bundles"][method][backend] = ExplanationBundle(
                prototypes=ps, critics=critics,
                factuals=pairs_by_backend[backend],
            ).to_json_obj(train.row_ids)
    return report, ctx


_AGG_SKIP_KEYS = {"params", "indices", "fold", "bundles"}


def average_fold_reports(reports: list[dict]) -> dict:
    """Mean of numeric leaves across folds; masked-aware for metric
    records ({mean, n_masked, n}: means averaged over defined folds,
    masked counts summed)."""

    def merge(values):
        first = values[0]
        if isinstance(first, dict):
            if set(first) == {"mean", "n_masked", "n"}:
                mean, folds_masked = masked_mean([v["mean"] for v in values])
                return {
                    "mean": mean,
                    "n_masked": int(sum(v["n_masked"] for v in values)),
                    "n": int(sum(v["n"] for v in values)),
                    "folds_undefined": folds_masked,
                }
            return {
                k: merge([v[k] for v in values])
                for k in first
                if k not in _AGG_SKIP_KEYS
            }
        if isinstance(first, bool) or isinstance(first, str):
            return first if all(v == first for v in values) else None
        if first is None or isinstance(first, (int, float)):
            mean, _ = masked_mean(values)
            return mean
        return None

    return merge(reports)


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    fold_assignments: np.ndarray
    per_fold: list
    aggregate: dict
    tuned_counts: dict
    final: dict
    embedding: dict | None
    models: list = field(default_factory=list)  # per-fold forests, not serialized
    final_model: TrainedForest | None = None
    dataset: Dataset | None = None
    timestamps: dict = field(default_factory=dict)  # in-memory only

    def to_json_obj(self) -> dict:
        return _sanitize(
            {
                "config": self.config.to_dict(),
                "config_hash": self.config.config_hash(),
                "master_seed": self.config.master_seed,
                "fold_assignments": self.fold_assignments.tolist(),
                "folds": self.per_fold,
                "aggregate": self.aggregate,
                "tuned_counts": self.tuned_counts,
                "final": self.final,
            }
        )


def _sanitize(obj):
    """JSON-safe copy: numpy scalars to Python, NaN to None."""
    if isinstance(obj, dict):
        return {str(k): _sanitize(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_sanitize(v) for v in obj]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        obj = float(obj)
    if isinstance(obj, float) and not np.isfinite(obj):
        return None
    if isinstance(obj, np.ndarray):
        return _sanitize(obj.tolist())
    return obj


def run_experiment(config: ExperimentConfig) -> ExperimentResult:
    """Execute the full cross-validated protocol for one config.

    Pure function of the config (all seeds derive from ``master_seed``):
    repeated runs produce identical results. Stage failures surface as
    :class:`StageError` carrying fold context, with completed folds
    attached as a partial result.
    """
    config.validate()
    t_start = time.time()
    try:
        dataset = load_config_dataset(config)
    except Exception as exc:
        raise StageError("load-dataset", -1, exc) from exc
    folds = stratified_folds(
        dataset, config.k_folds, _seed(config.master_seed, _S_FOLDS)
    )

    per_fold: list[dict] = []
    models: list[TrainedForest] = []
    for fold, train_rows, test_rows in folds.iter_folds():
        try:
            report, ctx = run_fold(dataset, train_rows, test_rows, config, fold)
        except Exception as exc:
            err = StageError("fold", fold, exc)
            err.partial = ExperimentResult(
                config=config,
                fold_assignments=folds.assignments,
                per_fold=per_fold,
                aggregate=average_fold_reports(per_fold) if per_fold else {},
                tuned_counts={},
                final={"failed": {"stage": "fold", "fold": fold, "error": str(exc)}},
                embedding=None,
                models=models,
            )
            raise err from exc
        per_fold.append(report)
        models.append(ctx.model)

    aggregate = average_fold_reports(per_fold)
    tuned_counts = {}
    for method in config.prototype_methods:
        for backend in config.selection_backends:
            per = [
                r["prototypes"][method][backend]["count_per_class"]
                for r in per_fold
            ]
            totals = [r["prototypes"][method][backend]["total"] for r in per_fold]
            vals, counts = np.unique(per, return_counts=True)
            modal = int(vals[np.argmax(counts)])  # ties: smallest count
            tuned_counts[f"{method}/{backend}"] = {
                "per_fold": [int(c) for c in per],
                "modal_per_class": modal,
                "mean_total": float(np.mean(totals)),
            }

    final, embedding, final_model = _final_fit_and_embedding(
        dataset, config, per_fold
    )
    result = ExperimentResult(
        config=config,
        fold_assignments=folds.assignments,
        per_fold=per_fold,
        aggregate=aggregate,
        tuned_counts=tuned_counts,
        final=final,
        embedding=embedding,
        models=models,
        final_model=final_model,
        dataset=dataset,
        timestamps={"started": t_start, "finished": time.time()},
    )
    return result


def _final_fit_and_embedding(
    dataset: Dataset, config: ExperimentConfig, per_fold: list[dict]
) -> tuple[dict, dict | None, TrainedForest]:
    """Full-data fit for the visualization artifacts (never scored)."""
    best_params = ForestParams.from_dict(per_fold[0]["forest"]["params"])
    best_params = replace(best_params, seed=_seed(config.master_seed, _S_FINAL))
    method = config.prototype_methods[0]
    backend = (
        "gap" if "gap" in config.selection_backends
        else config.selection_backends[0]
    )
    counts = [
        r["prototypes"][method][backend]["count_per_class"] for r in per_fold
    ]
    vals, cnts = np.unique(counts, return_counts=True)
    count = int(vals[np.argmax(cnts)])

    ctx = build_fold_context(dataset, dataset, best_params, config)
    ps = _select_prototypes(ctx, config, method, backend, count)
    m_critics = (
        ps.total if config.critic_count == "match" else int(config.critic_count)
    )
    m_critics = min(m_critics, dataset.n_rows - ps.total)
    critics = select_critics(ps, _witness_matrix(ctx, backend), m_critics)
    rng = np.random.default_rng(
        np.random.SeedSequence(config.master_seed, spawn_key=(_S_QUERY,))
    )
    query = int(rng.integers(0, dataset.n_rows))
    semi = semi_factual(query, ctx.dists[backend], dataset.labels)
    counter = counter_factual(query, ctx.dists[backend], dataset.labels)

    final = {
        "params": best_params.to_dict(),
        "method": method,
        "backend": backend,
        "count_per_class": count,
        "prototypes": {
            str(dataset.label_names[c]): [
                dataset.row_ids[i] for i in ps.per_class[c]
            ]
            for c in sorted(ps.per_class)
        },
        "critics": [dataset.row_ids[int(i)] for i in critics.indices],
        "query": dataset.row_ids[query],
        "semi_factual": dataset.row_ids[semi],
        "counter_factual": dataset.row_ids[counter],
    }

    embedding = None
    if config.mds_enabled:
        mds = mds_embed(
            ctx.dists[backend],
            dim=2,
            max_iter=config.mds_max_iter,
            seed=_seed(config.master_seed, _S_MDS),
        )
        roles = ["point"] * dataset.n_rows
        proto_idx, _ = ps.flatten()
        for i in proto_idx:
            roles[int(i)] = "prototype"
        for i in critics.indices:
            roles[int(i)] = "critic"
        roles[semi] = "semi"
        roles[counter] = "counter"
        roles[query] = "query"
        embedding = {
            "coords": mds.coords,
            "stress": mds.stress,
            "roles": roles,
            "row_ids": list(dataset.row_ids),
            "classes": [
                str(dataset.label_names[c]) for c in dataset.labels
            ],
        }
        final["mds_stress"] = mds.stress
    return final, embedding, ctx.model


def flat_metric_rows(result: ExperimentResult) -> list[list]:
    """Flatten per-fold and aggregate metric records into CSV rows."""
    rows: list[list] = [
        ["fold", "explanans", "method", "selection_backend", "metric",
         "eval_backend", "value", "n_masked"]
    ]

    def walk(fold_tag, report):
        forest_info = report.get("forest", {})
        for key in ("test_f1", "oob_f1", "gap_recovery_rate"):
            if key in forest_info and forest_info[key] is not None:
                rows.append(
                    [fold_tag, "forest", "", "", key, "", forest_info[key], 0]
                )
        for method, by_backend in report.get("prototypes", {}).items():
            for backend, entry in by_backend.items():
                for eb, f1 in entry.get("test_f1", {}).items():
                    rows.append(
                        [fold_tag, "prototypes", method, backend,
                         "nearest_prototype_f1", eb, f1, 0]
                    )
                _emit_metrics(
                    fold_tag, "prototypes", method, backend,
                    entry.get("metrics", {}),
                )
        for method, by_backend in report.get("critics", {}).items():
            for backend, entry in by_backend.items():
                _emit_metrics(
                    fold_tag, "critics", method, backend,
                    entry.get("metrics", {}),
                )
        for backend, entry in report.get("factuals", {}).items():
            for which in ("semi", "counter"):
                _emit_metrics(
                    fold_tag, f"factual-{which}", "", backend,
                    entry.get(which, {}),
                )

    def _emit_metrics(fold_tag, kind, method, backend, metrics):
        for metric, value in metrics.items():
            if isinstance(value, dict) and "mean" in value:
                rows.append(
                    [fold_tag, kind, method, backend, metric, "",
                     value["mean"], value["n_masked"]]
                )
            elif isinstance(value, dict):
                for eb, rec in value.items():
                    rows.append(
                        [fold_tag, kind, method, backend, metric, eb,
                         rec["mean"], rec["n_masked"]]
                    )

    for report in result.per_fold:
        walk(str(report["fold"]), report)
    walk("mean", result.aggregate)
    return rows


def emit_reports(result: ExperimentResult, out_dir, formats=("json", "csv")) -> list:
    """Write report.json, metrics.csv, embedding.csv, config.lock and the
    per-fold model files; returns the paths written."""
    import os

    os.makedirs(out_dir, exist_ok=True)
    written = []

    if "json" in formats:
        path = os.path.join(out_dir, "report.json")
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(result.to_json_obj(), fh, indent=2, sort_keys=True,
                      allow_nan=False)
            fh.write("\n")
        written.append(path)

    lock = os.path.join(out_dir, "config.lock")
    with open(lock, "w", encoding="utf-8") as fh:
        json.dump(
            {
                "config": result.config.to_dict(),
                "config_hash": result.config.config_hash(),
                "master_seed": result.config.master_seed,
            },
            fh, indent=2, sort_keys=True,
        )
        fh.write("\n")
    written.append(lock)

    if "csv" in formats:
        import csv as _csv

        path = os.path.join(out_dir, "metrics.csv")
        with open(path, "w", encoding="utf-8", newline="") as fh:
            _csv.writer(fh).writerows(_sanitize(flat_metric_rows(result)))
        written.append(path)

        if result.embedding is not None:
            path = os.path.join(out_dir, "embedding.csv")
            emb = result.embedding
            with open(path, "w", encoding="utf-8", newline="") as fh:
                w = _csv.writer(fh)
                w.writerow(["row_id", "x", "y", "role", "class"])
                for i, rid in enumerate(emb["row_ids"]):
                    w.writerow(
                        [rid, repr(float(emb["coords"][i, 0])),
                         repr(float(emb["coords"][i, 1])),
                         emb["roles"][i], emb["classes"][i]]
                    )
            written.append(path)

    for i, model in enumerate(result.models):
        path = os.path.join(out_dir, f"forest_fold{i}.model")
        save_forest(model, path)
        written.append(path)
    if result.final_model is not None:
        path = os.path.join(out_dir, "forest_final.model")
        save_forest(result.final_model, path)
        written.append(path)
    if result.dataset is not None:
        from .data import save_dataset

        path = os.path.join(out_dir, "dataset.npz")
        save_dataset(result.dataset, path)
        written.append(path)
    return written
