"""Command-line surface: ``run`` for the full experiment, plus
``explain``, ``prototypes`` and ``embed`` for single-stage inspection.

Exit codes are stable per error category: 0 success, 1 config error,
2 data error, 3 model/dataset mismatch, 4 stage failure. Output directory
precedence is flag > ``FORESTCASE_OUTPUT_DIR`` > config.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import time

import numpy as np

from .data import Dataset, load_csv, load_dataset, encode
from .errors import (
    ConfigError,
    DataError,
    ForestCaseError,
    ModelMismatchError,
    StageError,
)
from .explain import (
    counter_factual,
    hdp_prototypes,
    kmedoids_prototypes,
    select_critics,
    semi_factual,
)
from .forest import TrainedForest, check_model_dataset, load_forest
from .metrics import sparsity
from .pipeline import ExperimentConfig, emit_reports, mds_embed, run_experiment
from .proximity import (
    DistanceMatrix,
    ProximityMatrix,
    compute_proximity,
    l2_distance,
    load_matrix,
    to_distance,
)

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_DATA = 2
EXIT_MISMATCH = 3
EXIT_STAGE = 4

BACKEND_CHOICES = ("l2", "gap", "original", "oob")


class _Parser(argparse.ArgumentParser):
    """argparse that reports usage problems as config errors (exit 1)."""

    def error(self, message):
        raise ConfigError(message)


def build_parser() -> _Parser:
    parser = _Parser(prog="forestcase", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run the full cross-validated experiment")
    p_run.add_argument("--config", required=True, help="experiment config (JSON)")
    p_run.add_argument("--seed", type=int, help="override the master seed")
    p_run.add_argument("--output-dir", help="override the output directory")
    p_run.add_argument("--dry-run", action="store_true",
                       help="validate the config and write nothing")
    p_run.add_argument("--json", action="store_true",
                       help="print the outcome as JSON")

    p_exp = sub.add_parser("explain", help="semi-/counter-factual for one query")
    _add_model_dataset_args(p_exp)
    p_exp.add_argument("--query", required=True, help="row id of the query")
    p_exp.add_argument("--backend", choices=BACKEND_CHOICES, default="gap")
    p_exp.add_argument("--json", action="store_true")

    p_pro = sub.add_parser("prototypes", help="prototypes and critics")
    _add_model_dataset_args(p_pro)
    p_pro.add_argument("--method", choices=("kmedoids", "hdp"), default="kmedoids")
    p_pro.add_argument("--backend", choices=BACKEND_CHOICES, default="gap")
    p_pro.add_argument("--count", type=int, default=1,
                       help="prototypes per class")
    p_pro.add_argument("--critics", type=int, default=None,
                       help="critic count (default: total prototype count)")
    p_pro.add_argument("--json", action="store_true")

    p_emb = sub.add_parser("embed", help="2-D MDS embedding of a distance matrix")
    group = p_emb.add_argument_group("input (model+dataset, or a matrix file)")
    group.add_argument("--model", help="serialized forest")
    group.add_argument("--dataset", help="dataset snapshot (.npz) or CSV")
    group.add_argument("--schema", help="JSON schema file for CSV datasets")
    group.add_argument("--matrix", help="matrix cache (.npz) or square CSV")
    p_emb.add_argument("--backend", choices=BACKEND_CHOICES, default="gap")
    p_emb.add_argument("--output", required=True, help="embedding CSV path")
    p_emb.add_argument("--bundle", help="ExplanationBundle JSON for role tags")
    p_emb.add_argument("--seed", type=int, default=0)
    p_emb.add_argument("--max-iter", type=int, default=300)
    p_emb.add_argument("--json", action="store_true")
    return parser


def _add_model_dataset_args(p) -> None:
    p.add_argument("--model", required=True, help="serialized forest file")
    p.add_argument("--dataset", required=True,
                   help="dataset snapshot (.npz) or CSV")
    p.add_argument("--schema", help="JSON file with {columns, label_column, "
                                    "...} for CSV datasets")


def _load_any_dataset(path, schema_path) -> Dataset:
    if str(path).endswith(".csv"):
        if not schema_path:
            raise ConfigError("CSV datasets need --schema")
        try:
            with open(schema_path, encoding="utf-8") as fh:
                spec = json.load(fh)
        except FileNotFoundError:
            raise ConfigError(f"no such schema file: {schema_path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"schema is not valid JSON: {exc}") from None
        for req in ("columns", "label_column"):
            if req not in spec:
                raise ConfigError(f"schema file needs '{req}'")
        raw = load_csv(
            path,
            schema=spec["columns"],
            label_column=spec["label_column"],
            delimiter=spec.get("delimiter", ","),
            missing_markers=tuple(spec.get("missing_markers", ["", "NA"])),
            id_column=spec.get("id_column"),
        )
        return encode(raw, missing_policy=spec.get("missing_policy", "error"))
    return load_dataset(path)


def _distance_for(model: TrainedForest, dataset: Dataset, backend: str):
    if backend == "l2":
        return l2_distance(dataset)
    return to_distance(compute_proximity(model, backend))


def _proximity_for(model: TrainedForest, dataset: Dataset, backend: str):
    if backend == "l2":
        return l2_distance(dataset)
    return compute_proximity(model, backend)


def _emit(outcome: dict, as_json: bool) -> None:
    if as_json:
        print(json.dumps(outcome, indent=2, sort_keys=True))
    else:
        print(outcome["summary"])
        for line in outcome.get("details", []):
            print(line)
        for path in outcome.get("artifacts", []):
            print(f"wrote {path}")


def cmd_run(args) -> int:
    config = ExperimentConfig.from_file(args.config)
    if args.seed is not None:
        config.master_seed = int(args.seed)
    out_dir = (
        args.output_dir
        or os.environ.get("FORESTCASE_OUTPUT_DIR")
        or config.output_dir
    )
    config.output_dir = out_dir
    config.validate()

    if args.dry_run:
        _emit(
            {
                "command": "run",
                "summary": f"config ok (hash {config.config_hash()[:12]}), "
                           "dry run: nothing written",
                "artifacts": [],
            },
            args.json,
        )
        return EXIT_OK

    os.makedirs(out_dir, exist_ok=True)
    lock_path = os.path.join(out_dir, ".forestcase.lock")
    try:
        lock_fd = os.open(lock_path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise StageError(
            "lock", -1,
            f"output directory is locked by another run ({lock_path})",
        ) from None
    t0 = time.time()
    try:
        try:
            result = run_experiment(config)
        except StageError as err:
            partial = getattr(err, "partial", None)
            if partial is not None:
                emit_reports(partial, out_dir)
            raise
        artifacts = emit_reports(result, out_dir)
    finally:
        os.close(lock_fd)
        os.unlink(lock_path)

    details = []
    for r in result.per_fold:
        details.append(
            f"fold {r['fold']}: forest test F1 {r['forest']['test_f1']:.4f}"
        )
    for key, rec in sorted(result.tuned_counts.items()):
        details.append(
            f"tuned prototypes {key}: {rec['modal_per_class']} per class "
            f"(mean total {rec['mean_total']:.1f})"
        )
    _emit(
        {
            "command": "run",
            "summary": (
                f"experiment complete in {time.time() - t0:.1f}s; "
                f"mean forest test F1 "
                f"{result.aggregate['forest']['test_f1']:.4f}"
            ),
            "details": details,
            "artifacts": artifacts,
        },
        args.json,
    )
    return EXIT_OK


def _load_model_dataset(args):
    model = load_forest(args.model)
    dataset = _load_any_dataset(args.dataset, args.schema)
    check_model_dataset(model, dataset)
    return model, dataset


def cmd_explain(args) -> int:
    model, dataset = _load_model_dataset(args)
    try:
        q = dataset.row_ids.index(args.query)
    except ValueError:
        raise DataError(f"unknown row id: {args.query!r}") from None
    dist = _distance_for(model, dataset, args.backend)
    semi = semi_factual(q, dist, dataset.labels)
    counter = counter_factual(q, dist, dataset.labels)
    rec = {
        "command": "explain",
        "query_id": args.query,
        "backend": args.backend,
        "query_class": str(dataset.label_names[dataset.labels[q]]),
        "semi_factual": _factual_record(dataset, dist, q, semi),
        "counter_factual": _factual_record(dataset, dist, q, counter),
    }
    rec["summary"] = (
        f"query {args.query} ({args.backend} backend): "
        f"semi-factual {rec['semi_factual']['row_id']} "
        f"at distance {rec['semi_factual']['distance']:.6f}, "
        f"counter-factual {rec['counter_factual']['row_id']} "
        f"at distance {rec['counter_factual']['distance']:.6f}"
    )
    _emit(rec, args.json)
    return EXIT_OK


def _factual_record(dataset: Dataset, dist, q: int, e: int) -> dict:
    s = sparsity(dataset.features[q], dataset.features[e], dataset)
    return {
        "row_id": dataset.row_ids[e],
        "class": str(dataset.label_names[dataset.labels[e]]),
        "distance": float(dist.values[q, e]),
        "sparsity": None if s is None else float(s),
    }


def cmd_prototypes(args) -> int:
    model, dataset = _load_model_dataset(args)
    dist = _distance_for(model, dataset, args.backend)
    if args.method == "kmedoids":
        ps = kmedoids_prototypes(dist, dataset.labels, args.count)
    else:
        mat = _proximity_for(model, dataset, args.backend)
        ps = hdp_prototypes(mat, dataset.labels, args.count)
    ps.backend = args.backend
    m_critics = args.critics if args.critics else ps.total
    m_critics = min(m_critics, dataset.n_rows - ps.total)
    wit_mat = _proximity_for(model, dataset, args.backend)
    critics = select_critics(ps, wit_mat, m_critics)

    rec = {
        "command": "prototypes",
        "method": args.method,
        "backend": args.backend,
        "prototypes": {
            str(dataset.label_names[c]): [
                dataset.row_ids[i] for i in ps.per_class[c]
            ]
            for c in sorted(ps.per_class)
        },
        "critics": [
            {"row_id": dataset.row_ids[int(i)], "witness": float(w)}
            for i, w in zip(critics.indices, critics.witness_values)
        ],
    }
    details = [
        f"class {cls}: " + ", ".join(ids)
        for cls, ids in rec["prototypes"].items()
    ] + [
        f"critic {c['row_id']}: witness {c['witness']:.6f}"
        for c in rec["critics"]
    ]
    rec["summary"] = (
        f"{args.method} prototypes under {args.backend} "
        f"({args.count} per class), {len(rec['critics'])} critics"
    )
    rec["details"] = details
    _emit(rec, args.json)
    return EXIT_OK


def _load_matrix_file(path) -> DistanceMatrix:
    if str(path).endswith(".csv"):
        with open(path, encoding="utf-8", newline="") as fh:
            rows = list(csv.reader(fh))
        if not rows or len(rows) < 2:
            raise DataError(f"matrix CSV is empty: {path}")
        ids = rows[0][1:]
        try:
            values = np.array(
                [[float(v) for v in r[1:]] for r in rows[1:]], dtype=np.float64
            )
        except ValueError as exc:
            raise DataError(f"bad matrix CSV cell: {exc}") from None
        if values.shape[0] != values.shape[1] or values.shape[0] != len(ids):
            raise DataError("matrix CSV is not square")
        return DistanceMatrix(values=values, backend="file")
    obj = load_matrix(path)
    if isinstance(obj, ProximityMatrix):
        return to_distance(obj)
    return obj


def cmd_embed(args) -> int:
    if args.matrix:
        dist = _load_matrix_file(args.matrix)
        row_ids = [str(i) for i in range(dist.n)]
        classes = [""] * dist.n
    elif args.model and args.dataset:
        model, dataset = _load_model_dataset(args)
        dist = _distance_for(model, dataset, args.backend)
        row_ids = list(dataset.row_ids)
        classes = [str(dataset.label_names[c]) for c in dataset.labels]
    else:
        raise ConfigError("embed needs either --matrix or --model + --dataset")
    dist.validate()

    roles = ["point"] * dist.n
    if args.bundle:
        try:
            with open(args.bundle, encoding="utf-8") as fh:
                bundle = json.load(fh)
        except FileNotFoundError:
            raise DataError(f"no such bundle file: {args.bundle}") from None
        pos = {rid: i for i, rid in enumerate(row_ids)}
        for ids in bundle.get("prototypes", {}).values():
            for rid in ids:
                if rid in pos:
                    roles[pos[rid]] = "prototype"
        for c in bundle.get("critics", []):
            if c.get("row_id") in pos:
                roles[pos[c["row_id"]]] = "critic"
        for f in bundle.get("factuals", []):
            if f.get("semi_id") in pos:
                roles[pos[f["semi_id"]]] = "semi"
            if f.get("counter_id") in pos:
                roles[pos[f["counter_id"]]] = "counter"
            if f.get("query_id") in pos:
                roles[pos[f["query_id"]]] = "query"

    res = mds_embed(dist, dim=2, max_iter=args.max_iter, seed=args.seed)
    with open(args.output, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["row_id", "x", "y", "role", "class"])
        for i, rid in enumerate(row_ids):
            w.writerow(
                [rid, repr(float(res.coords[i, 0])), repr(float(res.coords[i, 1])),
                 roles[i], classes[i]]
            )
    _emit(
        {
            "command": "embed",
            "summary": (
                f"embedded {dist.n} rows in {res.n_iter} iterations, "
                f"final stress {res.stress:.3e}"
            ),
            "stress": res.stress,
            "iterations": res.n_iter,
            "artifacts": [args.output],
        },
        args.json,
    )
    return EXIT_OK


_HANDLERS = {
    "run": cmd_run,
    "explain": cmd_explain,
    "prototypes": cmd_prototypes,
    "embed": cmd_embed,
}


def main(argv=None) -> int:
    threads = os.environ.get("FORESTCASE_THREADS")
    if threads:
        try:
            import numba

            numba.set_num_threads(max(1, int(threads)))
        except (ImportError, ValueError):
            pass
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return _HANDLERS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ModelMismatchError as exc:
        print(f"model mismatch: {exc}", file=sys.stderr)
        return EXIT_MISMATCH
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except StageError as exc:
        print(f"stage failure: {exc}", file=sys.stderr)
        return EXIT_STAGE
    except ForestCaseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_STAGE


if __name__ == "__main__":
    sys.exit(main())
