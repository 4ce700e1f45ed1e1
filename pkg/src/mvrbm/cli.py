"""Command-line surface.

Subcommands: synth, train, project, predict, retrieve, cluster, eval,
gradcheck.  Exit codes: 0 success, 1 usage error, 2 validation/schema
error, 3 numeric failure (divergence or a failed gradient check).

Reporting commands write delimited text and, unless --no-figure is
given, a companion PNG next to it.
"""

from __future__ import annotations

import argparse
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import analytics, dataio, inference, oracle, synth, tiny, training
from .exceptions import (
    ConfigError,
    MvrbmError,
    NumericError,
    SchemaError,
    UsageError,
    ValidationError,
)
from .model import hidden_conditional
from .training import TrainConfig, fit


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="mvrbm", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a planted-concept mixed dataset")
    p.add_argument("--out", required=True, help="dataset file to write (jsonl)")
    p.add_argument("--schema", required=True, help="schema file to write (json)")
    p.add_argument("--concepts", type=int, default=5)
    p.add_argument("--per-concept", type=int, default=100)
    p.add_argument("--gauss", type=int, default=8)
    p.add_argument("--cat", type=int, default=2)
    p.add_argument("--cat-m", type=int, default=6)
    p.add_argument("--vocab", type=int, default=30)
    p.add_argument("--tokens", type=int, default=10)
    p.add_argument("--separation", type=float, default=2.0)
    p.add_argument("--gauss-noise", type=float, default=1.0)
    p.add_argument("--cat-flip", type=float, default=0.1)
    p.add_argument("--token-noise", type=float, default=0.2)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("train", help="fit a model with CD / regularizers")
    p.add_argument("--schema", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="model file to write")
    p.add_argument("--log", default=None, help="training log csv (default <out>.log.csv)")
    p.add_argument("--config", default=None, help="key = value config file")
    p.add_argument("--hidden", type=int, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--batch", type=int, default=None)
    p.add_argument("--cd-steps", type=int, default=None)
    p.add_argument("--persistent", action="store_true", default=None)
    p.add_argument("--alpha", type=float, default=None)
    p.add_argument("--groups", type=int, default=None)
    p.add_argument("--beta", type=float, default=None)
    p.add_argument("--rho1", type=float, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--lr-w", type=float, default=None)
    p.add_argument("--lr-a", type=float, default=None)
    p.add_argument("--lr-b", type=float, default=None)
    p.add_argument("--oracle-exact-gradient", action="store_true", default=None)
    p.add_argument("--mean-field-data-term", action="store_true", default=None)
    p.add_argument("--no-figure", action="store_true")

    p = sub.add_parser("project", help="export latent profiles")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--rho1", type=float, default=0.5)

    p = sub.add_parser("predict", help="rank unseen tokens for each record")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--unit", default=None, help="replicated-softmax block name")
    p.add_argument("--candidates", default=None, help="comma-separated token ids")
    p.add_argument("--normalize", choices=["full", "candidates"], default="full")

    p = sub.add_parser("retrieve", help="rank a corpus for every query record")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True, help="corpus dataset")
    p.add_argument("--queries", required=True, help="query dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--k", type=int, default=None, help="list depth to write")
    p.add_argument("--threads", type=int, default=1)

    p = sub.add_parser("cluster", help="hamming k-means on binary codes")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--clusters", type=int, required=True)
    p.add_argument("--rho1", type=float, default=0.5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-iter", type=int, default=100)
    p.add_argument("--rho2", type=float, default=None,
                   help="jaccard overlap threshold for pairwise ground truth")
    p.add_argument("--report", default=None, help="metric report csv")
    p.add_argument("--no-figure", action="store_true")

    p = sub.add_parser("eval", help="MAP/NDCG over ranking files")
    p.add_argument("--ranking", action="append", required=True,
                   help="ranking csv from `retrieve` (repeat for repeats)")
    p.add_argument("--k", type=int, default=100)
    p.add_argument("--out", required=True)
    p.add_argument("--method", default="model")
    p.add_argument("--no-figure", action="store_true")

    p = sub.add_parser("gradcheck", help="finite-difference gradient checks")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--trials", type=int, default=20)
    p.add_argument("--threshold", type=float, default=1e-4)
    p.add_argument("--eps", type=float, default=1e-6)

    return parser


# ---------------------------------------------------------------------------


def _cmd_synth(args) -> int:
    spec = synth.SyntheticSpec(
        n_concepts=args.concepts,
        records_per_concept=args.per_concept,
        n_gaussian=args.gauss,
        n_categorical=args.cat,
        categorical_options=args.cat_m,
        vocab_size=args.vocab,
        tokens_per_record=args.tokens,
        concept_separation=args.separation,
        gaussian_noise=args.gauss_noise,
        categorical_flip=args.cat_flip,
        token_noise=args.token_noise,
        seed=args.seed,
    )
    schema, records, labels = synth.generate(spec)
    dataio.write_schema(schema, args.schema)
    dataio.write_dataset(records, schema, args.out, labels=labels)
    print(f"wrote {len(records)} records to {args.out}")
    return 0


_TRAIN_OVERRIDES = {
    "hidden": "n_hidden",
    "epochs": "epochs",
    "batch": "batch_size",
    "cd_steps": "cd_steps",
    "persistent": "persistent",
    "alpha": "alpha",
    "groups": "groups",
    "beta": "beta",
    "rho1": "rho1",
    "seed": "seed",
    "lr_w": "lr_w",
    "lr_a": "lr_a",
    "lr_b": "lr_b",
    "oracle_exact_gradient": "oracle_exact_gradient",
    "mean_field_data_term": "mean_field_data_term",
}


def _cmd_train(args) -> int:
    schema = dataio.read_schema(args.schema)
    records, labels = dataio.read_dataset(args.data, schema)
    config = dataio.read_config(args.config) if args.config else TrainConfig()
    for flag, field in _TRAIN_OVERRIDES.items():
        value = getattr(args, flag)
        if value is not None:
            setattr(config, field, value)

    log_path = args.log if args.log else args.out + ".log.csv"
    dataio.write_delimited(log_path, dataio.LOG_HEADER, [])
    have_labels = any(lab is not None for lab in labels)

    def on_epoch(row):
        dataio.write_delimited(
            log_path, dataio.LOG_HEADER, [dataio.log_row_values(row)], append=True
        )

    result = fit(
        records,
        schema,
        config,
        labels=labels if have_labels else None,
        epoch_callback=on_epoch,
    )
    dataio.write_model(result.params, schema, args.out)
    if not args.no_figure and result.log:
        from . import report

        report.render_training_curves(result.log, log_path + ".png")
    if result.diverged:
        print("training diverged; wrote last finite checkpoint", file=sys.stderr)
        return 3
    print(f"wrote model to {args.out} ({len(result.log)} epochs logged)")
    return 0


def _cmd_project(args) -> int:
    params, schema = dataio.read_model(args.model)
    records, _ = dataio.read_dataset(args.data, schema)
    posteriors, codes = inference.project_batch(records, params, schema, rho1=args.rho1)
    k = params.n_hidden
    header = ["record"] + [f"p{j}" for j in range(k)] + [f"bit{j}" for j in range(k)]
    rows = [
        [i] + [float(v) for v in posteriors[i]] + [int(v) for v in codes[i]]
        for i in range(len(records))
    ]
    dataio.write_delimited(args.out, header, rows)
    print(f"wrote {len(rows)} profiles to {args.out}")
    return 0


def _cmd_predict(args) -> int:
    params, schema = dataio.read_model(args.model)
    records, _ = dataio.read_dataset(args.data, schema)
    candidates = None
    if args.candidates is not None:
        candidates = [int(t) for t in args.candidates.split(",") if t.strip() != ""]
        if not candidates:
            raise UsageError("empty candidate set")
    rows = []
    for i, record in enumerate(records):
        ranking = inference.predict_unseen(
            record, params, schema, candidates, unit=args.unit, normalize=args.normalize
        )
        for token, prob in ranking.entries:
            rows.append([i, token, prob])
    dataio.write_delimited(args.out, ["record", "token", "probability"], rows)
    print(f"wrote predictions for {len(records)} records to {args.out}")
    return 0


def _retrieve_chunk(chunk, qp, cp, corpus_labels, query_labels):
    return analytics.retrieval_run(
        qp[chunk], cp, [query_labels[i] for i in chunk], corpus_labels
    )


def _cmd_retrieve(args) -> int:
    params, schema = dataio.read_model(args.model)
    corpus, corpus_labels = dataio.read_dataset(args.data, schema)
    queries, query_labels = dataio.read_dataset(args.queries, schema)
    cp, _ = inference.project_batch(corpus, params, schema)
    qp, _ = inference.project_batch(queries, params, schema)

    n_q = len(queries)
    chunks = [list(range(i, min(i + 64, n_q))) for i in range(0, n_q, 64)]
    if args.threads > 1:
        with ThreadPoolExecutor(max_workers=args.threads) as pool:
            parts = list(
                pool.map(
                    lambda ch: _retrieve_chunk(ch, qp, cp, corpus_labels, query_labels),
                    chunks,
                )
            )
    else:
        parts = [_retrieve_chunk(ch, qp, cp, corpus_labels, query_labels) for ch in chunks]

    depth = args.k if args.k else len(corpus)
    rows = []
    for chunk, results in zip(chunks, parts):
        for qi, res in zip(chunk, results):
            for rank in range(min(depth, len(res.corpus_ids))):
                rows.append(
                    [
                        qi,
                        rank + 1,
                        res.corpus_ids[rank],
                        res.distances[rank],
                        res.relevant[rank],
                    ]
                )
    dataio.write_delimited(
        args.out, ["query", "rank", "corpus", "distance", "relevant"], rows
    )
    print(f"wrote rankings for {n_q} queries to {args.out}")
    return 0


def _cmd_cluster(args) -> int:
    params, schema = dataio.read_model(args.model)
    records, labels = dataio.read_dataset(args.data, schema)
    _, codes = inference.project_batch(records, params, schema, rho1=args.rho1)
    assign = analytics.hamming_kmeans(
        codes, args.clusters, seed=args.seed, max_iter=args.max_iter
    )
    dataio.write_delimited(
        args.out, ["record", "cluster"], [[i, int(c)] for i, c in enumerate(assign)]
    )
    print(f"wrote {len(assign)} assignments to {args.out}")

    if args.report:
        rows = []
        if all(lab is not None for lab in labels):
            rows.append(
                ["hamming_kmeans", "rand_index_vs_concepts",
                 analytics.rand_index(assign, labels), 0.0]
            )
        if args.rho2 is not None:
            value = _rand_vs_token_overlap(assign, records, schema, args.rho2)
            rows.append(
                ["hamming_kmeans", f"rand_index_vs_token_overlap_rho2_{args.rho2:g}",
                 value, 0.0]
            )
        dataio.write_delimited(
            args.report, ["method", "metric", "value", "std"], rows
        )
        if rows and not args.no_figure:
            from . import report

            report.render_metric_report(
                [(r[0], r[1], float(r[2]), float(r[3])) for r in rows],
                args.report + ".png",
            )
    return 0


def _rand_vs_token_overlap(assign, records, schema, rho2: float) -> float:
    """Pairwise accuracy of the clustering against data-derived ground
    truth: two records count as truly similar when the jaccard overlap of
    their unique token sets exceeds rho2."""
    rs = [i for i, (_, u) in enumerate(schema.units) if u.kind == "replicated_softmax"]
    if not rs:
        raise UsageError("--rho2 ground truth needs a replicated-softmax block")
    sets = [frozenset(int(t) for t in r.values[rs[0]]) for r in records]
    n = len(sets)
    agree = total = 0
    for i in range(n):
        for j in range(i + 1, n):
            truly_same = analytics.jaccard(sets[i], sets[j]) > rho2
            clustered_same = assign[i] == assign[j]
            agree += int(truly_same == clustered_same)
            total += 1
    return agree / total if total else 0.0


def _read_ranking(path):
    results: dict[int, analytics.RetrievalResult] = {}
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
        idx = {name: i for i, name in enumerate(header)}
        for line in fh:
            parts = line.strip().split(",")
            if len(parts) < len(header):
                continue
            q = int(parts[idx["query"]])
            res = results.setdefault(
                q, analytics.RetrievalResult(q, [], [], [])
            )
            res.corpus_ids.append(int(parts[idx["corpus"]]))
            res.distances.append(float(parts[idx["distance"]]))
            res.relevant.append(int(parts[idx["relevant"]]))
    return [results[q] for q in sorted(results)]


def _cmd_eval(args) -> int:
    per_file = {"map": [], "ndcg": []}
    for path in args.ranking:
        results = _read_ranking(path)
        per_file["map"].append(analytics.map_at_k(results, args.k))
        per_file["ndcg"].append(analytics.ndcg_at_k(results, args.k))
    rows = []
    for metric, values in per_file.items():
        arr = np.array(values)
        rows.append(
            [args.method, f"{metric}@{args.k}", float(arr.mean()),
             float(arr.std()) if len(arr) > 1 else 0.0]
        )
    dataio.write_delimited(args.out, ["method", "metric", "value", "std"], rows)
    if not args.no_figure:
        from . import report

        report.render_metric_report(
            [(r[0], r[1], float(r[2]), float(r[3])) for r in rows], args.out + ".png"
        )
    for row in rows:
        print(f"{row[0]} {row[1]} = {row[2]:.6g} (std {row[3]:.6g})")
    return 0


def _cmd_gradcheck(args) -> int:
    rng = np.random.default_rng(args.seed)
    worst = {"likelihood": 0.0, "sparsity": 0.0, "metric": 0.0}
    for _ in range(args.trials):
        schema = tiny.random_discrete_schema(rng)
        n_hidden = int(rng.integers(1, 4))
        params = tiny.random_params(schema, n_hidden, rng)
        record = tiny.random_record(schema, rng)

        g = oracle.exact_gradient(record, params, schema)
        fd = oracle.finite_difference_gradient(
            lambda p: oracle.exact_log_likelihood(record, p, schema), params, args.eps
        )
        worst["likelihood"] = max(
            worst["likelihood"], oracle.gradient_relative_error(g, fd)
        )

        groups = n_hidden  # single-unit groups always divide K
        gs = training.sparsity_gradient(record, params, schema, groups)
        fds = oracle.finite_difference_gradient(
            lambda p: training.sparsity_penalty(
                hidden_conditional(record, p, schema), groups
            ),
            params,
            args.eps,
        )
        worst["sparsity"] = max(worst["sparsity"], oracle.gradient_relative_error(gs, fds))

        neighbors = [tiny.random_record(schema, rng) for _ in range(2)]
        non_neighbors = [tiny.random_record(schema, rng) for _ in range(2)]
        gm = training.metric_gradient(record, neighbors, non_neighbors, params, schema)
        fdm = oracle.finite_difference_gradient(
            lambda p: training.metric_objective(
                record, neighbors, non_neighbors, p, schema
            ),
            params,
            args.eps,
        )
        worst["metric"] = max(worst["metric"], oracle.gradient_relative_error(gm, fdm))

    failed = False
    for name, err in worst.items():
        status = "ok" if err <= args.threshold else "FAIL"
        if err > args.threshold:
            failed = True
        print(f"gradcheck {name}: max relative error {err:.3e} [{status}]")
    if failed:
        raise NumericError(f"gradient check exceeded threshold {args.threshold}")
    return 0


_COMMANDS = {
    "synth": _cmd_synth,
    "train": _cmd_train,
    "project": _cmd_project,
    "predict": _cmd_predict,
    "retrieve": _cmd_retrieve,
    "cluster": _cmd_cluster,
    "eval": _cmd_eval,
    "gradcheck": _cmd_gradcheck,
}


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        return _COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except (SchemaError, ValidationError, ConfigError) as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return 2
    except (NumericError,) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3
    except MvrbmError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
