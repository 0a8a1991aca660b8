"""Command-line surface: ingest, index, classify, eval, analyze, labels,
train, ablate, report.

Every command that writes files puts a machine-readable config echo in the
output directory before any result, so a run is reproducible from its
output alone.  Primary results go to standard output as JSON (or CSV for
the analyze modes); bulk artifacts go to files.

Exit codes: 0 success, 1 usage error, 2 data/format error, 3 divergence.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import amf, report, symmetry, trainer
from .ann import IndexConfig, RPForest
from .classifier import ClassifierConfig, MemoryBank, evaluate, image_likelihood
from .errors import DataFormatError, DivergenceError

log = logging.getLogger("u1mem")

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_DIVERGENCE = 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _add_classifier_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--k", type=int, default=10, help="nearest neighbors per pixel")
    p.add_argument("--epsilon", type=float, default=1e-8,
                   help="kernel denominator constant")
    p.add_argument("--metric", choices=("euclidean", "cosine"), default="euclidean")
    p.add_argument("--normalize", dest="normalize", action="store_true", default=True,
                   help="unit-normalize pixel vectors (default)")
    p.add_argument("--no-normalize", dest="normalize", action="store_false")
    p.add_argument("--exclude-same-image", dest="exclude_same_image",
                   action="store_true", default=True,
                   help="drop matches from the query's own image (default)")
    p.add_argument("--include-same-image", dest="exclude_same_image",
                   action="store_false")
    p.add_argument("--exact", action="store_true",
                   help="full-scan retrieval instead of the index")


def _add_index_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--trees", type=int, default=16, help="trees in the forest")
    p.add_argument("--leaf-size", type=int, default=16)
    p.add_argument("--search-budget", type=int, default=None,
                   help="candidate pool per query (default trees*k)")
    p.add_argument("--seed", type=int, default=0)


def _add_common(p: argparse.ArgumentParser, output_required=False) -> None:
    p.add_argument("--output", "-o", type=Path, required=output_required,
                   help="output directory")
    p.add_argument("--verbose", "-v", action="count", default=0)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="u1mem",
                     description="memory-based pixel-vector classification "
                                 "and angular symmetry analysis")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", parents=[], help="validate AMF files and a manifest")
    p.add_argument("--manifest", type=Path, required=True)
    _add_common(p)

    p = sub.add_parser("index", help="build and persist the ANN index")
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--split", default="memory")
    p.add_argument("--metric", choices=("euclidean", "cosine"), default="euclidean")
    p.add_argument("--normalize", dest="normalize", action="store_true", default=True)
    p.add_argument("--no-normalize", dest="normalize", action="store_false")
    _add_index_flags(p)
    _add_common(p, output_required=True)

    p = sub.add_parser("classify", help="likelihood table for one query map")
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--query", type=Path, required=True, help="query AMF file")
    p.add_argument("--query-id", default=None,
                   help="image id for same-image exclusion")
    p.add_argument("--split", default="memory", help="manifest split used as memory")
    p.add_argument("--index", type=Path, default=None, help="persisted index file")
    _add_classifier_flags(p)
    _add_index_flags(p)
    _add_common(p)

    p = sub.add_parser("eval", help="classify a query split and report accuracy")
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--memory-split", default="memory")
    p.add_argument("--query-split", default="query")
    p.add_argument("--workers", type=int, default=os.cpu_count() or 1)
    p.add_argument("--deterministic", action="store_true",
                   help="force single-threaded evaluation")
    _add_classifier_flags(p)
    _add_index_flags(p)
    _add_common(p, output_required=True)

    p = sub.add_parser("analyze", help="energy and match-distribution analyses")
    mode = p.add_subparsers(dest="mode", required=True)
    for name in ("energy", "matches", "angular", "conditional", "radtan"):
        q = mode.add_parser(name)
        q.add_argument("--manifest", type=Path, required=True)
        q.add_argument("--split", default="memory", help="memory split")
        if name == "energy":
            q.add_argument("--bins", type=int, default=8)
        else:
            q.add_argument("--query-split", default="memory")
            q.add_argument("--pairing", choices=symmetry.PAIRINGS,
                           default="same_class")
            _add_classifier_flags(q)
            _add_index_flags(q)
        if name == "angular":
            q.add_argument("--weighting", choices=("uniform", "kernel"),
                           default="uniform")
        if name == "conditional":
            q.add_argument("--at", default=None, metavar="ROW,COL",
                           help="single query location (default: all)")
        _add_common(q)

    p = sub.add_parser("labels", help="generate per-class 2-d labels")
    p.add_argument("--kind", choices=trainer.LABEL_KINDS, default="unit_circle")
    p.add_argument("--n-classes", type=int, default=8)
    p.add_argument("--seed", type=int, default=0)
    _add_common(p)

    p = sub.add_parser("train", help="train the toy network on a synthetic dataset")
    p.add_argument("--dataset", choices=("blobs", "grid"), default="blobs")
    p.add_argument("--n-classes", type=int, default=8)
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--lr-min", type=float, default=0.0)
    p.add_argument("--lambda", dest="lam", type=float, default=1.0)
    p.add_argument("--batch", type=int, default=32)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--label-kind", choices=trainer.LABEL_KINDS, default="unit_circle")
    p.add_argument("--label-seed", type=int, default=None,
                   help="defaults to --seed")
    p.add_argument("--hidden", default="32", help="comma-separated trunk widths")
    p.add_argument("--loss-mode", choices=trainer.LOSS_MODES, default="combined")
    p.add_argument("--augment", action="store_true",
                   help="flip/crop augmentation (grid dataset)")
    _add_common(p, output_required=True)

    p = sub.add_parser("ablate", help="compare label kinds over multiple seeds")
    p.add_argument("--kinds", default=",".join(trainer.LABEL_KINDS))
    p.add_argument("--seeds", type=int, default=5, help="seeds 0..n-1")
    p.add_argument("--n-classes", type=int, default=8)
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--lambda", dest="lam", type=float, default=1.0)
    p.add_argument("--batch", type=int, default=32)
    p.add_argument("--hidden", default="32")
    p.add_argument("--blob-noise", type=float, default=0.5,
                   help="dataset difficulty (per-dim noise scale)")
    _add_common(p, output_required=True)

    p = sub.add_parser("report", help="bundle artifacts and render figures")
    p.add_argument("--input", type=Path, nargs="+", required=True)
    _add_common(p, output_required=True)

    return parser


# -- helpers ----------------------------------------------------------------------


def _echo_config(args: argparse.Namespace) -> dict:
    skip = {"verbose"}

    def jsonable(value):
        if isinstance(value, Path):
            return str(value)
        if isinstance(value, (list, tuple)):
            return [jsonable(v) for v in value]
        return value

    return {key: jsonable(value) for key, value in sorted(vars(args).items())
            if key not in skip}


def _prepare_output(args: argparse.Namespace) -> Path | None:
    out = getattr(args, "output", None)
    if out is None:
        return None
    out.mkdir(parents=True, exist_ok=True)
    report.write_json(out / "config.json", _echo_config(args))
    return out


def _classifier_config(args: argparse.Namespace) -> ClassifierConfig:
    return ClassifierConfig(k=args.k, epsilon=args.epsilon, metric=args.metric,
                            normalize_vectors=args.normalize,
                            exclude_same_image=args.exclude_same_image)


def _index_config(args: argparse.Namespace, metric: str) -> IndexConfig:
    return IndexConfig(n_trees=args.trees, leaf_size=args.leaf_size,
                       seed=args.seed, metric=metric,
                       search_budget=args.search_budget)


def _load_split(manifest: Path, split: str):
    records = amf.select_split(amf.load_manifest(manifest), split)
    if not records:
        raise DataFormatError(f"manifest has no records in split {split!r}")
    return [(rec, amf.load_activation_map(rec.path)) for rec in records]


def _print(payload) -> None:
    sys.stdout.write(report.json_text(payload))


# -- commands ---------------------------------------------------------------------


def cmd_ingest(args) -> int:
    _prepare_output(args)
    records = amf.load_manifest(args.manifest)
    shapes: dict[tuple[int, int, int], int] = {}
    splits: dict[str, int] = {}
    classes: dict[int, str] = {}
    for rec in records:
        amap = amf.load_activation_map(rec.path)
        shapes[amap.shape] = shapes.get(amap.shape, 0) + 1
        splits[rec.split] = splits.get(rec.split, 0) + 1
        classes[rec.class_id] = rec.class_name
    if len(shapes) > 1:
        raise DataFormatError(f"inconsistent map shapes across manifest: {shapes}")
    summary = {
        "records": len(records),
        "shape": list(next(iter(shapes))),
        "splits": splits,
        "classes": {str(k): v for k, v in sorted(classes.items())},
    }
    _print(summary)
    out = getattr(args, "output", None)
    if out:
        report.write_json(out / "ingest.json", summary)
    return EXIT_OK


def cmd_index(args) -> int:
    out = _prepare_output(args)
    config = ClassifierConfig(metric=args.metric, normalize_vectors=args.normalize)
    bank = MemoryBank.from_maps(_load_split(args.manifest, args.split), config,
                                _index_config(args, args.metric))
    path = out / "index.u1ix"
    bank.index.save(path)
    _print({"vectors": bank.size, "dim": bank.dim, "trees": args.trees,
            "path": str(path)})
    return EXIT_OK


def cmd_classify(args) -> int:
    _prepare_output(args)
    config = _classifier_config(args)
    if args.index:
        forest = RPForest.load(args.index)
        names = {rec.class_id: rec.class_name
                 for rec in amf.load_manifest(args.manifest)}
        bank = MemoryBank.from_forest(forest, config, names)
    else:
        bank = MemoryBank.from_maps(_load_split(args.manifest, args.split), config,
                                    _index_config(args, args.metric))
    query = amf.load_activation_map(args.query)
    table = image_likelihood(query, bank, config, query_image_id=args.query_id,
                             exact=args.exact)
    payload = {
        "scores": {str(c): s for c, s in table.scores.items()},
        "argmax": table.argmax,
        "class_name": bank.class_names.get(table.argmax),
    }
    _print(payload)
    out = getattr(args, "output", None)
    if out:
        report.write_json(out / "likelihood.json", payload)
    return EXIT_OK


def cmd_eval(args) -> int:
    out = _prepare_output(args)
    config = _classifier_config(args)
    bank = MemoryBank.from_maps(_load_split(args.manifest, args.memory_split),
                                config, _index_config(args, args.metric))
    queries = _load_split(args.manifest, args.query_split)
    workers = 1 if args.deterministic else max(1, args.workers)
    result = evaluate(queries, bank, config, exact=args.exact, workers=workers)
    per_query_rows = [{
        "image_id": r["image_id"],
        "truth": r["truth"],
        "prediction": r["prediction"],
        "top1_class": r["top3"][0][0], "top1_score": r["top3"][0][1],
        "top2_class": r["top3"][1][0] if len(r["top3"]) > 1 else "",
        "top2_score": r["top3"][1][1] if len(r["top3"]) > 1 else "",
        "top3_class": r["top3"][2][0] if len(r["top3"]) > 2 else "",
        "top3_score": r["top3"][2][1] if len(r["top3"]) > 2 else "",
    } for r in result.rows]
    report.write_csv(out / "per_query.csv",
                     list(per_query_rows[0].keys()), per_query_rows)
    confusion_rows = [
        {"truth": c, **{f"pred_{p}": int(result.confusion[i, j])
                        for j, p in enumerate(result.class_ids)}}
        for i, c in enumerate(result.class_ids)
    ]
    report.write_csv(out / "confusion.csv",
                     list(confusion_rows[0].keys()), confusion_rows)
    summary = {
        "accuracy": result.accuracy,
        "per_class_accuracy": {str(c): a for c, a in result.per_class_accuracy.items()},
        "n_queries": len(result.rows),
        "config": _echo_config(args),
    }
    report.write_json(out / "summary.json", summary)
    _print(summary)
    return EXIT_OK


def _analysis_inputs(args):
    config = _classifier_config(args)
    bank = MemoryBank.from_maps(_load_split(args.manifest, args.split), config,
                                _index_config(args, args.metric))
    queries = [(amap, rec.image_id, rec.class_id)
               for rec, amap in _load_split(args.manifest, args.query_split)]
    return config, bank, queries


def cmd_analyze(args) -> int:
    out = _prepare_output(args)

    if args.mode == "energy":
        maps = [amap for _, amap in _load_split(args.manifest, args.split)]
        mean, profile = symmetry.aggregate_energy(maps, n_bins=args.bins)
        rows = [{
            "bin": i,
            "edge_lo": profile.edges[i],
            "edge_hi": profile.edges[i + 1],
            "count": int(profile.counts[i]),
            "mean_energy": profile.mean_energy[i],
            "asymmetry": profile.asymmetry[i],
        } for i in range(len(profile.counts))]
        csv_out = report.csv_text(list(rows[0].keys()), rows)
        sys.stdout.write(csv_out)
        if out:
            (out / "radial_profile.csv").write_text(csv_out, encoding="utf-8")
            report.write_pgm(out / "mean_energy.pgm", mean)
        return EXIT_OK

    config, bank, queries = _analysis_inputs(args)
    matches = symmetry.match_locations(queries, bank, config,
                                       pairing=args.pairing, exact=args.exact)

    if args.mode == "matches":
        rows = [{
            "query_image_id": m.query_image_id,
            "query_class_id": m.query_class_id,
            "x_i": m.x_i, "y_i": m.y_i,
            "x_nn": m.x_nn, "y_nn": m.y_nn,
            "match_class_id": m.match_class_id,
            "same_class": int(m.same_class),
            "weight": m.weight,
        } for m in matches]
        fields = ["query_image_id", "query_class_id", "x_i", "y_i",
                  "x_nn", "y_nn", "match_class_id", "same_class", "weight"]
        csv_out = report.csv_text(fields, rows)
        sys.stdout.write(csv_out)
        if out:
            (out / "matches.csv").write_text(csv_out, encoding="utf-8")
        return EXIT_OK

    if args.mode == "angular":
        rows = symmetry.per_class_angular_report(matches, weighting=args.weighting)
        fields = ["class_id", "n", "n_origin", "theta_mean_deg",
                  "resultant_length", "rayleigh_z", "var_radial", "var_tangential"]
        csv_out = report.csv_text(fields, rows)
        sys.stdout.write(csv_out)
        if out:
            (out / "angular_stats.csv").write_text(csv_out, encoding="utf-8")
        return EXIT_OK

    if args.mode == "radtan":
        by_class: dict[int, list] = {}
        for m in matches:
            by_class.setdefault(m.query_class_id, []).append(m)
        rows = []
        for class_id in sorted(by_class):
            rt = symmetry.radial_tangential_variance(by_class[class_id])
            rows.append({"class_id": class_id, "n": rt.n,
                         "n_origin_queries": rt.n_origin_queries,
                         "var_radial": rt.radial, "var_tangential": rt.tangential})
        fields = ["class_id", "n", "n_origin_queries", "var_radial", "var_tangential"]
        csv_out = report.csv_text(fields, rows)
        sys.stdout.write(csv_out)
        if out:
            (out / "radtan.csv").write_text(csv_out, encoding="utf-8")
        return EXIT_OK

    # conditional
    h, w = symmetry.bank_grid_shape(bank)
    if args.at:
        row, col = (int(v) for v in args.at.split(","))
        locations = [(row, col)]
    else:
        locations = [(r, c) for r in range(h) for c in range(w)]
    summary = []
    for row, col in locations:
        loc = amf.centered_coords(row, col, h, w)
        hist = symmetry.conditional_match_distribution(matches, loc, (h, w))
        summary.append({"row": row, "col": col, "n": hist.n})
        if out and hist.n:
            report.write_pgm(out / f"conditional_r{row}_c{col}.pgm", hist.counts)
    _print({"locations": summary})
    return EXIT_OK


def cmd_labels(args) -> int:
    _prepare_output(args)
    config = trainer.LabelConfig(kind=args.kind, seed=args.seed,
                                 n_classes=args.n_classes)
    labels = trainer.gen_labels(config)
    payload = {
        "kind": config.kind,
        "seed": config.seed,
        "labels": [{"class_id": l.class_id, "theta": l.theta, "x": l.x, "y": l.y}
                   for l in labels],
    }
    _print(payload)
    out = getattr(args, "output", None)
    if out:
        trainer.save_labels(out / "labels.json", labels, config)
    return EXIT_OK


def _parse_hidden(text: str) -> tuple[int, ...]:
    return tuple(int(v) for v in text.split(",") if v.strip())


def cmd_train(args) -> int:
    out = _prepare_output(args)
    label_seed = args.seed if args.label_seed is None else args.label_seed
    label_config = trainer.LabelConfig(kind=args.label_kind, seed=label_seed,
                                       n_classes=args.n_classes)
    labels = trainer.gen_labels(label_config)
    augment_fn = None
    if args.dataset == "blobs":
        x, y = trainer.make_blobs(n_classes=args.n_classes, seed=args.seed)
    else:
        images, y = trainer.make_grid_dataset(n_classes=args.n_classes,
                                              seed=args.seed)
        size = images.shape[1]
        x = images.reshape(len(images), -1)
        if args.augment:
            augment_fn = trainer.make_flip_crop_augmenter(size, size)
    net = trainer.ToyNet(x.shape[1], _parse_hidden(args.hidden), args.n_classes,
                         seed=args.seed)
    config = trainer.TrainConfig(epochs=args.epochs, lr=args.lr, lr_min=args.lr_min,
                                 batch_size=args.batch, seed=args.seed,
                                 lam=args.lam, loss_mode=args.loss_mode)
    result = trainer.train(net, x, y, labels, config, augment_fn=augment_fn)
    fields = ["epoch", "lr", "loss", "ce", "u1", "accuracy", "angular_error_deg"]
    report.write_csv(out / "metrics.csv", fields, result.metrics)
    trainer.save_labels(out / "labels.json", labels, label_config)
    np.savez(out / "model.npz", **net.params)
    _print(result.metrics[-1])
    return EXIT_OK


def cmd_ablate(args) -> int:
    out = _prepare_output(args)
    kinds = [k.strip() for k in args.kinds.split(",") if k.strip()]
    seeds = list(range(args.seeds))
    config = trainer.TrainConfig(epochs=args.epochs, lr=args.lr,
                                 batch_size=args.batch, lam=args.lam)
    result = trainer.label_config_ablation(
        kinds, seeds, n_classes=args.n_classes, blob_noise=args.blob_noise,
        hidden=_parse_hidden(args.hidden), train_config=config)
    report.write_csv(out / "ablation.csv", ["kind", "mean", "std", "n_seeds"],
                     result.table)
    report.write_csv(out / "runs.csv",
                     ["kind", "seed", "test_accuracy", "init_checksum"],
                     result.runs)
    _print({"table": result.table})
    return EXIT_OK


def cmd_report(args) -> int:
    out = _prepare_output(args)
    index = report.build_report(args.input, out)
    _print({"output": str(out), "artifacts": len(index["artifacts"])})
    return EXIT_OK


_COMMANDS = {
    "ingest": cmd_ingest,
    "index": cmd_index,
    "classify": cmd_classify,
    "eval": cmd_eval,
    "analyze": cmd_analyze,
    "labels": cmd_labels,
    "train": cmd_train,
    "ablate": cmd_ablate,
    "report": cmd_report,
}


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s")
    try:
        return _COMMANDS[args.command](args)
    except (DataFormatError, FileNotFoundError, ValueError) as exc:
        print(f"u1mem: error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except DivergenceError as exc:
        print(f"u1mem: divergence: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
