"""Command-line entry point: ``revisit-lab <subcommand> ...``.

Exit codes: 0 success, 1 runtime or config error, 2 usage error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

from . import analyzer, attribution, dataset, evaluator, loggen, perf_features, ranker
from .config import ConfigError
from .events import TaskId, day_index, read_event_log_file, write_event_log_file
from .pipeline import PipelineConfig, PipelineError, run_pipeline


class CLIError(RuntimeError):
    pass


def _load_pipeline_config(path: Optional[str]) -> PipelineConfig:
    if path is None:
        return PipelineConfig.from_sections({})
    return PipelineConfig.load(path)


def _gen_config(args) -> loggen.GenConfig:
    cfg = _load_pipeline_config(args.config).gen
    if args.seed is not None:
        cfg.rng_seed = args.seed
    return cfg


def _day_span(events) -> tuple[int, int]:
    if not events:
        raise CLIError("event log is empty")
    days = [day_index(e.timestamp) for e in events]
    return min(days), max(days)


def cmd_generate(args) -> None:
    cfg = _gen_config(args)
    events = loggen.generate_log(cfg)
    write_event_log_file(args.out, events)
    if args.features_out:
        loggen.write_sidecar(args.features_out, loggen.emit_feature_sidecar(cfg, events))
    print(f"wrote {len(events)} events to {args.out}")


def cmd_attribute(args) -> None:
    events = read_event_log_file(args.events)
    saves, pairs, labels = attribution.attribute(events)
    attribution.write_labels(args.out, labels)
    if args.pairs_out:
        attribution.write_pairs(args.pairs_out, pairs)
    vol = attribution.label_volumes(pairs, len(saves))
    print(f"{len(saves)} saves, {len(pairs)} attributed revisits "
          f"(1dRevImpre {vol.rev_impre_1d}, 1dRevGrid {vol.rev_grid_1d}, 7dRevGrid {vol.rev_grid_7d})")


def cmd_features(args) -> None:
    events = read_event_log_file(args.events)
    saves = attribution.derive_saves(events)
    pairs = attribution.join_revisits(saves, attribution.derive_revisit_events(events))
    first, last = _day_span(events)
    tables = perf_features.build_perf_tables(events, pairs, range(first, last + 1))
    perf_features.write_perf_tables(args.out, tables)
    print(f"wrote {len(tables.tables)} refreshed tables to {args.out}")


def cmd_assemble(args) -> None:
    events = read_event_log_file(args.events)
    first, last = _day_span(events)
    labels = attribution.read_labels(args.labels)
    labeled = dataset.attach_revisit_label(dataset.extract_action_labels(events), labels)
    ds = dataset.assemble(loggen.read_sidecar(args.sidecar),
                          perf_features.read_perf_tables(args.perf, first, last),
                          labeled, dataset.usable_request_days(first, last))
    dataset.write_dataset(args.out, ds)
    print(f"wrote {len(ds)} rows x {ds.dim} features to {args.out}")


def _weights(args) -> tuple[dict, dict]:
    w = ranker.default_loss_weights()
    u = ranker.default_utilities(args.u_rp_rv_ratio)
    if args.baseline:
        w[TaskId.REPIN_AND_REVISIT] = 0.0
        u[TaskId.REPIN_AND_REVISIT] = 0.0
    return w, u


def cmd_train(args) -> None:
    base = _load_pipeline_config(args.config).train
    cfg = ranker.TrainConfig(
        learning_rate=args.lr if args.lr is not None else base.learning_rate,
        batch_size=args.batch_size if args.batch_size is not None else base.batch_size,
        epochs=args.epochs if args.epochs is not None else base.epochs,
        momentum=base.momentum,
        hidden=base.hidden,
        rng_seed=args.seed if args.seed is not None else base.rng_seed,
    )
    ds = dataset.read_dataset(args.dataset)
    if ds.dim == 0:
        raise CLIError("dataset has no feature columns")
    w, u = _weights(args)
    result = ranker.train(ds.features, ds.labels, cfg, w, u)
    ranker.save_model(args.out, result.params)
    print(f"trained on {len(ds)} rows; epoch losses {[round(x, 6) for x in result.epoch_losses]}")


def cmd_evaluate(args) -> None:
    ds = dataset.read_dataset(args.dataset)
    results = [evaluator.eval_feed(evaluator.build_feeds(ds, ranker.load_model(m)), args.k) for m in args.models]
    if len(results) == 1:
        evaluator.write_report(args.out, results[0])
    else:
        evaluator.write_lift_report(args.out, results[0], results[1])
    print(f"wrote {args.out}")


def cmd_analyze(args) -> None:
    events = read_event_log_file(args.events)
    if args.labels:
        labels = attribution.read_labels(args.labels)
    else:
        labels = attribution.attribute(events)[2]
    written = analyzer.run_analyses(events, labels, args.out_dir, horizon=args.horizon,
                                    plot_data=args.plot_data)
    print("wrote " + ", ".join(written))


def cmd_pipeline(args) -> None:
    cfg = PipelineConfig.load(args.config)
    if args.seed is not None:
        cfg.gen.rng_seed = args.seed
        cfg.train.rng_seed = args.seed
    if args.out_dir:
        cfg.out_dir = Path(args.out_dir)
    if args.no_train:
        cfg.stages["train"] = False
    result = run_pipeline(cfg)
    if not result.ok:
        raise CLIError(result.error)
    print(f"pipeline complete; manifest at {result.manifest_path}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="revisit-lab", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log stage progress")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config_required=False):
        p.add_argument("--config", required=config_required, help="key-value config file")
        p.add_argument("--seed", type=int, help="seed for every randomized stage")
        return p

    p = common(sub.add_parser("generate", help="generate a synthetic event log"))
    p.add_argument("--out", required=True, help="event log to write")
    p.add_argument("--features-out", help="feature sidecar to write")
    p.set_defaults(func=cmd_generate)

    p = common(sub.add_parser("attribute", help="save->revisit join and revisitation labels"))
    p.add_argument("--events", required=True)
    p.add_argument("--out", required=True, help="labels file")
    p.add_argument("--pairs-out", help="joined (save, revisit) pairs file")
    p.set_defaults(func=cmd_attribute)

    p = common(sub.add_parser("features", help="revisitation pin perf feature tables"))
    p.add_argument("--events", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_features)

    p = common(sub.add_parser("assemble", help="join features and labels into a dataset"))
    p.add_argument("--events", required=True)
    p.add_argument("--sidecar", required=True)
    p.add_argument("--perf", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_assemble)

    p = common(sub.add_parser("train", help="train the multi-task ranker"))
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True, help="model file")
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--u-rp-rv-ratio", type=float, default=ranker.UTILITY_RATIO,
                   help="repin-and-revisit utility as a multiple of the repin utility (default 1.27)")
    p.add_argument("--baseline", action="store_true", help="train without the revisit head")
    p.set_defaults(func=cmd_train)

    p = common(sub.add_parser("evaluate", help="offline metrics; lift of model A over B when two are given"))
    p.add_argument("models", nargs="+", help="one or two model files")
    p.add_argument("--dataset", required=True)
    p.add_argument("--k", type=int, default=3)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = common(sub.add_parser("analyze", help="behavioral analyses as CSV"))
    p.add_argument("--events", required=True)
    p.add_argument("--labels")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--horizon", type=int, default=28)
    p.add_argument("--plot-data", action="store_true", help="also write per-figure CSVs")
    p.set_defaults(func=cmd_analyze)

    p = common(sub.add_parser("pipeline", help="run the end-to-end pipeline"), config_required=True)
    p.add_argument("--out-dir")
    p.add_argument("--no-train", action="store_true", help="stop after dataset assembly and analyses")
    p.set_defaults(func=cmd_pipeline)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "evaluate" and len(args.models) > 2:
        parser.error("evaluate takes one or two model files")
    try:
        args.func(args)
    except FileNotFoundError as exc:
        missing = exc.filename or str(exc)
        print(f"error: file not found: {missing}", file=sys.stderr)
        return 1
    except (CLIError, ConfigError, PipelineError, ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
