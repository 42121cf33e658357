"""Command-line surface: simulate, annotate, stats, train, baselines, sweep,
serve, replay.

Exit codes: 0 on success, 1 on errors, 10 when an experiment stops to await
human corrections (queue persisted, resume with `replay` + `train --journal`).
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import fileformats as ff
from .annotation import annotation_stats, apply_correction
from .pipeline import (
    STATUS_AWAITING,
    ConfigError,
    ExperimentConfig,
    run_annotation,
    run_baseline_suite,
    run_experiment,
    run_lambda_sweep,
    run_simulate,
)

EXIT_AWAITING = 10


def _load_config(args) -> ExperimentConfig:
    raw = {}
    if args.config:
        path = Path(args.config)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        raw = json.loads(path.read_text(encoding="utf-8"))
    cfg = ExperimentConfig.from_dict(raw)
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    return cfg


def _common(parser: argparse.ArgumentParser, out_required: bool = True) -> None:
    parser.add_argument("--config", help="experiment config JSON (defaults apply if omitted)")
    parser.add_argument("--seed", type=int, help="master seed override (rederives component seeds)")
    parser.add_argument("--out", required=out_required, help="output directory for artifacts")


def _print_metrics(metrics: dict) -> None:
    for key, value in metrics.items():
        print(f"{key}: {value}")


def cmd_simulate(args) -> int:
    result = run_simulate(_load_config(args), args.out)
    _print_metrics(result.metrics)
    print(f"artifacts: {result.out_dir}")
    return 0


def cmd_annotate(args) -> int:
    result = run_annotation(_load_config(args), args.out, resume_journal=args.journal)
    _print_metrics(result.metrics)
    print(f"status: {result.status}")
    if result.status == STATUS_AWAITING:
        print(f"journal persisted at {result.out_dir / 'journal.jsonl'}; "
              "serve it and replay the exported corrections")
        return EXIT_AWAITING
    return 0


def cmd_stats(args) -> int:
    run, queue, _, _ = ff.replay_journal(args.journal)
    if not queue.is_drained():
        print(f"queue not drained: {queue.n_pending} pending", file=sys.stderr)
        return 1
    ground_truth = ff.read_labels(Path(args.ground_truth))
    stats = annotation_stats(run, ground_truth)
    print(json.dumps(stats.as_dict(), indent=2, sort_keys=True))
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        ff.write_json(out / "annotation_stats.json", stats.as_dict())
    return 0


def cmd_train(args) -> int:
    result = run_experiment(_load_config(args), args.out, resume_journal=args.journal)
    _print_metrics(result.metrics)
    print(f"status: {result.status}")
    return EXIT_AWAITING if result.status == STATUS_AWAITING else 0


def cmd_baselines(args) -> int:
    result = run_baseline_suite(_load_config(args), args.out)
    _print_metrics(result.metrics)
    return 0


def cmd_sweep(args) -> int:
    grid = [float(v) for v in args.grid.split(",") if v.strip() != ""]
    result = run_lambda_sweep(_load_config(args), args.out, grid)
    for row in result.metrics["rows"]:
        print(f"lambda={row['lambda']}: test_accuracy={row['final_test_accuracy']}")
    return 0


def cmd_replay(args) -> int:
    run, queue, class_names, metas = ff.replay_journal(args.journal)
    applied = 0
    for row in ff.read_corrections(Path(args.corrections)):
        apply_correction(
            run, queue, str(row["sample_id"]), int(row["label"]), str(row.get("provenance", "human"))
        )
        applied += 1
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    journal_out = out / "journal.jsonl"
    ff.write_journal(journal_out, run, class_names, metas)
    print(f"applied {applied} corrections; {queue.n_pending} still pending")
    print(f"journal: {journal_out}")
    if args.ground_truth and queue.is_drained():
        stats = annotation_stats(run, ff.read_labels(Path(args.ground_truth)))
        ff.write_json(out / "annotation_stats.json", stats.as_dict())
        print(json.dumps(stats.as_dict(), indent=2, sort_keys=True))
    return 0 if queue.is_drained() else EXIT_AWAITING


def cmd_serve(args) -> int:
    import uvicorn

    from .service import SessionStore, create_app

    store = SessionStore(args.sessions)
    if args.journal:
        session_id = store.create_session(args.journal)
        print(f"session created: {session_id}")
    app = create_app(store, ui_dir=args.ui_dir, dev_cors=args.dev_cors)
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hclpipe", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate a synthetic dataset and write its artifacts")
    _common(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("annotate", help="annotate a dataset and persist the journal")
    _common(p)
    p.add_argument("--journal", help="resume from an existing journal instead of annotating")
    p.set_defaults(func=cmd_annotate)

    p = sub.add_parser("stats", help="label-quality stats from a drained journal")
    p.add_argument("--journal", required=True)
    p.add_argument("--ground-truth", required=True, help="JSON Lines id/label file")
    p.add_argument("--out", help="optional directory for annotation_stats.json")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("train", help="run the full experiment (annotate, correct, train)")
    _common(p)
    p.add_argument("--journal", help="train from this (completed) journal instead of annotating")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("baselines", help="train every supervision view on one split")
    _common(p)
    p.set_defaults(func=cmd_baselines)

    p = sub.add_parser("sweep", help="one training per blend-weight grid point")
    _common(p)
    p.add_argument("--grid", default="0,0.2,0.4,0.6,0.8,1.0", help="comma-separated weights in [0,1]")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("serve", help="serve correction sessions over HTTP")
    p.add_argument("--sessions", required=True, help="directory holding session journals")
    p.add_argument("--journal", help="create a session from this run journal at startup")
    p.add_argument("--ui-dir", help="static directory with the correction UI bundle")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8787)
    p.add_argument("--dev-cors", action="store_true", help="permissive CORS for UI development")
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("replay", help="apply exported corrections to a journal")
    p.add_argument("--journal", required=True)
    p.add_argument("--corrections", required=True, help="JSON Lines exported by the service")
    p.add_argument("--out", required=True)
    p.add_argument("--ground-truth", help="optional id/label file to emit stats when complete")
    p.set_defaults(func=cmd_replay)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ff.FormatError, FileNotFoundError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
