"""Command-line entry point: ``adrewrite <subcommand> --config run.json``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 backend error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from ..errors import BackendError, DataError
from ..loss_reward import LossWeights
from .config import ExperimentConfig, load_config, with_overrides
from . import pipeline

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_BACKEND = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _k_list(text: str) -> tuple[int, ...]:
    return tuple(int(x) for x in text.split(",") if x.strip())


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="experiment config (JSON)")
    common.add_argument("--k", type=_k_list, help="comma-separated k grid, e.g. 1,3,5,10")
    common.add_argument("--weights", type=LossWeights.parse, help="loss weights alpha,beta,gamma")
    common.add_argument("--strategy", help="general-rewrite | instruction-cot | few-shot-cot")
    common.add_argument("--seed", type=int)
    common.add_argument("--workers", type=int)
    common.add_argument("-v", "--verbose", action="store_true")

    parser = _Parser(prog="adrewrite", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    ingest = sub.add_parser("ingest", parents=[common], help="validate corpora, report the relevance join")
    ingest.add_argument("--generate-queries", type=int, default=0, metavar="N",
                        help="ask the rewrite LLM for N queries per uncovered label pair")
    sub.add_parser("index", parents=[common], help="embed ads and write the index snapshot")
    rw = sub.add_parser("rewrite", parents=[common], help="rewrite the test ads")
    rw.add_argument("--resume", action="store_true", help="only redo ads missing from the output")
    sub.add_parser("evaluate", parents=[common], help="delta-MRR@k / delta-DIR@k for the rewrites")
    abl = sub.add_parser("ablate", parents=[common], help="loss-weight ablation grid")
    abl.add_argument("--extra-weighting", action="append", default=[], metavar="A,B,G")
    rep = sub.add_parser("report", parents=[common], help="render summaries as tables")
    rep.add_argument("runs", nargs="*", help="report directories or summary.json files")
    rep.add_argument("--out", help="directory for report.txt and series.csv")
    srv = sub.add_parser("serve-reward", parents=[common], help="run the HTTP reward endpoint")
    srv.add_argument("--host")
    srv.add_argument("--port", type=int)
    return parser


def _config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    extra = tuple(getattr(args, "extra_weighting", ()) or ()) or None
    return with_overrides(
        cfg,
        k_grid=args.k,
        weights=args.weights,
        strategy=args.strategy,
        seed=args.seed,
        workers=args.workers,
        extra_weightings=(cfg.extra_weightings + extra) if extra else None,
        host=getattr(args, "host", None),
        port=getattr(args, "port", None),
    )


def run(args) -> int:
    if args.command == "report":
        paths = list(args.runs)
        if not paths and args.config:
            paths = [load_config(args.config).reports_out]
        paths = [p for p in paths if Path(p).exists()]
        text, series = pipeline.cmd_report(paths)
        sys.stdout.write(text)
        if args.out:
            out = Path(args.out)
            out.mkdir(parents=True, exist_ok=True)
            (out / "report.txt").write_text(text, encoding="utf-8")
            (out / "series.csv").write_text(series, encoding="utf-8")
        return EXIT_OK

    cfg = _config(args)
    if args.command == "ingest":
        print(json.dumps(pipeline.cmd_ingest(cfg, generate=args.generate_queries), indent=2))
    elif args.command == "index":
        index = pipeline.cmd_index(cfg)
        print(f"indexed {len(index)} ads -> {cfg.snapshot_path}")
    elif args.command == "rewrite":
        res = pipeline.cmd_rewrite(cfg, resume=args.resume)
        print(f"{len(res.pairs)} rewrites ({res.reused} reused), {len(res.failures)} failures -> {cfg.rewrites_out}")
    elif args.command == "evaluate":
        res = pipeline.cmd_evaluate(cfg)
        print(f"evaluated {len(res.evaluated_ads)} ads, skipped {len(res.skipped)} -> {cfg.reports_out}")
        text, _ = pipeline.cmd_report([cfg.reports_out])
        sys.stdout.write(text)
    elif args.command == "ablate":
        rows = pipeline.cmd_ablate(cfg)
        print(f"{len(rows)} weightings -> {Path(cfg.reports_out) / 'ablation.csv'}")
    elif args.command == "serve-reward":
        from .server import serve_reward

        serve_reward(cfg)
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return run(args)
    except BackendError as exc:
        print(f"backend error: {exc}", file=sys.stderr)
        return EXIT_BACKEND
    except (DataError, OSError, json.JSONDecodeError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
