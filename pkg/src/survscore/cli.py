"""Command line entry point: ``survscore {rank,derive,evaluate,score,synth,run}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .errors import SurvScoreError, ValidationError
from .pipeline import PipelineConfig, cmd_derive, cmd_evaluate, cmd_rank, cmd_score, cmd_synth, run_all
from .scorecard import ScoreCard
from .synth import SynthSpec

log = logging.getLogger("survscore")


def _parse_set(items):
    """``a.b=value`` pairs into a nested dict; values parse as JSON when they can."""
    out = {}
    for item in items or ():
        if "=" not in item:
            raise ValidationError(f"--set expects key=value, got {item!r}")
        key, raw = item.split("=", 1)
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = out
        parts = key.split(".")
        for p in parts[:-1]:
            node = node.setdefault(p, {})
        node[parts[-1]] = value
    return out


def _config(args) -> PipelineConfig:
    overrides = _parse_set(args.set)
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.out_dir is not None:
        overrides["out_dir"] = args.out_dir
    if args.workers is not None:
        overrides["workers"] = args.workers
    return PipelineConfig.load(args.config, overrides)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="survscore", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def pipeline_cmd(name, help_):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", required=True, help="JSON pipeline config")
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key (dotted)")
        p.add_argument("--seed", type=int)
        p.add_argument("--out-dir")
        p.add_argument("--workers", type=int)
        return p

    pipeline_cmd("rank", "grow the forest on the training split and write ranking.csv")
    pipeline_cmd("derive", "parsimony sweep and scorecard derivation")
    ev = pipeline_cmd("evaluate", "metrics, risk strata and KM curves on the test split")
    ev.add_argument("--card", help="scorecard.json or scorecard.csv (default: <out-dir>/scorecard.json)")
    pipeline_cmd("run", "rank, derive and evaluate in one go")

    sc = sub.add_parser("score", help="score patients with a scorecard")
    sc.add_argument("--card", required=True)
    sc.add_argument("--patients", required=True)
    sc.add_argument("--out", required=True)

    sy = sub.add_parser("synth", help="generate a synthetic survival dataset")
    sy.add_argument("--spec", help="JSON synth spec")
    sy.add_argument("--set", action="append", metavar="KEY=VALUE")
    sy.add_argument("--seed", type=int)
    sy.add_argument("--out", required=True)
    return parser


def _load_card(path) -> ScoreCard:
    path = Path(path)
    return ScoreCard.from_csv(path) if path.suffix.lower() == ".csv" else ScoreCard.from_json(path)


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command in ("rank", "derive", "evaluate", "run"):
        cfg = _config(args)
        if args.command == "rank":
            cmd_rank(cfg)
        elif args.command == "derive":
            cmd_derive(cfg)
        elif args.command == "evaluate":
            card = _load_card(args.card or cfg.out_dir / "scorecard.json")
            cmd_evaluate(cfg, card)
        else:
            run_all(cfg)
    elif args.command == "score":
        cmd_score(_load_card(args.card), args.patients, args.out)
    elif args.command == "synth":
        spec = json.loads(Path(args.spec).read_text()) if args.spec else {}
        spec.update(_parse_set(args.set))
        if args.seed is not None:
            spec["seed"] = args.seed
        cmd_synth(SynthSpec.from_dict(spec), args.out)
    return 0


def main(argv=None):
    try:
        code = run(argv)
    except SurvScoreError as exc:
        print(f"error: {exc}", file=sys.stderr)
        code = exc.exit_code
    except (OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        code = 3 if isinstance(exc, OSError) else 1
    except (TypeError, KeyError) as exc:
        print(f"error: invalid configuration: {exc}", file=sys.stderr)
        code = 1
    sys.exit(code)


if __name__ == "__main__":
    main()
