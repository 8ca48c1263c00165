"""Command-line entry point.

Exit status: 0 on success, 1 when a run fails (partial logs are kept on
disk), 2 on usage or configuration errors.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
from datetime import datetime, timezone
from pathlib import Path

from netprompt import llm, mocks
from netprompt.baselines import ArimaFitError, ForecastInputError, LstmForecasterConfig, TrainingError
from netprompt.harness import pipelines
from netprompt.harness.config import ConfigFileError, OptimizeConfig
from netprompt.harness.report import ReportError, build_report
from netprompt.netsim import ConfigError, NetworkConfig, create_env, toy_config
from netprompt.tspredict import (
    IngestError,
    RefineConfig,
    SchemaError,
    SplitError,
    aggregate_grid,
    synthetic_cells,
    write_milan_file,
)

logger = logging.getLogger("netprompt")

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2
SYNTH_START = datetime(2013, 11, 1, tzinfo=timezone.utc)


class UsageError(Exception):
    pass


def _provider_args(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("LLM provider")
    g.add_argument("--mock-script", type=Path, help="JSON list of {match|hash, response} entries")
    rr = g.add_mutually_exclusive_group()
    rr.add_argument("--record", type=Path, metavar="PATH", help="append a JSONL transcript of every call")
    rr.add_argument("--replay", type=Path, metavar="PATH", help="serve responses from a recorded transcript")
    g.add_argument("--base-url", default=os.environ.get("LLM_BASE_URL"),
                   help="chat-completions endpoint (default: $LLM_BASE_URL)")
    g.add_argument("--model", default=None, help="model name sent with each request")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="netprompt", description="LLM-driven network optimization and "
                                     "traffic prediction experiments.")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="aggregate a Milan-format grid file into station series")
    p.add_argument("path", type=Path)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--grid-width", type=int, default=100)
    p.add_argument("--block", type=int, default=4)

    p = sub.add_parser("synth", help="write a synthetic Milan-format grid file")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--days", type=int, default=30)
    p.add_argument("--grid-width", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("optimize", help="run a power-control agent")
    p.add_argument("--agent", choices=("llm", "dqn", "random"), required=True)
    p.add_argument("--config", type=Path, help="experiment JSON (network, agent, episodes, ...)")
    p.add_argument("--toy", action="store_true", help="use the 2-station, 2-level toy network")
    p.add_argument("--episodes", type=int)
    p.add_argument("--steps", type=int, help="steps per episode")
    p.add_argument("--seed", type=int)
    p.add_argument("--oracle", action="store_true", help="llm agent: answer with the brute-force best action")
    p.add_argument("--out", type=Path, required=True)
    _provider_args(p)

    p = sub.add_parser("predict", help="forecast next-day traffic for one station")
    p.add_argument("--method", choices=pipelines.PREDICT_METHODS, required=True)
    p.add_argument("--bs", type=int, required=True, help="aggregated station id")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--data", type=Path, help="directory written by 'ingest'")
    src.add_argument("--synthetic", action="store_true", help="generate a synthetic grid in memory")
    p.add_argument("--days", type=int, default=30, help="days of synthetic data")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--mock", choices=("feedback-following", "persistence", "scaled-truth"),
                   help="offline stand-in for the LLM")
    p.add_argument("--max-iters", type=int, default=5)
    p.add_argument("--tol", type=float, default=0.01)
    p.add_argument("--no-carry-context", action="store_true",
                   help="do not show the last validation conversation on test days")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--epochs", type=int, default=200, help="LSTM epochs")
    p.add_argument("--out", type=Path, required=True)
    _provider_args(p)

    p = sub.add_parser("report", help="build comparison tables from finished runs")
    p.add_argument("--runs", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    return parser


def make_provider(args, fallback=None):
    """Pick the provider from the flags; ``fallback`` is a built-in mock."""
    if args.replay:
        if not args.replay.exists():
            raise UsageError(f"transcript {args.replay} does not exist")
        return llm.ReplayProvider(args.replay)
    if args.mock_script:
        inner = llm.load_mock_script(args.mock_script)
    elif fallback is not None:
        inner = fallback
    elif args.base_url:
        inner = llm.HttpProvider(llm.ProviderConfig(base_url=args.base_url))
    else:
        raise UsageError("no LLM provider: pass --base-url, --mock-script, --replay or a built-in mock")
    if args.record:
        # Start a fresh transcript so replays see exactly this run.
        args.record.unlink(missing_ok=True)
        return llm.RecordingProvider(inner, args.record)
    return inner


def cmd_ingest(args) -> int:
    summary = pipelines.run_ingest(args.path, args.out, args.grid_width, args.block)
    print(f"ingested {summary['n_rows']} rows into {summary['n_series']} series of {summary['n_hours']} hours "
          f"-> {args.out}")
    return EXIT_OK


def cmd_synth(args) -> int:
    cells = synthetic_cells(args.days, args.grid_width, args.seed)
    args.out.parent.mkdir(parents=True, exist_ok=True)
    n = write_milan_file(args.out, cells, SYNTH_START)
    print(f"wrote {n} rows -> {args.out}")
    return EXIT_OK


def cmd_optimize(args) -> int:
    cfg = OptimizeConfig.load(args.config) if args.config else OptimizeConfig()
    if args.seed is not None:
        cfg.seed = args.seed
    if args.toy:
        cfg.network = toy_config(cfg.seed)
    elif args.seed is not None:
        cfg.network = NetworkConfig.from_dict({**cfg.network.to_dict(), "seed": args.seed})
    if args.episodes is not None:
        cfg.episodes = args.episodes
    if args.steps is not None:
        cfg.steps_per_episode = args.steps
    if args.model:
        cfg.agent["model"] = args.model
    if args.agent == "llm":
        # The oracle inspects the live environment, so build it first and share it.
        env = create_env(cfg.network)
        provider = make_provider(args, mocks.greedy_oracle(env) if args.oracle else None)
        log = pipelines.run_optimize("llm", cfg, args.out, provider, env)
    else:
        log = pipelines.run_optimize(args.agent, cfg, args.out)
    rows = log.episode_summary()
    print(f"{args.agent}: {len(log.steps)} steps, final episode mean power {rows[-1]['mean_power_w']:.4g} W, "
          f"service quality {rows[-1]['service_quality']:.3f} -> {args.out}")
    return EXIT_OK


def cmd_predict(args) -> int:
    if args.synthetic:
        cells = synthetic_cells(args.days, 100, args.seed)
        all_series = aggregate_grid(cells, block=4, start=SYNTH_START)
        if not 0 <= args.bs < len(all_series):
            raise UsageError(f"--bs must lie in 0..{len(all_series) - 1}")
        series = all_series[args.bs]
        source = {"synthetic": True, "days": args.days, "seed": args.seed}
    else:
        try:
            series = pipelines.load_series(args.data, args.bs)
        except (ValueError, KeyError) as exc:
            raise UsageError(f"station {args.bs} not found in {args.data}") from exc
        source = {"data": args.data.name}
    provider = None
    if args.method in pipelines.LLM_METHODS:
        fallback = None
        if args.mock:
            fallback = pipelines.llm_mock(args.mock, pipelines.truth_by_date(series))
        provider = make_provider(args, fallback)
    refine = RefineConfig(max_iters=args.max_iters, tol=args.tol, carry_validation_context=not args.no_carry_context,
                          workers=args.workers, model=args.model or "mock")
    metrics = pipelines.run_predict(args.method, series, args.out, provider, refine,
                                    LstmForecasterConfig(epochs=args.epochs, seed=args.seed), source=source)
    print(f"{args.method} bs {args.bs}: {metrics['n_days']} test days, MAE {metrics['mae']:.4g}, "
          f"MSE {metrics['mse']:.4g} -> {args.out}")
    return EXIT_OK


def cmd_report(args) -> int:
    rep = build_report(args.runs, args.out)
    methods = sorted({r["method"] for r in rep.prediction + rep.optimization})
    print(f"report over {len(rep.configs)} runs ({', '.join(methods)}) -> {args.out}")
    if rep.skipped:
        print(f"skipped unfinished runs: {', '.join(rep.skipped)}", file=sys.stderr)
    return EXIT_OK


COMMANDS = {"ingest": cmd_ingest, "synth": cmd_synth, "optimize": cmd_optimize, "predict": cmd_predict,
            "report": cmd_report}
USAGE_ERRORS = (UsageError, ConfigFileError, ConfigError, llm.ConfigurationError, FileNotFoundError)
RUN_ERRORS = (pipelines.RunFailed, llm.LLMError, ArimaFitError, TrainingError, ForecastInputError, IngestError,
              SchemaError, SplitError, ReportError)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except USAGE_ERRORS as exc:
        print(f"netprompt {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except RUN_ERRORS as exc:
        print(f"netprompt {args.command}: run failed: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
