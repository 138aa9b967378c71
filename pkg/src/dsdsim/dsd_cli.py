"""Plan, sweep and simulate distributed speculative decoding from the shell."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path
from typing import Optional, Sequence

from dsdsim import dsd_planner, dsd_simkit
from dsdsim.dsd_transport import ChannelConfig
from dsdsim.utils import export

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAIL = 1
EXIT_VALIDATION = 2
EXIT_IO = 3

OUTPUT_DIR_ENV = "DSD_SIM_OUTPUT_DIR"

_PAIR_DEFAULTS = {
    "vocab_size": 32,
    "kind": "static",
    "overlap_lambda": 0.5,
    "target_temp": 1.0,
    "pair_seed": 0,
    "logit_scale": 3.0,
}
_CHANNEL_DEFAULTS = {
    "b_full": 0.23,
    "c": 0.07,
    "prob_bits": 16,
    "uplink_rate": 50e6,
    "downlink_rate": 50e6,
    "include_index_bits": False,
    "include_downlink": False,
}

REQUIRED = {"plan": ("alpha", "b", "c")}

# Every option a subcommand accepts, by argparse destination name.
DEFAULTS = {
    "plan": {"alpha": None, "b": None, "c": None, "format": "text"},
    "sweep-gamma": {
        "alphas": [0.4, 0.6, 0.8],
        "Ls": [0.01, 0.1, 0.2, 0.4, 0.6],
        "gamma_max": 30,
        "out_dir": None,
    },
    "sweep-k": {
        **_PAIR_DEFAULTS,
        **_CHANNEL_DEFAULTS,
        "vocab_size": 32000,
        "ks": [3, 32, 320, 3200, 32000],
        "alpha": None,
        "analytic": False,
        "rounds": 2000,
        "seed": 0,
        "gamma_max": 30,
        "out_dir": None,
    },
    "simulate": {
        **_PAIR_DEFAULTS,
        **_CHANNEL_DEFAULTS,
        "gamma": 4,
        "k": 8,
        "rounds": 10000,
        "seed": 0,
        "replications": 1,
        "workers": None,
        "out": None,
    },
    "verify-equivalence": {
        **_PAIR_DEFAULTS,
        "gamma": 4,
        "k": 4,
        "samples": 20000,
        "seed": 0,
        "break_verifier": False,
        "out": None,
    },
}

EXAMPLE = """
Example usage:

    # Pick DSD or the standalone LLM, and the draft length, for alpha=0.8, L=0.01
    dsd_sim plan --alpha 0.8 --b 0.005 --c 0.005

    # Optimal draft lengths and speedup curves over an (alpha, L) grid
    dsd_sim sweep-gamma --alphas 0.4 0.6 0.8 --Ls 0.01 0.1 0.2 0.4 0.6 --out-dir results/

    # L(K) and the planned draft length per top-K size at an assumed alpha
    dsd_sim sweep-k --ks 3 32 320 3200 32000 --alpha 0.7

    # Measure alpha_K on a synthetic pair and simulate each K
    dsd_sim sweep-k --vocab-size 256 --ks 1 16 256 --overlap-lambda 0.9 --rounds 5000

    # Monte Carlo run of one configuration, metrics as JSON on stdout
    dsd_sim simulate --gamma 4 --k 8 --rounds 20000 --seed 1

    # Check that the emitted tokens follow the target distribution
    dsd_sim verify-equivalence --vocab-size 8 --k 2 --samples 200000

    # Read options from a JSON file; flags given on the command line win
    dsd_sim simulate --config run.json --seed 2
"""


def _add_pair_args(parser: argparse.ArgumentParser):
    group = parser.add_argument_group("synthetic model pair")
    group.add_argument("--vocab-size", type=int, help="Shared vocabulary size.")
    group.add_argument("--kind", choices=["static", "markov"], help="Pair structure.")
    group.add_argument(
        "--overlap-lambda",
        type=float,
        help="Weight of the target logits in the drafter, in [0, 1].",
    )
    group.add_argument("--target-temp", type=float, help="Target temperature.")
    group.add_argument("--pair-seed", type=int, help="Seed of the logit tables.")
    group.add_argument(
        "--logit-scale", type=float, help="Standard deviation of the logits."
    )


def _add_channel_args(parser: argparse.ArgumentParser):
    group = parser.add_argument_group("channel")
    group.add_argument(
        "--b-full",
        type=float,
        help="Uplink cost of the full vocabulary, relative to one LLM step.",
    )
    group.add_argument("--c", type=float, help="SLM step time over LLM step time.")
    group.add_argument("--prob-bits", type=int, choices=[16, 32])
    group.add_argument("--uplink-rate", type=float, help="Uplink rate in bits/s.")
    group.add_argument("--downlink-rate", type=float, help="Downlink rate in bits/s.")
    group.add_argument(
        "--include-index-bits",
        action="store_true",
        default=None,
        help="Count token index bits in the uplink payload.",
    )
    group.add_argument(
        "--include-downlink",
        action="store_true",
        default=None,
        help="Add the verdict's downlink time to each round.",
    )


def get_cli_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dsd_sim",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        description="Draft-length planning and simulation of distributed speculative decoding.",
        epilog=EXAMPLE,
    )
    parser.add_argument(
        "-v",
        "--verbose",
        action="count",
        default=0,
        help="Log progress to stderr (-v for INFO, -vv for DEBUG).",
    )
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument(
        "--config",
        help="JSON file of option values keyed by option name (e.g. 'gamma_max').",
    )
    subparsers = parser.add_subparsers(dest="command", required=True)

    sub = subparsers.add_parser(
        "plan",
        parents=[common],
        allow_abbrev=False,
        help="Choose DSD or the standalone LLM.",
    )
    sub.add_argument("--alpha", type=float, help="Acceptance rate in (0, 1).")
    sub.add_argument("--b", type=float, help="Per-token uplink cost ratio.")
    sub.add_argument("--c", type=float, help="Per-token SLM cost ratio.")
    sub.add_argument("--format", choices=["text", "json"])

    sub = subparsers.add_parser(
        "sweep-gamma",
        parents=[common],
        allow_abbrev=False,
        help="Optimal draft length and speedup curves over (alpha, L).",
    )
    sub.add_argument("--alphas", type=float, nargs="+")
    sub.add_argument("--Ls", type=float, nargs="+", help="Values of L = b + c.")
    sub.add_argument(
        "--gamma-max", type=int, help="Longest draft length considered (default 30)."
    )
    sub.add_argument(
        "--out-dir", help=f"Output directory (default ${OUTPUT_DIR_ENV} or cwd)."
    )

    sub = subparsers.add_parser(
        "sweep-k",
        parents=[common],
        allow_abbrev=False,
        help="Effect of the top-K size on L and speedup.",
    )
    sub.add_argument("--ks", type=int, nargs="+", help="Top-K sizes.")
    sub.add_argument(
        "--alpha",
        type=float,
        help="Assumed acceptance rate; without it alpha_K is measured on the pair.",
    )
    sub.add_argument(
        "--analytic",
        action="store_true",
        default=None,
        help="Compute alpha_K from the pair's distributions instead of a pilot run.",
    )
    sub.add_argument("--rounds", type=int, help="Simulated rounds per K.")
    sub.add_argument("--seed", type=int)
    sub.add_argument("--gamma-max", type=int)
    sub.add_argument("--out-dir")
    _add_pair_args(sub)
    _add_channel_args(sub)

    sub = subparsers.add_parser(
        "simulate",
        parents=[common],
        allow_abbrev=False,
        help="Monte Carlo run of one configuration.",
    )
    sub.add_argument("--gamma", type=int, help="Draft length.")
    sub.add_argument("--k", type=int, help="Top-K size.")
    sub.add_argument("--rounds", type=int)
    sub.add_argument("--seed", type=int)
    sub.add_argument("--replications", type=int)
    sub.add_argument("--workers", type=int, help="Threads running replications.")
    sub.add_argument("--out", help="Write the JSON report here instead of stdout.")
    _add_pair_args(sub)
    _add_channel_args(sub)

    sub = subparsers.add_parser(
        "verify-equivalence",
        parents=[common],
        allow_abbrev=False,
        help="Compare the emitted-token law with the target distribution.",
    )
    sub.add_argument("--gamma", type=int)
    sub.add_argument("--k", type=int)
    sub.add_argument("--samples", type=int)
    sub.add_argument("--seed", type=int)
    sub.add_argument(
        "--break-verifier",
        action="store_true",
        default=None,
        help="Accept every draft (negative control, expected to FAIL).",
    )
    sub.add_argument("--out")
    _add_pair_args(sub)
    return parser


def _load_config_file(path: str) -> dict:
    with open(path) as f:
        params = json.load(f)
    if not isinstance(params, dict):
        raise ValueError(f"Config file {path} must hold a JSON object")
    return params


def resolve_config(args: argparse.Namespace) -> dict:
    """Merge built-in defaults < config file < explicit flags."""
    defaults = DEFAULTS[args.command]
    file_params = _load_config_file(args.config) if args.config else {}
    unknown = set(file_params) - set(defaults)
    if unknown:
        raise ValueError(
            f"Unknown option(s) for {args.command} in {args.config}: {sorted(unknown)}"
        )
    flags = {
        name: value
        for name, value in vars(args).items()
        if name in defaults and value is not None
    }
    config = {**defaults, **file_params, **flags}
    missing = [name for name in REQUIRED.get(args.command, ()) if config[name] is None]
    if missing:
        raise ValueError(f"Missing required option(s): {missing}")
    return config


def _pair_spec(config: dict) -> dsd_simkit.SyntheticPairSpec:
    return dsd_simkit.SyntheticPairSpec(
        vocab_size=config["vocab_size"],
        kind=config["kind"],
        overlap_lambda=config["overlap_lambda"],
        target_temp=config["target_temp"],
        seed=config["pair_seed"],
        logit_scale=config["logit_scale"],
    )


def _channel(config: dict) -> ChannelConfig:
    return ChannelConfig.from_ratios(
        b_full=config["b_full"],
        c=config["c"],
        vocab_size=config["vocab_size"],
        prob_bits=config["prob_bits"],
        uplink_rate=config["uplink_rate"],
        downlink_rate=config["downlink_rate"],
        include_index_bits=config["include_index_bits"],
        include_downlink=config["include_downlink"],
    )


def _output_dir(config: dict) -> Path:
    out_dir = config["out_dir"] or os.environ.get(OUTPUT_DIR_ENV) or "."
    return Path(out_dir)


def cmd_plan(config: dict) -> int:
    plan = dsd_planner.as2(config["alpha"], config["b"], config["c"])
    result = {
        "mode": plan.mode.value,
        "gamma_star": plan.gamma_star,
        "gamma_zero": plan.gamma_zero,
        "s_star": plan.s_star,
        "alpha": plan.alpha,
        "L": plan.L,
    }
    if config["format"] == "json":
        export.dump_json({"config": config, "plan": result})
    else:
        for key, value in result.items():
            print(f"{key}: {value}")
    return EXIT_OK


def cmd_sweep_gamma(config: dict) -> int:
    rows, curves = dsd_planner.sweep_table(
        config["alphas"], config["Ls"], gamma_max=config["gamma_max"], with_curves=True
    )
    out_dir = _output_dir(config)
    table_file = export.write_csv(export.plan_table(rows), out_dir / "gamma_table.csv")
    curve_file = export.write_csv(export.curve_table(curves), out_dir / "gamma_curves.csv")
    summary = {
        "config": config,
        "files": {"table": str(table_file), "curves": str(curve_file)},
        "n_cells": len(rows),
    }
    export.dump_json(summary, out_dir / "gamma_sweep.json")
    export.dump_json(summary)
    return EXIT_OK


def cmd_sweep_k(config: dict) -> int:
    channel = _channel(config)
    if config["alpha"] is not None:
        rows = dsd_simkit.k_plan(
            config["alpha"], config["ks"], channel, gamma_max=config["gamma_max"]
        )
        df = export.k_plan_table(rows)
    else:
        rows = dsd_simkit.k_sweep(
            _pair_spec(config),
            config["ks"],
            channel,
            n_rounds=config["rounds"],
            seed=config["seed"],
            analytic=config["analytic"],
            gamma_max=config["gamma_max"],
        )
        df = export.k_sweep_table(rows)
    out_dir = _output_dir(config)
    table_file = export.write_csv(df, out_dir / "k_table.csv")
    summary = {"config": config, "files": {"table": str(table_file)}, "n_cells": len(df)}
    export.dump_json(summary, out_dir / "k_sweep.json")
    export.dump_json(summary)
    return EXIT_OK


def cmd_simulate(config: dict) -> int:
    spec = _pair_spec(config)
    channel = _channel(config)
    metrics = dsd_simkit.monte_carlo(
        spec,
        config["gamma"],
        config["k"],
        channel,
        n_rounds=config["rounds"],
        seed=config["seed"],
        n_replications=config["replications"],
        max_workers=config["workers"],
    )
    export.dump_json({"config": config, "metrics": metrics.to_dict()}, config["out"])
    return EXIT_OK


def cmd_verify_equivalence(config: dict) -> int:
    accept_rule = dsd_simkit.accept_always if config["break_verifier"] else None
    report = dsd_simkit.equivalence_report(
        _pair_spec(config),
        config["gamma"],
        config["k"],
        n_samples=config["samples"],
        seed=config["seed"],
        accept_rule=accept_rule,
    )
    export.dump_json({"config": config, "report": report.to_dict()}, config["out"])
    print(report.verdict, file=sys.stderr)
    return EXIT_OK if report.passed else EXIT_FAIL


COMMANDS = {
    "plan": cmd_plan,
    "sweep-gamma": cmd_sweep_gamma,
    "sweep-k": cmd_sweep_k,
    "simulate": cmd_simulate,
    "verify-equivalence": cmd_verify_equivalence,
}


def _configure_logging(verbosity: int):
    level = {0: logging.WARNING, 1: logging.INFO}.get(verbosity, logging.DEBUG)
    logging.basicConfig(
        level=level,
        stream=sys.stderr,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = get_cli_parser().parse_args(argv)
    _configure_logging(args.verbose)
    try:
        config = resolve_config(args)
        return COMMANDS[args.command](config)
    except (ValueError, TypeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
