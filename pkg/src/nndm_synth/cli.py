"""Command line front end.

Subcommands mirror the pipeline stages: `abstract` builds the interval
abstraction, `synthesize` runs the DFA product and value iteration without
refinement, `refine` runs the full refinement loop, `simulate` Monte Carlo
checks a saved result, and `run` does everything including the simulation
check. Artifacts travel between invocations as pickles in the output
directory (abstraction.pkl, result.pkl) next to the CSV/JSON outputs.
"""

from __future__ import annotations

import argparse
import os
import pickle
import sys

from .networks import load_networks
from .pipeline import (
    PipelineConfig,
    build_abstraction,
    emit_outputs,
    gap_stats,
    run_pipeline,
    validate_monte_carlo,
)


def _load_config(args) -> PipelineConfig:
    config = PipelineConfig.from_json(args.config)
    if getattr(args, "threads", None) is not None:
        config.threads = args.threads
    if getattr(args, "seed", None) is not None:
        config.seed = args.seed
    return config


def _require_network(config: PipelineConfig):
    if config.network is None:
        raise ValueError("config must name a network file")
    return load_networks(config.network)


def _load_pickle(outdir: str, name: str):
    path = os.path.join(outdir, name)
    if not os.path.exists(path):
        return None
    with open(path, "rb") as fh:
        return pickle.load(fh)


def _save_pickle(outdir: str, name: str, obj) -> str:
    os.makedirs(outdir, exist_ok=True)
    path = os.path.join(outdir, name)
    with open(path, "wb") as fh:
        pickle.dump(obj, fh)
    return path


def _print_result(result) -> None:
    grid = result.abstraction.grid
    counts = {k: 0 for k in ("yes", "no", "maybe")}
    for c in result.classes:
        counts[str(c)] += 1
    mean_gap, max_gap = gap_stats(grid, result.p_lower, result.p_upper)
    print(
        f"{grid.num_cells} cells, {result.product.num_states} product states, "
        f"{len(result.rounds)} refinement rounds"
    )
    print(
        f"classes: yes={counts['yes']} no={counts['no']} maybe={counts['maybe']}; "
        f"gap mean={mean_gap:.4f} max={max_gap:.4f}"
    )
    print(
        f"value iteration: {result.lower.sweeps}+{result.upper.sweeps} sweeps, "
        f"converged={result.lower.converged and result.upper.converged}"
    )
    if result.validation is not None:
        print(
            f"simulation: {len(result.validation['cells'])} start cells, "
            f"{result.validation['num_inconsistent']} inconsistent"
        )


def _cmd_abstract(args) -> int:
    config = _load_config(args)
    nd = _require_network(config)
    abstraction = build_abstraction(nd, config)
    path = _save_pickle(args.out, "abstraction.pkl", abstraction)
    print(
        f"abstraction: {abstraction.grid.num_cells} cells x {len(nd.actions)} actions "
        f"-> {len(abstraction.imdp.rows)} transition rows"
    )
    print(f"saved {path}")
    return 0


def _cmd_synthesize(args) -> int:
    config = _load_config(args)
    config.refinement.rounds = 0
    abstraction = _load_pickle(args.out, "abstraction.pkl")
    nd = abstraction.dynamics if abstraction is not None else _require_network(config)
    result = run_pipeline(config, nd=nd, outdir=args.out, abstraction=abstraction)
    _save_pickle(args.out, "result.pkl", result)
    _print_result(result)
    return 0


def _cmd_refine(args) -> int:
    config = _load_config(args)
    if args.rounds is not None:
        config.refinement.rounds = args.rounds
    if args.per_round is not None:
        config.refinement.per_round = args.per_round
    result = run_pipeline(config, nd=_require_network(config), outdir=args.out)
    _save_pickle(args.out, "result.pkl", result)
    _print_result(result)
    return 0


def _cmd_simulate(args) -> int:
    result = _load_pickle(args.out, "result.pkl")
    if result is None:
        raise ValueError(f"no result.pkl in {args.out}; run synthesize/refine/run first")
    if args.trials is not None:
        result.config.sim_trials = args.trials
    if args.start_cells is not None:
        result.config.sim_start_cells = args.start_cells
    if args.seed is not None:
        result.config.seed = args.seed
    result.validation = validate_monte_carlo(result)
    emit_outputs(result, args.out)
    _save_pickle(args.out, "result.pkl", result)
    print(
        f"simulation: {len(result.validation['cells'])} start cells x "
        f"{result.validation['trials']} trials, "
        f"{result.validation['num_inconsistent']} inconsistent"
    )
    return 0


def _cmd_run(args) -> int:
    config = _load_config(args)
    result = run_pipeline(config, nd=_require_network(config), outdir=args.out, monte_carlo=True)
    _save_pickle(args.out, "result.pkl", result)
    _print_result(result)
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="nndm-synth",
        description="Certified controller synthesis for neural dynamic models "
        "with additive Gaussian noise.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(sp, config_required=True):
        if config_required:
            sp.add_argument("--config", required=True, help="pipeline config JSON")
        sp.add_argument("--out", required=True, help="output directory")
        sp.add_argument("--threads", type=int, help="worker threads for the row build")
        sp.add_argument("--seed", type=int, help="override the config seed")

    sp = sub.add_parser("abstract", help="build the interval abstraction only")
    common(sp)
    sp.set_defaults(fn=_cmd_abstract)

    sp = sub.add_parser("synthesize", help="product + value iteration, no refinement")
    common(sp)
    sp.set_defaults(fn=_cmd_synthesize)

    sp = sub.add_parser("refine", help="full pipeline with refinement rounds")
    common(sp)
    sp.add_argument("--rounds", type=int, help="override refinement rounds")
    sp.add_argument("--per-round", dest="per_round", type=int, help="override cells split per round")
    sp.set_defaults(fn=_cmd_refine)

    sp = sub.add_parser("simulate", help="Monte Carlo check of a saved result")
    common(sp, config_required=False)
    sp.add_argument("--trials", type=int, help="trajectories per start cell")
    sp.add_argument("--start-cells", dest="start_cells", type=int, help="number of start cells")
    sp.set_defaults(fn=_cmd_simulate)

    sp = sub.add_parser("run", help="everything: abstraction, synthesis, refinement, simulation")
    common(sp)
    sp.set_defaults(fn=_cmd_run)

    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
