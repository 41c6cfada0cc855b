"""Command line front end: run sweeps, summarize exports, replay solver dumps.

Exit codes: 0 success, 2 invalid configuration or arguments, 3 solver
verification failure, 4 I/O failure. Verbosity is controlled only by the
BACKHAULSIM_LOG environment variable (debug/info/warning/error).
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import yaml

from .harness import ConfigError, export, load_runs, load_scenario, run, summarize
from .ratealloc import (AllocError, InfeasibleError, ScaProblem,
                        grid_reference, sca_solve)
from .scheduler import POLICIES

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SOLVER = 3
EXIT_IO = 4

log = logging.getLogger("backhaulsim")

# grid oracle cost is steps**edges; keep the point count roughly constant
_GRID_STEPS = {1: 2000, 2: 200, 3: 60, 4: 30, 5: 16}


def _setup_logging() -> None:
    name = os.environ.get("BACKHAULSIM_LOG", "warning").upper()
    level = getattr(logging, name, None)
    if not isinstance(level, int):
        level = logging.WARNING
    logging.basicConfig(level=level,
                        format="%(levelname)s %(name)s: %(message)s")


def _cmd_run(args: argparse.Namespace) -> int:
    scn = load_scenario(args.config)
    policies = (args.policy,) if args.policy else None
    seeds = None
    if args.seeds:
        try:
            seeds = tuple(int(s) for s in args.seeds.split(","))
        except ValueError:
            raise ConfigError("--seeds", "expected a comma-separated int list")
    log.info("running %s: policies=%s seeds=%s", args.config,
             policies or scn.scheduler.policies, seeds or scn.run.seeds)
    metrics = run(scn, policies=policies, seeds=seeds)
    summary = summarize(metrics)
    paths = export(metrics, summary, args.out)
    for name in sorted(paths):
        print(paths[name])
    return EXIT_OK


def _cmd_summarize(args: argparse.Namespace) -> int:
    metrics = load_runs(args.indir)
    print(json.dumps(summarize(metrics), indent=2, sort_keys=True))
    return EXIT_OK


def _monotone(history) -> bool:
    return all(b <= a + 1e-9 * (1.0 + abs(a))
               for a, b in zip(history, history[1:]))


def _cmd_replay(args: argparse.Namespace) -> int:
    path = Path(args.dump)
    if not path.exists():
        raise IOError(f"dump file {path} not found")
    records = [json.loads(line)
               for line in path.read_text().splitlines() if line.strip()]
    failures = 0
    gridded = 0
    for i, rec in enumerate(records):
        problem = ScaProblem.from_dict(rec["problem"])
        bad = []
        res = None
        try:
            res = sca_solve(problem, raise_on_max_iter=False)
        except InfeasibleError:
            pass
        if res is not None:
            if not _monotone(res.history):
                bad.append("objective not monotone")
            if not res.original_feasible:
                bad.append("solution violates original constraints")
        n_edges = sum(len(c.gains) for c in problem.chains)
        if n_edges <= 5:
            gridded += 1
            gobj = None
            try:
                gobj, _ = grid_reference(problem,
                                         steps=_GRID_STEPS[n_edges], refine=3)
            except InfeasibleError:
                pass
            if res is None and gobj is not None:
                # the grid point certifies feasibility the solver missed
                bad.append(f"solver infeasible but grid found {gobj:.6g}")
            elif res is not None and gobj is None:
                # res carries its own feasibility certificate; the finite
                # grid just missed a thin feasible region
                log.info("instance %d: grid found no feasible point", i)
            elif res is not None and gobj is not None:
                if abs(res.objective - gobj) > 1e-3 * (1.0 + abs(gobj)):
                    bad.append(
                        f"objective {res.objective:.6g} vs grid {gobj:.6g}")
        elif res is None:
            log.info("instance %d infeasible (no grid check at %d edges)",
                     i, n_edges)
        if bad:
            failures += 1
            print(f"FAIL instance {i} (t={rec.get('t', '?')}): "
                  + "; ".join(bad))
        else:
            log.info("instance %d ok (%d edges)", i, n_edges)
    print(f"replayed {len(records)} instances: {gridded} checked against "
          f"the grid oracle, {failures} failures")
    return EXIT_SOLVER if failures else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="backhaulsim",
        description="multi-path backhaul scheduling simulator")
    sub = ap.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run the configured sweep and export")
    p_run.add_argument("--config", required=True, help="scenario YAML file")
    p_run.add_argument("--policy", choices=POLICIES,
                       help="restrict to one policy")
    p_run.add_argument("--seeds", help="comma-separated seed list override")
    p_run.add_argument("--out", default="runs", help="output directory")
    p_run.set_defaults(func=_cmd_run)

    p_sum = sub.add_parser("summarize", help="recompute the summary of an "
                                             "exported run directory")
    p_sum.add_argument("--in", dest="indir", required=True,
                       help="directory produced by the run command")
    p_sum.set_defaults(func=_cmd_summarize)

    p_rep = sub.add_parser("oracle-replay",
                           help="re-solve dumped allocator instances and "
                                "verify them against the grid oracle")
    p_rep.add_argument("--dump", required=True,
                       help="sca_dump.jsonl from a run export")
    p_rep.set_defaults(func=_cmd_replay)
    return ap


def main(argv=None) -> int:
    _setup_logging()
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
        return args.func(args)
    except (ConfigError, yaml.YAMLError, ValueError, KeyError) as exc:
        log.error("invalid configuration: %s", exc)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except AllocError as exc:
        log.error("solver failure: %s", exc)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except OSError as exc:
        log.error("I/O failure: %s", exc)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
