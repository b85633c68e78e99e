"""Command-line entry point: ``satv2x <subcommand> [flags]``.

Every subcommand writes the effective configuration (``config.ini``) and a
``summary.json`` into its output directory.
"""
from __future__ import annotations

import argparse
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import config as cfgmod
from .agent.learner import Learner, evaluate
from .agent.policy import ActionSpace
from .baselines import PolicyVariant, build_variant
from .config import ConfigError, RunConfig
from .env import SatV2XEnv
from .eval import action_distribution, estimation_metrics, export_report
from .experiments import base_report, parallel_map, pooled_estimation, run_job, training_report
from .gradcheck import run_gradcheck, summarize
from .nn import CheckpointError, load_checkpoint, save_checkpoint

log = logging.getLogger("satv2x")

COMMANDS = ("train", "evaluate", "ablate", "sweep-sharing", "sweep-density", "gradcheck")


def _floats(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(x) for x in text.split(",") if x.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got '{text}'") from None


def _ints(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(x) for x in text.split(",") if x.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got '{text}'") from None


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="satv2x", description="Satellite-aided V2X multi-agent learning workbench")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", type=Path, help="INI config file (defaults built in)")
        s.add_argument("--out", type=Path, help="output directory (default: <run.out_dir>/<command>)")
        s.add_argument("-v", "--verbose", action="store_true")
        if name == "gradcheck":
            s.add_argument("--seed", type=_ints, default=(0,))
            s.add_argument("--instances", type=int, default=20)
            continue
        s.add_argument("--seed", type=_ints, help="seed or comma-separated seeds")
        s.add_argument("--episodes", type=int, help="training episodes per run")
        s.add_argument("--variant", help="variant tag, or comma-separated tags for ablate")
        s.add_argument("--density", type=_floats, help="vehicles per km^2 (list for sweeps)")
        s.add_argument("--sharing", type=_floats, help="sharing probability (list for sweep-sharing)")
        s.add_argument("--workers", type=int, help="parallel worker processes for multi-run commands")
        if name == "evaluate":
            s.add_argument("--checkpoint", type=Path, help="weights written by train")
            s.add_argument("--trace", action="store_true", help="also write trace.csv")
    return p


def effective_config(args) -> RunConfig:
    cfg = cfgmod.load(args.config) if args.config else RunConfig()
    if args.command == "gradcheck":
        return cfg
    scenario, learner, run = {}, {}, {}
    if args.seed is not None:
        run["seeds"] = args.seed
    if args.episodes is not None:
        run["episodes"] = args.episodes
    if args.workers is not None:
        run["workers"] = args.workers
    if args.variant is not None:
        tags = tuple(t.strip().upper() for t in args.variant.split(",") if t.strip())
        if args.command == "ablate":
            run["variants"] = tags
        elif len(tags) != 1:
            raise ConfigError([f"{args.command} takes a single variant, got {args.variant}"])
        else:
            learner["variant"] = tags[0]
    if args.density is not None:
        if args.command in ("ablate", "sweep-density"):
            run["densities"] = args.density
        elif len(args.density) != 1:
            raise ConfigError([f"{args.command} takes a single density"])
        else:
            scenario["density"] = args.density[0]
    if args.sharing is not None:
        if args.command == "sweep-sharing":
            run["sharing_levels"] = args.sharing
        elif len(args.sharing) != 1:
            raise ConfigError([f"{args.command} takes a single sharing level"])
        else:
            learner["sharing"] = args.sharing[0]
    return cfg.replace(scenario=scenario, learner=learner, run=run)


def _out_dir(args, cfg: RunConfig) -> Path:
    out = args.out if args.out is not None else Path(cfg.run.out_dir) / args.command
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_config(out: Path, cfg: RunConfig) -> None:
    (out / "config.ini").write_text(cfgmod.dumps(cfg))


# ---------------------------------------------------------------- commands

def cmd_train(cfg: RunConfig, out: Path) -> dict:
    seeds = list(cfg.run.seeds)
    results = parallel_map(run_job, [(cfg, s) for s in seeds], cfg.run.workers)
    for r in results:
        if r.state is not None:
            name = "checkpoint.bin" if len(seeds) == 1 else f"checkpoint_seed{r.seed}.bin"
            save_checkpoint(out / name, r.state)
    report = training_report(cfg, results)
    export_report(report, out)
    return report.summary


def _agent_for(cfg: RunConfig, checkpoint: Path | None, seed: int):
    env = SatV2XEnv(cfg)
    space = ActionSpace.from_env(env)
    agent = build_variant(cfg.learner.variant, cfg, space, seed)
    if isinstance(agent, Learner):
        if checkpoint is None:
            raise ConfigError([f"evaluate: variant {cfg.learner.variant} needs --checkpoint"])
        agent.load_state_dict(load_checkpoint(checkpoint))
    return agent


def cmd_evaluate(cfg: RunConfig, out: Path, checkpoint: Path | None, trace: bool) -> dict:
    import io

    seed = cfg.run.seeds[0]
    agent = _agent_for(cfg, checkpoint, seed)
    buf = io.StringIO() if trace else None
    ev = evaluate(cfg, agent, seed, max(cfg.run.eval_episodes, 1), trace=buf)
    report = base_report("evaluate", cfg, [seed])
    report.summary["eval_utility"] = float(ev["utilities"].mean())
    if ev["mode_counts"].sum():
        report.summary["eval_mode_distribution"] = action_distribution(counts=ev["mode_counts"])
    if ev["est_pred"].size >= 2 and isinstance(agent, Learner):
        report.summary["estimation"] = estimation_metrics(ev["est_pred"], ev["est_target"]).as_dict()
    report.tables["eval_utility"] = [{"episode": e, "utility": float(u.mean())}
                                     for e, u in enumerate(ev["utilities"])]
    export_report(report, out)
    if buf is not None:
        (out / "trace.csv").write_text(buf.getvalue())
    return report.summary


def _grid_jobs(cfg: RunConfig, variants, densities):
    jobs, keys = [], []
    for v in variants:
        for d in densities:
            sub = cfg.replace(scenario={"density": d}, learner={"variant": v})
            for s in cfg.run.seeds:
                jobs.append((sub, s, v, False))
                keys.append((v, d, s))
    return jobs, keys


def _utility_tables(keys, results, variants, densities):
    per_run = [{"variant": v, "density": d, "seed": s, "final_utility": r.final_utility}
               for (v, d, s), r in zip(keys, results)]
    grid = []
    for v in variants:
        row = {"variant": v}
        for d in densities:
            row[f"density_{d:g}"] = float(np.mean([x["final_utility"] for x in per_run
                                                  if x["variant"] == v and x["density"] == d]))
        grid.append(row)
    return per_run, grid


def cmd_ablate(cfg: RunConfig, out: Path) -> dict:
    for v in cfg.run.variants:
        PolicyVariant.from_tag(v)
    variants, densities = list(cfg.run.variants), list(cfg.run.densities)
    jobs, keys = _grid_jobs(cfg, variants, densities)
    results = parallel_map(run_job, jobs, cfg.run.workers)
    per_run, grid = _utility_tables(keys, results, variants, densities)
    report = base_report("ablate", cfg, cfg.run.seeds)
    report.series = [row for r in results for row in r.series]
    report.tables = {"ablation_runs": per_run, "ablation_grid": grid}
    report.summary = {"final_window": cfg.run.final_window}
    export_report(report, out)
    return report.summary


def cmd_sweep_density(cfg: RunConfig, out: Path) -> dict:
    variant, densities = cfg.learner.variant, list(cfg.run.densities)
    jobs, keys = _grid_jobs(cfg, [variant], densities)
    results = parallel_map(run_job, jobs, cfg.run.workers)
    per_run, _ = _utility_tables(keys, results, [variant], densities)
    rows = [{"density": d, "variant": variant,
             "n_vehicles": cfg.replace(scenario={"density": d}).scenario.n_vehicles,
             "final_utility": float(np.mean([x["final_utility"] for x in per_run if x["density"] == d]))}
            for d in densities]
    report = base_report("sweep-density", cfg, cfg.run.seeds)
    report.series = [row for r in results for row in r.series]
    report.tables = {"density_runs": per_run, "density": rows}
    report.summary = {"final_window": cfg.run.final_window}
    export_report(report, out)
    return report.summary


def cmd_sweep_sharing(cfg: RunConfig, out: Path) -> dict:
    levels = list(cfg.run.sharing_levels)
    jobs, keys = [], []
    for lv in levels:
        sub = cfg.replace(learner={"sharing": lv})
        for s in cfg.run.seeds:
            jobs.append((sub, s))
            keys.append((lv, s))
    results = parallel_map(run_job, jobs, cfg.run.workers)
    per_run, rows = [], []
    for (lv, s), r in zip(keys, results):
        est = pooled_estimation([r])
        per_run.append({"sharing": lv, "seed": s, **(est or {}), "final_utility": r.final_utility})
    for lv in levels:
        est = pooled_estimation([r for (l2, _), r in zip(keys, results) if l2 == lv])
        rows.append({"sharing": lv, **(est or {})})
    report = base_report("sweep-sharing", cfg, cfg.run.seeds)
    report.series = [row for r in results for row in r.series]
    report.tables = {"sharing_runs": per_run, "sharing": rows}
    report.summary = {"final_window": cfg.run.final_window}
    export_report(report, out)
    return report.summary


def cmd_gradcheck(cfg: RunConfig, out: Path, seed: int, instances: int) -> tuple[dict, bool]:
    t0 = time.perf_counter()
    results = run_gradcheck(instances, seed)
    table = summarize(results)
    ok = all(v["passed"] for v in table.values())
    for op, v in table.items():
        status = "PASS" if v["passed"] else "FAIL"
        print(f"{status} {op:22s} max_rel_err={v['max_error']:.3e} shape={tuple(v['worst_shape'])}")
    print(f"{len(results)} checks in {time.perf_counter() - t0:.1f} s")
    report = base_report("gradcheck", cfg, [seed])
    report.tables["gradcheck"] = [{"op": op, "instances": v["instances"], "max_error": v["max_error"],
                                   "passed": v["passed"]} for op, v in table.items()]
    report.summary = {"passed": ok}
    export_report(report, out)
    return report.summary, ok


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = effective_config(args)
        out = _out_dir(args, cfg)
        _write_config(out, cfg)
        if args.command == "gradcheck":
            summary, ok = cmd_gradcheck(cfg, out, args.seed[0], args.instances)
            return 0 if ok else 1
        if args.command == "train":
            summary = cmd_train(cfg, out)
        elif args.command == "evaluate":
            summary = cmd_evaluate(cfg, out, args.checkpoint, args.trace)
        elif args.command == "ablate":
            summary = cmd_ablate(cfg, out)
        elif args.command == "sweep-sharing":
            summary = cmd_sweep_sharing(cfg, out)
        else:
            summary = cmd_sweep_density(cfg, out)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except (CheckpointError, KeyError, ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    for k in ("final_utility", "eval_utility"):
        if k in summary:
            print(f"{k}: {summary[k]:.4f}")
    print(f"wrote {out / 'summary.json'}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
