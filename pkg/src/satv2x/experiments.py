"""Run orchestration shared by the CLI, scripts and acceptance tests.

A job is (config, seed, variant). Jobs are independent, so sweeps may fan
them out over worker processes without changing any result.
"""
from __future__ import annotations

import io
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Any, Callable, Sequence

import numpy as np

from .agent.learner import Learner, evaluate, train
from .config import RunConfig, config_hash, to_dict
from .eval import RunReport, action_distribution, estimation_metrics, summarize_series


@dataclass
class JobResult:
    seed: int
    variant: str
    series: list[dict]
    final_utility: float
    eval_utility: float | None
    eval_modes: np.ndarray
    est_pred: np.ndarray
    est_target: np.ndarray
    state: dict[str, np.ndarray] | None


def run_job(cfg: RunConfig, seed: int, variant: str | None = None, evaluate_after: bool = True) -> JobResult:
    tag = variant or cfg.learner.variant
    res = train(cfg, seed, tag)
    window = res.metrics[-cfg.run.final_window:]
    final = float(np.mean([m["utility"] for m in window]))
    ev = None
    if evaluate_after and cfg.run.eval_episodes > 0:
        ev = evaluate(cfg, res.agent, seed, cfg.run.eval_episodes)
    state = res.agent.state_dict() if isinstance(res.agent, Learner) else None
    return JobResult(seed, tag, res.metrics, final,
                     None if ev is None else float(ev["utilities"].mean()),
                     np.zeros(3, np.int64) if ev is None else ev["mode_counts"],
                     np.zeros((0, 6)) if ev is None else ev["est_pred"],
                     np.zeros((0, 6)) if ev is None else ev["est_target"], state)


def _star(args):
    fn, a = args
    return fn(*a)


def parallel_map(fn: Callable, jobs: Sequence[tuple], workers: int = 1) -> list:
    """``[fn(*job) for job in jobs]``, optionally across processes; order is preserved."""
    if workers <= 1 or len(jobs) <= 1:
        return [fn(*j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_star, [(fn, j) for j in jobs]))


def pooled_estimation(results: Sequence[JobResult]) -> dict[str, Any] | None:
    pred = np.concatenate([r.est_pred for r in results]) if results else np.zeros((0, 6))
    tgt = np.concatenate([r.est_target for r in results]) if results else np.zeros((0, 6))
    if pred.size < 2:
        return None
    return estimation_metrics(pred, tgt).as_dict()


def base_report(kind: str, cfg: RunConfig, seeds: Sequence[int]) -> RunReport:
    return RunReport(kind, config_hash(cfg), to_dict(cfg), [int(s) for s in seeds])


def training_report(cfg: RunConfig, results: Sequence[JobResult], kind: str = "train") -> RunReport:
    report = base_report(kind, cfg, [r.seed for r in results])
    report.series = [row for r in results for row in r.series]
    report.summary = summarize_series(report.series, cfg.run.final_window)
    evals = [r.eval_utility for r in results if r.eval_utility is not None]
    if evals:
        report.summary["eval_utility"] = float(np.mean(evals))
        counts = sum(r.eval_modes for r in results)
        if counts.sum():
            report.summary["eval_mode_distribution"] = action_distribution(counts=counts)
    est = pooled_estimation(results)
    if est is not None:
        report.summary["estimation"] = est
    return report


def trace_evaluation(cfg: RunConfig, agent, seed: int, episodes: int) -> tuple[dict, str]:
    buf = io.StringIO()
    ev = evaluate(cfg, agent, seed, episodes, trace=buf)
    return ev, buf.getvalue()
