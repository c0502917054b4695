"""Episode metrics: success rate, SPL, and path efficiency, plus batch reports."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

from .search_sim import EpisodeResult, Outcome


def success_rate(results: list[EpisodeResult]) -> float:
    """Fraction of episodes ending FOUND; every other outcome is a failure."""
    if not results:
        raise ValueError("empty result batch")
    found = sum(1 for r in results if r.outcome is Outcome.FOUND)
    return found / len(results)


def spl_term(result: EpisodeResult) -> float:
    """One episode's SPL contribution: S_i * p_s / max(p_i, p_s)."""
    success = 1.0 if result.outcome is Outcome.FOUND else 0.0
    p_s, p_i = result.ideal_length, result.traversed_length
    if p_s < 0:
        raise ValueError(f"negative ideal length {p_s}")
    if p_s == 0.0:
        return success  # target at the start waypoint; path ratio is undefined
    return success * p_s / max(p_i, p_s)


def spl(results: list[EpisodeResult]) -> float:
    if not results:
        raise ValueError("empty result batch")
    return math.fsum(spl_term(r) for r in results) / len(results)


def path_efficiency(result: EpisodeResult) -> float:
    """Ideal over traversed length, capped at 1. Requires both lengths positive."""
    p_s, p_i = result.ideal_length, result.traversed_length
    if p_s <= 0:
        raise ValueError(f"path efficiency undefined for ideal length {p_s}")
    if p_i <= 0:
        raise ValueError(f"path efficiency undefined for traversed length {p_i}")
    return p_s / max(p_i, p_s)


def pe_defined(result: EpisodeResult) -> bool:
    return result.ideal_length > 0 and result.traversed_length > 0


def ideal_length(env, start: str, truth) -> float:
    """Shortest-path distance from the start to the target's host waypoint."""
    host = env.objects[truth.host_object]
    return env.distance(start, host.waypoint)


@dataclass(frozen=True)
class EpisodeRow:
    trial: int
    start: str
    host_object: str
    target_label: str
    seed: int
    outcome: str
    traversed_m: float
    ideal_m: float
    spl_term: float
    pe: float | None       # None when excluded from PE aggregates
    consumed: float
    steps: int
    error: str = ""
    trace: tuple = ()      # per-step records; not part of the episode CSV row


@dataclass(frozen=True)
class BatchReport:
    method: str
    episodes: int
    sr: float
    spl: float
    pe_mean: float
    pe_std: float
    pe_excluded: int       # episodes with an undefined path ratio
    rows: tuple[EpisodeRow, ...]


def build_report(method: str, results: list[EpisodeResult],
                 rows_info: list[dict]) -> BatchReport:
    """Aggregate a batch; rows_info carries per-episode sampling context."""
    rows = []
    pe_values = []
    for index, (result, info) in enumerate(zip(results, rows_info)):
        pe = path_efficiency(result) if pe_defined(result) else None
        if pe is not None:
            pe_values.append(pe)
        consumed = result.steps[-1].consumed if result.steps else 0.0
        rows.append(EpisodeRow(
            trial=info.get("trial", index),
            start=info["start"],
            host_object=info["host"],
            target_label=info["target"],
            seed=result.seed,
            outcome=result.outcome.value,
            traversed_m=result.traversed_length,
            ideal_m=result.ideal_length,
            spl_term=spl_term(result),
            pe=pe,
            consumed=consumed,
            steps=len(result.steps),
            trace=result.steps,
        ))
    pe_mean = math.fsum(pe_values) / len(pe_values) if pe_values else 0.0
    # Population standard deviation: deterministic and well defined for N=1.
    pe_std = math.sqrt(math.fsum((v - pe_mean) ** 2 for v in pe_values) / len(pe_values)) if pe_values else 0.0
    return BatchReport(
        method=method,
        episodes=len(results),
        sr=success_rate(results),
        spl=spl(results),
        pe_mean=pe_mean,
        pe_std=pe_std,
        pe_excluded=len(results) - len(pe_values),
        rows=tuple(rows),
    )


# -- CSV serialization ----------------------------------------------------------

EPISODE_COLUMNS = ["method", "trial", "start", "host_object", "target_label", "seed",
                   "outcome", "traversed_m", "ideal_m", "spl_term", "pe", "pe_included",
                   "consumed", "steps", "error"]

SUMMARY_COLUMNS = ["method", "episodes", "sr", "spl", "pe_mean", "pe_std", "pe_excluded"]


def _fmt(value) -> str:
    if isinstance(value, float):
        return format(value, ".10g")
    return str(value)


def write_episode_csv(reports: list[BatchReport], path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(EPISODE_COLUMNS)
        for report in reports:
            for row in report.rows:
                writer.writerow([
                    report.method, row.trial, row.start, row.host_object, row.target_label,
                    row.seed, row.outcome, _fmt(row.traversed_m), _fmt(row.ideal_m),
                    _fmt(row.spl_term), _fmt(row.pe) if row.pe is not None else "",
                    int(row.pe is not None), _fmt(row.consumed), row.steps, row.error,
                ])


def write_summary_csv(reports: list[BatchReport], path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(SUMMARY_COLUMNS)
        for r in reports:
            writer.writerow([r.method, r.episodes, _fmt(r.sr), _fmt(r.spl),
                             _fmt(r.pe_mean), _fmt(r.pe_std), r.pe_excluded])


def write_steps_csv(reports: list[BatchReport], path) -> None:
    """Episode traces, one record per visited waypoint."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["method", "trial", "step", "waypoint", "leg_m", "consumed",
                         "detection", "instance_id"])
        for report in reports:
            for row in report.rows:
                for index, step in enumerate(row.trace):
                    writer.writerow([
                        report.method, row.trial, index, step.waypoint,
                        _fmt(step.leg_meters), _fmt(step.consumed),
                        step.detection.kind, step.detection.instance_id or "",
                    ])


def write_long_csv(reports: list[BatchReport], path) -> None:
    """Plot-ready long format: one (method, trial, metric, value) row per datum."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["method", "trial", "metric", "value"])
        for report in reports:
            for row in report.rows:
                writer.writerow([report.method, row.trial, "found",
                                 int(row.outcome == Outcome.FOUND.value)])
                writer.writerow([report.method, row.trial, "traversed_m", _fmt(row.traversed_m)])
                writer.writerow([report.method, row.trial, "ideal_m", _fmt(row.ideal_m)])
                writer.writerow([report.method, row.trial, "spl_term", _fmt(row.spl_term)])
                if row.pe is not None:
                    writer.writerow([report.method, row.trial, "pe", _fmt(row.pe)])
