"""Command-line entry point: score, plan, run, and bench subcommands.

Every command is deterministic given (scenario, seed) with the table scorer or
a warm response cache. Trial sampling redraws the start waypoint and the
target's host object uniformly per trial; bench reuses one sampled sequence
across all methods so the comparison is paired.
"""

from __future__ import annotations

import argparse
import hashlib
import math
import random
import sys
from dataclasses import dataclass
from pathlib import Path

from . import baselines, metrics
from .affinity import AffinityDistribution, LLMScorer, TableScorer, score_distribution
from .env_graph import GroundTruth, ScenarioConfig, load_scenario_path
from .llm_gateway import GatewayConfig, LLMGateway, ResponseCache
from .metrics import BatchReport, EpisodeRow
from .planner import PlannerConfig, SearchPlan, plan_optimal, waypoint_scores
from .search_sim import SimulationParams, run_episode

METHODS = ("losae", "room_search", "hottest_object", "hottest_waypoint")


def child_seed(seed: int, trial: int) -> int:
    """Platform-stable per-trial seed derivation."""
    digest = hashlib.sha256(f"{seed}:{trial}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")


def sample_pairs(env, trials: int, seed: int) -> list[tuple[str, str]]:
    """Uniform (start waypoint, host object) draws from sorted eligible sets."""
    rng = random.Random(seed)
    starts = env.waypoint_ids()
    hosts = env.instance_ids()
    if not hosts:
        raise ValueError("environment has no objects to host the target")
    return [(rng.choice(starts), rng.choice(hosts)) for _ in range(trials)]


@dataclass
class RunArtifacts:
    """Shared per-run products; independent of the sampled start and host."""

    distribution: AffinityDistribution | None = None
    wscores: object | None = None
    room_dist: object | None = None
    ranking: object | None = None


def compute_artifacts(cfg: ScenarioConfig, methods, target: str, affinity_scorer=None,
                      room_scorer=None, embedder=None, parallel: int = 1) -> RunArtifacts:
    art = RunArtifacts()
    env = cfg.env
    if any(m in ("losae", "hottest_object", "hottest_waypoint") for m in methods):
        if affinity_scorer is None:
            raise ValueError("an affinity scorer is required for this method")
        art.distribution = score_distribution(affinity_scorer, env.labels(), target,
                                              parallel=parallel)
        art.wscores = waypoint_scores(env, art.distribution)
    if "room_search" in methods:
        if not env.rooms:
            raise ValueError("scenario declares no rooms; room_search needs them")
        if room_scorer is None:
            raise ValueError("a room scorer is required for room_search")
        art.room_dist = baselines.room_scores(room_scorer, sorted(env.rooms), target)
        art.ranking = baselines.similarity_rank(embedder or baselines.HashEmbedder(),
                                                env.labels(), target)
    return art


def plan_for_method(method: str, env, start: str, art: RunArtifacts,
                    config: PlannerConfig) -> SearchPlan:
    if method == "losae":
        return plan_optimal(env, start, art.wscores, config)
    if method == "hottest_object":
        return baselines.hottest_object_plan(env, art.distribution, start, config)
    if method == "hottest_waypoint":
        return baselines.hottest_waypoint_plan(env, art.wscores, start, config)
    if method == "room_search":
        return baselines.plan_room_search(env, art.room_dist, start, config, art.ranking)
    raise ValueError(f"unrecognized method {method!r}; expected one of {METHODS}")


def run_batch(cfg: ScenarioConfig, method: str, trials: int, seed: int, *,
              target: str | None = None, artifacts: RunArtifacts | None = None,
              affinity_scorer=None, room_scorer=None, embedder=None,
              planner_config: PlannerConfig | None = None,
              params: SimulationParams | None = None,
              pairs: list[tuple[str, str]] | None = None) -> BatchReport:
    """Run `trials` episodes of one method; failures are recorded, not raised."""
    if method not in METHODS:
        raise ValueError(f"unrecognized method {method!r}; expected one of {METHODS}")
    env = cfg.env
    target = target or cfg.truth.target_label
    config = planner_config or PlannerConfig()
    params = params or cfg.params
    if pairs is None:
        pairs = sample_pairs(env, trials, seed)
    if artifacts is None:
        artifacts = compute_artifacts(cfg, [method], target, affinity_scorer,
                                      room_scorer, embedder)

    plans: dict[str, SearchPlan] = {}
    results, rows_info = [], []
    error_rows: list[EpisodeRow] = []
    for trial, (start, host) in enumerate(pairs):
        try:
            if start not in plans:
                plans[start] = plan_for_method(method, env, start, artifacts, config)
            truth = GroundTruth(target_label=target, host_object=host)
            episode_seed = child_seed(seed, trial)
            result = run_episode(env, plans[start], truth, params, seed=episode_seed)
            results.append(result)
            rows_info.append({"trial": trial, "start": start, "host": host, "target": target})
        except Exception as exc:
            error_rows.append(EpisodeRow(
                trial=trial, start=start, host_object=host, target_label=target,
                seed=child_seed(seed, trial), outcome="error", traversed_m=0.0,
                ideal_m=0.0, spl_term=0.0, pe=None, consumed=0.0, steps=0,
                error=f"{type(exc).__name__}: {exc}",
            ))

    if results:
        report = metrics.build_report(method, results, rows_info)
    else:
        report = BatchReport(method=method, episodes=0, sr=0.0, spl=0.0, pe_mean=0.0,
                             pe_std=0.0, pe_excluded=0, rows=tuple())
    if error_rows:
        rows = tuple(sorted(report.rows + tuple(error_rows), key=lambda r: r.trial))
        report = BatchReport(method=report.method, episodes=report.episodes, sr=report.sr,
                             spl=report.spl, pe_mean=report.pe_mean, pe_std=report.pe_std,
                             pe_excluded=report.pe_excluded, rows=rows)
    return report


def run_bench(cfg: ScenarioConfig, methods, trials: int, seed: int, *,
              target: str | None = None, affinity_scorer=None, room_scorer=None,
              embedder=None, planner_config: PlannerConfig | None = None,
              params: SimulationParams | None = None) -> list[BatchReport]:
    """One BatchReport per method over the same sampled (start, host) sequence."""
    target = target or cfg.truth.target_label
    pairs = sample_pairs(cfg.env, trials, seed)
    artifacts = compute_artifacts(cfg, methods, target, affinity_scorer,
                                  room_scorer, embedder)
    return [run_batch(cfg, method, trials, seed, target=target, artifacts=artifacts,
                      planner_config=planner_config, params=params, pairs=pairs)
            for method in methods]


# -- scorer construction -----------------------------------------------------------

def _make_gateway(args) -> LLMGateway:
    cache = ResponseCache(args.cache) if getattr(args, "cache", None) else None
    return LLMGateway(GatewayConfig.from_env(), cache=cache)


def _make_affinity_scorer(cfg: ScenarioConfig, args):
    kind = getattr(args, "scorer", None) or (cfg.scorer.kind if cfg.scorer else None)
    if kind is None:
        raise ValueError("scenario declares no scorer; pass --scorer llm|table")
    if kind == "table":
        table = cfg.scorer.table if cfg.scorer else None
        if not table:
            raise ValueError("table scorer requested but the scenario has no affinity table")
        return TableScorer(table)
    return LLMScorer(_make_gateway(args))


def _make_room_scorer(cfg: ScenarioConfig, args):
    if cfg.room_scores:
        return baselines.TableRoomScorer(cfg.room_scores)
    kind = getattr(args, "scorer", None) or (cfg.scorer.kind if cfg.scorer else None)
    if kind == "llm":
        return baselines.LLMRoomScorer(_make_gateway(args))
    raise ValueError("room_search needs a room_scores table in the scenario or --scorer llm")


def _make_embedder(cfg: ScenarioConfig):
    if cfg.embeddings:
        return baselines.TableEmbedder(cfg.embeddings)
    return baselines.HashEmbedder()


def _planner_config(args) -> PlannerConfig:
    kwargs = {}
    if getattr(args, "score_weight", None) is not None:
        kwargs["score_weight"] = args.score_weight
    if getattr(args, "exhaustive_limit", None) is not None:
        kwargs["exhaustive_limit"] = args.exhaustive_limit
    if getattr(args, "normalizer", None) is not None:
        kwargs["distance_normalizer"] = args.normalizer
    return PlannerConfig(**kwargs)


# -- commands -----------------------------------------------------------------------

def _fmt(value: float) -> str:
    return format(value, ".6f")


def cmd_score(args) -> int:
    cfg = load_scenario_path(args.scenario)
    target = args.target or cfg.truth.target_label
    scorer = _make_affinity_scorer(cfg, args)
    dist = score_distribution(scorer, cfg.env.labels(), target,
                              parallel=getattr(args, "parallel", 1))
    print(f"target: {dist.target_label}")
    print(f"{'label':<24} {'probability':>12} {'raw':>12}")
    for label, p in sorted(dist.entries.items(), key=lambda kv: (-kv[1], kv[0])):
        print(f"{label:<24} {_fmt(p):>12} {_fmt(dist.raw[label]):>12}")
    print(f"{'sum':<24} {_fmt(math.fsum(dist.entries.values())):>12}")
    if isinstance(scorer, LLMScorer) and scorer.answers:
        print("model answers (diagnostic only, not used for scoring):")
        for (seen, _), answer in sorted(scorer.answers.items()):
            print(f"  {seen}: {answer}")
    return 0


def cmd_plan(args) -> int:
    cfg = load_scenario_path(args.scenario)
    env = cfg.env
    target = args.target or cfg.truth.target_label
    start = args.start or next(iter(env.waypoints))
    scorer = _make_affinity_scorer(cfg, args)
    config = _planner_config(args)
    dist = score_distribution(scorer, env.labels(), target)
    scores = waypoint_scores(env, dist)
    plan = plan_optimal(env, start, scores, config)
    print(f"start: {plan.start}  target: {dist.target_label}  mode: {plan.mode}")
    print(f"{'rank':>4} {'waypoint':<16} {'leg(norm)':>10} {'leg(m)':>10} {'score':>10} {'cum_prob':>10}")
    position = plan.start
    for rank, step in enumerate(plan.per_step, 1):
        leg_m = env.distance(position, step.waypoint)
        position = step.waypoint
        print(f"{rank:>4} {step.waypoint:<16} {_fmt(step.leg):>10} {_fmt(leg_m):>10} "
              f"{_fmt(step.score):>10} {_fmt(step.cumulative):>10}")
    print(f"total cost: {_fmt(plan.cost)}")
    return 0


def _write_outputs(reports: list[BatchReport], out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    metrics.write_episode_csv(reports, out_dir / "episodes.csv")
    metrics.write_summary_csv(reports, out_dir / "summary.csv")
    metrics.write_steps_csv(reports, out_dir / "steps.csv")
    metrics.write_long_csv(reports, out_dir / "long.csv")


def _print_reports(reports: list[BatchReport]) -> None:
    print(f"{'method':<18} {'N':>4} {'SR':>7} {'SPL':>7}")
    for r in reports:
        print(f"{r.method:<18} {r.episodes:>4} {_fmt(r.sr):>7} {_fmt(r.spl):>7}")
    print()
    print(f"{'method':<18} {'PE_mean':>9} {'PE_std':>9} {'excluded':>9}")
    for r in reports:
        print(f"{r.method:<18} {_fmt(r.pe_mean):>9} {_fmt(r.pe_std):>9} {r.pe_excluded:>9}")


def _had_errors(reports: list[BatchReport]) -> bool:
    return any(row.error for r in reports for row in r.rows)


def cmd_run(args) -> int:
    cfg = load_scenario_path(args.scenario)
    seed = args.seed if args.seed is not None else cfg.params.seed
    scorer = _make_affinity_scorer(cfg, args) if args.method != "room_search" else None
    room_scorer = _make_room_scorer(cfg, args) if args.method == "room_search" else None
    report = run_batch(
        cfg, args.method, args.trials, seed,
        target=args.target, affinity_scorer=scorer, room_scorer=room_scorer,
        embedder=_make_embedder(cfg), planner_config=_planner_config(args),
    )
    _write_outputs([report], Path(args.out))
    _print_reports([report])
    return 1 if _had_errors([report]) else 0


def cmd_bench(args) -> int:
    cfg = load_scenario_path(args.scenario)
    seed = args.seed if args.seed is not None else cfg.params.seed
    methods = args.methods or list(METHODS)
    for method in methods:
        if method not in METHODS:
            raise ValueError(f"unrecognized method {method!r}; expected one of {METHODS}")
    needs_affinity = any(m != "room_search" for m in methods)
    reports = run_bench(
        cfg, methods, args.trials, seed,
        target=args.target,
        affinity_scorer=_make_affinity_scorer(cfg, args) if needs_affinity else None,
        room_scorer=_make_room_scorer(cfg, args) if "room_search" in methods else None,
        embedder=_make_embedder(cfg),
        planner_config=_planner_config(args),
    )
    _write_outputs(reports, Path(args.out))
    _print_reports(reports)
    return 1 if _had_errors(reports) else 0


# -- parser -------------------------------------------------------------------------

def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--scenario", required=True, help="path to a scenario JSON document")
    p.add_argument("--target", default=None, help="target label (default: scenario ground truth)")
    p.add_argument("--scorer", choices=("llm", "table"), default=None,
                   help="override the scenario's scorer kind")
    p.add_argument("--cache", default=None, help="response cache file for the llm scorer")
    p.add_argument("--lambda", dest="score_weight", type=float, default=None,
                   help="score weight in the plan cost (default 1.0)")
    p.add_argument("--limit", dest="exhaustive_limit", type=int, default=None,
                   help="max scored waypoints for exhaustive planning (default 9)")
    p.add_argument("--normalizer", choices=("max_pairwise", "none"), default=None,
                   help="leg distance normalization (default max_pairwise)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="semsearch",
        description="Semantic object search on waypoint graphs: scoring, planning, simulation, benchmarks.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("score", help="print the affinity distribution for a target")
    _add_common(p)
    p.add_argument("--parallel", type=int, default=1, help="concurrent scorer queries")
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("plan", help="print the planned search path for a target")
    _add_common(p)
    p.add_argument("--start", default=None,
                   help="start waypoint (default: first waypoint in the scenario)")
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("run", help="run seeded episodes of one method and write CSVs")
    _add_common(p)
    p.add_argument("--method", required=True, choices=METHODS)
    p.add_argument("--trials", type=int, default=15)
    p.add_argument("--seed", type=int, default=None, help="default: scenario seed")
    p.add_argument("--out", default="out", help="output directory for CSV files")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("bench", help="compare methods over one paired trial sequence")
    _add_common(p)
    p.add_argument("--methods", nargs="*", default=None,
                   help=f"methods to compare (default: all of {', '.join(METHODS)})")
    p.add_argument("--trials", type=int, default=15)
    p.add_argument("--seed", type=int, default=None, help="default: scenario seed")
    p.add_argument("--out", default="out", help="output directory for CSV files")
    p.set_defaults(func=cmd_bench)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def entry() -> None:
    raise SystemExit(main())
