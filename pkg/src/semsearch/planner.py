"""Search-path planning over scored waypoints.

A waypoint's score is the summed probability of the objects it hosts. A plan
is an ordering of all score-positive waypoints minimizing

    cost = sum of leg distances - weight * sum of score(v_j) / j

where j is the 1-based visit rank, so high scores are worth the most early.
Leg distances are normalized by the environment's maximum pairwise
shortest-path distance by default; raw meters would dwarf the probability
term and collapse the objective into pure distance.

Small instances are solved by full permutation enumeration; larger ones by a
best-first branch and bound that provably returns the same optimum.
"""

from __future__ import annotations

import heapq
import itertools
import math
from dataclasses import dataclass

from .affinity import AffinityDistribution, split_across_instances

# Absolute slack when pruning against the incumbent, to stay on the safe side
# of floating-point dust; equal-cost branches must survive for the tie-break.
PRUNE_SLACK = 1e-9


class PlannerError(Exception):
    pass


class TooManyWaypointsError(PlannerError):
    """Instance too large for exhaustive enumeration; use plan_bounded."""


@dataclass(frozen=True)
class PlannerConfig:
    score_weight: float = 1.0     # weight of the discounted score term
    exhaustive_limit: int = 9     # 9! permutations is still well under a second
    distance_normalizer: str = "max_pairwise"  # or "none" for raw meters

    def __post_init__(self):
        if self.score_weight <= 0:
            raise ValueError(f"score_weight must be positive, got {self.score_weight}")
        if self.exhaustive_limit < 1:
            raise ValueError(f"exhaustive_limit must be >= 1, got {self.exhaustive_limit}")
        if self.distance_normalizer not in ("max_pairwise", "none"):
            raise ValueError(f"unknown distance_normalizer {self.distance_normalizer!r}")


@dataclass(frozen=True)
class WaypointScores:
    scores: dict[str, float]
    total_mass: float

    def __post_init__(self):
        for wid, s in self.scores.items():
            if s < 0:
                raise ValueError(f"negative score {s} for waypoint {wid!r}")

    def positive(self) -> list[str]:
        return sorted(w for w, s in self.scores.items() if s > 0)


@dataclass(frozen=True)
class PlanStep:
    waypoint: str
    leg: float         # normalized units (meters when normalizer is "none")
    score: float
    cumulative: float  # running probability mass after this waypoint


@dataclass(frozen=True)
class SearchPlan:
    start: str
    sequence: tuple[str, ...]
    cost: float
    per_step: tuple[PlanStep, ...]
    total_mass: float
    score_weight: float = 1.0
    mode: str = ""

    def __post_init__(self):
        if len(set(self.sequence)) != len(self.sequence):
            raise ValueError("plan sequence repeats a waypoint")
        previous = 0.0
        for step in self.per_step:
            if step.cumulative < previous - 1e-12:
                raise ValueError("cumulative probability decreases along the plan")
            previous = step.cumulative
        recomputed = (math.fsum(s.leg for s in self.per_step)
                      - self.score_weight * math.fsum(s.score / j for j, s in enumerate(self.per_step, 1)))
        if self.per_step and abs(recomputed - self.cost) > 1e-9:
            raise ValueError(f"plan cost {self.cost} disagrees with per-step recomputation {recomputed}")


def waypoint_scores(env, dist: AffinityDistribution) -> WaypointScores:
    """Sum per-instance probabilities at each object-bearing waypoint."""
    instance_probs = split_across_instances(dist, env.objects.values())
    totals: dict[str, float] = {}
    for obj in env.objects.values():
        totals[obj.waypoint] = totals.get(obj.waypoint, 0.0) + instance_probs[obj.instance_id]
    scores = {wid: totals[wid] for wid in sorted(totals)}
    return WaypointScores(scores=scores, total_mass=math.fsum(scores.values()))


def _normalizer(env, config: PlannerConfig) -> float:
    if config.distance_normalizer == "none":
        return 1.0
    d = env.max_pairwise_distance
    return d if d > 0 else 1.0


def _sequence_cost(env, start: str, sequence, scores: dict[str, float],
                   config: PlannerConfig) -> float:
    norm = _normalizer(env, config)
    dist_sum = 0.0
    score_sum = 0.0
    previous = start
    for rank, waypoint in enumerate(sequence, start=1):
        if waypoint not in scores:
            raise PlannerError(f"waypoint {waypoint!r} in sequence has no score")
        dist_sum += env.distance(previous, waypoint) / norm
        score_sum += scores[waypoint] / rank
        previous = waypoint
    return dist_sum - config.score_weight * score_sum


def path_cost(sequence, start: str, scores: WaypointScores, env,
              config: PlannerConfig | None = None) -> float:
    """Cost of visiting `sequence` from `start`; empty sequence costs 0."""
    config = config or PlannerConfig()
    return _sequence_cost(env, start, tuple(sequence), scores.scores, config)


def make_plan(env, start: str, sequence, step_scores: dict[str, float],
              config: PlannerConfig, mode: str, total_mass: float | None = None) -> SearchPlan:
    """Assemble a SearchPlan for an explicit visiting order."""
    env._require(start)
    norm = _normalizer(env, config)
    sequence = tuple(sequence)
    steps = []
    cumulative = 0.0
    previous = start
    for waypoint in sequence:
        leg = env.distance(previous, waypoint) / norm
        cumulative += step_scores[waypoint]
        steps.append(PlanStep(waypoint=waypoint, leg=leg,
                              score=step_scores[waypoint], cumulative=cumulative))
        previous = waypoint
    cost = _sequence_cost(env, start, sequence, step_scores, config)
    return SearchPlan(
        start=start,
        sequence=sequence,
        cost=cost,
        per_step=tuple(steps),
        total_mass=total_mass if total_mass is not None else cumulative,
        score_weight=config.score_weight,
        mode=mode,
    )


def plan_exhaustive(env, start: str, scores: WaypointScores,
                    config: PlannerConfig | None = None) -> SearchPlan:
    """Globally optimal order of all score-positive waypoints, by enumeration.

    Permutations are generated in lexicographic order and only strictly better
    costs replace the incumbent, so cost ties resolve to the lexicographically
    smallest sequence.
    """
    config = config or PlannerConfig()
    env._require(start)
    candidates = scores.positive()
    if not candidates:
        raise PlannerError("no score-positive waypoints to plan over")
    if len(candidates) > config.exhaustive_limit:
        raise TooManyWaypointsError(
            f"{len(candidates)} scored waypoints exceed the exhaustive limit "
            f"{config.exhaustive_limit}; use plan_bounded")
    best_cost = math.inf
    best_seq: tuple[str, ...] | None = None
    for perm in itertools.permutations(candidates):
        cost = _sequence_cost(env, start, perm, scores.scores, config)
        if cost < best_cost:
            best_cost = cost
            best_seq = perm
    return make_plan(env, start, best_seq, scores.scores, config, "exhaustive",
                     total_mass=scores.total_mass)


def plan_bounded(env, start: str, scores: WaypointScores,
                 config: PlannerConfig | None = None) -> SearchPlan:
    """Best-first branch and bound over partial permutations.

    The bound on a partial order combines an upper bound on the remaining
    score term (unvisited scores greedily assigned to the best remaining
    ranks) with a lower bound on the remaining distance (every unvisited
    waypoint must still be entered once, which costs at least its cheapest
    entering leg). Partial orders that cover the same waypoint set and end
    at the same waypoint are interchangeable for the remainder of the
    search, so only the best of them is expanded. All three devices are
    exact, so the result matches plan_exhaustive, including the
    lexicographic tie-break.
    """
    config = config or PlannerConfig()
    env._require(start)
    candidates = scores.positive()
    if not candidates:
        raise PlannerError("no score-positive waypoints to plan over")
    norm = _normalizer(env, config)
    weight = config.score_weight
    n = len(candidates)

    # Work in index space; candidates are sorted, so index tuples compare
    # exactly like waypoint-id tuples and the tie-break carries over.
    start_leg = [env.distance(start, w) / norm for w in candidates]
    leg = [[env.distance(a, b) / norm for b in candidates] for a in candidates]
    score = [scores.scores[w] for w in candidates]
    min_enter = [min([start_leg[i]] + [leg[j][i] for j in range(n) if j != i])
                 for i in range(n)]
    by_score_desc = sorted(range(n), key=lambda i: (-score[i], i))
    bit = [1 << i for i in range(n)]

    def sequence_g(seq: tuple[int, ...]) -> float:
        dist_sum = 0.0
        score_sum = 0.0
        previous = -1
        for rank, i in enumerate(seq, start=1):
            dist_sum += start_leg[i] if previous < 0 else leg[previous][i]
            score_sum += score[i] / rank
            previous = i
        return dist_sum - weight * score_sum

    def greedy_incumbent() -> tuple[int, ...]:
        remaining = list(range(n))
        seq: list[int] = []
        previous = -1
        while remaining:
            rank = len(seq) + 1
            pick = min(remaining,
                       key=lambda i: ((start_leg[i] if previous < 0 else leg[previous][i])
                                      - weight * score[i] / rank, i))
            seq.append(pick)
            remaining.remove(pick)
            previous = pick
        # single-node relocations until a local optimum; incumbent only
        improved = True
        while improved:
            improved = False
            base = sequence_g(tuple(seq))
            for i in range(n):
                for j in range(n):
                    if i == j:
                        continue
                    trial = list(seq)
                    node = trial.pop(i)
                    trial.insert(j, node)
                    if sequence_g(tuple(trial)) < base - 1e-15:
                        seq = trial
                        improved = True
                        break
                if improved:
                    break
        return tuple(seq)

    best_seq = greedy_incumbent()
    best_cost = sequence_g(best_seq)

    full_mask = (1 << n) - 1

    if n <= 20:
        # Per-mask bound tables. The next rank to assign is determined by the
        # popcount of the remaining mask, so both terms are pure functions of
        # the mask and can be filled by peeling one member off each mask.
        score_position = [0] * n
        for position, i in enumerate(by_score_desc):
            score_position[i] = position
        top_of_mask = [0] * (full_mask + 1)
        for mask in range(1, full_mask + 1):
            low = (mask & -mask).bit_length() - 1
            rest = mask & (mask - 1)
            if rest == 0:
                top_of_mask[mask] = low
            else:
                rest_top = top_of_mask[rest]
                top_of_mask[mask] = low if score_position[low] < score_position[rest_top] else rest_top
        ub_score_of = [0.0] * (full_mask + 1)
        lb_dist_of = [0.0] * (full_mask + 1)
        for mask in range(1, full_mask + 1):
            top = top_of_mask[mask]
            rest = mask ^ bit[top]
            k = mask.bit_count()
            ub_score_of[mask] = score[top] / (n - k + 1) + ub_score_of[rest]
            lb_dist_of[mask] = min_enter[top] + lb_dist_of[rest]

        def bound(g_dist: float, g_score: float, mask: int) -> float:
            return (g_dist + lb_dist_of[mask]) - weight * (g_score + ub_score_of[mask])
    else:
        # Tables for 2^n masks would not fit; derive both terms per call.
        def bound(g_dist: float, g_score: float, mask: int) -> float:
            lb_dist = 0.0
            ub_score = 0.0
            rank = n - mask.bit_count() + 1
            for i in by_score_desc:
                if mask & bit[i]:
                    ub_score += score[i] / rank
                    rank += 1
                    lb_dist += min_enter[i]
            return (g_dist + lb_dist) - weight * (g_score + ub_score)

    root = (bound(0.0, 0.0, full_mask), (), 0.0, 0.0, full_mask, -1)
    heap = [root]
    best_partial: dict[tuple[int, int], tuple[float, tuple[int, ...]]] = {}
    while heap:
        bnd, seq, g_dist, g_score, mask, last = heapq.heappop(heap)
        if bnd > best_cost + PRUNE_SLACK:
            break  # heap is ordered by bound; nothing left can improve
        if mask == 0:
            cost = g_dist - weight * g_score
            if cost < best_cost or (cost == best_cost and seq < best_seq):
                best_cost = cost
                best_seq = seq
            continue
        known = best_partial.get((mask, last))
        if known is not None and (known[0], known[1]) < (g_dist - weight * g_score, seq):
            continue
        rank = len(seq) + 1
        for i in range(n):
            if not mask & bit[i]:
                continue
            child_dist = g_dist + (start_leg[i] if last < 0 else leg[last][i])
            child_score = g_score + score[i] / rank
            child_mask = mask & ~bit[i]
            child_bound = bound(child_dist, child_score, child_mask)
            if child_bound > best_cost + PRUNE_SLACK:
                continue
            child_g = child_dist - weight * child_score
            child_seq = seq + (i,)
            state = (child_mask, i)
            known = best_partial.get(state)
            if known is not None and (known[0], known[1]) <= (child_g, child_seq):
                continue
            best_partial[state] = (child_g, child_seq)
            heapq.heappush(heap, (child_bound, child_seq, child_dist, child_score,
                                  child_mask, i))
    sequence = tuple(candidates[i] for i in best_seq)
    return make_plan(env, start, sequence, scores.scores, config, "bounded",
                     total_mass=scores.total_mass)


def plan_optimal(env, start: str, scores: WaypointScores,
                 config: PlannerConfig | None = None) -> SearchPlan:
    """Exhaustive enumeration when it fits, branch and bound beyond."""
    config = config or PlannerConfig()
    if len(scores.positive()) <= config.exhaustive_limit:
        return plan_exhaustive(env, start, scores, config)
    return plan_bounded(env, start, scores, config)
