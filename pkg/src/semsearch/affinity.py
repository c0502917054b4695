"""Semantic affinity scoring: turns per-label scorer output into a normalized
probability distribution over seen-object labels for one target label.

The LLM path prompts with exactly one seen label at a time and converts the
completion's token log-probabilities into a raw score via exp(mean logprob).
The table path looks raw scores up directly, which keeps tests and offline
benchmarks fully deterministic.
"""

from __future__ import annotations

import json
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Protocol, runtime_checkable

from .llm_gateway import CompletionRequest, LLMGateway, TokenLogprobs

SYSTEM_PROMPT = (
    "You are an expert object location reasoning robot. You will be given some seen "
    "objects and a target object. You need to output which is the best seen object to "
    "go to in order to find the target object. You may only use the seen objects for "
    "reasoning, and must output a seen object to go to."
)

USER_PROMPT_TEMPLATE = "I see the following: {seen}. Where should I go to find {target}?"

# Raw scores below this floor are treated as total scorer failure.
ZERO_SCORE_FLOOR = 1e-12


class ScorerError(Exception):
    """A scorer could not produce a raw value for a label pair."""


class MissingAffinityError(ScorerError):
    """Table scorer has no entry for the pair and no default."""


class MissingLabelError(ScorerError):
    """An environment label has no probability in the distribution."""


def normalize_label(label: str) -> str:
    """Canonical label form: whitespace-trimmed, case-insensitive."""
    return label.strip().lower()


@dataclass(frozen=True)
class PromptPair:
    system_text: str
    user_text: str


def build_prompt(seen_label: str, target_label: str) -> PromptPair:
    """Substitute the two labels into the fixed prompt pair, nothing else."""
    if not seen_label.strip():
        raise ValueError("seen_label is empty")
    if not target_label.strip():
        raise ValueError("target_label is empty")
    return PromptPair(
        system_text=SYSTEM_PROMPT,
        user_text=USER_PROMPT_TEMPLATE.format(seen=seen_label, target=target_label),
    )


def aggregate_logprobs(logprobs: TokenLogprobs) -> float:
    """exp of the arithmetic mean of the token logprobs; in (0, 1]."""
    values = logprobs.values()
    if not values:
        raise ValueError("cannot aggregate an empty token list")
    return math.exp(math.fsum(values) / len(values))


@dataclass(frozen=True)
class AffinityDistribution:
    """Normalized probability per seen-object label that the target sits there."""

    target_label: str
    entries: dict[str, float]
    raw: dict[str, float]

    def __post_init__(self):
        total = math.fsum(self.entries.values())
        if self.entries and abs(total - 1.0) > 1e-9:
            raise ValueError(f"distribution sums to {total}, not 1")
        for label, p in self.entries.items():
            if p < 0:
                raise ValueError(f"negative probability {p} for label {label!r}")

    def probability(self, label: str) -> float:
        key = normalize_label(label)
        if key not in self.entries:
            raise MissingLabelError(f"label {label!r} has no probability in the distribution")
        return self.entries[key]


def split_across_instances(dist: AffinityDistribution, objects) -> dict[str, float]:
    """Per-instance probabilities: each instance gets p(label) / count(label).

    Duplicate labels share their label's mass equally, so the total stays 1 and
    the one-host-at-a-time assumption is preserved.
    """
    counts: dict[str, int] = {}
    for obj in objects:
        key = normalize_label(obj.label)
        counts[key] = counts.get(key, 0) + 1
    result: dict[str, float] = {}
    for obj in objects:
        key = normalize_label(obj.label)
        result[obj.instance_id] = dist.probability(key) / counts[key]
    return result


@runtime_checkable
class AffinityScorer(Protocol):
    def score(self, seen_label: str, target_label: str) -> "TokenLogprobs | float": ...


class TableScorer:
    """Raw affinities from a declared table keyed 'seen_label|target_label'.

    Tables come embedded in a scenario document's scorer section or from a
    standalone JSON document of the same shape (see from_path).
    """

    @classmethod
    def from_path(cls, path) -> "TableScorer":
        with open(path, "r", encoding="utf-8") as fh:
            return cls(json.load(fh))

    def __init__(self, table: dict, default: float | None = None):
        self.default = default
        self._table: dict[tuple[str, str], float] = {}
        for key, value in table.items():
            if key == "default":
                self.default = float(value)
                continue
            if "|" not in key:
                raise ValueError(f"affinity table key {key!r} is not 'seen|target'")
            seen, target = key.split("|", 1)
            value = float(value)
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"affinity table value for {key!r} out of [0, 1]: {value}")
            self._table[(normalize_label(seen), normalize_label(target))] = value
        if self.default is not None and not 0.0 <= self.default <= 1.0:
            raise ValueError(f"affinity table default out of [0, 1]: {self.default}")

    def score(self, seen_label: str, target_label: str) -> float:
        pair = (normalize_label(seen_label), normalize_label(target_label))
        if pair in self._table:
            return self._table[pair]
        if self.default is not None:
            return self.default
        raise MissingAffinityError(f"no affinity for pair {pair[0]!r}|{pair[1]!r} and no default")


class LLMScorer:
    """Scores a pair by prompting the model and returning the completion's logprobs.

    The completion's text answer plays no part in the score; it is kept in
    `answers` so episode logs can show what the model actually said.
    """

    def __init__(self, gateway: LLMGateway, model: str | None = None,
                 temperature: float = 0.0, max_tokens: int = 64):
        self.gateway = gateway
        self.model = model or gateway.config.model
        self.temperature = temperature
        self.max_tokens = max_tokens
        self.answers: dict[tuple[str, str], str] = {}

    def score(self, seen_label: str, target_label: str) -> TokenLogprobs:
        prompt = build_prompt(seen_label, target_label)
        result = self.gateway.complete(CompletionRequest(
            system_text=prompt.system_text,
            user_text=prompt.user_text,
            model=self.model,
            temperature=self.temperature,
            max_tokens=self.max_tokens,
        ))
        self.answers[(normalize_label(seen_label), normalize_label(target_label))] = result.answer_text
        return result.token_logprobs


def _raw_score(scorer: AffinityScorer, seen_label: str, target_label: str) -> float:
    try:
        value = scorer.score(seen_label, target_label)
    except Exception as exc:
        raise ScorerError(f"scorer failed for seen label {seen_label!r}: {exc}") from exc
    if isinstance(value, TokenLogprobs):
        return aggregate_logprobs(value)
    value = float(value)
    if value < 0:
        raise ScorerError(f"scorer returned negative raw score {value} for {seen_label!r}")
    return value


def score_distribution(scorer: AffinityScorer, seen_labels: list[str], target_label: str,
                       parallel: int = 1) -> AffinityDistribution:
    """Query the scorer once per seen label and normalize the raw values.

    Queries are independent by construction so they may run concurrently;
    results are keyed by label, never by completion order. If every raw value
    is below ZERO_SCORE_FLOOR the distribution falls back to uniform.
    """
    if not seen_labels:
        raise ValueError("seen_labels is empty")
    cleaned = [label.strip() for label in seen_labels]
    keys = [normalize_label(label) for label in cleaned]
    if len(set(keys)) != len(keys):
        dupes = sorted({k for k in keys if keys.count(k) > 1})
        raise ValueError(f"seen_labels contains duplicates after normalization: {dupes}")

    target = target_label.strip()
    if parallel > 1 and len(cleaned) > 1:
        with ThreadPoolExecutor(max_workers=parallel) as pool:
            futures = {key: pool.submit(_raw_score, scorer, label, target)
                       for key, label in zip(keys, cleaned)}
            raw = {key: futures[key].result() for key in keys}
    else:
        raw = {key: _raw_score(scorer, label, target) for key, label in zip(keys, cleaned)}

    total = math.fsum(raw.values())
    if total < ZERO_SCORE_FLOOR:
        warnings.warn(
            f"all raw affinity scores for target {target!r} are below {ZERO_SCORE_FLOOR}; "
            "falling back to a uniform distribution",
            RuntimeWarning,
        )
        entries = {key: 1.0 / len(keys) for key in keys}
    else:
        entries = {key: raw[key] / total for key in keys}
    return AffinityDistribution(target_label=normalize_label(target), entries=entries, raw=raw)
