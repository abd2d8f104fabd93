"""Pairwise tournaments and ground-truth component recall.

A tournament compares two hypotheses an even number of times (default 6),
presenting each side first for half the rounds to neutralize position
bias; a side wins with strictly more than half of the votes, and an even
split is a tie. Recall decomposes the ground-truth hypothesis into
methodological/experimental components, scores each one's coverage by the
candidate on a 0-3 scale, and aggregates: soft recall is the fraction of
components matched at all, hard recall the score-weighted coverage.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from enum import Enum
from typing import Protocol

from .domain import Hypothesis
from .oracles.base import (
    CommitteeSpec,
    Criterion,
    Oracle,
    OracleError,
    OracleFailure,
    Preference,
    Winner,
)
from .oracles.remote import ChatBackend
from .templates import TemplateSet


class EvalError(Exception):
    pass


class EmptyScores(EvalError):
    pass


class UnparsableDecomposition(EvalError):
    pass


class ScoreOutOfRange(EvalError):
    pass


class TournamentAborted(EvalError):
    """An oracle failure interrupted a tournament; completed rounds attached."""

    def __init__(self, rounds: tuple["RoundRecord", ...], cause: Exception):
        super().__init__(f"tournament aborted after {len(rounds)} rounds: {cause}")
        self.rounds = rounds
        self.cause = cause


class TournamentVerdict(str, Enum):
    WIN_A = "win_a"
    WIN_B = "win_b"
    TIE = "tie"


@dataclass(frozen=True)
class RoundRecord:
    order: tuple[str, str]  # ("a", "b") or ("b", "a"), presentation order
    preference: Preference
    criterion: Criterion
    vote: str  # which hypothesis the round's winner maps to

    def to_json(self) -> dict:
        return {
            "order": list(self.order),
            "preference": self.preference.to_json(),
            "criterion": self.criterion.value,
            "vote": self.vote,
        }


@dataclass(frozen=True)
class TournamentOutcome:
    votes_a: int
    votes_b: int
    verdict: TournamentVerdict
    rounds: tuple[RoundRecord, ...]

    def __post_init__(self):
        total = len(self.rounds)
        if self.votes_a + self.votes_b != total:
            raise ValueError("votes must sum to the number of rounds")
        expected = _verdict_for(self.votes_a, self.votes_b)
        if self.verdict is not expected:
            raise ValueError(
                f"verdict {self.verdict} inconsistent with tally "
                f"{self.votes_a}-{self.votes_b}"
            )

    def to_json(self) -> dict:
        return {
            "votes_a": self.votes_a,
            "votes_b": self.votes_b,
            "verdict": self.verdict.value,
            "rounds": [r.to_json() for r in self.rounds],
        }


def _verdict_for(votes_a: int, votes_b: int) -> TournamentVerdict:
    total = votes_a + votes_b
    if votes_a * 2 > total:
        return TournamentVerdict.WIN_A
    if votes_b * 2 > total:
        return TournamentVerdict.WIN_B
    return TournamentVerdict.TIE


def run_tournament(
    a: Hypothesis,
    b: Hypothesis,
    criterion: Criterion,
    committee: CommitteeSpec,
    oracle: Oracle,
    rounds: int = 6,
) -> TournamentOutcome:
    """Order-alternated pairwise protocol.

    The first half of the rounds presents ``a`` first, the second half
    presents ``b`` first; votes are tallied per hypothesis, not per
    position, so a purely position-biased judge always produces a tie.
    """
    if rounds < 2 or rounds % 2 != 0:
        raise ValueError("rounds must be an even number >= 2")
    half = rounds // 2
    votes = {"a": 0, "b": 0}
    records: list[RoundRecord] = []
    for index in range(rounds):
        if index < half:
            first, second, order = a, b, ("a", "b")
        else:
            first, second, order = b, a, ("b", "a")
        try:
            preference = oracle.compare(first, second, criterion, committee)
        except OracleError as exc:
            raise TournamentAborted(tuple(records), exc) from exc
        vote = order[0] if preference.winner is Winner.FIRST else order[1]
        votes[vote] += 1
        records.append(
            RoundRecord(order=order, preference=preference, criterion=criterion, vote=vote)
        )
    return TournamentOutcome(
        votes_a=votes["a"],
        votes_b=votes["b"],
        verdict=_verdict_for(votes["a"], votes["b"]),
        rounds=tuple(records),
    )


# -- component recall ---------------------------------------------------------


@dataclass(frozen=True)
class Component:
    text: str
    role: str = ""
    function: str = ""
    context: str = ""

    def __post_init__(self):
        if not self.text.strip():
            raise ValueError("component text must be non-empty")

    def to_json(self) -> dict:
        return {
            "text": self.text,
            "role": self.role,
            "function": self.function,
            "context": self.context,
        }


@dataclass(frozen=True)
class ComponentScore:
    component: Component
    score: int
    matched_candidate_span: str | None = None
    judge_rationale: str = ""

    def __post_init__(self):
        if self.score not in (0, 1, 2, 3):
            raise ValueError(f"coverage score must be in 0..3, got {self.score}")
        if self.score == 0 and self.matched_candidate_span is not None:
            raise ValueError("a zero score cannot carry a matched span")

    def to_json(self) -> dict:
        return {
            "component": self.component.to_json(),
            "score": self.score,
            "matched_candidate_span": self.matched_candidate_span,
            "judge_rationale": self.judge_rationale,
        }


@dataclass(frozen=True)
class RawScore:
    """Unvalidated judge output; ``value`` is None when unparsable."""

    value: int | None
    span: str | None = None
    rationale: str = ""


class Decomposer(Protocol):
    def decompose(self, hypothesis: Hypothesis) -> list[Component]: ...


class ComponentJudge(Protocol):
    def score(self, component: Component, candidate: Hypothesis) -> RawScore: ...


def _normalize(text: str) -> str:
    return " ".join(text.split()).casefold()


def decompose(hypothesis: Hypothesis, decomposer: Decomposer) -> list[Component]:
    """Extract components, merging duplicates by normalized text."""
    components = decomposer.decompose(hypothesis)
    seen: set[str] = set()
    merged: list[Component] = []
    for component in components:
        key = _normalize(component.text)
        if key in seen:
            continue
        seen.add(key)
        merged.append(component)
    return merged


def score_against(
    gt_components: list[Component],
    candidate: Hypothesis,
    judge: ComponentJudge,
) -> list[ComponentScore]:
    """Score every ground-truth component, in order, with one re-ask on a
    malformed or out-of-range judge value."""
    if not gt_components:
        raise EmptyScores("no ground-truth components to score")
    scores: list[ComponentScore] = []
    for component in gt_components:
        raw = judge.score(component, candidate)
        if raw.value is None or raw.value not in (0, 1, 2, 3):
            raw = judge.score(component, candidate)
        if raw.value is None or raw.value not in (0, 1, 2, 3):
            raise ScoreOutOfRange(
                f"judge returned {raw.value!r} for component {component.text[:40]!r}"
            )
        scores.append(
            ComponentScore(
                component=component,
                score=raw.value,
                matched_candidate_span=raw.span if raw.value > 0 else None,
                judge_rationale=raw.rationale,
            )
        )
    return scores


def soft_recall(scores: list[ComponentScore]) -> float:
    """Fraction of ground-truth components matched at any strength."""
    if not scores:
        raise EmptyScores("soft recall needs at least one score")
    return sum(1 for s in scores if s.score > 0) / len(scores)


def hard_recall(scores: list[ComponentScore]) -> float:
    """Score-weighted coverage: sum of scores over 3x the component count."""
    if not scores:
        raise EmptyScores("hard recall needs at least one score")
    return sum(s.score for s in scores) / (3 * len(scores))


# -- scripted and chat-backed evaluators ---------------------------------------


class ScriptedDecomposer:
    def __init__(self, scripts: list[list[Component | dict]]):
        self._scripts = list(scripts)
        self._cursor = 0

    def decompose(self, hypothesis: Hypothesis) -> list[Component]:
        if self._cursor >= len(self._scripts):
            raise OracleFailure("script_exhausted", "no scripted decompositions left")
        entries = self._scripts[self._cursor]
        self._cursor += 1
        out = []
        for entry in entries:
            if isinstance(entry, Component):
                out.append(entry)
            else:
                out.append(
                    Component(
                        text=str(entry["text"]),
                        role=str(entry.get("role", "")),
                        function=str(entry.get("function", "")),
                        context=str(entry.get("context", "")),
                    )
                )
        return out


class ScriptedComponentJudge:
    def __init__(self, values: list[int | dict]):
        self._values = list(values)
        self._cursor = 0

    def score(self, component: Component, candidate: Hypothesis) -> RawScore:
        if self._cursor >= len(self._values):
            raise OracleFailure("script_exhausted", "no scripted scores left")
        entry = self._values[self._cursor]
        self._cursor += 1
        if isinstance(entry, dict):
            return RawScore(
                value=entry.get("score"),
                span=entry.get("span"),
                rationale=str(entry.get("rationale", "scripted")),
            )
        value = int(entry)
        span = "scripted span" if value > 0 else None
        return RawScore(value=value, span=span, rationale="scripted")


_FENCE_RE = re.compile(r"```(?:json)?\s*\n(.*?)\n\s*```", re.DOTALL)
_SCORE_RE = re.compile(r"^[ \t]*SCORE:\s*(-?\d+)", re.IGNORECASE | re.MULTILINE)
_SPAN_RE = re.compile(r"^[ \t]*SPAN:\s*(.+)$", re.IGNORECASE | re.MULTILINE)
_SCORE_RATIONALE_RE = re.compile(
    r"^[ \t]*RATIONALE:\s*(.+?)(?=^[ \t]*(?:SCORE|SPAN):|\Z)",
    re.IGNORECASE | re.MULTILINE | re.DOTALL,
)


class ChatDecomposer:
    """Decomposer over a chat backend; expects a JSON array reply."""

    def __init__(self, backend: ChatBackend, templates: TemplateSet | None = None):
        self._backend = backend
        self._templates = templates or TemplateSet.load()

    def decompose(self, hypothesis: Hypothesis) -> list[Component]:
        prompt = self._templates.render("decompose", hypothesis=hypothesis.text)
        content = self._backend.complete(
            [{"role": "user", "content": prompt}],
            temperature=self._backend.judge_temperature,
        )
        body = content
        fence = _FENCE_RE.search(content)
        if fence:
            body = fence.group(1)
        start, end = body.find("["), body.rfind("]")
        if start != -1 and end > start:
            body = body[start : end + 1]
        try:
            raw = json.loads(body)
        except json.JSONDecodeError as exc:
            raise UnparsableDecomposition(f"reply is not JSON: {exc}") from exc
        if not isinstance(raw, list):
            raise UnparsableDecomposition("reply is not a JSON array")
        components = []
        for entry in raw:
            if not isinstance(entry, dict) or not str(entry.get("text", "")).strip():
                raise UnparsableDecomposition(f"bad component entry: {entry!r}")
            components.append(
                Component(
                    text=str(entry["text"]),
                    role=str(entry.get("role", "")),
                    function=str(entry.get("function", "")),
                    context=str(entry.get("context", "")),
                )
            )
        return components


class ChatComponentJudge:
    """Coverage judge over a chat backend; parses SPAN/RATIONALE/SCORE."""

    def __init__(self, backend: ChatBackend, templates: TemplateSet | None = None):
        self._backend = backend
        self._templates = templates or TemplateSet.load()

    def score(self, component: Component, candidate: Hypothesis) -> RawScore:
        prompt = self._templates.render(
            "score",
            component=component.text,
            role=component.role or "(unspecified)",
            function=component.function or "(unspecified)",
            context=component.context or "(unspecified)",
            candidate=candidate.text,
        )
        content = self._backend.complete(
            [{"role": "user", "content": prompt}],
            temperature=self._backend.judge_temperature,
        )
        score_match = _SCORE_RE.search(content)
        value = int(score_match.group(1)) if score_match else None
        span_match = _SPAN_RE.search(content)
        span = span_match.group(1).strip() if span_match else None
        if span is not None and span.strip().upper() == "NONE":
            span = None
        rationale_match = _SCORE_RATIONALE_RE.search(content)
        rationale = rationale_match.group(1).strip() if rationale_match else content.strip()
        return RawScore(value=value, span=span, rationale=rationale)


# -- report aggregation --------------------------------------------------------


@dataclass(frozen=True)
class RecallResult:
    strategy: str
    item_id: str
    soft: float
    hard: float
    steps: int


@dataclass(frozen=True)
class Report:
    recall: dict = field(default_factory=dict)
    tournament: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {"recall": self.recall, "tournament": self.tournament}

    def to_text(self) -> str:
        lines: list[str] = []
        if self.recall:
            lines.append(
                f"{'strategy':<12} {'soft recall':>12} {'hard recall':>12} {'#steps':>10} {'items':>6}"
            )
            for strategy, row in self.recall.items():
                lines.append(
                    f"{strategy:<12} {row['soft_recall'] * 100:>11.2f}% "
                    f"{row['hard_recall'] * 100:>11.2f}% {row['steps']:>10.2f} "
                    f"{row['items']:>6}"
                )
        if self.tournament:
            if lines:
                lines.append("")
            lines.append(f"{'criterion':<14} {'win':>8} {'tie':>8} {'lose':>8} {'n':>4}")
            for criterion, row in self.tournament.items():
                lines.append(
                    f"{criterion:<14} {row['win']:>7.2f}% {row['tie']:>7.2f}% "
                    f"{row['lose']:>7.2f}% {row['count']:>4}"
                )
        return "\n".join(lines) + "\n"


def aggregate_report(
    recall_results: list[RecallResult] | None = None,
    tournament_results: list[tuple[Criterion, TournamentVerdict]] | None = None,
) -> Report:
    """Fold per-item results into per-strategy means and per-criterion
    win/tie/lose percentages (each row sums to 100% up to rounding)."""
    if not recall_results and not tournament_results:
        raise ValueError("aggregate_report needs at least one result")

    recall_summary: dict = {}
    if recall_results:
        by_strategy: dict[str, list[RecallResult]] = {}
        for result in recall_results:
            by_strategy.setdefault(result.strategy, []).append(result)
        for strategy, rows in by_strategy.items():
            count = len(rows)
            recall_summary[strategy] = {
                "soft_recall": sum(r.soft for r in rows) / count,
                "hard_recall": sum(r.hard for r in rows) / count,
                "steps": sum(r.steps for r in rows) / count,
                "items": count,
            }

    tournament_summary: dict = {}
    if tournament_results:
        by_criterion: dict[str, list[TournamentVerdict]] = {}
        for criterion, verdict in tournament_results:
            by_criterion.setdefault(criterion.value, []).append(verdict)
        for criterion_name, verdicts in by_criterion.items():
            count = len(verdicts)
            tournament_summary[criterion_name] = {
                "win": round(
                    100 * sum(1 for v in verdicts if v is TournamentVerdict.WIN_A) / count, 2
                ),
                "tie": round(
                    100 * sum(1 for v in verdicts if v is TournamentVerdict.TIE) / count, 2
                ),
                "lose": round(
                    100 * sum(1 for v in verdicts if v is TournamentVerdict.WIN_B) / count, 2
                ),
                "count": count,
            }

    return Report(recall=recall_summary, tournament=tournament_summary)
