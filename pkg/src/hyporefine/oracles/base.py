"""Oracle abstraction: the capabilities the search needs, behind one interface.

An oracle proposes edits, refines candidates, compares hypothesis pairs
(optionally through a judge committee plus an aggregator), recombines local
optima, and supports free-form generation for preprocessing. Every logical
backend invocation is charged to an :class:`OracleBudget`, whether scripted
or remote, cache hit or miss, so step accounting is identical across
backends and across cache states.
"""

from __future__ import annotations

from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from enum import Enum

from ..domain import Edit, HierarchySpec, Hypothesis, ResearchBackground


class OracleError(Exception):
    """Base class for oracle failures."""


class OracleFailure(OracleError):
    """Backend-level failure: transport, timeout, malformed or empty output.

    ``kind`` is a short machine-readable tag: ``timeout``, ``transport``,
    ``malformed``, ``empty_response``, ``script_exhausted``, ``unsupported``.
    """

    def __init__(self, kind: str, message: str):
        super().__init__(f"{kind}: {message}")
        self.kind = kind


class NoProposal(OracleError):
    """A scripted oracle ran out of scripted proposals."""


class BudgetExhausted(OracleError):
    """The call cap would be exceeded; no backend call was issued."""


class AggregationFailure(OracleError):
    """The committee aggregator produced no parsable verdict."""


class InsufficientOptima(OracleError):
    """Recombination needs at least two local optima."""


class Winner(str, Enum):
    FIRST = "first"
    SECOND = "second"


class Criterion(str, Enum):
    OVERALL = "overall"
    EFFECTIVENESS = "effectiveness"
    NOVELTY = "novelty"
    DETAILEDNESS = "detailedness"
    FEASIBILITY = "feasibility"


@dataclass(frozen=True)
class Preference:
    """Outcome of one strict pairwise comparison. There is no tie: a judge
    expressing indifference counts as preferring the second (incumbent) side."""

    winner: Winner
    rationale: str = ""

    def to_json(self) -> dict:
        return {"winner": self.winner.value, "rationale": self.rationale}

    @classmethod
    def from_json(cls, data: dict) -> "Preference":
        return cls(winner=Winner(data["winner"]), rationale=data.get("rationale", ""))


@dataclass(frozen=True)
class CommitteeSpec:
    """Judges whose verdicts are fused by an aggregator.

    A single judge implies no aggregation round; two or more judges require
    an aggregator backend.
    """

    judges: tuple[str, ...]
    aggregator: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "judges", tuple(self.judges))
        if not self.judges:
            raise ValueError("a committee needs at least one judge")
        if len(self.judges) >= 2 and not self.aggregator:
            raise ValueError("committees of two or more judges need an aggregator")

    @property
    def size(self) -> int:
        return len(self.judges)


BUDGET_CATEGORIES = (
    "proposal",
    "refinement",
    "comparison",
    "aggregation",
    "recombination",
)


@dataclass
class OracleBudget:
    """Monotone per-category call counters with an optional total cap."""

    cap: int | None = None
    counts: dict[str, int] = field(
        default_factory=lambda: {category: 0 for category in BUDGET_CATEGORIES}
    )

    def charge(self, category: str, amount: int = 1) -> None:
        if category not in self.counts:
            raise ValueError(f"unknown budget category: {category}")
        if amount < 0:
            raise ValueError("budget charges are non-negative")
        if self.cap is not None and self.total + amount > self.cap:
            raise BudgetExhausted(
                f"call cap {self.cap} reached ({self.total} used, "
                f"{amount} more requested for {category})"
            )
        self.counts[category] += amount

    @property
    def total(self) -> int:
        return sum(self.counts.values())

    def snapshot(self) -> dict:
        snap = dict(sorted(self.counts.items()))
        snap["total"] = self.total
        return snap


@dataclass(frozen=True)
class ProposalContext:
    """Everything an oracle may condition on when proposing or recombining.

    ``accepted_lower_levels`` carries the edits adopted at earlier hierarchy
    levels; ``rejected`` holds recently rejected candidates when the
    in-context feedback loop is active. ``flat`` marks single-stage searches
    whose prompts omit the hierarchy description.
    """

    background: ResearchBackground
    direction: Hypothesis
    accepted_lower_levels: tuple[Edit, ...]
    current: Hypothesis
    level: int
    hierarchy: HierarchySpec
    flat: bool = False
    rejected: tuple[Hypothesis, ...] = ()

    def __post_init__(self):
        object.__setattr__(
            self, "accepted_lower_levels", tuple(self.accepted_lower_levels)
        )
        object.__setattr__(self, "rejected", tuple(self.rejected))
        if not 1 <= self.level <= self.hierarchy.depth:
            raise ValueError(
                f"level {self.level} outside 1..{self.hierarchy.depth}"
            )
        if (self.current.level or 0) > self.level:
            raise ValueError("current hypothesis sits above the target level")


class Oracle(ABC):
    """Uniform interface over remote, scripted, and synthetic backends."""

    budget: OracleBudget

    def scoped(self, lane: str) -> "Oracle":
        """Return a view bound to a named lane (used for restart isolation).

        Implementations without per-lane state return self.
        """
        return self

    @abstractmethod
    def propose_edit(self, ctx: ProposalContext) -> tuple[Edit, Hypothesis]:
        """Propose one edit and integrate it into ``ctx.current``.

        The returned hypothesis carries ``level == ctx.level`` and a lineage
        extended by exactly one identifier.
        """

    @abstractmethod
    def refine(self, candidate: Hypothesis, ctx: ProposalContext) -> Hypothesis:
        """Single polishing pass over a freshly proposed candidate.

        Never iterated; lineage length is unchanged.
        """

    @abstractmethod
    def compare(
        self,
        a: Hypothesis,
        b: Hypothesis,
        criterion: Criterion,
        committee: CommitteeSpec,
    ) -> Preference:
        """Strict pairwise comparison, ``a`` presented first.

        With ``committee.size == n >= 2`` this issues n judge calls followed
        by one aggregation call; with a single judge, exactly one call.
        """

    @abstractmethod
    def recombine(
        self, optima: list[Hypothesis], ctx: ProposalContext
    ) -> Hypothesis:
        """Merge two or more local optima into one candidate at ``ctx.level``."""

    def generate(self, prompt: str) -> str:
        """Free-form generation used by preprocessing (not budget-counted)."""
        raise OracleFailure("unsupported", "this oracle has no generation backend")


def require_optima(optima: list[Hypothesis]) -> None:
    if len(optima) < 2:
        raise InsufficientOptima(
            f"recombination needs at least 2 optima, got {len(optima)}"
        )


def _common_prefix(seqs: list[tuple[str, ...]]) -> tuple[str, ...]:
    if not seqs:
        return ()
    prefix = seqs[0]
    for seq in seqs[1:]:
        limit = 0
        for x, y in zip(prefix, seq):
            if x != y:
                break
            limit += 1
        prefix = prefix[:limit]
    return prefix


def recombination_lineage(optima: list[Hypothesis], level: int) -> tuple[str, ...]:
    """Shared history of the inputs plus one marker for the merge event.

    Restarts diverge only after the hypothesis they all started from, so the
    common prefix of their lineages is exactly the accepted history carried
    into this level.
    """
    import hashlib

    shared = _common_prefix([h.lineage for h in optima])
    digest = hashlib.sha256(
        ("\x1f".join(h.text for h in optima) + f"|{level}").encode("utf-8")
    ).hexdigest()[:12]
    return shared + (f"r{digest}",)
