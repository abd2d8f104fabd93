"""Hierarchical and flat search strategies over a comparison oracle.

Each strategy is built from the same local-search loop: propose an edit,
refine the candidate once, compare it against the incumbent, and keep the
winner. A level ends when ``patience_k`` consecutive candidates fail to
beat the incumbent (or a hard step cap fires). The hierarchical strategy
walks the configured abstraction levels in order, running independent
restarts per level and recombining their optima; the flat strategies run a
single stage over the full edit space.

Every proposal, comparison, and recombination is recorded in a
:class:`SearchTrace` whose serialized form is byte-identical across
replays of the same script and config.
"""

from __future__ import annotations

import functools
import json
from dataclasses import dataclass, field, replace
from enum import Enum

from .domain import (
    BenchmarkItem,
    Edit,
    EditKind,
    HierarchySpec,
    Hypothesis,
    ResearchBackground,
    flat_hierarchy,
)
from .oracles.base import (
    CommitteeSpec,
    Criterion,
    Oracle,
    OracleError,
    Preference,
    ProposalContext,
    Winner,
)


class Strategy(str, Enum):
    HIERARCHICAL = "hhs"
    GREEDY = "greedy"
    GREEDY_SC = "greedy-sc"


@dataclass(frozen=True)
class SearchConfig:
    """Search knobs; defaults follow the reference configuration."""

    patience_k: int = 3
    restarts_per_level: int = 3
    max_steps_per_level: int = 50
    in_context_rl: bool = False
    rejected_context_window: int = 3
    committee: CommitteeSpec = field(
        default_factory=lambda: CommitteeSpec(judges=("judge",))
    )

    def __post_init__(self):
        if self.patience_k < 1:
            raise ValueError("patience_k must be >= 1")
        if self.restarts_per_level < 1:
            raise ValueError("restarts_per_level must be >= 1")
        if self.max_steps_per_level < self.patience_k:
            raise ValueError("max_steps_per_level must be >= patience_k")
        if self.rejected_context_window < 0:
            raise ValueError("rejected_context_window must be >= 0")


@dataclass(frozen=True)
class StepRecord:
    proposal: Edit
    candidate: Hypothesis
    refined: Hypothesis
    verdict: Preference
    accepted: bool
    consecutive_failures_after: int


@dataclass(frozen=True)
class LevelRecord:
    level: int
    restart: int
    steps: tuple[StepRecord, ...]
    optimum: Hypothesis
    stopped_by: str  # "patience" or "step_cap"


@dataclass(frozen=True)
class RecombinationRecord:
    level: int
    inputs: tuple[Hypothesis, ...]
    recombined: Hypothesis
    validations: tuple[Preference, ...]
    fallback: bool
    bracket: tuple[Preference, ...]
    adopted: Hypothesis


@dataclass(frozen=True)
class SearchTrace:
    strategy: Strategy
    item_id: str
    levels: tuple[LevelRecord, ...]
    recombinations: tuple[RecombinationRecord, ...]
    final: Hypothesis
    budget: dict
    partial: bool = False

    @property
    def step_total(self) -> int:
        """Total reasoning steps: every logical oracle call across categories."""
        return int(self.budget.get("total", 0))


class PartialTrace(Exception):
    """An oracle error aborted the search; the trace so far is attached."""

    def __init__(self, trace: SearchTrace, cause: Exception):
        super().__init__(f"search aborted: {cause}")
        self.trace = trace
        self.cause = cause


class _LevelAborted(Exception):
    def __init__(self, steps: tuple[StepRecord, ...], incumbent: Hypothesis, cause: Exception):
        super().__init__(str(cause))
        self.steps = steps
        self.incumbent = incumbent
        self.cause = cause


@dataclass(frozen=True)
class LocalSearchResult:
    optimum: Hypothesis
    steps: tuple[StepRecord, ...]
    stopped_by: str


def local_search(
    start: Hypothesis,
    level: int,
    background: ResearchBackground,
    direction: Hypothesis,
    accepted_lower: tuple[Edit, ...],
    cfg: SearchConfig,
    oracle: Oracle,
    *,
    hierarchy: HierarchySpec,
    flat: bool = False,
) -> LocalSearchResult:
    """Hill-climb from ``start`` within one hierarchy level.

    The incumbent is only ever replaced by a candidate that beat it in a
    recorded comparison. Terminates at the first step whose consecutive
    failure count reaches ``cfg.patience_k``, or when
    ``cfg.max_steps_per_level`` fires, whichever comes first.
    """
    incumbent = start
    consecutive = 0
    steps: list[StepRecord] = []
    rejected: list[Hypothesis] = []
    stopped_by = "patience"

    while True:
        window = cfg.rejected_context_window if cfg.in_context_rl else 0
        ctx = ProposalContext(
            background=background,
            direction=direction,
            accepted_lower_levels=accepted_lower,
            current=incumbent,
            level=level,
            hierarchy=hierarchy,
            flat=flat,
            rejected=tuple(rejected[-window:]) if window else (),
        )
        try:
            edit, candidate = oracle.propose_edit(ctx)
            refined = oracle.refine(candidate, ctx)
            verdict = oracle.compare(
                refined, incumbent, Criterion.OVERALL, cfg.committee
            )
        except OracleError as exc:
            raise _LevelAborted(tuple(steps), incumbent, exc) from exc

        accepted = verdict.winner is Winner.FIRST
        if accepted:
            incumbent = refined
            consecutive = 0
        else:
            consecutive += 1
            if cfg.in_context_rl:
                rejected.append(refined)
        steps.append(
            StepRecord(
                proposal=edit,
                candidate=candidate,
                refined=refined,
                verdict=verdict,
                accepted=accepted,
                consecutive_failures_after=consecutive,
            )
        )
        if consecutive >= cfg.patience_k:
            stopped_by = "patience"
            break
        if len(steps) >= cfg.max_steps_per_level:
            stopped_by = "step_cap"
            break

    return LocalSearchResult(
        optimum=incumbent, steps=tuple(steps), stopped_by=stopped_by
    )


def _validate_recombination(
    recombined: Hypothesis,
    optima: list[Hypothesis],
    cfg: SearchConfig,
    oracle: Oracle,
) -> tuple[Hypothesis, tuple[Preference, ...], bool, tuple[Preference, ...]]:
    """Adopt the recombined candidate only if it beats every restart optimum.

    Otherwise fall back to a single-elimination bracket over the optima in
    restart order, so the adopted hypothesis always won its last recorded
    comparison and incumbent monotonicity survives recombination.
    """
    validations: list[Preference] = []
    beats_all = True
    for optimum in optima:
        pref = oracle.compare(recombined, optimum, Criterion.OVERALL, cfg.committee)
        validations.append(pref)
        if pref.winner is not Winner.FIRST:
            beats_all = False
            break
    if beats_all:
        return recombined, tuple(validations), False, ()

    winner = optima[0]
    bracket: list[Preference] = []
    for challenger in optima[1:]:
        pref = oracle.compare(challenger, winner, Criterion.OVERALL, cfg.committee)
        bracket.append(pref)
        if pref.winner is Winner.FIRST:
            winner = challenger
    return winner, tuple(validations), True, tuple(bracket)


def _run_strategy(
    item: BenchmarkItem,
    hierarchy: HierarchySpec,
    cfg: SearchConfig,
    oracle: Oracle,
    strategy: Strategy,
    flat: bool,
) -> tuple[Hypothesis, SearchTrace]:
    level_records: list[LevelRecord] = []
    recombinations: list[RecombinationRecord] = []
    current = item.coarse
    accepted_edits: list[Edit] = []

    def partial(cause: Exception) -> PartialTrace:
        trace = SearchTrace(
            strategy=strategy,
            item_id=item.id,
            levels=tuple(level_records),
            recombinations=tuple(recombinations),
            final=current,
            budget=oracle.budget.snapshot(),
            partial=True,
        )
        return PartialTrace(trace, cause)

    for level in range(1, hierarchy.depth + 1):
        optima: list[Hypothesis] = []
        per_restart_edits: list[list[Edit]] = []
        for restart in range(cfg.restarts_per_level):
            lane_oracle = oracle.scoped(f"L{level}R{restart}")
            try:
                result = local_search(
                    current,
                    level,
                    item.background,
                    item.coarse,
                    tuple(accepted_edits),
                    cfg,
                    lane_oracle,
                    hierarchy=hierarchy,
                    flat=flat,
                )
            except _LevelAborted as exc:
                level_records.append(
                    LevelRecord(
                        level=level,
                        restart=restart,
                        steps=exc.steps,
                        optimum=exc.incumbent,
                        stopped_by="error",
                    )
                )
                raise partial(exc.cause) from exc.cause
            level_records.append(
                LevelRecord(
                    level=level,
                    restart=restart,
                    steps=result.steps,
                    optimum=result.optimum,
                    stopped_by=result.stopped_by,
                )
            )
            optima.append(result.optimum)
            per_restart_edits.append(
                [step.proposal for step in result.steps if step.accepted]
            )

        if cfg.restarts_per_level >= 2:
            ctx = ProposalContext(
                background=item.background,
                direction=item.coarse,
                accepted_lower_levels=tuple(accepted_edits),
                current=current,
                level=level,
                hierarchy=hierarchy,
                flat=flat,
            )
            try:
                recombined = oracle.recombine(optima, ctx)
                adopted, validations, fallback, bracket = _validate_recombination(
                    recombined, optima, cfg, oracle
                )
            except OracleError as exc:
                raise partial(exc) from exc
            recombinations.append(
                RecombinationRecord(
                    level=level,
                    inputs=tuple(optima),
                    recombined=recombined,
                    validations=validations,
                    fallback=fallback,
                    bracket=bracket,
                    adopted=adopted,
                )
            )
            if fallback:
                new_edits = per_restart_edits[optima.index(adopted)]
            else:
                # The merged hypothesis integrates strengths from every
                # restart, so the next level sees all of their edits.
                new_edits = [e for edits in per_restart_edits for e in edits]
        else:
            adopted = optima[0]
            new_edits = per_restart_edits[0]

        accepted_edits.extend(new_edits)
        current = adopted

    trace = SearchTrace(
        strategy=strategy,
        item_id=item.id,
        levels=tuple(level_records),
        recombinations=tuple(recombinations),
        final=current,
        budget=oracle.budget.snapshot(),
    )
    return current, trace


def hhs_search(
    item: BenchmarkItem,
    hierarchy: HierarchySpec,
    cfg: SearchConfig,
    oracle: Oracle,
) -> tuple[Hypothesis, SearchTrace]:
    """Hierarchical search: level-by-level local searches with restarts and
    validated recombination; the last level's adopted hypothesis is the
    output."""
    return _run_strategy(
        item, hierarchy, cfg, oracle, Strategy.HIERARCHICAL, flat=False
    )


def greedy_search(
    item: BenchmarkItem, cfg: SearchConfig, oracle: Oracle
) -> tuple[Hypothesis, SearchTrace]:
    """Single flat local search over the full edit space; first optimum wins."""
    flat_cfg = replace(cfg, restarts_per_level=1)
    return _run_strategy(
        item, flat_hierarchy(), flat_cfg, oracle, Strategy.GREEDY, flat=True
    )


def greedy_sc_search(
    item: BenchmarkItem, cfg: SearchConfig, oracle: Oracle
) -> tuple[Hypothesis, SearchTrace]:
    """Flat restarts merged by one validated recombination (self-consistency)."""
    return _run_strategy(
        item, flat_hierarchy(), cfg, oracle, Strategy.GREEDY_SC, flat=True
    )


def with_in_context_rl(search_op):
    """Wrap a search operation so rejected candidates feed later proposals.

    The wrapped operation has the same signature; it forces
    ``in_context_rl=True`` on the :class:`SearchConfig` argument. Rejection
    context is scoped to one local search: it never crosses restarts or
    levels.
    """

    @functools.wraps(search_op)
    def wrapper(*args, **kwargs):
        args = list(args)
        for index, value in enumerate(args):
            if isinstance(value, SearchConfig):
                args[index] = replace(value, in_context_rl=True)
                break
        else:
            if isinstance(kwargs.get("cfg"), SearchConfig):
                kwargs["cfg"] = replace(kwargs["cfg"], in_context_rl=True)
        return search_op(*args, **kwargs)

    return wrapper


# -- trace serialization -----------------------------------------------------


def _edit_json(edit: Edit) -> dict:
    return {
        "kind": edit.kind.value,
        "level": edit.level,
        "description": edit.description,
        "text": edit.resulting_text,
    }


def _edit_from_json(data: dict) -> Edit:
    return Edit(
        kind=EditKind(data["kind"]),
        level=data["level"],
        description=data["description"],
        resulting_text=data["text"],
    )


def _dump(record: dict) -> str:
    return json.dumps(record, sort_keys=True, ensure_ascii=True, separators=(",", ":"))


def trace_to_jsonl(trace: SearchTrace) -> bytes:
    """Canonical line-delimited serialization; byte-stable across platforms."""
    lines: list[str] = []
    recomb_by_level = {r.level: r for r in trace.recombinations}
    emitted_levels: list[int] = []

    def flush_recombination(level: int):
        record = recomb_by_level.get(level)
        if record is None:
            return
        lines.append(
            _dump(
                {
                    "type": "recombination",
                    "level": record.level,
                    "inputs": [h.to_json() for h in record.inputs],
                    "recombined": record.recombined.to_json(),
                    "validations": [p.to_json() for p in record.validations],
                    "fallback": record.fallback,
                    "bracket": [p.to_json() for p in record.bracket],
                    "adopted": record.adopted.to_json(),
                }
            )
        )

    for level_record in trace.levels:
        if emitted_levels and level_record.level != emitted_levels[-1]:
            flush_recombination(emitted_levels[-1])
        emitted_levels.append(level_record.level)
        for index, step in enumerate(level_record.steps):
            lines.append(
                _dump(
                    {
                        "type": "step",
                        "level": level_record.level,
                        "restart": level_record.restart,
                        "index": index,
                        "edit": _edit_json(step.proposal),
                        "candidate": step.candidate.to_json(),
                        "refined": step.refined.to_json(),
                        "verdict": step.verdict.to_json(),
                        "accepted": step.accepted,
                        "consecutive_failures_after": step.consecutive_failures_after,
                    }
                )
            )
        lines.append(
            _dump(
                {
                    "type": "level",
                    "level": level_record.level,
                    "restart": level_record.restart,
                    "steps": len(level_record.steps),
                    "accepted": sum(1 for s in level_record.steps if s.accepted),
                    "stopped_by": level_record.stopped_by,
                    "optimum": level_record.optimum.to_json(),
                }
            )
        )
    if emitted_levels:
        flush_recombination(emitted_levels[-1])

    lines.append(
        _dump(
            {
                "type": "final",
                "strategy": trace.strategy.value,
                "item": trace.item_id,
                "partial": trace.partial,
                "final": trace.final.to_json(),
                "budget": trace.budget,
            }
        )
    )
    return ("\n".join(lines) + "\n").encode("utf-8")


def trace_from_jsonl(data: bytes | str) -> SearchTrace:
    """Rebuild a :class:`SearchTrace` from its serialized form."""
    text = data.decode("utf-8") if isinstance(data, bytes) else data
    levels: list[LevelRecord] = []
    recombinations: list[RecombinationRecord] = []
    pending_steps: list[StepRecord] = []
    final_record: dict | None = None

    for line in text.splitlines():
        if not line.strip():
            continue
        record = json.loads(line)
        kind = record["type"]
        if kind == "step":
            pending_steps.append(
                StepRecord(
                    proposal=_edit_from_json(record["edit"]),
                    candidate=Hypothesis.from_json(record["candidate"]),
                    refined=Hypothesis.from_json(record["refined"]),
                    verdict=Preference.from_json(record["verdict"]),
                    accepted=record["accepted"],
                    consecutive_failures_after=record["consecutive_failures_after"],
                )
            )
        elif kind == "level":
            levels.append(
                LevelRecord(
                    level=record["level"],
                    restart=record["restart"],
                    steps=tuple(pending_steps),
                    optimum=Hypothesis.from_json(record["optimum"]),
                    stopped_by=record["stopped_by"],
                )
            )
            pending_steps = []
        elif kind == "recombination":
            recombinations.append(
                RecombinationRecord(
                    level=record["level"],
                    inputs=tuple(Hypothesis.from_json(h) for h in record["inputs"]),
                    recombined=Hypothesis.from_json(record["recombined"]),
                    validations=tuple(
                        Preference.from_json(p) for p in record["validations"]
                    ),
                    fallback=record["fallback"],
                    bracket=tuple(Preference.from_json(p) for p in record["bracket"]),
                    adopted=Hypothesis.from_json(record["adopted"]),
                )
            )
        elif kind == "final":
            final_record = record
    if final_record is None:
        raise ValueError("trace data has no final record")
    return SearchTrace(
        strategy=Strategy(final_record["strategy"]),
        item_id=final_record["item"],
        levels=tuple(levels),
        recombinations=tuple(recombinations),
        final=Hypothesis.from_json(final_record["final"]),
        budget=final_record["budget"],
        partial=final_record["partial"],
    )
