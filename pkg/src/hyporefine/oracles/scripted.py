"""Deterministic scripted oracle.

Scripts are organized into named lanes so independent restarts can consume
independent entry streams. A scoped view ``oracle.scoped("item-1").scoped
("L2R1")`` resolves each category against every contiguous subpath of its
scope path (longest first, rightmost first within a length: here
``item-1/L2R1``, then ``L2R1``, then ``item-1``), falling back to
``"default"``. Resolution picks the first lane that *defines* the category;
an exhausted lane raises rather than falling through, so replays never
silently borrow entries.
"""

from __future__ import annotations

import json
from typing import Any

from ..domain import Edit, EditKind, Hypothesis, edit_id
from .base import (
    AggregationFailure,
    CommitteeSpec,
    Criterion,
    NoProposal,
    Oracle,
    OracleBudget,
    OracleFailure,
    Preference,
    ProposalContext,
    Winner,
    recombination_lineage,
    require_optima,
)

_EXHAUSTED = object()


def _normalize_proposal(entry: Any) -> dict:
    if isinstance(entry, dict):
        kind = str(entry.get("kind", "add"))
        description = str(entry.get("description", ""))
        text = str(entry.get("text", ""))
    elif isinstance(entry, (tuple, list)) and len(entry) == 2:
        kind, description, text = "add", str(entry[0]), str(entry[1])
    else:
        raise ValueError(f"bad scripted proposal entry: {entry!r}")
    if kind not in (EditKind.ADD.value, EditKind.DELETE.value):
        raise ValueError(f"bad scripted proposal kind: {kind!r}")
    if not text.strip():
        raise ValueError("scripted proposal text must be non-empty")
    return {"kind": kind, "description": description, "text": text}


def _normalize_lane(spec: dict, default_cycle: bool) -> dict:
    lane = {"cycle": bool(spec.get("cycle", default_cycle))}
    lane["proposals"] = tuple(
        _normalize_proposal(entry) for entry in spec.get("proposals", ())
    )
    refinements = []
    for entry in spec.get("refinements", ()):
        if entry is not None and not str(entry).strip():
            raise ValueError("scripted refinement text must be non-empty or null")
        refinements.append(None if entry is None else str(entry))
    lane["refinements"] = tuple(refinements)
    comparisons = []
    for entry in spec.get("comparisons", ()):
        value = str(entry).lower()
        if value not in (Winner.FIRST.value, Winner.SECOND.value):
            raise ValueError(f"bad scripted comparison verdict: {entry!r}")
        comparisons.append(value)
    lane["comparisons"] = tuple(comparisons)
    # Aggregations and recombinations stay raw: bad entries must surface as
    # runtime oracle failures, not load errors.
    lane["aggregations"] = tuple(str(e) for e in spec.get("aggregations", ()))
    lane["recombinations"] = tuple(str(e) for e in spec.get("recombinations", ()))
    lane["generations"] = tuple(str(e) for e in spec.get("generations", ()))
    return lane


class ScriptedOracle(Oracle):
    """Oracle that replays pre-recorded responses; byte-identical on replay."""

    def __init__(
        self,
        *,
        proposals=(),
        refinements=(),
        comparisons=(),
        aggregations=(),
        recombinations=(),
        generations=(),
        lanes: dict[str, dict] | None = None,
        cycle: bool = False,
        cap: int | None = None,
    ):
        if lanes is None:
            lanes = {
                "default": {
                    "proposals": proposals,
                    "refinements": refinements,
                    "comparisons": comparisons,
                    "aggregations": aggregations,
                    "recombinations": recombinations,
                    "generations": generations,
                }
            }
        self._lanes = {name: _normalize_lane(spec, cycle) for name, spec in lanes.items()}
        self._cursors: dict[tuple[str, str], int] = {}
        self.budget = OracleBudget(cap=cap)
        self.call_log: list[dict] = []
        self._path: tuple[str, ...] = ()

    @classmethod
    def from_json(cls, data: dict, cap: int | None = None) -> "ScriptedOracle":
        cycle = bool(data.get("cycle", False))
        if "lanes" in data:
            return cls(lanes=data["lanes"], cycle=cycle, cap=cap)
        return cls(lanes={"default": data}, cycle=cycle, cap=cap)

    @classmethod
    def from_file(cls, path, cap: int | None = None) -> "ScriptedOracle":
        with open(path, "r", encoding="utf-8") as handle:
            return cls.from_json(json.load(handle), cap=cap)

    def scoped(self, lane: str) -> "ScriptedOracle":
        clone = object.__new__(ScriptedOracle)
        clone._lanes = self._lanes
        clone._cursors = self._cursors
        clone.budget = self.budget
        clone.call_log = self.call_log
        clone._path = self._path + (lane,)
        return clone

    # -- script plumbing ---------------------------------------------------

    def _resolve_lane(self, category: str) -> str | None:
        # Every contiguous subpath of the scope path is a candidate, longest
        # first and rightmost first within a length, then "default". A lane
        # must define the category (non-empty list) to match.
        candidates = []
        parts = self._path
        for length in range(len(parts), 0, -1):
            for start in range(len(parts) - length, -1, -1):
                candidates.append("/".join(parts[start : start + length]))
        candidates.append("default")
        for name in candidates:
            lane = self._lanes.get(name)
            if lane is not None and lane[category]:
                return name
        return None

    def _peek(self, category: str):
        lane_name = self._resolve_lane(category)
        if lane_name is None:
            return None, _EXHAUSTED
        lane = self._lanes[lane_name]
        cursor = self._cursors.get((lane_name, category), 0)
        entries = lane[category]
        if cursor >= len(entries):
            if not lane["cycle"]:
                return lane_name, _EXHAUSTED
            cursor = cursor % len(entries)
        return lane_name, entries[cursor]

    def _commit(self, lane_name: str, category: str):
        key = (lane_name, category)
        self._cursors[key] = self._cursors.get(key, 0) + 1

    def _take(self, category: str, budget_category: str | None):
        """Peek an entry, charge the budget, then advance the cursor.

        Exhaustion raises before any budget charge, so counters always equal
        the number of responses actually produced.
        """
        lane_name, entry = self._peek(category)
        if entry is _EXHAUSTED:
            if category == "proposals":
                raise NoProposal(
                    f"scripted proposals exhausted (lane path {'/'.join(self._path) or 'default'})"
                )
            raise OracleFailure(
                "script_exhausted",
                f"no scripted {category} left (lane path {'/'.join(self._path) or 'default'})",
            )
        if budget_category is not None:
            self.budget.charge(budget_category)
        self._commit(lane_name, category)
        return lane_name, entry

    def _log(self, op: str, lane: str, **extra):
        record = {"op": op, "lane": lane, "path": "/".join(self._path)}
        record.update(extra)
        self.call_log.append(record)

    # -- Oracle interface ----------------------------------------------------

    def propose_edit(self, ctx: ProposalContext) -> tuple[Edit, Hypothesis]:
        lane, entry = self._take("proposals", "proposal")
        edit = Edit(
            kind=EditKind(entry["kind"]),
            level=ctx.level,
            description=entry["description"],
            resulting_text=entry["text"],
        )
        candidate = Hypothesis(
            text=entry["text"],
            level=ctx.level,
            lineage=ctx.current.lineage + (edit_id(edit),),
        )
        self._log(
            "propose",
            lane,
            current=ctx.current.text,
            rejected=[h.text for h in ctx.rejected],
            level=ctx.level,
            flat=ctx.flat,
        )
        return edit, candidate

    def refine(self, candidate: Hypothesis, ctx: ProposalContext) -> Hypothesis:
        lane, entry = self._take("refinements", "refinement")
        self._log("refine", lane, candidate=candidate.text)
        if entry is None:
            return candidate
        return Hypothesis(text=entry, level=candidate.level, lineage=candidate.lineage)

    def compare(
        self,
        a: Hypothesis,
        b: Hypothesis,
        criterion: Criterion,
        committee: CommitteeSpec,
    ) -> Preference:
        votes = []
        for _ in committee.judges:
            lane, entry = self._take("comparisons", "comparison")
            votes.append(Winner(entry))
        self._log(
            "compare",
            lane,
            first=a.text,
            second=b.text,
            criterion=criterion.value,
            votes=[v.value for v in votes],
        )
        if committee.size == 1:
            return Preference(winner=votes[0], rationale="scripted judge")
        _, agg = self._take("aggregations", "aggregation")
        if agg == "majority":
            firsts = sum(1 for v in votes if v is Winner.FIRST)
            winner = Winner.FIRST if firsts * 2 > committee.size else Winner.SECOND
            return Preference(winner=winner, rationale="scripted majority aggregator")
        if agg in (Winner.FIRST.value, Winner.SECOND.value):
            return Preference(winner=Winner(agg), rationale="scripted aggregator")
        raise AggregationFailure(f"scripted aggregator entry has no verdict: {agg!r}")

    def recombine(self, optima: list[Hypothesis], ctx: ProposalContext) -> Hypothesis:
        require_optima(optima)
        lane, entry = self._take("recombinations", "recombination")
        self._log("recombine", lane, inputs=[h.text for h in optima], level=ctx.level)
        if not entry.strip():
            raise OracleFailure("empty_response", "scripted recombination is empty")
        return Hypothesis(
            text=entry,
            level=ctx.level,
            lineage=recombination_lineage(optima, ctx.level),
        )

    def generate(self, prompt: str) -> str:
        lane, entry = self._take("generations", None)
        self._log("generate", lane, prompt=prompt[:80])
        return entry
