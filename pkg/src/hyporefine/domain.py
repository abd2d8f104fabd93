"""Core data types, benchmark ingestion, and hierarchy configuration.

Hypotheses, edits, and hierarchy levels are immutable values shared by the
search, oracle, and evaluation layers. Hierarchy levels are numbered 1..p;
a hypothesis at level 0 is a coarse input that no refinement stage has
touched yet.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from enum import Enum
from functools import lru_cache
from importlib import resources
from typing import TYPE_CHECKING

if TYPE_CHECKING:  # pragma: no cover
    from .oracles.base import Oracle


class DomainError(Exception):
    """Base class for dataset and type-invariant failures."""


class MalformedDocument(DomainError):
    pass


class MissingField(DomainError):
    def __init__(self, field_name: str, item_index: int):
        super().__init__(f"item {item_index} is missing field {field_name!r}")
        self.field_name = field_name
        self.item_index = item_index


class DuplicateId(DomainError):
    pass


class EmptyHierarchy(DomainError):
    pass


class DuplicateLevelName(DomainError):
    pass


@dataclass(frozen=True)
class ResearchBackground:
    """A research question plus an optional survey of established methods."""

    question: str
    survey: str = ""

    def __post_init__(self):
        if not self.question.strip():
            raise ValueError("research question must be non-empty")


class EditKind(str, Enum):
    ADD = "add"
    DELETE = "delete"


@dataclass(frozen=True)
class Edit:
    """One atomic modification: add a detail/concept, or delete a redundant one."""

    kind: EditKind
    level: int
    description: str
    resulting_text: str

    def __post_init__(self):
        if not self.resulting_text.strip():
            raise ValueError("edit must carry a non-empty resulting text")
        if self.level < 1:
            raise ValueError("edit level indices start at 1")


def edit_id(edit: Edit) -> str:
    """Stable content-derived identifier used in hypothesis lineage."""
    payload = f"{edit.kind.value}|{edit.level}|{edit.description}|{edit.resulting_text}"
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:12]


@dataclass(frozen=True)
class Hypothesis:
    """A research hypothesis text with refinement provenance.

    ``level`` is the hierarchy level that last produced this text (0 for a
    coarse input, None when unknown, e.g. ground-truth annotations).
    ``lineage`` lists one identifier per accepted refinement event.
    """

    text: str
    level: int | None = None
    lineage: tuple[str, ...] = ()

    def __post_init__(self):
        if not self.text.strip():
            raise ValueError("hypothesis text must be non-empty")
        if self.level is not None and self.level < 0:
            raise ValueError("hypothesis level must be >= 0")
        object.__setattr__(self, "lineage", tuple(self.lineage))

    def to_json(self) -> dict:
        return {"text": self.text, "level": self.level, "lineage": list(self.lineage)}

    @classmethod
    def from_json(cls, data: dict) -> "Hypothesis":
        return cls(
            text=data["text"],
            level=data.get("level"),
            lineage=tuple(data.get("lineage", ())),
        )


@dataclass(frozen=True)
class HierarchyLevel:
    name: str
    guidance: str = ""

    def __post_init__(self):
        if not self.name.strip():
            raise ValueError("hierarchy level name must be non-empty")


@dataclass(frozen=True)
class HierarchySpec:
    """Ordered abstraction levels, most abstract first. Levels are 1-based."""

    levels: tuple[HierarchyLevel, ...]

    def __post_init__(self):
        object.__setattr__(self, "levels", tuple(self.levels))
        if not self.levels:
            raise EmptyHierarchy("a hierarchy needs at least one level")
        names = [lvl.name for lvl in self.levels]
        if len(set(names)) != len(names):
            dupes = sorted({n for n in names if names.count(n) > 1})
            raise DuplicateLevelName(f"duplicate level names: {dupes}")

    @property
    def depth(self) -> int:
        return len(self.levels)

    def level(self, index: int) -> HierarchyLevel:
        """Return the level for a 1-based index."""
        if not 1 <= index <= self.depth:
            raise IndexError(f"level {index} outside 1..{self.depth}")
        return self.levels[index - 1]

    def to_json(self) -> list[dict]:
        return [{"name": lvl.name, "guidance": lvl.guidance} for lvl in self.levels]


@dataclass(frozen=True)
class BenchmarkItem:
    id: str
    background: ResearchBackground
    coarse: Hypothesis
    fine_groundtruth: Hypothesis

    def __post_init__(self):
        if not self.id.strip():
            raise ValueError("benchmark item id must be non-empty")
        if self.coarse.level != 0:
            raise ValueError("coarse hypothesis must carry level 0")


@dataclass(frozen=True)
class BenchmarkSet:
    items: tuple[BenchmarkItem, ...] = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "items", tuple(self.items))
        seen = set()
        for item in self.items:
            if item.id in seen:
                raise DuplicateId(f"duplicate benchmark item id: {item.id!r}")
            seen.add(item.id)

    def __len__(self) -> int:
        return len(self.items)

    def __iter__(self):
        return iter(self.items)

    def get(self, item_id: str) -> BenchmarkItem:
        for item in self.items:
            if item.id == item_id:
                return item
        raise KeyError(item_id)

    def ids(self) -> list[str]:
        return [item.id for item in self.items]


def _decode_utf8(data: bytes | str) -> str:
    if isinstance(data, str):
        return data
    try:
        return data.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise MalformedDocument(f"document is not valid UTF-8: {exc}") from exc


def parse_benchmark(data: bytes | str) -> BenchmarkSet:
    """Parse a benchmark document: a JSON array of items.

    Each item is ``{"id", "background": {"question", "survey"}, "coarse",
    "fine_groundtruth"}`` with string values throughout.
    """
    text = _decode_utf8(data)
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise MalformedDocument(f"invalid JSON: {exc}") from exc
    if not isinstance(raw, list):
        raise MalformedDocument("top level must be an array of items")

    items = []
    seen: set[str] = set()
    for index, entry in enumerate(raw):
        if not isinstance(entry, dict):
            raise MalformedDocument(f"item {index} is not an object")
        for field_name in ("id", "background", "coarse", "fine_groundtruth"):
            if field_name not in entry:
                raise MissingField(field_name, index)
        background = entry["background"]
        if not isinstance(background, dict):
            raise MalformedDocument(f"item {index}: background must be an object")
        if "question" not in background:
            raise MissingField("background.question", index)
        try:
            item = BenchmarkItem(
                id=str(entry["id"]),
                background=ResearchBackground(
                    question=str(background["question"]),
                    survey=str(background.get("survey", "")),
                ),
                coarse=Hypothesis(text=str(entry["coarse"]), level=0),
                fine_groundtruth=Hypothesis(text=str(entry["fine_groundtruth"])),
            )
        except ValueError as exc:
            raise MalformedDocument(f"item {index}: {exc}") from exc
        if item.id in seen:
            raise DuplicateId(f"duplicate benchmark item id: {item.id!r}")
        seen.add(item.id)
        items.append(item)
    return BenchmarkSet(items=tuple(items))


def serialize_benchmark(benchmark: BenchmarkSet) -> bytes:
    """Inverse of :func:`parse_benchmark`; round-trips every valid set."""
    raw = [
        {
            "id": item.id,
            "background": {
                "question": item.background.question,
                "survey": item.background.survey,
            },
            "coarse": item.coarse.text,
            "fine_groundtruth": item.fine_groundtruth.text,
        }
        for item in benchmark
    ]
    return json.dumps(raw, ensure_ascii=False, indent=2).encode("utf-8")


def parse_hierarchy(data: bytes | str) -> HierarchySpec:
    """Parse a hierarchy document: a JSON array of {"name", "guidance"}."""
    text = _decode_utf8(data)
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise MalformedDocument(f"invalid JSON: {exc}") from exc
    if not isinstance(raw, list):
        raise MalformedDocument("hierarchy document must be an array of levels")
    if not raw:
        raise EmptyHierarchy("hierarchy document lists no levels")
    levels = []
    for index, entry in enumerate(raw):
        if not isinstance(entry, dict) or "name" not in entry:
            raise MalformedDocument(f"level {index} must be an object with a name")
        try:
            levels.append(
                HierarchyLevel(
                    name=str(entry["name"]), guidance=str(entry.get("guidance", ""))
                )
            )
        except ValueError as exc:
            raise MalformedDocument(f"level {index}: {exc}") from exc
    return HierarchySpec(levels=tuple(levels))


@lru_cache(maxsize=1)
def default_hierarchy() -> HierarchySpec:
    """The built-in five-level chemistry hierarchy."""
    ref = resources.files("hyporefine").joinpath("data/chemistry_hierarchy.json")
    return parse_hierarchy(ref.read_bytes())


def flat_hierarchy() -> HierarchySpec:
    """Single-level hierarchy used by flat (non-hierarchical) search."""
    return HierarchySpec(
        levels=(
            HierarchyLevel(
                name="flat",
                guidance="single-stage search over the full edit space",
            ),
        )
    )


def ambiguate(coarse: Hypothesis, oracle: "Oracle") -> Hypothesis:
    """Generalize a coarse hypothesis, stripping identifying specifics.

    Optional preprocessing that keeps the research direction while removing
    details that would leak the annotated answer into the search's starting
    point. Delegates entirely to the oracle; callers wanting the prompt on
    record can render it via :func:`ambiguation_prompt`.
    """
    from .oracles.base import OracleFailure

    text = oracle.generate(ambiguation_prompt(coarse))
    cleaned = _strip_hypothesis_marker(text)
    if not cleaned.strip():
        raise OracleFailure("empty_response", "ambiguation returned empty text")
    return Hypothesis(text=cleaned, level=0, lineage=())


def ambiguation_prompt(coarse: Hypothesis) -> str:
    from .templates import TemplateSet

    return TemplateSet.load().render("ambiguate", hypothesis=coarse.text)


def _strip_hypothesis_marker(text: str) -> str:
    stripped = text.strip()
    marker = "HYPOTHESIS:"
    if marker in stripped:
        stripped = stripped.split(marker, 1)[1].strip()
    return stripped
