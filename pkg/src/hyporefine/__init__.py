"""Hierarchical refinement of coarse research hypotheses.

A coarse research direction is refined into a fine-grained, experimentally
actionable hypothesis by searching an edit space level by level, guided by
a pluggable comparison oracle (remote chat model, judge committee, scripted
replay, or a synthetic reward landscape). The package also ships the
matching evaluation protocols: order-alternated pairwise tournaments and
component-level recall scoring.
"""

__version__ = "0.1.0"

from .domain import (
    BenchmarkItem,
    BenchmarkSet,
    Edit,
    EditKind,
    HierarchyLevel,
    HierarchySpec,
    Hypothesis,
    ResearchBackground,
    ambiguate,
    default_hierarchy,
    flat_hierarchy,
    parse_benchmark,
    parse_hierarchy,
    serialize_benchmark,
)
from .oracles import (
    ChatBackend,
    ChatOracle,
    CommitteeSpec,
    Criterion,
    Oracle,
    OracleBudget,
    Preference,
    ProposalContext,
    ScriptedOracle,
    Winner,
)
from .search import (
    SearchConfig,
    SearchTrace,
    Strategy,
    greedy_search,
    greedy_sc_search,
    hhs_search,
    local_search,
    with_in_context_rl,
)

__all__ = [
    "BenchmarkItem",
    "BenchmarkSet",
    "ChatBackend",
    "ChatOracle",
    "CommitteeSpec",
    "Criterion",
    "Edit",
    "EditKind",
    "HierarchyLevel",
    "HierarchySpec",
    "Hypothesis",
    "Oracle",
    "OracleBudget",
    "Preference",
    "ProposalContext",
    "ResearchBackground",
    "ScriptedOracle",
    "SearchConfig",
    "SearchTrace",
    "Strategy",
    "Winner",
    "ambiguate",
    "default_hierarchy",
    "flat_hierarchy",
    "greedy_search",
    "greedy_sc_search",
    "hhs_search",
    "local_search",
    "parse_benchmark",
    "parse_hierarchy",
    "serialize_benchmark",
    "with_in_context_rl",
]
