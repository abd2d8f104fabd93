from __future__ import annotations

import pytest

from hyporefine import (
    BenchmarkItem,
    CommitteeSpec,
    HierarchyLevel,
    HierarchySpec,
    Hypothesis,
    ResearchBackground,
    SearchConfig,
)


@pytest.fixture
def item() -> BenchmarkItem:
    return BenchmarkItem(
        id="item-1",
        background=ResearchBackground(
            question="How can the conversion be improved?", survey="prior methods"
        ),
        coarse=Hypothesis("use a catalyst", level=0),
        fine_groundtruth=Hypothesis("use a palladium catalyst at 80C in ethanol"),
    )


def hierarchy_of(depth: int) -> HierarchySpec:
    return HierarchySpec(
        levels=tuple(
            HierarchyLevel(name=f"stage-{i}", guidance=f"work on stage {i}")
            for i in range(1, depth + 1)
        )
    )


@pytest.fixture
def single_judge() -> CommitteeSpec:
    return CommitteeSpec(judges=("judge",))


def cfg_with(judges: int = 1, **kwargs) -> SearchConfig:
    committee = CommitteeSpec(
        judges=tuple(f"j{i}" for i in range(judges)),
        aggregator="agg" if judges > 1 else None,
    )
    return SearchConfig(committee=committee, **kwargs)


def proposal_lane(prefix: str, count: int) -> dict:
    return {
        "proposals": [
            {"kind": "add", "description": f"{prefix} edit {i}", "text": f"{prefix}-{i}"}
            for i in range(count)
        ]
    }
