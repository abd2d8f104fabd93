import json
from pathlib import Path

import pytest

from hyporefine.cli import (
    ConfigError,
    EmptyRun,
    MismatchedItems,
    RunConfig,
    build_oracle_factory,
    cmd_landscape,
    cmd_recall,
    cmd_replay,
    cmd_search,
    cmd_tournament,
    load_config,
    main,
)
from hyporefine.oracles import ChatBackend, ChatOracle, CallCache
from hyporefine.search import trace_from_jsonl
from hyporefine.templates import TemplateSet

from .test_remote import EchoTransport


def write_json(path: Path, data) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(data), encoding="utf-8")
    return path


def benchmark_doc(n=2):
    return [
        {
            "id": f"item-{i}",
            "background": {"question": f"question {i}?", "survey": ""},
            "coarse": f"coarse {i}",
            "fine_groundtruth": f"fine {i}",
        }
        for i in range(n)
    ]


def default_script():
    return {
        "lanes": {
            "default": {
                "proposals": [{"kind": "add", "description": "d", "text": "refined"}],
                "refinements": [None],
                "comparisons": ["first", "second", "second", "second"],
                "recombinations": ["merged"],
                "cycle": True,
            }
        }
    }


@pytest.fixture
def workdir(tmp_path):
    write_json(tmp_path / "bench.json", benchmark_doc())
    write_json(tmp_path / "script.json", default_script())
    write_json(
        tmp_path / "cfg.json",
        {
            "benchmark": "bench.json",
            "hierarchy": "builtin",
            "strategies": ["hhs", "greedy"],
            "output": "run",
            "seed": 3,
            "restarts": 2,
            "oracle": {
                "kind": "scripted",
                "script": "script.json",
                "committee": {"judges": ["j"]},
            },
        },
    )
    return tmp_path


def test_search_writes_one_dir_per_item_strategy(workdir):
    status = main(["search", "--config", str(workdir / "cfg.json")])
    assert status == 0
    run = workdir / "run"
    assert (run / "manifest.json").exists()
    dirs = sorted(p.relative_to(run).as_posix() for p in run.glob("items/*/*"))
    assert dirs == [
        "items/item-0/greedy",
        "items/item-0/hhs",
        "items/item-1/greedy",
        "items/item-1/hhs",
    ]
    for d in run.glob("items/*/*"):
        assert (d / "trace.jsonl").exists()
        assert (d / "final.json").exists()


def test_manifest_records_config_and_template_hashes(workdir):
    main(["search", "--config", str(workdir / "cfg.json")])
    manifest = json.loads((workdir / "run" / "manifest.json").read_text())
    assert manifest["command"] == "search"
    assert manifest["config"]["strategies"] == ["hhs", "greedy"]
    assert set(manifest["template_hashes"]) >= {"propose", "compare", "recombine"}
    assert manifest["hierarchy"][0]["name"] == "Mechanism of the Reaction"


def test_missing_benchmark_is_config_error(workdir):
    cfg_path = workdir / "cfg.json"
    cfg = json.loads(cfg_path.read_text())
    cfg["benchmark"] = "nope.json"
    cfg_path.write_text(json.dumps(cfg))
    status = main(["search", "--config", str(cfg_path)])
    assert status == 2


def test_unknown_strategy_is_config_error(workdir):
    status = main(
        ["search", "--config", str(workdir / "cfg.json"), "--strategies", "magic"]
    )
    assert status == 2


def test_rerun_reproduces_byte_identical_traces(workdir):
    main(["search", "--config", str(workdir / "cfg.json")])
    first = {
        p.relative_to(workdir / "run").as_posix(): p.read_bytes()
        for p in (workdir / "run").glob("items/*/*/trace.jsonl")
    }
    main(["search", "--config", str(workdir / "cfg.json"), "--output", "run2"])
    second = {
        p.relative_to(workdir / "run2").as_posix(): p.read_bytes()
        for p in (workdir / "run2").glob("items/*/*/trace.jsonl")
    }
    assert first == second


def test_partial_failure_exit_code(workdir):
    # item-1's comparison lane is under-provisioned, so that item aborts
    write_json(
        workdir / "script.json",
        {
            "lanes": {
                "default": {
                    "proposals": [{"kind": "add", "description": "d", "text": "t"}],
                    "refinements": [None],
                    "cycle": True,
                },
                "item-0/greedy": {"comparisons": ["second"] * 3},
                "item-1/greedy": {"comparisons": ["second"]},
            }
        },
    )
    status = main(
        [
            "search",
            "--config",
            str(workdir / "cfg.json"),
            "--strategies",
            "greedy",
            "--output",
            "partial",
        ]
    )
    assert status == 1
    finals = sorted((workdir / "partial").glob("items/*/greedy/final.json"))
    flags = [json.loads(p.read_text())["partial"] for p in finals]
    assert flags == [False, True]
    assert (workdir / "partial" / "manifest.json").exists()


def test_ambiguate_rewrites_start_point(workdir):
    script = default_script()
    script["lanes"]["default"]["generations"] = ["a broad direction"]
    write_json(workdir / "script.json", script)
    status = main(
        [
            "search",
            "--config",
            str(workdir / "cfg.json"),
            "--ambiguate",
            "--strategies",
            "greedy",
            "--output",
            "amb",
        ]
    )
    assert status == 0
    record = json.loads(
        (workdir / "amb" / "items" / "item-0" / "ambiguation.json").read_text()
    )
    assert record["generalized"]["text"] == "a broad direction"
    assert "prompt" in record
    trace = trace_from_jsonl(
        (workdir / "amb" / "items" / "item-0" / "greedy" / "trace.jsonl").read_bytes()
    )
    assert trace.levels[0].steps[0].candidate.lineage  # search ran from the rewrite


def test_replay_command_verifies_identity(workdir):
    main(["search", "--config", str(workdir / "cfg.json")])
    status = main(
        ["replay", "--run", str(workdir / "run"), "--output", str(workdir / "rerun")]
    )
    assert status == 0


def test_tournament_always_prefer_a(workdir):
    main(["search", "--config", str(workdir / "cfg.json")])
    judge_script = {
        "lanes": {
            "default": {
                "comparisons": ["first"] * 3 + ["second"] * 3,
                "cycle": True,
            }
        }
    }
    write_json(workdir / "judge.json", judge_script)
    cfg = json.loads((workdir / "cfg.json").read_text())
    cfg["oracle"] = {
        "kind": "scripted",
        "script": "judge.json",
        "committee": {"judges": ["j"]},
    }
    cfg["criteria"] = ["overall", "novelty"]
    cfg["output"] = "tournament"
    write_json(workdir / "cfg_t.json", cfg)
    status = main(
        [
            "tournament",
            "--config",
            str(workdir / "cfg_t.json"),
            "--run-a",
            str(workdir / "run"),
            "--run-b",
            str(workdir / "run"),
            "--strategy-a",
            "hhs",
            "--strategy-b",
            "greedy",
        ]
    )
    assert status == 0
    report = json.loads((workdir / "tournament" / "report.json").read_text())
    for criterion in ("overall", "novelty"):
        assert report["tournament"][criterion]["win"] == 100.0
        assert report["tournament"][criterion]["lose"] == 0.0

    rounds = json.loads(
        (workdir / "tournament" / "items" / "item-0.json").read_text()
    )["overall"]["rounds"]
    assert [r["order"] for r in rounds] == [["a", "b"]] * 3 + [["b", "a"]] * 3


def test_tournament_mismatched_items(workdir, tmp_path):
    main(["search", "--config", str(workdir / "cfg.json")])
    other = tmp_path / "other"
    write_json(other / "bench.json", benchmark_doc(1))
    write_json(other / "script.json", default_script())
    write_json(
        other / "cfg.json",
        {
            "benchmark": "bench.json",
            "strategies": ["greedy"],
            "output": "run",
            "oracle": {"kind": "scripted", "script": "script.json",
                       "committee": {"judges": ["j"]}},
        },
    )
    main(["search", "--config", str(other / "cfg.json")])
    # rename the single item dir to create disjoint ids
    items = other / "run" / "items"
    (items / "item-0").rename(items / "item-zzz")
    cfg = load_config(str(workdir / "cfg.json"), {"output": "t2"})
    with pytest.raises(MismatchedItems):
        cmd_tournament(
            cfg, workdir / "run", other / "run",
            strategy_a="hhs", strategy_b="greedy",
        )


def test_recall_exact_fixture_means(workdir):
    main(["search", "--config", str(workdir / "cfg.json")])
    eval_script = {
        "decompositions": [
            [
                {"text": "comp a", "role": "r", "function": "f", "context": "c"},
                {"text": "comp b", "role": "r", "function": "f", "context": "c"},
            ],
            [
                {"text": "comp c", "role": "r", "function": "f", "context": "c"},
            ],
        ],
        # item-0: greedy [3,2] hhs [1,0]; item-1: greedy [3] hhs [0]
        "scores": [3, 2, 1, 0, 3, 0],
    }
    write_json(workdir / "eval.json", eval_script)
    cfg = json.loads((workdir / "cfg.json").read_text())
    cfg["eval"] = {"script": "eval.json"}
    cfg["output"] = "recall"
    write_json(workdir / "cfg_r.json", cfg)
    status = main(
        ["recall", "--config", str(workdir / "cfg_r.json"), "--run", str(workdir / "run")]
    )
    assert status == 0
    report = json.loads((workdir / "recall" / "report.json").read_text())
    greedy = report["recall"]["greedy"]
    hhs = report["recall"]["hhs"]
    # greedy: item-0 soft 1.0 hard 5/6, item-1 soft 1.0 hard 1.0
    assert greedy["soft_recall"] == pytest.approx(1.0)
    assert greedy["hard_recall"] == pytest.approx((5 / 6 + 1.0) / 2)
    # hhs: item-0 soft 0.5 hard 1/6, item-1 soft 0 hard 0
    assert hhs["soft_recall"] == pytest.approx(0.25)
    assert hhs["hard_recall"] == pytest.approx((1 / 6) / 2)


def test_recall_steps_match_trace_budget(workdir):
    main(["search", "--config", str(workdir / "cfg.json")])
    eval_script = {
        "decompositions": [[{"text": "x"}], [{"text": "y"}]],
        "scores": [3, 3, 3, 3],
    }
    write_json(workdir / "eval.json", eval_script)
    cfg = load_config(
        str(workdir / "cfg.json"), {"eval": {"script": "eval.json"}, "output": "recall2"}
    )
    assert cmd_recall(cfg, workdir / "run") == 0
    for item_id in ("item-0", "item-1"):
        for strategy in ("greedy", "hhs"):
            record = json.loads(
                (workdir / "recall2" / "items" / item_id / f"{strategy}.json").read_text()
            )
            trace = trace_from_jsonl(
                (workdir / "run" / "items" / item_id / strategy / "trace.jsonl").read_bytes()
            )
            assert record["steps"] == trace.step_total == trace.budget["total"]


def test_recall_empty_run(workdir):
    cfg = load_config(str(workdir / "cfg.json"), {"output": "r3"})
    with pytest.raises(EmptyRun):
        cmd_recall(cfg, workdir / "does-not-exist")


def test_landscape_batch_outputs(workdir):
    cfg = load_config(
        str(workdir / "cfg.json"),
        {"output": "land", "landscape": {"count": 6, "depth": 3, "branching": 4}},
    )
    assert cmd_landscape(cfg) == 0
    out = workdir / "land"
    results = (out / "results.csv").read_text().strip().splitlines()
    assert len(results) == 7  # header + one row per landscape
    roughness_rows = (out / "roughness.csv").read_text().strip().splitlines()
    assert len(roughness_rows) == 1 + 6 * 3
    summary = json.loads((out / "summary.json").read_text())
    assert summary["roughness_monotone_violations"] == 0
    assert 0.0 <= summary["hier_win_fraction"] <= 1.0


def test_landscape_deterministic_outputs(workdir):
    overrides = {"landscape": {"count": 4, "depth": 2, "branching": 3}}
    cfg1 = load_config(str(workdir / "cfg.json"), dict(overrides, output="landA"))
    cfg2 = load_config(str(workdir / "cfg.json"), dict(overrides, output="landB"))
    cmd_landscape(cfg1)
    cmd_landscape(cfg2)
    for name in ("results.csv", "roughness.csv", "summary.json"):
        assert (workdir / "landA" / name).read_bytes() == (
            workdir / "landB" / name
        ).read_bytes()


def test_chat_oracle_cache_round_trip(workdir):
    transport = EchoTransport(verdict="2")
    cache_dir = workdir / "cache"

    def factory_with_fresh_backends(item_id: str, strategy: str):
        backend = ChatBackend(
            backend_id="main",
            endpoint="https://example.invalid/chat",
            model="m",
            cache=CallCache(cache_dir),
            transport=transport,
            backoff_base=0.0,
            sleeper=lambda s: None,
        )
        return ChatOracle({"main": backend}, proposer="main", seed=1)

    cfg = load_config(
        str(workdir / "cfg.json"),
        {
            "strategies": ["greedy"],
            "output": "chat1",
            "oracle": {"kind": "chat",
                       "backends": {"main": {"endpoint": "x", "model": "m"}},
                       "proposer": "main",
                       "committee": {"judges": ["main"]}},
        },
    )
    assert cmd_search(cfg, oracle_factory=factory_with_fresh_backends) == 0
    cold_calls = len(transport.calls)
    assert cold_calls > 0

    cfg2 = load_config(str(workdir / "cfg.json"), {**cfg.to_json(), "output": "chat2"})
    assert cmd_search(cfg2, oracle_factory=factory_with_fresh_backends) == 0
    assert len(transport.calls) == cold_calls  # warm cache: zero new requests

    for item in ("item-0", "item-1"):
        a = (workdir / "chat1" / "items" / item / "greedy" / "trace.jsonl").read_bytes()
        b = (workdir / "chat2" / "items" / item / "greedy" / "trace.jsonl").read_bytes()
        assert a == b


def test_load_config_flag_overrides(workdir):
    cfg = load_config(str(workdir / "cfg.json"), {"seed": 99, "strategies": "greedy"})
    assert cfg.seed == 99
    assert cfg.strategies == ("greedy",)
    assert cfg.benchmark == Path("bench.json")


def test_build_oracle_factory_validates(workdir):
    cfg = load_config(str(workdir / "cfg.json"), {"oracle": {"kind": "scripted"}})
    with pytest.raises(ConfigError):
        build_oracle_factory(cfg, TemplateSet.load())
    cfg2 = load_config(str(workdir / "cfg.json"), {"oracle": {"kind": "chat"}})
    with pytest.raises(ConfigError):
        build_oracle_factory(cfg2, TemplateSet.load())


def test_search_then_tournament_composability(workdir):
    # CLI outputs are valid inputs to downstream commands
    main(["search", "--config", str(workdir / "cfg.json")])
    cfg = load_config(
        str(workdir / "cfg.json"), {"output": "chain", "criteria": "overall"}
    )
    status = cmd_tournament(
        cfg, workdir / "run", workdir / "run", strategy_a="hhs", strategy_b="greedy"
    )
    assert status == 0
    assert (workdir / "chain" / "report.txt").exists()


def test_worker_pool_preserves_determinism(workdir):
    main(["search", "--config", str(workdir / "cfg.json"), "--output", "seq"])
    main(
        [
            "search",
            "--config",
            str(workdir / "cfg.json"),
            "--output",
            "par",
            "--workers",
            "4",
        ]
    )
    for trace in (workdir / "seq").glob("items/*/*/trace.jsonl"):
        twin = workdir / "par" / trace.relative_to(workdir / "seq")
        assert twin.read_bytes() == trace.read_bytes()


def test_landscape_softmax_mode(workdir):
    cfg = load_config(
        str(workdir / "cfg.json"),
        {
            "output": "landsoft",
            "landscape": {
                "count": 3,
                "depth": 2,
                "branching": 4,
                "aggregation": "softmax",
                "temperature": 0.5,
            },
        },
    )
    assert cmd_landscape(cfg) == 0
    summary = json.loads((workdir / "landsoft" / "summary.json").read_text())
    assert summary["count"] == 3


def test_custom_hierarchy_file(workdir):
    write_json(
        workdir / "hier.json",
        [{"name": "broad", "guidance": "g1"}, {"name": "narrow", "guidance": "g2"}],
    )
    status = main(
        [
            "search",
            "--config",
            str(workdir / "cfg.json"),
            "--hierarchy",
            "hier.json",
            "--strategies",
            "hhs",
            "--output",
            "hier-run",
        ]
    )
    assert status == 0
    manifest = json.loads((workdir / "hier-run" / "manifest.json").read_text())
    assert [lvl["name"] for lvl in manifest["hierarchy"]] == ["broad", "narrow"]
    trace = trace_from_jsonl(
        (workdir / "hier-run" / "items" / "item-0" / "hhs" / "trace.jsonl").read_bytes()
    )
    assert {record.level for record in trace.levels} == {1, 2}


def test_invalid_committee_is_config_error(workdir):
    cfg_path = workdir / "cfg.json"
    cfg = json.loads(cfg_path.read_text())
    cfg["oracle"]["committee"] = {"judges": ["a", "b", "c"]}  # no aggregator
    write_json(cfg_path, cfg)
    assert main(["search", "--config", str(cfg_path)]) == 2


def test_odd_rounds_is_config_error(workdir):
    assert main(
        [
            "tournament",
            "--config",
            str(workdir / "cfg.json"),
            "--run-a",
            "x",
            "--run-b",
            "y",
            "--rounds",
            "5",
        ]
    ) == 2


def test_invalid_landscape_spec_is_config_error(workdir):
    cfg_path = workdir / "cfg.json"
    cfg = json.loads(cfg_path.read_text())
    cfg["landscape"] = {"count": 2, "depth": 0, "branching": 4}
    write_json(cfg_path, cfg)
    assert main(["landscape", "--config", str(cfg_path), "--output", "bad"]) == 2
