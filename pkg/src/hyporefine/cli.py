"""Command-line surface: search, tournament, recall, landscape, replay.

One JSON config document drives every command; each CLI flag mirrors a
config key and overrides the file value. Every command writes its run
manifest before issuing any oracle call, so a crashed run is always
diagnosable from the manifest plus whatever partial outputs exist.

Exit codes: 0 success, 1 partial failures, 2 config error.
"""

from __future__ import annotations

import argparse
import json
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable

from . import __version__
from .domain import (
    BenchmarkItem,
    BenchmarkSet,
    DomainError,
    HierarchySpec,
    Hypothesis,
    ambiguate,
    ambiguation_prompt,
    default_hierarchy,
    parse_benchmark,
    parse_hierarchy,
)
from .evaluation import (
    ChatComponentJudge,
    ChatDecomposer,
    Criterion,
    RecallResult,
    ScriptedComponentJudge,
    ScriptedDecomposer,
    TournamentAborted,
    aggregate_report,
    decompose,
    hard_recall,
    run_tournament,
    score_against,
    soft_recall,
)
from .oracles import (
    CallCache,
    ChatBackend,
    ChatOracle,
    CommitteeSpec,
    Oracle,
    OracleError,
    ScriptedOracle,
)
from .rng import derive_seed
from .search import (
    PartialTrace,
    SearchConfig,
    Strategy,
    greedy_search,
    greedy_sc_search,
    hhs_search,
    trace_from_jsonl,
    trace_to_jsonl,
)
from .synthland import (
    MEAN,
    InvalidSpec,
    LandscapeOracle,
    LandscapeSpec,
    brute_force_optimum,
    decode_path,
    gen_landscape,
    landscape_hierarchy,
    landscape_item,
    node_value,
    roughness,
)
from .templates import TemplateSet

EXIT_OK = 0
EXIT_PARTIAL = 1
EXIT_CONFIG = 2

STRATEGY_NAMES = tuple(s.value for s in Strategy)


class ConfigError(Exception):
    pass


class MismatchedItems(Exception):
    pass


class EmptyRun(Exception):
    pass


OracleFactory = Callable[[str, str], Oracle]


@dataclass
class RunConfig:
    benchmark: Path | None = None
    hierarchy: str = "builtin"
    strategies: tuple[str, ...] = ("hhs",)
    in_context_rl: bool = False
    patience: int = 3
    restarts: int = 3
    max_steps_per_level: int = 50
    rejected_context_window: int = 3
    ambiguate: bool = False
    output: Path = Path("runs/out")
    seed: int = 0
    workers: int = 1
    rounds: int = 6
    criteria: tuple[str, ...] = tuple(c.value for c in Criterion)
    oracle: dict = field(default_factory=lambda: {"kind": "scripted"})
    eval: dict = field(default_factory=dict)
    landscape: dict = field(default_factory=dict)
    config_dir: Path = Path(".")

    def resolve(self, value: str | Path) -> Path:
        path = Path(value)
        return path if path.is_absolute() else self.config_dir / path

    def search_config(self) -> SearchConfig:
        committee_cfg = self.oracle.get("committee", {})
        judges = tuple(committee_cfg.get("judges", ("judge",)))
        aggregator = committee_cfg.get("aggregator")
        try:
            return SearchConfig(
                patience_k=self.patience,
                restarts_per_level=self.restarts,
                max_steps_per_level=self.max_steps_per_level,
                in_context_rl=self.in_context_rl,
                rejected_context_window=self.rejected_context_window,
                committee=CommitteeSpec(judges=judges, aggregator=aggregator),
            )
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def to_json(self) -> dict:
        return {
            "benchmark": str(self.benchmark) if self.benchmark else None,
            "hierarchy": self.hierarchy,
            "strategies": list(self.strategies),
            "in_context_rl": self.in_context_rl,
            "patience": self.patience,
            "restarts": self.restarts,
            "max_steps_per_level": self.max_steps_per_level,
            "rejected_context_window": self.rejected_context_window,
            "ambiguate": self.ambiguate,
            "output": str(self.output),
            "seed": self.seed,
            "workers": self.workers,
            "rounds": self.rounds,
            "criteria": list(self.criteria),
            "oracle": self.oracle,
            "eval": self.eval,
            "landscape": self.landscape,
        }


def load_config(path: str | None, overrides: dict) -> RunConfig:
    raw: dict = {}
    config_dir = Path(".")
    if path is not None:
        config_path = Path(path)
        if not config_path.exists():
            raise ConfigError(f"config file not found: {config_path}")
        try:
            raw = json.loads(config_path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file is not valid JSON: {exc}") from exc
        config_dir = config_path.resolve().parent
    raw.update({k: v for k, v in overrides.items() if v is not None})

    cfg = RunConfig(config_dir=config_dir)
    if raw.get("benchmark"):
        cfg.benchmark = Path(raw["benchmark"])
    cfg.hierarchy = raw.get("hierarchy", cfg.hierarchy)
    strategies = raw.get("strategies", list(cfg.strategies))
    if isinstance(strategies, str):
        strategies = [s.strip() for s in strategies.split(",") if s.strip()]
    cfg.strategies = tuple(strategies)
    cfg.in_context_rl = bool(raw.get("in_context_rl", cfg.in_context_rl))
    cfg.patience = int(raw.get("patience", cfg.patience))
    cfg.restarts = int(raw.get("restarts", cfg.restarts))
    cfg.max_steps_per_level = int(
        raw.get("max_steps_per_level", cfg.max_steps_per_level)
    )
    cfg.rejected_context_window = int(
        raw.get("rejected_context_window", cfg.rejected_context_window)
    )
    cfg.ambiguate = bool(raw.get("ambiguate", cfg.ambiguate))
    cfg.output = Path(raw.get("output", cfg.output))
    cfg.seed = int(raw.get("seed", cfg.seed))
    cfg.workers = int(raw.get("workers", cfg.workers))
    cfg.rounds = int(raw.get("rounds", cfg.rounds))
    criteria = raw.get("criteria", list(cfg.criteria))
    if isinstance(criteria, str):
        criteria = [c.strip() for c in criteria.split(",") if c.strip()]
    cfg.criteria = tuple(criteria)
    cfg.oracle = raw.get("oracle", cfg.oracle)
    cfg.eval = raw.get("eval", cfg.eval)
    cfg.landscape = raw.get("landscape", cfg.landscape)

    if not cfg.strategies:
        raise ConfigError("strategies must be non-empty")
    for name in cfg.strategies:
        if name not in STRATEGY_NAMES:
            raise ConfigError(
                f"unknown strategy {name!r}; expected one of {STRATEGY_NAMES}"
            )
    for name in cfg.criteria:
        try:
            Criterion(name)
        except ValueError:
            raise ConfigError(f"unknown criterion {name!r}") from None
    if cfg.rounds < 2 or cfg.rounds % 2 != 0:
        raise ConfigError("rounds must be an even number >= 2")
    return cfg


def _load_benchmark(cfg: RunConfig) -> BenchmarkSet:
    if cfg.benchmark is None:
        raise ConfigError("no benchmark path configured")
    path = cfg.resolve(cfg.benchmark)
    if not path.exists():
        raise ConfigError(f"benchmark file not found: {path}")
    try:
        return parse_benchmark(path.read_bytes())
    except DomainError as exc:
        raise ConfigError(f"benchmark file {path} is invalid: {exc}") from exc


def _load_hierarchy(cfg: RunConfig) -> HierarchySpec:
    if cfg.hierarchy == "builtin":
        return default_hierarchy()
    path = cfg.resolve(cfg.hierarchy)
    if not path.exists():
        raise ConfigError(f"hierarchy file not found: {path}")
    try:
        return parse_hierarchy(path.read_bytes())
    except DomainError as exc:
        raise ConfigError(f"hierarchy file {path} is invalid: {exc}") from exc


def _load_templates(cfg: RunConfig) -> TemplateSet:
    override = cfg.oracle.get("templates_dir")
    return TemplateSet.load(cfg.resolve(override) if override else None)


def build_backends(cfg: RunConfig, transport=None) -> dict[str, ChatBackend]:
    cache_dir = cfg.oracle.get("cache_dir")
    cache = CallCache(cfg.resolve(cache_dir)) if cache_dir else None
    backends: dict[str, ChatBackend] = {}
    for name, spec in cfg.oracle.get("backends", {}).items():
        backends[name] = ChatBackend(
            backend_id=name,
            endpoint=spec.get("endpoint", ""),
            model=spec.get("model", ""),
            credential_env=spec.get("credential_env"),
            gen_temperature=float(spec.get("gen_temperature", 1.0)),
            judge_temperature=float(spec.get("judge_temperature", 0.0)),
            timeout=float(spec.get("timeout", 60.0)),
            max_retries=int(spec.get("max_retries", 5)),
            backoff_base=float(spec.get("backoff_base", 0.5)),
            offline=bool(spec.get("offline", False)),
            cache=cache,
            transport=transport,
        )
    return backends


def build_oracle_factory(
    cfg: RunConfig, templates: TemplateSet, transport=None
) -> OracleFactory:
    kind = cfg.oracle.get("kind", "scripted")
    cap = cfg.oracle.get("budget_cap")

    if kind == "scripted":
        script_path = cfg.oracle.get("script")
        if not script_path:
            raise ConfigError("scripted oracle needs an oracle.script path")
        path = cfg.resolve(script_path)
        if not path.exists():
            raise ConfigError(f"oracle script not found: {path}")
        script = json.loads(path.read_text(encoding="utf-8"))

        def scripted_factory(item_id: str, strategy: str) -> Oracle:
            oracle = ScriptedOracle.from_json(script, cap=cap)
            return oracle.scoped(item_id).scoped(strategy)

        return scripted_factory

    if kind == "chat":
        backends = build_backends(cfg, transport=transport)
        if not backends:
            raise ConfigError("chat oracle needs at least one backend")
        proposer = cfg.oracle.get("proposer")
        if proposer not in backends:
            raise ConfigError(f"oracle.proposer must name a backend, got {proposer!r}")

        def chat_factory(item_id: str, strategy: str) -> Oracle:
            return ChatOracle(
                backends,
                proposer=proposer,
                refiner=cfg.oracle.get("refiner"),
                recombiner=cfg.oracle.get("recombiner"),
                generator=cfg.oracle.get("generator"),
                templates=templates,
                cap=cap,
                seed=derive_seed(cfg.seed, item_id, strategy),
            )

        return chat_factory

    raise ConfigError(f"unknown oracle kind: {kind!r}")


def _write_json(path: Path, payload: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(
        json.dumps(payload, indent=2, sort_keys=True, ensure_ascii=True) + "\n",
        encoding="utf-8",
    )


def _write_manifest(cfg: RunConfig, command: str, out_dir: Path, extra: dict | None = None) -> None:
    templates = _load_templates(cfg)
    manifest = {
        "command": command,
        "package_version": __version__,
        "config": cfg.to_json(),
        "config_dir": str(cfg.config_dir),
        "template_hashes": templates.hashes(),
        "backends": {
            name: {"model": spec.get("model", ""), "endpoint": spec.get("endpoint", "")}
            for name, spec in cfg.oracle.get("backends", {}).items()
        },
    }
    if extra:
        manifest.update(extra)
    _write_json(out_dir / "manifest.json", manifest)


# -- search --------------------------------------------------------------------

_STRATEGY_RUNNERS = {
    Strategy.HIERARCHICAL.value: lambda item, hierarchy, scfg, oracle: hhs_search(
        item, hierarchy, scfg, oracle
    ),
    Strategy.GREEDY.value: lambda item, hierarchy, scfg, oracle: greedy_search(
        item, scfg, oracle
    ),
    Strategy.GREEDY_SC.value: lambda item, hierarchy, scfg, oracle: greedy_sc_search(
        item, scfg, oracle
    ),
}


def _run_one(
    item: BenchmarkItem,
    strategy: str,
    hierarchy: HierarchySpec,
    scfg: SearchConfig,
    oracle: Oracle,
    out_dir: Path,
) -> bool:
    """Run one (item, strategy) pair; returns True when it completed."""
    item_dir = out_dir / "items" / item.id / strategy
    item_dir.mkdir(parents=True, exist_ok=True)
    try:
        _, trace = _STRATEGY_RUNNERS[strategy](item, hierarchy, scfg, oracle)
        ok = True
    except PartialTrace as exc:
        trace = exc.trace
        ok = False
    (item_dir / "trace.jsonl").write_bytes(trace_to_jsonl(trace))
    _write_json(
        item_dir / "final.json",
        {
            "item": item.id,
            "strategy": strategy,
            "final": trace.final.to_json(),
            "steps": trace.step_total,
            "partial": trace.partial,
        },
    )
    return ok


def cmd_search(cfg: RunConfig, oracle_factory: OracleFactory | None = None) -> int:
    benchmark = _load_benchmark(cfg)
    hierarchy = _load_hierarchy(cfg)
    templates = _load_templates(cfg)
    out_dir = cfg.resolve(cfg.output)
    out_dir.mkdir(parents=True, exist_ok=True)
    _write_manifest(cfg, "search", out_dir, {"hierarchy": hierarchy.to_json()})

    if oracle_factory is None:
        oracle_factory = build_oracle_factory(cfg, templates)
    scfg = cfg.search_config()

    items = list(benchmark)
    if cfg.ambiguate:
        prepared = []
        for item in items:
            oracle = oracle_factory(item.id, "ambiguate")
            generalized = ambiguate(item.coarse, oracle)
            _write_json(
                out_dir / "items" / item.id / "ambiguation.json",
                {
                    "item": item.id,
                    "prompt": ambiguation_prompt(item.coarse),
                    "original": item.coarse.to_json(),
                    "generalized": generalized.to_json(),
                },
            )
            prepared.append(replace(item, coarse=generalized))
        items = prepared

    jobs = [(item, strategy) for item in items for strategy in cfg.strategies]

    def run_job(job) -> bool:
        item, strategy = job
        oracle = oracle_factory(item.id, strategy)
        return _run_one(item, strategy, hierarchy, scfg, oracle, out_dir)

    if cfg.workers > 1:
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            results = list(pool.map(run_job, jobs))
    else:
        results = [run_job(job) for job in jobs]

    failures = results.count(False)
    print(f"search: {len(results) - failures}/{len(results)} runs completed -> {out_dir}")
    return EXIT_PARTIAL if failures else EXIT_OK


# -- run-directory introspection -------------------------------------------------


def _run_strategies(run_dir: Path) -> list[str]:
    items_dir = run_dir / "items"
    found: set[str] = set()
    if items_dir.exists():
        for item_dir in items_dir.iterdir():
            for strategy_dir in item_dir.iterdir():
                if (strategy_dir / "final.json").exists():
                    found.add(strategy_dir.name)
    return sorted(found)


def _run_finals(run_dir: Path, strategy: str) -> dict[str, dict]:
    finals: dict[str, dict] = {}
    items_dir = run_dir / "items"
    if items_dir.exists():
        for item_dir in sorted(items_dir.iterdir()):
            final_path = item_dir / strategy / "final.json"
            if final_path.exists():
                finals[item_dir.name] = json.loads(final_path.read_text(encoding="utf-8"))
    return finals


def _pick_strategy(run_dir: Path, requested: str | None) -> str:
    strategies = _run_strategies(run_dir)
    if not strategies:
        raise EmptyRun(f"no completed runs under {run_dir}")
    if requested is None:
        if len(strategies) > 1:
            raise ConfigError(
                f"{run_dir} holds several strategies {strategies}; pick one explicitly"
            )
        return strategies[0]
    if requested not in strategies:
        raise ConfigError(f"strategy {requested!r} not present in {run_dir}")
    return requested


# -- tournament ------------------------------------------------------------------


def cmd_tournament(
    cfg: RunConfig,
    run_a: Path,
    run_b: Path,
    strategy_a: str | None = None,
    strategy_b: str | None = None,
    oracle: Oracle | None = None,
) -> int:
    strategy_a = _pick_strategy(run_a, strategy_a)
    strategy_b = _pick_strategy(run_b, strategy_b)
    finals_a = _run_finals(run_a, strategy_a)
    finals_b = _run_finals(run_b, strategy_b)
    if set(finals_a) != set(finals_b):
        only_a = sorted(set(finals_a) - set(finals_b))
        only_b = sorted(set(finals_b) - set(finals_a))
        raise MismatchedItems(
            f"run item ids differ (only in A: {only_a}, only in B: {only_b})"
        )
    if not finals_a:
        raise EmptyRun("both run directories are empty")

    out_dir = cfg.resolve(cfg.output)
    out_dir.mkdir(parents=True, exist_ok=True)
    _write_manifest(
        cfg,
        "tournament",
        out_dir,
        {"run_a": str(run_a), "run_b": str(run_b),
         "strategy_a": strategy_a, "strategy_b": strategy_b},
    )

    templates = _load_templates(cfg)
    if oracle is None:
        oracle = build_oracle_factory(cfg, templates)("tournament", "judge")
    committee = cfg.search_config().committee
    criteria = [Criterion(name) for name in cfg.criteria]

    results = []
    aborted = False
    for item_id in sorted(finals_a):
        hyp_a = Hypothesis.from_json(finals_a[item_id]["final"])
        hyp_b = Hypothesis.from_json(finals_b[item_id]["final"])
        item_records = {}
        for criterion in criteria:
            try:
                outcome = run_tournament(
                    hyp_a, hyp_b, criterion, committee, oracle, rounds=cfg.rounds
                )
            except TournamentAborted as exc:
                item_records[criterion.value] = {
                    "aborted": True,
                    "rounds": [r.to_json() for r in exc.rounds],
                }
                aborted = True
                continue
            item_records[criterion.value] = outcome.to_json()
            results.append((criterion, outcome.verdict))
        _write_json(out_dir / "items" / f"{item_id}.json", item_records)

    if not results:
        raise EmptyRun("no tournament completed")
    report = aggregate_report(tournament_results=results)
    _write_json(out_dir / "report.json", report.to_json())
    (out_dir / "report.txt").write_text(report.to_text(), encoding="utf-8")
    print(report.to_text(), end="")
    return EXIT_PARTIAL if aborted else EXIT_OK


# -- recall ----------------------------------------------------------------------


def _build_eval_backends(cfg: RunConfig, templates: TemplateSet):
    script_path = cfg.eval.get("script")
    if script_path:
        path = cfg.resolve(script_path)
        if not path.exists():
            raise ConfigError(f"eval script not found: {path}")
        script = json.loads(path.read_text(encoding="utf-8"))
        decomposer = ScriptedDecomposer(script.get("decompositions", []))
        judge = ScriptedComponentJudge(script.get("scores", []))
        return decomposer, judge
    backends = build_backends(cfg)
    decomposer_name = cfg.eval.get("decomposer_backend")
    judge_name = cfg.eval.get("judge_backend", decomposer_name)
    if decomposer_name not in backends or judge_name not in backends:
        raise ConfigError("eval needs decomposer_backend/judge_backend or a script")
    return (
        ChatDecomposer(backends[decomposer_name], templates),
        ChatComponentJudge(backends[judge_name], templates),
    )


def cmd_recall(
    cfg: RunConfig,
    run_dir: Path,
    strategy: str | None = None,
    decomposer=None,
    judge=None,
) -> int:
    benchmark = _load_benchmark(cfg)
    strategies = [strategy] if strategy else _run_strategies(run_dir)
    if not strategies:
        raise EmptyRun(f"no completed runs under {run_dir}")

    out_dir = cfg.resolve(cfg.output)
    out_dir.mkdir(parents=True, exist_ok=True)
    _write_manifest(cfg, "recall", out_dir, {"run": str(run_dir)})

    templates = _load_templates(cfg)
    if decomposer is None or judge is None:
        built_decomposer, built_judge = _build_eval_backends(cfg, templates)
        decomposer = decomposer or built_decomposer
        judge = judge or built_judge

    rows: list[RecallResult] = []
    finals_by_strategy = {strat: _run_finals(run_dir, strat) for strat in strategies}
    item_ids = sorted(finals_by_strategy[strategies[0]])
    if not item_ids:
        raise EmptyRun(f"no items under {run_dir}")

    for item_id in item_ids:
        item = benchmark.get(item_id)
        gt_components = decompose(item.fine_groundtruth, decomposer)
        for strat in strategies:
            finals = finals_by_strategy[strat]
            if item_id not in finals:
                raise MismatchedItems(f"item {item_id} missing for strategy {strat}")
            candidate = Hypothesis.from_json(finals[item_id]["final"])
            scores = score_against(gt_components, candidate, judge)
            trace_path = run_dir / "items" / item_id / strat / "trace.jsonl"
            steps = trace_from_jsonl(trace_path.read_bytes()).step_total
            soft = soft_recall(scores)
            hard = hard_recall(scores)
            rows.append(
                RecallResult(
                    strategy=strat, item_id=item_id, soft=soft, hard=hard, steps=steps
                )
            )
            _write_json(
                out_dir / "items" / item_id / f"{strat}.json",
                {
                    "item": item_id,
                    "strategy": strat,
                    "soft_recall": soft,
                    "hard_recall": hard,
                    "steps": steps,
                    "scores": [s.to_json() for s in scores],
                },
            )

    report = aggregate_report(recall_results=rows)
    _write_json(out_dir / "report.json", report.to_json())
    (out_dir / "report.txt").write_text(report.to_text(), encoding="utf-8")
    print(report.to_text(), end="")
    return EXIT_OK


# -- landscape -------------------------------------------------------------------


def cmd_landscape(cfg: RunConfig) -> int:
    params = cfg.landscape
    count = int(params.get("count", 10))
    depth = int(params.get("depth", 3))
    branching = int(params.get("branching", 8))
    scales = params.get("contribution_scale", ())
    noise_sigma = float(params.get("noise_sigma", 0.0))
    aggregation = params.get("aggregation", MEAN)
    temperature = params.get("temperature")
    comparison_noise = float(params.get("comparison_noise", 0.0))

    out_dir = cfg.resolve(cfg.output)
    out_dir.mkdir(parents=True, exist_ok=True)
    _write_manifest(cfg, "landscape", out_dir)

    scfg = cfg.search_config()
    flat_cfg = replace(scfg, restarts_per_level=1)

    roughness_rows: list[str] = ["landscape,seed,level,roughness"]
    result_rows: list[str] = [
        "landscape,seed,hier_reward,flat_reward,optimum,hier_wins"
    ]
    monotone_violations = 0
    hier_wins = 0
    sum_hier = sum_flat = sum_opt = 0.0

    for index in range(count):
        seed_i = derive_seed(cfg.seed, "landscape", str(index))
        spec = LandscapeSpec(
            depth=depth,
            branching=branching,
            contribution_scale=tuple(scales) if scales else (),
            noise_sigma=noise_sigma,
            aggregation=aggregation,
            temperature=temperature,
            seed=seed_i,
        )
        landscape = gen_landscape(spec)

        values = [roughness(landscape, level) for level in range(1, depth + 1)]
        for level, value in enumerate(values, start=1):
            roughness_rows.append(f"{index},{seed_i},{level},{value!r}")
        if aggregation == MEAN and any(
            earlier > later for earlier, later in zip(values, values[1:])
        ):
            monotone_violations += 1

        item = landscape_item(landscape, f"landscape-{index}")
        hierarchy = landscape_hierarchy(spec)
        hier_oracle = LandscapeOracle(
            landscape, comparison_noise, seed=derive_seed(cfg.seed, str(index), "hier")
        )
        flat_oracle = LandscapeOracle(
            landscape, comparison_noise, seed=derive_seed(cfg.seed, str(index), "flat")
        )
        hier_final, _ = hhs_search(item, hierarchy, scfg, hier_oracle)
        flat_final, _ = greedy_search(item, flat_cfg, flat_oracle)

        hier_reward = node_value(landscape, decode_path(hier_final.text))
        flat_reward = node_value(landscape, decode_path(flat_final.text))
        _, optimum = brute_force_optimum(landscape)
        wins = hier_reward >= flat_reward
        hier_wins += int(wins)
        sum_hier += hier_reward
        sum_flat += flat_reward
        sum_opt += optimum
        result_rows.append(
            f"{index},{seed_i},{hier_reward!r},{flat_reward!r},{optimum!r},{int(wins)}"
        )

    (out_dir / "roughness.csv").write_text("\n".join(roughness_rows) + "\n", encoding="utf-8")
    (out_dir / "results.csv").write_text("\n".join(result_rows) + "\n", encoding="utf-8")
    summary = {
        "count": count,
        "hier_win_fraction": hier_wins / count,
        "mean_hier_reward": sum_hier / count,
        "mean_flat_reward": sum_flat / count,
        "mean_optimum": sum_opt / count,
        "roughness_monotone_violations": monotone_violations,
    }
    _write_json(out_dir / "summary.json", summary)
    print(json.dumps(summary, indent=2, sort_keys=True))
    if aggregation == MEAN and monotone_violations:
        print(
            f"landscape: {monotone_violations} landscapes violate roughness "
            "monotonicity",
            file=sys.stderr,
        )
        return EXIT_PARTIAL
    return EXIT_OK


# -- replay ----------------------------------------------------------------------


def cmd_replay(run_dir: Path, output: Path, oracle_factory: OracleFactory | None = None) -> int:
    manifest_path = run_dir / "manifest.json"
    if not manifest_path.exists():
        raise ConfigError(f"no manifest under {run_dir}")
    manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    if manifest.get("command") != "search":
        raise ConfigError("replay only supports search manifests")

    cfg = load_config(None, manifest["config"])
    cfg.config_dir = Path(manifest.get("config_dir", "."))
    cfg.output = output
    status = cmd_search(cfg, oracle_factory=oracle_factory)
    if status != EXIT_OK:
        return status

    divergence = 0
    for trace_path in sorted((run_dir / "items").rglob("trace.jsonl")):
        relative = trace_path.relative_to(run_dir)
        new_path = cfg.resolve(output) / relative
        if not new_path.exists() or new_path.read_bytes() != trace_path.read_bytes():
            divergence += 1
            print(f"replay: divergence in {relative}", file=sys.stderr)
    if divergence:
        return EXIT_PARTIAL
    print(f"replay: traces identical to {run_dir}")
    return EXIT_OK


# -- argument parsing --------------------------------------------------------------


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="JSON config file")
    parser.add_argument("--output", help="output directory (config key: output)")
    parser.add_argument("--seed", type=int, help="run seed (config key: seed)")


def _overrides(args: argparse.Namespace, keys: tuple[str, ...]) -> dict:
    return {key: getattr(args, key, None) for key in keys}


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="hyporefine",
        description="Hierarchical hypothesis refinement and its evaluation protocols.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_search = sub.add_parser("search", help="refine benchmark items")
    _add_common(p_search)
    p_search.add_argument("--benchmark", help="benchmark file (config key: benchmark)")
    p_search.add_argument("--hierarchy", help="'builtin' or a hierarchy file")
    p_search.add_argument(
        "--strategies", help=f"comma list of {', '.join(STRATEGY_NAMES)}"
    )
    p_search.add_argument("--patience", type=int)
    p_search.add_argument("--restarts", type=int)
    p_search.add_argument("--max-steps-per-level", dest="max_steps_per_level", type=int)
    p_search.add_argument(
        "--in-context-rl", dest="in_context_rl", action="store_const", const=True
    )
    p_search.add_argument(
        "--rejected-context-window", dest="rejected_context_window", type=int
    )
    p_search.add_argument(
        "--ambiguate", action="store_const", const=True,
        help="generalize each coarse hypothesis before searching",
    )
    p_search.add_argument("--workers", type=int)

    p_tournament = sub.add_parser("tournament", help="pairwise-compare two runs")
    _add_common(p_tournament)
    p_tournament.add_argument("--run-a", required=True)
    p_tournament.add_argument("--run-b", required=True)
    p_tournament.add_argument("--strategy-a")
    p_tournament.add_argument("--strategy-b")
    p_tournament.add_argument("--rounds", type=int)
    p_tournament.add_argument("--criteria", help="comma list of criteria")

    p_recall = sub.add_parser("recall", help="score a run against ground truth")
    _add_common(p_recall)
    p_recall.add_argument("--run", required=True)
    p_recall.add_argument("--strategy")
    p_recall.add_argument("--benchmark")

    p_landscape = sub.add_parser("landscape", help="synthetic landscape experiments")
    _add_common(p_landscape)

    p_replay = sub.add_parser("replay", help="re-execute a search manifest")
    p_replay.add_argument("--run", required=True)
    p_replay.add_argument("--output", required=True)

    args = parser.parse_args(argv)
    try:
        if args.command == "search":
            cfg = load_config(
                args.config,
                _overrides(
                    args,
                    (
                        "benchmark",
                        "hierarchy",
                        "strategies",
                        "patience",
                        "restarts",
                        "max_steps_per_level",
                        "in_context_rl",
                        "rejected_context_window",
                        "ambiguate",
                        "workers",
                        "output",
                        "seed",
                    ),
                ),
            )
            return cmd_search(cfg)
        if args.command == "tournament":
            cfg = load_config(
                args.config, _overrides(args, ("rounds", "criteria", "output", "seed"))
            )
            return cmd_tournament(
                cfg,
                Path(args.run_a),
                Path(args.run_b),
                strategy_a=args.strategy_a,
                strategy_b=args.strategy_b,
            )
        if args.command == "recall":
            cfg = load_config(
                args.config, _overrides(args, ("benchmark", "output", "seed"))
            )
            return cmd_recall(cfg, Path(args.run), strategy=args.strategy)
        if args.command == "landscape":
            cfg = load_config(args.config, _overrides(args, ("output", "seed")))
            return cmd_landscape(cfg)
        if args.command == "replay":
            return cmd_replay(Path(args.run), Path(args.output))
        raise ConfigError(f"unknown command {args.command!r}")
    except (ConfigError, InvalidSpec) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (MismatchedItems, EmptyRun, OracleError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARTIAL


if __name__ == "__main__":
    sys.exit(main())
