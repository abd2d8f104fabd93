import json

import pytest

from hyporefine.domain import Hypothesis
from hyporefine.oracles import (
    AggregationFailure,
    CallCache,
    ChatBackend,
    ChatOracle,
    CommitteeSpec,
    Criterion,
    InsufficientOptima,
    OracleFailure,
    Winner,
)
from hyporefine.oracles.remote import TransientTransportError, cache_key
from hyporefine.search import SearchConfig, local_search
from hyporefine.domain import flat_hierarchy

from .test_oracle import ctx_at


class FakeTransport:
    """Queue of responses; entries may be dicts or exceptions to raise."""

    def __init__(self, responses):
        self.responses = list(responses)
        self.calls = []

    def __call__(self, url, headers, payload, timeout):
        self.calls.append(
            {"url": url, "headers": dict(headers), "payload": json.loads(json.dumps(payload))}
        )
        entry = self.responses.pop(0) if self.responses else self.responses_default()
        if isinstance(entry, Exception):
            raise entry
        return entry

    @staticmethod
    def responses_default():
        raise AssertionError("transport called more times than scripted")


class EchoTransport:
    """Deterministic transport that answers every prompt kind sensibly."""

    def __init__(self, verdict="2"):
        self.calls = []
        self.verdict = verdict

    def __call__(self, url, headers, payload, timeout):
        self.calls.append(payload)
        prompt = payload["messages"][0]["content"]
        if "KIND:" in prompt:
            body = "KIND: add\nDETAIL: one detail\nHYPOTHESIS: candidate text"
        elif "VERDICT:" in prompt:
            body = f"RATIONALE: judged.\nVERDICT: {self.verdict}"
        elif "HYPOTHESIS:" in prompt:
            body = "HYPOTHESIS: polished text"
        else:
            body = "free text"
        return {"content": body}


def backend_with(transport, **kwargs):
    defaults = dict(
        backend_id="main",
        endpoint="https://example.invalid/v1/chat",
        model="test-model",
        backoff_base=0.0,
        sleeper=lambda s: None,
        transport=transport,
    )
    defaults.update(kwargs)
    return ChatBackend(**defaults)


def test_payload_shape_and_credential_header(monkeypatch):
    monkeypatch.setenv("FAKE_KEY", "secret-token")
    transport = FakeTransport([{"content": "hello"}])
    backend = backend_with(transport, credential_env="FAKE_KEY")
    out = backend.complete(
        [{"role": "user", "content": "hi"}], temperature=0.25, seed=7
    )
    assert out == "hello"
    call = transport.calls[0]
    assert call["payload"] == {
        "model": "test-model",
        "messages": [{"role": "user", "content": "hi"}],
        "temperature": 0.25,
        "seed": 7,
    }
    assert call["headers"]["Authorization"] == "Bearer secret-token"


def test_missing_credential_fails(monkeypatch):
    monkeypatch.delenv("FAKE_KEY", raising=False)
    backend = backend_with(FakeTransport([]), credential_env="FAKE_KEY")
    with pytest.raises(OracleFailure):
        backend.complete([{"role": "user", "content": "x"}], temperature=0.0)


def test_transient_errors_retried_then_succeed():
    transport = FakeTransport(
        [
            TransientTransportError("transport", "reset"),
            TransientTransportError("transport", "reset"),
            {"content": "ok"},
        ]
    )
    backend = backend_with(transport)
    assert backend.complete([{"role": "user", "content": "x"}], temperature=0.0) == "ok"
    assert len(transport.calls) == 3


def test_timeout_exhausts_retries():
    transport = FakeTransport(
        [TransientTransportError("timeout", "slow")] * 6
    )
    backend = backend_with(transport, max_retries=5)
    with pytest.raises(OracleFailure) as excinfo:
        backend.complete([{"role": "user", "content": "x"}], temperature=0.0)
    assert excinfo.value.kind == "timeout"
    assert len(transport.calls) == 6  # initial try + 5 retries


def test_empty_content_is_retried_then_fails():
    transport = FakeTransport([{"content": "  "}] * 3)
    backend = backend_with(transport, max_retries=2)
    with pytest.raises(OracleFailure) as excinfo:
        backend.complete([{"role": "user", "content": "x"}], temperature=0.0)
    assert excinfo.value.kind == "empty_response"


def test_openai_shaped_response_accepted():
    transport = FakeTransport(
        [{"choices": [{"message": {"content": "from choices"}}]}]
    )
    backend = backend_with(transport)
    assert (
        backend.complete([{"role": "user", "content": "x"}], temperature=0.0)
        == "from choices"
    )


def test_cache_hit_skips_network(tmp_path):
    cache = CallCache(tmp_path / "cache")
    transport = FakeTransport([{"content": "cached answer"}])
    backend = backend_with(transport, cache=cache)
    messages = [{"role": "user", "content": "same"}]
    first = backend.complete(messages, temperature=0.0)
    second = backend.complete(messages, temperature=0.0)
    assert first == second == "cached answer"
    assert len(transport.calls) == 1

    payload = {"model": "test-model", "messages": messages, "temperature": 0.0}
    entry_path = tmp_path / "cache" / f"{cache_key('main', payload)}.json"
    assert entry_path.exists()
    entry = json.loads(entry_path.read_text())
    assert entry["request"] == payload
    assert entry["response"] == {"content": "cached answer"}
    assert "timestamp" in entry


def test_cache_distinguishes_payloads(tmp_path):
    cache = CallCache(tmp_path / "cache")
    transport = FakeTransport([{"content": "one"}, {"content": "two"}])
    backend = backend_with(transport, cache=cache)
    a = backend.complete([{"role": "user", "content": "A"}], temperature=0.0)
    b = backend.complete([{"role": "user", "content": "B"}], temperature=0.0)
    assert (a, b) == ("one", "two")
    assert len(transport.calls) == 2


def test_budget_charged_identically_on_cache_hit(tmp_path):
    cache = CallCache(tmp_path / "cache")
    transport = EchoTransport()
    backends = {"main": backend_with(transport, cache=cache)}

    def run():
        oracle = ChatOracle(backends, proposer="main")
        oracle.propose_edit(ctx_at())
        return oracle.budget.snapshot()

    cold = run()
    calls_after_cold = len(transport.calls)
    warm = run()
    assert cold == warm
    assert len(transport.calls) == calls_after_cold  # warm run hit the cache


def test_offline_backend_requires_cache_hit(tmp_path):
    cache = CallCache(tmp_path / "cache")
    backend = backend_with(FakeTransport([]), cache=cache, offline=True)
    with pytest.raises(OracleFailure):
        backend.complete([{"role": "user", "content": "x"}], temperature=0.0)


def test_propose_parses_sections():
    transport = EchoTransport()
    oracle = ChatOracle({"main": backend_with(transport)}, proposer="main")
    edit, hyp = oracle.propose_edit(ctx_at(level=2))
    assert edit.description == "one detail"
    assert hyp.text == "candidate text"
    assert hyp.level == 2
    prompt = transport.calls[0]["messages"][0]["content"]
    assert "q?" in prompt  # research question present
    assert "stage-1" in prompt and "stage-2" in prompt  # hierarchy block
    assert transport.calls[0]["temperature"] == 1.0


def test_flat_context_omits_hierarchy_block():
    transport = EchoTransport()
    oracle = ChatOracle({"main": backend_with(transport)}, proposer="main")
    oracle.propose_edit(ctx_at(level=1, depth=1, flat=True))
    prompt = transport.calls[0]["messages"][0]["content"]
    assert "level by level" not in prompt
    assert "stage-1" not in prompt


def test_propose_reasks_on_garbage_then_succeeds():
    transport = FakeTransport(
        [
            {"content": "sorry, here are some thoughts with no format"},
            {"content": "KIND: delete\nDETAIL: drop noise\nHYPOTHESIS: trimmed"},
        ]
    )
    oracle = ChatOracle({"main": backend_with(transport)}, proposer="main")
    edit, hyp = oracle.propose_edit(ctx_at())
    assert edit.kind.value == "delete"
    assert hyp.text == "trimmed"
    assert oracle.budget.counts["proposal"] == 2  # both logical calls counted
    reask_messages = transport.calls[1]["payload"]["messages"]
    assert len(reask_messages) == 3
    assert "could not be parsed" in reask_messages[2]["content"]


def test_propose_fails_after_reasks_exhausted():
    transport = FakeTransport([{"content": "nope"}] * 3)
    oracle = ChatOracle({"main": backend_with(transport)}, proposer="main")
    with pytest.raises(OracleFailure) as excinfo:
        oracle.propose_edit(ctx_at())
    assert excinfo.value.kind == "malformed"
    assert oracle.budget.counts["proposal"] == 3


def test_refine_keeps_lineage():
    transport = EchoTransport()
    oracle = ChatOracle({"main": backend_with(transport)}, proposer="main")
    candidate = Hypothesis("raw", level=1, lineage=("e1",))
    refined = oracle.refine(candidate, ctx_at())
    assert refined.text == "polished text"
    assert refined.lineage == ("e1",)


def test_compare_single_judge_verdict_and_rationale(single_judge):
    transport = FakeTransport([{"content": "RATIONALE: b is sharper.\nVERDICT: 2"}])
    oracle = ChatOracle({"judge": backend_with(transport)}, proposer="judge")
    pref = oracle.compare(Hypothesis("a"), Hypothesis("b"), Criterion.OVERALL, single_judge)
    assert pref.winner is Winner.SECOND
    assert pref.rationale == "b is sharper."
    assert transport.calls[0]["payload"]["temperature"] == 0.0


def test_indifferent_judge_counts_as_incumbent(single_judge):
    transport = FakeTransport([{"content": "Both look equally plausible to me."}])
    oracle = ChatOracle({"judge": backend_with(transport)}, proposer="judge")
    pref = oracle.compare(Hypothesis("a"), Hypothesis("b"), Criterion.OVERALL, single_judge)
    assert pref.winner is Winner.SECOND


def test_committee_runs_judges_then_aggregator():
    responses = [
        {"content": "RATIONALE: r1\nVERDICT: 1"},
        {"content": "RATIONALE: r2\nVERDICT: 2"},
        {"content": "RATIONALE: r3\nVERDICT: 1"},
        {"content": "RATIONALE: reviewer 1 argues best\nVERDICT: 1"},
    ]
    transport = FakeTransport(responses)
    backends = {"judge": backend_with(transport), "agg": backend_with(transport, backend_id="agg")}
    oracle = ChatOracle(backends, proposer="judge", seed=11)
    committee = CommitteeSpec(judges=("judge", "judge", "judge"), aggregator="agg")
    a, b = Hypothesis("alpha-text"), Hypothesis("beta-text")
    pref = oracle.compare(a, b, Criterion.NOVELTY, committee)
    assert pref.winner is Winner.FIRST
    assert oracle.budget.counts["comparison"] == 3
    assert oracle.budget.counts["aggregation"] == 1
    # judges saw a first, b second
    judge_prompt = transport.calls[0]["payload"]["messages"][0]["content"]
    assert judge_prompt.index("alpha-text") < judge_prompt.index("beta-text")
    # aggregator saw every rationale
    agg_prompt = transport.calls[3]["payload"]["messages"][0]["content"]
    for fragment in ("r1", "r2", "r3"):
        assert fragment in agg_prompt
    # distinct seats carry distinct seeds so cached samples stay independent
    seeds = [c["payload"].get("seed") for c in transport.calls[:3]]
    assert len(set(seeds)) == 3


def test_aggregator_without_verdict_fails():
    responses = [
        {"content": "VERDICT: 1"},
        {"content": "VERDICT: 1"},
        {"content": "thinking out loud, no decision"},
    ]
    transport = FakeTransport(responses)
    backends = {"judge": backend_with(transport), "agg": backend_with(transport, backend_id="agg")}
    oracle = ChatOracle(backends, proposer="judge")
    committee = CommitteeSpec(judges=("judge", "judge"), aggregator="agg")
    with pytest.raises(AggregationFailure):
        oracle.compare(Hypothesis("a"), Hypothesis("b"), Criterion.OVERALL, committee)


def test_recombine_requires_two():
    oracle = ChatOracle({"main": backend_with(EchoTransport())}, proposer="main")
    with pytest.raises(InsufficientOptima):
        oracle.recombine([Hypothesis("x")], ctx_at())


def test_recombine_merges_and_generate_passthrough():
    transport = EchoTransport()
    oracle = ChatOracle({"main": backend_with(transport)}, proposer="main")
    merged = oracle.recombine(
        [Hypothesis("h1", level=1), Hypothesis("h2", level=1)], ctx_at(level=1)
    )
    assert merged.text == "polished text"
    assert oracle.budget.counts["recombination"] == 1
    text = oracle.generate("free-form request")
    assert text == "free text"
    assert oracle.budget.total == 1  # generate is not budget-counted


def test_scoped_lanes_carry_distinct_seeds():
    transport = EchoTransport()
    oracle = ChatOracle({"main": backend_with(transport)}, proposer="main", seed=42)
    oracle.scoped("L1R0").propose_edit(ctx_at())
    oracle.scoped("L1R1").propose_edit(ctx_at())
    seeds = [c["seed"] for c in transport.calls]
    assert len(seeds) == 2 and seeds[0] != seeds[1]
    # unseeded oracles stay unscoped: there is nothing to derive
    unseeded = ChatOracle({"main": backend_with(EchoTransport())}, proposer="main")
    assert unseeded.scoped("L1R0") is unseeded


def test_rejected_candidates_reach_proposal_requests():
    transport = EchoTransport(verdict="2")  # every candidate loses
    oracle = ChatOracle({"main": backend_with(transport)}, proposer="main")
    cfg = SearchConfig(
        patience_k=3,
        restarts_per_level=1,
        in_context_rl=True,
        rejected_context_window=2,
        committee=CommitteeSpec(judges=("main",)),
    )
    start = Hypothesis("start", level=0)
    ctx = ctx_at()
    local_search(
        start,
        1,
        ctx.background,
        ctx.direction,
        (),
        cfg,
        oracle,
        hierarchy=flat_hierarchy(),
        flat=True,
    )
    proposal_payloads = [
        c for c in transport.calls if "KIND:" in c["messages"][0]["content"]
    ]
    assert len(proposal_payloads) == 3
    # by the third proposal, the prior rejected (refined) candidates appear
    third = proposal_payloads[2]["messages"][0]["content"]
    assert "Recently rejected candidates" in third
    assert "polished text" in third
    first = proposal_payloads[0]["messages"][0]["content"]
    assert "Recently rejected candidates" not in first
