"""Chat-completion backend and the prompt-driven oracle built on it.

The wire protocol is a generic chat completion: the request carries a model
id, a message list, and decoding parameters; the response carries one text
content. Transient failures (timeouts, connection errors, 429/5xx) are
retried with exponential backoff up to ``max_retries``; every completed
request/response pair is written to a content-addressed on-disk cache
before being returned, and a warm cache answers identical requests without
touching the network.

Budget counters track logical calls, so a cache hit costs the same as a
network call and replayed runs reproduce identical step counts.
"""

from __future__ import annotations

import hashlib
import json
import os
import re
import tempfile
import time
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable

from ..domain import Edit, EditKind, Hypothesis, edit_id
from ..rng import hash_chain, label_word
from ..templates import TemplateSet
from .base import (
    AggregationFailure,
    CommitteeSpec,
    Criterion,
    Oracle,
    OracleBudget,
    OracleFailure,
    Preference,
    ProposalContext,
    Winner,
    recombination_lineage,
    require_optima,
)

Transport = Callable[[str, dict, dict, float], dict]


class TransientTransportError(Exception):
    """Retryable transport problem (timeout, connection reset, 429, 5xx)."""

    def __init__(self, kind: str, message: str):
        super().__init__(message)
        self.kind = kind


class HttpxTransport:
    """Default transport: POST the payload as JSON, return the parsed body."""

    def __call__(self, url: str, headers: dict, payload: dict, timeout: float) -> dict:
        import httpx

        try:
            response = httpx.post(url, headers=headers, json=payload, timeout=timeout)
        except httpx.TimeoutException as exc:
            raise TransientTransportError("timeout", str(exc)) from exc
        except httpx.TransportError as exc:
            raise TransientTransportError("transport", str(exc)) from exc
        if response.status_code == 429 or response.status_code >= 500:
            raise TransientTransportError(
                "transport", f"HTTP {response.status_code}: {response.text[:200]}"
            )
        if response.status_code >= 400:
            raise OracleFailure(
                "transport", f"HTTP {response.status_code}: {response.text[:200]}"
            )
        try:
            return response.json()
        except ValueError as exc:
            raise TransientTransportError("malformed", f"non-JSON body: {exc}") from exc


def cache_key(backend_id: str, payload: dict) -> str:
    canonical = json.dumps(
        {"backend": backend_id, "request": payload},
        sort_keys=True,
        ensure_ascii=True,
        separators=(",", ":"),
    )
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


class CallCache:
    """One file per request, named by the hash of (backend id, payload)."""

    def __init__(self, directory: str | Path):
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)

    def _path(self, key: str) -> Path:
        return self.directory / f"{key}.json"

    def get(self, backend_id: str, payload: dict) -> str | None:
        path = self._path(cache_key(backend_id, payload))
        if not path.exists():
            return None
        with open(path, "r", encoding="utf-8") as handle:
            entry = json.load(handle)
        return entry["response"]["content"]

    def put(self, backend_id: str, payload: dict, content: str) -> None:
        key = cache_key(backend_id, payload)
        entry = {
            "backend": backend_id,
            "request": payload,
            "response": {"content": content},
            "timestamp": datetime.now(timezone.utc).isoformat(),
        }
        # unique temp file per write, then an atomic rename: concurrent
        # writers of the same key cannot clobber each other mid-write
        fd, tmp = tempfile.mkstemp(dir=self.directory, suffix=".tmp")
        with os.fdopen(fd, "w", encoding="utf-8") as handle:
            json.dump(entry, handle, ensure_ascii=False, indent=2)
        os.replace(tmp, self._path(key))


def _extract_content(body: dict) -> str:
    if not isinstance(body, dict):
        raise TransientTransportError("malformed", "response body is not an object")
    if isinstance(body.get("content"), str):
        return body["content"]
    choices = body.get("choices")
    if isinstance(choices, list) and choices:
        message = choices[0].get("message", {})
        if isinstance(message.get("content"), str):
            return message["content"]
        if isinstance(choices[0].get("text"), str):
            return choices[0]["text"]
    raise TransientTransportError("malformed", "response carries no content text")


@dataclass
class ChatBackend:
    """One remote model endpoint plus its decoding defaults."""

    backend_id: str
    endpoint: str
    model: str
    credential_env: str | None = None
    gen_temperature: float = 1.0
    judge_temperature: float = 0.0
    timeout: float = 60.0
    max_retries: int = 5
    backoff_base: float = 0.5
    offline: bool = False
    cache: CallCache | None = None
    transport: Transport | None = None
    sleeper: Callable[[float], None] = time.sleep

    def _headers(self) -> dict:
        headers = {"Content-Type": "application/json"}
        if self.credential_env:
            credential = os.environ.get(self.credential_env, "")
            if not credential:
                raise OracleFailure(
                    "transport",
                    f"credential environment variable {self.credential_env} is unset",
                )
            headers["Authorization"] = f"Bearer {credential}"
        return headers

    def complete(
        self,
        messages: list[dict],
        *,
        temperature: float,
        seed: int | None = None,
        budget: OracleBudget | None = None,
        category: str | None = None,
    ) -> str:
        payload = {
            "model": self.model,
            "messages": messages,
            "temperature": temperature,
        }
        if seed is not None:
            payload["seed"] = seed
        if budget is not None and category is not None:
            budget.charge(category)

        if self.cache is not None:
            cached = self.cache.get(self.backend_id, payload)
            if cached is not None:
                return cached
        if self.offline:
            raise OracleFailure(
                "transport", "offline backend missed the call cache"
            )

        transport = self.transport or HttpxTransport()
        last: TransientTransportError | None = None
        for attempt in range(self.max_retries + 1):
            if attempt:
                self.sleeper(self.backoff_base * (2 ** (attempt - 1)))
            try:
                body = transport(self.endpoint, self._headers(), payload, self.timeout)
                content = _extract_content(body)
                if not content.strip():
                    raise TransientTransportError("empty_response", "empty content")
            except TransientTransportError as exc:
                last = exc
                continue
            if self.cache is not None:
                self.cache.put(self.backend_id, payload, content)
            return content
        assert last is not None
        raise OracleFailure(last.kind, f"giving up after {self.max_retries} retries: {last}")


class _ParseError(Exception):
    pass


_KIND_RE = re.compile(r"^[ \t]*KIND:\s*(add|delete)\b", re.IGNORECASE | re.MULTILINE)
_DETAIL_RE = re.compile(r"^[ \t]*DETAIL:\s*(.+)$", re.IGNORECASE | re.MULTILINE)
_HYPOTHESIS_RE = re.compile(
    r"^[ \t]*HYPOTHESIS:\s*(.+)\Z", re.IGNORECASE | re.MULTILINE | re.DOTALL
)
_VERDICT_RE = re.compile(
    r"VERDICT:\s*(?:hypothesis\s*)?(1|2|first|second)", re.IGNORECASE
)
_RATIONALE_RE = re.compile(
    r"^[ \t]*RATIONALE:\s*(.+?)(?=^[ \t]*VERDICT:|\Z)",
    re.IGNORECASE | re.MULTILINE | re.DOTALL,
)

_REASK = (
    "Your previous reply could not be parsed. Reply again using exactly the "
    "requested format and nothing else."
)


def _parse_proposal(text: str) -> tuple[EditKind, str, str]:
    kind_match = _KIND_RE.search(text)
    hyp_match = _HYPOTHESIS_RE.search(text)
    if not kind_match or not hyp_match or not hyp_match.group(1).strip():
        raise _ParseError("proposal reply missing KIND or HYPOTHESIS section")
    detail_match = _DETAIL_RE.search(text)
    description = detail_match.group(1).strip() if detail_match else ""
    return (
        EditKind(kind_match.group(1).lower()),
        description,
        hyp_match.group(1).strip(),
    )


def _parse_hypothesis(text: str) -> str:
    match = _HYPOTHESIS_RE.search(text)
    body = match.group(1).strip() if match else text.strip()
    if not body:
        raise _ParseError("reply carries no hypothesis text")
    return body


def _parse_verdict(text: str) -> Winner | None:
    match = _VERDICT_RE.search(text)
    if not match:
        return None
    token = match.group(1).lower()
    return Winner.FIRST if token in ("1", "first") else Winner.SECOND


def _parse_rationale(text: str) -> str:
    match = _RATIONALE_RE.search(text)
    return match.group(1).strip() if match else text.strip()


_CRITERION_INSTRUCTIONS = {
    Criterion.OVERALL: (
        "Judge overall quality, weighing effectiveness, novelty, detailedness, "
        "and feasibility together."
    ),
    Criterion.EFFECTIVENESS: (
        "Judge only how well each hypothesis would solve the research question."
    ),
    Criterion.NOVELTY: (
        "Judge only how original each hypothesis is relative to established methods."
    ),
    Criterion.DETAILEDNESS: (
        "Judge only how specific and clearly specified each hypothesis is."
    ),
    Criterion.FEASIBILITY: (
        "Judge only how practical each hypothesis would be to implement, "
        "penalizing redundant or needlessly complex steps."
    ),
}


class ChatOracle(Oracle):
    """Oracle that renders prompt templates against chat backends."""

    def __init__(
        self,
        backends: dict[str, ChatBackend],
        *,
        proposer: str,
        refiner: str | None = None,
        recombiner: str | None = None,
        generator: str | None = None,
        templates: TemplateSet | None = None,
        cap: int | None = None,
        seed: int | None = None,
        max_reasks: int = 2,
    ):
        self._backends = backends
        self._proposer = proposer
        self._refiner = refiner or proposer
        self._recombiner = recombiner or proposer
        self._generator = generator or proposer
        self.templates = templates or TemplateSet.load()
        self.budget = OracleBudget(cap=cap)
        self._seed = seed
        self._max_reasks = max_reasks

    def scoped(self, lane: str) -> "ChatOracle":
        """View with a lane-derived decoding seed.

        Restarts scope their oracle per lane; without a distinct seed their
        first requests would be byte-identical and the call cache would
        collapse every restart onto one trajectory.
        """
        if self._seed is None:
            return self
        clone = object.__new__(ChatOracle)
        clone.__dict__.update(self.__dict__)
        clone._seed = hash_chain(self._seed, label_word(lane))
        return clone

    def _backend(self, backend_id: str) -> ChatBackend:
        try:
            return self._backends[backend_id]
        except KeyError:
            raise OracleFailure("transport", f"unknown backend id: {backend_id!r}")

    def _ask(self, backend: ChatBackend, prompt: str, parse, *, temperature, category, seed=None):
        """One prompted call with bounded re-asks on unparsable content."""
        messages = [{"role": "user", "content": prompt}]
        for _ in range(self._max_reasks + 1):
            content = backend.complete(
                messages,
                temperature=temperature,
                seed=seed,
                budget=self.budget,
                category=category,
            )
            try:
                return parse(content)
            except _ParseError:
                messages = messages + [
                    {"role": "assistant", "content": content},
                    {"role": "user", "content": _REASK},
                ]
        raise OracleFailure(
            "malformed", f"unparsable reply after {self._max_reasks} re-asks"
        )

    # -- prompt assembly -----------------------------------------------------

    def _hierarchy_block(self, ctx: ProposalContext) -> str:
        if ctx.flat:
            return "\n"
        level = ctx.hierarchy.level(ctx.level)
        lines = [
            "",
            "The refinement proceeds level by level, from the most abstract "
            "concern to the most concrete. Searching one level at a time keeps "
            "each step's candidate pool small and keeps early low-level choices "
            "from locking in a poor high-level direction. The levels are:",
        ]
        for index, entry in enumerate(ctx.hierarchy.levels, start=1):
            lines.append(f"  {index}. {entry.name}: {entry.guidance}")
        lines.append(
            f"You are working at level {ctx.level} ({level.name}). Propose a "
            "modification belonging to this level of detail only; earlier "
            "levels are settled."
        )
        if ctx.accepted_lower_levels:
            lines.append("Edits already accepted at earlier levels:")
            for edit in ctx.accepted_lower_levels:
                lines.append(f"  - [level {edit.level}] {edit.description}")
        return "\n".join(lines) + "\n"

    @staticmethod
    def _rejected_block(ctx: ProposalContext) -> str:
        if not ctx.rejected:
            return ""
        lines = ["", "Recently rejected candidates; do not repeat these directions:"]
        for index, hyp in enumerate(ctx.rejected, start=1):
            lines.append(f"  {index}. {hyp.text}")
        return "\n".join(lines) + "\n"

    # -- Oracle interface ------------------------------------------------------

    def propose_edit(self, ctx: ProposalContext) -> tuple[Edit, Hypothesis]:
        backend = self._backend(self._proposer)
        prompt = self.templates.render(
            "propose",
            question=ctx.background.question,
            survey=ctx.background.survey or "(no survey provided)",
            direction=ctx.direction.text,
            current=ctx.current.text,
            hierarchy_block=self._hierarchy_block(ctx),
            rejected_block=self._rejected_block(ctx),
        )
        kind, description, text = self._ask(
            backend,
            prompt,
            _parse_proposal,
            temperature=backend.gen_temperature,
            category="proposal",
            seed=self._seed,
        )
        edit = Edit(
            kind=kind, level=ctx.level, description=description, resulting_text=text
        )
        candidate = Hypothesis(
            text=text,
            level=ctx.level,
            lineage=ctx.current.lineage + (edit_id(edit),),
        )
        return edit, candidate

    def refine(self, candidate: Hypothesis, ctx: ProposalContext) -> Hypothesis:
        backend = self._backend(self._refiner)
        prompt = self.templates.render(
            "refine",
            question=ctx.background.question,
            candidate=candidate.text,
        )
        text = self._ask(
            backend,
            prompt,
            _parse_hypothesis,
            temperature=backend.gen_temperature,
            category="refinement",
            seed=self._seed,
        )
        return Hypothesis(text=text, level=candidate.level, lineage=candidate.lineage)

    def compare(
        self,
        a: Hypothesis,
        b: Hypothesis,
        criterion: Criterion,
        committee: CommitteeSpec,
    ) -> Preference:
        judgments = []
        for seat, judge_id in enumerate(committee.judges):
            backend = self._backend(judge_id)
            prompt = self.templates.render(
                "compare",
                criterion_instruction=_CRITERION_INSTRUCTIONS[criterion],
                first=a.text,
                second=b.text,
            )
            seat_seed = (
                hash_chain(self._seed, label_word(f"seat-{seat}"))
                if self._seed is not None and committee.size > 1
                else self._seed
            )
            content = backend.complete(
                [{"role": "user", "content": prompt}],
                temperature=backend.judge_temperature,
                seed=seat_seed,
                budget=self.budget,
                category="comparison",
            )
            verdict = _parse_verdict(content)
            # An indifferent or unparsable judge counts as preferring the
            # incumbent (second) side: conservatively no improvement.
            winner = verdict if verdict is not None else Winner.SECOND
            judgments.append((winner, _parse_rationale(content)))

        if committee.size == 1:
            winner, rationale = judgments[0]
            return Preference(winner=winner, rationale=rationale)

        block_lines = []
        for index, (winner, rationale) in enumerate(judgments, start=1):
            side = "1" if winner is Winner.FIRST else "2"
            block_lines.append(f"Reviewer {index} verdict: Hypothesis {side}")
            block_lines.append(f"Reviewer {index} reasoning: {rationale}")
        aggregator = self._backend(committee.aggregator)
        prompt = self.templates.render("aggregate", judgments="\n".join(block_lines))
        content = aggregator.complete(
            [{"role": "user", "content": prompt}],
            temperature=aggregator.judge_temperature,
            seed=self._seed,
            budget=self.budget,
            category="aggregation",
        )
        verdict = _parse_verdict(content)
        if verdict is None:
            raise AggregationFailure(
                f"aggregator reply carries no parsable verdict: {content[:120]!r}"
            )
        return Preference(winner=verdict, rationale=_parse_rationale(content))

    def recombine(self, optima: list[Hypothesis], ctx: ProposalContext) -> Hypothesis:
        require_optima(optima)
        backend = self._backend(self._recombiner)
        candidates = "\n\n".join(
            f"Candidate {index}:\n{hyp.text}" for index, hyp in enumerate(optima, 1)
        )
        prompt = self.templates.render(
            "recombine",
            question=ctx.background.question,
            candidates=candidates,
        )
        text = self._ask(
            backend,
            prompt,
            _parse_hypothesis,
            temperature=backend.gen_temperature,
            category="recombination",
            seed=self._seed,
        )
        return Hypothesis(
            text=text,
            level=ctx.level,
            lineage=recombination_lineage(optima, ctx.level),
        )

    def generate(self, prompt: str) -> str:
        backend = self._backend(self._generator)
        return backend.complete(
            [{"role": "user", "content": prompt}],
            temperature=backend.gen_temperature,
            seed=self._seed,
        )
