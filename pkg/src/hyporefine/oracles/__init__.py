from .base import (
    AggregationFailure,
    BudgetExhausted,
    CommitteeSpec,
    Criterion,
    InsufficientOptima,
    NoProposal,
    Oracle,
    OracleBudget,
    OracleError,
    OracleFailure,
    Preference,
    ProposalContext,
    Winner,
)
from .remote import CallCache, ChatBackend, ChatOracle, HttpxTransport
from .scripted import ScriptedOracle

__all__ = [
    "AggregationFailure",
    "BudgetExhausted",
    "CallCache",
    "ChatBackend",
    "ChatOracle",
    "CommitteeSpec",
    "Criterion",
    "HttpxTransport",
    "InsufficientOptima",
    "NoProposal",
    "Oracle",
    "OracleBudget",
    "OracleError",
    "OracleFailure",
    "Preference",
    "ProposalContext",
    "ScriptedOracle",
    "Winner",
]
