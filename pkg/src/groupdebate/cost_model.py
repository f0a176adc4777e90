"""Analytical token cost of debate protocols.

Costs assume every response has ``output_tokens`` tokens, every summary
``summary_tokens`` and the question prompt ``question_tokens``. A call costs
its prompt plus its completion. Under the additive word tokenizer and the
fixed-length mock, the orchestrator's ledger matches these numbers exactly.

Summary cost is attributed to the round whose outputs are being summarized,
so the MAD row for round ``t`` carries the summaries that feed round ``t+1``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

from .core import ConfigError, Mode

__all__ = [
    "CostParams",
    "RoundCost",
    "TokenBreakdown",
    "even_split",
    "gd_cost_bound",
    "gd_token_cost",
    "mad_cost_bound",
    "mad_forget_token_cost",
    "mad_group_token_cost",
    "mad_round_costs_closed",
    "mad_round_costs_recurrence",
    "mad_token_cost",
    "optimal_group_count",
    "token_cost",
]


@dataclass(frozen=True)
class CostParams:
    agents: int
    rounds: int
    question_tokens: int
    output_tokens: int
    summary_tokens: int = 0
    group_sizes: tuple[int, ...] = ()
    intra_rounds: int = 1

    def __post_init__(self) -> None:
        if self.agents < 1 or self.rounds < 1:
            raise ConfigError("agents and rounds must be >= 1")
        if min(self.question_tokens, self.output_tokens, self.summary_tokens) < 0:
            raise ConfigError("token lengths must be >= 0")
        if self.intra_rounds < 1:
            raise ConfigError("intra_rounds must be >= 1")
        sizes = tuple(self.group_sizes) or (self.agents,)
        if sum(sizes) != self.agents or min(sizes) < 1:
            raise ConfigError(f"group sizes {list(sizes)} do not partition {self.agents} agents")
        object.__setattr__(self, "group_sizes", sizes)

    @property
    def groups(self) -> int:
        return len(self.group_sizes)

    @property
    def stages(self) -> int:
        return math.ceil(self.rounds / self.intra_rounds)

    @property
    def max_length(self) -> int:
        """Larger of the response and summary lengths (the single constant in big-O form)."""
        return max(self.output_tokens, self.summary_tokens)


@dataclass(frozen=True)
class RoundCost:
    round: int
    response: int
    summary: int

    @property
    def total(self) -> int:
        return self.response + self.summary


@dataclass(frozen=True)
class TokenBreakdown:
    rounds: tuple[RoundCost, ...]

    @property
    def response_total(self) -> int:
        return sum(r.response for r in self.rounds)

    @property
    def summary_total(self) -> int:
        return sum(r.summary for r in self.rounds)

    @property
    def total(self) -> int:
        return self.response_total + self.summary_total


def even_split(agents: int, groups: int) -> tuple[int, ...]:
    """``agents`` split into ``groups`` sizes differing by at most one, larger first."""
    if not 1 <= groups <= agents:
        raise ConfigError(f"cannot split {agents} agents into {groups} groups")
    base, extra = divmod(agents, groups)
    return tuple(base + 1 if j < extra else base for j in range(groups))


# --------------------------------------------------------------------------
# MAD
# --------------------------------------------------------------------------


def mad_round_costs_recurrence(p: CostParams) -> list[int]:
    """Per-round response cost built incrementally from the previous round."""
    m, q, o, s = p.agents, p.question_tokens, p.output_tokens, p.summary_tokens
    costs = [m * (q + o)]
    for _ in range(2, p.rounds + 1):
        costs.append(costs[-1] + m * (s + o))
    return costs


def mad_round_costs_closed(p: CostParams) -> list[int]:
    """Per-round response cost: question, all earlier outputs and summaries, new output."""
    m, q, o, s = p.agents, p.question_tokens, p.output_tokens, p.summary_tokens
    return [m * ((t - 1) * (o + s) + q + o) for t in range(1, p.rounds + 1)]


def _mad_summary_cost(p: CostParams) -> int:
    # one summary per agent over the other agents' outputs
    return p.agents * ((p.agents - 1) * p.output_tokens + p.summary_tokens)


def mad_token_cost(p: CostParams) -> TokenBreakdown:
    responses = mad_round_costs_closed(p)
    if responses != mad_round_costs_recurrence(p):
        raise ArithmeticError("MAD recurrence and closed form disagree")
    summary = _mad_summary_cost(p)
    rows = tuple(
        RoundCost(t, cost, summary if t < p.rounds else 0)
        for t, cost in enumerate(responses, start=1)
    )
    return TokenBreakdown(rows)


def mad_forget_token_cost(p: CostParams) -> TokenBreakdown:
    """MAD where each agent keeps only the question, its last output and the latest summary."""
    m, q, o, s = p.agents, p.question_tokens, p.output_tokens, p.summary_tokens
    summary = _mad_summary_cost(p)
    rows = []
    for t in range(1, p.rounds + 1):
        response = m * (q + o) if t == 1 else m * (q + o + s + o)
        rows.append(RoundCost(t, response, summary if t < p.rounds else 0))
    return TokenBreakdown(tuple(rows))


# --------------------------------------------------------------------------
# GroupDebate
# --------------------------------------------------------------------------


def _round_phases(rounds: int, intra: int):
    for t in range(1, rounds + 1):
        stage = (t - 1) // intra + 1
        first = (stage - 1) * intra + 1
        last = min(stage * intra, rounds)
        phase = "initial" if t == 1 else ("inter" if t == first else "intra")
        closes = t == last and stage < math.ceil(rounds / intra)
        yield t, phase, closes


def gd_token_cost(p: CostParams) -> TokenBreakdown:
    """Exact cost with per-group sums, so uneven group sizes are handled."""
    m, q, o, s = p.agents, p.question_tokens, p.output_tokens, p.summary_tokens
    sizes, n = p.group_sizes, p.groups
    rows = []
    for t, phase, closes in _round_phases(p.rounds, p.intra_rounds):
        if phase == "initial":
            response = m * (q + o)
        elif phase == "inter":
            response = m * (q + o + n * s + o)
        else:
            response = sum(k * (q + k * o + o) for k in sizes)
        summary = sum(k * o + s for k in sizes) if closes else 0
        rows.append(RoundCost(t, response, summary))
    return TokenBreakdown(tuple(rows))


def mad_group_token_cost(p: CostParams) -> TokenBreakdown:
    """Grouped schedule where agents keep their full history instead of forgetting."""
    q, o, s = p.question_tokens, p.output_tokens, p.summary_tokens
    n = p.groups
    rows = []
    history = [0] * n  # accumulated context of one agent in group j
    for t, phase, closes in _round_phases(p.rounds, p.intra_rounds):
        response = 0
        for j, k in enumerate(p.group_sizes):
            if phase == "initial":
                incoming = 0
            elif phase == "inter":
                incoming = n * s
            else:
                incoming = (k - 1) * o
            prior = history[j]
            response += k * (q + prior + incoming + o)
            history[j] = prior + incoming + o
        summary = sum(k * o + s for k in p.group_sizes) if closes else 0
        rows.append(RoundCost(t, response, summary))
    return TokenBreakdown(tuple(rows))


def token_cost(mode: Mode | str, p: CostParams) -> TokenBreakdown:
    """Cost for any debate mode the orchestrator runs with a grouped or MAD topology."""
    mode = Mode(mode)
    if mode is Mode.GD:
        return gd_token_cost(p)
    if mode is Mode.MAD:
        return mad_token_cost(p)
    if mode is Mode.MAD_FORGET:
        return mad_forget_token_cost(p)
    if mode is Mode.MAD_GROUP:
        return mad_group_token_cost(p)
    raise ValueError(f"no analytical cost for mode {mode.value}")


# --------------------------------------------------------------------------
# Bounds and group-count choice
# --------------------------------------------------------------------------


def mad_cost_bound(p: CostParams) -> int:
    m, t = p.agents, p.rounds
    return (
        m * t * p.question_tokens
        + 2 * m * m * t * p.output_tokens
        + (m * m * t + m * t * t) * p.summary_tokens
    )


def gd_cost_bound(p: CostParams) -> Fraction:
    """Upper bound for equal-size groups, evaluated with N = number of groups.

    Returned as a Fraction because the output term divides by N.
    """
    m, t, n = p.agents, p.rounds, p.groups
    return (
        m * t * p.question_tokens
        + Fraction(2 * m * m * t, n) * p.output_tokens
        + 2 * m * p.stages * n * p.summary_tokens
    )


def _bound_for_groups(agents: int, rounds: int, stages: int, o: int, s: int, n: int) -> Fraction:
    # the question term does not depend on n and is dropped
    return Fraction(2 * agents * agents * rounds, n) * o + 2 * agents * stages * n * s


def optimal_group_count(
    agents: int, rounds: int, stages: int, output_tokens: int, summary_tokens: int
) -> tuple[int, int]:
    """Group count minimizing the bound, and the square-root rule of thumb.

    Returns ``(best, heuristic)``. ``best`` is the integer argmin over
    ``1..agents`` (ties to the smaller count). ``heuristic`` rounds
    sqrt(agents * rounds * o / (stages * m)) half-up, floored at 1.
    """
    if min(agents, rounds, stages) < 1:
        raise ConfigError("agents, rounds and stages must be >= 1")
    scores = [
        (_bound_for_groups(agents, rounds, stages, output_tokens, summary_tokens, n), n)
        for n in range(1, agents + 1)
    ]
    best = min(scores)[1]
    if summary_tokens == 0:
        heuristic = agents
    else:
        x = math.sqrt(agents * rounds * output_tokens / (stages * summary_tokens))
        heuristic = max(1, math.floor(x + 0.5))
    return best, heuristic
