import itertools
import math
from fractions import Fraction

import pytest
from hypothesis import given
from hypothesis import strategies as st

from groupdebate.core import ConfigError
from groupdebate.cost_model import (
    CostParams,
    even_split,
    gd_cost_bound,
    gd_token_cost,
    mad_cost_bound,
    mad_forget_token_cost,
    mad_group_token_cost,
    mad_round_costs_closed,
    mad_round_costs_recurrence,
    mad_token_cost,
    optimal_group_count,
)

# Oracles: literal step-by-step token sums with per-agent, per-round length
# tables, written without reference to the closed forms under test.


def oracle_mad_total(M, T, Q, out, summ):
    """out[i][t], summ[i][t] indexed from 1; summ[i][t] summarizes round t for agent i."""
    total = 0
    for t in range(1, T + 1):
        for i in range(1, M + 1):
            if t == 1:
                total += Q + out[i][1]
            else:
                total += sum(out[k][t - 1] for k in range(1, M + 1) if k != i) + summ[i][t - 1]
                history = sum(out[i][u] + summ[i][u] for u in range(1, t))
                total += history + Q + out[i][t]
    return total


def oracle_gd_total(groups, T, R, Q, out, summ):
    """groups: list of agent lists; summ[j][s] summary of group j after stage s."""
    M = sum(len(g) for g in groups)
    S = math.ceil(T / R)
    total = sum(Q + out[i][1] for g in groups for i in g)
    for t in range(2, min(R, T) + 1):
        total += sum(Q + out[i][t] + sum(out[k][t - 1] for k in g) for g in groups for i in g)
    for s in range(2, S + 1):
        b = (s - 1) * R
        total += sum(sum(out[i][b] for i in g) + summ[j][s - 1] for j, g in enumerate(groups))
        total += sum(
            Q + out[i][b] + sum(summ[j][s - 1] for j in range(len(groups))) + out[i][b + 1]
            for g in groups for i in g
        )
        for t in range(b + 2, min(s * R, T) + 1):
            total += sum(Q + out[i][t] + sum(out[k][t - 1] for k in g) for g in groups for i in g)
    assert M >= 1
    return total


def const_tables(M, T, o, m, n_groups=None):
    out = {i: {t: o for t in range(1, T + 1)} for i in range(1, M + 1)}
    keys = range(n_groups) if n_groups is not None else range(1, M + 1)
    summ = {k: {t: m for t in range(1, T + 1)} for k in keys}
    return out, summ


def oracle_gd_const(sizes, T, R, Q, o, m):
    it = itertools.count(1)
    groups = [[next(it) for _ in range(k)] for k in sizes]
    out, summ = const_tables(sum(sizes), T, o, m, len(sizes))
    return oracle_gd_total(groups, T, R, Q, out, summ)


def oracle_mad_const(M, T, Q, o, m):
    out, summ = const_tables(M, T, o, m)
    return oracle_mad_total(M, T, Q, out, summ)


# --- MAD -------------------------------------------------------------------


def test_mad_single_call():
    assert mad_token_cost(CostParams(1, 1, 10, 5)).total == 15


def test_mad_two_agents_two_rounds():
    assert oracle_mad_const(2, 2, 10, 5, 6) == 30 + 22 + 52
    assert mad_token_cost(CostParams(2, 2, 10, 5, 6)).total == 104


def test_mad_four_agents_four_rounds():
    assert oracle_mad_const(4, 4, 10, 5, 6) == 756
    assert mad_token_cost(CostParams(4, 4, 10, 5, 6)).total == 756


def test_mad_breakdown_rows():
    b = mad_token_cost(CostParams(2, 2, 10, 5, 6))
    assert [(r.round, r.response, r.summary) for r in b.rounds] == [(1, 30, 22), (2, 52, 0)]
    assert b.total == b.response_total + b.summary_total


@given(st.integers(1, 12), st.integers(1, 12), st.integers(0, 300), st.integers(0, 200), st.integers(0, 200))
def test_mad_recurrence_matches_closed_form(M, T, Q, o, m):
    p = CostParams(M, T, Q, o, m)
    assert mad_round_costs_recurrence(p) == mad_round_costs_closed(p)
    assert mad_token_cost(p).total == oracle_mad_const(M, T, Q, o, m)


# --- GD --------------------------------------------------------------------


def test_gd_degenerate_single_agent():
    assert gd_token_cost(CostParams(1, 1, 10, 5, 0, (1,), 1)).total == 15


def test_gd_four_agents_two_pairs():
    assert oracle_gd_const((2, 2), 4, 2, 10, 5, 6) == 60 + 100 + 32 + 128 + 100
    b = gd_token_cost(CostParams(4, 4, 10, 5, 6, (2, 2), 2))
    assert b.total == 420
    assert [(r.response, r.summary) for r in b.rounds] == [(60, 0), (100, 32), (128, 0), (100, 0)]


def test_gd_five_agents_mixed_groups_frozen():
    # hand trace: 5(10+5) + [3(10+15+5) + 2(10+10+5)] + [(15+6) + (10+6)] + 5(10+5+12+5)
    assert 75 + (90 + 50) + (21 + 16) + 160 == 412
    assert oracle_gd_const((3, 2), 3, 2, 10, 5, 6) == 412
    assert gd_token_cost(CostParams(5, 3, 10, 5, 6, (3, 2), 2)).total == 412


def test_gd_no_summary_when_single_stage():
    for M, T, Q, o in [(3, 4, 10, 5), (5, 2, 7, 3)]:
        b = gd_token_cost(CostParams(M, T, Q, o, 99, (M,), T))
        assert b.summary_total == 0
        assert b.total == M * (Q + o) + (T - 1) * M * (Q + M * o + o)


@st.composite
def gd_params(draw):
    sizes = tuple(draw(st.lists(st.integers(1, 5), min_size=1, max_size=4)))
    T = draw(st.integers(1, 9))
    R = draw(st.integers(1, T))
    return CostParams(sum(sizes), T, draw(st.integers(0, 200)), draw(st.integers(0, 80)),
                      draw(st.integers(0, 80)), sizes, R)


@given(gd_params())
def test_gd_matches_literal_oracle(p):
    expected = oracle_gd_const(p.group_sizes, p.rounds, p.intra_rounds,
                               p.question_tokens, p.output_tokens, p.summary_tokens)
    assert gd_token_cost(p).total == expected


def test_oracle_handles_varying_lengths():
    # sanity: literal oracles react to individual entries, not only to constants
    out, summ = const_tables(2, 2, 5, 6)
    out[1][1] = 7
    assert oracle_mad_total(2, 2, 10, out, summ) == 104 + 2 + 2 + 2


def test_mad_group_equals_gd_without_forgetting():
    # one stage, one group of one: history grows by one output per round
    p = CostParams(1, 3, 10, 5, 6, (1,), 3)
    assert mad_group_token_cost(p).total == 15 + (10 + 5 + 0 + 5) + (10 + 10 + 0 + 5)
    assert gd_token_cost(p).total == 15 + 20 + 20


def test_mad_forget_cost():
    p = CostParams(3, 3, 10, 5, 6)
    b = mad_forget_token_cost(p)
    assert b.total == 3 * 15 + 2 * 3 * (10 + 5 + 6 + 5) + 2 * 3 * (2 * 5 + 6)


# --- monotonicity ----------------------------------------------------------


@pytest.mark.parametrize("fn", [mad_token_cost, gd_token_cost])
def test_costs_increase_in_each_argument(fn):
    base = dict(agents=4, rounds=4, question_tokens=10, output_tokens=5, summary_tokens=6)
    def cost(**kw):
        args = {**base, **kw}
        return fn(CostParams(**args, group_sizes=even_split(args["agents"], 2), intra_rounds=2)).total
    for M in range(2, 8):
        assert cost(agents=M + 1) > cost(agents=M)
    for T in range(2, 8):
        assert cost(rounds=T + 1) > cost(rounds=T)
    for Q in (0, 5, 50):
        assert cost(question_tokens=Q + 1) > cost(question_tokens=Q)
    for o in (1, 5, 50):
        assert cost(output_tokens=o + 1) > cost(output_tokens=o)


# --- bounds ----------------------------------------------------------------


def test_mad_bound_example():
    p = CostParams(2, 2, 10, 5, 6)
    assert mad_cost_bound(p) == 40 + 80 + (8 + 8) * 6 == 216
    assert mad_cost_bound(p) >= mad_token_cost(p).total


def test_mad_bound_single_call():
    p = CostParams(1, 1, 10, 5, 6)
    assert mad_cost_bound(p) == 10 + 2 * 5 + 2 * 6 >= 15


def test_gd_bound_example():
    p = CostParams(4, 4, 10, 5, 6, (2, 2), 2)
    assert gd_cost_bound(p) == 160 + 320 + 192 == 672
    assert gd_cost_bound(p) >= 420


def test_gd_bound_is_fractional_when_needed():
    assert gd_cost_bound(CostParams(3, 1, 0, 1, 0, (2, 1), 1)) == 9
    assert gd_cost_bound(CostParams(4, 1, 0, 1, 0, (2, 1, 1), 1)) == Fraction(32, 3)


def test_bounds_dominate_on_equal_size_grid():
    for M in range(2, 9):
        for N in [n for n in range(1, M + 1) if M % n == 0]:
            for T in range(1, 7):
                for R in range(1, min(T, 3) + 1):
                    p = CostParams(M, T, 100, 50, 60, even_split(M, N), R)
                    assert gd_cost_bound(p) >= gd_token_cost(p).total
                    assert mad_cost_bound(p) >= mad_token_cost(p).total


def test_gd_bound_extreme_one_agent_per_group():
    for M in range(2, 9):
        for T in range(1, 7):
            p = CostParams(M, T, 100, 50, 60, (1,) * M, 1)
            assert gd_cost_bound(p) >= gd_token_cost(p).total


def test_bounds_need_summary_slack():
    # with empty summaries the output-only terms do not cover long debates
    assert mad_cost_bound(CostParams(1, 10, 0, 100, 0)) < mad_token_cost(CostParams(1, 10, 0, 100, 0)).total
    p = CostParams(2, 3, 0, 100, 1, (1, 1), 1)
    assert gd_cost_bound(p) < gd_token_cost(p).total


# --- optimal group count ---------------------------------------------------


def brute_best(M, T, S, o, m):
    best = None
    for N in range(1, M + 1):
        value = Fraction(2 * M * M * T, N) * o + 2 * M * S * N * m
        if best is None or value < best[0]:
            best = (value, N)
    return best[1]


@pytest.mark.parametrize("M, T, S, heuristic", [(4, 4, 2, 3), (16, 4, 2, 6)])
def test_optimal_group_count_examples(M, T, S, heuristic):
    best, h = optimal_group_count(M, T, S, 1, 1)
    assert h == heuristic
    assert best == brute_best(M, T, S, 1, 1)
    assert abs(best - h) <= 1


def test_optimal_group_count_huge_summary():
    assert optimal_group_count(8, 4, 2, 50, 10**6)[0] == 1


def test_optimal_group_count_sweep():
    for M in range(4, 17):
        for T in range(4, 13):
            for S in (2, 3):
                best, h = optimal_group_count(M, T, S, 7, 7)
                assert best == brute_best(M, T, S, 7, 7)
                assert abs(best - round(math.sqrt(M * T / S))) <= 1


def test_cost_params_validation():
    with pytest.raises(ConfigError):
        CostParams(4, 2, 10, 5, 6, (2, 1), 1)
    with pytest.raises(ConfigError):
        CostParams(0, 1, 1, 1)
    with pytest.raises(ConfigError):
        even_split(2, 3)
