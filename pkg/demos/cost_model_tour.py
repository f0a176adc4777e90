"""
Where the tokens go
===================

A walk through the analytical cost model: how a MAD debate and a
GroupDebate run of the same size spend their token budget, and how the
group count trades response tokens against summary tokens.
"""

from groupdebate.cost_model import (
    CostParams,
    even_split,
    gd_cost_bound,
    gd_token_cost,
    mad_token_cost,
    optimal_group_count,
)

# Four agents, four rounds. The question is 100 tokens, every answer 50
# and every summary 60.
p = CostParams(agents=4, rounds=4, question_tokens=100, output_tokens=50,
               summary_tokens=60, group_sizes=(2, 2), intra_rounds=2)

mad = mad_token_cost(p)
gd = gd_token_cost(p)

# Per-round rows: MAD keeps the whole history, so each round costs more
# than the last. GroupDebate forgets, so its rounds stay flat apart from
# the stage boundary.
print("round   MAD resp  MAD summ   GD resp  GD summ")
for a, b in zip(mad.rounds, gd.rounds):
    print(f"{a.round:>5} {a.response:>9} {a.summary:>9} {b.response:>9} {b.summary:>8}")
print(f"total {mad.total:>19} {gd.total:>18}")
print(f"GroupDebate saves {100 * (1 - gd.total / mad.total):.1f}%")

# The saving grows with debate size.
print("\nM  T    MAD     GD   saving")
for M in (4, 5, 6):
    for T in (3, 4):
        q = CostParams(M, T, 100, 50, 60, even_split(M, 2), 2)
        m_tot, g_tot = mad_token_cost(q).total, gd_token_cost(q).total
        print(f"{M}  {T} {m_tot:>6} {g_tot:>6}   {100 * (1 - g_tot / m_tot):.1f}%")

# More groups means shorter intra-group prompts but more summaries. The
# bound is convex in N, so the best count sits near sqrt(M T / S).
M, T, R = 16, 8, 2
S = -(-T // R)
print(f"\nM={M} T={T} S={S}: bound by group count")
for N in (1, 2, 4, 6, 8, 16):
    bound = gd_cost_bound(CostParams(M, T, 0, 50, 50, even_split(M, N), R))
    print(f"  N={N:>2}  {float(bound):>10.0f}")
best, heuristic = optimal_group_count(M, T, S, 50, 50)
print(f"best N = {best}, square-root rule = {heuristic}")
