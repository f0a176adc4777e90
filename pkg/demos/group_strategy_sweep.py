"""
Group size and stage length
===========================

Sweeps group strategies and intra-round counts for an 8-agent debate with
a stochastic mock, then prints accuracy and token use per cell. The same
grid can be run from the command line with ``groupdebate sweep``.
"""

from groupdebate.core import BackendConfig
from groupdebate.harness import DataSpec, SweepSpec, sweep_grid

spec = SweepSpec(
    modes=("GD", "MAD"),
    agents=(8,),
    group_strategies=("single", "groups:2", "groups:4"),
    total_rounds=(4,),
    intra_rounds=(1, 2, 4),
    seeds=(0,),
    repetitions=3,
    data=DataSpec(source="generate", count=20, seed=5),
    # agents are right 60% of the time and copy the crowd half the time
    backend=BackendConfig(policy="stochastic", accuracy=0.6, convergence=0.5),
)

report = sweep_grid(spec)
print(f"{'mode':<4} {'N':>2} {'R':>2}  {'accuracy':>14}  {'tokens':>9}  calls")
for agg in report.aggregates():
    print(f"{agg['mode']:<4} {agg['N']:>2} {agg['R']:>2}  "
          f"{agg['accuracy_mean']:.3f} +/- {agg['accuracy_std']:.3f}  "
          f"{agg['total_tokens_mean']:>9.0f}  {agg['api_calls_mean']:.0f}")

# MAD pays for its growing history. Among the GD cells the effect of N
# and R depends on how long responses are next to summaries: the mock's
# replies are short, so a single group is already cheap here.
