"""
A GroupDebate run you can read
==============================

Runs one debate on a generated arithmetic problem with a mock backend
whose outputs carry provenance tags, then prints what each agent saw.
Nothing leaves the machine.
"""

from groupdebate import DebateConfig, Mode, run_debate
from groupdebate.backends import FixedLength, MockBackend
from groupdebate.cost_model import CostParams, gd_token_cost
from groupdebate.taskgen import gen_arithmetic

problem = gen_arithmetic(seed=1, count=1)[0]
print("question:", problem.question, "=", problem.truth.value)

# Five agents in groups of three and two; two intra rounds per stage.
config = DebateConfig(mode=Mode.GD, agents=5, group_sizes=(3, 2), total_rounds=3,
                      intra_rounds=2, seed=0)

# Every response is 8 words, every summary 6. The first word is a tag
# like [[R2A4]] (round 2, agent 4) and the last is the answer.
backend = MockBackend(FixedLength(8, 6, answer=problem.truth.value))
result = run_debate(config, problem, backend)

print("groups:", result.assignment.groups)
for entry in result.transcript:
    who = f"{entry.actor_kind} {entry.actor}"
    print(f"\nround {entry.round} {entry.phase:<7} {entry.call_kind:<8} {who}")
    print("  last user turn:", entry.messages[-1].content[:110].replace("\n", " "), "...")
    print("  output:", entry.output)

print("\nfinal answer:", result.final.value, "from", [a.value for a in result.per_agent_final])
print("api calls:", result.api_calls, "tokens:", result.ledger.total_tokens)

# With the instruction-free "bare" templates the ledger lands exactly on
# the analytical cost.
bare = DebateConfig(mode=Mode.GD, agents=5, group_sizes=(3, 2), total_rounds=3,
                    intra_rounds=2, template_set="bare")
q = len(problem.question.split())
ledger = run_debate(bare, problem, backend).ledger.total_tokens
model = gd_token_cost(CostParams(5, 3, q, 8, 6, (3, 2), 2)).total
print(f"bare ledger {ledger} vs model {model}")
