import re

import pytest
from conftest import bare_config, calibration_problem, fixed_backend
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from groupdebate.backends import BackendError, CallMeta, MockBackend, Scripted
from groupdebate.core import (
    ConfigError,
    DebateConfig,
    Mode,
    Phase,
    ScheduleStep,
    TaskKind,
    extract_answer,
    majority_vote,
)
from groupdebate.cost_model import CostParams, token_cost
from groupdebate.orchestrator import (
    AgentMemory,
    DebateAborted,
    DebateRun,
    SummaryPool,
    run_debate,
    run_mad,
    step_inter_transition,
    step_intra_round,
)

TAG = re.compile(r"\[\[[RS]\d+[AG]\d+\]\]")


def ledger_total(mode, agents, sizes, rounds, intra, q=10, o=5, m=6, **kw):
    cfg = bare_config(mode, agents, sizes, rounds, intra, **kw)
    return run_debate(cfg, calibration_problem(q), fixed_backend(o, m))


# --- ledger examples ------------------------------------------------------


def test_gd_four_agents_ledger():
    res = ledger_total("gd", 4, (2, 2), 4, 2)
    assert res.ledger.total_tokens == 420
    assert res.ledger.by_round() == {1: (60, 0), 2: (100, 32), 3: (128, 0), 4: (100, 0)}
    assert res.api_calls == 4 * 4 + 2 * 1


def test_gd_five_agents_call_count():
    res = ledger_total("gd", 5, (3, 2), 3, 2)
    assert res.api_calls == 17
    assert res.ledger.total_tokens == 412


def test_mad_examples():
    assert ledger_total("mad", 2, (), 2, 1).ledger.total_tokens == 104
    res = ledger_total("mad", 4, (), 4, 1)
    assert res.ledger.total_tokens == 756
    assert res.ledger.by_round()[1] == (60, 4 * (3 * 5 + 6))


def test_mad_five_agents_call_count():
    res = run_mad(bare_config("mad", 5, (), 3, 1), calibration_problem(), fixed_backend())
    assert res.api_calls == 25
    assert res.ledger.total_for("summary") == 10 * (4 * 5 + 6)
    assert sum(e.call_kind == "summary" for e in res.ledger.entries) == 10


def test_single_agent_degenerate():
    backend = MockBackend(Scripted({}, default="x"))
    res = run_debate(bare_config("gd", 1, (1,), 1, 1), "What?", backend)
    assert res.api_calls == 1
    assert res.per_agent_final[0] == extract_answer("x", TaskKind.ARITHMETIC)
    assert res.final.value == res.per_agent_final[0].value and not res.final.parsed


@pytest.mark.parametrize(
    "mode, agents, sizes, rounds, intra",
    [("gd", 6, (2, 2, 2), 5, 2), ("gd", 7, (4, 3), 6, 3), ("gd", 4, (1, 1, 1, 1), 3, 1),
     ("mad_group", 4, (2, 2), 4, 2), ("mad_group", 5, (3, 2), 5, 2),
     ("mad_forget", 3, (), 4, 1), ("mad_forget", 5, (), 2, 1), ("mad", 3, (), 5, 1)],
)
def test_ledger_equals_cost_model(mode, agents, sizes, rounds, intra):
    res = ledger_total(mode, agents, sizes, rounds, intra, q=13, o=7, m=4)
    cost = token_cost(mode, CostParams(agents, rounds, 13, 7, 4, sizes, intra))
    assert res.ledger.total_tokens == cost.total
    assert res.ledger.by_round() == {r.round: (r.response, r.summary) for r in cost.rounds}
    assert res.api_calls == res.config.expected_api_calls()


@settings(max_examples=40, deadline=None, suppress_health_check=[HealthCheck.too_slow])
@given(st.lists(st.integers(1, 4), min_size=1, max_size=3), st.integers(1, 6), st.data())
def test_gd_call_count_formula(sizes, rounds, data):
    intra = data.draw(st.integers(1, rounds))
    res = ledger_total("gd", sum(sizes), sizes, rounds, intra, q=3, o=2, m=2)
    S = -(-rounds // intra)
    assert res.api_calls == sum(sizes) * rounds + len(sizes) * (S - 1)


# --- steps ----------------------------------------------------------------


def fresh_run(agents=3):
    cfg = bare_config("gd", agents, (agents,), 2, 2)
    return DebateRun(cfg, calibration_problem(10), fixed_backend(5, 6))


def test_step_intra_round_group_of_three():
    run = fresh_run(3)
    memories = {i: AgentMemory(run.question) for i in (1, 2, 3)}
    run.respond(ScheduleStep(1, 1, Phase.INITIAL), [1, 2, 3], memories)
    step_intra_round(run, [(1, 2, 3)], memories, ScheduleStep(2, 1, Phase.INTRA))
    round2 = [e for e in run.ledger.entries if e.round == 2]
    assert [e.prompt_tokens for e in round2] == [25, 25, 25]
    assert "[[R1A2]]" in run.transcript[3].prompt and "[[R1A3]]" in run.transcript[3].prompt


def test_step_intra_round_group_of_one():
    run = fresh_run(1)
    memories = {1: AgentMemory(run.question)}
    run.respond(ScheduleStep(1, 1, Phase.INITIAL), [1], memories)
    step_intra_round(run, [(1,)], memories, ScheduleStep(2, 1, Phase.INTRA))
    assert run.ledger.entries[-1].prompt_tokens == 10 + 5
    assert TAG.findall(run.transcript[-1].prompt) == ["[[R1A1]]"]


def test_summary_phase_tokens_and_pool():
    cfg = bare_config("gd", 4, (2, 2), 2, 1)
    run = DebateRun(cfg, calibration_problem(10), fixed_backend(5, 6))
    memories = {i: AgentMemory(run.question) for i in range(1, 5)}
    run.respond(ScheduleStep(1, 1, Phase.INITIAL), [1, 2, 3, 4], memories)
    pool = SummaryPool()
    step_inter_transition(run, [(1, 2), (3, 4)], memories, pool, ScheduleStep(1, 1, Phase.INITIAL))
    summaries = [e for e in run.ledger.entries if e.call_kind == "summary"]
    assert sum(e.total for e in summaries) == 2 * (2 * 5 + 6) == 32
    assert [e.actor for e in summaries] == [1, 2]
    assert memories[3].incoming.own.startswith("[[S1G2]]")
    assert memories[1].incoming.own.startswith("[[S1G1]]")
    assert memories[1].incoming.others == (pool.stages[1][1],)


def test_single_group_summary_broadcast():
    res = ledger_total("gd", 3, (3,), 3, 1)
    inter = [e for e in res.transcript if e.phase == "inter" and e.call_kind == "response"]
    assert inter and all(TAG.findall(e.prompt)[-1].startswith("[[S") for e in inter)
    assert res.ledger.total_tokens == token_cost("gd", CostParams(3, 3, 10, 5, 6, (3,), 1)).total


# --- context hygiene -------------------------------------------------------


def allowed_tags(cfg, groups, round_, agent):
    """Sentinels a GD prompt may contain, derived from the schedule alone."""
    if round_ == 1:
        return set()
    R = cfg.intra_rounds
    group = next(j for j, g in enumerate(groups) if agent in g)
    own = {f"[[R{round_ - 1}A{agent}]]"}
    if (round_ - 1) % R == 0:  # first round of a new stage
        return own | {f"[[S{round_ - 1}G{j + 1}]]" for j in range(len(groups))}
    return own | {f"[[R{round_ - 1}A{p}]]" for p in groups[group]}


@pytest.mark.parametrize("sizes, rounds, intra", [((2, 2), 4, 2), ((3, 2), 7, 2), ((2, 2, 2), 5, 3),
                                                  ((1, 1), 3, 1)])
def test_gd_prompts_hold_only_current_material(sizes, rounds, intra):
    cfg = bare_config("gd", sum(sizes), sizes, rounds, intra, seed=4)
    res = run_debate(cfg, calibration_problem(), fixed_backend())
    groups = res.assignment.groups
    for e in res.transcript:
        tags = set(TAG.findall(e.prompt))
        if e.call_kind == "response":
            assert tags == allowed_tags(cfg, groups, e.round, e.actor), (e.round, e.actor)
        else:
            assert tags == {f"[[R{e.round}A{i}]]" for i in groups[e.actor - 1]}


def test_gd_inter_prompt_puts_own_summary_first():
    cfg = DebateConfig(mode=Mode.GD, agents=4, group_sizes=(2, 2), total_rounds=3, intra_rounds=1)
    res = run_debate(cfg, calibration_problem(), fixed_backend())
    for e in res.transcript:
        if e.phase == "inter" and e.call_kind == "response":
            g = res.assignment.group_of(e.actor) + 1
            text = e.messages[-1].content
            assert text.index(f"[[S{e.round - 1}G{g}]]") < text.index("Other group responses")


def test_mad_forget_hygiene():
    res = ledger_total("mad_forget", 4, (), 4, 1)
    for e in res.transcript:
        if e.call_kind == "response" and e.round > 1:
            assert set(TAG.findall(e.prompt)) == {f"[[R{e.round - 1}A{e.actor}]]", f"[[S{e.round - 1}A{e.actor}]]"}


def test_mad_history_keeps_everything():
    res = ledger_total("mad", 3, (), 4, 1)
    last = [e for e in res.transcript if e.round == 4 and e.call_kind == "response"]
    for e in last:
        expected = {f"[[R{t}A{e.actor}]]" for t in range(1, 4)} | {f"[[S{t}A{e.actor}]]" for t in range(1, 4)}
        assert set(TAG.findall(e.prompt)) == expected
    summaries = [e for e in res.transcript if e.call_kind == "summary"]
    for s in summaries:
        assert set(TAG.findall(s.prompt)) == {f"[[R{s.round}A{k}]]" for k in (1, 2, 3) if k != s.actor}


# --- determinism and failure ----------------------------------------------


@pytest.mark.parametrize("mode, sizes, intra", [("gd", (3, 2), 2), ("mad", (), 1)])
def test_parallelism_does_not_change_results(mode, sizes, intra):
    cfg = bare_config(mode, 5, sizes, 4, intra, seed=2)
    from groupdebate.backends import SeededStochastic
    backend = MockBackend(SeededStochastic(0.6, 0.5, seed=2))
    p = calibration_problem()
    one = run_debate(cfg, p, backend, max_workers=1).to_dict()
    many = run_debate(cfg, p, backend, max_workers=8).to_dict()
    assert one == many


class FailAt:
    def __init__(self, round_, actor):
        self.inner = fixed_backend()
        self.round, self.actor = round_, actor

    def generate(self, messages, meta: CallMeta):
        if meta.kind == "response" and (meta.round, meta.actor) == (self.round, self.actor):
            raise BackendError("boom", 503)
        return self.inner.generate(messages, meta)


def test_backend_failure_aborts_with_partial_ledger():
    cfg = bare_config("gd", 4, (2, 2), 4, 2)
    with pytest.raises(DebateAborted, match="agent 3 in round 3") as info:
        run_debate(cfg, calibration_problem(), FailAt(3, 3), max_workers=4)
    ledger = info.value.ledger
    # rounds 1-2, the summaries, and the three successful round-3 calls
    assert ledger.api_calls == 4 + 4 + 2 + 3
    assert ledger.total_tokens == 60 + 100 + 32 + 3 * 32
    assert len(info.value.transcript) == ledger.api_calls


# --- baselines and voting --------------------------------------------------


def test_baseline_call_counts():
    p = calibration_problem()
    cot = run_debate(DebateConfig(mode=Mode.SINGLE_COT, agents=1), p, fixed_backend())
    assert cot.api_calls == 1
    refl = run_debate(DebateConfig(mode=Mode.REFLECTION, agents=1), p, fixed_backend())
    assert refl.api_calls == 4
    assert refl.transcript[-1].messages[-1].content.startswith("Review your previous answer")
    sc = run_debate(DebateConfig(mode=Mode.COT_SC, agents=5), p, fixed_backend())
    assert sc.api_calls == 5


def test_single_agent_modes_reject_many_agents():
    with pytest.raises(ConfigError):
        DebateConfig(mode=Mode.SINGLE_COT, agents=3)


def test_run_mad_rejects_gd():
    with pytest.raises(ConfigError):
        run_mad(bare_config("gd", 2, (2,), 1, 1), "q", fixed_backend())


def test_scripted_majority_wins():
    script = {(i, None): ("The answer is 17" if i <= 3 else "The answer is 4") for i in range(1, 6)}
    cfg = bare_config("gd", 5, (3, 2), 3, 2)
    res = run_debate(cfg, calibration_problem(), MockBackend(Scripted(script, summary="fine")))
    assert [a.value for a in res.per_agent_final] == ["17", "17", "17", "4", "4"]
    assert res.final.value == "17"
    assert res.final == majority_vote(res.per_agent_final)


def test_problem_task_must_match():
    with pytest.raises(ConfigError):
        run_debate(bare_config("gd", 2, (2,), 1, 1), calibration_problem(task="gsm8k"), fixed_backend())


def test_standard_templates_send_system_prompt():
    cfg = DebateConfig(mode=Mode.GD, agents=2, group_sizes=(2,), total_rounds=2, intra_rounds=2)
    res = run_debate(cfg, calibration_problem(), fixed_backend())
    first = res.transcript[0].messages
    assert first[0].role == "system" and first[0].content.startswith("Welcome to the debate!")
    assert first[1].content.startswith("What is the result of")
    assert res.transcript[-1].messages[-1].content.startswith("These are the recent opinions from other agents:")
