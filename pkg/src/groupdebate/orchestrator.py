"""Debate state machine: GroupDebate, MAD and their ablations, plus baselines.

Within a round all agent calls are independent and run on a thread pool;
rounds and summary phases are separated by a barrier. Results are recorded
in agent-id order (summaries in group order), so ledgers and transcripts do
not depend on how many workers ran the calls.
"""

from __future__ import annotations

import dataclasses
from concurrent.futures import ThreadPoolExecutor, wait
from dataclasses import dataclass, field
from typing import Sequence, Union

from .backends import AgentBackend, BackendError, CallMeta, Generation, Message
from .core import (
    CanonicalAnswer,
    ConfigError,
    DebateConfig,
    GroupAssignment,
    Mode,
    Phase,
    ScheduleStep,
    build_schedule,
    extract_answer,
    majority_vote,
    partition_agents,
)
from .taskgen import Problem, TemplateSet, join_texts, load_templates

__all__ = [
    "AgentMemory",
    "DebateAborted",
    "DebateResult",
    "HistoryMemory",
    "LedgerEntry",
    "PeerOutputs",
    "SummaryPool",
    "SummaryPoolView",
    "TokenLedger",
    "TranscriptEntry",
    "UserText",
    "run_debate",
    "run_mad",
    "step_inter_transition",
    "step_intra_round",
]


# --------------------------------------------------------------------------
# Ledger and transcript
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class LedgerEntry:
    round: int
    stage: int
    phase: str
    actor: int
    actor_kind: str
    call_kind: str  # "response" | "summary"
    prompt_tokens: int
    completion_tokens: int
    estimated: bool = False

    @property
    def total(self) -> int:
        return self.prompt_tokens + self.completion_tokens


@dataclass
class TokenLedger:
    entries: list[LedgerEntry] = field(default_factory=list)

    @property
    def prompt_tokens(self) -> int:
        return sum(e.prompt_tokens for e in self.entries)

    @property
    def completion_tokens(self) -> int:
        return sum(e.completion_tokens for e in self.entries)

    @property
    def total_tokens(self) -> int:
        return self.prompt_tokens + self.completion_tokens

    @property
    def api_calls(self) -> int:
        return len(self.entries)

    @property
    def estimated(self) -> bool:
        return any(e.estimated for e in self.entries)

    def total_for(self, call_kind: str) -> int:
        return sum(e.total for e in self.entries if e.call_kind == call_kind)

    def by_round(self) -> dict[int, tuple[int, int]]:
        """``round -> (response tokens, summary tokens)``."""
        out: dict[int, list[int]] = {}
        for e in self.entries:
            row = out.setdefault(e.round, [0, 0])
            row[0 if e.call_kind == "response" else 1] += e.total
        return {t: (r, s) for t, (r, s) in sorted(out.items())}

    def to_dict(self) -> dict:
        return {
            "entries": [dataclasses.asdict(e) for e in self.entries],
            "prompt_tokens": self.prompt_tokens,
            "completion_tokens": self.completion_tokens,
            "total_tokens": self.total_tokens,
            "api_calls": self.api_calls,
        }


@dataclass(frozen=True)
class TranscriptEntry:
    round: int
    stage: int
    phase: str
    actor: int
    actor_kind: str
    call_kind: str
    messages: tuple[Message, ...]
    output: str

    @property
    def prompt(self) -> str:
        return "\n".join(m.content for m in self.messages)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["messages"] = [{"role": m.role, "content": m.content} for m in self.messages]
        return d


class DebateAborted(RuntimeError):
    """A backend call failed for good; carries everything recorded so far."""

    def __init__(self, message: str, ledger: TokenLedger, transcript: list[TranscriptEntry]):
        super().__init__(message)
        self.ledger = ledger
        self.transcript = transcript


@dataclass(frozen=True)
class DebateResult:
    config: DebateConfig
    problem_id: str
    repetition: int
    transcript: tuple[TranscriptEntry, ...]
    per_agent_final: tuple[CanonicalAnswer, ...]
    final: CanonicalAnswer
    ledger: TokenLedger
    assignment: GroupAssignment | None = None

    @property
    def api_calls(self) -> int:
        return self.ledger.api_calls

    def to_dict(self) -> dict:
        return {
            "problem_id": self.problem_id,
            "repetition": self.repetition,
            "mode": self.config.mode.value,
            "seed": self.config.seed,
            "groups": [list(g) for g in self.assignment.groups] if self.assignment else None,
            "final": self.final.value,
            "per_agent_final": [a.value for a in self.per_agent_final],
            "api_calls": self.api_calls,
            "ledger": self.ledger.to_dict(),
            "transcript": [e.to_dict() for e in self.transcript],
        }


# --------------------------------------------------------------------------
# Memory
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class PeerOutputs:
    texts: tuple[str, ...] = ()


@dataclass(frozen=True)
class SummaryPoolView:
    """All group summaries of one stage, the reader's own group first."""

    own: str
    others: tuple[str, ...]


@dataclass(frozen=True)
class UserText:
    """A user turn that is sent as-is."""

    text: str


Incoming = Union[PeerOutputs, SummaryPoolView, UserText]


def render_incoming(incoming: Incoming, templates: TemplateSet, task) -> str:
    if isinstance(incoming, UserText):
        return incoming.text
    if isinstance(incoming, SummaryPoolView):
        return templates.render(
            "inter", task, own_summary=incoming.own, other_summaries=join_texts(incoming.others)
        )
    return templates.render("intra", task, responses=join_texts(incoming.texts))


@dataclass
class AgentMemory:
    """Fixed three-slot context: question, own latest output, incoming buffer.

    Before the first response the buffer is empty and only the question is
    sent. Receiving new material replaces the buffer, so nothing older than
    the previous round (or stage, for summaries) survives.
    """

    question: str
    own_output: str = ""
    incoming: Incoming = PeerOutputs()
    responded: bool = False

    def receive(self, incoming: Incoming) -> None:
        self.incoming = incoming

    def record(self, output: str) -> None:
        self.own_output = output
        self.responded = True

    def messages(self, templates: TemplateSet, task, system: bool = True) -> list[Message]:
        out = [Message("system", templates.system)] if system and templates.system else []
        out.append(Message("user", self.question))
        if self.responded:
            out.append(Message("assistant", self.own_output))
            out.append(Message("user", render_incoming(self.incoming, templates, task)))
        return out


@dataclass
class HistoryMemory:
    """Full conversation: question, then every own output and every incoming buffer."""

    question: str
    turns: list[Union[str, Incoming]] = field(default_factory=list)

    def receive(self, incoming: Incoming) -> None:
        self.turns.append(incoming)

    def record(self, output: str) -> None:
        self.turns.append(output)

    @property
    def own_output(self) -> str:
        return next((t for t in reversed(self.turns) if isinstance(t, str)), "")

    def messages(self, templates: TemplateSet, task, system: bool = True) -> list[Message]:
        out = [Message("system", templates.system)] if system and templates.system else []
        out.append(Message("user", self.question))
        for turn in self.turns:
            if isinstance(turn, str):
                out.append(Message("assistant", turn))
            else:
                out.append(Message("user", render_incoming(turn, templates, task)))
        return out


Memory = Union[AgentMemory, HistoryMemory]


@dataclass
class SummaryPool:
    """Group summaries per stage; ``stages[s][j]`` summarizes group j at the end of stage s."""

    stages: dict[int, tuple[str, ...]] = field(default_factory=dict)

    def view(self, stage: int, group: int) -> SummaryPoolView:
        summaries = self.stages[stage]
        return SummaryPoolView(
            summaries[group], tuple(s for j, s in enumerate(summaries) if j != group)
        )


# --------------------------------------------------------------------------
# Run context
# --------------------------------------------------------------------------


@dataclass
class _Call:
    messages: list[Message]
    meta: CallMeta
    phase: str


class DebateRun:
    """Mutable state of one run: backend access, ledger and transcript."""

    def __init__(
        self,
        config: DebateConfig,
        problem: Problem,
        backend: AgentBackend,
        templates: TemplateSet | None = None,
        max_workers: int | None = None,
        repetition: int = 0,
    ) -> None:
        self.config = config
        self.problem = problem
        self.backend = backend
        self.templates = templates or load_templates(config.template_set)
        self.workers = max_workers or min(config.agents, config.backend.max_inflight)
        self.repetition = repetition
        self.ledger = TokenLedger()
        self.transcript: list[TranscriptEntry] = []
        self.question = self.templates.starting(problem)

    def meta(self, kind: str, round_: int, stage: int, actor: int, actor_kind: str = "agent") -> CallMeta:
        return CallMeta(
            kind=kind,
            round=round_,
            stage=stage,
            actor=actor,
            actor_kind=actor_kind,
            task=self.problem.task,
            problem_id=self.problem.id,
            truth=self.problem.truth.value if self.problem.truth.parsed else None,
        )

    def summary_messages(self, texts: Sequence[str]) -> list[Message]:
        return [
            Message("user", self.templates.render("summary", self.problem.task, responses=join_texts(texts)))
        ]

    def execute(self, calls: Sequence[_Call]) -> list[str]:
        """Run calls concurrently, record them in submission order, return outputs."""
        if self.workers <= 1 or len(calls) <= 1:
            results = [self._attempt(c) for c in calls]
        else:
            with ThreadPoolExecutor(max_workers=self.workers) as pool:
                futures = [pool.submit(self._attempt, c) for c in calls]
                wait(futures)
                results = [f.result() for f in futures]
        failure = None
        outputs = []
        for call, result in zip(calls, results):
            if isinstance(result, BaseException):
                failure = failure or (call, result)
                continue
            self._record(call, result)
            outputs.append(result.text)
        if failure is not None:
            call, exc = failure
            m = call.meta
            raise DebateAborted(
                f"{m.kind} call for {m.actor_kind} {m.actor} in round {m.round} "
                f"(stage {m.stage}) failed: {exc}",
                self.ledger,
                self.transcript,
            ) from exc
        return outputs

    def _attempt(self, call: _Call) -> Generation | BackendError:
        try:
            return self.backend.generate(call.messages, call.meta)
        except BackendError as exc:
            return exc

    def _record(self, call: _Call, gen: Generation) -> None:
        m = call.meta
        self.ledger.entries.append(
            LedgerEntry(
                m.round, m.stage, call.phase, m.actor, m.actor_kind, m.kind,
                gen.prompt_tokens, gen.completion_tokens, gen.estimated,
            )
        )
        self.transcript.append(
            TranscriptEntry(
                m.round, m.stage, call.phase, m.actor, m.actor_kind, m.kind,
                tuple(call.messages), gen.text,
            )
        )

    def respond(self, step: ScheduleStep, agents: Sequence[int], memories: dict[int, Memory]) -> dict[int, str]:
        system = not self.config.mode.single_agent
        calls = [
            _Call(
                memories[i].messages(self.templates, self.problem.task, system),
                self.meta("response", step.round, step.stage, i),
                step.phase.value,
            )
            for i in agents
        ]
        outputs = dict(zip(agents, self.execute(calls)))
        for i, text in outputs.items():
            memories[i].record(text)
        return outputs

    def finish(self, finals: dict[int, str], assignment: GroupAssignment | None = None) -> DebateResult:
        per_agent = tuple(extract_answer(finals[i], self.problem.task) for i in sorted(finals))
        return DebateResult(
            config=self.config,
            problem_id=self.problem.id,
            repetition=self.repetition,
            transcript=tuple(self.transcript),
            per_agent_final=per_agent,
            final=majority_vote(per_agent),
            ledger=self.ledger,
            assignment=assignment,
        )


# --------------------------------------------------------------------------
# Grouped debate steps
# --------------------------------------------------------------------------


def step_intra_round(
    run: DebateRun,
    groups: Sequence[Sequence[int]],
    memories: dict[int, Memory],
    step: ScheduleStep,
) -> dict[int, str]:
    """One intra-group round for every agent in ``groups``.

    Each member first receives its group peers' latest outputs (by agent id),
    then all members respond at once.
    """
    latest = {i: memories[i].own_output for g in groups for i in g}
    for g in groups:
        for i in g:
            memories[i].receive(PeerOutputs(tuple(latest[p] for p in g if p != i)))
    agents = sorted(latest)
    return run.respond(step, agents, memories)


def step_inter_transition(
    run: DebateRun,
    groups: Sequence[Sequence[int]],
    memories: dict[int, Memory],
    pool: SummaryPool,
    step: ScheduleStep,
) -> tuple[str, ...]:
    """Summarize each group's latest outputs and hand every agent the pool.

    ``step`` is the last round of the stage being closed. Replaces the
    previous stage's pool in every agent's memory.
    """
    calls = [
        _Call(
            run.summary_messages([memories[i].own_output for i in g]),
            run.meta("summary", step.round, step.stage, j + 1, "group"),
            step.phase.value,
        )
        for j, g in enumerate(groups)
    ]
    summaries = tuple(run.execute(calls))
    pool.stages[step.stage] = summaries
    for j, g in enumerate(groups):
        view = pool.view(step.stage, j)
        for i in g:
            memories[i].receive(view)
    return summaries


def _run_grouped(run: DebateRun) -> DebateResult:
    cfg = run.config
    assignment = partition_agents(cfg.agents, cfg.group_sizes, cfg.seed)
    schedule = build_schedule(cfg.total_rounds, cfg.intra_rounds)
    memory_type = HistoryMemory if cfg.mode is Mode.MAD_GROUP else AgentMemory
    memories: dict[int, Memory] = {i: memory_type(run.question) for i in range(1, cfg.agents + 1)}
    pool = SummaryPool()
    agents = sorted(memories)
    for step in schedule.steps:
        if step.phase is Phase.INTRA:
            step_intra_round(run, assignment.groups, memories, step)
        else:
            run.respond(step, agents, memories)
        if schedule.closes_stage(step.round):
            step_inter_transition(run, assignment.groups, memories, pool, step)
    return run.finish({i: memories[i].own_output for i in agents}, assignment)


# --------------------------------------------------------------------------
# MAD family
# --------------------------------------------------------------------------


def _run_mad_family(run: DebateRun) -> DebateResult:
    cfg = run.config
    schedule = build_schedule(cfg.total_rounds, 1)
    memory_type = AgentMemory if cfg.mode is Mode.MAD_FORGET else HistoryMemory
    memories: dict[int, Memory] = {i: memory_type(run.question) for i in range(1, cfg.agents + 1)}
    agents = sorted(memories)
    previous: dict[int, str] = {}
    for step in schedule.steps:
        if step.round > 1:
            prior = schedule.steps[step.round - 2]
            calls = [
                _Call(
                    run.summary_messages([previous[k] for k in agents if k != i]),
                    run.meta("summary", prior.round, prior.stage, i),
                    prior.phase.value,
                )
                for i in agents
            ]
            for i, summary in zip(agents, run.execute(calls)):
                memories[i].receive(PeerOutputs((summary,)))
        previous = run.respond(step, agents, memories)
    return run.finish(previous)


def _run_single(run: DebateRun) -> DebateResult:
    cfg = run.config
    first = ScheduleStep(1, 1, Phase.INITIAL)
    if cfg.mode is Mode.COT_SC:
        memories: dict[int, Memory] = {i: AgentMemory(run.question) for i in range(1, cfg.agents + 1)}
        return run.finish(run.respond(first, sorted(memories), memories))
    memory = HistoryMemory(run.question)
    outputs = run.respond(first, [1], {1: memory})
    if cfg.mode is Mode.REFLECTION:
        prompt = run.templates.render("reflection", run.problem.task)
        for t in range(2, cfg.reflection_trials + 2):
            memory.receive(UserText(prompt))
            outputs = run.respond(ScheduleStep(t, 1, Phase.INTRA), [1], {1: memory})
    return run.finish(outputs)


# --------------------------------------------------------------------------
# Entry points
# --------------------------------------------------------------------------


def _as_problem(problem: Problem | str, config: DebateConfig) -> Problem:
    if isinstance(problem, Problem):
        if problem.task is not config.task:
            raise ConfigError(f"problem task {problem.task.value} != config task {config.task.value}")
        return problem
    return Problem("q", config.task, str(problem), CanonicalAnswer.unparseable(), None)


def run_debate(
    config: DebateConfig,
    problem: Problem | str,
    backend: AgentBackend,
    *,
    templates: TemplateSet | None = None,
    max_workers: int | None = None,
    repetition: int = 0,
) -> DebateResult:
    """Run one question under ``config.mode`` and return the voted result.

    Raises ``DebateAborted`` (with the partial ledger) when a backend call
    fails after its retries.
    """
    run = DebateRun(config, _as_problem(problem, config), backend, templates, max_workers, repetition)
    if config.mode.grouped:
        return _run_grouped(run)
    if config.mode in (Mode.MAD, Mode.MAD_FORGET):
        return _run_mad_family(run)
    return _run_single(run)


def run_mad(
    config: DebateConfig,
    problem: Problem | str,
    backend: AgentBackend,
    **kwargs,
) -> DebateResult:
    """MAD, MAD_FORGET or MAD_GROUP run; same options as ``run_debate``."""
    if config.mode not in (Mode.MAD, Mode.MAD_FORGET, Mode.MAD_GROUP):
        raise ConfigError(f"run_mad does not handle mode {config.mode.value}")
    return run_debate(config, problem, backend, **kwargs)
