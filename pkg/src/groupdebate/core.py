"""Domain types, agent partitioning, scheduling, answer extraction and voting.

Everything here is pure. Values are frozen dataclasses and safe to share
between threads.
"""

from __future__ import annotations

import math
import re
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Sequence

__all__ = [
    "UNPARSEABLE",
    "BackendConfig",
    "CanonicalAnswer",
    "ConfigError",
    "DebateConfig",
    "DebateSchedule",
    "GroupAssignment",
    "Mode",
    "Phase",
    "ScheduleStep",
    "SplitMix64",
    "TaskKind",
    "VoteError",
    "build_schedule",
    "extract_all_answers",
    "extract_answer",
    "format_answer",
    "majority_vote",
    "normalize",
    "partition_agents",
]


class ConfigError(ValueError):
    """Raised for inconsistent run parameters."""


class VoteError(ValueError):
    pass


class Mode(str, Enum):
    GD = "GD"
    MAD = "MAD"
    MAD_FORGET = "MAD_FORGET"
    MAD_GROUP = "MAD_GROUP"
    SINGLE_COT = "SINGLE_COT"
    COT_SC = "COT_SC"
    REFLECTION = "REFLECTION"

    @classmethod
    def _missing_(cls, value):
        # accept "gd", "mad_forget" and so on
        if isinstance(value, str) and value.upper() in cls.__members__:
            return cls[value.upper()]
        return None

    @property
    def grouped(self) -> bool:
        return self in (Mode.GD, Mode.MAD_GROUP)

    @property
    def single_agent(self) -> bool:
        return self in (Mode.SINGLE_COT, Mode.COT_SC, Mode.REFLECTION)


class TaskKind(str, Enum):
    ARITHMETIC = "arithmetic"
    GSM8K = "gsm8k"
    MMLU = "mmlu"
    MATH = "math"


class Phase(str, Enum):
    INITIAL = "initial"
    INTRA = "intra"
    INTER = "inter"


# --------------------------------------------------------------------------
# Portable PRNG
# --------------------------------------------------------------------------

_MASK64 = (1 << 64) - 1


class SplitMix64:
    """SplitMix64 generator (Steele, Lea & Flood; Vigna's reference constants).

    Used wherever a seeded permutation or draw must reproduce bit-for-bit in
    other languages. ``below(n)`` reduces with a plain modulo; the bias is
    below 2**-50 for the small ranges used here.
    """

    def __init__(self, seed: int) -> None:
        self.state = seed & _MASK64

    def next_u64(self) -> int:
        self.state = (self.state + 0x9E3779B97F4A7C15) & _MASK64
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
        return z ^ (z >> 31)

    def below(self, n: int) -> int:
        if n <= 0:
            raise ValueError("n must be positive")
        return self.next_u64() % n

    def random(self) -> float:
        """Uniform float in [0, 1) from the top 53 bits."""
        return (self.next_u64() >> 11) * (1.0 / (1 << 53))

    def shuffle(self, items: list) -> None:
        """In-place Fisher-Yates, walking from the last index down."""
        for i in range(len(items) - 1, 0, -1):
            j = self.below(i + 1)
            items[i], items[j] = items[j], items[i]


# --------------------------------------------------------------------------
# Configuration
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class BackendConfig:
    """How agent responses are produced.

    ``kind="mock"`` selects a deterministic policy (see ``backends``);
    ``kind="http"`` talks to a chat-completion endpoint. The API key is
    only ever read from the environment variable named by ``api_key_env``.
    Temperature and max_tokens defaults are ours, not tuned settings.
    """

    kind: str = "mock"
    endpoint: str | None = None
    model: str | None = None
    temperature: float = 1.0
    max_tokens: int = 512
    api_key_env: str | None = "OPENAI_API_KEY"
    timeout: float = 60.0
    max_retries: int = 3
    backoff: float = 0.5
    max_inflight: int = 4
    tokenizer: str | None = None
    # mock policy knobs
    policy: str = "fixed"
    output_tokens: int = 50
    summary_tokens: int = 60
    accuracy: float = 0.8
    convergence: float = 0.5

    def __post_init__(self) -> None:
        if self.kind not in ("mock", "http"):
            raise ConfigError(f"backend.kind must be 'mock' or 'http', got {self.kind!r}")
        if self.kind == "http" and not (self.endpoint and self.model):
            raise ConfigError("backend.kind='http' requires both endpoint and model")
        if self.policy not in ("fixed", "stochastic"):
            raise ConfigError(f"backend.policy must be 'fixed' or 'stochastic', got {self.policy!r}")
        if self.max_retries < 0 or self.max_inflight < 1:
            raise ConfigError("backend.max_retries must be >= 0 and max_inflight >= 1")

    @property
    def resolved_tokenizer(self) -> str:
        if self.tokenizer:
            return self.tokenizer
        return "additive_words" if self.kind == "mock" else "estimator"


@dataclass(frozen=True)
class DebateConfig:
    mode: Mode
    agents: int
    group_sizes: tuple[int, ...] = ()
    total_rounds: int = 3
    intra_rounds: int = 2
    seed: int = 0
    task: TaskKind = TaskKind.ARITHMETIC
    backend: BackendConfig = field(default_factory=BackendConfig)
    repetitions: int = 1
    reflection_trials: int = 3
    template_set: str = "standard"

    def __post_init__(self) -> None:
        object.__setattr__(self, "mode", Mode(self.mode))
        object.__setattr__(self, "task", TaskKind(self.task))
        if not self.group_sizes:
            object.__setattr__(self, "group_sizes", (self.agents,))
        else:
            object.__setattr__(self, "group_sizes", tuple(int(k) for k in self.group_sizes))
        if self.agents < 1:
            raise ConfigError(f"agents must be >= 1, got {self.agents}")
        if self.total_rounds < 1:
            raise ConfigError(f"total_rounds must be >= 1, got {self.total_rounds}")
        if self.intra_rounds < 1:
            raise ConfigError(f"intra_rounds must be >= 1, got {self.intra_rounds}")
        if self.repetitions < 1:
            raise ConfigError(f"repetitions must be >= 1, got {self.repetitions}")
        _check_sizes(self.agents, self.group_sizes)
        if self.mode.grouped and self.intra_rounds > self.total_rounds:
            raise ConfigError(
                f"intra_rounds ({self.intra_rounds}) exceeds total_rounds ({self.total_rounds})"
            )
        if self.mode in (Mode.SINGLE_COT, Mode.REFLECTION) and self.agents != 1:
            raise ConfigError(f"{self.mode.value} runs a single agent; got agents={self.agents}")
        if self.reflection_trials < 0:
            raise ConfigError("reflection_trials must be >= 0")

    @property
    def groups(self) -> int:
        return len(self.group_sizes)

    @property
    def stages(self) -> int:
        return math.ceil(self.total_rounds / self.intra_rounds)

    def expected_api_calls(self) -> int:
        m, t = self.agents, self.total_rounds
        if self.mode.grouped:
            return m * t + self.groups * (self.stages - 1)
        if self.mode in (Mode.MAD, Mode.MAD_FORGET):
            return m * t + m * (t - 1)
        if self.mode is Mode.REFLECTION:
            return 1 + self.reflection_trials
        if self.mode is Mode.COT_SC:
            return m
        return 1


def _check_sizes(agents: int, sizes: Sequence[int]) -> None:
    if any(k < 1 for k in sizes):
        raise ConfigError(f"group sizes must all be >= 1, got {list(sizes)}")
    if sum(sizes) != agents:
        raise ConfigError(
            f"group sizes {list(sizes)} sum to {sum(sizes)} but agents={agents}"
        )


# --------------------------------------------------------------------------
# Partitioning and scheduling
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class GroupAssignment:
    """Agent ids (1-based) per group; members listed in ascending id order."""

    groups: tuple[tuple[int, ...], ...]

    def group_of(self, agent: int) -> int:
        for j, members in enumerate(self.groups):
            if agent in members:
                return j
        raise KeyError(agent)

    @property
    def agents(self) -> int:
        return sum(len(g) for g in self.groups)


def partition_agents(agents: int, group_sizes: Sequence[int], seed: int) -> GroupAssignment:
    """Shuffle agents ``1..agents`` with SplitMix64(seed), then cut in order.

    The shuffled list is sliced into consecutive blocks of ``group_sizes``.
    Each block is returned sorted so peer ordering follows agent id.
    """
    _check_sizes(agents, group_sizes)
    order = list(range(1, agents + 1))
    SplitMix64(seed).shuffle(order)
    groups = []
    start = 0
    for k in group_sizes:
        groups.append(tuple(sorted(order[start : start + k])))
        start += k
    return GroupAssignment(tuple(groups))


@dataclass(frozen=True)
class ScheduleStep:
    round: int
    stage: int
    phase: Phase


@dataclass(frozen=True)
class DebateSchedule:
    steps: tuple[ScheduleStep, ...]
    intra_rounds: int

    @property
    def rounds(self) -> int:
        return len(self.steps)

    @property
    def stages(self) -> int:
        return self.steps[-1].stage

    def stage_rounds(self, stage: int) -> range:
        first = (stage - 1) * self.intra_rounds + 1
        return range(first, min(stage * self.intra_rounds, self.rounds) + 1)

    def closes_stage(self, round_: int) -> bool:
        """True when ``round_`` is the last round of a stage that gets summarized."""
        step = self.steps[round_ - 1]
        return step.stage < self.stages and round_ == self.stage_rounds(step.stage)[-1]


def build_schedule(total_rounds: int, intra_rounds: int) -> DebateSchedule:
    if total_rounds < 1 or intra_rounds < 1:
        raise ConfigError("total_rounds and intra_rounds must be >= 1")
    if intra_rounds > total_rounds:
        raise ConfigError(
            f"intra_rounds ({intra_rounds}) exceeds total_rounds ({total_rounds})"
        )
    steps = []
    for t in range(1, total_rounds + 1):
        s = (t - 1) // intra_rounds + 1
        if t == 1:
            phase = Phase.INITIAL
        elif t == (s - 1) * intra_rounds + 1:
            phase = Phase.INTER
        else:
            phase = Phase.INTRA
        steps.append(ScheduleStep(t, s, phase))
    return DebateSchedule(tuple(steps), intra_rounds)


# --------------------------------------------------------------------------
# Answers
# --------------------------------------------------------------------------

# Sorts after every digit and letter, so real answers win lexicographic ties.
UNPARSEABLE = "~unparseable"

_NUMBER = re.compile(r"(?<![\w.])-?\d+(?:,\d{3})*(?:\.\d+)?(?![\w])")
_PLAIN_NUMBER = re.compile(r"^[-+]?(?:\d+(?:,\d{3})*|\d*)(?:\.\d+)?$")
_CHOICE = re.compile(r"\(([A-Da-d])\)")


def _canonical_number(text: str) -> str | None:
    t = text.replace(",", "")
    if not t or not _PLAIN_NUMBER.match(text) or t in ("+", "-", ".", "-.", "+."):
        return None
    neg = t.startswith("-")
    t = t.lstrip("+-")
    if "." in t:
        whole, frac = t.split(".", 1)
        frac = frac.rstrip("0")
    else:
        whole, frac = t, ""
    whole = whole.lstrip("0") or "0"
    out = whole + ("." + frac if frac else "")
    if neg and out != "0":
        out = "-" + out
    return out


def normalize(text: str) -> str:
    """Canonical form of an answer token.

    Strips whitespace, surrounding ``$`` and a trailing period, collapses
    inner whitespace, and rewrites numbers as ``-?int(.frac)?`` without
    thousands separators or redundant zeros.
    """
    prev = None
    t = text
    while t != prev:
        prev = t
        t = " ".join(t.split()).strip("$").strip()
        if t.endswith(".") and not t.endswith(".."):
            t = t[:-1]
    number = _canonical_number(t)
    return number if number is not None else t


@dataclass(frozen=True)
class CanonicalAnswer:
    raw: str
    value: str

    @classmethod
    def of(cls, raw: str) -> CanonicalAnswer:
        return cls(raw, normalize(raw))

    @classmethod
    def unparseable(cls, raw: str = "") -> CanonicalAnswer:
        return cls(raw, UNPARSEABLE)

    @property
    def parsed(self) -> bool:
        return self.value != UNPARSEABLE


def _boxed_contents(text: str) -> list[str]:
    found = []
    key = "\\boxed{"
    pos = text.find(key)
    while pos != -1:
        i = pos + len(key)
        depth = 1
        j = i
        while j < len(text) and depth:
            if text[j] == "{":
                depth += 1
            elif text[j] == "}":
                depth -= 1
            j += 1
        if depth == 0:
            found.append(text[i : j - 1])
        pos = text.find(key, j if depth == 0 else i)
    return found


def extract_all_answers(response: str, task: TaskKind) -> list[str]:
    """Every answer-shaped token in ``response``, in order of appearance."""
    task = TaskKind(task)
    if task in (TaskKind.GSM8K, TaskKind.MATH):
        return _boxed_contents(response)
    if task is TaskKind.MMLU:
        return [m.upper() for m in _CHOICE.findall(response)]
    return _NUMBER.findall(response)


def extract_answer(response: str, task: TaskKind) -> CanonicalAnswer:
    """Last answer in ``response`` for ``task``, or the unparseable sentinel."""
    found = extract_all_answers(response, task)
    if not found:
        return CanonicalAnswer.unparseable(response)
    value = normalize(found[-1])
    if not value:
        return CanonicalAnswer.unparseable(response)
    return CanonicalAnswer(found[-1], value)


def format_answer(task: TaskKind, value: str) -> str:
    """The compact answer marker each task's output format asks for."""
    task = TaskKind(task)
    if task in (TaskKind.GSM8K, TaskKind.MATH):
        return "\\boxed{" + value + "}"
    if task is TaskKind.MMLU:
        return f"({value})"
    return value


def majority_vote(answers: Iterable[CanonicalAnswer]) -> CanonicalAnswer:
    """Most frequent normalized value; ties go to the lexicographically smallest."""
    counts = Counter(a.value for a in answers)
    if not counts:
        raise VoteError("cannot vote over an empty answer list")
    best = max(counts.values())
    winner = min(v for v, c in counts.items() if c == best)
    return CanonicalAnswer(winner, winner)
