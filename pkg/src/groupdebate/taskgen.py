"""Problems, prompt templates and scoring."""

from __future__ import annotations

import json
import statistics
import string
import sys
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .core import CanonicalAnswer, SplitMix64, TaskKind, normalize

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

__all__ = [
    "LoadError",
    "Problem",
    "PromptTemplate",
    "RenderError",
    "ScoreReport",
    "ScoringError",
    "TemplateSet",
    "arithmetic_truth",
    "gen_arithmetic",
    "join_texts",
    "load_dataset",
    "load_templates",
    "render_prompt",
    "score_run",
    "synthetic_problems",
    "write_dataset",
]


class LoadError(ValueError):
    pass


class RenderError(KeyError):
    def __str__(self) -> str:
        return str(self.args[0]) if self.args else "render error"


class ScoringError(ValueError):
    pass


@dataclass(frozen=True)
class Problem:
    id: str
    task: TaskKind
    question: str
    truth: CanonicalAnswer
    choices: tuple[str, ...] | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "task", TaskKind(self.task))
        if self.task is TaskKind.MMLU and (self.choices is None or len(self.choices) != 4):
            raise LoadError(f"MMLU problem {self.id!r} needs exactly 4 choices")

    def to_record(self) -> dict:
        record = {"id": self.id, "question": self.question, "answer": self.truth.value}
        if self.choices is not None:
            record["choices"] = list(self.choices)
        return record


# --------------------------------------------------------------------------
# Arithmetic
# --------------------------------------------------------------------------


def arithmetic_truth(a: int, b: int, c: int, d: int, e: int, f: int) -> int:
    return a + b * c + d - e * f


def gen_arithmetic(seed: int, count: int, high: int = 99) -> list[Problem]:
    """``count`` problems of the form a+b*c+d-e*f with operands in 0..high.

    Operands are drawn in order a..f from SplitMix64(seed).
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    rng = SplitMix64(seed)
    problems = []
    for k in range(count):
        ops = [rng.below(high + 1) for _ in range(6)]
        a, b, c, d, e, f = ops
        problems.append(
            Problem(
                id=f"arith-{seed}-{k}",
                task=TaskKind.ARITHMETIC,
                question=f"{a}+{b}*{c}+{d}-{e}*{f}",
                truth=CanonicalAnswer.of(str(arithmetic_truth(*ops))),
            )
        )
    return problems


def synthetic_problems(task: TaskKind, count: int, question_tokens: int) -> list[Problem]:
    """Placeholder problems whose question is exactly ``question_tokens`` words.

    Used for token-cost calibration with the fixed-length mock; the truth is
    ``0`` (``A`` for MMLU), matching the mock's default answer.
    """
    task = TaskKind(task)
    words = " ".join(f"w{i}" for i in range(question_tokens))
    mmlu = task is TaskKind.MMLU
    return [
        Problem(
            id=f"synthetic-{k}",
            task=task,
            question=words,
            truth=CanonicalAnswer.of("A" if mmlu else "0"),
            choices=("", "", "", "") if mmlu else None,
        )
        for k in range(count)
    ]


# --------------------------------------------------------------------------
# Dataset files
# --------------------------------------------------------------------------


def load_dataset(path: str | Path, task: TaskKind) -> list[Problem]:
    """Read one JSON object per line: ``{id, question, answer, choices?}``."""
    task = TaskKind(task)
    problems = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise LoadError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from exc
            if not isinstance(record, dict):
                raise LoadError(f"{path}:{lineno}: expected an object")
            missing = [k for k in ("id", "question", "answer") if k not in record]
            if missing:
                raise LoadError(f"{path}:{lineno}: missing field(s) {', '.join(missing)}")
            choices = record.get("choices")
            if task is TaskKind.MMLU and (not isinstance(choices, list) or len(choices) != 4):
                raise LoadError(f"{path}:{lineno}: MMLU record needs exactly 4 choices")
            problems.append(
                Problem(
                    id=str(record["id"]),
                    task=task,
                    question=str(record["question"]),
                    truth=CanonicalAnswer.of(str(record["answer"])),
                    choices=tuple(str(c) for c in choices) if choices is not None else None,
                )
            )
    return problems


def write_dataset(problems: Iterable[Problem], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for p in problems:
            fh.write(json.dumps(p.to_record(), ensure_ascii=False) + "\n")


# --------------------------------------------------------------------------
# Templates
# --------------------------------------------------------------------------

PHASES = ("system", "starting", "intra", "summary", "inter", "reflection")


@dataclass(frozen=True)
class PromptTemplate:
    phase: str
    body: str
    task: TaskKind | None = None

    @property
    def slots(self) -> tuple[str, ...]:
        return tuple(
            name for _, name, _, _ in string.Formatter().parse(self.body) if name is not None
        )


def render_prompt(template: PromptTemplate, slots: Mapping[str, str]) -> str:
    missing = [name for name in template.slots if name not in slots]
    if missing:
        raise RenderError(f"{template.phase} template is missing slot(s): {', '.join(missing)}")
    return template.body.format_map(slots)


def join_texts(texts: Sequence[str]) -> str:
    """Concatenate responses with blank lines; whitespace only, so word counts add."""
    return "\n\n".join(texts)


@dataclass(frozen=True)
class TemplateSet:
    name: str
    table: Mapping[str, object]

    def template(self, phase: str, task: TaskKind | None = None) -> PromptTemplate:
        if phase not in PHASES:
            raise RenderError(f"unknown phase {phase!r}")
        entry = self.table[phase]
        if isinstance(entry, dict):
            if task is None:
                raise RenderError(f"{phase} template needs a task")
            return PromptTemplate(phase, entry[TaskKind(task).value], TaskKind(task))
        return PromptTemplate(phase, str(entry), task)

    def output_format(self, task: TaskKind) -> str:
        return self.table["output_format"][TaskKind(task).value]

    def render(self, phase: str, task: TaskKind, **slots: str) -> str:
        """Render with the task's output-format suffix filled in."""
        slots.setdefault("output_format", self.output_format(task))
        return render_prompt(self.template(phase, task), slots)

    def starting(self, problem: Problem) -> str:
        slots = {"question": problem.question}
        if problem.choices is not None:
            slots.update(zip(("choice_a", "choice_b", "choice_c", "choice_d"), problem.choices))
        return self.render("starting", problem.task, **slots)

    @property
    def system(self) -> str:
        return str(self.table["system"])


@lru_cache(maxsize=None)
def _template_file(path: str | None) -> dict:
    if path is None:
        data = resources.files("groupdebate").joinpath("templates.toml").read_bytes()
    else:
        data = Path(path).read_bytes()
    return tomllib.loads(data.decode("utf-8"))


def load_templates(name: str = "standard", path: str | None = None) -> TemplateSet:
    table = _template_file(path)
    if name not in table:
        raise RenderError(f"unknown template set {name!r}; have {sorted(table)}")
    return TemplateSet(name, table[name])


# --------------------------------------------------------------------------
# Scoring
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class ScoreReport:
    accuracy: float
    mean: float
    std: float
    per_repetition: tuple[float, ...]
    per_problem: tuple[tuple[str, int, bool], ...]  # (problem id, repetition, correct)


def score_run(results: Sequence, problems: Sequence[Problem]) -> ScoreReport:
    """Accuracy of debate results against problem truths.

    ``results`` carry ``problem_id``, ``repetition`` and ``final``. Every
    repetition must cover exactly the given problems. ``std`` is the sample
    standard deviation over repetitions (0 with one repetition).
    """
    truths = {p.id: normalize(p.truth.value) for p in problems}
    if len(truths) != len(problems):
        raise ScoringError("duplicate problem ids")
    by_rep: dict[int, dict[str, bool]] = {}
    for r in results:
        if r.problem_id not in truths:
            raise ScoringError(f"result for unknown problem id {r.problem_id!r}")
        seen = by_rep.setdefault(r.repetition, {})
        if r.problem_id in seen:
            raise ScoringError(f"duplicate result for {r.problem_id!r} in repetition {r.repetition}")
        seen[r.problem_id] = r.final.value == truths[r.problem_id]
    if not by_rep:
        raise ScoringError("no results to score")
    for rep, seen in by_rep.items():
        if seen.keys() != truths.keys():
            missing = sorted(truths.keys() - seen.keys())
            raise ScoringError(f"repetition {rep} has no result for {missing[:5]}")
    reps = sorted(by_rep)
    per_rep = tuple(sum(by_rep[r].values()) / len(truths) for r in reps)
    per_problem = tuple(
        (pid, rep, by_rep[rep][pid]) for rep in reps for pid in sorted(by_rep[rep])
    )
    correct = sum(c for _, _, c in per_problem)
    return ScoreReport(
        accuracy=correct / len(per_problem),
        mean=statistics.fmean(per_rep),
        std=statistics.stdev(per_rep) if len(per_rep) > 1 else 0.0,
        per_repetition=per_rep,
        per_problem=per_problem,
    )
