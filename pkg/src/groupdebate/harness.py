"""Experiment harness and command line interface.

Subcommands::

    groupdebate run --config exp.toml --out report.csv [--format csv|json]
    groupdebate sweep --spec sweep.toml --out sweep.csv [--format csv|json]
    groupdebate cost --params cost.toml --out cost.csv
    groupdebate gen-arith --seed 0 --count 100 --out problems.jsonl

Config files are TOML. See README.md for the schema.

Report rows hold one (config, repetition) each. Token and call columns are
sums over all problems of that repetition, taken straight from the run
ledgers. Repetition ``r`` runs with seed ``seed + r``. Sweep rows follow the
nested axis order mode, agents, group strategy, total_rounds, intra_rounds,
seed, each axis in the order written in the spec. Reports from failed runs
are written to ``<out>.partial`` instead of ``<out>``.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import json
import statistics
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Iterable, Mapping, Sequence

from .backends import AgentBackend, make_backend
from .core import BackendConfig, ConfigError, DebateConfig, Mode, TaskKind
from .cost_model import (
    CostParams,
    even_split,
    gd_cost_bound,
    gd_token_cost,
    mad_cost_bound,
    mad_token_cost,
    optimal_group_count,
)
from .orchestrator import DebateAborted, DebateResult, run_debate
from .taskgen import (
    LoadError,
    Problem,
    gen_arithmetic,
    load_dataset,
    score_run,
    synthetic_problems,
    write_dataset,
)

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

REPORT_COLUMNS = (
    "dataset", "mode", "M", "N", "T", "R", "S", "seed", "repetition", "accuracy",
    "prompt_tokens", "completion_tokens", "total_tokens", "api_calls", "wall_ms",
    "estimated_usage_flag",
)
AGGREGATED = ("accuracy", "prompt_tokens", "completion_tokens", "total_tokens", "api_calls")
COST_COLUMNS = (
    "M", "T", "R", "S", "N", "group_sizes", "Q", "o", "m", "mad_total", "gd_total",
    "reduction_pct", "mad_bound", "gd_bound", "best_N", "heuristic_N",
)

BackendFactory = Callable[[BackendConfig, int], AgentBackend]


# --------------------------------------------------------------------------
# Config parsing
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class DataSpec:
    """Where problems come from: ``generate`` (arithmetic), ``file`` or ``synthetic``."""

    source: str = "generate"
    path: str | None = None
    count: int = 10
    seed: int = 0
    question_tokens: int = 100
    name: str | None = None

    def __post_init__(self) -> None:
        if self.source not in ("generate", "file", "synthetic"):
            raise ConfigError(f"source must be generate, file or synthetic, got {self.source!r}")
        if self.source == "file" and not self.path:
            raise ConfigError("path is required when source = 'file'")
        if self.count < 1:
            raise ConfigError("count must be >= 1")

    def dataset_name(self, task: TaskKind) -> str:
        if self.name:
            return self.name
        if self.source == "file":
            return Path(self.path).stem
        return task.value if self.source == "generate" else f"synthetic-{task.value}"


@dataclass(frozen=True)
class ExperimentSpec:
    config: DebateConfig
    data: DataSpec = DataSpec()
    timing: bool | None = None


def _check_value(section: str, name: str, annotation: str, value: Any) -> Any:
    where = f"{section}.{name}"
    if "tuple[int" in annotation:
        if not isinstance(value, list) or not all(isinstance(v, int) and not isinstance(v, bool) for v in value):
            raise ConfigError(f"{where}: expected a list of integers, got {value!r}")
        return tuple(value)
    if annotation.startswith("bool"):
        if not isinstance(value, bool):
            raise ConfigError(f"{where}: expected true/false, got {value!r}")
        return value
    if annotation.startswith("int"):
        if not isinstance(value, int) or isinstance(value, bool):
            raise ConfigError(f"{where}: expected an integer, got {value!r}")
        return value
    if annotation.startswith("float"):
        if not isinstance(value, (int, float)) or isinstance(value, bool):
            raise ConfigError(f"{where}: expected a number, got {value!r}")
        return float(value)
    if annotation.startswith(("str", "Mode", "TaskKind")):
        if not isinstance(value, str):
            raise ConfigError(f"{where}: expected a string, got {value!r}")
    return value


def _build(cls, table: Mapping[str, Any], section: str, skip: Iterable[str] = ()):
    fields = {f.name: f for f in dataclasses.fields(cls) if f.name not in skip}
    unknown = sorted(set(table) - set(fields))
    if unknown:
        raise ConfigError(f"{section}.{unknown[0]}: unknown field (allowed: {', '.join(sorted(fields))})")
    kwargs = {k: _check_value(section, k, str(fields[k].type), v) for k, v in table.items()}
    missing = [
        name for name, f in fields.items()
        if name not in kwargs and f.default is dataclasses.MISSING and f.default_factory is dataclasses.MISSING
    ]
    if missing:
        raise ConfigError(f"{section}.{missing[0]}: required field is missing")
    try:
        return cls(**kwargs)
    except ConfigError as exc:
        raise ConfigError(f"{section}: {exc}") from None
    except ValueError as exc:  # bad enum values
        raise ConfigError(f"{section}: {exc}") from None


def _section(doc: Mapping[str, Any], name: str) -> Mapping[str, Any]:
    value = doc.get(name, {})
    if not isinstance(value, dict):
        raise ConfigError(f"{name}: expected a table")
    return value


def parse_experiment(doc: Mapping[str, Any]) -> ExperimentSpec:
    unknown = sorted(set(doc) - {"experiment", "data", "backend"})
    if unknown:
        raise ConfigError(f"{unknown[0]}: unknown section")
    experiment = dict(_section(doc, "experiment"))
    timing = experiment.pop("timing", None)
    if timing is not None and not isinstance(timing, bool):
        raise ConfigError("experiment.timing: expected true/false")
    backend = _build(BackendConfig, _section(doc, "backend"), "backend")
    config = _build(DebateConfig, experiment, "experiment", skip=("backend",))
    config = dataclasses.replace(config, backend=backend)
    data = _build(DataSpec, _section(doc, "data"), "data")
    return ExperimentSpec(config, data, timing)


def load_toml(path: str | Path) -> dict:
    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def load_problems(data: DataSpec, task: TaskKind) -> list[Problem]:
    if data.source == "file":
        return load_dataset(data.path, task)
    if data.source == "synthetic":
        return synthetic_problems(task, data.count, data.question_tokens)
    if task is not TaskKind.ARITHMETIC:
        raise ConfigError(f"data.source = 'generate' only supports arithmetic, not {task.value}")
    return gen_arithmetic(data.seed, data.count)


# --------------------------------------------------------------------------
# Reports
# --------------------------------------------------------------------------


@dataclass
class ExperimentReport:
    rows: list[dict] = field(default_factory=list)
    failures: list[str] = field(default_factory=list)

    @property
    def partial(self) -> bool:
        return bool(self.failures)

    def aggregates(self) -> list[dict]:
        """Mean and sample standard deviation per config over its repetitions."""
        keyed: dict[tuple, list[dict]] = {}
        for row in self.rows:
            key = tuple(row[c] for c in ("dataset", "mode", "M", "N", "T", "R", "S", "seed"))
            keyed.setdefault(key, []).append(row)
        out = []
        for key, rows in keyed.items():
            agg = dict(zip(("dataset", "mode", "M", "N", "T", "R", "S", "seed"), key))
            agg["repetitions"] = len(rows)
            for col in AGGREGATED:
                values = [r[col] for r in rows]
                agg[f"{col}_mean"] = statistics.fmean(values)
                agg[f"{col}_std"] = statistics.stdev(values) if len(values) > 1 else 0.0
            out.append(agg)
        return out

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=REPORT_COLUMNS, lineterminator="\n")
        writer.writeheader()
        for row in self.rows:
            writer.writerow({k: _fmt(row[k]) for k in REPORT_COLUMNS})
        return buf.getvalue()

    def to_json(self) -> str:
        payload = {
            "columns": list(REPORT_COLUMNS),
            "rows": self.rows,
            "aggregates": self.aggregates(),
            "partial": self.partial,
            "failures": self.failures,
        }
        return json.dumps(payload, indent=2) + "\n"

    def write(self, out: str | Path, fmt: str = "csv") -> Path:
        path = Path(out)
        if self.partial:
            path = path.with_name(path.name + ".partial")
        path.write_text(self.to_csv() if fmt == "csv" else self.to_json(), encoding="utf-8")
        return path


def _fmt(value: Any) -> Any:
    if isinstance(value, bool):
        return int(value)
    if isinstance(value, float):
        return f"{value:.6g}"
    return value


def effective_rounds(config: DebateConfig) -> tuple[int, int, int]:
    """(T, R, S) as actually executed for ``config.mode``."""
    if config.mode.grouped:
        return config.total_rounds, config.intra_rounds, config.stages
    if config.mode in (Mode.MAD, Mode.MAD_FORGET):
        return config.total_rounds, 1, config.total_rounds
    t = 1 + config.reflection_trials if config.mode is Mode.REFLECTION else 1
    return t, t, 1


def run_config(
    config: DebateConfig,
    problems: Sequence[Problem],
    *,
    dataset: str,
    timing: bool | None = None,
    backend_factory: BackendFactory = make_backend,
    max_workers: int | None = None,
) -> ExperimentReport:
    """All repetitions of one config; stops at the first aborted run."""
    if timing is None:
        timing = config.backend.kind == "http"
    t_, r_, s_ = effective_rounds(config)
    report = ExperimentReport()
    for rep in range(config.repetitions):
        cfg = dataclasses.replace(config, seed=config.seed + rep)
        backend = backend_factory(cfg.backend, cfg.seed)
        start = time.perf_counter()
        results: list[DebateResult] = []
        try:
            for problem in problems:
                results.append(
                    run_debate(cfg, problem, backend, max_workers=max_workers, repetition=rep)
                )
        except DebateAborted as exc:
            report.failures.append(
                f"{config.mode.value} M={config.agents} seed={cfg.seed} repetition={rep}: {exc}"
            )
            break
        finally:
            close = getattr(backend, "close", None)
            if close:
                close()
        elapsed = (time.perf_counter() - start) * 1000 if timing else 0.0
        score = score_run(results, problems)
        report.rows.append(
            {
                "dataset": dataset,
                "mode": config.mode.value,
                "M": config.agents,
                "N": config.groups,
                "T": t_,
                "R": r_,
                "S": s_,
                "seed": config.seed,
                "repetition": rep,
                "accuracy": score.accuracy,
                "prompt_tokens": sum(r.ledger.prompt_tokens for r in results),
                "completion_tokens": sum(r.ledger.completion_tokens for r in results),
                "total_tokens": sum(r.ledger.total_tokens for r in results),
                "api_calls": sum(r.api_calls for r in results),
                "wall_ms": round(elapsed, 3),
                "estimated_usage_flag": any(r.ledger.estimated for r in results),
            }
        )
    return report


def run_experiment(
    config_file: str | Path | ExperimentSpec,
    *,
    backend_factory: BackendFactory = make_backend,
) -> ExperimentReport:
    spec = config_file if isinstance(config_file, ExperimentSpec) else parse_experiment(load_toml(config_file))
    problems = load_problems(spec.data, spec.config.task)
    return run_config(
        spec.config,
        problems,
        dataset=spec.data.dataset_name(spec.config.task),
        timing=spec.timing,
        backend_factory=backend_factory,
    )


# --------------------------------------------------------------------------
# Sweeps
# --------------------------------------------------------------------------


def resolve_group_strategy(strategy: Any, agents: int) -> tuple[int, ...]:
    """Group sizes for ``agents`` from an explicit list or a rule.

    Rules: ``"single"`` (one group), ``"groups:N"`` (N near-equal groups),
    ``"size:K"`` (groups of K, the last one smaller if needed).
    """
    if isinstance(strategy, (list, tuple)):
        return tuple(int(k) for k in strategy)
    if strategy == "single":
        return (agents,)
    if isinstance(strategy, str) and ":" in strategy:
        kind, _, num = strategy.partition(":")
        try:
            n = int(num)
        except ValueError:
            raise ConfigError(f"bad group strategy {strategy!r}") from None
        if kind == "groups":
            return even_split(agents, n)
        if kind == "size" and n >= 1:
            full, rest = divmod(agents, n)
            return (n,) * full + ((rest,) if rest else ())
    raise ConfigError(f"bad group strategy {strategy!r}")


@dataclass(frozen=True)
class SweepSpec:
    modes: tuple[str, ...]
    agents: tuple[int, ...]
    group_strategies: tuple[Any, ...] = ("single",)
    total_rounds: tuple[int, ...] = (3,)
    intra_rounds: tuple[int, ...] = (2,)
    seeds: tuple[int, ...] = (0,)
    repetitions: int = 1
    task: str = "arithmetic"
    template_set: str = "standard"
    reflection_trials: int = 3
    max_parallel: int = 1
    timing: bool | None = None
    data: DataSpec = DataSpec()
    backend: BackendConfig = BackendConfig()

    def configs(self) -> list[DebateConfig]:
        """Every cell, validated, de-duplicated, in documented order."""
        for name in ("modes", "agents", "group_strategies", "total_rounds", "intra_rounds", "seeds"):
            if not getattr(self, name):
                raise ConfigError(f"sweep.{name}: axis is empty")
        seen: set = set()
        out = []
        for mode in self.modes:
            mode = Mode(mode)
            for m in self.agents:
                for strategy in self.group_strategies:
                    for t in self.total_rounds:
                        for r in self.intra_rounds:
                            for seed in self.seeds:
                                if mode.grouped:
                                    sizes, intra = resolve_group_strategy(strategy, m), r
                                else:
                                    sizes, intra = (m,), 1
                                try:
                                    cfg = DebateConfig(
                                        mode=mode, agents=m, group_sizes=sizes, total_rounds=t,
                                        intra_rounds=intra, seed=seed, task=TaskKind(self.task),
                                        backend=self.backend, repetitions=self.repetitions,
                                        reflection_trials=self.reflection_trials,
                                        template_set=self.template_set,
                                    )
                                except ConfigError as exc:
                                    raise ConfigError(
                                        f"sweep cell mode={mode.value} M={m} groups={strategy} "
                                        f"T={t} R={r} seed={seed}: {exc}"
                                    ) from None
                                if cfg not in seen:
                                    seen.add(cfg)
                                    out.append(cfg)
        return out


def parse_sweep(doc: Mapping[str, Any]) -> SweepSpec:
    unknown = sorted(set(doc) - {"sweep", "data", "backend"})
    if unknown:
        raise ConfigError(f"{unknown[0]}: unknown section")
    table = dict(_section(doc, "sweep"))
    allowed = {f.name for f in dataclasses.fields(SweepSpec)} - {"data", "backend"}
    bad = sorted(set(table) - allowed)
    if bad:
        raise ConfigError(f"sweep.{bad[0]}: unknown field")
    for axis in ("modes", "agents", "group_strategies", "total_rounds", "intra_rounds", "seeds"):
        if axis in table:
            if not isinstance(table[axis], list):
                raise ConfigError(f"sweep.{axis}: expected a list")
            table[axis] = tuple(table[axis])
    for name in ("modes", "agents"):
        if name not in table:
            raise ConfigError(f"sweep.{name}: required field is missing")
    backend = _build(BackendConfig, _section(doc, "backend"), "backend")
    data = _build(DataSpec, _section(doc, "data"), "data")
    try:
        return SweepSpec(data=data, backend=backend, **table)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"sweep: {exc}") from None


def sweep_grid(
    spec: SweepSpec,
    *,
    backend_factory: BackendFactory = make_backend,
) -> ExperimentReport:
    """Run every cell; a failed cell is recorded and the sweep carries on."""
    configs = spec.configs()
    task = TaskKind(spec.task)
    problems = load_problems(spec.data, task)
    dataset = spec.data.dataset_name(task)

    def cell(cfg: DebateConfig) -> ExperimentReport:
        return run_config(
            cfg, problems, dataset=dataset, timing=spec.timing, backend_factory=backend_factory
        )

    if spec.max_parallel > 1:
        with ThreadPoolExecutor(max_workers=spec.max_parallel) as pool:
            parts = list(pool.map(cell, configs))
    else:
        parts = [cell(c) for c in configs]
    report = ExperimentReport()
    for part in parts:
        report.rows.extend(part.rows)
        report.failures.extend(part.failures)
    return report


# --------------------------------------------------------------------------
# Analytical cost table
# --------------------------------------------------------------------------


def _fraction_text(value) -> Any:
    return int(value) if value.denominator == 1 else round(float(value), 4)


def cost_report(
    agents: Sequence[int],
    rounds: Sequence[int],
    intra_rounds: Sequence[int] = (2,),
    group_strategies: Sequence[Any] = ("groups:2",),
    question_tokens: int = 100,
    output_tokens: int = 50,
    summary_tokens: int = 60,
) -> list[dict]:
    """MAD and GD totals, bounds and the best group count per grid point.

    No backend is involved. Points whose strategy needs more groups than
    there are agents are skipped.
    """
    for name, axis in (("agents", agents), ("rounds", rounds), ("intra_rounds", intra_rounds),
                       ("group_strategies", group_strategies)):
        if not axis:
            raise ConfigError(f"cost.{name}: axis is empty")
    rows = []
    for m in agents:
        for t in rounds:
            for r in intra_rounds:
                if r > t:
                    raise ConfigError(f"cost: intra_rounds {r} exceeds rounds {t}")
                for strategy in group_strategies:
                    try:
                        sizes = resolve_group_strategy(strategy, m)
                    except ConfigError:
                        if isinstance(strategy, str) and strategy.startswith("groups:"):
                            continue
                        raise
                    if sum(sizes) != m:
                        continue
                    p = CostParams(m, t, question_tokens, output_tokens, summary_tokens, sizes, r)
                    mad = mad_token_cost(p).total
                    gd = gd_token_cost(p).total
                    best, heuristic = optimal_group_count(m, t, p.stages, output_tokens, summary_tokens)
                    rows.append(
                        {
                            "M": m, "T": t, "R": r, "S": p.stages, "N": p.groups,
                            "group_sizes": "|".join(map(str, sizes)),
                            "Q": question_tokens, "o": output_tokens, "m": summary_tokens,
                            "mad_total": mad, "gd_total": gd,
                            "reduction_pct": round(100 * (mad - gd) / mad, 2) if mad else 0.0,
                            "mad_bound": mad_cost_bound(p),
                            "gd_bound": _fraction_text(gd_cost_bound(p)),
                            "best_N": best, "heuristic_N": heuristic,
                        }
                    )
    return rows


def parse_cost(doc: Mapping[str, Any]) -> dict:
    table = dict(_section(doc, "cost"))
    allowed = {"agents", "rounds", "intra_rounds", "group_strategies", "groups",
               "question_tokens", "output_tokens", "summary_tokens"}
    bad = sorted(set(table) - allowed)
    if bad:
        raise ConfigError(f"cost.{bad[0]}: unknown field")
    if "groups" in table:
        table.setdefault("group_strategies", [])
        table["group_strategies"] = list(table["group_strategies"]) + [f"groups:{n}" for n in table.pop("groups")]
    for name in ("agents", "rounds"):
        if name not in table:
            raise ConfigError(f"cost.{name}: required field is missing")
    return table


def cost_csv(rows: Sequence[Mapping[str, Any]]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=COST_COLUMNS, lineterminator="\n")
    writer.writeheader()
    writer.writerows(rows)
    return buf.getvalue()


# --------------------------------------------------------------------------
# CLI
# --------------------------------------------------------------------------


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="groupdebate", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one experiment config")
    run.add_argument("--config", required=True)
    run.add_argument("--out", required=True)
    run.add_argument("--format", choices=("csv", "json"), default="csv")

    sweep = sub.add_parser("sweep", help="run a cartesian grid of configs")
    sweep.add_argument("--spec", required=True)
    sweep.add_argument("--out", required=True)
    sweep.add_argument("--format", choices=("csv", "json"), default="csv")

    cost = sub.add_parser("cost", help="analytical token cost table (no backend calls)")
    cost.add_argument("--params", required=True)
    cost.add_argument("--out", required=True)

    gen = sub.add_parser("gen-arith", help="write generated arithmetic problems as JSON lines")
    gen.add_argument("--seed", type=int, required=True)
    gen.add_argument("--count", type=int, required=True)
    gen.add_argument("--out", required=True)
    return parser


def _summarize(report: ExperimentReport) -> None:
    for agg in report.aggregates():
        print(
            f"{agg['dataset']} {agg['mode']} M={agg['M']} N={agg['N']} T={agg['T']} R={agg['R']}: "
            f"acc {agg['accuracy_mean']:.3f} +/- {agg['accuracy_std']:.3f}, "
            f"tokens {agg['total_tokens_mean']:.1f}, calls {agg['api_calls_mean']:.0f}"
        )
    for failure in report.failures:
        print(f"FAILED: {failure}", file=sys.stderr)


def main(argv: Sequence[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    try:
        if args.command == "run":
            report = run_experiment(args.config)
            path = report.write(args.out, args.format)
        elif args.command == "sweep":
            report = sweep_grid(parse_sweep(load_toml(args.spec)))
            path = report.write(args.out, args.format)
        elif args.command == "cost":
            rows = cost_report(**parse_cost(load_toml(args.params)))
            Path(args.out).write_text(cost_csv(rows), encoding="utf-8")
            print(f"wrote {len(rows)} rows to {args.out}")
            return 0
        else:
            write_dataset(gen_arithmetic(args.seed, args.count), args.out)
            print(f"wrote {args.count} problems to {args.out}")
            return 0
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (LoadError, OSError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return 2
    _summarize(report)
    print(f"wrote {len(report.rows)} rows to {path}")
    return 1 if report.partial else 0


if __name__ == "__main__":
    raise SystemExit(main())
