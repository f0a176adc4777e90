"""Cost-aware multi-agent debate: GroupDebate, MAD baselines and their token cost."""

from .backends import (
    BackendError,
    CallMeta,
    FixedLength,
    Generation,
    HttpChatBackend,
    Message,
    MockBackend,
    Scripted,
    SeededStochastic,
    count_tokens,
    make_backend,
    mock_generate,
)
from .core import (
    BackendConfig,
    CanonicalAnswer,
    ConfigError,
    DebateConfig,
    Mode,
    Phase,
    TaskKind,
    build_schedule,
    extract_answer,
    majority_vote,
    partition_agents,
)
from .cost_model import (
    CostParams,
    gd_cost_bound,
    gd_token_cost,
    mad_cost_bound,
    mad_token_cost,
    optimal_group_count,
)
from .orchestrator import DebateAborted, DebateResult, TokenLedger, run_debate, run_mad
from .taskgen import Problem, gen_arithmetic, load_dataset, load_templates, score_run

__all__ = [
    "BackendConfig",
    "BackendError",
    "build_schedule",
    "CallMeta",
    "CanonicalAnswer",
    "ConfigError",
    "CostParams",
    "count_tokens",
    "DebateAborted",
    "DebateConfig",
    "DebateResult",
    "extract_answer",
    "FixedLength",
    "gd_cost_bound",
    "gd_token_cost",
    "gen_arithmetic",
    "Generation",
    "HttpChatBackend",
    "load_dataset",
    "load_templates",
    "mad_cost_bound",
    "mad_token_cost",
    "majority_vote",
    "make_backend",
    "Message",
    "mock_generate",
    "MockBackend",
    "Mode",
    "optimal_group_count",
    "partition_agents",
    "Phase",
    "Problem",
    "run_debate",
    "run_mad",
    "score_run",
    "Scripted",
    "SeededStochastic",
    "TaskKind",
    "TokenLedger",
]

__version__ = "0.1.0"
