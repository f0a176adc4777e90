"""
Pointing the debate at a real model
===================================

Builds an HTTP backend for any OpenAI-style chat-completion endpoint and
runs a two-agent debate on one problem. Set the endpoint and model below
and export the key first::

    export OPENAI_API_KEY=...
    python demos/live_endpoint.py

Without a key the script explains what is missing and exits.
"""

import os
import sys

from groupdebate import BackendConfig, DebateConfig, Mode, run_debate
from groupdebate.backends import BackendError, HttpChatBackend
from groupdebate.taskgen import gen_arithmetic

backend_config = BackendConfig(
    kind="http",
    endpoint=os.environ.get("GD_ENDPOINT", "https://api.openai.com/v1/chat/completions"),
    model=os.environ.get("GD_MODEL", "gpt-3.5-turbo"),
    temperature=1.0,
    max_tokens=400,
    max_inflight=2,
)

try:
    backend = HttpChatBackend(backend_config)
except BackendError as exc:
    sys.exit(f"cannot start: {exc}")

problem = gen_arithmetic(seed=7, count=1)[0]
config = DebateConfig(mode=Mode.GD, agents=4, group_sizes=(2, 2), total_rounds=3,
                      intra_rounds=2, backend=backend_config)
result = run_debate(config, problem, backend)

print("question:", problem.question, "truth:", problem.truth.value)
print("final:", result.final.value, "per agent:", [a.value for a in result.per_agent_final])
print("calls:", result.api_calls, "tokens:", result.ledger.total_tokens,
      "(estimated)" if result.ledger.estimated else "")
