import pytest

from groupdebate.backends import FixedLength, MockBackend
from groupdebate.core import DebateConfig, Mode
from groupdebate.taskgen import synthetic_problems


def fixed_backend(o=5, m=6):
    return MockBackend(FixedLength(o, m))


def calibration_problem(q=10, task="arithmetic"):
    return synthetic_problems(task, 1, q)[0]


def bare_config(mode, agents, sizes=(), rounds=3, intra=2, **kw):
    return DebateConfig(
        mode=Mode(mode), agents=agents, group_sizes=tuple(sizes), total_rounds=rounds,
        intra_rounds=intra, template_set="bare", **kw,
    )


@pytest.fixture
def problem10():
    return calibration_problem(10)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for number in sorted(RESULTS):
            terminalreporter.write_line(RESULTS[number])
