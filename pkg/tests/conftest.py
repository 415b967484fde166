import pytest

from shearlab.config import parse_config
from shearlab.experiments import run_experiment, shipped_config_text

CRITERIA: dict = {}


def record(number: int, passed: bool, detail: str) -> bool:
    CRITERIA[number] = (bool(passed), detail)
    return bool(passed)


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(CRITERIA):
        passed, detail = CRITERIA[number]
        terminalreporter.write_line(f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}")


class _Runs:
    """Runs each shipped config at most once per worker count."""

    def __init__(self, root):
        self.root = root
        self.cache = {}

    def __call__(self, name: str, workers: int = 1):
        key = (name, workers)
        if key not in self.cache:
            cfg = parse_config(shipped_config_text(name))
            self.cache[key] = run_experiment(cfg, workers, self.root / f"{name}-w{workers}")
        return self.cache[key]


@pytest.fixture(scope="session")
def shipped_run(tmp_path_factory):
    return _Runs(tmp_path_factory.mktemp("acceptance"))
