import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from pumpad.config import default_config_text  # noqa: E402
from pumpad.synth import generate_benchmark_suite, write_suite  # noqa: E402

_ACCEPTANCE: list[tuple[str, bool, str]] = []


@pytest.fixture(scope="session")
def suite():
    return generate_benchmark_suite(7)


@pytest.fixture(scope="session")
def suite_dir(suite, tmp_path_factory):
    out = tmp_path_factory.mktemp("suite")
    write_suite(suite, out)
    (out / "eval.yaml").write_text(default_config_text(7))
    return out


@pytest.fixture
def criterion():
    """Record an acceptance line; the terminal summary prints them all."""

    def record(name: str, ok: bool, detail: str = "") -> bool:
        _ACCEPTANCE.append((name, bool(ok), detail))
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in _ACCEPTANCE:
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}  {detail}")
