import os
from pathlib import Path

import pytest

from portajob.batch import BatchExecutor, MockDialect
from portajob.executor import ExecutorConfig, reset_default_registry
from portajob.local import LocalExecutor
from portajob.mock import Spool

TESTS = Path(__file__).parent


@pytest.fixture(autouse=True)
def isolated_env(tmp_path, monkeypatch):
    """Keep plugin search, mock spool and work directory away from the real user."""
    monkeypatch.delenv("PORTAJOB_PLUGIN_PATH", raising=False)
    monkeypatch.delenv("PORTAJOB_MOCK_SPOOL", raising=False)
    monkeypatch.delenv("PORTAJOB_EXECUTOR", raising=False)
    monkeypatch.setenv("XDG_CONFIG_HOME", str(tmp_path / "xdg"))
    monkeypatch.setenv("TMPDIR", str(tmp_path / "tmp"))
    (tmp_path / "tmp").mkdir()
    reset_default_registry()
    yield
    reset_default_registry()


@pytest.fixture
def work(tmp_path):
    d = tmp_path / "work"
    d.mkdir()
    return d


@pytest.fixture
def local(work):
    ex = LocalExecutor(ExecutorConfig(work_directory=work))
    yield ex
    ex.close()


@pytest.fixture
def spool(tmp_path):
    return Spool(tmp_path / "spool")


@pytest.fixture
def mock_ex(work, spool):
    made = []

    def make(**config):
        config.setdefault("work_directory", work)
        config.setdefault("mock_spool", spool.path)
        ex = BatchExecutor(MockDialect(spool.path), ExecutorConfig(**config))
        made.append(ex)
        return ex

    yield make
    for ex in made:
        ex.close()
    _kill_spool_jobs(spool)


def _kill_spool_jobs(spool):
    import json
    import signal

    try:
        db = json.loads((spool.path / "jobs.json").read_text())
    except FileNotFoundError:
        return
    for rec in db["jobs"].values():
        if rec["state"] == "R" and rec.get("pid"):
            try:
                os.killpg(rec["pid"], signal.SIGKILL)
            except (ProcessLookupError, PermissionError):
                pass



def pytest_terminal_summary(terminalreporter):
    module = __import__("sys").modules.get("test_acceptance")
    results = getattr(module, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for number in sorted(results):
            terminalreporter.write_line(results[number])
