import re
import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from taskforge.orchestrator import LoopConfig, run_evolution
from taskforge.seeds import build_test_library

DESK_MASTER_SEED = 20260826


def pytest_terminal_summary(terminalreporter):
    """One verdict line per acceptance criterion at the end of the run."""
    verdicts = {}
    for status in ("passed", "failed", "error"):
        for rep in terminalreporter.stats.get(status, []):
            if getattr(rep, "when", None) != "call":
                continue
            m = re.search(r"test_acceptance\.py::test_criterion_(\d+)(\w*)",
                          rep.nodeid)
            if m:
                verdicts[int(m.group(1))] = (status.upper(), m.group(2),
                                             rep.duration)
    if not verdicts:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(verdicts):
        status, label, duration = verdicts[num]
        label = label.strip("_").replace("_", " ")
        terminalreporter.write_line(
            f"criterion {num} ({label}): {status} [{duration:.2f}s]")


@pytest.fixture(scope="session")
def library_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("library")
    build_test_library(d)
    return d


def _desk_config(library_dir, run_dir, compose: bool) -> LoopConfig:
    return LoopConfig(
        iterations=3,
        steps_per_iteration=4,
        batch_size=8,
        solver_samples=6,
        master_seed=DESK_MASTER_SEED,
        image_library=str(library_dir),
        run_dir=str(run_dir),
        challenger={"type": "scripted", "compose": compose},
        solver={"type": "noisy-oracle", "p": 0.3, "increment": 0.2},
    )


@pytest.fixture(scope="session")
def desk_run(tmp_path_factory, library_dir):
    """Shared desk-scale run with composition enabled."""
    run_dir = tmp_path_factory.mktemp("desk-run")
    import time
    start = time.monotonic()
    report = run_evolution(_desk_config(library_dir, run_dir, compose=True))
    return {"run_dir": run_dir, "report": report,
            "seconds": time.monotonic() - start}


@pytest.fixture(scope="session")
def desk_run_rerun(tmp_path_factory, library_dir):
    """Same config and seed as desk_run, fresh directory."""
    run_dir = tmp_path_factory.mktemp("desk-rerun")
    report = run_evolution(_desk_config(library_dir, run_dir, compose=True))
    return {"run_dir": run_dir, "report": report}


@pytest.fixture(scope="session")
def desk_run_no_compose(tmp_path_factory, library_dir):
    run_dir = tmp_path_factory.mktemp("desk-nocompose")
    report = run_evolution(_desk_config(library_dir, run_dir, compose=False))
    return {"run_dir": run_dir, "report": report}
