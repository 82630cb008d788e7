import sys
from pathlib import Path

import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("ddt", deadline=None, max_examples=60, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("ddt")

HERE = Path(__file__).parent
FAKE_TEACHER = HERE / "helpers" / "fake_teacher.py"


def fake_teacher_command(mode):
    return [sys.executable, str(FAKE_TEACHER), mode]


@pytest.fixture
def fake_teacher():
    return fake_teacher_command


@pytest.fixture(scope="session")
def sim2d_run():
    """The bundled 2D experiment: (run config, teacher, observed rows, distilled tree)."""
    from ddtree.induction import induce_ddt
    from ddtree.io import build_run, load_run_config
    from ddtree.simulation import sim2d_config_path

    run = load_run_config(sim2d_config_path())
    teacher, schema, observed = build_run(run)
    tree = induce_ddt(teacher, schema, observed, run.induction, workers=1)
    return run, teacher, observed, tree


# --- acceptance bookkeeping -------------------------------------------------

ACCEPTANCE = {}
INDEX_TOTALS = []


@pytest.fixture(scope="session", autouse=True)
def record_index_totals():
    """Remember XI+PXI of every explanation summary the induction computes."""
    import ddtree.induction as induction

    real = induction.compute_indices

    def recording(*args, **kwargs):
        summary = real(*args, **kwargs)
        INDEX_TOTALS.append(summary.total())
        return summary

    induction.compute_indices = recording
    yield
    induction.compute_indices = real


class _Criterion:
    def __init__(self, code, title):
        self.code, self.title, self.detail = code, title, ""

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        ok = exc_type is None
        detail = self.detail if ok or not str(exc) else f"{self.detail} | {str(exc).splitlines()[0]}".strip(" |")
        line = f"{self.code} {'PASS' if ok else 'FAIL'}  {self.title}: {detail}"
        ACCEPTANCE[self.code] = line
        print(line)
        return False


@pytest.fixture
def criterion():
    return _Criterion


def pytest_collection_modifyitems(items):
    # acceptance last, so A5 sees every tree the other tests build
    items.sort(key=lambda it: it.nodeid.startswith("tests/test_acceptance.py") or "test_acceptance.py" in it.nodeid)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for code in sorted(ACCEPTANCE, key=lambda c: int(c[1:])):
            terminalreporter.write_line(ACCEPTANCE[code])
