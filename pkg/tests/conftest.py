import pytest

from gpuorch.dataset import generate_synthetic

ACCEPTANCE = {}


@pytest.fixture(scope="session")
def synth():
    """3 accelerator speed classes, 4 families x 4 batch sizes, interference 0.3."""
    return generate_synthetic(3, 4, 4, 0.3, 7)


@pytest.fixture
def record_criterion():
    def record(number: int, title: str, passed: bool, detail: str = ""):
        ACCEPTANCE[number] = (title, passed, detail)
    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        title, ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {n}. {title}"
                                    + (f" ({detail})" if detail else ""))
