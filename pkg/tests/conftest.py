import pytest

from cintl1.scenario import Scenario, derive_scales


@pytest.fixture(scope="session")
def scenario():
    return Scenario()


@pytest.fixture(scope="session")
def scales(scenario):
    return derive_scales(scenario)


# acceptance criteria register one line each; printed at the end of the run
ACCEPTANCE: dict[int, list[tuple[bool, str]]] = {}


def record(criterion: int, passed: bool, detail: str) -> None:
    ACCEPTANCE.setdefault(criterion, []).append((bool(passed), detail))
    print(f"criterion {criterion}: {'PASS' if passed else 'FAIL'} {detail}")


@pytest.fixture
def acceptance():
    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for c in sorted(ACCEPTANCE):
        items = ACCEPTANCE[c]
        ok = all(p for p, _ in items)
        detail = "; ".join(d for _, d in items)
        terminalreporter.write_line(f"criterion {c}: {'PASS' if ok else 'FAIL'} | {detail}")
