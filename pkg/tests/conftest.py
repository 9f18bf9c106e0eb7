import pytest

from moeplan.profiles import MIXTRAL_SEC41, MIXTRAL_TABLE1, HardwareProfile, ModelProfile

GB = 10**9
MB = 10**6


@pytest.fixture
def sec41():
    return MIXTRAL_SEC41


@pytest.fixture
def table1():
    return MIXTRAL_TABLE1


@pytest.fixture
def hw():
    return HardwareProfile()


@pytest.fixture
def toy4():
    """One layer of four experts: 100 B non-expert, 40 B / 10 B experts."""
    return ModelProfile(num_layers=1, experts_per_layer=4, top_k=1,
                        size_nonexpert_bytes=100, size_expert16_bytes=40)


_ACCEPTANCE: list[tuple[str, str]] = []


def pytest_runtest_logreport(report):
    if report.when == "call" and "test_acceptance.py" in report.nodeid:
        doc = report.nodeid.split("::")[-1]
        _ACCEPTANCE.append((doc, "PASS" if report.passed else "FAIL"))


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, verdict in _ACCEPTANCE:
        terminalreporter.write_line(f"{verdict}  {name}")
