import pytest

from popalloc.scenario import baseline_setting

ACCEPTANCE: dict = {}


@pytest.fixture(scope="session")
def setting():
    return baseline_setting()


@pytest.fixture(scope="session")
def targets(setting):
    return setting.targets()


@pytest.fixture(scope="session")
def full_study():
    """The bundled baseline study with fitted nuisances: 6 designs x 5000 replicates."""
    from popalloc.config import load_config
    from popalloc.simulate import run_study

    return run_study(load_config().study())


@pytest.fixture(scope="session")
def acceptance_log():
    return ACCEPTANCE


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE):
        status, detail = ACCEPTANCE[key]
        terminalreporter.write_line(f"{status:4} criterion {key}: {detail}")
