import pytest

from asyncloc.cli import bundled_scenario_path, load_scenario


@pytest.fixture(scope="session")
def nominal_scenario():
    return load_scenario(bundled_scenario_path("nominal"))


@pytest.fixture(scope="session")
def multi_aux_scenario():
    return load_scenario(bundled_scenario_path("multi_aux"))
