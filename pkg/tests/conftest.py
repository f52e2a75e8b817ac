import pytest
import os
from dotenv import load_dotenv

from protocol import ProtocolConfig


def pytest_addoption(parser):
    parser.addoption(
        "--runslow", action="store_true", default=False, help="run high-statistics acceptance tests"
    )


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture(scope="session", autouse=True)
def load_env():
    """Loads environment variables from .env file before tests run."""
    dotenv_path = os.path.join(os.path.dirname(__file__), "../.env")
    if os.path.exists(dotenv_path):
        load_dotenv(dotenv_path=dotenv_path, override=True)
        print("Loaded environment variables from .env")
    else:
        print(".env file not found, skipping loading.")


@pytest.fixture
def default_config():
    return ProtocolConfig()


@pytest.fixture
def bright_config():
    """High pair rate, no noise: correlations show up in a few thousand trials."""
    return ProtocolConfig(
        p_s=0.05,
        eta_r_total=0.5,
        beta=0.0,
        p_n_per_bin=0.0,
    )


@pytest.fixture
def noise_config():
    """Uncorrelated stream: Stokes photons and readout noise, no retrieval."""
    return ProtocolConfig(
        p_s=0.05,
        eta_r_total=0.0,
        beta=0.0,
        p_n_per_bin=0.01,
    )
