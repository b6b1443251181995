import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from kgpose.data import GeneratorConfig, generate_dataset
from kgpose.gradcheck import tiny_network_config
from kgpose.network import FractalNet
from kgpose.projection import HeadConfig, ProjectionHead

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def tiny_config():
    return tiny_network_config()


@pytest.fixture
def tiny_net64(tiny_config):
    return FractalNet(tiny_config, seed=0, dtype=np.float64)


@pytest.fixture
def tiny_head64(tiny_config):
    return ProjectionHead(HeadConfig.for_network(tiny_config), seed=1, dtype=np.float64)


@pytest.fixture(scope="session")
def tiny_samples():
    return generate_dataset(2, 3, GeneratorConfig(image_size=16))


@pytest.fixture(scope="session")
def samples64():
    return generate_dataset(6, 0)


_ACCEPTANCE = {}


@pytest.fixture
def acceptance():
    """Recorder ``(criterion, ok, detail)``; prints the verdict line and keeps it for the summary."""
    def record(n, ok, detail):
        line = f"ACCEPTANCE {n:>2} {'PASS' if ok else 'FAIL'}: {detail}"
        _ACCEPTANCE[n] = line
        print(line, flush=True)
    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(_ACCEPTANCE):
            terminalreporter.write_line(_ACCEPTANCE[n])
