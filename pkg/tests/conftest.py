import pytest

from mgopt.netmodel import load_benchmark_case
from mgopt.optimizer import GaConfig, OptimizerConfig, run_suite


@pytest.fixture(scope="session")
def benchmark_case():
    return load_benchmark_case()


@pytest.fixture()
def fast_config():
    """Small GA budget for functional tests; SQP settings stay default."""
    return OptimizerConfig(ga=GaConfig(population=16, generations=12), seed=7)


@pytest.fixture(scope="session")
def suite(benchmark_case):
    """Full scenario suite at default settings, shared by the acceptance tests."""
    return run_suite(benchmark_case)
