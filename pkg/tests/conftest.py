import numpy as np
import pytest

from ctrstack.synthetic import SyntheticSpec, generate_synthetic_logs

SMALL = dict(n_listings=1500, impressions_per_day=5000, power_law_exponent=1.5, n_queries=40,
             vocab_size=800, days=12)


@pytest.fixture(scope="session")
def small_spec():
    return SyntheticSpec(**SMALL, seed=11)


@pytest.fixture(scope="session")
def small_log(small_spec):
    return generate_synthetic_logs(small_spec)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_training(small_log):
    from ctrstack.pipeline import WindowConfig, default_anchor, prepare_training
    return prepare_training(small_log, WindowConfig(default_anchor(small_log)))


@pytest.fixture(scope="session")
def small_ensemble(small_training):
    from ctrstack.ensemble import PartitionConfig
    from ctrstack.variants import VariantSpec, train_variant
    from ctrstack.features import ContentConfig, HashConfig
    spec = VariantSpec("ensemble", "ensemble", content=ContentConfig(hash=HashConfig(dimension_bits=14)))
    return train_variant(spec, small_training[0], PartitionConfig())


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
