import os
import sys

import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, os.path.dirname(__file__))

settings.register_profile(
    "default",
    max_examples=100,
    deadline=None,
    derandomize=True,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.data_too_large],
)
settings.load_profile("default")

from aptgraph.features import FeatureStage  # noqa: E402
from aptgraph.ml import Dataset, ModelKind, train_pipeline  # noqa: E402
from aptgraph.model import ScanType  # noqa: E402
from aptgraph.scenario import discovery_windows, fieldbus_windows  # noqa: E402

# Lines printed by the acceptance suite, repeated in the terminal summary.
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def stage_models():
    """Random forests for the two window classifiers, trained on generated data."""
    disc = Dataset.from_vectors(discovery_windows(ScanType.NORMAL, 400, 400, seed=1), FeatureStage.DISCOVERY)
    fb = Dataset.from_vectors(fieldbus_windows(None, None, 400, 400, seed=1), FeatureStage.FIELDBUS)
    dm, _ = train_pipeline(disc, ModelKind.RANDOM_FOREST, seed=0, k=5, stage=FeatureStage.DISCOVERY.value)
    fm, _ = train_pipeline(fb, ModelKind.RANDOM_FOREST, seed=0, k=5, stage=FeatureStage.FIELDBUS.value)
    return dm, fm


@pytest.fixture(scope="session")
def campaigns():
    """Campaign bundles 1-3 at seed 42, keyed by id."""
    from aptgraph.scenario import gen_campaign

    return {c: gen_campaign(c, seed=42) for c in (1, 2, 3)}
