import pytest

from fedhisyn.config import ExperimentConfig


@pytest.fixture
def small_config():
    """A fast synthetic setup; override fields per test."""
    def make(**overrides):
        base = dict(
            dataset="synthetic", synth_samples=400, synth_test_samples=200, synth_dim=5,
            synth_classes=3, synth_separation=4.0, num_devices=10, K=2, H=4.0, rounds=3,
            lr=0.5, batch_size=20, local_epochs=1, partition="dirichlet", beta=0.5, seed=0,
        )
        base.update(overrides)
        return ExperimentConfig(**base)
    return make
