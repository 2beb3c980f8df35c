import numpy as np
import pytest

from actionseg.data import GeneratorConfig, generate_synthetic


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


TINY_GEN = GeneratorConfig(
    num_sequences=4, t_motion=24, t_visual=2, num_objects=2, num_classes=3,
    visual_width=6, min_segment_frames=8, transition_frames=4)


@pytest.fixture(scope="session")
def tiny_dataset():
    return generate_synthetic(TINY_GEN, seed=11)
