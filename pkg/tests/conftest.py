import numpy as np
import pytest

from pipetune.space import ConfigSpace
from pipetune.simulator import SimSpec, Simulation


@pytest.fixture(scope="session")
def small_space() -> ConfigSpace:
    return ConfigSpace.from_levels(
        [
            ("model", ("a", "b", "c", "d")),
            ("sft_lr", (1e-5, 2e-5, 5e-5)),
            ("rl_lr", (1e-6, 2e-6, 5e-6, 1e-5)),
            ("epochs", (1, 2, 3)),
            ("beta", (0.0, 0.05, 0.1)),
        ]
    )


@pytest.fixture(scope="session")
def tiny_space() -> ConfigSpace:
    return ConfigSpace.from_levels(
        [
            ("model", ("a", "b")),
            ("lr", (1e-5, 2e-5, 5e-5)),
            ("epochs", (1, 2, 3)),
        ]
    )


@pytest.fixture(scope="session")
def tiny_sim(tiny_space) -> Simulation:
    spec = SimSpec(
        space=tiny_space,
        n_datasets=4,
        descriptor_dim=4,
        runs_per_dataset=12,
        seed=5,
    )
    return Simulation(spec)


@pytest.fixture(scope="session")
def small_sim(small_space) -> Simulation:
    spec = SimSpec(
        space=small_space,
        n_datasets=6,
        descriptor_dim=6,
        runs_per_dataset=36,
        seed=9,
    )
    return Simulation(spec)


@pytest.fixture()
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)
