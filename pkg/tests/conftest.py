"""Shared fixtures: small hand-checkable datasets."""

import numpy as np
import pytest

from src.data_model import Dataset


@pytest.fixture
def nelson_aalen():
    """r=1, x=1 for everyone, three observed deaths at 1, 2, 3."""
    return Dataset.from_arrays([1, 2, 3], [1, 1, 1], [[1], [1], [1]])


@pytest.fixture
def orthogonal():
    """Two individuals with orthogonal covariates; G_n singular after t=1."""
    return Dataset.from_arrays([1, 2], [1, 1], [[1, 0], [0, 1]])


@pytest.fixture
def two_records():
    """x=(1,1),(1,3), both events; G_n(u) = [[1,2],[2,5]] for u <= 1."""
    return Dataset.from_arrays([1, 2], [1, 1], [[1, 1], [1, 3]])


@pytest.fixture
def four_records():
    """Small r=2 dataset with one censored record, invertible through t=3."""
    return Dataset.from_arrays(
        [1, 2, 3, 4],
        [1, 1, 1, 0],
        [[1, 1], [1, 3], [1, 2], [1, 1]],
    )


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
