"""
Pytest configuration for the classifier toolkit tests
"""

import pytest
import sys
import os

import numpy as np

# Add the project root to Python path
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from circuit_model import CircuitTemplate  # noqa: E402
from data_pipeline import prepare, synth_dataset  # noqa: E402


@pytest.fixture
def small_template():
    """3 qubits, 4 features, 6 parameters, 2 entanglers, last qubit measured"""
    return CircuitTemplate(
        n_qubits=3,
        embedding_slots=((0, "RX"), (1, "RY"), (2, "RZ"), (0, "RY")),
        variational_slots=((0, "RY"), (1, "RX"), (2, "RY"), (0, "RZ"), (1, "RY"), (2, "RX")),
        entanglers=((2, 0, 1), (5, 1, 2)),
        measured_qubits=(2,),
    )


@pytest.fixture(scope="session")
def two_blob_prepared():
    """two-blob fixture, 28x28 pooled to 7x7; 40 train and 10 test samples per class"""
    return prepare(synth_dataset("two-blob", 40, 28, seed=7, test_per_class=10), 7)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
