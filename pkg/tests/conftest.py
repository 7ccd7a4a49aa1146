"""Shared fixtures: a reduced-scale but fully real pipeline for unit tests.

The full-scale pipeline (spec defaults, 3029 rows) lives in
test_acceptance.py; everything else uses these cheaper artifacts.
"""

from __future__ import annotations

import numpy as np
import pytest

from cfeedback.engines import CounterganConfig, countergan_train
from cfeedback.numerics import Rand
from cfeedback.predictors import (
    TrainConfig,
    compute_prototypes,
    predict,
    train_autoencoder,
    train_classifier,
)
from cfeedback.profiles import GeneratorConfig, generate_dataset, split


@pytest.fixture(scope="session")
def small_data():
    dataset = generate_dataset(GeneratorConfig(n_samples=700, seed=11), Rand(11))
    train, test = split(dataset, 0.8, Rand(123))
    return dataset, train, test


@pytest.fixture(scope="session")
def small_classifier(small_data):
    _, train, test = small_data
    model, report = train_classifier(train, test, TrainConfig(epochs=80, seed=7))
    return model, report


@pytest.fixture(scope="session")
def small_ae(small_data):
    _, train, _ = small_data
    return train_autoencoder(train, noise_std=0.1, config=TrainConfig(epochs=80, seed=3))


@pytest.fixture(scope="session")
def small_protos(small_data, small_ae):
    _, train, _ = small_data
    return compute_prototypes(small_ae, train, target_class=1, k=5)


@pytest.fixture(scope="session")
def small_gan(small_data, small_classifier):
    _, train, _ = small_data
    model, _ = small_classifier
    config = CounterganConfig(seed=5, steps=500)
    return countergan_train(model, train, train.schema, config, Rand(5))


@pytest.fixture(scope="session")
def rejected_rows(small_data, small_classifier):
    """Indices of test rows the classifier rejects."""
    _, _, test = small_data
    model, _ = small_classifier
    scores = predict(model, test.X)
    idx = np.where(scores < 0.5)[0]
    assert idx.size > 0
    return idx
