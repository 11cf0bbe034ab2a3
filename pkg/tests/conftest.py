"""Shared fixtures: the n-gram families are expensive enough to train once."""

import pytest

from trispec.harness import ExperimentConfig, build_family


@pytest.fixture(scope="session")
def ref_family():
    """Drafter/proxy/target n-grams trained on the bundled corpus.

    Session-scoped; tests must fork() before decoding so invocation
    counters stay isolated.
    """
    return build_family(ExperimentConfig())


@pytest.fixture(scope="session")
def perturbed_family():
    """Target plus a 0.3-unigram-mixture proxy over the bundled corpus."""
    return build_family(ExperimentConfig(family="perturbed", epsilon=0.3, noise="unigram"))
