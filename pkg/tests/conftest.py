from __future__ import annotations

import numpy as np
import pytest

from sp3.synth import SynthSpec, generate


@pytest.fixture(scope="session")
def small_rings(tmp_path_factory):
    """A small nested-rings dataset on disk (manifest path)."""
    out = tmp_path_factory.mktemp("rings")
    generate(SynthSpec(size=48, family="rings", noise=0.08, samples=24, seed=3), out)
    return out / "manifest.json"


@pytest.fixture(scope="session")
def small_blob(tmp_path_factory):
    out = tmp_path_factory.mktemp("blob")
    generate(SynthSpec(size=48, family="blob", noise=0.1, samples=24, seed=5), out)
    return out / "manifest.json"


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
