from __future__ import annotations

import numpy as np
import pytest

from quakerank.dataset import load_manifest
from quakerank.synthgen import SynthConfig, gen_dataset

# filled by test_acceptance; printed at the end of the session
ACCEPTANCE_LINES: list[str] = []

SMALL = SynthConfig(tile_size=16, n_train=48, n_val=16, n_test=16, seed=3)


@pytest.fixture(scope="session")
def small_dataset(tmp_path_factory):
    out = tmp_path_factory.mktemp("small")
    gen_dataset(SMALL, out)
    return out


@pytest.fixture(scope="session")
def small_manifest(small_dataset):
    return load_manifest(small_dataset / "manifest.jsonl")


@pytest.fixture(scope="session")
def default_dataset(tmp_path_factory):
    out = tmp_path_factory.mktemp("default")
    gen_dataset(SynthConfig(), out)
    return out


@pytest.fixture(scope="session")
def default_manifest(default_dataset):
    return load_manifest(default_dataset / "manifest.jsonl")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
