from __future__ import annotations

import numpy as np
import pytest

from gconvdbd.dataset import NormalizationStats, SUBSETS
from gconvdbd.graph import build_graph
from gconvdbd.nn import Checkpoint, ModelConfig, train
from gconvdbd.synthetic import synthetic_recording, write_csv

from helpers import separable_windows


@pytest.fixture(scope="session")
def recording():
    return synthetic_recording(1200, seed=3)


@pytest.fixture(scope="session")
def recording_csv(tmp_path_factory, recording):
    path = tmp_path_factory.mktemp("data") / "drive.csv"
    write_csv(recording, path)
    return path


@pytest.fixture(scope="session")
def small_checkpoint(recording):
    """A quickly trained subset-A model for streaming tests."""
    sub = recording.select(SUBSETS["A"].channels)
    stats = NormalizationStats(sub.channels, sub.values.min(0), sub.values.max(0))
    graph = build_graph(sub.values, sub.channels)
    cfg = ModelConfig(hidden_sizes=(4, 3), epochs=1, seed=1)
    windows = separable_windows(40, n=4, seed=2)
    result = train(None, graph, windows, cfg)
    return Checkpoint(result.model, graph, stats, "A")


def pytest_terminal_summary(terminalreporter):
    from helpers import ACCEPTANCE_LINES

    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
