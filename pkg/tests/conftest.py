import statistics

import numpy as np
import pytest
from hypothesis import settings

from restoroute.media import VideoClip
from restoroute.scenes import synthetic_scene

settings.register_profile("default", deadline=None, max_examples=50)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_scene():
    """Fast 64x48, 8-frame scene for unit tests."""
    return synthetic_scene(64, 48, 8, 30.0, seed=3, clip_id="small")


@pytest.fixture(scope="session")
def desk_scene():
    """Full desk-size scene used where detector statistics matter."""
    return synthetic_scene(320, 180, 16, 30.0, seed=11, clip_id="desk")


def constant_clip(value=0.5, frames=4, height=16, width=16, fps=30.0):
    return VideoClip(np.full((frames, height, width, 3), value), fps, "const")


# hand-built 3 subjects x 4 videos
HAND = [
    [1, 2, 4, 5],
    [2, 2, 3, 5],
    [3, 1, 4, 4],
]


def mos_oracle(rows):
    """Spreadsheet-style recomputation with the statistics module."""
    per_video = [[] for _ in rows[0]]
    for row in rows:
        mu, sd = statistics.mean(row), statistics.stdev(row)
        for j, r in enumerate(row):
            per_video[j].append(100 * ((r - mu) / sd + 3) / 6)
    return [min(100.0, max(0.0, sum(v) / len(v))) for v in per_video]


# acceptance criterion number -> (passed, one-line detail); filled by test_acceptance
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        passed, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}")
