import numpy as np
import pytest

from depthfuse.skeleton import builtin_coco13
from depthfuse.synth import SceneConfig, matched_offsets, synthesize_frame


@pytest.fixture(scope="session")
def coco():
    return builtin_coco13()


@pytest.fixture(scope="session")
def oracle_skel():
    """coco13 with offsets equal to the synthetic capsule radii."""
    return matched_offsets(builtin_coco13())


@pytest.fixture(scope="session")
def clean_frames(oracle_skel):
    cfg = SceneConfig(camera_count=5, person_count=3, seed=1)
    return [synthesize_frame(cfg, i, oracle_skel) for i in range(3)]


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def verdict():
    """Record one acceptance line, then assert it."""
    def record(number, name, ok, detail):
        line = f"[{number:>2}] {'PASS' if ok else 'FAIL'} {name}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        assert ok, line
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
