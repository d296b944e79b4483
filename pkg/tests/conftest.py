import numpy as np
import pytest
from hypothesis import settings

from stainbench.core import Xoshiro256
from stainbench.synthetic import colorize, structure_map

settings.register_profile("ci", deadline=None)
settings.register_profile("fast", max_examples=20, deadline=None)
settings.load_profile("ci")


@pytest.fixture(scope="session")
def texture():
    """256x256 RGB uint8 tissue-like texture."""
    return colorize(structure_map((256, 256), Xoshiro256(11)), "ihc")


@pytest.fixture(scope="session")
def smooth_texture():
    """Band-limited gray texture for interpolation round trips."""
    ys, xs = np.mgrid[0:64, 0:64].astype(np.float64)
    return (128 + 60 * np.sin(xs / 7.0) * np.cos(ys / 9.0) + 30 * np.sin((xs + ys) / 11.0)).round().astype(np.uint8)


def make_rng(seed=0):
    return np.random.default_rng(seed)


ACCEPTANCE: dict[int, str] = {}


def record_criterion(n: int, ok: bool, text: str) -> None:
    ACCEPTANCE[n] = f"criterion {n}: {'PASS' if ok else 'FAIL'}  {text}"


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])
