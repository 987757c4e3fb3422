import numpy as np
import pytest

from granusense.tactile import Grid, LightingModel, ShapeKind, ShapeSpec, background

KINDS = tuple(ShapeKind)


def random_pose(rng, kind, diameter=10.0, depth=(0.3, 1.2), margin=1.0, grid=Grid()):
    reach = grid.half_extent[0] - diameter / 2 - margin
    return ShapeSpec(kind, diameter, x=rng.uniform(-reach, reach), y=rng.uniform(-reach, reach),
                     rotation=rng.uniform(0, 360), press_depth=rng.uniform(*depth))


@pytest.fixture(scope="session")
def lighting():
    return LightingModel.default()


@pytest.fixture(scope="session")
def bg(lighting):
    return background(lighting)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# -- acceptance reporting ---------------------------------------------------------

ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(ACCEPTANCE):
        status, title, detail = ACCEPTANCE[num]
        terminalreporter.write_line(f"[{status}] criterion {num:2d}: {title} -- {detail}")
