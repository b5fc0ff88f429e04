import numpy as np
import pytest

from nailforce.registration import triangulate
from nailforce.synth import DEFAULT_GRID, default_nail_model, make_grid, render_calibration

# filled by the acceptance tests, echoed in the terminal summary
ACCEPTANCE_LINES = {}


def record(number, ok, detail):
    line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES[number] = line
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[n])


@pytest.fixture(scope="session")
def nail_model():
    return default_nail_model()


@pytest.fixture(scope="session")
def grid_forces():
    return np.array(make_grid(DEFAULT_GRID), dtype=np.float64)


@pytest.fixture(scope="session")
def calibration_images(nail_model, grid_forces):
    return render_calibration(nail_model, grid_forces)


@pytest.fixture(scope="session")
def template_tri(nail_model):
    return triangulate(nail_model.pattern.landmarks(), nail_model.shape)


@pytest.fixture(scope="session")
def trained(nail_model, grid_forces, calibration_images):
    from nailforce.pipeline import fit_models
    models, _ = fit_models(calibration_images, grid_forces, nail_model.pattern.landmarks())
    return models
