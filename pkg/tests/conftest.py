import numpy as np
import pytest

from mambapupil import autodiff as ad


@pytest.fixture(autouse=True)
def float64_engine():
    with ad.default_dtype(np.float64):
        yield


def numeric_grad(f, arr: np.ndarray, h: float = 1e-6) -> np.ndarray:
    """Central differences of scalar ``f()`` with respect to ``arr`` (perturbed in place)."""
    g = np.zeros_like(arr)
    it = np.nditer(arr, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = arr[i]
        arr[i] = old + h
        up = f()
        arr[i] = old - h
        down = f()
        arr[i] = old
        g[i] = (up - down) / (2 * h)
    return g


def rel_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-6) -> float:
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b), floor))


def small_recording(seed: int = 0, seconds: float = 4.0, name: str | None = None):
    """A short mixed-motion recording on a 32x24 sensor."""
    from mambapupil.synth import SceneModel, generate_dataset, preset_trajectories
    from mambapupil.training import Recording

    scene = SceneModel(resolution=(32, 24), pupil_radius=3.0, iris_radius=5.0)
    rng = np.random.default_rng(seed)
    events, labels = generate_dataset(preset_trajectories("mixed", seconds, scene, rng), scene, 100, seed)
    return Recording(name or f"rec{seed}", events, labels)


# -- acceptance report ------------------------------------------------------------
# Tests marked ``criterion(n, title)`` get one PASS/FAIL line in the terminal summary.

def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion covered by the test")
    config._acceptance = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or not (rep.when == "call" or rep.failed or rep.skipped):
        return
    number, title = mark.args
    notes = [v for k, v in item.user_properties if k == "note"]
    status = "PASS" if rep.passed else ("SKIP" if rep.skipped else "FAIL")
    item.config._acceptance[number] = (title, status, notes)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    results = getattr(config, "_acceptance", {})
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(results):
        title, status, notes = results[number]
        terminalreporter.write_line(f"criterion {number:2d} {status}: {title}")
        for note in notes:
            terminalreporter.write_line(f"    {note}")
