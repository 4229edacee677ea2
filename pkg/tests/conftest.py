import numpy as np
import pytest

from thermask.dataset import split_by_ratio
from thermask.synth import SynthConfig, generate_synthetic_dataset


@pytest.fixture(scope="session")
def small_dataset():
    """90 rendered images with a per-camera 80/20 split."""
    ds = generate_synthetic_dataset(SynthConfig(n_images=90, seed=3))
    return ds._replace(manifest=split_by_ratio(ds.manifest, 0.8, seed=0))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# acceptance bookkeeping: one PASS/FAIL line per criterion in the terminal summary
_criteria: dict[int, dict] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or (report.when != "call" and not report.failed and not report.skipped):
        return
    number, title = marker.args
    entry = _criteria.setdefault(number, {"title": title, "failed": False, "skipped": False, "ran": False})
    entry["failed"] |= report.failed
    entry["skipped"] |= report.skipped
    entry["ran"] |= report.when == "call" and report.passed


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_criteria):
        entry = _criteria[number]
        status = "FAIL" if entry["failed"] else "SKIP" if entry["skipped"] and not entry["ran"] else "PASS"
        terminalreporter.write_line(f"criterion {number:2d}: {status}  {entry['title']}")
