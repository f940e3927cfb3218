import numpy as np
import pytest

from dermcnn.synthetic import make_blob_dataset


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """One pass/fail line per acceptance criterion."""
    lines = {}
    for outcome in ("passed", "failed", "skipped"):
        for report in terminalreporter.stats.get(outcome, []):
            if getattr(report, "when", "call") != "call" and outcome != "skipped":
                continue
            marker = getattr(report, "_criterion", None)
            if marker is None:
                marker = _criterion_from_nodeid(report.nodeid)
            if marker is not None:
                lines[marker] = outcome.upper()
    if lines:
        terminalreporter.section("acceptance criteria")
        for num in sorted(lines):
            terminalreporter.write_line(f"CRITERION {num:>2}: {lines[num]}")


def _criterion_from_nodeid(nodeid: str):
    if "test_acceptance" not in nodeid:
        return None
    import re

    match = re.search(r"test_c(\d+)_", nodeid)
    return int(match.group(1)) if match else None


@pytest.fixture(scope="session")
def blob_dataset_200(tmp_path_factory):
    """200-image synthetic blob dataset on disk (metadata CSV + PNG dir)."""
    root = tmp_path_factory.mktemp("blobs200")
    metadata, image_dir = make_blob_dataset(root, n_images=200, image_size=32, seed=7)
    return metadata, image_dir


@pytest.fixture
def rng64():
    return np.random.default_rng(1234)
