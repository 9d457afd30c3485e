import numpy as np
import pytest

from plant3d.cloud import PointCloud, cloud_resolution, default_viewpoint, estimate_normals
from plant3d.detectors import IssParams, detect_iss
from plant3d.harness.synth import SynthSpec, synth_cloud


@pytest.fixture(scope="session")
def plant():
    """Plantlike fixture shared by the rotation tests: cloud, res, viewpoint, normals, ISS keypoints."""
    cloud = synth_cloud(SynthSpec("plantlike", 3000, noise=0.002, seed=11))
    res = cloud_resolution(cloud)
    vp = default_viewpoint(cloud)
    normals = estimate_normals(cloud, 10, vp)
    kps = detect_iss(cloud, IssParams(), res)
    return cloud, float(res), vp, normals, kps


@pytest.fixture(scope="session")
def grid_cube():
    """Lattice-sampled unit cube surface, spacing ~0.02."""
    return synth_cloud(SynthSpec("box", 15000, {"grid": True}))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def line_cloud(xs):
    return PointCloud(np.column_stack([xs, np.zeros(len(xs)), np.zeros(len(xs))]))


_CRITERIA = pytest.StashKey[dict]()


def pytest_configure(config):
    config.stash[_CRITERIA] = {}


@pytest.fixture
def criterion(request):
    """Record one acceptance line: ``criterion(n, ok, detail)``."""
    lines = request.config.stash[_CRITERIA]

    def record(number, ok, detail, status=None):
        status = status or ("PASS" if ok else "FAIL")
        lines[number] = f"criterion {number}: {status} {detail}"
        return ok

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_CRITERIA, {})
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(lines, key=lambda n: (int(str(n).split()[0]), str(n))):
        terminalreporter.write_line(lines[number])
