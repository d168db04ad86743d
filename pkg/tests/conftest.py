import time

import numpy as np
import pytest

from physimri import MultiParametricMap, VoxelGrid3D

# tissue parameter triples (t1 ms, t2s ms, pd) matching the packaged
# example prior means, so phantoms segment unambiguously
CSF = (4000.0, 500.0, 1.0)
GM = (1300.0, 55.0, 0.85)
WM = (850.0, 45.0, 0.7)

_SESSION_T0 = time.perf_counter()
_SUITE_BUDGET_S = 180.0


def make_block_phantom(dims=(24, 24, 24), voxel_size=(1.0, 1.0, 1.0), subject_id="phantom"):
    """CSF/GM/WM blocks along x (one third each) with a background slab
    (pd = 0) in the first 4 y-columns."""
    nx = dims[0]
    t1 = np.full(dims, WM[0])
    t2s = np.full(dims, WM[1])
    pd = np.full(dims, WM[2])
    third = nx // 3
    for (lo, hi), (v1, v2, v3) in (((0, third), CSF), ((third, 2 * third), GM)):
        t1[lo:hi] = v1
        t2s[lo:hi] = v2
        pd[lo:hi] = v3
    pd[:, :4] = 0.0
    grid = VoxelGrid3D(dims, voxel_size)
    return MultiParametricMap(grid, t1, t2s, pd, subject_id=subject_id)


def make_random_mpm(rng, dims=(12, 12, 12), subject_id="rand"):
    """Physically plausible random map with strictly valid voxels."""
    t1 = rng.uniform(300.0, 4500.0, size=dims)
    t2s = rng.uniform(20.0, 600.0, size=dims)
    pd = rng.uniform(0.1, 1.2, size=dims)
    grid = VoxelGrid3D(dims, (1.0, 1.0, 1.0))
    return MultiParametricMap(grid, t1, t2s, pd, subject_id=subject_id)


@pytest.fixture
def block_phantom():
    return make_block_phantom()


@pytest.fixture
def rng():
    return np.random.default_rng(20240811)


# pass/fail lines registered by the acceptance suite, echoed at the end
ACCEPTANCE_LINES = []


def pytest_sessionfinish(session, exitstatus):
    elapsed = time.perf_counter() - _SESSION_T0
    ok = elapsed < _SUITE_BUDGET_S
    ACCEPTANCE_LINES.append(
        f"[ACCEPTANCE] full-suite-runtime-under-3-minutes: {'PASS' if ok else 'FAIL'} ({elapsed:.1f}s)"
    )
    if not ok and exitstatus == 0:
        session.exitstatus = 1


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_LINES:
        terminalreporter.write_line("")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
