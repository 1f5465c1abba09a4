"""Backend-parametrized checks of the numeric kernels.

Every registered backend (numpy fallback, numba when importable) must agree
with a plain-numpy reference implementation; the order-statistic kernel must
be exact, not approximate, in both its brute-force and bisection regimes.
"""
import subprocess
import sys

import numpy as np
import pytest

from netoutlier import _kernels

BACKENDS = sorted(_kernels.IMPLEMENTATIONS)


def brute_force_kth_diff(s, k):
    iu = np.triu_indices(s.shape[0], 1)
    diffs = (s[None, :] - s[:, None])[iu]
    return float(np.sort(diffs)[k - 1])


@pytest.mark.parametrize("backend", BACKENDS)
def test_kth_diff_small_inputs_exact(backend):
    kth = _kernels.IMPLEMENTATIONS[backend]["kth_smallest_pairwise_diff"]
    rng = np.random.default_rng(31)
    for m in (2, 3, 7, 40):
        s = np.sort(rng.normal(size=m))
        n_pairs = m * (m - 1) // 2
        for k in (1, (n_pairs + 1) // 2, n_pairs):
            assert kth(s, k) == brute_force_kth_diff(s, k)


@pytest.mark.parametrize("backend", BACKENDS)
def test_kth_diff_bisection_regime_exact(backend):
    """Above the brute-force cutoff the value-domain bisection must still
    return the exact order statistic, bit for bit."""
    kth = _kernels.IMPLEMENTATIONS[backend]["kth_smallest_pairwise_diff"]
    rng = np.random.default_rng(7)
    m = _kernels._BRUTE_FORCE_MAX_M + 101
    s = np.sort(rng.normal(size=m))
    n_pairs = m * (m - 1) // 2
    for k in (1, 12345, n_pairs // 2, n_pairs):
        assert kth(s, k) == brute_force_kth_diff(s, k)


@pytest.mark.parametrize("backend", BACKENDS)
def test_kth_diff_mixed_scales_stay_fast_and_exact(backend):
    """Values straddling zero across eight orders of magnitude, plus runs of
    duplicates; a per-cutoff float-stepping approach degenerates here, the
    index-domain search must not."""
    kth = _kernels.IMPLEMENTATIONS[backend]["kth_smallest_pairwise_diff"]
    rng = np.random.default_rng(17)
    s = np.sort(np.concatenate([
        rng.normal(size=800) * 1e-8,
        rng.normal(size=800),
        np.repeat(rng.normal(size=20), 25),
    ]))
    assert s.shape[0] > _kernels._BRUTE_FORCE_MAX_M
    n_pairs = s.shape[0] * (s.shape[0] - 1) // 2
    for k in (1, 5000, n_pairs // 4, n_pairs):
        assert kth(s, k) == brute_force_kth_diff(s, k)


@pytest.mark.parametrize("backend", BACKENDS)
def test_kth_diff_handles_heavy_ties(backend):
    kth = _kernels.IMPLEMENTATIONS[backend]["kth_smallest_pairwise_diff"]
    s = np.sort(np.repeat([0.0, 0.0, 1.0, 1.0, 1.0], 300))
    # count the equal-valued pairs directly; everything below that rank is 0
    m = s.shape[0]
    n_equal = sum(
        c * (c - 1) // 2 for c in np.unique(s, return_counts=True)[1]
    )
    assert kth(s, n_equal) == 0.0
    assert kth(s, n_equal + 1) == 1.0
    assert kth(s, m * (m - 1) // 2) == 1.0


@pytest.mark.parametrize("backend", BACKENDS)
def test_kth_diff_constant_vector(backend):
    kth = _kernels.IMPLEMENTATIONS[backend]["kth_smallest_pairwise_diff"]
    s = np.zeros(2000)
    assert kth(s, 1) == 0.0
    assert kth(s, 1000) == 0.0


@pytest.mark.parametrize("backend", BACKENDS)
def test_row_quadforms_matches_reference(backend):
    quad = _kernels.IMPLEMENTATIONS[backend]["row_quadforms"]
    rng = np.random.default_rng(11)
    r = rng.normal(size=(57, 4))
    a = rng.normal(size=(4, 4))
    a = a @ a.T + np.eye(4)
    expected = np.array([row @ a @ row for row in r])
    np.testing.assert_allclose(quad(r, a), expected, rtol=1e-12)


@pytest.mark.parametrize("backend", BACKENDS)
def test_row_quadforms_noncontiguous_input(backend):
    quad = _kernels.IMPLEMENTATIONS[backend]["row_quadforms"]
    rng = np.random.default_rng(12)
    big = rng.normal(size=(40, 9))
    r = big[::2, 1:4]  # strided view
    a = np.eye(3)
    np.testing.assert_allclose(quad(r, a), (r ** 2).sum(axis=1), rtol=1e-12)


@pytest.mark.parametrize("backend", BACKENDS)
def test_subset_crossprod_matches_reference(backend):
    cross = _kernels.IMPLEMENTATIONS[backend]["subset_crossprod"]
    rng = np.random.default_rng(5)
    a = rng.normal(size=(30, 3))
    b = rng.normal(size=(30, 5))
    idx = np.array([0, 4, 4, 17, 29])  # repeats allowed
    np.testing.assert_allclose(cross(a, b, idx), a[idx].T @ b[idx], rtol=1e-12)


@pytest.mark.parametrize("backend", BACKENDS)
def test_subset_crossprod_empty_subset(backend):
    cross = _kernels.IMPLEMENTATIONS[backend]["subset_crossprod"]
    a = np.ones((8, 2))
    out = cross(a, a, np.empty(0, dtype=np.int64))
    assert out.shape == (2, 2)
    assert np.all(out == 0.0)


def test_backends_agree_on_shared_inputs():
    if len(BACKENDS) < 2:
        pytest.skip("only one backend importable")
    rng = np.random.default_rng(99)
    s = np.sort(rng.normal(size=2000))
    r = rng.normal(size=(64, 6))
    a = rng.normal(size=(6, 6))
    a = a @ a.T
    idx = rng.integers(0, 64, size=20)
    ref = _kernels.IMPLEMENTATIONS[BACKENDS[0]]
    for name in BACKENDS[1:]:
        impl = _kernels.IMPLEMENTATIONS[name]
        assert impl["kth_smallest_pairwise_diff"](s, 777) == \
            ref["kth_smallest_pairwise_diff"](s, 777)
        np.testing.assert_allclose(
            impl["row_quadforms"](r, a), ref["row_quadforms"](r, a), rtol=1e-10
        )
        np.testing.assert_allclose(
            impl["subset_crossprod"](r, r, idx),
            ref["subset_crossprod"](r, r, idx),
            rtol=1e-10,
        )


def _backend_in_subprocess(env_value):
    code = "import netoutlier._kernels as k; print(k.backend_name())"
    env = {"NETOUTLIER_BACKEND": env_value} if env_value is not None else {}
    import os
    full = dict(os.environ)
    full.pop("NETOUTLIER_BACKEND", None)
    full.update(env)
    return subprocess.run(
        [sys.executable, "-c", code], capture_output=True, text=True, env=full
    )


def test_env_var_forces_numpy_backend():
    proc = _backend_in_subprocess("numpy")
    assert proc.returncode == 0, proc.stderr
    assert proc.stdout.strip() == "numpy"


def test_env_var_rejects_unknown_backend():
    proc = _backend_in_subprocess("fortran")
    assert proc.returncode != 0
    assert "NETOUTLIER_BACKEND" in proc.stderr


def test_active_backend_is_registered():
    assert _kernels.backend_name() in _kernels.IMPLEMENTATIONS
