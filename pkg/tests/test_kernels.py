"""Backend equivalence: the numba kernels must agree with the numpy path."""

import subprocess
import sys

import numpy as np
import pytest

from conftest import random_sentence_batch, random_unit_rows
from wincel import kernels

needs_numba = pytest.mark.skipif(not kernels.NUMBA_AVAILABLE, reason="numba not importable")


@needs_numba
class TestBackendParity:
    def test_infonce(self, rng):
        np_impl = kernels.get_impl("numpy")["infonce"]
        nb_impl = kernels.get_impl("numba")["infonce"]
        for _ in range(10):
            n, d = int(rng.integers(2, 40)), int(rng.integers(3, 65))
            V = random_unit_rows(rng, n, d)
            T = random_unit_rows(rng, n, d)
            tau = float(rng.uniform(0.05, 1.0))
            a = np_impl(V, T, tau)
            b = nb_impl(V, T, tau)
            assert a[0] == pytest.approx(b[0], abs=1e-12)
            np.testing.assert_allclose(a[1], b[1], atol=1e-12)
            np.testing.assert_allclose(a[2], b[2], atol=1e-12)

    @pytest.mark.parametrize("literal_pad", [True, False])
    @pytest.mark.parametrize("full_grad", [True, False])
    def test_wincel(self, rng, literal_pad, full_grad):
        np_impl = kernels.get_impl("numpy")["wincel"]
        nb_impl = kernels.get_impl("numba")["wincel"]
        for _ in range(6):
            n, k, d = int(rng.integers(2, 20)), int(rng.integers(1, 8)), int(rng.integers(3, 33))
            V = random_unit_rows(rng, n, d)
            sb = random_sentence_batch(rng, n, k, d)
            a = np_impl(V, sb.T, sb.pad_mask, 0.15, 0.15, full_grad, literal_pad)
            b = nb_impl(V, sb.T, sb.pad_mask, 0.15, 0.15, full_grad, literal_pad)
            assert a[0] == pytest.approx(b[0], abs=1e-12)
            np.testing.assert_allclose(a[2], b[2], atol=1e-12)
            np.testing.assert_allclose(a[3], b[3], atol=1e-12)

    def test_adamw(self, rng):
        np_impl = kernels.get_impl("numpy")["adamw"]
        nb_impl = kernels.get_impl("numba")["adamw"]
        shape = (7, 5)
        p1 = rng.standard_normal(shape)
        p2 = p1.copy()
        m1, v1 = np.zeros(shape), np.zeros(shape)
        m2, v2 = np.zeros(shape), np.zeros(shape)
        for step in range(1, 6):
            g = rng.standard_normal(shape)
            np_impl(p1, g, m1, v1, step, 1e-3, 0.9, 0.999, 1e-8, 0.01)
            nb_impl(p2, g, m2, v2, step, 1e-3, 0.9, 0.999, 1e-8, 0.01)
        np.testing.assert_allclose(p1, p2, atol=1e-14)
        np.testing.assert_allclose(m1, m2, atol=1e-14)
        np.testing.assert_allclose(v1, v2, atol=1e-14)


class TestBackendSelection:
    def test_active_backend_is_valid(self):
        assert kernels.ACTIVE_BACKEND in ("numba", "numpy")

    def test_env_flag_forces_numpy(self):
        code = "import wincel.kernels as k; print(k.ACTIVE_BACKEND)"
        out = subprocess.run(
            [sys.executable, "-c", code],
            env={"PATH": "/usr/bin:/bin", "WINCEL_BACKEND": "numpy"},
            capture_output=True,
            text=True,
        )
        assert out.stdout.strip() == "numpy"

    def test_env_flag_rejects_unknown(self):
        code = "import wincel.kernels"
        out = subprocess.run(
            [sys.executable, "-c", code],
            env={"PATH": "/usr/bin:/bin", "WINCEL_BACKEND": "cuda"},
            capture_output=True,
            text=True,
        )
        assert out.returncode != 0

    def test_get_impl_unknown(self):
        with pytest.raises(ValueError):
            kernels.get_impl("fortran")
