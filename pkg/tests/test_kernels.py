import os
import subprocess
import sys

import numpy as np
import pytest

from worldcache import kernels
from worldcache.kernels import (
    BACKEND,
    HAS_NUMBA,
    LABEL_CHAOTIC,
    LABEL_LINEAR,
    LABEL_STABLE,
    MODE_BY_LABEL,
    MODE_DAMPED,
    MODE_LINEAR,
    blend_rows,
    curvature_rows,
    drift_mean,
    row_norms,
)


def _rng(seed=0):
    return np.random.default_rng(seed)


def _random_inputs(seed, n=64, d=16):
    rng = _rng(seed)
    y_star = rng.normal(size=(n, d))
    v_latest = rng.normal(size=(n, d))
    v_prev = rng.normal(size=(n, d))
    labels = rng.integers(0, 3, size=n).astype(np.int8)
    return y_star, v_latest, v_prev, labels


class TestBackendSelection:
    def test_backend_is_one_of_the_two_names(self):
        assert BACKEND in ("numba", "numpy")

    def test_numba_backend_implies_numba_importable(self):
        if BACKEND == "numba":
            assert HAS_NUMBA

    def test_public_names_point_at_selected_backend(self):
        suffix = "_nb" if BACKEND == "numba" else "_np"
        for public, base in [
            (row_norms, "_row_norms"),
            (curvature_rows, "_curvature_rows"),
            (blend_rows, "_blend_rows"),
            (drift_mean, "_drift_mean"),
        ]:
            name = getattr(public, "__name__", None) or public.py_func.__name__
            assert name == base + suffix

    def test_warm_up_is_idempotent(self):
        kernels.warm_up()
        kernels.warm_up()

    @pytest.mark.parametrize("forced", ["numpy", "numba", "auto"])
    def test_env_var_forces_backend_in_fresh_interpreter(self, forced):
        if forced == "numba" and not HAS_NUMBA:
            pytest.skip("numba not importable")
        env = dict(os.environ, WORLDCACHE_BACKEND=forced)
        out = subprocess.run(
            [sys.executable, "-c",
             "from worldcache import kernels; print(kernels.BACKEND)"],
            env=env, capture_output=True, text=True, check=True,
        )
        expected = forced
        if forced == "auto":
            expected = "numba" if HAS_NUMBA else "numpy"
        assert out.stdout.strip() == expected

    def test_bogus_env_var_fails_import(self):
        env = dict(os.environ, WORLDCACHE_BACKEND="gpu")
        out = subprocess.run(
            [sys.executable, "-c", "from worldcache import kernels"],
            env=env, capture_output=True, text=True,
        )
        assert out.returncode != 0
        assert "WORLDCACHE_BACKEND" in out.stderr


class TestRowNorms:
    def test_matches_linalg_norm(self):
        a = _rng(1).normal(size=(50, 7))
        expected = np.linalg.norm(a, axis=1)
        np.testing.assert_allclose(row_norms(a), expected, rtol=1e-13, atol=0)

    def test_zero_rows_give_exact_zero(self):
        a = np.zeros((4, 3))
        assert np.array_equal(row_norms(a), np.zeros(4))

    def test_backends_agree_to_last_ulps(self):
        # numpy's einsum may pair-sum while the jit loop runs left to right,
        # so agreement is near-exact rather than bitwise.
        for seed in range(5):
            a = _rng(seed).normal(size=(128, 33))
            np.testing.assert_allclose(
                row_norms(a), kernels._row_norms_np(a), rtol=1e-13, atol=0,
            )


class TestCurvatureRows:
    def test_backends_agree(self):
        for seed in range(5):
            _, v_latest, v_prev, _ = _random_inputs(seed)
            got = curvature_rows(v_latest, v_prev, -1.0, 1e-8)
            want = kernels._curvature_rows_np(v_latest, v_prev, -1.0, 1e-8)
            np.testing.assert_allclose(got, want, rtol=1e-12, atol=0)

    def test_zero_over_zero_is_zero(self):
        z = np.zeros((3, 4))
        out = curvature_rows(z, z, -1.0, 0.0)
        assert np.array_equal(out, np.zeros(3))

    def test_nonzero_acceleration_over_zero_speed_is_inf(self):
        v_latest = np.zeros((2, 3))
        v_prev = np.ones((2, 3))
        out = curvature_rows(v_latest, v_prev, -1.0, 0.0)
        assert np.all(np.isinf(out))

    def test_rowwise_formula(self):
        _, v_latest, v_prev, _ = _random_inputs(9, n=10, d=4)
        dt = -0.5
        out = curvature_rows(v_latest, v_prev, dt, 1e-8)
        for i in range(10):
            acc = (v_latest[i] - v_prev[i]) / dt
            want = np.linalg.norm(acc) / (v_latest[i] @ v_latest[i] + 1e-8)
            assert out[i] == pytest.approx(want, rel=1e-12)


class TestBlendRows:
    def test_backends_agree_bitwise_by_label(self):
        # identical per-element expressions in both backends
        for seed in range(5):
            y_star, v_latest, v_prev, labels = _random_inputs(seed)
            got = blend_rows(y_star, v_latest, v_prev, labels, -3.0, 0.3,
                             MODE_BY_LABEL)
            want = kernels._blend_rows_np(y_star, v_latest, v_prev, labels,
                                          -3.0, 0.3, MODE_BY_LABEL)
            assert np.array_equal(got, want)

    @pytest.mark.parametrize("mode", [MODE_LINEAR, MODE_DAMPED])
    def test_backends_agree_bitwise_uniform_modes(self, mode):
        y_star, v_latest, v_prev, labels = _random_inputs(11)
        got = blend_rows(y_star, v_latest, v_prev, labels, 2.5, 0.6, mode)
        want = kernels._blend_rows_np(y_star, v_latest, v_prev, labels,
                                      2.5, 0.6, mode)
        assert np.array_equal(got, want)

    def test_by_label_routes_each_row(self):
        y_star = np.array([[1.0], [1.0], [1.0]])
        v_latest = np.array([[2.0], [2.0], [2.0]])
        v_prev = np.array([[0.0], [0.0], [0.0]])
        labels = np.array([LABEL_STABLE, LABEL_LINEAR, LABEL_CHAOTIC],
                          dtype=np.int8)
        out = blend_rows(y_star, v_latest, v_prev, labels, 3.0, 0.5,
                         MODE_BY_LABEL)
        # stable: reuse; linear: 1 + 3*2; damped: 1 + 3*(0.5*2 + 0.5*0)
        assert np.array_equal(out, np.array([[1.0], [7.0], [4.0]]))

    def test_linear_mode_ignores_labels(self):
        y_star, v_latest, v_prev, labels = _random_inputs(3, n=12, d=5)
        other = np.full(12, LABEL_STABLE, dtype=np.int8)
        a = blend_rows(y_star, v_latest, v_prev, labels, -2.0, 0.4,
                       MODE_LINEAR)
        b = blend_rows(y_star, v_latest, v_prev, other, -2.0, 0.4,
                       MODE_LINEAR)
        assert np.array_equal(a, b)
        assert np.array_equal(a, y_star + -2.0 * v_latest)

    def test_damped_mode_blends_velocities(self):
        y_star, v_latest, v_prev, labels = _random_inputs(4, n=8, d=3)
        out = blend_rows(y_star, v_latest, v_prev, labels, 1.5, 0.25,
                         MODE_DAMPED)
        vel = (1.0 - 0.25) * v_latest + 0.25 * v_prev
        np.testing.assert_allclose(out, y_star + 1.5 * vel, rtol=1e-15)

    def test_alpha_zero_damped_equals_linear(self):
        y_star, v_latest, v_prev, labels = _random_inputs(5, n=6, d=2)
        damped = blend_rows(y_star, v_latest, v_prev, labels, 2.0, 0.0,
                            MODE_DAMPED)
        linear = blend_rows(y_star, v_latest, v_prev, labels, 2.0, 0.99,
                            MODE_LINEAR)
        assert np.array_equal(damped, linear)


class TestDriftMean:
    def test_backends_agree(self):
        for seed in range(5):
            y_t, y_prev, _, labels = _random_inputs(seed)
            kappa = np.abs(_rng(seed + 100).normal(size=64))
            got = drift_mean(y_t, y_prev, kappa, labels)
            want = kernels._drift_mean_np(y_t, y_prev, kappa, labels)
            assert got == pytest.approx(want, rel=1e-12)

    def test_only_chaotic_rows_contribute(self):
        y_t = np.array([[1.0], [10.0], [3.0]])
        y_prev = np.array([[0.0], [0.0], [0.0]])
        kappa = np.array([0.5, 0.5, 0.5])
        labels = np.array([LABEL_CHAOTIC, LABEL_STABLE, LABEL_CHAOTIC],
                          dtype=np.int8)
        # mean over rows 0 and 2: (0.5*1 + 0.5*3) / 2
        assert drift_mean(y_t, y_prev, kappa, labels) == pytest.approx(1.0)

    def test_no_chaotic_rows_falls_back_to_all(self):
        y_t = np.array([[2.0], [4.0]])
        y_prev = np.zeros((2, 1))
        kappa = np.array([1.0, 1.0])
        labels = np.array([LABEL_STABLE, LABEL_LINEAR], dtype=np.int8)
        assert drift_mean(y_t, y_prev, kappa, labels) == pytest.approx(3.0)

    def test_identical_latents_give_zero(self):
        y, _, _, labels = _random_inputs(8, n=9, d=4)
        kappa = np.ones(9)
        assert drift_mean(y, y.copy(), kappa, labels) == 0.0

    def test_deterministic_across_calls(self):
        y_t, y_prev, _, labels = _random_inputs(13)
        kappa = np.abs(_rng(14).normal(size=64))
        a = drift_mean(y_t, y_prev, kappa, labels)
        b = drift_mean(y_t, y_prev, kappa, labels)
        assert a == b
