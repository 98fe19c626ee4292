"""Kernel evaluations and the convolution square root.

The expected values here are either closed forms or come from independent
oracles: direct double-sum convolution of the eta table (never the FFT
path) and numerical quadrature for the rational-kernel transform.
"""

import json
import math

import numpy as np
import pytest

import gfperc.kernels as K
from gfperc.errors import PreconditionError, QuadratureError
from gfperc.kernels import (
    SqrtKernel,
    bargmann_fock,
    build_sqrt_kernel,
    direct_convolution,
    eval_kappa,
    eval_kappa_hat,
    kernel_from_name,
    op_norm_scan,
    rational,
)


class TestEvalKappa:
    def test_normalization_at_origin(self, bf):
        assert eval_kappa(bf, (0.0, 0.0)) == 1.0

    def test_gaussian_closed_form(self, bf):
        assert eval_kappa(bf, (1.0, 0.0)) == pytest.approx(math.exp(-0.5), abs=1e-15)
        assert float(eval_kappa(bf, (1.0, 0.0))) == pytest.approx(0.6065306597126334)

    def test_rational_closed_form(self):
        assert eval_kappa(rational(1), (1.0, 1.0)) == pytest.approx(0.25, abs=1e-15)
        assert eval_kappa(rational(3), (1.0, 1.0)) == pytest.approx(0.25**3, abs=1e-15)

    def test_bounded_and_even(self, bf):
        rng = np.random.default_rng(0)
        x = rng.uniform(-5, 5, size=(200, 2))
        for kern in (bf, rational(2)):
            v = eval_kappa(kern, x)
            assert np.all(np.abs(v) <= 1.0)
            assert np.allclose(v, eval_kappa(kern, -x))


class TestEvalKappaHat:
    def test_gaussian_at_origin(self, bf):
        assert eval_kappa_hat(bf, (0.0, 0.0)) == pytest.approx(1.0 / (2 * math.pi), abs=1e-15)

    def test_gaussian_closed_form(self, bf):
        want = math.exp(-0.5) / (2 * math.pi)
        assert eval_kappa_hat(bf, (1.0, 0.0)) == pytest.approx(want, abs=1e-15)
        assert want == pytest.approx(0.09653235263005391)

    def test_even_and_positive(self, bf):
        rng = np.random.default_rng(1)
        xi = rng.uniform(-8, 8, size=(200, 2))
        for kern in (bf, rational(1), rational(4)):
            v = eval_kappa_hat(kern, xi)
            assert np.all(v > 0)
            assert np.allclose(v, eval_kappa_hat(kern, -xi))

    def test_rational_transform_vs_quadrature(self):
        # oracle: kappa_hat(xi) = (1/4pi^2) int exp(-i<xi,x>) kappa(x) dx,
        # separable, so check the 1-d factor by direct quadrature
        n = 3
        t = np.linspace(-60, 60, 480001)
        for s in (0.0, 0.7, 2.3):
            quad = np.trapezoid(np.cos(s * t) / (1 + t * t) ** n, t) / (2 * math.pi)
            closed = math.exp(K._log_h_n(np.array(s), K._laplace_convolution_coeffs(n)))
            assert closed == pytest.approx(quad, rel=1e-8)

    def test_rational_coeffs_convolution_oracle(self):
        # h_n must equal h_{n-1} * h_1 (numerical convolution on a grid)
        grid = np.linspace(-40, 40, 16001)
        dt = grid[1] - grid[0]
        h = lambda n, t: np.exp(K._log_h_n(t, K._laplace_convolution_coeffs(n)))
        for n in (2, 3, 5):
            conv = np.convolve(h(n - 1, grid), h(1, grid), mode="same") * dt
            assert np.allclose(conv, h(n, grid), atol=1e-6)

    def test_unsupported_kernel(self):
        fake = K.Kernel(name="constant")
        with pytest.raises(PreconditionError):
            eval_kappa_hat(fake, (0.0, 0.0))


class TestKernelFromName:
    def test_aliases(self):
        assert kernel_from_name("bf").name == K.GAUSSIAN
        assert kernel_from_name("bargmann_fock").name == K.GAUSSIAN
        assert kernel_from_name("rational3") == rational(3)
        assert kernel_from_name("rational(2)") == rational(2)

    def test_rejects_unknown(self):
        with pytest.raises(PreconditionError):
            kernel_from_name("matern")
        with pytest.raises(PreconditionError):
            kernel_from_name("rational0")


class TestBuildSqrtKernel:
    def test_normalization_lag_zero(self, bf):
        sk = build_sqrt_kernel(bf, 0.5)
        assert direct_convolution(sk.table, 0, 0) == pytest.approx(1.0, abs=1e-9)

    def test_evenness_exact(self, bf):
        sk = build_sqrt_kernel(bf, 0.25)
        assert np.array_equal(sk.table, sk.table[::-1, ::-1])

    def test_direct_sum_oracle_eps_half(self, bf):
        # oracle = direct double-sum convolution vs closed-form kappa
        sk = build_sqrt_kernel(bf, 0.5, support_radius=32, grid_order=64)
        assert sk.support_radius == 32
        worst = 0.0
        for m1 in range(-20, 21):
            for m2 in range(-20, 21):
                got = direct_convolution(sk.table, m1, m2)
                want = float(eval_kappa(bf, (0.5 * m1, 0.5 * m2)))
                worst = max(worst, abs(got - want))
        assert worst <= 1e-6

    def test_rational_table(self):
        sk = build_sqrt_kernel(rational(3), 0.5)
        assert sk.conv_residual <= 1e-6
        assert math.isfinite(sk.sum_abs)

    def test_symbol_positive_on_grid(self, bf):
        for eps in (0.5, 0.0625):
            log_sym = K._periodized_log_symbol(bf, eps, 64)
            assert np.all(np.isfinite(log_sym))

    def test_grid_refinement_cap_raises(self, bf, monkeypatch):
        monkeypatch.setattr(K, "MAX_GRID_ORDER", 64)
        with pytest.raises(QuadratureError) as err:
            build_sqrt_kernel(bf, 0.5, grid_order=64, conv_tol=1e-18)
        assert err.value.residual > 1e-18

    def test_preconditions(self, bf):
        with pytest.raises(PreconditionError):
            build_sqrt_kernel(bf, -1.0)
        with pytest.raises(PreconditionError):
            build_sqrt_kernel(bf, 0.5, grid_order=48)  # not a power of two
        with pytest.raises(PreconditionError):
            build_sqrt_kernel(bf, 0.5, grid_order=32, support_radius=20)

    def test_serialization_round_trip(self, bf, tmp_path):
        sk = build_sqrt_kernel(bf, 0.5)
        path = tmp_path / "table.json"
        sk.dump(path)
        back = SqrtKernel.load(path)
        assert back.kernel == sk.kernel
        assert back.mesh_eps == sk.mesh_eps
        assert np.array_equal(back.table, sk.table)
        assert back.sum_abs == sk.sum_abs

    def test_rejects_foreign_cache(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text(json.dumps({"format": "something-else"}))
        with pytest.raises(PreconditionError):
            SqrtKernel.load(path)


class TestOpNormScan:
    def test_sum_abs_dominates_center(self, bf):
        sk = build_sqrt_kernel(bf, 0.5)
        assert sk.sum_abs >= abs(sk.eta(0, 0))

    def test_rational_finite(self):
        rows = op_norm_scan(rational(3), [0.5])
        assert math.isfinite(rows[0]["sum_abs"])

    def test_ratio_none_above_one(self, bf):
        rows = op_norm_scan(bf, [1.0])
        assert rows[0]["ratio"] is None

    def test_gaussian_ratio_bounded(self, bf):
        # recorded constant: the ratio column decreases on this grid
        rows = op_norm_scan(bf, [0.5, 0.25])
        assert rows[1]["ratio"] <= 3.0 * rows[0]["ratio"]
