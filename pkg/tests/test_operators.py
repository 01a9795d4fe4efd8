import json

import numpy as np
import pytest

from qfc.operators import (
    SIGMA_X,
    SIGMA_Y,
    SIGMA_Z,
    StateFunctional,
    as_density,
    as_operator,
    as_tangent,
    dag,
    frechet_gradient,
    hermitian_basis,
    hessian_bilinear,
    lindblad_apply,
    lindblad_apply_predual,
    operator_from_json,
    operator_to_json,
    pairing,
    random_density,
    random_hermitian,
    traceless,
)

I2 = np.eye(2, dtype=complex)


class TestPairing:
    def test_traceless_pauli(self):
        assert pairing(I2 / 2, SIGMA_Z) == pytest.approx(0.0, abs=1e-14)

    def test_pauli_orthonormality(self):
        rho = 0.5 * (I2 + SIGMA_X)
        assert pairing(rho, SIGMA_X) == pytest.approx(1.0, abs=1e-14)

    def test_direct_summation_oracle(self, rng):
        # independent of the matrix-product routine: sum rho_ij X_ji
        for _ in range(20):
            rho = random_hermitian(4, rng)
            X = random_hermitian(4, rng)
            direct = sum(rho[i, j] * X[j, i] for i in range(4) for j in range(4))
            assert pairing(rho, X) == pytest.approx(direct.real, abs=1e-12)
            assert pairing(rho, X) == pytest.approx(
                np.conj(pairing(X, rho)), abs=1e-12)

    def test_linear_in_each_argument(self, rng):
        rho1, rho2 = random_hermitian(3, rng), random_hermitian(3, rng)
        X = random_hermitian(3, rng)
        lhs = pairing(rho1 + 2.0 * rho2, X)
        assert lhs == pytest.approx(pairing(rho1, X) + 2 * pairing(rho2, X),
                                    abs=1e-12)

    def test_operator_norm_bound(self, rng):
        for n in (2, 3, 4):
            for _ in range(30):
                rho = random_density(n, rng)
                X = random_hermitian(n, rng)
                opnorm = np.max(np.abs(np.linalg.eigvalsh(X)))
                assert abs(pairing(rho, X)) <= opnorm + 1e-12

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            pairing(I2 / 2, np.eye(3))


class TestLindblad:
    def test_identity_annihilated(self, rng):
        # conservativity: L(I) = 0 for every R
        for n in (2, 3, 4):
            R = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
            out = lindblad_apply(R, np.eye(n))
            assert np.max(np.abs(out)) < 1e-14 * max(1.0, np.max(np.abs(R)) ** 2)

    def test_dephasing_on_sigma_x(self):
        # sigma_z sigma_x sigma_z = -sigma_x
        out = lindblad_apply(0.5 * SIGMA_Z, SIGMA_X)
        assert np.allclose(out, -0.5 * SIGMA_X, atol=1e-14)

    def test_flip_on_sigma_z(self):
        out = lindblad_apply(SIGMA_X, SIGMA_Z)
        assert np.allclose(out, -2.0 * SIGMA_Z, atol=1e-14)

    def test_predual_pole_stationary(self):
        rho = np.diag([1.0, 0.0]).astype(complex)
        out = lindblad_apply_predual(0.5 * SIGMA_Z, rho)
        assert np.max(np.abs(out)) < 1e-14

    def test_predual_dephasing_rate(self):
        kappa = 1.3
        rho = 0.5 * (I2 + SIGMA_X)
        out = lindblad_apply_predual(0.5 * kappa * SIGMA_Z, rho)
        assert np.allclose(out, -(kappa ** 2 / 4.0) * SIGMA_X, atol=1e-14)

    def test_predual_traceless(self, rng):
        for n in (2, 3):
            R = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
            rho = random_density(n, rng)
            assert abs(np.trace(lindblad_apply_predual(R, rho))) < 1e-12

    def test_adjointness(self, rng):
        # <L'(rho), X> = <rho, L(X)> on random triples
        for n in (2, 3, 4):
            for _ in range(34):
                R = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
                rho = random_density(n, rng)
                X = random_hermitian(n, rng)
                lhs = pairing(lindblad_apply_predual(R, rho), X)
                rhs = pairing(rho, lindblad_apply(R, X))
                assert lhs == pytest.approx(rhs, abs=1e-12)


class TestDerivatives:
    def test_linear_functional_gradient(self, rng):
        X = random_hermitian(2, rng)
        F = StateFunctional(lambda rho: np.trace(rho @ X).real)
        rho = random_density(2, rng)
        grad = frechet_gradient(F, rho, h=1e-4)
        assert np.allclose(grad, traceless(X), atol=1e-8)

    def test_quadratic_chain_rule(self):
        F = StateFunctional(lambda rho: np.trace(rho @ SIGMA_Z).real ** 2)
        rho = 0.5 * (I2 + 0.5 * SIGMA_Z)
        grad = frechet_gradient(F, rho)
        assert np.allclose(grad, SIGMA_Z, atol=1e-8)

    def test_constant_gradient_zero(self, rng):
        F = StateFunctional(lambda rho: 3.25)
        grad = frechet_gradient(F, random_density(3, rng))
        assert np.max(np.abs(grad)) < 1e-12

    def test_analytic_gradient_consistency(self, rng):
        # supplied analytic gradients must match the numeric one
        X = random_hermitian(2, rng)
        F = StateFunctional(
            lambda rho: np.trace(rho @ X).real ** 2,
            gradient=lambda rho: 2.0 * np.trace(rho @ X).real * X)
        for _ in range(10):
            rho = random_density(2, rng)
            num = frechet_gradient(F, rho)
            ana = traceless(F.gradient(rho))
            assert np.max(np.abs(num - ana)) <= 1e-6 * max(1.0, np.max(np.abs(ana)))

    def test_hessian_of_linear_is_zero(self, rng):
        X = random_hermitian(2, rng)
        F = StateFunctional(lambda rho: np.trace(rho @ X).real)
        tau = as_tangent(traceless(random_hermitian(2, rng)))
        val = hessian_bilinear(F, random_density(2, rng), tau, tau)
        assert abs(val) < 1e-9

    def test_hessian_of_square(self, rng):
        X = random_hermitian(2, rng)
        F = StateFunctional(lambda rho: np.trace(rho @ X).real ** 2)
        rho = random_density(2, rng)
        tau = as_tangent(traceless(random_hermitian(2, rng)))
        expected = 2.0 * np.trace(tau @ X).real ** 2
        assert hessian_bilinear(F, rho, tau, tau) == pytest.approx(
            expected, rel=1e-6, abs=1e-8)

    def test_hessian_symmetry_and_bilinearity(self, rng):
        X = random_hermitian(3, rng)
        F = StateFunctional(lambda rho: np.trace(rho @ X).real ** 3)
        rho = random_density(3, rng)
        t1 = traceless(random_hermitian(3, rng))
        t2 = traceless(random_hermitian(3, rng))
        h12 = hessian_bilinear(F, rho, t1, t2)
        h21 = hessian_bilinear(F, rho, t2, t1)
        assert h12 == pytest.approx(h21, abs=1e-8)
        h_scaled = hessian_bilinear(F, rho, 2.0 * t1, t2)
        assert h_scaled == pytest.approx(2.0 * h12, rel=1e-5, abs=1e-7)

    def test_nonfinite_functional_rejected(self, rng):
        F = StateFunctional(lambda rho: float("nan"))
        with pytest.raises(ValueError):
            frechet_gradient(F, random_density(2, rng))


class TestBasisAndValidation:
    def test_hermitian_basis_orthonormal(self):
        for n in (2, 3, 4):
            basis = hermitian_basis(n)
            assert len(basis) == n * n - 1
            for j, Bj in enumerate(basis):
                assert abs(np.trace(Bj)) < 1e-14
                assert np.allclose(Bj, dag(Bj))
                for k, Bk in enumerate(basis):
                    want = 1.0 if j == k else 0.0
                    assert np.trace(Bj @ Bk).real == pytest.approx(want, abs=1e-13)

    def test_density_validation(self):
        with pytest.raises(ValueError):
            as_density(np.diag([1.2, -0.2]))
        with pytest.raises(ValueError):
            as_density(np.array([[0.5, 0.1], [0.3, 0.5]]))  # not Hermitian
        with pytest.raises(ValueError):
            as_density(np.diag([0.7, 0.7]))  # trace 1.4
        as_density(np.diag([0.5, 0.5]))

    def test_operator_validation(self):
        with pytest.raises(ValueError):
            as_operator(np.array([[np.inf, 0], [0, 1]]))
        with pytest.raises(ValueError):
            as_operator(np.ones((2, 3)))

    def test_tangent_validation(self):
        with pytest.raises(ValueError):
            as_tangent(np.diag([1.0, 0.0]))  # not traceless
        as_tangent(SIGMA_X)

    def test_json_round_trip(self, rng):
        A = random_hermitian(3, rng) + 1j * random_hermitian(3, rng)
        obj = operator_to_json(A)
        assert json.loads(json.dumps(obj)) == obj
        back = operator_from_json(obj)
        assert np.allclose(back, A, atol=0)

    def test_json_density_validation(self):
        obj = operator_to_json(np.diag([0.9, 0.4]))
        with pytest.raises(ValueError):
            operator_from_json(obj, density=True)
        obj = operator_to_json(np.diag([0.6, 0.4]))
        rho = operator_from_json(obj, density=True)
        assert np.allclose(rho, np.diag([0.6, 0.4]))
