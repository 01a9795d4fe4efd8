import numpy as np
import pytest

from conftest import I2, Z2, dephasing_model
from qfc.errors import NumericalError
from qfc.filtering import (
    ModelSpec,
    NoisePath,
    diffusion,
    em_step,
    generator_apply_hormander,
    generator_apply_second_order,
    heun_step,
    ito_drift,
    master_solve,
    simulate_ito,
    simulate_strat,
    strat_correction,
    strat_drift,
    trajectory_from_csv,
    trajectory_to_csv,
    wong_zakai_solve,
)
from qfc.operators import (
    SIGMA_X,
    SIGMA_Y,
    SIGMA_Z,
    random_density,
    random_hermitian,
)

ZERO3 = np.zeros(3)


def zero_policy(t, rho):
    return ZERO3


class TestCoefficients:
    def test_drift_fixes_maximally_mixed(self, qubit_model):
        w = ito_drift(qubit_model, 0.0, ZERO3, I2 / 2)
        assert np.max(np.abs(w)) < 1e-14

    def test_drift_dephasing_rate(self):
        kappa = 1.0
        model = dephasing_model(kappa)
        w = ito_drift(model, 0.0, ZERO3, 0.5 * (I2 + SIGMA_X))
        assert np.allclose(w, -(kappa ** 2 / 4.0) * SIGMA_X, atol=1e-14)

    def test_coefficients_traceless(self, qubit_model, rng):
        for _ in range(50):
            rho = random_density(2, rng)
            u = rng.uniform(-2, 2, 3)
            assert abs(np.trace(ito_drift(qubit_model, 0.0, u, rho))) < 1e-12
            assert abs(np.trace(diffusion(qubit_model, rho))) < 1e-12
            assert abs(np.trace(strat_drift(qubit_model, 0.0, u, rho))) < 1e-12

    def test_control_outside_box_rejected(self, qubit_model):
        with pytest.raises(ValueError):
            ito_drift(qubit_model, 0.0, np.array([11.0, 0, 0]), I2 / 2)

    def test_diffusion_vanishes_at_pole(self, qubit_model):
        rho = np.diag([1.0, 0.0]).astype(complex)
        assert np.max(np.abs(diffusion(qubit_model, rho))) < 1e-14

    def test_diffusion_at_center(self, qubit_model):
        sig = diffusion(qubit_model, I2 / 2)
        assert np.allclose(sig, 0.5 * SIGMA_Z, atol=1e-14)

    def test_correction_zero_at_center_and_pole(self, qubit_model):
        assert np.max(np.abs(strat_correction(qubit_model, I2 / 2))) < 1e-14
        pole = np.diag([1.0, 0.0]).astype(complex)
        assert np.max(np.abs(strat_correction(qubit_model, pole))) < 1e-14

    def test_correction_is_sigma_directional_derivative(self, qubit_model, rng):
        # c = (1/2) d sigma[rho; sigma], by finite differences
        for _ in range(20):
            rho = random_density(2, rng)
            sig = diffusion(qubit_model, rho)
            h = 1e-6
            fd = (diffusion(qubit_model, rho + h * sig)
                  - diffusion(qubit_model, rho - h * sig)) / (2 * h)
            assert np.allclose(strat_correction(qubit_model, rho), 0.5 * fd,
                               atol=1e-7)

    def test_strat_identity_random_states(self, qubit_model, rng):
        # closed-form v equals w - c on qubits and qutrits
        models = [qubit_model]
        R3 = np.diag([0.2, 0.0, -0.1]).astype(complex)
        L3 = np.diag([1.0, 2.0, 3.0]) + 0.3j * np.eye(3, k=1)
        models.append(ModelSpec(dim=3, hamiltonian=random_hermitian(3, rng),
                                controls=(), coupling=L3, dissipators=(R3,),
                                u_max=np.zeros(0)))
        worst = 0.0
        for model in models:
            m = model.n_controls
            for _ in range(500):
                rho = random_density(model.dim, rng)
                u = rng.uniform(-2, 2, m) if m else np.zeros(0)
                v = strat_drift(model, 0.0, u, rho)
                wc = ito_drift(model, 0.0, u, rho) - strat_correction(model, rho)
                worst = max(worst, float(np.abs(v - wc).max()))
        assert worst <= 1e-12

    def test_no_decoherence_term_in_strat_drift(self, qubit_model, rng):
        # v depends on rho only through K, F and the Hamiltonian part: at a
        # pure state the L rho L^dag term of w is visibly absent from v
        rho = np.diag([1.0, 0.0]).astype(complex)
        v = strat_drift(qubit_model, 0.0, ZERO3, rho)
        assert np.max(np.abs(v)) < 1e-14  # pole is stationary for v as well
        w = ito_drift(qubit_model, 0.0, ZERO3, rho)
        assert np.max(np.abs(w)) < 1e-14


class TestMasterEquation:
    def test_dephasing_closed_form(self):
        kappa = 1.0
        model = dephasing_model(kappa)
        traj = master_solve(model, 0.0, 1.0, 1e-3, lambda t: ZERO3,
                            0.5 * (I2 + SIGMA_X))
        x = np.trace(traj.final_state @ SIGMA_X).real
        assert x == pytest.approx(np.exp(-kappa ** 2 / 2.0), abs=1e-6)

    def test_pole_stationary(self, qubit_model):
        rho0 = np.diag([1.0, 0.0]).astype(complex)
        traj = master_solve(qubit_model, 0.0, 2.0, 1e-2, lambda t: ZERO3, rho0)
        assert np.max(np.abs(traj.final_state - rho0)) < 1e-10

    def test_rabi_rotation(self):
        model = ModelSpec(dim=2, hamiltonian=0.5 * np.pi * SIGMA_Y,
                          controls=(), coupling=Z2, u_max=np.zeros(0))
        traj = master_solve(model, 0.0, 1.0, 1e-3, lambda t: np.zeros(0),
                            np.diag([1.0, 0.0]).astype(complex))
        assert np.allclose(traj.final_state, np.diag([0.0, 1.0]), atol=1e-8)

    def test_trace_conserved(self, qubit_model):
        traj = master_solve(qubit_model, 0.0, 1.0, 1e-3,
                            lambda t: np.array([1.0, -0.5, 0.2]),
                            0.5 * (I2 + 0.6 * SIGMA_X))
        traces = np.einsum("kii->k", traj.states).real
        assert np.max(np.abs(traces - 1.0)) < 1e-10

    def test_positivity_guard_raises(self):
        # strong dissipation with a hopeless step size
        model = ModelSpec(dim=2, hamiltonian=Z2, controls=(),
                          coupling=Z2, dissipators=(4.0 * SIGMA_X,),
                          u_max=np.zeros(0))
        with pytest.raises(NumericalError):
            master_solve(model, 0.0, 1.0, 0.5, lambda t: np.zeros(0),
                         np.diag([1.0, 0.0]).astype(complex))


class TestNoisePath:
    def test_reproducible_from_seed(self):
        a = NoisePath.generate(0.0, 1.0, 1e-3, 99)
        b = NoisePath.generate(0.0, 1.0, 1e-3, 99)
        assert np.array_equal(a.increments, b.increments)
        assert a.n_steps == 1000

    def test_increment_statistics(self):
        path = NoisePath.generate(0.0, 10.0, 1e-3, 5)
        assert path.increments.mean() == pytest.approx(0.0, abs=3e-3)
        assert path.increments.std() == pytest.approx(np.sqrt(1e-3), rel=0.02)

    def test_bridge_refinement_agrees_at_shared_points(self):
        path = NoisePath.generate(0.0, 1.0, 4e-3, 42)
        fine = path.refine()
        assert fine.dt == pytest.approx(2e-3)
        W0, W1 = path.cumulative(), fine.cumulative()
        assert np.max(np.abs(W0 - W1[::2])) < 1e-12

    def test_json_round_trip_with_level(self):
        path = NoisePath.generate(0.0, 1.0, 4e-3, 7).refine().refine()
        back = NoisePath.from_json(path.to_json())
        assert np.array_equal(path.increments, back.increments)

    def test_negative_seed_rejected(self):
        with pytest.raises(ValueError):
            NoisePath.generate(0.0, 1.0, 1e-3, -1)


class TestStochasticIntegrators:
    def test_em_at_pole_is_deterministic_euler(self, qubit_model):
        # sigma = 0 at the pole, so the noise multiplies zero
        rho = np.diag([1.0, 0.0]).astype(complex)
        out = em_step(qubit_model, 0.0, 1e-3, ZERO3, rho, 0.7)
        euler = rho + 1e-3 * ito_drift(qubit_model, 0.0, ZERO3, rho)
        euler = euler / np.trace(euler).real
        assert np.allclose(out, euler, atol=1e-14)

    def test_same_seed_bit_identical(self, qubit_model):
        noise = NoisePath.generate(0.0, 1.0, 1e-3, 11)
        rho0 = 0.5 * (I2 + 0.6 * SIGMA_X)
        t1 = simulate_ito(qubit_model, zero_policy, rho0, noise)
        t2 = simulate_ito(qubit_model, zero_policy, rho0, noise)
        assert np.array_equal(t1.states, t2.states)
        assert np.array_equal(t1.noise, t2.noise)

    def test_em_self_convergence(self, qubit_model):
        # strong error vs a deep bridge-refined reference decreases, order 1/2
        rho0 = 0.5 * (I2 + SIGMA_X)
        errs = []
        for seed in range(16):
            path = NoisePath.generate(0.0, 1.0, 4e-3, seed)
            paths = [path, path.refine(), path.refine().refine()]
            ref_path = paths[-1]
            for _ in range(3):
                ref_path = ref_path.refine()
            ref = simulate_ito(qubit_model, zero_policy, rho0, ref_path)
            errs.append([
                np.abs(np.linalg.eigvalsh(
                    simulate_ito(qubit_model, zero_policy, rho0, p)
                    .final_state - ref.final_state)).sum()
                for p in paths])
        mean = np.mean(errs, axis=0)
        assert mean[0] > mean[1] > mean[2]

    def test_trace_and_purity_along_paths(self, qubit_model):
        # dephasing-invariant pure states stay exactly pure under the filter;
        # generic pure states fluctuate at the O(sqrt(dt)) scheme scale
        noise = NoisePath.generate(0.0, 1.0, 1e-3, 21)
        pole = np.diag([1.0, 0.0]).astype(complex)
        traj = simulate_ito(qubit_model, zero_policy, pole, noise)
        traces = np.einsum("kii->k", traj.states).real
        assert np.max(np.abs(traces - 1.0)) <= 1e-9
        purity = np.einsum("kij,kji->k", traj.states, traj.states).real
        assert purity.min() >= 1.0 - 5.0 * noise.dt
        rho0 = 0.5 * (I2 + SIGMA_X)
        traj = simulate_ito(qubit_model, zero_policy, rho0, noise)
        purity = np.einsum("kij,kji->k", traj.states, traj.states).real
        assert purity.min() >= 0.9

    def test_projection_guard_raises(self, qubit_model):
        rho = 0.5 * (I2 + 0.999 * SIGMA_X)
        with pytest.raises(NumericalError):
            em_step(qubit_model, 0.0, 1e-3, ZERO3, rho, 5.0)

    def test_heun_reduces_to_deterministic(self):
        # kappa = 0: sigma vanishes, Heun integrates the master equation
        model = ModelSpec(dim=2, hamiltonian=0.25 * SIGMA_Y, controls=(),
                          coupling=Z2, u_max=np.zeros(0))
        noise = NoisePath.generate(0.0, 1.0, 1e-3, 3)
        rho0 = 0.5 * (I2 + 0.5 * SIGMA_Z)
        traj = simulate_strat(model, lambda t, r: np.zeros(0), rho0, noise)
        ref = master_solve(model, 0.0, 1.0, 1e-3, lambda t: np.zeros(0), rho0)
        assert np.max(np.abs(traj.final_state - ref.final_state)) < 1e-5

    def test_heun_trace_conserved(self, qubit_model):
        noise = NoisePath.generate(0.0, 1.0, 1e-3, 17)
        traj = simulate_strat(qubit_model, zero_policy,
                              0.5 * (I2 + 0.6 * SIGMA_X), noise)
        traces = np.einsum("kii->k", traj.states).real
        assert np.max(np.abs(traces - 1.0)) <= 1e-9

    def test_ito_strat_consistency(self, qubit_model):
        # the two schemes approach each other on a shared refined path
        rho0 = 0.5 * (I2 + 0.6 * SIGMA_X)
        errs = []
        for seed in (8, 9, 10, 12):
            path = NoisePath.generate(0.0, 1.0, 4e-3, seed)
            row = []
            for _ in range(3):
                ito = simulate_ito(qubit_model, zero_policy, rho0, path)
                strat = simulate_strat(qubit_model, zero_policy, rho0, path)
                row.append(np.abs(ito.final_state - strat.final_state).max())
                path = path.refine()
            errs.append(row)
        mean = np.mean(errs, axis=0)
        assert mean[0] > mean[1] > mean[2]


class TestWongZakai:
    def test_zero_coupling_equals_master(self):
        model = ModelSpec(dim=2, hamiltonian=0.5 * SIGMA_Y, controls=(),
                          coupling=Z2, u_max=np.zeros(0))
        noise = NoisePath.generate(0.0, 1.0, 1e-3, 13)
        rho0 = 0.5 * (I2 + 0.4 * SIGMA_X)
        wz = wong_zakai_solve(model, lambda t, r: np.zeros(0), rho0, noise,
                              8e-3)
        ref = master_solve(model, 0.0, 1.0, 1e-3, lambda t: np.zeros(0), rho0)
        assert np.max(np.abs(wz.final_state - ref.final_state)) < 1e-12

    def test_smoothing_must_cover_mesh(self, qubit_model):
        noise = NoisePath.generate(0.0, 1.0, 1e-3, 13)
        with pytest.raises(ValueError):
            wong_zakai_solve(qubit_model, zero_policy, I2 / 2, noise, 1e-4)

    def test_converges_to_stratonovich(self, qubit_model):
        rho0 = 0.5 * (I2 + 0.6 * SIGMA_X)
        sups = []
        for seed in (2, 14, 15, 16):
            noise = NoisePath.generate(0.0, 1.0, 5e-4, seed)
            ref = simulate_strat(qubit_model, zero_policy, rho0, noise)
            row = []
            for lam in (1.6e-2, 8e-3, 4e-3):
                wz = wong_zakai_solve(qubit_model, zero_policy, rho0, noise,
                                      lam)
                row.append(np.max(np.abs(wz.states - ref.states)))
            sups.append(row)
        mean = np.mean(sups, axis=0)
        assert mean[0] > mean[1] > mean[2]


class TestGenerator:
    def test_quadratic_at_center(self, qubit_model):
        F = lambda rho: np.trace(rho @ SIGMA_Z).real ** 2
        d1 = generator_apply_second_order(qubit_model, 0.0, ZERO3, I2 / 2, F)
        d2 = generator_apply_hormander(qubit_model, 0.0, ZERO3, I2 / 2, F)
        assert d1 == pytest.approx(1.0, abs=1e-4)
        assert d2 == pytest.approx(1.0, abs=1e-4)

    def test_linear_functional(self, qubit_model, rng):
        X = random_hermitian(2, rng)
        F = lambda rho: np.trace(rho @ X).real
        rho = random_density(2, rng)
        u = rng.uniform(-1, 1, 3)
        d1 = generator_apply_second_order(qubit_model, 0.0, u, rho, F)
        w = ito_drift(qubit_model, 0.0, u, rho)
        assert d1 == pytest.approx(np.trace(w @ X).real, abs=1e-8)

    def test_constant_functional(self, qubit_model, rng):
        F = lambda rho: 1.0
        rho = random_density(2, rng)
        assert generator_apply_second_order(qubit_model, 0.0, ZERO3, rho, F) \
            == pytest.approx(0.0, abs=1e-12)
        assert generator_apply_hormander(qubit_model, 0.0, ZERO3, rho, F) \
            == pytest.approx(0.0, abs=1e-12)

    def test_forms_agree_on_random_inputs(self, qubit_model, rng):
        X = random_hermitian(2, rng)
        functionals = [
            lambda rho: np.trace(rho @ X).real,
            lambda rho: np.trace(rho @ X).real ** 2,
            lambda rho: np.trace(rho @ SIGMA_X).real ** 3,
        ]
        for _ in range(25):
            rho = random_density(2, rng)
            u = rng.uniform(-1, 1, 3)
            for F in functionals:
                d1 = generator_apply_second_order(qubit_model, 0.0, u, rho, F)
                d2 = generator_apply_hormander(qubit_model, 0.0, u, rho, F)
                assert abs(d1 - d2) / (1.0 + abs(d1)) < 1e-5


class TestTrajectoryCsv:
    def test_round_trip(self, qubit_model, tmp_path):
        noise = NoisePath.generate(0.0, 0.1, 1e-3, 30)
        traj = simulate_ito(qubit_model, zero_policy,
                            0.5 * (I2 + 0.6 * SIGMA_X), noise,
                            running_cost=lambda t, u, rho: 0.5 * u @ u + 1.0)
        path = tmp_path / "traj.csv"
        trajectory_to_csv(traj, path)
        header = path.read_text().splitlines()[0]
        assert header.startswith("t,W,u_1,u_2,u_3,J_partial,rho_re_00,rho_im_00")
        back = trajectory_from_csv(path)
        assert np.allclose(back.states, traj.states, atol=0)
        assert np.allclose(back.cost_integral, traj.cost_integral, atol=0)
        assert np.allclose(back.noise, traj.noise, atol=0)
