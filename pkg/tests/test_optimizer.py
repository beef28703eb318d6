"""Тесты семейства алгоритмов (delta, eta) и оценок предела скорости."""

import itertools

import numpy as np
import pytest
from numpy.testing import assert_allclose

from open_krotov.dynamics import (
    ControlField,
    TimeGrid,
    Trajectory,
    propagate_costate,
    propagate_state,
)
from open_krotov.errors import (
    DimensionMismatchError,
    InvalidStateError,
    MonotonicityError,
    ParameterRangeError,
)
from open_krotov.liouville import DensityMatrix, vec
from open_krotov.optimizer import (
    ControlProblem,
    OptimizationResult,
    OptimizerConfig,
    closed_optimize,
    decompose_history,
    delta_j_decomposition,
    evaluate_cost,
    hamiltonian_samples,
    krotov_step,
    optimize,
    qsl_time,
)
from open_krotov.thermal import ThermalModel

GRID_VALUES = (0.25, 0.5, 1.0, 1.5, 2.0)
SIGMA_X = np.array([[0.0, 1.0], [1.0, 0.0]])


def _assert_monotone(result: OptimizationResult) -> None:
    j_values = [result.initial.J] + [r.J for r in result.records]
    for before, after in itertools.pairwise(j_values):
        assert after >= before - 1e-9 * max(1.0, abs(before))


class TestOptimizerConfig:
    @pytest.mark.parametrize(('delta', 'eta'), [(3.0, 1.0), (1.0, -0.1), (2.5, 2.5)])
    def test_parameters_outside_range(self, delta: float, eta: float):
        with pytest.raises(ParameterRangeError, match=r'\[0, 2\]'):
            OptimizerConfig(delta=delta, eta=eta)

    def test_default_rule_is_monotone(self):
        config = OptimizerConfig()
        assert config.update_rule == 'monotone'
        assert config.field_update_sign == 1

    def test_named_members(self):
        tannor = OptimizerConfig.tannor(k_max=5)
        zhu_rabitz = OptimizerConfig.zhu_rabitz()
        assert (tannor.delta, tannor.eta, tannor.k_max) == (1.0, 0.0, 5)
        assert (zhu_rabitz.delta, zhu_rabitz.eta) == (1.0, 1.0)

    def test_schedule_repeats_last_pair(self):
        config = OptimizerConfig(schedule=((1.0, 1.0), (1.5, 0.5)))
        assert config.parameters_for(1) == (1.0, 1.0)
        assert config.parameters_for(2) == (1.5, 0.5)
        assert config.parameters_for(50) == (1.5, 0.5)

    def test_schedule_entries_are_validated(self):
        with pytest.raises(ParameterRangeError, match='schedule'):
            OptimizerConfig(schedule=((1.0, 1.0), (1.0, 2.1)))

    @pytest.mark.parametrize(
        'kwargs',
        [
            {'k_max': 0},
            {'delta_tol': -1.0},
            {'initial_field_amplitude': -0.1},
            {'field_update_sign': 0},
            {'update_rule': 'midpoint'},
            {'schedule': ()},
        ],
    )
    def test_invalid_settings(self, kwargs: dict):
        with pytest.raises(ParameterRangeError):
            OptimizerConfig(**kwargs)


class TestControlProblem:
    def test_open_problem(self, thermal_problem: ControlProblem):
        assert not thermal_problem.is_closed
        assert thermal_problem.initial_vector.shape == (4,)
        # tr(tau^2) = 0.4^2 + 0.6^2
        assert thermal_problem.fidelity(thermal_problem.target_vector) == pytest.approx(0.52**2)

    def test_closed_problem_normalizes_kets(self):
        problem = ControlProblem.closed_system(
            np.diag([1.0, -1.0]),
            SIGMA_X,
            [2.0, 0.0],
            [0.0, 3.0j],
            1e-3,
            TimeGrid(1.0, 10),
        )
        assert problem.is_closed
        assert_allclose(problem.initial_vector, [1.0, 0.0])
        assert problem.fidelity(np.array([0.0, 1.0])) == pytest.approx(1.0)

    def test_mixed_state_kinds(self):
        with pytest.raises(InvalidStateError):
            ControlProblem(
                np.eye(2),
                SIGMA_X,
                (),
                DensityMatrix.maximally_mixed(2),
                np.array([1.0, 0.0]),
                1e-3,
                TimeGrid(1.0, 10),
            )

    def test_kets_with_dissipation(self):
        with pytest.raises(InvalidStateError):
            ControlProblem(
                np.eye(2),
                SIGMA_X,
                (np.array([[0.0, 1.0], [0.0, 0.0]]),),
                np.array([1.0, 0.0]),
                np.array([0.0, 1.0]),
                1e-3,
                TimeGrid(1.0, 10),
            )

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatchError):
            ControlProblem.open_system(
                np.eye(3),
                np.eye(3),
                (),
                DensityMatrix.maximally_mixed(2),
                DensityMatrix.maximally_mixed(2),
                1e-3,
                TimeGrid(1.0, 10),
            )

    @pytest.mark.parametrize('alpha', [0.0, -1e-3, float('inf')])
    def test_alpha_must_be_positive(self, alpha: float):
        with pytest.raises(ParameterRangeError):
            ControlProblem.open_system(
                np.eye(2),
                SIGMA_X,
                (),
                DensityMatrix.maximally_mixed(2),
                DensityMatrix.maximally_mixed(2),
                alpha,
                TimeGrid(1.0, 10),
            )


class TestCost:
    def test_zero_field_cost_is_fidelity(self, small_thermal_problem: ControlProblem):
        grid = small_thermal_problem.grid
        record = evaluate_cost(small_thermal_problem, ControlField.zeros(grid))
        assert record.k == 0
        assert record.fluence == 0.0
        assert record.J == pytest.approx(record.fidelity)

    def test_penalty_uses_fluence(self, small_thermal_problem: ControlProblem):
        grid = small_thermal_problem.grid
        record = evaluate_cost(small_thermal_problem, ControlField.constant(grid, 2.0))
        assert record.fluence == pytest.approx(4.0 * grid.t_final)
        assert record.J == pytest.approx(record.fidelity - 1e-3 * record.fluence)

    def test_stationary_start(self, bath_model: ThermalModel):
        gibbs = bath_model.gibbs_state()
        grid = TimeGrid(2.0, 100)
        problem = ControlProblem.open_system(
            bath_model.h0,
            bath_model.mu_prime,
            bath_model.lindblad_ops,
            gibbs,
            gibbs,
            1e-3,
            grid,
        )
        record = evaluate_cost(problem, ControlField.zeros(grid))
        assert record.J == pytest.approx(0.2704, abs=1e-12)
        assert record.fidelity == pytest.approx(0.2704, abs=1e-12)
        free = propagate_state(problem.generator, np.zeros(grid.n_nodes), vec(gibbs), grid)
        assert_allclose(free.final, problem.initial_vector, atol=1e-12)

    def test_closed_and_open_costs_agree(self, rng: np.random.Generator):
        grid = TimeGrid(4.0, 400)
        sigma_z = np.diag([1.0, -1.0])
        closed = ControlProblem.closed_system(
            sigma_z,
            SIGMA_X,
            [1.0, 0.0],
            [0.0, 1.0],
            1e-3,
            grid,
        )
        open_ = ControlProblem.open_system(
            sigma_z,
            SIGMA_X,
            (),
            DensityMatrix.from_ket([1.0, 0.0]),
            DensityMatrix.from_ket([0.0, 1.0]),
            1e-3,
            grid,
        )
        field = ControlField.random(grid, 0.5, rng)
        closed_record = evaluate_cost(closed, field)
        open_record = evaluate_cost(open_, field)
        # <<tau|rho>> of a pure target is the squared ket overlap
        assert open_record.fidelity == pytest.approx(closed_record.fidelity**2, abs=1e-12)
        assert open_record.fluence == pytest.approx(closed_record.fluence, rel=1e-14)

    def test_field_on_wrong_grid(
self, small_thermal_problem: ControlProblem):
        with pytest.raises(DimensionMismatchError):
            evaluate_cost(small_thermal_problem, ControlField.zeros(TimeGrid(1.0, 7)))


class TestKrotovStep:
    def test_single_step_improves_cost(self, small_thermal_problem: ControlProblem):
        problem = small_thermal_problem
        grid = problem.grid
        guess = ControlField.random(grid, 0.01, np.random.default_rng(1))
        state = propagate_state(problem.generator, guess, problem.initial_vector, grid)
        costate = propagate_costate(problem.generator, guess, problem.project(state.final), grid)

        step = krotov_step(problem, guess, costate, OptimizerConfig(delta=1.0, eta=1.0))

        j_prev = evaluate_cost(problem, guess).J
        assert step.record.k == 1
        assert step.record.delta_J == pytest.approx(step.record.J - j_prev, abs=1e-15)
        assert step.record.delta_J > 0.0
        assert step.field.n_nodes == grid.n_nodes
        assert_allclose(step.costate.final, problem.project(step.state.final))

    def test_zero_parameters_keep_the_field(self, small_thermal_problem: ControlProblem):
        problem = small_thermal_problem
        grid = problem.grid
        guess = ControlField.random(grid, 0.01, np.random.default_rng(2))
        state = propagate_state(problem.generator, guess, problem.initial_vector, grid)
        costate = propagate_costate(problem.generator, guess, problem.project(state.final), grid)

        step = krotov_step(problem, guess, costate, OptimizerConfig(delta=0.0, eta=0.0))

        assert_allclose(step.field.xi, guess.xi_tilde, rtol=0, atol=0)
        assert_allclose(step.field.xi_tilde, step.field.xi, rtol=0, atol=0)
        assert step.record.delta_J == pytest.approx(0.0, abs=1e-14)

    @pytest.mark.parametrize(('delta', 'eta'), [(1.5, 0.5), (0.5, 1.5)])
    def test_last_node_drives_no_interval(
        self,
        small_thermal_problem: ControlProblem,
        delta: float,
        eta: float,
    ):
        problem = small_thermal_problem
        grid = problem.grid
        guess = ControlField.random(grid, 0.05, np.random.default_rng(4))
        state = propagate_state(problem.generator, guess, problem.initial_vector, grid)
        costate = propagate_costate(problem.generator, guess, problem.project(state.final), grid)

        step = krotov_step(problem, guess, costate, OptimizerConfig(delta=delta, eta=eta))

        assert step.field.xi[-1] == pytest.approx((1.0 - delta) * guess.xi_tilde[-1], abs=1e-15)
        assert step.field.xi_tilde[-1] == pytest.approx(
            (1.0 - eta) * step.field.xi[-1],
            abs=1e-15,
        )

    def test_costate_must_fit_problem(
self, small_thermal_problem: ControlProblem):
        grid = small_thermal_problem.grid
        too_short = Trajectory(np.zeros((grid.n_nodes, 2), dtype=complex), grid)
        with pytest.raises(DimensionMismatchError):
            krotov_step(
                small_thermal_problem,
                ControlField.zeros(grid),
                too_short,
                OptimizerConfig(),
            )


class TestOptimize:
    @pytest.mark.parametrize(('delta', 'eta'), [(1.5, 1.5), (1.0, 1.0)])
    def test_monotone_on_thermal_problem(
        self,
        thermal_problem: ControlProblem,
        delta: float,
        eta: float,
    ):
        config = OptimizerConfig(delta=delta, eta=eta, k_max=10, delta_tol=0.0, seed=0)
        result = optimize(thermal_problem, config)
        _assert_monotone(result)
        assert result.final_record.J > result.initial.J

    @pytest.mark.parametrize('update_rule', ['node', 'monotone'])
    def test_reproducible_for_equal_seeds(
        self,
        small_thermal_problem: ControlProblem,
        update_rule: str,
    ):
        config = OptimizerConfig(k_max=3, seed=11, update_rule=update_rule)
        first = optimize(small_thermal_problem, config)
        second = optimize(small_thermal_problem, config)
        assert first.records == second.records
        assert_allclose(first.field.xi, second.field.xi, rtol=0, atol=0)

    def test_converges_on_tolerance(self, small_thermal_problem: ControlProblem):
        config = OptimizerConfig(delta=1.0, eta=1.0, k_max=100, delta_tol=1e-3)
        result = optimize(small_thermal_problem, config)
        assert result.iterations < 100
        assert result.final_record.delta_J < 1e-3

    def test_schedule_and_history(self, small_thermal_problem: ControlProblem):
        config = OptimizerConfig(k_max=3, delta_tol=0.0, schedule=((1.0, 1.0), (1.5, 0.5)))
        result = optimize(small_thermal_problem, config, store_history=True)
        assert [s.k for s in result.history] == [0, 1, 2, 3]
        assert [(s.delta, s.eta) for s in result.history[1:]] == [
            (1.0, 1.0),
            (1.5, 0.5),
            (1.5, 0.5),
        ]
        assert result.history[0].record == result.initial

    def test_wrong_sign_is_detected(self, small_thermal_problem: ControlProblem):
        config = OptimizerConfig(delta=1.0, eta=1.0, k_max=5, field_update_sign=-1)
        with pytest.raises(MonotonicityError) as excinfo:
            optimize(small_thermal_problem, config)
        assert excinfo.value.j_new < excinfo.value.j_prev

    def test_modes_are_not_interchangeable(
        self,
        small_thermal_problem: ControlProblem,
        qubit_flip_problem: ControlProblem,
    ):
        with pytest.raises(InvalidStateError):
            optimize(qubit_flip_problem, OptimizerConfig(k_max=1))
        with pytest.raises(InvalidStateError):
            closed_optimize(small_thermal_problem, OptimizerConfig(k_max=1))

    @pytest.mark.slow
    @pytest.mark.parametrize(('delta', 'eta'), list(itertools.product(GRID_VALUES, GRID_VALUES)))
    @pytest.mark.parametrize('seed', range(5))
    def test_monotone_over_parameter_grid(
        self,
        thermal_problem: ControlProblem,
        delta: float,
        eta: float,
        seed: int,
    ):
        config = OptimizerConfig(delta=delta, eta=eta, k_max=100, delta_tol=0.0, seed=seed)
        _assert_monotone(optimize(thermal_problem, config))

    @pytest.mark.slow
    @pytest.mark.parametrize(('delta', 'eta'), list(itertools.product((0.25, 0.5), GRID_VALUES)))
    @pytest.mark.parametrize('seed', range(5))
    def test_node_rule_monotone_for_small_delta(
        self,
        thermal_problem: ControlProblem,
        delta: float,
        eta: float,
        seed: int,
    ):
        config = OptimizerConfig(
            delta=delta,
            eta=eta,
            k_max=100,
            delta_tol=0.0,
            seed=seed,
            update_rule='node',
        )
        _assert_monotone(optimize(thermal_problem, config))


class TestDecomposition:
    @pytest.mark.parametrize('update_rule', ['node', 'monotone'])
    def test_identity_and_signs(self, small_thermal_problem: ControlProblem, update_rule: str):
        config = OptimizerConfig(
            delta=1.5,
            eta=1.5,
            k_max=4,
            delta_tol=0.0,
            update_rule=update_rule,
        )
        result = optimize(small_thermal_problem, config, store_history=True)
        decomposition = decompose_history(small_thermal_problem, result)
        assert len(decomposition) == result.iterations
        dt = small_thermal_problem.grid.dt
        for item, snapshot in zip(decomposition, result.history[1:], strict=True):
            scale = max(1.0, float(np.max(np.abs(snapshot.field.xi))))
            assert item.terms_nonnegative
            assert abs(item.difference) <= 10.0 * dt * scale**2

    @pytest.mark.parametrize(('delta', 'eta'), [(1.5, 1.5), (1.0, 0.5), (2.0, 2.0)])
    def test_monotone_rule_split_is_exact(
        self,
        small_thermal_problem: ControlProblem,
        delta: float,
        eta: float,
    ):
        config = OptimizerConfig(delta=delta, eta=eta, k_max=4, delta_tol=0.0, seed=5)
        result = optimize(small_thermal_problem, config, store_history=True)
        for item in decompose_history(small_thermal_problem, result):
            assert item.terms_nonnegative
            assert abs(item.difference) <= 1e-8

    def test_zero_parameter_drops_its_term(
self, small_thermal_problem: ControlProblem):
        config = OptimizerConfig.tannor(k_max=2, delta_tol=0.0)
        result = optimize(small_thermal_problem, config, store_history=True)
        item = delta_j_decomposition(small_thermal_problem, result.history[1], result.history[2])
        assert item.eta_term == 0.0
        assert item.delta_term >= 0.0

    def test_requires_history(self, small_thermal_problem: ControlProblem):
        result = optimize(small_thermal_problem, OptimizerConfig(k_max=1))
        with pytest.raises(InvalidStateError):
            decompose_history(small_thermal_problem, result)

    def test_snapshots_must_be_consecutive(self, small_thermal_problem: ControlProblem):
        config = OptimizerConfig(k_max=2, delta_tol=0.0)
        result = optimize(small_thermal_problem, config, store_history=True)
        with pytest.raises(ParameterRangeError):
            delta_j_decomposition(small_thermal_problem, result.history[0], result.history[2])


class TestClosedSystem:
    def test_fidelity_grows_monotonically(self, qubit_flip_problem: ControlProblem):
        config = OptimizerConfig(delta=1.0, eta=1.0, k_max=10, delta_tol=0.0)
        result = closed_optimize(qubit_flip_problem, config)
        _assert_monotone(result)
        assert result.final_record.fidelity > result.initial.fidelity

    @pytest.mark.parametrize('strength', [1.0, 1.5, 2.0])
    def test_default_rule_monotone_on_qubit_flip(
        self,
        qubit_flip_problem: ControlProblem,
        strength: float,
    ):
        problem = qubit_flip_problem.with_grid(TimeGrid(4.0, 400))
        config = OptimizerConfig(delta=strength, eta=strength, k_max=5, delta_tol=0.0)
        result = closed_optimize(problem, config)
        _assert_monotone(result)
        assert result.final_record.fidelity > result.initial.fidelity

    @pytest.mark.slow
    def test_qubit_flip(
self, qubit_flip_problem: ControlProblem):
        config = OptimizerConfig(delta=1.0, eta=1.0, k_max=100)
        result = closed_optimize(qubit_flip_problem, config)
        _assert_monotone(result)
        assert result.final_record.fidelity >= 0.99
        report = qsl_time(
            qubit_flip_problem.initial_state,
            qubit_flip_problem.target,
            hamiltonian_samples(qubit_flip_problem, result.field),
            qubit_flip_problem.grid,
        )
        assert report.t_qsl <= qubit_flip_problem.grid.t_final


class TestQuantumSpeedLimit:
    def test_constant_sigma_x_reference(self):
        grid = TimeGrid(1.0, 100)
        hamiltonians = np.repeat(SIGMA_X[None, :, :], grid.n_nodes, axis=0)
        report = qsl_time([1.0, 0.0], [0.0, 1.0], hamiltonians, grid)
        assert report.fubini_study_distance == pytest.approx(np.pi / 2, abs=1e-12)
        assert report.avg_energy == pytest.approx(1.0, abs=1e-12)
        assert report.avg_std_dev == pytest.approx(1.0, abs=1e-12)
        assert report.t_qsl == pytest.approx(np.pi / 2, abs=1e-10)
        assert_allclose(report.ground_energy_curve, -1.0, atol=1e-12)

    def test_identical_states(self):
        grid = TimeGrid(1.0, 10)
        hamiltonians = np.repeat(SIGMA_X[None, :, :], grid.n_nodes, axis=0)
        assert qsl_time([1.0, 0.0], [1.0j, 0.0], hamiltonians, grid).t_qsl == 0.0

    def test_vanishing_hamiltonian(self):
        grid = TimeGrid(1.0, 10)
        report = qsl_time([1.0, 0.0], [0.0, 1.0], np.zeros((grid.n_nodes, 2, 2)), grid)
        assert report.t_qsl == float('inf')

    def test_sample_shape(self):
        with pytest.raises(DimensionMismatchError):
            qsl_time([1.0, 0.0], [0.0, 1.0], np.zeros((3, 2, 2)), TimeGrid(1.0, 10))

    def test_hamiltonian_samples(self, qubit_flip_problem: ControlProblem):
        grid = qubit_flip_problem.grid
        samples = hamiltonian_samples(qubit_flip_problem, ControlField.constant(grid, 0.5))
        assert samples.shape == (grid.n_nodes, 2, 2)
        assert_allclose(samples[0], np.diag([1.0, -1.0]) + 0.5 * SIGMA_X)
