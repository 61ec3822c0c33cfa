import csv

import numpy as np
import pytest
from scipy.linalg import expm

from koopnet.dictionary import coordinate_dictionary
from koopnet.graph import Digraph
from koopnet.learners import (ExtendedPredictor, GeneratorFamily, NetworkKoopmanModel, OperatorFamily, medmd_fit,
                              mgedmd_fit)
from koopnet.predict import (LOG_FLOOR, predict, predict_baseline, predict_generator, predict_operator,
                             prediction_error, trajectory_to_csv)
from koopnet.systems import integrate
from test_learners import A1, A2, G21, affine_dicts, linear_chain

FULL = np.block([[A1, np.zeros((2, 2))], [G21, A2]])


def _decoupled_generator_model(L1, L2):
    d = coordinate_dictionary(2)
    fams = [GeneratorFamily(1, L1, {}, d), GeneratorFamily(2, L2, {}, d)]
    return NetworkKoopmanModel("mgedmd", Digraph(2), (2, 2), fams)


def test_generator_rollout_linear_network_exact():
    model = mgedmd_fit(linear_chain(), affine_dicts(), 40, seed=0)
    x0 = np.array([0.5, -0.3, 0.2, 0.8])
    pred = predict_generator(model, x0, 0.5, 0.05)
    for k, t in enumerate(pred.times):
        np.testing.assert_allclose(pred.states[k], expm(FULL * t) @ x0, atol=1e-7)
    assert not pred.diverged.any()


def test_generator_decoupled_blocks_evolve_independently():
    model = _decoupled_generator_model(A1, A2)
    x0 = np.array([1.0, 0.0, -0.5, 0.5])
    pred = predict_generator(model, x0, 1.0, 0.1)
    np.testing.assert_allclose(pred.states[-1, :2], expm(A1) @ x0[:2], atol=1e-9)
    np.testing.assert_allclose(pred.states[-1, 2:], expm(A2) @ x0[2:], atol=1e-9)


def test_zero_horizon_returns_initial_state():
    model = mgedmd_fit(linear_chain(), affine_dicts(), 20, seed=0)
    x0 = np.array([0.1, 0.2, 0.3, 0.4])
    pred = predict_generator(model, x0, 0.0, 0.1)
    assert pred.states.shape == (1, 4)
    np.testing.assert_array_equal(pred.states[0], x0)
    assert np.all(prediction_error(pred.states, pred.states, (2, 2)) == LOG_FLOOR)


def test_lifted_coordinates_match_reported_states():
    model = mgedmd_fit(linear_chain(), affine_dicts(), 20, seed=0)
    x0 = np.random.default_rng(0).uniform(-1, 1, (4, 3))
    pred = predict_generator(model, x0, 0.3, 0.1, keep_lifted=True)
    for Z, X in zip(pred.lifted, pred.states):
        np.testing.assert_array_equal(Z[[0, 1, 3, 4]], X)


def test_frozen_coupling_close_for_small_steps():
    model = mgedmd_fit(linear_chain(), affine_dicts(), 40, seed=0)
    x0 = np.array([0.5, -0.3, 0.2, 0.8])
    a = predict_generator(model, x0, 0.5, 0.01)
    b = predict_generator(model, x0, 0.5, 0.01, coupling="frozen")
    assert 0 < np.max(np.abs(a.states - b.states)) < 1e-2
    with pytest.raises(ValueError):
        predict_generator(model, x0, 0.5, 0.01, coupling="other")


def test_generator_against_operator_from_exponential():
    L1, L2 = A1, A2
    gen = _decoupled_generator_model(L1, L2)
    dt = 0.05
    d = coordinate_dictionary(2)
    ops = [OperatorFamily(1, expm(dt * L1), {}, d, dt), OperatorFamily(2, expm(dt * L2), {}, d, dt)]
    op = NetworkKoopmanModel("medmd", Digraph(2), (2, 2), ops, dt=dt)
    x0 = np.array([0.3, 0.1, -0.2, 0.6])
    a = predict_generator(gen, x0, 10 * dt, dt).states
    b = predict_operator(op, x0, 10).states
    assert np.max(np.abs(a - b)) < 10 * dt ** 2


def test_operator_without_coupling_is_linear_iteration():
    d = coordinate_dictionary(2)
    K = expm(0.1 * A1)
    model = NetworkKoopmanModel("medmd", Digraph(1), (2,), [OperatorFamily(1, K, {}, d, 0.1)], dt=0.1)
    x0 = np.array([1.0, -1.0])
    pred = predict_operator(model, x0, 4)
    np.testing.assert_allclose(pred.states[4], np.linalg.matrix_power(K, 4) @ x0, atol=1e-14)


def test_operator_one_step_by_definition():
    rng = np.random.default_rng(1)
    d = affine_dicts()[0]
    K0 = [rng.normal(size=(3, 3)) for _ in range(2)]
    K21 = rng.normal(size=(3, 6))
    fams = [OperatorFamily(1, K0[0], {}, d, 0.1), OperatorFamily(2, K0[1], {1: K21}, d, 0.1)]
    model = NetworkKoopmanModel("medmd", Digraph.from_arcs(2, [(1, 2)]), (2, 2), fams, dt=0.1)
    x0 = rng.uniform(-1, 1, 4)
    z1, z2 = d(x0[:2]), d(x0[2:])
    expected2 = K0[1] @ z2 + K21 @ np.kron(z1[:2], z2)
    pred = predict_operator(model, x0, 1, keep_lifted=True)
    np.testing.assert_allclose(pred.lifted[1][3:, 0], expected2, atol=1e-14)
    np.testing.assert_allclose(pred.states[1][:2], (K0[0] @ z1)[:2], atol=1e-14)


def test_operator_linear_network_many_steps():
    model = medmd_fit(linear_chain(), affine_dicts(), 60, 0.1, seed=3)
    x0 = np.array([0.5, -0.3, 0.2, 0.8])
    pred = predict_operator(model, x0, 10)
    np.testing.assert_allclose(pred.states[-1], expm(FULL) @ x0, atol=1e-8)


def test_divergence_guard_flags_and_gives_infinite_error():
    d = coordinate_dictionary(2)
    fast = GeneratorFamily(1, 60.0 * np.eye(2), {}, d)
    model = NetworkKoopmanModel("mgedmd", Digraph(1), (2,), [fast])
    x0 = np.array([[1.0, 0.0], [1.0, 0.0]])
    pred = predict_generator(model, x0, 1.0, 0.1)
    assert pred.diverged.tolist() == [True, False]
    assert np.isnan(pred.states[-1, :, 0]).all()
    assert np.all(pred.states[:, :, 1] == 0.0)
    err = prediction_error(np.zeros_like(pred.states), pred.states, (2,))
    assert err[0, 0] == np.inf and err[0, 1] == LOG_FLOOR


def test_baseline_divergence_guard():
    d = coordinate_dictionary(2)
    p = ExtendedPredictor((1,), 10.0 * np.eye(2), d, 0.1)
    model = NetworkKoopmanModel("edmd", Digraph(1), (2,), [p], dt=0.1)
    pred = predict_baseline(model, np.array([1.0, 1.0]), 20)
    assert pred.diverged[0]


def test_prediction_error_constant_offset():
    truth = np.zeros((5, 4))
    pred = truth.copy()
    pred[:, 3] = 0.25
    err = prediction_error(truth, pred, (2, 2))
    assert err[0] == LOG_FLOOR
    assert err[1] == pytest.approx(np.log(0.25))


def test_prediction_error_brute_force():
    rng = np.random.default_rng(2)
    truth = rng.normal(size=(30, 5, 7))
    pred = truth + rng.normal(scale=1e-3, size=truth.shape)
    dims = (2, 3)
    err = prediction_error(truth, pred, dims)
    for i, sl in enumerate([slice(0, 2), slice(2, 5)]):
        for m in range(7):
            worst = max(sum(abs(truth[k, c, m] - pred[k, c, m]) for c in range(sl.start, sl.stop))
                        for k in range(30))
            assert err[i, m] == pytest.approx(np.log(worst), rel=1e-12)


def test_prediction_error_grid_mismatch():
    with pytest.raises(ValueError, match="time grids"):
        prediction_error(np.zeros((3, 2)), np.zeros((3, 2)), (2,), np.arange(3) * 0.1, np.arange(3) * 0.2)
    with pytest.raises(ValueError, match="shape"):
        prediction_error(np.zeros((3, 2)), np.zeros((4, 2)), (2,))


def test_predict_dispatch_rejects_other_grid():
    model = medmd_fit(linear_chain(), affine_dicts(), 20, 0.1, seed=0)
    with pytest.raises(ValueError, match="dt"):
        predict(model, np.zeros(4), 3, 0.05)


def test_predict_matches_truth_grid():
    sys = linear_chain()
    model = mgedmd_fit(sys, affine_dicts(), 30, seed=0)
    x0 = np.array([0.2, 0.2, -0.4, 0.1])
    pred = predict(model, x0, 20, 0.01)
    truth = integrate(sys, x0, 0.01, 20)
    np.testing.assert_allclose(pred.times, truth.times)
    assert np.all(prediction_error(truth.states, pred.states, (2, 2), truth.times, pred.times) < -15)


def test_trajectory_csv(tmp_path):
    model = mgedmd_fit(linear_chain(), affine_dicts(), 20, seed=0)
    pred = predict(model, np.array([0.1, 0.2, 0.3, 0.4]), 3, 0.1)
    path = tmp_path / "traj.csv"
    trajectory_to_csv(pred.trajectory(), (2, 2), str(path))
    with open(path) as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["t", "x_{1,1}", "x_{1,2}", "x_{2,1}", "x_{2,2}"]
    back = np.array(rows[1:], dtype=float)
    np.testing.assert_array_equal(back[:, 1:], pred.states)
    np.testing.assert_array_equal(back[:, 0], pred.times)
