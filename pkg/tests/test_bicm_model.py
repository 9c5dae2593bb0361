import time

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import minimize
from scipy.special import expit

from conftest import make_network
from bicm_model import (
    BicmModel,
    BicmSolver,
    analytic_motif_mean,
    matrix_log_probability,
    write_model,
)
from exceptions import ConfigError, ConvergenceError, DegreeSequenceError, PanelDataError
from rca_network import DegreeSequences, degrees

TOLERANCE = 1e-8


def sequences(d, u):
    return DegreeSequences(np.array(d, dtype=np.int64), np.array(u, dtype=np.int64))


def test_degree_regular_network_has_uniform_probability():
    model = BicmSolver().fit(sequences([2, 2, 2, 2], [2, 2, 2, 2]))
    np.testing.assert_allclose(model.probabilities, 0.5, atol=1e-8)


def test_full_network_is_deterministic():
    model = BicmSolver().fit(sequences([3, 3], [2, 2, 2]))
    assert (model.probabilities == 1.0).all()
    assert model.is_deterministic
    assert model.method == "deterministic"
    assert model.iterations == 0


def test_empty_and_full_nodes_are_peeled():
    matrix = [[0, 0, 0, 0], [1, 1, 1, 1], [1, 0, 1, 0], [0, 1, 1, 0]]
    model = BicmSolver().fit_network(make_network(matrix))
    p = model.probabilities
    assert (p[0] == 0).all() and (p[1] == 1).all()
    assert model.x[0] == 0 and np.isinf(model.x[1])
    # sector 2 is linked to every country with links
    assert (p[1:, 2] == 1).all()
    np.testing.assert_allclose(p.sum(axis=1), [0, 4, 2, 2], atol=TOLERANCE)
    np.testing.assert_allclose(p.sum(axis=0), [2, 2, 3, 1], atol=TOLERANCE)


def test_forced_cells_split_the_fit():
    # rows 0 and 1 must cover sectors 0 and 1; rows 2 and 3 can never reach sectors 2 and 3
    matrix = [[1, 1, 1, 0], [1, 1, 0, 1], [1, 0, 0, 0], [0, 1, 0, 0]]
    model = BicmSolver().fit_network(make_network(matrix))
    p = model.probabilities
    assert (p[:2, :2] == 1).all()
    assert (p[2:, 2:] == 0).all()
    np.testing.assert_allclose(p[:2, 2:], 0.5, atol=1e-8)
    np.testing.assert_allclose(p[2:, :2], 0.5, atol=1e-8)
    assert model.residual <= TOLERANCE


def test_fit_matches_generic_optimizer():
    d = np.array([2, 1])
    u = np.array([1, 1, 1])

    def negative_log_likelihood(params):
        theta, eta = params[:2], params[2:]
        s = theta[:, None] + eta[None, :]
        return -(d @ theta + u @ eta - np.logaddexp(0.0, s).sum())

    def gradient(params):
        theta, eta = params[:2], params[2:]
        p = expit(theta[:, None] + eta[None, :])
        return -np.concatenate([d - p.sum(axis=1), u - p.sum(axis=0)])

    optimum = minimize(negative_log_likelihood, np.zeros(5), jac=gradient, method="BFGS",
                       options={"gtol": 1e-12, "maxiter": 10_000})
    expected = expit(optimum.x[:2, None] + optimum.x[None, 2:])

    model = BicmSolver().fit(sequences(d, u))
    np.testing.assert_allclose(model.probabilities, expected, atol=1e-6)
    np.testing.assert_allclose(model.probabilities, [[2 / 3] * 3, [1 / 3] * 3], atol=1e-8)


def test_probabilities_follow_multipliers():
    model = BicmSolver().fit(sequences([3, 2, 1, 2], [2, 3, 1, 2]))
    xy = np.outer(model.x, model.y)
    np.testing.assert_allclose(model.probabilities, xy / (1 + xy), rtol=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(3, 21), st.integers(3, 31), st.floats(0.2, 0.8))
def test_fitted_degrees_match_observed(seed, rows, cols, density):
    matrix = (np.random.default_rng(seed).random((rows, cols)) < density).astype(np.int64)
    net = make_network(matrix)
    started = time.perf_counter()
    model = BicmSolver().fit_network(net)
    assert time.perf_counter() - started < 1.0
    observed = degrees(net)
    assert np.abs(model.expected_diversification - observed.diversification).max() <= TOLERANCE
    assert np.abs(model.expected_ubiquity - observed.ubiquity).max() <= TOLERANCE
    assert model.residual <= TOLERANCE
    assert ((model.probabilities >= 0) & (model.probabilities <= 1)).all()


def test_fit_is_deterministic():
    seq = sequences([3, 2, 1, 2], [2, 3, 1, 2])
    first, second = BicmSolver().fit(seq), BicmSolver().fit(seq)
    np.testing.assert_array_equal(first.probabilities, second.probabilities)


@pytest.mark.parametrize("d, u", [
    ([2, 1], [1, 1]),       # sums differ
    ([4, 0], [2, 1, 1]),    # degree larger than the other layer
    ([-1, 2], [1, 0]),
])
def test_inconsistent_degrees_raise(d, u):
    with pytest.raises(DegreeSequenceError):
        BicmSolver().fit(sequences(d, u))


def test_unrealisable_degrees_raise():
    # two sectors present in both countries, but only one country has links
    with pytest.raises(DegreeSequenceError):
        BicmSolver().fit(sequences([2, 0], [2, 0]))


def test_non_convergence_reports_residual():
    with pytest.raises(ConvergenceError) as info:
        BicmSolver(max_iterations=1).fit(sequences([2, 1], [1, 1, 1]), year=2004)
    assert info.value.residual > TOLERANCE
    assert info.value.year == 2004
    assert info.value.exit_code == 3


def test_bad_damping_is_a_config_error():
    with pytest.raises(ConfigError):
        BicmSolver(damping=0.0)


def test_log_probability_of_fair_coins():
    model = BicmModel.from_probabilities(np.full((2, 2), 0.5))
    net = make_network([[1, 0], [0, 1]], countries=model.countries, sectors=model.sectors)
    assert matrix_log_probability(model, net) == pytest.approx(np.log(1 / 16), abs=1e-12)


def test_log_probability_of_forced_network():
    model = BicmSolver().fit(sequences([3, 3], [2, 2, 2]))
    assert matrix_log_probability(model, make_network(np.ones((2, 3)))) == 0.0
    assert matrix_log_probability(model, make_network([[1, 1, 0], [1, 1, 1]])) == -np.inf


def test_log_probability_matches_product(rng):
    p = rng.uniform(0.05, 0.95, size=(3, 4))
    matrix = rng.integers(0, 2, size=(3, 4))
    model = BicmModel.from_probabilities(p)
    product = 1.0
    for c in range(3):
        for s in range(4):
            product *= p[c, s] if matrix[c, s] else 1 - p[c, s]
    assert matrix_log_probability(model, make_network(matrix)) == pytest.approx(np.log(product), rel=1e-12)


def test_log_probability_shape_mismatch():
    with pytest.raises(PanelDataError):
        matrix_log_probability(BicmModel.from_probabilities(np.full((2, 2), 0.5)), make_network(np.ones((2, 3))))


def test_observed_network_maximises_likelihood():
    matrix = np.array([[1, 1, 0, 1], [0, 1, 0, 0], [1, 0, 1, 1], [0, 1, 1, 0]])
    net = make_network(matrix)
    model = BicmSolver().fit_network(net)
    best = matrix_log_probability(model, net)
    for layer in ("x", "y"):
        values = getattr(model, layer)
        for i in range(len(values)):
            for factor in (0.99, 1.01):
                x, y = model.x.copy(), model.y.copy()
                (x if layer == "x" else y)[i] *= factor
                assert matrix_log_probability(model.with_multipliers(x, y), net) <= best


def test_analytic_mean_closed_forms():
    assert analytic_motif_mean(BicmModel.from_probabilities(np.ones((3, 5)))) == 15.0
    assert analytic_motif_mean(BicmModel.from_probabilities(np.zeros((3, 5)))) == 0.0


def test_from_probabilities_rejects_out_of_range():
    with pytest.raises(PanelDataError):
        BicmModel.from_probabilities(np.array([[0.5, 1.2]]))


def test_write_model(tmp_path):
    model = BicmSolver().fit(sequences([2, 1], [1, 1, 1]), year=2001, countries=["A", "B"],
                             sectors=["x", "y", "z"])
    path = write_model(model, tmp_path, "EU15")
    assert path.name == "bicm_2001_EU15.csv"
    frame = model.to_frame()
    assert frame["layer"].tolist() == ["country"] * 2 + ["sector"] * 3 + ["diagnostic"] * 2
    np.testing.assert_allclose(frame["expected_degree"].iloc[:5], [2, 1, 1, 1, 1], atol=TOLERANCE)
