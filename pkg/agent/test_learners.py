import math

import numpy as np
import pytest
from numpy.testing import assert_allclose
from scipy.special import logsumexp

from tools.errors import BoundViolationError, DegenerateModelError, DimensionError, DomainError
from tools.gev_models import choice_probs, default_model, gnl, mnl, nested_logit
from tools.settings import EULER_GAMMA
from agent.learners import (bound_at_eta, bound_constant, fenchel_identity_residual,
                            fenchel_value, ftrl_mnl_closed_form, oftrl_eta, oftrl_init,
                            oftrl_error_bound, oftrl_step, optimal_eta, recency_variation,
                            recursive_update_mnl, regularizer_as_shocks, regularizer_mnl,
                            ssa_init, ssa_step)


# ---------------------------------------------------------------- SSA
def test_init_is_gradient_at_zero():
    assert_allclose(ssa_init(mnl(4), 1.0).current_x, 0.25)
    assert_allclose(ssa_init(nested_logit([[0, 1], [2, 3]], 0.3), 2.0).current_x, 0.25)
    alloc = np.array([[1.0, 0.0], [0.5, 0.5], [0.0, 1.0]])
    state = ssa_init(gnl(alloc, [0.3, 0.9]), 1.0)
    assert_allclose(state.current_x, choice_probs(state.model, np.zeros(3), 1.0))
    assert not np.allclose(state.current_x, 1 / 3)


def test_eta_must_be_positive():
    with pytest.raises(DomainError):
        ssa_init(mnl(2), 0.0)


def test_zero_payoff_is_null_update():
    state = ssa_init(mnl(3), 1.0)
    before = state.current_x.copy()
    payoff, x = ssa_step(state, np.zeros(3))
    assert payoff == 0.0
    assert np.array_equal(x, before)
    assert state.round == 1


def test_payoff_collected_before_update():
    state = ssa_init(mnl(2), 1.0)
    payoff, _ = ssa_step(state, np.array([1.0, 0.0]))
    assert payoff == pytest.approx(0.5)


def test_repeated_unit_payoff_closed_form():
    n, eta, t = 5, 3.0, 7
    state = ssa_init(mnl(n), eta)
    for _ in range(t):
        state.step(np.eye(n)[0])
    expected = math.exp(t / eta) / (math.exp(t / eta) + n - 1)
    assert state.current_x[0] == pytest.approx(expected, rel=1e-12)


def test_final_distribution_depends_only_on_the_sum():
    u1, u2 = np.array([0.2, 0.9, 0.1]), np.array([0.5, 0.0, 0.4])
    split = ssa_init(mnl(3), 1.5)
    split.step(u1)
    split.step(u2)
    joint = ssa_init(mnl(3), 1.5)
    joint.u_max = 2.0
    joint.step(u1 + u2)
    assert_allclose(split.current_x, joint.current_x, atol=1e-15)


def test_oversized_payoff_rejected():
    state = ssa_init(mnl(2), 1.0, u_max=1.0)
    with pytest.raises(BoundViolationError):
        ssa_step(state, np.array([1.5, 0.0]))


def test_payoff_length_checked():
    with pytest.raises(DimensionError):
        ssa_step(ssa_init(mnl(3), 1.0), np.zeros(2))


def test_state_stays_coherent():
    rng = np.random.default_rng(0)
    state = ssa_init(default_model("pcl", 5), 2.0)
    for _ in range(200):
        state.step(rng.random(5))
    assert_allclose(state.current_x, choice_probs(state.model, state.theta, state.eta), atol=1e-12)


# ---------------------------------------------------------------- step sizes
def test_square_root_bound_for_ten_alternatives():
    eta, bound = optimal_eta(mnl(10), 10_000, 1.0, "thm2")
    assert bound == pytest.approx(214.60, abs=5e-3)
    assert eta == pytest.approx(math.sqrt(10_000 / (2 * math.log(10))))


def test_two_alternatives_single_round():
    assert optimal_eta(mnl(2), 1, 1.0, "thm2")[1] == pytest.approx(1.1774, abs=1e-4)


def test_thm1_constant_includes_gamma():
    assert bound_constant(mnl(10), "thm1") == pytest.approx(math.log(10) + EULER_GAMMA)
    assert bound_constant(mnl(10), "thm2") == pytest.approx(math.log(10))


@pytest.mark.parametrize("kind", ["nl", "cnl", "pcl", "ogev", "pdgev", "gnl"])
def test_table_bound_scales_mnl_by_sqrt_three(kind):
    base = optimal_eta(mnl(10), 10_000, 1.0, "table")[1]
    bound = optimal_eta(default_model(kind, 10, 0.5), 10_000, 1.0, "table")[1]
    assert bound == pytest.approx(math.sqrt(3) * base, rel=1e-12)
    assert bound == pytest.approx(371.7, abs=0.05)


def test_thm2_bound_never_exceeds_table_bound():
    for kind in ["nl", "cnl", "pcl", "ogev", "pdgev", "gnl"]:
        model = default_model(kind, 10, 0.5)
        assert optimal_eta(model, 100, 1.0, "thm2")[1] <= optimal_eta(model, 100, 1.0, "table")[1] + 1e-12


def test_nested_logit_with_unit_scales_has_the_mnl_row():
    nl = nested_logit([range(5), range(5, 10)], 1.0)
    assert optimal_eta(nl, 10_000, 1.0, "thm2") == pytest.approx(optimal_eta(mnl(10), 10_000, 1.0, "thm2"))


def test_single_alternative_is_degenerate():
    with pytest.raises(DegenerateModelError):
        optimal_eta(mnl(1), 100, 1.0)


def test_optimal_eta_validates_inputs():
    with pytest.raises(DomainError):
        optimal_eta(mnl(3), 0, 1.0)
    with pytest.raises(DomainError):
        optimal_eta(mnl(3), 10, 0.0)


@pytest.mark.parametrize("variant", ["thm1", "thm2", "table"])
def test_bound_at_optimal_eta_is_the_tuned_bound(variant):
    model = default_model("gnl", 6, 0.4)
    eta, bound = optimal_eta(model, 500, 0.7, variant)
    assert bound_at_eta(model, eta, 500, 0.7, variant) == pytest.approx(bound, rel=1e-12)
    assert bound_at_eta(model, 2 * eta, 500, 0.7, variant) > bound


# ---------------------------------------------------------------- FTRL dual
def test_closed_form_matches_mnl_choice():
    rng = np.random.default_rng(1)
    for _ in range(1000):
        theta = rng.normal(0, 10, 6)
        eta = rng.uniform(0.1, 10.0)
        assert_allclose(ftrl_mnl_closed_form(theta, eta), choice_probs(mnl(6), theta, eta), atol=1e-12)


def test_closed_form_examples():
    assert_allclose(ftrl_mnl_closed_form(np.zeros(4), 2.0), 0.25)
    assert_allclose(ftrl_mnl_closed_form(np.array([math.log(2), 0.0]), 1.0), [2 / 3, 1 / 3])


def test_regularizer_examples():
    assert regularizer_mnl(np.full(5, 0.2), 1.0) == pytest.approx(-math.log(5))
    assert regularizer_mnl(np.array([0.0, 1.0, 0.0]), 1.0) == 0.0
    assert regularizer_mnl(np.array([2 / 3, 1 / 3]), 1.0) == pytest.approx(-0.6365, abs=1e-4)


def test_regularizer_nonpositive_and_equal_to_shock_form():
    rng = np.random.default_rng(2)
    draws = rng.dirichlet(np.full(6, 0.5), size=10_000)
    for x in draws:
        value = regularizer_mnl(x, 1.7)
        assert value <= 0.0
        assert regularizer_as_shocks(x, 1.7) == pytest.approx(value, rel=1e-12, abs=1e-300)


def test_regularizer_rejects_points_off_simplex():
    with pytest.raises(DomainError):
        regularizer_mnl(np.array([0.6, 0.6]), 1.0)


def test_fenchel_value_is_log_sum_exp():
    rng = np.random.default_rng(3)
    for _ in range(100):
        theta = rng.normal(0, 3, 5)
        eta = rng.uniform(0.5, 3.0)
        x = ftrl_mnl_closed_form(theta, eta)
        assert fenchel_value(theta, x, eta) == pytest.approx(eta * logsumexp(theta / eta), abs=1e-10)


def test_recursive_update_examples():
    x = np.array([0.2, 0.3, 0.5])
    assert_allclose(recursive_update_mnl(x, np.zeros(3), 1.0), x, atol=1e-15)
    eta = 0.7
    assert_allclose(recursive_update_mnl(np.array([0.5, 0.5]), np.array([eta * math.log(2), 0.0]), eta),
                    [2 / 3, 1 / 3], atol=1e-15)


def test_recursive_update_needs_interior_point():
    with pytest.raises(DomainError):
        recursive_update_mnl(np.array([1.0, 0.0]), np.array([0.0, 1.0]), 1.0)


def test_recursive_path_tracks_ssa():
    rng = np.random.default_rng(4)
    state = ssa_init(mnl(5), 20.0)
    x = state.current_x.copy()
    for _ in range(1000):
        u = rng.random(5)
        x = recursive_update_mnl(x, u, 20.0)
        state.step(u)
        assert_allclose(x, state.current_x, atol=1e-10)


def test_fenchel_identity_residuals():
    rng = np.random.default_rng(5)
    assert fenchel_identity_residual(mnl(4), np.zeros(4), 1.0) < 1e-12
    for kind in ["mnl", "nl", "gnl", "pcl"]:
        model = default_model(kind, 6)
        assert fenchel_identity_residual(model, rng.normal(0, 3, 6), 1.3) < 1e-10


# ---------------------------------------------------------------- optimistic FTRL
def test_zero_stream_matches_ssa():
    oftrl = oftrl_init(mnl(3), 1.0, 4)
    ssa = ssa_init(mnl(3), 1.0)
    for _ in range(10):
        oftrl_step(oftrl, np.zeros(3))
        ssa_step(ssa, np.zeros(3))
        assert np.array_equal(oftrl.current_x, ssa.current_x)


def test_recency_one_leads_ssa_by_one_round():
    u_star = np.array([0.3, 0.9, 0.1, 0.5])
    oftrl = oftrl_init(mnl(4), 2.0, 1)
    ssa = ssa_init(mnl(4), 2.0)
    ssa.step(u_star)
    for _ in range(20):
        oftrl.step(u_star)
        ssa.step(u_star)
        assert np.array_equal(oftrl.current_x, ssa.current_x)


def test_predictor_is_mean_of_recent_payoffs():
    state = oftrl_init(mnl(2), 1.0, 3)
    assert_allclose(state.predictor, 0.0)
    stream = [np.array([1.0, 0.0]), np.array([0.0, 1.0]), np.array([1.0, 1.0]), np.array([0.5, 0.5])]
    for u in stream:
        state.step(u)
    assert_allclose(state.predictor, np.mean(stream[1:], axis=0))
    assert_allclose(state.current_x, choice_probs(state.model, state.theta + state.predictor, 1.0))


def test_recency_horizon_must_be_positive():
    with pytest.raises(DomainError):
        oftrl_init(mnl(2), 1.0, 0)


def test_prediction_error_and_variation():
    rng = np.random.default_rng(6)
    stream = np.clip(0.5 + np.cumsum(rng.uniform(-0.01, 0.01, (300, 4)), axis=0), 0, 1)
    state = oftrl_init(mnl(4), 5.0, 5)
    for u in stream:
        state.step(u)
    variation = recency_variation(stream, 5)
    assert state.sq_prediction_error == pytest.approx(variation.prediction_error, rel=1e-12)
    assert variation.prediction_error <= variation.scaled_variation
    assert variation.max_step == pytest.approx(np.max(np.abs(stream[0])))


def test_error_bound_holds_on_realised_stream():
    rng = np.random.default_rng(7)
    model = default_model("nl", 4)
    state = oftrl_init(model, 3.0, 2)
    theta = np.zeros(4)
    realized = 0.0
    for _ in range(500):
        u = rng.random(4)
        payoff, _ = state.step(u)
        realized += payoff
        theta += u
    assert theta.max() - realized <= oftrl_error_bound(model, 3.0, state.sq_prediction_error)


def test_oftrl_step_size_and_bound():
    model = mnl(10)
    eta, bound = oftrl_eta(model, 10_000, 5, 0.02)
    d = math.log(10) + EULER_GAMMA
    assert eta == pytest.approx(math.sqrt(10_000 * 25 * 0.02**2 / (2 * d)))
    assert bound == pytest.approx(5 * 0.02 * math.sqrt(2 * 10_000 * d))
    with pytest.raises(DomainError):
        oftrl_eta(model, 100, 5, 0.0)
