import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from epical.exceptions import DegenerateState, DomainError, NonpositiveMean
from epical.sir import (
    Compartments,
    MeanModel,
    ParamPath,
    basic_reproduction_number,
    mean_curve,
    poisson_loglik,
    rollout,
    sir_step,
)

rates = st.floats(min_value=1e-6, max_value=1 - 1e-6)


def test_step_matches_hand_substitution():
    c = sir_step(Compartments(990, 10, 0, 1000), 0.3, 0.1)
    assert c.s == pytest.approx(987.03, abs=1e-12)
    assert c.i == pytest.approx(11.97, abs=1e-12)
    assert c.r == pytest.approx(1.0, abs=1e-12)


def test_no_infectious_means_no_change():
    c = Compartments(1000, 0, 0, 1000)
    assert sir_step(c, 0.7, 0.2) == c


def test_zero_rates_leave_state_alone():
    c = Compartments(900, 60, 40, 1000)
    nxt = sir_step(c, 0.0, 0.0)
    assert (nxt.s, nxt.i, nxt.r) == pytest.approx((900, 60, 40), abs=1e-12)


def test_negative_infectious_raises_unless_clamped():
    # removal larger than one day's stock drives i below zero
    c = Compartments(0.0, 10.0, 990.0, 1000.0)
    with pytest.raises(DegenerateState):
        sir_step(c, 0.01, 1.5)
    clamped = sir_step(c, 0.01, 1.5, clamp=True)
    assert clamped.i == 0.0
    assert clamped.s + clamped.i + clamped.r == pytest.approx(1000.0)


def test_compartments_validate():
    with pytest.raises(DomainError):
        Compartments(10, 1, 1, 0)
    with pytest.raises(DomainError):
        Compartments(10, -1, 1, 10)
    with pytest.raises(DomainError):
        Compartments(10, 1, 1, 20)


def test_param_path_validates():
    with pytest.raises(DomainError):
        ParamPath([0.1, 0.2], [0.3])
    with pytest.raises(DomainError):
        ParamPath([0.0], [0.3])
    with pytest.raises(DomainError):
        ParamPath([0.5], [1.0])


def test_sir_mean_first_day():
    model = MeanModel("sir", initial=Compartments(990, 10, 0, 1000))
    lam = mean_curve(model, ParamPath([0.3], [0.1]))
    np.testing.assert_allclose(lam, [2.97], atol=1e-12)


def test_test_kind_formula():
    model = MeanModel("test", start=9)
    assert mean_curve(model, ParamPath([0.2], [0.5]))[0] == pytest.approx(1.5)


def test_empty_epidemic_has_nonpositive_mean():
    model = MeanModel("sir", initial=Compartments(1000, 0, 0, 1000))
    with pytest.raises(NonpositiveMean):
        mean_curve(model, ParamPath([0.3, 0.3], [0.1, 0.1]))


def test_sir_model_requires_initial_state():
    with pytest.raises(ValueError):
        MeanModel("sir")
    with pytest.raises(ValueError):
        MeanModel("seir")


def test_conservation_over_long_rollout():
    rng = np.random.default_rng(3)
    n = 1e6
    beta = rng.uniform(0.05, 0.6, 1000)
    gamma = rng.uniform(0.05, 0.5, 1000)
    s, i, r = rollout(Compartments.from_infected(n, 50), beta, gamma)
    assert np.max(np.abs(s + i + r - n)) <= 1e-9 * n
    assert np.all(np.diff(r) >= 0)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(rates, rates), min_size=1, max_size=40),
       st.floats(min_value=1, max_value=500))
def test_new_infection_identity(path, i0):
    n = 10_000.0
    beta = np.array([p[0] for p in path])
    gamma = np.array([p[1] for p in path])
    init = Compartments.from_infected(n, i0)
    s, i, _ = rollout(init, beta, gamma, clamp=True)
    if np.any(i[:-1] == 0) or np.any(s[1:] == 0):
        return  # clamped trajectories break the identity by design
    lam = MeanModel("sir", initial=init, clamp=True).curve(beta, gamma)
    direct = beta * i[:-1] * s[:-1] / n
    np.testing.assert_allclose(lam, direct, rtol=1e-12, atol=1e-9)


@settings(max_examples=40, deadline=None)
@given(rates, rates, rates, rates, st.integers(min_value=1, max_value=100))
def test_test_kind_is_linear(b1, g1, b2, g2, t):
    model = MeanModel("test", start=t - 1)
    a = model.curve([b1], [g1])[0]
    b = model.curve([b2], [g2])[0]
    mid = model.curve([(b1 + b2) / 2], [(g1 + g2) / 2])[0]
    assert mid == pytest.approx((a + b) / 2, rel=1e-12)


def test_advanced_continues_the_trajectory():
    init = Compartments.from_infected(5000, 20)
    model = MeanModel("sir", initial=init)
    beta = np.array([0.3, 0.25, 0.4, 0.2])
    gamma = np.array([0.1, 0.15, 0.1, 0.2])
    whole = model.curve(beta, gamma)
    tail = model.advanced(beta[:2], gamma[:2]).curve(beta[2:], gamma[2:])
    np.testing.assert_allclose(tail, whole[2:], rtol=1e-13)
    t_model = MeanModel("test").advanced(beta[:2], gamma[:2])
    assert t_model.start == 2


def test_loglik_and_r0():
    assert poisson_loglik(np.array([0.0]), np.array([2.0])) == pytest.approx(-2.0)
    assert poisson_loglik(np.array([1.0]), np.array([0.0])) == -np.inf
    np.testing.assert_allclose(basic_reproduction_number([0.3], [0.1]), [3.0])
