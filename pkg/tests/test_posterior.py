import numpy as np
import pytest
from scipy.special import expit

from epical.exceptions import EmptyDraws
from epical.gp import Hyperparams, build_cov, conditional_bg
from epical.mcmc import ChainSamples
from epical.posterior import (
    fitted_means,
    predictive_samples,
    r0_samples,
    summarize,
    surface_samples,
)
from epical.sir import Compartments, MeanModel


def fake_chain(S=40, n=6, d=1, rho=0.5, seed=0):
    rng = np.random.default_rng(seed)
    return ChainSamples(
        beta=rng.uniform(0.2, 0.6, (S, n)), gamma=rng.uniform(0.1, 0.4, (S, n)),
        rho=np.full(S, rho), phi=rng.uniform(0.3, 0.7, (S, d)),
        mu1=rng.normal(-0.5, 0.1, S), mu2=rng.normal(-1.0, 0.1, S), tau=rng.uniform(0.5, 1.5, S),
    )


def test_summarize_example():
    s = summarize(np.arange(1.0, 101.0), level=0.90)
    assert s.mean == pytest.approx(50.5)
    assert s.median == pytest.approx(50.5)
    assert s.lo == pytest.approx(5.95)
    assert s.hi == pytest.approx(95.05)


def test_summarize_empty_raises():
    with pytest.raises(EmptyDraws):
        summarize(np.empty(0))
    with pytest.raises(EmptyDraws):
        summarize(np.empty((0, 3)))


def test_summarize_columns():
    s = summarize(np.array([[1.0, 10.0], [3.0, 30.0]]))
    np.testing.assert_allclose(s.mean, [2.0, 20.0])


def test_r0_is_ratio_of_rate_draws():
    chain = fake_chain()
    X = np.linspace(0, 1, 6)[:, None]
    a = r0_samples([[0.3]], chain, X, rng=1)
    b = surface_samples([[0.3]], chain, X, rng=1)
    np.testing.assert_array_equal(a.r0, b.beta / b.gamma)
    assert np.all(a.r0 > 0)


def test_surface_at_training_input_reproduces_training_rates():
    chain = fake_chain(S=5)
    X = np.linspace(0, 1, 6)[:, None]
    s = surface_samples(X[2:3], chain, X, mean_only=True)
    # the nugget leaves a small interpolation error on these rough random paths
    np.testing.assert_allclose(s.beta[:, 0], chain.beta[:, 2], atol=1e-5)
    np.testing.assert_allclose(s.gamma[:, 0], chain.gamma[:, 2], atol=1e-5)


def test_predictive_mean_identity():
    # the first forecast day's mean is beta*i*s/n evaluated at the trajectory state
    chain = fake_chain(S=30, n=5)
    X = np.linspace(0, 1, 5)[:, None]
    init = Compartments.from_infected(10_000, 50)
    model = MeanModel("sir", initial=init)
    X_f = np.array([[0.45], [0.55]])
    pred = predictive_samples(X_f, chain, X, model, rng=3)
    assert pred.lam.shape == pred.y.shape == (30, 2)
    # regenerate the same conditional draws to recover the future rates
    rng = np.random.default_rng(3)
    for k in range(30):
        psi = chain.psi(k)
        z = conditional_bg(X_f, chain.beta[k], chain.gamma[k], psi, build_cov(X, psi)).sample(rng)
        bf, gf = expit(z[:, 0]), expit(z[:, 1])
        adv = model.advanced(chain.beta[k], chain.gamma[k])
        c = adv.initial
        assert pred.lam[k, 0] == pytest.approx(bf[0] * c.i * c.s / c.n, rel=1e-12)
        np.testing.assert_allclose(pred.lam[k], adv.curve(bf, gf), rtol=1e-12)


def test_predictive_counts_are_poisson_of_means():
    chain = fake_chain(S=400, n=4)
    X = np.linspace(0, 1, 4)[:, None]
    pred = predictive_samples([[0.5]], chain, X, MeanModel("test"), rng=4)
    resid = pred.y[:, 0] - pred.lam[:, 0]
    assert abs(resid.mean()) < 4 * np.sqrt(pred.lam[:, 0].mean() / 400)


def test_independent_draws_are_uncorrelated():
    chain = fake_chain(S=1, n=4, rho=0.0)
    X = np.linspace(0, 1, 4)[:, None]
    psi = chain.psi(0)
    cond = conditional_bg([[0.37]], chain.beta[0], chain.gamma[0], psi, build_cov(X, psi))
    z = cond.sample(np.random.default_rng(5), size=100_000)[:, 0, :]
    assert abs(np.corrcoef(z.T)[0, 1]) < 0.02


def test_fitted_means_shape():
    chain = fake_chain(S=7, n=6)
    out = fitted_means(chain, MeanModel("test"))
    assert out.shape == (7, 6)
    np.testing.assert_allclose(out[0], MeanModel("test").curve(chain.beta[0], chain.gamma[0]))


def test_hyperparams_round_trip_through_chain():
    chain = fake_chain(S=3, d=2)
    psi = chain.psi(1)
    assert isinstance(psi, Hyperparams)
    assert psi.tau == chain.tau[1]
