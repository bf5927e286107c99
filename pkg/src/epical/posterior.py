"""Posterior functionals of a fitted chain.

Each stored draw carries the rates at the training inputs and the GP
hyperparameters, so rates at new covariates follow from the bivariate
conditional normal of the joint GP. From those we get reproduction-number
surfaces and Poisson posterior-predictive forecasts.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .exceptions import EmptyDraws, NonpositiveMean
from .gp import build_cov, conditional_bg
from .mcmc import ChainSamples
from .sir import MeanModel


@dataclass(frozen=True)
class PosteriorSurfaceDraws:
    """Rates and R0 at ``m`` query points, one row per posterior draw."""

    beta: np.ndarray
    gamma: np.ndarray

    @property
    def r0(self):
        return self.beta / self.gamma


@dataclass(frozen=True)
class PredictiveDraws:
    """Forecast counts and their Poisson means, shape ``(draws, horizon)``."""

    y: np.ndarray
    lam: np.ndarray


@dataclass(frozen=True)
class Summary:
    mean: np.ndarray
    median: np.ndarray
    lo: np.ndarray
    hi: np.ndarray
    level: float


def _conditionals(chain: ChainSamples, X_train, X_query):
    """Yield ``(k, ConditionalBG)`` for every stored draw."""
    X_train = np.asarray(X_train, dtype=float)
    if X_train.ndim == 1:
        X_train = X_train.reshape(-1, 1)
    X_query = np.asarray(X_query, dtype=float)
    if X_query.ndim == 1:
        X_query = X_query.reshape(1, -1) if X_query.shape[0] == X_train.shape[1] else X_query.reshape(-1, 1)
    for k in range(len(chain)):
        psi = chain.psi(k)
        cov = build_cov(X_train, psi)
        yield k, conditional_bg(X_query, chain.beta[k], chain.gamma[k], psi, cov)


def surface_samples(X_query, chain: ChainSamples, X_train, rng=None, mean_only=False) -> PosteriorSurfaceDraws:
    """Draw ``(beta(x), gamma(x))`` at each query row for every stored draw.

    With ``mean_only`` the conditional mean on the logit scale is used
    instead of a random conditional draw.
    """
    rng = np.random.default_rng(rng)
    betas, gammas = [], []
    for _, cond in _conditionals(chain, X_train, X_query):
        z = cond.mean if mean_only else cond.sample(rng)
        betas.append(expit(z[:, 0]))
        gammas.append(expit(z[:, 1]))
    return PosteriorSurfaceDraws(beta=np.array(betas), gamma=np.array(gammas))


def r0_samples(x, chain: ChainSamples, X_train, rng=None) -> PosteriorSurfaceDraws:
    """Posterior draws of ``R0(x) = beta(x) / gamma(x)`` at one or more covariate rows."""
    return surface_samples(x, chain, X_train, rng=rng)


def predictive_samples(X_future, chain: ChainSamples, X_train, model: MeanModel, rng=None) -> PredictiveDraws:
    """Posterior-predictive forecast for the days after the training window.

    For each stored draw the SIR trajectory is rolled through that draw's
    training path, rates for each future day are drawn from the GP
    conditional at that day's covariates, the trajectory is extended one day
    at a time, and a Poisson count is drawn from each day's mean.

    Raises
    ------
    NonpositiveMean
        If an extended trajectory yields a non-positive mean.
    """
    rng = np.random.default_rng(rng)
    X_future = np.asarray(X_future, dtype=float)
    if X_future.ndim == 1:
        X_future = X_future.reshape(-1, 1)
    h = X_future.shape[0]
    lam = np.empty((len(chain), h))
    for k, cond in _conditionals(chain, X_train, X_future):
        z = cond.sample(rng)
        beta_f, gamma_f = expit(z[:, 0]), expit(z[:, 1])
        future = model.advanced(chain.beta[k], chain.gamma[k])
        lam[k] = future.curve(beta_f, gamma_f)
    if not np.all(lam > 0):
        k, t = np.argwhere(~(lam > 0))[0]
        raise NonpositiveMean(f"forecast mean for draw {k}, day {t + 1} is {lam[k, t]!r}")
    y = rng.poisson(lam)
    return PredictiveDraws(y=y, lam=lam)


def fitted_means(chain: ChainSamples, model: MeanModel) -> np.ndarray:
    """In-sample Poisson means, one row per draw."""
    return np.array([model.curve(chain.beta[k], chain.gamma[k]) for k in range(len(chain))])


def summarize(draws, level=0.95, axis=0) -> Summary:
    """Mean, median and equal-tailed credible interval along ``axis``.

    Quantiles use linear interpolation between order statistics.
    """
    draws = np.asarray(draws, dtype=float)
    if draws.size == 0 or draws.shape[axis] == 0:
        raise EmptyDraws("cannot summarise an empty set of draws")
    tail = (1.0 - level) / 2.0
    lo, med, hi = np.quantile(draws, [tail, 0.5, 1.0 - tail], axis=axis)
    return Summary(mean=draws.mean(axis=axis), median=med, lo=lo, hi=hi, level=level)
