"""Estimator facade over the sampler and the posterior functionals."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted, check_random_state

from .exceptions import DimensionMismatch, DomainError
from .mcmc import ChainConfig, PriorConfig, run_chain
from .posterior import fitted_means, predictive_samples, r0_samples, summarize
from .sensitivity import FactorDistribution, posterior_sensitivity
from .sir import Compartments, MeanModel


class _Data:
    __slots__ = ("X", "y")

    def __init__(self, X, y):
        self.X = X
        self.y = y


class FunctionalSIRCalibrator(BaseEstimator):
    """Bayesian calibration of covariate-dependent SIR rates from daily counts.

    ``fit(X, y)`` takes one covariate row per consecutive day (already scaled
    to roughly the unit cube) and the daily counts; it runs the sampler and
    keeps the thinned draws in ``chain_``. ``predict`` forecasts the days
    that follow the training window.

    Parameters
    ----------
    mean_model : {"sir", "test"}
        ``sir`` needs ``population``; ``initial_infected`` defaults to the
        first count.
    population, initial_infected : int, optional
    burn_in, samples, thin, random_state : int
    independent_gp : bool
        Fix the cross-correlation at zero.
    a_tau, b_tau, b_rho, b_phi, alpha, sigma2 : hyperprior settings
    interweave : bool
        Add the non-centred hyperparameter moves to each sweep.
    """

    def __init__(self, mean_model="sir", population=None, initial_infected=None,
                 burn_in=2000, samples=2000, thin=2, random_state=0, independent_gp=False,
                 a_tau=0.01, b_tau=0.01, b_rho=0.1, b_phi=0.1, alpha=(0.0, 0.0),
                 sigma2=(1.0, 1.0), interweave=True):
        self.mean_model = mean_model
        self.population = population
        self.initial_infected = initial_infected
        self.burn_in = burn_in
        self.samples = samples
        self.thin = thin
        self.random_state = random_state
        self.independent_gp = independent_gp
        self.a_tau = a_tau
        self.b_tau = b_tau
        self.b_rho = b_rho
        self.b_phi = b_phi
        self.alpha = alpha
        self.sigma2 = sigma2
        self.interweave = interweave

    def _prior(self):
        return PriorConfig(a=self.a_tau, b=self.b_tau, b_rho=self.b_rho, b_phi=self.b_phi,
                           alpha1=self.alpha[0], alpha2=self.alpha[1],
                           sigma2_1=self.sigma2[0], sigma2_2=self.sigma2[1])

    def _chain_config(self):
        return ChainConfig(burn_in=self.burn_in, samples=self.samples, thin=self.thin,
                           seed=self.random_state, independent_gp=self.independent_gp,
                           interweave=self.interweave)

    def _model(self, y):
        if self.mean_model == "test":
            return MeanModel(kind="test")
        if self.mean_model != "sir":
            raise DomainError(f"mean_model must be 'sir' or 'test', got {self.mean_model!r}")
        if self.population is None:
            raise DomainError("the sir mean model needs a population")
        i0 = y[0] if self.initial_infected is None else self.initial_infected
        return MeanModel(kind="sir", initial=Compartments.from_infected(self.population, float(i0)))

    def fit(self, X, y, callback=None):
        X = check_array(X, dtype=float, ensure_2d=False)
        if X.ndim == 1:
            X = X.reshape(-1, 1)
        y = np.asarray(y)
        if y.ndim != 1 or y.shape[0] != X.shape[0]:
            raise DimensionMismatch(f"y must be 1-d with {X.shape[0]} entries")
        if np.any(y < 0) or np.any(y != np.round(y)):
            raise DomainError("counts must be nonnegative integers")
        y = y.astype(np.int64)
        self.model_ = self._model(y)
        self.X_train_ = X
        self.y_train_ = y
        self.n_features_in_ = X.shape[1]
        self.chain_ = run_chain(_Data(X, y), self.model_, self._prior(), self._chain_config(), callback)
        self.acceptance_ = dict(self.chain_.acceptance)
        return self

    def _check_X(self, X):
        check_is_fitted(self, "chain_")
        X = check_array(X, dtype=float, ensure_2d=False)
        if X.ndim == 1:
            X = X.reshape(-1, 1) if self.n_features_in_ == 1 else X.reshape(1, -1)
        if X.shape[1] != self.n_features_in_:
            raise DimensionMismatch(f"expected {self.n_features_in_} covariates, got {X.shape[1]}")
        return X

    def sample_predictive(self, X_future, random_state=None):
        """Posterior-predictive draws for the days after training (:class:`PredictiveDraws`)."""
        X_future = self._check_X(X_future)
        rng = check_random_state(self.random_state if random_state is None else random_state)
        seed = rng.randint(0, 2**31 - 1)
        return predictive_samples(X_future, self.chain_, self.X_train_, self.model_, np.random.default_rng(seed))

    def predict(self, X_future, random_state=None):
        """Posterior-mean forecast of the daily counts."""
        return self.sample_predictive(X_future, random_state).lam.mean(axis=0)

    def fitted(self):
        """In-sample mean curves, one row per draw."""
        check_is_fitted(self, "chain_")
        return fitted_means(self.chain_, self.model_)

    def sample_r0(self, X, random_state=None):
        X = self._check_X(X)
        return r0_samples(X, self.chain_, self.X_train_, rng=random_state)

    def rates(self, X, random_state=None):
        """Posterior-mean ``(beta(x), gamma(x))`` at each row of ``X``."""
        draws = r0_samples(self._check_X(X), self.chain_, self.X_train_, rng=random_state)
        return draws.beta.mean(axis=0), draws.gamma.mean(axis=0)

    def summary(self, draws, level=0.95):
        return summarize(draws, level)

    def sensitivity(self, factors: FactorDistribution | None = None, names=None, pairs=None,
                    max_draws=None, **kwargs):
        """Functional-ANOVA report of the R0 surface, one entry per posterior draw."""
        check_is_fitted(self, "chain_")
        factors = factors or FactorDistribution("empirical", data=self.X_train_)
        chain = self.chain_
        if max_draws is not None and len(chain) > max_draws:
            chain = chain.subset(np.linspace(0, len(chain) - 1, max_draws).round().astype(int))
        return posterior_sensitivity(chain, self.X_train_, factors, names=names, pairs=pairs, **kwargs)
