"""Joint Gaussian-process prior for the logit contact and removal rates.

The two latent functions share one correlation kernel

    K(x, x') = prod_j phi_j ** (4 (x_j - x'_j) ** 2),   phi_j in (0, 1)

and a cross-correlation ``rho``, so the 2n-vector ``(logit beta, logit gamma)``
at the n training inputs is Gaussian with covariance ``tau * (A kron K)`` where
``A = [[1, rho], [rho, 1]]``. That covariance is never materialised: every
solve, determinant and square root goes through the n x n Cholesky factor of
``K`` and the closed-form 2 x 2 algebra of ``A``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg
from scipy.special import expit

from .exceptions import DimensionMismatch, DomainError, FactorizationFailure

NUGGET = 1e-8


def logit(p):
    """Log-odds ``log(p / (1 - p))``; raises DomainError outside (0, 1)."""
    arr = np.asarray(p, dtype=float)
    if not np.all((arr > 0) & (arr < 1)):
        raise DomainError("logit is only defined on the open interval (0, 1)")
    out = np.log(arr) - np.log1p(-arr)
    return float(out) if out.ndim == 0 else out


def inv_logit(z):
    out = expit(np.asarray(z, dtype=float))
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class Hyperparams:
    """GP parameter bundle ``(rho, phi, mu1, mu2, tau)``.

    ``rho = 0`` encodes two independent processes.
    """

    rho: float
    phi: np.ndarray
    mu1: float
    mu2: float
    tau: float

    def __post_init__(self):
        phi = np.atleast_1d(np.asarray(self.phi, dtype=float))
        object.__setattr__(self, "phi", phi)
        if not 0 <= self.rho < 1:
            raise DomainError(f"rho must lie in [0, 1), got {self.rho}")
        if not np.all((phi > 0) & (phi < 1)):
            raise DomainError(f"phi entries must lie in (0, 1), got {phi}")
        if not self.tau > 0:
            raise DomainError(f"tau must be positive, got {self.tau}")

    @property
    def d(self):
        return self.phi.shape[0]


def _as_rows(X, d=None):
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X.reshape(1, -1) if d is None or X.shape[0] == d else X.reshape(-1, 1)
    if d is not None and X.shape[1] != d:
        raise DimensionMismatch(f"expected {d} covariate columns, got {X.shape[1]}")
    return X


def correlation(x, x2, phi) -> float:
    x = np.atleast_1d(np.asarray(x, dtype=float))
    x2 = np.atleast_1d(np.asarray(x2, dtype=float))
    phi = np.atleast_1d(np.asarray(phi, dtype=float))
    if not (x.shape == x2.shape == phi.shape):
        raise DimensionMismatch(
            f"shapes differ: x{x.shape}, x2{x2.shape}, phi{phi.shape}"
        )
    return float(np.prod(phi ** (4.0 * (x - x2) ** 2)))


def log_kernel_terms(X, X2, phi):
    """Per-coordinate log-correlations, shape ``(len(X), len(X2), d)``."""
    diff = X[:, None, :] - X2[None, :, :]
    return 4.0 * diff**2 * np.log(phi)


def correlation_matrix(X, phi, X2=None) -> np.ndarray:
    phi = np.atleast_1d(np.asarray(phi, dtype=float))
    X = _as_rows(X, phi.shape[0])
    X2 = X if X2 is None else _as_rows(X2, phi.shape[0])
    sq = np.zeros((X.shape[0], X2.shape[0]))
    for j in range(phi.shape[0]):
        sq += 4.0 * np.log(phi[j]) * np.subtract.outer(X[:, j], X2[:, j]) ** 2
    return np.exp(sq)


@dataclass(frozen=True)
class CovStructure:
    """Nugget-augmented correlation matrix of the training inputs and its factor."""

    X: np.ndarray
    phi: np.ndarray
    corr: np.ndarray
    factor: np.ndarray = field(repr=False)
    log_det: float

    @property
    def n(self):
        return self.corr.shape[0]

    def whiten(self, v):
        """``L^{-1} v`` for the lower Cholesky factor ``L``."""
        return linalg.solve_triangular(self.factor, v, lower=True, check_finite=False)

    def solve(self, v):
        """``K^{-1} v``."""
        return linalg.cho_solve((self.factor, True), v, check_finite=False)

    def cross(self, X_star):
        """Correlations between query rows and training rows, ``(m, n)``."""
        return correlation_matrix(X_star, self.phi, self.X)


def build_cov(X, psi, nugget=NUGGET) -> CovStructure:
    """Factorise ``K_phi(X, X) + nugget * I``.

    ``psi`` may be a :class:`Hyperparams` or a bare ``phi`` vector.

    Raises
    ------
    FactorizationFailure
        If the matrix is numerically not positive definite.
    """
    phi = psi.phi if isinstance(psi, Hyperparams) else np.atleast_1d(np.asarray(psi, float))
    X = _as_rows(X, phi.shape[0])
    if X.shape[0] < 1:
        raise DimensionMismatch("need at least one training row")
    corr = correlation_matrix(X, phi)
    corr[np.diag_indices_from(corr)] += nugget
    try:
        L = linalg.cholesky(corr, lower=True, check_finite=False)
    except linalg.LinAlgError as exc:
        raise FactorizationFailure(str(exc)) from exc
    diag = np.diag(L)
    if not np.all(diag > 0) or not np.all(np.isfinite(diag)):
        raise FactorizationFailure("non-positive pivot in Cholesky factor")
    return CovStructure(X=X, phi=phi, corr=corr, factor=L, log_det=2.0 * float(np.log(diag).sum()))


def cross_matrix(rho) -> np.ndarray:
    return np.array([[1.0, rho], [rho, 1.0]])


def cross_factor(rho) -> np.ndarray:
    """Lower Cholesky factor of ``[[1, rho], [rho, 1]]``."""
    return np.array([[1.0, 0.0], [rho, math.sqrt(1.0 - rho * rho)]])


def joint_quad_form(cov: CovStructure, rho, u, v) -> float:
    """``q^T (A^{-1} kron K^{-1}) q`` for ``q = (u, v)``."""
    wu = cov.whiten(u)
    wv = cov.whiten(v)
    # eigenbasis of A keeps both terms nonnegative as rho -> 1
    plus = wu + wv
    minus = wu - wv
    return float(plus @ plus / (2.0 * (1.0 + rho)) + minus @ minus / (2.0 * (1.0 - rho)))


def joint_log_det(cov: CovStructure, rho, tau) -> float:
    """``log det(tau * (A kron K))``."""
    n = cov.n
    return 2 * n * math.log(tau) + n * math.log1p(-rho * rho) + 2.0 * cov.log_det


def gp_log_density(z_beta, z_gamma, psi: Hyperparams, cov: CovStructure) -> float:
    """Gaussian log-density of the logit rates, without the ``-n log(2 pi)`` constant."""
    rho = psi.rho
    if not 0 <= rho < 1 or 1.0 - rho * rho <= 0:
        return -math.inf
    q = joint_quad_form(cov, rho, z_beta - psi.mu1, z_gamma - psi.mu2)
    return -0.5 * joint_log_det(cov, rho, psi.tau) - 0.5 * q / psi.tau


@dataclass(frozen=True)
class ConditionalBG:
    """Bivariate normal of ``(logit beta(x*), logit gamma(x*))`` at m query points.

    ``mean`` has shape ``(m, 2)``; the covariance at point k is
    ``tau * scale[k] * [[1, rho], [rho, 1]]``.
    """

    mean: np.ndarray
    scale: np.ndarray
    rho: float
    tau: float

    @property
    def cov(self):
        return self.tau * self.scale[:, None, None] * cross_matrix(self.rho)[None]

    def sample(self, rng, size=None):
        """Draw logit values, shape ``(m, 2)`` or ``(size, m, 2)``."""
        shape = (self.mean.shape[0], 2) if size is None else (size, self.mean.shape[0], 2)
        z = rng.standard_normal(shape)
        sd = np.sqrt(self.tau * self.scale)[:, None]
        return self.mean + sd * (z @ cross_factor(self.rho).T)


def conditional_bg(x_star, beta, gamma, psi: Hyperparams, cov: CovStructure,
                   logit_scale=False) -> ConditionalBG:
    """Condition the joint GP on the training rates and evaluate it at ``x_star``.

    ``beta``/``gamma`` are rates in (0, 1), or logit values if ``logit_scale``.
    ``x_star`` may be one covariate row or an ``(m, d)`` array.
    """
    zb = np.asarray(beta, float) if logit_scale else logit(beta)
    zg = np.asarray(gamma, float) if logit_scale else logit(gamma)
    Xs = _as_rows(x_star, cov.phi.shape[0])
    k = cov.cross(Xs)
    alpha = cov.solve(np.column_stack([zb - psi.mu1, zg - psi.mu2]))
    mean = k @ alpha + np.array([psi.mu1, psi.mu2])
    w = cov.whiten(k.T)
    scale = np.maximum(1.0 - np.einsum("ij,ij->j", w, w), 0.0)
    return ConditionalBG(mean=mean, scale=scale, rho=psi.rho, tau=psi.tau)
