"""Discrete SIR recursion with day-varying rates and the Poisson mean models.

Two mean models are supported:

``sir``
    The number of new daily cases is the drop in susceptibles,
    ``lambda_t = S(t-1) - S(t)``, with the compartments rolled forward by a
    finite-difference SIR step using that day's ``(beta_t, gamma_t)``.

``test``
    The analytic benchmark ``lambda_t = 5 beta_t + gamma_t (t / 10)^2``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .exceptions import DegenerateState, DomainError, NonpositiveMean

MEAN_MODEL_KINDS = ("sir", "test")


@dataclass(frozen=True)
class Compartments:
    """One day's state of the SIR system (real-valued counts)."""

    s: float
    i: float
    r: float
    n: float

    def __post_init__(self):
        if not self.n > 0:
            raise DomainError(f"population must be positive, got {self.n}")
        if min(self.s, self.i, self.r) < 0:
            raise DomainError(f"negative compartment in {self}")
        if abs(self.s + self.i + self.r - self.n) > 1e-9 * self.n:
            raise DomainError(f"s + i + r != n in {self}")

    @classmethod
    def from_infected(cls, n, i0, r0=0.0):
        """Initial state with ``i0`` infectious, ``r0`` removed, rest susceptible."""
        return cls(s=n - i0 - r0, i=float(i0), r=float(r0), n=float(n))


@dataclass(frozen=True)
class ParamPath:
    """Day-indexed contact and removal rates, every entry inside (0, 1)."""

    beta: np.ndarray
    gamma: np.ndarray

    def __post_init__(self):
        beta = np.asarray(self.beta, dtype=float).reshape(-1)
        gamma = np.asarray(self.gamma, dtype=float).reshape(-1)
        if beta.shape != gamma.shape:
            raise DomainError("beta and gamma paths must have equal length")
        for name, v in (("beta", beta), ("gamma", gamma)):
            if not np.all((v > 0) & (v < 1)):
                raise DomainError(f"{name} entries must lie strictly inside (0, 1)")
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "gamma", gamma)

    def __len__(self):
        return self.beta.shape[0]


def _step(s, i, r, n, beta, gamma, clamp):
    i_new = (1.0 + beta - gamma) * i - beta * i * (i + r) / n
    r_new = r + gamma * i
    s_new = n - i_new - r_new
    if i_new < 0 or s_new < 0:
        if not clamp:
            raise DegenerateState(
                f"step produced s={s_new!r}, i={i_new!r} (beta={beta}, gamma={gamma})"
            )
        # keep s + i + r = n after clamping
        i_new = max(i_new, 0.0)
        s_new = max(n - i_new - r_new, 0.0)
        r_new = n - i_new - s_new
    return s_new, i_new, r_new


def sir_step(c: Compartments, beta: float, gamma: float, clamp: bool = False) -> Compartments:
    """Advance the compartments by one day.

    ``I' = (1 + beta - gamma) I - beta I (I + R) / N``, ``R' = R + gamma I``
    and ``S' = N - I' - R'``, which is the forward-difference SIR system
    ``dS = -beta I S / N``.

    Raises
    ------
    DegenerateState
        If ``I'`` or ``S'`` would be negative and ``clamp`` is False.
    """
    s, i, r = _step(c.s, c.i, c.r, c.n, float(beta), float(gamma), clamp)
    return Compartments(s=s, i=i, r=r, n=c.n)


def rollout(initial: Compartments, beta, gamma, clamp=False):
    """Roll the recursion forward; returns ``(s, i, r)`` arrays of length ``len(beta) + 1``."""
    beta = np.asarray(beta, dtype=float)
    gamma = np.asarray(gamma, dtype=float)
    m = beta.shape[0]
    s = np.empty(m + 1)
    i = np.empty(m + 1)
    r = np.empty(m + 1)
    s[0], i[0], r[0] = initial.s, initial.i, initial.r
    n = initial.n
    cs, ci, cr = initial.s, initial.i, initial.r
    for t in range(m):
        cs, ci, cr = _step(cs, ci, cr, n, beta[t], gamma[t], clamp)
        s[t + 1], i[t + 1], r[t + 1] = cs, ci, cr
    return s, i, r


@dataclass(frozen=True)
class MeanModel:
    """Maps a rate path to the Poisson means of the daily counts.

    Parameters
    ----------
    kind : {"sir", "test"}
    initial : Compartments, optional
        Day-0 state, required for ``kind="sir"``.
    start : int
        Day index of the first element of a path minus one. The ``test``
        model evaluates ``t = start + 1, ..., start + len(path)``.
    clamp : bool
        Clamp negative compartments at zero instead of raising.
    """

    kind: str = "sir"
    initial: Compartments | None = None
    start: int = 0
    clamp: bool = False

    def __post_init__(self):
        if self.kind not in MEAN_MODEL_KINDS:
            raise ValueError(f"kind must be one of {MEAN_MODEL_KINDS}, got {self.kind!r}")
        if self.kind == "sir" and self.initial is None:
            raise ValueError("the sir mean model needs an initial Compartments state")

    def curve(self, beta, gamma) -> np.ndarray:
        """Unchecked means; may contain non-positive values."""
        beta = np.asarray(beta, dtype=float)
        gamma = np.asarray(gamma, dtype=float)
        if self.kind == "test":
            t = np.arange(self.start + 1, self.start + beta.shape[0] + 1, dtype=float)
            return 5.0 * beta + gamma * (t / 10.0) ** 2
        s, _, _ = rollout(self.initial, beta, gamma, self.clamp)
        return s[:-1] - s[1:]

    def advanced(self, beta, gamma) -> "MeanModel":
        """The model continuing after ``beta``/``gamma`` have been consumed."""
        m = len(beta)
        if self.kind == "test":
            return replace(self, start=self.start + m)
        s, i, r = rollout(self.initial, beta, gamma, self.clamp)
        state = Compartments(s=s[-1], i=i[-1], r=r[-1], n=self.initial.n)
        return replace(self, initial=state, start=self.start + m)


def mean_curve(model: MeanModel, path: ParamPath) -> np.ndarray:
    """Poisson means for every day of ``path``.

    Raises
    ------
    NonpositiveMean
        If any mean is zero or negative.
    """
    if len(path) == 0:
        raise DomainError("empty parameter path")
    lam = model.curve(path.beta, path.gamma)
    if not np.all(lam > 0):
        bad = int(np.argmin(lam > 0))
        raise NonpositiveMean(f"mean at day {model.start + bad + 1} is {lam[bad]!r}")
    return lam


def basic_reproduction_number(beta, gamma):
    return np.asarray(beta) / np.asarray(gamma)


def poisson_loglik(y, lam) -> float:
    """``sum(y log lam - lam)``, dropping ``log y!``; ``-inf`` if any mean is not positive."""
    lam = np.asarray(lam, dtype=float)
    if not np.all(lam > 0) or not np.all(np.isfinite(lam)):
        return -math.inf
    return float(np.dot(y, np.log(lam)) - lam.sum())
