"""Functional ANOVA of a function of independent covariates.

For ``x ~ F = F_1 x ... x F_d``:

* overall mean ``m0 = E[g(X)]``
* main effect ``m_j(v) = E[g(X) | X_j = v] - m0``
* interaction ``m_jk(v, w) = E[g(X) | X_j = v, X_k = w] - m0 - m_j(v) - m_k(w)``
* indices ``S_j = Var(m_j(X_j)) / Var(g(X))`` and ``S_jk = Var(m_jk) / Var(g)``

Conditional expectations are Monte-Carlo averages over one shared base
sample from ``F`` with the pinned coordinates overwritten, so every grid
value uses the same random numbers. With that choice the interaction of an
additive function is exactly zero. Outer variances are taken over
equal-weight quadrature nodes of each marginal (midpoints for a uniform
marginal, quantiles for an empirical one).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations
from pathlib import Path

import numpy as np
from scipy.special import expit

from .exceptions import DimensionMismatch, ZeroVariance
from .gp import build_cov, logit
from .mcmc import ChainSamples

DEFAULT_SAMPLES = 2000
DEFAULT_MAIN_NODES = 25
DEFAULT_PAIR_NODES = 15


class FactorDistribution:
    """Product distribution of the covariates with a cached base sample.

    Parameters
    ----------
    kind : {"empirical", "uniform"}
        ``empirical`` resamples each observed column independently;
        ``uniform`` draws each coordinate uniformly over ``bounds``.
    data : array of shape (n, d), optional
        Observed covariates (required for ``empirical``; supplies default
        bounds for ``uniform``).
    bounds : array of shape (d, 2), optional
    n_samples : int
        Monte-Carlo sample size ``M``.
    seed : int
    """

    def __init__(self, kind="empirical", data=None, bounds=None, n_samples=DEFAULT_SAMPLES, seed=0):
        if kind not in ("empirical", "uniform"):
            raise ValueError(f"unknown factor distribution {kind!r}")
        self.kind = kind
        self.data = None if data is None else np.atleast_2d(np.asarray(data, dtype=float))
        if self.data is not None and self.data.shape[0] == 1 and np.asarray(data).ndim == 1:
            self.data = self.data.T
        if bounds is None:
            if self.data is None:
                raise ValueError("need data or bounds")
            bounds = np.column_stack([self.data.min(axis=0), self.data.max(axis=0)])
        self.bounds = np.asarray(bounds, dtype=float).reshape(-1, 2)
        if kind == "empirical" and self.data is None:
            raise ValueError("empirical marginals need observed data")
        self.n_samples = int(n_samples)
        self.seed = seed
        self._sample = None

    @classmethod
    def unit_cube(cls, d, n_samples=DEFAULT_SAMPLES, seed=0):
        return cls("uniform", bounds=np.tile([0.0, 1.0], (d, 1)), n_samples=n_samples, seed=seed)

    @property
    def d(self):
        return self.bounds.shape[0]

    def sample(self):
        """The shared ``(M, d)`` base sample (generated once)."""
        if self._sample is None:
            rng = np.random.default_rng(self.seed)
            if self.kind == "uniform":
                lo, hi = self.bounds[:, 0], self.bounds[:, 1]
                self._sample = lo + (hi - lo) * rng.uniform(size=(self.n_samples, self.d))
            else:
                idx = rng.integers(0, self.data.shape[0], size=(self.n_samples, self.d))
                self._sample = self.data[idx, np.arange(self.d)]
            self._sample.setflags(write=False)
        return self._sample

    def nodes(self, j, count):
        """Equal-weight quadrature nodes of the j-th marginal, sorted."""
        probs = (np.arange(count) + 0.5) / count
        if self.kind == "uniform":
            lo, hi = self.bounds[j]
            return lo + (hi - lo) * probs
        return np.quantile(self.data[:, j], probs, method="inverted_cdf")


def _pinned(g, base, dims, values, chunk=2_000_000):
    """``g`` on the base sample with ``dims`` set to each row of ``values``; ``(G, M)``."""
    values = np.asarray(values, dtype=float).reshape(-1, len(dims))
    if hasattr(g, "pinned"):
        return g.pinned(base, dims, values)
    M = base.shape[0]
    out = np.empty((values.shape[0], M))
    rows = max(1, chunk // max(M, 1))
    for start in range(0, values.shape[0], rows):
        block = values[start:start + rows]
        pts = np.broadcast_to(base, (block.shape[0],) + base.shape).copy()
        for c, j in enumerate(dims):
            pts[:, :, j] = block[:, c, None]
        out[start:start + rows] = np.asarray(g(pts.reshape(-1, base.shape[1])), dtype=float).reshape(block.shape[0], M)
    return out


def _values(g, base):
    if hasattr(g, "pinned"):
        return g.pinned(base, [], np.empty((1, 0)))[0]
    return np.asarray(g(base), dtype=float)


def overall_mean(g, F: FactorDistribution) -> float:
    return float(np.mean(_values(g, F.sample())))


def main_effect(g, F: FactorDistribution, j, grid, m0=None) -> np.ndarray:
    base = F.sample()
    m0 = overall_mean(g, F) if m0 is None else m0
    return _pinned(g, base, [j], np.asarray(grid, float)[:, None]).mean(axis=1) - m0


def _total_variance(g, F):
    vals = _values(g, F.sample())
    var = float(np.var(vals))
    if not var > 1e-14 * max(1.0, float(np.mean(vals)) ** 2):
        raise ZeroVariance("function is constant under the factor distribution")
    return float(np.mean(vals)), var


def main_effect_index(g, F: FactorDistribution, j, n_nodes=DEFAULT_MAIN_NODES) -> float:
    """First-order Sobol index of factor ``j``, clipped to [0, 1]."""
    m0, var = _total_variance(g, F)
    curve = main_effect(g, F, j, F.nodes(j, n_nodes), m0=m0)
    return float(np.clip(np.var(curve) / var, 0.0, 1.0))


def interaction_effect(g, F: FactorDistribution, j, k, grid_j, grid_k, m0=None) -> np.ndarray:
    """Two-factor interaction surface, shape ``(len(grid_j), len(grid_k))``."""
    base = F.sample()
    m0 = overall_mean(g, F) if m0 is None else m0
    grid_j = np.asarray(grid_j, float)
    grid_k = np.asarray(grid_k, float)
    mj = main_effect(g, F, j, grid_j, m0)
    mk = main_effect(g, F, k, grid_k, m0)
    vj, vk = np.meshgrid(grid_j, grid_k, indexing="ij")
    cond = _pinned(g, base, [j, k], np.column_stack([vj.ravel(), vk.ravel()])).mean(axis=1)
    return cond.reshape(vj.shape) - m0 - mj[:, None] - mk[None, :]


def interaction_index(g, F: FactorDistribution, j, k, n_nodes=DEFAULT_PAIR_NODES) -> float:
    m0, var = _total_variance(g, F)
    surf = interaction_effect(g, F, j, k, F.nodes(j, n_nodes), F.nodes(k, n_nodes), m0)
    return float(np.clip(np.var(surf) / var, 0.0, 1.0))


@dataclass
class AnovaResult:
    """Decomposition of one function."""

    m0: float
    variance: float
    main_curves: list
    main_index: np.ndarray
    pair_surfaces: list
    pair_index: np.ndarray


def anova(g, F: FactorDistribution, main_nodes=None, pair_nodes=None, pairs=()):
    """Every main effect plus the requested pairwise interactions of ``g``.

    ``main_nodes``/``pair_nodes`` are lists of node arrays per factor. A
    constant ``g`` yields zero effects and zero indices.
    """
    d = F.d
    main_nodes = main_nodes or [F.nodes(j, DEFAULT_MAIN_NODES) for j in range(d)]
    pair_nodes = pair_nodes or [F.nodes(j, DEFAULT_PAIR_NODES) for j in range(d)]
    base = F.sample()
    vals = _values(g, base)
    m0 = float(vals.mean())
    var = float(vals.var())
    constant = not var > 1e-14 * max(1.0, m0 * m0)
    curves = [_pinned(g, base, [j], main_nodes[j][:, None]).mean(axis=1) - m0 for j in range(d)]
    main_index = np.array([0.0 if constant else np.clip(np.var(c) / var, 0.0, 1.0) for c in curves])
    surfaces, pair_index = [], []
    for j, k in pairs:
        gj, gk = pair_nodes[j], pair_nodes[k]
        mj = _pinned(g, base, [j], gj[:, None]).mean(axis=1) - m0
        mk = _pinned(g, base, [k], gk[:, None]).mean(axis=1) - m0
        vj, vk = np.meshgrid(gj, gk, indexing="ij")
        cond = _pinned(g, base, [j, k], np.column_stack([vj.ravel(), vk.ravel()])).mean(axis=1)
        surf = cond.reshape(vj.shape) - m0 - mj[:, None] - mk[None, :]
        surfaces.append(surf)
        pair_index.append(0.0 if constant else float(np.clip(np.var(surf) / var, 0.0, 1.0)))
    if constant:
        curves = [np.zeros_like(c) for c in curves]
        surfaces = [np.zeros_like(s) for s in surfaces]
    return AnovaResult(m0=m0, variance=0.0 if constant else var, main_curves=curves,
                       main_index=main_index, pair_surfaces=surfaces, pair_index=np.array(pair_index))


class R0Surface:
    """``x -> expit(E[logit beta(x)]) / expit(E[logit gamma(x)])`` for one posterior draw.

    The GP conditional means are ``mu + k(x)' a`` with a product-form kernel,
    so pinning coordinates only rescales the kernel columns. ``pinned``
    exploits that to evaluate many pinned grids with one matrix product.
    """

    def __init__(self, X_train, beta, gamma, psi):
        self.X = np.asarray(X_train, dtype=float)
        self.psi = psi
        self.log_phi = np.log(psi.phi)
        cov = build_cov(self.X, psi)
        self.a_beta = cov.solve(logit(beta) - psi.mu1)
        self.a_gamma = cov.solve(logit(gamma) - psi.mu2)
        self._base = None
        self._terms = None

    def _log_k(self, pts, dims):
        out = np.zeros((pts.shape[0], self.X.shape[0]))
        for c, j in enumerate(dims):
            out += 4.0 * self.log_phi[j] * np.subtract.outer(pts[:, c], self.X[:, j]) ** 2
        return out

    def _from_kernel(self, k):
        mb = self.psi.mu1 + k @ self.a_beta
        mg = self.psi.mu2 + k @ self.a_gamma
        return expit(mb) / expit(mg)

    def __call__(self, X):
        X = np.asarray(X, dtype=float).reshape(-1, self.X.shape[1])
        return self._from_kernel(np.exp(self._log_k(X, range(self.X.shape[1]))))

    def pinned(self, base, dims, values):
        if self._base is not base:
            self._base = base
            self._terms = [self._log_k(base[:, [j]], [j]) for j in range(self.X.shape[1])]
        rest = np.zeros_like(self._terms[0])
        for j in range(self.X.shape[1]):
            if j not in dims:
                rest += self._terms[j]
        R = np.exp(rest)
        P = np.exp(self._log_k(values, dims))
        mb = self.psi.mu1 + (P * self.a_beta) @ R.T
        mg = self.psi.mu2 + (P * self.a_gamma) @ R.T
        return expit(mb) / expit(mg)


@dataclass
class SensitivityReport:
    """Posterior draws of the R0 functional-ANOVA quantities.

    Arrays are indexed by posterior draw along axis 0.
    """

    names: list
    m0: np.ndarray
    main_nodes: list
    main_curves: list
    main_index: np.ndarray
    pairs: list
    pair_nodes: list = field(default_factory=list)
    pair_surfaces: list = field(default_factory=list)
    pair_index: np.ndarray = None

    def pair_label(self, p):
        j, k = self.pairs[p]
        return f"{self.names[j]}:{self.names[k]}"

    def write(self, outdir, unscale=None):
        """Write the report as CSV files; returns the list of paths written.

        ``unscale`` maps a factor index and scaled node values back to
        original units for the curve files.
        """
        from .data_io import write_rows

        outdir = Path(outdir)
        outdir.mkdir(parents=True, exist_ok=True)
        conv = unscale or (lambda j, v: v)
        written = []
        path = outdir / "m0_draws.csv"
        write_rows(path, ["draw_index", "m0"], ([k, v] for k, v in enumerate(self.m0)))
        written.append(path)
        for j, name in enumerate(self.names):
            nodes = conv(j, self.main_nodes[j])
            rows = ([x, k, self.main_curves[j][k, g]] for g, x in enumerate(nodes)
                    for k in range(self.m0.shape[0]))
            path = outdir / f"main_effect_{name}.csv"
            write_rows(path, [name, "draw_index", "value"], rows)
            written.append(path)
        path = outdir / "main_indices.csv"
        write_rows(path, ["draw_index"] + list(self.names),
                   ([k] + list(row) for k, row in enumerate(self.main_index)))
        written.append(path)
        if self.pairs:
            labels = [self.pair_label(p) for p in range(len(self.pairs))]
            path = outdir / "interaction_indices.csv"
            write_rows(path, ["draw_index"] + labels,
                       ([k] + list(row) for k, row in enumerate(self.pair_index)))
            written.append(path)
            for p, (j, k) in enumerate(self.pairs):
                surf = self.pair_surfaces[p]
                mean = surf.mean(axis=0)
                lo, hi = np.quantile(surf, [0.025, 0.975], axis=0)
                nj = conv(j, self.pair_nodes[p][0])
                nk = conv(k, self.pair_nodes[p][1])
                rows = ([nj[a], nk[b], mean[a, b], lo[a, b], hi[a, b]]
                        for a in range(len(nj)) for b in range(len(nk)))
                path = outdir / f"interaction_{self.names[j]}__{self.names[k]}.csv"
                write_rows(path, [self.names[j], self.names[k], "mean", "lo", "hi"], rows)
                written.append(path)
        return written


def all_pairs(d):
    return list(combinations(range(d), 2))


def posterior_sensitivity(chain: ChainSamples, X_train, F: FactorDistribution, names=None,
                          main_nodes=DEFAULT_MAIN_NODES, pair_nodes=DEFAULT_PAIR_NODES,
                          pairs=None) -> SensitivityReport:
    """Functional ANOVA of the per-draw R0 surface for every stored draw.

    The integration sample of ``F`` is shared by all draws, so differences
    between draws are not blurred by integration noise.
    """
    X_train = np.asarray(X_train, dtype=float)
    if X_train.ndim == 1:
        X_train = X_train.reshape(-1, 1)
    d = X_train.shape[1]
    if F.d != d:
        raise DimensionMismatch(f"factor distribution has {F.d} dims, data has {d}")
    names = list(names) if names is not None else [f"x{j + 1}" for j in range(d)]
    pairs = all_pairs(d) if pairs is None else [tuple(p) for p in pairs]
    mnodes = [F.nodes(j, main_nodes) for j in range(d)]
    pnodes = [F.nodes(j, pair_nodes) for j in range(d)]
    S = len(chain)
    m0 = np.empty(S)
    curves = [np.empty((S, len(mnodes[j]))) for j in range(d)]
    surfaces = [np.empty((S, len(pnodes[j]), len(pnodes[k]))) for j, k in pairs]
    main_index = np.empty((S, d))
    pair_index = np.empty((S, len(pairs)))
    for s in range(S):
        try:
            g = R0Surface(X_train, chain.beta[s], chain.gamma[s], chain.psi(s))
            res = anova(g, F, mnodes, pnodes, pairs)
        except Exception as exc:
            raise type(exc)(f"posterior draw {s}: {exc}") from exc
        m0[s] = res.m0
        for j in range(d):
            curves[j][s] = res.main_curves[j]
        for p in range(len(pairs)):
            surfaces[p][s] = res.pair_surfaces[p]
        main_index[s] = res.main_index
        pair_index[s] = res.pair_index
    return SensitivityReport(names=names, m0=m0, main_nodes=mnodes, main_curves=curves,
                             main_index=main_index, pairs=pairs,
                             pair_nodes=[(pnodes[j], pnodes[k]) for j, k in pairs],
                             pair_surfaces=surfaces, pair_index=pair_index)
