"""Acceptance criteria, each at its stated tolerance.

Every test prints one ``CRITERION k: PASS|FAIL ...`` line with the measured
numbers before asserting, so the verdicts are visible in ``pytest -v``
output whatever the outcome.
"""

import json
import math
import time

import numpy as np
import pytest
from scipy import stats

from epical.cli import main
from epical.data_io import COVARIATE_COLUMNS
from epical.gp import Hyperparams, build_cov, inv_logit, logit
from epical.mcmc import (
    ChainConfig,
    ChainSamples,
    ChainState,
    PriorConfig,
    _loglik_from_logits,
    initial_state,
    log_posterior_constant,
    log_unnorm_posterior,
    run_chain,
    sweep,
    update_mu,
    update_tau,
)
from epical.sensitivity import FactorDistribution, interaction_index, main_effect_index
from epical.sir import Compartments, MeanModel, rollout

from oracles import (
    batch_se,
    benchmark_study,
    brute_log_posterior,
    gaussian_logpdf_in_mu,
    grid_cdf,
    ks_distance,
    monitored,
    prior_draw,
)

pytestmark = pytest.mark.slow


@pytest.fixture
def verdict(capsys):
    def report(k, ok, detail):
        with capsys.disabled():
            print(f"\nCRITERION {k}: {'PASS' if ok else 'FAIL'} {detail}")
        return ok

    return report


class Data:
    def __init__(self, X, y):
        self.X = np.asarray(X, float)
        self.y = np.asarray(y)


# ---------------------------------------------------------------- 1-3: benchmark study


def test_criterion_1_benchmark_recovery(verdict):
    res = [benchmark_study(s) for s in range(5)]
    b = float(np.mean([r.beta_rmse for r in res]))
    g = float(np.mean([r.gamma_rmse for r in res]))
    ok = b < 0.10 and g < 0.15
    verdict(1, ok, f"mean grid RMSE beta={b:.4f} (<0.10) gamma={g:.4f} (<0.15) over 5 seeds; "
                   f"per seed beta={[round(r.beta_rmse, 3) for r in res]} gamma={[round(r.gamma_rmse, 3) for r in res]}")
    assert ok


def test_criterion_2_joint_beats_independent(verdict):
    wins, detail = 0, []
    for s in range(10):
        j, i = benchmark_study(s), benchmark_study(s, independent=True)
        wins += j.test_rmse_truth <= i.test_rmse_truth
        detail.append(f"{j.test_rmse_truth:.2f}/{i.test_rmse_truth:.2f}")
    ok = wins >= 7
    verdict(2, ok, f"joint RMSE <= independent RMSE in {wins}/10 seeds (need >= 7); joint/indep {detail}")
    assert ok


def test_criterion_3_predictive_coverage(verdict):
    cov = [benchmark_study(s).coverage90 for s in range(5)]
    avg = float(np.mean(cov))
    ok = avg >= 0.80
    verdict(3, ok, f"90% interval coverage averaged {avg:.2f} (need >= 0.80); per seed {cov}")
    assert ok


# ---------------------------------------------------------------- 4: sampler oracles


def test_criterion_4a_log_posterior_oracle(verdict):
    rng = np.random.default_rng(2024)
    worst, worst_cond = 0.0, 0.0
    for _ in range(50):
        n, d = int(rng.integers(1, 6)), int(rng.integers(1, 4))
        # Stratified rows and phi < 0.5 keep K well conditioned. With a smooth
        # kernel over near-duplicate rows, float64 cannot pin the density to
        # 1e-8 absolute in any implementation (cond(K) * |quad| * eps > 1e-8).
        X = (rng.permuted(np.tile(np.arange(n), (d, 1)), axis=1).T + rng.uniform(size=(n, d))) / n
        beta, gamma = rng.uniform(0.05, 0.95, n), rng.uniform(0.05, 0.95, n)
        psi = Hyperparams(rho=rng.uniform(0, 0.95), phi=rng.uniform(0.05, 0.5, d), mu1=rng.normal(),
                          mu2=rng.normal(), tau=rng.uniform(0.2, 3))
        prior = PriorConfig(a=rng.uniform(0.5, 3), b=rng.uniform(0.5, 3), b_rho=rng.uniform(0.1, 2),
                            b_phi=rng.uniform(0.1, 2), alpha1=rng.normal(), alpha2=rng.normal(),
                            sigma2_1=rng.uniform(0.5, 2), sigma2_2=rng.uniform(0.5, 2))
        y = rng.poisson(4, n)
        model = MeanModel("test", start=int(rng.integers(0, 20)))
        ours = log_unnorm_posterior(beta, gamma, psi, Data(X, y), model, prior) + log_posterior_constant(y, d, prior)
        brute = brute_log_posterior(beta, gamma, y, X, psi.rho, psi.phi, psi.mu1, psi.mu2, psi.tau,
                                    model.curve(beta, gamma), prior)
        worst = max(worst, abs(ours - brute))
        worst_cond = max(worst_cond, np.linalg.cond(build_cov(X, psi).corr))
    ok = worst <= 1e-8
    verdict("4a", ok, f"max |ours - brute force| = {worst:.2e} over 50 instances (need <= 1e-8); "
                      f"largest cond(K) {worst_cond:.1e}")
    assert ok


def _n2_state():
    X = np.array([[0.25], [0.7]])
    psi = Hyperparams(rho=0.45, phi=[0.4], mu1=0.3, mu2=-0.2, tau=0.9)
    zb, zg = np.array([0.8, -0.1]), np.array([-0.6, 0.4])
    return X, ChainState(z_beta=zb, z_gamma=zg, psi=psi, cov=build_cov(X, psi), steps={})


def test_criterion_4b_conjugate_updates(verdict):
    prior = PriorConfig(a=2.0, b=1.0, alpha1=0.2, alpha2=-0.3, sigma2_1=1.5, sigma2_2=0.7)
    X, st = _n2_state()
    psi0 = st.psi
    z = np.concatenate([st.z_beta, st.z_gamma])
    rng = np.random.default_rng(7)
    N = 10_000
    mus = np.empty((N, 2))
    for k in range(N):
        st.psi = psi0
        update_mu(st, prior, rng)
        mus[k] = st.psi.mu1, st.psi.mu2
    taus = np.empty(N)
    for k in range(N):
        st.psi = psi0
        update_tau(st, prior, rng)
        taus[k] = st.psi.tau

    # marginal grid densities of mu1 and mu2 from the materialised joint density
    g1 = np.linspace(-4, 4, 321)
    g2 = np.linspace(-4, 4, 321)
    logd = np.array([[gaussian_logpdf_in_mu(z, X, psi0.rho, psi0.phi, psi0.tau, a, b)
                      + stats.norm(prior.alpha1, math.sqrt(prior.sigma2_1)).logpdf(a)
                      + stats.norm(prior.alpha2, math.sqrt(prior.sigma2_2)).logpdf(b) for b in g2] for a in g1])
    w = np.exp(logd - logd.max())
    ks_mu1 = ks_distance(mus[:, 0], g1, grid_cdf(g1, np.log(np.trapezoid(w, g2, axis=1))))
    ks_mu2 = ks_distance(mus[:, 1], g2, grid_cdf(g2, np.log(np.trapezoid(w, g1, axis=0))))

    gt = np.linspace(1e-3, 60, 60_001)
    logt = np.array([gaussian_logpdf_in_mu(z, X, psi0.rho, psi0.phi, t, psi0.mu1, psi0.mu2) for t in gt[::20]])
    logt = np.interp(gt, gt[::20], logt) + stats.invgamma(prior.a, scale=prior.b).logpdf(gt)
    ks_tau = ks_distance(taus, gt, grid_cdf(gt, logt))
    worst = max(ks_mu1, ks_mu2, ks_tau)
    ok = worst < 0.05
    verdict("4b", ok, f"KS mu1={ks_mu1:.4f} mu2={ks_mu2:.4f} tau={ks_tau:.4f} over 1e4 draws (need < 0.05)")
    assert ok


def test_criterion_4c_geweke(verdict):
    prior = PriorConfig(a=3.0, b=2.0, b_rho=2.0, b_phi=2.0)
    X = np.array([[0.15], [0.5], [0.85]])
    model = MeanModel("test")
    cfg = ChainConfig(burn_in=1, samples=1, thin=1)
    rounds = 10_000
    rng = np.random.default_rng(11)

    def draw_y(zb, zg):
        return rng.poisson(model.curve(inv_logit(zb), inv_logit(zg)))

    # marginal-conditional simulator
    mc = []
    for _ in range(rounds):
        p = prior_draw(rng, X, prior)
        mc.append(monitored(p, draw_y(p["zb"], p["zg"])))

    # successive-conditional simulator: one sampler sweep, then fresh data
    p = prior_draw(rng, X, prior)
    y = draw_y(p["zb"], p["zg"])
    data = Data(X, y)
    state = initial_state(X, data, model, cfg, rng)
    psi = Hyperparams(rho=p["rho"], phi=p["phi"], mu1=p["mu1"], mu2=p["mu2"], tau=p["tau"])
    state.z_beta, state.z_gamma, state.psi, state.cov = p["zb"], p["zg"], psi, build_cov(X, psi)
    state.loglik = _loglik_from_logits(state.z_beta, state.z_gamma, y, model)
    sc = []
    for _ in range(rounds):
        sweep(state, data, model, prior, cfg, rng)
        data.y = draw_y(state.z_beta, state.z_gamma)
        state.loglik = _loglik_from_logits(state.z_beta, state.z_gamma, data.y, model)
        q = dict(mu1=state.psi.mu1, mu2=state.psi.mu2, tau=state.psi.tau, rho=state.psi.rho,
                 phi=state.psi.phi, zb=state.z_beta, zg=state.z_gamma)
        sc.append(monitored(q, data.y))

    zs = {}
    for key in mc[0]:
        a = np.array([m[key] for m in mc])
        b = np.array([s[key] for s in sc])
        se = math.sqrt(a.var(ddof=1) / a.size + batch_se(b) ** 2)
        zs[key] = (b.mean() - a.mean()) / se
    worst = max(abs(v) for v in zs.values())
    ok = worst < 4
    verdict("4c", ok, "Geweke z-scores " + ", ".join(f"{k}={v:+.2f}" for k, v in zs.items())
            + " (need all |z| < 4)")
    assert ok


# ---------------------------------------------------------------- 5: sensitivity analytics


def test_criterion_5_sensitivity_analytics(verdict):
    F = FactorDistribution.unit_cube(2, n_samples=100_000, seed=5)
    t0 = time.perf_counter()
    add = lambda x: x[:, 0] + x[:, 1]  # noqa: E731
    s1, s2, s12 = (main_effect_index(add, F, 0), main_effect_index(add, F, 1), interaction_index(add, F, 0, 1))
    t_add = time.perf_counter() - t0
    t0 = time.perf_counter()
    mul = lambda x: x[:, 0] * x[:, 1]  # noqa: E731
    p1, p12 = main_effect_index(mul, F, 0), interaction_index(mul, F, 0, 1)
    t_mul = time.perf_counter() - t0
    ok = (abs(s1 - 0.5) <= 0.02 and abs(s2 - 0.5) <= 0.02 and s12 < 0.01
          and abs(p1 - 3 / 7) <= 0.02 and abs(p12 - 1 / 7) <= 0.02 and t_add < 60 and t_mul < 60)
    verdict(5, ok, f"x1+x2: S1={s1:.4f} S2={s2:.4f} S12={s12:.2e} ({t_add:.1f}s); "
                   f"x1*x2: S1={p1:.4f} (3/7={3 / 7:.4f}) S12={p12:.4f} (1/7={1 / 7:.4f}) ({t_mul:.1f}s)")
    assert ok


# ---------------------------------------------------------------- 6: structural invariants


def test_criterion_6_structural_invariants(verdict, tmp_path):
    rng = np.random.default_rng(6)
    n = 1e6
    s, i, r = rollout(Compartments.from_infected(n, 100), rng.uniform(0.05, 0.6, 1000), rng.uniform(0.05, 0.5, 1000))
    conservation = float(np.max(np.abs(s + i + r - n)) / n)

    min_eig = min(np.linalg.eigvalsh(build_cov(rng.uniform(size=(m, d)), rng.uniform(0.01, 0.999, d)).corr).min()
                  for m, d in zip(rng.integers(1, 31, 200), rng.integers(1, 7, 200)))

    p = np.concatenate([rng.uniform(1e-6, 1 - 1e-6, 100_000), [1e-6, 0.5, 1 - 1e-6]])
    round_trip = float(np.max(np.abs(inv_logit(logit(p)) - p)))

    train = Data(rng.uniform(size=(15, 2)), rng.poisson(3, 15))
    cfg = ChainConfig(burn_in=100, samples=100, thin=1, seed=3)
    a = run_chain(train, MeanModel("test"), PriorConfig(), cfg)
    b = run_chain(train, MeanModel("test"), PriorConfig(), cfg)
    a.to_csv(tmp_path / "a.csv")
    b.to_csv(tmp_path / "b.csv")
    lossless = np.array_equal(ChainSamples.from_csv(tmp_path / "a.csv").to_matrix(), a.to_matrix())
    deterministic = (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()

    ok = conservation <= 1e-9 and min_eig >= 0 and round_trip <= 1e-12 and lossless and deterministic
    verdict(6, ok, f"conservation {conservation:.1e}*N; min kernel eigenvalue {min_eig:.2e}; "
                   f"logit round trip {round_trip:.1e}; chain file lossless={lossless}; "
                   f"repeat runs byte-identical={deterministic}")
    assert ok


# ---------------------------------------------------------------- 7: pipeline smoke test


def test_criterion_7_city_pipeline(verdict, tmp_path):
    out = tmp_path / "runs"
    args = ["--cities", "riverton", "--out", str(out), "--seed", "1"]
    t0 = time.perf_counter()
    codes = {cmd: main([cmd, *args]) for cmd in ("fit", "predict", "sensitivity", "report")}
    elapsed = time.perf_counter() - t0
    run = out / "riverton"
    meta = json.loads((run / "fit.json").read_text())
    forecast_rows = len((run / "forecast.csv").read_text().splitlines()) - 1
    sens = run / "sensitivity"
    main_files = sorted(p.name for p in sens.glob("main_effect_*.csv"))
    pair_cols = (sens / "interaction_indices.csv").read_text().splitlines()[0].split(",")[1:]
    ok = (all(c == 0 for c in codes.values()) and meta["shift_days"] == 11 and forecast_rows == 14
          and main_files == sorted(f"main_effect_{c}.csv" for c in COVARIATE_COLUMNS)
          and len(pair_cols) == 15 and elapsed < 600)
    verdict(7, ok, f"exit codes {codes}; shift {meta['shift_days']} days; {forecast_rows}-day forecast; "
                   f"{len(main_files)} main-effect files; {len(pair_cols)} pairwise indices; {elapsed:.0f}s")
    assert ok
