import math

import numpy as np
import pytest
from scipy.stats import norm

from ldpvol import TimeGrid
from ldpvol.errors import ConvergenceError, DomainError
from ldpvol.kernels import riemann_liouville, slice_variance
from ldpvol.mcsim import (
    SimConfig,
    ldp_tail_report,
    mc_call_report,
    mc_exit_report,
    simulate_logprice,
    simulate_vol,
)
from ldpvol.presets import bs_const, frac_heston, toy_sabr
from ldpvol.pricing import ExitDomain
from ldpvol.volmap import GAUSSIAN, VolProcessSpec, cir_coefficients

GRID = TimeGrid(1.0, 100)


def _cfg(model, ladder=(0.4,), n_paths=20000, seed=1, grid=GRID, **kw):
    return SimConfig(
        model=model, epsilon_ladder=list(ladder), n_paths=n_paths, grid=grid, seed=seed, **kw
    )


def test_simconfig_validation():
    with pytest.raises(DomainError):
        _cfg(bs_const(), ladder=(0.4, 0.4))
    with pytest.raises(DomainError):
        _cfg(bs_const(), ladder=(1.5,))
    with pytest.warns(UserWarning):
        _cfg(bs_const(), n_paths=10)


def test_gaussian_vol_ito_isometry():
    spec = VolProcessSpec(
        family=GAUSSIAN, d=1, m=1, noise_kernels=[[riemann_liouville(0.3)]]
    )
    ens = simulate_vol(spec, 1.0, 20000, GRID, seed=42)
    assert ens.n_excluded == 0
    got = float(ens.paths[:, -1, 0].var())
    want = slice_variance(riemann_liouville(0.3), 1.0)
    se = want * math.sqrt(2.0 / 20000)
    assert abs(got - want) < 3 * se


def test_vol_eps_zero_is_skeleton():
    spec = frac_heston().vol
    ens = simulate_vol(spec, 0.0, 50, GRID, seed=5)
    from ldpvol.paths import Control
    from ldpvol.volmap import hat_map

    skel = hat_map(spec, Control.zero(GRID, 1)).values
    assert np.max(np.abs(ens.paths - skel)) < 1e-12


def test_vol_scaling_coherence_toy():
    spec = toy_sabr().vol
    e1 = simulate_vol(spec, 1.0, 256, GRID, seed=7).paths
    e2 = simulate_vol(spec, 0.25, 256, GRID, seed=7).paths
    assert np.max(np.abs(e2 - 0.5 * e1)) < 1e-12


def test_cir_small_eps_tube():
    kappa, theta, eta, v0 = 2.0, 0.09, 0.4, 0.02
    drift, disp = cir_coefficients(kappa, theta, eta)
    spec = frac_heston(kappa=kappa, theta=theta, eta=eta, v0=v0).vol
    eps = 0.01
    ens = simulate_vol(spec, eps, 2000, GRID, seed=9)
    # auxiliary CIR paths cluster around the mean-reversion solution; the
    # smoothed output stays in a sqrt(eps)-width tube around the skeleton
    from ldpvol.paths import Control
    from ldpvol.volmap import hat_map

    skel = hat_map(spec, Control.zero(GRID, 1)).values[:, 0]
    spread = np.max(np.abs(ens.paths[:, :, 0] - skel), axis=1)
    assert np.quantile(spread, 0.99) < 10.0 * math.sqrt(eps) * eta


def test_logprice_constant_sigma_is_gaussian():
    m = bs_const()
    cfg = _cfg(m, ladder=(1.0,), n_paths=50000)
    s = simulate_logprice(cfg, 1.0)
    assert s.n_excluded == 0
    var = float(s.terminal[:, 0].var())
    se = 0.04 * math.sqrt(2.0 / 50000)
    assert abs(var - 0.04) < 3 * se
    assert abs(float(s.terminal[:, 0].mean()) + 0.02) < 3 * 0.2 / math.sqrt(50000)


def test_logprice_eps_zero_deterministic_drift():
    m = bs_const(r=0.03)
    with pytest.warns(UserWarning):  # tiny path count triggers the validity warning
        cfg = _cfg(m, ladder=(0.5,), n_paths=64)
    s = simulate_logprice(cfg, 0.0)
    np.testing.assert_allclose(s.terminal[:, 0], 0.03, atol=1e-12)


def test_determinism_and_repartitioning():
    m = toy_sabr()
    cfg1 = _cfg(m, ladder=(0.2,), n_paths=5000, seed=33, max_workers=1)
    cfg2 = _cfg(m, ladder=(0.2,), n_paths=5000, seed=33, max_workers=4)
    a = simulate_logprice(cfg1, 0.2).terminal
    b = simulate_logprice(cfg2, 0.2).terminal
    np.testing.assert_array_equal(a, b)
    r1 = ldp_tail_report(cfg1, 0.1, reference_rate=0.0)
    r2 = ldp_tail_report(cfg2, 0.1, reference_rate=0.0)
    assert r1.rows[0].estimate == r2.rows[0].estimate


def test_grid_refinement_weak_consistency():
    m = bs_const()
    est = []
    for n in (100, 200):
        cfg = _cfg(m, ladder=(1.0,), n_paths=40000, grid=TimeGrid(1.0, n), seed=77)
        est.append(float(simulate_logprice(cfg, 1.0).terminal[:, 0].var()))
    se = 0.04 * math.sqrt(2.0 / 40000)
    assert abs(est[0] - est[1]) < 3 * math.sqrt(2) * se


def test_tail_report_gaussian_oracle():
    # exact tail for the constant-sigma model at each ladder point
    m = bs_const()
    cfg = _cfg(m, ladder=(0.4, 0.2), n_paths=200000, seed=11)
    rep = ldp_tail_report(cfg, 0.1, reference_rate=0.125)
    for row in rep.rows:
        eps = row.epsilon
        z = (0.1 + 0.5 * eps * 0.04) / (0.2 * math.sqrt(eps))
        p = float(norm.sf(z))
        se = math.sqrt(p * (1 - p) / cfg.n_paths)
        assert abs(row.estimate - p) < 4 * se
        assert row.n_effective == cfg.n_paths
        assert not row.zero_hits


def test_tail_report_sure_event():
    m = bs_const()
    cfg = _cfg(m, ladder=(0.1,), n_paths=5000)
    rep = ldp_tail_report(cfg, -10.0, reference_rate=0.0)
    assert rep.rows[0].estimate == 1.0
    assert rep.rows[0].eps_log_estimate == pytest.approx(0.0, abs=1e-12)


def test_tail_report_zero_hits_flagged():
    m = bs_const()
    cfg = _cfg(m, ladder=(0.4, 0.01), n_paths=2000, seed=2)
    # hits at eps=0.4, none in the far tail at eps=0.01
    rep = ldp_tail_report(cfg, 0.25, reference_rate=0.78125)
    assert not rep.rows[0].zero_hits
    assert rep.rows[1].zero_hits
    assert math.isinf(rep.rows[1].eps_log_estimate)


def test_tail_report_all_zero_raises():
    m = bs_const()
    cfg = _cfg(m, ladder=(0.05,), n_paths=1000, seed=3)
    with pytest.raises(ConvergenceError):
        ldp_tail_report(cfg, 5.0, reference_rate=1.0)


def test_call_report_black_scholes_oracle():
    m = bs_const()
    cfg = _cfg(m, ladder=(0.4, 0.2), n_paths=100000, seed=13)
    K = math.exp(0.1)
    rep = mc_call_report(cfg, K, reference_rate=0.125)
    for row in rep.rows:
        eps = row.epsilon
        v = 0.2 * math.sqrt(eps)
        d1 = (-0.1 + 0.5 * v * v) / v
        d2 = d1 - v
        price = float(norm.cdf(d1) - K * norm.cdf(d2))
        assert abs(row.estimate - price) < 4 * max(row.std_error * price / eps, 1e-5)


def test_call_report_atm_rate_zero_regime():
    # in-the-money strike: the price stays bounded away from zero, so the
    # scaled log estimate decays to zero linearly in epsilon
    m = bs_const()
    cfg = _cfg(m, ladder=(0.4, 0.2, 0.1), n_paths=20000, seed=4)
    rep = mc_call_report(cfg, 0.9, reference_rate=0.0)
    logs = [r.eps_log_estimate for r in rep.rows]
    assert all(a > b for a, b in zip(logs, logs[1:]))
    assert logs[-1] < logs[0] / 3.0


def test_call_report_antithetic_consistent():
    m = bs_const()
    base = _cfg(m, ladder=(0.2,), n_paths=100000, seed=21)
    anti = _cfg(m, ladder=(0.2,), n_paths=100000, seed=21, antithetic=True)
    K = math.exp(0.1)
    r1 = mc_call_report(base, K, reference_rate=0.125).rows[0]
    r2 = mc_call_report(anti, K, reference_rate=0.125).rows[0]
    se = math.hypot(r1.std_error * r1.estimate / r1.epsilon, r2.std_error * r2.estimate / r2.epsilon)
    assert abs(r1.estimate - r2.estimate) < 3 * se


def test_exit_report_reflection_oracle():
    m = bs_const()
    h = 0.17
    dom = ExitDomain("half_space", normal=[1.0], offset=h)
    cfg = _cfg(m, ladder=(0.2,), n_paths=100000, seed=17, grid=TimeGrid(1.0, 200))
    rep = mc_exit_report(cfg, dom, 1.0, reference_rate=h**2 / 0.08)
    row = rep.rows[0]
    # reflection principle with the small negative drift; discrete monitoring
    # undershoots slightly
    eps = 0.2
    v = 0.2 * math.sqrt(eps)
    a = -0.5 * eps * 0.04
    p_cont = float(
        norm.sf((h - a) / v) + math.exp(2 * a * h / v**2) * norm.sf((h + a) / v)
    )
    assert 0.5 * p_cont < row.estimate <= p_cont * 1.05
    assert rep.reference_rate == pytest.approx(0.361250)


def test_exit_report_boundary_at_start():
    # boundary through the start point: nearly every path registers an exit;
    # the shortfall from 1 is the discrete-monitoring survival ~ n^(-1/2)
    m = bs_const()
    dom = ExitDomain("half_space", normal=[1.0], offset=0.0)
    cfg = _cfg(m, ladder=(0.2,), n_paths=2000, seed=19)
    rep = mc_exit_report(cfg, dom, 1.0, reference_rate=0.0)
    assert rep.rows[0].estimate > 0.9
    finer = _cfg(m, ladder=(0.2,), n_paths=2000, seed=19, grid=TimeGrid(1.0, 400))
    rep2 = mc_exit_report(finer, dom, 1.0, reference_rate=0.0)
    assert rep2.rows[0].estimate >= rep.rows[0].estimate


def test_exit_report_far_boundary_zero_hits():
    m = bs_const()
    dom = ExitDomain("half_space", normal=[1.0], offset=0.3)
    cfg = _cfg(m, ladder=(0.4, 0.01), n_paths=2000, seed=23)
    rep = mc_exit_report(cfg, dom, 1.0, reference_rate=0.3**2 / 0.08)
    assert not rep.rows[0].zero_hits
    assert rep.rows[1].zero_hits


def test_tail_report_computes_reference_rate():
    m = toy_sabr()
    cfg = _cfg(m, ladder=(0.4,), n_paths=2000, seed=8)
    rep = ldp_tail_report(cfg, 0.1)  # reference computed from the model
    assert 0.005 <= rep.reference_rate <= 0.0158198


def test_multivariate_logprice_smoke():
    from ldpvol.presets import mixed_demo

    m = mixed_demo()
    cfg = _cfg(m, ladder=(0.5,), n_paths=2000, grid=TimeGrid(1.0, 40), seed=3)
    s = simulate_logprice(cfg, 0.5)
    assert s.terminal.shape == (2000, 2)
    assert np.all(np.isfinite(s.terminal))
    assert s.n_excluded == 0


def test_report_json_csv(tmp_path):
    m = bs_const()
    cfg = _cfg(m, ladder=(0.4, 0.2), n_paths=2000, seed=29)
    rep = ldp_tail_report(cfg, 0.05, reference_rate=0.125)
    obj = rep.to_json_obj()
    assert obj["quantity"] == "tail_probability"
    assert len(obj["rows"]) == 2
    f = tmp_path / "rep.csv"
    rep.to_csv(f)
    lines = f.read_text().strip().splitlines()
    assert lines[0].startswith("epsilon,")
    assert len(lines) == 3
