import math

import numpy as np
import pytest

from ldpvol import TimeGrid
from ldpvol.errors import (
    AssumptionError,
    DomainError,
    UnsupportedDomainError,
)
from ldpvol.presets import bs_const, frac_heston, reflected_ou, toy_sabr
from ldpvol.pricing import (
    ExitDomain,
    asian_asymptote,
    barrier_asymptote,
    call_asymptote,
    exit_asymptote,
    implied_vol_limit,
)

N_FAST = 100


# ---------------------------------------------------------------------------
# domains
# ---------------------------------------------------------------------------


def test_domain_validation():
    with pytest.raises(UnsupportedDomainError):
        ExitDomain("disk")
    with pytest.raises(UnsupportedDomainError):
        ExitDomain("box", lower=[0.0], upper=[0.0])
    with pytest.raises(UnsupportedDomainError):
        ExitDomain("half_space", normal=[0.0], offset=1.0)
    d = ExitDomain("half_space", normal=[2.0], offset=4.0)
    assert d.offset == pytest.approx(2.0)  # normalized
    assert not d.strictly_outside([1.9])
    assert d.strictly_outside([2.1])


def test_domain_log_image():
    box = ExitDomain("box", lower=[0.0, 0.5], upper=[2.0, 4.0])
    im = box.log_image()
    assert im.kind == "box"
    assert im.lower[0] == -math.inf
    assert im.lower[1] == pytest.approx(math.log(0.5))
    np.testing.assert_allclose(im.upper, [math.log(2.0), math.log(4.0)])
    hs = ExitDomain("half_space", normal=[1.0], offset=1.2)
    im2 = hs.log_image()
    assert im2.upper[0] == pytest.approx(math.log(1.2))
    with pytest.raises(UnsupportedDomainError):
        ExitDomain("half_space", normal=[1.0, 1.0], offset=1.0).log_image()


def test_domain_json_roundtrip():
    for d in (
        ExitDomain("box", lower=[-1.0], upper=[0.5]),
        ExitDomain("half_space", normal=[1.0], offset=0.3),
    ):
        d2 = ExitDomain.from_json_obj(d.to_json_obj())
        assert d2.kind == d.kind


# ---------------------------------------------------------------------------
# call and implied vol
# ---------------------------------------------------------------------------


def test_call_constant_sigma_oracle():
    m = bs_const()
    rep = call_asymptote(m, math.exp(0.1), 1.0, n_steps=N_FAST)
    assert rep.rate == pytest.approx(0.01 / (2 * 0.04), rel=1e-6)


def test_call_at_the_money_zero_rate():
    assert call_asymptote(bs_const(), 1.0, 1.0, n_steps=N_FAST).rate == 0.0


def test_call_toy_inside_bounds():
    rep = call_asymptote(toy_sabr(), math.exp(0.1), 1.0)
    assert 0.005 - 1e-9 <= rep.rate <= 0.0158198


def test_call_validation():
    with pytest.raises(DomainError):
        call_asymptote(bs_const(), -1.0, 1.0)
    with pytest.raises(AssumptionError):
        call_asymptote(reflected_ou(), 1.2, 1.0)
    # vanishing sigma: strikes at or below s0*exp(rT) rejected
    m = frac_heston(r=0.02)
    with pytest.raises(DomainError):
        call_asymptote(m, 1.0, 1.0)
    rep = call_asymptote(m, 1.3, 1.0, n_steps=50, restarts=2)
    assert rep.rate > 0.0


def test_iv_limit_constant_sigma_is_sigma():
    m = bs_const(sigma0=0.35)
    rep = implied_vol_limit(m, 0.1, 1.0, n_steps=N_FAST)
    assert rep.limit_value == pytest.approx(0.35, rel=1e-6)
    rep2 = implied_vol_limit(m, 0.2, 1.0, n_steps=N_FAST)
    assert rep2.limit_value == pytest.approx(rep.limit_value, rel=1e-6)


def test_iv_limit_internal_consistency():
    rep = implied_vol_limit(toy_sabr(), 0.1, 1.0)
    assert rep.limit_value * math.sqrt(2.0 * 1.0 * rep.rate) == pytest.approx(
        0.1, abs=1e-10
    )


def test_iv_limit_degenerate_flag():
    from ldpvol.errors import UnsupportedFormError

    m = bs_const(r=0.0)
    with pytest.raises(DomainError):
        implied_vol_limit(m, 0.0, 1.0)  # k must be positive
    with pytest.raises(UnsupportedFormError):
        implied_vol_limit(bs_const(s0=2.0), 0.1, 1.0)  # needs s0 = 1


def test_iv_limit_toy_inside_bounds():
    from ldpvol.toymodel import ToyParams, iv_limit_bounds

    rep = implied_vol_limit(toy_sabr(), 0.1, 1.0)
    lo, hi = iv_limit_bounds(ToyParams(1.0, 0.1))
    assert lo <= rep.limit_value <= hi


# ---------------------------------------------------------------------------
# exit and barrier
# ---------------------------------------------------------------------------


def test_exit_half_space_oracle():
    m = bs_const()
    h = 0.17
    dom = ExitDomain("half_space", normal=[1.0], offset=h)
    rep = exit_asymptote(m, dom, deadline=1.0, n_steps=N_FAST)
    exact = h**2 / (2 * 0.04)
    assert rep.rate == pytest.approx(exact, rel=1e-2)
    assert rep.diagnostics["converged"]


def test_exit_boundary_at_start_is_free():
    m = bs_const()
    dom = ExitDomain("half_space", normal=[1.0], offset=0.0)  # x0 = 0 on boundary
    rep = exit_asymptote(m, dom, deadline=1.0, n_steps=40, restarts=0)
    assert rep.rate == 0.0


def test_exit_outside_raises():
    m = bs_const()
    dom = ExitDomain("half_space", normal=[1.0], offset=-0.5)
    with pytest.raises(DomainError):
        exit_asymptote(m, dom, deadline=1.0, n_steps=40)


def test_exit_rate_monotone_in_deadline():
    m = bs_const()
    dom = ExitDomain("half_space", normal=[1.0], offset=0.2)
    r_half = exit_asymptote(m, dom, deadline=0.5, horizon=1.0, n_steps=N_FAST).rate
    r_full = exit_asymptote(m, dom, deadline=1.0, horizon=1.0, n_steps=N_FAST).rate
    assert r_half >= r_full - 1e-9
    # shorter window: optimal ramp reaches the boundary by t, rate h^2/(2 s^2 t)
    assert r_half == pytest.approx(0.2**2 / (2 * 0.04 * 0.5), rel=1e-2)


def test_exit_box_two_sided():
    m = bs_const()
    dom = ExitDomain("box", lower=[-0.2], upper=[0.3])
    rep = exit_asymptote(m, dom, deadline=1.0, n_steps=N_FAST)
    # the cheaper (nearer) face wins
    assert rep.rate == pytest.approx(0.2**2 / (2 * 0.04), rel=1e-2)
    assert rep.diagnostics["best_face"] == 1  # lower face


def test_barrier_oracle_and_prefactor():
    m = bs_const(r=0.05)
    pd = ExitDomain("half_space", normal=[1.0], offset=1.25)
    rep = barrier_asymptote(m, pd, horizon=1.0, n_steps=N_FAST)
    # drift r contributes through the optimizer; with r=0 the oracle is exact
    assert rep.diagnostics["discount_prefactor"] == pytest.approx(math.exp(-0.05))
    m0 = bs_const()
    rep0 = barrier_asymptote(m0, pd, horizon=1.0, n_steps=N_FAST)
    assert rep0.rate == pytest.approx(math.log(1.25) ** 2 / (2 * 0.04), rel=1e-2)


def test_barrier_at_spot_zero_rate():
    m = bs_const()
    pd = ExitDomain("box", lower=[0.0], upper=[1.0])  # upper barrier at s0
    rep = barrier_asymptote(m, pd, horizon=1.0, n_steps=40, restarts=0)
    assert rep.rate == 0.0


def test_barrier_widening_box_never_decreases_rate():
    m = bs_const()
    rates = []
    for hi in (1.2, 1.35, 1.5):
        pd = ExitDomain("box", lower=[0.0], upper=[hi])
        rates.append(barrier_asymptote(m, pd, horizon=1.0, n_steps=60, restarts=2).rate)
    assert all(b >= a - 1e-9 for a, b in zip(rates, rates[1:]))


def test_barrier_requires_positive_orthant():
    m = bs_const()
    with pytest.raises(DomainError):
        barrier_asymptote(m, ExitDomain("box", lower=[-1.0], upper=[2.0]), 1.0)


# ---------------------------------------------------------------------------
# asian
# ---------------------------------------------------------------------------


def test_asian_zero_rate_at_or_below_spot():
    m = bs_const()
    for K in (0.8, 1.0):
        rep = asian_asymptote(m, K, 1.0, n_steps=40)
        assert rep.rate == 0.0
        assert rep.diagnostics["converged"]


def test_asian_monotone_ladder():
    m = bs_const()
    rates = [asian_asymptote(m, K, 1.0, n_steps=50).rate for K in (1.05, 1.1, 1.2)]
    assert all(r > 0 for r in rates)
    assert all(b >= a - 1e-9 for a, b in zip(rates, rates[1:]))


def test_asian_brute_force_gap():
    # dense random search over coarse controls upper-bounds the optimizer;
    # candidates mix smooth random profiles with rough noise in both controls
    m = bs_const()
    K = 1.05
    n8 = 8
    rep = asian_asymptote(m, K, 1.0, n_steps=n8)
    grid8 = TimeGrid(1.0, n8)
    from ldpvol.pricing import _AsianProblem

    prob = _AsianProblem(m, grid8, K)
    tk = grid8.nodes[:-1]
    rng = np.random.default_rng(2024)
    best = math.inf
    chunk = 25_000
    for _ in range(10**6 // chunk):
        amp = rng.normal(scale=0.8, size=(chunk, 1))
        decay = rng.uniform(0.0, 6.0, size=(chunk, 1))
        rough = rng.uniform(0.0, 0.12, size=(chunk, 1))
        l = amp * np.exp(-decay * tk) + rough * rng.standard_normal((chunk, n8))
        f = rng.uniform(0.0, 0.25, size=(chunk, 1)) * rng.standard_normal((chunk, n8))
        z = np.concatenate([l, f], axis=1)
        feas = prob.violation_batch(z) <= 0.0
        if np.any(feas):
            best = min(best, float(np.min(prob.energies(z[feas]))))
    assert best >= rep.rate - 1e-9
    assert best <= 1.10 * rep.rate


def test_exit_toy_joint_control_beats_frozen_volatility():
    # with state-dependent vol the optimizer can spend energy raising the
    # volatility; the rate must beat the best strategy that leaves it frozen
    m = toy_sabr()
    h = 0.3
    dom = ExitDomain("half_space", normal=[1.0], offset=h)
    rep = exit_asymptote(m, dom, deadline=1.0, n_steps=80, restarts=3)
    # frozen-vol cost: reach h against sigma(t) = e^(-t/2), Cauchy-Schwarz
    frozen = h**2 / (2.0 * (1.0 - math.exp(-1.0)))
    assert rep.diagnostics["converged"]
    assert rep.rate < frozen - 1e-4
    assert rep.rate > 0.5 * frozen  # but not implausibly cheap


def test_inf_tail_correlated_matches_scan():
    # the bounded 1-D search over the tail agrees with a coarse dense scan
    from ldpvol.presets import rough_gauss
    from ldpvol.ratefn import inf_tail_result, itilde_terminal

    m = rough_gauss()  # correlated
    grid = TimeGrid(1.0, 60)
    k = 0.1
    v_inf, _ = inf_tail_result(m, k, grid=grid, restarts=2)
    scan = min(
        itilde_terminal(m, x, grid=grid, restarts=2).value
        for x in np.linspace(k, k + 0.6, 7)
    )
    assert v_inf <= scan + 1e-6


def test_asian_vanishing_sigma_threshold():
    m = frac_heston(r=0.05)
    limit = 1.0 * (math.exp(0.05) - 1.0) / 0.05
    with pytest.raises(DomainError):
        asian_asymptote(m, limit * 0.999, 1.0, n_steps=40)
