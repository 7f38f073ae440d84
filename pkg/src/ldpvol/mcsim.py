"""Monte Carlo simulation of the scaled models and empirical verification
that -eps * log(probabilities / prices) approach the computed decay rates.

Randomness is counter-based: every fixed-size block of paths owns a Philox
substream keyed by (seed, ladder index, block index), so estimates are
bit-identical no matter how blocks are scheduled across workers.  Gaussian
volatility paths use the kernel convolution construction with per-cell
root-mean-square weights, which reproduces the slice variance of the kernel
exactly on every grid row.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import kernels as _k
from .errors import ConvergenceError, DimensionError, DomainError
from .paths import TimeGrid
from .pricing import ExitDomain
from .ratefn import ModelSpec
from .volmap import (
    FRACTIONAL,
    GAUSSIAN,
    MIXED,
    TOY,
    VOLTERRA_SDE,
    VolProcessSpec,
)

BLOCK_SIZE = 1 << 15
BLOWUP_LIMIT = 1e9


@dataclass
class SimConfig:
    model: ModelSpec
    epsilon_ladder: list
    n_paths: int
    grid: TimeGrid
    seed: int
    antithetic: bool = False
    max_workers: int = 1

    def __post_init__(self):
        lad = [float(e) for e in self.epsilon_ladder]
        if not lad or any(not 0.0 < e <= 1.0 for e in lad):
            raise DomainError("epsilon ladder entries must lie in (0, 1]")
        if any(b >= a for a, b in zip(lad, lad[1:])):
            raise DomainError("epsilon ladder must be strictly decreasing")
        self.epsilon_ladder = lad
        self.n_paths = int(self.n_paths)
        if self.n_paths < 1:
            raise DomainError("n_paths must be positive")
        if self.n_paths < 1000:
            import warnings

            warnings.warn("fewer than 1000 paths: estimator noise will dominate")
        self.seed = int(self.seed)


@dataclass
class McRow:
    epsilon: float
    estimate: float
    eps_log_estimate: float
    std_error: float
    n_effective: int
    zero_hits: bool = False

    def to_json_obj(self):
        return {
            "epsilon": self.epsilon,
            "estimate": self.estimate,
            "eps_log_estimate": self.eps_log_estimate,
            "std_error": self.std_error,
            "n_effective": self.n_effective,
            "zero_hits": self.zero_hits,
        }


@dataclass
class McReport:
    quantity: str
    rows: list
    reference_rate: float
    diagnostics: dict = field(default_factory=dict)

    def to_json_obj(self):
        return {
            "quantity": self.quantity,
            "reference_rate": self.reference_rate,
            "rows": [r.to_json_obj() for r in self.rows],
            "diagnostics": self.diagnostics,
        }

    def to_csv(self, filename):
        import csv

        with open(filename, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(
                ["epsilon", "estimate", "eps_log_estimate", "std_error", "n_effective", "zero_hits"]
            )
            for r in self.rows:
                w.writerow(
                    [r.epsilon, r.estimate, r.eps_log_estimate, r.std_error, r.n_effective, int(r.zero_hits)]
                )


# ---------------------------------------------------------------------------
# counter-based substreams and block scheduling
# ---------------------------------------------------------------------------


def _block_rng(seed: int, ladder_index: int, block_index: int) -> np.random.Generator:
    key = np.array(
        [np.uint64(seed & 0xFFFFFFFFFFFFFFFF), np.uint64((ladder_index << 32) | block_index)],
        dtype=np.uint64,
    )
    return np.random.Generator(np.random.Philox(key=key))


def _block_sizes(n_paths: int):
    sizes = []
    done = 0
    while done < n_paths:
        take = min(BLOCK_SIZE, n_paths - done)
        sizes.append(take)
        done += take
    return sizes


def _draw_increments(rng, size, n, m, dt, antithetic):
    """(size, n, m) Brownian increments for driver and pricing noise."""
    if antithetic:
        half = (size + 1) // 2
        z1 = rng.standard_normal((half, n, m))
        z2 = rng.standard_normal((half, n, m))
        z1 = np.concatenate([z1, -z1], axis=0)[:size]
        z2 = np.concatenate([z2, -z2], axis=0)[:size]
    else:
        z1 = rng.standard_normal((size, n, m))
        z2 = rng.standard_normal((size, n, m))
    s = math.sqrt(dt)
    return z1 * s, z2 * s


# ---------------------------------------------------------------------------
# volatility-path simulation per family
# ---------------------------------------------------------------------------


def _gaussian_vol_block(spec, db, grid, sqeps):
    size = db.shape[0]
    out = np.zeros((size, grid.n_steps + 1, spec.d))
    dt = grid.dt
    for i in range(spec.d):
        acc = np.zeros((size, grid.n_steps + 1))
        for j in range(spec.m):
            kern = spec.noise_kernels[i][j]
            if kern is None:
                continue
            if kern.kind == _k.BROWNIAN:
                acc[:, 1:] += np.cumsum(db[:, :, j], axis=1)
            else:
                R = _k.rms_weights(kern, grid)
                acc += db[:, :, j] @ R.T
        out[:, :, i] = spec.y[i] + sqeps * acc
    return out


def _aux_euler_block(spec, db, grid, sqeps, truncate_input=True):
    """Full-truncation Euler for the auxiliary process: coefficients read the
    positive part of the state, keeping square-root dispersions defined."""
    size = db.shape[0]
    n = grid.n_steps
    dt = grid.dt
    nodes = grid.nodes
    v = np.empty((size, n + 1, spec.k_dim))
    cur = np.broadcast_to(spec.v0, (size, spec.k_dim)).copy()
    v[:, 0, :] = cur
    for k in range(n):
        arg = np.maximum(cur, 0.0) if truncate_input else cur
        drift = spec.aux_drift(nodes[k], arg)
        disp = spec.aux_disp(nodes[k], arg)
        cur = cur + drift * dt + sqeps * np.einsum("bkm,bm->bk", disp, db[:, k, :])
        v[:, k + 1, :] = cur
    return v


def _fractional_vol_block(spec, db, grid, sqeps):
    v = _aux_euler_block(spec, db, grid, sqeps)
    u = spec.u_callable()(v[:, :-1, :])  # (size, n, d)
    out = np.zeros((db.shape[0], grid.n_steps + 1, spec.d))
    for i in range(spec.d):
        kern = spec.drift_kernels[i]
        if kern is None:
            continue
        M = _k.pc_weights(kern, grid)
        out[:, :, i] = u[:, :, i] @ M.T
    return spec.y + out


def _volterra_sde_block(spec, db, grid, sqeps):
    size = db.shape[0]
    n = grid.n_steps
    dt = grid.dt
    nodes = grid.nodes
    y = np.empty((size, n + 1, spec.d))
    y[:, 0, :] = spec.y
    for i in range(1, n + 1):
        s = nodes[:i]
        x = y[:, :i, :]
        acc = np.broadcast_to(spec.y, (size, spec.d)).copy()
        if spec.volterra_a is not None:
            acc = acc + dt * np.sum(spec.volterra_a(nodes[i], s, x), axis=1)
        if spec.volterra_c is not None:
            cv = spec.volterra_c(nodes[i], s, x)
            acc = acc + sqeps * np.einsum("bjkm,bjm->bk", cv, db[:, :i, :])
        y[:, i, :] = acc
    return y


def _reflected_vol_block(spec, db, grid, sqeps):
    size = db.shape[0]
    n = grid.n_steps
    dt = grid.dt
    nodes = grid.nodes
    u = np.empty((size, n + 1, spec.d))
    cur = np.broadcast_to(spec.y, (size, spec.d)).copy()
    u[:, 0, :] = cur
    run_min = np.minimum(cur, 0.0)
    for k in range(n):
        refl = cur - run_min
        drift = spec.aux_drift(nodes[k], refl)
        disp = spec.aux_disp(nodes[k], refl)
        cur = cur + drift * dt + sqeps * np.einsum("bkm,bm->bk", disp, db[:, k, :])
        run_min = np.minimum(run_min, cur)
        u[:, k + 1, :] = cur
    comp = np.minimum.accumulate(np.minimum(u, 0.0), axis=1)
    return u - comp


def _vol_block(spec: VolProcessSpec, db, grid, epsilon):
    sqeps = math.sqrt(epsilon)
    if spec.family in (TOY, GAUSSIAN):
        if spec.family == TOY:
            out = np.zeros((db.shape[0], grid.n_steps + 1, 1))
            out[:, 1:, 0] = sqeps * np.cumsum(db[:, :, 0], axis=1)
            return out
        vals = _gaussian_vol_block(spec, db, grid, sqeps)
    elif spec.family == FRACTIONAL:
        vals = _fractional_vol_block(spec, db, grid, sqeps)
    elif spec.family == MIXED:
        vals = _fractional_vol_block(spec, db, grid, sqeps) + _gaussian_vol_block(
            spec, db, grid, sqeps
        ) - spec.y  # the initial level enters once
    elif spec.family == VOLTERRA_SDE:
        vals = _volterra_sde_block(spec, db, grid, sqeps)
    else:
        return _reflected_vol_block(spec, db, grid, sqeps)
    if spec.reflect:
        comp = np.minimum.accumulate(np.minimum(vals, 0.0), axis=1)
        vals = vals - comp
    return vals


@dataclass
class VolEnsemble:
    paths: np.ndarray  # (n_paths, n+1, d)
    n_excluded: int


def simulate_vol(
    spec: VolProcessSpec,
    epsilon: float,
    n_paths: int,
    grid: TimeGrid,
    seed: int,
    antithetic: bool = False,
) -> VolEnsemble:
    """Ensemble of volatility paths for the scaled model at one epsilon."""
    if epsilon < 0:
        raise DomainError("epsilon must be nonnegative")
    chunks = []
    excluded = 0
    for b, size in enumerate(_block_sizes(int(n_paths))):
        rng = _block_rng(int(seed), 0, b)
        db, _ = _draw_increments(rng, size, grid.n_steps, spec.m, grid.dt, antithetic)
        vals = _vol_block(spec, db, grid, float(epsilon))
        ok = np.all(np.abs(vals) < BLOWUP_LIMIT, axis=(1, 2)) & np.all(
            np.isfinite(vals), axis=(1, 2)
        )
        excluded += int(np.sum(~ok))
        chunks.append(vals[ok])
    return VolEnsemble(np.concatenate(chunks, axis=0), excluded)


# ---------------------------------------------------------------------------
# log-price simulation
# ---------------------------------------------------------------------------


def _logprice_block(model: ModelSpec, grid, epsilon, db, dw, keep_paths=False):
    """Terminal log-price displacement X_T - x0 per path; optionally the
    whole displacement path (size, n+1, m)."""
    spec = model.vol
    vol_paths = _vol_block(spec, db, grid, epsilon)
    size = db.shape[0]
    n = grid.n_steps
    dt = grid.dt
    nodes = grid.nodes
    sqeps = math.sqrt(epsilon)
    m = model.m
    x = np.zeros((size, m))
    paths = np.zeros((size, n + 1, m)) if keep_paths else None
    scalar = m == 1
    for k in range(n):
        u = vol_paths[:, k, :]
        b = model.drift_values(nodes[k], u)
        if scalar:
            sv = model.sigma_scalar(nodes[k], u)
            noise = model.rho_bar * dw[:, k, 0] + model.rho * db[:, k, 0]
            incr = (b[:, 0] - 0.5 * epsilon * sv**2) * dt + sqeps * sv * noise
            x[:, 0] += incr
        else:
            sig = model.sigma_matrix(nodes[k], u)
            quad = np.einsum("bij,bij->bi", sig, sig)  # diag of sigma sigma'
            noise = np.einsum("ab,kb->ka", model.cbar, dw[:, k, :]) + np.einsum(
                "ab,kb->ka", model.C, db[:, k, :]
            )
            x += (b - 0.5 * epsilon * quad) * dt + sqeps * np.einsum(
                "bij,bj->bi", sig, noise
            )
        if keep_paths:
            paths[:, k + 1, :] = x
    ok = np.all(np.isfinite(x), axis=1) & (np.max(np.abs(x), axis=1) < BLOWUP_LIMIT)
    return x, vol_paths, paths, ok


@dataclass
class LogPriceSamples:
    terminal: np.ndarray  # (n_valid, m) displacements X_T - x0
    n_excluded: int
    paths: np.ndarray | None = None


def simulate_logprice(
    cfg: SimConfig, epsilon: float, keep_paths: bool = False, ladder_index: int = 0
) -> LogPriceSamples:
    """Terminal displacement samples for one epsilon (optionally full paths).

    The same Brownian driver feeds the volatility path and the correlated
    part of the price noise.
    """
    model = cfg.model
    grid = cfg.grid
    outs = []
    path_chunks = [] if keep_paths else None
    excluded = 0

    def run_block(args):
        b, size = args
        rng = _block_rng(cfg.seed, ladder_index, b)
        db, dw = _draw_increments(
            rng, size, grid.n_steps, model.vol.m, grid.dt, cfg.antithetic
        )
        return _logprice_block(model, grid, float(epsilon), db, dw, keep_paths)

    blocks = list(enumerate(_block_sizes(cfg.n_paths)))
    if cfg.max_workers > 1:
        with ThreadPoolExecutor(max_workers=cfg.max_workers) as ex:
            results = list(ex.map(run_block, blocks))
    else:
        results = [run_block(a) for a in blocks]
    for x, _, paths, ok in results:
        excluded += int(np.sum(~ok))
        outs.append(x[ok])
        if keep_paths:
            path_chunks.append(paths[ok])
    return LogPriceSamples(
        np.concatenate(outs, axis=0),
        excluded,
        np.concatenate(path_chunks, axis=0) if keep_paths else None,
    )


# ---------------------------------------------------------------------------
# verification reports
# ---------------------------------------------------------------------------


def _reduce_report(cfg, quantity, per_eps_stats, reference_rate, diagnostics=None):
    rows = []
    for eps, (payoff_sum, sq_sum, n_eff) in zip(cfg.epsilon_ladder, per_eps_stats):
        mean = payoff_sum / n_eff if n_eff else 0.0
        var = max(sq_sum / n_eff - mean**2, 0.0) if n_eff else 0.0
        se = math.sqrt(var / n_eff) if n_eff else math.inf
        zero = mean <= 0.0
        eps_log = math.inf if zero else -eps * math.log(mean)
        # delta method on the log scale
        se_log = math.inf if zero else eps * se / mean
        rows.append(
            McRow(
                epsilon=eps,
                estimate=mean,
                eps_log_estimate=eps_log,
                std_error=se_log,
                n_effective=n_eff,
                zero_hits=zero,
            )
        )
    if all(r.zero_hits for r in rows):
        raise ConvergenceError(
            "no hits at any ladder epsilon; increase n_paths or soften the event"
        )
    return McReport(
        quantity=quantity,
        rows=rows,
        reference_rate=reference_rate,
        diagnostics=diagnostics or {},
    )


def _per_eps_payoff_stats(cfg, payoff_fn, need_paths=False):
    """Stream blocks per ladder entry, accumulating (n, sum, sum of squares)."""
    stats = []
    grid = cfg.grid
    model = cfg.model
    blocks = list(enumerate(_block_sizes(cfg.n_paths)))
    for li, eps in enumerate(cfg.epsilon_ladder):

        def run_block(args):
            b, size = args
            rng = _block_rng(cfg.seed, li, b)
            db, dw = _draw_increments(
                rng, size, grid.n_steps, model.vol.m, grid.dt, cfg.antithetic
            )
            x, _, paths, ok = _logprice_block(
                model, grid, eps, db, dw, keep_paths=need_paths
            )
            vals = payoff_fn(x[ok], paths[ok] if need_paths else None)
            return float(np.sum(vals)), float(np.sum(np.asarray(vals) ** 2)), int(np.sum(ok))

        if cfg.max_workers > 1:
            with ThreadPoolExecutor(max_workers=cfg.max_workers) as ex:
                results = list(ex.map(run_block, blocks))
        else:
            results = [run_block(a) for a in blocks]
        n_eff = sum(r[2] for r in results)
        s = sum(r[0] for r in results)
        sq = sum(r[1] for r in results)
        stats.append((s, sq, n_eff))
    return stats


def ldp_tail_report(cfg: SimConfig, k: float, reference_rate: float | None = None) -> McReport:
    """Tail probabilities of the terminal displacement against the decay rate."""
    if cfg.model.m != 1:
        raise DimensionError("tail report is for m = 1 models")
    if reference_rate is None:
        from .ratefn import inf_tail

        reference_rate = inf_tail(cfg.model, k, grid=cfg.grid)
    stats = _per_eps_payoff_stats(
        cfg, lambda x, paths: (x[:, 0] >= k).astype(float)
    )
    return _reduce_report(cfg, "tail_probability", stats, reference_rate, {"k": k})


def mc_call_report(cfg: SimConfig, strike: float, reference_rate: float | None = None) -> McReport:
    """Undiscounted call prices across the ladder against the decay rate."""
    if cfg.model.m != 1:
        raise DimensionError("call report is for m = 1 models")
    s0 = float(cfg.model.s0[0])
    if reference_rate is None:
        from .pricing import call_asymptote

        reference_rate = call_asymptote(
            cfg.model, strike, cfg.grid.horizon, n_steps=cfg.grid.n_steps
        ).rate
    stats = _per_eps_payoff_stats(
        cfg, lambda x, paths: np.maximum(s0 * np.exp(x[:, 0]) - strike, 0.0)
    )
    return _reduce_report(cfg, "call_price", stats, reference_rate, {"strike": strike})


def mc_exit_report(
    cfg: SimConfig,
    domain: ExitDomain,
    deadline: float,
    reference_rate: float | None = None,
) -> McReport:
    """First-exit frequencies by the deadline against the exit decay rate."""
    model = cfg.model
    if domain.dim != model.m:
        raise DimensionError("domain dimension must equal m")
    if reference_rate is None:
        from .pricing import exit_asymptote

        reference_rate = exit_asymptote(
            model,
            domain,
            deadline,
            horizon=cfg.grid.horizon,
            n_steps=min(cfg.grid.n_steps, 100),
        ).rate
    faces = [(a, c - float(a @ model.x0)) for a, c in domain.faces()]
    window = cfg.grid.nodes <= deadline + 1e-12
    window[0] = False

    def exited(x, paths):
        flags = np.zeros(paths.shape[0], dtype=bool)
        for a, c in faces:
            sd = np.einsum("a,bna->bn", a, paths) - c
            flags |= np.any(sd[:, window] >= 0.0, axis=1)
        return flags.astype(float)

    stats = _per_eps_payoff_stats(cfg, exited, need_paths=True)
    return _reduce_report(
        cfg, "exit_probability", stats, reference_rate, {"deadline": deadline}
    )
