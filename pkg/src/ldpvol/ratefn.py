"""Sample-path and terminal rate functions, minimized over discretized controls.

All time integrals of model coefficients use the left-endpoint rule on the
grid.  On piecewise-linear controls this is exactly the discretized
drift/volatility functional that the rest of the library (simulation,
constrained pricing problems) shares, so values are internally consistent,
and constant-coefficient oracles are reproduced without discretization error.

Model coefficient closures must be numpy-vectorized:

    drift(t, u)   t: (...,) broadcastable, u: (..., d)  -> (..., m)
    sigma(t, u)   for m == 1:                           -> (...,)  (scalar vol)
    sigma(t, u)   for m > 1:                            -> (..., m, m)

For m > 1 the terminal rate is available only for models declared in
rotation-times-scalar form: sigma = xi(t, u) * O(t, u) @ inv(cbar), with
``xi`` scalar-valued and ``o_map`` orthogonal; supply ``xi`` and ``o_map``
instead of ``sigma``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize as _sopt

from .errors import (
    DimensionError,
    SingularVolatilityError,
    UnsupportedFormError,
)
from .paths import Control, PathFn, TimeGrid, energy
from .volmap import VolProcessSpec, hat_map_batch, is_affine_in_control

_INFEASIBLE = 1e15
_COND_LIMIT = 1e12
_FD_STEP = 1e-6
_VALUE_TIE_TOL = 1e-9

DEFAULT_RESTARTS = 8
DEFAULT_TERMINAL_STEPS = 200


@dataclass
class ModelSpec:
    """Multivariate stochastic volatility model for the log-price process."""

    m: int
    vol: VolProcessSpec
    drift: object = None  # None means b == r
    sigma: object = None
    xi: object = None
    o_map: object = None
    C: np.ndarray = None
    rho: float | None = None
    s0: np.ndarray = None
    r: float = 0.0
    sigma_positive: bool = True
    assumption_b: bool = False
    name: str | None = None

    def __post_init__(self):
        self.m = int(self.m)
        if self.rho is not None and self.C is not None:
            raise UnsupportedFormError("give either rho (m=1) or the matrix C")
        if self.C is None:
            rho = 0.0 if self.rho is None else float(self.rho)
            if self.m != 1 and self.rho is not None:
                raise DimensionError("rho shorthand is for m = 1")
            self.C = np.array([[rho]]) if self.m == 1 else np.zeros((self.m, self.m))
        self.C = np.asarray(self.C, float)
        if self.C.shape != (self.m, self.m):
            raise DimensionError(f"C must be {self.m} x {self.m}")
        fro = float(np.linalg.norm(self.C))
        if not fro < 1.0:
            raise UnsupportedFormError("correlation matrix must have Frobenius norm < 1")
        self.rho = float(self.C[0, 0]) if self.m == 1 else None
        gram = np.eye(self.m) - self.C.T @ self.C
        w, V = np.linalg.eigh(gram)
        self.cbar = (V * np.sqrt(np.maximum(w, 0.0))) @ V.T
        if np.max(np.abs(self.cbar @ self.cbar - gram)) > 1e-10:
            raise SingularVolatilityError("square root of Id - C'C failed the check")
        self.cbar_inv = np.linalg.inv(self.cbar)
        self.s0 = (
            np.ones(self.m) if self.s0 is None else np.atleast_1d(np.asarray(self.s0, float))
        )
        if self.s0.shape != (self.m,) or np.any(self.s0 <= 0):
            raise DimensionError("s0 must be a positive vector of length m")
        self.x0 = np.log(self.s0)
        self.r = float(self.r)
        if self.r < 0:
            raise UnsupportedFormError("interest rate must be nonnegative")
        self.orthogonal_scalar = self.xi is not None
        if self.orthogonal_scalar and self.o_map is None:
            self.o_map = _identity_rotation(self.m)
        if self.sigma is None and not self.orthogonal_scalar:
            raise UnsupportedFormError("model needs sigma, or xi (+ o_map)")

    @property
    def rho_bar(self) -> float:
        return float(self.cbar[0, 0]) if self.m == 1 else None

    def drift_values(self, t, u):
        """(..., m) drift values; defaults to the constant interest rate."""
        if self.drift is None:
            return np.full(np.shape(u)[:-1] + (self.m,), self.r)
        return np.asarray(self.drift(t, u), float)

    def sigma_scalar(self, t, u):
        """(...,) scalar volatility, m = 1 only."""
        if self.m != 1:
            raise UnsupportedFormError("sigma_scalar is for m = 1 models")
        if self.sigma is not None:
            return np.asarray(self.sigma(t, u), float)
        return np.asarray(self.xi(t, u), float) * self.cbar_inv[0, 0]

    def sigma_matrix(self, t, u):
        """(..., m, m) volatility matrix covering both declarations."""
        if self.m == 1:
            return self.sigma_scalar(t, u)[..., None, None]
        if self.orthogonal_scalar:
            xi = np.asarray(self.xi(t, u), float)
            O = np.asarray(self.o_map(t, u), float)
            return xi[..., None, None] * (O @ self.cbar_inv)
        return np.asarray(self.sigma(t, u), float)


def _identity_rotation(m):
    def o_map(t, u):
        return np.broadcast_to(np.eye(m), np.shape(u)[:-1] + (m, m))

    return o_map


@dataclass
class RateResult:
    value: float
    minimizer_f: Control
    minimizer_l: Control | None = None
    iterations: int = 0
    restarts: int = 0
    gradient_norm: float = float("nan")
    converged: bool = True
    diagnostics: dict = field(default_factory=dict)

    def to_json_obj(self) -> dict:
        from .paths import control_to_json_obj

        return {
            "value": self.value,
            "iterations": self.iterations,
            "restarts": self.restarts,
            "gradient_norm": self.gradient_norm,
            "converged": self.converged,
            "minimizer_f": control_to_json_obj(self.minimizer_f),
            "minimizer_l": (
                control_to_json_obj(self.minimizer_l) if self.minimizer_l else None
            ),
            "diagnostics": self.diagnostics,
        }


# ---------------------------------------------------------------------------
# drift/volatility path functional
# ---------------------------------------------------------------------------


def _left_nodes(grid: TimeGrid) -> np.ndarray:
    return grid.nodes[:-1]


def phi_functional(model: ModelSpec, l: Control, f: Control) -> PathFn:
    """Nodal path of the discretized drift/volatility functional.

    Left-endpoint coefficients times control increments; exact on the
    piecewise-linear control class.
    """
    if l.grid != f.grid or l.dim != model.m or f.dim != model.m:
        raise DimensionError("l and f must share the grid and have dimension m")
    vals = phi_batch(model, l.grid, l.dot_values, f.dot_values)
    return PathFn(l.grid, vals)


def phi_batch(model: ModelSpec, grid: TimeGrid, l_dots, f_dots) -> np.ndarray:
    """Batched functional; dots have shape (..., n, m), output (..., n+1, m)."""
    l_dots = np.asarray(l_dots, float)
    f_dots = np.asarray(f_dots, float)
    hat = hat_map_batch(model.vol, f_dots, grid)
    tk = _left_nodes(grid)
    u = hat[..., :-1, :]
    b = model.drift_values(tk, u)
    if model.m == 1:
        sv = model.sigma_scalar(tk, u)
        drive = model.rho_bar * l_dots[..., 0] + model.rho * f_dots[..., 0]
        incr = (b[..., 0] + sv * drive) * grid.dt
        incr = incr[..., None]
    else:
        sig = model.sigma_matrix(tk, u)
        drive = np.einsum("ab,...nb->...na", model.cbar, l_dots) + np.einsum(
            "ab,...nb->...na", model.C, f_dots
        )
        incr = (b + np.einsum("...nab,...nb->...na", sig, drive)) * grid.dt
    out = np.zeros(incr.shape[:-2] + (grid.n_steps + 1, model.m))
    np.cumsum(incr, axis=-2, out=out[..., 1:, :])
    return out


# ---------------------------------------------------------------------------
# coefficient derivatives and affine control sensitivities
# ---------------------------------------------------------------------------


def _coeff_grad_u(func, t, u):
    """Central differences of a coefficient closure in the state argument.

    u: (n, d); returns (n, d) for scalar-valued closures, else (n, m, d).
    """
    d = u.shape[-1]
    cols = []
    for a in range(d):
        h = _FD_STEP * np.maximum(1.0, np.abs(u[..., a]))
        up = u.copy()
        um = u.copy()
        up[..., a] += h
        um[..., a] -= h
        cols.append((np.asarray(func(t, up), float) - np.asarray(func(t, um), float)) / (2 * h))
    return np.stack(cols, axis=-1)


def _affine_control_jacobian(vol: VolProcessSpec, grid: TimeGrid) -> np.ndarray:
    """J[c, i, j] = d hat_c(t_i) / d dot_j for affine scalar-control skeletons."""
    if vol.m != 1:
        raise UnsupportedFormError("affine jacobian implemented for m = 1 controls")
    n = grid.n_steps
    J = np.zeros((vol.d, n + 1, n))
    if vol.family == "toy":
        tri = np.tril(np.ones((n + 1, n)), -1)
        J[0] = tri * grid.dt
        return J
    from . import kernels as _k

    for c in range(vol.d):
        kern = vol.noise_kernels[c][0]
        if kern is not None:
            J[c] = _k.pc_weights(kern, grid)
    return J


# ---------------------------------------------------------------------------
# terminal rate objective (m = 1)
# ---------------------------------------------------------------------------


class TerminalObjective:
    """Explicit-ratio objective for the terminal rate at a scalar target."""

    def __init__(self, model: ModelSpec, grid: TimeGrid, x: float):
        if model.m != 1:
            raise UnsupportedFormError("TerminalObjective is the m = 1 path")
        self.model = model
        self.grid = grid
        self.x = float(x)
        self.n = grid.n_steps
        self.tk = _left_nodes(grid)
        self.affine = is_affine_in_control(model.vol)
        self._jac = (
            _affine_control_jacobian(model.vol, grid)[:, :-1, :] if self.affine else None
        )
        self._hat0 = hat_map_batch(model.vol, np.zeros((self.n, 1)), grid)

    # -- pieces -------------------------------------------------------
    def _terms(self, dots):
        """dots: (..., n); returns (numer, i_sig2, b, sv, u)."""
        hat = hat_map_batch(self.model.vol, dots[..., None], self.grid)
        u = hat[..., :-1, :]
        b = self.model.drift_values(self.tk, u)[..., 0]
        sv = self.model.sigma_scalar(self.tk, u)
        dt = self.grid.dt
        i_b = dt * np.sum(b, axis=-1)
        i_sf = dt * np.sum(sv * dots, axis=-1)
        i_s2 = dt * np.sum(sv**2, axis=-1)
        numer = self.x - i_b - self.model.rho * i_sf
        return numer, i_s2, b, sv, u

    def value_batch(self, dots):
        dots = np.asarray(dots, float)
        numer, i_s2, _, _, _ = self._terms(dots)
        dt = self.grid.dt
        en = 0.5 * dt * np.sum(dots**2, axis=-1)
        rb2 = self.model.rho_bar**2
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.where(i_s2 > 0.0, 0.5 * numer**2 / (rb2 * np.maximum(i_s2, 1e-300)), 0.0)
        # vanishing volatility along the skeleton: feasible only if the drift
        # alone reaches the target
        degenerate = i_s2 <= 0.0
        miss = np.abs(numer) > 1e-9 * max(1.0, abs(self.x))
        return np.where(degenerate & miss, _INFEASIBLE, ratio + en)

    def value(self, dots):
        return float(self.value_batch(np.asarray(dots, float)))

    def gradient(self, dots):
        if self.affine:
            return self._gradient_affine(np.asarray(dots, float))
        return _fd_gradient(self.value_batch, np.asarray(dots, float))

    def _gradient_affine(self, dots):
        numer, i_s2, b, sv, u = self._terms(dots)
        if i_s2 <= 0.0:
            return _fd_gradient(self.value_batch, dots)
        dt = self.grid.dt
        rho = self.model.rho
        rb2 = self.model.rho_bar**2
        b_u = _coeff_grad_u(self.model.drift_values, self.tk, u)[..., 0, :]
        s_u = _coeff_grad_u(self.model.sigma_scalar, self.tk, u)
        # node-weight vectors contracted against d hat / d dots
        w_b = dt * b_u  # (n, d)
        w_sf = dt * s_u * dots[:, None]  # (n, d)
        w_s2 = 2.0 * dt * sv[:, None] * s_u  # (n, d)
        J = self._jac  # (d, n, n_dots)
        dIb = np.einsum("nc,cnj->j", w_b, J)
        dIsf = np.einsum("nc,cnj->j", w_sf, J) + dt * sv
        dIs2 = np.einsum("nc,cnj->j", w_s2, J)
        g = (
            numer / (rb2 * i_s2) * (-dIb - rho * dIsf)
            - 0.5 * numer**2 / (rb2 * i_s2**2) * dIs2
            + dt * dots
        )
        return g


class TerminalObjectiveOrthogonal:
    """Terminal rate objective for m > 1 rotation-times-scalar models."""

    def __init__(self, model: ModelSpec, grid: TimeGrid, x):
        if model.m <= 1:
            raise UnsupportedFormError("use TerminalObjective for m = 1")
        if not model.orthogonal_scalar:
            raise UnsupportedFormError(
                "terminal rate for m > 1 needs the rotation-times-scalar "
                "volatility declaration (xi and o_map)"
            )
        self.model = model
        self.grid = grid
        self.x = np.asarray(x, float)
        if self.x.shape != (model.m,):
            raise DimensionError(f"x must have shape ({model.m},)")
        self.tk = _left_nodes(grid)
        self.mix = model.cbar_inv @ model.C  # applied inside the rotation

    def value_batch(self, dots):
        dots = np.asarray(dots, float)
        m = self.model.m
        flat = dots.reshape(dots.shape[:-1] + (self.grid.n_steps, m))
        hat = hat_map_batch(self.model.vol, flat, self.grid)
        u = hat[..., :-1, :]
        dt = self.grid.dt
        b = self.model.drift_values(self.tk, u)
        xi = np.asarray(self.model.xi(self.tk, u), float)
        O = np.asarray(self.model.o_map(self.tk, u), float)
        rot = np.einsum("...nab,bc,...nc->...na", O, self.mix, flat)
        i_b = dt * np.sum(b, axis=-2)
        i_v = dt * np.sum(xi[..., None] * rot, axis=-2)
        i_x2 = dt * np.sum(xi**2, axis=-1)
        numer = self.x - i_b - i_v
        en = 0.5 * dt * np.sum(flat**2, axis=(-1, -2))
        nn = np.sum(numer**2, axis=-1)
        miss = np.sqrt(nn) > 1e-9 * max(1.0, float(np.linalg.norm(self.x)))
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.where(i_x2 > 0.0, 0.5 * nn / np.maximum(i_x2, 1e-300), 0.0)
        return np.where((i_x2 <= 0.0) & miss, _INFEASIBLE, ratio + en)

    def value(self, dots):
        return float(self.value_batch(np.asarray(dots, float)))

    def gradient(self, dots):
        return _fd_gradient(self.value_batch, np.asarray(dots, float))


# ---------------------------------------------------------------------------
# sample-path rate objective
# ---------------------------------------------------------------------------


class PathRateObjective:
    """Inner objective of the sample-path rate at a fixed target path."""

    def __init__(self, model: ModelSpec, g: PathFn):
        self.model = model
        self.grid = g.grid
        if g.dim != model.m:
            raise DimensionError("target path dimension must equal m")
        if float(np.max(np.abs(g.values[0]))) > 1e-12:
            raise DimensionError("target path must start at zero")
        self.g_dots = np.diff(g.values, axis=0) / g.grid.dt
        self.tk = _left_nodes(g.grid)

    def residual_l_dots(self, f_dots):
        """Eliminated auxiliary control along the target path, (n, m)."""
        f_dots = np.asarray(f_dots, float)
        hat = hat_map_batch(self.model.vol, f_dots, self.grid)
        u = hat[..., :-1, :]
        b = self.model.drift_values(self.tk, u)
        if self.model.m == 1:
            sv = self.model.sigma_scalar(self.tk, u)
            self._check_scalar_vol(sv)
            resid = self.g_dots[..., 0] - b[..., 0] - sv * self.model.rho * f_dots[..., 0]
            return (resid / (sv * self.model.rho_bar))[..., None]
        sig = self.model.sigma_matrix(self.tk, u)
        rhs = self.g_dots - b - np.einsum(
            "...nab,bc,...nc->...na", sig, self.model.C, f_dots
        )
        sol = np.linalg.solve(sig, rhs[..., None])[..., 0]
        conds = np.linalg.cond(sig)
        if np.any(~np.isfinite(conds)) or np.max(conds) > _COND_LIMIT:
            raise SingularVolatilityError(
                "volatility matrix numerically singular along the skeleton"
            )
        return np.einsum("ab,...nb->...na", self.model.cbar_inv, sol)

    def _check_scalar_vol(self, sv):
        smax = float(np.max(np.abs(sv)))
        smin = float(np.min(np.abs(sv)))
        if smin == 0.0 or smax / smin > _COND_LIMIT:
            raise SingularVolatilityError(
                "scalar volatility vanishes along the skeleton"
            )

    def value_batch(self, dots):
        dots = np.asarray(dots, float)
        m = self.model.m
        flat = dots.reshape(dots.shape[:-1] + (self.grid.n_steps, m))
        l_dots = self.residual_l_dots(flat)
        dt = self.grid.dt
        return 0.5 * dt * (
            np.sum(l_dots**2, axis=(-1, -2)) + np.sum(flat**2, axis=(-1, -2))
        )

    def value(self, dots):
        return float(self.value_batch(np.asarray(dots, float)))

    def gradient(self, dots):
        return _fd_gradient(self.value_batch, np.asarray(dots, float))


# ---------------------------------------------------------------------------
# finite differences and the multi-start driver
# ---------------------------------------------------------------------------


def _fd_gradient(value_batch, x, step=_FD_STEP):
    """Central differences through one batched objective call."""
    n = x.size
    h = step * np.maximum(1.0, np.abs(x))
    batch = np.broadcast_to(x, (2 * n, n)).copy()
    idx = np.arange(n)
    batch[idx, idx] += h
    batch[n + idx, idx] -= h
    vals = value_batch(batch)
    return (vals[:n] - vals[n:]) / (2.0 * h)


def check_gradient(objective, x):
    """Max relative error between the objective's gradient and plain central
    differences; used by the verification suite."""
    g = np.asarray(objective.gradient(x), float)
    ref = np.empty_like(g)
    for j in range(x.size):
        h = _FD_STEP * max(1.0, abs(x[j]))
        xp = x.copy()
        xm = x.copy()
        xp[j] += h
        xm[j] -= h
        ref[j] = (objective.value(xp) - objective.value(xm)) / (2 * h)
    scale = max(float(np.max(np.abs(ref))), 1e-8)
    return float(np.max(np.abs(g - ref))) / scale


def minimize_multistart(
    objective,
    dim: int,
    grid: TimeGrid,
    control_dim: int,
    restarts: int = DEFAULT_RESTARTS,
    seed: int = 0,
    maxiter: int = 500,
):
    """L-BFGS from a zero start plus Gaussian restarts of unit trial energy.

    Returns (best_x, info).  Ties in value are broken toward the smaller
    control energy, which makes the reported minimizer deterministic.
    """
    rng = np.random.default_rng(seed)
    scale = math.sqrt(2.0 / (control_dim * grid.horizon))
    starts = [np.zeros(dim)]
    starts += [rng.normal(scale=scale, size=dim) for _ in range(restarts)]
    best = None
    total_iter = 0
    for x0 in starts:
        res = _sopt.minimize(
            objective.value,
            x0,
            jac=objective.gradient,
            method="L-BFGS-B",
            options={"maxiter": maxiter, "ftol": 1e-14, "gtol": 1e-10},
        )
        total_iter += int(res.nit)
        cand_energy = 0.5 * grid.dt * float(np.sum(res.x**2))
        cand = (float(res.fun), cand_energy, res)
        if best is None:
            best = cand
            continue
        better = cand[0] < best[0] - _VALUE_TIE_TOL * (1.0 + abs(best[0]))
        tied = abs(cand[0] - best[0]) <= _VALUE_TIE_TOL * (1.0 + abs(best[0]))
        if better or (tied and cand[1] < best[1]):
            best = cand
    res = best[2]
    info = {
        "iterations": total_iter,
        "restarts": restarts,
        "gradient_norm": float(np.max(np.abs(np.asarray(objective.gradient(res.x))))),
        "converged": bool(res.success) and best[0] < _INFEASIBLE / 2,
    }
    return res.x, info


def _result_from(objective, x, info, grid, m):
    dots = x.reshape(grid.n_steps, m)
    ctrl = Control(grid, dots)
    value = objective.value(x)
    return RateResult(
        value=value,
        minimizer_f=ctrl,
        iterations=info["iterations"],
        restarts=info["restarts"],
        gradient_norm=info["gradient_norm"],
        converged=info["converged"],
    )


# ---------------------------------------------------------------------------
# public operations
# ---------------------------------------------------------------------------


def qtilde_path(
    model: ModelSpec,
    g: PathFn,
    restarts: int = DEFAULT_RESTARTS,
    seed: int = 0,
) -> RateResult:
    """Sample-path rate of a target path, minimized over the volatility control."""
    obj = PathRateObjective(model, g)
    grid = g.grid
    x, info = minimize_multistart(
        obj, grid.n_steps * model.m, grid, model.m, restarts=restarts, seed=seed
    )
    result = _result_from(obj, x, info, grid, model.m)
    l_dots = obj.residual_l_dots(x.reshape(grid.n_steps, model.m))
    result.minimizer_l = Control(grid, l_dots)
    result.diagnostics["energy_f"] = energy(result.minimizer_f)
    result.diagnostics["energy_l"] = energy(result.minimizer_l)
    return result


def itilde_terminal(
    model: ModelSpec,
    x,
    grid: TimeGrid | None = None,
    restarts: int = DEFAULT_RESTARTS,
    seed: int = 0,
) -> RateResult:
    """Terminal rate at target x (scalar for m = 1, vector otherwise)."""
    if grid is None:
        grid = TimeGrid(1.0, DEFAULT_TERMINAL_STEPS)
    if model.m == 1:
        obj = TerminalObjective(model, grid, float(np.asarray(x).reshape(())))
        dim = grid.n_steps
    else:
        obj = TerminalObjectiveOrthogonal(model, grid, x)
        dim = grid.n_steps * model.m
    xbest, info = minimize_multistart(
        obj, dim, grid, model.m, restarts=restarts, seed=seed
    )
    return _result_from(obj, xbest, info, grid, model.m)


def drift_only_terminal(model: ModelSpec, grid: TimeGrid) -> float:
    """Terminal value reached by the zero control (zero-cost target)."""
    obj_zero = hat_map_batch(model.vol, np.zeros((grid.n_steps, model.m)), grid)
    tk = _left_nodes(grid)
    b = model.drift_values(tk, obj_zero[..., :-1, :])
    return float(grid.dt * np.sum(b[..., 0]))


def inf_tail(
    model: ModelSpec,
    k: float,
    grid: TimeGrid | None = None,
    restarts: int = DEFAULT_RESTARTS,
    seed: int = 0,
) -> float:
    """inf over x >= k of the terminal rate (m = 1)."""
    return inf_tail_result(model, k, grid=grid, restarts=restarts, seed=seed)[0]


def inf_tail_result(
    model: ModelSpec,
    k: float,
    grid: TimeGrid | None = None,
    restarts: int = DEFAULT_RESTARTS,
    seed: int = 0,
):
    if model.m != 1:
        raise UnsupportedFormError("tail infimum is defined for m = 1")
    if grid is None:
        grid = TimeGrid(1.0, DEFAULT_TERMINAL_STEPS)
    k = float(k)
    attained = drift_only_terminal(model, grid)
    if attained >= k:
        # the zero-cost terminal value already lies in the tail set
        res = itilde_terminal(model, attained, grid=grid, restarts=0, seed=seed)
        res.diagnostics["argmin_x"] = attained
        return 0.0, res
    uncorrelated = abs(model.rho) == 0.0
    if uncorrelated and model.sigma_positive:
        # the rate is nondecreasing to the right of the zero-cost point
        res = itilde_terminal(model, k, grid=grid, restarts=restarts, seed=seed)
        res.diagnostics["argmin_x"] = k
        return res.value, res

    def rate_at(xv):
        return itilde_terminal(model, xv, grid=grid, restarts=restarts, seed=seed).value

    scale = math.sqrt(
        max(
            TerminalObjective(model, grid, k)._terms(np.zeros(grid.n_steps))[1]
            / grid.horizon,
            1e-12,
        )
    )
    hi = k + 10.0 * scale * math.sqrt(grid.horizon)
    sres = _sopt.minimize_scalar(
        rate_at, bounds=(k, hi), method="bounded", options={"xatol": 1e-5 * max(1.0, abs(k))}
    )
    x_star = float(sres.x)
    best_x = k if rate_at(k) <= float(sres.fun) else x_star
    res = itilde_terminal(model, best_x, grid=grid, restarts=restarts, seed=seed)
    res.diagnostics["argmin_x"] = best_x
    return res.value, res
