"""Small-noise asymptotics: calls, implied vol limits, Asian options,
first-exit probabilities, and binary barrier options.

All quantities are leading-order exponential decay rates (and, for the
implied volatility, the limit itself); vanishing corrections are not modeled.
Constrained path problems are solved by an exterior quadratic penalty with
geometric continuation on the penalty weight, followed by a feasibility
polish along the found ray.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    AssumptionError,
    DimensionError,
    DomainError,
    UnsupportedDomainError,
    UnsupportedFormError,
)
from .paths import Control, TimeGrid
from .ratefn import (
    DEFAULT_TERMINAL_STEPS,
    ModelSpec,
    inf_tail_result,
    minimize_multistart,
    phi_batch,
)

PENALTY_STAGES = 6
PENALTY_START = 10.0
PENALTY_FACTOR = 10.0
FEASIBILITY_TOL = 1e-6


# ---------------------------------------------------------------------------
# exit domains
# ---------------------------------------------------------------------------


@dataclass
class ExitDomain:
    """Axis-aligned box or half-space; the supported open-set class."""

    kind: str
    lower: np.ndarray | None = None
    upper: np.ndarray | None = None
    normal: np.ndarray | None = None
    offset: float | None = None

    def __post_init__(self):
        if self.kind not in ("box", "half_space"):
            raise UnsupportedDomainError(f"unsupported domain kind {self.kind!r}")
        if self.kind == "box":
            if self.lower is None or self.upper is None:
                raise UnsupportedDomainError("box domain needs lower and upper")
            self.lower = np.atleast_1d(np.asarray(self.lower, float))
            self.upper = np.atleast_1d(np.asarray(self.upper, float))
            if self.lower.shape != self.upper.shape:
                raise DimensionError("box bounds must have equal shapes")
            if np.any(self.lower >= self.upper):
                raise UnsupportedDomainError("box must have lower < upper")
        else:
            if self.normal is None or self.offset is None:
                raise UnsupportedDomainError("half_space needs normal and offset")
            self.normal = np.atleast_1d(np.asarray(self.normal, float))
            norm = float(np.linalg.norm(self.normal))
            if norm == 0.0:
                raise UnsupportedDomainError("half_space normal must be nonzero")
            self.normal = self.normal / norm
            self.offset = float(self.offset) / norm

    @property
    def dim(self) -> int:
        return self.lower.size if self.kind == "box" else self.normal.size

    def faces(self) -> list[tuple[np.ndarray, float]]:
        """(a, c) pairs with the domain on the side a.x < c; unit normals."""
        if self.kind == "half_space":
            return [(self.normal, self.offset)]
        out = []
        m = self.dim
        for i in range(m):
            e = np.zeros(m)
            if np.isfinite(self.upper[i]):
                e_up = e.copy()
                e_up[i] = 1.0
                out.append((e_up, float(self.upper[i])))
            if np.isfinite(self.lower[i]):
                e_lo = e.copy()
                e_lo[i] = -1.0
                out.append((e_lo, -float(self.lower[i])))
        if not out:
            raise UnsupportedDomainError("box has no finite faces")
        return out

    def strictly_outside(self, x) -> bool:
        x = np.asarray(x, float)
        return any(float(a @ x) - c > 0.0 for a, c in self.faces())

    def log_image(self) -> "ExitDomain":
        """Componentwise-log image of a domain in the positive orthant."""
        if self.kind == "box":
            if np.any(self.upper <= 0.0) or np.any(self.lower < 0.0):
                raise DomainError("price-space box must lie in the positive orthant")
            with np.errstate(divide="ignore"):
                lo = np.where(self.lower > 0.0, np.log(self.lower), -np.inf)
            return ExitDomain("box", lower=lo, upper=np.log(self.upper))
        nz = np.nonzero(self.normal)[0]
        if nz.size != 1:
            raise UnsupportedDomainError(
                "price-space half_space must be axis-aligned to map through log"
            )
        i = nz[0]
        a_i = self.normal[i]
        bound = self.offset / a_i
        m = self.normal.size
        lo = np.full(m, -np.inf)
        hi = np.full(m, np.inf)
        if a_i > 0:  # domain side is s_i < bound
            if bound <= 0.0:
                raise DomainError("price-space half_space must intersect the orthant")
            hi[i] = math.log(bound)
        else:  # domain side is s_i > bound
            if bound <= 0.0:
                raise UnsupportedDomainError(
                    "half_space covers the whole positive orthant; no barrier"
                )
            lo[i] = math.log(bound)
        return ExitDomain("box", lower=lo, upper=hi)

    def to_json_obj(self) -> dict:
        if self.kind == "box":
            return {
                "kind": "box",
                "lower": self.lower.tolist(),
                "upper": self.upper.tolist(),
            }
        return {
            "kind": "half_space",
            "normal": self.normal.tolist(),
            "offset": self.offset,
        }

    @staticmethod
    def from_json_obj(obj: dict) -> "ExitDomain":
        return ExitDomain(
            obj["kind"],
            lower=obj.get("lower"),
            upper=obj.get("upper"),
            normal=obj.get("normal"),
            offset=obj.get("offset"),
        )


@dataclass
class AsymptoteReport:
    quantity: str
    rate: float
    limit_value: float | None = None
    minimizer_f: Control | None = None
    minimizer_l: Control | None = None
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.rate < 0:
            raise ValueError("rates are nonnegative")

    def to_json_obj(self) -> dict:
        from .paths import control_to_json_obj

        return {
            "quantity": self.quantity,
            "rate": self.rate,
            "limit_value": self.limit_value,
            "minimizer_f": (
                control_to_json_obj(self.minimizer_f) if self.minimizer_f else None
            ),
            "minimizer_l": (
                control_to_json_obj(self.minimizer_l) if self.minimizer_l else None
            ),
            "diagnostics": self.diagnostics,
        }


# ---------------------------------------------------------------------------
# terminal-payoff asymptotics
# ---------------------------------------------------------------------------


def _require_assumption_b(model: ModelSpec, what: str):
    if not model.assumption_b:
        raise AssumptionError(
            f"{what} needs the exponential-integrability declaration "
            "(model.assumption_b); the obligation is documented, not checked"
        )


def call_asymptote(
    model: ModelSpec, strike: float, horizon: float, n_steps: int | None = None, **kwargs
) -> AsymptoteReport:
    """Exponential decay rate of the small-noise call price."""
    if model.m != 1:
        raise UnsupportedFormError("call asymptotics are for m = 1 models")
    if strike <= 0:
        raise DomainError("strike must be positive")
    _require_assumption_b(model, "the call asymptote")
    s0 = float(model.s0[0])
    if not model.sigma_positive and strike <= s0 * math.exp(model.r * horizon):
        raise DomainError(
            "models with vanishing volatility support the call asymptote only "
            f"for strikes above s0*exp(r*T) = {s0 * math.exp(model.r * horizon):.6g}"
        )
    grid = TimeGrid(horizon, n_steps or DEFAULT_TERMINAL_STEPS)
    k = math.log(strike / s0)
    rate, res = inf_tail_result(model, k, grid=grid, **kwargs)
    return AsymptoteReport(
        quantity="call",
        rate=rate,
        minimizer_f=res.minimizer_f,
        diagnostics={
            "log_moneyness": k,
            "argmin_x": res.diagnostics.get("argmin_x"),
            "converged": res.converged,
        },
    )


def implied_vol_limit(
    model: ModelSpec, k: float, horizon: float, n_steps: int | None = None, **kwargs
) -> AsymptoteReport:
    """Small-noise implied volatility limit at positive log-moneyness."""
    if model.m != 1:
        raise UnsupportedFormError("implied vol limit is for m = 1 models")
    if abs(float(model.s0[0]) - 1.0) > 1e-12 or model.r != 0.0:
        raise UnsupportedFormError("implied vol limit uses the s0 = 1, r = 0 normalization")
    if k <= 0:
        raise DomainError("log-moneyness must be positive")
    _require_assumption_b(model, "the implied vol limit")
    grid = TimeGrid(horizon, n_steps or DEFAULT_TERMINAL_STEPS)
    rate, res = inf_tail_result(model, k, grid=grid, **kwargs)
    if rate <= 0.0:
        # degenerate: zero rate makes the limit blow up
        return AsymptoteReport(
            quantity="implied_vol",
            rate=0.0,
            limit_value=math.inf,
            minimizer_f=res.minimizer_f,
            diagnostics={"degenerate": True},
        )
    limit = k / math.sqrt(2.0 * horizon * rate)
    return AsymptoteReport(
        quantity="implied_vol",
        rate=rate,
        limit_value=limit,
        minimizer_f=res.minimizer_f,
        diagnostics={"degenerate": False, "converged": res.converged},
    )


# ---------------------------------------------------------------------------
# constrained path problems
# ---------------------------------------------------------------------------


class _JointControlProblem:
    """Energy of a joint (l, f) control pair plus a penalized constraint.

    Subclasses provide ``violation_batch`` returning max(0, shortfall) for a
    batch of flattened joint variables.
    """

    def __init__(self, model: ModelSpec, grid: TimeGrid):
        self.model = model
        self.grid = grid
        self.n = grid.n_steps
        self.m = model.m
        self.dim = 2 * self.n * self.m
        self.mu = PENALTY_START

    def split(self, z):
        z = np.asarray(z, float)
        half = self.n * self.m
        l = z[..., :half].reshape(z.shape[:-1] + (self.n, self.m))
        f = z[..., half:].reshape(z.shape[:-1] + (self.n, self.m))
        return l, f

    def energies(self, z):
        l, f = self.split(z)
        dt = self.grid.dt
        return 0.5 * dt * (np.sum(l**2, axis=(-1, -2)) + np.sum(f**2, axis=(-1, -2)))

    def phi_values(self, z):
        l, f = self.split(z)
        return phi_batch(self.model, self.grid, l, f)

    def violation_batch(self, z):  # pragma: no cover - abstract
        raise NotImplementedError

    def value_batch(self, z):
        return self.energies(z) + self.mu * self.violation_batch(z) ** 2

    def value(self, z):
        return float(self.value_batch(np.asarray(z, float)))

    def gradient(self, z):
        from .ratefn import _fd_gradient

        return _fd_gradient(self.value_batch, np.asarray(z, float))


class _AsianProblem(_JointControlProblem):
    def __init__(self, model, grid, moneyness):
        super().__init__(model, grid)
        self.moneyness = float(moneyness)

    def average_batch(self, z):
        phi = self.phi_values(z)[..., 0]
        ex = np.exp(phi)
        return np.trapezoid(ex, dx=self.grid.dt, axis=-1) / self.grid.horizon

    def violation_batch(self, z):
        return np.maximum(0.0, self.moneyness - self.average_batch(z))


class _ExitFaceProblem(_JointControlProblem):
    """Touch one face of the shifted domain by the deadline."""

    def __init__(self, model, grid, face, deadline):
        super().__init__(model, grid)
        a, c = face
        self.a = np.asarray(a, float)
        self.c = float(c)
        window = grid.nodes <= deadline + 1e-12
        window[0] = False  # exit happens on (0, t]
        if not np.any(window):
            raise DomainError("deadline excludes every positive grid node")
        self.window = window

    def max_signed_distance_batch(self, z):
        phi = self.phi_values(z)
        sd = np.einsum("a,...na->...n", self.a, phi) - self.c
        return np.max(sd[..., self.window], axis=-1)

    def violation_batch(self, z):
        return np.maximum(0.0, -self.max_signed_distance_batch(z))


def _penalty_continuation(
    problem: _JointControlProblem,
    stages: int = PENALTY_STAGES,
    restarts: int = 4,
    seed: int = 0,
    maxiter: int = 400,
):
    """Increase the penalty weight geometrically, warm-starting every stage."""
    problem.mu = PENALTY_START
    z, info = minimize_multistart(
        problem, problem.dim, problem.grid, 2 * problem.m,
        restarts=restarts, seed=seed, maxiter=maxiter,
    )
    total_iter = info["iterations"]
    for _ in range(stages - 1):
        problem.mu *= PENALTY_FACTOR
        from scipy import optimize as _sopt

        res = _sopt.minimize(
            problem.value,
            z,
            jac=problem.gradient,
            method="L-BFGS-B",
            options={"maxiter": maxiter, "ftol": 1e-14, "gtol": 1e-10},
        )
        z = res.x
        total_iter += int(res.nit)
    return z, total_iter


def _polish_to_feasibility(problem, z, shortfall_fn):
    """Scale the found ray to exact constraint activity by bisection.

    shortfall_fn(z) <= 0 means feasible; returns (z_polished, shortfall).
    """
    base = np.asarray(z, float)
    if float(np.max(np.abs(base))) == 0.0:
        return base, float(shortfall_fn(base))

    def short(lam):
        return float(shortfall_fn(lam * base))

    s1 = short(1.0)
    if s1 > 0.0:  # infeasible: scale the ray up to reach the constraint
        lo, hi = 1.0, 2.0
        while short(hi) > 0.0:
            hi *= 2.0
            if hi > 1024.0:
                return base, s1
    else:  # feasible: shrink toward the boundary to shed surplus energy
        if short(0.0) <= 0.0:
            return base, s1  # callers special-case a feasible zero path
        lo, hi = 0.0, 1.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if short(mid) > 0.0:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-14 * max(1.0, hi):
            break
    return hi * base, short(hi)


def asian_asymptote(
    model: ModelSpec,
    strike: float,
    horizon: float,
    n_steps: int | None = None,
    restarts: int = 4,
    seed: int = 0,
) -> AsymptoteReport:
    """Decay rate of the small-noise Asian call through the constrained
    path problem on the running average of the price path."""
    if model.m != 1:
        raise UnsupportedFormError("Asian asymptotics are for m = 1 models")
    if strike <= 0:
        raise DomainError("strike must be positive")
    _require_assumption_b(model, "the Asian asymptote")
    s0 = float(model.s0[0])
    if not model.sigma_positive:
        threshold = (
            s0 * (math.exp(model.r * horizon) - 1.0) / (model.r * horizon)
            if model.r > 0
            else s0
        )
        if strike <= threshold:
            raise DomainError(
                f"vanishing-volatility models support Asian asymptotics only for "
                f"strikes above {threshold:.6g}"
            )
    grid = TimeGrid(horizon, n_steps or DEFAULT_TERMINAL_STEPS)
    moneyness = strike / s0
    problem = _AsianProblem(model, grid, moneyness)
    zero = np.zeros(problem.dim)
    if problem.violation_batch(zero) <= 0.0:
        # the zero path already lies in the closed constraint set
        zc = Control.zero(grid, 1)
        return AsymptoteReport(
            quantity="asian",
            rate=0.0,
            minimizer_f=zc,
            minimizer_l=Control.zero(grid, 1),
            diagnostics={"moneyness": moneyness, "converged": True, "shortfall": 0.0},
        )
    z, iters = _penalty_continuation(problem, restarts=restarts, seed=seed)
    z, shortfall = _polish_to_feasibility(
        problem, z, lambda zz: float(problem.violation_batch(np.asarray(zz, float)))
    )
    converged = shortfall <= FEASIBILITY_TOL
    rate = float(problem.energies(z))
    l_dots, f_dots = problem.split(z)
    return AsymptoteReport(
        quantity="asian",
        rate=rate,
        minimizer_f=Control(grid, f_dots),
        minimizer_l=Control(grid, l_dots),
        diagnostics={
            "moneyness": moneyness,
            "converged": bool(converged),
            "shortfall": shortfall,
            "iterations": iters,
        },
    )


def exit_asymptote(
    model: ModelSpec,
    domain: ExitDomain,
    deadline: float,
    horizon: float | None = None,
    n_steps: int | None = None,
    restarts: int = 4,
    seed: int = 0,
) -> AsymptoteReport:
    """Decay rate of the probability that the log-price leaves the domain
    by the deadline; faces of the shifted domain are searched independently."""
    if domain.dim != model.m:
        raise DimensionError("domain dimension must equal m")
    horizon = float(horizon if horizon is not None else deadline)
    if not 0.0 < deadline <= horizon + 1e-12:
        raise DomainError("deadline must lie in (0, horizon]")
    if domain.strictly_outside(model.x0):
        raise DomainError("the start point must not lie outside the domain")
    grid = TimeGrid(horizon, n_steps or DEFAULT_TERMINAL_STEPS)
    best = None
    per_face = []
    for idx, (a, c) in enumerate(domain.faces()):
        face = (a, c - float(a @ model.x0))  # shift to start at the origin
        problem = _ExitFaceProblem(model, grid, face, deadline)
        zero = np.zeros(problem.dim)
        if problem.violation_batch(zero) <= 0.0:
            z, shortfall, iters = zero, 0.0, 0
        else:
            z, iters = _penalty_continuation(problem, restarts=restarts, seed=seed)
            z, shortfall = _polish_to_feasibility(
                problem,
                z,
                lambda zz: float(problem.violation_batch(np.asarray(zz, float))),
            )
        rate = float(problem.energies(z))
        ok = shortfall <= FEASIBILITY_TOL
        per_face.append({"face": idx, "rate": rate, "converged": bool(ok)})
        if ok and (best is None or rate < best[0]):
            best = (rate, idx, z, problem, iters)
    if best is None:
        zc = Control.zero(grid, model.m)
        return AsymptoteReport(
            quantity="exit_prob",
            rate=float(min(f["rate"] for f in per_face)),
            minimizer_f=zc,
            minimizer_l=zc,
            diagnostics={"converged": False, "faces": per_face},
        )
    rate, idx, z, problem, iters = best
    l_dots, f_dots = problem.split(z)
    return AsymptoteReport(
        quantity="exit_prob",
        rate=rate,
        minimizer_f=Control(grid, f_dots),
        minimizer_l=Control(grid, l_dots),
        diagnostics={
            "converged": True,
            "best_face": idx,
            "faces": per_face,
            "iterations": iters,
        },
    )


def barrier_asymptote(
    model: ModelSpec,
    price_domain: ExitDomain,
    horizon: float,
    n_steps: int | None = None,
    **kwargs,
) -> AsymptoteReport:
    """Decay rate of a binary knock-in barrier price: the price-space domain
    is mapped through the componentwise log and the exit problem is solved at
    the full horizon.  The discount prefactor does not affect the rate and is
    reported separately."""
    log_domain = price_domain.log_image()
    if log_domain.strictly_outside(model.x0):
        raise DomainError("spot must not start outside the barrier domain")
    report = exit_asymptote(
        model, log_domain, deadline=horizon, horizon=horizon, n_steps=n_steps, **kwargs
    )
    report.quantity = "barrier"
    report.diagnostics["discount_prefactor"] = math.exp(-model.r * horizon)
    return report
