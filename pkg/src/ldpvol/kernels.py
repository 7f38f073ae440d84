"""Admissible Volterra kernels and their induced integral operators.

Supported kinds
---------------
brownian
    Indicator kernel 1_{s<t}; the induced operator is plain integration.
riemann_liouville
    (t-s)^(H-1/2) / Gamma(H+1/2), Hurst H in (0,1).  Rough for H < 1/2.
fbm_molchan_golosov
    The kernel representing fractional Brownian motion as a causal integral
    against standard Brownian motion; evaluated through its explicit integral
    form (adaptive quadrature, abs. tol. 1e-10), with the Gauss-hypergeometric
    representation available as a cross-check.
logarithmic
    Convolution kernel tau(x) with tau(x)^2 = beta * x^(-1) * log(1/x)^(-beta-1),
    beta > 1, defined for lags x < 1.  Slices are square integrable only for
    t < 1, so grids must have horizon < 1.
tabulated
    Values sampled on a rectangular (t, s) grid; bilinear interpolation below
    the diagonal, zero above it.

Every evaluator enforces the Volterra property K(t, s) = 0 for s >= t.
Quadrature rules integrate the kernel factor exactly in closed form on cells
touching a singular endpoint (power-law diagonals, the s = 0 edge of the
Molchan-Golosov kernel for H > 1/2) and fall back to the trapezoid rule on
the smooth interior.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate as _sint
from scipy import special as _sp

from .errors import AdmissibilityError, DimensionError, InvalidKernelError
from .paths import TimeGrid

_FINITE_SLICE_LIMIT = 1e12

BROWNIAN = "brownian"
RIEMANN_LIOUVILLE = "riemann_liouville"
MOLCHAN_GOLOSOV = "fbm_molchan_golosov"
LOGARITHMIC = "logarithmic"
TABULATED = "tabulated"

KERNEL_KINDS = (BROWNIAN, RIEMANN_LIOUVILLE, MOLCHAN_GOLOSOV, LOGARITHMIC, TABULATED)
_FRACTIONAL_KINDS = (RIEMANN_LIOUVILLE, MOLCHAN_GOLOSOV)


@dataclass(frozen=True)
class TabulatedTable:
    """Sampled kernel values on a rectangular grid, stored hashably."""

    t: tuple
    s: tuple
    values: tuple

    @staticmethod
    def from_arrays(t, s, values) -> "TabulatedTable":
        t = np.asarray(t, dtype=float)
        s = np.asarray(s, dtype=float)
        v = np.asarray(values, dtype=float)
        if v.shape != (t.size, s.size):
            raise DimensionError("table values must have shape (len(t), len(s))")
        if np.any(np.diff(t) <= 0) or np.any(np.diff(s) <= 0):
            raise InvalidKernelError("table axes must be strictly increasing")
        return TabulatedTable(tuple(t), tuple(s), tuple(map(tuple, v)))


@dataclass(frozen=True)
class KernelSpec:
    kind: str
    hurst: float | None = None
    beta: float | None = None
    table: TabulatedTable | None = None

    def __post_init__(self):
        if self.kind not in KERNEL_KINDS:
            raise InvalidKernelError(f"unknown kernel kind {self.kind!r}")
        if self.kind in _FRACTIONAL_KINDS:
            if self.hurst is None or not 0.0 < self.hurst < 1.0:
                raise InvalidKernelError("fractional kernels need hurst in (0, 1)")
        if self.kind == LOGARITHMIC:
            if self.beta is None or not self.beta > 1.0:
                raise InvalidKernelError("logarithmic kernel needs beta > 1")
        if self.kind == TABULATED and self.table is None:
            raise InvalidKernelError("tabulated kernel needs a table")

    def to_json_obj(self) -> dict:
        obj = {"kind": self.kind}
        if self.hurst is not None:
            obj["hurst"] = self.hurst
        if self.beta is not None:
            obj["beta"] = self.beta
        if self.table is not None:
            obj["table"] = {
                "t": list(self.table.t),
                "s": list(self.table.s),
                "values": [list(r) for r in self.table.values],
            }
        return obj

    @staticmethod
    def from_json_obj(obj: dict) -> "KernelSpec":
        table = None
        if "table" in obj and obj["table"] is not None:
            tb = obj["table"]
            table = TabulatedTable.from_arrays(tb["t"], tb["s"], tb["values"])
        return KernelSpec(obj["kind"], obj.get("hurst"), obj.get("beta"), table)


def brownian() -> KernelSpec:
    return KernelSpec(BROWNIAN)


def riemann_liouville(hurst: float) -> KernelSpec:
    return KernelSpec(RIEMANN_LIOUVILLE, hurst=hurst)


def molchan_golosov(hurst: float) -> KernelSpec:
    return KernelSpec(MOLCHAN_GOLOSOV, hurst=hurst)


def logarithmic(beta: float) -> KernelSpec:
    return KernelSpec(LOGARITHMIC, beta=beta)


def tabulated(t, s, values) -> KernelSpec:
    return KernelSpec(TABULATED, table=TabulatedTable.from_arrays(t, s, values))


# ---------------------------------------------------------------------------
# pointwise evaluation
# ---------------------------------------------------------------------------


def _rl_value(h: float, t: float, s: float) -> float:
    return (t - s) ** (h - 0.5) / _sp.gamma(h + 0.5)


@functools.lru_cache(maxsize=None)
def _mg_prefactor(h: float) -> float:
    if h > 0.5:
        return math.sqrt(h * (2 * h - 1) / _sp.beta(h - 0.5, 2 - 2 * h))
    return math.sqrt(2 * h / ((1 - 2 * h) * _sp.beta(h + 0.5, 1 - 2 * h)))


def _mg_value(h: float, t: float, s: float) -> float:
    """Explicit integral form; inner integrals by weighted adaptive quadrature."""
    if s <= 0.0:
        return math.inf if h > 0.5 else 0.0
    if h == 0.5:
        return 1.0
    if h > 0.5:
        inner, _ = _sint.quad(
            lambda u: u ** (h - 0.5), s, t, weight="alg", wvar=(h - 1.5, 0.0),
            epsabs=1e-10, limit=200,
        )
        return _mg_prefactor(h) * s ** (0.5 - h) * inner
    inner, _ = _sint.quad(
        lambda u: u ** (h - 1.5), s, t, weight="alg", wvar=(h - 0.5, 0.0),
        epsabs=1e-10, limit=200,
    )
    return _mg_prefactor(h) * (
        (t / s) ** (h - 0.5) * (t - s) ** (h - 0.5)
        - (h - 0.5) * s ** (0.5 - h) * inner
    )


def mg_value_hyp2f1(h: float, t: float, s: float) -> float:
    """Gauss-hypergeometric representation of the fBM kernel (cross-check path)."""
    if s >= t or s <= 0.0:
        return 0.0
    c = math.sqrt(
        2 * h * _sp.gamma(1.5 - h) / (_sp.gamma(h + 0.5) * _sp.gamma(2 - 2 * h))
    )
    return (
        c
        * (t - s) ** (h - 0.5)
        * (s / t) ** (0.5 - h)
        * _sp.hyp2f1(0.5 - h, 1.0, h + 0.5, (t - s) / t)
    )


def _log_value(beta: float, x: float) -> float:
    """Convolution kernel tau(x) at lag x in (0, 1)."""
    if x >= 1.0:
        raise InvalidKernelError("logarithmic kernel is defined for lags < 1")
    if x <= 0.0:
        return math.inf
    return math.sqrt(beta / x * math.log(1.0 / x) ** (-beta - 1.0))


def _table_value(table: TabulatedTable, t: float, s: float) -> float:
    tt = np.asarray(table.t)
    ss = np.asarray(table.s)
    vv = np.asarray(table.values)
    ti = np.clip(np.searchsorted(tt, t) - 1, 0, tt.size - 2)
    si = np.clip(np.searchsorted(ss, s) - 1, 0, ss.size - 2)
    wt = np.clip((t - tt[ti]) / (tt[ti + 1] - tt[ti]), 0.0, 1.0)
    ws = np.clip((s - ss[si]) / (ss[si + 1] - ss[si]), 0.0, 1.0)
    return float(
        (1 - wt) * (1 - ws) * vv[ti, si]
        + (1 - wt) * ws * vv[ti, si + 1]
        + wt * (1 - ws) * vv[ti + 1, si]
        + wt * ws * vv[ti + 1, si + 1]
    )


def eval_kernel(kernel: KernelSpec, t: float, s: float) -> float:
    """K(t, s); zero whenever s >= t (Volterra convention, also at singular
    diagonal points where quadrature routines substitute cell-exact masses)."""
    t = float(t)
    s = float(s)
    if s >= t:
        return 0.0
    if kernel.kind == BROWNIAN:
        return 1.0
    if kernel.kind == RIEMANN_LIOUVILLE:
        return _rl_value(kernel.hurst, t, s)
    if kernel.kind == MOLCHAN_GOLOSOV:
        return _mg_value(kernel.hurst, t, s)
    if kernel.kind == LOGARITHMIC:
        return _log_value(kernel.beta, t - s)
    return _table_value(kernel.table, t, s)


def _is_diagonal_singular(kernel: KernelSpec) -> bool:
    if kernel.kind == LOGARITHMIC:
        return True
    if kernel.kind in _FRACTIONAL_KINDS:
        return kernel.hurst < 0.5
    return False


# ---------------------------------------------------------------------------
# cached grid machinery
# ---------------------------------------------------------------------------


@functools.lru_cache(maxsize=128)
def _row_values(kernel: KernelSpec, grid: TimeGrid) -> np.ndarray:
    """K(t_i, t_j) for j < i, zero elsewhere.  Left-limit value on the
    diagonal for the non-singular power kernels, so H = 1/2 matches brownian."""
    n = grid.n_steps
    nodes = grid.nodes
    out = np.zeros((n + 1, n + 1))
    if kernel.kind == BROWNIAN:
        out[np.tril_indices(n + 1)] = 1.0
        out[0, 0] = 0.0
        return out
    if kernel.kind == RIEMANN_LIOUVILLE:
        h = kernel.hurst
        lag = np.arange(n + 1) * grid.dt
        with np.errstate(divide="ignore"):
            vals = np.where(lag > 0, lag, np.nan) ** (h - 0.5) / _sp.gamma(h + 0.5)
        vals[0] = 1.0 / _sp.gamma(h + 0.5) if h >= 0.5 else 0.0
        if h == 0.5:
            vals[0] = 1.0
        for i in range(1, n + 1):
            out[i, : i + 1] = vals[i::-1]
        out[0, 0] = 0.0
        return out
    if kernel.kind == LOGARITHMIC:
        if grid.horizon >= 1.0:
            raise AdmissibilityError(
                "logarithmic kernel slices are square integrable only for t < 1; "
                "use a grid with horizon < 1"
            )
        lag = np.arange(1, n + 1) * grid.dt
        vals = np.array([_log_value(kernel.beta, x) for x in lag])
        for i in range(1, n + 1):
            out[i, :i] = vals[i - 1 :: -1]
        return out
    if kernel.kind == MOLCHAN_GOLOSOV:
        h = kernel.hurst
        if h == 0.5:
            out[np.tril_indices(n + 1)] = 1.0
            out[0, 0] = 0.0
            return out
        for i in range(1, n + 1):
            for j in range(0, i):
                if j == 0:
                    out[i, 0] = 0.0 if h < 0.5 else np.inf
                else:
                    out[i, j] = _mg_value(h, nodes[i], nodes[j])
            if h > 0.5:
                out[i, i] = 0.0
        return out
    # tabulated
    for i in range(1, n + 1):
        for j in range(0, i + 1):
            out[i, j] = _table_value(kernel.table, nodes[i], nodes[j]) if j < i else 0.0
    return out


def _rl_cell_moments(h: float, dt: float, n: int):
    """Exact cell integrals of the power factor against 1 and (s - a).

    For lag index L >= 1 (cell ending L*dt before the evaluation time... the
    cell [t - L*dt, t - (L-1)*dt]):
      I0[L] = int (t-s)^(H-1/2) ds,   I1[L] = int (t-s)^(H-1/2) (s-a) ds.
    """
    g = _sp.gamma(h + 0.5)
    a1 = h + 0.5
    a2 = h + 1.5
    A = np.arange(1, n + 1) * dt  # t - a
    B = A - dt  # t - b
    i0 = (A**a1 - B**a1) / a1 / g
    i1 = (A * (A**a1 - B**a1) / a1 - (A**a2 - B**a2) / a2) / g
    return i0, i1


@functools.lru_cache(maxsize=32)
def _log_diag_cell_mass(beta: float, dt: float) -> float:
    val, _ = _sint.quad(lambda x: _log_value(beta, x), 0.0, dt, limit=200)
    return val


@functools.lru_cache(maxsize=128)
def quad_weights(kernel: KernelSpec, grid: TimeGrid) -> np.ndarray:
    """Lower-triangular W with (Kf)(t_i) ~= sum_j W[i, j] f(t_j).

    Cells touching a singular endpoint integrate the kernel factor exactly
    (closed form where available, quadrature otherwise) against a piecewise
    constant co-factor; smooth cells use the trapezoid rule.  For the
    Riemann-Liouville kind every cell is integrated in closed form against a
    piecewise linear co-factor, which is exact on that class.
    """
    n = grid.n_steps
    dt = grid.dt
    W = np.zeros((n + 1, n + 1))
    if kernel.kind == BROWNIAN or (
        kernel.kind in _FRACTIONAL_KINDS and kernel.hurst == 0.5
    ):
        for i in range(1, n + 1):
            W[i, : i + 1] = dt
            W[i, 0] = dt / 2
            W[i, i] = dt / 2
        return W
    if kernel.kind == RIEMANN_LIOUVILLE:
        i0, i1 = _rl_cell_moments(kernel.hurst, dt, n)
        left = i0 - i1 / dt
        right = i1 / dt
        for i in range(1, n + 1):
            lags = np.arange(i, 0, -1)  # cell j has lag i - j
            W[i, :i] += left[lags - 1]
            W[i, 1 : i + 1] += right[lags - 1]
        return W
    rows = _row_values(kernel, grid)
    if kernel.kind == LOGARITHMIC:
        m0 = _log_diag_cell_mass(kernel.beta, dt)
        for i in range(1, n + 1):
            for j in range(0, i - 1):  # trapezoid on smooth cells
                W[i, j] += dt / 2 * rows[i, j]
                W[i, j + 1] += dt / 2 * rows[i, j + 1]
            W[i, i - 1] += m0  # diagonal cell: exact mass, left value
        return W
    if kernel.kind == MOLCHAN_GOLOSOV:
        h = kernel.hurst
        band = 4  # cells near a singular endpoint integrated exactly
        for i in range(1, n + 1):
            t = grid.nodes[i]
            for j in range(0, i):
                # kernel has unbounded s-derivative at both s = 0 and s = t
                a, b = grid.nodes[j], grid.nodes[j + 1]
                if j < band or i - 1 - j < band:
                    # exact kernel moments against a piecewise linear co-factor
                    m0, _ = _sint.quad(lambda s: _mg_value(h, t, s), a, b, limit=200)
                    m1, _ = _sint.quad(
                        lambda s: _mg_value(h, t, s) * (s - a), a, b, limit=200
                    )
                    W[i, j] += m0 - m1 / dt
                    W[i, j + 1] += m1 / dt
                else:
                    W[i, j] += dt / 2 * rows[i, j]
                    W[i, j + 1] += dt / 2 * rows[i, j + 1]
        return W
    # tabulated: trapezoid below the diagonal
    for i in range(1, n + 1):
        for j in range(0, i):
            W[i, j] += dt / 2 * rows[i, j]
            W[i, j + 1] += dt / 2 * rows[i, j + 1]
    return W


@functools.lru_cache(maxsize=128)
def pc_weights(kernel: KernelSpec, grid: TimeGrid) -> np.ndarray:
    """Cell masses M[i, j] = int_{t_j}^{t_{j+1}} K(t_i, s) ds for j < i.

    Used against piecewise-constant (left-value) co-factors, e.g. path-wise
    Euler quadrature of the volatility convolution.
    """
    n = grid.n_steps
    dt = grid.dt
    M = np.zeros((n + 1, n))
    if kernel.kind == BROWNIAN or (
        kernel.kind in _FRACTIONAL_KINDS and kernel.hurst == 0.5
    ):
        for i in range(1, n + 1):
            M[i, :i] = dt
        return M
    if kernel.kind == RIEMANN_LIOUVILLE:
        i0, _ = _rl_cell_moments(kernel.hurst, dt, n)
        for i in range(1, n + 1):
            M[i, :i] = i0[np.arange(i, 0, -1) - 1]
        return M
    rows = _row_values(kernel, grid)
    if kernel.kind == LOGARITHMIC:
        m0 = _log_diag_cell_mass(kernel.beta, dt)
        for i in range(1, n + 1):
            M[i, : i - 1] = dt / 2 * (rows[i, : i - 1] + rows[i, 1:i])
            M[i, i - 1] = m0
        return M
    if kernel.kind == MOLCHAN_GOLOSOV:
        W = quad_weights(kernel, grid)
        # redistribute the node weights onto cells (left-node convention)
        for i in range(1, n + 1):
            M[i, :i] = W[i, :i]
            M[i, i - 1] += W[i, i]
        return M
    for i in range(1, n + 1):
        M[i, :i] = dt / 2 * (rows[i, :i] + rows[i, 1 : i + 1])
    return M


@functools.lru_cache(maxsize=128)
def rms_weights(kernel: KernelSpec, grid: TimeGrid) -> np.ndarray:
    """R[i, j] = sqrt(int_cell K(t_i, s)^2 ds / dt).

    Convolving R against independent increments of variance dt reproduces the
    slice variance of the kernel exactly on every row.
    """
    n = grid.n_steps
    dt = grid.dt
    R = np.zeros((n + 1, n))
    if kernel.kind == BROWNIAN or (
        kernel.kind in _FRACTIONAL_KINDS and kernel.hurst == 0.5
    ):
        for i in range(1, n + 1):
            R[i, :i] = 1.0
        return R
    if kernel.kind == RIEMANN_LIOUVILLE:
        h = kernel.hurst
        g2 = _sp.gamma(h + 0.5) ** 2
        A = np.arange(1, n + 1) * dt
        B = A - dt
        cell = (A ** (2 * h) - B ** (2 * h)) / (2 * h) / g2
        for i in range(1, n + 1):
            R[i, :i] = np.sqrt(cell[np.arange(i, 0, -1) - 1] / dt)
        return R
    if kernel.kind == LOGARITHMIC:
        if grid.horizon >= 1.0:
            raise AdmissibilityError("logarithmic kernel needs horizon < 1")
        lb = lambda x: math.log(1.0 / x) ** (-kernel.beta) if x > 0 else 0.0
        lag = np.arange(0, n + 1) * dt
        anti = np.array([lb(x) for x in lag])
        cell = np.diff(anti)
        for i in range(1, n + 1):
            R[i, :i] = np.sqrt(cell[np.arange(i, 0, -1) - 1] / dt)
        return R
    if kernel.kind == MOLCHAN_GOLOSOV:
        h = kernel.hurst
        rows = _row_values(kernel, grid)
        pref = _mg_prefactor(h)
        for i in range(1, n + 1):
            t = grid.nodes[i]
            for j in range(0, i):
                a, b = grid.nodes[j], grid.nodes[j + 1]
                if j == 0:
                    cell, _ = _sint.quad(
                        lambda s: _mg_value(h, t, s) ** 2, a, b, limit=200,
                        points=[a] if h > 0.5 else None,
                    )
                elif j == i - 1 and h < 0.5:
                    # diagonal behaviour K ~ pref * (t-s)^(H-1/2)
                    cell = pref**2 * dt ** (2 * h) / (2 * h)
                else:
                    cell = dt / 2 * (rows[i, j] ** 2 + rows[i, j + 1] ** 2)
                R[i, j] = math.sqrt(max(cell, 0.0) / dt)
        return R
    rows = _row_values(kernel, grid)
    for i in range(1, n + 1):
        R[i, :i] = np.sqrt(dt / 2 * (rows[i, :i] ** 2 + rows[i, 1 : i + 1] ** 2) / dt)
    return R


# ---------------------------------------------------------------------------
# operator application and diagnostics
# ---------------------------------------------------------------------------


def hs_apply(kernel: KernelSpec, f, grid: TimeGrid) -> np.ndarray:
    """Apply the induced operator: t -> int_0^t K(t, s) f(s) ds at grid nodes."""
    f = np.asarray(f, dtype=float)
    if f.shape != (grid.n_steps + 1,):
        raise DimensionError(
            f"f must be sampled on the grid nodes, expected shape "
            f"({grid.n_steps + 1},), got {f.shape}"
        )
    return quad_weights(kernel, grid) @ f


def slice_variance(kernel: KernelSpec, t: float) -> float:
    """int_0^t K(t, s)^2 ds; admissibility diagnostic for the slice at t."""
    t = float(t)
    if t < 0:
        raise ValueError("t must be nonnegative")
    if t == 0.0:
        return 0.0
    if kernel.kind == BROWNIAN:
        return t
    if kernel.kind == RIEMANN_LIOUVILLE:
        h = kernel.hurst
        val = t ** (2 * h) / (2 * h * _sp.gamma(h + 0.5) ** 2)
    elif kernel.kind == LOGARITHMIC:
        if t >= 1.0:
            raise AdmissibilityError(
                "logarithmic kernel slice is not square integrable for t >= 1"
            )
        val = math.log(1.0 / t) ** (-kernel.beta)
    elif kernel.kind == MOLCHAN_GOLOSOV:
        h = kernel.hurst
        if h == 0.5:
            return t
        val, _ = _sint.quad(
            lambda s: _mg_value(h, t, s) ** 2, 0.0, t, limit=200,
            points=[0.0, t],
        )
    else:
        ss = np.asarray(kernel.table.s)
        mask = ss <= t
        s_pts = np.concatenate([ss[mask], [t]]) if ss[mask].size else np.array([0.0, t])
        if s_pts[0] > 0.0:
            s_pts = np.concatenate([[0.0], s_pts])
        vals = np.array([_table_value(kernel.table, t, s) ** 2 for s in s_pts])
        val = float(np.trapezoid(vals, s_pts))
    if not np.isfinite(val) or val > _FINITE_SLICE_LIMIT:
        raise AdmissibilityError(f"slice at t={t} is numerically non-square-integrable")
    return float(val)


def l2_modulus(kernel: KernelSpec, tau: float, grid: TimeGrid) -> float:
    """Discrete L2 modulus of continuity of the kernel over grid pairs.

    sup over node pairs |t_i - t_j| <= tau of int_0^T (K(t_i,u) - K(t_j,u))^2 du,
    computed through the decomposition V_i + V_j - 2 * cross(i, j).
    """
    tau = float(tau)
    if tau < 0 or tau > grid.horizon:
        raise ValueError("tau must lie in [0, horizon]")
    n = grid.n_steps
    width = int(math.floor(tau / grid.dt + 1e-9))
    if width == 0:
        return 0.0
    nodes = grid.nodes
    V = np.array([slice_variance(kernel, t) for t in nodes])
    rows = _row_values(kernel, grid)
    pc = pc_weights(kernel, grid)
    best = 0.0
    for i in range(1, n + 1):
        for j in range(max(0, i - width), i):
            if j == 0:
                cross = 0.0
            else:
                # trapezoid of the product on [0, t_{j-1}], diagonal cell of the
                # j-slice integrated exactly against the midpoint of the i-slice
                prod = rows[i, : j + 1] * rows[j, : j + 1]
                cross = float(np.trapezoid(prod[:j], nodes[:j])) if j >= 1 else 0.0
                mid = eval_kernel(kernel, nodes[i], 0.5 * (nodes[j - 1] + nodes[j]))
                cross += pc[j, j - 1] * mid
            best = max(best, V[i] + V[j] - 2.0 * cross)
    return float(max(best, 0.0))


def kernel_info(kernel: KernelSpec, grid: TimeGrid, taus=None) -> dict:
    """Diagnostics bundle used by the CLI."""
    taus = list(taus) if taus is not None else [grid.horizon / 8, grid.horizon / 4]
    nodes = grid.nodes
    return {
        "kind": kernel.kind,
        "hurst": kernel.hurst,
        "beta": kernel.beta,
        "slice_variance": {
            repr(float(t)): slice_variance(kernel, float(t))
            for t in nodes[:: max(1, grid.n_steps // 8)]
        },
        "l2_modulus": {repr(float(tau)): l2_modulus(kernel, float(tau), grid) for tau in taus},
    }
