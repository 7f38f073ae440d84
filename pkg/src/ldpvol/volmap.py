"""Deterministic controlled skeleton of the volatility process.

Given a square-integrable control (stored through its per-interval values),
the skeleton is produced in three stages: solve the controlled auxiliary ODE,
solve the controlled Volterra equation, and apply the output map (reflection
at zero when requested, identity otherwise).

Coefficient closures must be numpy-vectorized: they receive arrays with
arbitrary leading batch axes and broadcast over them.  Signatures:

    aux_drift(t, v)            v: (..., k)        -> (..., k)
    aux_disp(t, v)             v: (..., k)        -> (..., k, m)
    u_map(v)                   v: (..., k)        -> (..., d)
    volterra_a(t, s, x)        s: (J,), x: (..., J, d) -> (..., J, d)
    volterra_c(t, s, x)        s: (J,), x: (..., J, d) -> (..., J, d, m)

Coefficients see nodal values only, not the whole past of the path.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels as _k
from .errors import (
    ConvergenceError,
    DimensionError,
    DivergenceError,
    UnsupportedDomainError,
    UnsupportedFormError,
)
from .paths import Control, PathFn, TimeGrid, reflect_values

BLOWUP_LIMIT = 1e9
PICARD_TOL = 1e-10
PICARD_MAX_ITER = 200

GAUSSIAN = "gaussian"
MIXED = "mixed"
FRACTIONAL = "fractional_nongaussian"
VOLTERRA_SDE = "volterra_sde"
REFLECTED = "reflected_diffusion"
TOY = "toy"

FAMILIES = (GAUSSIAN, MIXED, FRACTIONAL, VOLTERRA_SDE, REFLECTED, TOY)

BUILTIN_U_MAPS = {
    "identity": lambda v: v,
    "exp": np.exp,
    "abs": np.abs,
    "square": np.square,
}


def _zero_drift(t, v):
    return np.zeros_like(v)


def _zero_disp_factory(m):
    def disp(t, v):
        return np.zeros(v.shape + (m,))

    return disp


@dataclass
class VolProcessSpec:
    """Multivariate volatility-process description.

    ``noise_kernels`` is the d x m matrix of kernels applied to the Brownian
    driver, ``drift_kernels`` the length-d list applied to the transformed
    auxiliary process.  Entries may be None (treated as zero kernels).
    """

    family: str
    d: int = 1
    m: int = 1
    k_dim: int = 1
    noise_kernels: list | None = None
    drift_kernels: list | None = None
    u_map: object | None = None  # name or callable
    aux_drift: object | None = None
    aux_disp: object | None = None
    volterra_a: object | None = None
    volterra_c: object | None = None
    y: np.ndarray = field(default=None)
    v0: np.ndarray = field(default=None)
    reflect: bool = False
    aux_meta: dict | None = None  # named form of the aux coefficients, for JSON

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise UnsupportedFormError(f"unknown volatility family {self.family!r}")
        self.d = int(self.d)
        self.m = int(self.m)
        self.k_dim = int(self.k_dim)
        self.y = (
            np.zeros(self.d) if self.y is None else np.atleast_1d(np.asarray(self.y, float))
        )
        self.v0 = (
            np.zeros(self.k_dim)
            if self.v0 is None
            else np.atleast_1d(np.asarray(self.v0, float))
        )
        if self.y.shape != (self.d,):
            raise DimensionError(f"y must have shape ({self.d},)")
        if self.v0.shape != (self.k_dim,):
            raise DimensionError(f"v0 must have shape ({self.k_dim},)")
        if self.family == TOY:
            if self.d != 1 or self.m != 1:
                raise DimensionError("toy family is scalar (d = m = 1)")
        if self.reflect and self.d != 1:
            raise UnsupportedDomainError("reflection is supported for d = 1 only")
        if self.family in (GAUSSIAN, MIXED):
            if self.noise_kernels is None:
                raise DimensionError(f"{self.family} family needs noise_kernels")
            if len(self.noise_kernels) != self.d or any(
                len(row) != self.m for row in self.noise_kernels
            ):
                raise DimensionError("noise_kernels must be a d x m matrix")
        if self.family == GAUSSIAN and self.drift_kernels is not None:
            raise UnsupportedFormError("gaussian family must not carry drift kernels")
        if self.family in (FRACTIONAL, MIXED):
            if self.drift_kernels is None or len(self.drift_kernels) != self.d:
                raise DimensionError(f"{self.family} family needs d drift_kernels")
            if self.u_map is None:
                raise UnsupportedFormError(f"{self.family} family needs a u_map")
        if self.family == FRACTIONAL and self.noise_kernels is not None:
            raise UnsupportedFormError("fractional family must not carry noise kernels")
        if self.family == VOLTERRA_SDE and (
            self.volterra_a is None and self.volterra_c is None
        ):
            raise UnsupportedFormError("volterra_sde family needs a and/or c maps")
        if self.family == REFLECTED:
            if not self.reflect:
                self.reflect = True
            if self.k_dim != self.d:
                raise DimensionError("reflected family uses k_dim = d state")
            if self.aux_drift is None or self.aux_disp is None:
                raise UnsupportedFormError("reflected family needs aux coefficients")
        if self.aux_drift is None:
            self.aux_drift = _zero_drift
        if self.aux_disp is None:
            self.aux_disp = _zero_disp_factory(self.m)

    def u_callable(self):
        if self.u_map is None:
            return None
        if callable(self.u_map):
            return self.u_map
        try:
            return BUILTIN_U_MAPS[self.u_map]
        except KeyError:
            raise UnsupportedFormError(
                f"unknown built-in u_map {self.u_map!r}; choose from "
                f"{sorted(BUILTIN_U_MAPS)}"
            ) from None


# ---------------------------------------------------------------------------
# controlled auxiliary process
# ---------------------------------------------------------------------------


def _check_blowup(arr, what):
    if not np.all(np.isfinite(arr)) or np.max(np.abs(arr)) > BLOWUP_LIMIT:
        raise DivergenceError(f"{what} exceeded the blow-up threshold {BLOWUP_LIMIT:g}")


def solve_psi_batch(spec: VolProcessSpec, dots: np.ndarray, grid: TimeGrid) -> np.ndarray:
    """Explicit Euler solution of the controlled auxiliary ODE.

    dots has shape (..., n, m); returns (..., n+1, k).
    """
    dots = np.asarray(dots, float)
    n = grid.n_steps
    dt = grid.dt
    nodes = grid.nodes
    lead = dots.shape[:-2]
    psi = np.empty(lead + (n + 1, spec.k_dim))
    psi[..., 0, :] = spec.v0
    cur = np.broadcast_to(spec.v0, lead + (spec.k_dim,)).copy()
    for j in range(n):
        drift = spec.aux_drift(nodes[j], cur)
        disp = spec.aux_disp(nodes[j], cur)
        cur = cur + dt * (drift + np.einsum("...km,...m->...k", disp, dots[..., j, :]))
        psi[..., j + 1, :] = cur
    _check_blowup(psi, "auxiliary skeleton")
    return psi


def solve_psi(spec: VolProcessSpec, control: Control) -> PathFn:
    vals = solve_psi_batch(spec, control.dot_values, control.grid)
    return PathFn(control.grid, vals)


# ---------------------------------------------------------------------------
# controlled Volterra equation
# ---------------------------------------------------------------------------


def _gaussian_part_batch(spec, dots, grid):
    # cell masses against the piecewise-constant control are exact here
    lead = dots.shape[:-2]
    out = np.zeros(lead + (grid.n_steps + 1, spec.d))
    for i in range(spec.d):
        for j in range(spec.m):
            kern = spec.noise_kernels[i][j]
            if kern is None:
                continue
            M = _k.pc_weights(kern, grid)
            out[..., i] += np.einsum("ij,...j->...i", M, dots[..., j])
    return out


def _fractional_part_batch(spec, dots, grid):
    psi = solve_psi_batch(spec, dots, grid)
    u = spec.u_callable()(psi[..., :-1, :])  # left node values, (..., n, d)
    lead = dots.shape[:-2]
    out = np.zeros(lead + (grid.n_steps + 1, spec.d))
    for i in range(spec.d):
        kern = spec.drift_kernels[i]
        if kern is None:
            continue
        M = _k.pc_weights(kern, grid)
        out[..., i] = np.einsum("ij,...j->...i", M, u[..., i])
    return out


def _picard_batch(spec, dots, grid):
    n = grid.n_steps
    dt = grid.dt
    nodes = grid.nodes
    lead = dots.shape[:-2]
    eta = np.broadcast_to(spec.y, lead + (n + 1, spec.d)).copy()
    a_map, c_map = spec.volterra_a, spec.volterra_c
    for iteration in range(PICARD_MAX_ITER):
        new = np.empty_like(eta)
        new[..., 0, :] = spec.y
        for i in range(1, n + 1):
            s = nodes[:i]
            x = eta[..., :i, :]
            acc = np.broadcast_to(spec.y, lead + (spec.d,)).copy()
            if a_map is not None:
                acc = acc + dt * np.sum(a_map(nodes[i], s, x), axis=-2)
            if c_map is not None:
                cv = c_map(nodes[i], s, x)
                acc = acc + dt * np.einsum("...jkm,...jm->...k", cv, dots[..., :i, :])
            new[..., i, :] = acc
        residual = float(np.max(np.abs(new - eta)))
        eta = new
        if not np.isfinite(residual):
            raise ConvergenceError(
                "Picard iterates diverged to non-finite values", residual=residual
            )
        if residual < PICARD_TOL:
            _check_blowup(eta, "Volterra skeleton")
            return eta
    raise ConvergenceError(
        f"Picard iteration did not converge in {PICARD_MAX_ITER} steps",
        residual=residual,
    )


def _reflected_state_batch(spec, dots, grid):
    n = grid.n_steps
    dt = grid.dt
    nodes = grid.nodes
    lead = dots.shape[:-2]
    state = np.empty(lead + (n + 1, spec.d))
    cur = np.broadcast_to(spec.y, lead + (spec.d,)).copy()
    state[..., 0, :] = cur
    run_min = np.minimum(cur, 0.0)
    for j in range(n):
        refl = cur - run_min
        drift = spec.aux_drift(nodes[j], refl)
        disp = spec.aux_disp(nodes[j], refl)
        cur = cur + dt * (drift + np.einsum("...km,...m->...k", disp, dots[..., j, :]))
        run_min = np.minimum(run_min, cur)
        state[..., j + 1, :] = cur
    _check_blowup(state, "reflected skeleton")
    return state


def gamma_y_batch(spec: VolProcessSpec, dots: np.ndarray, grid: TimeGrid) -> np.ndarray:
    """Solution of the controlled Volterra equation, before the output map."""
    dots = np.asarray(dots, float)
    if dots.shape[-2:] != (grid.n_steps, spec.m):
        raise DimensionError(
            f"control must have shape (..., {grid.n_steps}, {spec.m}), got {dots.shape}"
        )
    if spec.family == TOY:
        out = np.zeros(dots.shape[:-2] + (grid.n_steps + 1, 1))
        np.cumsum(dots * grid.dt, axis=-2, out=out[..., 1:, :])
        return out
    if spec.family == GAUSSIAN:
        return spec.y + _gaussian_part_batch(spec, dots, grid)
    if spec.family == FRACTIONAL:
        return spec.y + _fractional_part_batch(spec, dots, grid)
    if spec.family == MIXED:
        return (
            spec.y
            + _gaussian_part_batch(spec, dots, grid)
            + _fractional_part_batch(spec, dots, grid)
        )
    if spec.family == VOLTERRA_SDE:
        return _picard_batch(spec, dots, grid)
    return _reflected_state_batch(spec, dots, grid)


def gamma_y(spec: VolProcessSpec, control: Control) -> PathFn:
    return PathFn(control.grid, gamma_y_batch(spec, control.dot_values, control.grid))


def hat_map_batch(spec: VolProcessSpec, dots: np.ndarray, grid: TimeGrid) -> np.ndarray:
    vals = gamma_y_batch(spec, dots, grid)
    if spec.reflect:
        vals = np.moveaxis(reflect_values(np.moveaxis(vals, -2, -1)), -1, -2)
    return vals


def hat_map(spec: VolProcessSpec, control: Control) -> PathFn:
    """Skeleton of the volatility process driven by the control."""
    return PathFn(control.grid, hat_map_batch(spec, control.dot_values, control.grid))


def is_affine_in_control(spec: VolProcessSpec) -> bool:
    """True when the skeleton map is affine in the control (closed-form
    gradients are then available downstream)."""
    return spec.family in (GAUSSIAN, TOY) and not spec.reflect


# ---------------------------------------------------------------------------
# named coefficient helpers for serializable model files
# ---------------------------------------------------------------------------


def cir_coefficients(kappa: float, theta: float, eta: float):
    """Square-root mean reversion; the dispersion reads the positive part."""

    def drift(t, v):
        return kappa * (theta - v)

    def disp(t, v):
        return eta * np.sqrt(np.maximum(v, 0.0))[..., None]

    return drift, disp


def ou_coefficients(kappa: float, mu: float, eta: float):
    def drift(t, v):
        return kappa * (mu - v)

    def disp(t, v):
        return np.full(v.shape + (1,), eta)

    return drift, disp


AUX_FORMS = {"cir": cir_coefficients, "ou": ou_coefficients}


def make_aux_coefficients(meta: dict):
    """(drift, disp) closures from a named form: {'form': 'cir', ...params}."""
    params = {k: v for k, v in meta.items() if k != "form"}
    try:
        factory = AUX_FORMS[meta["form"]]
    except KeyError:
        raise UnsupportedFormError(
            f"unknown aux coefficient form {meta.get('form')!r}; "
            f"choose from {sorted(AUX_FORMS)}"
        ) from None
    return factory(**params)


def vol_to_json_obj(spec: VolProcessSpec) -> dict:
    """JSON form of a volatility-process description.

    Serializable specs use named built-in maps and named aux coefficient
    forms; arbitrary closures (including volterra_sde coefficients) have no
    JSON form and are rejected.
    """
    from .kernels import KernelSpec  # noqa: F401  (type reference)

    if spec.family == VOLTERRA_SDE:
        raise UnsupportedFormError("volterra_sde coefficient closures are not serializable")
    if spec.u_map is not None and not isinstance(spec.u_map, str):
        raise UnsupportedFormError("only named built-in u_maps serialize to JSON")
    has_aux = spec.aux_drift is not _zero_drift
    if has_aux and spec.aux_meta is None:
        raise UnsupportedFormError(
            "aux coefficients need an aux_meta named form to serialize"
        )

    def kern_obj(k):
        return None if k is None else k.to_json_obj()

    return {
        "family": spec.family,
        "d": spec.d,
        "m": spec.m,
        "k_dim": spec.k_dim,
        "noise_kernels": (
            [[kern_obj(k) for k in row] for row in spec.noise_kernels]
            if spec.noise_kernels is not None
            else None
        ),
        "drift_kernels": (
            [kern_obj(k) for k in spec.drift_kernels]
            if spec.drift_kernels is not None
            else None
        ),
        "u_map": spec.u_map,
        "aux_meta": spec.aux_meta if has_aux else None,
        "y": spec.y.tolist(),
        "v0": spec.v0.tolist(),
        "reflect": spec.reflect,
    }


def vol_from_json_obj(obj: dict) -> VolProcessSpec:
    from .kernels import KernelSpec

    def kern(o):
        return None if o is None else KernelSpec.from_json_obj(o)

    aux_drift = aux_disp = None
    if obj.get("aux_meta"):
        aux_drift, aux_disp = make_aux_coefficients(obj["aux_meta"])
    return VolProcessSpec(
        family=obj["family"],
        d=obj.get("d", 1),
        m=obj.get("m", 1),
        k_dim=obj.get("k_dim", 1),
        noise_kernels=(
            [[kern(o) for o in row] for row in obj["noise_kernels"]]
            if obj.get("noise_kernels") is not None
            else None
        ),
        drift_kernels=(
            [kern(o) for o in obj["drift_kernels"]]
            if obj.get("drift_kernels") is not None
            else None
        ),
        u_map=obj.get("u_map"),
        aux_drift=aux_drift,
        aux_disp=aux_disp,
        y=obj.get("y"),
        v0=obj.get("v0"),
        reflect=bool(obj.get("reflect", False)),
        aux_meta=obj.get("aux_meta"),
    )
