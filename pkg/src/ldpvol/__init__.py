"""Large-deviation rate functions and small-noise asymptotics for
multivariate stochastic volatility models, verified by Monte Carlo."""

from .paths import TimeGrid, Control, PathFn, energy, integrate, skorokhod_map
from .kernels import (
    KernelSpec,
    brownian,
    riemann_liouville,
    molchan_golosov,
    logarithmic,
    tabulated,
    eval_kernel,
    hs_apply,
    slice_variance,
    l2_modulus,
)
from .volmap import VolProcessSpec, solve_psi, gamma_y, hat_map
from .ratefn import (
    ModelSpec,
    RateResult,
    phi_functional,
    qtilde_path,
    itilde_terminal,
    inf_tail,
)
from .pricing import (
    ExitDomain,
    AsymptoteReport,
    call_asymptote,
    implied_vol_limit,
    asian_asymptote,
    exit_asymptote,
    barrier_asymptote,
)
from .toymodel import ToyParams, toy_rate, h_inverse, rate_bounds, iv_limit_bounds
from .mcsim import (
    SimConfig,
    McReport,
    simulate_vol,
    simulate_logprice,
    ldp_tail_report,
    mc_call_report,
    mc_exit_report,
)
from .presets import make_model, PRESETS

__version__ = "0.1.0"

__all__ = [
    "TimeGrid",
    "Control",
    "PathFn",
    "energy",
    "integrate",
    "skorokhod_map",
    "KernelSpec",
    "brownian",
    "riemann_liouville",
    "molchan_golosov",
    "logarithmic",
    "tabulated",
    "eval_kernel",
    "hs_apply",
    "slice_variance",
    "l2_modulus",
    "VolProcessSpec",
    "solve_psi",
    "gamma_y",
    "hat_map",
    "ModelSpec",
    "RateResult",
    "phi_functional",
    "qtilde_path",
    "itilde_terminal",
    "inf_tail",
    "ExitDomain",
    "AsymptoteReport",
    "call_asymptote",
    "implied_vol_limit",
    "asian_asymptote",
    "exit_asymptote",
    "barrier_asymptote",
    "ToyParams",
    "toy_rate",
    "h_inverse",
    "rate_bounds",
    "iv_limit_bounds",
    "SimConfig",
    "McReport",
    "simulate_vol",
    "simulate_logprice",
    "ldp_tail_report",
    "mc_call_report",
    "mc_exit_report",
    "make_model",
    "PRESETS",
]
