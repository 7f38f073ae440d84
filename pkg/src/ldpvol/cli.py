"""Command-line interface: configuration ingestion, dispatch, result emission.

Exit codes: 0 success, 2 configuration/validation problem, 3 numerical
non-convergence.  Failures print a machine-readable error object to stderr.
Every successful result echoes a resolved configuration block so runs can be
reproduced from their own output.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import __version__
from .errors import ConvergenceError, LdpvolError
from .kernels import KernelSpec, kernel_info
from .mcsim import SimConfig, ldp_tail_report, mc_call_report, mc_exit_report
from .paths import TimeGrid, dump_json, path_from_csv
from .presets import PRESETS, make_model, model_from_json_obj
from .pricing import (
    AsymptoteReport,
    ExitDomain,
    asian_asymptote,
    barrier_asymptote,
    call_asymptote,
    exit_asymptote,
    implied_vol_limit,
)
from .ratefn import itilde_terminal, qtilde_path
from .toymodel import ToyParams, toy_report

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NONCONVERGED = 3


def _default_workers() -> int:
    try:
        return max(1, int(os.environ.get("LDPVOL_WORKERS", "1")))
    except ValueError:
        return 1


def _load_model(args):
    if getattr(args, "model", None):
        with open(args.model) as fh:
            return model_from_json_obj(json.load(fh))
    if getattr(args, "preset", None):
        return make_model(args.preset)
    raise LdpvolError("supply --model FILE or --preset NAME")


def _load_domain(arg: str) -> ExitDomain:
    if os.path.exists(arg):
        with open(arg) as fh:
            return ExitDomain.from_json_obj(json.load(fh))
    return ExitDomain.from_json_obj(json.loads(arg))


def _emit(payload: dict, args, csv_writer=None) -> None:
    out = getattr(args, "output", None)
    if out:
        dump_json(payload, f"{out}.json")
        if csv_writer is not None and getattr(args, "format", "json") == "csv":
            csv_writer(f"{out}.csv")
        print(f"{out}.json")
    else:
        json.dump(payload, sys.stdout, indent=2)
        sys.stdout.write("\n")


def _model_config(args):
    if getattr(args, "model", None):
        return {"model_file": args.model}
    return {"preset": args.preset}


def _report_payload(report: AsymptoteReport, resolved: dict) -> dict:
    obj = report.to_json_obj()
    obj["resolved_config"] = resolved
    return obj


def _add_model_args(p):
    g = p.add_mutually_exclusive_group()
    g.add_argument("--model", help="model JSON file ({'preset': name, 'params': {...}})")
    g.add_argument("--preset", choices=sorted(PRESETS), help="bundled model preset")


def _add_common(p, n_steps_default=200):
    p.add_argument("--horizon", type=float, default=1.0, help="time horizon T")
    p.add_argument("--n-steps", type=int, default=n_steps_default, help="grid steps")
    p.add_argument("--seed", type=int, default=0, help="optimizer restart seed")
    p.add_argument("--restarts", type=int, default=None, help="random restarts")
    p.add_argument("--output", help="output path prefix (writes PREFIX.json)")
    p.add_argument("--format", choices=("json", "csv"), default="json")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="ldpvol",
        description="Small-noise decay rates and asymptotic prices for "
        "stochastic volatility models, with Monte Carlo verification.",
    )
    ap.add_argument("--version", action="version", version=f"ldpvol {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("rate-path", help="sample-path rate of a target CSV path")
    _add_model_args(p)
    _add_common(p)
    p.add_argument("--target", required=True, help="CSV path (t, x1..xm)")

    p = sub.add_parser("rate-terminal", help="terminal rate at a target point")
    _add_model_args(p)
    _add_common(p)
    p.add_argument("--x", required=True, help="target displacement (comma list for m>1)")

    p = sub.add_parser("call-asymptote", help="decay rate of the call price")
    _add_model_args(p)
    _add_common(p)
    p.add_argument("--strike", type=float, required=True)
    p.add_argument("--ladder", help="comma-separated extra strikes for a CSV ladder")

    p = sub.add_parser("iv-limit", help="small-noise implied volatility limit")
    _add_model_args(p)
    _add_common(p)
    p.add_argument("--k", type=float, required=True, help="log-moneyness > 0")

    p = sub.add_parser("asian-asymptote", help="decay rate of the Asian call")
    _add_model_args(p)
    _add_common(p)
    p.add_argument("--strike", type=float, required=True)
    p.add_argument("--ladder", help="comma-separated extra strikes for a CSV ladder")

    p = sub.add_parser("exit-rate", help="decay rate of the first-exit probability")
    _add_model_args(p)
    _add_common(p)
    p.add_argument("--domain", required=True, help="domain JSON (file or literal)")
    p.add_argument("--deadline", type=float, default=None, help="exit deadline (default horizon)")

    p = sub.add_parser("barrier-rate", help="decay rate of a binary knock-in barrier")
    _add_model_args(p)
    _add_common(p)
    p.add_argument("--domain", required=True, help="price-space domain JSON")

    p = sub.add_parser("toy-bounds", help="closed-form toy-model bounds plus the rate")
    p.add_argument("--T", type=float, required=True)
    p.add_argument("--k", type=float, required=True)
    p.add_argument("--n-steps", type=int, default=200)
    p.add_argument("--output", help="output path prefix")
    p.add_argument("--format", choices=("json", "csv"), default="json")

    p = sub.add_parser("mc-verify", help="Monte Carlo ladder vs the computed rate")
    p.add_argument("--config", required=True, help="simulation config JSON file")
    p.add_argument("--output", help="output path prefix")
    p.add_argument("--format", choices=("json", "csv"), default="json")
    p.add_argument("--workers", type=int, default=None)

    p = sub.add_parser("kernel-info", help="kernel diagnostics on a grid")
    p.add_argument("--kernel", required=True, help="kernel JSON (file or literal)")
    p.add_argument("--horizon", type=float, default=1.0)
    p.add_argument("--n-steps", type=int, default=64)
    p.add_argument("--output", help="output path prefix")
    p.add_argument("--format", choices=("json", "csv"), default="json")
    return ap


def _opt_kwargs(args):
    kw = {"seed": args.seed}
    if args.restarts is not None:
        kw["restarts"] = args.restarts
    return kw


def _cmd_rate_path(args):
    model = _load_model(args)
    g = path_from_csv(args.target)
    res = qtilde_path(model, g, **_opt_kwargs(args))
    payload = res.to_json_obj()
    payload["resolved_config"] = {
        **_model_config(args),
        "target": args.target,
        "seed": args.seed,
    }
    _emit(payload, args)
    return EXIT_OK if res.converged else EXIT_NONCONVERGED


def _cmd_rate_terminal(args):
    model = _load_model(args)
    x = np.array([float(v) for v in str(args.x).split(",")])
    x = x[0] if model.m == 1 else x
    grid = TimeGrid(args.horizon, args.n_steps)
    res = itilde_terminal(model, x, grid=grid, **_opt_kwargs(args))
    payload = res.to_json_obj()
    payload["resolved_config"] = {
        **_model_config(args),
        "x": args.x,
        "horizon": args.horizon,
        "n_steps": args.n_steps,
        "seed": args.seed,
    }
    _emit(payload, args)
    return EXIT_OK if res.converged else EXIT_NONCONVERGED


def _ladder_csv(reports, key):
    def write(filename):
        import csv

        with open(filename, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([key, "rate", "limit_value"])
            for kval, rep in reports:
                w.writerow([kval, rep.rate, rep.limit_value])

    return write


def _cmd_call(args):
    model = _load_model(args)
    rep = call_asymptote(
        model, args.strike, args.horizon, n_steps=args.n_steps, **_opt_kwargs(args)
    )
    resolved = {
        **_model_config(args),
        "strike": args.strike,
        "horizon": args.horizon,
        "n_steps": args.n_steps,
        "seed": args.seed,
    }
    ladder = None
    if args.ladder:
        strikes = [args.strike] + [float(s) for s in args.ladder.split(",")]
        ladder = [
            (K, call_asymptote(model, K, args.horizon, n_steps=args.n_steps, **_opt_kwargs(args)))
            for K in strikes
        ]
    payload = _report_payload(rep, resolved)
    if ladder:
        payload["ladder"] = [{"strike": K, "rate": r.rate} for K, r in ladder]
    _emit(payload, args, csv_writer=_ladder_csv(ladder, "strike") if ladder else None)
    return EXIT_OK if rep.diagnostics.get("converged", True) else EXIT_NONCONVERGED


def _cmd_iv(args):
    model = _load_model(args)
    rep = implied_vol_limit(
        model, args.k, args.horizon, n_steps=args.n_steps, **_opt_kwargs(args)
    )
    resolved = {
        **_model_config(args),
        "k": args.k,
        "horizon": args.horizon,
        "n_steps": args.n_steps,
        "seed": args.seed,
    }
    _emit(_report_payload(rep, resolved), args)
    return EXIT_OK


def _cmd_asian(args):
    model = _load_model(args)
    kw = {"seed": args.seed}
    if args.restarts is not None:
        kw["restarts"] = args.restarts
    rep = asian_asymptote(model, args.strike, args.horizon, n_steps=args.n_steps, **kw)
    resolved = {
        **_model_config(args),
        "strike": args.strike,
        "horizon": args.horizon,
        "n_steps": args.n_steps,
        "seed": args.seed,
    }
    ladder = None
    if args.ladder:
        strikes = [args.strike] + [float(s) for s in args.ladder.split(",")]
        ladder = [
            (K, asian_asymptote(model, K, args.horizon, n_steps=args.n_steps, **kw))
            for K in strikes
        ]
    payload = _report_payload(rep, resolved)
    if ladder:
        payload["ladder"] = [{"strike": K, "rate": r.rate} for K, r in ladder]
    _emit(payload, args, csv_writer=_ladder_csv(ladder, "strike") if ladder else None)
    return EXIT_OK if rep.diagnostics.get("converged", True) else EXIT_NONCONVERGED


def _cmd_exit(args):
    model = _load_model(args)
    domain = _load_domain(args.domain)
    deadline = args.deadline if args.deadline is not None else args.horizon
    kw = {"seed": args.seed}
    if args.restarts is not None:
        kw["restarts"] = args.restarts
    rep = exit_asymptote(
        model, domain, deadline, horizon=args.horizon, n_steps=args.n_steps, **kw
    )
    resolved = {
        **_model_config(args),
        "domain": domain.to_json_obj(),
        "deadline": deadline,
        "horizon": args.horizon,
        "n_steps": args.n_steps,
        "seed": args.seed,
    }
    _emit(_report_payload(rep, resolved), args)
    return EXIT_OK if rep.diagnostics.get("converged", True) else EXIT_NONCONVERGED


def _cmd_barrier(args):
    model = _load_model(args)
    domain = _load_domain(args.domain)
    kw = {"seed": args.seed}
    if args.restarts is not None:
        kw["restarts"] = args.restarts
    rep = barrier_asymptote(model, domain, args.horizon, n_steps=args.n_steps, **kw)
    resolved = {
        **_model_config(args),
        "domain": domain.to_json_obj(),
        "horizon": args.horizon,
        "n_steps": args.n_steps,
        "seed": args.seed,
    }
    _emit(_report_payload(rep, resolved), args)
    return EXIT_OK if rep.diagnostics.get("converged", True) else EXIT_NONCONVERGED


def _cmd_toy(args):
    params = ToyParams(args.T, args.k)
    report = toy_report(params, grid=TimeGrid(args.T, args.n_steps))
    report["resolved_config"] = {"T": args.T, "k": args.k, "n_steps": args.n_steps}
    _emit(report, args)
    return EXIT_OK


def _cmd_mc_verify(args):
    with open(args.config) as fh:
        cfg_obj = json.load(fh)
    model = model_from_json_obj(cfg_obj["model"])
    grid = TimeGrid(cfg_obj.get("horizon", 1.0), cfg_obj.get("n_steps", 200))
    workers = args.workers or cfg_obj.get("max_workers") or _default_workers()
    cfg = SimConfig(
        model=model,
        epsilon_ladder=cfg_obj["epsilon_ladder"],
        n_paths=cfg_obj["n_paths"],
        grid=grid,
        seed=cfg_obj.get("seed", 0),
        antithetic=bool(cfg_obj.get("antithetic", False)),
        max_workers=int(workers),
    )
    quantity = cfg_obj.get("quantity", "tail")
    ref = cfg_obj.get("reference_rate")
    if quantity == "tail":
        report = ldp_tail_report(cfg, float(cfg_obj["k"]), reference_rate=ref)
    elif quantity == "call":
        report = mc_call_report(cfg, float(cfg_obj["strike"]), reference_rate=ref)
    elif quantity == "exit":
        domain = ExitDomain.from_json_obj(cfg_obj["domain"])
        report = mc_exit_report(
            cfg, domain, float(cfg_obj.get("deadline", grid.horizon)), reference_rate=ref
        )
    else:
        raise LdpvolError(f"unknown mc quantity {quantity!r} (tail, call, exit)")
    resolved = dict(cfg_obj)
    resolved.setdefault("horizon", grid.horizon)
    resolved.setdefault("n_steps", grid.n_steps)
    resolved.setdefault("seed", cfg.seed)
    payload = report.to_json_obj()
    payload["resolved_config"] = resolved
    _emit(payload, args, csv_writer=report.to_csv)
    return EXIT_OK


def _cmd_kernel_info(args):
    arg = args.kernel
    if os.path.exists(arg):
        with open(arg) as fh:
            spec = KernelSpec.from_json_obj(json.load(fh))
    else:
        spec = KernelSpec.from_json_obj(json.loads(arg))
    grid = TimeGrid(args.horizon, args.n_steps)
    info = kernel_info(spec, grid)
    info["resolved_config"] = {
        "kernel": spec.to_json_obj(),
        "horizon": args.horizon,
        "n_steps": args.n_steps,
    }
    _emit(info, args)
    return EXIT_OK


_HANDLERS = {
    "rate-path": _cmd_rate_path,
    "rate-terminal": _cmd_rate_terminal,
    "call-asymptote": _cmd_call,
    "iv-limit": _cmd_iv,
    "asian-asymptote": _cmd_asian,
    "exit-rate": _cmd_exit,
    "barrier-rate": _cmd_barrier,
    "toy-bounds": _cmd_toy,
    "mc-verify": _cmd_mc_verify,
    "kernel-info": _cmd_kernel_info,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    handler = _HANDLERS[args.command]
    try:
        return handler(args)
    except ConvergenceError as exc:
        _print_error(exc)
        return EXIT_NONCONVERGED
    except (LdpvolError, ValueError, OSError, KeyError, json.JSONDecodeError) as exc:
        _print_error(exc)
        return EXIT_CONFIG


def _print_error(exc) -> None:
    json.dump(
        {"error": type(exc).__name__, "message": str(exc)}, sys.stderr, indent=2
    )
    sys.stderr.write("\n")


if __name__ == "__main__":
    sys.exit(main())
