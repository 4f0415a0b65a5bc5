"""Command-line entry point: certify, simulate, verify-iss, cross-validate, sweep.

Exit codes: 0 success, 1 unexpected crash, 2 configuration error,
3 infeasible certificate, 4 violated hypothesis, 5 solver failure,
6 a numerical check exceeded its tolerance. Errors are printed to stderr
as ``error[<category>]: <message>``.
"""
from __future__ import annotations

import argparse
import contextlib
import csv
import itertools
import math
import os
import re
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .config import Config, ConfigError

EXIT_OK, EXIT_CRASH, EXIT_CONFIG, EXIT_INFEASIBLE, EXIT_HYPOTHESIS, EXIT_SOLVER, EXIT_CHECK = range(7)
OUT_ENV = "FUNNELBIBO_OUT"


class CliFailure(Exception):
    def __init__(self, code: int, category: str, message: str):
        super().__init__(message)
        self.code, self.category = code, category


# ---------------------------------------------------------------------------
# output helpers


def _fmt(x) -> str:
    return f"{float(x):.17g}"


def write_csv(path: Path, header: list[str], columns) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in zip(*columns):
            w.writerow([_fmt(v) for v in row])


def _pyplot():
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    plt.rcParams["svg.hashsalt"] = "funnelbibo"
    plt.rcParams["svg.fonttype"] = "none"
    return plt


def _save_svg(fig, path: Path) -> None:
    fig.savefig(path, format="svg", metadata={"Date": None})


def plot_error_funnel(path: Path, t, e, radius) -> None:
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(6.4, 3.6))
    ax.plot(t, e, label="e(t)")
    ax.plot(t, radius, "k--", linewidth=1, label="funnel boundary")
    ax.plot(t, -np.asarray(radius), "k--", linewidth=1)
    ax.set_xlabel("t")
    ax.set_ylabel("tracking error")
    ax.legend(loc="upper right")
    fig.tight_layout()
    _save_svg(fig, path)
    plt.close(fig)


def plot_control(path: Path, t, u) -> None:
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(6.4, 3.6))
    ax.plot(t, u)
    ax.set_xlabel("t")
    ax.set_ylabel("u(t)")
    fig.tight_layout()
    _save_svg(fig, path)
    plt.close(fig)


def plot_profiles(path: Path, zeta, times, profiles) -> None:
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(6.4, 3.6))
    for t, x in zip(times, profiles):
        ax.plot(zeta, x, label=f"t = {t:g}")
    ax.set_xlabel("zeta")
    ax.set_ylabel("x_I(zeta, t)")
    ax.legend(loc="upper right")
    fig.tight_layout()
    _save_svg(fig, path)
    plt.close(fig)


def _out_dir(args) -> Path:
    root = args.out or os.environ.get(OUT_ENV) or "out"
    return Path(root)


def _prepare(out: Path, cfg: Config) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / "resolved_config.ini").write_text(cfg.resolved_text())


# ---------------------------------------------------------------------------
# configuration from arguments


def _overrides(args) -> dict[str, dict[str, str]]:
    ov: dict[str, dict[str, str]] = {}

    def put(section, key, value):
        if value is not None:
            ov.setdefault(section, {})[key] = str(value)

    for item in getattr(args, "set", None) or []:
        m = re.fullmatch(r"([A-Za-z_]+)\.([A-Za-z_0-9]+)=(.*)", item)
        if not m:
            raise ConfigError(f"--set expects section.key=value, got {item!r}")
        put(*m.groups())
    put("model", "kind", getattr(args, "model", None))
    put("simulation", "T", getattr(args, "T", None))
    put("simulation", "backend", getattr(args, "backend", None))
    put("simulation", "x_F0", getattr(args, "x_F0", None))
    put("certificate", "epsilon", getattr(args, "epsilon", None))
    put("certificate", "delta", getattr(args, "delta", None))
    put("certificate", "lipschitz", getattr(args, "lipschitz", None))
    return ov


def load_config(args) -> Config:
    return Config.load(args.config, _overrides(args))


def _reactor_params(cfg: Config):
    from .fd_models import ReactorParams
    return ReactorParams(cfg.float("reactor", "D"), cfg.float("reactor", "v"), cfg.float("reactor", "psi"),
                         cfg.float("reactor", "a1"), cfg.float("reactor", "a2"), cfg.float("reactor", "R"),
                         cfg.int("reactor", "n", 2), cfg.bool("reactor", "nonlinear"))


# ---------------------------------------------------------------------------
# subcommands


def cmd_certify(args, cfg: Config) -> int:
    from .certificates import check_global_lipschitz_bibo, reactor_certificate
    from .spectral import DualCoefficientSequence, diagonal_operator, reactor_operator

    kind = cfg.raw("model", "kind")
    L = cfg.float("certificate", "lipschitz", nonneg=True)
    eps = cfg.optional_float("certificate", "epsilon")
    delta = cfg.optional_float("certificate", "delta")
    if kind == "reactor":
        op = reactor_operator(cfg.float("reactor", "D"), cfg.float("reactor", "v"),
                              cfg.float("reactor", "psi"), cfg.int("reactor", "modes", 16))
        cert = reactor_certificate(op, L, eps, delta)
    elif kind == "custom-diagonal":
        eigs = np.array(cfg.floats("diagonal", "eigenvalues"))
        op = diagonal_operator(eigs, cfg.bool("diagonal", "complete"))
        b = DualCoefficientSequence(np.array(cfg.floats("diagonal", "b")), cfg.float("diagonal", "b_eta"))
        c = DualCoefficientSequence(np.array(cfg.floats("diagonal", "c")), cfg.float("diagonal", "c_eta"))
        if delta is None:
            delta = 0.5 * op.omega
        cert = check_global_lipschitz_bibo(op, b, c, L, cfg.float("certificate", "alpha"), delta, eps)
    else:
        raise ConfigError("certify supports the reactor and custom-diagonal models")
    out = _out_dir(args)
    _prepare(out, cfg)
    if cfg.bool("output", "certificate"):
        (out / "certificate.txt").write_text(cert.to_keyvalue())
    sys.stdout.write(cert.report())
    if not cert.verdict:
        raise CliFailure(EXIT_INFEASIBLE, "infeasible", "; ".join(cert.reasons) or "certificate not established")
    return EXIT_OK


def cmd_simulate(args, cfg: Config) -> int:
    from .funnel import ClosedLoopConfig, FunnelViolation, HypothesisError, closed_loop_simulate
    from .funnel import constant_funnel, exponential_funnel
    from .fd_models import write_snapshots_csv
    from .integrate import IntegratorConfig

    if cfg.raw("model", "kind") != "reactor":
        raise ConfigError("simulate runs the reactor model")
    funnel = exponential_funnel() if cfg.raw("funnel", "kind") == "exponential" else constant_funnel(cfg.float("funnel", "phi"))
    T = cfg.float("simulation", "T", positive=True)
    loop = ClosedLoopConfig(reactor=_reactor_params(cfg), funnel=funnel, y_ref=cfg.reference(), horizon=T,
                            backend=cfg.raw("simulation", "backend"), x0=cfg.float("simulation", "x0"),
                            x_F0=cfg.float("simulation", "x_F0"), modes=cfg.int("reactor", "modes", 16),
                            integrator=IntegratorConfig(rtol=cfg.float("simulation", "rtol"),
                                                        atol=cfg.float("simulation", "atol")),
                            output_dt=cfg.float("simulation", "output_dt"))
    try:
        res = closed_loop_simulate(loop, profile_times=[t for t in (0.0, 0.5, 1.0, 2.5, 5.0, 10.0) if t <= T])
    except HypothesisError as exc:
        raise CliFailure(EXIT_HYPOTHESIS, "hypothesis", str(exc)) from exc
    except FunnelViolation as exc:
        raise CliFailure(EXIT_SOLVER, "solver", f"{exc} (t = {exc.t})") from exc
    out = _out_dir(args)
    _prepare(out, cfg)
    tr = res.trace
    if cfg.bool("output", "csv"):
        write_csv(out / "trace.csv", ["t", "y", "y_ref", "e", "funnel_radius", "u", "gain"],
                  [tr.t, tr.y, tr.y_ref, tr.e, tr.funnel_radius, tr.u, tr.gain])
        write_snapshots_csv(out / "state_profiles.csv", res.zeta, res.profile_times, res.profiles)
    if cfg.bool("output", "svg"):
        plot_error_funnel(out / "error_funnel.svg", tr.t, tr.e, tr.funnel_radius)
        plot_control(out / "control.svg", tr.t, tr.u)
        plot_profiles(out / "state_profiles.svg", res.zeta, res.profile_times, res.profiles)
    text = "\n".join(res.report.lines()) + "\n"
    (out / "funnel_report.txt").write_text(text)
    sys.stdout.write(text)
    if not res.report.ok:
        raise CliFailure(EXIT_CHECK, "check", "funnel guarantees not verified")
    return EXIT_OK


def cmd_verify_iss(args, cfg: Config) -> int:
    from .heat_iss import verify_iss

    rep = verify_iss(cfg.float("heat", "b"), cfg.float("heat", "u"), cfg.float("heat", "x0"),
                     cfg.float("heat", "T", positive=True), epsilon=cfg.float("heat", "epsilon"),
                     eta=cfg.float("heat", "eta"), n=cfg.int("heat", "n", 2),
                     seminorm=cfg.raw("heat", "seminorm"))
    out = _out_dir(args)
    _prepare(out, cfg)
    if cfg.bool("output", "csv"):
        write_csv(out / "iss.csv", ["t", "lhs", "envelope"], [rep.t, rep.lhs, rep.envelope])
    lines = [f"convention = {rep.convention}", f"rho = {rep.rho!r}", f"lambda = {rep.lam!r}",
             f"seminorm = {rep.seminorm}", f"envelope_ok = {rep.ok}",
             f"first_violation = {rep.first_violation!r}", f"max_excess = {rep.max_excess!r}",
             f"v_decay_ok = {rep.v_decay_ok}", f"v_decay_first_violation = {rep.v_decay_violation!r}",
             f"sandwich_upper_first_violation = {rep.sandwich_upper_violation!r}"]
    text = "\n".join(lines) + "\n"
    (out / "iss_report.txt").write_text(text)
    sys.stdout.write(text)
    if not rep.ok:
        raise CliFailure(EXIT_CHECK, "check", f"ISS envelope violated first at t = {rep.first_violation}")
    return EXIT_OK


def cross_validate(cfg: Config) -> list[tuple[float, float]]:
    """Relative weighted L2 gap between the modal Picard and finite-difference solutions."""
    from .fd_models import reactor_pde_rhs, reactor_sparsity, saturating
    from .integrate import IntegratorConfig, integrate
    from .mild import MildSolver, pointwise_nonlinearity, zero_nonlinearity
    from .spectral import ModalQuadrature, reactor_operator

    p = _reactor_params(cfg).with_(n=cfg.int("crossval", "cells", 2))
    times = sorted(cfg.floats("crossval", "times"))
    if not times or times[0] <= 0:
        raise ConfigError("[crossval] times must be positive")
    x0 = cfg.float("crossval", "x0")
    op = reactor_operator(p.D, p.v, p.psi, cfg.int("crossval", "modes", 16))
    q = ModalQuadrature.build(op)
    f = (pointwise_nonlinearity(op, saturating, 1.0, alpha=0.5, quadrature=q) if p.nonlinear
         else zero_nonlinearity(0.5))
    solver = MildSolver(op, None, f, dt=cfg.float("crossval", "dt", positive=True))
    rep = solver.solve(q.project(np.full_like(q.nodes, x0)), 0.0, times[-1])
    traj = integrate(lambda t, x: reactor_pde_rhs(p, x, 0.0), np.full(p.n + 1, x0), (0.0, times[-1]),
                     IntegratorConfig(rtol=1e-8, atol=1e-10), sparsity=reactor_sparsity(p.n, False),
                     autonomous=True)
    z = p.grid
    rho = np.exp(-p.v / p.D * z)
    basis = op.basis(z, op.order)
    rows = []
    for t in times:
        k = int(np.argmin(np.abs(rep.trajectory.t - t)))
        xm = basis @ rep.trajectory.states[k]
        xf = traj(t)[0]
        num = math.sqrt(np.trapezoid(rho * (xm - xf) ** 2, z))
        den = math.sqrt(np.trapezoid(rho * xf**2, z))
        rows.append((t, num / den if den > 0 else num))
    return rows


def cmd_cross_validate(args, cfg: Config) -> int:
    if cfg.raw("model", "kind") != "reactor":
        raise ConfigError("cross-validate runs the reactor model")
    rows = cross_validate(cfg)
    tol = cfg.float("crossval", "tolerance")
    out = _out_dir(args)
    _prepare(out, cfg)
    write_csv(out / "crossval.csv", ["t", "relative_l2"], list(zip(*rows)))
    for t, r in rows:
        sys.stdout.write(f"t = {t:g}: relative L2 gap {r:.3e}\n")
    worst = max(r for _, r in rows)
    if worst >= tol:
        raise CliFailure(EXIT_CHECK, "check", f"relative gap {worst:.3e} exceeds {tol:g}")
    return EXIT_OK


def _scenario_name(assignment) -> str:
    return "_".join(re.sub(r"[^A-Za-z0-9.+-]", "-", f"{k}={v}") for k, v in assignment)


def _run_scenario(job: tuple[str, list[str]]) -> int:
    out, argv = job
    Path(out).mkdir(parents=True, exist_ok=True)
    with open(Path(out) / "console.txt", "w") as fh, \
            contextlib.redirect_stdout(fh), contextlib.redirect_stderr(fh):
        return main(argv)


def cmd_sweep(args, cfg: Config) -> int:
    axes = []
    for spec in args.param:
        m = re.fullmatch(r"([A-Za-z_]+\.[A-Za-z_0-9]+)=(.+)", spec)
        if not m:
            raise ConfigError(f"--param expects section.key=v1,v2,..., got {spec!r}")
        key, values = m.groups()
        section, name = key.split(".", 1)
        Config.load(args.config, {section: {name: values.split(",")[0]}})
        axes.append([(key, v.strip()) for v in values.split(",") if v.strip()])
    root = _out_dir(args)
    root.mkdir(parents=True, exist_ok=True)
    jobs = []
    for combo in itertools.product(*axes):
        name = _scenario_name(combo) or "base"
        argv = [args.command, "--out", str(root / name)]
        if args.config:
            argv += ["--config", str(args.config)]
        for item in args.set or []:
            argv += ["--set", item]
        for key, value in combo:
            argv += ["--set", f"{key}={value}"]
        jobs.append((name, str(root / name), argv))
    with ProcessPoolExecutor(max_workers=args.workers) as pool:
        codes = list(pool.map(_run_scenario, [(d, a) for _, d, a in jobs]))
    with open(root / "sweep_summary.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["scenario", "exit_code"])
        for (name, _, _), code in zip(jobs, codes):
            w.writerow([name, code])
            sys.stdout.write(f"{name}: exit {code}\n")
    return max(codes) if codes else EXIT_OK


COMMANDS = {"certify": cmd_certify, "simulate": cmd_simulate, "verify-iss": cmd_verify_iss,
            "cross-validate": cmd_cross_validate, "sweep": cmd_sweep}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="funnelbibo", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="cmd", required=True)

    def common(p):
        p.add_argument("--config", type=Path, help="scenario file (sectioned key = value)")
        p.add_argument("--out", help=f"output directory (default ${OUT_ENV} or ./out)")
        p.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE", help="override one setting")
        p.add_argument("--model", choices=("reactor", "heat", "custom-diagonal"))
        return p

    p = common(sub.add_parser("certify", help="check the BIBO sufficient conditions"))
    p.add_argument("--epsilon", type=float)
    p.add_argument("--delta", type=float)
    p.add_argument("--lipschitz", type=float)
    p = common(sub.add_parser("simulate", help="closed-loop funnel control run"))
    p.add_argument("--T", type=float, help="horizon")
    p.add_argument("--backend", choices=("finite-difference", "spectral"))
    p.add_argument("--x-F0", dest="x_F0", type=float, help="initial tank state")
    common(sub.add_parser("verify-iss", help="check the heat-equation ISS envelope"))
    common(sub.add_parser("cross-validate", help="compare Picard and finite-difference solutions"))
    p = common(sub.add_parser("sweep", help="run a command over a parameter grid concurrently"))
    p.add_argument("command", choices=("certify", "simulate", "verify-iss", "cross-validate"))
    p.add_argument("--param", action="append", default=[], metavar="SECTION.KEY=V1,V2,...")
    p.add_argument("--workers", type=int, default=None)
    return ap


def main(argv: list[str] | None = None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    from .integrate import IntegrationError
    from .mild import PicardDivergence, StepSizeError
    try:
        cfg = load_config(args)
        return COMMANDS[args.cmd](args, cfg)
    except ConfigError as exc:
        code, category, msg = EXIT_CONFIG, "config", str(exc)
    except CliFailure as exc:
        code, category, msg = exc.code, exc.category, str(exc)
    except (IntegrationError, PicardDivergence, StepSizeError) as exc:
        code, category, msg = EXIT_SOLVER, "solver", str(exc)
    except Exception as exc:  # noqa: BLE001
        code, category, msg = EXIT_CRASH, "crash", f"{type(exc).__name__}: {exc}"
    sys.stderr.write(f"error[{category}]: {msg}\n")
    return code


if __name__ == "__main__":
    sys.exit(main())
