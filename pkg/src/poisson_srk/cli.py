"""Command-line front end: ``simulate``, ``verify``, ``order`` and ``tableau-check``.

Exit codes: 0 success, 1 usage error, 2 numerical failure, 3 verification failure.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import DEFAULT_WEIGHTS
from .analysis import mean_square_order, structure_report
from .solver import (
    ConvergenceError,
    SrkStepper,
    StepContext,
    Trajectory,
    format_float,
    sample_wiener_path,
    write_csv,
)
from .systems import SYSTEMS, RIGID_Y0
from .tableau import SrkTableau, TableauError, build_dirk, check_symplectic_conditions, midpoint_tableau
from .transform import ChartDomainError, TransformedStepper, rigid_body_chart

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC, EXIT_VERIFY = 0, 1, 2, 3

DEFAULT_Y0 = {"rigid": RIGID_Y0, "linear": (1.0, 0.0, -1.0)}
DEFAULT_METHOD = {"rigid": "transformed", "linear": "dirk"}
DEFAULT_H_LIST = {"rigid": [0.005, 0.01, 0.02, 0.04], "linear": [0.005, 0.01, 0.02, 0.025, 0.05]}
CHARTS = {"rigid": rigid_body_chart}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _floats(text: str) -> list[float]:
    try:
        return [float(x) for x in text.replace(" ", "").split(",") if x]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _common(default_T: float) -> argparse.ArgumentParser:
    p = _Parser(add_help=False)
    p.add_argument("--config", help="flat key=value file mirroring the long flags")
    p.add_argument("--system", choices=sorted(SYSTEMS), default="rigid")
    p.add_argument("--method", choices=["dirk", "transformed", "midpoint"])
    p.add_argument("--stages", type=int, default=2)
    p.add_argument("--weights-drift", type=_floats)
    p.add_argument("--weights-diff", type=_floats, action="append", help="repeat once per noise")
    p.add_argument("--tableau-file")
    p.add_argument("--h", type=float, default=0.01)
    p.add_argument("--T", type=float, default=default_T)
    p.add_argument("--y0", type=_floats)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--k-trunc", type=float, default=4.0)
    p.add_argument("--newton-tol", type=float, default=1e-12)
    p.add_argument("--newton-max-iter", type=int, default=50)
    p.add_argument("--out")
    return p


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="poisson-srk", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    sub.add_parser("simulate", parents=[_common(10.0)], help="integrate one seeded path to CSV")

    v = sub.add_parser("verify", parents=[_common(10.0)], help="audit structure preservation")
    v.add_argument("--tol-poisson", type=float, default=1e-6)
    v.add_argument("--tol-drift", type=float, default=1e-10)
    v.add_argument("--points", type=int, default=20, help="steps at which the Poisson residual is checked")

    o = sub.add_parser("order", parents=[_common(1.0)], help="mean-square order study")
    o.add_argument("--h-list", type=_floats)
    o.add_argument("--samples", type=int, default=100)
    o.add_argument("--reference", choices=["auto", "exact", "fine", "midpoint"], default="auto")
    o.add_argument("--refine", type=int, default=16)
    o.add_argument("--reference-h", type=float, default=1e-5)
    o.add_argument("--zero-noise", action="store_true")
    o.add_argument("--slope-band", type=_floats, help="lo,hi: exit 3 if the slope falls outside")
    o.add_argument("--workers", type=int, default=None)
    o.add_argument("--sequential", action="store_true", help="single process, fixed reduction order")

    sub.add_parser("tableau-check", parents=[_common(10.0)], help="check the symplectic conditions")
    return parser


def _apply_config(parser: argparse.ArgumentParser, argv: list[str]) -> None:
    """Load ``--config`` key=value pairs as defaults of the chosen subcommand."""
    if "--config" not in argv and not any(a.startswith("--config=") for a in argv):
        return
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    sub_action = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction))
    subparser = sub_action.choices.get(argv[0]) if argv else None
    if subparser is None or known.config is None:
        return
    try:
        text = Path(known.config).read_text()
    except OSError as exc:
        raise UsageError(f"cannot read config file: {exc}") from None
    by_flag = {opt: act for act in subparser._actions for opt in act.option_strings}
    defaults = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{known.config}:{lineno}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        act = by_flag.get("--" + key)
        if act is None or key == "config":
            raise UsageError(f"{known.config}:{lineno}: unknown key {key!r}")
        if isinstance(act, argparse._StoreTrueAction):
            converted = value.lower() in ("1", "true", "yes", "on")
        elif isinstance(act, argparse._AppendAction):
            converted = [act.type(v) for v in value.split(";")]
        else:
            try:
                converted = act.type(value) if act.type else value
            except (argparse.ArgumentTypeError, ValueError) as exc:
                raise UsageError(f"{known.config}:{lineno}: {exc}") from None
            if act.choices is not None and converted not in act.choices:
                raise UsageError(f"{known.config}:{lineno}: invalid choice {value!r} for {key}")
        defaults[act.dest] = converted
    subparser.set_defaults(**defaults)


# ---------------------------------------------------------------------------


def make_tableau(args, m: int) -> SrkTableau:
    if args.tableau_file:
        try:
            tab = SrkTableau.from_text(Path(args.tableau_file).read_text(), label=Path(args.tableau_file).stem)
        except OSError as exc:
            raise UsageError(f"cannot read tableau file: {exc}") from None
        if tab.m != m:
            raise UsageError(f"tableau file has m={tab.m}, system has m={m}")
        return tab
    if args.method == "midpoint":
        return midpoint_tableau(m)
    s = args.stages
    if s < 1:
        raise UsageError("--stages must be >= 1")
    if args.weights_drift is None and args.weights_diff is None and s == 2 and m == 1:
        weights = [list(w) for w in DEFAULT_WEIGHTS]
    else:
        uniform = [1.0 / s] * s
        drift = args.weights_drift if args.weights_drift is not None else uniform
        diff = args.weights_diff if args.weights_diff is not None else [uniform] * m
        if len(diff) != m:
            raise UsageError(f"need {m} --weights-diff vectors, got {len(diff)}")
        weights = [drift] + list(diff)
    return build_dirk(weights, label=args.method)


def make_stepper(args):
    system = SYSTEMS[args.system]()
    if args.method is None:
        args.method = DEFAULT_METHOD[args.system]
    tab = make_tableau(args, system.m)
    if args.method == "transformed":
        if args.system not in CHARTS:
            raise UsageError(f"no Darboux-Lie chart available for system {args.system!r}")
        if not check_symplectic_conditions(tab, 1e-14).passes:
            raise UsageError("transformed method needs a tableau satisfying the symplectic conditions")
        return TransformedStepper(system, CHARTS[args.system](), tab)
    return SrkStepper(system, tab, label=args.method)


def _y0(args, system) -> np.ndarray:
    y0 = np.asarray(args.y0 if args.y0 is not None else DEFAULT_Y0[args.system], dtype=float)
    if y0.shape != (system.d,):
        raise UsageError(f"--y0 needs {system.d} components")
    return y0


def _ctx(args, h: float) -> StepContext:
    try:
        return StepContext(h, args.k_trunc, args.newton_tol, args.newton_max_iter)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _steps(T: float, h: float) -> int:
    if T < 0 or h <= 0 or h >= 1:
        raise UsageError("need T >= 0 and 0 < h < 1")
    n = int(round(T / h))
    if abs(n * h - T) > 1e-9 * max(1.0, T):
        raise UsageError(f"T={T} is not a multiple of h={h}")
    return n


def _simulate(args, stepper):
    system = stepper.system
    y0 = _y0(args, system)
    N = _steps(args.T, args.h)
    path = sample_wiener_path(system.m, N, args.h, args.seed)
    ctx = _ctx(args, args.h)
    states, iters = stepper.run_batch(y0[None, :], path.increments[None], ctx, record=True)
    traj = Trajectory(args.h * np.arange(N + 1), states[0], stepper.label, iters[0])
    return traj, path, ctx


def _write(text: str, out: Optional[str]) -> None:
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def invariants_csv(traj: Trajectory, system) -> str:
    # Hamiltonians are monitored whether or not the method conserves them
    funcs = list(system.casimirs) + list(system.hamiltonians)
    header = ["t"] + [f"C{i + 1}" for i in range(len(system.casimirs))] + [
        f"H{i + 1}" for i in range(len(system.hamiltonians))
    ]
    rows = ([t] + [float(f.value(y)) for f in funcs] for t, y in zip(traj.times, traj.states))
    return write_csv(header, rows)


def cmd_simulate(args) -> int:
    stepper = make_stepper(args)
    traj, _, _ = _simulate(args, stepper)
    _write(traj.to_csv(), args.out)
    if args.out:
        out = Path(args.out)
        out.with_name(out.stem + "_invariants" + (out.suffix or ".csv")).write_text(
            invariants_csv(traj, stepper.system)
        )
    return EXIT_OK


def cmd_verify(args) -> int:
    stepper = make_stepper(args)
    traj, path, ctx = _simulate(args, stepper)
    report = structure_report(
        stepper,
        traj,
        ctx,
        path.increments,
        points=args.points,
        tol_poisson=args.tol_poisson,
        tol_drift=args.tol_drift,
        symplectic=check_symplectic_conditions(stepper.tableau, 1e-14),
    )
    text = f"system = {args.system}\nmethod = {stepper.label}\n" + report.to_text()
    sys.stdout.write(text)
    if args.out:
        Path(args.out).write_text(report.to_csv())
    return EXIT_OK if report.passes else EXIT_VERIFY


def cmd_order(args) -> int:
    if args.h_list is None:
        args.h_list = DEFAULT_H_LIST[args.system]
    if len(args.h_list) < 2:
        raise UsageError("slope undefined: --h-list needs at least two step sizes")
    stepper = make_stepper(args)
    workers = None if args.sequential else args.workers
    try:
        est = mean_square_order(
            stepper,
            _y0(args, stepper.system),
            args.T,
            args.h_list,
            args.samples,
            seed=args.seed,
            reference=args.reference,
            refine=args.refine,
            reference_h=args.reference_h,
            truncation_k=args.k_trunc,
            newton_tol=args.newton_tol,
            newton_max_iter=args.newton_max_iter,
            zero_noise=args.zero_noise,
            workers=workers,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    _write(est.to_csv(), args.out)
    print(f"slope = {format_float(est.slope)}", file=sys.stderr if not args.out else sys.stdout)
    if args.slope_band:
        lo, hi = args.slope_band
        if not lo <= est.slope <= hi:
            return EXIT_VERIFY
    return EXIT_OK


def cmd_tableau_check(args) -> int:
    system = SYSTEMS[args.system]()
    if args.method is None:
        args.method = DEFAULT_METHOD[args.system]
    tab = make_tableau(args, system.m)
    rep = check_symplectic_conditions(tab, 1e-14)
    sys.stdout.write(f"s = {tab.s}\nm = {tab.m}\n" + tab.to_text())
    for key in ("residual_00", "residual_0r", "residual_rz"):
        print(f"{key} = {format_float(getattr(rep, key))}")
    print(f"lower_triangular = {str(tab.is_lower_triangular).lower()}")
    print(f"passes = {str(rep.passes).lower()}")
    return EXIT_OK if rep.passes else EXIT_VERIFY


COMMANDS = {
    "simulate": cmd_simulate,
    "verify": cmd_verify,
    "order": cmd_order,
    "tableau-check": cmd_tableau_check,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        _apply_config(parser, argv)
        try:
            args = parser.parse_args(argv)
        except SystemExit as exc:
            return exc.code if isinstance(exc.code, int) else EXIT_USAGE
        return COMMANDS[args.command](args)
    except (UsageError, TableauError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ConvergenceError, ChartDomainError, FloatingPointError, OverflowError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
