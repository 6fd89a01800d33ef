"""Command-line interface.

Subcommands: ``classify`` points of a game, ``solve`` for equilibria by
multi-start Newton, ``flow`` the simultaneous gradient dynamics, ``continue``
an equilibrium branch under cost perturbations, and ``olg`` for open-loop
game analyses (simulate | gradient | play | classify).

Every file written via ``--out`` is paired with ``<out>.manifest.json``
recording the command, options, seed, version, and tolerances; rerunning a
manifest's command with fixed-step integrators and fixed seeds reproduces the
output byte for byte.

Exit codes: 0 success, 2 input error, 3 numerical failure, 4 dimension guard.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys

import numpy as np

from . import __version__
from .calculus import DerivativeUnavailableError
from .classify import (
    DimensionGuardError,
    Tolerances,
    classify_point,
    report_csv_header,
)
from .games import (
    GameConfigError,
    NonFiniteError,
    load_game_file,
    parse_cost_spec,
)
from .olgames import (
    load_olgame_file,
    ol_classify,
    ol_game_form,
    ol_gradient_play,
    profile_csv_header,
    read_profile_csv,
    simulate_state,
    write_profile_csv,
    zero_profile,
)
from .solve import (
    DegenerateStartError,
    NewtonOptions,
    continue_path,
    gradient_play,
    multi_start,
)

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_NUMERICAL = 3
EXIT_DIMENSION = 4


def _parse_point(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",")]
    except ValueError as exc:
        raise GameConfigError(f"cannot parse point {text!r}: {exc}") from exc


def _parse_pair(text: str, what: str) -> tuple[float, float]:
    vals = _parse_point(text)
    if len(vals) != 2:
        raise GameConfigError(f"{what} must be 'lo,hi', got {text!r}")
    return vals[0], vals[1]


def _read_points_csv(path) -> list[list[float]]:
    points = []
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.reader(fh):
            if not row:
                continue
            try:
                points.append([float(x) for x in row])
            except ValueError:
                continue  # header or comment row
    if not points:
        raise GameConfigError(f"no numeric rows found in {path}")
    return points


def _tolerances(args) -> Tolerances:
    return Tolerances(
        critical=args.tau_crit, eigenvalue=args.tau_eig, singular=args.tau_sing
    )


def _add_tolerance_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--tau-crit", type=float, default=1e-8, help="criticality threshold")
    p.add_argument("--tau-eig", type=float, default=1e-8, help="eigenvalue sign band")
    p.add_argument(
        "--tau-sing", type=float, default=1e-10, help="relative singular-value cutoff"
    )


def _add_deriv_flag(p: argparse.ArgumentParser) -> None:
    p.add_argument(
        "--deriv",
        choices=("analytic", "dual", "fd"),
        default="analytic",
        help="differentiation method",
    )


def _manifest(args, command: str) -> dict:
    options = {
        k: v for k, v in sorted(vars(args).items()) if k != "func" and v is not None
    }
    return {
        "command": command,
        "config": getattr(args, "game", None),
        "options": options,
        "seed": getattr(args, "seed", None),
        "version": __version__,
        "tolerances": _tolerances(args).as_dict() if hasattr(args, "tau_crit") else None,
    }


def _write_with_manifest(out_path: str, write_body, args, command: str) -> None:
    with open(out_path, "w", newline="", encoding="utf-8") as fh:
        write_body(fh)
    with open(out_path + ".manifest.json", "w", encoding="utf-8") as fh:
        json.dump(_manifest(args, command), fh, indent=2, sort_keys=True)
        fh.write("\n")


def _cmd_classify(args) -> int:
    game = load_game_file(args.game)
    points = [_parse_point(p) for p in args.point or []]
    if args.points:
        points.extend(_read_points_csv(args.points))
    if not points:
        raise GameConfigError("no points given; use --point or --points")
    tol = _tolerances(args)
    reports = [classify_point(game, p, tol, args.deriv) for p in points]
    for rep in reports:
        print(json.dumps(rep.to_dict()))
    if args.out:
        def body(fh):
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(report_csv_header(game.dims))
            for rep in reports:
                writer.writerow(rep.to_csv_row())

        _write_with_manifest(args.out, body, args, "classify")
    return EXIT_OK


def _cmd_solve(args) -> int:
    game = load_game_file(args.game)
    box = _parse_pair(args.box, "--box")
    tol = _tolerances(args)
    result = multi_start(
        game, box, args.k, seed=args.seed, method=args.deriv, tolerances=tol
    )
    header = report_csv_header(game.dims)
    rows = [rep.to_csv_row() for _, rep in result.roots]
    print(",".join(header))
    for row in rows:
        print(",".join(row))
    tally = ", ".join(f"{k}={v}" for k, v in sorted(result.failures.items())) or "none"
    print(
        f"# starts={result.n_starts} converged={result.n_converged} "
        f"roots={len(result.roots)} failures: {tally}"
    )
    if args.out:
        def body(fh):
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(header)
            writer.writerows(rows)

        _write_with_manifest(args.out, body, args, "solve")
    return EXIT_OK


def _cmd_flow(args) -> int:
    game = load_game_file(args.game)
    u0 = _parse_point(args.point)
    traj = gradient_play(
        game,
        u0,
        t_max=args.tmax,
        integrator=args.integrator,
        dt=args.dt,
        tol_stop=args.tol_stop,
        norm_bound=args.norm_bound,
        method=args.deriv,
    )
    final = ", ".join(f"{x:.10g}" for x in traj.final_point)
    print(f"status: {traj.status} t_end={traj.times[-1]:.10g} final=({final})")

    def body(fh):
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["t"] + [f"u_{k + 1}" for k in range(game.total_dim)] + ["omega_norm"])
        for t, point, w in zip(traj.times, traj.points, traj.omega_norms):
            writer.writerow(
                [f"{t:.17g}"] + [f"{x:.17g}" for x in point] + [f"{w:.17g}"]
            )

    if args.out:
        _write_with_manifest(args.out, body, args, "flow")
    else:
        body(sys.stdout)
    return EXIT_OK


def _parse_zetas(spec: str, game):
    text = spec
    if not spec.lstrip().startswith("["):
        with open(spec, "r", encoding="utf-8") as fh:
            text = fh.read()
    try:
        entries = json.loads(text)
    except json.JSONDecodeError as exc:
        raise GameConfigError(f"invalid zeta JSON: {exc}") from exc
    if not isinstance(entries, list) or len(entries) != game.n_players:
        raise GameConfigError(
            f"zeta spec must be a list of {game.n_players} cost entries"
        )
    return [parse_cost_spec(e, game.total_dim) for e in entries]


def _cmd_continue(args) -> int:
    game = load_game_file(args.game)
    zetas = _parse_zetas(args.zeta, game)
    u_star = _parse_point(args.point)
    s_range = _parse_pair(args.s_range, "--s-range")
    tol = _tolerances(args)
    path = continue_path(
        game, zetas, s_range, u_star, args.ds, method=args.deriv, tolerances=tol
    )
    where = "" if path.stopped_at is None else f" at s={path.stopped_at:.10g}"
    print(f"status: {path.status}{where} points={len(path.s_values)}")

    def body(fh):
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(
            ["s"]
            + [f"sigma_{k + 1}" for k in range(game.total_dim)]
            + ["sigma_min_jacobian", "verdict"]
        )
        for s, point, rep in zip(path.s_values, path.points, path.reports):
            writer.writerow(
                [f"{s:.17g}"]
                + [f"{x:.17g}" for x in point]
                + [f"{rep.jacobian_singular_values[-1]:.17g}", rep.verdict.code]
            )

    if args.out:
        _write_with_manifest(args.out, body, args, "continue")
    else:
        body(sys.stdout)
    return EXIT_OK


def _load_profile(args, olg):
    if args.profile:
        with open(args.profile, newline="", encoding="utf-8") as fh:
            return read_profile_csv(fh, olg)
    return zero_profile(olg)


def _cmd_olg(args) -> int:
    olg = load_olgame_file(args.game)
    profile = _load_profile(args, olg)
    sub = args.olg_command
    if sub == "simulate":
        traj = simulate_state(olg, profile)
        print(f"x(T) = {traj.terminal.tolist()}")

        def body(fh):
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["t"] + [f"x_{j + 1}" for j in range(olg.state_dim)])
            for t, x in zip(traj.times, traj.states):
                writer.writerow([f"{t:.17g}"] + [f"{v:.17g}" for v in x])

        if args.out:
            _write_with_manifest(args.out, body, args, "olg simulate")
        else:
            body(sys.stdout)
        return EXIT_OK
    if sub == "gradient":
        gf = ol_game_form(olg, profile)
        print(f"sup_norm = {gf.sup_norm:.17g}")

        def body(fh):
            writer = csv.writer(fh, lineterminator="\n")
            header = ["t"] + [c.replace("u", "g", 1) for c in profile_csv_header(olg)[1:]]
            writer.writerow(header)
            for k in range(olg.steps):
                row = [f"{k * olg.dt:.17g}"]
                for b in gf.blocks:
                    row.extend(f"{v:.17g}" for v in b[k])
                writer.writerow(row)

        if args.out:
            _write_with_manifest(args.out, body, args, "olg gradient")
        else:
            body(sys.stdout)
        return EXIT_OK
    if sub == "play":
        result = ol_gradient_play(
            olg, profile, step_size=args.alpha, max_iters=args.iters, tol=args.tol
        )
        print(
            f"status: {result.status} iterations={result.iterations} "
            f"final_sup_norm={result.sup_norms[-1]:.10g}"
        )

        def body(fh):
            write_profile_csv(fh, olg, result.profile)

        if args.out:
            _write_with_manifest(args.out, body, args, "olg play")
        else:
            body(sys.stdout)
        return EXIT_OK
    if sub == "classify":
        tol = _tolerances(args)
        rep = ol_classify(
            olg, profile, fd_step=args.fd_step, tolerances=tol, dim_cap=args.dim_cap
        )
        print(json.dumps(rep.to_dict()))
        if args.out:
            def body(fh):
                writer = csv.writer(fh, lineterminator="\n")
                dims = [olg.steps * k for k in olg.control_dims]
                writer.writerow(report_csv_header(dims))
                writer.writerow(rep.to_csv_row())

            _write_with_manifest(args.out, body, args, "olg classify")
        return EXIT_OK
    raise GameConfigError(f"unknown olg subcommand {sub!r}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="diffnash",
        description="Characterize, compute, and stress-test local Nash equilibria "
        "in continuous games.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("classify", help="classify joint strategies of a game")
    p.add_argument("--game", required=True, help="game configuration JSON file")
    p.add_argument("--point", action="append", help="comma-separated coordinates (repeatable)")
    p.add_argument("--points", help="CSV file of points, one per row")
    p.add_argument("--out", help="write a CSV report table here")
    _add_deriv_flag(p)
    _add_tolerance_flags(p)
    p.set_defaults(func=_cmd_classify)

    p = sub.add_parser("solve", help="multi-start Newton search for equilibria")
    p.add_argument("--game", required=True)
    p.add_argument("--box", default="-5,5", help="per-coordinate interval lo,hi")
    p.add_argument("--k", type=int, default=64, help="number of starting points")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="write the roots table CSV here")
    _add_deriv_flag(p)
    _add_tolerance_flags(p)
    p.set_defaults(func=_cmd_solve)

    p = sub.add_parser("flow", help="integrate simultaneous gradient descent")
    p.add_argument("--game", required=True)
    p.add_argument("--point", required=True, help="initial joint strategy")
    p.add_argument("--integrator", choices=("rk4", "rk45"), default="rk45")
    p.add_argument("--dt", type=float, default=0.01, help="fixed step for rk4")
    p.add_argument("--tmax", type=float, default=20.0)
    p.add_argument("--tol-stop", type=float, default=1e-8, help="gradient sup-norm stop")
    p.add_argument("--norm-bound", type=float, default=1e6, help="divergence bound")
    p.add_argument("--out", help="write the trajectory CSV here")
    _add_deriv_flag(p)
    p.set_defaults(func=_cmd_flow)

    p = sub.add_parser("continue", help="track an equilibrium under cost perturbations")
    p.add_argument("--game", required=True)
    p.add_argument("--zeta", required=True, help="perturbation costs: JSON list or file")
    p.add_argument("--point", required=True, help="starting equilibrium")
    p.add_argument("--s-range", default="0,1", help="parameter interval lo,hi")
    p.add_argument("--ds", type=float, default=0.1)
    p.add_argument("--out", help="write the path CSV here")
    _add_deriv_flag(p)
    _add_tolerance_flags(p)
    p.set_defaults(func=_cmd_continue)

    p = sub.add_parser("olg", help="open-loop game analyses")
    p.add_argument("olg_command", choices=("simulate", "gradient", "play", "classify"))
    p.add_argument("--game", required=True, help="open-loop game JSON file")
    p.add_argument("--profile", help="control profile CSV (default: all zeros)")
    p.add_argument("--out")
    p.add_argument("--alpha", type=float, default=0.1, help="play: step size")
    p.add_argument("--iters", type=int, default=200, help="play: max iterations")
    p.add_argument("--tol", type=float, default=1e-8, help="play: stop tolerance")
    p.add_argument("--fd-step", type=float, default=1e-6, help="classify: difference step")
    p.add_argument("--dim-cap", type=int, default=400, help="classify: dimension guard")
    _add_tolerance_flags(p)
    p.set_defaults(func=_cmd_olg)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except DimensionGuardError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIMENSION
    except (GameConfigError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (
        NonFiniteError,
        DerivativeUnavailableError,
        DegenerateStartError,
        np.linalg.LinAlgError,
    ) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
