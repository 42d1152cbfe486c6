"""Command line driver: ``run``, ``compare`` and ``oracle``.

Exit codes: 0 completed, 10 blowup suspected, 3 corrupted state,
2 configuration or usage error.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from .core import EquationOfState, density_to_makino, makino_to_density
from .scenarios import ConfigError

EXIT_OK, EXIT_USAGE, EXIT_CORRUPTED, EXIT_BLOWUP = 0, 2, 3, 10


def _threads() -> int:
    raw = os.environ.get("VACUUMCLOUD_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def _configure_threads() -> None:
    from . import gravity

    gravity.WORKERS = _threads()


# ---------------------------------------------------------------------------
# run


def run_command(config_path, out: Optional[str] = None) -> int:
    from .config import load_config
    from .runner import Simulation, write_manifest

    try:
        cfg = load_config(config_path)
    except (ConfigError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    outdir = Path(out) if out else Path(cfg.output.directory)
    outdir.mkdir(parents=True, exist_ok=True)
    try:
        sim = Simulation(cfg)
        outcome = sim.execute(outdir)
    except ConfigError as exc:
        write_manifest(outdir, cfg, "config-error", str(exc), EXIT_USAGE)
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # post-mortem manifest, then re-raise
        write_manifest(outdir, cfg, "corrupted-state", f"{type(exc).__name__}: {exc}", EXIT_CORRUPTED)
        raise
    msg = f"{outcome.verdict} at t={outcome.final.time:.6g} after {outcome.steps} steps"
    if outcome.reason:
        msg += f": {outcome.reason}"
    print(msg)
    return outcome.exit_code


# ---------------------------------------------------------------------------
# compare


def _load_run(d: Path):
    from .grid import read_snapshot

    manifest = json.loads((d / "manifest.json").read_text())
    eos_block = (manifest.get("config") or {}).get("eos", {})
    eos = EquationOfState(float(eos_block.get("K", 1.0)), float(eos_block.get("gamma", 2.0)), eos_block.get("case"))
    snaps = []
    for p in sorted((d / "snapshots").glob("snap_*.bin")):
        grid, t, fields = read_snapshot(p)
        w = np.stack([fields["w0"], fields["w1"], fields["w2"]])
        snaps.append((t, grid, fields["alpha"], w))
    return eos, snaps


def _coarsen(grid, alpha, w, target, eos):
    """Block-average density and momentum of a finer run onto ``target``."""
    from .grid import CartesianGrid

    if grid == target:
        return alpha, w
    ratio = [a / b for a, b in zip(grid.dims, target.dims)]
    same_box = np.allclose(grid.lower, target.lower) and np.allclose(grid.upper, target.upper)
    if not same_box or any(r < 1 or abs(r - round(r)) > 1e-12 for r in ratio) or len(set(ratio)) != 1:
        raise ValueError("grids are not nested refinements of the same box")
    r = int(round(ratio[0]))
    sl = grid.interior
    rho = makino_to_density(np.maximum(alpha[sl], 0.0), eos)
    mom = rho * w[(slice(None),) + sl]

    def block(a):
        n = target.dims
        return a.reshape(n[0], r, n[1], r, n[2], r).mean(axis=(1, 3, 5))

    rho_c = block(rho)
    mom_c = np.stack([block(m) for m in mom])
    w_c = np.where(rho_c > 0, mom_c / np.where(rho_c > 0, rho_c, 1.0), 0.0)
    a_out = target.zeros()
    w_out = target.zeros(3)
    a_out[target.interior] = density_to_makino(rho_c, eos)
    w_out[(slice(None),) + target.interior] = w_c
    return a_out, w_out


def compare_command(dir_a, dir_b, out: Optional[str] = None, tol: float = 1e-9) -> int:
    from .diagnostics import relative_entropy
    from .hyper import SystemState

    dir_a, dir_b = Path(dir_a), Path(dir_b)
    try:
        eos_a, snaps_a = _load_run(dir_a)
        eos_b, snaps_b = _load_run(dir_b)
    except (OSError, KeyError, ValueError) as exc:
        print(f"cannot read runs: {exc}", file=sys.stderr)
        return EXIT_USAGE
    if (eos_a.K, eos_a.gamma) != (eos_b.K, eos_b.gamma):
        print("equation of state differs between runs", file=sys.stderr)
        return EXIT_USAGE
    rows = []
    for ta, ga, aa, wa in snaps_a:
        match = [s for s in snaps_b if abs(s[0] - ta) <= tol * max(1.0, abs(ta))]
        if not match:
            continue
        _, gb, ab, wb = match[0]
        coarse = ga if np.prod(ga.dims) <= np.prod(gb.dims) else gb
        try:
            a1, w1 = _coarsen(ga, aa, wa, coarse, eos_a)
            a2, w2 = _coarsen(gb, ab, wb, coarse, eos_a)
        except ValueError as exc:
            print(f"grid mismatch: {exc}", file=sys.stderr)
            return EXIT_USAGE
        s1 = SystemState(coarse, a1, w1, eos_a, ta)
        s2 = SystemState(coarse, a2, w2, eos_a, ta)
        eta, total = relative_entropy(s1, s2)
        rows.append((ta, total, float(np.max(eta))))
    if not rows:
        print("no snapshot times in common", file=sys.stderr)
        return EXIT_USAGE
    target = Path(out) if out else dir_a / f"compare_{dir_b.name}.csv"
    with open(target, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["t", "eta_total", "eta_max"])
        for r in rows:
            wr.writerow([repr(float(v)) for v in r])
    print(f"max eta_total over {len(rows)} matched times: {max(r[1] for r in rows):.6e}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# oracle


def _emit(rows: Sequence[Sequence], header: Sequence[str], out: Optional[str]) -> None:
    fh = open(out, "w", newline="") if out else sys.stdout
    try:
        wr = csv.writer(fh)
        wr.writerow(header)
        for r in rows:
            wr.writerow([v if isinstance(v, str) else repr(float(v)) for v in r])
    finally:
        if out:
            fh.close()


def oracle_command(args) -> int:
    from .grid import CartesianGrid

    sub = args.sub
    if sub == "collapse":
        from .scenarios import collapse_oracle, freefall_time

        traj = collapse_oracle(args.M, args.r0, args.v0)
        if args.trajectory:
            _emit(list(zip(traj.t, traj.r, traj.v)), ["t", "r", "v"], args.out)
        else:
            rows = [("t_collapse", traj.t_collapse if traj.t_collapse is not None else math.nan)]
            if args.v0 == 0:
                rows.append(("t_freefall_closed_form", freefall_time(args.M, args.r0)))
            _emit(rows, ["quantity", "value"], args.out)
        return EXIT_OK
    if sub == "ball-potential":
        from .gravity import solve_potential, sphere_probe

        rho0, R = args.rho0, args.R
        closed = {"phi_center": -rho0 * R ** 2 / 2, "phi_surface": -rho0 * R ** 2 / 3, "g_surface": rho0 * R / 3}
        rows = []
        if args.n > 0:
            grid = CartesianGrid.cube(args.n, -args.box, args.box)
            rho = np.where(grid.radius() <= R, rho0, 0.0)
            mask = np.zeros(grid.shape, bool)
            mask[grid.interior] = True
            rho = np.where(mask, rho, 0.0)
            sol = solve_potential(rho, grid, "fft")
            numeric = sphere_probe(sol.phi.values, sol.g.values, grid, R)
            rows = [(k, closed[k], numeric[k]) for k in closed]
            _emit(rows, ["quantity", "closed_form", "numerical"], args.out)
        else:
            _emit([(k, v) for k, v in closed.items()], ["quantity", "closed_form"], args.out)
        return EXIT_OK
    if sub == "gravity-direct":
        from .gravity import solve_potential_direct

        grid = CartesianGrid.cube(args.n)
        rho = grid.zeros()
        sl = grid.interior
        if args.field == "ball":
            rho = np.where(grid.radius() <= 0.5, 1.0, 0.0)
        elif args.field == "random":
            rng = np.random.default_rng(args.seed)
            inner = np.zeros(grid.dims)
            inner[2:-2, 2:-2, 2:-2] = rng.random(tuple(d - 4 for d in grid.dims))
            rho[sl] = inner
        mask = np.zeros(grid.shape, bool)
        mask[sl] = True
        rho = np.where(mask, rho, 0.0)
        phi = solve_potential_direct(rho, grid).phi.values
        x, y, z = (a[sl] for a in grid.mesh())
        rows = list(zip(x.ravel(), y.ravel(), z.ravel(), rho[sl].ravel(), phi[sl].ravel()))
        _emit(rows, ["x", "y", "z", "rho", "phi"], args.out)
        return EXIT_OK
    if sub == "mms":
        from .mms import mms_residual

        table = mms_residual(args.resolutions, args.solution)
        rows = [(str(r["n"]), r["l1"], r["linf"], r.get("order_l1", ""), r.get("order_linf", ""))
                for r in table.rows()]
        _emit(rows, ["n", "l1", "linf", "order_l1", "order_linf"], args.out)
        return EXIT_OK
    print(f"unknown oracle {sub!r}", file=sys.stderr)
    return EXIT_USAGE


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="vacuumcloud", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="evolve a configured scenario")
    r.add_argument("config")
    r.add_argument("--out", help="output directory (overrides [output].directory)")

    c = sub.add_parser("compare", help="relative entropy between two runs")
    c.add_argument("dir_a")
    c.add_argument("dir_b")
    c.add_argument("--out", help="CSV path (default: <dir_a>/compare_<dir_b>.csv)")

    o = sub.add_parser("oracle", help="reference data for acceptance checks")
    o.add_argument("sub", choices=["gravity-direct", "collapse", "ball-potential", "mms"])
    o.add_argument("--out", help="CSV path (default: stdout)")
    o.add_argument("--M", type=float, default=4 * math.pi)
    o.add_argument("--r0", type=float, default=1.0)
    o.add_argument("--v0", type=float, default=0.0)
    o.add_argument("--trajectory", action="store_true")
    o.add_argument("--rho0", type=float, default=1.0)
    o.add_argument("--R", type=float, default=0.5)
    o.add_argument("--n", type=int, default=0, help="grid cells per axis (0: closed forms only)")
    o.add_argument("--box", type=float, default=1.0, help="half-width of the cubic box")
    o.add_argument("--field", choices=["empty", "ball", "random"], default="empty")
    o.add_argument("--seed", type=int, default=0)
    o.add_argument("--resolutions", type=int, nargs="+", default=[16, 32, 64])
    o.add_argument("--solution", default="trig")
    return p


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if isinstance(exc.code, int) else EXIT_USAGE
    _configure_threads()
    if args.command == "run":
        return run_command(args.config, args.out)
    if args.command == "compare":
        return compare_command(args.dir_a, args.dir_b, args.out)
    if args.command == "oracle" and args.sub == "gravity-direct" and args.n == 0:
        args.n = 16
    return oracle_command(args)


if __name__ == "__main__":
    sys.exit(main())
