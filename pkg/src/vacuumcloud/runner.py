"""Monitored evolution: integrator, markers, criteria and run artifacts.

:class:`Simulation` wires a :class:`~vacuumcloud.config.RunConfig` to the
integrator and records one diagnostics row per sample.  It is used by the
``run`` command and directly by the test suite.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from . import __version__
from .config import RunConfig
from .diagnostics import (
    ContinuationRecord,
    Verdict,
    blowup_classify,
    conservation,
    criterion_sups,
    diffuse_residual,
    discrete_sobolev,
)
from .flow import (
    MarkerHistory,
    MarkerSet,
    advance_markers,
    freefall_residual,
    seed_markers,
    support_vs_markers,
    transported_density,
    write_marker_rows,
)
from .gravity import solve_potential
from .grid import RegionDecomposition, interpolate, strip_split, support_mask, write_snapshot
from .hyper import BLOWUP, COMPLETED, CORRUPTED, StepControl, SystemState, run
from .scenarios import make_scenario

log = logging.getLogger(__name__)

__all__ = ["EXIT_CODES", "RunOutcome", "Simulation", "diagnostic_columns"]

EXIT_CODES = {COMPLETED: 0, BLOWUP: 10, CORRUPTED: 3}

BASE_COLUMNS = [
    "step", "t", "dt",
    "mass", "momentum_x", "momentum_y", "momentum_z", "energy", "clipped_mass",
    "support_cells", "sup_alpha",
    "strip_W", "interior_theta", "interior_omega", "grad_alpha", "grad_w",
    "weak_integral", "strong_integral",
]
TAIL_COLUMNS = [
    "freefall_max", "freefall_mean", "support_marker_gap",
    "transport_median_relerr", "transport_max_relerr",
    "sobolev_norm", "verdict", "culprit",
]


def _eps_tag(e: float) -> str:
    return f"{e:g}h"


def diagnostic_columns(epsilon_cells) -> List[str]:
    """Column order of ``diagnostics.csv`` for a given epsilon sweep."""
    cols = list(BASE_COLUMNS)
    for e in epsilon_cells:
        cols.append(f"strong_integral_{_eps_tag(e)}")
    for e in epsilon_cells:
        cols.append(f"diffuse_residual_{_eps_tag(e)}")
    return cols + TAIL_COLUMNS


def _fmt(v) -> str:
    if isinstance(v, str):
        return v
    if isinstance(v, (int, np.integer)) and not isinstance(v, bool):
        return str(int(v))
    return repr(float(v))


def _divergence(w: np.ndarray, h) -> np.ndarray:
    out = np.zeros(w.shape[1:])
    for d in range(3):
        out += np.gradient(w[d], h[d], axis=d, edge_order=2)
    return out


@dataclass
class RunOutcome:
    verdict: str
    reason: str
    exit_code: int
    final: SystemState
    rows: List[Dict[str, object]]
    records: Dict[float, ContinuationRecord]
    classification: Verdict
    boundary: MarkerSet
    interior: MarkerSet
    steps: int
    transport: Dict[str, np.ndarray] = field(default_factory=dict)

    def column(self, name: str) -> np.ndarray:
        return np.array([float(r[name]) for r in self.rows])


class Simulation:
    """One monitored run of a :class:`RunConfig`."""

    def __init__(self, config: RunConfig):
        self.cfg = config
        self.grid = config.grid.build()
        self.initial = make_scenario(config.scenario, self.grid)
        c = config.control
        amax = float(np.max(self.initial.alpha))
        self.floor = c.floor if c.floor is not None else c.floor_relative * amax
        self.control = StepControl(cfl=c.cfl, t_end=c.t_end, dt_min=c.dt_min, floor=self.floor,
                                   dissipation=c.dissipation)
        self.gravity_method = None if c.gravity == "none" else c.gravity

    # -- gravity -----------------------------------------------------------
    def _gravity(self, rho, grid):
        return solve_potential(rho, grid, self.gravity_method, check_margin=False).g.values

    def _potential(self, state: SystemState):
        if self.gravity_method is None:
            return None, np.zeros_like(state.w)
        from .hyper import density

        sol = solve_potential(density(state.alpha, state.eos), state.grid, self.gravity_method,
                              check_margin=False)
        return sol.phi.values, sol.g.values

    # -- regions -----------------------------------------------------------
    def _decompositions(self, state: SystemState) -> Dict[float, RegionDecomposition]:
        h = self.grid.min_spacing
        mask = support_mask(state.alpha, self.floor if self.floor > 0 else 0.0, self.grid)
        return {e: strip_split(mask, e * h, self.grid.spacing) for e in self.cfg.diagnostics.epsilon_cells}

    # -- driver ------------------------------------------------------------
    def execute(self, outdir: Optional[Path] = None) -> RunOutcome:
        cfg = self.cfg
        dcfg = cfg.diagnostics
        grid = self.grid
        eps_list = dcfg.epsilon_cells
        records = {e: ContinuationRecord(e * grid.min_spacing) for e in eps_list}
        rows: List[Dict[str, object]] = []
        columns = diagnostic_columns(eps_list)
        ctx = {"verdict": Verdict("none"), "prev_w": None, "prev_t": None}
        hist = MarkerHistory()
        theta_hist: List[np.ndarray] = []
        theta_times: List[float] = []

        if outdir is not None:
            outdir = Path(outdir)
            (outdir / "snapshots").mkdir(parents=True, exist_ok=True)
            marker_path = outdir / "markers.csv"
            marker_path.unlink(missing_ok=True)
        snap_times: List[float] = []
        if cfg.output.snapshot_interval > 0 and cfg.control.t_end > 0:
            k = 1
            while k * cfg.output.snapshot_interval < cfg.control.t_end * (1 - 1e-12):
                snap_times.append(k * cfg.output.snapshot_interval)
                k += 1
        snap_index = [0]

        def snapshot(state: SystemState, name: Optional[str] = None):
            if outdir is None:
                return
            fname = name or f"snap_{snap_index[0]:04d}.bin"
            snap_index[0] += 1
            write_snapshot(outdir / "snapshots" / fname, grid, state.time, {"alpha": state.alpha, "w": state.w})

        state0 = self.initial
        decomps0 = self._decompositions(state0)
        primary = decomps0[dcfg.primary_epsilon]
        markers = {
            "boundary": seed_markers(primary, grid, "boundary", dcfg.boundary_markers, dcfg.seed),
            "interior": seed_markers(primary, grid, "interior", dcfg.interior_markers, dcfg.seed)
            if dcfg.interior_markers and primary.interior.any() else MarkerSet.from_labels(np.empty((0, 3)), "interior"),
        }
        if len(markers["interior"]):
            alpha0_at = interpolate(grid, state0.alpha, markers["interior"].positions)
            rho0_at = state0.eos.density_scale * np.maximum(alpha0_at, 0) ** state0.eos.density_exponent
        else:
            alpha0_at = rho0_at = np.zeros(0)
        transport: Dict[str, np.ndarray] = {}

        def marker_step(state: SystemState):
            t = state.time
            if ctx["prev_t"] is not None and t > ctx["prev_t"]:
                dt = t - ctx["prev_t"]
                for kind in markers:
                    markers[kind] = advance_markers(markers[kind], grid, ctx["prev_w"], state.w, dt)
            else:
                for kind in markers:
                    m = markers[kind]
                    if len(m):
                        markers[kind] = MarkerSet(m.labels, m.positions, interpolate(grid, state.w, m.positions),
                                                  m.kind, m.alive)
            ctx["prev_w"] = state.w.copy()
            ctx["prev_t"] = t
            hist.record(t, markers["boundary"].velocities, keep=3)
            mi = markers["interior"]
            if len(mi):
                div = _divergence(state.w, grid.spacing)
                theta_hist.append(interpolate(grid, div, mi.positions))
                theta_times.append(t)
            if outdir is not None:
                offset = 0
                for kind in ("boundary", "interior"):
                    write_marker_rows(marker_path, markers[kind], t, append=True, offset=offset)
                    offset += len(markers[kind])

        def sample(state: SystemState, n: int, dt: float) -> Optional[str]:
            decomps = self._decompositions(state)
            prim = decomps[dcfg.primary_epsilon]
            sups = None
            for e in eps_list:
                vals = criterion_sups(state, decomps[e])
                records[e].append(state.time, vals)
                if e == dcfg.primary_epsilon:
                    sups = vals
            rec = records[dcfg.primary_epsilon]
            phi, g = self._potential(state)
            cons = conservation(state, phi)
            row: Dict[str, object] = {
                "step": n, "t": state.time, "dt": dt,
                "mass": cons.mass, "momentum_x": cons.momentum[0], "momentum_y": cons.momentum[1],
                "momentum_z": cons.momentum[2], "energy": cons.energy, "clipped_mass": cons.clipped_mass,
                "support_cells": int(prim.support.sum()), "sup_alpha": sups["sup_alpha"],
                "strip_W": sups["strip_W"], "interior_theta": sups["interior_theta"],
                "interior_omega": sups["interior_omega"], "grad_alpha": sups["grad_alpha"],
                "grad_w": sups["grad_w"], "weak_integral": rec.weak_value,
                "strong_integral": rec.strong_value,
            }
            for e in eps_list:
                row[f"strong_integral_{_eps_tag(e)}"] = records[e].strong_value
                row[f"diffuse_residual_{_eps_tag(e)}"] = diffuse_residual(state, decomps[e])
            mb = markers["boundary"]
            if len(hist.times) >= 3 and len(mb):
                fmax, fmean, _ = freefall_residual(mb, hist, grid, g)
            else:
                fmax = fmean = math.nan
            row["freefall_max"], row["freefall_mean"] = fmax, fmean
            row["support_marker_gap"] = support_vs_markers(mb, prim, grid) if len(mb) else math.nan
            mi = markers["interior"]
            if len(mi) and theta_hist:
                pred = transported_density(alpha0_at, np.array(theta_hist), theta_times, state.eos.gamma)
                actual = interpolate(grid, state.alpha, mi.positions)
                ok = mi.alive & (actual > 0)
                rel = np.abs(pred[ok] - actual[ok]) / actual[ok]
                transport.update(predicted=pred, actual=actual, alive=mi.alive.copy())
                row["transport_median_relerr"] = float(np.median(rel)) if rel.size else math.nan
                row["transport_max_relerr"] = float(np.max(rel)) if rel.size else math.nan
            else:
                row["transport_median_relerr"] = row["transport_max_relerr"] = math.nan
            row["sobolev_norm"] = discrete_sobolev(state, dcfg.sobolev_order, prim.support)
            verdict = blowup_classify(rec, dcfg.thresholds, dcfg.window) if len(rec) >= dcfg.window else Verdict("none")
            ctx["verdict"] = verdict
            row["verdict"] = verdict.kind
            row["culprit"] = verdict.label.replace(" ", "_") if verdict.kind != "none" else ""
            rows.append(row)
            if verdict.kind != "none":
                return f"{verdict.kind}: {verdict.label} (log growth rate {verdict.exponent:.3g})"
            return None

        last_sampled = [-1]

        def hook(state: SystemState, n: int, dt: float) -> Optional[str]:
            marker_step(state)
            if any(abs(state.time - ts) <= 1e-12 * max(1.0, ts) for ts in snap_times):
                snapshot(state)
            final = state.time >= cfg.control.t_end - 1e-12 * max(1.0, cfg.control.t_end)
            if n % dcfg.cadence == 0 or final:
                if last_sampled[0] == n:
                    return None
                last_sampled[0] = n
                return sample(state, n, dt)
            return None

        snapshot(state0)
        result = run(state0, self.control, hooks=[hook], gravity=self._gravity if self.gravity_method else None,
                     cadence=1, stop_times=snap_times, max_steps=cfg.control.max_steps)
        final = result.final
        if last_sampled[0] != result.steps:
            sample(final, result.steps, 0.0)
        if result.verdict == CORRUPTED:
            snapshot(final, "last_good.bin")
        elif final.time > 0 and (not snap_times or abs(final.time - snap_times[-1]) > 1e-12):
            snapshot(final)

        outcome = RunOutcome(result.verdict, result.reason, EXIT_CODES[result.verdict], final, rows, records,
                             ctx["verdict"], markers["boundary"], markers["interior"], result.steps, transport)
        if outdir is not None:
            self._write(outdir, outcome, columns)
        return outcome

    def _write(self, outdir: Path, outcome: RunOutcome, columns: List[str]) -> None:
        with open(outdir / "diagnostics.csv", "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(columns)
            for row in outcome.rows:
                wr.writerow([_fmt(row[c]) for c in columns])
        write_manifest(outdir, self.cfg, outcome.verdict, outcome.reason, outcome.exit_code,
                       steps=outcome.steps, final_time=outcome.final.time)
        if self.cfg.output.figures:
            from .plotting import render_run_figures

            render_run_figures(outdir, outcome)


def write_manifest(outdir: Path, cfg: Optional[RunConfig], verdict: str, reason: str, exit_code: int,
                   **extra) -> None:
    manifest = {
        "code_version": __version__,
        "verdict": verdict,
        "reason": reason,
        "exit_code": exit_code,
        "config": cfg.raw if cfg is not None else None,
    }
    manifest.update(extra)
    Path(outdir).mkdir(parents=True, exist_ok=True)
    with open(Path(outdir) / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True, default=str)
        fh.write("\n")
