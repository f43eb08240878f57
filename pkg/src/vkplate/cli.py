"""Configuration-driven experiment runner.

Subcommands
-----------
simulate     one dynamic run at a chosen resolution, snapshots + ledger
relax        one static solve at a chosen resolution
analyze      recompute displacements/residuals/diagnostics from snapshots
convergence  full resolution sweep (dynamic or static) with trend tables
forms        dump the quadratic forms and derived plate moduli as JSON
selftest     run the built-in invariant suite

Exit codes: 0 ok, 1 invariant failure, 2 configuration error, 3 numerical
blow-up.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, ExperimentConfig
from .dynamics import BlowUpError, ConvergenceError, make_initial_data, relax_static, simulate
from .fields import extract_displacements, moment_diagnostics, strain_and_stress
from .lattice import LatticeParams, build_lattice, reference_deformation
from .potentials import mass_spring_model
from .presets import forcing_preset, initial_data_preset
from .quadratic_forms import hessian_at_identity, induced_plane_form, relax
from .runio import config_hash, write_csv, write_json, write_trajectory, read_trajectory_fields
from .selftest import run_selftest
from . import vk_limit as vk

EXIT_OK = 0
EXIT_INVARIANT = 1
EXIT_CONFIG = 2
EXIT_BLOWUP = 3


def _model_of(config: ExperimentConfig):
    m = config.cfg["model"]
    return mass_spring_model(m["k_nn"], m["k_nnn"], m["surf_extra"],
                             smoothing=m.get("smoothing", False))


def _setup(config: ExperimentConfig):
    model = _model_of(config)
    q_cell, q_surf = hessian_at_identity(model)
    relaxed = relax(q_cell)
    consts = vk.VkConstants(nu=config.nu_limit(), relaxed=relaxed,
                            q_surf=q_surf)
    return model, q_cell, q_surf, relaxed, consts


def _basis_for(config: ExperimentConfig, T=None):
    basis = vk.test_basis(config.bounds(), config.cfg["basis_k"],
                          margin=config.cfg["basis_margin"],
                          p=config.cfg["initial"]["power"])
    if T is not None:
        from .vk_limit import _bump_profile

        f, df, _ = _bump_profile(3)
        for tf in basis:
            tf.mu = (lambda t, f=f: f(2.0 * t / T - 1.0))
            tf.mu_dot = (lambda t, df=df: df(2.0 * t / T - 1.0) * 2.0 / T)
    return basis


def _initial_for(config: ExperimentConfig):
    ini = config.cfg["initial"]
    return initial_data_preset(
        config.bounds(), u0=ini["u0"], u0_amplitude=ini["u0_amplitude"],
        v0=ini["v0"], v0_amplitude=ini["v0_amplitude"], v1=ini["v1"],
        v1_amplitude=ini["v1_amplitude"], p=ini["power"])


def _forcing_for(config: ExperimentConfig):
    frc = config.cfg["forcing"]
    return forcing_preset(config.bounds(), preset=frc["preset"],
                          amplitude=frc["amplitude"], p=frc["power"],
                          time_profile=frc.get("time_profile", "constant"))


def _grid_for(config: ExperimentConfig, eps: float):
    return build_lattice(LatticeParams(eps=eps, nu=config.nu_for(eps),
                                       domain=config.domain()))


def _l2_diff(va, vb) -> float:
    """L2 distance of two scalar plane fields (finer interpolated to coarser)."""
    from scipy.interpolate import RegularGridInterpolator

    xb = vb.origin[0] + vb.eps * np.arange(vb.shape[0])
    yb = vb.origin[1] + vb.eps * np.arange(vb.shape[1])
    itp = RegularGridInterpolator((xb, yb), vb.values, bounds_error=False,
                                  fill_value=0.0)
    pts = va.points()
    d = va.values - itp(pts)
    return float(np.sqrt((d ** 2).sum() * va.eps ** 2))


def _residual_rows(eps, nu, records):
    return [[eps, nu, r["basis_id"], r["kind"], repr(r["residual"]),
             repr(r["relative"])] for r in records]


def run_dynamic(config: ExperimentConfig, outdir=None) -> dict:
    """Resolution sweep of dynamic runs with residual and Cauchy trends."""
    model, q_cell, q_surf, relaxed, consts = _setup(config)
    init = _initial_for(config)
    g = _forcing_for(config)
    T = config.cfg["T"]
    basis = _basis_for(config, T=T)
    outdir = Path(outdir or config.cfg["out"])
    chash = config_hash(config.canonical_dict())

    summary = {"mode": "dynamic", "config_hash": chash, "version": __version__,
               "resolutions": [], "errors": {}}
    residual_rows = []
    v_final = []
    for idx, eps in enumerate(config.cfg["resolutions"]):
        tag = f"res_{idx:02d}"
        resdir = outdir / tag
        entry = {"eps": eps, "nu": config.nu_for(eps), "tag": tag}
        try:
            grid = _grid_for(config, eps)
            y0, y1 = make_initial_data(init.u0, init.v0, init.grad_v0, init.v1, grid)
            traj = simulate(model, grid, y0, y1, g, T=T,
                            snapshot_every=config.cfg["snapshot_every"],
                            dt_scale=config.cfg["dt_scale"],
                            seed=config.cfg["seed"])
            times, us, vs = traj.displacement_series()
            res = vk.dynamic_residuals(consts, times, us, vs, g, basis)
            strain = strain_and_stress(traj.states[-1].y, model, grid)
            moments = moment_diagnostics(strain, consts, us[-1], vs[-1])
            h = grid.h
            entry.update({
                "grid_hash": grid.content_hash(),
                "elastic_over_h4_max": max(l["elastic"] for l in traj.ledger) / h**4,
                # (eps^3/h) sum |dy/dt|^2 / h^2 = 2 KE / h^4
                "kinetic_scaled_max": max(2.0 * l["kinetic"] / h**4 for l in traj.ledger),
                "energy_balance_max": max(abs(l["balance"]) for l in traj.ledger),
                "phi_residual_max": max(r["relative"] for r in res if r["kind"] == "scalar"),
                "psi_residual_max": max(r["relative"] for r in res if r["kind"] == "vector"),
                "moment_diagnostics": moments,
            })
            residual_rows += _residual_rows(eps, entry["nu"], res)
            write_trajectory(resdir, traj, {"config_hash": chash, "eps": eps,
                                            "nu": entry["nu"]})
            v_final.append((times, vs))
        except (BlowUpError, ConvergenceError, ValueError) as exc:
            summary["errors"][tag] = f"{type(exc).__name__}: {exc}"
            v_final.append(None)
        summary["resolutions"].append(entry)

    cauchy = []
    for a, b in zip(v_final, v_final[1:]):
        if a is None or b is None:
            cauchy.append(None)
            continue
        # sup over snapshot times of the L2 difference (finer onto coarser)
        diffs = [_l2_diff(va, vb) for va, vb in zip(a[1], b[1])]
        cauchy.append(max(diffs))
    summary["v_cauchy_linf_l2"] = cauchy

    write_csv(outdir / "residuals.csv",
              ["eps", "nu", "basis_id", "kind", "residual", "relative"],
              residual_rows)
    write_json(outdir / "summary.json", summary)
    return summary


def run_static(config: ExperimentConfig, outdir=None) -> dict:
    """Resolution sweep of static solves with residual and Cauchy trends."""
    model, q_cell, q_surf, relaxed, consts = _setup(config)
    g = _forcing_for(config)
    basis = _basis_for(config)
    outdir = Path(outdir or config.cfg["out"])
    chash = config_hash(config.canonical_dict())

    summary = {"mode": "static", "config_hash": chash, "version": __version__,
               "resolutions": [], "errors": {}}
    residual_rows = []
    v_all = []
    for idx, eps in enumerate(config.cfg["resolutions"]):
        tag = f"res_{idx:02d}"
        entry = {"eps": eps, "nu": config.nu_for(eps), "tag": tag}
        try:
            grid = _grid_for(config, eps)
            ystar = relax_static(model, grid, reference_deformation(grid), g,
                                 tol=config.cfg["static_tol"],
                                 seed=config.cfg["seed"])
            u, v = extract_displacements(ystar, grid)
            res = vk.static_residuals(consts, u, v, g, basis)
            strain = strain_and_stress(ystar, model, grid)
            moments = moment_diagnostics(strain, consts, u, v)
            entry.update({
                "grid_hash": grid.content_hash(),
                "phi_residual_max": max(r["relative"] for r in res if r["kind"] == "scalar"),
                "psi_residual_max": max(r["relative"] for r in res if r["kind"] == "vector"),
                "moment_diagnostics": moments,
            })
            residual_rows += _residual_rows(eps, entry["nu"], res)
            from .runio import write_array
            resdir = outdir / tag
            resdir.mkdir(parents=True, exist_ok=True)
            write_array(resdir / "y_static.f64", ystar.values)
            v_all.append(v)
        except (BlowUpError, ConvergenceError, ValueError) as exc:
            summary["errors"][tag] = f"{type(exc).__name__}: {exc}"
            v_all.append(None)
        summary["resolutions"].append(entry)

    cauchy = []
    for a, b in zip(v_all, v_all[1:]):
        cauchy.append(None if a is None or b is None else _l2_diff(a, b))
    summary["v_cauchy_l2"] = cauchy

    write_csv(outdir / "residuals.csv",
              ["eps", "nu", "basis_id", "kind", "residual", "relative"],
              residual_rows)
    write_json(outdir / "summary.json", summary)
    return summary


def dump_forms(config: ExperimentConfig, outpath) -> dict:
    model, q_cell, q_surf, relaxed, consts = _setup(config)
    payload = {
        "version": __version__,
        "config_hash": config_hash(config.canonical_dict()),
        "flattening": "column-major over (row, column): index = row + 3*column",
        "q_cell": q_cell.matrix.tolist(),
        "q_surf": q_surf.matrix.tolist(),
        "m3": relaxed.m3.tolist(),
        "b_map": relaxed.b_map.tolist(),
        "plane_form_basis": ["e11", "e22", "e12+e21"],
        "plane_form": induced_plane_form(relaxed).tolist(),
    }
    write_json(outpath, payload)
    return payload


def _analyze(config: ExperimentConfig, snapdir, outdir) -> dict:
    model, q_cell, q_surf, relaxed, consts = _setup(config)
    g = _forcing_for(config)
    snapdir = Path(snapdir)
    manifest = json.loads((snapdir / "manifest.json").read_text())
    eps = manifest["grid"]["eps"]
    grid = _grid_for(config, eps)
    times, ys, vs_nodes, manifest = read_trajectory_fields(snapdir, grid)
    us, vs = [], []
    for y in ys:
        u, v = extract_displacements(y, grid)
        us.append(u)
        vs.append(v)
    T = float(times[-1])
    basis = _basis_for(config, T=T if len(times) > 2 else None)
    out = {"config_hash": config_hash(config.canonical_dict()),
           "grid_hash": grid.content_hash(), "times": times.tolist()}
    if len(times) >= 3:
        res = vk.dynamic_residuals(consts, times, us, vs, g, basis)
    else:
        res = vk.static_residuals(consts, us[-1], vs[-1], g, basis)
    out["residuals"] = res
    strain = strain_and_stress(ys[-1], model, grid)
    out["moment_diagnostics"] = moment_diagnostics(strain, consts, us[-1], vs[-1])
    write_json(Path(outdir) / "analysis.json", out)
    from .runio import write_plane_field_csv
    write_plane_field_csv(Path(outdir) / "u_final.csv", us[-1], "u")
    write_plane_field_csv(Path(outdir) / "v_final.csv", vs[-1], "v")
    return out


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="vkplate", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add_config(p):
        p.add_argument("--config", required=True, help="JSON experiment config")
        p.add_argument("--out", default=None, help="output directory override")

    p_sim = sub.add_parser("simulate", help="single dynamic run")
    add_config(p_sim)
    p_sim.add_argument("--eps", type=float, default=None,
                       help="resolution override (default: first configured)")
    p_sim.add_argument("--T", type=float, default=None, help="final time override")
    p_sim.add_argument("--snapshot-every", type=float, default=None)

    p_rel = sub.add_parser("relax", help="single static solve")
    add_config(p_rel)
    p_rel.add_argument("--eps", type=float, default=None)

    p_ana = sub.add_parser("analyze", help="recompute reports from snapshots")
    add_config(p_ana)
    p_ana.add_argument("--snapshots", required=True, help="snapshot directory")

    p_conv = sub.add_parser("convergence", help="full resolution sweep")
    add_config(p_conv)
    p_conv.add_argument("--mode", choices=["dynamic", "static"], default="dynamic")

    p_forms = sub.add_parser("forms", help="dump quadratic forms as JSON")
    add_config(p_forms)

    p_self = sub.add_parser("selftest", help="run the invariant suite")
    p_self.add_argument("--tighten", type=float, default=1.0,
                        help="multiply all tolerances by this factor")
    p_self.add_argument("--seed", type=int, default=0)

    args = parser.parse_args(argv)

    if args.command == "selftest":
        ok = run_selftest(tighten=args.tighten, seed=args.seed)
        return EXIT_OK if ok else EXIT_INVARIANT

    try:
        config = ExperimentConfig.from_file(args.config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    outdir = Path(args.out or config.cfg["out"])
    try:
        if args.command == "simulate":
            sweep = dict(config.raw)
            if args.eps is not None:
                sweep["resolutions"] = [args.eps]
            else:
                sweep["resolutions"] = [config.cfg["resolutions"][0]]
            if args.T is not None:
                sweep["T"] = args.T
            if args.snapshot_every is not None:
                sweep["snapshot_every"] = args.snapshot_every
            summary = run_dynamic(ExperimentConfig(sweep), outdir)
        elif args.command == "relax":
            sweep = dict(config.raw)
            sweep["resolutions"] = [args.eps if args.eps is not None
                                    else config.cfg["resolutions"][0]]
            summary = run_static(ExperimentConfig(sweep), outdir)
        elif args.command == "analyze":
            summary = _analyze(config, args.snapshots, outdir)
        elif args.command == "convergence":
            runner = run_dynamic if args.mode == "dynamic" else run_static
            summary = runner(config, outdir)
        elif args.command == "forms":
            summary = dump_forms(config, outdir / "forms.json")
        else:  # pragma: no cover
            parser.error(f"unhandled command {args.command}")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except BlowUpError as exc:
        print(f"numerical blow-up: {exc}", file=sys.stderr)
        return EXIT_BLOWUP

    errors = summary.get("errors") or {}
    for tag, msg in errors.items():
        print(f"{tag}: {msg}", file=sys.stderr)
    if any("BlowUpError" in msg for msg in errors.values()):
        return EXIT_BLOWUP
    print(json.dumps({k: v for k, v in summary.items()
                      if k not in ("resolutions", "residuals")}, indent=2,
                     sort_keys=True, default=str))
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
