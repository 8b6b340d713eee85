"""Command-line front end: batch runs in, CSV/JSON artifacts out.

Every number is serialized with 17 significant digits and every file is
written atomically (write to a temp file, then rename), so identical
configs and seeds produce byte-identical output trees.  Each run writes an
echo of its effective configuration next to its outputs; a run is
reproducible from its own artifacts alone.

Exit codes: 0 success, 1 configuration/validation error, 2 numerical
failure (blow-up or an ensemble with too many failed runs).
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import tempfile
from typing import Iterable, Optional, Sequence

import numpy as np

from . import crystal as crystal_mod
from .config import ConfigError, RunConfig, parse_config
from .core import (
    BOUNDARY_MASS_LIMIT,
    HBAR,
    PhysicalParams,
    WaveFunction,
    make_state,
    observables,
)
from .ensemble import (
    EnsembleFailure,
    SweepSpec,
    born_statistics,
    half_time_from_series,
    histogram,
    run_ensemble,
    scaling_fit,
)
from .propagator import (
    BlowUpError,
    EffectiveHamiltonian,
    NoiseProcess,
    PropagatorConfig,
    evolve,
    gravity_omega,
    stability_bounds,
    timescale_estimates,
)

# ---------------------------------------------------------------------------
# deterministic serialization


def format_float(x: float) -> str:
    """Fixed 17-significant-digit decimal form (round-trip exact)."""
    return f"{float(x):.17g}"


def _json_value(value, indent: int) -> str:
    pad = " " * indent
    if value is None:
        return "null"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        v = float(value)
        return format_float(v) if math.isfinite(v) else "null"
    if isinstance(value, str):
        return json.dumps(value)
    if isinstance(value, dict):
        if not value:
            return "{}"
        items = [
            f'{pad}  {json.dumps(str(k))}: {_json_value(v, indent + 2)}'
            for k, v in value.items()
        ]
        return "{\n" + ",\n".join(items) + "\n" + pad + "}"
    if isinstance(value, (list, tuple, np.ndarray)):
        seq = list(value)
        if not seq:
            return "[]"
        items = [f"{pad}  {_json_value(v, indent + 2)}" for v in seq]
        return "[\n" + ",\n".join(items) + "\n" + pad + "]"
    raise TypeError(f"cannot serialize {type(value).__name__}")


def _atomic_write(path: str, text: str) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix="~")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_json(path: str, obj) -> None:
    _atomic_write(path, _json_value(obj, 0) + "\n")


def write_csv(path: str, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    def cell(v) -> str:
        if v is None:
            return ""
        if isinstance(v, bool):
            return "true" if v else "false"
        if isinstance(v, (int, np.integer)):
            return str(int(v))
        if isinstance(v, (float, np.floating)):
            return format_float(v) if math.isfinite(v) else ""
        return str(v)

    lines = [",".join(header)]
    lines.extend(",".join(cell(v) for v in row) for row in rows)
    _atomic_write(path, "\n".join(lines) + "\n")


def _echo_config(cfg: RunConfig, out_dir: str) -> None:
    write_json(os.path.join(out_dir, f"{cfg.output_prefix}_config.json"), cfg.effective)


def _progress(quiet: bool, message: str) -> None:
    if not quiet:
        print(message, file=sys.stderr)


# ---------------------------------------------------------------------------
# subcommand handlers


def _build_initial_state(cfg: RunConfig) -> WaveFunction:
    state = cfg.initial_state
    if state["kind"] == "uniform":
        return make_state(cfg.grid, "uniform")
    if state["kind"] == "gaussian":
        return make_state(
            cfg.grid, "gaussian", center=float(state["center"]), width=float(state["width"])
        )
    return make_state(cfg.grid, "superposition", components=cfg.components)


def cmd_simulate(cfg: RunConfig, out_dir: str, seed: Optional[int], quiet: bool) -> int:
    cfg.require("grid", "params", "initial_state", "propagator")
    noise = cfg.noise or NoiseProcess()
    if seed is not None:
        noise = NoiseProcess(noise.kind, noise.sigma_xi, noise.tau_xi, seed)
    psi0 = _build_initial_state(cfg)
    h_eff = EffectiveHamiltonian(cfg.params, noise)
    centers = None
    stop = None
    threshold = None
    if cfg.tracking is not None:
        centers = cfg.tracking["centers"]
        threshold = float(cfg.tracking["dominance_threshold"])
        if cfg.tracking.get("stop_at_dominance"):
            stop = threshold
    _progress(quiet, f"simulate: {cfg.propagator.n_steps} steps of dt = {cfg.propagator.dt}")
    traj = evolve(psi0, h_eff, cfg.propagator, centers=centers, stop_threshold=stop)

    n_weights = len(centers) if centers else 0
    header = ["t", "mean_x", "mean_x2", "raw_norm", "xi"] + [
        f"weight_{i}" for i in range(n_weights)
    ]
    rows = []
    for i in range(len(traj)):
        row = [traj.times[i], traj.mean_x[i], traj.mean_x2[i], traj.raw_norm[i], traj.xi_trace[i]]
        if n_weights:
            row.extend(traj.component_weights[i])
        rows.append(row)
    write_csv(os.path.join(out_dir, f"{cfg.output_prefix}_trajectory.csv"), header, rows)

    try:
        t_half = half_time_from_series(traj.times, traj.mean_x2)
    except ValueError:
        t_half = None
    dom_time = None
    if centers and threshold is not None:
        from .ensemble import dominance_time

        dom_time = dominance_time(traj, threshold)
    summary = {
        "final_time": float(traj.times[-1]),
        "final_spread": float(traj.mean_x2[-1]),
        "final_mean_x": float(traj.mean_x[-1]),
        "half_time": t_half,
        "dominance_time": dom_time,
        "stopped_early": traj.stopped_early,
        "boundary_mass_max": traj.boundary_mass_max,
        "boundary_flag": bool(traj.boundary_mass_max > BOUNDARY_MASS_LIMIT),
        "noise_seed": noise.seed,
    }
    write_json(os.path.join(out_dir, f"{cfg.output_prefix}_summary.json"), summary)
    _echo_config(cfg, out_dir)
    return 0


def cmd_sweep(cfg: RunConfig, out_dir: str, seed: Optional[int], quiet: bool) -> int:
    cfg.require("grid", "sweep")
    state_cfg = cfg.initial_state or {"kind": "uniform"}
    sweep = cfg.sweep
    rows = []
    pairs = []
    hbar = cfg.params.hbar if cfg.params is not None else HBAR
    for i, (nm, om) in enumerate(sweep["points"]):
        params = PhysicalParams(nm, om, hbar)
        psi0 = (
            make_state(cfg.grid, "uniform")
            if state_cfg["kind"] == "uniform"
            else make_state(
                cfg.grid, "gaussian", center=float(state_cfg["center"]),
                width=float(state_cfg["width"]),
            )
        )
        x2_0 = observables(psi0).mean_x2
        t_half_pred = params.hbar / (nm * om * om * x2_0)
        bounds = stability_bounds(cfg.grid, params)
        dt = float(sweep["dt_safety"]) * min(
            bounds.dt_max, t_half_pred / int(sweep["resolution_steps"])
        )
        horizon = float(sweep["horizon_multiplier"]) * t_half_pred
        n_steps = max(100, int(horizon / dt))
        stride = max(1, n_steps // 2000)
        n_steps = (n_steps // stride) * stride
        _progress(quiet, f"sweep point {i + 1}/{len(sweep['points'])}: "
                         f"Nm={nm:.3e} omega={om:.3e} steps={n_steps}")
        traj = evolve(
            psi0,
            EffectiveHamiltonian(params, NoiseProcess()),
            PropagatorConfig(dt=dt, n_steps=n_steps, record_stride=stride),
        )
        t_half = half_time_from_series(traj.times, traj.mean_x2)
        rows.append([nm, om, nm * om * om, t_half, float(traj.mean_x2[-1]), n_steps, dt])
        pairs.append((nm * om * om, t_half))
    fit = scaling_fit(pairs) if len(pairs) >= 3 else None
    write_csv(
        os.path.join(out_dir, f"{cfg.output_prefix}_sweep.csv"),
        ["total_mass", "omega", "nm_omega2", "half_time", "final_spread", "n_steps", "dt"],
        rows,
    )
    summary = {
        "n_points": len(rows),
        "fit": None
        if fit is None
        else {"slope": fit.slope, "intercept": fit.intercept, "residual": fit.residual},
    }
    write_json(os.path.join(out_dir, f"{cfg.output_prefix}_summary.json"), summary)
    _echo_config(cfg, out_dir)
    return 0


def _build_sweep_spec(cfg: RunConfig, seed: Optional[int]) -> SweepSpec:
    cfg.require("grid", "initial_state", "noise", "ensemble")
    if cfg.initial_state["kind"] != "superposition" or len(cfg.components) < 2:
        raise ConfigError(
            ["ensemble/born runs need initial_state.kind = superposition "
             "with >= 2 components"]
        )
    if cfg.noise.kind != "piecewise_constant_gaussian":
        raise ConfigError(
            ["ensemble/born runs need noise.kind = piecewise_constant_gaussian"]
        )
    ens = cfg.ensemble
    return SweepSpec(
        points=tuple(ens["points"]),
        runs_per_point=int(ens["runs_per_point"]),
        master_seed=int(seed if seed is not None else ens["master_seed"]),
        grid=cfg.grid,
        components=tuple(cfg.components),
        noise_sigma=cfg.noise.sigma_xi,
        noise_tau=cfg.noise.tau_xi,
        dominance_threshold=float(ens["dominance_threshold"]),
        dt=ens.get("dt"),
        t_max=ens.get("t_max"),
        record_stride=ens.get("record_stride"),
        dt_safety=float(ens["dt_safety"]),
        batch_size=int(ens["batch_size"]),
    )


def _write_run_records(cfg: RunConfig, out_dir: str, result) -> None:
    write_csv(
        os.path.join(out_dir, f"{cfg.output_prefix}_runs.csv"),
        ["point_index", "total_mass", "omega", "run_index", "seed",
         "dominance_time", "winner", "half_time", "blowup"],
        [
            [r.point_index, r.total_mass, r.omega, r.run_index, r.seed,
             r.dominance_time, r.winner, r.half_time, r.blowup]
            for r in result.records
        ],
    )


def cmd_ensemble(cfg: RunConfig, out_dir: str, seed: Optional[int], quiet: bool) -> int:
    spec = _build_sweep_spec(cfg, seed)
    _progress(quiet, f"ensemble: {len(spec.points)} points x {spec.runs_per_point} runs")
    result = run_ensemble(spec)
    _write_run_records(cfg, out_dir, result)

    n_bins = int(cfg.ensemble["histogram_bins"])
    points_out = []
    for p in result.points:
        times = result.dominance_times(p.point_index)
        hist = None
        if times.size >= 1:
            density, edges = histogram(times, n_bins)
            hist = {"density": list(density), "bin_edges": list(edges)}
        points_out.append(
            {
                "point_index": p.point_index,
                "total_mass": p.total_mass,
                "omega": p.omega,
                "nm_omega2": p.total_mass * p.omega**2,
                "n_runs": p.n_runs,
                "n_dominated": p.n_dominated,
                "n_blowup": p.n_blowup,
                "onset_time": p.onset_time,
                "width_time": p.width_time,
                "frequencies": list(p.frequencies),
                "wilson_low": list(p.wilson_low),
                "wilson_high": list(p.wilson_high),
                "histogram": hist,
            }
        )
    def fit_dict(fit):
        return None if fit is None else {
            "slope": fit.slope, "intercept": fit.intercept, "residual": fit.residual
        }

    n_blow = sum(r.blowup for r in result.records)
    summary = {
        "master_seed": spec.master_seed,
        "points": points_out,
        "onset_fit": fit_dict(result.onset_fit),
        "width_fit": fit_dict(result.width_fit),
        "flags": {
            "blowup_ok": bool(n_blow < 0.01 * len(result.records) or n_blow == 0),
            "blowup_fraction": n_blow / len(result.records),
            "all_points_have_percentiles": all(
                p.onset_time is not None for p in result.points
            ),
        },
    }
    write_json(os.path.join(out_dir, f"{cfg.output_prefix}_summary.json"), summary)
    _echo_config(cfg, out_dir)
    return 0


def cmd_born(cfg: RunConfig, out_dir: str, seed: Optional[int], quiet: bool) -> int:
    spec = _build_sweep_spec(cfg, seed)
    _progress(quiet, f"born: {len(spec.points)} points x {spec.runs_per_point} runs")
    result = run_ensemble(spec)
    _write_run_records(cfg, out_dir, result)
    report = born_statistics(result, [c.weight for c in spec.components])
    write_json(
        os.path.join(out_dir, f"{cfg.output_prefix}_born.json"),
        {
            "master_seed": spec.master_seed,
            "n_completed": report.n_completed,
            "frequencies": list(report.frequencies),
            "wilson_low": list(report.wilson_low),
            "wilson_high": list(report.wilson_high),
            "expected": list(report.expected),
            "within_interval": list(report.within_interval),
        },
    )
    _echo_config(cfg, out_dir)
    return 0


def cmd_spectrum(cfg: RunConfig, out_dir: str, seed, quiet: bool) -> int:
    cfg.require("crystal")
    model = cfg.crystal
    n_k = int((cfg.spectrum or {"n_k": 128})["n_k"])
    if n_k < 1:
        raise ConfigError(["spectrum.n_k must be >= 1"])
    ks = np.array([j * math.pi / (model.lattice_const * n_k) for j in range(1, n_k + 1)])
    energy = crystal_mod.dispersion(model, ks)
    coeffs = crystal_mod.bogoliubov(model, ks)
    write_csv(
        os.path.join(out_dir, f"{cfg.output_prefix}_spectrum.csv"),
        ["k", "energy", "A_k", "B_k", "u_k"],
        zip(ks, energy, coeffs.A, coeffs.B, coeffs.u),
    )
    _echo_config(cfg, out_dir)
    return 0


def cmd_limits(cfg: RunConfig, out_dir: str, seed, quiet: bool) -> int:
    cfg.require("crystal", "limits")
    rows = crystal_mod.singular_limit_table(
        cfg.crystal,
        [float(v) for v in cfg.limits["n_sequence"]],
        [float(v) for v in cfg.limits["omega_sequence"]],
    )
    write_csv(
        os.path.join(out_dir, f"{cfg.output_prefix}_limits.csv"),
        ["order", "step", "n_atoms", "omega", "width", "delocalized"],
        [[r.order, r.step, r.n_atoms, r.omega, r.width, r.delocalized] for r in rows],
    )
    _echo_config(cfg, out_dir)
    return 0


def cmd_groundstate(cfg: RunConfig, out_dir: str, seed, quiet: bool) -> int:
    cfg.require("grid", "params")
    psi = crystal_mod.sb_ground_state(cfg.grid, cfg.params)
    obs = observables(psi)
    x = cfg.grid.positions
    write_csv(
        os.path.join(out_dir, f"{cfg.output_prefix}_groundstate.csv"),
        ["x", "re", "im", "density"],
        zip(x, psi.amplitudes.real, psi.amplitudes.imag, np.abs(psi.amplitudes) ** 2),
    )
    expected = cfg.params.hbar / (2.0 * cfg.params.total_mass * cfg.params.omega)
    write_json(
        os.path.join(out_dir, f"{cfg.output_prefix}_summary.json"),
        {
            "norm": obs.norm,
            "mean_x": obs.mean_x,
            "mean_x2": obs.mean_x2,
            "expected_mean_x2": expected,
        },
    )
    _echo_config(cfg, out_dir)
    return 0


def cmd_estimate(args, out_dir: Optional[str]) -> int:
    omega = gravity_omega(args.mass, args.size)
    x_ref = args.x_ref if args.x_ref is not None else args.size
    params = PhysicalParams(total_mass=args.mass, omega=omega)
    est = timescale_estimates(params, x_ref)
    payload = {
        "mass": args.mass,
        "size": args.size,
        "x_ref": x_ref,
        "omega": omega,
        "tau_reduction": est.tau_reduction,
        "tau_drift": est.tau_drift,
    }
    print(_json_value(payload, 0))
    if out_dir:
        write_json(os.path.join(out_dir, "estimate.json"), payload)
    return 0


# ---------------------------------------------------------------------------
# argument parsing and dispatch

_CONFIG_COMMANDS = {
    "simulate": cmd_simulate,
    "sweep": cmd_sweep,
    "ensemble": cmd_ensemble,
    "born": cmd_born,
    "spectrum": cmd_spectrum,
    "limits": cmd_limits,
    "groundstate": cmd_groundstate,
}


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="collapsim",
        description="Non-unitary wavepacket dynamics: collapse statistics "
                    "and harmonic-chain spectra",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="JSON run configuration")
    common.add_argument("--out-dir", default=".", help="output directory")
    common.add_argument("--seed", type=int, default=None,
                        help="override the config's noise/master seed")
    common.add_argument("--quiet", action="store_true", help="suppress progress output")

    for name, help_text in [
        ("simulate", "propagate one trajectory and write it as CSV"),
        ("sweep", "half-time scaling sweep over (mass, omega) points"),
        ("ensemble", "stochastic dominance-time ensembles and scaling fits"),
        ("born", "outcome frequencies vs squared initial weights"),
        ("spectrum", "phonon dispersion and Bogoliubov coefficients as CSV"),
        ("limits", "order-of-limits ground-state width table as CSV"),
        ("groundstate", "pinned ground state profile and moments"),
    ]:
        sub.add_parser(name, parents=[common], help=help_text)

    est = sub.add_parser("estimate", help="gravity-induced omega and timescales")
    est.add_argument("--mass", type=float, required=True, help="object mass (kg)")
    est.add_argument("--size", type=float, required=True, help="object size (m)")
    est.add_argument("--x-ref", type=float, default=None,
                     help="superposition scale (m); defaults to --size")
    est.add_argument("--out-dir", default=None, help="also write estimate.json here")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "estimate":
            return cmd_estimate(args, args.out_dir)
        handler = _CONFIG_COMMANDS[args.command]
        cfg = parse_config(args.config)
        os.makedirs(args.out_dir, exist_ok=True)
        return handler(cfg, args.out_dir, args.seed, args.quiet)
    except ConfigError as exc:
        for line in exc.errors:
            print(f"config error: {line}", file=sys.stderr)
        return 1
    except ValueError as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return 1
    except (BlowUpError, EnsembleFailure) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2


def main_entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    main_entry()
