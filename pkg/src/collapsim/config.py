"""JSON run-configuration schema: strict keys, documented defaults,
all validation errors collected in one pass."""

from __future__ import annotations

import difflib
import json
from dataclasses import dataclass, field
from typing import Any, Optional

from .core import HBAR, ComponentSpec, Grid, PhysicalParams
from .crystal import CrystalModel
from .propagator import NoiseProcess, PropagatorConfig, stability_bounds

SCHEMA_VERSION = 1


class ConfigError(ValueError):
    """Carries every validation problem found, not just the first."""

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


@dataclass(frozen=True)
class _Field:
    type: tuple
    default: Any = None
    required: bool = False


def _florint(required=False, default=None):
    return _Field((int, float), default=default, required=required)


_SCHEMA = {
    "schema_version": None,  # handled specially
    "grid": {
        "x_min": _florint(required=True),
        "x_max": _florint(required=True),
        "n_points": _Field((int,), required=True),
    },
    "physical_params": {
        "total_mass": _florint(required=True),
        "omega": _florint(required=True),
        "hbar": _florint(default=HBAR),
    },
    "initial_state": {
        "kind": _Field((str,), required=True),
        "center": _florint(),
        "width": _florint(),
        "components": _Field((list,)),
    },
    "noise": {
        "kind": _Field((str,), default="zero"),
        "sigma_xi": _florint(default=0.0),
        "tau_xi": _florint(default=0.0),
        "seed": _Field((int,), default=0),
    },
    "propagator": {
        "dt": _florint(required=True),
        "n_steps": _Field((int,), required=True),
        "scheme": _Field((str,), default="split_step_spectral"),
        "record_stride": _Field((int,), default=1),
        "renormalize": _Field((bool,), default=True),
    },
    "tracking": {
        "centers": _Field((list,), required=True),
        "dominance_threshold": _florint(default=0.95),
        "stop_at_dominance": _Field((bool,), default=False),
    },
    "sweep": {
        "points": _Field((list,), required=True),
        "horizon_multiplier": _florint(default=6.0),
        "resolution_steps": _Field((int,), default=300),
        "dt_safety": _florint(default=1.0),
    },
    "ensemble": {
        "points": _Field((list,), required=True),
        "runs_per_point": _Field((int,), required=True),
        "master_seed": _Field((int,), required=True),
        "dominance_threshold": _florint(default=0.95),
        "dt": _florint(),
        "t_max": _florint(),
        "record_stride": _Field((int,)),
        "dt_safety": _florint(default=1.0),
        "batch_size": _Field((int,), default=128),
        "histogram_bins": _Field((int,), default=40),
    },
    "crystal": {
        "n_atoms": _Field((int,), required=True),
        "atom_mass": _florint(required=True),
        "spring": _florint(required=True),
        "lattice_const": _florint(required=True),
        "box_length": _florint(default=1.0),
    },
    "spectrum": {
        "n_k": _Field((int,), default=128),
    },
    "limits": {
        "n_sequence": _Field((list,), required=True),
        "omega_sequence": _Field((list,), required=True),
    },
    "output": {
        "prefix": _Field((str,), default="run"),
    },
}


@dataclass
class RunConfig:
    """Validated configuration with typed objects for the present sections."""

    schema_version: int
    effective: dict  # defaults applied; echoed beside the outputs
    grid: Optional[Grid] = None
    params: Optional[PhysicalParams] = None
    initial_state: Optional[dict] = None
    noise: Optional[NoiseProcess] = None
    propagator: Optional[PropagatorConfig] = None
    tracking: Optional[dict] = None
    sweep: Optional[dict] = None
    ensemble: Optional[dict] = None
    crystal: Optional[CrystalModel] = None
    spectrum: Optional[dict] = None
    limits: Optional[dict] = None
    output_prefix: str = "run"
    components: list = field(default_factory=list)

    def require(self, *sections: str) -> None:
        missing = [s for s in sections if getattr(self, s, None) is None]
        if missing:
            raise ConfigError(
                [f"missing required config section '{s}'" for s in missing]
            )


def _suggest(key: str, known) -> str:
    match = difflib.get_close_matches(key, list(known), n=1)
    return f" (did you mean '{match[0]}'?)" if match else ""


def _check_section(name: str, data: dict, schema: dict, errors: list) -> dict:
    out = {}
    for key, value in data.items():
        if key not in schema:
            errors.append(
                f"unknown key '{key}' in section '{name}'{_suggest(key, schema)}"
            )
            continue
        spec = schema[key]
        ok_type = isinstance(value, spec.type)
        if bool not in spec.type and isinstance(value, bool):
            ok_type = False
        if not ok_type:
            names = "/".join(t.__name__ for t in spec.type)
            errors.append(
                f"'{name}.{key}' must be {names}, got {type(value).__name__}"
            )
            continue
        out[key] = value
    for key, spec in schema.items():
        if key in out:
            continue
        if spec.required:
            errors.append(f"missing required key '{name}.{key}'")
        elif spec.default is not None or spec.type == (bool,):
            out[key] = spec.default
    return out


def _parse_weight(value, where: str, errors: list) -> complex:
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        return complex(value)
    if (
        isinstance(value, list)
        and len(value) == 2
        and all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in value)
    ):
        return complex(value[0], value[1])
    errors.append(f"{where}: weight must be a number or [re, im]")
    return 1.0 + 0j


def _parse_components(raw_list, errors: list) -> list:
    comps = []
    for i, entry in enumerate(raw_list):
        where = f"initial_state.components[{i}]"
        if not isinstance(entry, dict):
            errors.append(f"{where} must be an object")
            continue
        known = {"center", "width", "weight"}
        for key in entry:
            if key not in known:
                errors.append(f"unknown key '{key}' in {where}{_suggest(key, known)}")
        try:
            comps.append(
                ComponentSpec(
                    center=float(entry["center"]),
                    width=float(entry["width"]),
                    weight=_parse_weight(entry.get("weight", 1.0), where, errors),
                )
            )
        except KeyError as exc:
            errors.append(f"{where}: missing {exc}")
        except (TypeError, ValueError) as exc:
            errors.append(f"{where}: {exc}")
    return comps


def _parse_points(raw, where: str, errors: list) -> list:
    points = []
    for i, entry in enumerate(raw):
        ok = (
            isinstance(entry, list)
            and len(entry) == 2
            and all(
                isinstance(v, (int, float)) and not isinstance(v, bool) for v in entry
            )
        )
        if not ok:
            errors.append(f"{where}[{i}] must be [total_mass, omega]")
            continue
        points.append((float(entry[0]), float(entry[1])))
    return points


def validate_config(doc: dict) -> RunConfig:
    """Validate a parsed JSON document; raises ConfigError listing every
    problem, or returns the typed RunConfig with defaults applied."""
    errors: list = []
    if not isinstance(doc, dict):
        raise ConfigError(["top-level config must be a JSON object"])

    version = doc.get("schema_version", SCHEMA_VERSION)
    if not isinstance(version, int) or isinstance(version, bool):
        errors.append("'schema_version' must be an integer")
        version = SCHEMA_VERSION
    elif version != SCHEMA_VERSION:
        errors.append(
            f"unsupported schema_version {version} (this build reads {SCHEMA_VERSION})"
        )

    sections: dict = {}
    for name, value in doc.items():
        if name == "schema_version":
            continue
        if name not in _SCHEMA:
            errors.append(f"unknown config section '{name}'{_suggest(name, _SCHEMA)}")
            continue
        if not isinstance(value, dict):
            errors.append(f"section '{name}' must be an object")
            continue
        sections[name] = _check_section(name, value, _SCHEMA[name], errors)

    cfg = RunConfig(schema_version=version, effective={"schema_version": version})

    def build(name, builder):
        if name not in sections:
            return None
        try:
            return builder(sections[name])
        except KeyError:
            # the missing-key error is already recorded by _check_section
            return None
        except (ValueError, TypeError) as exc:
            errors.append(f"section '{name}': {exc}")
            return None

    cfg.grid = build("grid", lambda s: Grid(float(s["x_min"]), float(s["x_max"]), s["n_points"]))
    cfg.params = build(
        "physical_params",
        lambda s: PhysicalParams(float(s["total_mass"]), float(s["omega"]), float(s["hbar"])),
    )
    cfg.noise = build(
        "noise",
        lambda s: NoiseProcess(s["kind"], float(s["sigma_xi"]), float(s["tau_xi"]), s["seed"]),
    )
    cfg.propagator = build(
        "propagator",
        lambda s: PropagatorConfig(
            float(s["dt"]), s["n_steps"], s["scheme"], s["record_stride"], s["renormalize"]
        ),
    )
    cfg.crystal = build(
        "crystal",
        lambda s: CrystalModel(
            s["n_atoms"], float(s["atom_mass"]), float(s["spring"]),
            float(s["lattice_const"]), float(s["box_length"]),
        ),
    )

    if "initial_state" in sections:
        state = sections["initial_state"]
        kind = state.get("kind")
        if kind not in ("uniform", "gaussian", "superposition"):
            errors.append(
                f"initial_state.kind must be uniform/gaussian/superposition, got {kind!r}"
            )
        elif kind == "gaussian":
            if state.get("center") is None or state.get("width") is None:
                errors.append("gaussian initial_state needs 'center' and 'width'")
        elif kind == "superposition":
            if not state.get("components"):
                errors.append("superposition initial_state needs 'components'")
            else:
                cfg.components = _parse_components(state["components"], errors)
        cfg.initial_state = state

    if "tracking" in sections:
        t = dict(sections["tracking"])
        centers = t.get("centers", [])
        if not (
            isinstance(centers, list)
            and len(centers) >= 1
            and all(isinstance(c, (int, float)) and not isinstance(c, bool) for c in centers)
        ):
            errors.append("tracking.centers must be a non-empty list of numbers")
        else:
            t["centers"] = [float(c) for c in centers]
        cfg.tracking = t

    if "sweep" in sections:
        s = dict(sections["sweep"])
        s["points"] = _parse_points(s.get("points", []), "sweep.points", errors)
        if len(s["points"]) < 1:
            errors.append("sweep.points must contain at least one [mass, omega] pair")
        cfg.sweep = s

    if "ensemble" in sections:
        s = dict(sections["ensemble"])
        s["points"] = _parse_points(s.get("points", []), "ensemble.points", errors)
        if len(s["points"]) < 1:
            errors.append("ensemble.points must contain at least one [mass, omega] pair")
        cfg.ensemble = s

    if "spectrum" in sections:
        cfg.spectrum = sections["spectrum"]
    if "limits" in sections:
        s = sections["limits"]
        for key in ("n_sequence", "omega_sequence"):
            seq = s.get(key)
            if not (
                isinstance(seq, list)
                and len(seq) >= 2
                and all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in seq)
            ):
                errors.append(f"limits.{key} must be a list of >= 2 numbers")
        cfg.limits = s
    if "output" in sections:
        cfg.output_prefix = sections["output"]["prefix"]

    # cross-section stability check, reported with the computed bound
    if cfg.grid is not None and cfg.params is not None and cfg.propagator is not None:
        bounds = stability_bounds(cfg.grid, cfg.params)
        if cfg.propagator.dt > bounds.dt_potential:
            errors.append(
                f"propagator.dt = {cfg.propagator.dt:.6e} exceeds the imaginary-"
                f"potential stability bound {bounds.dt_potential:.6e} s"
            )
        if cfg.propagator.dt > bounds.dt_kinetic:
            errors.append(
                f"propagator.dt = {cfg.propagator.dt:.6e} exceeds the kinetic "
                f"phase bound {bounds.dt_kinetic:.6e} s"
            )

    if errors:
        raise ConfigError(errors)

    cfg.effective.update(sections)
    return cfg


def parse_config(path: str) -> RunConfig:
    """Read, parse and validate a JSON config file."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise ConfigError([f"cannot read config file {path!r}: {exc}"]) from exc
    except json.JSONDecodeError as exc:
        raise ConfigError([f"config file {path!r} is not valid JSON: {exc}"]) from exc
    return validate_config(doc)
