"""Command-line interface: teleport runs, sweeps, density export, physics checks.

Subcommand style, JSON config with flat override flags; every run echoes its
fully resolved configuration (all defaults explicit) to stdout, and the
echoed config plus the seed reproduce all payload bytes.  Exit codes:
0 success, 2 configuration error, 3 numerical-range error (cutoff or grid),
each with a remediation hint.

Rates in the physics block are angular (rad/s) by default; with
``"units": "MHz"`` every rate is interpreted as an ordinary frequency in MHz
and converted via ``rad/s = 2 pi * 1e6 * MHz``.  Timescales are then
reported in microseconds alongside seconds.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys

from . import bell, channels, protocol, serialization
from .errors import (ConfigError, CutoffTooSmallError, GridTooSmallError,
                     QuadratureRangeError, RegimeValidationError, TruncationError)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3

OUT_DIR_ENV = "CVTELEPORT_OUT_DIR"

MHZ_TO_RAD_PER_S = 2.0 * math.pi * 1e6

_CONFIG_KEYS = {"r", "cutoff", "input", "gain", "eta_write", "eta_read",
                "eta_epr_a", "eta_epr_b", "grid", "seed", "physics"}
_INPUT_KEYS = {"kind", "beta", "n", "parity", "s"}
_GRID_KEYS = {"half_width", "n_points"}
_PHYSICS_KEYS = {"g0", "eta_x", "delta", "kappa", "nu_x", "laser", "units",
                 "ratio", "override", "omega_a", "omega_c", "omega_l"}
_LASER_KEYS = {"kind", "peak", "t0", "tau", "samples_t", "samples_v"}


# ---------------------------------------------------------------------------
# config parsing


def _reject_unknown(data: dict, allowed: set, where: str):
    unknown = set(data) - allowed
    if unknown:
        raise ConfigError(f"unknown keys in {where}: {sorted(unknown)}")


def _as_complex(value, where: str) -> complex:
    if isinstance(value, (int, float)):
        return complex(value)
    if (isinstance(value, list) and len(value) == 2
            and all(isinstance(v, (int, float)) for v in value)):
        return complex(value[0], value[1])
    raise ConfigError(f"{where} must be a number or [re, im] pair")


def parse_input_spec(data: dict) -> protocol.InputSpec:
    _reject_unknown(data, _INPUT_KEYS, "input")
    kind = data.get("kind")
    if kind == "coherent":
        return protocol.InputSpec("coherent", beta=_as_complex(data.get("beta", 0), "beta"))
    if kind == "fock":
        n = data.get("n", 0)
        if not isinstance(n, int) or n < 0:
            raise ConfigError("input.n must be a nonnegative integer")
        return protocol.InputSpec("fock", n=n)
    if kind == "cat":
        parity = data.get("parity", "even")
        if parity not in ("even", "odd"):
            raise ConfigError("input.parity must be 'even' or 'odd'")
        return protocol.InputSpec("cat", beta=_as_complex(data.get("beta", 1.0), "beta"),
                                  parity=+1 if parity == "even" else -1)
    if kind == "squeezed":
        s = data.get("s", 0.0)
        if not isinstance(s, (int, float)):
            raise ConfigError("input.s must be a number")
        return protocol.InputSpec("squeezed", s=float(s))
    raise ConfigError(f"input.kind must be one of coherent|fock|cat|squeezed, got {kind!r}")


def parse_config(data: dict, overrides: argparse.Namespace) -> protocol.ProtocolConfig:
    if not isinstance(data, dict):
        raise ConfigError("config root must be a JSON object")
    _reject_unknown(data, _CONFIG_KEYS, "config")
    merged = dict(data)
    for key in ("r", "gain", "cutoff", "seed"):
        val = getattr(overrides, key.replace("-", "_"), None)
        if val is not None:
            merged[key] = val
    grid_data = dict(merged.get("grid") or {})
    _reject_unknown(grid_data, _GRID_KEYS, "grid")
    if getattr(overrides, "grid_l", None) is not None:
        grid_data["half_width"] = overrides.grid_l
    if getattr(overrides, "grid_n", None) is not None:
        grid_data["n_points"] = overrides.grid_n
    grid = None
    if grid_data:
        try:
            grid = bell.GridSpec(float(grid_data.get("half_width", bell.DEFAULT_HALF_WIDTH)),
                                 int(grid_data.get("n_points", bell.DEFAULT_POINTS)))
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad grid spec: {exc}") from exc
    if "r" not in merged:
        raise ConfigError("config must set r (or pass --r)")
    try:
        config = protocol.ProtocolConfig(
            r=float(merged["r"]),
            cutoff=int(merged.get("cutoff", 40)),
            input=parse_input_spec(merged.get("input", {"kind": "coherent", "beta": 0.5})),
            gain=float(merged.get("gain", 1.0)),
            eta_write=float(merged.get("eta_write", 1.0)),
            eta_read=float(merged.get("eta_read", 1.0)),
            eta_epr_a=float(merged.get("eta_epr_a", 1.0)),
            eta_epr_b=float(merged.get("eta_epr_b", 1.0)),
            grid=grid,
            seed=int(merged.get("seed", 0)),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad config value: {exc}") from exc
    return config


def resolved_config_dict(config: protocol.ProtocolConfig) -> dict:
    grid = config.grid
    return {
        "r": config.r,
        "lambda": config.lam,
        "cutoff": config.cutoff,
        "input": config.input.describe(),
        "gain": config.gain,
        "eta_write": config.eta_write,
        "eta_read": config.eta_read,
        "eta_epr_a": config.eta_epr_a,
        "eta_epr_b": config.eta_epr_b,
        "grid": None if grid is None else {"half_width": grid.half_width,
                                           "n_points": grid.n_points},
        "seed": config.seed,
    }


def parse_physics(data: dict) -> tuple[channels.PhysicalParams, float, bool, str]:
    _reject_unknown(data, _PHYSICS_KEYS, "physics")
    units = data.get("units", "rad/s")
    if units not in ("rad/s", "MHz"):
        raise ConfigError("physics.units must be 'rad/s' or 'MHz'")
    scale = MHZ_TO_RAD_PER_S if units == "MHz" else 1.0
    laser_data = data.get("laser")
    if not isinstance(laser_data, dict):
        raise ConfigError("physics.laser block is required")
    _reject_unknown(laser_data, _LASER_KEYS, "physics.laser")
    try:
        laser = channels.LaserEnvelope(
            kind=laser_data.get("kind", "constant"),
            peak=float(laser_data.get("peak", 0.0)) * scale,
            t0=float(laser_data.get("t0", 0.0)),
            tau=float(laser_data.get("tau", 1.0)),
            samples_t=laser_data.get("samples_t"),
            samples_v=None if laser_data.get("samples_v") is None
            else [v * scale for v in laser_data["samples_v"]],
        )
        for key in ("g0", "eta_x", "delta", "kappa", "nu_x"):
            if key not in data:
                raise ConfigError(f"physics.{key} is required")
        params = channels.PhysicalParams(
            g0=float(data["g0"]) * scale,
            eta_x=float(data["eta_x"]),  # dimensionless
            delta=float(data["delta"]) * scale,
            kappa=float(data["kappa"]) * scale,
            nu_x=float(data["nu_x"]) * scale,
            laser=laser,
            omega_a=None if data.get("omega_a") is None else float(data["omega_a"]) * scale,
            omega_c=None if data.get("omega_c") is None else float(data["omega_c"]) * scale,
            omega_l=None if data.get("omega_l") is None else float(data["omega_l"]) * scale,
        )
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad physics value: {exc}") from exc
    ratio = float(data.get("ratio", channels.DEFAULT_REGIME_RATIO))
    override = bool(data.get("override", False))
    return params, ratio, override, units


# ---------------------------------------------------------------------------
# commands


def _load_json(path: str) -> dict:
    try:
        with open(path) as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc


def _out_path(args, default_name: str) -> str:
    if args.out:
        return args.out
    base = os.environ.get(OUT_DIR_ENV, ".")
    return os.path.join(base, default_name)


def cmd_teleport(args) -> int:
    config = parse_config(_load_json(args.config) if args.config else {}, args)
    resolved = resolved_config_dict(config)
    print(json.dumps({"resolved_config": resolved}, sort_keys=True))
    record = protocol.run_teleport(config, cross_check=args.cross_check)
    payload = serialization.record_to_dict(record, resolved)
    path = _out_path(args, "teleport_record.json")
    serialization.write_json(path, payload)
    serialization.write_sidecar_metadata(path, {"command": "teleport"})
    print(f"teleport: fidelity_post={record.fidelity_post:.6f} "
          f"outcome=({record.outcome.chi_plus:.4f}, {record.outcome.chi_minus:.4f}) "
          f"-> {path}")
    return EXIT_OK


def cmd_fidelity_sweep(args) -> int:
    config = parse_config(_load_json(args.config) if args.config else {}, args)
    resolved = resolved_config_dict(config)
    print(json.dumps({"resolved_config": resolved,
                      "r_values": args.r_values}, sort_keys=True))
    rows = protocol.sweep(config, "r", args.r_values,
                          method="monte-carlo" if args.samples else "grid-exact",
                          n_samples=args.samples or 0,
                          workers=args.workers)
    csv_text = serialization.sweep_rows_to_csv(rows)
    path = _out_path(args, "fidelity_sweep.csv")
    serialization.atomic_write_text(path, csv_text)
    serialization.write_sidecar_metadata(path, {"command": "fidelity-sweep"})
    hard_errors = [r for r in rows if r.error]
    for row in hard_errors:
        print(f"warning: r={row.value}: {row.error}", file=sys.stderr)
    print(f"fidelity-sweep: {len(rows)} rows -> {path}")
    return EXIT_OK


def cmd_density(args) -> int:
    config = parse_config(_load_json(args.config) if args.config else {}, args)
    resolved = resolved_config_dict(config)
    print(json.dumps({"resolved_config": resolved}, sort_keys=True))
    state = protocol.assemble_initial_state(config)
    grid = bell.outcome_density(state, config.grid,
                                victor_mode=protocol.VICTOR,
                                alice_mode=protocol.ALICE)
    path = _out_path(args, "outcome_density.csv")
    serialization.atomic_write_text(path, serialization.grid_to_csv(grid))
    meta = serialization.grid_metadata(grid)
    meta["resolved_config"] = resolved
    serialization.write_json(os.path.splitext(path)[0] + ".json", meta)
    serialization.write_sidecar_metadata(path, {"command": "density"})
    print(f"density: deficit={grid.normalization_deficit:.3e} -> {path}")
    return EXIT_OK


def cmd_validate_physics(args) -> int:
    data = _load_json(args.params)
    params, ratio, override, units = parse_physics(data)
    report = channels.validate_regime(params, ratio)
    out = report.to_dict()
    out["units"] = units
    out["ratio"] = ratio
    out["override_requested"] = override
    if units == "MHz":
        out["gamma_timescale_us"] = report.gamma_timescale * 1e6
    for check in report.checks:
        status = "PASS" if check.passed else "FAIL"
        print(f"{status} {check.name}: ratio {check.ratio:.6g} "
              f"(threshold {check.threshold:.6g})")
    print(f"Gamma_peak = {report.gamma_peak:.6g} 1/s; "
          f"timescale 1/Gamma = {report.gamma_timescale:.6g} s"
          + (f" = {report.gamma_timescale * 1e6:.6g} us" if units == "MHz" else ""))
    if args.out:
        serialization.write_json(args.out, out)
        serialization.write_sidecar_metadata(args.out, {"command": "validate-physics"})
    if not report.passed and not override:
        print("validation failed: " + ", ".join(report.failures()))
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cvteleport",
        description="Simulate continuous-variable teleportation of a trapped "
                    "atom's motional state.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON config path")
        p.add_argument("--out", help="output file path "
                       f"(default under ${OUT_DIR_ENV} or cwd)")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--r", type=float, default=None)
        p.add_argument("--gain", type=float, default=None)
        p.add_argument("--cutoff", type=int, default=None)
        p.add_argument("--grid-l", type=float, default=None, dest="grid_l")
        p.add_argument("--grid-n", type=int, default=None, dest="grid_n")
        p.add_argument("--format", choices=("csv", "json"), default=None,
                       help="payload format where applicable")

    p = sub.add_parser("teleport", help="run the protocol once")
    common(p)
    p.add_argument("--cross-check", action="store_true",
                   help="also run the operator-form projection and record agreement")
    p.set_defaults(func=cmd_teleport)

    p = sub.add_parser("fidelity-sweep", help="average fidelity over r values")
    common(p)
    p.add_argument("r_values", nargs="*", type=float)
    p.add_argument("--samples", type=int, default=None,
                   help="use monte-carlo with this many samples (default grid-exact)")
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_fidelity_sweep)

    p = sub.add_parser("density", help="export the outcome density grid")
    common(p)
    p.set_defaults(func=cmd_density)

    p = sub.add_parser("validate-physics", help="check the validity inequalities")
    p.add_argument("params", help="JSON file with the physics block")
    p.add_argument("--out", help="write the JSON report here")
    p.set_defaults(func=cmd_validate_physics)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CutoffTooSmallError as exc:
        hint = ""
        if exc.required_cutoff is not None:
            hint = f" (hint: set cutoff >= {exc.required_cutoff})"
        print(f"numerical range error: {exc}{hint}", file=sys.stderr)
        return EXIT_NUMERIC
    except (GridTooSmallError, QuadratureRangeError, TruncationError) as exc:
        print(f"numerical range error: {exc} "
              "(hint: widen --grid-l / raise --cutoff)", file=sys.stderr)
        return EXIT_NUMERIC
    except RegimeValidationError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
