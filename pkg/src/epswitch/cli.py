"""Command-line front end: config-driven experiment dispatch with
deterministic CSV/JSON outputs and a run manifest.

Usage: epswitch --config run.json [--output DIR] [--format csv|json]
                [--workers N] [--seed-section NAME]

The config is a single JSON document selecting exactly one command (scan,
surface, find-ep, loop, evolve) with sub-blocks for the grid, loop path or
search seeds. Unknown keys anywhere are rejected. Environment variables
EPSWITCH_OUTPUT, EPSWITCH_FORMAT and EPSWITCH_WORKERS override the config;
command-line flags override both. Exit codes: 0 success, 2 configuration
error, 3 compute error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time

import numpy as np

from . import __version__
from .errors import ComputeError, ConfigError, EpswitchError, IoError
from .model import SystemParams
from .eptools import ScanGrid, scan_condition_map, search_high_order_ep, classify_ep_order
from .spectral import permutation_cycles, track_spectrum
from .dynamics import (
    adiabatic_coefficients,
    loop_branch_labels,
    locate_loop_ep,
    make_loop_path,
    run_switch_experiment,
)
from .model import explicit_dynamical_matrix

COMMANDS = ("scan", "surface", "find-ep", "loop", "evolve")
_TOP_KEYS = {"command", "params", "grid", "path", "search", "evolve", "output", "format", "parallel"}


def _reject_unknown(block: dict, allowed, context: str):
    unknown = set(block) - set(allowed)
    if unknown:
        raise ConfigError(f"unknown key(s) {sorted(unknown)} in {context}")


def _params_from(block: dict) -> SystemParams:
    try:
        return SystemParams(**block)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid params block: {exc}") from exc


def _grid_from(block: dict, fixed: SystemParams) -> ScanGrid:
    _reject_unknown(block, {"axis1", "axis2"}, "grid")
    axes = []
    for key in ("axis1", "axis2"):
        if key not in block:
            raise ConfigError(f"grid block missing {key}")
        ax = block[key]
        _reject_unknown(ax, {"name", "min", "max", "points"}, f"grid.{key}")
        try:
            axes.append((ax["name"], float(ax["min"]), float(ax["max"]), int(ax["points"])))
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"invalid grid.{key}: {exc}") from exc
    try:
        return ScanGrid(axis1=axes[0], axis2=axes[1], fixed=fixed)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _path_from(block: dict, base: SystemParams):
    allowed = {"center", "radii", "phase", "phase_over_pi", "period",
               "period_dephasing_units", "direction", "samples"}
    _reject_unknown(block, allowed, "path")
    if ("phase" in block) == ("phase_over_pi" in block):
        raise ConfigError("path needs exactly one of 'phase' or 'phase_over_pi'")
    phase = float(block["phase"]) if "phase" in block else float(block["phase_over_pi"]) * np.pi
    if ("period" in block) == ("period_dephasing_units" in block):
        raise ConfigError("path needs exactly one of 'period' or 'period_dephasing_units'")
    if "period" in block:
        period = float(block["period"])
    else:
        if base.gamma1 <= 0:
            raise ConfigError("period_dephasing_units requires gamma1 > 0")
        period = float(block["period_dephasing_units"]) / base.gamma1
    try:
        path = make_loop_path(
            center=block["center"],
            radii=block["radii"],
            phase=phase,
            period=period,
            direction=block.get("direction", "ccw"),
            base_params=base,
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid path block: {exc}") from exc
    return path, int(block.get("samples", 256))


def load_config(path: str, overrides: dict) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a JSON object")
    _reject_unknown(raw, _TOP_KEYS, "config root")

    cfg = dict(raw)
    env = os.environ
    cfg["output"] = overrides.get("output") or env.get("EPSWITCH_OUTPUT") or cfg.get("output", ".")
    cfg["format"] = overrides.get("format") or env.get("EPSWITCH_FORMAT") or cfg.get("format", "csv")
    workers = overrides.get("workers") or env.get("EPSWITCH_WORKERS") or cfg.get("parallel", 1)
    try:
        cfg["parallel"] = int(workers)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid worker count {workers!r}") from exc
    if overrides.get("seed_section"):
        cfg["_seed_section"] = overrides["seed_section"]

    if cfg.get("command") not in COMMANDS:
        raise ConfigError(f"command must be one of {COMMANDS}, got {cfg.get('command')!r}")
    if cfg["format"] not in ("csv", "json"):
        raise ConfigError(f"format must be csv or json, got {cfg['format']!r}")
    if not isinstance(cfg.get("params", {}), dict):
        raise ConfigError("params block must be an object")
    return cfg


def _fmt(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return f"{float(x):.12g}"


def emit(records, header, fmt: str, path: str) -> int:
    """Write a record stream as CSV (single header row, 12 significant
    digits, LF newlines) or as a JSON array of objects with sorted keys.
    Returns the number of records written. Byte-identical for identical
    inputs."""
    tmp = f"{path}.tmp{os.getpid()}"
    rows = list(records)
    try:
        with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
            if fmt == "csv":
                fh.write(",".join(header) + "\n")
                for row in rows:
                    fh.write(",".join(_fmt(v) for v in row) + "\n")
            else:
                payload = [
                    {k: (float(v) if isinstance(v, (np.floating, float)) else int(v) if isinstance(v, (np.integer,)) else v)
                     for k, v in zip(header, row)}
                    for row in rows
                ]
                fh.write(json.dumps(payload, sort_keys=True, indent=2) + "\n")
        os.replace(tmp, path)
    except OSError as exc:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise IoError(f"cannot write {path}: {exc}", path=path) from exc
    return len(rows)


def emit_json(obj, path: str) -> None:
    tmp = f"{path}.tmp{os.getpid()}"
    try:
        with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(json.dumps(obj, sort_keys=True, indent=2, default=_json_default) + "\n")
        os.replace(tmp, path)
    except OSError as exc:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise IoError(f"cannot write {path}: {exc}", path=path) from exc


def _json_default(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        if np.iscomplexobj(obj):
            return {"re": obj.real.tolist(), "im": obj.imag.tolist()}
        return obj.tolist()
    if isinstance(obj, complex):
        return {"re": obj.real, "im": obj.imag}
    raise TypeError(f"not JSON serializable: {type(obj)}")


# ---------------------------------------------------------------------------
# command implementations; each returns a list of (filename, row_count|None)


def _cmd_scan(cfg, params, outdir, record):
    grid = _grid_from(cfg.get("grid") or {}, params)
    table = scan_condition_map(grid, workers=cfg["parallel"])
    a1, a2 = grid.axis_values(1), grid.axis_values(2)
    name = os.path.join(outdir, f"scan.{cfg['format']}")
    rows = (
        (v1, v2, table[i, j])
        for i, v1 in enumerate(a1)
        for j, v2 in enumerate(a2)
    )
    n = emit(rows, (grid.axis1[0], grid.axis2[0], "max_cond_num"), cfg["format"], name)
    record(name, n)


def _cmd_surface(cfg, params, outdir, record):
    grid = _grid_from(cfg.get("grid") or {}, params)
    a1, a2 = grid.axis_values(1), grid.axis_values(2)
    name = os.path.join(outdir, f"surface.{cfg['format']}")

    def rows():
        for v1 in a1:
            for v2 in a2:
                p = params.replace(**{grid.axis1[0]: float(v1), grid.axis2[0]: float(v2)})
                w = np.sort_complex(np.linalg.eigvals(explicit_dynamical_matrix(p)))
                for k, lam in enumerate(w):
                    yield (v1, v2, k + 1, lam.real, lam.imag)

    n = emit(rows(), (grid.axis1[0], grid.axis2[0], "branch", "re_lambda", "im_lambda"),
             cfg["format"], name)
    record(name, n)


def _cmd_loop(cfg, params, outdir, record):
    path, samples = _path_from(cfg.get("path") or {}, params)
    try:
        ep = locate_loop_ep(path)
        labels = loop_branch_labels(path, ep)
    except EpswitchError:
        ep, labels = None, None
    tracked = track_spectrum(
        lambda s: path.params_at(s * path.period),
        n_samples=samples,
        label_order=labels,
    )
    name = os.path.join(outdir, f"loop.{cfg['format']}")
    rows = (
        (s * path.period, k + 1, lam[k].real, lam[k].imag)
        for s, lam in tracked.samples
        for k in range(8)
    )
    n = emit(rows, ("t", "branch", "re_lambda", "im_lambda"), cfg["format"], name)
    record(name, n)
    perm_name = os.path.join(outdir, "permutation.json")
    emit_json(
        {
            "permutation": {str(k): v for k, v in tracked.permutation.items()},
            "cycles": [list(c) for c in permutation_cycles(tracked.permutation)],
            "ep_point": list(ep) if ep is not None else None,
            "encloses_ep": path.encloses(ep) if ep is not None else None,
        },
        perm_name,
    )
    record(perm_name, None)


def _cmd_find_ep(cfg, params, outdir, record):
    block = dict(cfg.get("search") or {})
    _reject_unknown(block, {"order", "free", "seeds", "widen"}, "search")
    try:
        order = int(block["order"])
        free = [str(f) for f in block["free"]]
        seed_sections = block["seeds"]
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid search block: {exc}") from exc
    if not isinstance(seed_sections, dict) or not seed_sections:
        raise ConfigError("search.seeds must be a nonempty object of named seed lists")
    section = cfg.get("_seed_section")
    if section is None:
        if len(seed_sections) > 1:
            raise ConfigError(
                f"multiple seed sections {sorted(seed_sections)}; pick one with --seed-section"
            )
        section = next(iter(seed_sections))
    if section not in seed_sections:
        raise ConfigError(f"seed section {section!r} not in {sorted(seed_sections)}")
    seed_list = []
    for vec in seed_sections[section]:
        if len(vec) != len(free):
            raise ConfigError(f"seed {vec} does not match free parameter list {free}")
        seed_list.append(params.replace(**{n: float(v) for n, v in zip(free, vec)}))

    cand = search_high_order_ep(order, seed_list, free, widen=bool(block.get("widen", True)))
    try:
        classified = classify_ep_order(cand)
    except EpswitchError as exc:
        classified = f"inconclusive: {exc}"
    name = os.path.join(outdir, "ep_candidate.json")
    emit_json(
        {
            "seed_section": section,
            "target_order": order,
            "classified_order": classified,
            "location": cand.location.as_dict(),
            "hp_location": list(cand.hp_location) if cand.hp_location else None,
            "free_params": list(cand.free_params),
            "cluster_diameter_khz": cand.cluster_diameter,
            "float64_diameter_khz": cand.float64_diameter,
            "max_cond_num": cand.max_cond_num,
            "success": cand.success,
        },
        name,
    )
    record(name, None)


def _cmd_evolve(cfg, params, outdir, record):
    path, _ = _path_from(cfg.get("path") or {}, params)
    block = dict(cfg.get("evolve") or {})
    _reject_unknown(
        block,
        {"input", "direction", "dt", "coefficient_samples", "trajectory_samples"},
        "evolve",
    )
    try:
        input_label = int(block.get("input", 1))
        direction = str(block.get("direction", path.direction))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid evolve block: {exc}") from exc

    report = run_switch_experiment(input_label, direction, path,
                                   dt=block.get("dt"))
    name = os.path.join(outdir, "switch_report.json")
    emit_json(
        {
            "input": report.input_label,
            "direction": report.direction,
            "swapped": report.swapped,
            "projections_in": report.projections_in,
            "projections_out": report.projections_out,
            "input_state": report.input_state,
            "output_state": report.output_state,
            "output_state_offdiagonal": report.output_offdiagonal(),
            "input_bloch": report.input_bloch,
            "output_bloch": report.output_bloch,
            "input_scale": report.input_scale,
            "ep_point": list(report.ep_point),
        },
        name,
    )
    record(name, None)

    n_coef = int(block.get("coefficient_samples", 0))
    n_traj = int(block.get("trajectory_samples", 0))
    if n_coef > 0 or n_traj > 0:
        from .dynamics import integrate

        run_path = path.with_direction(direction)
        traj = integrate(report.input_bloch, run_path, dt=block.get("dt"))
        if n_traj > 0:
            idx = np.unique(np.linspace(0, len(traj.times) - 1, n_traj + 1).astype(int))
            tname = os.path.join(outdir, f"trajectory.{cfg['format']}")
            rows = ((traj.times[k], *traj.states[k]) for k in idx)
            n = emit(rows, ("t",) + tuple(f"s{i}" for i in range(1, 9)), cfg["format"], tname)
            record(tname, n)
        if n_coef > 0:
            labels = loop_branch_labels(run_path, report.ep_point)
            traj = adiabatic_coefficients(traj, run_path, labels, n_samples=n_coef)
            cname = os.path.join(outdir, f"coefficients.{cfg['format']}")
            rows = (
                (t, *np.abs(traj.coefficients[k]) ** 2)
                for k, t in enumerate(traj.coefficient_times)
            )
            n = emit(rows, ("t",) + tuple(f"a{i}_sq" for i in range(1, 9)), cfg["format"], cname)
            record(cname, n)


def run(cfg: dict) -> dict:
    """Dispatch a validated config; returns the manifest dict."""
    outdir = cfg["output"]
    os.makedirs(outdir, exist_ok=True)
    params = _params_from(cfg.get("params", {}))
    t0 = time.monotonic()
    handlers = {
        "scan": _cmd_scan,
        "surface": _cmd_surface,
        "loop": _cmd_loop,
        "find-ep": _cmd_find_ep,
        "evolve": _cmd_evolve,
    }
    outputs = []

    def record(name, rows):
        outputs.append((name, rows))

    try:
        handlers[cfg["command"]](cfg, params, outdir, record)
    except (ConfigError, IoError):
        raise
    except EpswitchError as exc:
        # every recorded file was written atomically; remove the partial set
        for name, _ in outputs:
            if os.path.exists(name):
                os.unlink(name)
        raise ComputeError(f"{cfg['command']} failed: {exc}") from exc

    manifest = {
        "command": cfg["command"],
        "config": {k: v for k, v in cfg.items() if not k.startswith("_")},
        "version": __version__,
        "wall_time_s": round(time.monotonic() - t0, 3),
        "outputs": [
            {"path": os.path.basename(name), "rows": rows} for name, rows in outputs
        ],
    }
    emit_json(manifest, os.path.join(outdir, "manifest.json"))
    return manifest


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="epswitch",
        description="Exceptional-point mode-switch experiments for a driven three-level system.",
    )
    parser.add_argument("--config", required=True, help="JSON run configuration")
    parser.add_argument("--output", help="output directory (overrides config)")
    parser.add_argument("--format", choices=("csv", "json"), help="output format (overrides config)")
    parser.add_argument("--workers", type=int, help="parallel worker count (overrides config)")
    parser.add_argument("--seed-section", help="named seed list for find-ep")
    args = parser.parse_args(argv)

    try:
        cfg = load_config(
            args.config,
            {
                "output": args.output,
                "format": args.format,
                "workers": args.workers,
                "seed_section": args.seed_section,
            },
        )
        run(cfg)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except (ComputeError, EpswitchError) as exc:
        print(f"compute error: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
