"""Command-line front end: ``simulate``, ``sweep``, ``model`` and ``analyze``.

Exit codes: 0 success, 1 unparseable input (arguments or files), 2 a config
or parameter invariant is violated, 3 the run itself failed.
"""

from __future__ import annotations

import argparse
import logging
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import tomli

from . import analysis, output
from .core import (ConfigError, ConfigParseError, GapGeometry, ModelParams, SimulationConfig,
                   dump_config, load_config)
from .engine import NumericalBlowupError, PlacementError, run_simulation

log = logging.getLogger("fielddla")

EXIT_PARSE, EXIT_CONFIG, EXIT_RUNTIME = 1, 2, 3
SWEEP_PARAMS = ("field", "gap", "concentration", "viscosity")


class CLIError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        sub = self.prog.partition(" ")[2]
        raise CLIError(EXIT_PARSE, f"{sub}: {message}" if sub else message)


# --------------------------------------------------------------------------
# argument helpers

def parse_range(text: str) -> tuple[float, float, float]:
    parts = text.split(":")
    if len(parts) != 3:
        raise CLIError(EXIT_PARSE, f"range {text!r} must be a:b:c")
    try:
        return tuple(float(p) for p in parts)  # type: ignore[return-value]
    except ValueError:
        raise CLIError(EXIT_PARSE, f"range {text!r} has a non-numeric bound") from None


def linspace_arg(text: str) -> np.ndarray:
    """``a:b:n`` -> n evenly spaced values from a to b inclusive."""
    a, b, n = parse_range(text)
    if n != int(n) or n < 1:
        raise CLIError(EXIT_PARSE, f"range {text!r}: point count must be a positive integer")
    return np.linspace(a, b, int(n))


def step_values(a: float, b: float, step: float) -> list[float]:
    """``a, a+step, ...`` up to ``b`` inclusive (a relative 1e-9 slack absorbs rounding)."""
    if step <= 0 or b < a:
        raise CLIError(EXIT_PARSE, "sweep range needs step > 0 and stop >= start")
    n = int(math.floor((b - a) / step * (1 + 1e-9) + 1e-9)) + 1
    return [a + k * step for k in range(n)]


def parse_sweep_param(text: str) -> tuple[str, list[float]]:
    """``name=a:b:step`` or ``name=v1,v2,...``."""
    if "=" not in text:
        raise CLIError(EXIT_PARSE, f"--param {text!r} must look like name=start:stop:step")
    name, spec = text.split("=", 1)
    name = name.strip()
    if name not in SWEEP_PARAMS:
        raise CLIError(EXIT_PARSE, f"--param name must be one of {', '.join(SWEEP_PARAMS)}")
    if ":" in spec:
        values = step_values(*parse_range(spec))
    else:
        try:
            values = [float(v) for v in spec.split(",") if v.strip()]
        except ValueError:
            raise CLIError(EXIT_PARSE, f"--param {text!r}: non-numeric value") from None
    if not values:
        raise CLIError(EXIT_PARSE, f"--param {text!r}: no values")
    return name, values


def read_text(path: str) -> str:
    try:
        return Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise CLIError(EXIT_PARSE, f"cannot read {path}: {exc.strerror or exc}") from None


def read_config(path: str) -> SimulationConfig:
    return load_config(read_text(path))


MODEL_KEYS = {
    "gap_m": "gap_length", "particle_radius_m": "particle_radius", "mean_spacing_m": "mean_spacing",
    "field_V_per_m": "field", "accretion_count": "accretion_count", "growth_dimension": "growth_dimension",
    "medium_permittivity_F_m": "medium_permittivity", "dynamic_viscosity_Pa_s": "dynamic_viscosity",
    "cm_factor": "cm_factor",
}


def load_model_params(text: str, default_field: float = 1.0) -> ModelParams:
    """Model parameters from a flat TOML document with SI, unit-suffixed keys."""
    try:
        doc = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        raise ConfigParseError(f"params parse error: {exc}") from None
    doc = doc.get("model", doc)
    unknown = set(doc) - set(MODEL_KEYS)
    if unknown:
        raise ConfigParseError(f"unknown model key(s): {', '.join(sorted(unknown))}")
    for key in ("gap_m", "particle_radius_m", "mean_spacing_m"):
        if key not in doc:
            raise ConfigError(MODEL_KEYS[key], f"{key} is required")
    kwargs = {}
    for key, name in MODEL_KEYS.items():
        if key in doc:
            v = doc[key]
            if not isinstance(v, (int, float)) or isinstance(v, bool):
                raise ConfigParseError(f"{key} must be a number")
            kwargs[name] = int(v) if name == "accretion_count" else float(v)
    kwargs.setdefault("field", default_field)
    return ModelParams(**kwargs)


# --------------------------------------------------------------------------
# sweep parameter application

def apply_param(cfg: SimulationConfig, name: str, value: float) -> SimulationConfig:
    if name == "viscosity":
        return cfg.with_(medium=replace(cfg.medium, dynamic_viscosity=value))
    if name == "concentration":
        return cfg.with_(dispersion=replace(cfg.dispersion, count=None, mass_concentration=value,
                                            mean_spacing=None))
    g = cfg.geometry
    if name == "field":
        base = g.baseline_field
        if base == 0:
            raise ConfigError("field", "base config has zero field, so it cannot be rescaled")
        k = value / base
        electrodes = tuple(replace(e, potential=e.potential * k) for e in g.electrodes)
        return cfg.with_(geometry=replace(g, electrodes=electrodes))
    if name == "gap":
        return cfg.with_(geometry=_regap(g, value))
    raise ConfigError("param", f"unknown sweep parameter {name!r}")


def _regap(g: GapGeometry, gap: float) -> GapGeometry:
    """Move the second reference electrode (and everything beyond it) to set the gap."""
    a, b = (g.electrodes[i] for i in g.reference)
    if a.horizontal and b.horizontal:
        axis = 1
        lo, hi = sorted((a.y0, b.y0))
    elif not a.horizontal and not b.horizontal:
        axis = 0
        lo, hi = sorted((a.x0, b.x0))
    else:
        raise ConfigError("gap", "gap sweeps need two parallel reference electrodes")
    shift = gap - (hi - lo)
    moved = []
    for e in g.electrodes:
        c = (e.y0, e.y1) if axis else (e.x0, e.x1)
        if min(c) >= hi - 1e-15:
            e = replace(e, y0=e.y0 + shift, y1=e.y1 + shift) if axis else replace(e, x0=e.x0 + shift, x1=e.x1 + shift)
        moved.append(e)
    domain = list(g.domain)
    domain[axis] += shift
    return GapGeometry(tuple(moved), gap, tuple(domain), g.reference)


def _sweep_one(args):
    cfg_text, name, value, seed = args
    cfg = apply_param(load_config(cfg_text), name, value)
    res = run_simulation(cfg, seed=seed, keep_snapshots=False)
    t_max = res.t_max if res.bridged else cfg.max_time  # censored at the cutoff
    return (value, seed, res.t_min, t_max, res.g_max)


# --------------------------------------------------------------------------
# subcommands

def cmd_simulate(ns) -> int:
    cfg = read_config(ns.config)
    if ns.workers is not None:
        cfg = cfg.with_(workers=ns.workers)
    seed = cfg.seed if ns.seed is None else ns.seed
    cfg = cfg.with_(seed=seed)
    out = Path(ns.out or cfg.output.out_dir or ".")
    res = run_simulation(cfg, seed=seed)
    output.atomic_write_text(out / "config.toml", dump_config(cfg.with_(workers=1)))
    summary = output.write_run(out, res, cfg, seed)
    log.info("bridged=%s t_min=%s t_max=%s", summary["bridged"], summary["t_min_s"], summary["t_max_s"])
    return 0


def cmd_sweep(ns) -> int:
    text = read_text(ns.config)
    base = load_config(text)
    name, values = parse_sweep_param(ns.param)
    if ns.replicates < 1:
        raise CLIError(EXIT_PARSE, "--replicates must be >= 1")
    for v in values:  # validate every point before running any
        apply_param(base, name, v)
    jobs = [(text, name, v, base.seed + r) for v in values for r in range(ns.replicates)]
    if ns.jobs > 1:
        with ProcessPoolExecutor(ns.jobs) as pool:
            rows = list(pool.map(_sweep_one, jobs))
    else:
        rows = [_sweep_one(j) for j in jobs]
    rows.sort(key=lambda r: (r[0], r[1]))
    output.write_csv(Path(ns.out) / "sweep.csv", output.SWEEP_HEADER, rows)
    return 0


def cmd_model(ns) -> int:
    params = load_model_params(read_text(ns.params))
    out = Path(ns.out)
    if ns.field_range:
        fields = linspace_arg(ns.field_range)
        if np.any(fields <= 0):
            raise ConfigError("field", "field values must be > 0")
        closed = [(xi, analysis.bridging_time_closed_form(params.with_(field=float(xi)), ns.prefactor))
                  for xi in fields]
        output.write_csv(out / "tau_b_closed.csv", output.FIELD_CURVE_HEADER, closed)
        output.write_csv(out / "tau_b_series.csv", output.FIELD_CURVE_HEADER,
                         analysis.model_curve(params, fields, series=True))
    if ns.spacing_range:
        spacings = linspace_arg(ns.spacing_range)
        closed = [(r0, analysis.bridging_time_closed_form(params.with_(mean_spacing=float(r0)), ns.prefactor))
                  for r0 in spacings]
        output.write_csv(out / "tau_b_vs_r0_closed.csv", output.SPACING_CURVE_HEADER, closed)
        output.write_csv(out / "tau_b_vs_r0_series.csv", output.SPACING_CURVE_HEADER,
                         analysis.spacing_curve(params, spacings, series=True))
    if not ns.field_range and not ns.spacing_range:
        raise CLIError(EXIT_PARSE, "model needs --field-range and/or --spacing-range")
    return 0


def _pick_aggregate(snap: dict, cluster: Optional[int]) -> np.ndarray:
    labels = snap["cluster"]
    if cluster is None:
        ids, counts = np.unique(labels, return_counts=True)
        cluster = int(ids[np.argmax(counts)])
    sel = labels == cluster
    if not sel.any():
        raise CLIError(EXIT_CONFIG, f"cluster {cluster} not present in the snapshot")
    return snap["pos"][sel]


def cmd_analyze(ns) -> int:
    try:
        snaps = output.read_snapshots(ns.snapshot)
    except OSError as exc:
        raise CLIError(EXIT_PARSE, f"cannot read {ns.snapshot}: {exc.strerror or exc}") from None
    except (ValueError, KeyError) as exc:
        raise CLIError(EXIT_PARSE, f"malformed snapshot file: {exc}") from None
    if not snaps:
        raise CLIError(EXIT_PARSE, "snapshot file holds no records")
    if ns.radius_m is not None:
        R = ns.radius_m
    elif ns.config is not None:
        R = read_config(ns.config).dispersion.particle_radius
    else:
        raise CLIError(EXIT_PARSE, "analyze needs --radius-m or --config to know the particle radius")
    if R <= 0:
        raise ConfigError("radius", "must be > 0")
    t = max(snaps) if ns.time is None else min(snaps, key=lambda s: abs(s - ns.time))
    pos = _pick_aggregate(snaps[t], ns.cluster)
    doc = {"schema_version": output.SCHEMA_VERSION, "time_s": t, "n_particles": int(len(pos)),
           "radius_m": R}
    ok = 0
    for key, fn in (("area_law", analysis.fractal_dimension_area),
                    ("box_count", analysis.fractal_dimension_boxcount)):
        try:
            est = fn(pos, R)
            doc[key] = {"gamma": est.gamma, "fit_points": [list(p) for p in est.fit_points]}
            ok += 1
        except analysis.DegenerateGeometryError as exc:
            doc[key] = {"gamma": None, "error": str(exc)}
    output.write_json(Path(ns.out) / "gamma.json", doc)
    if not ok:
        raise CLIError(EXIT_RUNTIME, "both estimators rejected the aggregate as degenerate")
    return 0


# --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="fielddla", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("simulate", help="run one simulation")
    s.add_argument("--config", required=True)
    s.add_argument("--seed", type=int)
    s.add_argument("--workers", type=int)
    s.add_argument("--out")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("sweep", help="replicated runs over one parameter")
    s.add_argument("--config", required=True)
    s.add_argument("--param", required=True, help="name=start:stop:step or name=v1,v2 (SI units)")
    s.add_argument("--replicates", type=int, default=1)
    s.add_argument("--jobs", type=int, default=1, help="worker processes")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_sweep)

    s = sub.add_parser("model", help="analytical bridging-time curves")
    s.add_argument("--params", required=True)
    s.add_argument("--field-range", help="a:b:n field values in V/m")
    s.add_argument("--spacing-range", help="a:b:n mean spacings in m")
    s.add_argument("--prefactor", choices=("printed", "consistent"), default="printed")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_model)

    s = sub.add_parser("analyze", help="fractal dimension of a snapshot aggregate")
    s.add_argument("--snapshot", required=True)
    s.add_argument("--radius-m", type=float)
    s.add_argument("--config")
    s.add_argument("--time", type=float, help="snapshot time (default: last)")
    s.add_argument("--cluster", type=int, help="cluster label (default: largest)")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_analyze)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        ns = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if ns.verbose else logging.WARNING,
                            format="%(levelname)s %(message)s")
        return ns.func(ns)
    except CLIError as exc:
        code, msg = exc.code, str(exc)
    except ConfigParseError as exc:
        code, msg = EXIT_PARSE, str(exc)
    except ConfigError as exc:
        code, msg = EXIT_CONFIG, f"invalid config: {exc}"
    except (PlacementError, NumericalBlowupError, analysis.DegenerateGeometryError, OSError,
            RuntimeError, ValueError) as exc:
        code, msg = EXIT_RUNTIME, f"run failed: {exc}"
    print(f"fielddla: {' '.join(msg.splitlines())}", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
