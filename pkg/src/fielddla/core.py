"""Configuration, units and the data model shared by the simulator and the model.

Everything is stored in SI units.  The config document is TOML with the
sections ``[geometry] [medium] [particles] [sim] [output]``; lengths are given
in micrometres, concentrations in mg/ml and densities in g/ml unless the SI
twin of a key (``gap_m``, ``radius_m`` ...) is used instead.  ``dump_config``
always writes the SI twins so that a dump/load cycle is exact.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field, fields, replace
from typing import Any, Optional

import tomli
import tomli_w

VACUUM_PERMITTIVITY = 8.8541878128e-12  # F/m
BOLTZMANN = 1.380649e-23  # J/K

DIPOLE_MODELS = ("radial_eq2", "full_point_dipole")
DRAG_MODELS = ("free_draining", "effective_radius")


class ConfigError(ValueError):
    """Raised when a configuration value violates an invariant."""

    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


class ConfigParseError(ValueError):
    """Raised when the config document is not valid TOML or has unknown keys."""


def _require(cond: bool, name: str, message: str) -> None:
    if not cond:
        raise ConfigError(name, message)


@dataclass(frozen=True)
class MediumSpec:
    permittivity: float  # F/m, absolute
    conductivity: float  # S/m
    dynamic_viscosity: float  # Pa s
    temperature: float  # K

    def __post_init__(self):
        _require(self.permittivity >= VACUUM_PERMITTIVITY * (1 - 1e-12), "permittivity",
                 f"must be >= vacuum permittivity, got {self.permittivity!r}")
        _require(self.conductivity >= 0, "conductivity", "must be >= 0")
        _require(self.dynamic_viscosity > 0, "dynamic_viscosity", "must be > 0")
        _require(self.temperature > 0, "temperature", "must be > 0")

    @property
    def kT(self) -> float:
        return BOLTZMANN * self.temperature


@dataclass(frozen=True)
class ParticleMaterialSpec:
    permittivity: float  # F/m
    conductivity: float  # S/m
    mass_density: float  # kg/m^3

    def __post_init__(self):
        _require(self.permittivity > 0, "particle_permittivity", "must be > 0")
        _require(self.conductivity >= 0, "particle_conductivity", "must be >= 0")
        _require(self.mass_density > 0, "particle_density", "must be > 0")


@dataclass(frozen=True)
class Electrode:
    """Axis-aligned segment held at a fixed DC potential."""

    x0: float
    y0: float
    x1: float
    y1: float
    potential: float

    def __post_init__(self):
        _require(self.x0 == self.x1 or self.y0 == self.y1, "electrode_segments",
                 "segments must be axis-aligned")
        # normalise endpoint order
        if (self.x1, self.y1) < (self.x0, self.y0):
            x0, y0 = self.x0, self.y0
            object.__setattr__(self, "x0", self.x1)
            object.__setattr__(self, "y0", self.y1)
            object.__setattr__(self, "x1", x0)
            object.__setattr__(self, "y1", y0)

    @property
    def horizontal(self) -> bool:
        return self.y0 == self.y1

    def distance_to(self, x: float, y: float) -> float:
        cx = min(max(x, self.x0), self.x1)
        cy = min(max(y, self.y0), self.y1)
        return math.hypot(x - cx, y - cy)


def segment_distance(a: Electrode, b: Electrode) -> float:
    """Minimum distance between two axis-aligned segments."""
    dx = max(0.0, max(a.x0, b.x0) - min(a.x1, b.x1))
    dy = max(0.0, max(a.y0, b.y0) - min(a.y1, b.y1))
    return math.hypot(dx, dy)


@dataclass(frozen=True)
class GapGeometry:
    electrodes: tuple[Electrode, ...]
    gap_length: float  # m, distance between the two reference electrodes
    domain: tuple[float, float]  # (width, height) in m, origin at (0, 0)
    reference: tuple[int, int] = (0, 1)

    def __post_init__(self):
        object.__setattr__(self, "electrodes", tuple(self.electrodes))
        object.__setattr__(self, "domain", tuple(float(v) for v in self.domain))
        object.__setattr__(self, "reference", tuple(int(v) for v in self.reference))
        w, h = self.domain
        _require(w > 0 and h > 0, "domain", "width and height must be > 0")
        _require(len(self.electrodes) >= 2, "electrode_segments", "need at least 2 electrodes")
        tol = 1e-12 * max(w, h)
        for e in self.electrodes:
            _require(-tol <= e.x0 and e.x1 <= w + tol and -tol <= e.y0 and e.y1 <= h + tol,
                     "electrode_segments", "segment lies outside the domain")
        for i, a in enumerate(self.electrodes):
            for b in self.electrodes[i + 1:]:
                _require(segment_distance(a, b) > 0, "electrode_segments", "segments overlap or touch")
        i, j = self.reference
        _require(i != j and 0 <= i < len(self.electrodes) and 0 <= j < len(self.electrodes),
                 "reference_electrodes", "must name two distinct electrodes")
        d = segment_distance(self.electrodes[i], self.electrodes[j])
        _require(self.gap_length > 0, "gap_length", "must be > 0")
        _require(math.isclose(d, self.gap_length, rel_tol=1e-9), "gap_length",
                 f"{self.gap_length!r} m does not match reference electrode distance {d!r} m")

    @property
    def voltage(self) -> float:
        i, j = self.reference
        return self.electrodes[i].potential - self.electrodes[j].potential

    @property
    def baseline_field(self) -> float:
        """Parallel-plate field magnitude |V|/d between the reference electrodes."""
        return abs(self.voltage) / self.gap_length

    @property
    def area(self) -> float:
        return self.domain[0] * self.domain[1]


def concentration_to_spacing(mass_concentration: float, material: ParticleMaterialSpec, R: float) -> float:
    """Mean particle spacing r0 = n**(-1/3) from a volumetric mass concentration."""
    if mass_concentration <= 0 or R <= 0:
        raise ValueError("mass_concentration and R must be > 0")
    n = 3.0 * mass_concentration / (4.0 * math.pi * R**3 * material.mass_density)
    return n ** (-1.0 / 3.0)


@dataclass(frozen=True)
class DispersionSpec:
    particle_radius: float  # m
    material: ParticleMaterialSpec
    count: Optional[int] = None
    mass_concentration: Optional[float] = None  # kg/m^3 (== mg/ml)
    mean_spacing: Optional[float] = None  # m, overrides placement density

    def __post_init__(self):
        _require(self.particle_radius > 0, "radius", "must be > 0")
        if self.mean_spacing is None:
            _require((self.count is None) != (self.mass_concentration is None), "count",
                     "give exactly one of count or concentration")
        if self.count is not None:
            _require(int(self.count) == self.count and self.count >= 0, "count",
                     "must be a non-negative integer")
        if self.mass_concentration is not None:
            _require(self.mass_concentration > 0, "concentration", "must be > 0")
        if self.mean_spacing is not None:
            _require(self.mean_spacing > 2 * self.particle_radius, "mean_spacing",
                     "must exceed 2R so particles start non-overlapping")
        elif self.mass_concentration is not None:
            r0 = concentration_to_spacing(self.mass_concentration, self.material, self.particle_radius)
            _require(r0 > 2 * self.particle_radius, "concentration",
                     f"derived spacing {r0:.3e} m is not > 2R")

    def spacing(self, area: Optional[float] = None) -> Optional[float]:
        """Mean spacing r0; from the count this needs the domain area."""
        if self.mean_spacing is not None:
            return self.mean_spacing
        if self.mass_concentration is not None:
            return concentration_to_spacing(self.mass_concentration, self.material, self.particle_radius)
        if self.count and area is not None:
            return math.sqrt(area / self.count)
        return None

    def resolved_count(self, area: float) -> int:
        """Number of particles to place in a planar domain of the given area."""
        if self.count is not None:
            return int(self.count)
        r0 = self.spacing()
        return int(area / r0**2)


@dataclass(frozen=True)
class OutputSpec:
    out_dir: Optional[str] = None
    write_snapshots: bool = False


@dataclass(frozen=True)
class SimulationConfig:
    geometry: GapGeometry
    medium: MediumSpec
    dispersion: DispersionSpec
    dt: float = 1e-3
    max_time: float = 1.0
    sticking_tolerance: float = 0.05
    dipole_force_model: str = "radial_eq2"
    cluster_drag_model: str = "free_draining"
    contact_resistance: float = 1e3
    seed: int = 0
    snapshot_interval: float = 0.1
    field_gradient_step: Optional[float] = None  # m, default R/10
    omega: float = 0.0  # rad/s, 0 is DC
    pair_cutoff: Optional[float] = None  # m, default from the force scale
    field_cutoff: Optional[float] = None  # m, default 25 R
    field_rolloff: Optional[float] = None  # m, band-edge taper width, default R
    cross_section: Optional[float] = None  # m^2, for current density
    growth_dimension: float = 1.8  # only used by the effective_radius drag model
    workers: int = 1
    output: OutputSpec = field(default_factory=OutputSpec)

    def __post_init__(self):
        _require(self.dt > 0, "dt", "must be > 0")
        _require(self.max_time >= self.dt, "max_time", "must be >= dt")
        _require(0 < self.sticking_tolerance < 0.5, "sticking_tolerance", "must lie in (0, 0.5)")
        _require(self.dipole_force_model in DIPOLE_MODELS, "dipole_force_model",
                 f"must be one of {DIPOLE_MODELS}")
        _require(self.cluster_drag_model in DRAG_MODELS, "cluster_drag_model",
                 f"must be one of {DRAG_MODELS}")
        _require(self.contact_resistance > 0, "contact_resistance", "must be > 0")
        _require(0 <= int(self.seed) < 2**64, "seed", "must be a 64-bit unsigned integer")
        _require(self.snapshot_interval > 0, "snapshot_interval", "must be > 0")
        if self.field_gradient_step is not None:
            _require(self.field_gradient_step > 0, "field_gradient_step", "must be > 0")
        _require(self.omega >= 0, "omega", "must be >= 0")
        if self.pair_cutoff is not None:
            _require(self.pair_cutoff > 2 * self.dispersion.particle_radius, "pair_cutoff", "must exceed 2R")
        if self.field_cutoff is not None:
            _require(self.field_cutoff > self.dispersion.particle_radius, "field_cutoff", "must exceed R")
        if self.field_rolloff is not None:
            _require(self.field_rolloff > 0, "field_rolloff", "must be > 0")
        if self.cross_section is not None:
            _require(self.cross_section > 0, "cross_section", "must be > 0")
        _require(1 < self.growth_dimension <= 2, "growth_dimension", "must lie in (1, 2]")
        _require(self.workers >= 1, "workers", "must be >= 1")
        r0 = self.dispersion.spacing(self.geometry.area)
        if r0 is not None:
            _require(r0 > 2 * self.dispersion.particle_radius, "count",
                     "requested density leaves less than 2R mean spacing")

    @property
    def gradient_step(self) -> float:
        if self.field_gradient_step is not None:
            return self.field_gradient_step
        return self.dispersion.particle_radius / 10

    def with_(self, **changes) -> "SimulationConfig":
        return replace(self, **changes)

    def config_hash(self) -> str:
        """Digest of the physics/run settings; worker count and output paths excluded."""
        doc = config_to_dict(self)
        doc["sim"].pop("workers", None)
        doc.pop("output")
        return hashlib.sha256(tomli_w.dumps(doc).encode()).hexdigest()


@dataclass(frozen=True)
class ModelParams:
    """Inputs of the analytical bridging-time model."""

    gap_length: float
    particle_radius: float
    mean_spacing: float
    field: float
    accretion_count: int = 2
    growth_dimension: float = 1.8
    medium_permittivity: float = 22.12e-12
    dynamic_viscosity: float = 300e-6
    cm_factor: float = 1.0

    def __post_init__(self):
        _require(1 <= self.growth_dimension <= 2, "growth_dimension", "must lie in [1, 2] (1 is the straight-chain limit)")
        _require(int(self.accretion_count) == self.accretion_count and self.accretion_count >= 2,
                 "accretion_count", "must be an integer >= 2")
        _require(self.particle_radius > 0, "particle_radius", "must be > 0")
        _require(self.mean_spacing > self.particle_radius, "mean_spacing", "must exceed R")
        _require(self.field > 0, "field", "must be > 0")
        _require(self.gap_length > 0, "gap_length", "must be > 0")
        _require(self.dynamic_viscosity > 0, "dynamic_viscosity", "must be > 0")
        _require(self.medium_permittivity > 0, "medium_permittivity", "must be > 0")

    def with_(self, **changes) -> "ModelParams":
        return replace(self, **changes)


# --------------------------------------------------------------------------
# document parsing

_SECTIONS = {
    "geometry": {"gap_um", "gap_m", "voltage_V", "electrode_segments", "electrode_segments_m",
                 "domain_um", "domain_m", "reference_electrodes"},
    "medium": {"rel_permittivity", "permittivity_F_m", "conductivity_S_m", "dynamic_viscosity_Pa_s",
               "kinematic_viscosity_cS", "density_g_ml", "temperature_K"},
    "particles": {"radius_um", "radius_m", "count", "concentration_mg_ml", "mean_spacing_um",
                  "mean_spacing_m", "particle_density_g_ml", "particle_density_kg_m3",
                  "particle_conductivity_S_m", "particle_rel_permittivity", "particle_permittivity_F_m"},
    "sim": {"dt_s", "max_time_s", "sticking_tolerance", "dipole_force_model", "cluster_drag_model",
            "contact_resistance_ohm", "seed", "snapshot_interval_s", "field_gradient_step_um",
            "field_gradient_step_m", "omega_rad_s", "pair_cutoff_m", "field_cutoff_m", "field_rolloff_m",
            "cross_section_m2", "growth_dimension", "workers"},
    "output": {"out_dir", "write_snapshots"},
}

# documented defaults: silicone oil medium, zinc-like particles
DEFAULTS = {
    "rel_permittivity": 22.12e-12 / VACUUM_PERMITTIVITY,
    "conductivity_S_m": 1e-12,
    "dynamic_viscosity_Pa_s": 0.291,
    "temperature_K": 300.0,
    "radius_um": 1.0,
    "particle_density_g_ml": 7.14,
    "particle_conductivity_S_m": 1.7e7,
    "particle_rel_permittivity": 1.0,
}


def _um(v: float) -> float:
    # division by an exact power of ten is correctly rounded
    return float(v) / 1e6


def _pick(sec: dict, si_key: str, other_key: str, conv, default=None):
    if si_key in sec and other_key in sec:
        raise ConfigError(other_key, f"give only one of {si_key} or {other_key}")
    if si_key in sec:
        return float(sec[si_key])
    if other_key in sec:
        return conv(sec[other_key])
    return default


def load_config(text: str, strict: bool = True) -> SimulationConfig:
    """Parse a TOML config document into a validated :class:`SimulationConfig`."""
    try:
        doc = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        raise ConfigParseError(f"config parse error: {exc}") from None
    for name, sec in doc.items():
        if name not in _SECTIONS:
            if strict:
                raise ConfigParseError(f"unknown section [{name}]")
            continue
        if not isinstance(sec, dict):
            raise ConfigParseError(f"[{name}] must be a table")
        unknown = set(sec) - _SECTIONS[name]
        if unknown and strict:
            raise ConfigParseError(f"unknown key(s) in [{name}]: {', '.join(sorted(unknown))}")
    try:
        return _build(doc)
    except (TypeError, KeyError) as exc:
        raise ConfigParseError(f"malformed value: {exc}") from None


def _build(doc: dict) -> SimulationConfig:
    g = doc.get("geometry", {})
    m = doc.get("medium", {})
    p = doc.get("particles", {})
    s = doc.get("sim", {})
    o = doc.get("output", {})

    gap = _pick(g, "gap_m", "gap_um", _um)
    if "domain_m" in g and "domain_um" in g:
        raise ConfigError("domain_um", "give only one of domain_m or domain_um")
    domain = None
    if "domain_m" in g:
        domain = tuple(float(x) for x in g["domain_m"])
    elif "domain_um" in g:
        domain = tuple(_um(x) for x in g["domain_um"])
    if domain is not None and len(domain) != 2:
        raise ConfigError("domain_um", "must be [width, height]")
    if "electrode_segments" in g or "electrode_segments_m" in g:
        if "electrode_segments_m" in g:
            segs = [tuple(float(v) for v in row) for row in g["electrode_segments_m"]]
        else:
            segs = [tuple(_um(v) for v in row[:4]) + (float(row[4]),) for row in g["electrode_segments"]]
        for row in segs:
            if len(row) != 5:
                raise ConfigError("electrode_segments", "rows must be x0,y0,x1,y1,potential_V")
        electrodes = tuple(Electrode(*row) for row in segs)
        if domain is None:
            raise ConfigError("domain_um", "required when electrode_segments are given")
        reference = tuple(g.get("reference_electrodes", (0, 1)))
        if gap is None:
            i, j = reference
            gap = segment_distance(electrodes[i], electrodes[j])
    else:
        if gap is None:
            raise ConfigError("gap_um", "required")
        if "voltage_V" not in g:
            raise ConfigError("voltage_V", "required when electrode_segments are absent")
        if domain is None:
            domain = (gap, gap)
        w = domain[0]
        volt = float(g["voltage_V"])
        electrodes = (Electrode(0.0, 0.0, w, 0.0, volt), Electrode(0.0, gap, w, gap, 0.0))
        reference = (0, 1)
    geometry = GapGeometry(electrodes, gap, domain, reference)

    eps_m = _pick(m, "permittivity_F_m", "rel_permittivity", lambda v: float(v) * VACUUM_PERMITTIVITY,
                  DEFAULTS["rel_permittivity"] * VACUUM_PERMITTIVITY)
    if "dynamic_viscosity_Pa_s" in m:
        if "kinematic_viscosity_cS" in m or "density_g_ml" in m:
            raise ConfigError("dynamic_viscosity_Pa_s", "give either dynamic or kinematic viscosity")
        eta = float(m["dynamic_viscosity_Pa_s"])
    elif "kinematic_viscosity_cS" in m:
        if "density_g_ml" not in m:
            raise ConfigError("density_g_ml", "required with kinematic_viscosity_cS")
        # 1 cS = 1e-6 m^2/s, 1 g/ml = 1e3 kg/m^3
        eta = float(m["kinematic_viscosity_cS"]) / 1e6 * (float(m["density_g_ml"]) * 1e3)
    else:
        eta = DEFAULTS["dynamic_viscosity_Pa_s"]
    medium = MediumSpec(eps_m, float(m.get("conductivity_S_m", DEFAULTS["conductivity_S_m"])), eta,
                        float(m.get("temperature_K", DEFAULTS["temperature_K"])))

    R = _pick(p, "radius_m", "radius_um", _um, _um(DEFAULTS["radius_um"]))
    rho = _pick(p, "particle_density_kg_m3", "particle_density_g_ml", lambda v: float(v) * 1e3,
                DEFAULTS["particle_density_g_ml"] * 1e3)
    eps_p = _pick(p, "particle_permittivity_F_m", "particle_rel_permittivity",
                  lambda v: float(v) * VACUUM_PERMITTIVITY,
                  DEFAULTS["particle_rel_permittivity"] * VACUUM_PERMITTIVITY)
    material = ParticleMaterialSpec(eps_p, float(p.get("particle_conductivity_S_m",
                                                       DEFAULTS["particle_conductivity_S_m"])), rho)
    spacing = _pick(p, "mean_spacing_m", "mean_spacing_um", _um)
    count = p.get("count")
    conc = p.get("concentration_mg_ml")
    if count is None and conc is None and spacing is None:
        count = 0
    if count is not None and not isinstance(count, int):
        raise ConfigError("count", "must be an integer")
    dispersion = DispersionSpec(R, material, count, None if conc is None else float(conc), spacing)

    kwargs: dict[str, Any] = {}
    simple = {"dt_s": "dt", "max_time_s": "max_time", "sticking_tolerance": "sticking_tolerance",
              "contact_resistance_ohm": "contact_resistance", "snapshot_interval_s": "snapshot_interval",
              "omega_rad_s": "omega", "pair_cutoff_m": "pair_cutoff", "field_cutoff_m": "field_cutoff",
              "field_rolloff_m": "field_rolloff", "cross_section_m2": "cross_section", "growth_dimension": "growth_dimension"}
    for key, name in simple.items():
        if key in s:
            kwargs[name] = float(s[key])
    for key in ("dipole_force_model", "cluster_drag_model"):
        if key in s:
            kwargs[key] = str(s[key])
    for key in ("seed", "workers"):
        if key in s:
            if not isinstance(s[key], int):
                raise ConfigError(key, "must be an integer")
            kwargs[key] = s[key]
    step = _pick(s, "field_gradient_step_m", "field_gradient_step_um", _um)
    if step is not None:
        kwargs["field_gradient_step"] = step
    output = OutputSpec(o.get("out_dir"), bool(o.get("write_snapshots", False)))
    return SimulationConfig(geometry, medium, dispersion, output=output, **kwargs)


def config_to_dict(cfg: SimulationConfig) -> dict:
    """SI-keyed document that :func:`load_config` reads back to an equal config."""
    g = cfg.geometry
    disp = cfg.dispersion
    doc: dict[str, dict] = {
        "geometry": {
            "gap_m": g.gap_length,
            "domain_m": list(g.domain),
            "electrode_segments_m": [[e.x0, e.y0, e.x1, e.y1, e.potential] for e in g.electrodes],
            "reference_electrodes": list(g.reference),
        },
        "medium": {
            "permittivity_F_m": cfg.medium.permittivity,
            "conductivity_S_m": cfg.medium.conductivity,
            "dynamic_viscosity_Pa_s": cfg.medium.dynamic_viscosity,
            "temperature_K": cfg.medium.temperature,
        },
        "particles": {
            "radius_m": disp.particle_radius,
            "particle_density_kg_m3": disp.material.mass_density,
            "particle_conductivity_S_m": disp.material.conductivity,
            "particle_permittivity_F_m": disp.material.permittivity,
        },
        "sim": {},
        "output": {"write_snapshots": cfg.output.write_snapshots},
    }
    if disp.count is not None:
        doc["particles"]["count"] = int(disp.count)
    if disp.mass_concentration is not None:
        doc["particles"]["concentration_mg_ml"] = disp.mass_concentration
    if disp.mean_spacing is not None:
        doc["particles"]["mean_spacing_m"] = disp.mean_spacing
    sim = doc["sim"]
    names = {"dt": "dt_s", "max_time": "max_time_s", "sticking_tolerance": "sticking_tolerance",
             "dipole_force_model": "dipole_force_model", "cluster_drag_model": "cluster_drag_model",
             "contact_resistance": "contact_resistance_ohm", "seed": "seed",
             "snapshot_interval": "snapshot_interval_s", "field_gradient_step": "field_gradient_step_m",
             "omega": "omega_rad_s", "pair_cutoff": "pair_cutoff_m", "field_cutoff": "field_cutoff_m",
             "field_rolloff": "field_rolloff_m", "cross_section": "cross_section_m2", "growth_dimension": "growth_dimension",
             "workers": "workers"}
    for f in fields(cfg):
        if f.name in names:
            v = getattr(cfg, f.name)
            if v is not None:
                sim[names[f.name]] = v
    if cfg.output.out_dir is not None:
        doc["output"]["out_dir"] = cfg.output.out_dir
    return doc


def dump_config(cfg: SimulationConfig) -> str:
    return tomli_w.dumps(config_to_dict(cfg))
