"""Field-induced diffusion-limited aggregation of conductive particles across electrode gaps."""

from .core import (ConfigError, ConfigParseError, DispersionSpec, Electrode, GapGeometry, MediumSpec,
                   ModelParams, ParticleMaterialSpec, SimulationConfig, concentration_to_spacing,
                   dump_config, load_config)

__version__ = "0.1.0"
