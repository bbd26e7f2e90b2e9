import math

import numpy as np
import pytest

from fielddla import load_config
from fielddla.core import MediumSpec
from fielddla.physics import thermal_threshold_field

R = 1e-6
EPS_OIL = 22.12e-12
ETA_FIT = 300e-6
OIL = MediumSpec(EPS_OIL, 1e-12, ETA_FIT, 300.0)
E_TH = thermal_threshold_field(R, OIL)


def slot_config(gap_r=40, width_r=120, count=0, field=0.0, dt=1e-3, max_time=1.0, seed=0, extra="",
                electrodes=None):
    """Two full-width plates ``gap_r`` radii apart, R = 1 um, fitted oil."""
    if electrodes is None:
        electrodes = [[0, 0, width_r, 0, field * gap_r * R], [0, gap_r, width_r, gap_r, 0]]
    return load_config(f"""
[geometry]
electrode_segments = {electrodes}
domain_um = [{width_r}, {gap_r}]
[medium]
permittivity_F_m = {EPS_OIL}
dynamic_viscosity_Pa_s = {ETA_FIT}
[particles]
radius_um = 1
count = {count}
[sim]
dt_s = {dt}
max_time_s = {max_time}
seed = {seed}
{extra}
""")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def rel(a, b):
    return abs(a - b) / max(abs(b), 1e-300)


def hypot_rows(a):
    return np.hypot(a[:, 0], a[:, 1])


__all__ = ["R", "EPS_OIL", "ETA_FIT", "OIL", "E_TH", "slot_config", "rel", "hypot_rows", "math"]
