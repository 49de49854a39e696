"""Flat key=value configuration files for the rig.

One `key = value` pair per line, '#' comments, blank lines ignored. Keys are
routed to the owning config by field name (plant and acquisition fields do
not collide); `channel_ids` takes a comma-separated list. Example:

    supply_gauge = 700
    dt = 0.001
    seed = 42
    csv_path = run.csv
    sample_rate = 1000
    clock_mode = realtime
"""

from __future__ import annotations

from dataclasses import fields, replace

from .daq import AcquisitionConfig
from .plant import PlantConfig

_PLANT_INT_FIELDS = {"n_channels", "adc_bits", "seed"}
_PLANT_FIELDS = {f.name for f in fields(PlantConfig)}
_ACQ_FIELDS = {f.name for f in fields(AcquisitionConfig)}


def parse_kv(text: str) -> dict[str, str]:
    """Parse flat key=value text. Raises ValueError with the line number on
    anything that is not `key = value`."""
    result: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected 'key = value', got '{line}'")
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if not key:
            raise ValueError(f"line {lineno}: empty key")
        result[key] = value
    return result


def apply_kv(kv: dict[str, str], plant: PlantConfig,
             acquisition: AcquisitionConfig) -> tuple[PlantConfig, AcquisitionConfig, str | None]:
    """Route parsed keys onto the component configs. Returns the updated
    (plant, acquisition, clock_mode-or-None). Unknown keys raise ValueError."""
    plant_updates: dict = {}
    acq_updates: dict = {}
    clock_mode: str | None = None
    for key, value in kv.items():
        if key in _PLANT_FIELDS:
            if key in _PLANT_INT_FIELDS:
                plant_updates[key] = int(value)
            else:
                plant_updates[key] = float(value)
        elif key == "channel_ids":
            acq_updates[key] = tuple(v.strip() for v in value.split(","))
        elif key == "sample_rate":
            acq_updates[key] = int(value)
        elif key in _ACQ_FIELDS:
            acq_updates[key] = value
        elif key == "clock_mode":
            clock_mode = value
        else:
            raise ValueError(f"unknown configuration key '{key}'")
    if plant_updates:
        plant = replace(plant, **plant_updates)
    if acq_updates:
        acquisition = replace(acquisition, **acq_updates)
    return plant, acquisition, clock_mode


def load_config_file(path: str, plant: PlantConfig | None = None,
                     acquisition: AcquisitionConfig | None = None):
    with open(path, encoding="utf-8") as fh:
        kv = parse_kv(fh.read())
    return apply_kv(kv, plant or PlantConfig(), acquisition or AcquisitionConfig())
