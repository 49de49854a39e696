"""Lumped-parameter simulation of a multi-channel pneumatic actuation rig.

A shared compressed-air supply feeds one electro-pneumatic regulator per
channel.  Each regulator node charges a fixed-volume pouch actuator through
a linear orifice with a choked-flow cap; a normally-closed solenoid release
valve vents the actuator to atmosphere.  Pressure sensors read the actuator
nodes through a noisy, quantizing ADC stage.

Model choices:
  - Isothermal ideal gas; actuator pressure is always m*R*T/V of its mass.
  - Fixed-step explicit integration; both orifice flow rates are evaluated
    from start-of-step pressures.
  - The regulator node tracks min(setpoint, supply) with a first-order lag
    (exact exponential update, so arbitrarily small lags stay stable).  Its
    make-up and relief air exchanges with the supply / atmosphere, which are
    outside the mass balance; the node's nominal volume exists only so
    total_mass() can account for it.
  - Internal arithmetic is kPa absolute; every external surface is kPa gauge.

Stepping is single-owner: one caller advances a PlantState at a time.
Identical (config, seed, command sequence) produce bit-identical
trajectories.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass
from typing import NamedTuple


class ConfigurationError(ValueError):
    """Raised when a PlantConfig field is invalid; names the field."""


class ChannelError(ValueError):
    """Raised for channel indices outside 1..n_channels."""


@dataclass(frozen=True)
class PlantConfig:
    """Static parameters of the rig. All pressures in kPa, times in s, SI otherwise."""

    supply_gauge: float = 700.0          # compressor setting, kPa gauge
    n_channels: int = 5
    actuator_volume: float = 5.0e-5      # m^3
    fill_conductance: float = 2.973e-9   # kg/s/Pa, regulator -> actuator
    vent_conductance: float = 5.946e-9   # kg/s/Pa, actuator -> atmosphere
    regulator_tau: float = 0.05          # s, setpoint tracking lag
    regulator_max: float = 500.0         # kPa gauge, setpoint clamp
    regulator_volume: float = 1.0e-6     # m^3, nominal node volume for mass accounting
    gas_constant: float = 287.0          # J/kg/K
    temperature: float = 293.0           # K
    atmosphere: float = 101.325          # kPa absolute
    sensor_noise_sigma: float = 0.2      # kPa
    adc_bits: int = 12
    sensor_range: float = 500.0          # kPa gauge, full scale (zero-based)
    dt: float = 0.001                    # s
    seed: int = 0

    def __post_init__(self):
        positive = [
            ("supply_gauge", self.supply_gauge),
            ("actuator_volume", self.actuator_volume),
            ("regulator_tau", self.regulator_tau),
            ("regulator_max", self.regulator_max),
            ("regulator_volume", self.regulator_volume),
            ("gas_constant", self.gas_constant),
            ("temperature", self.temperature),
            ("atmosphere", self.atmosphere),
            ("sensor_range", self.sensor_range),
            ("dt", self.dt),
        ]
        for name, value in positive:
            if not value > 0.0:
                raise ConfigurationError(f"{name} must be > 0, got {value}")
        # Conductances may be zero (a sealed path) but never negative.
        for name, value in [
            ("fill_conductance", self.fill_conductance),
            ("vent_conductance", self.vent_conductance),
        ]:
            if value < 0.0:
                raise ConfigurationError(f"{name} must be >= 0, got {value}")
        if self.n_channels < 1:
            raise ConfigurationError(f"n_channels must be >= 1, got {self.n_channels}")
        if self.adc_bits < 1:
            raise ConfigurationError(f"adc_bits must be >= 1, got {self.adc_bits}")
        if self.sensor_noise_sigma < 0.0:
            raise ConfigurationError(
                f"sensor_noise_sigma must be >= 0, got {self.sensor_noise_sigma}"
            )
        rt_over_v = self.gas_constant * self.temperature / self.actuator_volume
        for name, value in [
            ("fill_conductance", self.fill_conductance),
            ("vent_conductance", self.vent_conductance),
        ]:
            if self.dt * value * rt_over_v >= 1.0:
                raise ConfigurationError(
                    f"{name} violates explicit-step stability: "
                    f"dt*k*R*T/V = {self.dt * value * rt_over_v:.3g} >= 1"
                )


class _StepConstants(NamedTuple):
    """Per-config constants hoisted out of the stepping loop."""

    n: int
    dt: float
    atm: float
    reg_alpha: float          # 1 - exp(-dt/tau_reg)
    kpa_per_kg: float         # R*T/V in kPa per kg of actuator mass
    k_fill: float
    k_vent: float
    adc_levels: int
    adc_step: float           # kPa per code


def _constants(config: PlantConfig) -> _StepConstants:
    # Cached on the (frozen) config itself: hashing 17 fields per step would
    # dominate the stepping loop.
    cached = getattr(config, "_step_constants", None)
    if cached is not None:
        return cached
    levels = (1 << config.adc_bits) - 1
    c = _StepConstants(
        n=config.n_channels,
        dt=config.dt,
        atm=config.atmosphere,
        reg_alpha=1.0 - math.exp(-config.dt / config.regulator_tau),
        kpa_per_kg=config.gas_constant * config.temperature / config.actuator_volume / 1000.0,
        k_fill=config.fill_conductance,
        k_vent=config.vent_conductance,
        adc_levels=levels,
        adc_step=config.sensor_range / levels,
    )
    object.__setattr__(config, "_step_constants", c)
    return c


@dataclass
class PlantState:
    """The simulated rig at one instant. Mutated in place by the stepping ops."""

    sim_time: float
    atmosphere: float                  # kPa absolute, copied from config
    supply_abs: float                  # kPa absolute
    setpoints: list[float]             # kPa gauge, per channel
    reg_abs: list[float]               # kPa absolute, regulator nodes
    act_mass: list[float]              # kg, actuator gas
    act_abs: list[float]               # kPa absolute, derived m*R*T/V
    valve_open: list[bool]
    rngs: list[random.Random]          # per-sensor noise generators
    steps: int = 0
    clamp_warnings: int = 0

    def gauge(self, channel: int) -> float:
        """True (noise-free) gauge pressure of an actuator, kPa."""
        return self.act_abs[channel - 1] - self.atmosphere


class SensorReading(NamedTuple):
    channel: int      # 1-based
    gauge: float      # kPa, quantized
    raw_code: int     # ADC integer


def new_plant(config: PlantConfig) -> PlantState:
    """Build a plant at rest: actuators at atmosphere, valves closed, supply on."""
    c = _constants(config)
    atm_mass = config.atmosphere * 1000.0 * config.actuator_volume / (
        config.gas_constant * config.temperature
    )
    masses = [atm_mass] * c.n
    return PlantState(
        sim_time=0.0,
        atmosphere=config.atmosphere,
        supply_abs=config.atmosphere + config.supply_gauge,
        setpoints=[0.0] * c.n,
        reg_abs=[config.atmosphere] * c.n,
        act_mass=masses,
        act_abs=[m * c.kpa_per_kg for m in masses],
        valve_open=[False] * c.n,
        rngs=[random.Random(config.seed * 1_000_003 + ch) for ch in range(1, c.n + 1)],
    )


def orifice_flow(p_up: float, p_down: float, k: float) -> float:
    """Mass flow (kg/s) through a linear orifice, choked at pressure ratio 0.528.

    Pressures in kPa absolute, k in kg/s/Pa. Antisymmetric in its pressure
    arguments; zero at equal pressures.
    """
    if p_up >= p_down:
        dp = p_up - p_down
        cap = 0.472 * p_up
        return k * 1000.0 * (dp if dp < cap else cap)
    dp = p_down - p_up
    cap = 0.472 * p_down
    return -(k * 1000.0 * (dp if dp < cap else cap))


def step(state: PlantState, config: PlantConfig) -> PlantState:
    """Advance one time step of config.dt. Returns the same (mutated) state.

    Per channel: the regulator node relaxes toward min(setpoint, supply),
    never exceeding the supply; gas flows regulator -> actuator through the
    fill orifice; an open release valve vents actuator -> atmosphere through
    the vent orifice; actuator pressure is recomputed from its mass.
    """
    c = _constants(config)
    dt = c.dt
    atm = c.atm
    alpha = c.reg_alpha
    supply = state.supply_abs
    setpoints = state.setpoints
    reg = state.reg_abs
    mass = state.act_mass
    pact = state.act_abs
    valves = state.valve_open
    k_fill = c.k_fill * 1000.0
    k_vent = c.k_vent * 1000.0
    kpa_per_kg = c.kpa_per_kg

    # The flow arithmetic below is orifice_flow() inlined; this loop runs a
    # million times per kilosecond of sim time.
    for i in range(c.n):
        target = atm + setpoints[i]
        if target > supply:
            target = supply
        p = reg[i]
        p += (target - p) * alpha
        if p > supply:
            p = supply
        reg[i] = p

        pa = pact[i]
        m = mass[i]
        if p >= pa:
            dp = p - pa
            cap = 0.472 * p
            m += dt * (k_fill * (dp if dp < cap else cap))
        else:
            dp = pa - p
            cap = 0.472 * pa
            m -= dt * (k_fill * (dp if dp < cap else cap))
        if valves[i]:
            if pa >= atm:
                dp = pa - atm
                cap = 0.472 * pa
                m -= dt * (k_vent * (dp if dp < cap else cap))
            else:
                dp = atm - pa
                cap = 0.472 * atm
                m += dt * (k_vent * (dp if dp < cap else cap))
        if m < 0.0:
            m = 0.0
        mass[i] = m
        pact[i] = m * kpa_per_kg

    state.steps += 1
    state.sim_time = state.steps * dt
    return state


def set_regulator(state: PlantState, config: PlantConfig, channel: int, setpoint: float) -> bool:
    """Command a regulator setpoint (kPa gauge). Returns True when clamped."""
    _check_channel(channel, config)
    clamped = min(max(setpoint, 0.0), config.regulator_max)
    state.setpoints[channel - 1] = clamped
    if clamped != setpoint:
        state.clamp_warnings += 1
        return True
    return False


def set_valve(state: PlantState, config: PlantConfig, channel: int, open_: bool) -> PlantState:
    """Open or close a release valve. Idempotent."""
    _check_channel(channel, config)
    state.valve_open[channel - 1] = bool(open_)
    return state


def read_sensor(state: PlantState, config: PlantConfig, channel: int) -> SensorReading:
    """Sample one pressure sensor: true gauge + Gaussian noise, clamped to the
    sensor range and quantized to the ADC grid. Consumes that channel's RNG."""
    _check_channel(channel, config)
    c = _constants(config)
    i = channel - 1
    true_gauge = state.act_abs[i] - c.atm
    if config.sensor_noise_sigma > 0.0:
        true_gauge += state.rngs[i].gauss(0.0, config.sensor_noise_sigma)
    if true_gauge < 0.0:
        true_gauge = 0.0
    elif true_gauge > config.sensor_range:
        true_gauge = config.sensor_range
    code = round(true_gauge / c.adc_step)
    return SensorReading(channel=channel, gauge=code * c.adc_step, raw_code=code)


def read_all_sensors(state: PlantState, config: PlantConfig) -> list[SensorReading]:
    """Sample every channel in index order (read_sensor in bulk)."""
    c = _constants(config)
    atm = c.atm
    adc_step = c.adc_step
    sigma = config.sensor_noise_sigma
    sensor_range = config.sensor_range
    pact = state.act_abs
    rngs = state.rngs
    out = []
    for i in range(c.n):
        g = pact[i] - atm
        if sigma > 0.0:
            g += rngs[i].gauss(0.0, sigma)
        if g < 0.0:
            g = 0.0
        elif g > sensor_range:
            g = sensor_range
        code = round(g / adc_step)
        out.append(SensorReading(i + 1, code * adc_step, code))
    return out


def total_mass(state: PlantState, config: PlantConfig) -> float:
    """Gas mass (kg) held in the accounted volumes: actuators plus the
    regulator nodes at their nominal volume."""
    rt = config.gas_constant * config.temperature
    reg_mass = sum(p * 1000.0 * config.regulator_volume / rt for p in state.reg_abs)
    return sum(state.act_mass) + reg_mass


def set_supply(state: PlantState, config: PlantConfig, on: bool) -> PlantState:
    """Turn the compressed-air supply on (configured gauge) or off (atmosphere)."""
    state.supply_abs = config.atmosphere + (config.supply_gauge if on else 0.0)
    return state


def _check_channel(channel: int, config: PlantConfig) -> None:
    if not 1 <= channel <= config.n_channels:
        raise ChannelError(
            f"channel {channel} out of range 1..{config.n_channels}"
        )
