"""pneurig: a deterministic digital twin of a five-channel pneumatic
soft-actuator rig - plant simulation, timed control programs, data
acquisition with CSV logging and telemetry streaming, and an operator
gateway (CLI + line-oriented JSON protocol)."""

from .control import (
    At,
    Command,
    Diagnostic,
    End,
    ExecState,
    Loop,
    PinMap,
    Program,
    ProgramLimits,
    SetRegulator,
    SetValve,
    gen_wave,
    map_pins,
    parse_program,
    preset,
    render_program,
    start_execution,
    tick,
    validate_program,
)
from .daq import (
    AcquisitionConfig,
    AcquisitionSession,
    AcquisitionSummary,
    ChannelStats,
    SampleBatch,
    TelemetryStream,
    batch_stats,
    start_acquisition,
    stop_acquisition,
    subscribe,
)
from .gateway import (
    GatewayServer,
    Rig,
    RigConfig,
    StartupError,
    run_headless,
    serve,
    startup_sequence,
)
from .plant import (
    ChannelError,
    ConfigurationError,
    PlantConfig,
    PlantState,
    SensorReading,
    new_plant,
    orifice_flow,
    read_sensor,
    set_regulator,
    set_supply,
    set_valve,
    step,
    total_mass,
)

__version__ = "0.1.0"
