"""The rig gateway: binds plant + control + daq behind a headless batch
runner and a line-oriented JSON protocol service for operator consoles.

The Rig owns the simulation loop. All commands (program-scheduled or
operator-sent) apply between steps, so no observer ever sees a half-applied
command. Commissioning runs in a fixed stage order - power, acquisition,
control, supply - and the air supply is enabled last; until then setpoints
are accepted but nothing can pressurize.

Wire protocol (one JSON object per line, UTF-8, over TCP):
  requests:  hello, configure, set_reg, set_valve, load_program, run, stop,
             daq_start, daq_stop, status_req - each carrying a client "id"
  replies:   ack / err (echoing "id"), state, and
             {"t":"telemetry","t0":s,"dt":s,"rows":[[p1..pn],...]} in kPa gauge.

Clock modes: "realtime" paces simulation time to wall time and steps
continuously; "fast" free-runs and only steps while a program is executing,
which makes a served run byte-reproducible against run_headless. Multiple
clients are allowed; control commands are last-writer-wins.
"""

from __future__ import annotations

import json
import math
import queue
import socket
import sys
import threading
import time
from collections import deque
from dataclasses import dataclass, field, replace

from . import control, daq, plant
from .configio import load_config_file
from .control import (
    Command,
    End,
    PinMap,
    Program,
    ProgramLimits,
    SetRegulator,
    SetValve,
)
from .daq import AcquisitionConfig, AcquisitionSummary
from .plant import PlantConfig

EXIT_OK = 0
EXIT_PROGRAM_ERROR = 2
EXIT_IO_ERROR = 3

_STEP_CHUNK = 2000          # max sim steps per loop iteration in fast mode
_REALTIME_CHUNK = 50        # max catch-up steps per iteration in realtime mode


def _default_metadata() -> dict:
    return {"mains": "110V 50Hz", "dc_rail": "24V"}


@dataclass(frozen=True)
class RigConfig:
    plant: PlantConfig = field(default_factory=PlantConfig)
    acquisition: AcquisitionConfig = field(default_factory=AcquisitionConfig)
    pin_map: PinMap = field(default_factory=PinMap)
    clock_mode: str = "realtime"
    metadata: dict = field(default_factory=_default_metadata)

    def __post_init__(self):
        if self.clock_mode not in ("realtime", "fast"):
            raise ValueError(f"clock_mode must be realtime or fast, got '{self.clock_mode}'")


class StartupError(RuntimeError):
    """Commissioning failed; .stage names the stage that aborted."""

    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"startup aborted at stage '{stage}': {cause}")
        self.stage = stage
        self.cause = cause


class Rig:
    """A commissioned rig with the supply still off; call enable_supply()
    (or use startup_sequence, which does it for you) to finish bring-up."""

    def __init__(self, config: RigConfig):
        self.config = config
        self.stages_done: list[str] = []
        try:
            self.state = plant.new_plant(config.plant)
            plant.set_supply(self.state, config.plant, False)
            self.supply_on = False
        except Exception as exc:
            raise StartupError("power", exc) from exc
        self.stages_done.append("power")
        try:
            self._check_acquisition(config.acquisition)
        except Exception as exc:
            raise StartupError("acquisition", exc) from exc
        self.acquisition = config.acquisition
        self.stages_done.append("acquisition")
        try:
            self.pin_map = config.pin_map
            self.program: Program | None = None
            self.exec: control.ExecState | None = None
        except Exception as exc:
            raise StartupError("control", exc) from exc
        self.stages_done.append("control")
        self.session: daq.AcquisitionSession | None = None
        self.telemetry: daq.TelemetryStream | None = None
        self._daq_start_step = 0
        self._last_summary: AcquisitionSummary | None = None

    def _check_acquisition(self, acq: AcquisitionConfig) -> None:
        step_rate = 1.0 / self.config.plant.dt
        per = step_rate / acq.sample_rate
        if abs(per - round(per)) > 1e-9 or per < 1 - 1e-9:
            raise ValueError(
                f"sample_rate {acq.sample_rate} must divide the simulation rate {step_rate:g}"
            )
        if len(acq.channel_ids) != self.config.plant.n_channels:
            raise ValueError(
                f"need {self.config.plant.n_channels} channel_ids, got {len(acq.channel_ids)}"
            )
        daq.check_csv_path(acq.csv_path)

    # -- commissioning -----------------------------------------------------

    def enable_supply(self) -> None:
        plant.set_supply(self.state, self.config.plant, True)
        self.supply_on = True
        if "supply" not in self.stages_done:
            self.stages_done.append("supply")

    def program_limits(self) -> ProgramLimits:
        return ProgramLimits(
            n_channels=self.config.plant.n_channels,
            regulator_max=self.config.plant.regulator_max,
            max_duration=math.inf,
        )

    # -- program control ----------------------------------------------------

    def load_program(self, source) -> list[control.Diagnostic]:
        """Parse (if text) and validate. The program is stored only when the
        diagnostics come back empty."""
        if isinstance(source, Program):
            program, diags = source, []
        else:
            program, diags = control.parse_program(source)
        if program is not None:
            diags = diags + control.validate_program(program, self.program_limits())
        if not diags and program is not None:
            self.program = program
        return diags

    def start_program(self) -> None:
        if self.program is None:
            raise RuntimeError("no program loaded")
        self.exec = control.start_execution(self.program, self.state.sim_time)

    def stop_program(self) -> None:
        if self.exec is not None:
            self.exec.running = False

    @property
    def program_running(self) -> bool:
        return self.exec is not None and self.exec.running

    # -- acquisition control -------------------------------------------------

    def start_daq(self) -> None:
        if self.session is not None and self.session.active:
            raise RuntimeError("acquisition already active")
        self.session = daq.start_acquisition(
            self.acquisition, self.config.plant.dt, self.config.plant.n_channels
        )
        self.telemetry = self.session.subscribe()
        self._daq_start_step = self.state.steps
        self._last_summary = None

    def stop_daq(self) -> AcquisitionSummary:
        if self.session is None:
            raise RuntimeError("no acquisition session")
        self._last_summary = self.session.stop()
        return self._last_summary

    @property
    def daq_active(self) -> bool:
        return self.session is not None and self.session.active

    # -- stepping ------------------------------------------------------------

    def apply_command(self, cmd: Command) -> list[str]:
        """Apply one control command to the plant. Returns warning strings."""
        warnings: list[str] = []
        if isinstance(cmd, SetRegulator):
            if plant.set_regulator(self.state, self.config.plant, cmd.channel, cmd.kpa):
                warnings.append(
                    f"setpoint {cmd.kpa:g} kPa on channel {cmd.channel} clamped "
                    f"to [0, {self.config.plant.regulator_max:g}]"
                )
        elif isinstance(cmd, SetValve):
            plant.set_valve(self.state, self.config.plant, cmd.channel, cmd.open)
        elif isinstance(cmd, End):
            self.stop_program()
        return warnings

    def step(self, n_steps: int = 1) -> None:
        """Advance the simulation: due program commands apply before each
        step; sensors are sampled on the acquisition grid after it."""
        cfg = self.config.plant
        state = self.state
        for _ in range(n_steps):
            if self.exec is not None and self.exec.running:
                for cmd in control.tick(self.exec, state.sim_time):
                    self.apply_command(cmd)
            plant.step(state, cfg)
            session = self.session
            if session is not None and session.active:
                if (state.steps - self._daq_start_step) % session.steps_per_sample == 0:
                    session.sample(plant.read_all_sensors(state, cfg), state.sim_time)

    def step_while_running(self, max_steps: int) -> int:
        """Advance only while the program executes, halting at the boundary
        where it ends (no step is taken past an End). Returns steps taken."""
        cfg = self.config.plant
        state = self.state
        taken = 0
        while taken < max_steps:
            if self.exec is None or not self.exec.running:
                break
            for cmd in control.tick(self.exec, state.sim_time):
                self.apply_command(cmd)
            if not self.exec.running:
                break
            plant.step(state, cfg)
            taken += 1
            session = self.session
            if session is not None and session.active:
                if (state.steps - self._daq_start_step) % session.steps_per_sample == 0:
                    session.sample(plant.read_all_sensors(state, cfg), state.sim_time)
        return taken

    # -- status ---------------------------------------------------------------

    def status(self) -> dict:
        return {
            "t": "state",
            "sim_time": self.state.sim_time,
            "supply_on": self.supply_on,
            "supply_gauge_kpa": self.state.supply_abs - self.config.plant.atmosphere,
            "setpoints": list(self.state.setpoints),
            "valves": list(self.state.valve_open),
            "program_loaded": self.program is not None,
            "program_running": self.program_running,
            "daq_active": self.daq_active,
            "clock_mode": self.config.clock_mode,
            "acquisition": {
                "csv_path": self.acquisition.csv_path,
                "sample_rate": self.acquisition.sample_rate,
                "terminal_config": self.acquisition.terminal_config,
                "channel_ids": list(self.acquisition.channel_ids),
            },
            "metadata": dict(self.config.metadata),
        }

    # -- protocol ---------------------------------------------------------------

    def handle_message(self, msg) -> tuple[dict, bool]:
        """Dispatch one protocol request. Returns (reply, state_changed);
        state_changed tells the server to broadcast a fresh state frame.
        Never raises: failures become err replies."""
        if not isinstance(msg, dict):
            return _err(None, "frame must be a JSON object"), False
        msg_id = msg.get("id")
        tag = msg.get("t")
        if not isinstance(tag, str):
            return _err(msg_id, "missing message tag 't'"), False
        handler = getattr(self, f"_on_{tag}", None)
        if handler is None:
            return _err(msg_id, "unknown type"), False
        try:
            return handler(msg, msg_id)
        except Exception as exc:
            return _err(msg_id, str(exc)), False

    def _on_hello(self, msg, msg_id):
        return _ack(msg_id), True

    def _on_status_req(self, msg, msg_id):
        frame = self.status()
        frame["id"] = msg_id
        return frame, False

    def _on_set_reg(self, msg, msg_id):
        ch = _get_channel(msg, self.config.plant.n_channels)
        kpa = msg.get("kpa")
        if not isinstance(kpa, (int, float)) or isinstance(kpa, bool):
            raise ValueError("'kpa' must be a number")
        warnings = self.apply_command(SetRegulator(ch, float(kpa)))
        reply = _ack(msg_id)
        if warnings:
            reply["warnings"] = warnings
        return reply, True

    def _on_set_valve(self, msg, msg_id):
        ch = _get_channel(msg, self.config.plant.n_channels)
        open_ = msg.get("open")
        if not isinstance(open_, bool):
            raise ValueError("'open' must be a boolean")
        self.apply_command(SetValve(ch, open_))
        return _ack(msg_id), True

    def _on_load_program(self, msg, msg_id):
        text = msg.get("text")
        if not isinstance(text, str):
            raise ValueError("'text' must be a string")
        diags = self.load_program(text)
        reply = _ack(msg_id)
        reply["diagnostics"] = [
            {"line": d.line, "col": d.col, "message": d.message} for d in diags
        ]
        return reply, not diags

    def _on_run(self, msg, msg_id):
        if self.program is None:
            return _err(msg_id, "no program loaded"), False
        if self.program_running:
            return _err(msg_id, "program already running"), False
        self.start_program()
        return _ack(msg_id), True

    def _on_stop(self, msg, msg_id):
        self.stop_program()
        return _ack(msg_id), True

    def _on_configure(self, msg, msg_id):
        if self.daq_active:
            return _err(msg_id, "acquisition active; stop it before reconfiguring"), False
        updates = {}
        if "csv_path" in msg:
            updates["csv_path"] = msg["csv_path"]
        if "sample_rate" in msg:
            rate = msg["sample_rate"]
            if not isinstance(rate, int) or isinstance(rate, bool):
                raise ValueError("'sample_rate' must be an integer")
            updates["sample_rate"] = rate
        if "terminal_config" in msg:
            updates["terminal_config"] = msg["terminal_config"]
        if "channel_ids" in msg:
            ids = msg["channel_ids"]
            if not isinstance(ids, list) or not all(isinstance(c, str) for c in ids):
                raise ValueError("'channel_ids' must be a list of strings")
            updates["channel_ids"] = tuple(ids)
        candidate = replace(self.acquisition, **updates)
        self._check_acquisition(candidate)
        self.acquisition = candidate
        return _ack(msg_id), True

    def _on_daq_start(self, msg, msg_id):
        self.start_daq()
        return _ack(msg_id), True

    def _on_daq_stop(self, msg, msg_id):
        if self.session is None:
            return _err(msg_id, "no acquisition session"), False
        summary = self.stop_daq()
        reply = _ack(msg_id)
        reply["summary"] = {
            "rows_written": summary.rows_written,
            "duration": summary.duration,
        }
        return reply, True


def _ack(msg_id) -> dict:
    return {"t": "ack", "id": msg_id}


def _err(msg_id, message: str) -> dict:
    return {"t": "err", "id": msg_id, "msg": message}


def _get_channel(msg, n_channels: int) -> int:
    ch = msg.get("ch")
    if not isinstance(ch, int) or isinstance(ch, bool):
        raise ValueError("'ch' must be an integer")
    if not 1 <= ch <= n_channels:
        raise ValueError(f"channel {ch} out of range 1..{n_channels}")
    return ch


def startup_sequence(rig_config: RigConfig) -> Rig:
    """Commission a rig in the fixed stage order and enable the supply last."""
    rig = Rig(rig_config)
    rig.enable_supply()
    return rig


# ---------------------------------------------------------------------------
# Headless runs
# ---------------------------------------------------------------------------

def _resolve_program(source: str) -> tuple[Program | None, list[str]]:
    """CLI program argument: 'preset:NAME' or a .seq file path. Returns
    (program-or-None, error strings); file content errors are reported by
    line."""
    if source.startswith("preset:"):
        try:
            return control.preset(source[len("preset:"):]), []
        except ValueError as exc:
            return None, [str(exc)]
    try:
        with open(source, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        return None, [f"cannot read program: {exc}"]
    program, diags = control.parse_program(text)
    if program is None:
        return None, [f"{source}:{d}" for d in diags]
    return program, []


def run_headless(
    program_source: str,
    duration: float,
    out_csv: str,
    seed: int = 0,
    rate: int = 1000,
    config_path: str | None = None,
    err_stream=None,
) -> int:
    """Batch run: full startup, program executed in fast clock for `duration`
    seconds of simulated time, CSV written. Returns a process exit code
    (0 ok, 2 program errors, 3 I/O errors)."""
    err_stream = err_stream if err_stream is not None else sys.stderr

    def fail(code: int, lines: list[str]) -> int:
        for line in lines:
            print(line, file=err_stream)
        return code

    plant_cfg = PlantConfig()
    acq_cfg = AcquisitionConfig()
    if config_path is not None:
        try:
            plant_cfg, acq_cfg, _ = load_config_file(config_path, plant_cfg, acq_cfg)
        except OSError as exc:
            return fail(EXIT_IO_ERROR, [f"cannot read config: {exc}"])
        except ValueError as exc:
            return fail(EXIT_PROGRAM_ERROR, [f"bad config: {exc}"])
    try:
        plant_cfg = replace(plant_cfg, seed=seed)
        acq_cfg = replace(acq_cfg, csv_path=out_csv, sample_rate=rate)
        rig_config = RigConfig(plant=plant_cfg, acquisition=acq_cfg, clock_mode="fast")
    except ValueError as exc:
        return fail(EXIT_PROGRAM_ERROR, [f"bad config: {exc}"])

    program, errors = _resolve_program(program_source)
    if program is None:
        return fail(EXIT_PROGRAM_ERROR, errors)

    try:
        rig = startup_sequence(rig_config)
    except StartupError as exc:
        code = EXIT_IO_ERROR if isinstance(exc.cause, OSError) else EXIT_PROGRAM_ERROR
        return fail(code, [str(exc)])

    diags = rig.load_program(program)
    if diags:
        return fail(EXIT_PROGRAM_ERROR, [str(d) for d in diags])

    try:
        rig.start_daq()
    except OSError as exc:
        return fail(EXIT_IO_ERROR, [f"cannot open CSV: {exc}"])
    rig.start_program()
    rig.step(round(duration / plant_cfg.dt))
    rig.stop_daq()
    return EXIT_OK


# ---------------------------------------------------------------------------
# Protocol service
# ---------------------------------------------------------------------------

class _Client:
    """One console connection: a reader thread feeding the request queue and
    a writer thread draining a bounded drop-oldest frame queue."""

    def __init__(self, sock: socket.socket, requests: queue.Queue):
        self.sock = sock
        self.requests = requests
        self.alive = True
        self._out: deque[bytes] = deque(maxlen=256)
        self._cond = threading.Condition()
        self.reader = threading.Thread(target=self._read_loop, daemon=True)
        self.writer = threading.Thread(target=self._write_loop, daemon=True)

    def start(self):
        self.reader.start()
        self.writer.start()

    def send(self, frame: dict) -> None:
        data = json.dumps(frame, separators=(",", ":")) + "\n"
        with self._cond:
            self._out.append(data.encode("utf-8"))
            self._cond.notify()

    def close(self):
        if not self.alive:
            return
        self.alive = False
        try:
            self.sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        try:
            self.sock.close()
        except OSError:
            pass
        with self._cond:
            self._cond.notify()

    def _read_loop(self):
        buffer = b""
        while self.alive:
            try:
                data = self.sock.recv(65536)
            except OSError:
                break
            if not data:
                break
            buffer += data
            while b"\n" in buffer:
                line, buffer = buffer.split(b"\n", 1)
                self._handle_line(line)
            if len(buffer) > 1_048_576:
                # Unframed garbage; refuse and hang up.
                self.requests.put(("bad", self, None, "line too long"))
                break
        self.requests.put(("gone", self, None, None))

    def _handle_line(self, line: bytes) -> None:
        line = line.strip()
        if not line:
            return
        try:
            text = line.decode("utf-8")
        except UnicodeDecodeError:
            self.requests.put(("bad", self, None, "invalid utf-8"))
            return
        try:
            msg = json.loads(text)
        except json.JSONDecodeError:
            self.requests.put(("bad", self, None, "invalid json"))
            return
        self.requests.put(("msg", self, msg, None))

    def _write_loop(self):
        while True:
            with self._cond:
                while not self._out and self.alive:
                    self._cond.wait(timeout=0.5)
                if not self.alive and not self._out:
                    return
                data = self._out.popleft() if self._out else None
            if data is not None:
                try:
                    self.sock.sendall(data)
                except OSError:
                    return


class GatewayServer:
    """Serve the rig protocol on a TCP port. One simulation-owner thread;
    network I/O talks to it only through the bounded request queue."""

    def __init__(self, rig_config: RigConfig | None = None, port: int = 0,
                 host: str = "127.0.0.1"):
        self.rig = startup_sequence(rig_config or RigConfig())
        self.clock = self.rig.config.clock_mode
        self._listener = socket.create_server((host, port))
        self.host, self.port = self._listener.getsockname()
        self._requests: queue.Queue = queue.Queue()
        self._clients: list[_Client] = []
        self._clients_lock = threading.Lock()
        self._running = False
        self._accept_thread: threading.Thread | None = None
        self._sim_thread: threading.Thread | None = None

    # -- lifecycle -----------------------------------------------------------

    def start(self) -> "GatewayServer":
        self._running = True
        self._accept_thread = threading.Thread(target=self._accept_loop, daemon=True)
        self._sim_thread = threading.Thread(target=self._sim_loop, daemon=True)
        self._accept_thread.start()
        self._sim_thread.start()
        return self

    def stop(self) -> None:
        self._running = False
        try:
            self._listener.close()
        except OSError:
            pass
        if self._sim_thread is not None:
            self._sim_thread.join(timeout=5.0)
        with self._clients_lock:
            clients = list(self._clients)
        for client in clients:
            client.close()
        if self.rig.daq_active:
            self.rig.stop_daq()

    # -- network -------------------------------------------------------------

    def _accept_loop(self):
        while self._running:
            try:
                conn, _ = self._listener.accept()
            except OSError:
                return
            client = _Client(conn, self._requests)
            with self._clients_lock:
                self._clients.append(client)
            client.start()

    def _broadcast(self, frame: dict) -> None:
        with self._clients_lock:
            clients = list(self._clients)
        for client in clients:
            client.send(frame)

    def _drop_client(self, client: _Client) -> None:
        client.close()
        with self._clients_lock:
            if client in self._clients:
                self._clients.remove(client)

    # -- simulation loop -------------------------------------------------------

    def _pump_telemetry(self) -> None:
        stream = self.rig.telemetry
        if stream is None:
            return
        for batch in stream.drain():
            self._broadcast({
                "t": "telemetry",
                "t0": batch.t0,
                "dt": batch.dt_sample,
                "rows": [list(row) for row in batch.rows],
            })

    def _handle_one(self, kind: str, client: _Client, payload, note) -> None:
        if kind == "gone":
            self._drop_client(client)
            return
        if kind == "bad":
            client.send(_err(None, note))
            if note == "line too long":
                self._drop_client(client)
            return
        reply, state_changed = self.rig.handle_message(payload)
        self._pump_telemetry()  # a daq_stop flushes its final batch first
        client.send(reply)
        if state_changed:
            self._broadcast(self.rig.status())

    def _drain_requests(self, block_for: float | None) -> None:
        try:
            item = self._requests.get(timeout=block_for) if block_for else self._requests.get_nowait()
        except queue.Empty:
            return
        self._handle_one(*item)
        while True:
            try:
                item = self._requests.get_nowait()
            except queue.Empty:
                return
            self._handle_one(*item)

    def _after_steps(self, was_running: bool) -> None:
        self._pump_telemetry()
        if was_running and not self.rig.program_running:
            # The program ended on its own; consoles need the transition.
            self._broadcast(self.rig.status())

    def _sim_loop(self):
        dt = self.rig.config.plant.dt
        if self.clock == "realtime":
            anchor_wall = time.monotonic()
            anchor_steps = self.rig.state.steps
            while self._running:
                self._drain_requests(block_for=None)
                due = int((time.monotonic() - anchor_wall) / dt) - (
                    self.rig.state.steps - anchor_steps
                )
                if due > 0:
                    was_running = self.rig.program_running
                    self.rig.step(min(due, _REALTIME_CHUNK))
                    self._after_steps(was_running)
                else:
                    self._drain_requests(block_for=dt)
        else:
            # Fast clock: free-run, but only while a program executes. A run
            # started right after daq_start therefore begins on the very
            # boundary acquisition started on, which is what makes a served
            # run reproduce a headless one byte for byte.
            while self._running:
                if self.rig.program_running:
                    self._drain_requests(block_for=None)
                    self.rig.step_while_running(_STEP_CHUNK)
                    self._after_steps(True)
                else:
                    self._drain_requests(block_for=0.05)


def serve(port: int, rig_config: RigConfig | None = None, host: str = "127.0.0.1") -> GatewayServer:
    """Start a gateway service; returns the running server. Raises OSError
    when the port is busy."""
    return GatewayServer(rig_config, port, host).start()
