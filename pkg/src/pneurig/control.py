"""Timed control programs: the firmware replacement for the rig.

A program is a list of timed items. `AT <t> <action>` schedules a single
command; `LOOP <n> PERIOD <T> { ... }` repeats a body of relative-time
commands n times, T seconds apart. All top-level items are anchored at
program start (loops included), so several loops run interleaved.

Program text grammar (keywords case-insensitive, '#' comments to end of line):

    stmt   := 'AT' NUM action
            | 'LOOP' INT 'PERIOD' NUM '{' (at ...) '}'
    action := 'REG' INT 'SET' NUM | 'VALVE' INT ('OPEN'|'CLOSE') | 'END'

Execution semantics: every command fires exactly once, in non-decreasing
due-time order, no matter how irregularly the host ticks; commands whose due
time has passed fire on the next tick rather than being dropped. An explicit
END halts the program and discards anything scheduled after it.
"""

from __future__ import annotations

import heapq
import re
from dataclasses import dataclass, field


class PinMappingError(ValueError):
    """Raised for pins absent from the PinMap."""


# ---------------------------------------------------------------------------
# Commands and programs
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SetRegulator:
    channel: int
    kpa: float


@dataclass(frozen=True)
class SetValve:
    channel: int
    open: bool


@dataclass(frozen=True)
class End:
    pass


Command = SetRegulator | SetValve | End


@dataclass(frozen=True)
class At:
    """A command due at an absolute (top level) or loop-relative time, seconds."""

    time: float
    command: Command


@dataclass(frozen=True)
class Loop:
    count: int
    period: float
    body: tuple[At, ...]


TimedItem = At | Loop


@dataclass(frozen=True)
class Program:
    items: tuple[TimedItem, ...] = ()


@dataclass(frozen=True)
class Diagnostic:
    """A problem found while parsing or validating; line/col are 1-based
    (0 when the diagnostic is not tied to a source position)."""

    line: int
    col: int
    message: str

    def __str__(self):
        if self.line:
            return f"{self.line}:{self.col}: {self.message}"
        return self.message


def _item_start(item: TimedItem) -> float:
    if isinstance(item, At):
        return item.time
    return min((at.time for at in item.body), default=0.0)


def _normalize(items: list[TimedItem]) -> tuple[TimedItem, ...]:
    # Stable sort by first due time; ties keep source order, which is also
    # the scheduler's tie-break.
    return tuple(sorted(items, key=_item_start))


def program_duration(program: Program) -> float:
    """Nominal schedule length: latest At time, or count*period for loops."""
    duration = 0.0
    for item in program.items:
        if isinstance(item, At):
            duration = max(duration, item.time)
        else:
            duration = max(duration, item.count * item.period)
    return duration


# ---------------------------------------------------------------------------
# Parsing
# ---------------------------------------------------------------------------

_TOKEN_RE = re.compile(r"[{}]|[^\s{}]+")
_NUM_RE = re.compile(r"^\d+(\.\d+)?$")
_INT_RE = re.compile(r"^\d+$")
_NEG_RE = re.compile(r"^-\d+(\.\d+)?$")


@dataclass(frozen=True)
class _Token:
    text: str
    line: int
    col: int


def _tokenize(text: str) -> list[_Token]:
    tokens = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        hash_pos = line.find("#")
        if hash_pos >= 0:
            line = line[:hash_pos]
        for m in _TOKEN_RE.finditer(line):
            tokens.append(_Token(m.group(), lineno, m.start() + 1))
    return tokens


class _Parser:
    def __init__(self, tokens: list[_Token]):
        self.tokens = tokens
        self.pos = 0
        self.diagnostics: list[Diagnostic] = []

    def peek(self) -> _Token | None:
        return self.tokens[self.pos] if self.pos < len(self.tokens) else None

    def take(self) -> _Token | None:
        tok = self.peek()
        if tok is not None:
            self.pos += 1
        return tok

    def error(self, tok: _Token | None, message: str) -> None:
        if tok is None:
            last = self.tokens[-1] if self.tokens else _Token("", 1, 1)
            self.diagnostics.append(Diagnostic(last.line, last.col, message))
        else:
            self.diagnostics.append(Diagnostic(tok.line, tok.col, message))

    def recover(self) -> None:
        """Skip to the next statement start so later lines still get checked."""
        while (tok := self.peek()) is not None:
            if tok.text.upper() in ("AT", "LOOP"):
                return
            self.pos += 1

    def keyword(self, expected: str) -> bool:
        tok = self.take()
        if tok is None or tok.text.upper() != expected:
            self.error(tok, f"expected {expected}")
            return False
        return True

    def number(self, what: str) -> float | None:
        tok = self.take()
        if tok is None:
            self.error(tok, f"expected {what}")
            return None
        if _NEG_RE.match(tok.text):
            self.error(tok, f"negative {what} {tok.text}")
            return None
        if not _NUM_RE.match(tok.text):
            self.error(tok, f"expected {what}, got '{tok.text}'")
            return None
        return float(tok.text)

    def channel(self) -> int | None:
        tok = self.take()
        if tok is None or not _INT_RE.match(tok.text):
            self.error(tok, "expected channel number")
            return None
        ch = int(tok.text)
        if ch < 1:
            self.error(tok, f"channel {ch} out of range (channels are 1-based)")
            return None
        return ch

    def action(self) -> Command | None:
        tok = self.take()
        if tok is None:
            self.error(tok, "expected REG, VALVE, or END")
            return None
        word = tok.text.upper()
        if word == "REG":
            ch = self.channel()
            if ch is None or not self.keyword("SET"):
                return None
            kpa = self.number("setpoint")
            if kpa is None:
                return None
            return SetRegulator(ch, kpa)
        if word == "VALVE":
            ch = self.channel()
            if ch is None:
                return None
            state_tok = self.take()
            word = state_tok.text.upper() if state_tok else ""
            if word not in ("OPEN", "CLOSE"):
                self.error(state_tok, "expected OPEN or CLOSE")
                return None
            return SetValve(ch, word == "OPEN")
        if word == "END":
            return End()
        self.error(tok, f"expected REG, VALVE, or END, got '{tok.text}'")
        return None

    def at(self) -> At | None:
        # Caller consumed the AT keyword.
        t = self.number("time")
        if t is None:
            return None
        cmd = self.action()
        if cmd is None:
            return None
        return At(t, cmd)

    def loop(self) -> Loop | None:
        tok = self.take()
        if tok is None or not _INT_RE.match(tok.text):
            self.error(tok, "expected loop count")
            return None
        count = int(tok.text)
        if count < 1:
            self.error(tok, f"loop count must be >= 1, got {count}")
            return None
        if not self.keyword("PERIOD"):
            return None
        period_tok = self.peek()
        period = self.number("period")
        if period is None:
            return None
        if period <= 0:
            self.error(period_tok, f"period must be > 0, got {period}")
            return None
        brace = self.take()
        if brace is None or brace.text != "{":
            self.error(brace, "expected '{'")
            return None
        body: list[At] = []
        while True:
            tok = self.peek()
            if tok is None:
                self.error(tok, "unterminated loop body, expected '}'")
                return None
            if tok.text == "}":
                self.take()
                break
            if tok.text.upper() != "AT":
                self.error(tok, f"expected AT or '}}' in loop body, got '{tok.text}'")
                return None
            at_tok = self.take()
            time_tok = self.peek()
            entry = self.at()
            if entry is None:
                return None
            if entry.time >= period:
                self.error(time_tok or at_tok,
                           f"time {_fmt_num(entry.time)} >= period {_fmt_num(period)}")
                return None
            body.append(entry)
        return Loop(count, period, tuple(body))

    def parse(self) -> list[TimedItem]:
        items: list[TimedItem] = []
        while (tok := self.take()) is not None:
            word = tok.text.upper()
            if word == "AT":
                entry = self.at()
                if entry is None:
                    self.recover()
                    continue
                items.append(entry)
            elif word == "LOOP":
                entry = self.loop()
                if entry is None:
                    self.recover()
                    continue
                items.append(entry)
            else:
                self.error(tok, f"expected AT or LOOP, got '{tok.text}'")
                self.recover()
        return items


def parse_program(text: str) -> tuple[Program | None, list[Diagnostic]]:
    """Parse program text. Returns (program, []) on success or
    (None, diagnostics) when anything is wrong."""
    parser = _Parser(_tokenize(text))
    items = parser.parse()
    if parser.diagnostics:
        return None, parser.diagnostics
    return Program(_normalize(items)), []


# ---------------------------------------------------------------------------
# Rendering
# ---------------------------------------------------------------------------

def _fmt_num(x: float) -> str:
    # repr round-trips; guarantee plain decimal with at least one fractional digit.
    s = repr(float(x))
    if "e" in s or "E" in s:
        s = f"{x:.12f}".rstrip("0")
        if s.endswith("."):
            s += "0"
    if "." not in s:
        s += ".0"
    return s


def _render_command(cmd: Command) -> str:
    if isinstance(cmd, SetRegulator):
        return f"REG {cmd.channel} SET {_fmt_num(cmd.kpa)}"
    if isinstance(cmd, SetValve):
        return f"VALVE {cmd.channel} {'OPEN' if cmd.open else 'CLOSE'}"
    return "END"


def render_program(program: Program) -> str:
    """Canonical text form; parse_program(render_program(p)) == p."""
    lines: list[str] = []
    for item in program.items:
        if isinstance(item, At):
            lines.append(f"AT {_fmt_num(item.time)} {_render_command(item.command)}")
        else:
            lines.append(f"LOOP {item.count} PERIOD {_fmt_num(item.period)} {{")
            for at in item.body:
                lines.append(f"  AT {_fmt_num(at.time)} {_render_command(at.command)}")
            lines.append("}")
    if not lines:
        return ""
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Validation against rig limits
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ProgramLimits:
    n_channels: int = 5
    regulator_max: float = 500.0
    max_duration: float = 3600.0


def validate_program(program: Program, limits: ProgramLimits = ProgramLimits()) -> list[Diagnostic]:
    """Semantic checks the grammar cannot do: channel existence, setpoint
    ceiling, total duration. Empty result means the program is runnable."""
    diags: list[Diagnostic] = []

    def check_command(cmd: Command) -> None:
        if isinstance(cmd, (SetRegulator, SetValve)):
            if cmd.channel > limits.n_channels:
                diags.append(Diagnostic(0, 0, f"unknown channel {cmd.channel}"))
        if isinstance(cmd, SetRegulator) and cmd.kpa > limits.regulator_max:
            diags.append(Diagnostic(
                0, 0,
                f"setpoint {cmd.kpa:g} exceeds regulator_max {limits.regulator_max:g}",
            ))

    for item in program.items:
        if isinstance(item, At):
            check_command(item.command)
        else:
            for at in item.body:
                check_command(at.command)
    duration = program_duration(program)
    if duration > limits.max_duration:
        diags.append(Diagnostic(
            0, 0, f"duration {duration:g} s exceeds max_duration {limits.max_duration:g} s"
        ))
    return diags


# ---------------------------------------------------------------------------
# Execution
# ---------------------------------------------------------------------------

@dataclass
class ExecState:
    """A running program. The heap holds the next pending event of every
    top-level item: (due_rel, item_idx, occurrence, command). Loop bodies are
    pre-sorted by time so each item's event stream is itself non-decreasing."""

    program: Program
    started_at: float
    running: bool = True
    _heap: list = field(default_factory=list, init=False)
    _bodies: dict = field(default_factory=dict, init=False)

    def __post_init__(self):
        for idx, item in enumerate(self.program.items):
            if isinstance(item, At):
                heapq.heappush(self._heap, (item.time, idx, 0, item.command))
            elif item.body:
                body = tuple(sorted(item.body, key=lambda at: at.time))
                self._bodies[idx] = body
                heapq.heappush(self._heap, (body[0].time, idx, 0, body[0].command))


def start_execution(program: Program, sim_time: float) -> ExecState:
    return ExecState(program=program, started_at=sim_time)


def tick(exec_state: ExecState, sim_time: float) -> list[Command]:
    """Emit every not-yet-emitted command due at or before sim_time, in
    non-decreasing due-time order (ties: program order). Sets running=False
    and appends End after the last item, or at an explicit END."""
    if not exec_state.running:
        return []
    t_rel = sim_time - exec_state.started_at
    heap = exec_state._heap
    out: list[Command] = []
    while heap and heap[0][0] <= t_rel:
        due, idx, occ, cmd = heapq.heappop(heap)
        out.append(cmd)
        if isinstance(cmd, End):
            heap.clear()
            exec_state.running = False
            return out
        item = exec_state.program.items[idx]
        if isinstance(item, Loop):
            body = exec_state._bodies[idx]
            nxt = occ + 1
            if nxt < item.count * len(body):
                iteration, body_idx = divmod(nxt, len(body))
                at = body[body_idx]
                heapq.heappush(
                    heap, (iteration * item.period + at.time, idx, nxt, at.command)
                )
    if not heap and exec_state.running:
        exec_state.running = False
        out.append(End())
    return out


# ---------------------------------------------------------------------------
# Pin mapping
# ---------------------------------------------------------------------------

def _default_regulator_pins() -> dict[int, int]:
    return {pin: pin for pin in range(1, 6)}


def _default_valve_pins() -> dict[int, int]:
    return {pin: pin - 5 for pin in range(6, 11)}


@dataclass(frozen=True)
class PinMap:
    """Microcontroller pin wiring: pins 1-5 drive the regulator channels,
    pins 6-10 drive the valve channels through the transistor array."""

    regulator_pins: dict[int, int] = field(default_factory=_default_regulator_pins)
    valve_pins: dict[int, int] = field(default_factory=_default_valve_pins)

    def __post_init__(self):
        for name, mapping in [("regulator_pins", self.regulator_pins),
                              ("valve_pins", self.valve_pins)]:
            if len(set(mapping.values())) != len(mapping):
                raise ValueError(f"{name} must map pins to distinct channels")
        overlap = set(self.regulator_pins) & set(self.valve_pins)
        if overlap:
            raise ValueError(f"pins {sorted(overlap)} appear in both maps")


_HIGH_WORDS = {"high", "on", "1", "true"}
_LOW_WORDS = {"low", "off", "0", "false"}


def _as_level(value) -> bool:
    if isinstance(value, str):
        word = value.strip().lower()
        if word in _HIGH_WORDS:
            return True
        if word in _LOW_WORDS:
            return False
        raise PinMappingError(f"unrecognized digital level '{value}'")
    return bool(value)


def map_pins(pins: dict, pin_map: PinMap, levels_to_kpa=None) -> list[Command]:
    """Translate raw pin levels into commands. Valve pins take digital levels
    (HIGH opens); regulator pins take numeric levels converted to kPa by
    levels_to_kpa (identity by default)."""
    if levels_to_kpa is None:
        levels_to_kpa = float
    commands: list[Command] = []
    for pin in sorted(pins):
        level = pins[pin]
        if pin in pin_map.valve_pins:
            commands.append(SetValve(pin_map.valve_pins[pin], _as_level(level)))
        elif pin in pin_map.regulator_pins:
            try:
                kpa = levels_to_kpa(level)
            except (TypeError, ValueError) as exc:
                raise PinMappingError(f"pin {pin}: level {level!r} is not numeric") from exc
            commands.append(SetRegulator(pin_map.regulator_pins[pin], kpa))
        else:
            raise PinMappingError(f"pin {pin} is not mapped")
    return commands


# ---------------------------------------------------------------------------
# Pattern generator and presets
# ---------------------------------------------------------------------------

def gen_wave(
    channels: list[int],
    period: float,
    high_kpa: float,
    duty: float,
    phase_frac: float,
    cycles: int = 1,
) -> Program:
    """Phase-offset square wave across channels: each channel closes its valve
    and rises to high_kpa for duty*period, then drops to 0 and vents. Channel
    k (0-based position) is delayed by k*phase_frac*period."""
    if period <= 0:
        raise ValueError(f"period must be > 0, got {period}")
    if not 0.0 < duty < 1.0:
        raise ValueError(f"duty must be in (0, 1), got {duty}")
    if not 0.0 <= phase_frac <= 1.0:
        raise ValueError(f"phase_frac must be in [0, 1], got {phase_frac}")
    if high_kpa < 0:
        raise ValueError(f"high_kpa must be >= 0, got {high_kpa}")
    if cycles < 1:
        raise ValueError(f"cycles must be >= 1, got {cycles}")
    if not channels:
        raise ValueError("channels must be non-empty")
    body: list[At] = []
    for pos, ch in enumerate(channels):
        if ch < 1:
            raise ValueError(f"channel {ch} out of range (channels are 1-based)")
        t_on = (pos * phase_frac * period) % period
        t_off = (t_on + duty * period) % period
        body.append(At(t_on, SetValve(ch, False)))
        body.append(At(t_on, SetRegulator(ch, high_kpa)))
        body.append(At(t_off, SetRegulator(ch, 0.0)))
        body.append(At(t_off, SetValve(ch, True)))
    return Program((Loop(cycles, period, tuple(sorted(body, key=lambda a: a.time))),))


def _preset_fig7_validation() -> Program:
    # Two driven channels square-cycled to 30 kPa, 20 s period, for 400 s;
    # the other three stay idle at zero.
    return gen_wave(channels=[4, 5], period=20.0, high_kpa=30.0,
                    duty=0.5, phase_frac=0.0, cycles=20)


def _preset_diarrhea_seal() -> Program:
    # Seal the outlet channel, pressurize the pusher channel behind it, then
    # release the seal to discharge; repeat.
    body = (
        At(0.0, SetValve(4, False)),
        At(0.0, SetRegulator(4, 40.0)),
        At(5.0, SetValve(5, False)),
        At(5.0, SetRegulator(5, 25.0)),
        At(20.0, SetRegulator(4, 0.0)),
        At(20.0, SetValve(4, True)),
        At(25.0, SetRegulator(5, 0.0)),
        At(25.0, SetValve(5, True)),
    )
    return Program((Loop(5, 30.0, body),))


def _preset_peristaltic_cut() -> Program:
    # A traveling wave over channels 1-3 with the outlet channel cycling
    # closed/open to pinch the stream twice per pass.
    wave = gen_wave(channels=[1, 2, 3], period=6.0, high_kpa=25.0,
                    duty=1.0 / 3.0, phase_frac=1.0 / 3.0, cycles=10)
    occluder = Loop(5, 12.0, (
        At(0.0, SetValve(4, False)),
        At(0.0, SetRegulator(4, 35.0)),
        At(8.0, SetRegulator(4, 0.0)),
        At(8.0, SetValve(4, True)),
    ))
    return Program(_normalize([wave.items[0], occluder]))


_PRESETS = {
    "fig7_validation": _preset_fig7_validation,
    "diarrhea_seal": _preset_diarrhea_seal,
    "peristaltic_cut": _preset_peristaltic_cut,
}

PRESET_NAMES = tuple(sorted(_PRESETS))


def preset(name: str) -> Program:
    """Built-in named program. Raises ValueError for unknown names."""
    try:
        factory = _PRESETS[name]
    except KeyError:
        raise ValueError(
            f"unknown preset '{name}' (known: {', '.join(PRESET_NAMES)})"
        ) from None
    return factory()
