"""Data acquisition: sample the plant's sensors on a fixed divisor of the
simulation step rate, log rows to CSV, and fan batches out to telemetry
subscribers.

The CSV log and the telemetry stream are independent paths fed by the same
accepted rows: logging is lossless (buffered, flushed on stop), telemetry is
lossy (bounded per-subscriber queues, drop-oldest) and never blocks the
sampler. CSV timestamps come from the session's own sample counter, so a
given (plant seed, program, config) always produces byte-identical files no
matter when the session started.

CSV format: header `time_s,P1_kPa,...`, then one row per sample with every
value printed as %.6f, comma-delimited, '\n' line endings.
"""

from __future__ import annotations

import os
from collections import deque
from dataclasses import dataclass

from .plant import SensorReading

TERMINAL_CONFIGS = ("default", "rse", "nrse", "differential")

_FLUSH_ROWS = 1024           # rows buffered before a file write
_DEFAULT_BATCH_ROWS = 50     # telemetry decimation: 20 batches/s at 1 kHz
_SUBSCRIBER_DEPTH = 64       # batches retained per slow subscriber


class SessionError(RuntimeError):
    """Raised when an operation needs an active acquisition session."""


def default_channel_ids(n_channels: int = 5) -> list[str]:
    return [f"dDAQ2Mod2/ai{i}" for i in range(1, n_channels + 1)]


@dataclass(frozen=True)
class AcquisitionConfig:
    """Operator-facing DAQ settings. terminal_config is recorded but has no
    effect on the simulation (wiring-mode metadata)."""

    csv_path: str = "Y6.csv"
    sample_rate: int = 1000
    terminal_config: str = "default"
    channel_ids: tuple[str, ...] = tuple(default_channel_ids())

    def __post_init__(self):
        object.__setattr__(self, "channel_ids", tuple(self.channel_ids))
        if not self.csv_path:
            raise ValueError("csv_path must be non-empty")
        if self.sample_rate <= 0:
            raise ValueError(f"sample_rate must be > 0, got {self.sample_rate}")
        if self.terminal_config not in TERMINAL_CONFIGS:
            raise ValueError(
                f"terminal_config must be one of {TERMINAL_CONFIGS}, "
                f"got '{self.terminal_config}'"
            )
        if not self.channel_ids or any(not c for c in self.channel_ids):
            raise ValueError("channel_ids must be non-empty strings")


@dataclass(frozen=True)
class SampleBatch:
    t0: float                          # sim time of the first row, s
    dt_sample: float                   # 1 / sample_rate, s
    rows: tuple[tuple[float, ...], ...]  # per-row channel gauges, kPa


@dataclass(frozen=True)
class ChannelStats:
    last: tuple[float, ...]
    minimum: tuple[float, ...]
    maximum: tuple[float, ...]
    mean: tuple[float, ...]


@dataclass(frozen=True)
class AcquisitionSummary:
    rows_written: int
    duration: float


class TelemetryStream:
    """Subscriber handle: a bounded batch queue. Appends from the sampler drop
    the oldest batch when the consumer lags; draining never blocks."""

    def __init__(self, depth: int = _SUBSCRIBER_DEPTH):
        self._batches: deque[SampleBatch] = deque(maxlen=depth)
        self.dropped = 0

    def _push(self, batch: SampleBatch) -> None:
        if len(self._batches) == self._batches.maxlen:
            self.dropped += 1
        self._batches.append(batch)

    def drain(self) -> list[SampleBatch]:
        """Remove and return all pending batches, oldest first."""
        out = []
        while self._batches:
            out.append(self._batches.popleft())
        return out


class AcquisitionSession:
    """One CSV recording. Create via start_acquisition()."""

    def __init__(self, config: AcquisitionConfig, dt: float, n_channels: int,
                 batch_rows: int = _DEFAULT_BATCH_ROWS):
        step_rate = 1.0 / dt
        steps_per_sample = step_rate / config.sample_rate
        if abs(steps_per_sample - round(steps_per_sample)) > 1e-9 or steps_per_sample < 1 - 1e-9:
            raise ValueError(
                f"sample_rate {config.sample_rate} must divide the "
                f"simulation rate {step_rate:g}"
            )
        if len(config.channel_ids) != n_channels:
            raise ValueError(
                f"need {n_channels} channel_ids, got {len(config.channel_ids)}"
            )
        self.config = config
        self.n_channels = n_channels
        self.steps_per_sample = int(round(steps_per_sample))
        self.dt_sample = 1.0 / config.sample_rate
        self.batch_rows = batch_rows
        self.active = True
        self.rows_accepted = 0
        self._pending_lines: list[str] = []
        self._batch_rows_acc: list[tuple[float, ...]] = []
        self._batch_t0 = 0.0
        self._subscribers: list[TelemetryStream] = []
        self._summary: AcquisitionSummary | None = None
        self._row_format = "%.6f" + ",%.6f" * n_channels + "\n"
        self._file = open(config.csv_path, "w", newline="")
        header = ",".join(["time_s"] + [f"P{i}_kPa" for i in range(1, n_channels + 1)])
        self._file.write(header + "\n")

    # -- sampling ----------------------------------------------------------

    def sample(self, readings: list[SensorReading], t: float) -> None:
        """Accept one row. `t` is absolute sim time, used for telemetry batch
        timestamps; the CSV time column is the session-relative sample grid."""
        if not self.active:
            raise SessionError("acquisition session is stopped")
        if len(readings) != self.n_channels:
            raise ValueError(f"expected {self.n_channels} readings, got {len(readings)}")
        gauges = tuple(r.gauge for r in readings)
        self.rows_accepted += 1
        csv_t = self.rows_accepted * self.dt_sample
        self._pending_lines.append(self._row_format % ((csv_t,) + gauges))
        if len(self._pending_lines) >= _FLUSH_ROWS:
            self._flush()
        if not self._batch_rows_acc:
            self._batch_t0 = t
        self._batch_rows_acc.append(gauges)
        if len(self._batch_rows_acc) >= self.batch_rows:
            self._emit_batch()

    def _flush(self) -> None:
        if self._pending_lines:
            self._file.write("".join(self._pending_lines))
            self._pending_lines.clear()

    def _emit_batch(self) -> None:
        if not self._batch_rows_acc:
            return
        batch = SampleBatch(
            t0=self._batch_t0,
            dt_sample=self.dt_sample,
            rows=tuple(self._batch_rows_acc),
        )
        self._batch_rows_acc.clear()
        for stream in self._subscribers:
            stream._push(batch)

    # -- lifecycle ---------------------------------------------------------

    def stop(self) -> AcquisitionSummary:
        """Flush everything and close the file. Idempotent; the final partial
        telemetry batch is delivered before the summary is produced."""
        if self._summary is not None:
            return self._summary
        self._emit_batch()
        self._flush()
        self._file.close()
        self.active = False
        self._summary = AcquisitionSummary(
            rows_written=self.rows_accepted,
            duration=self.rows_accepted * self.dt_sample,
        )
        return self._summary

    def subscribe(self) -> TelemetryStream:
        if not self.active:
            raise SessionError("acquisition session is stopped")
        stream = TelemetryStream()
        self._subscribers.append(stream)
        return stream


def start_acquisition(config: AcquisitionConfig, dt: float,
                      n_channels: int = 5, batch_rows: int = _DEFAULT_BATCH_ROWS) -> AcquisitionSession:
    """Open the CSV (header written immediately) and return an active session.
    Raises ValueError for a rate that does not divide 1/dt, OSError for an
    unwritable path."""
    return AcquisitionSession(config, dt, n_channels, batch_rows)


def sample(session: AcquisitionSession, readings: list[SensorReading], t: float) -> AcquisitionSession:
    session.sample(readings, t)
    return session


def stop_acquisition(session: AcquisitionSession) -> AcquisitionSummary:
    return session.stop()


def subscribe(session: AcquisitionSession) -> TelemetryStream:
    return session.subscribe()


def check_csv_path(path: str) -> None:
    """Cheap writability probe without creating the file."""
    directory = os.path.dirname(path) or "."
    if not os.path.isdir(directory):
        raise OSError(f"directory '{directory}' does not exist")
    if not os.access(directory, os.W_OK):
        raise OSError(f"directory '{directory}' is not writable")


def batch_stats(window) -> ChannelStats:
    """Per-channel last/min/max/mean over a SampleBatch or an iterable of rows."""
    rows = window.rows if isinstance(window, SampleBatch) else tuple(window)
    if not rows:
        raise ValueError("empty window")
    n = len(rows[0])
    lo = list(rows[0])
    hi = list(rows[0])
    acc = [0.0] * n
    for row in rows:
        for i in range(n):
            v = row[i]
            if v < lo[i]:
                lo[i] = v
            if v > hi[i]:
                hi[i] = v
            acc[i] += v
    count = len(rows)
    return ChannelStats(
        last=tuple(rows[-1]),
        minimum=tuple(lo),
        maximum=tuple(hi),
        mean=tuple(a / count for a in acc),
    )
