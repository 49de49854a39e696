// Wire protocol spoken by the gateway: one JSON object per line.
// Requests carry a client-chosen id echoed in the matching ack/err.

export interface AckFrame {
  t: "ack";
  id: number;
  warnings?: string[];
  diagnostics?: ProgramDiagnostic[];
  summary?: { rows_written: number; duration: number };
}

export interface ErrFrame {
  t: "err";
  id: number | null;
  msg: string;
}

export interface StateFrame {
  t: "state";
  id?: number;
  sim_time: number;
  supply_on: boolean;
  supply_gauge_kpa: number;
  setpoints: number[];
  valves: boolean[];
  program_loaded: boolean;
  program_running: boolean;
  daq_active: boolean;
  clock_mode: string;
  acquisition: {
    csv_path: string;
    sample_rate: number;
    terminal_config: string;
    channel_ids: string[];
  };
  metadata: Record<string, string>;
}

export interface TelemetryFrame {
  t: "telemetry";
  t0: number;
  dt: number;
  rows: number[][];
}

export interface ProgramDiagnostic {
  line: number;
  col: number;
  message: string;
}

export type ServerFrame = AckFrame | ErrFrame | StateFrame | TelemetryFrame;

export type RequestTag =
  | "hello"
  | "configure"
  | "set_reg"
  | "set_valve"
  | "load_program"
  | "run"
  | "stop"
  | "daq_start"
  | "daq_stop"
  | "status_req";

export interface Request {
  t: RequestTag;
  id: number;
  [field: string]: unknown;
}

/** Parse one wire line. Returns null for anything that is not a well-formed
 * server frame; the console drops and counts those instead of crashing. */
export function parseFrame(line: string): ServerFrame | null {
  let value: unknown;
  try {
    value = JSON.parse(line);
  } catch {
    return null;
  }
  if (typeof value !== "object" || value === null || Array.isArray(value)) {
    return null;
  }
  const frame = value as Record<string, unknown>;
  switch (frame.t) {
    case "ack":
      return frame as unknown as AckFrame;
    case "err":
      return typeof frame.msg === "string" ? (frame as unknown as ErrFrame) : null;
    case "state":
      if (Array.isArray(frame.setpoints) && Array.isArray(frame.valves)) {
        return frame as unknown as StateFrame;
      }
      return null;
    case "telemetry":
      if (
        typeof frame.t0 === "number" &&
        typeof frame.dt === "number" &&
        Array.isArray(frame.rows) &&
        (frame.rows as unknown[]).every((r) => Array.isArray(r))
      ) {
        return frame as unknown as TelemetryFrame;
      }
      return null;
    default:
      return null;
  }
}

export function encodeRequest(request: Request): string {
  return JSON.stringify(request);
}
