// Gateway client: request/reply correlation, reconnect with backoff, and
// stale-data detection. Pure logic, no DOM; the UI layer subscribes to the
// callbacks and the tests drive it with a fake transport.

import {
  AckFrame,
  ErrFrame,
  Request,
  RequestTag,
  ServerFrame,
  StateFrame,
  TelemetryFrame,
  encodeRequest,
  parseFrame,
} from "./protocol.js";
import { LineTransport, TransportFactory } from "./transport.js";

export type ConnectionStatus = "connecting" | "connected" | "disconnected";

export interface GatewayError extends Error {
  remote: true;
}

const BACKOFF_START_MS = 500;
const BACKOFF_CAP_MS = 8000;
const REQUEST_TIMEOUT_MS = 5000;
export const STALE_AFTER_MS = 2000;

interface Pending {
  resolve: (frame: AckFrame | StateFrame) => void;
  reject: (error: Error) => void;
  timer: ReturnType<typeof setTimeout>;
}

export class GatewayClient {
  status: ConnectionStatus = "disconnected";
  droppedFrames = 0;

  onStatusChange: ((status: ConnectionStatus) => void) | null = null;
  onState: ((frame: StateFrame) => void) | null = null;
  onTelemetry: ((frame: TelemetryFrame) => void) | null = null;
  onRemoteError: ((frame: ErrFrame) => void) | null = null;

  private transport: LineTransport | null = null;
  private nextId = 1;
  private pending = new Map<number, Pending>();
  private backoffMs = BACKOFF_START_MS;
  private reconnectTimer: ReturnType<typeof setTimeout> | null = null;
  private lastFrameAt = 0;
  private closedByUser = false;

  constructor(private factory: TransportFactory) {}

  connect(): void {
    this.closedByUser = false;
    this.open();
  }

  close(): void {
    this.closedByUser = true;
    if (this.reconnectTimer !== null) {
      clearTimeout(this.reconnectTimer);
      this.reconnectTimer = null;
    }
    this.transport?.close();
    this.setStatus("disconnected");
  }

  /** Milliseconds since the last frame arrived, or Infinity before any. */
  sinceLastFrame(now: number = Date.now()): number {
    return this.lastFrameAt === 0 ? Infinity : now - this.lastFrameAt;
  }

  isStale(now: number = Date.now()): boolean {
    return this.status === "connected" && this.sinceLastFrame(now) > STALE_AFTER_MS;
  }

  request(tag: RequestTag, fields: Record<string, unknown> = {}): Promise<AckFrame | StateFrame> {
    const id = this.nextId++;
    const req: Request = { t: tag, id, ...fields };
    return new Promise((resolve, reject) => {
      if (this.status !== "connected" || this.transport === null) {
        reject(new Error("not connected"));
        return;
      }
      const timer = setTimeout(() => {
        this.pending.delete(id);
        reject(new Error(`request ${tag} timed out`));
      }, REQUEST_TIMEOUT_MS);
      this.pending.set(id, { resolve, reject, timer });
      this.transport.send(encodeRequest(req));
    });
  }

  /** The Stop button contract: halt the program and the acquisition, both,
   * unconditionally. */
  emergencyStop(): Promise<PromiseSettledResult<AckFrame | StateFrame>[]> {
    return Promise.allSettled([this.request("stop"), this.request("daq_stop")]);
  }

  private open(): void {
    this.setStatus("connecting");
    const transport = this.factory();
    this.transport = transport;
    transport.onOpen = () => {
      this.backoffMs = BACKOFF_START_MS;
      this.setStatus("connected");
      // Re-synchronize the mirror on every (re)connect.
      this.request("hello").catch(() => {});
      this.request("status_req").catch(() => {});
    };
    transport.onClose = () => {
      if (this.transport !== transport) {
        return;
      }
      this.transport = null;
      this.failPending(new Error("connection lost"));
      this.setStatus("disconnected");
      if (!this.closedByUser) {
        this.scheduleReconnect();
      }
    };
    transport.onLine = (line) => this.handleLine(line);
  }

  private scheduleReconnect(): void {
    if (this.reconnectTimer !== null) {
      return;
    }
    const delay = this.backoffMs;
    this.backoffMs = Math.min(this.backoffMs * 2, BACKOFF_CAP_MS);
    this.reconnectTimer = setTimeout(() => {
      this.reconnectTimer = null;
      if (!this.closedByUser) {
        this.open();
      }
    }, delay);
  }

  private handleLine(line: string): void {
    const frame = parseFrame(line);
    if (frame === null) {
      this.droppedFrames += 1;
      return;
    }
    this.lastFrameAt = Date.now();
    this.dispatch(frame);
  }

  private dispatch(frame: ServerFrame): void {
    switch (frame.t) {
      case "ack":
        this.settle(frame.id, frame);
        break;
      case "err": {
        if (frame.id !== null && this.pending.has(frame.id)) {
          const pending = this.pending.get(frame.id)!;
          this.pending.delete(frame.id);
          clearTimeout(pending.timer);
          const error = new Error(frame.msg) as GatewayError;
          error.remote = true;
          pending.reject(error);
        } else {
          this.onRemoteError?.(frame);
        }
        break;
      }
      case "state":
        if (frame.id !== undefined) {
          this.settle(frame.id, frame);
        }
        this.onState?.(frame);
        break;
      case "telemetry":
        this.onTelemetry?.(frame);
        break;
    }
  }

  private settle(id: number, frame: AckFrame | StateFrame): void {
    const pending = this.pending.get(id);
    if (pending !== undefined) {
      this.pending.delete(id);
      clearTimeout(pending.timer);
      pending.resolve(frame);
    }
  }

  private failPending(error: Error): void {
    for (const pending of this.pending.values()) {
      clearTimeout(pending.timer);
      pending.reject(error);
    }
    this.pending.clear();
  }

  private setStatus(status: ConnectionStatus): void {
    if (status !== this.status) {
      this.status = status;
      this.onStatusChange?.(status);
    }
  }
}
