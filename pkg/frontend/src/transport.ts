// Line transports. The console itself runs on a WebSocket (each message is
// one protocol line, bridged to the gateway's TCP socket); tests substitute
// other implementations of the same interface.

export interface LineTransport {
  send(line: string): void;
  close(): void;
  onLine: ((line: string) => void) | null;
  onOpen: (() => void) | null;
  onClose: (() => void) | null;
}

export type TransportFactory = () => LineTransport;

export class WebSocketTransport implements LineTransport {
  onLine: ((line: string) => void) | null = null;
  onOpen: (() => void) | null = null;
  onClose: (() => void) | null = null;
  private ws: WebSocket;

  constructor(url: string) {
    this.ws = new WebSocket(url);
    this.ws.onopen = () => this.onOpen?.();
    this.ws.onclose = () => this.onClose?.();
    this.ws.onerror = () => {
      // onclose follows; nothing to do here.
    };
    this.ws.onmessage = (event) => {
      // A bridged message may carry several newline-separated frames.
      for (const line of String(event.data).split("\n")) {
        if (line.trim().length > 0) {
          this.onLine?.(line);
        }
      }
    };
  }

  send(line: string): void {
    if (this.ws.readyState === WebSocket.OPEN) {
      this.ws.send(line);
    }
  }

  close(): void {
    this.ws.close();
  }
}
