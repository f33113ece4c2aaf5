// WebSocket wrapper: parses stream messages, reconnects with backoff, and
// reports connection state so the page can reattach after a refresh or a
// dropped tab without losing the underlying stream.

import { parseMessage, type StreamMessage } from "./messages";

export type MessageHandler = (message: StreamMessage) => void;
export type ConnectionHandler = (connected: boolean) => void;

type SocketFactory = (url: string) => WebSocket;

const RECONNECT_DELAY_MS = 1000;
const MAX_RECONNECT_ATTEMPTS = 20;

export class StreamSocket {
  private socket: WebSocket | null = null;
  private attempts = 0;
  private closedByUs = false;
  private reconnectTimer: ReturnType<typeof setTimeout> | null = null;

  constructor(
    readonly url: string,
    private readonly onMessage: MessageHandler,
    private readonly onConnection: ConnectionHandler = () => {},
    private readonly factory: SocketFactory = (u) => new WebSocket(u),
  ) {}

  connect(): void {
    this.closedByUs = false;
    this.open();
  }

  private open(): void {
    const socket = this.factory(this.url);
    this.socket = socket;
    socket.onopen = () => {
      this.attempts = 0;
      this.onConnection(true);
    };
    socket.onmessage = (event: MessageEvent) => {
      this.onMessage(parseMessage(String(event.data)));
    };
    socket.onclose = () => {
      this.onConnection(false);
      if (!this.closedByUs) this.scheduleReconnect();
    };
    socket.onerror = () => {
      // close follows; reconnect handled there
    };
  }

  private scheduleReconnect(): void {
    if (this.attempts >= MAX_RECONNECT_ATTEMPTS) return;
    this.attempts += 1;
    this.reconnectTimer = setTimeout(() => this.open(), RECONNECT_DELAY_MS * this.attempts);
  }

  close(): void {
    this.closedByUs = true;
    if (this.reconnectTimer !== null) clearTimeout(this.reconnectTimer);
    this.socket?.close();
  }
}
