/**
 * WebSocket session client: decodes the snapshot stream into a ViewerStore
 * and sends nonce-tagged commands with ack tracking.
 *
 * The WebSocket constructor is injected so the same client runs in the
 * browser (global WebSocket) and under node tests (the `ws` package).
 */

import {
  Ack,
  Command,
  CommandName,
  decodeSnapshot,
  makeCommand,
  parseAck,
  ProtocolError,
  Snapshot,
} from "./protocol.js";
import { ViewerStore } from "./state.js";

export interface SocketLike {
  binaryType: string;
  onopen: ((ev?: unknown) => void) | null;
  onclose: ((ev?: unknown) => void) | null;
  onerror: ((ev?: unknown) => void) | null;
  onmessage: ((ev: { data: unknown }) => void) | null;
  send(data: string): void;
  close(): void;
}

export type SocketFactory = (url: string) => SocketLike;

export interface ClientOptions {
  socketFactory?: SocketFactory;
  ackTimeoutMs?: number;
  reconnectDelayMs?: number;
  maxReconnects?: number;
}

interface Pending {
  resolve: (ack: Ack) => void;
  reject: (err: Error) => void;
  timer: ReturnType<typeof setTimeout>;
  command: Command;
  retried: boolean;
}

export class SessionClient {
  readonly store = new ViewerStore();
  onSnapshot: ((snap: Snapshot) => void) | null = null;
  onError: ((message: string) => void) | null = null;

  private url: string;
  private factory: SocketFactory;
  private ackTimeoutMs: number;
  private reconnectDelayMs: number;
  private maxReconnects: number;
  private reconnects = 0;
  private socket: SocketLike | null = null;
  private nextNonce = 1;
  private pending = new Map<number, Pending>();
  private closedByUser = false;

  constructor(url: string, opts: ClientOptions = {}) {
    this.url = url;
    this.factory =
      opts.socketFactory ?? ((u: string) => new (globalThis as any).WebSocket(u) as SocketLike);
    this.ackTimeoutMs = opts.ackTimeoutMs ?? 5000;
    this.reconnectDelayMs = opts.reconnectDelayMs ?? 1000;
    this.maxReconnects = opts.maxReconnects ?? 20;
  }

  connect(): Promise<void> {
    this.closedByUser = false;
    return new Promise((resolve, reject) => {
      const sock = this.factory(this.url);
      sock.binaryType = "arraybuffer";
      this.socket = sock;
      this.store.status = "connecting";
      let settled = false;
      sock.onopen = () => {
        this.store.status = "connected";
        this.reconnects = 0;
        settled = true;
        resolve();
      };
      sock.onerror = () => {
        if (!settled) {
          settled = true;
          reject(new Error(`could not connect to ${this.url}`));
        }
      };
      sock.onclose = () => {
        this.failPending(new Error("connection closed"));
        if (this.closedByUser) {
          this.store.status = "closed";
          return;
        }
        this.store.status = "reconnecting";
        if (this.reconnects++ < this.maxReconnects) {
          setTimeout(() => this.connect().catch(() => undefined), this.reconnectDelayMs);
        } else {
          this.store.status = "closed";
        }
      };
      sock.onmessage = (ev) => this.handleMessage(ev.data);
    });
  }

  close(): void {
    this.closedByUser = true;
    this.socket?.close();
  }

  /** Send a command; resolves with the server ack, retrying once on timeout. */
  sendCommand(cmd: CommandName, extra: Record<string, unknown> = {}): Promise<Ack> {
    const nonce = this.nextNonce++;
    const command = makeCommand(nonce, cmd, extra);
    return new Promise<Ack>((resolve, reject) => {
      const entry: Pending = {
        resolve,
        reject,
        command,
        retried: false,
        timer: setTimeout(() => this.onAckTimeout(nonce), this.ackTimeoutMs),
      };
      this.pending.set(nonce, entry);
      this.transmit(command, reject);
    });
  }

  setParam(name: string, value: number): Promise<Ack> {
    return this.sendCommand("set_param", { name, value });
  }

  private transmit(command: Command, reject: (err: Error) => void) {
    try {
      if (!this.socket) throw new Error("not connected");
      this.socket.send(JSON.stringify(command));
    } catch (err) {
      this.pending.delete(command.nonce);
      reject(err instanceof Error ? err : new Error(String(err)));
    }
  }

  private onAckTimeout(nonce: number) {
    const entry = this.pending.get(nonce);
    if (!entry) return;
    if (!entry.retried) {
      // duplicate nonces are acked again but applied once, so a resend is safe
      entry.retried = true;
      entry.timer = setTimeout(() => this.onAckTimeout(nonce), this.ackTimeoutMs);
      this.transmit(entry.command, entry.reject);
    } else {
      this.pending.delete(nonce);
      entry.reject(new Error(`no ack for command ${entry.command.cmd} (nonce ${nonce})`));
    }
  }

  private failPending(err: Error) {
    for (const [, entry] of this.pending) {
      clearTimeout(entry.timer);
      entry.reject(err);
    }
    this.pending.clear();
  }

  private handleMessage(data: unknown) {
    try {
      if (typeof data === "string") {
        const ack = parseAck(data);
        if (ack.nonce !== null && this.pending.has(ack.nonce)) {
          const entry = this.pending.get(ack.nonce)!;
          clearTimeout(entry.timer);
          this.pending.delete(ack.nonce);
          entry.resolve(ack);
        }
        return;
      }
      const buf = toArrayBuffer(data);
      const snap = decodeSnapshot(buf);
      if (this.store.apply(snap)) {
        this.onSnapshot?.(snap);
      } else if (this.store.lastError) {
        this.onError?.(this.store.lastError);
      }
    } catch (err) {
      const message = err instanceof ProtocolError ? err.message : String(err);
      this.store.lastError = message;
      this.onError?.(message);
    }
  }
}

function toArrayBuffer(data: unknown): ArrayBuffer {
  if (data instanceof ArrayBuffer) return data;
  // node's ws delivers Buffer (a Uint8Array view over a shared pool)
  if (ArrayBuffer.isView(data)) {
    const v = data as Uint8Array;
    const copy = new Uint8Array(v.byteLength);
    copy.set(v);
    return copy.buffer;
  }
  throw new ProtocolError("unsupported binary payload");
}
