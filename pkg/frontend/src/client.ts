// Session client: connects, resets, streams actions in lock-step with the
// incoming frames, and reconnects with exponential backoff. Sessions are
// not resumable, so every (re)connect issues a fresh reset.

import { ActionMsg, ErrorMsg, FrameMsg, parseServerMessage, ReadyMsg, ResetMsg } from "./protocol.js";

export interface SocketLike {
  send(data: string): void;
  close(): void;
  onopen: ((ev?: unknown) => void) | null;
  onmessage: ((ev: { data: unknown }) => void) | null;
  onclose: ((ev?: unknown) => void) | null;
  onerror: ((ev?: unknown) => void) | null;
}

export type SocketFactory = (url: string) => SocketLike;

export interface ClientCallbacks {
  onReady?: (msg: ReadyMsg) => void;
  onFrame?: (msg: FrameMsg) => void;
  onError?: (msg: ErrorMsg) => void;
  onStatus?: (status: string, retries: number) => void;
}

export interface ClientOptions {
  url: string;
  warmup?: number;
  seedEpisode?: string;
  rngSeed?: number;
  socketFactory?: SocketFactory;
  backoffBaseMs?: number;
  backoffMaxMs?: number;
  scheduler?: (fn: () => void, ms: number) => unknown;
}

export function backoffDelay(attempt: number, baseMs = 500, maxMs = 10000): number {
  return Math.min(baseMs * 2 ** Math.min(attempt, 16), maxMs);
}

export class SessionClient {
  private ws: SocketLike | null = null;
  private opts: Required<Pick<ClientOptions, "url" | "warmup" | "rngSeed">> & ClientOptions;
  private cb: ClientCallbacks;
  private closed = false;
  retries = 0;

  constructor(opts: ClientOptions, cb: ClientCallbacks) {
    this.opts = { warmup: 5, rngSeed: 0, ...opts };
    this.cb = cb;
  }

  connect(): void {
    if (this.closed) return;
    const factory = this.opts.socketFactory ?? ((url: string) => new WebSocket(url) as unknown as SocketLike);
    this.cb.onStatus?.("connecting", this.retries);
    const ws = factory(this.opts.url);
    this.ws = ws;

    ws.onopen = () => {
      this.retries = 0;
      this.cb.onStatus?.("connected", 0);
      const reset: ResetMsg = {
        type: "reset",
        warmup: this.opts.warmup,
        rng_seed: this.opts.rngSeed,
      };
      if (this.opts.seedEpisode) reset.seed_episode = this.opts.seedEpisode;
      ws.send(JSON.stringify(reset));
    };

    ws.onmessage = (ev) => {
      const msg = parseServerMessage(String(ev.data));
      if (!msg) return;
      if (msg.type === "ready") this.cb.onReady?.(msg);
      else if (msg.type === "frame") this.cb.onFrame?.(msg);
      else this.cb.onError?.(msg);
    };

    ws.onclose = () => this.scheduleReconnect();
    ws.onerror = () => {
      // the close handler owns reconnection; some sockets fire both
    };
  }

  private scheduleReconnect(): void {
    if (this.closed) return;
    const delay = backoffDelay(this.retries, this.opts.backoffBaseMs, this.opts.backoffMaxMs);
    this.retries += 1;
    this.cb.onStatus?.("disconnected", this.retries);
    const schedule = this.opts.scheduler ?? ((fn: () => void, ms: number) => setTimeout(fn, ms));
    schedule(() => this.connect(), delay);
  }

  sendAction(steerDeg: number, speedMps: number): void {
    const msg: ActionMsg = { type: "action", steer_deg: steerDeg, speed_mps: speedMps };
    this.ws?.send(JSON.stringify(msg));
  }

  close(): void {
    this.closed = true;
    this.ws?.close();
  }
}
