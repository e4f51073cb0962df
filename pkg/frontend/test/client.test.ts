import { describe, expect, it, vi } from "vitest";

import { backoffDelay, SessionClient, SocketLike } from "../src/client.js";

class MockSocket implements SocketLike {
  sent: string[] = [];
  onopen: ((ev?: unknown) => void) | null = null;
  onmessage: ((ev: { data: unknown }) => void) | null = null;
  onclose: ((ev?: unknown) => void) | null = null;
  onerror: ((ev?: unknown) => void) | null = null;
  closedByClient = false;

  send(data: string) {
    this.sent.push(data);
  }

  close() {
    this.closedByClient = true;
    this.onclose?.();
  }

  serverSend(doc: unknown) {
    this.onmessage?.({ data: JSON.stringify(doc) });
  }
}

function harness(opts: Partial<ConstructorParameters<typeof SessionClient>[0]> = {}) {
  const sockets: MockSocket[] = [];
  const scheduled: Array<{ fn: () => void; ms: number }> = [];
  const events: string[] = [];
  const client = new SessionClient(
    {
      url: "ws://test/session",
      seedEpisode: "seed.cdrv",
      socketFactory: () => {
        const s = new MockSocket();
        sockets.push(s);
        return s;
      },
      scheduler: (fn, ms) => scheduled.push({ fn, ms }),
      ...opts,
    },
    {
      onReady: () => events.push("ready"),
      onFrame: (f) => events.push(`frame:${f.t}`),
      onError: (e) => events.push(`error:${e.message}`),
      onStatus: (s, r) => events.push(`status:${s}:${r}`),
    },
  );
  return { client, sockets, scheduled, events };
}

describe("connection lifecycle", () => {
  it("sends a reset on open and surfaces ready", () => {
    const h = harness();
    h.client.connect();
    h.sockets[0].onopen?.();
    const reset = JSON.parse(h.sockets[0].sent[0]);
    expect(reset.type).toBe("reset");
    expect(reset.warmup).toBe(5);
    expect(reset.seed_episode).toBe("seed.cdrv");
    h.sockets[0].serverSend({ type: "ready", t: 5, width: 64, height: 32,
                              latent_dim: 8, band: [1, 5], rate_hz: 5 });
    expect(h.events).toContain("ready");
  });

  it("reconnects with growing backoff and issues a fresh reset", () => {
    const h = harness();
    h.client.connect();
    h.sockets[0].onopen?.();
    h.sockets[0].onclose?.(); // dropped
    expect(h.scheduled.length).toBe(1);
    h.scheduled[0].fn(); // fire the reconnect timer
    expect(h.sockets.length).toBe(2);
    h.sockets[1].onopen?.();
    expect(JSON.parse(h.sockets[1].sent[0]).type).toBe("reset"); // not resumable
    // repeated failures grow the delay
    h.sockets[1].onclose?.();
    h.scheduled[1].fn();
    h.sockets[2].onclose?.();
    expect(h.scheduled[2].ms).toBeGreaterThan(h.scheduled[1].ms);
  });

  it("reports disconnected status with a retry counter", () => {
    const h = harness();
    h.client.connect();
    h.sockets[0].onclose?.();
    expect(h.events.some((e) => e.startsWith("status:disconnected:1"))).toBe(true);
  });

  it("close() stops reconnecting", () => {
    const h = harness();
    h.client.connect();
    h.client.close();
    expect(h.scheduled.length).toBe(0);
  });
});

describe("backoffDelay", () => {
  it("doubles and saturates", () => {
    expect(backoffDelay(0, 500, 10000)).toBe(500);
    expect(backoffDelay(1, 500, 10000)).toBe(1000);
    expect(backoffDelay(3, 500, 10000)).toBe(4000);
    expect(backoffDelay(20, 500, 10000)).toBe(10000);
  });
});

describe("messages", () => {
  it("routes frames and errors", () => {
    const h = harness();
    h.client.connect();
    h.sockets[0].onopen?.();
    h.sockets[0].serverSend({ type: "frame", t: 6, width: 2, height: 1,
                              rgb_b64: "AAAAAAAA", latent_norm: 2, in_band: false });
    h.sockets[0].serverSend({ type: "error", message: "boom" });
    expect(h.events).toContain("frame:6");
    expect(h.events).toContain("error:boom");
  });

  it("ignores unparseable server chatter", () => {
    const h = harness();
    h.client.connect();
    h.sockets[0].onopen?.();
    h.sockets[0].onmessage?.({ data: "~~garbage~~" });
    expect(h.events.filter((e) => e.startsWith("frame"))).toHaveLength(0);
  });

  it("sendAction writes the wire format", () => {
    const h = harness();
    h.client.connect();
    h.sockets[0].onopen?.();
    h.client.sendAction(-4.5, 24);
    const msg = JSON.parse(h.sockets[0].sent[1]);
    expect(msg).toEqual({ type: "action", steer_deg: -4.5, speed_mps: 24 });
  });
});
