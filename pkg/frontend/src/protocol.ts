// Wire protocol of the simulation service: JSON text frames, one message
// per step. Mirrors the server's schema exactly.

export interface ResetMsg {
  type: "reset";
  warmup: number;
  seed_episode?: string;
  rng_seed: number;
}

export interface ActionMsg {
  type: "action";
  steer_deg: number;
  speed_mps: number;
}

export interface ReadyMsg {
  type: "ready";
  t: number;
  width: number;
  height: number;
  latent_dim: number;
  band: [number, number];
  rate_hz: number;
  steer_range: [number, number];
  speed_range: [number, number];
}

export interface FrameMsg {
  type: "frame";
  t: number;
  width: number;
  height: number;
  rgb_b64: string;
  latent_norm: number;
  in_band: boolean;
}

export interface ErrorMsg {
  type: "error";
  message: string;
}

export type ServerMsg = ReadyMsg | FrameMsg | ErrorMsg;

export function parseServerMessage(raw: string): ServerMsg | null {
  let doc: unknown;
  try {
    doc = JSON.parse(raw);
  } catch {
    return null;
  }
  if (typeof doc !== "object" || doc === null || !("type" in doc)) return null;
  const msg = doc as Record<string, unknown>;
  switch (msg.type) {
    case "ready":
      if (typeof msg.t === "number" && typeof msg.width === "number" &&
          typeof msg.height === "number" && typeof msg.latent_dim === "number" &&
          Array.isArray(msg.band)) {
        return msg as unknown as ReadyMsg;
      }
      return null;
    case "frame":
      if (typeof msg.t === "number" && typeof msg.rgb_b64 === "string" &&
          typeof msg.width === "number" && typeof msg.height === "number") {
        return msg as unknown as FrameMsg;
      }
      return null;
    case "error":
      return typeof msg.message === "string" ? (msg as unknown as ErrorMsg) : null;
    default:
      return null;
  }
}

// Base64 RGB payload -> bytes, with a strict length check against the
// advertised geometry. Returns null on any mismatch (frame is dropped).
export function decodeFramePayload(frame: FrameMsg): Uint8Array | null {
  let bytes: Uint8Array;
  try {
    if (typeof atob === "function") {
      const bin = atob(frame.rgb_b64);
      bytes = new Uint8Array(bin.length);
      for (let i = 0; i < bin.length; i++) bytes[i] = bin.charCodeAt(i);
    } else {
      bytes = Uint8Array.from(Buffer.from(frame.rgb_b64, "base64"));
    }
  } catch {
    return null;
  }
  if (bytes.length !== frame.width * frame.height * 3) return null;
  return bytes;
}

// RGB bytes -> RGBA pixel buffer for ImageData.
export function rgbToRgba(rgb: Uint8Array): Uint8ClampedArray<ArrayBuffer> {
  const n = rgb.length / 3;
  const out = new Uint8ClampedArray(new ArrayBuffer(n * 4));
  for (let i = 0; i < n; i++) {
    out[4 * i] = rgb[3 * i];
    out[4 * i + 1] = rgb[3 * i + 1];
    out[4 * i + 2] = rgb[3 * i + 2];
    out[4 * i + 3] = 255;
  }
  return out;
}
