// Canvas painting: the hallucinated frame scaled with nearest-neighbor,
// a latent-norm gauge with the in-band region shaded, and status text.

import { decodeFramePayload, FrameMsg, rgbToRgba } from "./protocol.js";
import { fpsEstimate, UiState } from "./state.js";

export interface RenderTargets {
  view: HTMLCanvasElement;
  gauge: HTMLCanvasElement;
  statusLine: HTMLElement;
}

export function paintFrame(state: UiState, msg: FrameMsg, targets: RenderTargets): boolean {
  const rgb = decodeFramePayload(msg);
  if (!rgb) {
    state.droppedFrames += 1;
    return false;
  }
  const ctx = targets.view.getContext("2d");
  if (!ctx) return false;

  const image = new ImageData(rgbToRgba(rgb), msg.width, msg.height);
  const off = typeof OffscreenCanvas !== "undefined"
    ? new OffscreenCanvas(msg.width, msg.height)
    : (() => {
        const c = document.createElement("canvas");
        c.width = msg.width;
        c.height = msg.height;
        return c;
      })();
  const octx = (off as HTMLCanvasElement).getContext("2d")!;
  octx.putImageData(image, 0, 0);

  ctx.imageSmoothingEnabled = false; // integer-scale nearest neighbor
  ctx.clearRect(0, 0, targets.view.width, targets.view.height);
  ctx.drawImage(off as CanvasImageSource, 0, 0, targets.view.width, targets.view.height);

  // out-of-band warning border
  if (!msg.in_band) {
    ctx.strokeStyle = "#e03131";
    ctx.lineWidth = 6;
    ctx.strokeRect(0, 0, targets.view.width, targets.view.height);
  }
  return true;
}

export function paintGauge(state: UiState, targets: RenderTargets): void {
  const ctx = targets.gauge.getContext("2d");
  if (!ctx) return;
  const { width, height } = targets.gauge;
  ctx.clearRect(0, 0, width, height);
  ctx.fillStyle = "#1a1b1e";
  ctx.fillRect(0, 0, width, height);

  const [lo, hi] = state.band;
  const top = hi * 1.4 || 1;
  const y = (v: number) => height - (Math.min(v, top) / top) * height;

  // shaded in-band region
  ctx.fillStyle = "rgba(64, 192, 87, 0.25)";
  ctx.fillRect(0, y(hi), width, y(lo) - y(hi));

  ctx.strokeStyle = "#74c0fc";
  ctx.lineWidth = 2;
  ctx.beginPath();
  const hist = state.normHistory;
  hist.forEach((v, i) => {
    const x = (i / Math.max(hist.length - 1, 1)) * width;
    if (i === 0) ctx.moveTo(x, y(v));
    else ctx.lineTo(x, y(v));
  });
  ctx.stroke();

  const last = hist[hist.length - 1];
  if (last !== undefined) {
    ctx.fillStyle = last >= lo && last <= hi ? "#69db7c" : "#ff6b6b";
    ctx.font = "12px monospace";
    ctx.fillText(`||z|| ${last.toFixed(2)}  band [${lo.toFixed(1)}, ${hi.toFixed(1)}]`, 6, 14);
  }
}

export function paintStatus(state: UiState, targets: RenderTargets, nowMs: number): void {
  const fps = fpsEstimate(state, nowMs);
  const oob = state.lastFrame && !state.lastFrame.in_band ? "  OUT OF BAND" : "";
  targets.statusLine.textContent =
    `${state.status}  t=${state.lastT}  ${fps.toFixed(1)} fps  ` +
    `steer ${state.steerDeg.toFixed(0)} deg  speed ${state.speedMps.toFixed(0)} m/s  ` +
    `dropped ${state.droppedFrames}${state.retries ? `  retry #${state.retries}` : ""}${oob}`;
  targets.statusLine.classList.toggle("out-of-band", Boolean(oob));
}
