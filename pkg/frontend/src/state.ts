// Single source of truth for the cockpit. Socket callbacks and input
// handlers both mutate one UiState through these helpers; rendering only
// reads it.

import { FrameMsg, ReadyMsg } from "./protocol.js";

export type ConnectionStatus = "disconnected" | "connecting" | "connected" | "ready";

export interface UiState {
  status: ConnectionStatus;
  steerDeg: number;
  speedMps: number;
  steerRange: [number, number];
  speedRange: [number, number];
  lastFrame: FrameMsg | null;
  lastT: number;
  normHistory: number[]; // rolling latent-norm window for the gauge
  band: [number, number];
  latentDim: number;
  frameTimes: number[]; // arrival clock times for the fps estimate
  droppedFrames: number; // payload-mismatch error badge
  actionInFlight: boolean; // lock-step: one unanswered action at most
  retries: number;
}

export const STEER_STEP = 1.0; // degrees per key press
export const SPEED_STEP = 1.0; // m/s per key press
const FPS_WINDOW_MS = 2000;
const NORM_HISTORY = 120;

export function initialState(): UiState {
  return {
    status: "disconnected",
    steerDeg: 0,
    speedMps: 20,
    steerRange: [-45, 45],
    speedRange: [0, 60],
    lastFrame: null,
    lastT: -1,
    normHistory: [],
    band: [0, 1],
    latentDim: 0,
    frameTimes: [],
    droppedFrames: 0,
    actionInFlight: false,
    retries: 0,
  };
}

export function applyReady(state: UiState, msg: ReadyMsg): void {
  state.status = "ready";
  state.lastT = msg.t;
  state.band = msg.band;
  state.latentDim = msg.latent_dim;
  state.normHistory = [];
  state.frameTimes = [];
  state.actionInFlight = false;
  state.retries = 0;
  if (msg.steer_range) state.steerRange = msg.steer_range;
  if (msg.speed_range) state.speedRange = msg.speed_range;
  clampControls(state);
}

// Returns false when the frame is stale (t went backwards) so callers can
// drop it; displayed t is monotone non-decreasing.
export function applyFrame(state: UiState, msg: FrameMsg, nowMs: number): boolean {
  state.actionInFlight = false;
  if (msg.t < state.lastT) return false;
  state.lastT = msg.t;
  state.lastFrame = msg;
  state.normHistory.push(msg.latent_norm);
  if (state.normHistory.length > NORM_HISTORY) state.normHistory.shift();
  state.frameTimes.push(nowMs);
  while (state.frameTimes.length > 1 && state.frameTimes[0] < nowMs - FPS_WINDOW_MS) {
    state.frameTimes.shift();
  }
  return true;
}

export function fpsEstimate(state: UiState, nowMs: number): number {
  const times = state.frameTimes.filter((t) => t >= nowMs - FPS_WINDOW_MS);
  if (times.length < 2) return 0;
  const span = (times[times.length - 1] - times[0]) / 1000;
  return span > 0 ? (times.length - 1) / span : 0;
}

export function clampControls(state: UiState): void {
  state.steerDeg = Math.min(Math.max(state.steerDeg, state.steerRange[0]), state.steerRange[1]);
  state.speedMps = Math.min(Math.max(state.speedMps, state.speedRange[0]), state.speedRange[1]);
}

export function adjustSteer(state: UiState, delta: number): void {
  state.steerDeg += delta;
  clampControls(state);
}

export function adjustSpeed(state: UiState, delta: number): void {
  state.speedMps += delta;
  clampControls(state);
}

export function setSteer(state: UiState, value: number): void {
  state.steerDeg = value;
  clampControls(state);
}

export function setSpeed(state: UiState, value: number): void {
  state.speedMps = value;
  clampControls(state);
}

// Lock-step pacing: an action may go out only when the session is live and
// the previous action has been answered by a frame (or this is the first).
export function canSendAction(state: UiState): boolean {
  return state.status === "ready" && !state.actionInFlight;
}

export function markActionSent(state: UiState): void {
  state.actionInFlight = true;
}
