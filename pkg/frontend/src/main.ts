// Cockpit wiring: connect, pump the lock-step action loop, render.

import { SessionClient } from "./client.js";
import { bindKeyboard, bindSlider, syncSliders } from "./input.js";
import { paintFrame, paintGauge, paintStatus, RenderTargets } from "./render.js";
import { applyFrame, applyReady, canSendAction, initialState, markActionSent } from "./state.js";

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

const state = initialState();
const targets: RenderTargets = {
  view: el<HTMLCanvasElement>("view"),
  gauge: el<HTMLCanvasElement>("gauge"),
  statusLine: el<HTMLElement>("status"),
};
const steerSlider = el<HTMLInputElement>("steer");
const speedSlider = el<HTMLInputElement>("speed");

const params = new URLSearchParams(location.search);
const wsUrl = params.get("ws") ??
  `${location.protocol === "https:" ? "wss" : "ws"}://${location.host}/session`;
const seedEpisode = params.get("episode") ?? undefined;

const client = new SessionClient(
  {
    url: wsUrl,
    warmup: Number(params.get("warmup") ?? 5),
    seedEpisode,
    rngSeed: Number(params.get("seed") ?? 0),
  },
  {
    onStatus: (status, retries) => {
      state.status = status as typeof state.status;
      state.retries = retries;
      paintStatus(state, targets, performance.now());
    },
    onReady: (msg) => {
      applyReady(state, msg);
      targets.view.width = msg.width * Math.max(1, Math.floor(640 / msg.width));
      targets.view.height = msg.height * Math.max(1, Math.floor(640 / msg.width));
      steerSlider.min = String(state.steerRange[0]);
      steerSlider.max = String(state.steerRange[1]);
      speedSlider.min = String(state.speedRange[0]);
      speedSlider.max = String(state.speedRange[1]);
      syncSliders(state, steerSlider, speedSlider);
      pump();
    },
    onFrame: (msg) => {
      if (applyFrame(state, msg, performance.now())) {
        paintFrame(state, msg, targets);
        paintGauge(state, targets);
      }
      paintStatus(state, targets, performance.now());
      pump(); // lock-step: next action only after its frame arrived
    },
    onError: (msg) => {
      targets.statusLine.textContent = `server error: ${msg.message}`;
      state.actionInFlight = false;
    },
  },
);

// one action in flight at any time; the frame handler calls back in
function pump(): void {
  if (!canSendAction(state)) return;
  markActionSent(state);
  client.sendAction(state.steerDeg, state.speedMps);
}

bindKeyboard(state, window as unknown as { addEventListener(type: string, fn: (ev: KeyboardEvent) => void): void },
             { springBack: params.get("spring") === "1", onChange: () => syncSliders(state, steerSlider, speedSlider) });
bindSlider(state, steerSlider, speedSlider);

client.connect();
setInterval(() => paintStatus(state, targets, performance.now()), 500);
