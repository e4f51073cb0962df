// Keyboard and slider input. Arrow keys nudge steering/speed by one step;
// holding a key repeats through the browser's key-repeat. Slider moves and
// key presses funnel into the same UiState so the two never disagree.

import { adjustSpeed, adjustSteer, setSpeed, setSteer, SPEED_STEP, STEER_STEP, UiState } from "./state.js";

export interface InputOptions {
  springBack?: boolean; // steering returns to 0 when the key is released
  onChange?: () => void;
}

export function handleKey(state: UiState, key: string): boolean {
  switch (key) {
    case "ArrowLeft":
      adjustSteer(state, -STEER_STEP);
      return true;
    case "ArrowRight":
      adjustSteer(state, +STEER_STEP);
      return true;
    case "ArrowUp":
      adjustSpeed(state, +SPEED_STEP);
      return true;
    case "ArrowDown":
      adjustSpeed(state, -SPEED_STEP);
      return true;
    default:
      return false;
  }
}

export function handleKeyUp(state: UiState, key: string, springBack: boolean): boolean {
  if (springBack && (key === "ArrowLeft" || key === "ArrowRight")) {
    setSteer(state, 0);
    return true;
  }
  return false;
}

export function bindKeyboard(state: UiState, target: {
  addEventListener(type: string, fn: (ev: KeyboardEvent) => void): void;
}, opts: InputOptions = {}): void {
  target.addEventListener("keydown", (ev: KeyboardEvent) => {
    if (handleKey(state, ev.key)) {
      ev.preventDefault?.();
      opts.onChange?.();
    }
  });
  target.addEventListener("keyup", (ev: KeyboardEvent) => {
    if (handleKeyUp(state, ev.key, opts.springBack ?? false)) {
      ev.preventDefault?.();
      opts.onChange?.();
    }
  });
}

export function bindSlider(state: UiState, steerSlider: HTMLInputElement,
                           speedSlider: HTMLInputElement, onChange?: () => void): void {
  steerSlider.addEventListener("input", () => {
    setSteer(state, Number(steerSlider.value));
    onChange?.();
  });
  speedSlider.addEventListener("input", () => {
    setSpeed(state, Number(speedSlider.value));
    onChange?.();
  });
}

// Keeps sliders showing the canonical state (after clamping or key input).
export function syncSliders(state: UiState, steerSlider: HTMLInputElement,
                            speedSlider: HTMLInputElement): void {
  steerSlider.value = String(state.steerDeg);
  speedSlider.value = String(state.speedMps);
}
