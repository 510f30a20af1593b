/**
 * Keyboard-first flow: one pure function from key events to annotator
 * actions, so bindings are testable without a DOM.
 */

import type { FingerLabel } from "./types.js";
import { FINGER_LABELS } from "./types.js";

export type Action =
  | { kind: "nudge"; dx: number; dy: number }
  | { kind: "label"; label: FingerLabel }
  | { kind: "cycle-label" }
  | { kind: "submit" }
  | { kind: "skip" }
  | { kind: "delete" }
  | { kind: "select-next" }
  | { kind: "deselect" }
  | { kind: "keep-mine" }
  | { kind: "accept-theirs" };

export interface KeyLike {
  key: string;
  shiftKey?: boolean;
  targetTag?: string;
}

/** null means "not ours" — the event should pass through untouched. */
export function keyToAction(event: KeyLike): Action | null {
  const tag = (event.targetTag ?? "").toUpperCase();
  if (tag === "INPUT" || tag === "TEXTAREA" || tag === "SELECT") return null;
  const step = event.shiftKey ? 10 : 1;
  switch (event.key) {
    case "ArrowLeft":
      return { kind: "nudge", dx: -step, dy: 0 };
    case "ArrowRight":
      return { kind: "nudge", dx: step, dy: 0 };
    case "ArrowUp":
      return { kind: "nudge", dx: 0, dy: -step };
    case "ArrowDown":
      return { kind: "nudge", dx: 0, dy: step };
    case "1":
    case "2":
    case "3":
    case "4":
      return { kind: "label", label: FINGER_LABELS[Number(event.key) - 1] };
    case "l":
    case "L":
      return { kind: "cycle-label" };
    case "Enter":
      return { kind: "submit" };
    case "s":
    case "S":
      return { kind: "skip" };
    case "Delete":
    case "Backspace":
      return { kind: "delete" };
    case "Tab":
      return { kind: "select-next" };
    case "Escape":
      return { kind: "deselect" };
    case "m":
    case "M":
      return { kind: "keep-mine" };
    case "t":
    case "T":
      return { kind: "accept-theirs" };
    default:
      return null;
  }
}
