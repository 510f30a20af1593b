/**
 * Wire types mirroring the annotation service's JSON bodies, plus the
 * client-side box representation used while drawing.
 *
 * Box coordinates are image pixels, origin top-left, right/bottom edges
 * exclusive: a box covers columns [x, x+w) and rows [y, y+h).
 */

export type TaskStatus = "Pending" | "InProgress" | "Done" | "Skipped";

export type FingerLabel = "Index" | "Middle" | "Ring" | "Little";

export const FINGER_LABELS: readonly FingerLabel[] = [
  "Index",
  "Middle",
  "Ring",
  "Little",
];

/** Smallest box side the service accepts, in image pixels. */
export const MIN_BOX_SIDE = 16;

export interface BoxWire {
  x: number;
  y: number;
  w: number;
  h: number;
  label: FingerLabel;
  annotator: string;
  created_at: number;
}

export interface TaskWire {
  record_id: string;
  status: TaskStatus;
  boxes: BoxWire[];
  revision: number;
}

export interface TaskPage {
  tasks: TaskWire[];
  next_cursor: string | null;
}

export interface ImageMeta {
  record_id: string;
  width: number;
  height: number;
  species: string;
  sensor: string;
}

/** Box as transmitted in a submission: integer pixels, label only. */
export interface SubmitBox {
  x: number;
  y: number;
  w: number;
  h: number;
  label: FingerLabel;
}

export interface SubmitPayload {
  boxes: SubmitBox[];
  expected_revision: number;
  annotator: string;
}

export interface StatusPayload {
  status: TaskStatus;
  expected_revision: number;
}

export interface ExportResult {
  created: number;
  record_ids: string[];
}

export interface ApiErrorBody {
  code: string;
  message: string;
  details: string[];
}

/**
 * Editable box on the canvas. Coordinates stay float while dragging and are
 * snapped to integer pixels only at submission time.
 */
export interface CanvasBox {
  x: number;
  y: number;
  w: number;
  h: number;
  label: FingerLabel;
}

export function nextLabel(label: FingerLabel): FingerLabel {
  const i = FINGER_LABELS.indexOf(label);
  return FINGER_LABELS[(i + 1) % FINGER_LABELS.length];
}
