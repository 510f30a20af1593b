/**
 * Annotator session state: a queue of pending tasks worked through one at a
 * time, with client-side validation mirroring the service and optimistic
 * submissions reconciled on revision conflicts.
 *
 * Concurrency contract: at most one request in flight; a 409 never
 * overwrites silently — the server's boxes and the local boxes are both
 * kept and the annotator chooses.
 */

import { AnnotatorApi, ApiError, ConflictError, OfflineError } from "./api.js";
import { clampBoxToImage, dragCorner, normalizeRect, snapToPixels } from "./geometry.js";
import type { HitRegion, Point } from "./geometry.js";
import type {
  BoxWire,
  CanvasBox,
  FingerLabel,
  ImageMeta,
  SubmitBox,
  TaskWire,
} from "./types.js";
import { FINGER_LABELS, MIN_BOX_SIDE, nextLabel } from "./types.js";

/** index null means the submission as a whole, not one box. */
export interface ValidationProblem {
  index: number | null;
  message: string;
}

/** Client-side mirror of the service's box rules, for pre-flight checks. */
export function validateBoxes(
  boxes: readonly SubmitBox[],
  width: number,
  height: number,
): ValidationProblem[] {
  const problems: ValidationProblem[] = [];
  if (boxes.length === 0) {
    problems.push({ index: null, message: "Done requires ≥ 1 box" });
    return problems;
  }
  const seen = new Map<FingerLabel, number>();
  boxes.forEach((b, i) => {
    if (b.w < MIN_BOX_SIDE || b.h < MIN_BOX_SIDE) {
      problems.push({ index: i, message: `box is below the minimum ${MIN_BOX_SIDE}px side` });
    }
    if (b.x < 0 || b.y < 0 || b.x + b.w > width || b.y + b.h > height) {
      problems.push({ index: i, message: `box exceeds the ${width}x${height} image` });
    }
    const first = seen.get(b.label);
    if (first !== undefined) {
      problems.push({ index: i, message: `duplicate label ${b.label}` });
    } else {
      seen.set(b.label, i);
    }
  });
  return problems;
}

export type Phase =
  | "idle"
  | "loading"
  | "annotating"
  | "submitting"
  | "conflict"
  | "finished";

export interface Conflict {
  mine: CanvasBox[];
  theirs: BoxWire[];
}

interface Draft {
  origin: Point;
  box: CanvasBox;
}

interface ApiSubset {
  listTasks: AnnotatorApi["listTasks"];
  getTask: AnnotatorApi["getTask"];
  imageMeta: AnnotatorApi["imageMeta"];
  submitBoxes: AnnotatorApi["submitBoxes"];
  setStatus: AnnotatorApi["setStatus"];
  exportCrops: AnnotatorApi["exportCrops"];
}

export class AnnotatorSession {
  phase: Phase = "idle";
  queue: TaskWire[] = [];
  queueIndex = -1;
  task: TaskWire | null = null;
  meta: ImageMeta | null = null;
  boxes: CanvasBox[] = [];
  selected: number | null = null;
  draft: Draft | null = null;
  conflict: Conflict | null = null;
  problems: ValidationProblem[] = [];
  offline = false;
  message = "";
  doneCount = 0;

  private revision = 0;
  private inflight = false;

  constructor(
    private readonly api: ApiSubset,
    private readonly annotator: string = "anonymous",
    private readonly onChange: () => void = () => {},
  ) {}

  /** Fetch every pending task up front and focus the first one. */
  async start(): Promise<void> {
    this.phase = "loading";
    this.notify();
    try {
      const tasks: TaskWire[] = [];
      let cursor: string | undefined;
      do {
        const page = await this.api.listTasks("Pending", cursor);
        tasks.push(...page.tasks);
        cursor = page.next_cursor ?? undefined;
      } while (cursor);
      this.queue = tasks;
      this.offline = false;
    } catch (err) {
      this.fail(err);
      return;
    }
    await this.advance();
  }

  /** Move to the next queued task, or finish when the queue is drained. */
  async advance(): Promise<void> {
    this.conflict = null;
    this.problems = [];
    this.draft = null;
    this.selected = null;
    this.message = "";
    while (this.queueIndex + 1 < this.queue.length) {
      this.queueIndex += 1;
      const claimed = await this.focus(this.queue[this.queueIndex]);
      if (claimed) return;
    }
    this.task = null;
    this.meta = null;
    this.boxes = [];
    this.phase = "finished";
    this.notify();
  }

  /**
   * Make a task current: fetch dimensions and claim it by marking it
   * InProgress. A conflict here means another annotator grabbed it first,
   * so the caller moves on to the next task.
   */
  private async focus(task: TaskWire): Promise<boolean> {
    try {
      const meta = await this.api.imageMeta(task.record_id);
      let current = task;
      if (current.status === "Pending" || current.status === "Skipped") {
        current = await this.api.setStatus(current.record_id, "InProgress", current.revision);
      }
      this.task = current;
      this.meta = meta;
      this.revision = current.revision;
      this.boxes = current.boxes.map((b) => ({ x: b.x, y: b.y, w: b.w, h: b.h, label: b.label }));
      this.selected = this.boxes.length > 0 ? 0 : null;
      this.phase = "annotating";
      this.offline = false;
      this.notify();
      return true;
    } catch (err) {
      if (err instanceof ConflictError) {
        this.message = `${task.record_id} was taken by another annotator`;
        this.notify();
        return false;
      }
      this.fail(err);
      return true; // stay put; the banner explains
    }
  }

  // ----- box editing (image-space coordinates throughout) -----

  startDraft(pt: Point): void {
    if (this.phase !== "annotating" || !this.meta) return;
    this.draft = {
      origin: pt,
      box: { x: pt.x, y: pt.y, w: 0, h: 0, label: this.unusedLabel() },
    };
    this.selected = null;
    this.notify();
  }

  updateDraft(pt: Point): void {
    if (!this.draft || !this.meta) return;
    const rect = normalizeRect(this.draft.origin, pt);
    this.draft.box = clampBoxToImage({ ...this.draft.box, ...rect }, this.meta.width, this.meta.height);
    this.notify();
  }

  /** Keep the draft as a real box; discard accidental clicks. */
  commitDraft(): void {
    if (!this.draft) return;
    const box = this.draft.box;
    this.draft = null;
    if (box.w >= 3 && box.h >= 3) {
      this.boxes.push(box);
      this.selected = this.boxes.length - 1;
    }
    this.notify();
  }

  select(index: number | null): void {
    this.selected = index !== null && index >= 0 && index < this.boxes.length ? index : null;
    this.notify();
  }

  selectNext(): void {
    if (this.boxes.length === 0) return;
    this.selected = this.selected === null ? 0 : (this.selected + 1) % this.boxes.length;
    this.notify();
  }

  nudgeSelected(dx: number, dy: number): void {
    const box = this.selectedBox();
    if (!box || !this.meta) return;
    this.boxes[this.selected!] = clampBoxToImage(
      { ...box, x: box.x + dx, y: box.y + dy },
      this.meta.width,
      this.meta.height,
    );
    this.notify();
  }

  moveSelected(dx: number, dy: number): void {
    this.nudgeSelected(dx, dy);
  }

  resizeSelected(region: HitRegion, pt: Point): void {
    const box = this.selectedBox();
    if (!box || !this.meta) return;
    this.boxes[this.selected!] = clampBoxToImage(
      dragCorner(box, region, pt),
      this.meta.width,
      this.meta.height,
    );
    this.notify();
  }

  setLabelOnSelected(label: FingerLabel): void {
    const box = this.selectedBox();
    if (!box) return;
    this.boxes[this.selected!] = { ...box, label };
    this.notify();
  }

  cycleLabelOnSelected(): void {
    const box = this.selectedBox();
    if (!box) return;
    this.boxes[this.selected!] = { ...box, label: nextLabel(box.label) };
    this.notify();
  }

  deleteSelected(): void {
    if (this.selected === null) return;
    this.boxes.splice(this.selected, 1);
    this.selected = this.boxes.length > 0 ? Math.min(this.selected, this.boxes.length - 1) : null;
    this.notify();
  }

  // ----- submission and reconciliation -----

  /**
   * Validate locally, then submit at the tracked revision. Zero boxes never
   * reach the network. A 409 keeps both versions side by side.
   */
  async submit(): Promise<void> {
    if (this.inflight || !this.task || !this.meta || this.phase === "submitting") return;
    const snapped = this.boxes.map((b) => snapToPixels(b, this.meta!.width, this.meta!.height));
    this.problems = validateBoxes(snapped, this.meta.width, this.meta.height);
    if (this.problems.length > 0) {
      this.notify();
      return;
    }
    this.inflight = true;
    this.phase = "submitting";
    this.notify();
    try {
      const updated = await this.api.submitBoxes(
        this.task.record_id,
        snapped,
        this.revision,
        this.annotator,
      );
      this.queue[this.queueIndex] = updated;
      this.doneCount += 1;
      this.inflight = false;
      await this.advance();
    } catch (err) {
      this.inflight = false;
      if (err instanceof ConflictError) {
        await this.enterConflict();
        return;
      }
      this.phase = "annotating";
      this.fail(err);
    }
  }

  /** Refetch the server's version and hold both for the annotator. */
  private async enterConflict(): Promise<void> {
    try {
      const server = await this.api.getTask(this.task!.record_id);
      this.conflict = { mine: this.boxes.map((b) => ({ ...b })), theirs: server.boxes };
      this.revision = server.revision;
      this.task = server;
      this.phase = "conflict";
      this.message = "task changed on the server; pick a version";
      this.notify();
    } catch (err) {
      this.phase = "annotating";
      this.fail(err);
    }
  }

  /** Resubmit my boxes at the refreshed revision. */
  async keepMine(): Promise<void> {
    if (this.phase !== "conflict" || !this.conflict) return;
    this.boxes = this.conflict.mine.map((b) => ({ ...b }));
    this.conflict = null;
    this.phase = "annotating";
    this.message = "";
    await this.submit();
  }

  /** Adopt the server's submission and move on. */
  async acceptTheirs(): Promise<void> {
    if (this.phase !== "conflict") return;
    this.conflict = null;
    this.message = "";
    await this.advance();
  }

  /** Mark the current task Skipped and move on. */
  async skip(): Promise<void> {
    if (this.inflight || !this.task || this.phase !== "annotating") return;
    this.inflight = true;
    try {
      const updated = await this.api.setStatus(this.task.record_id, "Skipped", this.revision);
      this.queue[this.queueIndex] = updated;
      this.inflight = false;
      await this.advance();
    } catch (err) {
      this.inflight = false;
      if (err instanceof ConflictError) {
        await this.enterConflict();
        return;
      }
      this.fail(err);
    }
  }

  async exportAll(): Promise<void> {
    try {
      const result = await this.api.exportCrops();
      this.message = `exported ${result.created} fingertip crops`;
      this.offline = false;
    } catch (err) {
      this.fail(err);
      return;
    }
    this.notify();
  }

  // ----- helpers -----

  selectedBox(): CanvasBox | null {
    return this.selected === null ? null : (this.boxes[this.selected] ?? null);
  }

  /** First finger label not yet used, cycling when all four are taken. */
  private unusedLabel(): FingerLabel {
    for (const label of FINGER_LABELS) {
      if (!this.boxes.some((b) => b.label === label)) return label;
    }
    const last = this.boxes[this.boxes.length - 1];
    return nextLabel(last.label);
  }

  private fail(err: unknown): void {
    if (err instanceof OfflineError) {
      this.offline = true;
      this.message = "service unreachable";
    } else if (err instanceof ApiError) {
      this.message = `${err.body.code}: ${err.body.message}`;
    } else {
      this.message = String(err);
    }
    if (this.phase === "loading") this.phase = "idle";
    this.notify();
  }

  private notify(): void {
    this.onChange();
  }
}
