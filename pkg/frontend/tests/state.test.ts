/**
 * Session state machine against an in-memory fake service that enforces the
 * same write rules as the real one: revision check before validation,
 * submissions jump to Done, status transitions are restricted.
 */

import { describe, expect, it } from "vitest";

import { ApiError, ConflictError, OfflineError } from "../src/api.js";
import { AnnotatorSession } from "../src/state.js";
import { validateBoxes } from "../src/state.js";
import type { SubmitBox, TaskPage, TaskStatus, TaskWire } from "../src/types.js";
import { MIN_BOX_SIDE } from "../src/types.js";

const WIDTH = 200;
const HEIGHT = 120;

function conflict(message: string): ConflictError {
  return new ConflictError(409, { code: "revision_conflict", message, details: [] });
}

class FakeService {
  tasks = new Map<string, TaskWire>();
  submitCalls = 0;
  offline = false;
  lostClaims = new Set<string>();
  submitGate: Promise<void> | null = null;
  pageSize = 2;

  constructor(ids: string[]) {
    for (const id of ids) {
      this.tasks.set(id, { record_id: id, status: "Pending", boxes: [], revision: 0 });
    }
  }

  private must(id: string): TaskWire {
    const task = this.tasks.get(id);
    if (!task) throw new ApiError(404, { code: "task_not_found", message: id, details: [] });
    return task;
  }

  /** The service's submission rules: revision first, then validation. */
  trySubmit(id: string, boxes: SubmitBox[], rev: number, annotator: string): TaskWire {
    const task = this.must(id);
    if (rev !== task.revision) {
      throw conflict(`task ${id} is at revision ${task.revision}, submission expected ${rev}`);
    }
    const problems = validateBoxes(boxes, WIDTH, HEIGHT);
    if (problems.length > 0) {
      throw new ApiError(400, {
        code: "box_validation",
        message: `${problems.length} invalid box(es)`,
        details: problems.map((p) => p.message),
      });
    }
    const updated: TaskWire = {
      record_id: id,
      status: "Done",
      boxes: boxes.map((b) => ({ ...b, annotator, created_at: 1.0 })),
      revision: task.revision + 1,
    };
    this.tasks.set(id, updated);
    return updated;
  }

  tryStatus(id: string, status: TaskStatus, rev: number): TaskWire {
    const task = this.must(id);
    if (rev !== task.revision) {
      throw conflict(`task ${id} is at revision ${task.revision}, update expected ${rev}`);
    }
    const updated: TaskWire = { ...task, status, revision: task.revision + 1 };
    this.tasks.set(id, updated);
    return updated;
  }

  api() {
    const svc = this;
    const guard = () => {
      if (svc.offline) throw new OfflineError("connection refused");
    };
    return {
      async listTasks(status?: TaskStatus, cursor?: string): Promise<TaskPage> {
        guard();
        const all = [...svc.tasks.values()].filter((t) => !status || t.status === status);
        const start = cursor ? Number(cursor) : 0;
        const page = all.slice(start, start + svc.pageSize);
        const next = start + svc.pageSize < all.length ? String(start + svc.pageSize) : null;
        return { tasks: structuredClone(page), next_cursor: next };
      },
      async getTask(id: string): Promise<TaskWire> {
        guard();
        return structuredClone(svc.must(id));
      },
      async imageMeta(id: string) {
        guard();
        svc.must(id);
        return { record_id: id, width: WIDTH, height: HEIGHT, species: "Live", sensor: "phone" };
      },
      async submitBoxes(id: string, boxes: SubmitBox[], rev: number, annotator: string) {
        guard();
        svc.submitCalls += 1;
        if (svc.submitGate) await svc.submitGate;
        return structuredClone(svc.trySubmit(id, boxes, rev, annotator));
      },
      async setStatus(id: string, status: TaskStatus, rev: number) {
        guard();
        if (svc.lostClaims.has(id)) throw conflict(`task ${id} is at revision 1, update expected 0`);
        return structuredClone(svc.tryStatus(id, status, rev));
      },
      async exportCrops() {
        guard();
        const done = [...svc.tasks.values()].filter((t) => t.status === "Done");
        return { created: done.length, record_ids: done.map((t) => t.record_id) };
      },
    };
  }
}

async function startedSession(ids = ["hand0", "hand1", "hand2"]) {
  const service = new FakeService(ids);
  const session = new AnnotatorSession(service.api(), "tester");
  await session.start();
  return { service, session };
}

function drawBox(session: AnnotatorSession, x: number, y: number, w: number, h: number): void {
  session.startDraft({ x, y });
  session.updateDraft({ x: x + w, y: y + h });
  session.commitDraft();
}

describe("validateBoxes", () => {
  const ok: SubmitBox = { x: 10, y: 10, w: 30, h: 30, label: "Index" };

  it("empty submissions are a single clear problem", () => {
    const problems = validateBoxes([], WIDTH, HEIGHT);
    expect(problems).toHaveLength(1);
    expect(problems[0].index).toBeNull();
  });

  it("flags the offending box index", () => {
    const problems = validateBoxes(
      [ok, { x: 0, y: 0, w: MIN_BOX_SIDE - 1, h: 30, label: "Middle" }],
      WIDTH,
      HEIGHT,
    );
    expect(problems).toHaveLength(1);
    expect(problems[0].index).toBe(1);
  });

  it("exclusive edges: a box touching the far edge is legal", () => {
    const flush: SubmitBox = { x: WIDTH - 30, y: HEIGHT - 30, w: 30, h: 30, label: "Ring" };
    expect(validateBoxes([flush], WIDTH, HEIGHT)).toHaveLength(0);
    const over: SubmitBox = { ...flush, x: WIDTH - 29 };
    expect(validateBoxes([over], WIDTH, HEIGHT)).toHaveLength(1);
  });

  it("duplicate labels are rejected", () => {
    const problems = validateBoxes([ok, { ...ok, x: 60 }], WIDTH, HEIGHT);
    expect(problems.some((p) => p.message.includes("duplicate"))).toBe(true);
  });
});

describe("queue loading and claiming", () => {
  it("collects every pending page and claims the first task", async () => {
    const { service, session } = await startedSession();
    expect(session.queue.map((t) => t.record_id)).toEqual(["hand0", "hand1", "hand2"]);
    expect(session.phase).toBe("annotating");
    expect(session.task?.record_id).toBe("hand0");
    expect(service.tasks.get("hand0")?.status).toBe("InProgress");
  });

  it("a lost claim race moves on to the next task", async () => {
    const service = new FakeService(["hand0", "hand1"]);
    service.lostClaims.add("hand0");
    const session = new AnnotatorSession(service.api(), "tester");
    await session.start();
    expect(session.task?.record_id).toBe("hand1");
    expect(session.message).toContain("hand0");
  });

  it("an unreachable service shows the offline banner", async () => {
    const service = new FakeService(["hand0"]);
    service.offline = true;
    const session = new AnnotatorSession(service.api(), "tester");
    await session.start();
    expect(session.offline).toBe(true);
  });
});

describe("box editing", () => {
  it("drafts become labeled boxes, cycling through unused fingers", async () => {
    const { session } = await startedSession();
    drawBox(session, 10, 10, 40, 40);
    drawBox(session, 60, 10, 40, 40);
    expect(session.boxes.map((b) => b.label)).toEqual(["Index", "Middle"]);
    expect(session.selected).toBe(1);
  });

  it("accidental clicks never create boxes", async () => {
    const { session } = await startedSession();
    drawBox(session, 10, 10, 2, 2);
    expect(session.boxes).toHaveLength(0);
  });

  it("nudges clamp at the image border", async () => {
    const { session } = await startedSession();
    drawBox(session, 5, 5, 30, 30);
    session.nudgeSelected(-100, 0);
    expect(session.boxes[0].x).toBe(0);
    session.nudgeSelected(1000, 0);
    expect(session.boxes[0].x).toBe(WIDTH - 30);
  });

  it("labels can be set directly or cycled", async () => {
    const { session } = await startedSession();
    drawBox(session, 10, 10, 40, 40);
    session.setLabelOnSelected("Ring");
    expect(session.boxes[0].label).toBe("Ring");
    session.cycleLabelOnSelected();
    expect(session.boxes[0].label).toBe("Little");
    session.cycleLabelOnSelected();
    expect(session.boxes[0].label).toBe("Index");
  });

  it("delete keeps a sensible selection", async () => {
    const { session } = await startedSession();
    drawBox(session, 10, 10, 40, 40);
    drawBox(session, 60, 10, 40, 40);
    session.deleteSelected();
    expect(session.boxes).toHaveLength(1);
    expect(session.selected).toBe(0);
    session.deleteSelected();
    expect(session.selected).toBeNull();
  });
});

describe("submission", () => {
  it("zero boxes are blocked before any network call", async () => {
    const { service, session } = await startedSession();
    await session.submit();
    expect(session.problems[0].message).toContain("≥ 1 box");
    expect(service.submitCalls).toBe(0);
  });

  it("invalid boxes are blocked client-side with the index highlighted", async () => {
    const { service, session } = await startedSession();
    drawBox(session, 10, 10, 40, 40);
    drawBox(session, 80, 10, 40, 40);
    session.setLabelOnSelected("Index"); // duplicate of box 0
    await session.submit();
    expect(service.submitCalls).toBe(0);
    expect(session.problems.map((p) => p.index)).toContain(1);
    expect(session.phase).toBe("annotating");
  });

  it("success snaps to integer pixels, records the annotator, and advances", async () => {
    const { service, session } = await startedSession();
    drawBox(session, 10.3, 10.7, 40.2, 40.4);
    await session.submit();
    const stored = service.tasks.get("hand0")!;
    expect(stored.status).toBe("Done");
    expect(stored.boxes).toHaveLength(1);
    for (const b of stored.boxes) {
      expect(Number.isInteger(b.x) && Number.isInteger(b.y)).toBe(true);
      expect(Number.isInteger(b.w) && Number.isInteger(b.h)).toBe(true);
      expect(b.annotator).toBe("tester");
    }
    expect(session.task?.record_id).toBe("hand1");
    expect(session.doneCount).toBe(1);
  });

  it("at most one submission is ever in flight", async () => {
    const { service, session } = await startedSession();
    drawBox(session, 10, 10, 40, 40);
    let release!: () => void;
    service.submitGate = new Promise((resolve) => {
      release = resolve;
    });
    const first = session.submit();
    const second = session.submit();
    release();
    await Promise.all([first, second]);
    expect(service.submitCalls).toBe(1);
    expect(service.tasks.get("hand0")?.status).toBe("Done");
  });

  it("an offline submit keeps the boxes and raises the banner", async () => {
    const { service, session } = await startedSession();
    drawBox(session, 10, 10, 40, 40);
    service.offline = true;
    await session.submit();
    expect(session.offline).toBe(true);
    expect(session.phase).toBe("annotating");
    expect(session.boxes).toHaveLength(1);
    expect(service.tasks.get("hand0")?.status).toBe("InProgress");
  });
});

describe("conflict reconciliation", () => {
  async function conflicted() {
    const { service, session } = await startedSession();
    drawBox(session, 10, 10, 40, 40);
    // Another annotator lands a submission first (current revision is 1
    // after our claim), so ours is stale.
    service.trySubmit(
      "hand0",
      [{ x: 100, y: 10, w: 30, h: 30, label: "Ring" }],
      1,
      "rival",
    );
    await session.submit();
    return { service, session };
  }

  it("a stale submission keeps both versions and never overwrites silently", async () => {
    const { service, session } = await conflicted();
    expect(session.phase).toBe("conflict");
    expect(session.conflict?.mine).toHaveLength(1);
    expect(session.conflict?.theirs.map((b) => b.annotator)).toEqual(["rival"]);
    // The rival's submission is untouched on the server.
    expect(service.tasks.get("hand0")?.boxes[0].annotator).toBe("rival");
  });

  it("keep-mine resubmits at the refreshed revision and wins", async () => {
    const { service, session } = await conflicted();
    await session.keepMine();
    const stored = service.tasks.get("hand0")!;
    expect(stored.boxes.map((b) => b.annotator)).toEqual(["tester"]);
    expect(stored.revision).toBe(3);
    expect(session.task?.record_id).toBe("hand1");
  });

  it("take-theirs leaves the server version and moves on", async () => {
    const { service, session } = await conflicted();
    await session.acceptTheirs();
    expect(service.tasks.get("hand0")?.boxes[0].annotator).toBe("rival");
    expect(session.task?.record_id).toBe("hand1");
    expect(session.conflict).toBeNull();
  });
});

describe("skip and finish", () => {
  it("skip marks the task Skipped and advances", async () => {
    const { service, session } = await startedSession();
    await session.skip();
    expect(service.tasks.get("hand0")?.status).toBe("Skipped");
    expect(session.task?.record_id).toBe("hand1");
  });

  it("draining the queue finishes the session and export counts crops", async () => {
    const { service, session } = await startedSession(["hand0"]);
    drawBox(session, 10, 10, 40, 40);
    await session.submit();
    expect(session.phase).toBe("finished");
    await session.exportAll();
    expect(session.message).toBe("exported 1 fingertip crops");
    expect(service.submitCalls).toBe(1);
  });
});
