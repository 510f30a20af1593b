/**
 * Browser entry point: wires the session state machine to the canvas,
 * pointer, and keyboard. The service is the source of truth; nothing is
 * persisted client-side beyond the in-flight task.
 */

import { AnnotatorApi } from "./api.js";
import { drawScene, LABEL_COLORS } from "./canvas.js";
import { fitToViewport, hitTest, screenToImage, zoomAt } from "./geometry.js";
import type { HitRegion, Point, Viewport } from "./geometry.js";
import { keyToAction } from "./keyboard.js";
import { AnnotatorSession } from "./state.js";

type DragMode =
  | { kind: "draw" }
  | { kind: "move"; last: Point }
  | { kind: "resize"; region: HitRegion };

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing #${id}`);
  return node as T;
}

function main(): void {
  const canvas = el<HTMLCanvasElement>("canvas");
  const ctx = canvas.getContext("2d");
  if (!ctx) throw new Error("2d canvas unsupported");

  const api = new AnnotatorApi("");
  const annotator = new URLSearchParams(location.search).get("annotator") ?? "anonymous";
  const session = new AnnotatorSession(api, annotator, () => render());

  let view: Viewport = { zoom: 1, panX: 0, panY: 0 };
  let image: HTMLImageElement | null = null;
  let imageFor = "";
  let drag: DragMode | null = null;

  function resizeCanvas(): void {
    const stage = el<HTMLElement>("stage");
    canvas.width = stage.clientWidth;
    canvas.height = stage.clientHeight;
    if (session.meta) {
      view = fitToViewport(session.meta.width, session.meta.height, canvas.width, canvas.height);
    }
    render();
  }

  function loadImage(recordId: string): void {
    imageFor = recordId;
    image = new Image();
    image.onload = () => {
      if (imageFor === recordId) {
        view = fitToViewport(
          session.meta?.width ?? image!.naturalWidth,
          session.meta?.height ?? image!.naturalHeight,
          canvas.width,
          canvas.height,
        );
        render();
      }
    };
    image.src = api.imageUrl(recordId);
  }

  function render(): void {
    const meta = session.meta;
    if (session.task && session.task.record_id !== imageFor) {
      loadImage(session.task.record_id);
    }
    const badIndices = new Set<number>();
    for (const p of session.problems) if (p.index !== null) badIndices.add(p.index);

    drawScene(ctx!, {
      image: session.task && imageFor === session.task.record_id ? image : null,
      imageW: meta?.width ?? 0,
      imageH: meta?.height ?? 0,
      view,
      boxes: session.boxes,
      selected: session.selected,
      draft: session.draft?.box ?? null,
      theirs: session.conflict?.theirs ?? null,
      badIndices,
    });

    el("offline").style.display = session.offline ? "block" : "none";
    el("conflict").style.display = session.phase === "conflict" ? "block" : "none";
    el("finished").style.display = session.phase === "finished" ? "block" : "none";
    el("message").textContent = session.message;

    const pos = session.queueIndex + 1;
    el("status").textContent = session.task
      ? `task ${pos}/${session.queue.length} · ${session.task.record_id} · ` +
        `${meta?.species ?? "?"} · zoom ${(view.zoom * 100).toFixed(0)}%`
      : session.phase === "finished"
        ? `queue drained · ${session.doneCount} submitted`
        : "loading…";

    const list = el("boxes");
    list.innerHTML = "";
    session.boxes.forEach((b, i) => {
      const row = document.createElement("li");
      row.textContent = `${i + 1}. ${b.label} @ ${Math.round(b.x)},${Math.round(b.y)} ${Math.round(b.w)}×${Math.round(b.h)}`;
      row.style.color = LABEL_COLORS[b.label];
      if (i === session.selected) row.classList.add("selected");
      if (badIndices.has(i)) row.classList.add("invalid");
      row.onclick = () => session.select(i);
      list.appendChild(row);
    });

    const problems = el("problems");
    problems.innerHTML = "";
    for (const p of session.problems) {
      const row = document.createElement("li");
      row.textContent = p.index === null ? p.message : `box ${p.index + 1}: ${p.message}`;
      problems.appendChild(row);
    }
  }

  function pointerImage(ev: MouseEvent): Point {
    const rect = canvas.getBoundingClientRect();
    return screenToImage(view, { x: ev.clientX - rect.left, y: ev.clientY - rect.top });
  }

  canvas.addEventListener("mousedown", (ev) => {
    if (session.phase !== "annotating") return;
    const pt = pointerImage(ev);
    const hit = hitTest(session.boxes, pt, 6 / view.zoom);
    if (hit && hit.region === "inside") {
      session.select(hit.index);
      drag = { kind: "move", last: pt };
    } else if (hit) {
      session.select(hit.index);
      drag = { kind: "resize", region: hit.region };
    } else {
      drag = { kind: "draw" };
      session.startDraft(pt);
    }
  });

  canvas.addEventListener("mousemove", (ev) => {
    if (!drag) return;
    const pt = pointerImage(ev);
    if (drag.kind === "draw") {
      session.updateDraft(pt);
    } else if (drag.kind === "move") {
      session.moveSelected(pt.x - drag.last.x, pt.y - drag.last.y);
      drag.last = pt;
    } else {
      session.resizeSelected(drag.region, pt);
    }
  });

  window.addEventListener("mouseup", () => {
    if (drag?.kind === "draw") session.commitDraft();
    drag = null;
  });

  canvas.addEventListener("wheel", (ev) => {
    ev.preventDefault();
    const rect = canvas.getBoundingClientRect();
    const at = { x: ev.clientX - rect.left, y: ev.clientY - rect.top };
    view = zoomAt(view, at, ev.deltaY < 0 ? 1.2 : 1 / 1.2);
    render();
  });

  window.addEventListener("keydown", (ev) => {
    const action = keyToAction({
      key: ev.key,
      shiftKey: ev.shiftKey,
      targetTag: (ev.target as HTMLElement | null)?.tagName,
    });
    if (!action) return;
    ev.preventDefault();
    switch (action.kind) {
      case "nudge":
        session.nudgeSelected(action.dx, action.dy);
        break;
      case "label":
        session.setLabelOnSelected(action.label);
        break;
      case "cycle-label":
        session.cycleLabelOnSelected();
        break;
      case "submit":
        void session.submit();
        break;
      case "skip":
        void session.skip();
        break;
      case "delete":
        session.deleteSelected();
        break;
      case "select-next":
        session.selectNext();
        break;
      case "deselect":
        session.select(null);
        break;
      case "keep-mine":
        void session.keepMine();
        break;
      case "accept-theirs":
        void session.acceptTheirs();
        break;
    }
  });

  el("keep-mine").onclick = () => void session.keepMine();
  el("accept-theirs").onclick = () => void session.acceptTheirs();
  el("export").onclick = () => void session.exportAll();
  el("retry").onclick = () => void session.start();

  window.addEventListener("resize", resizeCanvas);
  resizeCanvas();
  void session.start();
}

main();
