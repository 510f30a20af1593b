/**
 * Canvas rendering for the annotator: the image under the current viewport
 * transform, labeled boxes with corner handles, the in-progress draft, and
 * the server's boxes (dashed) during conflict review.
 */

import { imageToScreen } from "./geometry.js";
import type { Viewport } from "./geometry.js";
import type { BoxWire, CanvasBox, FingerLabel } from "./types.js";

export const LABEL_COLORS: Record<FingerLabel, string> = {
  Index: "#7aa2f7",
  Middle: "#9ece6a",
  Ring: "#e0af68",
  Little: "#f7768e",
};

const HANDLE_PX = 4;

export interface Scene {
  image: CanvasImageSource | null;
  imageW: number;
  imageH: number;
  view: Viewport;
  boxes: readonly CanvasBox[];
  selected: number | null;
  draft: CanvasBox | null;
  theirs: readonly BoxWire[] | null;
  badIndices: ReadonlySet<number>;
}

export function drawScene(ctx: CanvasRenderingContext2D, scene: Scene): void {
  const { width, height } = ctx.canvas;
  ctx.clearRect(0, 0, width, height);
  ctx.fillStyle = "#16161e";
  ctx.fillRect(0, 0, width, height);

  if (scene.image) {
    const origin = imageToScreen(scene.view, { x: 0, y: 0 });
    ctx.imageSmoothingEnabled = scene.view.zoom < 1;
    ctx.drawImage(
      scene.image,
      origin.x,
      origin.y,
      scene.imageW * scene.view.zoom,
      scene.imageH * scene.view.zoom,
    );
  }

  scene.boxes.forEach((box, i) => {
    drawBox(ctx, scene.view, box, {
      selected: i === scene.selected,
      invalid: scene.badIndices.has(i),
      dashed: false,
      tag: `${i + 1} ${box.label}`,
    });
  });

  if (scene.draft) {
    drawBox(ctx, scene.view, scene.draft, {
      selected: false,
      invalid: false,
      dashed: true,
      tag: scene.draft.label,
    });
  }

  for (const box of scene.theirs ?? []) {
    drawBox(ctx, scene.view, box, {
      selected: false,
      invalid: false,
      dashed: true,
      tag: `server ${box.label}`,
    });
  }
}

function drawBox(
  ctx: CanvasRenderingContext2D,
  view: Viewport,
  box: CanvasBox | BoxWire,
  opts: { selected: boolean; invalid: boolean; dashed: boolean; tag: string },
): void {
  const tl = imageToScreen(view, { x: box.x, y: box.y });
  const w = box.w * view.zoom;
  const h = box.h * view.zoom;
  const color = opts.invalid ? "#ff5555" : LABEL_COLORS[box.label as FingerLabel] ?? "#c0caf5";

  ctx.save();
  ctx.lineWidth = opts.selected ? 3 : 2;
  ctx.strokeStyle = color;
  ctx.setLineDash(opts.dashed ? [6, 4] : []);
  ctx.strokeRect(tl.x, tl.y, w, h);
  ctx.setLineDash([]);

  if (opts.selected) {
    ctx.fillStyle = color;
    for (const [cx, cy] of [
      [tl.x, tl.y],
      [tl.x + w, tl.y],
      [tl.x, tl.y + h],
      [tl.x + w, tl.y + h],
    ]) {
      ctx.fillRect(cx - HANDLE_PX, cy - HANDLE_PX, HANDLE_PX * 2, HANDLE_PX * 2);
    }
  }

  ctx.font = "12px ui-monospace, monospace";
  const tw = ctx.measureText(opts.tag).width;
  ctx.fillStyle = "rgba(0,0,0,0.65)";
  ctx.fillRect(tl.x, Math.max(0, tl.y - 17), tw + 8, 15);
  ctx.fillStyle = color;
  ctx.fillText(opts.tag, tl.x + 4, Math.max(11, tl.y - 5));
  ctx.restore();
}
