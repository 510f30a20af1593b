/**
 * Screen/image coordinate transforms and box arithmetic.
 *
 * The viewport is an affine map: screen = image * zoom + pan. Both
 * directions are exact inverses, so float round-trips are lossless; the
 * only quantisation happens when a box is snapped to integer image pixels
 * for submission, which moves any coordinate by at most 0.5 px.
 */

import type { CanvasBox, SubmitBox } from "./types.js";
import { MIN_BOX_SIDE } from "./types.js";

export interface Point {
  x: number;
  y: number;
}

export interface Viewport {
  zoom: number;
  panX: number;
  panY: number;
}

/** Largest zoom that fits the whole image, centred in the viewport. */
export function fitToViewport(
  imageW: number,
  imageH: number,
  viewW: number,
  viewH: number,
): Viewport {
  if (imageW <= 0 || imageH <= 0 || viewW <= 0 || viewH <= 0) {
    return { zoom: 1, panX: 0, panY: 0 };
  }
  const zoom = Math.min(viewW / imageW, viewH / imageH);
  return {
    zoom,
    panX: (viewW - imageW * zoom) / 2,
    panY: (viewH - imageH * zoom) / 2,
  };
}

export function imageToScreen(view: Viewport, pt: Point): Point {
  return { x: pt.x * view.zoom + view.panX, y: pt.y * view.zoom + view.panY };
}

export function screenToImage(view: Viewport, pt: Point): Point {
  return {
    x: (pt.x - view.panX) / view.zoom,
    y: (pt.y - view.panY) / view.zoom,
  };
}

/** Zoom about a fixed screen point so the pixel under the cursor stays put. */
export function zoomAt(view: Viewport, screenPt: Point, factor: number): Viewport {
  const zoom = Math.min(32, Math.max(0.05, view.zoom * factor));
  const anchor = screenToImage(view, screenPt);
  return {
    zoom,
    panX: screenPt.x - anchor.x * zoom,
    panY: screenPt.y - anchor.y * zoom,
  };
}

/** Axis-aligned rectangle from two drag corners, any direction. */
export function normalizeRect(a: Point, b: Point): { x: number; y: number; w: number; h: number } {
  const x = Math.min(a.x, b.x);
  const y = Math.min(a.y, b.y);
  return { x, y, w: Math.abs(a.x - b.x), h: Math.abs(a.y - b.y) };
}

/** Shift a box inside [0,w)x[0,h), shrinking only if it cannot fit. */
export function clampBoxToImage<T extends CanvasBox>(box: T, imageW: number, imageH: number): T {
  let { x, y, w, h } = box;
  w = Math.min(w, imageW);
  h = Math.min(h, imageH);
  x = Math.min(Math.max(x, 0), imageW - w);
  y = Math.min(Math.max(y, 0), imageH - h);
  return { ...box, x, y, w, h };
}

/**
 * Snap a float box to integer image pixels for submission. Edges are
 * rounded independently so no edge moves by more than 0.5 px, then the
 * minimum side is restored if rounding collapsed it.
 */
export function snapToPixels(box: CanvasBox, imageW: number, imageH: number): SubmitBox {
  let x0 = Math.round(box.x);
  let y0 = Math.round(box.y);
  let x1 = Math.round(box.x + box.w);
  let y1 = Math.round(box.y + box.h);
  if (x1 - x0 < MIN_BOX_SIDE) x1 = x0 + MIN_BOX_SIDE;
  if (y1 - y0 < MIN_BOX_SIDE) y1 = y0 + MIN_BOX_SIDE;
  if (x1 > imageW) {
    x1 = imageW;
    x0 = Math.min(x0, x1 - MIN_BOX_SIDE);
  }
  if (y1 > imageH) {
    y1 = imageH;
    y0 = Math.min(y0, y1 - MIN_BOX_SIDE);
  }
  x0 = Math.max(0, x0);
  y0 = Math.max(0, y0);
  return { x: x0, y: y0, w: x1 - x0, h: y1 - y0, label: box.label };
}

export type HitRegion = "inside" | "nw" | "ne" | "sw" | "se";

export interface Hit {
  index: number;
  region: HitRegion;
}

/**
 * Topmost box under an image-space point. Corner handles win over the
 * interior; their grab radius is given in image pixels (scale by 1/zoom so
 * the handle feels constant-size on screen).
 */
export function hitTest(boxes: readonly CanvasBox[], pt: Point, handleRadius: number): Hit | null {
  // Corners of every box are tried before any interior, so a handle stays
  // grabbable even when an overlapping box covers it.  Later boxes draw on
  // top, hence both passes walk the list back to front.
  for (let i = boxes.length - 1; i >= 0; i--) {
    const b = boxes[i];
    const corners: [HitRegion, Point][] = [
      ["nw", { x: b.x, y: b.y }],
      ["ne", { x: b.x + b.w, y: b.y }],
      ["sw", { x: b.x, y: b.y + b.h }],
      ["se", { x: b.x + b.w, y: b.y + b.h }],
    ];
    for (const [region, c] of corners) {
      if (Math.abs(pt.x - c.x) <= handleRadius && Math.abs(pt.y - c.y) <= handleRadius) {
        return { index: i, region };
      }
    }
  }
  for (let i = boxes.length - 1; i >= 0; i--) {
    const b = boxes[i];
    if (pt.x >= b.x && pt.x < b.x + b.w && pt.y >= b.y && pt.y < b.y + b.h) {
      return { index: i, region: "inside" };
    }
  }
  return null;
}

/** Move one corner of a box, keeping the opposite corner fixed. */
export function dragCorner(box: CanvasBox, region: HitRegion, pt: Point): CanvasBox {
  if (region === "inside") return box;
  const fixed: Point = {
    x: region === "nw" || region === "sw" ? box.x + box.w : box.x,
    y: region === "nw" || region === "ne" ? box.y + box.h : box.y,
  };
  const rect = normalizeRect(fixed, pt);
  return { ...box, ...rect };
}
