/**
 * Box overlay geometry. The service hands out pixel-space boxes but no
 * image dimensions (mock image refs are not fetchable), so the frame is
 * sized to the box itself with a margin and the overlay is positioned in
 * percentages. When a real image loads the same percentages still apply.
 */

import { BBox } from "./schema.js";

const MARGIN = 1.08;
const MIN_EXTENT = 64;

export interface BoxStyle {
  left: string;
  top: string;
  width: string;
  height: string;
  aspect: number;
}

export function overlayStyle(bbox: BBox): BoxStyle {
  const [x1, y1, x2, y2] = bbox;
  const viewW = Math.max(x2 * MARGIN, MIN_EXTENT);
  const viewH = Math.max(y2 * MARGIN, MIN_EXTENT);
  const pct = (v: number, total: number) => `${((v / total) * 100).toFixed(3)}%`;
  return {
    left: pct(x1, viewW),
    top: pct(y1, viewH),
    width: pct(x2 - x1, viewW),
    height: pct(y2 - y1, viewH),
    aspect: viewW / viewH,
  };
}
