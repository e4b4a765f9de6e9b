/**
 * Deterministic stub detector: a fixed color-blob rule.
 *
 * The raster is partitioned into 8x8 cells (edge cells may be smaller).
 * A cell whose mean color has a channel spread (max - min) of at least
 * SATURATION_FLOOR yields one detection: class = dominant channel
 * (0 red, 1 green, 2 blue), box = cell rectangle, confidence =
 * spread / 255 rounded to 4 decimals. Pure integer/IEEE math, so replies
 * replay byte-identically.
 */

import { Raster } from "./ppm.js";

export const STUB_CLASSES = ["red", "green", "blue"];
export const CELL = 8;
export const SATURATION_FLOOR = 60;

export interface Detection {
  class_id: number;
  box: [number, number, number, number];
  confidence: number;
}

export function detect(raster: Raster, threshold: number): Detection[] {
  const detections: Detection[] = [];
  for (let y0 = 0; y0 < raster.height; y0 += CELL) {
    for (let x0 = 0; x0 < raster.width; x0 += CELL) {
      const h = Math.min(CELL, raster.height - y0);
      const w = Math.min(CELL, raster.width - x0);
      const sums = [0, 0, 0];
      for (let y = y0; y < y0 + h; y += 1) {
        for (let x = x0; x < x0 + w; x += 1) {
          const base = (y * raster.width + x) * 3;
          sums[0] += raster.pixels[base];
          sums[1] += raster.pixels[base + 1];
          sums[2] += raster.pixels[base + 2];
        }
      }
      const count = w * h;
      const means = sums.map((s) => s / count);
      const spread = Math.max(...means) - Math.min(...means);
      if (spread < SATURATION_FLOOR) continue;
      const confidence = Math.round(Math.min(1, spread / 255) * 10000) / 10000;
      if (confidence < threshold) continue;
      const classId = means.indexOf(Math.max(...means));
      detections.push({
        class_id: classId,
        box: [x0, y0, w, h],
        confidence,
      });
    }
  }
  return detections;
}
