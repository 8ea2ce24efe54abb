/** Synthetic test images: colored-region scenes in PPM with PGM class masks. */

import { mkdirSync, writeFileSync } from 'node:fs';
import { join } from 'node:path';
import { PNG } from 'pngjs';

export interface Region {
  x0: number;
  y0: number;
  x1: number;
  y1: number;
  color: [number, number, number];
  classId: number;
}

export function scenePixels(
  width: number,
  height: number,
  regions: Region[],
): { rgb: Uint8Array; labels: Uint8Array } {
  const rgb = new Uint8Array(width * height * 3);
  const labels = new Uint8Array(width * height);
  for (const region of regions) {
    for (let y = region.y0; y < region.y1; y++) {
      for (let x = region.x0; x < region.x1; x++) {
        const i = y * width + x;
        rgb[3 * i] = region.color[0];
        rgb[3 * i + 1] = region.color[1];
        rgb[3 * i + 2] = region.color[2];
        labels[i] = region.classId;
      }
    }
  }
  return { rgb, labels };
}

export function writePpm(path: string, width: number, height: number, rgb: Uint8Array): void {
  const header = Buffer.from(`P6\n${width} ${height}\n255\n`, 'ascii');
  writeFileSync(path, Buffer.concat([header, Buffer.from(rgb)]));
}

export function writePgm(path: string, width: number, height: number, gray: Uint8Array): void {
  const header = Buffer.from(`P5\n${width} ${height}\n255\n`, 'ascii');
  writeFileSync(path, Buffer.concat([header, Buffer.from(gray)]));
}

export function writePng(path: string, width: number, height: number, rgb: Uint8Array): void {
  const png = new PNG({ width, height });
  for (let i = 0; i < width * height; i++) {
    png.data[4 * i] = rgb[3 * i];
    png.data[4 * i + 1] = rgb[3 * i + 1];
    png.data[4 * i + 2] = rgb[3 * i + 2];
    png.data[4 * i + 3] = 255;
  }
  writeFileSync(path, PNG.sync.write(png));
}

const PALETTE: Array<[number, number, number]> = [
  [40, 40, 200],
  [220, 60, 40],
  [50, 200, 80],
  [230, 220, 60],
];

/**
 * Deterministic two-region scenes: a class-colored band over a background,
 * band position varying with the index. Every scene contains class 0 plus
 * one foreground class, mimicking object-over-background imagery.
 */
export function writeSceneFolder(
  dir: string,
  maskDir: string,
  count: number,
  size = 64,
): void {
  mkdirSync(dir, { recursive: true });
  mkdirSync(maskDir, { recursive: true });
  for (let i = 0; i < count; i++) {
    const fg = 1 + (i % (PALETTE.length - 1));
    const bandTop = Math.floor((size / 4) * (i % 3));
    const regions: Region[] = [
      { x0: 0, y0: 0, x1: size, y1: size, color: PALETTE[0], classId: 0 },
      {
        x0: Math.floor(size / 8),
        y0: bandTop,
        x1: size - Math.floor(size / 8),
        y1: Math.min(size, bandTop + Math.floor(size / 2)),
        color: PALETTE[fg],
        classId: fg,
      },
    ];
    const { rgb, labels } = scenePixels(size, size, regions);
    writePpm(join(dir, `scene-${String(i).padStart(3, '0')}.ppm`), size, size, rgb);
    writePgm(join(maskDir, `scene-${String(i).padStart(3, '0')}.pgm`), size, size, labels);
  }
}
