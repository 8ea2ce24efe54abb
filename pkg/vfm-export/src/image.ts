/**
 * Minimal image loading: PNG (8-bit gray/RGB/RGBA) plus binary PPM/PGM, which
 * keeps test fixtures dependency-free. Pixels come back as RGB floats in [0, 1].
 */

import { readFileSync } from 'node:fs';
import { extname } from 'node:path';
import { PNG } from 'pngjs';

export interface RgbImage {
  width: number;
  height: number;
  /** RGB interleaved, length = width * height * 3, values in [0, 1] */
  data: Float64Array;
}

function fromRgba(width: number, height: number, rgba: Uint8Array): RgbImage {
  const data = new Float64Array(width * height * 3);
  for (let i = 0; i < width * height; i++) {
    data[3 * i] = rgba[4 * i] / 255;
    data[3 * i + 1] = rgba[4 * i + 1] / 255;
    data[3 * i + 2] = rgba[4 * i + 2] / 255;
  }
  return { width, height, data };
}

function parseNetpbm(blob: Buffer): RgbImage {
  const header: string[] = [];
  let pos = 0;
  // magic, width, height, maxval, each separated by whitespace or comments
  while (header.length < 4) {
    while (pos < blob.length && /\s/.test(String.fromCharCode(blob[pos]))) pos++;
    if (blob[pos] === 0x23) {
      while (pos < blob.length && blob[pos] !== 0x0a) pos++;
      continue;
    }
    let token = '';
    while (pos < blob.length && !/\s/.test(String.fromCharCode(blob[pos]))) {
      token += String.fromCharCode(blob[pos]);
      pos++;
    }
    header.push(token);
  }
  pos++; // single whitespace after maxval
  const [magic, w, h, maxval] = header;
  const width = parseInt(w, 10);
  const height = parseInt(h, 10);
  const scale = parseInt(maxval, 10);
  if (!Number.isFinite(width) || !Number.isFinite(height) || scale <= 0) {
    throw new Error('malformed netpbm header');
  }
  const data = new Float64Array(width * height * 3);
  if (magic === 'P6') {
    for (let i = 0; i < width * height; i++) {
      data[3 * i] = blob[pos + 3 * i] / scale;
      data[3 * i + 1] = blob[pos + 3 * i + 1] / scale;
      data[3 * i + 2] = blob[pos + 3 * i + 2] / scale;
    }
  } else if (magic === 'P5') {
    for (let i = 0; i < width * height; i++) {
      const value = blob[pos + i] / scale;
      data[3 * i] = data[3 * i + 1] = data[3 * i + 2] = value;
    }
  } else {
    throw new Error(`unsupported netpbm magic ${magic}`);
  }
  return { width, height, data };
}

export function loadImage(path: string): RgbImage {
  const ext = extname(path).toLowerCase();
  const blob = readFileSync(path);
  if (ext === '.png') {
    const png = PNG.sync.read(blob);
    return fromRgba(png.width, png.height, png.data);
  }
  if (ext === '.ppm' || ext === '.pgm') {
    return parseNetpbm(blob);
  }
  throw new Error(`unsupported image format ${ext || '(none)'}`);
}

/** Load a grayscale label map; pixel value = integer class id. */
export function loadLabelMap(path: string): { width: number; height: number; labels: Int32Array } {
  const image = loadImage(path);
  const labels = new Int32Array(image.width * image.height);
  for (let i = 0; i < labels.length; i++) {
    labels[i] = Math.round(image.data[3 * i] * 255);
  }
  return { width: image.width, height: image.height, labels };
}

export function resizeBilinear(image: RgbImage, width: number, height: number): RgbImage {
  const out = new Float64Array(width * height * 3);
  const sx = image.width / width;
  const sy = image.height / height;
  for (let y = 0; y < height; y++) {
    const fy = Math.min(image.height - 1, Math.max(0, (y + 0.5) * sy - 0.5));
    const y0 = Math.floor(fy);
    const y1 = Math.min(image.height - 1, y0 + 1);
    const wy = fy - y0;
    for (let x = 0; x < width; x++) {
      const fx = Math.min(image.width - 1, Math.max(0, (x + 0.5) * sx - 0.5));
      const x0 = Math.floor(fx);
      const x1 = Math.min(image.width - 1, x0 + 1);
      const wx = fx - x0;
      for (let c = 0; c < 3; c++) {
        const top =
          image.data[3 * (y0 * image.width + x0) + c] * (1 - wx) +
          image.data[3 * (y0 * image.width + x1) + c] * wx;
        const bottom =
          image.data[3 * (y1 * image.width + x0) + c] * (1 - wx) +
          image.data[3 * (y1 * image.width + x1) + c] * wx;
        out[3 * (y * width + x) + c] = top * (1 - wy) + bottom * wy;
      }
    }
  }
  return { width, height, data: out };
}

/** Nearest-neighbor downsample of a label map onto a patch grid. */
export function downsampleLabels(
  labels: Int32Array,
  width: number,
  height: number,
  gridWidth: number,
  gridHeight: number,
): Int32Array {
  const out = new Int32Array(gridWidth * gridHeight);
  for (let gy = 0; gy < gridHeight; gy++) {
    const y = Math.min(height - 1, Math.floor(((gy + 0.5) * height) / gridHeight));
    for (let gx = 0; gx < gridWidth; gx++) {
      const x = Math.min(width - 1, Math.floor(((gx + 0.5) * width) / gridWidth));
      out[gy * gridWidth + gx] = labels[y * width + x];
    }
  }
  return out;
}
