/**
 * Frozen patch-feature backbones.
 *
 * The registry is keyed by a model identifier string. The built-in "patchstat"
 * family computes handcrafted per-patch statistics (color moments, gradient
 * energy, color and luminance histograms) and projects them to the declared
 * embedding dimension with a projection matrix seeded by the model id, so
 * exports are deterministic and semantically similar patches land close
 * together in feature space. No downloaded weights are required; a real
 * pretrained backbone can be registered under its own id as a drop-in.
 */

import type { RgbImage } from './image.js';
import { resizeBilinear } from './image.js';
import { makeGaussian, makeRng } from './prng.js';

export interface PatchFeatures {
  gridWidth: number;
  gridHeight: number;
  dim: number;
  /** row-major (gridHeight, gridWidth, dim) */
  data: Float32Array;
}

export interface FeatureModel {
  id: string;
  dim: number;
  extract(image: RgbImage, patchSize: number): PatchFeatures;
}

const DESCRIPTOR_DIM = 24;

function luminance(r: number, g: number, b: number): number {
  return 0.2126 * r + 0.7152 * g + 0.0722 * b;
}

function patchDescriptor(
  image: RgbImage,
  x0: number,
  y0: number,
  size: number,
): Float64Array {
  const desc = new Float64Array(DESCRIPTOR_DIM);
  const sums = [0, 0, 0];
  const squares = [0, 0, 0];
  let gradX = 0;
  let gradY = 0;
  const lumaHist = new Float64Array(8);
  const colorHist = new Float64Array(8);
  const count = size * size;
  for (let dy = 0; dy < size; dy++) {
    for (let dx = 0; dx < size; dx++) {
      const x = x0 + dx;
      const y = y0 + dy;
      const i = 3 * (y * image.width + x);
      const r = image.data[i];
      const g = image.data[i + 1];
      const b = image.data[i + 2];
      sums[0] += r; sums[1] += g; sums[2] += b;
      squares[0] += r * r; squares[1] += g * g; squares[2] += b * b;
      const luma = luminance(r, g, b);
      lumaHist[Math.min(7, Math.floor(luma * 8))] += 1;
      const bin = (r >= 0.5 ? 4 : 0) + (g >= 0.5 ? 2 : 0) + (b >= 0.5 ? 1 : 0);
      colorHist[bin] += 1;
      if (dx + 1 < size) {
        const j = 3 * (y * image.width + x + 1);
        gradX += Math.abs(luminance(image.data[j], image.data[j + 1], image.data[j + 2]) - luma);
      }
      if (dy + 1 < size) {
        const j = 3 * ((y + 1) * image.width + x);
        gradY += Math.abs(luminance(image.data[j], image.data[j + 1], image.data[j + 2]) - luma);
      }
    }
  }
  for (let c = 0; c < 3; c++) {
    const mean = sums[c] / count;
    desc[c] = mean;
    desc[3 + c] = Math.sqrt(Math.max(0, squares[c] / count - mean * mean));
  }
  desc[6] = gradX / count;
  desc[7] = gradY / count;
  for (let k = 0; k < 8; k++) desc[8 + k] = lumaHist[k] / count;
  for (let k = 0; k < 8; k++) desc[16 + k] = colorHist[k] / count;
  return desc;
}

function makeProjection(modelId: string, dim: number): Float64Array {
  const gaussian = makeGaussian(makeRng(`vfm-export:${modelId}`));
  const matrix = new Float64Array(dim * DESCRIPTOR_DIM);
  const scale = 1 / Math.sqrt(DESCRIPTOR_DIM);
  for (let i = 0; i < matrix.length; i++) matrix[i] = gaussian() * scale;
  return matrix;
}

class PatchStatModel implements FeatureModel {
  readonly id: string;
  readonly dim: number;
  private readonly projection: Float64Array;

  constructor(id: string, dim: number) {
    this.id = id;
    this.dim = dim;
    this.projection = makeProjection(id, dim);
  }

  extract(image: RgbImage, patchSize: number): PatchFeatures {
    if (image.width % patchSize !== 0 || image.height % patchSize !== 0) {
      throw new Error(
        `image ${image.width}x${image.height} is not divisible into ${patchSize}px patches`,
      );
    }
    const gridWidth = image.width / patchSize;
    const gridHeight = image.height / patchSize;
    const data = new Float32Array(gridWidth * gridHeight * this.dim);
    for (let gy = 0; gy < gridHeight; gy++) {
      for (let gx = 0; gx < gridWidth; gx++) {
        const desc = patchDescriptor(image, gx * patchSize, gy * patchSize, patchSize);
        const base = (gy * gridWidth + gx) * this.dim;
        for (let d = 0; d < this.dim; d++) {
          let value = 0;
          for (let k = 0; k < DESCRIPTOR_DIM; k++) {
            value += this.projection[d * DESCRIPTOR_DIM + k] * desc[k];
          }
          data[base + d] = Math.fround(value);
        }
      }
    }
    return { gridWidth, gridHeight, dim: this.dim, data };
  }
}

/** Resolve a model id; "patchstat-<dim>" is built in ("patchstat" = 768). */
export function loadModel(modelId: string): FeatureModel {
  if (modelId === 'patchstat') return new PatchStatModel(modelId, 768);
  const match = /^patchstat-(\d+)$/.exec(modelId);
  if (match) {
    const dim = parseInt(match[1], 10);
    if (dim < 1 || dim > 8192) throw new Error(`unreasonable feature dim ${dim}`);
    return new PatchStatModel(modelId, dim);
  }
  throw new Error(`unknown model id '${modelId}' (expected patchstat[-<dim>])`);
}

export function extractFeatures(
  model: FeatureModel,
  image: RgbImage,
  resize: number,
  patchSize: number,
): PatchFeatures {
  const square = resizeBilinear(image, resize, resize);
  return model.extract(square, patchSize);
}
