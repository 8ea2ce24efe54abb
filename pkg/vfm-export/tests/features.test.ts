import { mkdtempSync } from 'node:fs';
import { tmpdir } from 'node:os';
import { join } from 'node:path';
import { describe, expect, it } from 'vitest';

import { extractFeatures, loadModel } from '../src/features.js';
import { downsampleLabels, loadImage, resizeBilinear } from '../src/image.js';
import { scenePixels, writePng, writePpm } from './fixtures.js';

function testImage(size = 224) {
  const { rgb } = scenePixels(size, size, [
    { x0: 0, y0: 0, x1: size, y1: size, color: [30, 30, 180], classId: 0 },
    { x0: 0, y0: 0, x1: size, y1: Math.floor(size / 2), color: [200, 60, 40], classId: 1 },
  ]);
  const dir = mkdtempSync(join(tmpdir(), 'img-'));
  const path = join(dir, 'scene.ppm');
  writePpm(path, size, size, rgb);
  return loadImage(path);
}

describe('image loading', () => {
  it('parses ppm and png identically', () => {
    const size = 32;
    const { rgb } = scenePixels(size, size, [
      { x0: 0, y0: 0, x1: size, y1: size, color: [10, 200, 50], classId: 0 },
    ]);
    const dir = mkdtempSync(join(tmpdir(), 'img-'));
    writePpm(join(dir, 'a.ppm'), size, size, rgb);
    writePng(join(dir, 'a.png'), size, size, rgb);
    const ppm = loadImage(join(dir, 'a.ppm'));
    const png = loadImage(join(dir, 'a.png'));
    expect(png.width).toBe(ppm.width);
    expect(Array.from(png.data)).toEqual(Array.from(ppm.data));
  });

  it('bilinear resize preserves constant regions', () => {
    const image = testImage(64);
    const resized = resizeBilinear(image, 32, 32);
    expect(resized.data[0]).toBeCloseTo(200 / 255, 10); // top half color
    const bottomLeft = 3 * (31 * 32 + 0);
    expect(resized.data[bottomLeft + 2]).toBeCloseTo(180 / 255, 10);
  });

  it('downsamples labels by nearest neighbor', () => {
    const labels = new Int32Array(16 * 16);
    for (let y = 8; y < 16; y++) for (let x = 0; x < 16; x++) labels[y * 16 + x] = 3;
    const grid = downsampleLabels(labels, 16, 16, 4, 4);
    expect(Array.from(grid.slice(0, 8))).toEqual(new Array(8).fill(0));
    expect(Array.from(grid.slice(8))).toEqual(new Array(8).fill(3));
  });
});

describe('patch feature extraction', () => {
  it('produces the declared patch-grid geometry', () => {
    // 224 px with 16 px patches gives a 14x14 grid
    const model = loadModel('patchstat-768');
    const features = extractFeatures(model, testImage(224), 224, 16);
    expect(features.gridHeight).toBe(14);
    expect(features.gridWidth).toBe(14);
    expect(features.dim).toBe(768);
    expect(features.data.length).toBe(14 * 14 * 768);
  });

  it('is deterministic across extractions', () => {
    const model = loadModel('patchstat-64');
    const image = testImage(96);
    const a = extractFeatures(model, image, 64, 16);
    const b = extractFeatures(loadModel('patchstat-64'), image, 64, 16);
    expect(Array.from(b.data)).toEqual(Array.from(a.data));
  });

  it('maps same-looking patches to identical features and distinct looks apart', () => {
    const model = loadModel('patchstat-32');
    const features = extractFeatures(model, testImage(64), 64, 16);
    const row = (gy: number, gx: number) =>
      features.data.slice((gy * 4 + gx) * 32, (gy * 4 + gx) * 32 + 32);
    const topA = row(0, 0);
    const topB = row(0, 3);
    const bottom = row(3, 0);
    expect(Array.from(topB)).toEqual(Array.from(topA)); // same flat color
    let diff = 0;
    for (let i = 0; i < 32; i++) diff += Math.abs(topA[i] - bottom[i]);
    expect(diff).toBeGreaterThan(0.1);
  });

  it('different model ids give different projections', () => {
    const image = testImage(64);
    const a = extractFeatures(loadModel('patchstat-32'), image, 64, 16);
    const b = extractFeatures(loadModel('patchstat-32x'.replace('x', '')), image, 64, 16);
    expect(Array.from(b.data)).toEqual(Array.from(a.data)); // same id, same output
    const c = extractFeatures(loadModel('patchstat-33'), image, 64, 16);
    expect(c.dim).toBe(33);
  });

  it('rejects unknown model ids and bad geometry', () => {
    expect(() => loadModel('dino-vit-base')).toThrow(/unknown model/);
    const model = loadModel('patchstat-16');
    expect(() => model.extract(testImage(50), 16)).toThrow(/divisible/);
  });
});
