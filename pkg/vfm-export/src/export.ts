/**
 * Folder export: one feature tensor per image, optional downsampled masks,
 * and the dataset manifest the simulator consumes.
 */

import { existsSync, mkdirSync, readdirSync, writeFileSync } from 'node:fs';
import { basename, extname, join } from 'node:path';

import { downsampleLabels, loadImage, loadLabelMap } from './image.js';
import { extractFeatures, loadModel } from './features.js';
import { DTYPE_FLOAT32, DTYPE_INT32, writeTensorFile } from './tensor.js';

const IMAGE_EXTENSIONS = new Set(['.png', '.ppm', '.pgm']);

export interface ExportOptions {
  imagesDir: string;
  outDir: string;
  modelId: string;
  masksDir?: string;
  resize: number;
  patchSize: number;
}

export interface ExportManifestEntry {
  source: string;
  features: string;
  mask?: string;
  grid: [number, number];
  dim: number;
  model: string;
}

export interface ExportResult {
  entries: ExportManifestEntry[];
  manifestPath: string;
  datasetPath: string;
  skipped: string[];
}

function listImages(dir: string): string[] {
  return readdirSync(dir)
    .filter((name) => IMAGE_EXTENSIONS.has(extname(name).toLowerCase()))
    .sort();
}

function findMask(masksDir: string, imageName: string): string | null {
  const stem = imageName.slice(0, imageName.length - extname(imageName).length);
  for (const ext of IMAGE_EXTENSIONS) {
    const candidate = join(masksDir, stem + ext);
    if (existsSync(candidate)) return candidate;
  }
  return null;
}

export function exportFolder(options: ExportOptions): ExportResult {
  const { imagesDir, outDir, modelId, masksDir, resize, patchSize } = options;
  if (resize % patchSize !== 0) {
    throw new Error(`resize ${resize} must be a multiple of the patch size ${patchSize}`);
  }
  const model = loadModel(modelId); // unknown model aborts before any IO
  const names = listImages(imagesDir);
  if (names.length === 0) {
    throw new Error(`no readable images (.png/.ppm/.pgm) in ${imagesDir}`);
  }
  mkdirSync(outDir, { recursive: true });

  const entries: ExportManifestEntry[] = [];
  const scenes: Array<Record<string, unknown>> = [];
  const skipped: string[] = [];
  let numClasses = 0;

  for (const name of names) {
    const stem = basename(name, extname(name));
    let features;
    try {
      const image = loadImage(join(imagesDir, name));
      features = extractFeatures(model, image, resize, patchSize);
    } catch (error) {
      console.warn(`skipping ${name}: ${(error as Error).message}`);
      skipped.push(name);
      continue;
    }
    const featureFile = `${stem}.features.fuss`;
    writeTensorFile(join(outDir, featureFile), {
      dtype: DTYPE_FLOAT32,
      dims: [features.gridHeight, features.gridWidth, features.dim],
      data: features.data,
    });
    const entry: ExportManifestEntry = {
      source: join(imagesDir, name),
      features: featureFile,
      grid: [features.gridHeight, features.gridWidth],
      dim: features.dim,
      model: model.id,
    };
    const scene: Record<string, unknown> = {
      scene_id: stem,
      features: featureFile,
      domain_id: 0,
    };
    if (masksDir) {
      const maskPath = findMask(masksDir, name);
      if (maskPath) {
        const map = loadLabelMap(maskPath);
        const grid = downsampleLabels(
          map.labels, map.width, map.height, features.gridWidth, features.gridHeight,
        );
        const maskFile = `${stem}.mask.fuss`;
        writeTensorFile(join(outDir, maskFile), {
          dtype: DTYPE_INT32,
          dims: [features.gridHeight, features.gridWidth],
          data: grid,
        });
        entry.mask = maskFile;
        scene.mask = maskFile;
        for (const label of grid) numClasses = Math.max(numClasses, label + 1);
      } else {
        console.warn(`no mask found for ${name}`);
      }
    }
    entries.push(entry);
    scenes.push(scene);
  }
  if (entries.length === 0) {
    throw new Error('every image failed to export');
  }

  const manifestPath = join(outDir, 'export_manifest.json');
  writeFileSync(manifestPath, JSON.stringify({ model: model.id, entries }, null, 2));
  const datasetPath = join(outDir, 'dataset.json');
  writeFileSync(
    datasetPath,
    JSON.stringify({ schema_version: 1, num_classes: numClasses, scenes }, null, 2),
  );
  return { entries, manifestPath, datasetPath, skipped };
}
