export {
  DTYPE_FLOAT32,
  DTYPE_INT32,
  FORMAT_VERSION,
  MAGIC,
  decodeTensor,
  encodeTensor,
  readTensorFile,
  writeTensorFile,
} from './tensor.js';
export type { Tensor } from './tensor.js';
export { downsampleLabels, loadImage, loadLabelMap, resizeBilinear } from './image.js';
export type { RgbImage } from './image.js';
export { extractFeatures, loadModel } from './features.js';
export type { FeatureModel, PatchFeatures } from './features.js';
export { exportFolder } from './export.js';
export type { ExportManifestEntry, ExportOptions, ExportResult } from './export.js';
