/**
 * Portable binary tensor format shared with the simulator.
 *
 * Layout, all little-endian:
 *   magic   4 bytes  "FUSS"
 *   version u32      currently 1
 *   dtype   u32      0 = float32, 1 = int32
 *   rank    u32
 *   dims    rank x u64
 *   payload row-major
 *
 * Encoding then decoding then encoding again must reproduce identical bytes.
 */

import { readFileSync, writeFileSync } from 'node:fs';

export const MAGIC = 'FUSS';
export const FORMAT_VERSION = 1;
export const DTYPE_FLOAT32 = 0;
export const DTYPE_INT32 = 1;

export interface Tensor {
  dtype: number;
  dims: number[];
  /** row-major payload; Float32Array for dtype 0, Int32Array for dtype 1 */
  data: Float32Array | Int32Array;
}

function elementCount(dims: number[]): number {
  return dims.reduce((a, b) => a * b, 1);
}

export function encodeTensor(tensor: Tensor): Buffer {
  const { dtype, dims, data } = tensor;
  if (dtype !== DTYPE_FLOAT32 && dtype !== DTYPE_INT32) {
    throw new Error(`unknown dtype code ${dtype}`);
  }
  if (elementCount(dims) !== data.length) {
    throw new Error(`dims ${JSON.stringify(dims)} do not match payload length ${data.length}`);
  }
  const header = Buffer.alloc(16 + 8 * dims.length);
  header.write(MAGIC, 0, 'ascii');
  header.writeUInt32LE(FORMAT_VERSION, 4);
  header.writeUInt32LE(dtype, 8);
  header.writeUInt32LE(dims.length, 12);
  dims.forEach((dim, i) => header.writeBigUInt64LE(BigInt(dim), 16 + 8 * i));
  const payload = Buffer.alloc(data.length * 4);
  if (dtype === DTYPE_FLOAT32) {
    for (let i = 0; i < data.length; i++) payload.writeFloatLE(data[i], 4 * i);
  } else {
    for (let i = 0; i < data.length; i++) payload.writeInt32LE(data[i], 4 * i);
  }
  return Buffer.concat([header, payload]);
}

export function decodeTensor(blob: Buffer): Tensor {
  if (blob.length < 16 || blob.toString('ascii', 0, 4) !== MAGIC) {
    throw new Error('not a portable tensor blob');
  }
  const version = blob.readUInt32LE(4);
  if (version !== FORMAT_VERSION) throw new Error(`unsupported format version ${version}`);
  const dtype = blob.readUInt32LE(8);
  const rank = blob.readUInt32LE(12);
  const dims: number[] = [];
  for (let i = 0; i < rank; i++) dims.push(Number(blob.readBigUInt64LE(16 + 8 * i)));
  const offset = 16 + 8 * rank;
  const count = elementCount(dims);
  if (blob.length !== offset + 4 * count) {
    throw new Error(`payload size mismatch (${blob.length} != ${offset + 4 * count})`);
  }
  const data = dtype === DTYPE_FLOAT32 ? new Float32Array(count) : new Int32Array(count);
  for (let i = 0; i < count; i++) {
    data[i] = dtype === DTYPE_FLOAT32 ? blob.readFloatLE(offset + 4 * i) : blob.readInt32LE(offset + 4 * i);
  }
  return { dtype, dims, data };
}

export function writeTensorFile(path: string, tensor: Tensor): void {
  writeFileSync(path, encodeTensor(tensor));
}

export function readTensorFile(path: string): Tensor {
  return decodeTensor(readFileSync(path));
}
