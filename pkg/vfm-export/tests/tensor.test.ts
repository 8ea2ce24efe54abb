import { mkdtempSync } from 'node:fs';
import { tmpdir } from 'node:os';
import { join } from 'node:path';
import { describe, expect, it } from 'vitest';

import {
  DTYPE_FLOAT32,
  DTYPE_INT32,
  decodeTensor,
  encodeTensor,
  readTensorFile,
  writeTensorFile,
} from '../src/tensor.js';

describe('portable tensor format', () => {
  it('writes the documented header layout', () => {
    const blob = encodeTensor({
      dtype: DTYPE_FLOAT32,
      dims: [2, 3],
      data: new Float32Array([0, 1, 2, 3, 4, 5]),
    });
    expect(blob.toString('ascii', 0, 4)).toBe('FUSS');
    expect(blob.readUInt32LE(4)).toBe(1); // version
    expect(blob.readUInt32LE(8)).toBe(0); // float32
    expect(blob.readUInt32LE(12)).toBe(2); // rank
    expect(Number(blob.readBigUInt64LE(16))).toBe(2);
    expect(Number(blob.readBigUInt64LE(24))).toBe(3);
    expect(blob.length).toBe(32 + 6 * 4);
    expect(blob.readFloatLE(32)).toBe(0);
    expect(blob.readFloatLE(32 + 20)).toBe(5);
  });

  it('round-trips byte-exactly', () => {
    const data = new Float32Array(24).map(() => Math.fround(Math.random() * 4 - 2));
    const first = encodeTensor({ dtype: DTYPE_FLOAT32, dims: [2, 3, 4], data });
    const second = encodeTensor(decodeTensor(first));
    expect(second.equals(first)).toBe(true);
  });

  it('round-trips int32 label maps', () => {
    const data = new Int32Array([0, 1, 2, 3, -5, 100]);
    const tensor = decodeTensor(encodeTensor({ dtype: DTYPE_INT32, dims: [2, 3], data }));
    expect(tensor.dtype).toBe(DTYPE_INT32);
    expect(Array.from(tensor.data)).toEqual(Array.from(data));
  });

  it('reads and writes files', () => {
    const dir = mkdtempSync(join(tmpdir(), 'tensor-'));
    const path = join(dir, 't.fuss');
    const data = new Float32Array([1.5, -2.25, 3.125]);
    writeTensorFile(path, { dtype: DTYPE_FLOAT32, dims: [3], data });
    const loaded = readTensorFile(path);
    expect(loaded.dims).toEqual([3]);
    expect(Array.from(loaded.data)).toEqual([1.5, -2.25, 3.125]);
  });

  it('rejects malformed blobs', () => {
    expect(() => decodeTensor(Buffer.from('NOPE0000000000000000'))).toThrow();
    const good = encodeTensor({ dtype: DTYPE_FLOAT32, dims: [2], data: new Float32Array(2) });
    expect(() => decodeTensor(good.subarray(0, good.length - 1))).toThrow(/size mismatch/);
    expect(() =>
      encodeTensor({ dtype: 9, dims: [1], data: new Float32Array(1) }),
    ).toThrow(/dtype/);
    expect(() =>
      encodeTensor({ dtype: DTYPE_FLOAT32, dims: [3], data: new Float32Array(2) }),
    ).toThrow(/payload/);
  });
});
