/**
 * MTEN tensor files: magic "MTEN", u32 LE version (1), u8 dtype
 * (0 = float32, 1 = float64), u8 ndim in 1..8, ndim u64 LE dims, then the
 * row-major little-endian payload. Payload length must match the dims
 * exactly; readers enforce it.
 */

import { Buffer } from "node:buffer";
import * as fs from "node:fs";

export type MtenDtype = "f32" | "f64";

const MAGIC = Buffer.from([0x4d, 0x54, 0x45, 0x4e]);
const VERSION = 1;

export function encodeTensor(
  shape: number[],
  data: ArrayLike<number>,
  dtype: MtenDtype = "f32",
): Buffer {
  if (shape.length < 1 || shape.length > 8) {
    throw new Error(`tensor rank must be in 1..8, got ${shape.length}`);
  }
  const count = shape.reduce((a, b) => a * b, 1);
  if (shape.some((d) => !Number.isInteger(d) || d < 1)) {
    throw new Error(`tensor dimensions must be positive integers, got ${shape}`);
  }
  if (count !== data.length) {
    throw new Error(`shape ${shape} needs ${count} values, got ${data.length}`);
  }
  const itemSize = dtype === "f32" ? 4 : 8;
  const header = Buffer.alloc(4 + 4 + 1 + 1 + 8 * shape.length);
  MAGIC.copy(header, 0);
  header.writeUInt32LE(VERSION, 4);
  header.writeUInt8(dtype === "f32" ? 0 : 1, 8);
  header.writeUInt8(shape.length, 9);
  shape.forEach((dim, i) => header.writeBigUInt64LE(BigInt(dim), 10 + 8 * i));
  const payload = Buffer.alloc(count * itemSize);
  for (let i = 0; i < count; i++) {
    if (dtype === "f32") {
      payload.writeFloatLE(data[i], i * 4);
    } else {
      payload.writeDoubleLE(data[i], i * 8);
    }
  }
  return Buffer.concat([header, payload]);
}

export function writeTensor(
  path: string,
  shape: number[],
  data: ArrayLike<number>,
  dtype: MtenDtype = "f32",
): void {
  fs.writeFileSync(path, encodeTensor(shape, data, dtype));
}

export interface TensorData {
  shape: number[];
  data: Float64Array;
}

/** Reader counterpart, used by the tests to confirm bit-exact round trips. */
export function readTensor(path: string): TensorData {
  const raw = fs.readFileSync(path);
  if (raw.length < 10 || !raw.subarray(0, 4).equals(MAGIC)) {
    throw new Error(`${path}: not an MTEN tensor file`);
  }
  const version = raw.readUInt32LE(4);
  if (version !== VERSION) {
    throw new Error(`${path}: unsupported MTEN version ${version}`);
  }
  const dtypeCode = raw.readUInt8(8);
  const ndim = raw.readUInt8(9);
  if (ndim < 1 || ndim > 8) {
    throw new Error(`${path}: tensor rank ${ndim} outside 1..8`);
  }
  const shape: number[] = [];
  for (let i = 0; i < ndim; i++) {
    shape.push(Number(raw.readBigUInt64LE(10 + 8 * i)));
  }
  const count = shape.reduce((a, b) => a * b, 1);
  const offset = 10 + 8 * ndim;
  const itemSize = dtypeCode === 0 ? 4 : 8;
  if (raw.length - offset !== count * itemSize) {
    throw new Error(
      `${path}: payload is ${raw.length - offset} bytes, expected ${count * itemSize}`,
    );
  }
  const data = new Float64Array(count);
  for (let i = 0; i < count; i++) {
    data[i] = dtypeCode === 0 ? raw.readFloatLE(offset + 4 * i) : raw.readDoubleLE(offset + 8 * i);
  }
  return { shape, data };
}
