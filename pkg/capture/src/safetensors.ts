/**
 * Minimal safetensors container support: enough dtypes to read real
 * checkpoint shards (F16/BF16/F32/F64/I32/I64) and to write the float32
 * interchange files the pruning engine consumes.
 */

import { promises as fs } from "node:fs";

export type TensorData = Float32Array | Int32Array;

export interface Tensor {
  dtype: "F32" | "I32";
  shape: number[];
  data: TensorData;
}

export interface SafetensorsFile {
  tensors: Map<string, Tensor>;
  metadata: Record<string, string>;
}

interface HeaderEntry {
  dtype: string;
  shape: number[];
  data_offsets: [number, number];
}

const ITEM_SIZE: Record<string, number> = {
  F16: 2,
  BF16: 2,
  F32: 4,
  F64: 8,
  I32: 4,
  I64: 8,
};

function halfToFloat(bits: number): number {
  const sign = (bits & 0x8000) >> 15;
  const exp = (bits & 0x7c00) >> 10;
  const frac = bits & 0x03ff;
  let value: number;
  if (exp === 0) {
    value = frac * 2 ** -24;
  } else if (exp === 0x1f) {
    value = frac ? Number.NaN : Number.POSITIVE_INFINITY;
  } else {
    value = (1 + frac * 2 ** -10) * 2 ** (exp - 15);
  }
  return sign ? -value : value;
}

function decodeData(dtype: string, raw: Buffer, count: number): TensorData {
  switch (dtype) {
    case "F32": {
      const out = new Float32Array(count);
      for (let i = 0; i < count; i++) out[i] = raw.readFloatLE(4 * i);
      return out;
    }
    case "F64": {
      const out = new Float32Array(count);
      for (let i = 0; i < count; i++) out[i] = Math.fround(raw.readDoubleLE(8 * i));
      return out;
    }
    case "F16": {
      const out = new Float32Array(count);
      for (let i = 0; i < count; i++) out[i] = halfToFloat(raw.readUInt16LE(2 * i));
      return out;
    }
    case "BF16": {
      const out = new Float32Array(count);
      const view = new DataView(new ArrayBuffer(4));
      for (let i = 0; i < count; i++) {
        view.setUint32(0, raw.readUInt16LE(2 * i) << 16, false);
        out[i] = view.getFloat32(0, false);
      }
      return out;
    }
    case "I32": {
      const out = new Int32Array(count);
      for (let i = 0; i < count; i++) out[i] = raw.readInt32LE(4 * i);
      return out;
    }
    case "I64": {
      const out = new Int32Array(count);
      for (let i = 0; i < count; i++) {
        const v = raw.readBigInt64LE(8 * i);
        if (v > BigInt(2 ** 31 - 1) || v < BigInt(-(2 ** 31))) {
          throw new Error(`I64 value ${v} does not fit in 32 bits`);
        }
        out[i] = Number(v);
      }
      return out;
    }
    default:
      throw new Error(`unsupported safetensors dtype ${dtype}`);
  }
}

export async function readSafetensors(path: string): Promise<SafetensorsFile> {
  const blob = await fs.readFile(path);
  if (blob.length < 8) throw new Error(`${path}: truncated safetensors file`);
  const headLen = Number(blob.readBigUInt64LE(0));
  if (headLen <= 0 || 8 + headLen > blob.length) {
    throw new Error(`${path}: header length ${headLen} out of bounds`);
  }
  let header: Record<string, HeaderEntry | Record<string, string>>;
  try {
    header = JSON.parse(blob.subarray(8, 8 + headLen).toString("utf-8"));
  } catch (err) {
    throw new Error(`${path}: malformed safetensors header: ${err}`);
  }
  const data = blob.subarray(8 + headLen);
  const tensors = new Map<string, Tensor>();
  let metadata: Record<string, string> = {};
  for (const [name, entry] of Object.entries(header)) {
    if (name === "__metadata__") {
      metadata = entry as Record<string, string>;
      continue;
    }
    const info = entry as HeaderEntry;
    const itemSize = ITEM_SIZE[info.dtype];
    if (itemSize === undefined) {
      throw new Error(`${path}: unsupported dtype ${info.dtype} for ${name}`);
    }
    const count = info.shape.reduce((a, b) => a * b, 1);
    const [start, end] = info.data_offsets;
    if (start < 0 || end > data.length || end - start !== count * itemSize) {
      throw new Error(`${path}: inconsistent data_offsets for ${name}`);
    }
    tensors.set(name, {
      dtype: info.dtype === "I32" || info.dtype === "I64" ? "I32" : "F32",
      shape: info.shape,
      data: decodeData(info.dtype, data.subarray(start, end), count),
    });
  }
  return { tensors, metadata };
}

export async function writeSafetensors(
  path: string,
  tensors: Map<string, Tensor>,
  metadata?: Record<string, string>,
): Promise<void> {
  const header: Record<string, unknown> = {};
  if (metadata && Object.keys(metadata).length > 0) header.__metadata__ = metadata;
  const chunks: Buffer[] = [];
  let offset = 0;
  for (const [name, tensor] of tensors) {
    const count = tensor.shape.reduce((a, b) => a * b, 1);
    if (count !== tensor.data.length) {
      throw new Error(`tensor ${name}: shape does not match data length`);
    }
    const itemSize = tensor.dtype === "F32" ? 4 : 4;
    const raw = Buffer.alloc(count * itemSize);
    if (tensor.dtype === "F32") {
      for (let i = 0; i < count; i++) raw.writeFloatLE(tensor.data[i], 4 * i);
    } else {
      for (let i = 0; i < count; i++) raw.writeInt32LE(tensor.data[i], 4 * i);
    }
    header[name] = {
      dtype: tensor.dtype,
      shape: tensor.shape,
      data_offsets: [offset, offset + raw.length],
    };
    chunks.push(raw);
    offset += raw.length;
  }
  let head = Buffer.from(JSON.stringify(header), "utf-8");
  const pad = (8 - ((8 + head.length) % 8)) % 8;
  if (pad > 0) head = Buffer.concat([head, Buffer.alloc(pad, 0x20)]);
  const lenBuf = Buffer.alloc(8);
  lenBuf.writeBigUInt64LE(BigInt(head.length));
  await fs.writeFile(path, Buffer.concat([lenBuf, head, ...chunks]));
}
