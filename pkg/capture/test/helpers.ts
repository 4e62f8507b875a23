/**
 * Test fixtures: a deterministic synthetic VLM checkpoint and PPM images,
 * all seeded so runs are reproducible.
 */

import { promises as fs } from "node:fs";
import path from "node:path";

import { writeSafetensors, type Tensor } from "../src/safetensors.js";

/** Tiny deterministic generator (LCG + Box-Muller) for fixture weights. */
export class SeededRandom {
  private state: bigint;

  constructor(seed: number) {
    this.state = BigInt(seed) & 0xffffffffffffffffn;
  }

  next(): number {
    this.state = (6364136223846793005n * this.state + 1442695040888963407n) & 0xffffffffffffffffn;
    return Number(this.state >> 11n) / 2 ** 53;
  }

  gauss(): number {
    const u1 = Math.max(this.next(), 1e-12);
    const u2 = this.next();
    return Math.sqrt(-2 * Math.log(u1)) * Math.cos(2 * Math.PI * u2);
  }

  floatArray(n: number, scale = 1): Float32Array {
    const out = new Float32Array(n);
    for (let i = 0; i < n; i++) out[i] = Math.fround(this.gauss() * scale);
    return out;
  }
}

export interface SyntheticOptions {
  imageSize?: number;
  patchSize?: number;
  dV?: number;
  dHidden?: number;
  dL?: number;
  activation?: string;
  seed?: number;
}

export async function writeSyntheticCheckpoint(
  dir: string,
  opts: SyntheticOptions = {},
): Promise<void> {
  const imageSize = opts.imageSize ?? 32;
  const patchSize = opts.patchSize ?? 8;
  const dV = opts.dV ?? 24;
  const dHidden = opts.dHidden ?? 20;
  const dL = opts.dL ?? 12;
  const rng = new SeededRandom(opts.seed ?? 1234);
  const patchDim = 3 * patchSize * patchSize;
  const tensors = new Map<string, Tensor>();
  tensors.set("vision_encoder.patch_embed.weight", {
    dtype: "F32",
    shape: [dV, patchDim],
    data: rng.floatArray(dV * patchDim, 1 / Math.sqrt(patchDim)),
  });
  tensors.set("vision_encoder.patch_embed.bias", {
    dtype: "F32",
    shape: [dV],
    data: rng.floatArray(dV, 0.05),
  });
  tensors.set("multi_modal_projector.linear_1.weight", {
    dtype: "F32",
    shape: [dHidden, dV],
    data: rng.floatArray(dHidden * dV, 1 / Math.sqrt(dV)),
  });
  tensors.set("multi_modal_projector.linear_1.bias", {
    dtype: "F32",
    shape: [dHidden],
    data: rng.floatArray(dHidden, 0.05),
  });
  tensors.set("multi_modal_projector.linear_2.weight", {
    dtype: "F32",
    shape: [dL, dHidden],
    data: rng.floatArray(dL * dHidden, 1 / Math.sqrt(dHidden)),
  });
  tensors.set("multi_modal_projector.linear_2.bias", {
    dtype: "F32",
    shape: [dL],
    data: rng.floatArray(dL, 0.05),
  });
  await fs.mkdir(dir, { recursive: true });
  await writeSafetensors(path.join(dir, "model.safetensors"), tensors);
  await fs.writeFile(
    path.join(dir, "model.json"),
    JSON.stringify(
      {
        format: "synthetic-vlm",
        image_size: imageSize,
        patch_size: patchSize,
        d_v: dV,
        d_l: dL,
        activation: opts.activation ?? "gelu_tanh",
        weights: "model.safetensors",
      },
      null,
      2,
    ),
  );
}

/** Binary P6 PPM with a deterministic per-pixel pattern. */
export async function writePpm(
  filePath: string,
  width: number,
  height: number,
  seed: number,
): Promise<void> {
  const rng = new SeededRandom(seed);
  const body = Buffer.alloc(width * height * 3);
  for (let i = 0; i < body.length; i++) body[i] = Math.floor(rng.next() * 256);
  const head = Buffer.from(`P6\n${width} ${height}\n255\n`, "latin1");
  await fs.writeFile(filePath, Buffer.concat([head, body]));
}

export function maxAbsDiff(a: Float32Array | number[], b: Float32Array | number[]): number {
  let worst = 0;
  for (let i = 0; i < a.length; i++) worst = Math.max(worst, Math.abs(Number(a[i]) - Number(b[i])));
  return worst;
}
