/**
 * Capture orchestration: write the projector and per-image token dumps
 * in the exact safetensors naming the pruning engine loads with no
 * side-channel configuration.
 */

import { promises as fs } from "node:fs";
import path from "node:path";

import { encodeImage } from "./encoder.js";
import { decodeImage } from "./images.js";
import type { Checkpoint } from "./model.js";
import { UnsupportedArchitectureError } from "./model.js";
import { writeSafetensors, type Tensor } from "./safetensors.js";

export async function captureProjector(ckpt: Checkpoint, outPath: string): Promise<void> {
  const tensors = new Map<string, Tensor>();
  ckpt.projector.layers.forEach((layer, i) => {
    tensors.set(`proj.${i}.weight`, {
      dtype: "F32",
      shape: [layer.outDim, layer.inDim],
      data: layer.weight,
    });
    tensors.set(`proj.${i}.bias`, { dtype: "F32", shape: [layer.outDim], data: layer.bias });
  });
  await writeSafetensors(outPath, tensors, { activation: ckpt.projector.activation });
}

export interface TokenCaptureResult {
  image: string;
  outPath: string | null; // null when the image could not be processed
  normsPath: string | null;
  nTokens: number;
  error?: string;
}

function tokenNorms(tokens: Float32Array, nTokens: number, dV: number): number[] {
  const norms: number[] = [];
  for (let r = 0; r < nTokens; r++) {
    let acc = 0;
    for (let i = 0; i < dV; i++) acc += tokens[r * dV + i] ** 2;
    norms.push(Math.sqrt(acc));
  }
  return norms;
}

export async function captureTokens(
  ckpt: Checkpoint,
  imagePaths: string[],
  outDir: string,
  emitNorms = false,
): Promise<TokenCaptureResult[]> {
  if (ckpt.encoder === null) {
    throw new UnsupportedArchitectureError(
      `checkpoint kind ${ckpt.kind} has no runnable vision encoder; ` +
        "token capture needs a synthetic-vlm checkpoint",
    );
  }
  const results: TokenCaptureResult[] = [];
  for (const imagePath of imagePaths) {
    const stem = path.basename(imagePath).replace(/\.[^.]+$/, "");
    try {
      const image = await decodeImage(imagePath);
      const encoded = encodeImage(ckpt.encoder, image);
      const tensors = new Map<string, Tensor>();
      tensors.set("vision_tokens", {
        dtype: "F32",
        shape: [encoded.nTokens, encoded.dV],
        data: encoded.tokens,
      });
      if (encoded.patchIds) {
        tensors.set("patch_ids", {
          dtype: "I32",
          shape: [encoded.nTokens],
          data: encoded.patchIds,
        });
      }
      const outPath = path.join(outDir, `${stem}.tokens.safetensors`);
      await writeSafetensors(outPath, tensors);
      let normsPath: string | null = null;
      if (emitNorms) {
        normsPath = path.join(outDir, `${stem}.norms.json`);
        await fs.writeFile(
          normsPath,
          JSON.stringify(tokenNorms(encoded.tokens, encoded.nTokens, encoded.dV)) + "\n",
        );
      }
      results.push({ image: imagePath, outPath, normsPath, nTokens: encoded.nTokens });
    } catch (err) {
      console.warn(`warning: skipping ${imagePath}: ${err}`);
      results.push({
        image: imagePath,
        outPath: null,
        normsPath: null,
        nTokens: 0,
        error: String(err),
      });
    }
  }
  return results;
}
