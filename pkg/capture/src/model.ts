/**
 * Checkpoint loading: locate the multimodal projector inside a local
 * model directory and express it as an affine/activation stack.
 *
 * Supported layouts:
 *  - HF-style: config.json next to model.safetensors (or sharded files
 *    listed in model.safetensors.index.json). Projector tensors under
 *    "multi_modal_projector.linear_{i}" or "model.mm_projector.{i}".
 *  - synthetic-vlm: model.json describing a patch-embedding encoder plus
 *    the same projector tensor naming; used for tests and offline demos.
 */

import { promises as fs } from "node:fs";
import path from "node:path";

import type { Activation, AffineLayer, ProjectorSpec } from "./projector.js";
import { readSafetensors, type Tensor } from "./safetensors.js";

export class UnsupportedArchitectureError extends Error {}

export interface SyntheticEncoderSpec {
  imageSize: number;
  patchSize: number;
  dV: number;
  weight: Float32Array; // (dV, 3 * patchSize^2)
  bias: Float32Array;
}

export interface Checkpoint {
  kind: "hf" | "synthetic";
  projector: ProjectorSpec;
  encoder: SyntheticEncoderSpec | null;
  modelType: string;
}

const ACTIVATION_MAP: Record<string, Activation> = {
  gelu: "gelu_exact",
  gelu_exact: "gelu_exact",
  gelu_new: "gelu_tanh",
  gelu_fast: "gelu_tanh",
  gelu_pytorch_tanh: "gelu_tanh",
  gelu_tanh: "gelu_tanh",
  identity: "identity",
  linear: "identity",
};

function asLayer(weight: Tensor, bias: Tensor, name: string): AffineLayer {
  if (weight.shape.length !== 2 || bias.shape.length !== 1) {
    throw new UnsupportedArchitectureError(`${name}: expected 2-D weight and 1-D bias`);
  }
  const [outDim, inDim] = weight.shape;
  if (bias.shape[0] !== outDim) {
    throw new UnsupportedArchitectureError(`${name}: bias length != weight rows`);
  }
  return {
    weight: weight.data as Float32Array,
    bias: bias.data as Float32Array,
    inDim,
    outDim,
  };
}

function mapActivation(raw: string | undefined, fallback: Activation): Activation {
  if (raw === undefined) return fallback;
  const mapped = ACTIVATION_MAP[raw];
  if (mapped === undefined) {
    throw new UnsupportedArchitectureError(`unsupported projector activation ${raw}`);
  }
  return mapped;
}

/**
 * Pull the projector layers out of a tensor map. Two naming schemes:
 * "multi_modal_projector.linear_1..linear_L" (1-based, HF llava) and
 * "model.mm_projector.{0,2,4,...}" (torch Sequential with activations at
 * the odd slots).
 */
export function extractProjector(
  tensors: Map<string, Tensor>,
  activation: Activation,
): ProjectorSpec {
  const attention = [...tensors.keys()].filter(
    (k) =>
      (k.includes("projector") || k.includes("mm_projector")) &&
      /(q_proj|k_proj|v_proj|attn|attention|query|key|value)/.test(k),
  );
  if (attention.length > 0) {
    throw new UnsupportedArchitectureError(
      `attention-based projector is not expressible as an affine stack (found ${attention[0]})`,
    );
  }

  const layers: AffineLayer[] = [];
  for (let i = 1; tensors.has(`multi_modal_projector.linear_${i}.weight`); i++) {
    const w = tensors.get(`multi_modal_projector.linear_${i}.weight`)!;
    const b = tensors.get(`multi_modal_projector.linear_${i}.bias`);
    if (!b) {
      throw new UnsupportedArchitectureError(`multi_modal_projector.linear_${i} has no bias`);
    }
    layers.push(asLayer(w, b, `multi_modal_projector.linear_${i}`));
  }
  if (layers.length === 0) {
    for (let i = 0; tensors.has(`model.mm_projector.${i}.weight`); i += 2) {
      const w = tensors.get(`model.mm_projector.${i}.weight`)!;
      const b = tensors.get(`model.mm_projector.${i}.bias`);
      if (!b) {
        throw new UnsupportedArchitectureError(`model.mm_projector.${i} has no bias`);
      }
      layers.push(asLayer(w, b, `model.mm_projector.${i}`));
    }
  }
  if (layers.length === 0) {
    throw new UnsupportedArchitectureError(
      "no projector tensors found (expected multi_modal_projector.linear_* or model.mm_projector.*)",
    );
  }
  for (let i = 1; i < layers.length; i++) {
    if (layers[i].inDim !== layers[i - 1].outDim) {
      throw new UnsupportedArchitectureError("projector layer dimensions do not chain");
    }
  }
  return { layers, activation };
}

async function collectTensors(dir: string): Promise<Map<string, Tensor>> {
  const index = path.join(dir, "model.safetensors.index.json");
  const single = path.join(dir, "model.safetensors");
  const tensors = new Map<string, Tensor>();
  try {
    const doc = JSON.parse(await fs.readFile(index, "utf-8"));
    const shards = new Set<string>(Object.values(doc.weight_map as Record<string, string>));
    for (const shard of shards) {
      const file = await readSafetensors(path.join(dir, shard));
      for (const [k, v] of file.tensors) tensors.set(k, v);
    }
    return tensors;
  } catch {
    // no index: fall through to the single-file layout
  }
  const file = await readSafetensors(single);
  return file.tensors;
}

async function loadHf(dir: string, config: Record<string, unknown>): Promise<Checkpoint> {
  const tensors = await collectTensors(dir);
  const modelType = String(config.model_type ?? "unknown");
  const mmType = config.mm_projector_type as string | undefined;
  if (mmType !== undefined && !/^mlp\d+x_gelu$|^linear$/.test(mmType)) {
    throw new UnsupportedArchitectureError(`unsupported mm_projector_type ${mmType}`);
  }
  const rawAct =
    (config.projector_hidden_act as string | undefined) ??
    (mmType === "linear" ? "identity" : "gelu");
  const projector = extractProjector(tensors, mapActivation(rawAct, "gelu_exact"));
  return { kind: "hf", projector, encoder: null, modelType };
}

async function loadSynthetic(dir: string, spec: Record<string, unknown>): Promise<Checkpoint> {
  const weightsFile = path.join(dir, String(spec.weights ?? "model.safetensors"));
  const { tensors } = await readSafetensors(weightsFile);
  const projector = extractProjector(
    tensors,
    mapActivation(spec.activation as string | undefined, "gelu_tanh"),
  );
  const pe = tensors.get("vision_encoder.patch_embed.weight");
  const peBias = tensors.get("vision_encoder.patch_embed.bias");
  if (!pe || !peBias) {
    throw new UnsupportedArchitectureError("synthetic checkpoint is missing the patch embedding");
  }
  const imageSize = Number(spec.image_size);
  const patchSize = Number(spec.patch_size);
  if (!(imageSize > 0) || !(patchSize > 0) || imageSize % patchSize !== 0) {
    throw new Error("synthetic checkpoint: image_size must be a positive multiple of patch_size");
  }
  const dV = pe.shape[0];
  if (pe.shape[1] !== 3 * patchSize * patchSize) {
    throw new UnsupportedArchitectureError("patch embedding width != 3 * patch_size^2");
  }
  if (dV !== projector.layers[0].inDim) {
    throw new UnsupportedArchitectureError("encoder output dim != projector input dim");
  }
  return {
    kind: "synthetic",
    projector,
    encoder: {
      imageSize,
      patchSize,
      dV,
      weight: pe.data as Float32Array,
      bias: peBias.data as Float32Array,
    },
    modelType: "synthetic-vlm",
  };
}

export async function loadCheckpoint(dir: string): Promise<Checkpoint> {
  const syntheticPath = path.join(dir, "model.json");
  try {
    const spec = JSON.parse(await fs.readFile(syntheticPath, "utf-8"));
    if (spec.format === "synthetic-vlm") return loadSynthetic(dir, spec);
    throw new UnsupportedArchitectureError(`unknown model.json format ${spec.format}`);
  } catch (err) {
    if (err instanceof UnsupportedArchitectureError) throw err;
    // no model.json: try the HF layout
  }
  const config = JSON.parse(await fs.readFile(path.join(dir, "config.json"), "utf-8"));
  return loadHf(dir, config);
}
