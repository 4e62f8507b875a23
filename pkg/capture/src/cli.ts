#!/usr/bin/env node
/**
 * vtprune-capture --model <checkpoint dir> --out <dir> [--images a.png ...]
 *
 * Writes <out>/projector.safetensors always; with --images also writes
 * one <stem>.tokens.safetensors per image (and <stem>.norms.json with
 * --norms, for rank-correlation studies against engine sensitivities).
 */

import { promises as fs } from "node:fs";
import path from "node:path";
import process from "node:process";

import { captureProjector, captureTokens } from "./capture.js";
import { loadCheckpoint, UnsupportedArchitectureError } from "./model.js";

interface Args {
  model: string;
  out: string;
  images: string[];
  norms: boolean;
}

const USAGE =
  "usage: vtprune-capture --model <dir> --out <dir> [--images img...] [--norms]";

function parseArgs(argv: string[]): Args {
  const args: Args = { model: "", out: "", images: [], norms: false };
  let i = 0;
  while (i < argv.length) {
    const flag = argv[i];
    switch (flag) {
      case "--model":
        args.model = argv[++i] ?? "";
        break;
      case "--out":
        args.out = argv[++i] ?? "";
        break;
      case "--norms":
        args.norms = true;
        break;
      case "--images":
        i++;
        while (i < argv.length && !argv[i].startsWith("--")) args.images.push(argv[i++]);
        i--;
        break;
      case "--help":
      case "-h":
        console.log(USAGE);
        process.exit(0);
        break;
      default:
        throw new Error(`unknown flag ${flag}`);
    }
    i++;
  }
  if (!args.model || !args.out) throw new Error("both --model and --out are required");
  return args;
}

export async function main(argv: string[]): Promise<number> {
  let args: Args;
  try {
    args = parseArgs(argv);
  } catch (err) {
    console.error(`error: ${(err as Error).message}\n${USAGE}`);
    return 2;
  }
  if (argv.includes("--images") && args.images.length === 0) {
    console.error(`error: --images given without any image paths\n${USAGE}`);
    return 2;
  }
  try {
    await fs.mkdir(args.out, { recursive: true });
    const ckpt = await loadCheckpoint(args.model);
    const projPath = path.join(args.out, "projector.safetensors");
    await captureProjector(ckpt, projPath);
    console.log(
      `captured ${ckpt.projector.layers.length}-layer projector ` +
        `(${ckpt.projector.activation}) from ${ckpt.modelType} -> ${projPath}`,
    );
    if (args.images.length > 0) {
      const results = await captureTokens(ckpt, args.images, args.out, args.norms);
      const ok = results.filter((r) => r.outPath !== null);
      for (const r of ok) console.log(`captured ${r.nTokens} tokens -> ${r.outPath}`);
      if (ok.length === 0) {
        console.error("error: every image failed to process");
        return 1;
      }
    }
    return 0;
  } catch (err) {
    if (err instanceof UnsupportedArchitectureError) {
      console.error(`error: ${err.message}`);
      return 3;
    }
    console.error(`error: ${err}`);
    return 2;
  }
}

const invokedDirectly =
  process.argv[1] !== undefined &&
  import.meta.url === new URL(`file://${path.resolve(process.argv[1])}`).href;
if (invokedDirectly) {
  main(process.argv.slice(2)).then((code) => process.exit(code));
}
