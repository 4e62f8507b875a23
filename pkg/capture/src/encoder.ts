/**
 * The synthetic vision encoder: tiles the input image, splits each tile
 * into patches, and linearly embeds each patch into a d_v-dimensional
 * token. Tokens are captured exactly here, immediately before the
 * projector; multi-tile inputs carry one patch id per token.
 */

import type { RgbImage } from "./images.js";
import type { SyntheticEncoderSpec } from "./model.js";

export interface EncodedTokens {
  tokens: Float32Array; // (nTokens, dV) row-major
  nTokens: number;
  dV: number;
  patchIds: Int32Array | null; // null for single-tile inputs
}

function embedPatch(
  spec: SyntheticEncoderSpec,
  image: RgbImage,
  x0: number,
  y0: number,
  out: Float32Array,
  offset: number,
): void {
  const ps = spec.patchSize;
  const flat = new Float64Array(3 * ps * ps);
  let k = 0;
  for (let y = y0; y < y0 + ps; y++) {
    for (let x = x0; x < x0 + ps; x++) {
      // pixels outside the image pad as black
      const inside = x < image.width && y < image.height;
      const base = 3 * (y * image.width + x);
      flat[k++] = inside ? image.pixels[base] / 255 : 0;
      flat[k++] = inside ? image.pixels[base + 1] / 255 : 0;
      flat[k++] = inside ? image.pixels[base + 2] / 255 : 0;
    }
  }
  const inDim = flat.length;
  for (let o = 0; o < spec.dV; o++) {
    let acc = 0;
    const base = o * inDim;
    for (let i = 0; i < inDim; i++) acc += spec.weight[base + i] * flat[i];
    out[offset + o] = Math.fround(acc + spec.bias[o]);
  }
}

export function encodeImage(spec: SyntheticEncoderSpec, image: RgbImage): EncodedTokens {
  const s = spec.imageSize;
  const tilesX = Math.max(1, Math.ceil(image.width / s));
  const tilesY = Math.max(1, Math.ceil(image.height / s));
  const grid = s / spec.patchSize;
  const tokensPerTile = grid * grid;
  const nTiles = tilesX * tilesY;
  const nTokens = nTiles * tokensPerTile;
  const tokens = new Float32Array(nTokens * spec.dV);
  const patchIds = nTiles > 1 ? new Int32Array(nTokens) : null;
  let row = 0;
  for (let ty = 0; ty < tilesY; ty++) {
    for (let tx = 0; tx < tilesX; tx++) {
      const tile = ty * tilesX + tx;
      for (let py = 0; py < grid; py++) {
        for (let px = 0; px < grid; px++) {
          embedPatch(
            spec,
            image,
            tx * s + px * spec.patchSize,
            ty * s + py * spec.patchSize,
            tokens,
            row * spec.dV,
          );
          if (patchIds) patchIds[row] = tile;
          row++;
        }
      }
    }
  }
  return { tokens, nTokens, dV: spec.dV, patchIds };
}
