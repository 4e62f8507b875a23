/**
 * The extracted projection MLP and a reference forward pass.
 *
 * The forward mirrors the engine's evaluation: float64 math with results
 * rounded to float32 at every layer boundary, which is what a float32
 * inference stack stores. Used as the source-model oracle in round-trip
 * checks.
 */

export type Activation = "gelu_tanh" | "gelu_exact" | "identity";

export interface AffineLayer {
  weight: Float32Array; // row-major (outDim, inDim)
  bias: Float32Array;
  inDim: number;
  outDim: number;
}

export interface ProjectorSpec {
  layers: AffineLayer[];
  activation: Activation;
}

const SQRT_2_OVER_PI = Math.sqrt(2 / Math.PI);
const GELU_CUBIC = 0.044715;
const INV_SQRT_2 = 1 / Math.sqrt(2);

/** Abramowitz-Stegun 7.1.26 rational approximation; |error| < 1.5e-7. */
function erf(x: number): number {
  const sign = x < 0 ? -1 : 1;
  const ax = Math.abs(x);
  const t = 1 / (1 + 0.3275911 * ax);
  const poly =
    t *
    (0.254829592 +
      t * (-0.284496736 + t * (1.421413741 + t * (-1.453152027 + t * 1.061405429))));
  return sign * (1 - poly * Math.exp(-ax * ax));
}

function activate(kind: Activation, z: number): number {
  switch (kind) {
    case "gelu_tanh":
      return 0.5 * z * (1 + Math.tanh(SQRT_2_OVER_PI * (z + GELU_CUBIC * z ** 3)));
    case "gelu_exact":
      return 0.5 * z * (1 + erf(z * INV_SQRT_2));
    case "identity":
      return z;
  }
}

export function projectorInDim(spec: ProjectorSpec): number {
  return spec.layers[0].inDim;
}

export function projectorOutDim(spec: ProjectorSpec): number {
  return spec.layers[spec.layers.length - 1].outDim;
}

/** Forward one row vector through the MLP. */
export function forwardRow(spec: ProjectorSpec, x: Float32Array): Float32Array {
  let h = Float64Array.from(x);
  for (let li = 0; li < spec.layers.length; li++) {
    const { weight, bias, inDim, outDim } = spec.layers[li];
    if (h.length !== inDim) {
      throw new Error(`layer ${li}: input length ${h.length} != in_dim ${inDim}`);
    }
    const out = new Float64Array(outDim);
    for (let o = 0; o < outDim; o++) {
      let acc = 0;
      const base = o * inDim;
      for (let i = 0; i < inDim; i++) acc += weight[base + i] * h[i];
      out[o] = Math.fround(acc + bias[o]);
    }
    if (li < spec.layers.length - 1 && spec.activation !== "identity") {
      for (let o = 0; o < outDim; o++) out[o] = Math.fround(activate(spec.activation, out[o]));
    }
    h = out;
  }
  return Float32Array.from(h);
}

/** Forward a batch of rows (n, inDim) flattened row-major. */
export function forwardBatch(
  spec: ProjectorSpec,
  rows: Float32Array,
  n: number,
): Float32Array {
  const inDim = projectorInDim(spec);
  const outDim = projectorOutDim(spec);
  const out = new Float32Array(n * outDim);
  const row = new Float32Array(inDim);
  for (let r = 0; r < n; r++) {
    row.set(rows.subarray(r * inDim, (r + 1) * inDim));
    out.set(forwardRow(spec, row), r * outDim);
  }
  return out;
}
