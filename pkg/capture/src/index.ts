export { captureProjector, captureTokens } from "./capture.js";
export { encodeImage } from "./encoder.js";
export { decodeImage } from "./images.js";
export {
  extractProjector,
  loadCheckpoint,
  UnsupportedArchitectureError,
} from "./model.js";
export type { Checkpoint, SyntheticEncoderSpec } from "./model.js";
export { forwardBatch, forwardRow } from "./projector.js";
export type { Activation, AffineLayer, ProjectorSpec } from "./projector.js";
export { readSafetensors, writeSafetensors } from "./safetensors.js";
export type { SafetensorsFile, Tensor } from "./safetensors.js";
