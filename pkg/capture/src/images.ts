/**
 * Image decoding for the capture pipeline: PNG (via pngjs) and binary
 * PPM/PGM (P6/P5), which keeps test fixtures dependency-free.
 */

import { promises as fs } from "node:fs";
import { PNG } from "pngjs";

export interface RgbImage {
  width: number;
  height: number;
  pixels: Uint8Array; // row-major RGB triples
}

function decodePnm(blob: Buffer, path: string): RgbImage {
  const text = blob.subarray(0, 256).toString("latin1");
  const magic = text.slice(0, 2);
  if (magic !== "P6" && magic !== "P5") {
    throw new Error(`${path}: unsupported PNM magic ${magic}`);
  }
  // header: magic, width, height, maxval, separated by whitespace/comments
  const fields: number[] = [];
  let pos = 2;
  while (fields.length < 3) {
    const ch = String.fromCharCode(blob[pos]);
    if (ch === "#") {
      while (blob[pos] !== 0x0a) pos++;
      pos++;
    } else if (/\s/.test(ch)) {
      pos++;
    } else {
      let num = "";
      while (!/\s/.test(String.fromCharCode(blob[pos]))) {
        num += String.fromCharCode(blob[pos]);
        pos++;
      }
      fields.push(Number(num));
    }
  }
  pos++; // single whitespace after maxval
  const [width, height, maxval] = fields;
  if (!(width > 0) || !(height > 0) || maxval !== 255) {
    throw new Error(`${path}: bad PNM header (need maxval 255)`);
  }
  const pixels = new Uint8Array(width * height * 3);
  if (magic === "P6") {
    const body = blob.subarray(pos, pos + width * height * 3);
    if (body.length !== width * height * 3) throw new Error(`${path}: truncated P6 body`);
    pixels.set(body);
  } else {
    const body = blob.subarray(pos, pos + width * height);
    if (body.length !== width * height) throw new Error(`${path}: truncated P5 body`);
    for (let i = 0; i < body.length; i++) {
      pixels[3 * i] = pixels[3 * i + 1] = pixels[3 * i + 2] = body[i];
    }
  }
  return { width, height, pixels };
}

function decodePng(blob: Buffer): RgbImage {
  const png = PNG.sync.read(blob);
  const pixels = new Uint8Array(png.width * png.height * 3);
  for (let i = 0; i < png.width * png.height; i++) {
    pixels[3 * i] = png.data[4 * i];
    pixels[3 * i + 1] = png.data[4 * i + 1];
    pixels[3 * i + 2] = png.data[4 * i + 2];
  }
  return { width: png.width, height: png.height, pixels };
}

const PNG_MAGIC = Buffer.from([0x89, 0x50, 0x4e, 0x47]);

export async function decodeImage(path: string): Promise<RgbImage> {
  const blob = await fs.readFile(path);
  if (blob.subarray(0, 4).equals(PNG_MAGIC)) return decodePng(blob);
  if (blob[0] === 0x50 /* 'P' */) return decodePnm(blob, path);
  throw new Error(`${path}: unrecognized image format (PNG and P5/P6 PNM supported)`);
}
