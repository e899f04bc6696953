/** Binary PGM (P5, maxval 255) reader for parity images. */

import { Tensor, tensor } from "./forward.js";

export class ImageError extends Error {}

export function readPgm(blob: Uint8Array): Tensor {
  const isSpace = (b: number) => b === 0x20 || b === 0x09 || b === 0x0a || b === 0x0d;
  if (blob.length < 2 || blob[0] !== 0x50 || blob[1] !== 0x35) {
    throw new ImageError("not a binary PGM (P5) file");
  }
  let pos = 2;
  const fields: number[] = [];
  while (fields.length < 3) {
    while (pos < blob.length && isSpace(blob[pos])) pos++;
    if (pos < blob.length && blob[pos] === 0x23) { // '#' comment
      while (pos < blob.length && blob[pos] !== 0x0a) pos++;
      continue;
    }
    const start = pos;
    while (pos < blob.length && !isSpace(blob[pos])) pos++;
    if (start === pos) throw new ImageError("header ends early");
    const value = Number(new TextDecoder().decode(blob.subarray(start, pos)));
    if (!Number.isInteger(value)) throw new ImageError("malformed header token");
    fields.push(value);
  }
  const [width, height, maxval] = fields;
  if (width <= 0 || height <= 0) throw new ImageError(`bad size ${width}x${height}`);
  if (maxval !== 255) throw new ImageError(`only maxval 255 supported, got ${maxval}`);
  pos += 1; // single whitespace after maxval
  if (pos + width * height > blob.length) throw new ImageError("pixel data truncated");
  const img = tensor(1, height, width);
  for (let i = 0; i < width * height; i++) {
    img.data[i] = blob[pos + i] / 255.0;
  }
  return img;
}
