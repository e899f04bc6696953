/**
 * Binary tensor container used by the weight files (".sfw") and the
 * activation archives (".sfa"). Layout, little-endian:
 *
 *   magic     4 bytes
 *   u32       format version (1)
 *   u32       entry count
 *   entry*    u16 name length, UTF-8 name, u8 ndim, ndim x u32 dims,
 *             u8 dtype code (0 = float32), raw row-major payload
 *   u32       CRC32 of everything after the magic
 */

import { crc32 } from "./crc32.js";

export const WEIGHT_MAGIC = "SFW1";
export const ACTIVATION_MAGIC = "SFA1";
export const FORMAT_VERSION = 1;
export const DTYPE_REAL32 = 0;

export interface Entry {
  name: string;
  dims: number[];
  /** Row-major float32 payload. */
  data: Float32Array;
}

export class FormatError extends Error {
  constructor(public code: string, message: string) {
    super(`${code}: ${message}`);
  }
}

export function encodeArchive(magic: string, entries: Entry[]): Uint8Array {
  const encoder = new TextEncoder();
  const parts: Uint8Array[] = [];
  const head = new DataView(new ArrayBuffer(8));
  head.setUint32(0, FORMAT_VERSION, true);
  head.setUint32(4, entries.length, true);
  parts.push(new Uint8Array(head.buffer));
  for (const entry of entries) {
    const name = encoder.encode(entry.name);
    const fixed = new DataView(new ArrayBuffer(2 + name.length + 1 + 4 * entry.dims.length + 1));
    let pos = 0;
    fixed.setUint16(pos, name.length, true);
    pos += 2;
    new Uint8Array(fixed.buffer, pos, name.length).set(name);
    pos += name.length;
    fixed.setUint8(pos, entry.dims.length);
    pos += 1;
    for (const dim of entry.dims) {
      fixed.setUint32(pos, dim, true);
      pos += 4;
    }
    fixed.setUint8(pos, DTYPE_REAL32);
    parts.push(new Uint8Array(fixed.buffer));
    const payload = new Uint8Array(entry.data.buffer, entry.data.byteOffset,
                                   entry.data.byteLength);
    parts.push(payload.slice());
  }
  const bodyLength = parts.reduce((acc, part) => acc + part.length, 0);
  const out = new Uint8Array(4 + bodyLength + 4);
  out.set(encoder.encode(magic), 0);
  let offset = 4;
  for (const part of parts) {
    out.set(part, offset);
    offset += part.length;
  }
  const checksum = crc32(out.subarray(4, offset));
  new DataView(out.buffer).setUint32(offset, checksum, true);
  return out;
}

export function decodeArchive(blob: Uint8Array, magic: string): Entry[] {
  const decoder = new TextDecoder();
  if (blob.length < 4 || decoder.decode(blob.subarray(0, 4)) !== magic) {
    throw new FormatError("bad_magic", `expected magic ${magic}`);
  }
  if (blob.length < 12) {
    throw new FormatError("truncated", "missing header");
  }
  const view = new DataView(blob.buffer, blob.byteOffset, blob.byteLength);
  const stored = view.getUint32(blob.length - 4, true);
  const actual = crc32(blob.subarray(4, blob.length - 4));
  if (stored !== actual) {
    throw new FormatError("bad_crc", `checksum ${stored} != computed ${actual}`);
  }
  let pos = 4;
  const version = view.getUint32(pos, true);
  pos += 4;
  if (version !== FORMAT_VERSION) {
    throw new FormatError("bad_version", `unsupported version ${version}`);
  }
  const count = view.getUint32(pos, true);
  pos += 4;
  const end = blob.length - 4;
  const entries: Entry[] = [];
  const need = (n: number) => {
    if (pos + n > end) throw new FormatError("truncated", "file ends early");
  };
  for (let i = 0; i < count; i++) {
    need(2);
    const nameLength = view.getUint16(pos, true);
    pos += 2;
    need(nameLength);
    const name = decoder.decode(blob.subarray(pos, pos + nameLength));
    pos += nameLength;
    need(1);
    const ndim = view.getUint8(pos);
    pos += 1;
    const dims: number[] = [];
    for (let d = 0; d < ndim; d++) {
      need(4);
      dims.push(view.getUint32(pos, true));
      pos += 4;
    }
    need(1);
    const dtype = view.getUint8(pos);
    pos += 1;
    if (dtype !== DTYPE_REAL32) {
      throw new FormatError("bad_dtype", `${name}: dtype code ${dtype}`);
    }
    const size = dims.reduce((acc, d) => acc * d, 1);
    need(4 * size);
    const payload = blob.subarray(pos, pos + 4 * size);
    pos += 4 * size;
    const data = new Float32Array(size);
    data.set(new Float32Array(payload.slice().buffer));
    entries.push({ name, dims, data });
  }
  if (pos !== end) {
    throw new FormatError("bad_layout", `${end - pos} trailing bytes`);
  }
  return entries;
}
