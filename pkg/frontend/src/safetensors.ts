/**
 * Minimal safetensors reader/writer (float32 tensors only).
 *
 * File layout: u64 little-endian header length, JSON header mapping tensor
 * names to {dtype, shape, data_offsets}, then the raw tensor buffer. Offsets
 * are relative to the end of the header.
 */

export interface SourceTensor {
  dtype: string;
  shape: number[];
  /** Raw little-endian bytes as stored. */
  bytes: Uint8Array;
}

export class CheckpointError extends Error {}

export function readSafetensors(blob: Uint8Array): Map<string, SourceTensor> {
  if (blob.length < 8) {
    throw new CheckpointError("checkpoint too short for a safetensors header");
  }
  const view = new DataView(blob.buffer, blob.byteOffset, blob.byteLength);
  const headerLength = Number(view.getBigUint64(0, true));
  if (8 + headerLength > blob.length) {
    throw new CheckpointError("declared header runs past the end of the file");
  }
  let header: Record<string, { dtype: string; shape: number[]; data_offsets: [number, number] }>;
  try {
    header = JSON.parse(new TextDecoder().decode(blob.subarray(8, 8 + headerLength)));
  } catch {
    throw new CheckpointError("header is not valid JSON");
  }
  const body = blob.subarray(8 + headerLength);
  const tensors = new Map<string, SourceTensor>();
  for (const [name, info] of Object.entries(header)) {
    if (name === "__metadata__") continue;
    const [begin, end] = info.data_offsets;
    if (begin < 0 || end > body.length || begin > end) {
      throw new CheckpointError(`tensor ${name}: offsets out of range`);
    }
    const size = info.shape.reduce((acc, d) => acc * d, 1);
    if (info.dtype === "F32" && end - begin !== 4 * size) {
      throw new CheckpointError(`tensor ${name}: payload size mismatch`);
    }
    tensors.set(name, { dtype: info.dtype, shape: info.shape, bytes: body.subarray(begin, end) });
  }
  return tensors;
}

/** Used by the test suite to fabricate source checkpoints. */
export function writeSafetensors(tensors: Map<string, { shape: number[]; data: Float32Array }>): Uint8Array {
  const header: Record<string, unknown> = {};
  let offset = 0;
  const payloads: Uint8Array[] = [];
  for (const [name, t] of tensors) {
    const bytes = new Uint8Array(t.data.buffer, t.data.byteOffset, t.data.byteLength).slice();
    header[name] = { dtype: "F32", shape: t.shape, data_offsets: [offset, offset + bytes.length] };
    offset += bytes.length;
    payloads.push(bytes);
  }
  const headerBytes = new TextEncoder().encode(JSON.stringify(header));
  const out = new Uint8Array(8 + headerBytes.length + offset);
  new DataView(out.buffer).setBigUint64(0, BigInt(headerBytes.length), true);
  out.set(headerBytes, 8);
  let pos = 8 + headerBytes.length;
  for (const payload of payloads) {
    out.set(payload, pos);
    pos += payload.length;
  }
  return out;
}
