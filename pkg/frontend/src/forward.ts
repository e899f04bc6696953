/**
 * Reference forward pass over (1, c, h, w) float32 tensors.
 *
 * Written independently of any other implementation: direct per-pixel
 * loops, float64 accumulation, float32 storage. Slow but obvious; it only
 * runs on small parity images.
 */

import { Entry } from "./sfw.js";
import { CANONICAL_ENTRIES, canonicalShape, shapesEqual } from "./plan.js";

export interface Tensor {
  c: number;
  h: number;
  w: number;
  data: Float32Array; // row-major (c, h, w)
}

export class NetworkError extends Error {}

export function tensor(c: number, h: number, w: number): Tensor {
  return { c, h, w, data: new Float32Array(c * h * w) };
}

export interface Weights {
  byName: Map<string, { dims: number[]; data: Float32Array }>;
}

export function weightsFromEntries(entries: Entry[]): Weights {
  const byName = new Map<string, { dims: number[]; data: Float32Array }>();
  for (const entry of entries) {
    byName.set(entry.name, { dims: entry.dims, data: entry.data });
  }
  for (const name of CANONICAL_ENTRIES) {
    const got = byName.get(name);
    if (!got) throw new NetworkError(`weights are missing entry ${name}`);
    const expected = name.endsWith(".b")
      ? [canonicalShape(name)[0]]
      : canonicalShape(name);
    if (!shapesEqual(got.dims, expected)) {
      throw new NetworkError(
        `${name}: stored shape [${got.dims}] does not match the plan [${expected}]`);
    }
  }
  return { byName };
}

/** 2-D cross-correlation, stride 1, zero padding k>>1 (same size). */
export function conv2d(x: Tensor, kernel: { dims: number[]; data: Float32Array },
                       bias: Float32Array): Tensor {
  const [co, ci, kh, kw] = kernel.dims;
  if (ci !== x.c) {
    throw new NetworkError(`conv expects ${ci} input channels, got ${x.c}`);
  }
  const pad = kh >> 1;
  const out = tensor(co, x.h, x.w);
  const kdata = kernel.data;
  for (let o = 0; o < co; o++) {
    for (let y = 0; y < x.h; y++) {
      for (let xx = 0; xx < x.w; xx++) {
        let acc = bias[o];
        for (let i = 0; i < ci; i++) {
          for (let u = 0; u < kh; u++) {
            const yy = y + u - pad;
            if (yy < 0 || yy >= x.h) continue;
            for (let v = 0; v < kw; v++) {
              const xv = xx + v - pad;
              if (xv < 0 || xv >= x.w) continue;
              acc += kdata[((o * ci + i) * kh + u) * kw + v]
                   * x.data[(i * x.h + yy) * x.w + xv];
            }
          }
        }
        out.data[(o * x.h + y) * x.w + xx] = Math.fround(acc);
      }
    }
  }
  return out;
}

export function relu(x: Tensor): Tensor {
  const out = tensor(x.c, x.h, x.w);
  for (let i = 0; i < x.data.length; i++) {
    out.data[i] = x.data[i] > 0 ? x.data[i] : 0;
  }
  return out;
}

export function sigmoid(x: Tensor): Tensor {
  const out = tensor(x.c, x.h, x.w);
  for (let i = 0; i < x.data.length; i++) {
    const v = x.data[i];
    const z = Math.exp(-Math.abs(v));
    out.data[i] = Math.fround(v >= 0 ? 1 / (1 + z) : z / (1 + z));
  }
  return out;
}

export function globalAvgPool(x: Tensor): Tensor {
  const out = tensor(x.c, 1, 1);
  const area = x.h * x.w;
  for (let c = 0; c < x.c; c++) {
    let acc = 0;
    for (let i = 0; i < area; i++) acc += x.data[c * area + i];
    out.data[c] = Math.fround(acc / area);
  }
  return out;
}

export function channelConcat(parts: Tensor[]): Tensor {
  const c = parts.reduce((acc, p) => acc + p.c, 0);
  const { h, w } = parts[0];
  const out = tensor(c, h, w);
  let offset = 0;
  for (const part of parts) {
    if (part.h !== h || part.w !== w) {
      throw new NetworkError("concat operands disagree on spatial size");
    }
    out.data.set(part.data, offset);
    offset += part.data.length;
  }
  return out;
}

export function channelScale(x: Tensor, gate: Tensor): Tensor {
  if (gate.c !== x.c || gate.h !== 1 || gate.w !== 1) {
    throw new NetworkError("gate must be (c, 1, 1)");
  }
  const out = tensor(x.c, x.h, x.w);
  const area = x.h * x.w;
  for (let c = 0; c < x.c; c++) {
    const s = gate.data[c];
    for (let i = 0; i < area; i++) {
      out.data[c * area + i] = Math.fround(x.data[c * area + i] * s);
    }
  }
  return out;
}

export interface ActivationSet {
  input: Tensor;
  x1: Tensor;
  x2: Tensor;
  x3: Tensor;
  x4: Tensor;
  seGate: Tensor;
  encoder: Tensor;
  decoder: Tensor;
}

export function forwardAll(weights: Weights, image: Tensor): ActivationSet {
  if (image.c !== 1) {
    throw new NetworkError("network input must be a single-channel image");
  }
  const layer = (name: string, input: Tensor) => conv2d(
    input, weights.byName.get(`${name}.w`)!, weights.byName.get(`${name}.b`)!.data);

  const x1 = relu(layer("c1", image));
  const x2 = relu(layer("dc1", x1));
  const cat12 = channelConcat([x1, x2]);
  const x3 = relu(layer("dc2", cat12));
  const cat123 = channelConcat([cat12, x3]);
  const x4 = relu(layer("dc3", cat123));
  const dense = channelConcat([cat123, x4]);
  const pooled = globalAvgPool(dense);
  const squeezed = relu(layer("se.reduce", pooled));
  const seGate = sigmoid(layer("se.expand", squeezed));
  const encoder = channelScale(dense, seGate);

  let y = relu(layer("c2", encoder));
  y = relu(layer("c3", y));
  y = relu(layer("c4", y));
  const decoder = layer("c5", y);
  return { input: image, x1, x2, x3, x4, seGate, encoder, decoder };
}
