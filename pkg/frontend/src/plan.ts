/** Canonical weight-file layout: entry names, order, and expected shapes. */

export const CANONICAL_ENTRIES = [
  "c1.w", "c1.b",
  "dc1.w", "dc1.b",
  "dc2.w", "dc2.b",
  "dc3.w", "dc3.b",
  "se.reduce.w", "se.reduce.b",
  "se.expand.w", "se.expand.b",
  "c2.w", "c2.b",
  "c3.w", "c3.b",
  "c4.w", "c4.b",
  "c5.w", "c5.b",
] as const;

export type CanonicalName = (typeof CANONICAL_ENTRIES)[number];

// (inChannels, outChannels, kernel) per layer; dense-block inputs grow by
// 16 per layer and the attention bottleneck squeezes 64 channels to 4
const LAYERS: Record<string, [number, number, number]> = {
  c1: [1, 16, 3],
  dc1: [16, 16, 3],
  dc2: [32, 16, 3],
  dc3: [48, 16, 3],
  "se.reduce": [64, 4, 1],
  "se.expand": [4, 64, 1],
  c2: [64, 64, 3],
  c3: [64, 32, 3],
  c4: [32, 16, 3],
  c5: [16, 1, 3],
};

/** Shape each canonical entry has inside the weight file. */
export function canonicalShape(name: CanonicalName): number[] {
  const layer = name.slice(0, name.lastIndexOf("."));
  const [ci, co, k] = LAYERS[layer];
  return name.endsWith(".w") ? [co, ci, k, k] : [co];
}

export function isCanonical(name: string): name is CanonicalName {
  return (CANONICAL_ENTRIES as readonly string[]).includes(name);
}

export function shapesEqual(a: readonly number[], b: readonly number[]): boolean {
  return a.length === b.length && a.every((d, i) => d === b[i]);
}

export function elementCount(shape: readonly number[]): number {
  return shape.reduce((acc, d) => acc * d, 1);
}
