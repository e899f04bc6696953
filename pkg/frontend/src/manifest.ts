/**
 * Conversion manifest: which source tensor feeds which canonical entry.
 *
 * The mapping must be a bijection onto the canonical entry set and every
 * declared shape must match the network's channel plan. The source layout
 * has to be stated explicitly; anything but out-channel-first is an error,
 * never a silent fix.
 */

import { readFileSync } from "node:fs";

import { CANONICAL_ENTRIES, CanonicalName, canonicalShape, elementCount,
         isCanonical, shapesEqual } from "./plan.js";

export interface ManifestEntry {
  source: string;
  target: CanonicalName;
  shape: number[];
}

export interface Manifest {
  source: string;
  sourceLayout: string;
  entries: ManifestEntry[];
}

export class ManifestError extends Error {}

export function loadManifest(path: string): Manifest {
  let raw: unknown;
  try {
    raw = JSON.parse(readFileSync(path, "utf-8"));
  } catch (err) {
    throw new ManifestError(`cannot read manifest ${path}: ${err}`);
  }
  const obj = raw as { source?: string; source_layout?: string; entries?: unknown };
  if (typeof obj.source !== "string" || !Array.isArray(obj.entries)) {
    throw new ManifestError("manifest needs a 'source' path and an 'entries' list");
  }
  const layout = obj.source_layout ?? "out_ch_first";
  if (layout !== "out_ch_first") {
    throw new ManifestError(
      `source_layout ${JSON.stringify(layout)} is not supported; ` +
      "re-export the checkpoint out-channel-first instead of relying on a transpose");
  }
  const entries: ManifestEntry[] = [];
  for (const item of obj.entries) {
    const e = item as { source?: string; target?: string; shape?: number[] };
    if (typeof e.source !== "string" || typeof e.target !== "string" || !Array.isArray(e.shape)) {
      throw new ManifestError(`malformed entry: ${JSON.stringify(item)}`);
    }
    if (!isCanonical(e.target)) {
      throw new ManifestError(`unknown target entry ${JSON.stringify(e.target)}`);
    }
    entries.push({ source: e.source, target: e.target, shape: e.shape.map(Number) });
  }

  const targets = new Set(entries.map((e) => e.target));
  const missing = CANONICAL_ENTRIES.filter((name) => !targets.has(name));
  if (missing.length > 0) {
    throw new ManifestError(`manifest is missing entries: ${missing.join(", ")}`);
  }
  if (targets.size !== entries.length) {
    throw new ManifestError("duplicate target entries: the mapping must be a bijection");
  }
  const sources = new Set(entries.map((e) => e.source));
  if (sources.size !== entries.length) {
    throw new ManifestError("duplicate source entries: the mapping must be a bijection");
  }
  for (const entry of entries) {
    if (!shapeCompatible(entry.shape, entry.target)) {
      throw new ManifestError(
        `${entry.target}: declared shape [${entry.shape}] does not match the ` +
        `channel plan [${canonicalShape(entry.target)}]`);
    }
  }
  return { source: obj.source, sourceLayout: layout, entries };
}

/**
 * A source shape fits a canonical entry if it is identical, or a bias
 * stored as (1, co, 1, 1), or a 1x1-kernel layer stored as a rank-2
 * (co, ci) matrix: all byte-identical row-major layouts, never transposed.
 */
export function shapeCompatible(shape: readonly number[], target: CanonicalName): boolean {
  const canonical = canonicalShape(target);
  if (shapesEqual(shape, canonical)) return true;
  if (elementCount(shape) !== elementCount(canonical)) return false;
  if (target.endsWith(".b")) {
    return shapesEqual(shape, [1, canonical[0], 1, 1]);
  }
  if (canonical.length === 4 && canonical[2] === 1 && canonical[3] === 1) {
    return shapesEqual(shape, [canonical[0], canonical[1]]);
  }
  return false;
}
