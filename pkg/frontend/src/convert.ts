/**
 * Convert an externally trained checkpoint into the ".sfw" weight format.
 *
 * Usage:
 *   node dist/convert.js --manifest manifest.json --out weights.sfw
 *
 * The manifest names the source checkpoint (safetensors), the mapping from
 * source tensor names onto the canonical entries, and the expected shapes.
 * Any missing entry, shape mismatch or non-float32 tensor aborts the run
 * before anything is written; on success a shape-audit table is printed.
 */

import { readFileSync, writeFileSync } from "node:fs";
import { dirname, resolve } from "node:path";

import { Manifest, ManifestError, loadManifest } from "./manifest.js";
import { CANONICAL_ENTRIES, canonicalShape, elementCount } from "./plan.js";
import { Entry, WEIGHT_MAGIC, encodeArchive } from "./sfw.js";
import { CheckpointError, SourceTensor, readSafetensors } from "./safetensors.js";

export function convertCheckpoint(manifest: Manifest, manifestDir: string): {
  blob: Uint8Array;
  audit: string[];
} {
  const checkpointPath = resolve(manifestDir, manifest.source);
  const tensors = readSafetensors(new Uint8Array(readFileSync(checkpointPath)));

  const bySource = new Map(manifest.entries.map((e) => [e.target, e] as const));
  const entries: Entry[] = [];
  const audit: string[] = [];
  for (const target of CANONICAL_ENTRIES) {
    const mapping = bySource.get(target)!;
    const source: SourceTensor | undefined = tensors.get(mapping.source);
    if (source === undefined) {
      throw new CheckpointError(
        `checkpoint has no tensor ${JSON.stringify(mapping.source)} (needed for ${target})`);
    }
    if (source.dtype !== "F32") {
      throw new CheckpointError(
        `${mapping.source}: dtype ${source.dtype} unsupported; only float32 converts`);
    }
    if (source.shape.length !== mapping.shape.length
        || !source.shape.every((d, i) => d === mapping.shape[i])) {
      throw new CheckpointError(
        `${mapping.source}: checkpoint shape [${source.shape}] does not match ` +
        `the manifest's [${mapping.shape}]`);
    }
    const dims = canonicalShape(target);
    if (elementCount(source.shape) !== elementCount(dims)) {
      throw new CheckpointError(`${mapping.source}: element count mismatch for ${target}`);
    }
    // payload copied bit-exactly; only the declared dims change
    const bytes = source.bytes.slice();
    const data = new Float32Array(bytes.buffer, 0, bytes.length / 4);
    entries.push({ name: target, dims, data });
    audit.push(`${target.padEnd(15)} [${source.shape.join(", ")}] -> [${dims.join(", ")}]  ` +
               `${elementCount(dims)} values  from ${mapping.source}`);
  }
  return { blob: encodeArchive(WEIGHT_MAGIC, entries), audit };
}

function parseArgs(argv: string[]): { manifest?: string; out?: string } {
  const args: { manifest?: string; out?: string } = {};
  for (let i = 0; i < argv.length; i++) {
    switch (argv[i]) {
      case "--manifest":
        args.manifest = argv[++i];
        break;
      case "--out":
        args.out = argv[++i];
        break;
      default:
        throw new ManifestError(`unknown argument ${argv[i]}`);
    }
  }
  return args;
}

export function main(argv: string[]): number {
  let args;
  try {
    args = parseArgs(argv);
  } catch (err) {
    console.error(String(err));
    return 1;
  }
  if (!args.manifest || !args.out) {
    console.error("usage: convert --manifest manifest.json --out weights.sfw");
    return 1;
  }
  try {
    const manifest = loadManifest(args.manifest);
    const { blob, audit } = convertCheckpoint(manifest, dirname(resolve(args.manifest)));
    writeFileSync(args.out, blob);
    for (const line of audit) console.log(line);
    console.log(`wrote ${args.out} (${blob.length} bytes, ${CANONICAL_ENTRIES.length} entries)`);
    return 0;
  } catch (err) {
    console.error(String(err));
    return 2;
  }
}

if (process.argv[1] && process.argv[1].endsWith("convert.js")) {
  process.exit(main(process.argv.slice(2)));
}
