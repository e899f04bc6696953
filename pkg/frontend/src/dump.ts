/**
 * Dump per-layer reference activations for cross-implementation parity.
 *
 * Usage:
 *   node dist/dump.js --weights weights.sfw --image image.pgm --out acts.sfa
 *
 * Runs this package's own forward pass over the converted weights and
 * writes the eight per-layer outputs (input, the four dense-block
 * activations, the attention gate, the encoder output and the decoder
 * reconstruction) with the same entry framing as the weight file.
 */

import { readFileSync, writeFileSync } from "node:fs";

import { ActivationSet, Tensor, forwardAll, weightsFromEntries } from "./forward.js";
import { readPgm } from "./pgm.js";
import { ACTIVATION_MAGIC, WEIGHT_MAGIC, decodeArchive, encodeArchive, Entry } from "./sfw.js";

export const ACTIVATION_ORDER: (keyof ActivationSet)[] = [
  "input", "x1", "x2", "x3", "x4", "seGate", "encoder", "decoder",
];

const ENTRY_NAMES: Record<keyof ActivationSet, string> = {
  input: "input", x1: "x1", x2: "x2", x3: "x3", x4: "x4",
  seGate: "se_gate", encoder: "encoder", decoder: "decoder",
};

export function activationEntries(acts: ActivationSet): Entry[] {
  return ACTIVATION_ORDER.map((key) => {
    const t: Tensor = acts[key];
    return { name: ENTRY_NAMES[key], dims: [1, t.c, t.h, t.w], data: t.data };
  });
}

function parseArgs(argv: string[]): Record<string, string> {
  const args: Record<string, string> = {};
  for (let i = 0; i < argv.length; i++) {
    const key = argv[i];
    if (!key.startsWith("--")) throw new Error(`unknown argument ${key}`);
    args[key.slice(2)] = argv[++i];
  }
  return args;
}

export function main(argv: string[]): number {
  let args: Record<string, string>;
  try {
    args = parseArgs(argv);
  } catch (err) {
    console.error(String(err));
    return 1;
  }
  if (!args.weights || !args.image || !args.out) {
    console.error("usage: dump --weights weights.sfw --image image.pgm --out acts.sfa");
    return 1;
  }
  try {
    const weights = weightsFromEntries(
      decodeArchive(new Uint8Array(readFileSync(args.weights)), WEIGHT_MAGIC));
    const image = readPgm(new Uint8Array(readFileSync(args.image)));
    const acts = forwardAll(weights, image);
    const blob = encodeArchive(ACTIVATION_MAGIC, activationEntries(acts));
    writeFileSync(args.out, blob);
    console.log(`wrote ${args.out} (${ACTIVATION_ORDER.length} entries, ` +
                `${image.w}x${image.h} input)`);
    return 0;
  } catch (err) {
    console.error(String(err));
    return 2;
  }
}

if (process.argv[1] && process.argv[1].endsWith("dump.js")) {
  process.exit(main(process.argv.slice(2)));
}
