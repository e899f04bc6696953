import { describe, expect, it } from "vitest";

import { crc32 } from "../src/crc32.js";
import { ACTIVATION_MAGIC, FormatError, WEIGHT_MAGIC, decodeArchive,
         encodeArchive, Entry } from "../src/sfw.js";

function sampleEntries(): Entry[] {
  return [
    { name: "alpha", dims: [2, 3], data: new Float32Array([1, 2, 3, 4, 5, 6]) },
    { name: "beta.b", dims: [4], data: new Float32Array([-1, 0.5, 0, 9]) },
  ];
}

describe("crc32", () => {
  it("matches the reference check value", () => {
    const data = new TextEncoder().encode("123456789");
    expect(crc32(data)).toBe(0xcbf43926);
  });

  it("empty input is zero", () => {
    expect(crc32(new Uint8Array(0))).toBe(0);
  });
});

describe("archive round trip", () => {
  it("encodes and decodes entries bit-exactly", () => {
    const blob = encodeArchive(WEIGHT_MAGIC, sampleEntries());
    const back = decodeArchive(blob, WEIGHT_MAGIC);
    expect(back.length).toBe(2);
    expect(back[0].name).toBe("alpha");
    expect(back[0].dims).toEqual([2, 3]);
    expect(Array.from(back[0].data)).toEqual([1, 2, 3, 4, 5, 6]);
    expect(back[1].dims).toEqual([4]);
  });

  it("re-encoding is byte-identical", () => {
    const first = encodeArchive(ACTIVATION_MAGIC, sampleEntries());
    const second = encodeArchive(ACTIVATION_MAGIC, decodeArchive(first, ACTIVATION_MAGIC));
    expect(Buffer.from(second).equals(Buffer.from(first))).toBe(true);
  });

  it("rejects a wrong magic", () => {
    const blob = encodeArchive(WEIGHT_MAGIC, sampleEntries());
    expect(() => decodeArchive(blob, ACTIVATION_MAGIC)).toThrowError(/bad_magic/);
  });

  it("rejects a corrupted payload via the checksum", () => {
    const blob = encodeArchive(WEIGHT_MAGIC, sampleEntries());
    blob[20] ^= 0xff;
    expect(() => decodeArchive(blob, WEIGHT_MAGIC)).toThrowError(/bad_crc/);
  });

  it("rejects truncation", () => {
    const blob = encodeArchive(WEIGHT_MAGIC, sampleEntries());
    expect(() => decodeArchive(blob.subarray(0, blob.length - 10), WEIGHT_MAGIC))
      .toThrow(FormatError);
  });
});
