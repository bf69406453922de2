import * as fs from "node:fs";
import * as path from "node:path";
import { describe, expect, it } from "vitest";

import { encodeTensor, readTensor, writeTensor } from "../src/mten.js";
import { pythonSnippet, tempDir } from "./helpers.js";

describe("mten", () => {
  it("writes the magic and header bytes", () => {
    const buf = encodeTensor([2, 2], [1, 0, 0, 1], "f64");
    expect([...buf.subarray(0, 4)]).toEqual([0x4d, 0x54, 0x45, 0x4e]);
    expect(buf.readUInt32LE(4)).toBe(1); // version
    expect(buf.readUInt8(8)).toBe(1); // dtype f64
    expect(buf.readUInt8(9)).toBe(2); // ndim
    expect(Number(buf.readBigUInt64LE(10))).toBe(2);
    expect(buf.length).toBe(10 + 16 + 4 * 8);
  });

  it("round-trips f64 exactly", () => {
    const dir = tempDir("mten-");
    const file = path.join(dir, "t.mten");
    const values = [1.0, 0.1, -2.5, Math.PI, 1e-300, 3e20];
    writeTensor(file, [2, 3], values, "f64");
    const back = readTensor(file);
    expect(back.shape).toEqual([2, 3]);
    expect([...back.data]).toEqual(values);
  });

  it("round-trips f32 through exact widening", () => {
    const dir = tempDir("mten-");
    const file = path.join(dir, "t.mten");
    const values = [0.1, -7.25, 1234.5];
    writeTensor(file, [3], values, "f32");
    const back = readTensor(file);
    expect([...back.data]).toEqual(values.map((v) => Math.fround(v)));
  });

  it("rejects size mismatches and bad ranks", () => {
    expect(() => encodeTensor([2, 2], [1, 2, 3])).toThrow();
    expect(() => encodeTensor([], [])).toThrow();
    expect(() => encodeTensor([0], [])).toThrow();
  });

  it("rejects truncated files", () => {
    const dir = tempDir("mten-");
    const file = path.join(dir, "t.mten");
    writeTensor(file, [4], [1, 2, 3, 4], "f64");
    const raw = fs.readFileSync(file);
    fs.writeFileSync(file, raw.subarray(0, raw.length - 3));
    expect(() => readTensor(file)).toThrow(/payload/);
  });

  it("is parsed bit-exactly by the analyzer", () => {
    const dir = tempDir("mten-");
    const file = path.join(dir, "t.mten");
    const values = [0.1, -0.25, Math.E, 42.0, -1e-7, 9.75];
    writeTensor(file, [3, 2], values, "f32");
    const result = pythonSnippet(
      [
        "import json, sys",
        "import numpy as np",
        "from margindyn import read_tensor",
        "t = read_tensor(sys.argv[1])",
        "print(json.dumps({'shape': list(t.shape), 'data': t.reshape(-1).tolist()}))",
      ].join("\n"),
      file,
    );
    expect(result.status).toBe(0);
    const parsed = JSON.parse(result.stdout);
    expect(parsed.shape).toEqual([3, 2]);
    expect(parsed.data).toEqual(values.map((v) => Math.fround(v)));
  });
});
