import * as fs from "node:fs";
import * as path from "node:path";
import { describe, expect, it } from "vitest";

import { margin, marginErrorRate, marginsFromLogits } from "../src/margins.js";
import { normals, pythonSnippet, rng, tempDir } from "./helpers.js";

describe("margin", () => {
  it("is the gap to the best other class", () => {
    expect(margin([2.0, 0.5, -1.0], 0)).toBe(1.5);
    expect(margin([2.0, 0.5, -1.0], 1)).toBe(-1.5);
  });

  it("treats ties as zero margin", () => {
    expect(margin([1.0, 1.0, 1.0], 2)).toBe(0.0);
  });

  it("rejects single-class logits and bad labels", () => {
    expect(() => margin([1.0], 0)).toThrow();
    expect(() => margin([1.0, 2.0], 5)).toThrow();
  });

  it("computes batch margins", () => {
    const margins = marginsFromLogits(
      [
        [1.0, 0.0],
        [0.0, 3.0],
      ],
      [0, 0],
    );
    expect(margins).toEqual([1.0, -3.0]);
  });

  it("margin error rate uses the <= convention", () => {
    expect(marginErrorRate([-1.0, 0.0, 0.5, 2.0], 0.0)).toBe(0.5);
  });

  it("agrees with the analyzer's margin on the same logits", () => {
    const random = rng(7);
    const n = 200;
    const k = 4;
    const logits: number[][] = [];
    const labels: number[] = [];
    for (let i = 0; i < n; i++) {
      logits.push(normals(random, k));
      labels.push(Math.floor(random() * k));
    }
    const ours = marginsFromLogits(logits, labels);

    const dir = tempDir("margins-");
    const payload = path.join(dir, "logits.json");
    fs.writeFileSync(payload, JSON.stringify({ logits, labels }));
    const result = pythonSnippet(
      [
        "import json, sys",
        "from margindyn import margin",
        "data = json.load(open(sys.argv[1]))",
        "out = [margin(l, y) for l, y in zip(data['logits'], data['labels'])]",
        "print(json.dumps(out))",
      ].join("\n"),
      payload,
    );
    expect(result.status).toBe(0);
    const theirs: number[] = JSON.parse(result.stdout);
    expect(theirs.length).toBe(n);
    for (let i = 0; i < n; i++) {
      expect(Math.abs(ours[i] - theirs[i])).toBeLessThanOrEqual(1e-6);
    }
  });
});
