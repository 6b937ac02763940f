/**
 * End-to-end smoke: synthesize a small corpus with the tissuesynth CLI,
 * train the network on it, predict, and score the predictions with
 * tissuesynth evaluate.
 */
import { execFileSync } from "node:child_process";
import { mkdirSync, mkdtempSync, readFileSync, rmSync } from "node:fs";
import { tmpdir } from "node:os";
import { basename, join } from "node:path";
import { afterAll, describe, expect, it } from "vitest";
import { downscale, loadSample, parseManifest } from "../src/data.js";
import { identityAffine, readNifti, writeNifti, Volume } from "../src/nifti.js";
import { predictVolume } from "../src/predict.js";
import { train } from "../src/train.js";

const tmp = mkdtempSync(join(tmpdir(), "e2e-"));
afterAll(() => rmSync(tmp, { recursive: true, force: true }));

const STRIDE = 4;

function phantomLabels(size: number): Volume {
  const data = new Float32Array(size ** 3);
  const c = (size - 1) / 2;
  for (let z = 0; z < size; z++) {
    for (let y = 0; y < size; y++) {
      for (let x = 0; x < size; x++) {
        const r = Math.sqrt((x - c) ** 2 + (y - c) ** 2 + (z - c) ** 2);
        let label = 0;
        if (r < size * 0.15) label = 3;
        else if (r < size * 0.28) label = 2;
        else if (r < size * 0.4) label = 1;
        data[x + size * (y + size * z)] = label;
      }
    }
  }
  return { shape: [size, size, size], spacing: [1, 1, 1], affine: identityAffine([1, 1, 1]), data };
}

function run(args: string[]): string {
  return execFileSync("tissuesynth", args, { cwd: tmp, encoding: "utf8" });
}

describe("end-to-end", () => {
  it("seed -> generate -> train -> predict -> evaluate reaches dice > 0.6", async () => {
    const labelDir = join(tmp, "labels");
    mkdirSync(labelDir);
    writeNifti(join(labelDir, "phantom_dseg.nii.gz"), phantomLabels(64), true);

    run(["--seed", "7", "seed", "--labels", labelDir, "--out", join(tmp, "seeds")]);
    run([
      "--seed", "7",
      "generate",
      "--seeds", join(tmp, "seeds"),
      "--out", join(tmp, "synth"),
      "--samples-per-image", "20",
    ]);
    const rows = parseManifest(join(tmp, "synth", "manifest.csv"));
    expect(rows).toHaveLength(20);
    expect(rows.every((r) => r.status === "complete")).toBe(true);

    const result = await train(rows, {
      maxEpochs: 50,
      stride: STRIDE,
      stopPatience: 10,
      net: { levels: 3, baseFilters: 8, numClasses: 8 },
      seed: 7,
    });
    expect(result.bestValDice).toBeGreaterThan(0.5);

    const predDir = join(tmp, "pred");
    const gtDir = join(tmp, "gt");
    mkdirSync(predDir);
    mkdirSync(gtDir);
    for (const row of rows.slice(0, 5)) {
      const s = loadSample(row);
      const img = downscale(s.image, STRIDE);
      const seg = downscale(s.labels, STRIDE);
      const stem = `${row.sourceId}_${basename(row.imgPath).replace("_img.nii.gz", "")}`;
      writeNifti(join(predDir, `${stem}.nii.gz`), predictVolume(result.net, img), true);
      writeNifti(join(gtDir, `${stem}.nii.gz`), seg, true);
    }
    run(["evaluate", "--pred", predDir, "--gt", gtDir, "--out", join(tmp, "metrics")]);

    const csv = readFileSync(join(tmp, "metrics", "metrics_pred.csv"), "utf8")
      .trim()
      .split("\n")
      .slice(1)
      .map((l) => l.split(","));
    const present = new Set(["eCSF", "GM", "WM"]);
    const dices = csv.filter((r) => present.has(r[1])).map((r) => Number(r[2]));
    expect(dices.length).toBe(15);
    const mean = dices.reduce((a, b) => a + b, 0) / dices.length;
    expect(mean).toBeGreaterThan(0.6);
  }, 1800000);
});
