import * as tf from "@tensorflow/tfjs";
import { describe, expect, it } from "vitest";
import { crossEntropy, diceCrossEntropyLoss, hardMeanDice, softDice } from "../src/losses.js";

function oneHot5d(labels: number[], shape: [number, number, number], numClasses: number): tf.Tensor5D {
  const [d, h, w] = shape;
  const buf = new Float32Array(labels.length * numClasses);
  labels.forEach((c, i) => {
    buf[i * numClasses + c] = 1;
  });
  return tf.tensor5d(buf, [1, d, h, w, numClasses]);
}

describe("softDice", () => {
  it("is 1 for a perfect one-hot match", () => {
    const labels = [0, 1, 2, 1, 0, 2, 1, 0];
    const t = oneHot5d(labels, [2, 2, 2], 3);
    expect(softDice(t, t).dataSync()[0]).toBeCloseTo(1, 4);
  });

  it("is near 0 for fully disjoint predictions", () => {
    const a = oneHot5d([0, 0, 0, 0, 0, 0, 0, 0], [2, 2, 2], 2);
    const b = oneHot5d([1, 1, 1, 1, 1, 1, 1, 1], [2, 2, 2], 2);
    expect(softDice(a, b).dataSync()[0]).toBeLessThan(1e-4);
  });

  it("matches a hand-computed partial overlap", () => {
    // class 1: pred {0,1}, target {1,2} -> dice 1/2; class 0 complement -> 1/2
    const pred = oneHot5d([1, 1, 0, 0], [1, 2, 2], 2);
    const target = oneHot5d([0, 1, 1, 0], [1, 2, 2], 2);
    expect(softDice(pred, target).dataSync()[0]).toBeCloseTo(0.5, 3);
  });
});

describe("crossEntropy", () => {
  it("is near 0 for confident correct predictions", () => {
    const t = oneHot5d([0, 1, 1, 0], [1, 2, 2], 2);
    expect(crossEntropy(t, t).dataSync()[0]).toBeLessThan(1e-6);
  });

  it("equals ln(K) for uniform predictions", () => {
    const target = oneHot5d([0, 1, 2, 3], [1, 2, 2], 4);
    const uniform = tf.fill([1, 1, 2, 2, 4], 0.25) as tf.Tensor5D;
    expect(crossEntropy(uniform, target).dataSync()[0]).toBeCloseTo(Math.log(4), 5);
  });
});

describe("diceCrossEntropyLoss", () => {
  it("is near 0 at the optimum and positive away from it", () => {
    const t = oneHot5d([0, 1, 1, 0], [1, 2, 2], 2);
    const off = oneHot5d([1, 0, 0, 1], [1, 2, 2], 2);
    expect(diceCrossEntropyLoss(t, t).dataSync()[0]).toBeLessThan(1e-4);
    expect(diceCrossEntropyLoss(off, t).dataSync()[0]).toBeGreaterThan(1);
  });
});

describe("hardMeanDice", () => {
  it("is 1 for identical label maps", () => {
    const a = Uint8Array.from([0, 1, 2, 3, 1, 2]);
    expect(hardMeanDice(a, a, 4)).toBe(1);
  });

  it("averages per-class dice over classes present", () => {
    const pred = Uint8Array.from([1, 1, 0, 0]);
    const target = Uint8Array.from([1, 0, 0, 0]);
    // class 1: inter 1, sizes 2 and 1 -> 2/3; background excluded
    expect(hardMeanDice(pred, target, 2)).toBeCloseTo(2 / 3, 12);
  });

  it("ignores classes absent from both volumes", () => {
    const pred = Uint8Array.from([0, 1, 1, 0]);
    const target = Uint8Array.from([0, 1, 1, 0]);
    expect(hardMeanDice(pred, target, 8)).toBe(1);
  });
});
