import * as tf from "@tensorflow/tfjs";
import { describe, expect, it } from "vitest";
import { diceCrossEntropyLoss } from "../src/losses.js";
import { UNet3D, upsampleNearest2x } from "../src/unet.js";

describe("upsampleNearest2x", () => {
  it("repeats each voxel 2x along every spatial axis", () => {
    const x = tf.tensor5d([1, 2, 3, 4, 5, 6, 7, 8], [1, 2, 2, 2, 1]);
    const y = upsampleNearest2x(x);
    expect(y.shape).toEqual([1, 4, 4, 4, 1]);
    const arr = y.dataSync();
    // voxel (0,0,0)=1 fills the 2x2x2 corner block
    expect(arr[0]).toBe(1);
    expect(arr[1]).toBe(1);
    expect(arr[4]).toBe(1);
    expect(arr[2]).toBe(2);
    expect(arr[arr.length - 1]).toBe(8);
    x.dispose();
    y.dispose();
  });
});

describe("UNet3D", () => {
  it("maps [1,1,64,64,64] to [1,8,64,64,64] channels-first", () => {
    const net = new UNet3D({ levels: 5, baseFilters: 2, numClasses: 8 });
    const x = tf.randomNormal([1, 1, 64, 64, 64]) as tf.Tensor5D;
    const y = net.forwardChannelsFirst(x);
    expect(y.shape).toEqual([1, 8, 64, 64, 64]);
    x.dispose();
    y.dispose();
  }, 120000);

  it("produces softmax probabilities over the channel axis", () => {
    const net = new UNet3D({ levels: 3, baseFilters: 2, numClasses: 4 });
    const x = tf.randomNormal([1, 8, 8, 8, 1]) as tf.Tensor5D;
    const y = net.forward(x);
    const sums = tf.sum(y, 4).dataSync();
    for (const s of sums) expect(s).toBeCloseTo(1, 4);
    const probs = y.dataSync();
    for (const p of probs) {
      expect(p).toBeGreaterThanOrEqual(0);
      expect(p).toBeLessThanOrEqual(1);
    }
    x.dispose();
    y.dispose();
  });

  it("has a nonzero gradient for every parameter", () => {
    // 32^3 input keeps the level-5 bottleneck at 2^3; instance norm over a
    // single voxel is identically zero and would orphan the deepest kernel
    const net = new UNet3D({ levels: 5, baseFilters: 2, numClasses: 8 });
    const x = tf.randomNormal([1, 32, 32, 32, 1]) as tf.Tensor5D;
    const target = tf.tidy(() => {
      const labels = tf.randomUniform([1, 32, 32, 32], 0, 8, "int32");
      return tf.oneHot(labels.flatten(), 8).reshape([1, 32, 32, 32, 8]) as tf.Tensor5D;
    });
    const { grads } = tf.variableGrads(
      () => diceCrossEntropyLoss(net.forward(x), target),
      net.variables()
    );
    for (const v of net.variables()) {
      const g = grads[v.name];
      expect(g, `missing gradient for ${v.name}`).toBeDefined();
      const maxAbs = tf.max(tf.abs(g)).dataSync()[0];
      expect(maxAbs, `zero gradient for ${v.name}`).toBeGreaterThan(0);
    }
    tf.dispose(grads);
    x.dispose();
    target.dispose();
  }, 120000);

  it("round trips through serialize and deserialize", async () => {
    const net = new UNet3D({ levels: 2, baseFilters: 2, numClasses: 3 });
    const x = tf.randomNormal([1, 4, 4, 4, 1]) as tf.Tensor5D;
    const before = net.forward(x).dataSync();
    const clone = UNet3D.deserialize(await net.serialize());
    const after = clone.forward(x).dataSync();
    expect(Array.from(after)).toEqual(Array.from(before));
    x.dispose();
  });
});
