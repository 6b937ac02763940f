import { describe, expect, it } from "vitest";
import { EarlyStopping, ReduceLROnPlateau } from "../src/scheduler.js";

describe("ReduceLROnPlateau", () => {
  it("keeps the rate while the score improves", () => {
    const sched = new ReduceLROnPlateau({ initialLr: 1e-3, patience: 3 });
    for (const score of [0.1, 0.2, 0.3, 0.4]) {
      expect(sched.step(score)).toBe(1e-3);
    }
  });

  it("decays by the factor after patience stale epochs", () => {
    const sched = new ReduceLROnPlateau({ initialLr: 1e-3, factor: 0.1, patience: 3 });
    sched.step(0.5);
    sched.step(0.5);
    sched.step(0.4);
    expect(sched.learningRate).toBe(1e-3);
    expect(sched.step(0.5)).toBeCloseTo(1e-4, 12);
  });

  it("resets the stale counter on improvement", () => {
    const sched = new ReduceLROnPlateau({ initialLr: 1e-3, factor: 0.1, patience: 2 });
    sched.step(0.5);
    sched.step(0.4);
    sched.step(0.6);
    sched.step(0.5);
    expect(sched.learningRate).toBe(1e-3);
    sched.step(0.5);
    expect(sched.learningRate).toBeCloseTo(1e-4, 12);
  });

  it("never drops below the floor", () => {
    const sched = new ReduceLROnPlateau({ initialLr: 1e-6, factor: 0.1, patience: 1, minLr: 1e-7 });
    sched.step(0.5);
    sched.step(0.1);
    sched.step(0.1);
    sched.step(0.1);
    expect(sched.learningRate).toBe(1e-7);
  });
});

describe("EarlyStopping", () => {
  it("stops after patience epochs without improvement", () => {
    const stop = new EarlyStopping(3);
    expect(stop.step(0.5)).toBe(false);
    expect(stop.step(0.5)).toBe(false);
    expect(stop.step(0.5)).toBe(false);
    expect(stop.step(0.5)).toBe(true);
  });

  it("continues as long as the score keeps improving", () => {
    const stop = new EarlyStopping(2);
    for (let i = 0; i < 20; i++) {
      expect(stop.step(i * 0.01)).toBe(false);
    }
    expect(stop.bestScore).toBeCloseTo(0.19, 12);
  });
});
