/**
 * Corpus loading for training: manifest parsing, volume-to-tensor
 * conversion and stride downscaling for desk-scale runs.
 *
 * Volumes store their payload x-fastest (Fortran order over x, y, z),
 * which is the same flat layout as a C-ordered tensor of shape
 * [z, y, x]; tensors here therefore use [n, z, y, x, c] axes.
 */
import { existsSync, readFileSync } from "node:fs";
import { dirname, isAbsolute, join } from "node:path";
import * as tf from "@tensorflow/tfjs";
import { readNifti, Volume } from "./nifti.js";

export interface ManifestRow {
  sourceId: string;
  sampleIndex: number;
  seed: number;
  imgPath: string;
  segPath: string;
  status: string;
}

export interface Sample {
  image: Volume;
  labels: Volume;
  row: ManifestRow;
}

export function parseManifest(path: string): ManifestRow[] {
  const text = readFileSync(path, "utf8");
  const lines = text.split(/\r?\n/).filter((l) => l.length > 0);
  if (lines.length === 0) throw new Error(`empty manifest ${path}`);
  const header = lines[0].split(",");
  const want = ["source_id", "sample_index", "seed", "img_path", "seg_path", "status"];
  const idx = want.map((name) => {
    const i = header.indexOf(name);
    if (i < 0) throw new Error(`manifest ${path} missing column ${name}`);
    return i;
  });
  // relative manifest paths are written relative to the generator's working
  // directory; fall back to manifest-relative when that does not resolve
  const base = dirname(path);
  const resolve = (p: string) => {
    if (isAbsolute(p) || existsSync(p)) return p;
    return join(base, p);
  };
  return lines.slice(1).map((line) => {
    const cells = line.split(",");
    return {
      sourceId: cells[idx[0]],
      sampleIndex: Number(cells[idx[1]]),
      seed: Number(cells[idx[2]]),
      imgPath: resolve(cells[idx[3]]),
      segPath: resolve(cells[idx[4]]),
      status: cells[idx[5]],
    };
  });
}

export function loadSample(row: ManifestRow): Sample {
  return { image: readNifti(row.imgPath), labels: readNifti(row.segPath), row };
}

/** Pick every stride-th voxel along each axis; labels survive unchanged. */
export function downscale(vol: Volume, stride: number): Volume {
  if (stride <= 1) return vol;
  const [sx, sy, sz] = vol.shape;
  const nx = Math.ceil(sx / stride);
  const ny = Math.ceil(sy / stride);
  const nz = Math.ceil(sz / stride);
  const out = new Float32Array(nx * ny * nz);
  let o = 0;
  for (let z = 0; z < sz; z += stride) {
    for (let y = 0; y < sy; y += stride) {
      const rowBase = sx * (y + sy * z);
      for (let x = 0; x < sx; x += stride) {
        out[o++] = vol.data[rowBase + x];
      }
    }
  }
  const affine = vol.affine.slice();
  for (let r = 0; r < 3; r++) {
    for (let c = 0; c < 3; c++) affine[4 * r + c] *= stride;
  }
  return {
    shape: [nx, ny, nz],
    spacing: [vol.spacing[0] * stride, vol.spacing[1] * stride, vol.spacing[2] * stride],
    affine,
    data: out,
  };
}

/** Min-max normalized image tensor, shape [1, z, y, x, 1]. */
export function imageTensor(vol: Volume): tf.Tensor5D {
  const [sx, sy, sz] = vol.shape;
  let lo = Infinity;
  let hi = -Infinity;
  for (const v of vol.data) {
    if (v < lo) lo = v;
    if (v > hi) hi = v;
  }
  const span = hi > lo ? hi - lo : 1;
  const scaled = new Float32Array(vol.data.length);
  for (let i = 0; i < vol.data.length; i++) scaled[i] = (vol.data[i] - lo) / span;
  return tf.tensor5d(scaled, [1, sz, sy, sx, 1]);
}

/** One-hot label tensor, shape [1, z, y, x, numClasses]. */
export function oneHotTensor(vol: Volume, numClasses: number): tf.Tensor5D {
  const [sx, sy, sz] = vol.shape;
  const n = vol.data.length;
  const out = new Float32Array(n * numClasses);
  for (let i = 0; i < n; i++) {
    const c = vol.data[i];
    if (c < 0 || c >= numClasses || !Number.isInteger(c)) {
      throw new Error(`label ${c} outside [0, ${numClasses})`);
    }
    out[i * numClasses + c] = 1;
  }
  return tf.tensor5d(out, [1, sz, sy, sx, numClasses]);
}

export function labelArray(vol: Volume): Uint8Array {
  const out = new Uint8Array(vol.data.length);
  for (let i = 0; i < vol.data.length; i++) out[i] = vol.data[i];
  return out;
}

/** Deterministic in-place Fisher-Yates shuffle. */
export function shuffle<T>(items: T[], seed: number): T[] {
  let state = seed >>> 0;
  const next = () => {
    state = (state * 1664525 + 1013904223) >>> 0;
    return state / 2 ** 32;
  };
  for (let i = items.length - 1; i > 0; i--) {
    const j = Math.floor(next() * (i + 1));
    [items[i], items[j]] = [items[j], items[i]];
  }
  return items;
}
