/**
 * Inference: run a trained network over image volumes and write argmax
 * label maps that carry the input geometry.
 */
import { readFileSync } from "node:fs";
import * as tf from "@tensorflow/tfjs";
import { downscale, imageTensor } from "./data.js";
import { readNifti, writeNifti, Volume } from "./nifti.js";
import { UNet3D } from "./unet.js";

export function loadCheckpoint(path: string): UNet3D {
  return UNet3D.deserialize(JSON.parse(readFileSync(path, "utf8")));
}

/** Argmax segmentation of one volume, same shape and geometry as the input. */
export function predictVolume(net: UNet3D, vol: Volume): Volume {
  const x = imageTensor(vol);
  const pred = tf.tidy(() => tf.argMax(net.forward(x), 4));
  x.dispose();
  const flat = pred.dataSync() as Int32Array;
  pred.dispose();
  const data = new Float32Array(flat.length);
  for (let i = 0; i < flat.length; i++) data[i] = flat[i];
  return { shape: vol.shape, spacing: vol.spacing, affine: vol.affine.slice(), data };
}

export function predictFile(net: UNet3D, imgPath: string, outPath: string, stride = 1): void {
  const vol = downscale(readNifti(imgPath), stride);
  writeNifti(outPath, predictVolume(net, vol), true);
}
