/**
 * Training loop: Adam, batch size 1, Dice + cross-entropy loss, plateau
 * learning-rate decay and early stopping on validation mean Dice.
 */
import { appendFileSync, renameSync, writeFileSync } from "node:fs";
import * as tf from "@tensorflow/tfjs";
import { labelArray, loadSample, ManifestRow, downscale, imageTensor, oneHotTensor, shuffle } from "./data.js";
import { diceCrossEntropyLoss, hardMeanDice } from "./losses.js";
import { EarlyStopping, ReduceLROnPlateau } from "./scheduler.js";
import { NetSpec, UNet3D } from "./unet.js";

export interface TrainConfig {
  net: Partial<NetSpec>;
  maxEpochs: number;
  valFraction: number;
  stride: number;
  lrPatience: number;
  stopPatience: number;
  initialLr: number;
  seed: number;
}

export const DEFAULT_TRAIN: TrainConfig = {
  net: {},
  maxEpochs: 500,
  valFraction: 0.2,
  stride: 1,
  lrPatience: 10,
  stopPatience: 10,
  initialLr: 1e-3,
  seed: 0,
};

export interface EpochStats {
  epoch: number;
  trainLoss: number;
  valDice: number;
  learningRate: number;
}

function setLearningRate(opt: tf.Optimizer, lr: number): void {
  (opt as unknown as { learningRate: number }).learningRate = lr;
}

/** One optimizer step on a single sample; returns the loss value. */
export function trainStep(
  net: UNet3D,
  opt: tf.Optimizer,
  x: tf.Tensor5D,
  y: tf.Tensor5D
): number {
  const loss = opt.minimize(
    () => diceCrossEntropyLoss(net.forward(x), y),
    true,
    net.variables()
  ) as tf.Scalar;
  const value = loss.dataSync()[0];
  loss.dispose();
  return value;
}

/** Hard mean Dice of the argmax prediction against integer labels. */
export function validateSample(net: UNet3D, x: tf.Tensor5D, labels: Uint8Array): number {
  const pred = tf.tidy(() => tf.argMax(net.forward(x), 4));
  const predArr = pred.dataSync() as Int32Array;
  pred.dispose();
  return hardMeanDice(predArr, labels, net.spec.numClasses);
}

async function saveCheckpoint(net: UNet3D, path: string): Promise<void> {
  const blob = await net.serialize();
  const tmp = `${path}.tmp`;
  writeFileSync(tmp, JSON.stringify(blob));
  renameSync(tmp, path);
}

export interface TrainResult {
  net: UNet3D;
  history: EpochStats[];
  bestValDice: number;
}

export async function train(
  rows: ManifestRow[],
  config: Partial<TrainConfig> = {},
  checkpointPath?: string,
  logPath?: string
): Promise<TrainResult> {
  const cfg = { ...DEFAULT_TRAIN, ...config };
  const ok = rows.filter((r) => r.status === "complete");
  if (ok.length < 2) throw new Error(`need at least 2 usable samples, got ${ok.length}`);
  const order = shuffle(ok.slice(), cfg.seed);
  const nVal = Math.max(1, Math.floor(order.length * cfg.valFraction));
  const valRows = order.slice(0, nVal);
  const trainRows = order.slice(nVal);

  const net = new UNet3D(cfg.net);
  const opt = tf.train.adam(cfg.initialLr);
  const scheduler = new ReduceLROnPlateau({
    initialLr: cfg.initialLr,
    patience: cfg.lrPatience,
  });
  const stopper = new EarlyStopping(cfg.stopPatience);

  const load = (row: ManifestRow) => {
    const s = loadSample(row);
    const img = downscale(s.image, cfg.stride);
    const seg = downscale(s.labels, cfg.stride);
    return { img, seg };
  };

  if (logPath) writeFileSync(logPath, "epoch,train_loss,val_dice,learning_rate\n");
  const history: EpochStats[] = [];
  let bestValDice = -Infinity;
  let bestWeights: Awaited<ReturnType<UNet3D["serialize"]>>["weights"] | null = null;

  for (let epoch = 0; epoch < cfg.maxEpochs; epoch++) {
    shuffle(trainRows, cfg.seed + epoch + 1);
    let lossSum = 0;
    for (const row of trainRows) {
      const { img, seg } = load(row);
      const x = imageTensor(img);
      const y = oneHotTensor(seg, net.spec.numClasses);
      lossSum += trainStep(net, opt, x, y);
      x.dispose();
      y.dispose();
    }
    let diceSum = 0;
    for (const row of valRows) {
      const { img, seg } = load(row);
      const x = imageTensor(img);
      diceSum += validateSample(net, x, labelArray(seg));
      x.dispose();
    }
    const stats: EpochStats = {
      epoch,
      trainLoss: lossSum / Math.max(1, trainRows.length),
      valDice: diceSum / valRows.length,
      learningRate: scheduler.learningRate,
    };
    history.push(stats);
    if (logPath) {
      appendFileSync(
        logPath,
        `${stats.epoch},${stats.trainLoss},${stats.valDice},${stats.learningRate}\n`
      );
    }
    if (stats.valDice > bestValDice) {
      bestValDice = stats.valDice;
      bestWeights = (await net.serialize()).weights;
      if (checkpointPath) await saveCheckpoint(net, checkpointPath);
    }
    setLearningRate(opt, scheduler.step(stats.valDice));
    if (stopper.step(stats.valDice)) break;
  }
  // the returned net carries the best-validation weights, matching the
  // checkpoint on disk rather than the last epoch
  if (bestWeights) net.loadWeights(bestWeights);
  if (checkpointPath && bestWeights === null) await saveCheckpoint(net, checkpointPath);
  return { net, history, bestValDice };
}
