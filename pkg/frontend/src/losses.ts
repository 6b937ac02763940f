/**
 * Segmentation losses and scores over one-hot targets.
 *
 * Probabilities and targets are [n, d, h, w, c] with a softmax-normalized
 * channel axis. The training loss is soft Dice plus cross-entropy.
 */
import * as tf from "@tensorflow/tfjs";

export const DICE_SMOOTHING = 1e-5;

/** Mean soft Dice over classes, in [0, 1]. */
export function softDice(probs: tf.Tensor5D, target: tf.Tensor5D): tf.Scalar {
  return tf.tidy(() => {
    const axes = [0, 1, 2, 3];
    const inter = tf.sum(tf.mul(probs, target), axes);
    const denom = tf.add(tf.sum(probs, axes), tf.sum(target, axes));
    const dice = tf.div(
      tf.add(tf.mul(inter, 2), DICE_SMOOTHING),
      tf.add(denom, DICE_SMOOTHING)
    );
    return tf.mean(dice) as tf.Scalar;
  });
}

/** Mean voxelwise cross-entropy against the one-hot target. */
export function crossEntropy(probs: tf.Tensor5D, target: tf.Tensor5D): tf.Scalar {
  return tf.tidy(() => {
    const logp = tf.log(tf.add(probs, 1e-12));
    return tf.neg(tf.mean(tf.sum(tf.mul(target, logp), 4))) as tf.Scalar;
  });
}

/** Combined training loss: (1 - soft Dice) + cross-entropy. */
export function diceCrossEntropyLoss(probs: tf.Tensor5D, target: tf.Tensor5D): tf.Scalar {
  return tf.tidy(() =>
    tf.add(tf.sub(1, softDice(probs, target)), crossEntropy(probs, target)) as tf.Scalar
  );
}

/**
 * Hard Dice of the argmax prediction against integer labels, averaged over
 * the classes present in either volume (excluding background class 0).
 */
export function hardMeanDice(
  pred: Uint8Array | Int32Array,
  target: Uint8Array | Int32Array,
  numClasses: number
): number {
  const inter = new Float64Array(numClasses);
  const pSum = new Float64Array(numClasses);
  const tSum = new Float64Array(numClasses);
  for (let i = 0; i < pred.length; i++) {
    pSum[pred[i]] += 1;
    tSum[target[i]] += 1;
    if (pred[i] === target[i]) inter[pred[i]] += 1;
  }
  let total = 0;
  let count = 0;
  for (let c = 1; c < numClasses; c++) {
    if (pSum[c] === 0 && tSum[c] === 0) continue;
    total += (2 * inter[c]) / (pSum[c] + tSum[c]);
    count += 1;
  }
  return count === 0 ? 1 : total / count;
}
