/**
 * 3D U-Net for volumetric segmentation.
 *
 * Contracting path: per level one 3x3x3 convolution + instance norm +
 * LeakyReLU, then 2x max-pooling; feature maps double after each pooling.
 * Expanding path: nearest-neighbor 2x upsampling, skip concatenation, one
 * 3x3x3 convolution + instance norm + LeakyReLU with halved feature maps.
 * Final 1x1x1 convolution to the class channels with softmax.
 */
import * as tf from "@tensorflow/tfjs";

export interface NetSpec {
  levels: number;
  baseFilters: number;
  numClasses: number;
}

export const DEFAULT_SPEC: NetSpec = { levels: 5, baseFilters: 32, numClasses: 8 };

// no conv bias: instance norm would cancel it, leaving a dead parameter
interface ConvBlock {
  kernel: tf.Variable;
  gamma: tf.Variable; // instance-norm scale
  beta: tf.Variable; // instance-norm shift
}

function heInit(shape: number[], fanIn: number): tf.Tensor {
  return tf.randomNormal(shape, 0, Math.sqrt(2 / fanIn));
}

type Register = (logical: string, init: tf.Tensor) => tf.Variable;

function makeBlock(inCh: number, outCh: number, k: number, name: string, reg: Register): ConvBlock {
  return {
    kernel: reg(`${name}/kernel`, heInit([k, k, k, inCh, outCh], k * k * k * inCh)),
    gamma: reg(`${name}/gamma`, tf.ones([outCh])),
    beta: reg(`${name}/beta`, tf.zeros([outCh])),
  };
}

function instanceNorm(x: tf.Tensor5D, block: ConvBlock): tf.Tensor5D {
  // normalize over the spatial axes per sample and channel
  const mean = tf.mean(x, [1, 2, 3], true);
  const variance = tf.mean(tf.square(tf.sub(x, mean)), [1, 2, 3], true);
  const normed = tf.div(tf.sub(x, mean), tf.sqrt(tf.add(variance, 1e-5)));
  return tf.add(tf.mul(normed, block.gamma), block.beta) as tf.Tensor5D;
}

function convBlock(x: tf.Tensor5D, block: ConvBlock, alpha = 0.01): tf.Tensor5D {
  const y = tf.conv3d(x, block.kernel as tf.Tensor5D, 1, "same") as tf.Tensor5D;
  return tf.leakyRelu(instanceNorm(y, block), alpha) as tf.Tensor5D;
}

export function upsampleNearest2x(x: tf.Tensor5D): tf.Tensor5D {
  // duplicate one spatial axis at a time; stack keeps ranks low enough
  // that every op in the chain has a registered gradient
  return tf.tidy(() => {
    let y = x as tf.Tensor;
    for (const axis of [1, 2, 3]) {
      const shape = y.shape.slice();
      shape[axis] *= 2;
      y = tf.stack([y, y], axis + 1).reshape(shape);
    }
    return y as tf.Tensor5D;
  });
}

export class UNet3D {
  private static nextUid = 0;

  readonly spec: NetSpec;
  private down: ConvBlock[] = [];
  private up: ConvBlock[] = [];
  private head: { kernel: tf.Variable; bias: tf.Variable };
  // logical name per variable; registered tf names get a per-instance
  // prefix because the tfjs engine requires globally unique variable names
  private logicalNames = new Map<tf.Variable, string>();

  constructor(spec: Partial<NetSpec> = {}) {
    this.spec = { ...DEFAULT_SPEC, ...spec };
    const uid = UNet3D.nextUid++;
    const reg: Register = (logical, init) => {
      const v = tf.variable(init, true, `unet${uid}/${logical}`);
      this.logicalNames.set(v, logical);
      return v;
    };
    const { levels, baseFilters, numClasses } = this.spec;
    let inCh = 1;
    for (let l = 0; l < levels; l++) {
      const outCh = baseFilters * 2 ** l;
      this.down.push(makeBlock(inCh, outCh, 3, `down${l}`, reg));
      inCh = outCh;
    }
    for (let l = levels - 2; l >= 0; l--) {
      const skipCh = baseFilters * 2 ** l;
      const fromCh = baseFilters * 2 ** (l + 1);
      this.up.push(makeBlock(fromCh + skipCh, skipCh, 3, `up${l}`, reg));
    }
    this.head = {
      kernel: reg("head/kernel", heInit([1, 1, 1, baseFilters, numClasses], baseFilters)),
      bias: reg("head/bias", tf.zeros([numClasses])),
    };
  }

  logicalName(v: tf.Variable): string {
    const name = this.logicalNames.get(v);
    if (!name) throw new Error(`variable ${v.name} does not belong to this network`);
    return name;
  }

  /** Class probabilities, shape [n, d, h, w, numClasses]; softmax over channels. */
  forward(x: tf.Tensor5D): tf.Tensor5D {
    return tf.tidy(() => {
      const skips: tf.Tensor5D[] = [];
      let y = x;
      for (let l = 0; l < this.spec.levels; l++) {
        y = convBlock(y, this.down[l]);
        if (l < this.spec.levels - 1) {
          skips.push(y);
          y = tf.maxPool3d(y, 2, 2, "same") as tf.Tensor5D;
        }
      }
      for (let i = 0; i < this.up.length; i++) {
        const skip = skips[skips.length - 1 - i];
        y = upsampleNearest2x(y);
        y = tf.concat([y, skip], 4) as tf.Tensor5D;
        y = convBlock(y, this.up[i]);
      }
      const logits = tf.add(
        tf.conv3d(y, this.head.kernel as tf.Tensor5D, 1, "same"),
        this.head.bias
      ) as tf.Tensor5D;
      return tf.softmax(logits, 4) as tf.Tensor5D;
    });
  }

  /** Channels-first adapter: [n, 1, d, h, w] in, [n, numClasses, d, h, w] out. */
  forwardChannelsFirst(x: tf.Tensor5D): tf.Tensor5D {
    return tf.tidy(() => {
      const last = tf.transpose(x, [0, 2, 3, 4, 1]) as tf.Tensor5D;
      return tf.transpose(this.forward(last), [0, 4, 1, 2, 3]) as tf.Tensor5D;
    });
  }

  variables(): tf.Variable[] {
    const out: tf.Variable[] = [];
    for (const b of [...this.down, ...this.up]) {
      out.push(b.kernel, b.gamma, b.beta);
    }
    out.push(this.head.kernel, this.head.bias);
    return out;
  }

  async serialize(): Promise<{ spec: NetSpec; weights: { name: string; shape: number[]; values: number[] }[] }> {
    const weights = [];
    for (const v of this.variables()) {
      weights.push({
        name: this.logicalName(v),
        shape: v.shape.slice(),
        values: Array.from(await v.data()),
      });
    }
    return { spec: this.spec, weights };
  }

  loadWeights(weights: { name: string; shape: number[]; values: number[] }[]): void {
    const byName = new Map(weights.map((w) => [w.name, w]));
    for (const v of this.variables()) {
      const w = byName.get(this.logicalName(v));
      if (!w) throw new Error(`checkpoint missing variable ${this.logicalName(v)}`);
      v.assign(tf.tensor(w.values, w.shape));
    }
  }

  static deserialize(blob: { spec: NetSpec; weights: { name: string; shape: number[]; values: number[] }[] }): UNet3D {
    const net = new UNet3D(blob.spec);
    net.loadWeights(blob.weights);
    return net;
  }
}
