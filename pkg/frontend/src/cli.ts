/**
 * Command line entry points.
 *
 *   node dist/src/cli.js train   --manifest synth/manifest.csv --out run/
 *   node dist/src/cli.js predict --checkpoint run/checkpoint.json \
 *       --images imgs/ --out pred/
 */
import { mkdirSync, readdirSync } from "node:fs";
import { basename, join } from "node:path";
import { parseArgs } from "node:util";
import { parseManifest } from "./data.js";
import { loadCheckpoint, predictFile } from "./predict.js";
import { train } from "./train.js";

async function runTrain(argv: string[]): Promise<number> {
  const { values } = parseArgs({
    args: argv,
    options: {
      manifest: { type: "string" },
      out: { type: "string" },
      epochs: { type: "string", default: "50" },
      stride: { type: "string", default: "1" },
      levels: { type: "string", default: "5" },
      "base-filters": { type: "string", default: "8" },
      seed: { type: "string", default: "0" },
    },
  });
  if (!values.manifest || !values.out) {
    console.error("train requires --manifest and --out");
    return 2;
  }
  mkdirSync(values.out, { recursive: true });
  const rows = parseManifest(values.manifest);
  const result = await train(
    rows,
    {
      maxEpochs: Number(values.epochs),
      stride: Number(values.stride),
      seed: Number(values.seed),
      net: {
        levels: Number(values.levels),
        baseFilters: Number(values["base-filters"]),
      },
    },
    join(values.out, "checkpoint.json"),
    join(values.out, "train_log.csv")
  );
  console.log(
    `trained ${result.history.length} epochs, best val dice ${result.bestValDice.toFixed(4)}`
  );
  return 0;
}

async function runPredict(argv: string[]): Promise<number> {
  const { values } = parseArgs({
    args: argv,
    options: {
      checkpoint: { type: "string" },
      images: { type: "string" },
      out: { type: "string" },
      stride: { type: "string", default: "1" },
      suffix: { type: "string", default: "_img.nii.gz" },
    },
  });
  if (!values.checkpoint || !values.images || !values.out) {
    console.error("predict requires --checkpoint, --images and --out");
    return 2;
  }
  mkdirSync(values.out, { recursive: true });
  const net = loadCheckpoint(values.checkpoint);
  const stride = Number(values.stride);
  const files = readdirSync(values.images)
    .filter((f) => f.endsWith(values.suffix!))
    .sort();
  if (files.length === 0) {
    console.error(`no *${values.suffix} files in ${values.images}`);
    return 1;
  }
  for (const f of files) {
    const stem = basename(f).slice(0, -values.suffix!.length);
    predictFile(net, join(values.images, f), join(values.out, `${stem}_seg.nii.gz`), stride);
  }
  console.log(`predicted ${files.length} volumes`);
  return 0;
}

async function main(): Promise<void> {
  const [cmd, ...rest] = process.argv.slice(2);
  let code: number;
  if (cmd === "train") code = await runTrain(rest);
  else if (cmd === "predict") code = await runPredict(rest);
  else {
    console.error("usage: cli.js <train|predict> [options]");
    code = 2;
  }
  process.exit(code);
}

main().catch((err) => {
  console.error(err instanceof Error ? err.message : String(err));
  process.exit(1);
});
