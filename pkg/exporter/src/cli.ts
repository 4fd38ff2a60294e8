/**
 * CLI: export frozen-PLM embeddings for a dataset manifest.
 *
 *   node dist/cli.js --manifest dataset/manifest.json \
 *       --model frozen-tiny-d16 --out emb.bin --batch-size 8
 */

import { parseArgs } from "node:util";
import { exportEmbeddings } from "./export.js";
import { availableModels, CheckpointUnavailableError } from "./plm.js";

function main(): number {
  const { values } = parseArgs({
    options: {
      manifest: { type: "string" },
      model: { type: "string" },
      out: { type: "string" },
      "batch-size": { type: "string", default: "8" },
    },
  });
  if (!values.manifest || !values.model || !values.out) {
    console.error("usage: --manifest <manifest.json> --model <id|bundle.json> "
      + "--out <file> [--batch-size n]");
    console.error(`built-in models: ${availableModels().join(", ")}`);
    return 2;
  }
  try {
    const summary = exportEmbeddings({
      manifestPath: values.manifest,
      model: values.model,
      outPath: values.out,
      batchSize: Number(values["batch-size"]),
    }, (line) => console.error(line));
    console.log(`wrote ${summary.count} embeddings (d_e=${summary.dE}, `
      + `model=${summary.model}) to ${values.out}`);
    return 0;
  } catch (err) {
    console.error(`error: ${(err as Error).message}`);
    return err instanceof CheckpointUnavailableError ? 3 : 1;
  }
}

process.exit(main());
