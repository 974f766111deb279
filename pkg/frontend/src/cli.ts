#!/usr/bin/env node
/**
 * CLI: `embed-export export --images DIR --labels CSV --encoder NAME --out manifest.jsonl`
 *
 * Exit codes: 0 success, 1 usage error, 2 data/encoder error.
 */

import { parseArgs } from "node:util";
import { pathToFileURL } from "node:url";

import { EncoderError, availableEncoders } from "./encoder.js";
import { ExportError, runExport } from "./export.js";
import { LabelCsvError } from "./labels.js";

const USAGE = `usage: embed-export export --images DIR --labels CSV --encoder NAME --out FILE [--batch-size N]

Encodes every labeled image and its four text-modality strings and writes
the engine's JSONL manifest. Available encoders: ${availableEncoders().join(", ")}.`;

export function main(argv: string[]): number {
  if (argv[0] !== "export") {
    console.error(USAGE);
    if (argv.length > 0 && argv[0] !== "--help" && argv[0] !== "-h") {
      console.error(`embed-export: unknown command '${argv[0] ?? ""}'`);
      return 1;
    }
    return argv.length === 0 ? 1 : 0;
  }
  let parsed;
  try {
    parsed = parseArgs({
      args: argv.slice(1),
      options: {
        images: { type: "string" },
        labels: { type: "string" },
        encoder: { type: "string", default: "hash-v1" },
        out: { type: "string" },
        "batch-size": { type: "string", default: "16" },
      },
    });
  } catch (error) {
    console.error(`embed-export: ${(error as Error).message}`);
    return 1;
  }
  const { images, labels, encoder, out } = parsed.values;
  if (!images || !labels || !out) {
    console.error(USAGE);
    console.error("embed-export: --images, --labels and --out are required");
    return 1;
  }
  const batchSize = Number.parseInt(parsed.values["batch-size"] ?? "16", 10);
  if (!Number.isInteger(batchSize) || batchSize < 1) {
    console.error("embed-export: --batch-size must be a positive integer");
    return 1;
  }
  try {
    const count = runExport({
      imageDir: images,
      labelsCsv: labels,
      encoderName: encoder ?? "hash-v1",
      outPath: out,
      batchSize,
    });
    console.log(`wrote ${count} cases to ${out}`);
    return 0;
  } catch (error) {
    if (
      error instanceof ExportError ||
      error instanceof LabelCsvError ||
      error instanceof EncoderError
    ) {
      console.error(`embed-export: ${error.message}`);
      return 2;
    }
    throw error;
  }
}

if (import.meta.url === pathToFileURL(process.argv[1] ?? "").href) {
  process.exit(main(process.argv.slice(2)));
}
