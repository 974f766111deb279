/**
 * The one-shot export job: encode every labeled image plus its four
 * text-modality strings and write the engine's JSON Lines manifest.
 *
 * The manifest is the only boundary with the engine: an optional provenance
 * header line, then one object per case with keys `id`, `abnormality`,
 * `dementia`, `description`, `image_embedding`, `text_embeddings`.
 */

import { existsSync, readFileSync, writeFileSync } from "node:fs";
import { join } from "node:path";

import { Encoder, EncoderError, getEncoder } from "./encoder.js";
import { LabelRow, modalityTexts, parseLabelCsv } from "./labels.js";

export interface ExportJob {
  imageDir: string;
  labelsCsv: string;
  encoderName: string;
  outPath: string;
  batchSize: number;
}

export class ExportError extends Error {}

const IMAGE_EXTENSIONS = [".png", ".jpg", ".jpeg", ""];

function imagePath(job: ExportJob, id: string): string {
  for (const ext of IMAGE_EXTENSIONS) {
    const candidate = join(job.imageDir, `${id}${ext}`);
    if (existsSync(candidate)) {
      return candidate;
    }
  }
  throw new ExportError(
    `missing image for case '${id}' under ${job.imageDir} ` +
      `(tried extensions: ${IMAGE_EXTENSIONS.filter(Boolean).join(", ")})`,
  );
}

function checkDims(vector: number[], expected: number, what: string): void {
  if (vector.length !== expected) {
    throw new ExportError(
      `dimension drift: ${what} produced ${vector.length} values, expected ${expected}`,
    );
  }
  for (const value of vector) {
    if (!Number.isFinite(value)) {
      throw new ExportError(`${what} produced a non-finite component`);
    }
  }
}

interface CaseLine {
  id: string;
  abnormality: string;
  dementia: string;
  description: string;
  image_embedding: number[];
  text_embeddings: Record<string, number[]>;
}

function encodeCase(row: LabelRow, job: ExportJob, encoder: Encoder): CaseLine {
  const bytes = readFileSync(imagePath(job, row.id));
  const image = encoder.encodeImage(bytes);
  checkDims(image, encoder.dimImage, `image '${row.id}'`);
  const texts: Record<string, number[]> = {};
  for (const [modality, text] of Object.entries(modalityTexts(row))) {
    const vector = encoder.encodeText(text);
    checkDims(vector, encoder.dimText, `text '${row.id}'/${modality}`);
    texts[modality] = vector;
  }
  return {
    id: row.id,
    abnormality: row.abnormality,
    dementia: row.dementia,
    description: row.description,
    image_embedding: image,
    text_embeddings: texts,
  };
}

/** Run the export; returns the number of cases written. */
export function runExport(job: ExportJob): number {
  if (job.batchSize < 1) {
    throw new ExportError("batch size must be >= 1");
  }
  if (!existsSync(job.labelsCsv)) {
    throw new ExportError(`no such label CSV: ${job.labelsCsv}`);
  }
  const rows = parseLabelCsv(readFileSync(job.labelsCsv, "utf-8"));
  let encoder: Encoder;
  try {
    encoder = getEncoder(job.encoderName);
  } catch (error) {
    if (error instanceof EncoderError) {
      throw new ExportError(`encoder load failure: ${error.message}`);
    }
    throw error;
  }

  const provenance =
    `embed-export encoder=${encoder.name} ` +
    `dims=${encoder.dimImage}/${encoder.dimText} ` +
    `deterministic=${encoder.deterministic} ` +
    `preprocessing=${encoder.preprocessing}`;
  const lines: string[] = [JSON.stringify({ provenance })];
  for (let start = 0; start < rows.length; start += job.batchSize) {
    const batch = rows.slice(start, start + job.batchSize);
    for (const row of batch) {
      lines.push(JSON.stringify(encodeCase(row, job, encoder)));
    }
  }
  writeFileSync(job.outPath, lines.join("\n") + "\n", "utf-8");
  return rows.length;
}
