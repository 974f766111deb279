/**
 * Canonical label codes, their anchor phrases, and label-CSV parsing.
 *
 * The CSV schema is `id,abnormality,dementia,description` with the canonical
 * codes below; descriptions may be quoted and contain commas.
 */

import Papa from "papaparse";

export const ABNORMALITY_CODES = [
  "normal",
  "mtl_atrophy",
  "wmh",
  "other_atrophy",
] as const;
export type AbnormalityCode = (typeof ABNORMALITY_CODES)[number];

export const DEMENTIA_CODES = ["non_demented", "ad", "other_dementia"] as const;
export type DementiaCode = (typeof DEMENTIA_CODES)[number];

/** Fixed per-class text used as the abnormality anchor phrase. */
export const ABNORMALITY_PHRASES: Record<AbnormalityCode, string> = {
  normal: "Normal",
  mtl_atrophy: "Medial Temporal Lobe Atrophy",
  wmh: "White Matter Hyperintensities",
  other_atrophy: "Other Atrophy",
};

export const DEMENTIA_PHRASES: Record<DementiaCode, string> = {
  non_demented: "Non-demented",
  ad: "Alzheimer's Disease",
  other_dementia: "Other Dementia",
};

export interface LabelRow {
  id: string;
  abnormality: AbnormalityCode;
  dementia: DementiaCode;
  description: string;
}

const REQUIRED_COLUMNS = ["id", "abnormality", "dementia", "description"];

export class LabelCsvError extends Error {}

function asAbnormality(code: string, row: number): AbnormalityCode {
  if ((ABNORMALITY_CODES as readonly string[]).includes(code)) {
    return code as AbnormalityCode;
  }
  throw new LabelCsvError(
    `row ${row}: unknown abnormality code '${code}' ` +
      `(valid: ${ABNORMALITY_CODES.join(", ")})`,
  );
}

function asDementia(code: string, row: number): DementiaCode {
  if ((DEMENTIA_CODES as readonly string[]).includes(code)) {
    return code as DementiaCode;
  }
  throw new LabelCsvError(
    `row ${row}: unknown dementia code '${code}' ` +
      `(valid: ${DEMENTIA_CODES.join(", ")})`,
  );
}

/** Parse and validate a label CSV; throws LabelCsvError on schema problems. */
export function parseLabelCsv(text: string): LabelRow[] {
  const parsed = Papa.parse<Record<string, string>>(text.trim(), {
    header: true,
    skipEmptyLines: true,
  });
  if (parsed.errors.length > 0) {
    const first = parsed.errors[0];
    throw new LabelCsvError(`CSV parse error: ${first.message} (row ${first.row})`);
  }
  const columns = parsed.meta.fields ?? [];
  for (const column of REQUIRED_COLUMNS) {
    if (!columns.includes(column)) {
      throw new LabelCsvError(`missing CSV column '${column}'`);
    }
  }
  const rows: LabelRow[] = [];
  const seen = new Set<string>();
  parsed.data.forEach((record, i) => {
    const rowNumber = i + 2; // header is row 1
    const id = (record.id ?? "").trim();
    if (!id) {
      throw new LabelCsvError(`row ${rowNumber}: empty id`);
    }
    if (seen.has(id)) {
      throw new LabelCsvError(`row ${rowNumber}: duplicate id '${id}'`);
    }
    seen.add(id);
    rows.push({
      id,
      abnormality: asAbnormality((record.abnormality ?? "").trim(), rowNumber),
      dementia: asDementia((record.dementia ?? "").trim(), rowNumber),
      description: record.description ?? "",
    });
  });
  if (rows.length === 0) {
    throw new LabelCsvError("label CSV has no data rows");
  }
  return rows;
}

/**
 * The four text-modality strings for one case.
 *
 * description: the CSV description verbatim; abnormality: the fixed class
 * phrase; summary: class phrase + dementia phrase; all: summary + ". " +
 * description.
 */
export function modalityTexts(row: LabelRow): Record<string, string> {
  const abnormality = ABNORMALITY_PHRASES[row.abnormality];
  const summary = `${abnormality}. ${DEMENTIA_PHRASES[row.dementia]}`;
  return {
    description: row.description,
    abnormality,
    summary,
    all: `${summary}. ${row.description}`,
  };
}
