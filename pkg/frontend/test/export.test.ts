import { mkdirSync, mkdtempSync, readFileSync, writeFileSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";

import { beforeAll, describe, expect, it } from "vitest";

import { ExportError, runExport } from "../src/export.js";

const HEADER = "id,abnormality,dementia,description";

interface Fixture {
  dir: string;
  imageDir: string;
  labelsCsv: string;
}

function makeFixture(ids: string[]): Fixture {
  const dir = mkdtempSync(join(tmpdir(), "embed-export-"));
  const imageDir = join(dir, "images");
  const labelsCsv = join(dir, "labels.csv");
  const codes = ["normal", "mtl_atrophy", "wmh", "other_atrophy"];
  const dementias = ["non_demented", "ad", "other_dementia", "non_demented"];
  const rows = [HEADER];
  mkdirSync(imageDir);
  ids.forEach((id, i) => {
    writeFileSync(join(imageDir, `${id}.png`), Buffer.from(`fake-png-${id}`));
    rows.push(`${id},${codes[i % 4]},${dementias[i % 4]},"desc for ${id}, detailed"`);
  });
  writeFileSync(labelsCsv, rows.join("\n") + "\n");
  return { dir, imageDir, labelsCsv };
}

describe("runExport", () => {
  let fixture: Fixture;

  beforeAll(() => {
    fixture = makeFixture(["a", "b", "c", "d"]);
  });

  function job(out: string, overrides: Partial<Parameters<typeof runExport>[0]> = {}) {
    return {
      imageDir: fixture.imageDir,
      labelsCsv: fixture.labelsCsv,
      encoderName: "hash-v1",
      outPath: out,
      batchSize: 2,
      ...overrides,
    };
  }

  it("writes one provenance header plus one line per case", () => {
    const out = join(fixture.dir, "m1.jsonl");
    expect(runExport(job(out))).toBe(4);
    const lines = readFileSync(out, "utf-8").trim().split("\n");
    expect(lines).toHaveLength(5);
    const header = JSON.parse(lines[0]);
    expect(header.provenance).toMatch(/encoder=hash-v1/);
    const first = JSON.parse(lines[1]);
    expect(Object.keys(first).sort()).toEqual([
      "abnormality",
      "dementia",
      "description",
      "id",
      "image_embedding",
      "text_embeddings",
    ]);
    expect(first.image_embedding).toHaveLength(64);
    expect(Object.keys(first.text_embeddings).sort()).toEqual([
      "abnormality",
      "all",
      "description",
      "summary",
    ]);
  });

  it("is deterministic: two runs produce identical bytes", () => {
    const one = join(fixture.dir, "d1.jsonl");
    const two = join(fixture.dir, "d2.jsonl");
    runExport(job(one));
    runExport(job(two, { batchSize: 3 }));
    expect(readFileSync(one)).toEqual(readFileSync(two));
  });

  it("shares the abnormality-modality vector within a class", () => {
    const out = join(fixture.dir, "m2.jsonl");
    const extra = makeFixture(["x1", "x2"]);
    // both x1 and x2 rows with the same class
    writeFileSync(
      extra.labelsCsv,
      `${HEADER}\nx1,wmh,ad,first\nx2,wmh,ad,second\n`,
    );
    runExport({
      imageDir: extra.imageDir,
      labelsCsv: extra.labelsCsv,
      encoderName: "hash-v1",
      outPath: out,
      batchSize: 16,
    });
    const lines = readFileSync(out, "utf-8").trim().split("\n").slice(1);
    const [x1, x2] = lines.map((l) => JSON.parse(l));
    expect(x1.text_embeddings.abnormality).toEqual(x2.text_embeddings.abnormality);
    expect(x1.text_embeddings.description).not.toEqual(
      x2.text_embeddings.description,
    );
  });

  it("fails on a missing image naming the case", () => {
    const broken = makeFixture(["p", "q"]);
    writeFileSync(
      broken.labelsCsv,
      `${HEADER}\np,normal,ad,x\nmissing,wmh,ad,y\n`,
    );
    expect(() =>
      runExport({
        imageDir: broken.imageDir,
        labelsCsv: broken.labelsCsv,
        encoderName: "hash-v1",
        outPath: join(broken.dir, "out.jsonl"),
        batchSize: 4,
      }),
    ).toThrowError(/missing image for case 'missing'/);
  });

  it("fails on an unknown encoder", () => {
    expect(() =>
      runExport(job(join(fixture.dir, "never.jsonl"), { encoderName: "nope" })),
    ).toThrowError(ExportError);
  });

  it("fails on a missing label CSV", () => {
    expect(() =>
      runExport(job(join(fixture.dir, "never.jsonl"), {
        labelsCsv: join(fixture.dir, "absent.csv"),
      })),
    ).toThrowError(/no such label CSV/);
  });
});
