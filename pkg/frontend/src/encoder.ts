/**
 * Encoder registry.
 *
 * An encoder maps image bytes and text strings to fixed-dimension raw
 * feature vectors (unnormalized; the downstream engine owns normalization).
 * `hash-v1` is the deterministic mode: embeddings are expanded from the
 * SHA-256 of the content, so identical inputs always produce identical
 * vectors and the exporter is byte-reproducible.  Real model adapters plug
 * in here by registering another implementation.
 */

import { createHash } from "node:crypto";

export interface Encoder {
  readonly name: string;
  readonly dimImage: number;
  readonly dimText: number;
  readonly deterministic: boolean;
  /** One-line preprocessing note recorded in the manifest provenance. */
  readonly preprocessing: string;
  encodeImage(bytes: Buffer): number[];
  encodeText(text: string): number[];
}

export class EncoderError extends Error {}

const MASK64 = (1n << 64n) - 1n;

/** splitmix64: deterministic 64-bit PRNG stream from a seed. */
function* splitmix64(seed: bigint): Generator<bigint> {
  let state = seed & MASK64;
  for (;;) {
    state = (state + 0x9e3779b97f4a7c15n) & MASK64;
    let z = state;
    z = ((z ^ (z >> 30n)) * 0xbf58476d1ce4e5b9n) & MASK64;
    z = ((z ^ (z >> 27n)) * 0x94d049bb133111ebn) & MASK64;
    yield z ^ (z >> 31n);
  }
}

function hashToVector(content: Buffer, dim: number): number[] {
  const digest = createHash("sha256").update(content).digest();
  const seed = digest.readBigUInt64BE(0) ^ digest.readBigUInt64BE(8);
  const stream = splitmix64(seed);
  const vector: number[] = [];
  for (let i = 0; i < dim; i += 1) {
    const word = stream.next().value as bigint;
    // top 53 bits -> exact double in [0, 1), mapped to [-1, 1)
    const unit = Number(word >> 11n) / 2 ** 53;
    vector.push(2 * unit - 1);
  }
  return vector;
}

class HashEncoder implements Encoder {
  readonly name = "hash-v1";
  readonly dimImage = 64;
  readonly dimText = 64;
  readonly deterministic = true;
  readonly preprocessing = "raw-bytes (content hash; no image decoding)";

  encodeImage(bytes: Buffer): number[] {
    return hashToVector(bytes, this.dimImage);
  }

  encodeText(text: string): number[] {
    return hashToVector(Buffer.from(text, "utf-8"), this.dimText);
  }
}

const REGISTRY: Record<string, () => Encoder> = {
  "hash-v1": () => new HashEncoder(),
};

export function availableEncoders(): string[] {
  return Object.keys(REGISTRY).sort();
}

export function getEncoder(name: string): Encoder {
  const factory = REGISTRY[name];
  if (!factory) {
    throw new EncoderError(
      `unknown encoder '${name}' (available: ${availableEncoders().join(", ")})`,
    );
  }
  return factory();
}
