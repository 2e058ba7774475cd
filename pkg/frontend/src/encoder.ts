/** Sentence encoders producing fixed-width embedding rows.
 *
 * The engine downstream only contracts on "1024-dim EMB1", so an encoder is
 * anything mapping a string to 1024 floats. The built-in `hashing-1024`
 * model is a deterministic bag-of-tokens feature hasher: no model weights,
 * bit-identical output everywhere, good enough to exercise the pipeline.
 * Plug a real sentence-transformer behind the same interface for production
 * embeddings.
 */

export const REQUIRED_DIM = 1024;

export interface Encoder {
  readonly name: string;
  readonly dim: number;
  encode(text: string): Float32Array;
}

export class EncoderError extends Error {}

// FNV-1a, 32-bit
function fnv1a(s: string, seed: number): number {
  let h = (0x811c9dc5 ^ seed) >>> 0;
  for (let i = 0; i < s.length; i++) {
    h ^= s.charCodeAt(i);
    h = Math.imul(h, 0x01000193) >>> 0;
  }
  return h;
}

export class HashingEncoder implements Encoder {
  readonly name: string;
  readonly dim: number;

  constructor(dim: number) {
    this.name = `hashing-${dim}`;
    this.dim = dim;
  }

  encode(text: string): Float32Array {
    const acc = new Float64Array(this.dim);
    const tokens = text.toLowerCase().split(/\s+/).filter((t) => t !== "");
    for (const tok of tokens) {
      const bucket = fnv1a(tok, 0) % this.dim;
      // second hash decides the sign so collisions tend to cancel
      const sign = fnv1a(tok, 0x9e3779b9) & 1 ? 1 : -1;
      acc[bucket] += sign;
    }
    let norm = 0;
    for (let i = 0; i < this.dim; i++) norm += acc[i] * acc[i];
    norm = Math.sqrt(norm);
    const out = new Float32Array(this.dim);
    if (norm > 0) {
      for (let i = 0; i < this.dim; i++) out[i] = Math.fround(acc[i] / norm);
    }
    return out;
  }
}

export function makeEncoder(model: string): Encoder {
  const m = /^hashing-(\d+)$/.exec(model);
  if (!m) {
    throw new EncoderError(
      `unknown model '${model}'; available: hashing-${REQUIRED_DIM}`);
  }
  const dim = Number(m[1]);
  if (dim !== REQUIRED_DIM) {
    throw new EncoderError(
      `model '${model}' outputs ${dim}-dim vectors but the engine expects ` +
      `${REQUIRED_DIM}; add a projection layer or pick a ${REQUIRED_DIM}-dim model`);
  }
  return new HashingEncoder(dim);
}
