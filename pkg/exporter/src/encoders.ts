/**
 * Embedding encoders behind a common interface.
 *
 * The mock encoder is fully deterministic (hash-seeded) and exists so the
 * exporter, its file formats, and the cross-language round-trip can be
 * developed and tested without model weights. Real checkpoints load
 * through @huggingface/transformers when that package is installed; weight
 * acquisition and licensing are the user's responsibility.
 */

import { createHash } from 'crypto';
import * as fs from 'fs';

export class ModelLoadError extends Error {}
export class EncodeError extends Error {}
export class DecodeError extends Error {}

export interface Encoder {
  readonly name: string;
  readonly dim: number;
  readonly preDim: number;
  encodeText(texts: string[]): Promise<Float32Array[]>;
  encodeImages(paths: string[]): Promise<{ pre: Float32Array[]; projected: Float32Array[] }>;
}

/** splitmix64 over a hash-derived seed; uniform floats in [-1, 1). */
function* seededStream(seedBytes: Buffer): Generator<number> {
  let state = seedBytes.readBigUInt64LE(0);
  const mask = (1n << 64n) - 1n;
  while (true) {
    state = (state + 0x9e3779b97f4a7c15n) & mask;
    let z = state;
    z = ((z ^ (z >> 30n)) * 0xbf58476d1ce4e5b9n) & mask;
    z = ((z ^ (z >> 27n)) * 0x94d049bb133111ebn) & mask;
    z = z ^ (z >> 31n);
    yield Number(z >> 11n) / 2 ** 53 * 2 - 1;
  }
}

function hashedVector(key: string, dim: number): Float32Array {
  const digest = createHash('sha256').update(key).digest();
  const stream = seededStream(digest);
  const out = new Float32Array(dim);
  for (let i = 0; i < dim; i++) out[i] = stream.next().value as number;
  return out;
}

function normalize(vec: Float32Array): Float32Array {
  let sq = 0;
  for (const v of vec) sq += v * v;
  const norm = Math.sqrt(sq);
  if (norm < 1e-12) throw new EncodeError('vector collapsed to zero norm');
  const out = new Float32Array(vec.length);
  for (let i = 0; i < vec.length; i++) out[i] = vec[i] / norm;
  return out;
}

/** Deterministic bag-of-words stand-in for a text tower. */
export class MockEncoder implements Encoder {
  readonly name = 'mock';
  readonly dim: number;
  readonly preDim: number;

  constructor(dim = 64, preDim?: number) {
    this.dim = dim;
    this.preDim = preDim ?? dim;
  }

  async encodeText(texts: string[]): Promise<Float32Array[]> {
    return texts.map((text) => {
      const tokens = text.toLowerCase().split(/\s+/).filter(Boolean);
      if (tokens.length === 0) throw new EncodeError(`cannot embed empty text`);
      const acc = new Float64Array(this.dim);
      for (const tok of tokens) {
        const vec = hashedVector(`text:${tok}`, this.dim);
        for (let i = 0; i < this.dim; i++) acc[i] += vec[i];
      }
      return normalize(Float32Array.from(acc));
    });
  }

  async encodeImages(paths: string[]): Promise<{ pre: Float32Array[]; projected: Float32Array[] }> {
    const pre: Float32Array[] = [];
    const projected: Float32Array[] = [];
    for (const p of paths) {
      let bytes: Buffer;
      try {
        bytes = fs.readFileSync(p);
      } catch (err) {
        throw new DecodeError(`cannot read image ${p}: ${err}`);
      }
      const digest = createHash('sha256').update(bytes).digest('hex');
      const raw = hashedVector(`image:${digest}`, this.preDim);
      // Pre-projection features stay unnormalized (scaled for realism).
      const scaled = new Float32Array(this.preDim);
      for (let i = 0; i < this.preDim; i++) scaled[i] = raw[i] * 3.0;
      pre.push(scaled);
      projected.push(normalize(scaled.slice(0, this.dim)));
    }
    return { pre, projected };
  }
}

/**
 * Real checkpoint adapter. Loads @huggingface/transformers lazily; the
 * package (and downloaded weights) must already be available locally.
 */
export class TransformersEncoder implements Encoder {
  readonly name: string;
  readonly dim: number;
  readonly preDim: number;
  private textPipe: any;
  private imagePipe: any;

  private constructor(name: string, dim: number, textPipe: any, imagePipe: any) {
    this.name = name;
    this.dim = dim;
    this.preDim = dim;
    this.textPipe = textPipe;
    this.imagePipe = imagePipe;
  }

  static async load(modelName: string): Promise<TransformersEncoder> {
    let transformers: any;
    try {
      transformers = await import('@huggingface/transformers' as string);
    } catch {
      throw new ModelLoadError(
        '@huggingface/transformers is not installed; install it (and fetch the ' +
          'checkpoint) to export from real models, or use --model mock',
      );
    }
    const textPipe = await transformers.pipeline('feature-extraction', modelName);
    const imagePipe = await transformers.pipeline('image-feature-extraction', modelName);
    const probe = await textPipe('probe', { pooling: 'mean', normalize: true });
    return new TransformersEncoder(modelName, probe.data.length, textPipe, imagePipe);
  }

  async encodeText(texts: string[]): Promise<Float32Array[]> {
    const out: Float32Array[] = [];
    for (const text of texts) {
      const res = await this.textPipe(text, { pooling: 'mean', normalize: true });
      out.push(Float32Array.from(res.data));
    }
    return out;
  }

  async encodeImages(paths: string[]): Promise<{ pre: Float32Array[]; projected: Float32Array[] }> {
    const pre: Float32Array[] = [];
    const projected: Float32Array[] = [];
    for (const p of paths) {
      const res = await this.imagePipe(p);
      const raw = Float32Array.from(res.data);
      pre.push(raw);
      let sq = 0;
      for (const v of raw) sq += v * v;
      const norm = Math.sqrt(sq) || 1;
      projected.push(raw.map((v) => v / norm));
    }
    return { pre, projected };
  }
}

export async function loadEncoder(modelName: string, dim = 64): Promise<Encoder> {
  if (modelName === 'mock') return new MockEncoder(dim);
  return TransformersEncoder.load(modelName);
}
