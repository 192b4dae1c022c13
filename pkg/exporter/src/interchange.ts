/**
 * Binary embedding interchange format, shared with the Python toolkit.
 *
 * Layout: magic "EEMB" (4 bytes), u32 version LE, u8 dtype code (1 = f32),
 * u64 row count LE, u32 dimension LE, then rows*dim float32 LE values.
 * Sidecar `<file>.meta.jsonl` carries one {"row": i, "source": str} per row.
 */

import * as fs from 'fs';
import * as path from 'path';

export const EEMB_MAGIC = 'EEMB';
export const EEMB_VERSION = 1;
export const DTYPE_F32 = 1;
export const HEADER_BYTES = 4 + 4 + 1 + 8 + 4;

export class CorruptFile extends Error {}

/** Write bytes via a temp file in the target directory, then rename. */
export function atomicWrite(filePath: string, data: Buffer): void {
  const dir = path.dirname(path.resolve(filePath));
  fs.mkdirSync(dir, { recursive: true });
  const tmp = path.join(dir, `.tmp-${process.pid}-${Math.random().toString(36).slice(2)}`);
  try {
    fs.writeFileSync(tmp, data);
    fs.renameSync(tmp, filePath);
  } catch (err) {
    if (fs.existsSync(tmp)) fs.unlinkSync(tmp);
    throw err;
  }
}

export function encodeEmbeddings(rows: Float32Array[], dim: number): Buffer {
  const header = Buffer.alloc(HEADER_BYTES);
  header.write(EEMB_MAGIC, 0, 'ascii');
  header.writeUInt32LE(EEMB_VERSION, 4);
  header.writeUInt8(DTYPE_F32, 8);
  header.writeBigUInt64LE(BigInt(rows.length), 9);
  header.writeUInt32LE(dim, 17);

  const payload = Buffer.alloc(rows.length * dim * 4);
  const view = new DataView(payload.buffer, payload.byteOffset, payload.byteLength);
  for (let r = 0; r < rows.length; r++) {
    const row = rows[r];
    if (row.length !== dim) {
      throw new Error(`row ${r} has length ${row.length}, expected ${dim}`);
    }
    for (let c = 0; c < dim; c++) {
      view.setFloat32((r * dim + c) * 4, row[c], true);
    }
  }
  return Buffer.concat([header, payload]);
}

export function writeEmbeddings(
  filePath: string,
  rows: Float32Array[],
  dim: number,
  sources?: string[],
): void {
  atomicWrite(filePath, encodeEmbeddings(rows, dim));
  if (sources !== undefined) {
    if (sources.length !== rows.length) {
      throw new Error('sidecar source count must match row count');
    }
    const lines = sources.map((source, row) => JSON.stringify({ row, source }));
    atomicWrite(filePath + '.meta.jsonl', Buffer.from(lines.length ? lines.join('\n') + '\n' : ''));
  }
}

export interface Embeddings {
  rows: number;
  dim: number;
  data: Float32Array; // rows*dim, row-major
}

export function readEmbeddings(filePath: string): Embeddings {
  const blob = fs.readFileSync(filePath);
  if (blob.length < HEADER_BYTES) throw new CorruptFile(`${filePath}: truncated header`);
  if (blob.toString('ascii', 0, 4) !== EEMB_MAGIC) {
    throw new CorruptFile(`${filePath}: bad magic`);
  }
  const version = blob.readUInt32LE(4);
  if (version !== EEMB_VERSION) throw new CorruptFile(`${filePath}: unsupported version ${version}`);
  const dtype = blob.readUInt8(8);
  if (dtype !== DTYPE_F32) throw new CorruptFile(`${filePath}: unsupported dtype code ${dtype}`);
  const rows = Number(blob.readBigUInt64LE(9));
  const dim = blob.readUInt32LE(17);
  if (dim < 1) throw new CorruptFile(`${filePath}: dimension must be >= 1`);
  const expected = HEADER_BYTES + rows * dim * 4;
  if (blob.length !== expected) {
    throw new CorruptFile(`${filePath}: payload length ${blob.length} != expected ${expected}`);
  }
  const data = new Float32Array(rows * dim);
  const view = new DataView(blob.buffer, blob.byteOffset + HEADER_BYTES, rows * dim * 4);
  for (let i = 0; i < data.length; i++) data[i] = view.getFloat32(i * 4, true);
  return { rows, dim, data };
}

export function readSidecar(filePath: string): string[] {
  const text = fs.readFileSync(filePath + '.meta.jsonl', 'utf-8');
  const sources: string[] = [];
  for (const line of text.split('\n')) {
    if (!line.trim()) continue;
    const rec = JSON.parse(line);
    if (rec.row !== sources.length) {
      throw new CorruptFile(`${filePath}.meta.jsonl: non-sequential row ${rec.row}`);
    }
    sources.push(rec.source);
  }
  return sources;
}

export interface VerifyReport {
  ok: boolean;
  rows: number;
  dim: number;
  normMin: number;
  normMax: number;
  nonFiniteRows: number[];
  offUnitRows: number[];
  problems: string[];
}

/**
 * Structural and statistical checks on an interchange file.
 *
 * Structure problems (bad magic/version/dtype/length) throw CorruptFile;
 * content problems (non-finite values, off-unit norms when expectUnitNorm)
 * are reported with row indices and make `ok` false.
 */
export function verifyInterchange(
  filePath: string,
  options: { expectUnitNorm?: boolean; normTolerance?: number } = {},
): VerifyReport {
  const expectUnit = options.expectUnitNorm ?? false;
  const tol = options.normTolerance ?? 1e-3;
  const { rows, dim, data } = readEmbeddings(filePath);
  const nonFiniteRows: number[] = [];
  const offUnitRows: number[] = [];
  let normMin = Infinity;
  let normMax = -Infinity;
  for (let r = 0; r < rows; r++) {
    let sq = 0;
    let finite = true;
    for (let c = 0; c < dim; c++) {
      const v = data[r * dim + c];
      if (!Number.isFinite(v)) finite = false;
      sq += v * v;
    }
    if (!finite) {
      nonFiniteRows.push(r);
      continue;
    }
    const norm = Math.sqrt(sq);
    normMin = Math.min(normMin, norm);
    normMax = Math.max(normMax, norm);
    if (expectUnit && Math.abs(norm - 1) > tol) offUnitRows.push(r);
  }
  const problems: string[] = [];
  if (nonFiniteRows.length) {
    problems.push(`non-finite values in rows: ${nonFiniteRows.slice(0, 10).join(', ')}`);
  }
  if (offUnitRows.length) {
    problems.push(`rows off unit norm (tol ${tol}): ${offUnitRows.slice(0, 10).join(', ')}`);
  }
  return {
    ok: problems.length === 0,
    rows,
    dim,
    normMin: rows ? normMin : 0,
    normMax: rows ? normMax : 0,
    nonFiniteRows,
    offUnitRows,
    problems,
  };
}
