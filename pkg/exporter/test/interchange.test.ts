import { execFileSync } from 'child_process';
import { createHash } from 'crypto';
import * as fs from 'fs';
import * as os from 'os';
import * as path from 'path';
import { afterAll, describe, expect, it } from 'vitest';

import {
  CorruptFile,
  HEADER_BYTES,
  encodeEmbeddings,
  readEmbeddings,
  readSidecar,
  verifyInterchange,
  writeEmbeddings,
} from '../src/interchange.js';

const tmpRoot = fs.mkdtempSync(path.join(os.tmpdir(), 'eemb-'));
afterAll(() => fs.rmSync(tmpRoot, { recursive: true, force: true }));

function tmpFile(name: string): string {
  return path.join(tmpRoot, name);
}

function randomRows(n: number, dim: number, seed = 1): Float32Array[] {
  let state = seed;
  const rows: Float32Array[] = [];
  for (let r = 0; r < n; r++) {
    const row = new Float32Array(dim);
    for (let c = 0; c < dim; c++) {
      state = (state * 1103515245 + 12345) & 0x7fffffff;
      row[c] = (state / 0x7fffffff) * 2 - 1;
    }
    rows.push(row);
  }
  return rows;
}

describe('interchange format', () => {
  it('round-trips values and sidecar', () => {
    const rows = randomRows(7, 5);
    const file = tmpFile('rt.eemb');
    writeEmbeddings(file, rows, 5, rows.map((_, i) => `source ${i}`));
    const back = readEmbeddings(file);
    expect(back.rows).toBe(7);
    expect(back.dim).toBe(5);
    for (let r = 0; r < 7; r++) {
      for (let c = 0; c < 5; c++) {
        expect(back.data[r * 5 + c]).toBe(rows[r][c]);
      }
    }
    expect(readSidecar(file)).toEqual(rows.map((_, i) => `source ${i}`));
  });

  it('writes the documented header layout', () => {
    const blob = encodeEmbeddings(randomRows(2, 3), 3);
    expect(blob.toString('ascii', 0, 4)).toBe('EEMB');
    expect(blob.readUInt32LE(4)).toBe(1);
    expect(blob.readUInt8(8)).toBe(1);
    expect(Number(blob.readBigUInt64LE(9))).toBe(2);
    expect(blob.readUInt32LE(17)).toBe(3);
    expect(blob.length).toBe(HEADER_BYTES + 2 * 3 * 4);
  });

  it('handles zero rows', () => {
    const file = tmpFile('empty.eemb');
    writeEmbeddings(file, [], 8, []);
    const back = readEmbeddings(file);
    expect(back.rows).toBe(0);
    expect(back.dim).toBe(8);
  });

  it('rejects truncated files', () => {
    const file = tmpFile('trunc.eemb');
    writeEmbeddings(file, randomRows(4, 4), 4);
    const blob = fs.readFileSync(file);
    fs.writeFileSync(file, blob.subarray(0, blob.length - 6));
    expect(() => readEmbeddings(file)).toThrow(CorruptFile);
  });

  it('rejects bad magic', () => {
    const file = tmpFile('magic.eemb');
    fs.writeFileSync(file, Buffer.concat([Buffer.from('NOPE'), Buffer.alloc(40)]));
    expect(() => readEmbeddings(file)).toThrow(CorruptFile);
  });
});

describe('verifyInterchange', () => {
  it('passes a fresh export', () => {
    const file = tmpFile('ok.eemb');
    const rows = randomRows(6, 8).map((row) => {
      let sq = 0;
      for (const v of row) sq += v * v;
      const norm = Math.sqrt(sq);
      return row.map((v) => v / norm);
    });
    writeEmbeddings(file, rows, 8);
    const report = verifyInterchange(file, { expectUnitNorm: true });
    expect(report.ok).toBe(true);
    expect(report.normMin).toBeGreaterThan(0.999);
    expect(report.normMax).toBeLessThan(1.001);
  });

  it('fails on a NaN row with its index', () => {
    const file = tmpFile('nan.eemb');
    const rows = randomRows(5, 4);
    rows[3][1] = NaN;
    writeEmbeddings(file, rows, 4);
    const report = verifyInterchange(file);
    expect(report.ok).toBe(false);
    expect(report.nonFiniteRows).toEqual([3]);
    expect(report.problems[0]).toContain('3');
  });

  it('throws CorruptFile on truncation', () => {
    const file = tmpFile('vtrunc.eemb');
    writeEmbeddings(file, randomRows(3, 3), 3);
    const blob = fs.readFileSync(file);
    fs.writeFileSync(file, blob.subarray(0, blob.length - 2));
    expect(() => verifyInterchange(file)).toThrow(CorruptFile);
  });

  it('flags off-unit rows only when asked', () => {
    const file = tmpFile('norm.eemb');
    writeEmbeddings(file, randomRows(4, 6), 6); // raw rows, not unit
    expect(verifyInterchange(file).ok).toBe(true);
    expect(verifyInterchange(file, { expectUnitNorm: true }).ok).toBe(false);
  });
});

describe('cross-language round-trip with the Python toolkit', () => {
  const python = (() => {
    try {
      execFileSync('python3', ['-c', 'import wincel.io'], { stdio: 'ignore' });
      return true;
    } catch {
      return false;
    }
  })();

  it.skipIf(!python)('python reads TS-written files bit-exactly', () => {
    const rows = randomRows(11, 6, 99);
    const file = tmpFile('xlang.eemb');
    writeEmbeddings(file, rows, 6, rows.map((_, i) => `row ${i}`));

    const tsPayload = createHash('sha256')
      .update(fs.readFileSync(file).subarray(HEADER_BYTES))
      .digest('hex');

    const script = [
      'import hashlib, sys',
      'from wincel.io import read_embeddings, read_sidecar',
      'arr = read_embeddings(sys.argv[1])',
      'print(arr.shape[0], arr.shape[1])',
      "print(hashlib.sha256(arr.astype('<f4').tobytes()).hexdigest())",
      'print(read_sidecar(sys.argv[1])[10])',
    ].join('\n');
    const out = execFileSync('python3', ['-c', script, file], { encoding: 'utf-8' })
      .trim()
      .split('\n');
    expect(out[0]).toBe('11 6');
    expect(out[1]).toBe(tsPayload);
    expect(out[2]).toBe('row 10');
  });

  it.skipIf(!python)('TS reads Python-written files bit-exactly', () => {
    const file = tmpFile('from273py.eemb');
    const script = [
      'import numpy as np, sys',
      'from wincel.io import write_embeddings',
      'rng = np.random.default_rng(5)',
      'arr = rng.standard_normal((9, 4)).astype(np.float32)',
      "write_embeddings(sys.argv[1], arr, sources=[f's{i}' for i in range(9)])",
      "print(arr.astype('<f4').tobytes().hex())",
    ].join('\n');
    const pyHex = execFileSync('python3', ['-c', script, file], { encoding: 'utf-8' }).trim();
    const back = readEmbeddings(file);
    expect(back.rows).toBe(9);
    const view = Buffer.alloc(back.data.length * 4);
    const dv = new DataView(view.buffer);
    back.data.forEach((v, i) => dv.setFloat32(i * 4, v, true));
    expect(view.toString('hex')).toBe(pyHex);
    expect(readSidecar(file)).toHaveLength(9);
  });
});
