#!/usr/bin/env node
/**
 * embedding-exporter: write image/text embeddings in the EEMB interchange
 * format consumed by the training/eval toolkit.
 *
 * Subcommands:
 *   export-text   --model <name|mock> --input texts.txt --output out.eemb
 *   export-images --model <name|mock> --input paths.txt
 *                 --output-pre pre.eemb --output-proj proj.eemb
 *   verify        <file.eemb> [--unit-norm]
 *
 * Exit codes: 0 success, 1 runtime/verification failure, 2 usage error.
 */

import * as fs from 'fs';
import { loadEncoder, ModelLoadError, DecodeError, EncodeError } from './encoders.js';
import { verifyInterchange, writeEmbeddings, CorruptFile } from './interchange.js';

interface Flags {
  [key: string]: string | boolean;
}

function parseFlags(argv: string[]): { positional: string[]; flags: Flags } {
  const positional: string[] = [];
  const flags: Flags = {};
  for (let i = 0; i < argv.length; i++) {
    const arg = argv[i];
    if (arg.startsWith('--')) {
      const name = arg.slice(2);
      if (i + 1 < argv.length && !argv[i + 1].startsWith('--')) {
        flags[name] = argv[++i];
      } else {
        flags[name] = true;
      }
    } else {
      positional.push(arg);
    }
  }
  return { positional, flags };
}

function readLines(path: string): string[] {
  return fs
    .readFileSync(path, 'utf-8')
    .split('\n')
    .map((l) => l.trimEnd())
    .filter((l) => l.length > 0);
}

function usage(message?: string): number {
  if (message) console.error(`error: ${message}`);
  console.error(
    'usage: embedding-exporter export-text --model <name> --input <txt> --output <eemb> [--dim N] [--batch-size N]\n' +
      '       embedding-exporter export-images --model <name> --input <txt> --output-pre <eemb> --output-proj <eemb> [--dim N]\n' +
      '       embedding-exporter verify <eemb> [--unit-norm]',
  );
  return 2;
}

async function cmdExportText(flags: Flags): Promise<number> {
  const model = String(flags['model'] ?? 'mock');
  const input = flags['input'];
  const output = flags['output'];
  if (typeof input !== 'string' || typeof output !== 'string') {
    return usage('export-text needs --input and --output');
  }
  const dim = Number(flags['dim'] ?? 64);
  const batchSize = Number(flags['batch-size'] ?? 64);
  const texts = fs.existsSync(input) ? readLines(input) : null;
  if (texts === null) return usage(`input file not found: ${input}`);
  const encoder = await loadEncoder(model, dim);
  const rows: Float32Array[] = [];
  for (let start = 0; start < texts.length; start += batchSize) {
    const batch = texts.slice(start, start + batchSize);
    rows.push(...(await encoder.encodeText(batch)));
  }
  writeEmbeddings(output, rows, encoder.dim, texts);
  console.log(`wrote ${rows.length} x ${encoder.dim} text embeddings -> ${output}`);
  return 0;
}

async function cmdExportImages(flags: Flags): Promise<number> {
  const model = String(flags['model'] ?? 'mock');
  const input = flags['input'];
  const outputPre = flags['output-pre'];
  const outputProj = flags['output-proj'];
  if (typeof input !== 'string' || typeof outputPre !== 'string' || typeof outputProj !== 'string') {
    return usage('export-images needs --input, --output-pre and --output-proj');
  }
  if (!fs.existsSync(input)) return usage(`input file not found: ${input}`);
  const dim = Number(flags['dim'] ?? 64);
  const paths = readLines(input);
  const encoder = await loadEncoder(model, dim);
  const { pre, projected } = await encoder.encodeImages(paths);
  writeEmbeddings(outputPre, pre, encoder.preDim, paths);
  writeEmbeddings(outputProj, projected, encoder.dim, paths);
  console.log(
    `wrote ${pre.length} x ${encoder.preDim} pre-projection features -> ${outputPre}\n` +
      `wrote ${projected.length} x ${encoder.dim} projected embeddings -> ${outputProj}`,
  );
  return 0;
}

function cmdVerify(positional: string[], flags: Flags): number {
  if (positional.length !== 1) return usage('verify needs exactly one file');
  const report = verifyInterchange(positional[0], {
    expectUnitNorm: Boolean(flags['unit-norm']),
  });
  console.log(
    `rows=${report.rows} dim=${report.dim} ` +
      `norm=[${report.normMin.toFixed(6)}, ${report.normMax.toFixed(6)}]`,
  );
  for (const problem of report.problems) console.error(`problem: ${problem}`);
  console.log(report.ok ? 'OK' : 'FAILED');
  return report.ok ? 0 : 1;
}

export async function main(argv: string[]): Promise<number> {
  const [command, ...rest] = argv;
  const { positional, flags } = parseFlags(rest);
  try {
    switch (command) {
      case 'export-text':
        return await cmdExportText(flags);
      case 'export-images':
        return await cmdExportImages(flags);
      case 'verify':
        return cmdVerify(positional, flags);
      default:
        return usage(command ? `unknown command ${command}` : 'missing command');
    }
  } catch (err) {
    if (err instanceof CorruptFile || err instanceof ModelLoadError ||
        err instanceof DecodeError || err instanceof EncodeError) {
      console.error(`error: ${err.message}`);
      return 1;
    }
    throw err;
  }
}

const isDirectRun = process.argv[1] && import.meta.url.endsWith(process.argv[1].split('/').pop()!);
if (isDirectRun) {
  main(process.argv.slice(2)).then((code) => process.exit(code));
}
