#!/usr/bin/env node
import { EncoderError, REQUIRED_DIM } from "./encoder.js";
import { exportEmbeddings } from "./export.js";
import { TsvError } from "./tsv.js";

const USAGE =
  `Usage: embed-export export --in texts.tsv --model hashing-${REQUIRED_DIM} --out items.emb1`;

function parseArgs(argv: string[]): { in: string; model: string; out: string } {
  if (argv[0] !== "export") {
    console.error(USAGE);
    process.exit(2);
  }
  const opts: Record<string, string> = {};
  for (let i = 1; i < argv.length; i += 2) {
    const key = argv[i];
    const value = argv[i + 1];
    if (!/^--(in|model|out)$/.test(key) || value === undefined) {
      console.error(USAGE);
      process.exit(2);
    }
    opts[key.slice(2)] = value;
  }
  for (const key of ["in", "model", "out"]) {
    if (!(key in opts)) {
      console.error(`missing --${key}\n${USAGE}`);
      process.exit(2);
    }
  }
  return opts as { in: string; model: string; out: string };
}

const args = parseArgs(process.argv.slice(2));
try {
  const n = exportEmbeddings(args.in, args.model, args.out);
  console.log(`wrote ${n} x ${REQUIRED_DIM} embeddings to ${args.out}`);
} catch (err) {
  if (err instanceof EncoderError) {
    console.error(`encoder error: ${err.message}`);
    process.exit(2);
  }
  if (err instanceof TsvError) {
    console.error(`input error: ${err.message}`);
    process.exit(3);
  }
  throw err;
}
