import * as fs from "fs";

import { makeEncoder } from "./encoder.js";
import { writeEmb1 } from "./emb1.js";
import { concatText, parseItemTexts } from "./tsv.js";

/** Read the item text TSV, encode every row, write the EMB1 file. Row order
 * follows the item ids. Returns the number of rows written. */
export function exportEmbeddings(inPath: string, model: string, outPath: string): number {
  const encoder = makeEncoder(model);
  const records = parseItemTexts(fs.readFileSync(inPath, "utf-8"));
  const rows = records.map((rec) => encoder.encode(concatText(rec)));
  fs.writeFileSync(outPath, writeEmb1(rows, encoder.dim));
  return rows.length;
}
