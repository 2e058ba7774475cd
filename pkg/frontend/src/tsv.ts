/** Item text TSV parsing: item_id <TAB> title <TAB> description <TAB> brand. */

export interface ItemTextRecord {
  id: number;
  title: string;
  description: string;
  brand: string;
}

export class TsvError extends Error {}

/**
 * Parse the item text file. `#`-prefixed lines are comments. Ids must be
 * dense 0..n-1 (any order in the file); every row needs exactly 4 columns,
 * though the three text fields may be empty.
 */
export function parseItemTexts(content: string): ItemTextRecord[] {
  const records = new Map<number, ItemTextRecord>();
  const lines = content.split("\n");
  for (let lineno = 1; lineno <= lines.length; lineno++) {
    const line = lines[lineno - 1];
    if (line.trim() === "" || line.startsWith("#")) continue;
    const cols = line.replace(/\r$/, "").split("\t");
    if (cols.length !== 4) {
      throw new TsvError(`line ${lineno}: expected 4 columns, got ${cols.length}`);
    }
    const id = Number(cols[0]);
    if (!Number.isInteger(id) || id < 0) {
      throw new TsvError(`line ${lineno}: bad item id '${cols[0]}'`);
    }
    if (records.has(id)) {
      throw new TsvError(`line ${lineno}: duplicate item id ${id}`);
    }
    records.set(id, { id, title: cols[1], description: cols[2], brand: cols[3] });
  }
  if (records.size === 0) throw new TsvError("no item rows found");
  for (let i = 0; i < records.size; i++) {
    if (!records.has(i)) {
      throw new TsvError(`item ids are not dense: missing id ${i}`);
    }
  }
  return Array.from({ length: records.size }, (_, i) => records.get(i)!);
}

/** Title, description and brand joined with single spaces; empty fields
 * leave no double spaces behind. */
export function concatText(rec: ItemTextRecord): string {
  return [rec.title, rec.description, rec.brand]
    .join(" ")
    .replace(/ +/g, " ")
    .trim();
}
