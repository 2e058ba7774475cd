/** EMB1 binary format: magic "EMB1", little-endian u32 rows, u32 cols, then
 * rows*cols little-endian f32 values in row-major order. */

export class Emb1Error extends Error {}

export function writeEmb1(rows: Float32Array[], cols: number): Buffer {
  const header = Buffer.alloc(12);
  header.write("EMB1", 0, "ascii");
  header.writeUInt32LE(rows.length, 4);
  header.writeUInt32LE(cols, 8);
  const body = Buffer.alloc(rows.length * cols * 4);
  rows.forEach((row, r) => {
    if (row.length !== cols) {
      throw new Emb1Error(`row ${r} has ${row.length} values, expected ${cols}`);
    }
    for (let c = 0; c < cols; c++) {
      body.writeFloatLE(row[c], (r * cols + c) * 4);
    }
  });
  return Buffer.concat([header, body]);
}

export function readEmb1(buf: Buffer): { rows: number; cols: number; data: Float32Array } {
  if (buf.length < 12 || buf.toString("ascii", 0, 4) !== "EMB1") {
    throw new Emb1Error("not an EMB1 file");
  }
  const rows = buf.readUInt32LE(4);
  const cols = buf.readUInt32LE(8);
  if (buf.length !== 12 + rows * cols * 4) {
    throw new Emb1Error(`expected ${12 + rows * cols * 4} bytes, got ${buf.length}`);
  }
  const data = new Float32Array(rows * cols);
  for (let i = 0; i < data.length; i++) data[i] = buf.readFloatLE(12 + i * 4);
  return { rows, cols, data };
}
