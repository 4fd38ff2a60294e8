/**
 * Binary embedding file format shared with the affinity trainer.
 *
 * Little-endian layout:
 *   header: magic "DDSEQEMB" | u32 version | u32 d_e | u64 count | u8 dtype
 *   record: u32 id_length | id bytes (utf-8) | u32 L | L*d_e float32
 *
 * dtype 0 is 32-bit float, the only defined encoding.
 */

export const MAGIC = "DDSEQEMB";
export const VERSION = 1;
export const DTYPE_F32 = 0;

export interface EmbeddingRecord {
  id: string;
  /** row-major L x dE values */
  values: Float32Array;
  rows: number;
}

export function encodeEmbeddingFile(dE: number, records: EmbeddingRecord[]): Buffer {
  for (const rec of records) {
    if (rec.values.length !== rec.rows * dE) {
      throw new Error(`record ${rec.id}: ${rec.values.length} values != ${rec.rows}x${dE}`);
    }
  }
  const headerSize = 8 + 4 + 4 + 8 + 1;
  let total = headerSize;
  const encodedIds = records.map((r) => Buffer.from(r.id, "utf-8"));
  records.forEach((rec, i) => {
    total += 4 + encodedIds[i].length + 4 + rec.values.length * 4;
  });
  const buf = Buffer.alloc(total);
  const view = new DataView(buf.buffer, buf.byteOffset, buf.byteLength);
  buf.write(MAGIC, 0, "ascii");
  let off = 8;
  view.setUint32(off, VERSION, true); off += 4;
  view.setUint32(off, dE, true); off += 4;
  view.setBigUint64(off, BigInt(records.length), true); off += 8;
  view.setUint8(off, DTYPE_F32); off += 1;
  records.forEach((rec, i) => {
    view.setUint32(off, encodedIds[i].length, true); off += 4;
    encodedIds[i].copy(buf, off); off += encodedIds[i].length;
    view.setUint32(off, rec.rows, true); off += 4;
    for (let k = 0; k < rec.values.length; k++) {
      view.setFloat32(off, rec.values[k], true);
      off += 4;
    }
  });
  return buf;
}

export interface ParsedEmbeddingFile {
  dE: number;
  records: EmbeddingRecord[];
}

/** Reader used by the exporter's own tests to validate what it wrote. */
export function decodeEmbeddingFile(buf: Buffer): ParsedEmbeddingFile {
  if (buf.subarray(0, 8).toString("ascii") !== MAGIC) {
    throw new Error("bad embedding file magic");
  }
  const view = new DataView(buf.buffer, buf.byteOffset, buf.byteLength);
  let off = 8;
  const version = view.getUint32(off, true); off += 4;
  if (version !== VERSION) throw new Error(`unsupported version ${version}`);
  const dE = view.getUint32(off, true); off += 4;
  const count = Number(view.getBigUint64(off, true)); off += 8;
  const dtype = view.getUint8(off); off += 1;
  if (dtype !== DTYPE_F32) throw new Error(`unsupported dtype ${dtype}`);
  const records: EmbeddingRecord[] = [];
  for (let i = 0; i < count; i++) {
    const idLen = view.getUint32(off, true); off += 4;
    const id = buf.subarray(off, off + idLen).toString("utf-8"); off += idLen;
    const rows = view.getUint32(off, true); off += 4;
    const values = new Float32Array(rows * dE);
    for (let k = 0; k < values.length; k++) {
      values[k] = view.getFloat32(off, true);
      off += 4;
    }
    records.push({ id, rows, values });
  }
  return { dE, records };
}
