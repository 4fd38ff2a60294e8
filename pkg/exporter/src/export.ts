/**
 * Export job: run a frozen encoder over every manifest sequence and write
 * the binary embedding file the trainer reads.
 *
 * Antibody entries carry a '|' chain separator: each chain is embedded
 * independently and a zero row stands in at the separator position, so
 * the row count always equals the display-sequence length.
 */

import { writeFileSync } from "node:fs";

import { EmbeddingRecord, encodeEmbeddingFile } from "./format.js";
import { Manifest, ManifestSequence, readManifest } from "./manifest.js";
import { FrozenEncoder, loadBundle } from "./plm.js";

export interface ExportJob {
  manifestPath: string;
  model: string;
  outPath: string;
  batchSize: number;
}

export interface ExportSummary {
  model: string;
  dE: number;
  count: number;
  batches: number;
}

export class SequenceTooLongError extends Error {
  constructor(readonly ids: string[], maxLen: number) {
    super(`sequences exceed ${maxLen} residues: ${ids.join(", ")}`);
  }
}

export function embedSequence(encoder: FrozenEncoder,
                              entry: ManifestSequence): EmbeddingRecord {
  const dE = encoder.dModel;
  const chains = entry.seq.split("|");
  const rows = entry.seq.length;
  const values = new Float32Array(rows * dE); // separator rows stay zero
  let offset = 0;
  for (let c = 0; c < chains.length; c++) {
    if (c > 0) offset += 1; // the '|' position
    const perResidue = encoder.embedChain(chains[c]);
    if (perResidue.length !== chains[c].length) {
      throw new Error(
        `encoder returned ${perResidue.length} rows for a ` +
        `${chains[c].length}-residue chain (marker stripping broken)`);
    }
    for (const row of perResidue) {
      for (let j = 0; j < dE; j++) values[offset * dE + j] = row[j];
      offset += 1;
    }
  }
  return { id: entry.id, rows, values };
}

export function exportEmbeddings(job: ExportJob,
                                 log?: (line: string) => void): ExportSummary {
  const manifest: Manifest = readManifest(job.manifestPath);
  const encoder = new FrozenEncoder(loadBundle(job.model));
  const tooLong = manifest.sequences
    .filter((s) => s.seq.length > manifest.maxLen)
    .map((s) => s.id);
  if (tooLong.length) {
    throw new SequenceTooLongError(tooLong, manifest.maxLen);
  }
  const batchSize = Math.max(1, job.batchSize);
  const records: EmbeddingRecord[] = [];
  let batches = 0;
  for (let start = 0; start < manifest.sequences.length; start += batchSize) {
    const batch = manifest.sequences.slice(start, start + batchSize);
    for (const entry of batch) {
      records.push(embedSequence(encoder, entry));
    }
    batches += 1;
    log?.(`batch ${batches}: ${records.length}/${manifest.sequences.length} sequences`);
  }
  writeFileSync(job.outPath, encodeEmbeddingFile(encoder.dModel, records));
  return {
    model: job.model,
    dE: encoder.dModel,
    count: records.length,
    batches,
  };
}
