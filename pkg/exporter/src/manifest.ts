/** Dataset manifest reader (the trainer's preprocess output). */

import { readFileSync } from "node:fs";

export interface ManifestSequence {
  id: string;
  kind: "antigen" | "antibody";
  /** cleaned display sequence; antibodies carry '|' at the chain boundary */
  seq: string;
}

export interface Manifest {
  sequences: ManifestSequence[];
  maxLen: number;
}

export function readManifest(path: string): Manifest {
  let raw: string;
  try {
    raw = readFileSync(path, "utf-8");
  } catch {
    throw new Error(`cannot read manifest: ${path}`);
  }
  const parsed = JSON.parse(raw);
  if (!Array.isArray(parsed.sequences)) {
    throw new Error(`manifest has no sequence table: ${path}`);
  }
  const seen = new Set<string>();
  for (const entry of parsed.sequences) {
    if (typeof entry.id !== "string" || typeof entry.seq !== "string") {
      throw new Error("malformed sequence entry in manifest");
    }
    if (seen.has(entry.id)) {
      throw new Error(`duplicate sequence id in manifest: ${entry.id}`);
    }
    seen.add(entry.id);
  }
  return {
    sequences: parsed.sequences,
    maxLen: typeof parsed.max_len === "number" ? parsed.max_len : 512,
  };
}
