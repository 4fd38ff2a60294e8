/**
 * Frozen protein language models.
 *
 * A model is a transformer encoder with fixed (never-trained) weights.
 * Two sources are supported: the built-in registry of deterministic tiny
 * models (weights derived from a seeded PRNG, stable across platforms)
 * and JSON weight bundles on disk. Large public checkpoints are not
 * bundled; asking for an unknown identifier raises
 * CheckpointUnavailableError.
 *
 * The encoder emits one contextual vector per input token, including the
 * beginning/end marker tokens; callers strip those marker rows.
 */

import { existsSync, readFileSync } from "node:fs";

export class CheckpointUnavailableError extends Error {}

export const AMINO_ACIDS = "ACDEFGHIKLMNPQRSTVWY";
const X_INDEX = 20;
export const CLS_INDEX = 21;
export const EOS_INDEX = 22;
export const VOCAB_SIZE = 23;

export interface LayerWeights {
  wq: number[][];
  wk: number[][];
  wv: number[][];
  wo: number[][];
  ln1g: number[];
  ln1b: number[];
  w1: number[][];
  b1: number[];
  w2: number[][];
  b2: number[];
  ln2g: number[];
  ln2b: number[];
}

export interface WeightsBundle {
  name: string;
  dModel: number;
  nHeads: number;
  dFf: number;
  tokEmbed: number[][];
  layers: LayerWeights[];
}

// --- deterministic weight generation (splitmix64) -------------------------

function splitmix64(seed: bigint): () => number {
  let state = seed & 0xffffffffffffffffn;
  return () => {
    state = (state + 0x9e3779b97f4a7c15n) & 0xffffffffffffffffn;
    let z = state;
    z = ((z ^ (z >> 30n)) * 0xbf58476d1ce4e5b9n) & 0xffffffffffffffffn;
    z = ((z ^ (z >> 27n)) * 0x94d049bb133111ebn) & 0xffffffffffffffffn;
    z = z ^ (z >> 31n);
    return Number(z >> 11n) / 2 ** 53; // uniform [0, 1)
  };
}

function matrix(rows: number, cols: number, next: () => number,
                scale: number): number[][] {
  const out: number[][] = [];
  for (let i = 0; i < rows; i++) {
    const row = new Array<number>(cols);
    for (let j = 0; j < cols; j++) row[j] = (next() * 2 - 1) * scale;
    out.push(row);
  }
  return out;
}

export function generateBundle(name: string, dModel: number, nHeads: number,
                               nLayers: number, seed: bigint): WeightsBundle {
  const next = splitmix64(seed);
  const dFf = 2 * dModel;
  const scale = Math.sqrt(6 / (2 * dModel));
  const layers: LayerWeights[] = [];
  for (let l = 0; l < nLayers; l++) {
    layers.push({
      wq: matrix(dModel, dModel, next, scale),
      wk: matrix(dModel, dModel, next, scale),
      wv: matrix(dModel, dModel, next, scale),
      wo: matrix(dModel, dModel, next, scale),
      ln1g: new Array(dModel).fill(1),
      ln1b: new Array(dModel).fill(0),
      w1: matrix(dModel, dFf, next, Math.sqrt(6 / (dModel + dFf))),
      b1: new Array(dFf).fill(0),
      w2: matrix(dFf, dModel, next, Math.sqrt(6 / (dModel + dFf))),
      b2: new Array(dModel).fill(0),
      ln2g: new Array(dModel).fill(1),
      ln2b: new Array(dModel).fill(0),
    });
  }
  return {
    name,
    dModel,
    nHeads,
    dFf,
    tokEmbed: matrix(VOCAB_SIZE, dModel, next, 1.0),
    layers,
  };
}

const REGISTRY: Record<string, () => WeightsBundle> = {
  "frozen-tiny-d16": () => generateBundle("frozen-tiny-d16", 16, 2, 1, 101n),
  "frozen-tiny-d32": () => generateBundle("frozen-tiny-d32", 32, 4, 2, 202n),
};

export function availableModels(): string[] {
  return Object.keys(REGISTRY);
}

export function loadBundle(identifier: string): WeightsBundle {
  const fromRegistry = REGISTRY[identifier];
  if (fromRegistry) return fromRegistry();
  if (identifier.endsWith(".json") && existsSync(identifier)) {
    const parsed = JSON.parse(readFileSync(identifier, "utf-8"));
    for (const key of ["name", "dModel", "nHeads", "dFf", "tokEmbed", "layers"]) {
      if (!(key in parsed)) {
        throw new Error(`weights bundle missing '${key}': ${identifier}`);
      }
    }
    return parsed as WeightsBundle;
  }
  throw new CheckpointUnavailableError(
    `checkpoint unavailable: '${identifier}' (built-in models: ` +
    `${availableModels().join(", ")}; or pass a .json weights bundle)`);
}

// --- forward pass ----------------------------------------------------------

function layerNorm(row: number[], gamma: number[], beta: number[]): number[] {
  const d = row.length;
  let mean = 0;
  for (const v of row) mean += v;
  mean /= d;
  let variance = 0;
  for (const v of row) variance += (v - mean) ** 2;
  variance /= d;
  const inv = 1 / Math.sqrt(variance + 1e-5);
  return row.map((v, j) => (v - mean) * inv * gamma[j] + beta[j]);
}

function matmulRow(row: number[], w: number[][]): number[] {
  const cols = w[0].length;
  const out = new Array<number>(cols).fill(0);
  for (let k = 0; k < row.length; k++) {
    const x = row[k];
    if (x === 0) continue;
    const wk = w[k];
    for (let j = 0; j < cols; j++) out[j] += x * wk[j];
  }
  return out;
}

function attention(x: number[][], layer: LayerWeights, nHeads: number): number[][] {
  const L = x.length;
  const d = x[0].length;
  const dk = d / nHeads;
  const q = x.map((r) => matmulRow(r, layer.wq));
  const k = x.map((r) => matmulRow(r, layer.wk));
  const v = x.map((r) => matmulRow(r, layer.wv));
  const mixed: number[][] = x.map(() => new Array<number>(d).fill(0));
  for (let h = 0; h < nHeads; h++) {
    const base = h * dk;
    for (let i = 0; i < L; i++) {
      const scores = new Array<number>(L);
      let maxScore = -Infinity;
      for (let j = 0; j < L; j++) {
        let s = 0;
        for (let t = 0; t < dk; t++) s += q[i][base + t] * k[j][base + t];
        s /= Math.sqrt(dk);
        scores[j] = s;
        if (s > maxScore) maxScore = s;
      }
      let z = 0;
      for (let j = 0; j < L; j++) {
        scores[j] = Math.exp(scores[j] - maxScore);
        z += scores[j];
      }
      for (let j = 0; j < L; j++) {
        const a = scores[j] / z;
        for (let t = 0; t < dk; t++) mixed[i][base + t] += a * v[j][base + t];
      }
    }
  }
  return mixed.map((r) => matmulRow(r, layer.wo));
}

function positionalEncoding(pos: number, d: number): number[] {
  const enc = new Array<number>(d);
  for (let j = 0; j < d; j += 2) {
    const angle = pos / 10000 ** (j / d);
    enc[j] = Math.sin(angle);
    if (j + 1 < d) enc[j + 1] = Math.cos(angle);
  }
  return enc;
}

export class FrozenEncoder {
  constructor(readonly bundle: WeightsBundle) {
    if (bundle.dModel % bundle.nHeads !== 0) {
      throw new Error(`d_model ${bundle.dModel} not divisible by heads`);
    }
  }

  get dModel(): number {
    return this.bundle.dModel;
  }

  tokenize(chain: string): number[] {
    const ids = [CLS_INDEX];
    for (const c of chain) {
      const idx = AMINO_ACIDS.indexOf(c);
      ids.push(idx >= 0 ? idx : X_INDEX);
    }
    ids.push(EOS_INDEX);
    return ids;
  }

  /**
   * Per-residue embeddings for one chain: the encoder runs over
   * CLS + residues + EOS, and the marker rows are stripped so the result
   * has exactly one row per residue.
   */
  embedChain(chain: string): number[][] {
    const tokens = this.tokenize(chain);
    const { tokEmbed, layers, nHeads } = this.bundle;
    let x = tokens.map((t, pos) => {
      const pe = positionalEncoding(pos, this.bundle.dModel);
      return tokEmbed[t].map((v, j) => v + pe[j]);
    });
    for (const layer of layers) {
      const attnOut = attention(x, layer, nHeads);
      x = x.map((row, i) =>
        layerNorm(row.map((v, j) => v + attnOut[i][j]), layer.ln1g, layer.ln1b));
      const ffnOut = x.map((row) => {
        const hidden = matmulRow(row, layer.w1).map((v, j) =>
          Math.max(0, v + layer.b1[j]));
        return matmulRow(hidden, layer.w2).map((v, j) => v + layer.b2[j]);
      });
      x = x.map((row, i) =>
        layerNorm(row.map((v, j) => v + ffnOut[i][j]), layer.ln2g, layer.ln2b));
    }
    return x.slice(1, x.length - 1);
  }
}
