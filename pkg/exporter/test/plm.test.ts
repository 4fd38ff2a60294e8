import { describe, expect, it } from "vitest";

import {
  CheckpointUnavailableError,
  FrozenEncoder,
  generateBundle,
  loadBundle,
} from "../src/plm.js";

describe("frozen encoder", () => {
  it("emits one row per residue with marker tokens stripped", () => {
    const enc = new FrozenEncoder(loadBundle("frozen-tiny-d16"));
    const rows = enc.embedChain("ACDY");
    expect(rows.length).toBe(4);
    expect(rows[0].length).toBe(16);
  });

  it("is deterministic", () => {
    const a = new FrozenEncoder(loadBundle("frozen-tiny-d16")).embedChain("ACWWK");
    const b = new FrozenEncoder(loadBundle("frozen-tiny-d16")).embedChain("ACWWK");
    expect(a).toEqual(b);
  });

  it("is contextual and position aware", () => {
    const enc = new FrozenEncoder(loadBundle("frozen-tiny-d16"));
    const aa = enc.embedChain("AA");
    // same residue, different positions: contextual rows differ
    const delta = Math.max(...aa[0].map((v, j) => Math.abs(v - aa[1][j])));
    expect(delta).toBeGreaterThan(1e-6);
    // same residue in different neighborhoods differs too
    const inOther = enc.embedChain("CAC");
    const delta2 = Math.max(...aa[0].map((v, j) => Math.abs(v - inOther[1][j])));
    expect(delta2).toBeGreaterThan(1e-6);
  });

  it("maps unknown residues to the placeholder token", () => {
    const enc = new FrozenEncoder(loadBundle("frozen-tiny-d16"));
    expect(enc.embedChain("XZB")).toEqual(enc.embedChain("XXX"));
  });

  it("produces finite values on long chains", () => {
    const enc = new FrozenEncoder(loadBundle("frozen-tiny-d32"));
    const rows = enc.embedChain("ACDEFGHIKLMNPQRSTVWY".repeat(25)); // 500
    expect(rows.length).toBe(500);
    for (const row of rows) {
      for (const v of row) expect(Number.isFinite(v)).toBe(true);
    }
  });

  it("rejects unknown checkpoints with a clear error", () => {
    expect(() => loadBundle("esm2_t33_650M_UR50D"))
      .toThrow(CheckpointUnavailableError);
    expect(() => loadBundle("esm2_t33_650M_UR50D"))
      .toThrow(/checkpoint unavailable/);
  });

  it("registry bundles differ by seed and width", () => {
    const small = generateBundle("a", 16, 2, 1, 1n);
    const other = generateBundle("b", 16, 2, 1, 2n);
    expect(small.tokEmbed[0][0]).not.toBe(other.tokEmbed[0][0]);
  });
});
