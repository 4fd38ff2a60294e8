"""Shared synthetic-corpus builders for the training/CLI/acceptance tests."""

import csv

import numpy as np

from abaffinity import dataio, embedding

AA = "ACDEFGHIKLMNPQRSTVWY"


def random_seq(rng, n):
    return "".join(rng.choice(list(AA), size=n))


def synth_corpus(n, seed=0, shared_pairs=0, len_range=(8, 16)):
    """Rows for n independent pairs plus optional antigen-sharing pairs."""
    rng = np.random.default_rng(seed)
    lo, hi = len_range

    def row(antigen=None):
        return {
            "antigen_seq": antigen or random_seq(rng, rng.integers(lo, hi + 1)),
            "heavy_seq": random_seq(rng, rng.integers(lo, hi + 1)),
            "light_seq": random_seq(rng, rng.integers(lo, hi + 1)),
            "kd_nm": float(10 ** rng.uniform(-2, 5)),
        }

    rows = [row() for _ in range(n)]
    for _ in range(shared_pairs):
        shared = random_seq(rng, rng.integers(lo, hi + 1))
        rows.extend(row(shared) for _ in range(2))
    return rows


def write_corpus_csv(path, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(
            fh, fieldnames=["antigen_seq", "heavy_seq", "light_seq", "kd_nm"])
        writer.writeheader()
        writer.writerows(rows)


def make_dataset(n=40, seed=0, split_seed=7, **corpus_kwargs):
    rows = synth_corpus(n, seed=seed, **corpus_kwargs)
    ds, dropped = dataio.preprocess_rows(rows, seed=split_seed)
    return ds, dropped


def make_store(ds, d_e=16, seed=0):
    return embedding.build_synthetic_store(
        ds.sequences, dataio.tokenize_display, d_e=d_e, seed=seed)
