"""Dataset ingestion and preprocessing.

Pipeline: CSV rows -> kd parsing and range filtering -> sequence cleaning
-> pKd transform -> leakage-safe grouped split -> z-score standardization
(train statistics only) -> tokenization -> binary record files plus a JSON
manifest.
"""

import csv
import hashlib
import json
import math
import struct
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .errors import (
    DegenerateScalerError,
    DomainError,
    FormatError,
    InputError,
    RecordRejectedError,
    SplitInfeasibleError,
    ZeroRetainedError,
)

# vocabulary: PAD, the 20 canonical amino acids in alphabetical order,
# the placeholder X, and the chain separator
AMINO_ACIDS = "ACDEFGHIKLMNPQRSTVWY"
PAD_ID = 0
X_ID = 21
SEP_ID = 22
VOCAB: Dict[str, int] = {"<pad>": PAD_ID}
VOCAB.update({aa: i + 1 for i, aa in enumerate(AMINO_ACIDS)})
VOCAB.update({"X": X_ID, "<sep>": SEP_ID})
_ID_TO_CHAR = {i + 1: aa for i, aa in enumerate(AMINO_ACIDS)}
_ID_TO_CHAR[X_ID] = "X"
_ID_TO_CHAR[SEP_ID] = "|"  # display form of the chain separator

MAX_LEN = 512
KD_MIN_NM = 1e-3
KD_MAX_NM = 1e9
DEFAULT_FRACTIONS = (0.8, 0.1, 0.1)
DEFAULT_COLUMNS = {
    "antigen": "antigen_seq",
    "heavy": "heavy_seq",
    "light": "light_seq",
    "kd": "kd_nm",
}

_RECORDS_MAGIC = b"DDSEQREC"
_RECORDS_VERSION = 1


def clean_sequence(raw: str) -> str:
    """Uppercase, drop whitespace, map non-canonical letters to 'X'."""
    stripped = "".join(raw.split()).upper()
    cleaned = "".join(c if c in AMINO_ACIDS else "X" for c in stripped)
    if not cleaned:
        raise RecordRejectedError("sequence empty after cleaning")
    return cleaned


def kd_to_pkd(kd_nm: float) -> float:
    """pKd = 9 - log10(Kd in nM); higher means stronger binding."""
    if kd_nm <= 0:
        raise DomainError(f"kd must be positive, got {kd_nm}")
    return 9.0 - math.log10(kd_nm)


def pkd_to_kd(pkd: float) -> float:
    return 10.0 ** (9.0 - pkd)


def kd_in_range(kd_nm: float) -> bool:
    return KD_MIN_NM < kd_nm < KD_MAX_NM


def tokenize(seq: str, max_len: int = MAX_LEN) -> List[int]:
    """Map a cleaned sequence to token ids, truncating to the prefix."""
    try:
        ids = [VOCAB[c] for c in seq]
    except KeyError as exc:  # cleaning guarantees this never happens
        raise RecordRejectedError(f"character outside vocabulary: {exc}") from exc
    return ids[:max_len]


def detokenize(tokens: Sequence[int]) -> str:
    """Inverse of tokenize; the separator renders as '|'."""
    return "".join(_ID_TO_CHAR[t] for t in tokens)


def tokenize_display(seq: str) -> List[int]:
    """Tokens for a manifest display sequence ('|' marks the separator)."""
    return [SEP_ID if c == "|" else VOCAB[c] for c in seq]


def combine_antibody(heavy: Sequence[int], light: Sequence[int],
                     max_len: int = MAX_LEN) -> List[int]:
    """heavy ++ SEP ++ light, truncated to max_len."""
    if not heavy or not light:
        raise RecordRejectedError("antibody chain empty")
    return (list(heavy) + [SEP_ID] + list(light))[:max_len]


@dataclass
class Scaler:
    """z-score standardizer fit on the training split only."""

    mean: float
    std: float

    def apply(self, x):
        return (np.asarray(x) - self.mean) / self.std

    def invert(self, z):
        return np.asarray(z) * self.std + self.mean

    def to_dict(self) -> dict:
        return {"mean": self.mean, "std": self.std}

    @classmethod
    def from_dict(cls, d: dict) -> "Scaler":
        return cls(mean=float(d["mean"]), std=float(d["std"]))


def fit_scaler(train_pkds: Sequence[float]) -> Scaler:
    """Population mean/std of the training pKds."""
    if len(train_pkds) < 2:
        raise DegenerateScalerError("need at least 2 values to fit a scaler")
    arr = np.asarray(train_pkds, dtype=np.float64)
    std = float(arr.std())
    if std == 0.0:
        raise DegenerateScalerError("training pKd values are constant")
    return Scaler(mean=float(arr.mean()), std=std)


@dataclass
class AffinityRecord:
    """One raw antigen-antibody pair with its measured Kd in nanomolar."""

    antigen_seq: str
    heavy_seq: str
    light_seq: str
    kd_nm: float


def parse_rows(rows: Iterable[dict], columns: Optional[Dict[str, str]] = None
               ) -> Tuple[List[AffinityRecord], Counter]:
    """Raw CSV rows to AffinityRecords; rows without a numeric kd are dropped."""
    columns = columns or DEFAULT_COLUMNS
    records: List[AffinityRecord] = []
    dropped: Counter = Counter()
    for row in rows:
        raw_kd = row.get(columns["kd"])
        if isinstance(raw_kd, str):
            raw_kd = raw_kd.strip()
        try:
            kd = float(raw_kd)
        except (TypeError, ValueError):
            dropped["missing_or_invalid_kd"] += 1
            continue
        if not math.isfinite(kd):
            dropped["missing_or_invalid_kd"] += 1
            continue
        records.append(AffinityRecord(
            antigen_seq=row.get(columns["antigen"]) or "",
            heavy_seq=row.get(columns["heavy"]) or "",
            light_seq=row.get(columns["light"]) or "",
            kd_nm=kd,
        ))
    return records, dropped


def filter_kd(records: Iterable[AffinityRecord]) -> List[AffinityRecord]:
    """Keep records inside the biologically meaningful range (strict)."""
    return [r for r in records if kd_in_range(r.kd_nm)]


@dataclass
class CleanRecord:
    """One tokenized antigen-antibody pair with its standardized target."""

    antigen_id: str
    antibody_id: str
    antigen_tokens: List[int]
    antibody_tokens: List[int]
    pkd: float
    pkd_std: float


@dataclass
class SplitDataset:
    train: List[CleanRecord]
    val: List[CleanRecord]
    test: List[CleanRecord]
    seed: int
    fractions: Tuple[float, float, float]
    scaler: Scaler
    # id -> (kind, display sequence); antibody sequences carry '|' at the
    # chain boundary
    sequences: Dict[str, Tuple[str, str]] = field(default_factory=dict)

    def split(self, name: str) -> List[CleanRecord]:
        try:
            return {"train": self.train, "val": self.val, "test": self.test}[name]
        except KeyError:
            raise InputError(f"unknown split '{name}'") from None


def sequence_id(kind: str, display_seq: str) -> str:
    prefix = {"antigen": "ag", "antibody": "ab"}[kind]
    digest = hashlib.sha256(display_seq.encode("ascii")).hexdigest()[:12]
    return f"{prefix}{digest}"


@dataclass
class _Prepared:
    """Cleaned, tokenized record before split assignment."""

    antigen_display: str
    antibody_display: str
    antigen_tokens: List[int]
    antibody_tokens: List[int]
    pkd: float


def _prepare_rows(rows: Iterable[dict], columns: Dict[str, str]
                  ) -> Tuple[List[_Prepared], Counter]:
    parsed, dropped = parse_rows(rows, columns)
    retained = filter_kd(parsed)
    dropped["kd_out_of_range"] += len(parsed) - len(retained)
    prepared: List[_Prepared] = []
    for rec in retained:
        try:
            antigen = clean_sequence(rec.antigen_seq)
            heavy = clean_sequence(rec.heavy_seq)
            light = clean_sequence(rec.light_seq)
        except RecordRejectedError:
            dropped["empty_sequence"] += 1
            continue
        antigen_tokens = tokenize(antigen)
        antibody_tokens = combine_antibody(tokenize(heavy), tokenize(light))
        prepared.append(_Prepared(
            antigen_display=detokenize(antigen_tokens),
            antibody_display=detokenize(antibody_tokens),
            antigen_tokens=antigen_tokens,
            antibody_tokens=antibody_tokens,
            pkd=kd_to_pkd(rec.kd_nm),
        ))
    return prepared, +dropped


class _UnionFind:
    def __init__(self):
        self.parent: Dict[str, str] = {}

    def find(self, x: str) -> str:
        self.parent.setdefault(x, x)
        root = x
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[x] != root:  # path compression
            self.parent[x], x = root, self.parent[x]
        return root

    def union(self, a: str, b: str) -> None:
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            self.parent[rb] = ra


def group_split(records: List[_Prepared], seed: int,
                fractions: Tuple[float, float, float] = DEFAULT_FRACTIONS
                ) -> Tuple[List[_Prepared], List[_Prepared], List[_Prepared]]:
    """Assign whole antigen<->antibody sharing components to splits.

    Records sharing an antigen or an antibody sequence always land in the
    same split; components are shuffled deterministically under `seed` and
    greedily fill train, then val, then test toward the target counts.
    """
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise SplitInfeasibleError(f"fractions must sum to 1, got {fractions}")
    uf = _UnionFind()
    for r in records:
        uf.union("A:" + r.antigen_display, "B:" + r.antibody_display)
    components: Dict[str, List[_Prepared]] = {}
    order: List[str] = []
    for r in records:
        root = uf.find("A:" + r.antigen_display)
        if root not in components:
            components[root] = []
            order.append(root)
        components[root].append(r)
    if len(order) < 3:
        raise SplitInfeasibleError(
            f"need at least 3 independent groups for a 3-way split, "
            f"got {len(order)}")

    rng = np.random.default_rng(seed)
    perm = rng.permutation(len(order))
    total = len(records)
    targets = [fractions[0] * total, fractions[1] * total, fractions[2] * total]
    splits: Tuple[List[_Prepared], ...] = ([], [], [])
    counts = [0, 0, 0]
    bucket = 0
    for idx in perm:
        comp = components[order[idx]]
        while bucket < 2 and counts[bucket] >= targets[bucket]:
            bucket += 1
        splits[bucket].extend(comp)
        counts[bucket] += len(comp)
    return splits


def preprocess_rows(rows: Iterable[dict], seed: int,
                    fractions: Tuple[float, float, float] = DEFAULT_FRACTIONS,
                    columns: Optional[Dict[str, str]] = None
                    ) -> Tuple[SplitDataset, Counter]:
    """Full preprocessing pipeline over parsed CSV rows."""
    columns = columns or DEFAULT_COLUMNS
    prepared, dropped = _prepare_rows(rows, columns)
    if not prepared:
        raise ZeroRetainedError(
            f"no records retained (dropped: {dict(dropped) or 'none'})")
    train_p, val_p, test_p = group_split(prepared, seed, fractions)
    scaler = fit_scaler([r.pkd for r in train_p])

    sequences: Dict[str, Tuple[str, str]] = {}

    def finalize(recs: List[_Prepared]) -> List[CleanRecord]:
        out = []
        for r in recs:
            ag_id = sequence_id("antigen", r.antigen_display)
            ab_id = sequence_id("antibody", r.antibody_display)
            sequences[ag_id] = ("antigen", r.antigen_display)
            sequences[ab_id] = ("antibody", r.antibody_display)
            out.append(CleanRecord(
                antigen_id=ag_id,
                antibody_id=ab_id,
                antigen_tokens=r.antigen_tokens,
                antibody_tokens=r.antibody_tokens,
                pkd=r.pkd,
                pkd_std=float(scaler.apply(r.pkd)),
            ))
        return out

    ds = SplitDataset(
        train=finalize(train_p),
        val=finalize(val_p),
        test=finalize(test_p),
        seed=seed,
        fractions=tuple(fractions),
        scaler=scaler,
        sequences=sequences,
    )
    return ds, dropped


def read_csv_rows(path, columns: Optional[Dict[str, str]] = None) -> List[dict]:
    columns = columns or DEFAULT_COLUMNS
    path = Path(path)
    if not path.is_file():
        raise InputError(f"cannot read CSV file: {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise InputError(f"CSV has no header row: {path}")
        missing = [c for c in columns.values() if c not in reader.fieldnames]
        if missing:
            raise InputError(f"CSV missing required columns: {missing}")
        return list(reader)


def preprocess_csv(path, seed: int,
                   fractions: Tuple[float, float, float] = DEFAULT_FRACTIONS,
                   columns: Optional[Dict[str, str]] = None
                   ) -> Tuple[SplitDataset, Counter]:
    return preprocess_rows(read_csv_rows(path, columns), seed, fractions, columns)


# ---------------------------------------------------------------------------
# on-disk dataset format: three length-prefixed binary record files plus a
# JSON manifest (all multi-byte values little-endian)
# ---------------------------------------------------------------------------

def _pack_record(rec: CleanRecord) -> bytes:
    ag = rec.antigen_id.encode("ascii")
    ab = rec.antibody_id.encode("ascii")
    payload = struct.pack("<H", len(ag)) + ag
    payload += struct.pack("<H", len(ab)) + ab
    payload += struct.pack("<I", len(rec.antigen_tokens))
    payload += struct.pack(f"<{len(rec.antigen_tokens)}H", *rec.antigen_tokens)
    payload += struct.pack("<I", len(rec.antibody_tokens))
    payload += struct.pack(f"<{len(rec.antibody_tokens)}H", *rec.antibody_tokens)
    payload += struct.pack("<dd", rec.pkd, rec.pkd_std)
    return struct.pack("<I", len(payload)) + payload


def _unpack_record(payload: bytes) -> CleanRecord:
    off = 0

    def take(fmt):
        nonlocal off
        size = struct.calcsize(fmt)
        vals = struct.unpack_from(fmt, payload, off)
        off += size
        return vals

    (ag_len,) = take("<H")
    ag_id = payload[off:off + ag_len].decode("ascii")
    off += ag_len
    (ab_len,) = take("<H")
    ab_id = payload[off:off + ab_len].decode("ascii")
    off += ab_len
    (n_ag,) = take("<I")
    ag_tokens = list(take(f"<{n_ag}H"))
    (n_ab,) = take("<I")
    ab_tokens = list(take(f"<{n_ab}H"))
    pkd, pkd_std = take("<dd")
    return CleanRecord(ag_id, ab_id, ag_tokens, ab_tokens, pkd, pkd_std)


def write_records_file(path, records: Sequence[CleanRecord]) -> None:
    with open(path, "wb") as fh:
        fh.write(_RECORDS_MAGIC)
        fh.write(struct.pack("<IQ", _RECORDS_VERSION, len(records)))
        for rec in records:
            fh.write(_pack_record(rec))


def read_records_file(path) -> List[CleanRecord]:
    path = Path(path)
    if not path.is_file():
        raise InputError(f"missing records file: {path}")
    data = path.read_bytes()
    if data[:8] != _RECORDS_MAGIC:
        raise FormatError(f"bad records magic in {path}")
    version, count = struct.unpack_from("<IQ", data, 8)
    if version != _RECORDS_VERSION:
        raise FormatError(f"unsupported records version {version}")
    off = 20
    records = []
    for _ in range(count):
        if off + 4 > len(data):
            raise FormatError(f"truncated records file: {path}")
        (length,) = struct.unpack_from("<I", data, off)
        off += 4
        if off + length > len(data):
            raise FormatError(f"truncated record payload: {path}")
        records.append(_unpack_record(data[off:off + length]))
        off += length
    return records


def write_dataset(dirpath, ds: SplitDataset, dropped: Counter) -> None:
    dirpath = Path(dirpath)
    dirpath.mkdir(parents=True, exist_ok=True)
    for name in ("train", "val", "test"):
        write_records_file(dirpath / f"{name}.records", ds.split(name))
    manifest = {
        "format_version": 1,
        "seed": ds.seed,
        "fractions": list(ds.fractions),
        "scaler": ds.scaler.to_dict(),
        "vocab": VOCAB,
        "max_len": MAX_LEN,
        "counts": {name: len(ds.split(name)) for name in ("train", "val", "test")},
        "dropped": dict(sorted(dropped.items())),
        "sequences": [
            {"id": sid, "kind": kind, "seq": seq}
            for sid, (kind, seq) in sorted(ds.sequences.items())
        ],
    }
    with open(dirpath / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_dataset(dirpath) -> SplitDataset:
    dirpath = Path(dirpath)
    manifest_path = dirpath / "manifest.json"
    if not manifest_path.is_file():
        raise InputError(f"missing dataset manifest: {manifest_path}")
    with open(manifest_path, encoding="utf-8") as fh:
        manifest = json.load(fh)
    if manifest.get("vocab") != VOCAB:
        raise FormatError("dataset vocabulary does not match this build")
    ds = SplitDataset(
        train=read_records_file(dirpath / "train.records"),
        val=read_records_file(dirpath / "val.records"),
        test=read_records_file(dirpath / "test.records"),
        seed=int(manifest["seed"]),
        fractions=tuple(manifest["fractions"]),
        scaler=Scaler.from_dict(manifest["scaler"]),
        sequences={e["id"]: (e["kind"], e["seq"]) for e in manifest["sequences"]},
    )
    return ds


def unique_sequence_ids(ds: SplitDataset) -> List[str]:
    return sorted(ds.sequences)
