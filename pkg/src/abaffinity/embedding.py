"""Per-residue embedding sources.

The model consumes frozen embeddings keyed by sequence id, either read
from the binary embedding file format or synthesized deterministically
for desk-scale runs. The file layout (little-endian throughout):

    header:  magic "DDSEQEMB" | u32 version | u32 d_e | u64 count | u8 dtype
    record:  u32 id_length | id bytes | u32 L | L*d_e float32 values

dtype 0 is 32-bit float (the only defined encoding).
"""

import struct
from pathlib import Path
from typing import Dict, Iterable, List, Sequence, Tuple

import numpy as np

from .errors import FormatError, InputError, MissingEmbeddingError, NonFiniteError
from .dataio import PAD_ID

MAGIC = b"DDSEQEMB"
VERSION = 1
DTYPE_F32 = 0


def synthetic_embed(tokens: Sequence[int], d_e: int, seed: int) -> np.ndarray:
    """Deterministic per-token embedding in [-1, 1); PAD rows are zero.

    Each (token, dimension) cell is a splitmix64-style hash of
    (seed, token_id, dim), so identical tokens always share a vector and
    the result is a pure function of its arguments.
    """
    if d_e < 1:
        raise ValueError(f"d_e must be >= 1, got {d_e}")
    toks = np.asarray(tokens, dtype=np.uint64).reshape(-1, 1)
    dims = np.arange(d_e, dtype=np.uint64).reshape(1, -1)
    z = (np.uint64(seed & 0xFFFFFFFFFFFFFFFF)
         + toks * np.uint64(0x9E3779B97F4A7C15)
         + dims * np.uint64(0xBF58476D1CE4E5B9))
    with np.errstate(over="ignore"):
        z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
        z = z ^ (z >> np.uint64(31))
    uniform = (z >> np.uint64(11)).astype(np.float64) * (2.0 ** -53)
    values = (uniform * 2.0 - 1.0).astype(np.float32)
    values[np.asarray(tokens) == PAD_ID] = 0.0
    return values


def write_embedding_file(path, records: Iterable[Tuple[str, np.ndarray]]) -> None:
    """Write (seq_id, L x d_e float array) records; d_e must be uniform."""
    records = list(records)
    d_e = None
    for seq_id, values in records:
        values = np.asarray(values)
        if values.ndim != 2:
            raise FormatError(f"embedding for {seq_id} is not 2-d")
        if d_e is None:
            d_e = values.shape[1]
        elif values.shape[1] != d_e:
            raise FormatError(
                f"inconsistent embedding width: {values.shape[1]} != {d_e} "
                f"(record {seq_id})")
    if d_e is None:
        d_e = 0
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IIQB", VERSION, d_e, len(records), DTYPE_F32))
        for seq_id, values in records:
            encoded = seq_id.encode("utf-8")
            arr = np.ascontiguousarray(values, dtype="<f4")
            fh.write(struct.pack("<I", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<I", arr.shape[0]))
            fh.write(arr.tobytes())


class EmbeddingStore:
    """Immutable keyed store of per-residue embeddings."""

    def __init__(self, d_e: int, matrices: Dict[str, np.ndarray]):
        self.d_e = d_e
        self._matrices = matrices

    def __contains__(self, seq_id: str) -> bool:
        return seq_id in self._matrices

    def __len__(self) -> int:
        return len(self._matrices)

    def ids(self) -> List[str]:
        return list(self._matrices)

    def lookup(self, seq_id: str) -> np.ndarray:
        try:
            return self._matrices[seq_id]
        except KeyError:
            raise MissingEmbeddingError(
                f"no embedding for sequence id '{seq_id}'") from None

    def missing_ids(self, seq_ids: Iterable[str]) -> List[str]:
        return [s for s in seq_ids if s not in self._matrices]


def read_embedding_file(path) -> EmbeddingStore:
    """Load and validate an embedding file; entries must be finite."""
    path = Path(path)
    if not path.is_file():
        raise InputError(f"missing embedding file: {path}")
    data = path.read_bytes()
    if data[:8] != MAGIC:
        raise FormatError(f"bad embedding file magic in {path}")
    version, d_e, count, dtype = struct.unpack_from("<IIQB", data, 8)
    if version != VERSION:
        raise FormatError(f"unsupported embedding file version {version}")
    if dtype != DTYPE_F32:
        raise FormatError(f"unsupported embedding dtype code {dtype}")
    if count and d_e <= 0:
        raise FormatError(f"non-positive embedding width {d_e}")
    off = 8 + struct.calcsize("<IIQB")
    matrices: Dict[str, np.ndarray] = {}
    for _ in range(count):
        (id_len,) = struct.unpack_from("<I", data, off)
        off += 4
        seq_id = data[off:off + id_len].decode("utf-8")
        off += id_len
        (length,) = struct.unpack_from("<I", data, off)
        off += 4
        nbytes = length * d_e * 4
        if off + nbytes > len(data):
            raise FormatError(f"truncated embedding record '{seq_id}' in {path}")
        values = np.frombuffer(data, dtype="<f4", count=length * d_e,
                               offset=off).reshape(length, d_e).copy()
        off += nbytes
        if length < 1:
            raise FormatError(f"empty embedding record '{seq_id}'")
        if not np.all(np.isfinite(values)):
            raise NonFiniteError(f"embedding '{seq_id}' has non-finite values")
        matrices[seq_id] = values
    return EmbeddingStore(d_e=d_e, matrices=matrices)


def build_synthetic_store(sequences: Dict[str, Tuple[str, str]],
                          tokenizer, d_e: int, seed: int) -> EmbeddingStore:
    """Synthetic embeddings for every dataset sequence id.

    `tokenizer` maps a display sequence (antibody entries contain '|') to
    token ids.
    """
    matrices = {
        sid: synthetic_embed(tokenizer(seq), d_e, seed)
        for sid, (_kind, seq) in sequences.items()
    }
    return EmbeddingStore(d_e=d_e, matrices=matrices)
