"""Dual-stream affinity model.

Each protein stream (antigen, antibody) owns its parameters: a stack of
post-norm transformer encoder layers pooled by masked mean, and a two-layer
1-d CNN pooled the same way. Variant selection:

    duadeep  pooled transformer ++ CNN per stream, streams concatenated
    esm-t    pooled transformer features only
    esm-c    CNN features only

The fused vector feeds an MLP head (ReLU hiddens, single linear output).

Checkpoint format (little-endian): magic "DDSEQCKP" | u32 version |
u32 json_length | config/metadata JSON | u32 tensor_count | per tensor
u32 ndim, ndim x u32 dims, float32 values — tensors in exactly the order
produced by `ModelParams.named_parameters`.
"""

import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterator, List, Optional, Tuple

import numpy as np

from . import tensor as T
from .errors import ConfigError, ContractError, FormatError, InputError
from .tensor import Tensor

VARIANTS = ("duadeep", "esm-t", "esm-c")
ATTN_MASK_BIAS = -1e9
CKP_MAGIC = b"DDSEQCKP"
CKP_VERSION = 1

_CONFIG_FIELDS = {
    "d_e", "n_heads", "n_layers", "d_ff", "conv1_filters", "conv1_kernel",
    "conv2_filters", "conv2_kernel", "head_dims", "variant", "dropout", "seed",
}


@dataclass
class ModelConfig:
    d_e: int
    n_heads: int = 8
    n_layers: int = 2
    d_ff: Optional[int] = None  # defaults to 4 * d_e
    conv1_filters: int = 256
    conv1_kernel: int = 3
    conv2_filters: int = 128
    conv2_kernel: int = 5
    head_dims: Tuple[int, ...] = (512, 128)
    variant: str = "duadeep"
    dropout: float = 0.0
    seed: int = 0

    def __post_init__(self):
        self.variant = self.variant.lower()
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant '{self.variant}'; "
                              f"expected one of {VARIANTS}")
        if self.d_e < 1:
            raise ConfigError(f"d_e must be >= 1, got {self.d_e}")
        if self.d_ff is None:
            self.d_ff = 4 * self.d_e
        if self.has_transformer and self.d_e % self.n_heads != 0:
            raise ConfigError(
                f"d_e={self.d_e} not divisible by n_heads={self.n_heads}")
        for k in (self.conv1_kernel, self.conv2_kernel):
            if k % 2 == 0 or k < 1:
                raise ConfigError(f"conv kernel sizes must be odd, got {k}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}")
        self.head_dims = tuple(int(h) for h in self.head_dims)

    @property
    def has_transformer(self) -> bool:
        return self.variant in ("duadeep", "esm-t")

    @property
    def has_cnn(self) -> bool:
        return self.variant in ("duadeep", "esm-c")

    @property
    def d_k(self) -> int:
        return self.d_e // self.n_heads

    @property
    def d_cnn(self) -> int:
        return self.conv2_filters

    def fusion_width(self) -> int:
        """Width of the concatenated pair feature vector."""
        per_stream = {
            "duadeep": self.d_e + self.d_cnn,
            "esm-t": self.d_e,
            "esm-c": self.d_cnn,
        }[self.variant]
        return 2 * per_stream

    def to_dict(self) -> dict:
        return {
            "d_e": self.d_e, "n_heads": self.n_heads, "n_layers": self.n_layers,
            "d_ff": self.d_ff, "conv1_filters": self.conv1_filters,
            "conv1_kernel": self.conv1_kernel, "conv2_filters": self.conv2_filters,
            "conv2_kernel": self.conv2_kernel, "head_dims": list(self.head_dims),
            "variant": self.variant, "dropout": self.dropout, "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        unknown = set(d) - _CONFIG_FIELDS
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        if "d_e" not in d:
            raise ConfigError("model config requires 'd_e'")
        kwargs = dict(d)
        if "head_dims" in kwargs:
            kwargs["head_dims"] = tuple(kwargs["head_dims"])
        return cls(**kwargs)


@dataclass
class EncoderLayerParams:
    w_q: List[Tensor]
    w_k: List[Tensor]
    w_v: List[Tensor]
    w_o: Tensor
    ln1_gamma: Tensor
    ln1_beta: Tensor
    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor
    ln2_gamma: Tensor
    ln2_beta: Tensor


@dataclass
class ConvParams:
    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor


@dataclass
class StreamParams:
    layers: Optional[List[EncoderLayerParams]]
    conv: Optional[ConvParams]


@dataclass
class HeadParams:
    hidden: List[Tuple[Tensor, Tensor]]
    w_out: Tensor
    b_out: Tensor


@dataclass
class ModelParams:
    config: ModelConfig
    antigen: StreamParams
    antibody: StreamParams
    head: HeadParams

    def named_parameters(self) -> Iterator[Tuple[str, Tensor]]:
        """Canonical (name, tensor) order; defines the checkpoint layout."""
        for stream_name in ("antigen", "antibody"):
            stream: StreamParams = getattr(self, stream_name)
            if stream.layers is not None:
                for i, layer in enumerate(stream.layers):
                    prefix = f"{stream_name}.layer{i}"
                    for h, w in enumerate(layer.w_q):
                        yield f"{prefix}.w_q{h}", w
                    for h, w in enumerate(layer.w_k):
                        yield f"{prefix}.w_k{h}", w
                    for h, w in enumerate(layer.w_v):
                        yield f"{prefix}.w_v{h}", w
                    yield f"{prefix}.w_o", layer.w_o
                    yield f"{prefix}.ln1_gamma", layer.ln1_gamma
                    yield f"{prefix}.ln1_beta", layer.ln1_beta
                    yield f"{prefix}.ffn_w1", layer.w1
                    yield f"{prefix}.ffn_b1", layer.b1
                    yield f"{prefix}.ffn_w2", layer.w2
                    yield f"{prefix}.ffn_b2", layer.b2
                    yield f"{prefix}.ln2_gamma", layer.ln2_gamma
                    yield f"{prefix}.ln2_beta", layer.ln2_beta
            if stream.conv is not None:
                yield f"{stream_name}.conv1_w", stream.conv.w1
                yield f"{stream_name}.conv1_b", stream.conv.b1
                yield f"{stream_name}.conv2_w", stream.conv.w2
                yield f"{stream_name}.conv2_b", stream.conv.b2
        for i, (w, b) in enumerate(self.head.hidden):
            yield f"head.hidden{i}_w", w
            yield f"head.hidden{i}_b", b
        yield "head.w_out", self.head.w_out
        yield "head.b_out", self.head.b_out

    def parameters(self) -> List[Tensor]:
        return [t for _, t in self.named_parameters()]

    @property
    def dtype(self):
        return self.head.w_out.dtype

    def assert_finite(self) -> None:
        for name, p in self.named_parameters():
            p.assert_finite(name)


def parameter_count(params: ModelParams) -> int:
    return sum(t.data.size for t in params.parameters())


def init_params(config: ModelConfig, dtype=np.float32) -> ModelParams:
    """Seeded Xavier-uniform weights, zero biases, identity layer norms."""
    rng = np.random.default_rng(config.seed)

    def xavier(shape, fan_in, fan_out):
        limit = math.sqrt(6.0 / (fan_in + fan_out))
        return Tensor(rng.uniform(-limit, limit, shape).astype(dtype),
                      requires_grad=True)

    def zeros(shape):
        return Tensor(np.zeros(shape, dtype=dtype), requires_grad=True)

    def ones(shape):
        return Tensor(np.ones(shape, dtype=dtype), requires_grad=True)

    d_e, d_k, d_ff = config.d_e, config.d_k, config.d_ff

    def make_stream() -> StreamParams:
        layers = None
        if config.has_transformer:
            layers = []
            for _ in range(config.n_layers):
                layers.append(EncoderLayerParams(
                    w_q=[xavier((d_e, d_k), d_e, d_k) for _ in range(config.n_heads)],
                    w_k=[xavier((d_e, d_k), d_e, d_k) for _ in range(config.n_heads)],
                    w_v=[xavier((d_e, d_k), d_e, d_k) for _ in range(config.n_heads)],
                    w_o=xavier((d_e, d_e), d_e, d_e),
                    ln1_gamma=ones(d_e), ln1_beta=zeros(d_e),
                    w1=xavier((d_e, d_ff), d_e, d_ff), b1=zeros(d_ff),
                    w2=xavier((d_ff, d_e), d_ff, d_e), b2=zeros(d_e),
                    ln2_gamma=ones(d_e), ln2_beta=zeros(d_e),
                ))
        conv = None
        if config.has_cnn:
            k1, f1 = config.conv1_kernel, config.conv1_filters
            k2, f2 = config.conv2_kernel, config.conv2_filters
            conv = ConvParams(
                w1=xavier((k1, d_e, f1), k1 * d_e, k1 * f1), b1=zeros(f1),
                w2=xavier((k2, f1, f2), k2 * f1, k2 * f2), b2=zeros(f2),
            )
        return StreamParams(layers=layers, conv=conv)

    antigen = make_stream()
    antibody = make_stream()

    n_in = config.fusion_width()
    hidden = []
    for width in config.head_dims:
        hidden.append((xavier((n_in, width), n_in, width), zeros(width)))
        n_in = width
    head = HeadParams(hidden=hidden,
                      w_out=xavier((n_in,), n_in, 1),
                      b_out=zeros(()))
    return ModelParams(config=config, antigen=antigen, antibody=antibody,
                       head=head)


@dataclass
class StreamInput:
    """Per-residue embeddings plus a validity mask (1 = real residue)."""

    embeddings: Tensor
    mask: Tensor

    def __post_init__(self):
        if self.embeddings.data.ndim != 2 or self.mask.data.ndim != 1:
            raise ContractError(
                f"stream input needs (L, D) embeddings and (L,) mask, got "
                f"{self.embeddings.shape} / {self.mask.shape}")
        if self.embeddings.shape[0] != self.mask.shape[0]:
            raise ContractError("embeddings and mask lengths differ")
        m = self.mask.data
        if not np.all((m == 0) | (m == 1)):
            raise ContractError("mask entries must be 0 or 1")
        if m.sum() < 1:
            raise ContractError("mask must select at least one position")
        if np.any(self.embeddings.data[m == 0] != 0):
            raise ContractError("masked rows must be zero vectors")

    @property
    def length(self) -> int:
        return self.embeddings.shape[0]


def stream_input(values: np.ndarray, pad_to: Optional[int] = None,
                 dtype=np.float32) -> StreamInput:
    """Build a StreamInput from an (L, D) array, zero-padding to `pad_to`."""
    values = np.asarray(values, dtype=dtype)
    length = values.shape[0]
    total = pad_to if pad_to is not None else length
    if total < length:
        raise ContractError(f"pad_to={total} shorter than sequence ({length})")
    emb = np.zeros((total, values.shape[1]), dtype=dtype)
    emb[:length] = values
    mask = np.zeros(total, dtype=dtype)
    mask[:length] = 1.0
    return StreamInput(embeddings=Tensor(emb), mask=Tensor(mask))


def _mask_bias(mask: Tensor, dtype) -> Optional[Tensor]:
    """(L, L) additive attention bias: masked key columns get -1e9."""
    m = mask.data
    if np.all(m == 1):
        return None
    row = np.where(m == 0, dtype.type(ATTN_MASK_BIAS), dtype.type(0.0))
    return Tensor(np.ascontiguousarray(
        np.broadcast_to(row, (m.shape[0], m.shape[0]))))


def mhsa_forward(x: Tensor, layer: EncoderLayerParams, mask: Tensor,
                 return_attn: bool = False):
    """Multi-head self-attention with additive key masking."""
    d_k = layer.w_q[0].shape[1]
    inv_sqrt = 1.0 / math.sqrt(d_k)
    bias = _mask_bias(mask, x.data.dtype)
    heads = []
    attns = []
    for w_q, w_k, w_v in zip(layer.w_q, layer.w_k, layer.w_v):
        q = T.matmul(x, w_q)
        k = T.matmul(x, w_k)
        v = T.matmul(x, w_v)
        scores = T.scale(T.matmul(q, T.transpose(k)), inv_sqrt)
        if bias is not None:
            scores = T.add(scores, bias)
        attn = T.softmax_rows(scores)
        attns.append(attn)
        heads.append(T.matmul(attn, v))
    out = T.matmul(T.concat_last(heads), layer.w_o)
    if return_attn:
        return out, attns
    return out


def _ffn(x: Tensor, layer: EncoderLayerParams) -> Tensor:
    inner = T.relu(T.add_bias(T.matmul(x, layer.w1), layer.b1))
    return T.add_bias(T.matmul(inner, layer.w2), layer.b2)


def encoder_layer_forward(x: Tensor, layer: EncoderLayerParams, mask: Tensor,
                          dropout_p: float = 0.0,
                          rng: Optional[np.random.Generator] = None) -> Tensor:
    """Post-norm residual block: norm(x + MHSA(x)), then norm(+FFN)."""
    attn_out = mhsa_forward(x, layer, mask)
    if dropout_p > 0.0:
        attn_out = T.dropout(attn_out, dropout_p, rng)
    h = T.layer_norm(T.add(x, attn_out), layer.ln1_gamma, layer.ln1_beta)
    ffn_out = _ffn(h, layer)
    if dropout_p > 0.0:
        ffn_out = T.dropout(ffn_out, dropout_p, rng)
    return T.layer_norm(T.add(h, ffn_out), layer.ln2_gamma, layer.ln2_beta)


def transformer_branch(inp: StreamInput, stream: StreamParams,
                       dropout_p: float = 0.0,
                       rng: Optional[np.random.Generator] = None) -> Tensor:
    """Stacked encoder layers followed by masked mean pooling."""
    if stream.layers is None:
        raise ConfigError("stream has no transformer branch")
    x = inp.embeddings
    for layer in stream.layers:
        x = encoder_layer_forward(x, layer, inp.mask, dropout_p, rng)
    return T.masked_mean_rows(x, inp.mask)


def cnn_branch(inp: StreamInput, stream: StreamParams) -> Tensor:
    """conv(k1) -> ReLU -> conv(k2) -> ReLU -> masked mean pooling.

    Activations at masked positions are re-zeroed between layers;
    otherwise the second convolution would read nonzero padding
    activations at real positions near the boundary, breaking padding
    invariance.
    """
    if stream.conv is None:
        raise ConfigError("stream has no CNN branch")
    conv = stream.conv
    m = inp.mask.data
    padded = not np.all(m == 1)

    def zero_masked(t: Tensor) -> Tensor:
        if not padded:
            return t
        keep = np.ascontiguousarray(
            np.broadcast_to(m[:, None], t.shape).astype(t.data.dtype))
        return T.mul(t, Tensor(keep))

    h = zero_masked(T.relu(T.conv1d_same(inp.embeddings, conv.w1, conv.b1)))
    h = zero_masked(T.relu(T.conv1d_same(h, conv.w2, conv.b2)))
    return T.masked_mean_rows(h, inp.mask)


def head_forward(features: Tensor, head: HeadParams) -> Tensor:
    """MLP head: ReLU hidden layers, single linear output unit."""
    y = T.reshape(features, (1, features.shape[-1]))
    for w, b in head.hidden:
        y = T.relu(T.add_bias(T.matmul(y, w), b))
    out = T.matmul(y, T.reshape(head.w_out, (head.w_out.shape[0], 1)))
    return T.add(T.reshape(out, ()), head.b_out)


def model_forward(antigen: StreamInput, antibody: StreamInput,
                  params: ModelParams, variant: Optional[str] = None,
                  rng: Optional[np.random.Generator] = None,
                  training: bool = False) -> Tensor:
    """Predicted affinity score (standardized scale) for one pair."""
    config = params.config
    if variant is not None and variant.lower() != config.variant:
        raise ConfigError(
            f"variant '{variant}' does not match parameters built for "
            f"'{config.variant}'")
    for name, inp in (("antigen", antigen), ("antibody", antibody)):
        if inp.embeddings.shape[1] != config.d_e:
            raise ConfigError(
                f"{name} embedding width {inp.embeddings.shape[1]} does not "
                f"match model d_e={config.d_e}")
    dropout_p = config.dropout if training else 0.0
    if dropout_p > 0.0 and rng is None:
        raise ContractError("dropout requires an rng in training mode")

    parts = []
    for inp, stream in ((antigen, params.antigen), (antibody, params.antibody)):
        stream_parts = []
        if config.has_transformer:
            stream_parts.append(transformer_branch(inp, stream, dropout_p, rng))
        if config.has_cnn:
            stream_parts.append(cnn_branch(inp, stream))
        parts.append(T.concat_last(stream_parts)
                     if len(stream_parts) > 1 else stream_parts[0])
    fused = T.concat_last(parts)
    if fused.shape[-1] != config.fusion_width():
        raise ContractError(
            f"fusion width {fused.shape[-1]} != expected {config.fusion_width()}")
    return head_forward(fused, params.head)


def predict(params: ModelParams, antigen_values: np.ndarray,
            antibody_values: np.ndarray) -> float:
    """Inference-mode forward for one pair of embedding matrices."""
    dtype = params.dtype
    ag = stream_input(antigen_values, dtype=dtype)
    ab = stream_input(antibody_values, dtype=dtype)
    return float(model_forward(ag, ab, params).data)


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

def save_checkpoint(path, params: ModelParams,
                    extra: Optional[Dict] = None) -> None:
    """Serialize config, metadata and parameters (float32 values)."""
    meta = {"config": params.config.to_dict(), "extra": extra or {}}
    blob = json.dumps(meta, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CKP_MAGIC)
        fh.write(struct.pack("<II", CKP_VERSION, len(blob)))
        fh.write(blob)
        tensors = list(params.named_parameters())
        fh.write(struct.pack("<I", len(tensors)))
        for _, t in tensors:
            # asarray, not ascontiguousarray: the latter promotes 0-d to 1-d
            arr = np.asarray(t.data, dtype="<f4")
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.tobytes())


def load_checkpoint(path, dtype=np.float32) -> Tuple[ModelParams, Dict]:
    """Rebuild ModelParams from a checkpoint; returns (params, extra)."""
    path = Path(path)
    if not path.is_file():
        raise InputError(f"missing checkpoint: {path}")
    data = path.read_bytes()
    if data[:8] != CKP_MAGIC:
        raise FormatError(f"bad checkpoint magic in {path}")
    version, blob_len = struct.unpack_from("<II", data, 8)
    if version != CKP_VERSION:
        raise FormatError(f"unsupported checkpoint version {version}")
    off = 16
    meta = json.loads(data[off:off + blob_len].decode("utf-8"))
    off += blob_len
    config = ModelConfig.from_dict(meta["config"])
    params = init_params(config, dtype=dtype)
    (n_tensors,) = struct.unpack_from("<I", data, off)
    off += 4
    named = list(params.named_parameters())
    if n_tensors != len(named):
        raise FormatError(
            f"checkpoint holds {n_tensors} tensors, config implies {len(named)}")
    for name, t in named:
        (ndim,) = struct.unpack_from("<I", data, off)
        off += 4
        shape = struct.unpack_from(f"<{ndim}I", data, off)
        off += 4 * ndim
        if tuple(shape) != t.shape:
            raise FormatError(
                f"checkpoint tensor '{name}' has shape {tuple(shape)}, "
                f"expected {t.shape}")
        count = int(np.prod(shape)) if ndim else 1
        values = np.frombuffer(data, dtype="<f4", count=count, offset=off)
        off += 4 * count
        t.data = values.reshape(shape).astype(dtype)
    return params, meta.get("extra", {})
