"""Optimization loop: Adam (or plain gradient descent), early stopping on
validation RMSE, best-checkpoint tracking and learning-curve emission.

Targets are standardized pKd values throughout; reported RMSEs live on
that scale.
"""

import csv
import math
import time
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from . import model as M
from . import tensor as T
from .dataio import CleanRecord, SplitDataset
from .embedding import EmbeddingStore
from .errors import ConfigError, ContractError, MissingEmbeddingError, TrainingDivergedError
from .model import ModelConfig, ModelParams
from .tensor import Tensor

_TRAIN_FIELDS = {
    "lr", "batch_size", "max_epochs", "patience", "beta1", "beta2", "eps",
    "seed", "precision", "optimizer", "stop_at_train_mse",
}


@dataclass
class TrainConfig:
    lr: float = 1e-3
    batch_size: int = 32
    max_epochs: int = 50
    patience: int = 5
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    precision: str = "float32"
    optimizer: str = "adam"  # or "sgd" (plain full-batch-capable descent)
    stop_at_train_mse: Optional[float] = None

    def __post_init__(self):
        if self.lr <= 0:
            raise ConfigError(f"learning rate must be positive, got {self.lr}")
        if self.patience < 1:
            raise ConfigError(f"patience must be >= 1, got {self.patience}")
        if self.batch_size < 1:
            raise ConfigError(f"batch size must be >= 1, got {self.batch_size}")
        if self.precision not in ("float32", "float64"):
            raise ConfigError(f"precision must be float32/float64, "
                              f"got {self.precision}")
        if self.optimizer not in ("adam", "sgd"):
            raise ConfigError(f"optimizer must be adam or sgd, "
                              f"got {self.optimizer}")

    @property
    def dtype(self):
        return np.float32 if self.precision == "float32" else np.float64

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in sorted(_TRAIN_FIELDS)}

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        unknown = set(d) - _TRAIN_FIELDS
        if unknown:
            raise ConfigError(f"unknown train config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class EpochRecord:
    epoch: int
    train_rmse: float
    val_rmse: float
    seconds: float


def mse_loss(preds: Sequence[Tensor], targets: Sequence[float]) -> Tensor:
    """Mean squared error between scalar predictions and target values."""
    if len(preds) == 0 or len(preds) != len(targets):
        raise ContractError(
            f"mse_loss needs equal nonempty lengths, got {len(preds)} "
            f"and {len(targets)}")
    pred_vec = T.stack_scalars(list(preds))
    target_vec = Tensor(np.asarray(targets, dtype=pred_vec.data.dtype))
    return T.mean_squared_error(pred_vec, target_vec)


class AdamState:
    """First/second moment buffers keyed by parameter name."""

    def __init__(self):
        self.step = 0
        self.m: Dict[str, np.ndarray] = {}
        self.v: Dict[str, np.ndarray] = {}


def adam_step(params: ModelParams, state: AdamState, config: TrainConfig) -> None:
    """One bias-corrected Adam update, in place, deterministic order."""
    state.step += 1
    t = state.step
    b1, b2 = config.beta1, config.beta2
    for name, p in params.named_parameters():
        g = p.grad
        if g is None:
            continue
        if name not in state.m:
            state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        m = state.m[name] = b1 * state.m[name] + (1 - b1) * g
        v = state.v[name] = b2 * state.v[name] + (1 - b2) * (g * g)
        m_hat = m / (1 - b1 ** t)
        v_hat = v / (1 - b2 ** t)
        p.data = p.data - (config.lr * m_hat / (np.sqrt(v_hat) + config.eps)
                           ).astype(p.data.dtype)


def sgd_step(params: ModelParams, config: TrainConfig) -> None:
    for _, p in params.named_parameters():
        if p.grad is not None:
            p.data = p.data - (config.lr * p.grad).astype(p.data.dtype)


@dataclass
class TrainResult:
    params: ModelParams            # best-validation weights
    best_epoch: int
    best_val_rmse: float
    curve: List[EpochRecord] = field(default_factory=list)
    epochs_run: int = 0
    final_params: Optional[ModelParams] = None  # weights at the last epoch


def _resolve_embeddings(records: Sequence[CleanRecord], store: EmbeddingStore,
                        dtype) -> Dict[str, np.ndarray]:
    cache: Dict[str, np.ndarray] = {}
    missing = []
    for rec in records:
        for sid in (rec.antigen_id, rec.antibody_id):
            if sid in cache:
                continue
            if sid not in store:
                missing.append(sid)
                continue
            cache[sid] = store.lookup(sid).astype(dtype)
    if missing:
        raise MissingEmbeddingError(
            f"embeddings missing for ids: {sorted(set(missing))}")
    return cache


def _forward_record(rec: CleanRecord, cache: Dict[str, np.ndarray],
                    params: ModelParams, pad_ag: Optional[int] = None,
                    pad_ab: Optional[int] = None) -> Tensor:
    dtype = params.dtype
    ag = M.stream_input(cache[rec.antigen_id], pad_to=pad_ag, dtype=dtype)
    ab = M.stream_input(cache[rec.antibody_id], pad_to=pad_ab, dtype=dtype)
    return M.model_forward(ag, ab, params)


def predict_records(params: ModelParams, records: Sequence[CleanRecord],
                    store: EmbeddingStore) -> np.ndarray:
    """Inference-mode standardized predictions for a list of records."""
    cache = _resolve_embeddings(records, store, params.dtype)
    return np.array([float(_forward_record(rec, cache, params).data)
                     for rec in records], dtype=np.float64)


def _rmse(pred: np.ndarray, target: np.ndarray) -> float:
    return float(np.sqrt(np.mean((pred - target) ** 2)))


def train(model_config: ModelConfig, train_config: TrainConfig,
          dataset: SplitDataset, store: EmbeddingStore,
          log=None) -> TrainResult:
    """Mini-batch optimization with early stopping on validation RMSE.

    Deterministic given (configs, dataset, store): the shuffle stream is
    seeded and batches reduce in a fixed order.
    """
    if store.d_e != model_config.d_e:
        raise ConfigError(
            f"embedding width {store.d_e} does not match model "
            f"d_e={model_config.d_e}")
    dtype = train_config.dtype
    params = M.init_params(model_config, dtype=dtype)
    all_records = dataset.train + dataset.val + dataset.test
    cache = _resolve_embeddings(all_records, store, dtype)

    rng = np.random.default_rng(train_config.seed)
    state = AdamState()
    train_records = dataset.train
    val_targets = np.array([r.pkd_std for r in dataset.val], dtype=np.float64)

    best_val = math.inf
    best_epoch = -1
    best_snapshot: Dict[str, np.ndarray] = {}
    epochs_since_best = 0
    curve: List[EpochRecord] = []
    dropout_rng = (np.random.default_rng(train_config.seed + 1)
                   if model_config.dropout > 0 else None)

    for epoch in range(train_config.max_epochs):
        t_start = time.perf_counter()
        order = rng.permutation(len(train_records))
        sq_sum, n_seen = 0.0, 0
        for batch_start in range(0, len(order), train_config.batch_size):
            batch_idx = order[batch_start:batch_start + train_config.batch_size]
            batch = [train_records[i] for i in batch_idx]
            pad_ag = max(cache[r.antigen_id].shape[0] for r in batch)
            pad_ab = max(cache[r.antibody_id].shape[0] for r in batch)
            T.zero_grads(params.parameters())
            with T.Tape() as tape:
                preds = []
                for rec in batch:
                    ag = M.stream_input(cache[rec.antigen_id], pad_to=pad_ag,
                                        dtype=dtype)
                    ab = M.stream_input(cache[rec.antibody_id], pad_to=pad_ab,
                                        dtype=dtype)
                    preds.append(M.model_forward(
                        ag, ab, params, rng=dropout_rng, training=True))
                loss = mse_loss(preds, [r.pkd_std for r in batch])
            loss_val = float(loss.data)
            if not math.isfinite(loss_val):
                max_param = max(float(np.abs(p.data).max())
                                for p in params.parameters())
                raise TrainingDivergedError(
                    f"non-finite loss at epoch {epoch}, batch "
                    f"{batch_start // train_config.batch_size} "
                    f"(max |param| = {max_param:.3e})")
            T.backward(loss, tape, params=params.parameters())
            if train_config.optimizer == "adam":
                adam_step(params, state, train_config)
            else:
                sgd_step(params, train_config)
            sq_sum += loss_val * len(batch)
            n_seen += len(batch)

        train_rmse = math.sqrt(sq_sum / n_seen)
        val_pred = np.array([float(_forward_record(r, cache, params).data)
                             for r in dataset.val], dtype=np.float64)
        val_rmse = _rmse(val_pred, val_targets) if len(val_targets) else math.nan
        curve.append(EpochRecord(epoch=epoch, train_rmse=train_rmse,
                                 val_rmse=val_rmse,
                                 seconds=time.perf_counter() - t_start))
        if log:
            log(f"epoch {epoch}: train_rmse={train_rmse:.4f} "
                f"val_rmse={val_rmse:.4f}")

        if val_rmse < best_val:
            best_val = val_rmse
            best_epoch = epoch
            best_snapshot = {name: p.data.copy()
                             for name, p in params.named_parameters()}
            epochs_since_best = 0
        else:
            epochs_since_best += 1
        if (train_config.stop_at_train_mse is not None
                and train_rmse ** 2 < train_config.stop_at_train_mse):
            break
        if epochs_since_best >= train_config.patience:
            break

    if best_epoch < 0:  # no usable validation signal; keep final weights
        best_snapshot = {name: p.data.copy()
                         for name, p in params.named_parameters()}
        best_epoch = len(curve) - 1
        best_val = curve[-1].val_rmse if curve else math.nan

    best_params = M.init_params(model_config, dtype=dtype)
    for name, p in best_params.named_parameters():
        p.data = best_snapshot[name]
    return TrainResult(params=best_params, best_epoch=best_epoch,
                       best_val_rmse=best_val, curve=curve,
                       epochs_run=len(curve), final_params=params)


def write_curve_csv(path, curve: Sequence[EpochRecord]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "train_rmse", "val_rmse", "seconds"])
        for rec in curve:
            writer.writerow([rec.epoch, repr(rec.train_rmse),
                             repr(rec.val_rmse), f"{rec.seconds:.3f}"])


def read_curve_csv(path) -> List[EpochRecord]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        return [EpochRecord(epoch=int(r["epoch"]),
                            train_rmse=float(r["train_rmse"]),
                            val_rmse=float(r["val_rmse"]),
                            seconds=float(r["seconds"]))
                for r in reader]
