"""Loss, optimizer and training-loop contracts."""

import math

import numpy as np
import pytest
from helpers import make_dataset, make_store

from abaffinity import model as M
from abaffinity import train as TR
from abaffinity.errors import ConfigError, ContractError, TrainingDivergedError
from abaffinity.model import ModelConfig, init_params, load_checkpoint, save_checkpoint
from abaffinity.tensor import Tape, Tensor, backward
from abaffinity.train import AdamState, TrainConfig, adam_step, mse_loss, train


def toy_model_config(**overrides):
    base = dict(d_e=16, n_heads=2, n_layers=1, conv1_filters=8, conv1_kernel=3,
                conv2_filters=8, conv2_kernel=5, head_dims=(8,), seed=1)
    base.update(overrides)
    return ModelConfig(**base)


def scalar(v, requires_grad=False):
    return Tensor(np.asarray(v, dtype=np.float64), requires_grad=requires_grad)


# ---------------------------------------------------------------------------
# mse_loss
# ---------------------------------------------------------------------------

def test_mse_loss_zero_when_equal():
    preds = [scalar(1.0), scalar(2.0)]
    assert float(mse_loss(preds, [1.0, 2.0]).data) == 0.0


def test_mse_loss_hand_value():
    preds = [scalar(0.0), scalar(0.0)]
    assert float(mse_loss(preds, [1.0, 3.0]).data) == pytest.approx(5.0)


def test_mse_loss_gradient_closed_form():
    preds = [scalar(0.5, True), scalar(-1.0, True)]
    targets = [1.0, 1.0]
    with Tape() as tape:
        loss = mse_loss(preds, targets)
    backward(loss, tape)
    for p, t in zip(preds, targets):
        expected = 2.0 * (float(p.data) - t) / 2.0
        assert float(p.grad) == pytest.approx(expected, abs=1e-9)


def test_mse_loss_empty_rejected():
    with pytest.raises(ContractError):
        mse_loss([], [])


# ---------------------------------------------------------------------------
# adam
# ---------------------------------------------------------------------------

def test_adam_zero_gradient_keeps_params():
    params = init_params(toy_model_config())
    before = {n: p.data.copy() for n, p in params.named_parameters()}
    for p in params.parameters():
        p.grad = np.zeros_like(p.data)
    adam_step(params, AdamState(), TrainConfig())
    for n, p in params.named_parameters():
        np.testing.assert_array_equal(p.data, before[n])


def test_adam_first_step_magnitude_is_lr():
    # closed form: m_hat = g, v_hat = g^2 -> step = lr * g/(|g| + eps)
    cfg = ModelConfig(d_e=4, n_heads=1, n_layers=0, variant="esm-t",
                      head_dims=())
    params = init_params(cfg, dtype=np.float64)
    tc = TrainConfig(lr=1e-3, precision="float64")
    for p in params.parameters():
        p.grad = np.ones_like(p.data)
    before = {n: p.data.copy() for n, p in params.named_parameters()}
    adam_step(params, AdamState(), tc)
    for n, p in params.named_parameters():
        np.testing.assert_allclose(np.abs(p.data - before[n]),
                                   np.full_like(p.data, tc.lr), rtol=1e-6)


def test_adam_trajectory_deterministic():
    def run():
        params = init_params(toy_model_config(), dtype=np.float64)
        state = AdamState()
        tc = TrainConfig(lr=1e-2, precision="float64")
        rng = np.random.default_rng(0)
        for _ in range(5):
            for p in params.parameters():
                p.grad = rng.standard_normal(p.data.shape)
            adam_step(params, state, tc)
        return np.concatenate([p.data.ravel() for p in params.parameters()])

    np.testing.assert_array_equal(run(), run())


# ---------------------------------------------------------------------------
# training loop
# ---------------------------------------------------------------------------

@pytest.fixture(scope="module")
def tiny_setup():
    ds, _ = make_dataset(n=24, seed=3, split_seed=5)
    store = make_store(ds, d_e=16, seed=2)
    return ds, store


def test_train_smoke_loss_decreases(tiny_setup):
    ds, store = tiny_setup
    tc = TrainConfig(lr=3e-3, batch_size=8, max_epochs=8, patience=50, seed=0)
    result = train(toy_model_config(), tc, ds, store)
    assert result.epochs_run == 8
    assert result.curve[-1].train_rmse < result.curve[0].train_rmse
    assert all(math.isfinite(r.train_rmse) and math.isfinite(r.val_rmse)
               for r in result.curve)


def test_train_deterministic_curves(tiny_setup):
    ds, store = tiny_setup
    tc = TrainConfig(lr=1e-3, batch_size=8, max_epochs=4, patience=50, seed=9)

    def run():
        result = train(toy_model_config(), tc, ds, store)
        return [(r.epoch, r.train_rmse, r.val_rmse) for r in result.curve]

    assert run() == run()


def test_best_val_rmse_is_curve_minimum(tiny_setup):
    ds, store = tiny_setup
    tc = TrainConfig(lr=3e-3, batch_size=8, max_epochs=6, patience=50, seed=1)
    result = train(toy_model_config(), tc, ds, store)
    assert result.best_val_rmse == min(r.val_rmse for r in result.curve)
    assert result.curve[result.best_epoch].val_rmse == result.best_val_rmse


def test_patience_stops_exactly_after_minimum(tiny_setup, monkeypatch):
    ds, store = tiny_setup
    scripted = iter([5.0, 4.0, 3.0, 3.5, 3.7, 3.9, 4.1])
    monkeypatch.setattr(TR, "_rmse", lambda pred, target: next(scripted))
    tc = TrainConfig(lr=1e-4, batch_size=8, max_epochs=20, patience=2, seed=0)
    result = train(toy_model_config(), tc, ds, store)
    assert result.best_epoch == 2
    assert result.curve[-1].epoch == result.best_epoch + tc.patience
    assert result.epochs_run == 5


def test_stop_at_train_mse(tiny_setup):
    ds, store = tiny_setup
    # threshold far above the starting loss: stops after the first epoch
    tc = TrainConfig(lr=1e-4, batch_size=8, max_epochs=30, patience=50, seed=0,
                     stop_at_train_mse=100.0)
    result = train(toy_model_config(), tc, ds, store)
    assert result.epochs_run == 1


def test_checkpoint_reload_bitwise_predictions(tiny_setup, tmp_path):
    ds, store = tiny_setup
    tc = TrainConfig(lr=1e-3, batch_size=8, max_epochs=2, patience=50, seed=4)
    result = train(toy_model_config(), tc, ds, store)
    path = tmp_path / "best.ckpt"
    save_checkpoint(path, result.params, extra={"scaler": ds.scaler.to_dict()})
    loaded, _ = load_checkpoint(path)
    before = TR.predict_records(result.params, ds.val, store)
    after = TR.predict_records(loaded, ds.val, store)
    np.testing.assert_array_equal(before, after)


def test_sgd_small_lr_loss_non_increasing(tiny_setup):
    ds, store = tiny_setup
    small = ds.train[:4]
    tiny = type(ds)(train=small, val=ds.val[:2], test=ds.test[:1],
                    seed=ds.seed, fractions=ds.fractions, scaler=ds.scaler,
                    sequences=ds.sequences)
    tc = TrainConfig(lr=1e-4, batch_size=4, max_epochs=10, patience=50,
                     seed=0, precision="float64", optimizer="sgd")
    result = train(toy_model_config(), tc, tiny, store)
    losses = [r.train_rmse for r in result.curve]
    assert all(a >= b - 1e-12 for a, b in zip(losses, losses[1:]))


def test_width_mismatch_rejected(tiny_setup):
    ds, store = tiny_setup
    with pytest.raises(ConfigError):
        train(toy_model_config(d_e=32), TrainConfig(max_epochs=1), ds, store)


def test_divergence_reported(tiny_setup):
    ds, store = tiny_setup
    tc = TrainConfig(lr=1e25, batch_size=8, max_epochs=50, patience=50,
                     seed=0, optimizer="sgd")
    with np.errstate(over="ignore", invalid="ignore"):
        with pytest.raises(TrainingDivergedError, match="epoch"):
            train(toy_model_config(), tc, ds, store)


def test_curve_csv_round_trip(tiny_setup, tmp_path):
    ds, store = tiny_setup
    tc = TrainConfig(lr=1e-3, batch_size=8, max_epochs=3, patience=50, seed=2)
    result = train(toy_model_config(), tc, ds, store)
    path = tmp_path / "curve.csv"
    TR.write_curve_csv(path, result.curve)
    first_line = path.read_text().splitlines()[0]
    assert first_line == "epoch,train_rmse,val_rmse,seconds"
    loaded = TR.read_curve_csv(path)
    assert len(loaded) == len(result.curve)
    for a, b in zip(loaded, result.curve):
        assert a.epoch == b.epoch
        assert a.train_rmse == b.train_rmse  # repr round-trips exactly
        assert a.val_rmse == b.val_rmse
