"""Finite-difference gradient verification.

`numerical_grad` is the independent oracle used by the test suite and by
the `gradcheck` CLI command: central differences, perturbing one array
element at a time. `model_gradcheck` runs the full-model suite at a toy
configuration and reports the max relative error per parameter group.
"""

import time
from contextlib import contextmanager
from dataclasses import dataclass
from typing import Callable, List, Optional

import numpy as np

from . import tensor as T
from .errors import ContractError


def numerical_grad(f: Callable[[], float], arr: np.ndarray, h: float = 1e-3,
                   indices=None) -> np.ndarray:
    """Central finite differences of scalar f() w.r.t. elements of arr.

    `arr` is perturbed in place and restored. If `indices` is given only
    those flat indices are evaluated (the rest are NaN).
    """
    flat = arr.reshape(-1)
    grad = np.full(flat.shape, np.nan, dtype=np.float64)
    idx = range(flat.size) if indices is None else indices
    for i in idx:
        orig = flat[i]
        flat[i] = orig + h
        f_plus = f()
        flat[i] = orig - h
        f_minus = f()
        flat[i] = orig
        grad[i] = (f_plus - f_minus) / (2.0 * h)
    return grad.reshape(arr.shape)


def max_rel_error(analytic: np.ndarray, numeric: np.ndarray,
                  min_mag: float = 1e-8) -> float:
    """Max elementwise relative error where either gradient is non-negligible.

    NaN entries in `numeric` (skipped indices) are ignored.
    """
    a = np.asarray(analytic, dtype=np.float64).reshape(-1)
    n = np.asarray(numeric, dtype=np.float64).reshape(-1)
    valid = ~np.isnan(n)
    a, n = a[valid], n[valid]
    mag = np.maximum(np.abs(a), np.abs(n))
    keep = mag > min_mag
    if not keep.any():
        return 0.0
    return float((np.abs(a - n)[keep] / mag[keep]).max())


@dataclass
class GroupReport:
    """Gradcheck result for one named parameter group."""

    name: str
    max_rel_err: float
    n_checked: int
    passed: bool


def check_param_groups(loss_fn: Callable[[], float], named_params,
                       analytic_grads: dict, h: float = 1e-3,
                       tol: float = 1e-6,
                       max_per_group: Optional[int] = None,
                       seed: int = 0) -> List[GroupReport]:
    """Compare analytic gradients against central differences per group.

    `named_params` yields (name, Tensor); `analytic_grads` maps name to the
    gradient array captured from a backward pass. `max_per_group` limits
    how many elements of large tensors are probed (seeded subsample).
    """
    rng = np.random.default_rng(seed)
    reports = []
    for name, p in named_params:
        arr = p.data
        indices = None
        n_checked = arr.size
        if max_per_group is not None and arr.size > max_per_group:
            indices = sorted(rng.choice(arr.size, size=max_per_group, replace=False))
            n_checked = max_per_group
        numeric = numerical_grad(loss_fn, arr, h=h, indices=indices)
        err = max_rel_error(analytic_grads[name], numeric)
        reports.append(GroupReport(name, err, n_checked, err < tol))
    return reports


@contextmanager
def _relu_margin_tracker():
    """Record the smallest |pre-activation| seen by relu inside the block.

    Central differences are only valid when no perturbation can push an
    activation across the ReLU kink; callers verify the recorded margin
    against the step size.
    """
    margins = []
    original = T.relu

    def tracked(x):
        a = np.abs(x.data)
        if a.size:
            margins.append(float(a.min()))
        return original(x)

    T.relu = tracked
    try:
        yield margins
    finally:
        T.relu = original


@dataclass
class GradcheckResult:
    reports: List[GroupReport]
    seed: int
    relu_margin: float
    seconds: float

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.reports)

    @property
    def worst(self) -> float:
        return max((r.max_rel_err for r in self.reports), default=0.0)


def model_gradcheck(d_e: int = 16, n_heads: int = 2, n_layers: int = 1,
                    conv1=(8, 3), conv2=(8, 5), head_dims=(8,),
                    variant: str = "duadeep", seq_len: int = 8,
                    seed: int = 0, h: float = 1e-4, tol: float = 1e-6,
                    precision: int = 64,
                    max_per_group: Optional[int] = None) -> GradcheckResult:
    """Full-model finite-difference suite at a toy configuration.

    Loss is the squared error of one antigen/antibody pair against a fixed
    target. Seeds are advanced deterministically until every ReLU
    pre-activation clears the finite-difference step by a wide margin.
    """
    from .embedding import synthetic_embed
    from .model import ModelConfig, init_params, model_forward, stream_input

    if precision not in (32, 64):
        raise ContractError(f"precision must be 32 or 64, got {precision}")
    dtype = np.float64 if precision == 64 else np.float32
    started = time.perf_counter()

    def make_forward(config, params, p_dtype, trial_seed):
        rng = np.random.default_rng(trial_seed + 1)
        ag_tokens = rng.integers(1, 21, size=seq_len).tolist()
        ab_tokens = rng.integers(1, 21, size=max(1, seq_len - 1)).tolist()
        ag = stream_input(synthetic_embed(ag_tokens, d_e, trial_seed + 2),
                          dtype=p_dtype)
        ab = stream_input(synthetic_embed(ab_tokens, d_e, trial_seed + 3),
                          dtype=p_dtype)
        target = T.Tensor(np.asarray(0.5, dtype=p_dtype))

        def forward():
            s = model_forward(ag, ab, params)
            return T.mean_squared_error(T.reshape(s, (1,)),
                                        T.reshape(target, (1,)))

        return forward

    for attempt in range(16):
        trial_seed = seed + attempt
        config = ModelConfig(
            d_e=d_e, n_heads=n_heads, n_layers=n_layers,
            conv1_filters=conv1[0], conv1_kernel=conv1[1],
            conv2_filters=conv2[0], conv2_kernel=conv2[1],
            head_dims=tuple(head_dims), variant=variant, seed=trial_seed)
        params = init_params(config, dtype=dtype)
        forward = make_forward(config, params, dtype, trial_seed)
        with _relu_margin_tracker() as margins:
            with T.Tape() as tape:
                loss = forward()
        margin = min(margins) if margins else float("inf")
        if margin > 10.0 * h:
            break
    else:
        raise ContractError("could not find a seed with safe ReLU margins")

    T.backward(loss, tape, params=params.parameters())
    analytic = {name: t.grad.copy() for name, t in params.named_parameters()}

    # differences are always probed on a float64 twin: at 32-bit precision
    # the check compares float32 analytic gradients against the float64
    # oracle, since float32 difference quotients are dominated by roundoff
    if precision == 64:
        fd_params = params
    else:
        fd_params = init_params(config, dtype=np.float64)
        for (_, src), (_, dst) in zip(params.named_parameters(),
                                      fd_params.named_parameters()):
            dst.data = src.data.astype(np.float64)
    fd_forward = make_forward(config, fd_params, np.float64, trial_seed)

    reports = check_param_groups(lambda: float(fd_forward().data),
                                 fd_params.named_parameters(), analytic,
                                 h=h, tol=tol, max_per_group=max_per_group,
                                 seed=trial_seed)
    return GradcheckResult(reports=reports, seed=trial_seed,
                           relu_margin=margin,
                           seconds=time.perf_counter() - started)
