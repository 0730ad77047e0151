"""Two-sided zeroth-order gradient estimation on masked layers.

The single-sample estimate for direction v is

    c * (f(theta + beta*v) - f(theta - beta*v)) / (2*beta) * v

with c = 1 under gaussian_unit scaling and c = masked_dim under dim_scaled.
For v ~ N(0, I) the unit-scaled form is the unbiased estimator of the
smoothed gradient; the dim_scaled variant is exposed because update rules
and variance bounds are often stated with the dimension factor attached.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .objectives import Batch, Objective
from .params import LayeredParams, LayerMask, axpy, flatten, sample_masked_direction, unflatten

__all__ = ["ZoConfig", "zo_grad_estimate", "two_point_estimate", "smoothed_value", "estimator_moments"]

_SCALINGS = ("gaussian_unit", "dim_scaled")
_CHUNK = 8192  # fixed block size keeps vectorized summation order stable


@dataclass(frozen=True)
class ZoConfig:
    beta: float
    samples_per_update: int = 8
    scaling: str = "gaussian_unit"
    mask: LayerMask | None = None

    def __post_init__(self):
        if self.beta <= 0:
            raise ConfigError("beta must be > 0")
        if self.samples_per_update < 1:
            raise ConfigError("samples_per_update must be >= 1")
        if self.scaling not in _SCALINGS:
            raise ConfigError(f"scaling must be one of {_SCALINGS}")

    def with_mask(self, mask: LayerMask) -> "ZoConfig":
        return ZoConfig(self.beta, self.samples_per_update, self.scaling, mask)


def _dim_factor(scaling: str, mask: LayerMask) -> float:
    return 1.0 if scaling == "gaussian_unit" else float(mask.masked_dim)


def two_point_estimate(
    obj: Objective,
    params: LayeredParams,
    batch: Batch | None,
    direction: LayeredParams,
    beta: float,
    dim_factor: float = 1.0,
) -> LayeredParams:
    """Single-direction antithetic estimate; both sides share the batch."""
    loss_plus = obj.value(axpy(params, direction, beta), batch)
    loss_minus = obj.value(axpy(params, direction, -beta), batch)
    coeff = dim_factor * (loss_plus - loss_minus) / (2.0 * beta)
    blocks = [coeff * b for b in direction.blocks]
    return LayeredParams.from_blocks(blocks, params.names)


def zo_grad_estimate(
    obj: Objective,
    params: LayeredParams,
    batch: Batch | None,
    cfg: ZoConfig,
    rng: np.random.Generator,
) -> LayeredParams:
    """Average of samples_per_update antithetic estimates on masked layers.

    Directions are drawn in sample order from rng and the average is a
    fixed-order sum, so the result is bit-stable however the side
    evaluations are scheduled.  Coordinates outside the mask are exact
    zeros.
    """
    if cfg.mask is None:
        raise ConfigError("ZoConfig.mask must be bound before estimation")
    factor = _dim_factor(cfg.scaling, cfg.mask)
    acc = [np.zeros(s) for s in params.sizes]
    for _ in range(cfg.samples_per_update):
        v = sample_masked_direction(params, cfg.mask, rng)
        est = two_point_estimate(obj, params, batch, v, cfg.beta, factor)
        for blk, e in zip(acc, est.blocks):
            blk += e
    inv = 1.0 / cfg.samples_per_update
    return LayeredParams.from_blocks([blk * inv for blk in acc], params.names)


def smoothed_value(
    obj: Objective,
    params: LayeredParams,
    beta: float,
    n_samples: int,
    rng: np.random.Generator,
) -> tuple[float, float]:
    """Monte Carlo estimate of E_v[f(theta + beta*v)] with standard error.

    beta = 0 short-circuits to the exact value with zero standard error.
    """
    if n_samples < 2:
        raise ConfigError("n_samples must be >= 2")
    if beta == 0.0:
        return obj.value(params), 0.0
    x0 = flatten(params)
    d = x0.size
    values = np.empty(n_samples)
    pos = 0
    while pos < n_samples:
        m = min(_CHUNK, n_samples - pos)
        pts = x0[None, :] + beta * rng.standard_normal((m, d))
        values[pos : pos + m] = obj.values_at(pts)
        pos += m
    mean = float(values.mean())
    std_err = float(values.std(ddof=1) / np.sqrt(n_samples))
    return mean, std_err


def estimator_moments(
    obj: Objective,
    params: LayeredParams,
    batch: Batch | None,
    cfg: ZoConfig,
    n_trials: int,
    rng: np.random.Generator,
) -> tuple[LayeredParams, float]:
    """Empirical mean vector and total variance E||g_hat - mean||^2 of
    single-sample estimates."""
    if n_trials < 100:
        raise ConfigError("n_trials must be >= 100")
    mask = cfg.mask if cfg.mask is not None else LayerMask.full(params)
    factor = _dim_factor(cfg.scaling, mask)
    x0 = flatten(params)
    d = x0.size
    sel_cols = _selected_columns(params, mask)

    if obj.eval_many is not None:
        mean_acc = np.zeros(d)
        sq_acc = 0.0
        rows = []
        pos = 0
        while pos < n_trials:
            m = min(_CHUNK, n_trials - pos)
            v = np.zeros((m, d))
            v[:, sel_cols] = rng.standard_normal((m, sel_cols.size))
            f_plus = obj.values_at(x0[None, :] + cfg.beta * v, batch)
            f_minus = obj.values_at(x0[None, :] - cfg.beta * v, batch)
            coeff = factor * (f_plus - f_minus) / (2.0 * cfg.beta)
            est = coeff[:, None] * v
            rows.append(est)
            pos += m
        est_all = np.vstack(rows)
    else:
        est_all = np.empty((n_trials, d))
        for t in range(n_trials):
            v = sample_masked_direction(params, mask, rng)
            est_all[t] = flatten(two_point_estimate(obj, params, batch, v, cfg.beta, factor))
    mean_vec = est_all.mean(axis=0)
    total_var = float(np.mean(np.sum((est_all - mean_vec) ** 2, axis=1)))
    return unflatten(mean_vec, params), total_var


def _selected_columns(template: LayeredParams, mask: LayerMask) -> np.ndarray:
    cols = []
    pos = 0
    for i, size in enumerate(template.sizes):
        if mask.covers(i):
            cols.extend(range(pos, pos + size))
        pos += size
    return np.asarray(cols, dtype=np.intp)
