"""Two-stage training: first-order alignment and targeted ZO refinement.

Stage I is SGD with optional momentum and decoupled weight decay.  Stage
III estimates masked ZO gradients and updates only the selected layers.
Batches and directions come from counter-based streams keyed by step, so a
run is reproducible from (config, seed) alone.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, GradUnavailable, NonFiniteLoss
from .objectives import Batch, Dataset, Objective
from .params import LayeredParams, LayerMask, flatten, unflatten
from .rng import stream
from .zo import ZoConfig, zo_grad_estimate

__all__ = [
    "FoConfig",
    "ZoRefineConfig",
    "lr_at",
    "fo_align",
    "zo_refine",
    "save_checkpoint",
    "load_checkpoint",
]

_FO_SCHEDULERS = ("constant_with_warmup", "cosine")
_ZO_SCHEDULERS = ("cosine", "constant")


@dataclass(frozen=True)
class FoConfig:
    steps: int = 100
    lr: float = 1e-2
    momentum: float = 0.0
    scheduler: str = "constant_with_warmup"
    warmup_ratio: float = 0.05
    weight_decay: float = 0.0
    batch_size: int = 32

    def __post_init__(self):
        if self.steps < 0:
            raise ConfigError("steps must be >= 0")
        if self.steps > 0 and self.lr <= 0:
            raise ConfigError("lr must be > 0 when steps > 0")
        if not 0 <= self.momentum < 1:
            raise ConfigError("momentum must be in [0, 1)")
        if self.scheduler not in _FO_SCHEDULERS:
            raise ConfigError(f"scheduler must be one of {_FO_SCHEDULERS}")
        if not 0 <= self.warmup_ratio < 1:
            raise ConfigError("warmup_ratio must be in [0, 1)")
        if self.weight_decay < 0:
            raise ConfigError("weight_decay must be >= 0")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")


@dataclass(frozen=True)
class ZoRefineConfig:
    steps: int = 10
    lr: float = 5e-2
    zo: ZoConfig = ZoConfig(beta=1.0, samples_per_update=8)
    scheduler: str = "cosine"
    weight_decay: float = 1e-4
    batch_size: int = 32

    def __post_init__(self):
        if self.steps < 0:
            raise ConfigError("steps must be >= 0")
        if self.steps > 0 and self.lr <= 0:
            raise ConfigError("lr must be > 0 when steps > 0")
        if self.scheduler not in _ZO_SCHEDULERS:
            raise ConfigError(f"scheduler must be one of {_ZO_SCHEDULERS}")
        if self.weight_decay < 0:
            raise ConfigError("weight_decay must be >= 0")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")


def lr_at(step: int, total: int, lr: float, scheduler: str, warmup_ratio: float = 0.0) -> float:
    """Learning rate at a 0-indexed step.

    Warmup ramps linearly as lr*(step+1)/W over W = ceil(warmup_ratio*total)
    steps.  After warmup, constant_with_warmup holds lr and cosine follows
    lr * 0.5 * (1 + cos(pi * step / total)).
    """
    if not 0 <= step < total:
        raise ConfigError(f"step {step} outside [0, {total})")
    warm = math.ceil(warmup_ratio * total)
    if step < warm:
        return lr * (step + 1) / warm
    if scheduler == "cosine":
        return lr * 0.5 * (1.0 + math.cos(math.pi * step / total))
    return lr


def _sample_batch(data: Dataset | None, batch_size: int, rng: np.random.Generator) -> Batch | None:
    if data is None:
        return None
    take = min(batch_size, data.n)
    return Batch.of(rng.choice(data.n, size=take, replace=False))


def fo_align(
    obj: Objective,
    params: LayeredParams,
    cfg: FoConfig,
    data: Dataset | None,
    seed: int,
) -> tuple[LayeredParams, list[float]]:
    """SGD with momentum and decoupled weight decay; returns final params
    and the per-step loss on each step's batch (before the update)."""
    if cfg.steps > 0 and not obj.has_grad:
        raise GradUnavailable("first-order alignment needs an exact gradient")
    trace: list[float] = []
    velocity = [np.zeros(s) for s in params.sizes]
    for t in range(cfg.steps):
        batch = _sample_batch(data, cfg.batch_size, stream(seed, "fo_batch", t))
        try:
            loss = obj.value(params, batch)
        except NonFiniteLoss as exc:
            exc.trace = trace
            raise
        g = obj.grad(params, batch)
        eta = lr_at(t, cfg.steps, cfg.lr, cfg.scheduler, cfg.warmup_ratio)
        velocity = [cfg.momentum * v + gb for v, gb in zip(velocity, g.blocks)]
        new_blocks = [
            (1.0 - eta * cfg.weight_decay) * p - eta * v
            for p, v in zip(params.blocks, velocity)
        ]
        params = LayeredParams.from_blocks(new_blocks, params.names)
        trace.append(loss)
    return params, trace


def zo_refine(
    obj: Objective,
    params: LayeredParams,
    cfg: ZoRefineConfig,
    mask: LayerMask,
    data: Dataset | None,
    seed: int,
) -> tuple[LayeredParams, list[float]]:
    """Targeted ZO refinement: masked estimates, updates and decay touch
    only the selected layers; every other block is bit-identical after."""
    if cfg.steps > 0 and mask.masked_dim == 0:
        raise ConfigError("refinement mask selects no layers")
    trace: list[float] = []
    zo_cfg = cfg.zo.with_mask(mask)
    for t in range(cfg.steps):
        batch = _sample_batch(data, cfg.batch_size, stream(seed, "zo_batch", t))
        try:
            loss = obj.value(params, batch)
            estimate = zo_grad_estimate(obj, params, batch, zo_cfg, stream(seed, "zo_dir", t))
        except NonFiniteLoss as exc:
            exc.trace = trace
            raise
        eta = lr_at(t, cfg.steps, cfg.lr, cfg.scheduler, 0.0)
        new_blocks = []
        for i, (p, e) in enumerate(zip(params.blocks, estimate.blocks)):
            if mask.covers(i):
                new_blocks.append((1.0 - eta * cfg.weight_decay) * p - eta * e)
            else:
                new_blocks.append(p)
        params = LayeredParams.from_blocks(new_blocks, params.names)
        trace.append(loss)
    return params, trace


def save_checkpoint(path_base: str, params: LayeredParams, seed: int, stage: str) -> None:
    """Flat float64 little-endian blob plus a JSON sidecar with the layer
    manifest (names, sizes), seed, and stage tag."""
    vec = flatten(params).astype("<f8")
    blob = vec.tobytes()
    with open(path_base + ".bin", "wb") as fh:
        fh.write(blob)
    sidecar = {
        "layer_names": list(params.names),
        "layer_sizes": [int(s) for s in params.sizes],
        "seed": int(seed),
        "stage": stage,
        "dtype": "<f8",
        "sha256": hashlib.sha256(blob).hexdigest(),
    }
    with open(path_base + ".json", "w") as fh:
        json.dump(sidecar, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_checkpoint(path_base: str) -> tuple[LayeredParams, dict]:
    """Read a checkpoint pair; verifies the blob hash recorded at save."""
    with open(path_base + ".json") as fh:
        sidecar = json.load(fh)
    with open(path_base + ".bin", "rb") as fh:
        blob = fh.read()
    if hashlib.sha256(blob).hexdigest() != sidecar["sha256"]:
        raise ConfigError(f"checkpoint blob does not match its recorded hash: {path_base}")
    vec = np.frombuffer(blob, dtype="<f8")
    template = LayeredParams.from_blocks(
        [np.zeros(s) for s in sidecar["layer_sizes"]], sidecar["layer_names"]
    )
    return unflatten(vec.astype(np.float64), template), sidecar


def checkpoint_exists(path_base: str) -> bool:
    return os.path.exists(path_base + ".bin") and os.path.exists(path_base + ".json")
