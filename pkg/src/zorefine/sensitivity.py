"""Layer-wise robustness sensitivity scoring and layer selection.

Each layer gets two scores: the loss increase when only that layer is hit
by Gaussian noise at scale rho (averaged over trials), and the loss delta
when only that layer is quantized.  Their lambda-weighted sum ranks layers;
the top m become the refinement mask.  SNIP- and WANDA-style saliency
scores are included as pruning-oriented baselines for comparison.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ActivationsUnavailable, BadM, GradUnavailable
from .objectives import Batch, Dataset, MlpSpec, Objective
from .params import LayeredParams, LayerMask, axpy, sample_masked_direction
from .perturb import quantize_layer
from .rng import stream

__all__ = [
    "SensitivityReport",
    "noise_sensitivity",
    "quant_sensitivity",
    "combined_score",
    "top_m_layers",
    "minmax_normalize",
    "snip_layer_scores",
    "wanda_layer_scores",
    "score_all_layers",
]


@dataclass(frozen=True)
class SensitivityReport:
    layer_indices: tuple[int, ...]
    layer_names: tuple[str, ...]
    s_noise: tuple[float, ...]
    s_quant: tuple[float, ...]
    s_combined: tuple[float, ...]
    lam: float
    rho: float
    n_trials: int
    selected: LayerMask
    normalized: tuple[float, ...] | None = None
    snip: tuple[float, ...] | None = None
    wanda: tuple[float, ...] | None = None

    def to_csv(self, path) -> None:
        """Fixed column order; SNIP/WANDA columns appended when present."""
        cols = ["layer_index", "layer_name", "s_noise", "s_quant", "s_combined", "normalized", "selected"]
        if self.snip is not None:
            cols.append("snip")
        if self.wanda is not None:
            cols.append("wanda")
        with open(path, "w", newline="") as fh:
            fh.write(",".join(cols) + "\n")
            for i in range(len(self.layer_indices)):
                row = [
                    str(self.layer_indices[i]),
                    self.layer_names[i],
                    repr(float(self.s_noise[i])),
                    repr(float(self.s_quant[i])),
                    repr(float(self.s_combined[i])),
                    repr(float(self.normalized[i])) if self.normalized is not None else "",
                    str(int(self.selected.covers(self.layer_indices[i]))),
                ]
                if self.snip is not None:
                    row.append(repr(float(self.snip[i])))
                if self.wanda is not None:
                    row.append(repr(float(self.wanda[i])))
                fh.write(",".join(row) + "\n")


def noise_sensitivity(
    obj: Objective,
    params: LayeredParams,
    layer: int,
    rho: float,
    n_trials: int,
    rng: np.random.Generator,
    batch: Batch | None = None,
) -> float:
    """Mean loss increase from perturbing only this layer at scale rho."""
    if n_trials < 1:
        raise ValueError("n_trials must be >= 1")
    if rho <= 0:
        raise ValueError("rho must be > 0")
    base = obj.value(params, batch)
    mask = LayerMask.for_params(params, (layer,))
    total = 0.0
    for _ in range(n_trials):
        v = sample_masked_direction(params, mask, rng)
        total += obj.value(axpy(params, v, rho), batch) - base
    return total / n_trials


def quant_sensitivity(
    obj: Objective,
    params: LayeredParams,
    layer: int,
    bits: int,
    batch: Batch | None = None,
) -> float:
    """Deterministic loss delta from quantizing exactly this layer."""
    base = obj.value(params, batch)
    return obj.value(quantize_layer(params, layer, bits), batch) - base


def combined_score(s_noise: float, s_quant: float, lam: float) -> float:
    """s_noise + lambda * s_quant; negative quant deltas are legal."""
    if lam < 0:
        raise ValueError("lambda must be >= 0")
    return s_noise + lam * s_quant


def top_m_layers(scores, m: int, template: LayeredParams) -> LayerMask:
    """The m largest-score layers; ties break toward the lower index."""
    scores = list(scores)
    if not 1 <= m <= len(scores):
        raise BadM(f"m={m} outside [1, {len(scores)}]")
    if len(scores) != template.num_layers:
        raise BadM("scores do not align with the template's layers")
    order = sorted(range(len(scores)), key=lambda i: (-scores[i], i))
    return LayerMask.for_params(template, order[:m])


def minmax_normalize(scores) -> list[float]:
    """(s - min) / (max - min); all-equal inputs map to all zeros."""
    arr = np.asarray(list(scores), dtype=np.float64)
    if arr.size < 1:
        raise ValueError("need at least one score")
    lo, hi = float(arr.min()), float(arr.max())
    if hi == lo:
        return [0.0] * arr.size
    return [float(v) for v in (arr - lo) / (hi - lo)]


def snip_layer_scores(obj: Objective, params: LayeredParams, batch: Batch | None = None) -> list[float]:
    """Per-layer sum of |gradient * weight| (connection saliency)."""
    if not obj.has_grad:
        raise GradUnavailable("SNIP scores need an exact gradient")
    g = obj.grad(params, batch)
    return [float(np.sum(np.abs(gb * pb))) for gb, pb in zip(g.blocks, params.blocks)]


def wanda_layer_scores(
    mlp_spec: MlpSpec,
    obj: Objective,
    params: LayeredParams,
    batch: Batch | None = None,
) -> list[float]:
    """Per-layer sum of |W_ij| * ||x_j||_2 over the probe sample.

    x_j is the j-th input activation column feeding the layer.  Biases have
    no input activation and are excluded, so a layer with all-zero inputs
    scores exactly zero.
    """
    if obj.layer_inputs_fn is None:
        raise ActivationsUnavailable("WANDA scores need layer input activations")
    inputs = obj.layer_inputs_fn(params, batch)
    shapes = mlp_spec.layer_shapes()
    scores = []
    for i, shape in enumerate(shapes):
        out, inp = shape
        w = params.blocks[i][: out * inp].reshape(out, inp)
        col_norms = np.linalg.norm(inputs[i], axis=0)
        scores.append(float(np.sum(np.abs(w) * col_norms[None, :])))
    return scores


def score_all_layers(
    obj: Objective,
    params: LayeredParams,
    *,
    rho: float,
    lam: float,
    n_trials: int,
    quant_bits: int,
    m: int,
    seed: int,
    batch: Batch | None = None,
    mlp_spec: MlpSpec | None = None,
    include_baselines: bool = False,
) -> SensitivityReport:
    """Score every layer, select Top-m, and assemble the report.

    Per-layer noise draws come from streams keyed by (seed, layer), so
    scoring layers concurrently cannot change the numbers.
    """
    n_layers = params.num_layers
    s_noise = []
    s_quant = []
    for layer in range(n_layers):
        rng = stream(seed, "sensitivity", layer)
        s_noise.append(noise_sensitivity(obj, params, layer, rho, n_trials, rng, batch))
        s_quant.append(quant_sensitivity(obj, params, layer, quant_bits, batch))
    combined = [combined_score(sn, sq, lam) for sn, sq in zip(s_noise, s_quant)]
    selected = top_m_layers(combined, m, params)
    snip = wanda = None
    if include_baselines:
        snip = tuple(snip_layer_scores(obj, params, batch)) if obj.has_grad else None
        if mlp_spec is not None and obj.layer_inputs_fn is not None:
            wanda = tuple(wanda_layer_scores(mlp_spec, obj, params, batch))
    return SensitivityReport(
        layer_indices=tuple(range(n_layers)),
        layer_names=params.names,
        s_noise=tuple(s_noise),
        s_quant=tuple(s_quant),
        s_combined=tuple(combined),
        lam=lam,
        rho=rho,
        n_trials=n_trials,
        selected=selected,
        normalized=tuple(minmax_normalize(combined)),
        snip=snip,
        wanda=wanda,
    )
