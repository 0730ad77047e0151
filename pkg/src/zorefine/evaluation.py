"""Robustness-gap estimation and the perturbation evaluation suite.

The robustness gap at scale rho is the mean loss increase under isotropic
Gaussian parameter noise, E_v[f(theta + rho*v)] - f(theta).  The suite
evaluates a list of perturbation specs against one model and reports loss,
accuracy, and the attack-success analog (fraction of harmful-flagged
inputs the perturbed classifier complies with).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ZorefineError
from .objectives import Dataset, MlpSpec, Objective, mlp_objective, mlp_predict
from .params import LayeredParams
from .perturb import PerturbSpec, apply
from .rng import stream
from .zo import smoothed_value

__all__ = [
    "RobGapEstimate",
    "EvalRow",
    "robustness_gap",
    "asr_analog",
    "accuracy_of",
    "perturbed_eval_suite",
    "rows_to_csv",
]


@dataclass(frozen=True)
class RobGapEstimate:
    mean: float
    std_err: float
    rho: float
    n_samples: int


def robustness_gap(
    obj: Objective,
    params: LayeredParams,
    rho: float,
    n_samples: int,
    rng: np.random.Generator,
) -> RobGapEstimate:
    """Monte Carlo E_v[f(theta + rho*v)] - f(theta); rho = 0 is exactly 0."""
    if rho == 0.0:
        return RobGapEstimate(0.0, 0.0, 0.0, n_samples)
    base = obj.value(params)
    mean, std_err = smoothed_value(obj, params, rho, n_samples, rng)
    return RobGapEstimate(mean - base, std_err, rho, n_samples)


def asr_analog(mlp_spec: MlpSpec, params: LayeredParams, data: Dataset) -> float:
    """Fraction of harmful-flagged inputs classified comply (label 1)."""
    harmful = data.inputs[data.harmful_flag]
    if harmful.shape[0] == 0:
        raise ZorefineError("dataset has no harmful-flagged rows")
    preds = mlp_predict(mlp_spec, params, harmful)
    return float(np.mean(preds == 1))


def accuracy_of(mlp_spec: MlpSpec, params: LayeredParams, data: Dataset) -> float:
    """Accuracy on clean labels over the whole dataset."""
    preds = mlp_predict(mlp_spec, params, data.inputs)
    return float(np.mean(preds == data.labels))


@dataclass(frozen=True)
class EvalRow:
    spec: str
    level: str
    base_loss: float
    perturbed_loss: float | None
    delta_loss: float | None
    rob_gap_mean: float | None
    rob_gap_stderr: float | None
    accuracy: float | None
    asr: float | None
    error: str | None
    seed: int


_CSV_COLUMNS = (
    "spec",
    "level",
    "base_loss",
    "perturbed_loss",
    "delta_loss",
    "rob_gap_mean",
    "rob_gap_stderr",
    "accuracy",
    "asr_analog",
    "error",
)


def rows_to_csv(rows: list[EvalRow], path) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(",".join(_CSV_COLUMNS) + "\n")
        for r in rows:
            cells = [
                r.spec,
                r.level,
                _cell(r.base_loss),
                _cell(r.perturbed_loss),
                _cell(r.delta_loss),
                _cell(r.rob_gap_mean),
                _cell(r.rob_gap_stderr),
                _cell(r.accuracy),
                _cell(r.asr),
                r.error if r.error is not None else "",
            ]
            fh.write(",".join(cells) + "\n")


def _cell(v) -> str:
    return "" if v is None else repr(float(v))


def _is_stochastic(spec: PerturbSpec) -> bool:
    return spec.kind in ("weight_noise", "activation_noise")


def perturbed_eval_suite(
    obj: Objective,
    params: LayeredParams,
    specs: list[PerturbSpec],
    data: Dataset | None,
    n_repeats: int,
    seed: int,
    mlp_spec: MlpSpec | None = None,
    rob_gap_samples: int = 200,
    default_rho: float = 0.1,
) -> list[EvalRow]:
    """One row per spec: base vs perturbed loss, matched-rho robustness gap,
    accuracy, and the attack-success analog.

    Stochastic specs are averaged over n_repeats independent draws keyed by
    (seed, row, repeat); quantization and identity are single-shot.  A row
    that fails is captured in its error column and the suite continues.
    The rob_gap column matches rho to the weight-noise sigma and falls back
    to default_rho for non-Gaussian rows, where it is supplementary.
    """
    if not specs:
        raise ZorefineError("spec list must be non-empty")
    base_loss = obj.value(params)
    gap_cache: dict[float, RobGapEstimate] = {}
    rows: list[EvalRow] = []
    for row_idx, spec in enumerate(specs):
        try:
            rows.append(
                _eval_one(
                    obj, params, spec, data, n_repeats, seed, row_idx, mlp_spec,
                    base_loss, gap_cache, rob_gap_samples, default_rho,
                )
            )
        except ZorefineError as exc:
            rows.append(
                EvalRow(
                    spec=spec.text(), level=spec.level(), base_loss=base_loss,
                    perturbed_loss=None, delta_loss=None, rob_gap_mean=None,
                    rob_gap_stderr=None, accuracy=None, asr=None,
                    error=f"{type(exc).__name__}: {exc}", seed=seed,
                )
            )
    return rows


def _eval_one(
    obj, params, spec, data, n_repeats, seed, row_idx, mlp_spec,
    base_loss, gap_cache, rob_gap_samples, default_rho,
) -> EvalRow:
    rho = spec.sigma if spec.kind == "weight_noise" else default_rho
    if rho not in gap_cache:
        gap_cache[rho] = robustness_gap(
            obj, params, rho, rob_gap_samples, stream(seed, "robgap", row_idx)
        )
    gap = gap_cache[rho]
    repeats = n_repeats if _is_stochastic(spec) else 1
    losses, accs, asrs = [], [], []
    for rep in range(repeats):
        rng = stream(seed, "eval_perturb", row_idx, rep)
        p_params, p_spec = apply(params, spec, rng, mlp_spec=mlp_spec)
        if p_spec is not None and data is not None:
            p_obj = mlp_objective(p_spec, data)
            losses.append(p_obj.value(p_params))
            accs.append(accuracy_of(p_spec, p_params, data))
            asrs.append(asr_analog(p_spec, p_params, data))
        else:
            losses.append(obj.value(p_params))
    loss = float(np.mean(losses))
    return EvalRow(
        spec=spec.text(),
        level=spec.level(),
        base_loss=base_loss,
        perturbed_loss=loss,
        delta_loss=loss - base_loss,
        rob_gap_mean=gap.mean,
        rob_gap_stderr=gap.std_err,
        accuracy=float(np.mean(accs)) if accs else None,
        asr=float(np.mean(asrs)) if asrs else None,
        error=None,
        seed=seed,
    )
