"""Pipeline configuration: one JSON document drives every subcommand.

The document carries the seed, the objective (analytic instance or MLP +
dataset), both stage configs, sensitivity-scoring settings, and the
evaluation spec list.  Parsing is strict: unknown kinds, inconsistent
widths, or m > L are rejected up front.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Any

import numpy as np

from .errors import ConfigError
from .objectives import (
    Dataset,
    MlpSpec,
    Objective,
    cubic_bump_objective,
    init_mlp_params,
    make_refusal_dataset,
    mlp_objective,
    quadratic_objective,
)
from .params import LayeredParams, unflatten
from .perturb import PerturbSpec, parse_spec
from .rng import stream
from .training import FoConfig, ZoRefineConfig
from .zo import ZoConfig

__all__ = ["SensitivityConfig", "EvalConfig", "PipelineConfig", "build_problem"]

_STRATEGIES = ("robust", "snip", "wanda")


@dataclass(frozen=True)
class SensitivityConfig:
    rho: float | None = None  # None: match the largest weight-noise sigma under evaluation
    lam: float = 1.0
    n_trials: int = 8
    m: int = 2
    quant_bits: int = 4
    strategy: str = "robust"

    def __post_init__(self):
        if self.lam < 0:
            raise ConfigError("lambda must be >= 0")
        if self.n_trials < 1:
            raise ConfigError("n_trials must be >= 1")
        if self.m < 1:
            raise ConfigError("m must be >= 1")
        if not 2 <= self.quant_bits <= 8:
            raise ConfigError("quant_bits must be in [2, 8]")
        if self.strategy not in _STRATEGIES:
            raise ConfigError(f"strategy must be one of {_STRATEGIES}")


@dataclass(frozen=True)
class EvalConfig:
    specs: tuple[str, ...] = (
        "quant:w4a16",
        "quant:w4a4",
        "wnoise:1",
        "wnoise:2",
        "anoise:0.05",
        "anoise:0.08",
    )
    n_repeats: int = 10
    rob_gap_samples: int = 200
    default_rho: float = 0.1

    def __post_init__(self):
        if not self.specs:
            raise ConfigError("eval.specs must be non-empty")
        if self.n_repeats < 1:
            raise ConfigError("n_repeats must be >= 1")
        if self.rob_gap_samples < 2:
            raise ConfigError("rob_gap_samples must be >= 2")
        for s in self.specs:
            parse_spec(s)

    def parsed_specs(self) -> list[PerturbSpec]:
        return [parse_spec(s) for s in self.specs]


@dataclass(frozen=True)
class PipelineConfig:
    seed: int = 0
    objective: dict = field(
        default_factory=lambda: {
            "kind": "mlp",
            "widths": [4, 16, 16, 2],
            "init_scale": 1.0,
            "dataset": {"n": 240, "k": 4, "separation": 1.0, "spread": 0.35, "harmful_fraction": 0.5},
        }
    )
    fo: FoConfig = FoConfig()
    zo: ZoRefineConfig = ZoRefineConfig()
    sensitivity: SensitivityConfig = SensitivityConfig()
    eval: EvalConfig = EvalConfig()
    output_dir: str | None = None

    def __post_init__(self):
        _validate_objective(self.objective, self.sensitivity.m)

    def resolved_rho(self) -> float:
        """Sensitivity rho: explicit value, else the largest weight-noise
        sigma in the evaluation suite, else the default gap rho."""
        if self.sensitivity.rho is not None:
            return self.sensitivity.rho
        sigmas = [sp.sigma for sp in self.eval.parsed_specs() if sp.kind == "weight_noise"]
        return max(sigmas) if sigmas else self.eval.default_rho

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "objective": json.loads(json.dumps(self.objective)),
            "fo": asdict(self.fo),
            "zo": {
                "steps": self.zo.steps,
                "lr": self.zo.lr,
                "beta": self.zo.zo.beta,
                "samples_per_update": self.zo.zo.samples_per_update,
                "scaling": self.zo.zo.scaling,
                "scheduler": self.zo.scheduler,
                "weight_decay": self.zo.weight_decay,
                "batch_size": self.zo.batch_size,
            },
            "sensitivity": {
                "rho": self.sensitivity.rho,
                "lambda": self.sensitivity.lam,
                "n_trials": self.sensitivity.n_trials,
                "m": self.sensitivity.m,
                "quant_bits": self.sensitivity.quant_bits,
                "strategy": self.sensitivity.strategy,
            },
            "eval": {
                "specs": list(self.eval.specs),
                "n_repeats": self.eval.n_repeats,
                "rob_gap_samples": self.eval.rob_gap_samples,
                "default_rho": self.eval.default_rho,
            },
            "output_dir": self.output_dir,
        }

    @staticmethod
    def from_dict(doc: dict) -> "PipelineConfig":
        try:
            zo_doc = dict(doc.get("zo", {}))
            zo_cfg = ZoRefineConfig(
                steps=int(zo_doc.get("steps", 10)),
                lr=float(zo_doc.get("lr", 5e-2)),
                zo=ZoConfig(
                    beta=float(zo_doc.get("beta", 1.0)),
                    samples_per_update=int(zo_doc.get("samples_per_update", 8)),
                    scaling=str(zo_doc.get("scaling", "gaussian_unit")),
                ),
                scheduler=str(zo_doc.get("scheduler", "cosine")),
                weight_decay=float(zo_doc.get("weight_decay", 1e-4)),
                batch_size=int(zo_doc.get("batch_size", 32)),
            )
            sens_doc = dict(doc.get("sensitivity", {}))
            sens = SensitivityConfig(
                rho=None if sens_doc.get("rho") is None else float(sens_doc["rho"]),
                lam=float(sens_doc.get("lambda", 1.0)),
                n_trials=int(sens_doc.get("n_trials", 8)),
                m=int(sens_doc.get("m", 2)),
                quant_bits=int(sens_doc.get("quant_bits", 4)),
                strategy=str(sens_doc.get("strategy", "robust")),
            )
            eval_doc = dict(doc.get("eval", {}))
            eval_cfg = EvalConfig(
                specs=tuple(eval_doc.get("specs", EvalConfig().specs)),
                n_repeats=int(eval_doc.get("n_repeats", 10)),
                rob_gap_samples=int(eval_doc.get("rob_gap_samples", 200)),
                default_rho=float(eval_doc.get("default_rho", 0.1)),
            )
            fo_doc = dict(doc.get("fo", {}))
            fo_cfg = FoConfig(
                steps=int(fo_doc.get("steps", 100)),
                lr=float(fo_doc.get("lr", 1e-2)),
                momentum=float(fo_doc.get("momentum", 0.0)),
                scheduler=str(fo_doc.get("scheduler", "constant_with_warmup")),
                warmup_ratio=float(fo_doc.get("warmup_ratio", 0.05)),
                weight_decay=float(fo_doc.get("weight_decay", 0.0)),
                batch_size=int(fo_doc.get("batch_size", 32)),
            )
            return PipelineConfig(
                seed=int(doc.get("seed", 0)),
                objective=dict(doc.get("objective", PipelineConfig().objective)),
                fo=fo_cfg,
                zo=zo_cfg,
                sensitivity=sens,
                eval=eval_cfg,
                output_dir=doc.get("output_dir"),
            )
        except (TypeError, ValueError, KeyError) as exc:
            raise ConfigError(f"malformed config: {exc}") from exc

    @staticmethod
    def from_json(path: str) -> "PipelineConfig":
        try:
            with open(path) as fh:
                doc = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(doc, dict):
            raise ConfigError("config document must be a JSON object")
        return PipelineConfig.from_dict(doc)

    def to_json(self, path: str) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")


def _num_layers_of(objective_doc: dict) -> int:
    kind = objective_doc.get("kind")
    if kind == "mlp":
        return len(objective_doc["widths"]) - 1
    if kind == "quadratic":
        sizes = objective_doc.get("layer_sizes")
        return len(sizes) if sizes else 1
    if kind == "cubic_bump":
        return 1
    raise ConfigError(f"unknown objective kind {kind!r}")


def _validate_objective(doc: dict, m: int) -> None:
    kind = doc.get("kind")
    if kind == "mlp":
        widths = doc.get("widths")
        ds = doc.get("dataset")
        if not isinstance(widths, (list, tuple)) or len(widths) < 3:
            raise ConfigError("mlp objective needs a widths chain of >= 3 entries")
        if not isinstance(ds, dict):
            raise ConfigError("mlp objective needs a dataset block")
        if int(ds.get("k", -1)) != int(widths[0]):
            raise ConfigError("dataset k must equal the first MLP width")
    elif kind == "quadratic":
        if "diag" not in doc:
            raise ConfigError("quadratic objective needs a diag eigenvalue list")
        sizes = doc.get("layer_sizes")
        if sizes is not None and sum(sizes) != len(doc["diag"]):
            raise ConfigError("layer_sizes must sum to the quadratic dimension")
    elif kind == "cubic_bump":
        if "a" not in doc or "clip_radius" not in doc:
            raise ConfigError("cubic_bump objective needs a and clip_radius")
    else:
        raise ConfigError(f"unknown objective kind {kind!r}")
    if m > _num_layers_of(doc):
        raise ConfigError(f"sensitivity.m={m} exceeds the layer count {_num_layers_of(doc)}")


def build_problem(
    cfg: PipelineConfig,
) -> tuple[Objective, Dataset | None, LayeredParams, MlpSpec | None]:
    """Materialize (objective, dataset, initial params, mlp spec) from the
    config, all seeded from cfg.seed."""
    doc = cfg.objective
    kind = doc["kind"]
    if kind == "mlp":
        ds_doc = doc["dataset"]
        data = make_refusal_dataset(
            seed=cfg.seed,
            n=int(ds_doc["n"]),
            k=int(ds_doc["k"]),
            separation=float(ds_doc.get("separation", 1.0)),
            spread=float(ds_doc.get("spread", 0.35)),
            harmful_fraction=float(ds_doc.get("harmful_fraction", 0.5)),
        )
        spec = MlpSpec(widths=tuple(int(w) for w in doc["widths"]))
        obj = mlp_objective(spec, data)
        scale = doc.get("init_scale", 1.0)
        params = init_mlp_params(spec, stream(cfg.seed, "init"), scale=scale)
        return obj, data, params, spec
    if kind == "quadratic":
        diag = np.asarray(doc["diag"], dtype=np.float64)
        obj = quadratic_objective(
            np.diag(diag),
            layer_sizes=doc.get("layer_sizes"),
            domain_radius=float(doc.get("domain_radius", 2.0)),
        )
        theta0 = doc.get("theta0")
        if theta0 is None:
            vec = np.ones(diag.size) / np.sqrt(diag.size)
        else:
            vec = np.asarray(theta0, dtype=np.float64)
        return obj, None, unflatten(vec, obj.template), None
    if kind == "cubic_bump":
        obj = cubic_bump_objective(float(doc["a"]), float(doc["clip_radius"]))
        theta0 = doc.get("theta0", [0.0])
        return obj, None, unflatten(np.asarray(theta0, dtype=np.float64), obj.template), None
    raise ConfigError(f"unknown objective kind {kind!r}")
