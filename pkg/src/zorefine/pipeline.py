"""Full pipeline driver: align, select layers, refine, evaluate.

A run is a pure function of (config, seed): every stochastic site pulls
from a counter-based stream, so reruns produce bit-identical reports.
"""

from __future__ import annotations

from dataclasses import dataclass

from .config import PipelineConfig, build_problem
from .errors import StageError, ZorefineError
from .evaluation import EvalRow, accuracy_of, asr_analog, perturbed_eval_suite
from .params import LayeredParams, LayerMask
from .sensitivity import SensitivityReport, score_all_layers, top_m_layers
from .training import fo_align, zo_refine

__all__ = ["RunReport", "run_pipeline"]


@dataclass(frozen=True)
class RunReport:
    config: dict
    seed: int
    fo_loss_trace: tuple[float, ...]
    zo_loss_trace: tuple[float, ...]
    sensitivity: SensitivityReport
    selection: tuple[int, ...]
    robustness_table: tuple[EvalRow, ...]
    clean_loss: float
    clean_accuracy: float | None
    clean_asr: float | None
    params_aligned: LayeredParams
    params_final: LayeredParams

    def summary_dict(self) -> dict:
        """JSON-friendly view (parameters live in checkpoints, not here)."""
        return {
            "config": self.config,
            "seed": self.seed,
            "fo_loss_trace": [float(x) for x in self.fo_loss_trace],
            "zo_loss_trace": [float(x) for x in self.zo_loss_trace],
            "selection": list(self.selection),
            "clean_loss": self.clean_loss,
            "clean_accuracy": self.clean_accuracy,
            "clean_asr": self.clean_asr,
            "robustness_table": [
                {
                    "spec": r.spec,
                    "level": r.level,
                    "base_loss": r.base_loss,
                    "perturbed_loss": r.perturbed_loss,
                    "delta_loss": r.delta_loss,
                    "rob_gap_mean": r.rob_gap_mean,
                    "rob_gap_stderr": r.rob_gap_stderr,
                    "accuracy": r.accuracy,
                    "asr_analog": r.asr,
                    "error": r.error,
                }
                for r in self.robustness_table
            ],
        }


def _stage(tag: str):
    def deco(fn):
        def wrapped(*args, **kwargs):
            try:
                return fn(*args, **kwargs)
            except ZorefineError as exc:
                raise StageError(tag, exc) from exc

        return wrapped

    return deco


def select_mask(
    report: SensitivityReport, strategy: str, m: int, template: LayeredParams
) -> LayerMask:
    """Refinement mask under the configured selection strategy."""
    if strategy == "robust":
        return report.selected
    if strategy == "snip":
        if report.snip is None:
            raise ZorefineError("SNIP scores unavailable for this objective")
        return top_m_layers(report.snip, m, template)
    if strategy == "wanda":
        if report.wanda is None:
            raise ZorefineError("WANDA scores unavailable for this objective")
        return top_m_layers(report.wanda, m, template)
    raise ZorefineError(f"unknown selection strategy {strategy!r}")


def run_pipeline(cfg: PipelineConfig) -> RunReport:
    """Stage I alignment, Stage II scoring + Top-m, Stage III targeted
    refinement, then the perturbation evaluation suite."""
    obj, data, params0, mlp_spec = _stage("setup")(build_problem)(cfg)

    params_fo, fo_trace = _stage("align")(fo_align)(obj, params0, cfg.fo, data, cfg.seed)

    report = _stage("sensitivity")(score_all_layers)(
        obj,
        params_fo,
        rho=cfg.resolved_rho(),
        lam=cfg.sensitivity.lam,
        n_trials=cfg.sensitivity.n_trials,
        quant_bits=cfg.sensitivity.quant_bits,
        m=cfg.sensitivity.m,
        seed=cfg.seed,
        mlp_spec=mlp_spec,
        include_baselines=True,
    )
    mask = _stage("sensitivity")(select_mask)(
        report, cfg.sensitivity.strategy, cfg.sensitivity.m, params_fo
    )

    if cfg.zo.steps > 0:
        params_final, zo_trace = _stage("refine")(zo_refine)(
            obj, params_fo, cfg.zo, mask, data, cfg.seed
        )
    else:
        params_final, zo_trace = params_fo, []

    rows = _stage("eval")(perturbed_eval_suite)(
        obj,
        params_final,
        cfg.eval.parsed_specs(),
        data,
        cfg.eval.n_repeats,
        cfg.seed,
        mlp_spec=mlp_spec,
        rob_gap_samples=cfg.eval.rob_gap_samples,
        default_rho=cfg.eval.default_rho,
    )

    clean_loss = obj.value(params_final)
    clean_acc = clean_asr = None
    if mlp_spec is not None and data is not None:
        clean_acc = accuracy_of(mlp_spec, params_final, data)
        clean_asr = asr_analog(mlp_spec, params_final, data)

    return RunReport(
        config=cfg.to_dict(),
        seed=cfg.seed,
        fo_loss_trace=tuple(fo_trace),
        zo_loss_trace=tuple(zo_trace),
        sensitivity=report,
        selection=mask.indices(),
        robustness_table=tuple(rows),
        clean_loss=clean_loss,
        clean_accuracy=clean_acc,
        clean_asr=clean_asr,
        params_aligned=params_fo,
        params_final=params_final,
    )
