"""Post-alignment perturbation operators.

Three operator families: absolute Gaussian weight noise, symmetric uniform
quantization of weight blocks (optionally of hidden activations), and
activation-noise specs consumed by the MLP forward pass.  All operators are
pure: inputs are never mutated.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ActivationNoiseOnAnalyticObjective, ConfigError
from .params import LayeredParams, LayerMask

__all__ = [
    "ActNoise",
    "PerturbSpec",
    "parse_spec",
    "add_weight_noise",
    "quantize_block",
    "quantize_rows",
    "quantize_model",
    "apply",
]


@dataclass(frozen=True)
class ActNoise:
    """Relative-scale Gaussian noise on hidden states: h + alpha*std(h)*eps.

    The seed pins the noise draw, so an augmented objective stays a pure
    function of (params, batch).
    """

    alpha: float
    seed: int


@dataclass(frozen=True)
class PerturbSpec:
    """One perturbation, tagged by kind.

    kind          parameters
    weight_noise  sigma > 0
    activation_noise  alpha > 0
    quantization  weight_bits in [2, 8], optional act_bits, layer subset
    identity      none (baseline row for evaluation tables)
    """

    kind: str
    sigma: float | None = None
    alpha: float | None = None
    weight_bits: int | None = None
    act_bits: int | None = None
    layer_set: tuple[int, ...] | None = None  # None means all layers

    def __post_init__(self):
        if self.kind == "weight_noise":
            if self.sigma is None or self.sigma <= 0:
                raise ConfigError("weight_noise needs sigma > 0")
        elif self.kind == "activation_noise":
            if self.alpha is None or self.alpha <= 0:
                raise ConfigError("activation_noise needs alpha > 0")
        elif self.kind == "quantization":
            if self.weight_bits is None or not 2 <= self.weight_bits <= 8:
                raise ConfigError("quantization needs weight_bits in [2, 8]")
            if self.act_bits is not None and not 2 <= self.act_bits <= 8:
                raise ConfigError("act_bits must be in [2, 8] when set")
        elif self.kind != "identity":
            raise ConfigError(f"unknown perturbation kind {self.kind!r}")

    @staticmethod
    def weight_noise(sigma: float) -> "PerturbSpec":
        return PerturbSpec("weight_noise", sigma=float(sigma))

    @staticmethod
    def activation_noise(alpha: float) -> "PerturbSpec":
        return PerturbSpec("activation_noise", alpha=float(alpha))

    @staticmethod
    def quantization(
        weight_bits: int, act_bits: int | None = None, layer_set: Sequence[int] | None = None
    ) -> "PerturbSpec":
        return PerturbSpec(
            "quantization",
            weight_bits=int(weight_bits),
            act_bits=None if act_bits is None else int(act_bits),
            layer_set=None if layer_set is None else tuple(sorted(int(i) for i in layer_set)),
        )

    @staticmethod
    def identity() -> "PerturbSpec":
        return PerturbSpec("identity")

    def text(self) -> str:
        """Canonical text form used in CLI flags and report rows."""
        if self.kind == "weight_noise":
            return f"wnoise:{_fmt_num(self.sigma)}"
        if self.kind == "activation_noise":
            return f"anoise:{_fmt_num(self.alpha)}"
        if self.kind == "quantization":
            act = self.act_bits if self.act_bits is not None else 16
            return f"quant:w{self.weight_bits}a{act}"
        return "identity"

    def level(self) -> str:
        """Level column for report tables (sigma, alpha, or wNaM)."""
        if self.kind == "weight_noise":
            return _fmt_num(self.sigma)
        if self.kind == "activation_noise":
            return _fmt_num(self.alpha)
        if self.kind == "quantization":
            act = self.act_bits if self.act_bits is not None else 16
            return f"w{self.weight_bits}a{act}"
        return ""


def _fmt_num(x: float) -> str:
    return repr(float(x)) if float(x) != int(x) else str(int(x))


def parse_spec(text: str) -> PerturbSpec:
    """Parse the canonical text form, e.g. wnoise:1.5, anoise:0.08, quant:w4a16."""
    text = text.strip().lower()
    if text in ("identity", "none"):
        return PerturbSpec.identity()
    try:
        kind, _, arg = text.partition(":")
        if kind == "wnoise":
            return PerturbSpec.weight_noise(float(arg))
        if kind == "anoise":
            return PerturbSpec.activation_noise(float(arg))
        if kind == "quant":
            if not arg.startswith("w"):
                raise ValueError(arg)
            wpart, _, apart = arg[1:].partition("a")
            wbits = int(wpart)
            abits = int(apart) if apart else 16
            return PerturbSpec.quantization(wbits, act_bits=abits if abits < 16 else None)
    except (ValueError, ConfigError) as exc:
        raise ConfigError(f"cannot parse perturbation spec {text!r}: {exc}") from exc
    raise ConfigError(f"cannot parse perturbation spec {text!r}")


def add_weight_noise(params: LayeredParams, sigma: float, rng: np.random.Generator) -> LayeredParams:
    """Add sigma * N(0,1) noise to every coordinate of every block."""
    if sigma < 0:
        raise ConfigError("sigma must be >= 0")
    if sigma == 0:
        return LayeredParams.from_blocks(params.blocks, params.names)
    blocks = [b + sigma * rng.standard_normal(b.size) for b in params.blocks]
    return LayeredParams.from_blocks(blocks, params.names)


def quantize_rows(x: np.ndarray, bits: int) -> np.ndarray:
    """Symmetric uniform quantization with a per-row scale.

    scale = max|row| / (2^(bits-1) - 1); values snap to scale * round(x/scale)
    with half-away-from-zero ties, clamped to the symmetric integer range.
    All-zero rows stay zero.
    """
    if not 2 <= bits <= 8:
        raise ConfigError("bits must be in [2, 8]")
    x = np.asarray(x, dtype=np.float64)
    qmax = float(2 ** (bits - 1) - 1)
    scale = np.max(np.abs(x), axis=-1, keepdims=True) / qmax
    safe = np.where(scale > 0, scale, 1.0)
    levels = np.copysign(np.floor(np.abs(x / safe) + 0.5), x)
    levels = np.clip(levels, -qmax, qmax)
    return np.where(scale > 0, levels * safe, 0.0)


def quantize_block(weights: np.ndarray, bits: int) -> np.ndarray:
    """Quantize one flat block with a single per-block scale."""
    w = np.asarray(weights, dtype=np.float64).reshape(-1)
    if w.size == 0:
        raise ConfigError("empty block")
    return quantize_rows(w[None, :], bits)[0]


def quantize_model(params: LayeredParams, spec: PerturbSpec) -> LayeredParams:
    """Replace each layer in the spec's layer set by its quantized block."""
    if spec.kind != "quantization":
        raise ConfigError("quantize_model needs a quantization spec")
    targets = set(range(params.num_layers)) if spec.layer_set is None else set(spec.layer_set)
    blocks = [
        quantize_block(b, spec.weight_bits) if i in targets else b
        for i, b in enumerate(params.blocks)
    ]
    return LayeredParams.from_blocks(blocks, params.names)


def quantize_layer(params: LayeredParams, layer_index: int, bits: int) -> LayeredParams:
    """Quantize exactly one layer, leaving the rest untouched."""
    spec = PerturbSpec.quantization(bits, layer_set=(layer_index,))
    return quantize_model(params, spec)


def apply(
    params: LayeredParams,
    spec: PerturbSpec,
    rng: np.random.Generator,
    mlp_spec=None,
):
    """Apply a perturbation; returns (perturbed params, mlp spec or None).

    Weight noise and quantization act on params.  Activation noise (and the
    activation half of low-bit quantization) cannot touch params: it returns
    an augmented MLP spec applied at forward time.  Objectives without
    activations reject activation noise.
    """
    if spec.kind == "identity":
        return params, mlp_spec
    if spec.kind == "weight_noise":
        return add_weight_noise(params, spec.sigma, rng), mlp_spec
    if spec.kind == "quantization":
        out = quantize_model(params, spec)
        new_spec = mlp_spec
        if spec.act_bits is not None:
            if mlp_spec is None:
                raise ActivationNoiseOnAnalyticObjective(
                    "activation quantization needs a model with hidden activations"
                )
            new_spec = dataclasses.replace(mlp_spec, act_bits=spec.act_bits)
        return out, new_spec
    # activation noise
    if mlp_spec is None:
        raise ActivationNoiseOnAnalyticObjective(
            "activation noise needs a model with hidden activations"
        )
    noise = ActNoise(alpha=spec.alpha, seed=int(rng.integers(0, 2**63 - 1)))
    return params, dataclasses.replace(mlp_spec, act_noise=noise)


def mask_to_layer_set(mask: LayerMask) -> tuple[int, ...]:
    return mask.indices()
