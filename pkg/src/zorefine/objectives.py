"""Objective zoo.

Analytic test functions with certified constants (quadratics, a saturated
cubic with an asymmetric neighborhood, constants/linears for degenerate
cases) plus a small tanh MLP classifier with built-in reverse-mode
gradients that stands in for the safety-aligned model at desk scale.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import GradUnavailable, NonFiniteLoss, NotPSD
from .params import LayeredParams, flatten, unflatten
from .perturb import ActNoise, quantize_rows
from .rng import stream

__all__ = [
    "Batch",
    "Dataset",
    "Descriptor",
    "Objective",
    "MlpSpec",
    "quadratic_objective",
    "cubic_bump_objective",
    "constant_objective",
    "linear_objective",
    "mlp_objective",
    "init_mlp_params",
    "mlp_predict",
    "make_refusal_dataset",
    "dataset_to_csv",
    "check_gradient",
]


@dataclass(frozen=True)
class Batch:
    """Sample indices into a dataset; empty for deterministic analytic objectives."""

    indices: tuple[int, ...] = ()

    @staticmethod
    def of(indices) -> "Batch":
        return Batch(tuple(int(i) for i in indices))

    def __len__(self) -> int:
        return len(self.indices)


@dataclass(frozen=True)
class Dataset:
    """Binary refusal task: label 1 = comply, 0 = refuse."""

    inputs: np.ndarray  # (n, k) float64
    labels: np.ndarray  # (n,) int, values in {0, 1}
    harmful_flag: np.ndarray  # (n,) bool, True marks the harmful-prompt analog

    def __post_init__(self):
        if self.inputs.ndim != 2 or self.inputs.shape[0] < 1:
            raise ValueError("inputs must be a non-empty (n, k) matrix")
        if self.labels.shape != (self.inputs.shape[0],):
            raise ValueError("labels must align with inputs")
        if self.harmful_flag.shape != (self.inputs.shape[0],):
            raise ValueError("harmful_flag must align with inputs")

    @property
    def n(self) -> int:
        return self.inputs.shape[0]

    @property
    def k(self) -> int:
        return self.inputs.shape[1]

    def select(self, batch: Batch | None) -> tuple[np.ndarray, np.ndarray]:
        if batch is None or len(batch) == 0:
            return self.inputs, self.labels
        idx = np.asarray(batch.indices, dtype=np.intp)
        return self.inputs[idx], self.labels[idx]


@dataclass(frozen=True)
class Descriptor:
    """Known constants of an objective, where analytically available.

    l_lip is certified globally for saturated objectives, and on the ball
    ||theta|| <= domain_radius for quadratics (which are not globally
    Lipschitz).
    """

    name: str
    l_lip: float | None = None
    h_smooth: float | None = None
    mu_pl: float | None = None
    curv_bound: float | None = None
    eff_rank: float | None = None
    trace: float | None = None
    domain_radius: float | None = None


@dataclass(frozen=True)
class Objective:
    """Evaluable loss with optional exact gradient.

    eval_fn/grad_fn are pure given (params, batch); stochastic objectives
    carry their randomness as an explicit seed, never as hidden state.
    eval_many is an optional vectorized path over flat parameter rows used
    by the Monte Carlo diagnostics.
    """

    eval_fn: Callable[[LayeredParams, Batch | None], float]
    descriptor: Descriptor
    template: LayeredParams
    grad_fn: Callable[[LayeredParams, Batch | None], LayeredParams] | None = None
    eval_many: Callable[[np.ndarray, Batch | None], np.ndarray] | None = None
    layer_inputs_fn: Callable[[LayeredParams, Batch | None], list[np.ndarray]] | None = None

    def value(self, params: LayeredParams, batch: Batch | None = None) -> float:
        v = float(self.eval_fn(params, batch))
        if not np.isfinite(v):
            raise NonFiniteLoss(f"objective {self.descriptor.name} returned {v}")
        return v

    def grad(self, params: LayeredParams, batch: Batch | None = None) -> LayeredParams:
        if self.grad_fn is None:
            raise GradUnavailable(f"objective {self.descriptor.name} has no exact gradient")
        return self.grad_fn(params, batch)

    @property
    def has_grad(self) -> bool:
        return self.grad_fn is not None

    def values_at(self, points: np.ndarray, batch: Batch | None = None) -> np.ndarray:
        """Evaluate rows of flat parameter vectors; loops when no fast path."""
        points = np.asarray(points, dtype=np.float64)
        if self.eval_many is not None:
            out = np.asarray(self.eval_many(points, batch), dtype=np.float64)
        else:
            out = np.array(
                [self.eval_fn(unflatten(row, self.template), batch) for row in points]
            )
        if not np.all(np.isfinite(out)):
            raise NonFiniteLoss(f"objective {self.descriptor.name} returned non-finite values")
        return out


def _zeros_template(sizes: Sequence[int], names: Sequence[str] | None = None) -> LayeredParams:
    return LayeredParams.from_blocks([np.zeros(s) for s in sizes], names)


def quadratic_objective(
    a_matrix: np.ndarray,
    layer_sizes: Sequence[int] | None = None,
    domain_radius: float = 2.0,
) -> Objective:
    """f(theta) = 0.5 * theta^T A theta with certified curvature constants.

    The Hessian is exactly A, so the descriptor carries mu = lambda_min,
    curv_bound = lambda_max, eff_rank = tr(A)/lambda_max, and a Lipschitz
    constant lambda_max * domain_radius valid on ||theta|| <= domain_radius.
    """
    A = np.asarray(a_matrix, dtype=np.float64)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise NotPSD("matrix must be square")
    scale = max(1.0, float(np.max(np.abs(A))))
    if not np.allclose(A, A.T, atol=1e-12 * scale):
        raise NotPSD("matrix is not symmetric")
    eigs = np.linalg.eigvalsh(A)
    lam_min, lam_max = float(eigs[0]), float(eigs[-1])
    if lam_min < -1e-10 * max(1.0, lam_max):
        raise NotPSD(f"matrix has negative eigenvalue {lam_min}")
    d = A.shape[0]
    sizes = tuple(layer_sizes) if layer_sizes is not None else (d,)
    if sum(sizes) != d:
        raise NotPSD(f"layer sizes sum {sum(sizes)} != matrix dim {d}")
    template = _zeros_template(sizes)
    tr = float(np.trace(A))

    def eval_fn(params: LayeredParams, batch: Batch | None = None) -> float:
        x = flatten(params)
        return 0.5 * float(x @ (A @ x))

    def grad_fn(params: LayeredParams, batch: Batch | None = None) -> LayeredParams:
        return unflatten(A @ flatten(params), template)

    def eval_many(points: np.ndarray, batch: Batch | None = None) -> np.ndarray:
        return 0.5 * np.einsum("ni,ni->n", points @ A, points)

    desc = Descriptor(
        name=f"quadratic_d{d}",
        l_lip=lam_max * domain_radius,
        h_smooth=lam_max,
        mu_pl=lam_min,
        curv_bound=lam_max,
        eff_rank=tr / lam_max if lam_max > 0 else float(d),
        trace=tr,
        domain_radius=domain_radius,
    )
    return Objective(eval_fn, desc, template, grad_fn=grad_fn, eval_many=eval_many)


def _soft_clamp(x: np.ndarray, c: float, w: float):
    """C2 squash: identity on [-c, c], saturating to +-(c+w) outside.

    Returns (s, s', s'').  Built from tanh so the seam at |x| = c matches
    value, slope 1, and curvature 0 on both sides.
    """
    x = np.asarray(x, dtype=np.float64)
    sign = np.sign(x)
    u = (np.abs(x) - c) / w
    outside = u > 0
    uo = np.where(outside, u, 0.0)
    t = np.tanh(uo)
    sech2 = 1.0 - t * t
    s = np.where(outside, sign * (c + w * t), x)
    s1 = np.where(outside, sech2, 1.0)
    s2 = np.where(outside, -sign * (2.0 / w) * t * sech2, 0.0)
    return s, s1, s2


def cubic_bump_objective(a: float, clip_radius: float) -> Objective:
    """x^2 + a*x^3 near the origin, smoothly saturated into a globally
    Lipschitz, h-smooth function.

    Stationary at 0 with an asymmetric neighborhood (for a != 0), so the
    smoothed gradient at 0 is 3*a*rho^2 in the interior regime.  L and h in
    the descriptor are estimated on a dense grid covering the saturation
    zone; outside it the derivative is exponentially negligible.
    """
    if a == 0:
        raise ValueError("a must be nonzero (a = 0 has no asymmetry)")
    if clip_radius <= 0:
        raise ValueError("clip_radius must be positive")
    c = float(clip_radius)
    w = c  # saturation width tied to the interior radius

    def f_parts(x: np.ndarray):
        s, s1, s2 = _soft_clamp(x, c, w)
        p = s * s + a * s**3
        p1 = 2.0 * s + 3.0 * a * s * s
        p2 = 2.0 + 6.0 * a * s
        return p, p1 * s1, p2 * s1 * s1 + p1 * s2

    grid = np.linspace(-(c + 10 * w), c + 10 * w, 40001)
    _, g1, g2 = f_parts(grid)
    l_lip = float(np.max(np.abs(g1)))
    h_smooth = float(np.max(np.abs(g2)))

    template = _zeros_template((1,), ("x",))

    def eval_fn(params: LayeredParams, batch: Batch | None = None) -> float:
        return float(f_parts(flatten(params))[0][0])

    def grad_fn(params: LayeredParams, batch: Batch | None = None) -> LayeredParams:
        return unflatten(f_parts(flatten(params))[1], template)

    def eval_many(points: np.ndarray, batch: Batch | None = None) -> np.ndarray:
        return f_parts(points[:, 0])[0]

    desc = Descriptor(name=f"cubic_bump_a{a}", l_lip=l_lip, h_smooth=h_smooth)
    return Objective(eval_fn, desc, template, grad_fn=grad_fn, eval_many=eval_many)


def constant_objective(value: float, template: LayeredParams, l_lip: float = 1.0) -> Objective:
    """f(theta) = value everywhere; gradient identically zero."""

    def eval_fn(params, batch=None):
        return float(value)

    def grad_fn(params, batch=None):
        return LayeredParams.from_blocks([np.zeros(s) for s in template.sizes], template.names)

    def eval_many(points, batch=None):
        return np.full(points.shape[0], float(value))

    desc = Descriptor(name="constant", l_lip=l_lip, h_smooth=0.0)
    return Objective(eval_fn, desc, template, grad_fn=grad_fn, eval_many=eval_many)


def linear_objective(coeffs: LayeredParams) -> Objective:
    """f(theta) = <g, theta> for a fixed coefficient vector g."""
    g = flatten(coeffs)

    def eval_fn(params, batch=None):
        return float(g @ flatten(params))

    def grad_fn(params, batch=None):
        return unflatten(g.copy(), coeffs)

    def eval_many(points, batch=None):
        return points @ g

    desc = Descriptor(name="linear", l_lip=float(np.linalg.norm(g)), h_smooth=0.0)
    return Objective(eval_fn, desc, coeffs, grad_fn=grad_fn, eval_many=eval_many)


@dataclass(frozen=True)
class MlpSpec:
    """tanh MLP architecture, plus optional forward-time perturbations.

    widths is the full chain, e.g. (k, 16, 16, 2); the last width must be 2
    (comply/refuse logits).  act_noise adds alpha * std(h) * eps to every
    hidden vector; act_bits quantizes hidden vectors with the symmetric
    uniform rule.  Both leave the weights untouched.
    """

    widths: tuple[int, ...]
    act_noise: ActNoise | None = None
    act_bits: int | None = None

    def __post_init__(self):
        if len(self.widths) < 3:
            raise ValueError("need at least one hidden layer (widths chain >= 3 entries)")
        if any(wd <= 0 for wd in self.widths):
            raise ValueError("widths must be positive")

    @property
    def num_weight_layers(self) -> int:
        return len(self.widths) - 1

    def layer_shapes(self) -> list[tuple[int, int]]:
        return [(self.widths[i + 1], self.widths[i]) for i in range(self.num_weight_layers)]

    def block_sizes(self) -> tuple[int, ...]:
        return tuple(o * i + o for o, i in self.layer_shapes())

    def layer_names(self) -> tuple[str, ...]:
        return tuple(f"fc{i}" for i in range(self.num_weight_layers))

    def template(self) -> LayeredParams:
        return _zeros_template(self.block_sizes(), self.layer_names())


def _unpack_layer(block: np.ndarray, shape: tuple[int, int]):
    out, inp = shape
    return block[: out * inp].reshape(out, inp), block[out * inp :]


def init_mlp_params(
    spec: MlpSpec, rng: np.random.Generator, scale: float | Sequence[float] = 1.0
) -> LayeredParams:
    """Gaussian init, std scale/sqrt(fan_in) per layer, zero biases."""
    shapes = spec.layer_shapes()
    scales = [float(scale)] * len(shapes) if np.isscalar(scale) else [float(s) for s in scale]
    if len(scales) != len(shapes):
        raise ValueError("per-layer scale list must match the number of weight layers")
    blocks = []
    for (out, inp), sc in zip(shapes, scales):
        w = rng.standard_normal((out, inp)) * (sc / np.sqrt(inp))
        blocks.append(np.concatenate([w.reshape(-1), np.zeros(out)]))
    return LayeredParams.from_blocks(blocks, spec.layer_names())


def _mlp_forward(spec: MlpSpec, params: LayeredParams, x: np.ndarray, keep: bool = False):
    """Forward pass; returns (logits, layer_inputs, hidden_tanh) when keep."""
    shapes = spec.layer_shapes()
    noise_rng = None
    if spec.act_noise is not None and spec.act_noise.alpha > 0:
        noise_rng = stream(spec.act_noise.seed, "actnoise")
    h = x
    layer_inputs = [x] if keep else None
    hiddens = [] if keep else None
    for i, shape in enumerate(shapes):
        w, b = _unpack_layer(params.blocks[i], shape)
        z = h @ w.T + b
        if i == len(shapes) - 1:
            return z, layer_inputs, hiddens
        h = np.tanh(z)
        if keep:
            hiddens.append(h)
        if noise_rng is not None:
            std = np.std(h, axis=1, keepdims=True)
            h = h + spec.act_noise.alpha * std * noise_rng.standard_normal(h.shape)
        if spec.act_bits is not None:
            h = quantize_rows(h, spec.act_bits)
        if keep:
            layer_inputs.append(h)
    raise AssertionError("unreachable")


def _cross_entropy(logits: np.ndarray, labels: np.ndarray) -> float:
    shifted = logits - logits.max(axis=1, keepdims=True)
    logz = np.log(np.exp(shifted).sum(axis=1))
    picked = shifted[np.arange(len(labels)), labels]
    return float(np.mean(logz - picked))


def mlp_objective(spec: MlpSpec, data: Dataset) -> Objective:
    """Mean cross-entropy of the tanh MLP on the refusal dataset.

    The exact gradient is reverse-mode accumulation through the clean
    forward pass; it is unavailable when forward-time perturbations
    (activation noise or activation quantization) are active.
    """
    if spec.widths[0] != data.k:
        raise ValueError(f"input width {spec.widths[0]} != dataset feature dim {data.k}")
    if spec.widths[-1] != 2:
        raise ValueError("classifier output width must be 2 (refuse/comply)")
    template = spec.template()
    shapes = spec.layer_shapes()
    clean = spec.act_noise is None and spec.act_bits is None

    def eval_fn(params: LayeredParams, batch: Batch | None = None) -> float:
        x, y = data.select(batch)
        logits, _, _ = _mlp_forward(spec, params, x)
        return _cross_entropy(logits, y)

    def grad_fn(params: LayeredParams, batch: Batch | None = None) -> LayeredParams:
        x, y = data.select(batch)
        logits, layer_inputs, hiddens = _mlp_forward(spec, params, x, keep=True)
        n = len(y)
        shifted = logits - logits.max(axis=1, keepdims=True)
        p = np.exp(shifted)
        p /= p.sum(axis=1, keepdims=True)
        dz = p
        dz[np.arange(n), y] -= 1.0
        dz /= n
        grads: list[np.ndarray | None] = [None] * len(shapes)
        for i in range(len(shapes) - 1, -1, -1):
            w, _ = _unpack_layer(params.blocks[i], shapes[i])
            dw = dz.T @ layer_inputs[i]
            db = dz.sum(axis=0)
            grads[i] = np.concatenate([dw.reshape(-1), db])
            if i > 0:
                dh = dz @ w
                dz = dh * (1.0 - hiddens[i - 1] ** 2)
        return LayeredParams.from_blocks(grads, template.names)

    def layer_inputs_fn(params: LayeredParams, batch: Batch | None = None) -> list[np.ndarray]:
        x, _ = data.select(batch)
        _, layer_inputs, _ = _mlp_forward(spec, params, x, keep=True)
        return layer_inputs

    desc = Descriptor(name=f"mlp_{'x'.join(str(wd) for wd in spec.widths)}")
    return Objective(
        eval_fn,
        desc,
        template,
        grad_fn=grad_fn if clean else None,
        layer_inputs_fn=layer_inputs_fn,
    )


def mlp_predict(spec: MlpSpec, params: LayeredParams, x: np.ndarray) -> np.ndarray:
    """Predicted class labels (argmax logits), under the spec's forward-time
    perturbations if any."""
    logits, _, _ = _mlp_forward(spec, params, np.asarray(x, dtype=np.float64))
    return np.argmax(logits, axis=1)


def make_refusal_dataset(
    seed: int,
    n: int,
    k: int,
    separation: float = 1.0,
    spread: float = 0.35,
    harmful_fraction: float = 0.5,
) -> Dataset:
    """Two Gaussian clusters along a seeded random direction.

    The harmful cluster sits at -separation * u and is labeled refuse (0);
    the benign cluster at +separation * u is labeled comply (1).  Linearly
    separable for separation well above spread, so a fresh MLP aligns in a
    few dozen first-order steps.
    """
    if n < 20:
        raise ValueError("n must be >= 20")
    if k < 2:
        raise ValueError("k must be >= 2")
    rng = stream(seed, "dataset")
    u = rng.standard_normal(k)
    u /= np.linalg.norm(u)
    n_harm = max(1, int(round(n * harmful_fraction)))
    n_benign = n - n_harm
    benign = separation * u + spread * rng.standard_normal((n_benign, k))
    harmful = -separation * u + spread * rng.standard_normal((n_harm, k))
    inputs = np.vstack([benign, harmful])
    labels = np.concatenate([np.ones(n_benign, dtype=np.int64), np.zeros(n_harm, dtype=np.int64)])
    flags = np.concatenate([np.zeros(n_benign, dtype=bool), np.ones(n_harm, dtype=bool)])
    order = rng.permutation(n)
    inputs = inputs[order].copy()
    inputs.flags.writeable = False
    return Dataset(inputs, labels[order], flags[order])


def dataset_to_csv(data: Dataset, path) -> None:
    """Write inputs, label, harmful_flag rows for inspection."""
    with open(path, "w", newline="") as fh:
        cols = [f"x{i}" for i in range(data.k)] + ["label", "harmful_flag"]
        fh.write(",".join(cols) + "\n")
        for row, lab, flag in zip(data.inputs, data.labels, data.harmful_flag):
            cells = [repr(float(v)) for v in row] + [str(int(lab)), str(int(flag))]
            fh.write(",".join(cells) + "\n")


def check_gradient(
    obj: Objective,
    point: LayeredParams,
    batch: Batch | None = None,
    step: float = 1e-5,
) -> float:
    """Max relative error between the exact gradient and central differences.

    The error is normalized by the largest gradient magnitude, so a zero
    gradient matched by zero differences reports 0.
    """
    if not obj.has_grad:
        raise GradUnavailable("objective has no exact gradient to check")
    ga = flatten(obj.grad(point, batch))
    x0 = flatten(point)
    gf = np.empty_like(x0)
    for i in range(x0.size):
        xp = x0.copy()
        xm = x0.copy()
        xp[i] += step
        xm[i] -= step
        fp = obj.eval_fn(unflatten(xp, obj.template), batch)
        fm = obj.eval_fn(unflatten(xm, obj.template), batch)
        gf[i] = (fp - fm) / (2 * step)
    denom = max(float(np.max(np.abs(ga))), float(np.max(np.abs(gf))))
    if denom == 0.0:
        return 0.0
    return float(np.max(np.abs(ga - gf)) / denom)
