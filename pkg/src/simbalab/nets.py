"""SimBa networks, the MLP baseline, and the component addition/removal variants.

Weights are stored as ``(in, out)`` matrices so a layer is ``x @ w + b`` on a
batch of row vectors. Every variant shares one layout routine, which drives
initialization and parameter counting alike.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

VARIANTS = (
    "mlp", "mlp+res", "mlp+ln", "simba",
    "simba-residual", "simba-preLN", "simba-postLN",
)
HEADS = ("raw", "gaussian-policy", "deterministic-policy", "q-value")
SIMBA_FAMILY = ("simba", "simba-residual", "simba-preLN", "simba-postLN")

LN_EPS = 1e-5
LOG_STD_MIN = -10.0
LOG_STD_MAX = 2.0
BRANCH_OUT_SCALE = 1e-2

_ALIASES = {"simba−residual": "simba-residual", "simba−preLN": "simba-preLN",
            "simba−postLN": "simba-postLN", "simba-preln": "simba-preLN",
            "simba-postln": "simba-postLN"}


@dataclass(frozen=True)
class NetworkSpec:
    variant: str
    input_dim: int
    hidden_dim: int
    num_blocks: int
    output_dim: int = 1
    head: str = "raw"

    def __post_init__(self):
        variant = _ALIASES.get(self.variant, self.variant)
        object.__setattr__(self, "variant", variant)
        if variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        if self.head not in HEADS:
            raise ValueError(f"unknown head {self.head!r}; expected one of {HEADS}")
        if self.input_dim < 1 or self.hidden_dim < 1 or self.output_dim < 1:
            raise ValueError("input_dim, hidden_dim and output_dim must be positive")
        if self.num_blocks < 0:
            raise ValueError("num_blocks must be non-negative")
        if variant.startswith("mlp") and self.num_blocks < 1:
            raise ValueError(f"{variant} needs at least one hidden layer")
        if self.head == "q-value" and self.output_dim != 1:
            raise ValueError("q-value head has output_dim 1")

    @property
    def head_width(self) -> int:
        return 2 * self.output_dim if self.head == "gaussian-policy" else self.output_dim


@dataclass
class Params:
    spec: NetworkSpec
    seed: int
    tensors: dict[str, np.ndarray] = field(default_factory=dict)

    def __getitem__(self, name):
        return self.tensors[name]

    def copy(self) -> "Params":
        return Params(self.spec, self.seed, {k: v.copy() for k, v in self.tensors.items()})


# (name, shape, init) with init in {"ortho:<gain>", "zeros", "ones"}.
def layout(spec: NetworkSpec) -> list[tuple[str, tuple[int, ...], str]]:
    d_o, d_h, L = spec.input_dim, spec.hidden_dim, spec.num_blocks
    relu_gain = f"ortho:{math.sqrt(2.0)}"
    small = f"ortho:{BRANCH_OUT_SCALE}"
    out: list[tuple[str, tuple[int, ...], str]] = []

    def lin(name, n_in, n_out, init):
        out.append((f"{name}/w", (n_in, n_out), init))
        out.append((f"{name}/b", (n_out,), "zeros"))

    def norm(name, width):
        out.append((f"{name}/gain", (width,), "ones"))
        out.append((f"{name}/bias", (width,), "zeros"))

    if spec.variant in SIMBA_FAMILY:
        lin("embed", d_o, d_h, "ortho:1.0")
        for i in range(L):
            if spec.variant != "simba-preLN":
                norm(f"block{i}/ln", d_h)
            lin(f"block{i}/fc1", d_h, 4 * d_h, relu_gain)
            lin(f"block{i}/fc2", 4 * d_h, d_h, small)
        if spec.variant != "simba-postLN":
            norm("post_ln", d_h)
    else:
        for i in range(L):
            if spec.variant == "mlp+ln" and i > 0:
                norm(f"hidden{i}/ln", d_h)
            init = small if _is_skip_closer(spec, i) else relu_gain
            lin(f"hidden{i}", d_o if i == 0 else d_h, d_h, init)
        if spec.variant == "mlp+ln":
            norm("head/ln", d_h)
    lin("head", d_h, spec.head_width, small)
    return out


def _is_skip_closer(spec: NetworkSpec, i: int) -> bool:
    # mlp+res pairs hidden layers (1,2), (3,4), ...; the second closes the skip.
    return spec.variant == "mlp+res" and i >= 2 and i % 2 == 0


def count_params(spec: NetworkSpec) -> int:
    return sum(int(np.prod(shape)) for _, shape, _ in layout(spec))


def orthogonal(rng: np.random.Generator, shape: tuple[int, int], gain: float) -> np.ndarray:
    n_in, n_out = shape
    a = rng.standard_normal((max(n_in, n_out), min(n_in, n_out)))
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diag(r))
    if n_in < n_out:
        q = q.T
    return np.ascontiguousarray(gain * q[:n_in, :n_out])


def init_params(spec: NetworkSpec, seed: int) -> Params:
    rng = np.random.default_rng(seed)
    tensors = {}
    for name, shape, init in layout(spec):
        if init == "zeros":
            tensors[name] = np.zeros(shape)
        elif init == "ones":
            tensors[name] = np.ones(shape)
        else:
            tensors[name] = orthogonal(rng, shape, float(init.split(":")[1]))
    return Params(spec, seed, tensors)


def reset_params(params: Params, seed: int) -> Params:
    """Redraw every tensor of ``params`` from ``seed``."""
    return init_params(params.spec, seed)


def bind(params: Params, tape: ad.Tape | None = None) -> dict[str, Tensor]:
    """Wrap parameters as tensors: tape variables if ``tape`` is given."""
    if tape is None:
        return {k: Tensor(v) for k, v in params.tensors.items()}
    return {k: tape.variable(v) for k, v in params.tensors.items()}


def layer_norm(x, gain=None, bias=None, eps: float = LN_EPS):
    """Normalize over the last axis: (x - mean) / sqrt(var + eps), then affine."""
    x = ad.as_tensor(x)
    mu = ad.broadcast(ad.mean(x, axis=-1, keepdims=True), x.shape)
    centered = ad.sub(x, mu)
    var = ad.mean(ad.square(centered), axis=-1, keepdims=True)
    inv = ad.broadcast(ad.rsqrt(ad.add_const(var, eps)), x.shape)
    y = ad.mul(centered, inv)
    if gain is not None:
        y = ad.mul(y, ad.broadcast(gain, x.shape))
    if bias is not None:
        y = ad.add(y, ad.broadcast(bias, x.shape))
    return y


def embed(obs, w: Mapping[str, Tensor]):
    return ad.linear(obs, w["embed/w"], w["embed/b"])


def residual_block(x, w: Mapping[str, Tensor], i: int, variant: str = "simba",
                   activations: list | None = None):
    """x + fc2(relu(fc1(LN(x)))), with the pieces dropped by ablation variants."""
    p = f"block{i}"
    h = x if variant == "simba-preLN" else layer_norm(x, w[f"{p}/ln/gain"], w[f"{p}/ln/bias"])
    h = ad.relu(ad.linear(h, w[f"{p}/fc1/w"], w[f"{p}/fc1/b"]))
    if activations is not None:
        activations.append(h)
    h = ad.linear(h, w[f"{p}/fc2/w"], w[f"{p}/fc2/b"])
    return h if variant == "simba-residual" else ad.add(x, h)


@dataclass
class NetOutput:
    features: Tensor          # pre-head features z
    out: Tensor               # head pre-activation (batch, head_width)
    activations: list         # post-ReLU hidden activations


def trunk(spec: NetworkSpec, w: Mapping[str, Tensor], x) -> tuple[Tensor, list]:
    x = ad.as_tensor(x)
    if x.shape[-1] != spec.input_dim:
        raise ad.ShapeError(f"forward: expected input width {spec.input_dim}, got {x.shape}")
    acts: list = []
    v = spec.variant
    if v in SIMBA_FAMILY:
        h = embed(x, w)
        for i in range(spec.num_blocks):
            h = residual_block(h, w, i, v, acts)
        if v != "simba-postLN":
            h = layer_norm(h, w["post_ln/gain"], w["post_ln/bias"])
        return h, acts

    h = x
    skip = None
    for i in range(spec.num_blocks):
        if v == "mlp+res" and i % 2 == 1:
            skip = h
        if v == "mlp+ln" and i > 0:
            h = layer_norm(h, w[f"hidden{i}/ln/gain"], w[f"hidden{i}/ln/bias"])
        h = ad.relu(ad.linear(h, w[f"hidden{i}/w"], w[f"hidden{i}/b"]))
        acts.append(h)
        if _is_skip_closer(spec, i):
            h = ad.add(skip, h)
    if v == "mlp+ln":
        h = layer_norm(h, w["head/ln/gain"], w["head/ln/bias"])
    return h, acts


def forward(spec: NetworkSpec, weights, x) -> NetOutput:
    """Run the trunk and the linear head. ``weights`` is Params or a name->Tensor map."""
    w = bind(weights) if isinstance(weights, Params) else weights
    z, acts = trunk(spec, w, x)
    out = ad.linear(z, w["head/w"], w["head/b"])
    return NetOutput(z, out, acts)


def gaussian_head(out: Tensor, action_dim: int) -> tuple[Tensor, Tensor]:
    """Split head output into (mean, log_std) with log_std hard-clamped."""
    mean = ad.slice_(out, (slice(None), slice(0, action_dim)))
    raw = ad.slice_(out, (slice(None), slice(action_dim, 2 * action_dim)))
    return mean, ad.clamp(raw, LOG_STD_MIN, LOG_STD_MAX)


def squashed_gaussian(mean: Tensor, log_std: Tensor, noise: np.ndarray,
                      action_scale: float = 1.0) -> tuple[Tensor, Tensor]:
    """Reparameterized tanh-Gaussian sample and its log-density.

    Returns ``(action, log_prob)`` with ``action = scale * tanh(mean + std * noise)``
    and ``log_prob`` of shape (batch,), including the tanh and scale Jacobians.
    """
    noise = np.asarray(noise, dtype=float)
    std = ad.exp(log_std)
    u = ad.add(mean, ad.mul(std, Tensor(noise)))
    squashed = ad.tanh(u)
    action = ad.scalar_mul(squashed, action_scale)
    d = noise.shape[-1]
    gauss = -0.5 * np.sum(noise * noise, axis=-1) - 0.5 * d * math.log(2.0 * math.pi)
    log_det = ad.log(ad.add_const(ad.scalar_mul(ad.square(squashed), -1.0), 1.0 + 1e-6))
    per_dim = ad.add(log_std, log_det)
    log_prob = ad.sub(Tensor(gauss - d * math.log(action_scale)), ad.sum(per_dim, axis=-1))
    return action, log_prob


def deterministic_head(out: Tensor, action_scale: float = 1.0) -> Tensor:
    return ad.scalar_mul(ad.tanh(out), action_scale)


def q_head(out: Tensor) -> Tensor:
    return ad.slice_(out, (slice(None), 0))


def match_hidden_dim(spec: NetworkSpec, target: int, tol: float = 0.01) -> NetworkSpec:
    """Return ``spec`` with the hidden width whose count is closest to ``target``.

    Raises if no width lands within ``tol`` relative error.
    """
    best, best_err = None, math.inf
    lo, hi = 1, 1
    while count_params(_with_width(spec, hi)) < target:
        hi *= 2
    lo = max(1, hi // 2)
    for d_h in range(lo, hi + 1):
        err = abs(count_params(_with_width(spec, d_h)) - target) / target
        if err < best_err:
            best, best_err = d_h, err
    if best_err > tol:
        raise ValueError(f"cannot match {target} params within {tol:.0%} for {spec.variant}")
    return _with_width(spec, best)


def _with_width(spec: NetworkSpec, d_h: int) -> NetworkSpec:
    return NetworkSpec(spec.variant, spec.input_dim, d_h, spec.num_blocks,
                       spec.output_dim, spec.head)
