"""Actor regularizers: parameter penalties, stochastic and normalization layers, noise.

Layer-level pieces (dropout, normalizations, spectral reparameterization) are
called from :mod:`actoreg.networks`; penalties and noise injectors are called
from the trainers.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from actoreg.core import Rng, Tensor, abs_, affine, matmul, mul, square, standardize, tsum
from actoreg.core import reshape as treshape
from actoreg.core.errors import ConfigError

NORM_KINDS = ("none", "layer", "feature", "group", "spectral")
WEIGHT_DECAY_MODES = {0.0: "L2", 0.5: "EN", 1.0: "L1"}
SPECTRAL_EPS = 1e-12
FEATURE_NORM_MOMENTUM = 0.99
DEFAULT_GROUPS = 8


@dataclass
class RegularizerConfig:
    weight_decay: float = 0.0  # omega
    weight_decay_alpha: float = 0.0  # 0 -> L2, 0.5 -> EN, 1 -> L1
    dropout_rate: float = 0.0
    norm_kind: str = "none"
    input_noise: float = 0.0
    objective_noise: float = 0.0
    gradient_noise: float = 0.0
    gradient_noise_decay: float = 0.55

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.weight_decay < 0:
            raise ConfigError("must be >= 0", "regularizer.weight_decay")
        if not 0.0 <= self.weight_decay_alpha <= 1.0:
            raise ConfigError("must lie in [0, 1]", "regularizer.weight_decay_alpha")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError("must lie in [0, 1)", "regularizer.dropout_rate")
        if self.norm_kind not in NORM_KINDS:
            raise ConfigError(f"must be one of {NORM_KINDS}", "regularizer.norm_kind")
        for key in ("input_noise", "objective_noise", "gradient_noise"):
            if getattr(self, key) < 0:
                raise ConfigError("must be >= 0", f"regularizer.{key}")

    @property
    def weight_decay_mode(self) -> str | None:
        """``"L1"``, ``"L2"`` or ``"EN"`` for the three named alphas, else None."""
        return WEIGHT_DECAY_MODES.get(float(self.weight_decay_alpha))

    @property
    def is_identity(self) -> bool:
        return (
            self.weight_decay == 0
            and self.dropout_rate == 0
            and self.norm_kind == "none"
            and self.input_noise == 0
            and self.objective_noise == 0
            and self.gradient_noise == 0
        )

    def to_dict(self) -> dict:
        return asdict(self)


# ----------------------------------------------------------------- penalties


def elastic_net_penalty(weights: list[Tensor], omega: float, alpha: float) -> Tensor:
    """``omega * (alpha * |W|_1 + (1 - alpha) * |W|_2^2)`` summed over weight matrices."""
    total: Tensor | None = None
    if omega == 0 or not weights:
        return Tensor(0.0)
    for w in weights:
        term = None
        if alpha != 0:
            term = mul(tsum(abs_(w)), alpha)
        if alpha != 1:
            l2 = mul(tsum(square(w)), 1.0 - alpha)
            term = l2 if term is None else term + l2
        total = term if total is None else total + term
    return mul(total, omega)


# ----------------------------------------------------------------- dropout


def dropout_mask(shape, rate: float, rng: Rng) -> np.ndarray:
    """Inverted-dropout mask: 0 with probability ``rate``, else ``1/(1-rate)``."""
    keep = rng.random(shape) >= rate
    return keep.astype(np.float32) / np.float32(1.0 - rate)


def dropout_forward(x: Tensor, rate: float, rng: Rng | None, mode: str = "train", mask=None) -> Tensor:
    if rate == 0 or mode != "train":
        return x
    if mask is None:
        if rng is None:
            raise ValueError("dropout in train mode needs an rng")
        mask = dropout_mask(x.shape, rate, rng)
    else:
        mask = np.asarray(mask, dtype=np.float32) / np.float32(1.0 - rate)
    return mul(x, mask)


# ----------------------------------------------------------------- normalization


@dataclass
class NormParams:
    """Learned scale/shift plus, for feature norm, running statistics."""

    gain: Tensor
    bias: Tensor
    groups: int = DEFAULT_GROUPS
    eps: float = 1e-5
    running_mean: np.ndarray | None = None
    running_var: np.ndarray | None = None
    momentum: float = FEATURE_NORM_MOMENTUM


def norm_forward(x: Tensor, kind: str, params: NormParams | None = None, mode: str = "train") -> Tensor:
    """Layer / feature / group normalization over a (batch, features) tensor.

    With ``params=None`` no affine transform is applied (and feature norm
    falls back to batch statistics).
    """
    eps = params.eps if params is not None else 1e-5
    if kind == "layer":
        y = standardize(x, axis=1, eps=eps)
    elif kind == "group":
        groups = params.groups if params is not None else DEFAULT_GROUPS
        batch, width = x.shape
        if width % groups:
            raise ConfigError(f"feature dim {width} not divisible by {groups} groups", "network.group_count")
        y = treshape(standardize(treshape(x, (batch, groups, width // groups)), axis=2, eps=eps), (batch, width))
    elif kind == "feature":
        y = _feature_norm(x, params, mode, eps)
    else:
        raise ConfigError(f"unknown norm kind {kind!r}", "regularizer.norm_kind")
    if params is None:
        return y
    return affine(y, params.gain, params.bias)


def _feature_norm(x: Tensor, params: NormParams | None, mode: str, eps: float) -> Tensor:
    if params is None or params.running_mean is None:
        return standardize(x, axis=0, eps=eps)
    if mode == "train":
        data = x.data
        m = params.momentum
        params.running_mean *= m
        params.running_mean += (1 - m) * data.mean(axis=0)
        params.running_var *= m
        params.running_var += (1 - m) * data.var(axis=0)
        return standardize(x, axis=0, eps=eps)
    inv = (1.0 / np.sqrt(params.running_var + eps)).astype(x.data.dtype)
    return mul(x - params.running_mean.astype(x.data.dtype), inv)


# ----------------------------------------------------------------- spectral norm


@dataclass
class SpectralState:
    u: np.ndarray  # left singular vector estimate, shape (rows,)
    v: np.ndarray  # right singular vector estimate, shape (cols,)
    n_iter: int = 1

    @classmethod
    def init(cls, shape: tuple[int, int], rng: Rng, n_iter: int = 1) -> SpectralState:
        u = rng.normal(shape[0]).astype(np.float64)
        v = rng.normal(shape[1]).astype(np.float64)
        return cls(u / np.linalg.norm(u), v / np.linalg.norm(v), n_iter)


def power_iterate(w: np.ndarray, state: SpectralState, n_iter: int | None = None) -> float:
    """Advance the power-iteration vectors in place and return the sigma estimate."""
    w64 = w.astype(np.float64)
    for _ in range(state.n_iter if n_iter is None else n_iter):
        v = w64.T @ state.u
        state.v = v / max(np.linalg.norm(v), SPECTRAL_EPS)
        u = w64 @ state.v
        state.u = u / max(np.linalg.norm(u), SPECTRAL_EPS)
    return float(state.u @ w64 @ state.v)


def spectral_normalize(w: Tensor, state: SpectralState, update: bool = True) -> Tensor:
    """``W / sigma_hat`` with ``sigma_hat = u^T W v``; u, v are treated as constants."""
    if w.ndim != 2:
        raise ValueError(f"spectral_normalize needs a 2-D weight, got {w.shape}")
    if update:
        power_iterate(w.data, state)
    dtype = w.data.dtype
    u = Tensor(state.u.astype(dtype)[None, :])
    v = Tensor(state.v.astype(dtype)[:, None])
    sigma = matmul(matmul(u, w), v)
    if abs(sigma.data.item()) < SPECTRAL_EPS:
        return mul(w, 1.0 / SPECTRAL_EPS)
    return w / treshape(sigma, ())


# ----------------------------------------------------------------- noise


def inject_noise(y, nu: float, rng: Rng):
    """``y + nu * eps`` with fresh standard-normal ``eps``; identity when ``nu == 0``."""
    if nu == 0:
        return y
    data = y.data if isinstance(y, Tensor) else np.asarray(y)
    noise = rng.normal(data.shape, dtype=data.dtype if data.dtype.kind == "f" else None)
    if isinstance(y, Tensor):
        return y + noise * np.asarray(nu, dtype=data.dtype)
    return data + noise * np.asarray(nu, dtype=noise.dtype)


def gradient_noise_scale(nu: float, t: int, gamma: float = 0.55) -> float:
    """Annealed gradient-noise std ``nu / (1 + t)**gamma``."""
    if t < 0:
        raise ValueError("t must be >= 0")
    return nu / (1.0 + t) ** gamma


def add_gradient_noise(grads: list[np.ndarray], scale: float, rng: Rng) -> list[np.ndarray]:
    if scale == 0:
        return grads
    return [g + np.asarray(scale, dtype=g.dtype) * rng.normal(g.shape, dtype=g.dtype) for g in grads]


__all__ = [
    "NORM_KINDS",
    "NormParams",
    "RegularizerConfig",
    "SpectralState",
    "add_gradient_noise",
    "dropout_forward",
    "dropout_mask",
    "elastic_net_penalty",
    "gradient_noise_scale",
    "inject_noise",
    "norm_forward",
    "power_iterate",
    "spectral_normalize",
]
