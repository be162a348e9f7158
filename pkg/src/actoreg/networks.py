"""MLP actors, twin critics and value networks.

Hidden blocks are ``linear -> relu -> norm -> dropout`` with the norm and
dropout stages present only when configured; spectral normalization
reparameterizes the hidden linear weights instead of adding a stage.
"""
from __future__ import annotations

import copy
import json
import math
import struct
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from actoreg.core import Rng, Tensor, clip, concat, linear, softmax_expectation, tanh
from actoreg.core.errors import ConfigError, DimensionError, FormatError
from actoreg.regularizers import (
    DEFAULT_GROUPS,
    NORM_KINDS,
    NormParams,
    SpectralState,
    dropout_forward,
    norm_forward,
    spectral_normalize,
)

HEADS = ("linear", "tanh", "gaussian")


@dataclass
class MlpSpec:
    input_dim: int
    output_dim: int
    hidden_dim: int = 256
    num_hidden_layers: int = 3
    activation: str = "relu"
    norm_kind: str = "none"
    dropout_rate: float = 0.0
    output_head: str = "linear"
    group_count: int = DEFAULT_GROUPS
    log_std_min: float = -5.0
    log_std_max: float = 2.0
    init: str = "orthogonal"

    def __post_init__(self):
        if self.hidden_dim < 1:
            raise ConfigError("must be >= 1", "network.hidden_dim")
        if self.num_hidden_layers < 0:
            raise ConfigError("must be >= 0", "network.num_hidden_layers")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError("must lie in [0, 1)", "network.dropout_rate")
        if self.norm_kind not in NORM_KINDS:
            raise ConfigError(f"must be one of {NORM_KINDS}", "network.norm_kind")
        if self.output_head not in HEADS:
            raise ConfigError(f"must be one of {HEADS}", "network.output_head")
        if self.activation != "relu":
            raise ConfigError("only relu is supported", "network.activation")
        if self.norm_kind == "group" and self.hidden_dim % self.group_count:
            raise ConfigError(
                f"hidden_dim {self.hidden_dim} not divisible by {self.group_count} groups", "network.group_count"
            )
        if self.log_std_min > self.log_std_max:
            raise ConfigError("log_std_min > log_std_max", "network.log_std_min")


def orthogonal(shape: tuple[int, int], rng: Rng, gain: float = 1.0) -> np.ndarray:
    rows, cols = shape
    a = rng.normal((max(rows, cols), min(rows, cols)), dtype=np.float64)
    q, r = np.linalg.qr(a)
    q *= np.sign(np.diag(r))
    if rows < cols:
        q = q.T
    return (gain * q[:rows, :cols]).astype(np.float32)


class Mlp:
    """A feed-forward network whose parameters are persistent leaf tensors."""

    def __init__(self, spec: MlpSpec, rng: Rng | None = None):
        self.spec = spec
        self.params: dict[str, Tensor] = {}
        self.norms: dict[int, NormParams] = {}
        self.spectral: dict[int, SpectralState] = {}
        rng = rng if rng is not None else Rng(0, "init")
        dims = [spec.input_dim] + [spec.hidden_dim] * spec.num_hidden_layers
        for i in range(spec.num_hidden_layers):
            self._add_linear(f"h{i}", (dims[i], dims[i + 1]), rng, math.sqrt(2.0))
            if spec.norm_kind in ("layer", "feature", "group"):
                gain = self._add_param(f"h{i}.norm.g", np.ones(spec.hidden_dim, np.float32))
                bias = self._add_param(f"h{i}.norm.b", np.zeros(spec.hidden_dim, np.float32))
                np_ = NormParams(gain, bias, groups=spec.group_count)
                if spec.norm_kind == "feature":
                    np_.running_mean = np.zeros(spec.hidden_dim, np.float32)
                    np_.running_var = np.ones(spec.hidden_dim, np.float32)
                self.norms[i] = np_
            elif spec.norm_kind == "spectral":
                self.spectral[i] = SpectralState.init((dims[i], dims[i + 1]), rng.child(f"sn{i}"))
        self._add_linear("out", (dims[-1], spec.output_dim), rng, 1.0)
        if spec.output_head == "gaussian":
            self._add_param("log_std", np.zeros(spec.output_dim, np.float32))

    def _add_param(self, name: str, value: np.ndarray) -> Tensor:
        t = Tensor(value, requires_grad=True, name=name)
        self.params[name] = t
        return t

    def _add_linear(self, name: str, shape: tuple[int, int], rng: Rng, gain: float) -> None:
        if self.spec.init == "zeros":
            w = np.zeros(shape, np.float32)
        else:
            w = orthogonal(shape, rng, gain)
        self._add_param(f"{name}.w", w)
        self._add_param(f"{name}.b", np.zeros(shape[1], np.float32))

    # ------------------------------------------------------------- structure

    def layer_order(self) -> list[str]:
        """Serialized stage sequence, e.g. ``['linear', 'relu', 'layer_norm', 'dropout', ..., 'linear', 'tanh']``."""
        spec = self.spec
        order: list[str] = []
        for _ in range(spec.num_hidden_layers):
            order.append("spectral_linear" if spec.norm_kind == "spectral" else "linear")
            order.append(spec.activation)
            if spec.norm_kind in ("layer", "feature", "group"):
                order.append(f"{spec.norm_kind}_norm")
            if spec.dropout_rate > 0:
                order.append("dropout")
        order.append("linear")
        if spec.output_head in ("tanh", "gaussian"):
            order.append("tanh")
        return order

    def weight_params(self) -> list[Tensor]:
        """Weight matrices only (the tensors weight decay applies to)."""
        return [p for n, p in self.params.items() if n.endswith(".w")]

    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    def clone(self) -> Mlp:
        return copy.deepcopy(self)

    # ------------------------------------------------------------- forward

    def forward(
        self,
        x,
        rng: Rng | None = None,
        mode: str = "eval",
        frozen: bool = False,
        return_features: bool = False,
    ):
        """Run the network on a (batch, input_dim) array or tensor.

        ``frozen`` treats parameters as constants (no gradient, no power
        iteration or running-stat updates). Gaussian heads return
        ``(mean, log_std)``; with ``return_features`` the penultimate
        post-activation features are appended to the result.
        """
        spec = self.spec
        x = x if isinstance(x, Tensor) else Tensor(x)
        if x.ndim != 2 or x.shape[1] != spec.input_dim:
            raise DimensionError(f"expected input (batch, {spec.input_dim}), got {x.shape}")
        train = mode == "train" and not frozen
        p = self._frozen_params() if frozen else self.params
        h = x
        features = x
        for i in range(spec.num_hidden_layers):
            w = p[f"h{i}.w"]
            if i in self.spectral:
                w = spectral_normalize(w, self.spectral[i], update=train)
            h = linear(h, w, p[f"h{i}.b"], activation="relu")
            features = h
            if i in self.norms:
                norm = self.norms[i]
                if frozen:
                    norm = NormParams(
                        p[f"h{i}.norm.g"], p[f"h{i}.norm.b"], norm.groups, norm.eps,
                        norm.running_mean, norm.running_var, norm.momentum,
                    )
                h = norm_forward(h, spec.norm_kind, norm, mode="train" if train else "eval")
            if mode == "train":
                h = dropout_forward(h, spec.dropout_rate, rng, "train")
        out = linear(h, p["out.w"], p["out.b"])
        if spec.output_head == "tanh":
            out = tanh(out)
        elif spec.output_head == "gaussian":
            log_std = clip(p["log_std"], spec.log_std_min, spec.log_std_max)
            out = (tanh(out), log_std)
        if return_features:
            return out, features
        return out

    __call__ = forward

    def _frozen_params(self) -> dict[str, Tensor]:
        return {n: Tensor(t.data) for n, t in self.params.items()}

    # ------------------------------------------------------------- state

    def buffers(self) -> dict[str, np.ndarray]:
        out: dict[str, np.ndarray] = {}
        for i, norm in self.norms.items():
            if norm.running_mean is not None:
                out[f"h{i}.norm.running_mean"] = norm.running_mean
                out[f"h{i}.norm.running_var"] = norm.running_var
        for i, st in self.spectral.items():
            out[f"h{i}.sn.u"] = st.u
            out[f"h{i}.sn.v"] = st.v
        return out

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {n: t.data for n, t in self.params.items()}
        out.update({f"buf.{k}": v for k, v in self.buffers().items()})
        return out

    def load_state_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        for name, t in self.params.items():
            if arrays[name].shape != t.data.shape:
                raise FormatError(f"shape mismatch for {name}: {arrays[name].shape} vs {t.data.shape}")
            t.data = np.array(arrays[name], dtype=np.float32)
        for i, norm in self.norms.items():
            if norm.running_mean is not None:
                norm.running_mean = np.array(arrays[f"buf.h{i}.norm.running_mean"], dtype=np.float32)
                norm.running_var = np.array(arrays[f"buf.h{i}.norm.running_var"], dtype=np.float32)
        for i, st in self.spectral.items():
            st.u = np.array(arrays[f"buf.h{i}.sn.u"], dtype=np.float64)
            st.v = np.array(arrays[f"buf.h{i}.sn.v"], dtype=np.float64)


def build_mlp(spec: MlpSpec, rng: Rng | None = None) -> Mlp:
    return Mlp(spec, rng)


def actor_forward(actor: Mlp, states, rng: Rng | None = None, mode: str = "eval"):
    """Actions for a batch of states; gaussian heads also return the log-std."""
    return actor.forward(states, rng=rng, mode=mode)


def penultimate_features(network: Mlp, states) -> np.ndarray:
    """Post-ReLU outputs of the last hidden layer (before norm and dropout), eval mode."""
    if network.spec.num_hidden_layers < 1:
        raise ValueError("network has no hidden layer")
    _, feats = network.forward(states, mode="eval", frozen=True, return_features=True)
    return feats.data


def gaussian_sample(mean: np.ndarray, log_std: np.ndarray, rng: Rng) -> np.ndarray:
    return mean + np.exp(log_std) * rng.normal(mean.shape, dtype=mean.dtype)


class TwinCritic:
    """Two independent Q networks over ``concat(state, action)``.

    With ``bins`` set each head emits logits over a fixed value grid and the
    Q readout is the expectation over bin centers.
    """

    def __init__(self, state_dim: int, action_dim: int, hidden_dim: int = 256, num_hidden_layers: int = 3,
                 norm_kind: str = "none", bins: int | None = None, v_min: float = 0.0, v_max: float = 0.0,
                 rng: Rng | None = None):
        rng = rng if rng is not None else Rng(0, "critic")
        self.bins = bins
        self.v_min, self.v_max = float(v_min), float(v_max)
        out_dim = bins if bins else 1
        spec = MlpSpec(state_dim + action_dim, out_dim, hidden_dim, num_hidden_layers, norm_kind=norm_kind)
        self.q1 = Mlp(spec, rng.child("q1"))
        self.q2 = Mlp(spec, rng.child("q2"))
        if bins:
            if not v_min < v_max:
                raise ConfigError("v_min must be < v_max", "critic.v_min")
            self.centers = np.linspace(v_min, v_max, bins).astype(np.float32)

    @property
    def heads(self) -> tuple[Mlp, Mlp]:
        return self.q1, self.q2

    def parameters(self) -> list[Tensor]:
        return self.q1.parameters() + self.q2.parameters()

    def head_outputs(self, states, actions, frozen: bool = False) -> tuple[Tensor, Tensor]:
        """Raw head outputs: (batch,) Q values, or (batch, bins) logits when categorical."""
        sa = concat([states, actions], axis=1)
        o1 = self.q1.forward(sa, mode="eval", frozen=frozen)
        o2 = self.q2.forward(sa, mode="eval", frozen=frozen)
        if not self.bins:
            return o1[:, 0], o2[:, 0]
        return o1, o2

    def q_values(self, states, actions, frozen: bool = False) -> tuple[Tensor, Tensor]:
        o1, o2 = self.head_outputs(states, actions, frozen)
        if not self.bins:
            return o1, o2
        return categorical_expectation(o1, self.centers), categorical_expectation(o2, self.centers)

    def q1_value(self, states, actions, frozen: bool = False) -> Tensor:
        """Q readout of the first head only (the actor objective needs nothing else)."""
        o1 = self.q1.forward(concat([states, actions], axis=1), mode="eval", frozen=frozen)
        return categorical_expectation(o1, self.centers) if self.bins else o1[:, 0]

    def clone(self) -> TwinCritic:
        return copy.deepcopy(self)


def categorical_expectation(logits: Tensor, centers: np.ndarray) -> Tensor:
    return softmax_expectation(logits, centers)


def value_network(state_dim: int, hidden_dim: int = 256, num_hidden_layers: int = 2, rng: Rng | None = None) -> Mlp:
    return Mlp(MlpSpec(state_dim, 1, hidden_dim, num_hidden_layers), rng if rng is not None else Rng(0, "value"))


# ----------------------------------------------------------------- checkpoints

CHECKPOINT_MAGIC = b"OFRLCK1\x00"
CHECKPOINT_VERSION = 1


def save_checkpoint(path, networks: dict[str, Mlp], meta: dict | None = None) -> None:
    """Write named networks to a self-describing little-endian binary file.

    Layout: magic, u32 version, u32 header length, JSON header (specs and
    meta), u32 tensor count, then per tensor: u32 name length, utf-8 name,
    u32 rank, u32 dims, float32 payload.
    """
    header = {
        "networks": {name: asdict(net.spec) for name, net in networks.items()},
        "meta": meta or {},
    }
    tensors: list[tuple[str, np.ndarray]] = []
    for net_name, net in networks.items():
        for key, arr in net.state_arrays().items():
            tensors.append((f"{net_name}/{key}", arr))
    hbytes = json.dumps(header, sort_keys=True).encode("utf-8")
    chunks = [CHECKPOINT_MAGIC, struct.pack("<II", CHECKPOINT_VERSION, len(hbytes)), hbytes,
              struct.pack("<I", len(tensors))]
    for name, arr in tensors:
        nb = name.encode("utf-8")
        arr = np.ascontiguousarray(arr, dtype="<f4")
        chunks.append(struct.pack("<I", len(nb)) + nb + struct.pack("<I", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(arr.tobytes())
    Path(path).write_bytes(b"".join(chunks))


def load_checkpoint(path) -> tuple[dict[str, Mlp], dict]:
    raw = Path(path).read_bytes()
    if raw[:8] != CHECKPOINT_MAGIC:
        raise FormatError(f"{path}: not a checkpoint (bad magic)")
    pos = 8

    def take(n: int, what: str) -> bytes:
        nonlocal pos
        if pos + n > len(raw):
            raise FormatError(f"{path}: truncated while reading {what}")
        chunk = raw[pos:pos + n]
        pos += n
        return chunk

    version, hlen = struct.unpack("<II", take(8, "header"))
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {version}")
    header = json.loads(take(hlen, "header").decode("utf-8"))
    (count,) = struct.unpack("<I", take(4, "tensor count"))
    arrays: dict[str, dict[str, np.ndarray]] = {}
    for _ in range(count):
        (nlen,) = struct.unpack("<I", take(4, "tensor name"))
        name = take(nlen, "tensor name").decode("utf-8")
        (rank,) = struct.unpack("<I", take(4, f"{name} rank"))
        dims = struct.unpack(f"<{rank}I", take(4 * rank, f"{name} dims"))
        size = int(np.prod(dims)) if rank else 1
        arr = np.frombuffer(take(4 * size, f"{name} payload"), dtype="<f4").reshape(dims)
        net_name, key = name.split("/", 1)
        arrays.setdefault(net_name, {})[key] = arr
    spec_fields = {f.name for f in fields(MlpSpec)}
    networks = {}
    for net_name, spec_dict in header["networks"].items():
        spec = MlpSpec(**{k: v for k, v in spec_dict.items() if k in spec_fields})
        net = Mlp(spec)
        net.load_state_arrays(arrays.get(net_name, {}))
        networks[net_name] = net
    return networks, header["meta"]
