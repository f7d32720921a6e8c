"""GIN encoder with differentiable edge weights and node feature masks.

Layer ``k`` computes::

    a_v = sum over arcs (u -> v) of w_uv * h_u
    h_v = BN(ReLU(Lin2(ReLU(Lin1((1 + eps) * h_v + a_v)))))

and graph embeddings are ``MLP(sum of final-layer h over each graph)``.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from . import diffcore as dc
from .config import EncoderConfig
from .diffcore import DiffValue
from .errors import ContractError, DimensionError
from .graphdata import GraphBatch

MODES = ("train", "eval")


@dataclass
class Linear:
    weight: DiffValue
    bias: DiffValue

    @classmethod
    def init(cls, rng: np.random.Generator, fan_in: int, fan_out: int) -> "Linear":
        a = np.sqrt(6.0 / (fan_in + fan_out))
        return cls(dc.parameter(rng.uniform(-a, a, size=(fan_in, fan_out))),
                   dc.parameter(np.zeros(fan_out)))

    def __call__(self, x) -> DiffValue:
        return dc.add_bias(dc.matmul(x, self.weight), self.bias)

    @property
    def in_dim(self) -> int:
        return self.weight.shape[0]


@dataclass
class MLP:
    """Linear layers with ReLU between them (none after the last)."""
    linears: list[Linear]

    @classmethod
    def init(cls, rng, dims: list[int]) -> "MLP":
        return cls([Linear.init(rng, i, o) for i, o in zip(dims[:-1], dims[1:])])

    def __call__(self, x) -> DiffValue:
        for i, lin in enumerate(self.linears):
            x = lin(x)
            if i < len(self.linears) - 1:
                x = dc.relu(x)
        return x

    def named(self, prefix: str) -> dict[str, DiffValue]:
        out = {}
        for i, lin in enumerate(self.linears):
            out[f"{prefix}.{i}.weight"] = lin.weight
            out[f"{prefix}.{i}.bias"] = lin.bias
        return out


@dataclass
class GINLayer:
    mlp: MLP
    bn_scale: DiffValue
    bn_shift: DiffValue
    running_mean: np.ndarray
    running_var: np.ndarray


@dataclass
class GINStack:
    """The message-passing trunk shared by the encoder and both generators."""
    layers: list[GINLayer]
    epsilon: float = 0.0
    use_batch_norm: bool = True
    bn_momentum: float = 0.1
    bn_eps: float = 1e-5

    @classmethod
    def init(cls, rng, in_dim: int, cfg: EncoderConfig) -> "GINStack":
        layers = []
        dim = in_dim
        for _ in range(cfg.num_layers):
            layers.append(GINLayer(
                mlp=MLP.init(rng, [dim, cfg.hidden_dim, cfg.hidden_dim]),
                bn_scale=dc.parameter(np.ones(cfg.hidden_dim)),
                bn_shift=dc.parameter(np.zeros(cfg.hidden_dim)),
                running_mean=np.zeros(cfg.hidden_dim),
                running_var=np.ones(cfg.hidden_dim),
            ))
            dim = cfg.hidden_dim
        return cls(layers, cfg.gin_epsilon, cfg.use_batch_norm, cfg.bn_momentum, cfg.bn_eps)

    @property
    def in_dim(self) -> int:
        return self.layers[0].mlp.linears[0].in_dim

    def named_parameters(self, prefix: str) -> dict[str, DiffValue]:
        out = {}
        for k, layer in enumerate(self.layers):
            out.update(layer.mlp.named(f"{prefix}.layer{k}.mlp"))
            out[f"{prefix}.layer{k}.bn.scale"] = layer.bn_scale
            out[f"{prefix}.layer{k}.bn.shift"] = layer.bn_shift
        return out

    def named_buffers(self, prefix: str) -> dict[str, np.ndarray]:
        out = {}
        for k, layer in enumerate(self.layers):
            out[f"{prefix}.layer{k}.bn.running_mean"] = layer.running_mean
            out[f"{prefix}.layer{k}.bn.running_var"] = layer.running_var
        return out


class _Module:
    """Named-parameter plumbing for a GIN trunk plus an MLP readout."""
    stack: GINStack
    readout: MLP
    readout_name = "readout"

    def named_parameters(self, prefix: str = "") -> dict[str, DiffValue]:
        out = self.stack.named_parameters(prefix + "gin")
        out.update(self.readout.named(prefix + self.readout_name))
        return out

    def parameters(self) -> list[DiffValue]:
        return list(self.named_parameters().values())

    def state_arrays(self, prefix: str = "") -> dict[str, np.ndarray]:
        out = {k: v.data for k, v in self.named_parameters(prefix).items()}
        out.update(self.stack.named_buffers(prefix + "gin"))
        return out

    def load_state_arrays(self, arrays: dict[str, np.ndarray], prefix: str = "") -> None:
        params = self.named_parameters(prefix)
        buffers = self.stack.named_buffers(prefix + "gin")
        for name, p in params.items():
            if name not in arrays:
                raise ContractError(f"checkpoint lacks {name}")
            if arrays[name].shape != p.shape:
                raise DimensionError(
                    f"{name}: expected shape {p.shape}, found {arrays[name].shape}")
            p.data = np.array(arrays[name], dtype=np.float64)
        for name, buf in buffers.items():
            if name not in arrays:
                raise ContractError(f"checkpoint lacks {name}")
            if arrays[name].shape != buf.shape:
                raise DimensionError(
                    f"{name}: expected shape {buf.shape}, found {arrays[name].shape}")
            buf[...] = arrays[name]

    def checksum(self) -> str:
        h = hashlib.sha256()
        for name, arr in sorted(self.state_arrays().items()):
            h.update(name.encode())
            h.update(np.ascontiguousarray(arr).tobytes())
        return h.hexdigest()


@dataclass
class EncoderParams(_Module):
    stack: GINStack
    readout: MLP
    readout_name = "proj"

    @classmethod
    def init(cls, rng, in_dim: int, cfg: EncoderConfig) -> "EncoderParams":
        stack = GINStack.init(rng, in_dim, cfg)
        proj = MLP.init(rng, [cfg.hidden_dim, cfg.embedding_dim, cfg.embedding_dim])
        return cls(stack, proj)


@dataclass
class LayerActivations:
    h: list[DiffValue] = field(default_factory=list)
    a: list[DiffValue] = field(default_factory=list)


def _trunk(params) -> GINStack:
    return params.stack if hasattr(params, "stack") else params


def _batch_norm(layer: GINLayer, stack: GINStack, x: DiffValue, mode: str) -> DiffValue:
    if mode == "eval":
        return dc.batch_norm(x, layer.bn_scale, layer.bn_shift, stack.bn_eps,
                             layer.running_mean, layer.running_var)
    n = x.shape[0]
    if n:
        m = stack.bn_momentum
        layer.running_mean *= 1.0 - m
        layer.running_mean += m * x.data.mean(axis=0)
        var = x.data.var(axis=0, ddof=1) if n > 1 else x.data.var(axis=0)
        layer.running_var *= 1.0 - m
        layer.running_var += m * var
    return dc.batch_norm(x, layer.bn_scale, layer.bn_shift, stack.bn_eps)


def input_features(batch: GraphBatch, node_feature_mask=None) -> DiffValue:
    x = dc.constant(batch.node_features)
    if node_feature_mask is None:
        return x
    if node_feature_mask.shape != (batch.num_nodes,):
        raise ContractError(
            f"node_feature_mask has shape {node_feature_mask.shape}, expected ({batch.num_nodes},)")
    return dc.scale_rows(x, node_feature_mask)


def encode_nodes(batch: GraphBatch, params, arc_weights: DiffValue | None = None,
                 mode: str = "train", node_feature_mask: DiffValue | None = None) -> LayerActivations:
    if mode not in MODES:
        raise ContractError(f"mode must be one of {MODES}, got {mode!r}")
    stack = _trunk(params)
    if batch.node_features.shape[1] != stack.in_dim:
        raise DimensionError(
            f"batch has {batch.node_features.shape[1]} features, encoder expects {stack.in_dim}")
    if arc_weights is not None and arc_weights.shape != (batch.num_arcs,):
        raise ContractError(f"arc_weights has shape {arc_weights.shape}, expected ({batch.num_arcs},)")
    acts = LayerActivations()
    h = input_features(batch, node_feature_mask)
    acts.h.append(h)
    for layer in stack.layers:
        msgs = dc.gather_rows(h, batch.src_index)
        if arc_weights is not None:
            msgs = dc.scale_rows(msgs, arc_weights)
        a = dc.segment_sum(msgs, batch.dst_index, batch.num_nodes)
        pre = dc.add(h, a) if stack.epsilon == 0.0 else dc.add(dc.mul(h, 1.0 + stack.epsilon), a)
        h = dc.relu(layer.mlp(pre))
        if stack.use_batch_norm:
            h = _batch_norm(layer, stack, h, mode)
        acts.a.append(a)
        acts.h.append(h)
    return acts


def encode_graphs(batch: GraphBatch, params: EncoderParams, arc_weights: DiffValue | None = None,
                  node_feature_mask: DiffValue | None = None, mode: str = "train") -> DiffValue:
    """Pooled graph embeddings ``[num_graphs, embedding_dim]``."""
    acts = encode_nodes(batch, params, arc_weights, mode, node_feature_mask)
    pooled = dc.segment_sum(acts.h[-1], batch.graph_index, batch.num_graphs)
    return params.readout(pooled)
