"""Learnable edge-drop and feature-mask view generators.

Both generators embed the input graph with their own GIN trunk, project
to two logits per element (keep, drop) and draw a straight-through
Gumbel-softmax sample.  Noise is a pure function of ``(seed, element key)``
so a graph's draws do not depend on which other graphs share its batch.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import diffcore as dc
from .config import EncoderConfig, GumbelConfig
from .diffcore import DiffValue
from .encoder import MLP, GINStack, _Module, encode_nodes
from .errors import ContractError
from .graphdata import GraphBatch

KEEP, DROP = 0, 1
_U_MIN, _U_MAX = 1e-12, 1.0 - 1e-12
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)


@dataclass
class GeneratorParams(_Module):
    stack: GINStack
    readout: MLP
    kind: str
    readout_name = "head"

    @classmethod
    def init(cls, rng, in_dim: int, cfg: EncoderConfig, kind: str) -> "GeneratorParams":
        if kind not in ("edge", "feature"):
            raise ContractError(f"generator kind must be 'edge' or 'feature', got {kind!r}")
        stack = GINStack.init(rng, in_dim, cfg)
        head_in = 2 * cfg.hidden_dim if kind == "edge" else cfg.hidden_dim
        return cls(stack, MLP.init(rng, [head_in, cfg.hidden_dim, 2]), kind)

    @property
    def head(self) -> MLP:
        return self.readout


@dataclass
class EdgeKeepSample:
    keep_weights: DiffValue   # one entry per undirected edge
    arc_weights: DiffValue    # keep weight broadcast to both arcs
    drop_ratio: float
    num_edges: int


@dataclass
class NodeMaskSample:
    keep_mask: DiffValue
    mask_ratio: float
    num_nodes: int


# ---------------------------------------------------------------------- noise

def _splitmix64(x: np.ndarray) -> np.ndarray:
    x = x + _GOLDEN
    x = (x ^ (x >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    x = (x ^ (x >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return x ^ (x >> np.uint64(31))


def uniform_noise(seed: int, keys: np.ndarray, num_categories: int = 2) -> np.ndarray:
    """Counter-based uniforms in ``[1e-12, 1 - 1e-12]``, shape ``[n, categories]``.

    ``keys`` is ``[n, k]`` non-negative integers identifying each element.
    """
    keys = np.asarray(keys, dtype=np.int64)
    if keys.ndim == 1:
        keys = keys[:, None]
    with np.errstate(over="ignore"):
        h = _splitmix64(np.full(keys.shape[0], np.uint64(seed % 2**64), dtype=np.uint64))
        for col in keys.T:
            h = _splitmix64(h ^ col.astype(np.uint64))
        cats = np.arange(1, num_categories + 1, dtype=np.uint64)
        bits = _splitmix64(h[:, None] ^ (cats[None, :] * _GOLDEN))
    u = (bits >> np.uint64(11)).astype(np.float64) * 2.0 ** -53
    return np.clip(u, _U_MIN, _U_MAX)


def gumbel_noise(seed: int, keys: np.ndarray, num_categories: int = 2) -> np.ndarray:
    return -np.log(-np.log(uniform_noise(seed, keys, num_categories)))


# ------------------------------------------------------------------- sampling

def gumbel_softmax(logits: DiffValue, cfg: GumbelConfig, rng_seed: int,
                   keys: np.ndarray | None = None, noise: np.ndarray | None = None) -> DiffValue:
    """Reparameterized categorical sample ``[n, 2]``.

    In hard mode the forward value is one-hot and the gradient is that of
    the soft sample.  ``noise`` overrides the generated Gumbel noise.
    """
    if cfg.temperature <= 0:
        raise ContractError(f"Gumbel temperature must be positive, got {cfg.temperature}")
    logits = logits if isinstance(logits, DiffValue) else dc.constant(logits)
    n = logits.shape[0]
    if noise is None:
        noise = gumbel_noise(rng_seed, np.arange(n) if keys is None else keys, logits.shape[1])
    soft = dc.softmax_rows(dc.mul(dc.add(logits, noise), 1.0 / cfg.temperature))
    if not cfg.hard:
        return soft
    hard = np.zeros(soft.shape)
    hard[np.arange(n), soft.data.argmax(axis=1)] = 1.0
    return dc.straight_through(soft, hard)


def gumbel_softmax_sample(logits: DiffValue, cfg: GumbelConfig, rng_seed: int,
                          keys: np.ndarray | None = None,
                          noise: np.ndarray | None = None) -> DiffValue:
    """Keep-category component of :func:`gumbel_softmax`."""
    return dc.column(gumbel_softmax(logits, cfg, rng_seed, keys, noise), KEEP)


def edge_keys(batch: GraphBatch) -> np.ndarray:
    return np.stack([batch.graph_ids[batch.edge_to_graph], batch.edge_local], axis=1)


def node_keys(batch: GraphBatch) -> np.ndarray:
    return np.stack([batch.graph_ids[batch.node_to_graph], batch.node_local], axis=1)


def edge_logits(batch: GraphBatch, params: GeneratorParams) -> DiffValue:
    emb = encode_nodes(batch, params.stack, mode="train").h[-1]
    lo, hi = batch.edge_end_indices
    pair = dc.concat([dc.gather_rows(emb, lo), dc.gather_rows(emb, hi)], axis=1)
    return params.head(pair)


def node_logits(batch: GraphBatch, params: GeneratorParams) -> DiffValue:
    return params.head(encode_nodes(batch, params.stack, mode="train").h[-1])


def generate_edge_view(batch: GraphBatch, params: GeneratorParams, cfg: GumbelConfig,
                       seed: int, noise: np.ndarray | None = None) -> EdgeKeepSample:
    m = batch.num_undirected_edges
    if m == 0:
        return EdgeKeepSample(dc.constant(np.zeros(0)), dc.constant(np.zeros(batch.num_arcs)), 0.0, 0)
    keep = gumbel_softmax_sample(edge_logits(batch, params), cfg, seed, edge_keys(batch), noise)
    arcs = dc.gather_rows(keep, batch.arc_to_edge)
    return EdgeKeepSample(keep, arcs, float(1.0 - keep.data.mean()), m)


def generate_feature_view(batch: GraphBatch, params: GeneratorParams, cfg: GumbelConfig,
                          seed: int, noise: np.ndarray | None = None) -> NodeMaskSample:
    n = batch.num_nodes
    if n == 0:
        return NodeMaskSample(dc.constant(np.zeros(0)), 0.0, 0)
    keep = gumbel_softmax_sample(node_logits(batch, params), cfg, seed, node_keys(batch), noise)
    return NodeMaskSample(keep, float(1.0 - keep.data.mean()), n)
