"""Joint alternating training of the encoder and the two view generators.

Per minibatch:

1. ``z0 = f(x)``, ``z1 = f(G1(x))``, ``z2 = f(G2(x))``
2. minimize the anchored loss on ``(z0, z1)``, stepping only G1
3. minimize the anchored loss on ``(z0, z2)``, stepping only G2
4. redraw ``z1`` and ``z2`` with fresh noise
5. draw one pair from ``{(z0,z1), (z0,z2), (z1,z2)}``
6. minimize the pairwise InfoNCE loss on it, stepping f and every
   generator whose view is in the pair

There is no regularizer and no target augmentation ratio.
"""
from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import diffcore as dc
from .config import EncoderConfig, TrainConfig
from .diffcore import AdamState, DiffValue
from .encoder import EncoderParams, encode_graphs
from .errors import NumericalError
from .graphdata import Graph, GraphBatch, make_batches
from .objectives import info_nce_anchor, info_nce_pair
from .viewgen import GeneratorParams, generate_edge_view, generate_feature_view

log = logging.getLogger(__name__)

PAIRS = (("z0", "z1"), ("z0", "z2"), ("z1", "z2"))
MODE_PAIRS = {"all": (0, 1, 2), "edge_only": (0,), "feature_only": (1,)}

# Fixed offsets separating the random streams derived from one seed.
STREAM_INIT, STREAM_SHUFFLE, STREAM_PAIRS, STREAM_NOISE = 11, 13, 17, 19


def derive_seed(*parts: int) -> int:
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(1, np.uint64)[0])


@dataclass
class Model:
    f: EncoderParams
    g1: GeneratorParams | None
    g2: GeneratorParams | None
    opt_f: AdamState
    opt_g1: AdamState | None
    opt_g2: AdamState | None

    @classmethod
    def init(cls, in_dim: int, enc_cfg: EncoderConfig, cfg: TrainConfig) -> "Model":
        rng = np.random.default_rng([cfg.seed, STREAM_INIT])
        f = EncoderParams.init(rng, in_dim, enc_cfg)
        g1 = GeneratorParams.init(rng, in_dim, enc_cfg, "edge") if cfg.mode != "feature_only" else None
        g2 = GeneratorParams.init(rng, in_dim, enc_cfg, "feature") if cfg.mode != "edge_only" else None
        model = cls(f, g1, g2, AdamState(lr=cfg.lr),
                    AdamState(lr=cfg.lr) if g1 else None, AdamState(lr=cfg.lr) if g2 else None)
        dc.zero_grad(model.all_parameters())
        return model

    def all_parameters(self) -> list[DiffValue]:
        out = self.f.parameters()
        for g in (self.g1, self.g2):
            if g is not None:
                out += g.parameters()
        return out

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = self.f.state_arrays("f.")
        if self.g1 is not None:
            out.update(self.g1.state_arrays("g1."))
        if self.g2 is not None:
            out.update(self.g2.state_arrays("g2."))
        return out

    def load_state_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        self.f.load_state_arrays(arrays, "f.")
        if self.g1 is not None:
            self.g1.load_state_arrays(arrays, "g1.")
        if self.g2 is not None:
            self.g2.load_state_arrays(arrays, "g2.")


@dataclass
class EpochMetrics:
    epoch: int
    loss_min_edge: float | None
    loss_min_feature: float | None
    loss_max: float
    drop_ratio: float | None
    mask_ratio: float | None
    pair_counts: list[int] = field(default_factory=lambda: [0, 0, 0])
    wall_time: float = 0.0

    def to_record(self) -> dict:
        return asdict(self)


def sample_pair(rng: np.random.Generator, mode: str, weights=(1.0, 1.0, 1.0)) -> int:
    """Index into :data:`PAIRS` of the pair used by the maximization step."""
    allowed = MODE_PAIRS[mode]
    if len(allowed) == 1:
        return allowed[0]
    w = np.array([weights[i] for i in allowed], dtype=np.float64)
    return allowed[int(rng.choice(len(allowed), p=w / w.sum()))]


def _finite(loss: DiffValue, what: str, epoch: int, batch_index: int) -> float:
    value = float(loss.data)
    if not np.isfinite(value):
        raise NumericalError(f"non-finite {what} ({value}) at epoch {epoch}, batch {batch_index}")
    return value


class Views:
    """One forward pass through both generators and the encoder."""

    def __init__(self, batch: GraphBatch, model: Model, cfg: TrainConfig, seed: int):
        self.edge = self.feature = None
        self.z1 = self.z2 = None
        if model.g1 is not None:
            self.edge = generate_edge_view(batch, model.g1, cfg.gumbel, derive_seed(seed, 1))
            self.z1 = encode_graphs(batch, model.f, arc_weights=self.edge.arc_weights)
        if model.g2 is not None:
            self.feature = generate_feature_view(batch, model.g2, cfg.gumbel, derive_seed(seed, 2))
            self.z2 = encode_graphs(batch, model.f, node_feature_mask=self.feature.keep_mask)


def minimize_step(which: str, z0: DiffValue, views: Views, model: Model, cfg: TrainConfig,
                  epoch: int = 0, batch_index: int = 0) -> float | None:
    """Anchored-loss update of one generator (``"g1"`` or ``"g2"``) only."""
    pooled = cfg.loss.anchor_negatives == "pooled"
    if which == "g1":
        z, other, gen, opt, what = views.z1, views.z2, model.g1, model.opt_g1, "edge L_min"
        active = views.edge is not None and views.edge.num_edges > 0
    else:
        z, other, gen, opt, what = views.z2, views.z1, model.g2, model.opt_g2, "feature L_min"
        active = views.feature is not None and views.feature.num_nodes > 0
    if z is None:
        return None
    loss = info_nce_anchor(z0, z, cfg.loss, other if pooled else None)
    value = _finite(loss, what, epoch, batch_index)
    if loss.requires_grad and active:
        dc.backward(loss)
        dc.adam_step(gen.parameters(), opt)
        # Gradients that reached f and the other generator are discarded.
        dc.zero_grad(model.all_parameters())
    return value


def maximize_step(pair: int, z0: DiffValue, views: Views, model: Model, cfg: TrainConfig,
                  epoch: int = 0, batch_index: int = 0) -> float:
    """Pairwise InfoNCE update of f plus the generators whose views take part."""
    a, b = PAIRS[pair]
    reps = {"z0": z0, "z1": views.z1, "z2": views.z2}
    loss = info_nce_pair(reps[a], reps[b], cfg.loss)
    value = _finite(loss, "L_max", epoch, batch_index)
    dc.backward(loss)
    dc.adam_step(model.f.parameters(), model.opt_f)
    if "z1" in (a, b) and views.edge.num_edges:
        dc.adam_step(model.g1.parameters(), model.opt_g1)
    if "z2" in (a, b) and views.feature.num_nodes:
        dc.adam_step(model.g2.parameters(), model.opt_g2)
    dc.zero_grad(model.all_parameters())
    return value


def train_step(batch: GraphBatch, model: Model, cfg: TrainConfig, epoch: int, batch_index: int,
               pair_rng: np.random.Generator) -> dict:
    """Run the six-step update on one minibatch; returns per-batch statistics."""
    base = derive_seed(cfg.seed, STREAM_NOISE, epoch, batch_index)
    z0 = encode_graphs(batch, model.f)
    first = Views(batch, model, cfg, derive_seed(base, 0))
    out: dict = {
        "loss_min_edge": minimize_step("g1", z0, first, model, cfg, epoch, batch_index),
        "loss_min_feature": minimize_step("g2", z0, first, model, cfg, epoch, batch_index),
    }
    if first.edge is not None:
        out["edges"] = first.edge.num_edges
        out["dropped"] = first.edge.drop_ratio * first.edge.num_edges
    if first.feature is not None:
        out["nodes"] = first.feature.num_nodes
        out["masked"] = first.feature.mask_ratio * first.feature.num_nodes
    fresh = Views(batch, model, cfg, derive_seed(base, 1))
    out["pair"] = sample_pair(pair_rng, cfg.mode, cfg.pair_weights)
    out["loss_max"] = maximize_step(out["pair"], z0, fresh, model, cfg, epoch, batch_index)
    return out


def train_epoch(batches: Sequence[GraphBatch], model: Model, cfg: TrainConfig, epoch_index: int,
                pair_rng: np.random.Generator) -> EpochMetrics:
    start = time.perf_counter()
    rows = [train_step(b, model, cfg, epoch_index, i, pair_rng) for i, b in enumerate(batches)]

    def avg(key):
        vals = [r[key] for r in rows if r.get(key) is not None]
        return float(np.mean(vals)) if vals else None

    def ratio(num, den):
        d = sum(r.get(den, 0) for r in rows)
        if model.g1 is None and num == "dropped" or model.g2 is None and num == "masked":
            return None
        return float(sum(r.get(num, 0.0) for r in rows) / d) if d else 0.0

    counts = [0, 0, 0]
    for r in rows:
        counts[r["pair"]] += 1
    return EpochMetrics(
        epoch=epoch_index,
        loss_min_edge=avg("loss_min_edge"),
        loss_min_feature=avg("loss_min_feature"),
        loss_max=avg("loss_max"),
        drop_ratio=ratio("dropped", "edges"),
        mask_ratio=ratio("masked", "nodes"),
        pair_counts=counts,
        wall_time=time.perf_counter() - start,
    )


@dataclass
class PretrainResult:
    model: Model
    metrics: list[EpochMetrics]


def pretrain(graphs: Sequence[Graph], enc_cfg: EncoderConfig, cfg: TrainConfig,
             on_epoch: Callable[[EpochMetrics, Model], None] | None = None) -> PretrainResult:
    """Unsupervised pretraining; graph labels are never read."""
    in_dim = graphs[0].node_features.shape[1]
    model = Model.init(in_dim, enc_cfg, cfg)
    pair_rng = np.random.default_rng([cfg.seed, STREAM_PAIRS])
    history = []
    for epoch in range(cfg.epochs):
        batches = make_batches(graphs, cfg.batch_size, derive_seed(cfg.seed, STREAM_SHUFFLE, epoch))
        metrics = train_epoch(batches, model, cfg, epoch, pair_rng)
        log.info("epoch %d: L_max=%.4f drop=%s mask=%s (%.1fs)", epoch, metrics.loss_max,
                 metrics.drop_ratio, metrics.mask_ratio, metrics.wall_time)
        history.append(metrics)
        if on_epoch is not None:
            on_epoch(metrics, model)
    return PretrainResult(model, history)
