"""TU-format ingestion, dataset statistics, batching and fold splitting."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Sequence

import numpy as np

from .diffcore import SegmentIndex
from .errors import ConsistencyError, ContractError, IngestionError, ParseError

log = logging.getLogger(__name__)


def pair_arcs(edges: np.ndarray) -> np.ndarray:
    """Match each undirected edge to its two arcs.

    Returns ``[m, 2]`` arc indices; column 0 is the arc running from the
    smaller to the larger endpoint.  A self-loop pairs its arc with itself.
    """
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    where = {(int(u), int(v)): i for i, (u, v) in enumerate(edges)}
    pairs = []
    for i, (u, v) in enumerate(edges):
        u, v = int(u), int(v)
        if u > v:
            continue
        j = where.get((v, u))
        if j is None:
            raise ConsistencyError(f"arc ({u}, {v}) has no reverse arc")
        pairs.append((i, j))
    if 2 * len(pairs) - int((edges[:, 0] == edges[:, 1]).sum()) != len(edges):
        raise ConsistencyError("arc list is not symmetric")
    return np.asarray(pairs, dtype=np.int64).reshape(-1, 2)


@dataclass(frozen=True, eq=False)
class Graph:
    node_features: np.ndarray
    edges: np.ndarray
    label: int
    graph_id: int
    edge_pairs: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        x = np.asarray(self.node_features, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] < 1:
            raise ContractError(f"node features must be [num_nodes, d>=1], got {x.shape}")
        e = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)
        if e.size and (e.min() < 0 or e.max() >= x.shape[0]):
            raise ConsistencyError(f"graph {self.graph_id}: edge endpoint outside [0, {x.shape[0]})")
        x.setflags(write=False)
        e.setflags(write=False)
        object.__setattr__(self, "node_features", x)
        object.__setattr__(self, "edges", e)
        object.__setattr__(self, "edge_pairs", pair_arcs(e))

    @classmethod
    def from_undirected(cls, node_features, edges, label: int = 0, graph_id: int = 0) -> "Graph":
        """Build from an undirected edge list, storing both orientations."""
        und = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
        arcs = []
        for u, v in und:
            arcs.append((u, v))
            if u != v:
                arcs.append((v, u))
        return cls(node_features, np.asarray(arcs, dtype=np.int64).reshape(-1, 2), label, graph_id)

    @property
    def num_nodes(self) -> int:
        return self.node_features.shape[0]

    @property
    def num_edges(self) -> int:
        return self.edge_pairs.shape[0]

    def relabeled(self, label: int) -> "Graph":
        return Graph(self.node_features, self.edges, label, self.graph_id)


class GraphBatch:
    """Disjoint union of graphs with node indices offset per member."""

    def __init__(self, graphs: Sequence[Graph]):
        if not graphs:
            raise ContractError("cannot batch zero graphs")
        dims = {g.node_features.shape[1] for g in graphs}
        if len(dims) != 1:
            raise ContractError(f"graphs disagree on feature dimension: {sorted(dims)}")
        sizes = np.array([g.num_nodes for g in graphs], dtype=np.int64)
        node_offsets = np.concatenate([[0], np.cumsum(sizes)[:-1]])
        arc_counts = np.array([len(g.edges) for g in graphs], dtype=np.int64)
        arc_offsets = np.concatenate([[0], np.cumsum(arc_counts)[:-1]])

        self.num_graphs = len(graphs)
        self.graph_ids = np.array([g.graph_id for g in graphs], dtype=np.int64)
        self.labels = np.array([g.label for g in graphs], dtype=np.int64)
        self.node_features = np.concatenate([g.node_features for g in graphs], axis=0)
        self.node_to_graph = np.repeat(np.arange(self.num_graphs), sizes)
        self.node_local = np.concatenate([np.arange(s) for s in sizes]).astype(np.int64)
        self.edges = np.concatenate(
            [g.edges + off for g, off in zip(graphs, node_offsets)], axis=0).reshape(-1, 2)
        self.undirected_edge_pairs = np.concatenate(
            [g.edge_pairs + off for g, off in zip(graphs, arc_offsets)], axis=0).reshape(-1, 2)
        self.edge_to_graph = np.repeat(np.arange(self.num_graphs),
                                       [g.num_edges for g in graphs])
        self.edge_local = np.concatenate(
            [np.arange(g.num_edges) for g in graphs]).astype(np.int64)
        for a in (self.node_features, self.edges, self.undirected_edge_pairs, self.node_to_graph):
            a.setflags(write=False)

    @property
    def num_nodes(self) -> int:
        return self.node_features.shape[0]

    @property
    def num_arcs(self) -> int:
        return self.edges.shape[0]

    @property
    def num_undirected_edges(self) -> int:
        return self.undirected_edge_pairs.shape[0]

    @cached_property
    def src_index(self) -> SegmentIndex:
        return SegmentIndex(self.edges[:, 0], self.num_nodes)

    @cached_property
    def dst_index(self) -> SegmentIndex:
        return SegmentIndex(self.edges[:, 1], self.num_nodes)

    @cached_property
    def graph_index(self) -> SegmentIndex:
        return SegmentIndex(self.node_to_graph, self.num_graphs)

    @cached_property
    def arc_to_edge(self) -> SegmentIndex:
        """Undirected edge owning each arc."""
        owner = np.empty(self.num_arcs, dtype=np.int64)
        owner[self.undirected_edge_pairs[:, 0]] = np.arange(self.num_undirected_edges)
        owner[self.undirected_edge_pairs[:, 1]] = np.arange(self.num_undirected_edges)
        return SegmentIndex(owner, self.num_undirected_edges)

    @cached_property
    def edge_endpoints(self) -> np.ndarray:
        """``[m, 2]`` node indices of each undirected edge, smaller first."""
        return self.edges[self.undirected_edge_pairs[:, 0]].reshape(-1, 2)

    @cached_property
    def edge_end_indices(self) -> tuple[SegmentIndex, SegmentIndex]:
        ends = self.edge_endpoints
        return SegmentIndex(ends[:, 0], self.num_nodes), SegmentIndex(ends[:, 1], self.num_nodes)


@dataclass(frozen=True)
class DatasetStats:
    num_graphs: int
    avg_nodes: float
    avg_edges: float
    num_classes: int
    num_node_features: int | None
    avg_arcs: float = 0.0

    def table_row(self, name: str) -> str:
        feats = "None" if self.num_node_features is None else str(self.num_node_features)
        return (f"{name:<16} {self.num_graphs:>8,} {self.avg_nodes:>10.2f} "
                f"{self.avg_edges:>10.2f} {self.num_classes:>8} {feats:>13}")

    @staticmethod
    def table_header() -> str:
        return (f"{'Datasets':<16} {'Graphs':>8} {'Avg Nodes':>10} {'Avg Edges':>10} "
                f"{'Classes':>8} {'num features':>13}")


def compute_stats(graphs: Sequence[Graph], num_node_features: int | None) -> DatasetStats:
    if not graphs:
        raise ContractError("no graphs")
    nodes = np.array([g.num_nodes for g in graphs], dtype=np.float64)
    edges = np.array([g.num_edges for g in graphs], dtype=np.float64)
    arcs = np.array([len(g.edges) for g in graphs], dtype=np.float64)
    return DatasetStats(
        num_graphs=len(graphs),
        avg_nodes=float(nodes.mean()),
        avg_edges=float(edges.mean()),
        num_classes=len({g.label for g in graphs}),
        num_node_features=num_node_features,
        avg_arcs=float(arcs.mean()),
    )


# -------------------------------------------------------------------- parsing

def _read_rows(path: Path, kind: type, width: int | None = None) -> list[list]:
    rows = []
    with path.open() as fh:
        for lineno, line in enumerate(fh, start=1):
            text = line.strip()
            if not text:
                continue
            parts = [p.strip() for p in text.split(",")]
            try:
                row = [kind(p) for p in parts]
            except ValueError:
                what = "integer" if kind is int else "number"
                raise ParseError(f"{path.name}:{lineno}: expected {what}s, got {text!r}") from None
            if width is not None and len(row) != width:
                raise ParseError(f"{path.name}:{lineno}: expected {width} values, got {len(row)}")
            rows.append(row)
    return rows


def _read_column(path: Path) -> np.ndarray:
    return np.array([r[0] for r in _read_rows(path, int, 1)], dtype=np.int64)


def parse_tu_dataset(directory, dataset_name: str) -> tuple[list[Graph], DatasetStats]:
    """Read ``<DS>_A.txt`` and friends from ``directory``."""
    root = Path(directory)
    if not root.is_dir():
        raise IngestionError(f"dataset directory not found: {root}")
    path = {s: root / f"{dataset_name}_{s}.txt" for s in
            ("A", "graph_indicator", "graph_labels", "node_labels", "node_attributes",
             "edge_labels", "edge_attributes")}
    for s in ("A", "graph_indicator", "graph_labels"):
        if not path[s].is_file():
            raise IngestionError(f"missing mandatory file: {path[s]}")
    for s in ("edge_labels", "edge_attributes"):
        if path[s].is_file():
            log.info("ignoring %s (edge features are not modeled)", path[s].name)

    indicator = _read_column(path["graph_indicator"])
    graph_labels = _read_column(path["graph_labels"])
    num_graphs = len(graph_labels)
    num_nodes = len(indicator)
    if num_nodes == 0 or num_graphs == 0:
        raise IngestionError(f"{dataset_name}: empty graph indicator or label file")
    if indicator.min() < 1 or indicator.max() > num_graphs:
        bad = int(np.flatnonzero((indicator < 1) | (indicator > num_graphs))[0])
        raise ConsistencyError(
            f"{path['graph_indicator'].name}:{bad + 1}: graph id {indicator[bad]} outside [1, {num_graphs}]")
    gidx = indicator - 1
    counts = np.bincount(gidx, minlength=num_graphs)
    # Local index = rank of the node among its graph's nodes in file order.
    order = np.argsort(gidx, kind="stable")
    local = np.empty(num_nodes, dtype=np.int64)
    starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
    local[order] = np.arange(num_nodes) - np.repeat(starts, counts)

    arcs_per_graph: list[list[tuple[int, int]]] = [[] for _ in range(num_graphs)]
    with path["A"].open() as fh:
        for lineno, line in enumerate(fh, start=1):
            text = line.strip()
            if not text:
                continue
            parts = text.split(",")
            if len(parts) != 2:
                raise ParseError(f"{path['A'].name}:{lineno}: expected 'u, v', got {text!r}")
            try:
                u, v = int(parts[0]), int(parts[1])
            except ValueError:
                raise ParseError(f"{path['A'].name}:{lineno}: expected integers, got {text!r}") from None
            if not (1 <= u <= num_nodes and 1 <= v <= num_nodes):
                raise ConsistencyError(f"{path['A'].name}:{lineno}: node id outside [1, {num_nodes}]")
            g = gidx[u - 1]
            if gidx[v - 1] != g:
                raise ConsistencyError(
                    f"{path['A'].name}:{lineno}: arc ({u}, {v}) joins graphs {g + 1} and {gidx[v - 1] + 1}")
            arcs_per_graph[g].append((int(local[u - 1]), int(local[v - 1])))

    blocks = []
    if path["node_labels"].is_file():
        node_labels = _read_column(path["node_labels"])
        if len(node_labels) != num_nodes:
            raise ConsistencyError(
                f"{path['node_labels'].name}: {len(node_labels)} rows for {num_nodes} nodes")
        values, codes = np.unique(node_labels, return_inverse=True)
        blocks.append(np.eye(len(values))[codes])
    if path["node_attributes"].is_file():
        attrs = np.array(_read_rows(path["node_attributes"], float), dtype=np.float64)
        if attrs.ndim != 2 or attrs.shape[0] != num_nodes:
            raise ConsistencyError(
                f"{path['node_attributes'].name}: {attrs.shape[0]} rows for {num_nodes} nodes")
        blocks.append(attrs)
    if blocks:
        features = np.concatenate(blocks, axis=1)
        num_features: int | None = features.shape[1]
    else:
        features = np.ones((num_nodes, 1))
        num_features = None

    label_values, label_codes = np.unique(graph_labels, return_inverse=True)
    graphs = []
    for g in range(num_graphs):
        members = order[starts[g]:starts[g] + counts[g]]
        x = np.empty((counts[g], features.shape[1]))
        x[local[members]] = features[members]
        arcs = _symmetrize(arcs_per_graph[g], g + 1, dataset_name)
        graphs.append(Graph(x, arcs, int(label_codes[g]), g))
    stats = compute_stats(graphs, num_features)
    if len(label_values) < 2:
        log.warning("%s has a single graph class", dataset_name)
    return graphs, stats


def _symmetrize(arcs: list[tuple[int, int]], graph_no: int, name: str) -> np.ndarray:
    seen = dict.fromkeys(arcs)
    if len(seen) != len(arcs):
        log.warning("%s graph %d: dropped %d duplicate arcs", name, graph_no, len(arcs) - len(seen))
    missing = [(v, u) for (u, v) in seen if (v, u) not in seen]
    if missing:
        log.warning("%s graph %d: added %d reverse arcs", name, graph_no, len(missing))
        seen.update(dict.fromkeys(missing))
    return np.array(list(seen), dtype=np.int64).reshape(-1, 2)


def write_tu_dataset(graphs: Sequence[Graph], directory, dataset_name: str,
                     write_features: bool = True) -> None:
    """Write graphs in TU format; features go to ``_node_attributes.txt``."""
    root = Path(directory)
    root.mkdir(parents=True, exist_ok=True)
    offset = 0
    a_lines, ind_lines, lab_lines, attr_lines = [], [], [], []
    for g_no, g in enumerate(graphs, start=1):
        for u, v in g.edges:
            a_lines.append(f"{u + offset + 1}, {v + offset + 1}")
        ind_lines.extend([str(g_no)] * g.num_nodes)
        lab_lines.append(str(g.label))
        attr_lines.extend(", ".join(repr(float(x)) for x in row) for row in g.node_features)
        offset += g.num_nodes
    (root / f"{dataset_name}_A.txt").write_text("\n".join(a_lines) + ("\n" if a_lines else ""))
    (root / f"{dataset_name}_graph_indicator.txt").write_text("\n".join(ind_lines) + "\n")
    (root / f"{dataset_name}_graph_labels.txt").write_text("\n".join(lab_lines) + "\n")
    if write_features:
        (root / f"{dataset_name}_node_attributes.txt").write_text("\n".join(attr_lines) + "\n")


# ------------------------------------------------------------ batching, folds

def make_batches(graphs: Sequence[Graph], batch_size: int,
                 shuffle_seed: int | None = None) -> list[GraphBatch]:
    """Split ``graphs`` into disjoint-union batches; ``None`` keeps input order."""
    if not graphs:
        raise ContractError("make_batches: empty graph list")
    if batch_size < 1:
        raise ContractError(f"batch_size must be >= 1, got {batch_size}")
    order = np.arange(len(graphs))
    if shuffle_seed is not None:
        order = np.random.default_rng(shuffle_seed).permutation(len(graphs))
    return [GraphBatch([graphs[i] for i in order[s:s + batch_size]])
            for s in range(0, len(graphs), batch_size)]


def stratified_kfold(labels, k: int, seed: int) -> list[np.ndarray]:
    labels = np.asarray(labels)
    n = len(labels)
    if k < 2:
        raise ContractError(f"k must be >= 2, got {k}")
    if k > n:
        raise ContractError(f"k={k} exceeds the number of samples ({n})")
    rng = np.random.default_rng(seed)
    classes, counts = np.unique(labels, return_counts=True)
    folds: list[list[int]] = [[] for _ in range(k)]
    if counts.min() < k:
        log.warning("a class has fewer than %d members; folds are not stratified", k)
        for f, chunk in enumerate(np.array_split(rng.permutation(n), k)):
            folds[f].extend(chunk.tolist())
    else:
        cursor = 0
        # Classes in order of first appearance, so renaming class ids keeps the folds.
        _, first = np.unique(labels, return_index=True)
        for c in labels[np.sort(first)]:
            members = rng.permutation(np.flatnonzero(labels == c))
            for j, idx in enumerate(members):
                folds[(cursor + j) % k].append(int(idx))
            cursor = (cursor + len(members)) % k
    return [np.sort(np.asarray(f, dtype=np.int64)) for f in folds]
