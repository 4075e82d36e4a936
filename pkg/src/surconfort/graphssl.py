"""Graph-regularized semi-supervised training.

The objective is supervised cross-entropy plus a graph term that pulls
the descriptors of graph-adjacent samples together, summed over
labeled-labeled, labeled-unlabeled, and unlabeled-unlabeled edges.  The
rail graph connects samples that share (date, slot) and whose stations
carry positive railroad-adjacency weight; regularizing across different
times of day would tie unrelated descriptors together, so edges are
contemporaneous by construction.  The natural-graph variant instead uses
input-space k-nearest-neighbor similarity between samples.

Edges are resampled uniformly per mini-batch, with each partition's sum
rescaled by partition-size/sample-count so the estimator is unbiased;
full-batch evaluation is available for exact checks.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .data import SplitDataset
from .diffusion import natural_affinity
from .nn import (TrainConfig, TrainLog, MlpModel, _rng_streams, fit_classifier,
                 forward, graph_penalty, mean_cross_entropy, split_validation)
from .railgraph import RailAdjacency

GRAPH_RAIL = "rail"
GRAPH_NATURAL = "natural"
GRAPH_COSINE = "cosine"

TAG_LL, TAG_LU, TAG_UU = 0, 1, 2


@dataclass(frozen=True)
class NgmConfig:
    zeta: float = 0.7
    edges_per_batch: int = 256
    graph_source: str = GRAPH_RAIL
    natural_k: int = 50
    # cap on unlabeled samples entering the natural sample graph; the full
    # pool would make k-NN construction quadratic in hundreds of thousands
    max_graph_unlabeled: int = 3000

    def __post_init__(self):
        if self.zeta < 0:
            raise ValueError(f"zeta must be nonnegative, got {self.zeta}")
        if self.graph_source not in (GRAPH_RAIL, GRAPH_NATURAL, GRAPH_COSINE):
            raise ValueError(f"unknown graph source: {self.graph_source!r}")


@dataclass(frozen=True)
class SampleGraph:
    """Weighted edges between sample rows of one split, tagged LL/LU/UU."""
    i: np.ndarray  # (m,) sample rows
    j: np.ndarray
    w: np.ndarray  # weights in (0, 1]
    tag: np.ndarray  # (m,) TAG_* codes

    def __post_init__(self):
        for arr in (self.i, self.j, self.w, self.tag):
            arr.setflags(write=False)

    @property
    def n_edges(self) -> int:
        return int(self.i.size)

    def partition(self, tag: int) -> np.ndarray:
        return np.flatnonzero(self.tag == tag)

    def full_batches(self):
        """All edges grouped by partition at scale 1 (exact evaluation)."""
        out = []
        for tag in (TAG_LL, TAG_LU, TAG_UU):
            rows = self.partition(tag)
            if rows.size:
                out.append((self.i[rows], self.j[rows], self.w[rows], 1.0))
        return out


def pair_penalty(v_i: np.ndarray, v_j: np.ndarray, w: float) -> float:
    """Half the squared distance between two descriptors, scaled by the
    station-pair weight."""
    v_i = np.asarray(v_i, dtype=float)
    v_j = np.asarray(v_j, dtype=float)
    if v_i.shape != v_j.shape:
        raise ValueError(f"descriptor shapes differ: {v_i.shape} vs {v_j.shape}")
    diff = v_i - v_j
    return 0.5 * float(diff @ diff) * float(w)


def _tag_edges(split: SplitDataset, i: np.ndarray, j: np.ndarray) -> np.ndarray:
    lab_i = i < split.l
    lab_j = j < split.l
    return np.where(lab_i & lab_j, TAG_LL,
                    np.where(lab_i | lab_j, TAG_LU, TAG_UU)).astype(np.int8)


def build_sample_graph(split: SplitDataset, adjacency: RailAdjacency) -> SampleGraph:
    """One edge per unordered pair of samples that share (date, slot) and
    whose stations have positive adjacency weight."""
    if adjacency.size != split.S:
        raise ValueError(f"adjacency is over {adjacency.size} stations, "
                         f"split has {split.S}")
    cell_key = split.date_ord.astype(np.int64) * split.T + split.slot
    cells, cell_of = np.unique(cell_key, return_inverse=True)
    table = np.full((cells.size, split.S), -1, dtype=np.int64)
    table[cell_of, split.station] = np.arange(split.n)

    chunks_i, chunks_j, chunks_w = [], [], []
    for a, b, w in adjacency.pairs():
        ia = table[:, a]
        ib = table[:, b]
        ok = (ia >= 0) & (ib >= 0)
        if ok.any():
            chunks_i.append(ia[ok])
            chunks_j.append(ib[ok])
            chunks_w.append(np.full(int(ok.sum()), w))
    if not chunks_i:
        empty = np.zeros(0, dtype=np.int64)
        return SampleGraph(i=empty, j=empty.copy(), w=np.zeros(0),
                           tag=np.zeros(0, dtype=np.int8))
    i = np.concatenate(chunks_i)
    j = np.concatenate(chunks_j)
    w = np.concatenate(chunks_w)
    order = np.lexsort((j, i))
    i, j, w = i[order], j[order], w[order]
    return SampleGraph(i=i, j=j, w=w, tag=_tag_edges(split, i, j))


def build_natural_sample_graph(split: SplitDataset, k: int = 50,
                               max_unlabeled: int = 3000,
                               seed: int = 0) -> SampleGraph:
    """Sample graph from k-NN L2 similarity in input space (the plain NGM
    ablation).  Unlabeled rows beyond the cap are subsampled uniformly."""
    unlabeled = np.arange(split.l, split.n)
    if unlabeled.size > max_unlabeled:
        rng = np.random.default_rng([seed, 104729])
        unlabeled = np.sort(rng.choice(unlabeled, size=max_unlabeled, replace=False))
    nodes = np.concatenate([np.arange(split.l), unlabeled])
    affinity = natural_affinity(split.features(nodes), k=min(k, nodes.size - 1))
    coo = affinity.matrix.tocoo()
    keep = coo.row < coo.col
    i = nodes[coo.row[keep]]
    j = nodes[coo.col[keep]]
    w = coo.data[keep].astype(float)
    order = np.lexsort((j, i))
    i, j, w = i[order], j[order], w[order]
    return SampleGraph(i=i, j=j, w=np.minimum(w, 1.0), tag=_tag_edges(split, i, j))


@dataclass
class EdgeSampler:
    """Per-batch uniform edge resampling with unbiased partition rescaling."""
    graph: SampleGraph
    zeta: float
    edges_per_batch: int

    def __post_init__(self):
        self._partitions = [self.graph.partition(tag)
                            for tag in (TAG_LL, TAG_LU, TAG_UU)]

    @property
    def n_edges(self) -> int:
        return self.graph.n_edges

    def sample(self, rng: np.random.Generator):
        out = []
        for rows in self._partitions:
            m = rows.size
            if m == 0:
                continue
            sel = rows[rng.integers(0, m, size=self.edges_per_batch)]
            out.append((self.graph.i[sel], self.graph.j[sel],
                        self.graph.w[sel], m / self.edges_per_batch))
        return out


def ngm_loss(model: MlpModel, features: np.ndarray, labels, labeled_rows,
             edge_batches, zeta: float, mode: str = "train") -> float:
    """Mean cross-entropy over the labeled rows plus zeta times the
    (rescaled) edge penalty, from one shared forward pass.

    ``features`` holds each distinct sample once; ``labeled_rows`` and the
    edge batches index into it.
    """
    labeled_rows = np.asarray(labeled_rows, dtype=np.intp)
    if labeled_rows.size == 0:
        raise ValueError("ngm loss needs a nonempty labeled batch")
    probs, desc, _ = forward(model, features, mode, update_running=False)
    ce, _ = mean_cross_entropy(probs[labeled_rows], np.asarray(labels, dtype=np.intp))
    penalty, _ = graph_penalty(desc, edge_batches)
    return ce + zeta * penalty


def train_surconfort(split: SplitDataset, adjacency: RailAdjacency | None,
                     ngm_cfg: NgmConfig = NgmConfig(),
                     train_cfg: TrainConfig = TrainConfig()
                     ) -> tuple[MlpModel, TrainLog]:
    """Fit the graph-regularized classifier.

    With zeta = 0 (or an empty graph) this runs the exact supervised path,
    drawing from the same random streams, so results are bit-identical to
    ``train_supervised`` under equal seeds.
    """
    if split.l == 0:
        raise ValueError("cannot train on an empty labeled set")
    edge_term = None
    if ngm_cfg.zeta > 0.0:
        if ngm_cfg.graph_source == GRAPH_NATURAL:
            graph = build_natural_sample_graph(split, k=ngm_cfg.natural_k,
                                               max_unlabeled=ngm_cfg.max_graph_unlabeled,
                                               seed=train_cfg.seed)
        else:
            if adjacency is None:
                raise ValueError(f"graph source {ngm_cfg.graph_source!r} needs a "
                                 "station adjacency")
            graph = build_sample_graph(split, adjacency)
        if graph.n_edges == 0:
            warnings.warn("sample graph is empty; training degenerates to the "
                          "supervised baseline")
        else:
            edge_term = EdgeSampler(graph, ngm_cfg.zeta, ngm_cfg.edges_per_batch)

    _, _, _, val_rng = _rng_streams(train_cfg.seed)
    val_rows, train_rows = split_validation(split.l, train_cfg.val_fraction, val_rng)
    labels = split.labels()
    return fit_classifier(split, train_rows, labels[train_rows], None,
                          val_rows, labels[val_rows], train_cfg, edge_term=edge_term)
