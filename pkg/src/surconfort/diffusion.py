"""Graph-diffusion baselines: label propagation (hard clamping), label
spreading (soft clamping), and the pseudo-label/retrain alternation that
couples diffusion over a descriptor graph with network training.

Affinity graphs come in two flavors: the natural graph (k-NN by L2
distance in input space, Gaussian weights with a data-scaled kernel
width) and the descriptor graph (clipped inner products raised to gamma
over descriptor k-NN).  Diffusion solves (I - delta*S) Z = Y with a
hand-rolled conjugate gradient; delta is the diffusion coefficient.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
import scipy.sparse as sp

from .errors import ConvergenceError
from .nn import (MlpModel, TrainConfig, TrainLog, _rng_streams, descriptors,
                 fit_classifier, split_validation, train_supervised)

N_CLASSES = 4


@dataclass(frozen=True)
class DiffusionConfig:
    delta: float = 0.9
    k: int = 50
    gamma: float = 3.0
    rounds: int = 3
    tol: float = 1e-6
    max_iter: int = 1000
    pseudo_weight: float = 0.5
    pretrain_epochs: int = 100
    # unlabeled-pool cap for the diffusion graph; dense diffusion over the
    # full unlabeled universe is out of reach and out of scope
    max_graph_unlabeled: int = 3000

    def __post_init__(self):
        if not 0.0 < self.delta < 1.0:
            raise ValueError(f"delta must lie in (0, 1), got {self.delta}")
        if self.k < 1:
            raise ValueError(f"k must be >= 1, got {self.k}")
        if self.gamma < 1:
            raise ValueError(f"gamma must be >= 1, got {self.gamma}")
        if self.rounds < 0:
            raise ValueError(f"rounds must be >= 0, got {self.rounds}")


@dataclass(frozen=True)
class AffinityMatrix:
    """Sparse nonnegative sample-by-sample similarity with zero diagonal."""
    matrix: sp.csr_matrix
    k: int
    sigma: float | None = None
    gamma: float | None = None

    @property
    def n(self) -> int:
        return self.matrix.shape[0]


def _knn_by_distance(features: np.ndarray, k: int, chunk: int = 512):
    """k nearest rows by L2 distance, self excluded; ties break toward the
    lower index (stable sort)."""
    n = features.shape[0]
    if n <= k:
        raise ValueError(f"need more than k={k} samples, got {n}")
    sq = (features * features).sum(axis=1)
    idx = np.empty((n, k), dtype=np.int64)
    dist = np.empty((n, k))
    for start in range(0, n, chunk):
        block = features[start:start + chunk]
        m = block.shape[0]
        d2 = sq[start:start + m, None] + sq[None, :] - 2.0 * (block @ features.T)
        np.maximum(d2, 0.0, out=d2)
        d2[np.arange(m), np.arange(start, start + m)] = np.inf
        order = np.argsort(d2, axis=1, kind="stable")[:, :k]
        idx[start:start + m] = order
        dist[start:start + m] = np.sqrt(np.take_along_axis(d2, order, axis=1))
    return idx, dist


def natural_affinity(features: np.ndarray, k: int) -> AffinityMatrix:
    """Directed k-NN by input-space L2 distance with Gaussian weights
    exp(-d^2 / (2 sigma^2)), sigma = median neighbor distance, symmetrized
    by elementwise max."""
    features = np.asarray(features, dtype=float)
    n = features.shape[0]
    idx, dist = _knn_by_distance(features, k)
    positive = dist[dist > 0.0]
    sigma = float(np.median(dist))
    if sigma <= 0.0:
        sigma = float(positive.min()) if positive.size else 1.0
    weights = np.exp(-(dist ** 2) / (2.0 * sigma ** 2))
    rows = np.repeat(np.arange(n), k)
    directed = sp.coo_matrix((weights.ravel(), (rows, idx.ravel())), shape=(n, n)).tocsr()
    symmetric = directed.maximum(directed.T)
    symmetric.setdiag(0.0)
    symmetric.eliminate_zeros()
    return AffinityMatrix(matrix=symmetric.tocsr(), k=k, sigma=sigma)


def descriptor_affinity(desc: np.ndarray, k: int, gamma: float = 3.0,
                        chunk: int = 512) -> AffinityMatrix:
    """Clipped inner-product affinity max(v_i . v_j, 0)^gamma over each
    row's k most similar neighbors, then symmetrized by A + A^T."""
    desc = np.asarray(desc, dtype=float)
    n = desc.shape[0]
    if n <= k:
        raise ValueError(f"need more than k={k} samples, got {n}")
    rows_all, cols_all, data_all = [], [], []
    for start in range(0, n, chunk):
        block = desc[start:start + chunk]
        m = block.shape[0]
        sims = block @ desc.T
        sims[np.arange(m), np.arange(start, start + m)] = -np.inf
        order = np.argsort(-sims, axis=1, kind="stable")[:, :k]
        vals = np.take_along_axis(sims, order, axis=1)
        vals = np.maximum(vals, 0.0) ** gamma
        rows_all.append(np.repeat(np.arange(start, start + m), k))
        cols_all.append(order.ravel())
        data_all.append(vals.ravel())
    directed = sp.coo_matrix(
        (np.concatenate(data_all), (np.concatenate(rows_all), np.concatenate(cols_all))),
        shape=(n, n)).tocsr()
    symmetric = (directed + directed.T).tocsr()
    symmetric.setdiag(0.0)
    symmetric.eliminate_zeros()
    return AffinityMatrix(matrix=symmetric, k=k, gamma=gamma)


def _one_hot_labels(labels: np.ndarray) -> np.ndarray:
    labels = np.asarray(labels)
    y = np.zeros((labels.size, N_CLASSES))
    rows = np.flatnonzero(labels >= 0)
    if rows.size == 0:
        raise ValueError("diffusion needs at least one labeled sample")
    y[rows, labels[rows]] = 1.0
    return y


def _normalized_operator(affinity: AffinityMatrix) -> sp.csr_matrix:
    """Symmetric normalization D^{-1/2} A D^{-1/2}; isolated nodes keep
    zero rows."""
    a = affinity.matrix
    deg = np.asarray(a.sum(axis=1)).ravel()
    inv_sqrt = np.zeros_like(deg)
    positive = deg > 0
    inv_sqrt[positive] = 1.0 / np.sqrt(deg[positive])
    d = sp.diags(inv_sqrt)
    return (d @ a @ d).tocsr()


def conjugate_gradient(matvec, b: np.ndarray, tol_abs: float, max_iter: int) -> np.ndarray:
    """CG for a symmetric positive definite operator, from x0 = 0, stopping
    at ||r||_2 <= tol_abs."""
    x = np.zeros_like(b)
    r = b.copy()
    rs = float(r @ r)
    if math.sqrt(rs) <= tol_abs:
        return x
    d = r.copy()
    for _ in range(max_iter):
        ad = matvec(d)
        alpha = rs / float(d @ ad)
        x += alpha * d
        r -= alpha * ad
        rs_new = float(r @ r)
        if math.sqrt(rs_new) <= tol_abs:
            return x
        d = r + (rs_new / rs) * d
        rs = rs_new
    raise ConvergenceError(f"conjugate gradient did not reach {tol_abs:g} "
                           f"within {max_iter} iterations")


def diffuse(affinity: AffinityMatrix, labels: np.ndarray, delta: float,
            cfg: DiffusionConfig = DiffusionConfig()) -> np.ndarray:
    """Solve (I - delta*S) Z = Y by conjugate gradient; Y holds one-hot rows
    for labeled samples and zeros elsewhere.

    The residual threshold is scaled by the smallest eigenvalue bound
    1 - delta of the system matrix, so the configured tolerance bounds the
    solution error, not just the residual.
    """
    if not 0.0 <= delta < 1.0:
        raise ValueError(f"delta must lie in [0, 1), got {delta}")
    y = _one_hot_labels(labels)
    op = _normalized_operator(affinity)

    def matvec(v):
        return v - delta * (op @ v)

    z = np.empty_like(y)
    for c in range(N_CLASSES):
        b = y[:, c]
        tol_abs = cfg.tol * (1.0 - delta) * max(1.0, float(np.linalg.norm(b)))
        z[:, c] = conjugate_gradient(matvec, b, tol_abs, cfg.max_iter)
    return z


def classes_from_scores(scores: np.ndarray, fallback: int) -> np.ndarray:
    """Row argmax with ties to the lowest class; rows that received no mass
    (all scores <= 0) fall back to the given class."""
    preds = np.argmax(scores, axis=1)
    preds[scores.max(axis=1) <= 0.0] = fallback
    return preds


def majority_class(labels: np.ndarray) -> int:
    labels = np.asarray(labels)
    labeled = labels[labels >= 0]
    if labeled.size == 0:
        raise ValueError("no labeled samples")
    return int(np.bincount(labeled, minlength=N_CLASSES).argmax())


def spread_scores(affinity: AffinityMatrix, labels: np.ndarray, delta: float,
                  cfg: DiffusionConfig = DiffusionConfig()) -> np.ndarray:
    """Soft-clamped diffusion: iterate Z <- delta*S Z + (1-delta) Y until the
    update is small enough that the contraction bound guarantees the
    configured tolerance on the fixed point."""
    y = _one_hot_labels(labels)
    op = _normalized_operator(affinity)
    z = y.copy()
    threshold = cfg.tol * (1.0 - delta) / max(delta, 1e-12)
    for _ in range(cfg.max_iter):
        z_next = delta * (op @ z) + (1.0 - delta) * y
        change = float(np.abs(z_next - z).max())
        z = z_next
        if change <= threshold:
            return z
    raise ConvergenceError(f"label spreading did not converge within {cfg.max_iter} "
                           "iterations")


def label_spreading(affinity: AffinityMatrix, labels: np.ndarray, delta: float,
                    cfg: DiffusionConfig = DiffusionConfig()) -> np.ndarray:
    scores = spread_scores(affinity, labels, delta, cfg)
    return classes_from_scores(scores, majority_class(labels))


def propagate_scores(affinity: AffinityMatrix, labels: np.ndarray,
                     cfg: DiffusionConfig = DiffusionConfig()) -> np.ndarray:
    """Hard-clamped propagation: iterate Z <- D^{-1} A Z, re-clamping labeled
    rows to their one-hot labels every step."""
    labels = np.asarray(labels)
    y = _one_hot_labels(labels)
    a = affinity.matrix
    deg = np.asarray(a.sum(axis=1)).ravel()
    inv = np.zeros_like(deg)
    inv[deg > 0] = 1.0 / deg[deg > 0]
    p = (sp.diags(inv) @ a).tocsr()
    clamp = labels >= 0

    z = y.copy()
    # delta stopping has no contraction constant here; a 0.1 safety factor
    # keeps the iterate comfortably inside the configured tolerance
    threshold = 0.1 * cfg.tol
    for _ in range(cfg.max_iter):
        z_next = p @ z
        z_next[clamp] = y[clamp]
        change = float(np.abs(z_next - z).max())
        z = z_next
        if change <= threshold:
            return z
    raise ConvergenceError(f"label propagation did not converge within {cfg.max_iter} "
                           "iterations")


def label_propagation(affinity: AffinityMatrix, labels: np.ndarray,
                      cfg: DiffusionConfig = DiffusionConfig()) -> np.ndarray:
    scores = propagate_scores(affinity, labels, cfg)
    preds = classes_from_scores(scores, majority_class(labels))
    clamp = np.asarray(labels) >= 0
    preds[clamp] = labels[clamp]
    return preds


# ---------------------------------------------------------------------------
# Pseudo-label / retrain alternation

def lp_dssl_train(split, cfg: DiffusionConfig = DiffusionConfig(),
                  train_cfg: TrainConfig = TrainConfig()) -> tuple[MlpModel, TrainLog]:
    """Pre-train the supervised network, then alternate descriptor-graph
    diffusion pseudo-labeling with from-scratch retraining (true labels at
    weight 1, pseudo-labels at the configured weight); the best model by
    validation accuracy wins.

    With rounds = 0 this is exactly supervised training at the pre-train
    epoch budget.
    """
    if split.l == 0:
        raise ValueError("cannot train on an empty labeled set")
    pretrain_cfg = replace(train_cfg, max_epochs=cfg.pretrain_epochs)
    model, log = train_supervised(split, pretrain_cfg)
    if cfg.rounds == 0:
        return model, log

    # Recreate the exact validation split the pre-training run used, so the
    # held-out labels never feed diffusion or retraining.
    _, _, _, val_rng = _rng_streams(pretrain_cfg.seed)
    val_rows, train_rows = split_validation(split.l, pretrain_cfg.val_fraction, val_rng)
    labels = split.labels()
    val_labels = labels[val_rows]

    unlabeled = np.arange(split.l, split.n)
    if unlabeled.size > cfg.max_graph_unlabeled:
        sub_rng = np.random.default_rng([train_cfg.seed, 7919])
        unlabeled = np.sort(sub_rng.choice(unlabeled, size=cfg.max_graph_unlabeled,
                                           replace=False))
    nodes = np.concatenate([train_rows, unlabeled])
    node_x = split.features(nodes)
    node_labels = np.full(nodes.size, -1, dtype=np.int64)
    node_labels[:train_rows.size] = labels[train_rows]
    fallback = majority_class(node_labels)

    def val_score(lg: TrainLog) -> float:
        return max(lg.val_accuracy) if lg.val_accuracy and not math.isnan(
            lg.val_accuracy[-1]) else float("-inf")

    best_model, best_log, best_acc = model, log, val_score(log)
    for round_idx in range(1, cfg.rounds + 1):
        desc = descriptors(model, node_x)
        k_eff = min(cfg.k, nodes.size - 1)
        affinity = descriptor_affinity(desc, k=k_eff, gamma=cfg.gamma)
        scores = diffuse(affinity, node_labels, cfg.delta, cfg)
        pseudo = classes_from_scores(scores[train_rows.size:], fallback)

        train_y = np.concatenate([labels[train_rows], pseudo])
        train_w = np.concatenate([np.ones(train_rows.size),
                                  np.full(pseudo.size, cfg.pseudo_weight)])
        round_seed = int(np.random.SeedSequence([train_cfg.seed, 52711, round_idx])
                         .generate_state(1)[0])
        round_cfg = replace(pretrain_cfg, seed=round_seed)
        model, round_log = fit_classifier(split, nodes, train_y, train_w,
                                          val_rows, val_labels, round_cfg)
        acc = val_score(round_log)
        if acc > best_acc:
            best_model, best_log, best_acc = model, round_log, acc
    return best_model, best_log
