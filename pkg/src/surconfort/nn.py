"""Four-layer fully-connected classifier with batch normalization, written
directly on numpy: forward/backward passes, cross-entropy, Adam, the
shared early-stopping training loop, and plain-text checkpoints.

Layer widths default to 128, 256, 128, 4 with batch normalization before
every affine layer except the first.  The 128-wide activation after the
third layer is the sample descriptor; graph regularization injects its
gradient there (see ``fit_classifier``'s edge-term hook).

Everything is float64: desk-scale problems make that affordable and it
keeps the finite-difference gradient check sharp.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

DIMS_DEFAULT = (128, 256, 128, 4)
N_CLASSES = 4
PROB_CLIP = 1e-12

BN_LAYERS = (2, 3, 4)  # batch norm precedes these affine layers
TRAINABLE_KEYS = tuple(
    [f"W{k}" for k in (1, 2, 3, 4)] + [f"b{k}" for k in (1, 2, 3, 4)]
    + [f"bn{k}_scale" for k in BN_LAYERS] + [f"bn{k}_shift" for k in BN_LAYERS])
STATE_KEYS = tuple([f"bn{k}_mean" for k in BN_LAYERS] + [f"bn{k}_var" for k in BN_LAYERS])
PARAM_ORDER = (
    "W1", "b1",
    "bn2_scale", "bn2_shift", "bn2_mean", "bn2_var", "W2", "b2",
    "bn3_scale", "bn3_shift", "bn3_mean", "bn3_var", "W3", "b3",
    "bn4_scale", "bn4_shift", "bn4_mean", "bn4_var", "W4", "b4",
)


@dataclass
class MlpModel:
    input_dim: int
    dims: tuple[int, int, int, int]
    params: dict[str, np.ndarray]
    S: int | None = None
    T: int | None = None
    bn_momentum: float = 0.9
    bn_eps: float = 1e-5

    @property
    def descriptor_dim(self) -> int:
        return self.dims[2]

    def copy(self) -> "MlpModel":
        return replace(self, params={k: v.copy() for k, v in self.params.items()})


def init_model(input_dim: int, dims=DIMS_DEFAULT, rng: np.random.Generator | None = None,
               S: int | None = None, T: int | None = None) -> MlpModel:
    """He-style uniform fan-in initialization for the affine weights; batch
    norm starts at scale 1, shift 0, running stats (0, 1)."""
    if rng is None:
        rng = np.random.default_rng(0)
    dims = tuple(int(d) for d in dims)
    if len(dims) != 4 or dims[3] != N_CLASSES:
        raise ValueError(f"dims must be four widths ending in {N_CLASSES}, got {dims}")
    params: dict[str, np.ndarray] = {}
    fan_in = input_dim
    for k, width in enumerate(dims, start=1):
        limit = math.sqrt(6.0 / fan_in)
        params[f"W{k}"] = rng.uniform(-limit, limit, size=(fan_in, width))
        params[f"b{k}"] = np.zeros(width)
        if k in BN_LAYERS:
            params[f"bn{k}_scale"] = np.ones(fan_in)
            params[f"bn{k}_shift"] = np.zeros(fan_in)
            params[f"bn{k}_mean"] = np.zeros(fan_in)
            params[f"bn{k}_var"] = np.ones(fan_in)
        fan_in = width
    return MlpModel(input_dim=input_dim, dims=dims, params=params, S=S, T=T)


def _batchnorm_forward(x, scale, shift, running_mean, running_var, eps, momentum,
                       train: bool, update_running: bool):
    if train:
        mu = x.mean(axis=0)
        var = x.var(axis=0)
        if update_running:
            running_mean *= momentum
            running_mean += (1.0 - momentum) * mu
            running_var *= momentum
            running_var += (1.0 - momentum) * var
    else:
        mu, var = running_mean, running_var
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x - mu) * inv_std
    return scale * xhat + shift, (xhat, inv_std)


def _batchnorm_backward(dy, xhat, inv_std, scale, train: bool):
    dscale = (dy * xhat).sum(axis=0)
    dshift = dy.sum(axis=0)
    dxhat = dy * scale
    if train:
        dx = inv_std * (dxhat - dxhat.mean(axis=0) - xhat * (dxhat * xhat).mean(axis=0))
    else:
        dx = dxhat * inv_std
    return dx, dscale, dshift


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def forward(model: MlpModel, x: np.ndarray, mode: str = "infer",
            update_running: bool = True):
    """Run the network; returns (probabilities, descriptors, cache).

    Train mode normalizes with batch statistics (and by default folds them
    into the running statistics); infer mode uses the running statistics,
    so a sample's output does not depend on its batch mates.
    """
    if mode not in ("train", "infer"):
        raise ValueError(f"mode must be 'train' or 'infer', got {mode!r}")
    x = np.asarray(x, dtype=float)
    if x.ndim != 2 or x.shape[0] == 0:
        raise ValueError(f"expected a nonempty (batch, {model.input_dim}) matrix")
    if x.shape[1] != model.input_dim:
        raise ValueError(f"input width mismatch: model expects {model.input_dim}, "
                         f"batch has {x.shape[1]}")
    train = mode == "train"
    if train and x.shape[0] < 2:
        raise ValueError("train-mode forward needs a batch of at least 2 "
                         "(batch-norm statistics)")

    p = model.params
    cache: dict[str, np.ndarray | tuple] = {"x": x, "train": train}
    h = x
    descriptors = None
    for k in (1, 2, 3, 4):
        if k in BN_LAYERS:
            h, bn_cache = _batchnorm_forward(
                h, p[f"bn{k}_scale"], p[f"bn{k}_shift"], p[f"bn{k}_mean"],
                p[f"bn{k}_var"], model.bn_eps, model.bn_momentum, train,
                update_running)
            cache[f"bn{k}"] = bn_cache
        cache[f"in{k}"] = h
        a = h @ p[f"W{k}"] + p[f"b{k}"]
        if k < 4:
            cache[f"a{k}"] = a
            h = np.maximum(a, 0.0)
            if k == 3:
                descriptors = h
                cache["descriptors"] = h
        else:
            probs = softmax(a)
            cache["probs"] = probs
    return probs, descriptors, cache


def cross_entropy(prob_row: np.ndarray, label: int) -> float:
    """-log of the clipped probability assigned to the true class."""
    return -math.log(max(float(prob_row[label]), PROB_CLIP))


def mean_cross_entropy(probs: np.ndarray, labels: np.ndarray,
                       weights: np.ndarray | None = None):
    """Weighted mean cross-entropy over rows plus its gradient w.r.t. the
    logits.  Rows whose true-class probability hit the clip floor are flat
    (zero gradient), matching the clipped loss exactly."""
    labels = np.asarray(labels, dtype=np.intp)
    n = probs.shape[0]
    if weights is None:
        weights = np.ones(n)
    total_w = float(weights.sum())
    p_true = probs[np.arange(n), labels]
    losses = -np.log(np.maximum(p_true, PROB_CLIP))
    loss = float((weights * losses).sum() / total_w)

    grad = probs.copy()
    grad[np.arange(n), labels] -= 1.0
    grad *= (weights / total_w)[:, None]
    grad[p_true <= PROB_CLIP] = 0.0
    return loss, grad


def backward(model: MlpModel, cache, grad_logits: np.ndarray,
             grad_descriptors: np.ndarray | None = None) -> dict[str, np.ndarray]:
    """Exact gradients of the composite loss for every trainable parameter.

    ``grad_logits`` is dLoss/d(pre-softmax activations); an optional
    ``grad_descriptors`` term enters at the layer-3 activations, which is
    where the graph-regularization pull acts.
    """
    p = model.params
    train = cache["train"]
    grads: dict[str, np.ndarray] = {}
    dh = np.asarray(grad_logits, dtype=float)
    for k in (4, 3, 2, 1):
        if k < 4:
            da = dh * (cache[f"a{k}"] > 0.0)
        else:
            da = dh
        h_in = cache[f"in{k}"]
        grads[f"W{k}"] = h_in.T @ da
        grads[f"b{k}"] = da.sum(axis=0)
        dh = da @ p[f"W{k}"].T
        if k in BN_LAYERS:
            xhat, inv_std = cache[f"bn{k}"]
            dh, dscale, dshift = _batchnorm_backward(dh, xhat, inv_std,
                                                     p[f"bn{k}_scale"], train)
            grads[f"bn{k}_scale"] = dscale
            grads[f"bn{k}_shift"] = dshift
        if k == 4 and grad_descriptors is not None:
            dh = dh + grad_descriptors
    return grads


def graph_penalty(descriptors: np.ndarray, edge_batches):
    """Sum of weighted half-squared descriptor differences over edge batches
    plus the gradient w.r.t. the descriptors.

    Each batch is (rows_i, rows_j, weights, scale) with rows indexing into
    the descriptor matrix; ``scale`` rescales a sampled batch so its
    expectation matches the full partition sum.  The regularization
    strength is NOT applied here, so callers can scale loss and gradient
    by it exactly once.
    """
    penalty = 0.0
    grad = np.zeros_like(descriptors)
    for rows_i, rows_j, w, scale in edge_batches:
        if rows_i.size == 0:
            continue
        diff = descriptors[rows_i] - descriptors[rows_j]
        penalty += float(scale) * float(0.5 * ((diff * diff).sum(axis=1) * w).sum())
        g = float(scale) * (w[:, None] * diff)
        np.add.at(grad, rows_i, g)
        np.add.at(grad, rows_j, -g)
    return penalty, grad


def predict_probs(model: MlpModel, x: np.ndarray, chunk: int = 4096) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    out = np.empty((x.shape[0], N_CLASSES))
    for start in range(0, x.shape[0], chunk):
        probs, _, _ = forward(model, x[start:start + chunk], "infer")
        out[start:start + chunk] = probs
    return out


def predict(model: MlpModel, x: np.ndarray) -> np.ndarray:
    """Most confident class per row; ties resolve to the lowest class."""
    return np.argmax(predict_probs(model, x), axis=1)


def descriptors(model: MlpModel, x: np.ndarray, chunk: int = 4096) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    out = np.empty((x.shape[0], model.descriptor_dim))
    for start in range(0, x.shape[0], chunk):
        _, desc, _ = forward(model, x[start:start + chunk], "infer")
        out[start:start + chunk] = desc
    return out


# ---------------------------------------------------------------------------
# Adam

@dataclass
class AdamState:
    learning_rate: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_init(model: MlpModel, learning_rate: float = 1e-4) -> AdamState:
    state = AdamState(learning_rate=learning_rate)
    for key in TRAINABLE_KEYS:
        state.m[key] = np.zeros_like(model.params[key])
        state.v[key] = np.zeros_like(model.params[key])
    return state


def adam_step(state: AdamState, params: dict, grads: dict) -> dict:
    """Standard bias-corrected Adam update, applied in place."""
    state.step += 1
    t = state.step
    for key, g in grads.items():
        m = state.m[key]
        v = state.v[key]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        m_hat = m / (1.0 - state.beta1 ** t)
        v_hat = v / (1.0 - state.beta2 ** t)
        params[key] -= state.learning_rate * m_hat / (np.sqrt(v_hat) + state.eps)
    return params


# ---------------------------------------------------------------------------
# Training

@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 256
    max_epochs: int = 200
    patience: int = 10
    val_fraction: float = 0.10
    learning_rate: float = 1e-4
    dims: tuple[int, int, int, int] = DIMS_DEFAULT
    seed: int = 0


@dataclass
class TrainLog:
    train_loss: list[float]
    val_accuracy: list[float]
    best_epoch: int
    stop_reason: str


def _rng_streams(seed: int):
    children = np.random.SeedSequence(seed).spawn(4)
    return tuple(np.random.default_rng(c) for c in children)


def split_validation(n: int, fraction: float, rng: np.random.Generator):
    """Carve a held-out slice out of n training labels; the slice can be
    empty when n is tiny or the fraction is 0."""
    n_val = min(int(math.floor(fraction * n)), n - 1)
    if n_val <= 0:
        return np.zeros(0, dtype=np.intp), np.arange(n, dtype=np.intp)
    perm = rng.permutation(n)
    return np.sort(perm[:n_val]), np.sort(perm[n_val:])


def fit_classifier(split, train_rows, train_labels, train_weights,
                   val_rows, val_labels, cfg: TrainConfig, edge_term=None,
                   ) -> tuple[MlpModel, TrainLog]:
    """Mini-batch Adam with early stopping on validation accuracy.

    ``edge_term`` hooks graph regularization into each step: it must carry
    ``zeta`` and ``n_edges`` attributes and a ``sample(rng)`` method
    returning (sample_rows_i, sample_rows_j, weights, scale) batches with
    rows indexing into ``split``.  With no edge term the step reduces to
    plain supervised training, drawing from identical random streams.
    """
    init_rng, batch_rng, edge_rng, _ = _rng_streams(cfg.seed)
    train_rows = np.asarray(train_rows, dtype=np.intp)
    train_labels = np.asarray(train_labels, dtype=np.intp)
    if train_weights is None:
        train_weights = np.ones(train_rows.size)
    n_train = train_rows.size
    if n_train < 2:
        raise ValueError(f"need at least 2 training samples, got {n_train}")

    model = init_model(split.input_dim, cfg.dims, init_rng, S=split.S, T=split.T)
    adam = adam_init(model, cfg.learning_rate)

    val_rows = np.asarray(val_rows, dtype=np.intp)
    have_val = val_rows.size > 0
    if have_val:
        val_x = split.features(val_rows)
        val_labels = np.asarray(val_labels, dtype=np.intp)

    use_edges = edge_term is not None and edge_term.zeta > 0.0 and edge_term.n_edges > 0

    best_acc = -1.0
    best_epoch = -1
    best_params = None
    log = TrainLog(train_loss=[], val_accuracy=[], best_epoch=-1, stop_reason="max-epochs")

    for epoch in range(cfg.max_epochs):
        perm = batch_rng.permutation(n_train)
        batch_losses = []
        for start in range(0, n_train, cfg.batch_size):
            sel = perm[start:start + cfg.batch_size]
            if sel.size < 2:
                continue  # batch norm cannot run on a single row
            rows = train_rows[sel]
            y = train_labels[sel]
            w = train_weights[sel]
            if use_edges:
                loss = _ngm_step(model, adam, split, rows, y, w, edge_term, edge_rng)
            else:
                x = split.features(rows)
                probs, _, cache = forward(model, x, "train")
                loss, grad_logits = mean_cross_entropy(probs, y, w)
                grads = backward(model, cache, grad_logits)
                adam_step(adam, model.params, grads)
            batch_losses.append(loss)
        log.train_loss.append(float(np.mean(batch_losses)) if batch_losses else float("nan"))

        if have_val:
            val_acc = float(np.mean(predict(model, val_x) == val_labels))
            log.val_accuracy.append(val_acc)
            if val_acc > best_acc:
                best_acc = val_acc
                best_epoch = epoch
                best_params = {k: v.copy() for k, v in model.params.items()}
            elif epoch - best_epoch >= cfg.patience:
                log.stop_reason = "early-stop"
                break
        else:
            log.val_accuracy.append(float("nan"))

    if best_params is not None:
        model.params = best_params
        log.best_epoch = best_epoch
    else:
        log.best_epoch = len(log.train_loss) - 1
        log.stop_reason = "no-validation"
    return model, log


def _ngm_step(model, adam, split, labeled_rows, y, w, edge_term, edge_rng) -> float:
    """One Adam step on supervised cross-entropy plus the sampled graph
    term, sharing a single train-mode forward pass over the union of
    labeled-batch samples and edge endpoints."""
    batches = edge_term.sample(edge_rng)
    parts = [labeled_rows]
    for gi, gj, _, _ in batches:
        parts.append(gi)
        parts.append(gj)
    uniq, inv = np.unique(np.concatenate(parts), return_inverse=True)
    labeled_pos = inv[:labeled_rows.size]
    edge_pos = []
    offset = labeled_rows.size
    for gi, gj, ew, scale in batches:
        pi = inv[offset:offset + gi.size]
        offset += gi.size
        pj = inv[offset:offset + gj.size]
        offset += gj.size
        edge_pos.append((pi, pj, ew, scale))

    x = split.features(uniq)
    probs, desc, cache = forward(model, x, "train")
    ce, grad_rows = mean_cross_entropy(probs[labeled_pos], y, w)
    grad_logits = np.zeros_like(probs)
    grad_logits[labeled_pos] = grad_rows
    penalty, grad_desc = graph_penalty(desc, edge_pos)
    zeta = edge_term.zeta
    grads = backward(model, cache, grad_logits, zeta * grad_desc)
    adam_step(adam, model.params, grads)
    return ce + zeta * penalty


def train_supervised(split, cfg: TrainConfig = TrainConfig()) -> tuple[MlpModel, TrainLog]:
    """The fully-supervised baseline: labeled data only, early stopping on a
    held-out fraction of the training labels."""
    if split.l == 0:
        raise ValueError("cannot train on an empty labeled set")
    _, _, _, val_rng = _rng_streams(cfg.seed)
    val_rows, train_rows = split_validation(split.l, cfg.val_fraction, val_rng)
    labels = split.labels()
    return fit_classifier(split, train_rows, labels[train_rows], None,
                          val_rows, labels[val_rows], cfg)


# ---------------------------------------------------------------------------
# Checkpoints

CHECKPOINT_MAGIC = "mlp-v1"


def save_checkpoint(model: MlpModel, path: str | Path) -> None:
    """Plain-text tensors at 17 significant digits; round-trips bit-exactly."""
    if model.S is None or model.T is None:
        raise ValueError("checkpointing needs a model with S and T metadata")
    lines = [f"{CHECKPOINT_MAGIC} S={model.S} T={model.T} "
             f"dims={','.join(str(d) for d in model.dims)}"]
    for name in PARAM_ORDER:
        tensor = model.params[name]
        shape = " ".join(str(d) for d in tensor.shape)
        lines.append(f"tensor {name} {shape}")
        flat = tensor.reshape(tensor.shape[0], -1) if tensor.ndim == 2 else tensor[None, :]
        for row in flat:
            lines.append(" ".join(f"{v:.17g}" for v in row))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_checkpoint(path: str | Path) -> MlpModel:
    text = Path(path).read_text(encoding="utf-8").splitlines()
    if not text:
        raise ValueError(f"empty checkpoint: {path}")
    head = text[0].split()
    if not head or head[0] != CHECKPOINT_MAGIC:
        raise ValueError(f"not a {CHECKPOINT_MAGIC} checkpoint: {path}")
    meta = dict(part.split("=", 1) for part in head[1:])
    S = int(meta["S"])
    T = int(meta["T"])
    dims = tuple(int(d) for d in meta["dims"].split(","))

    params: dict[str, np.ndarray] = {}
    pos = 1
    while pos < len(text):
        line = text[pos].split()
        if not line:
            pos += 1
            continue
        if line[0] != "tensor":
            raise ValueError(f"malformed checkpoint near line {pos + 1}")
        name = line[1]
        shape = tuple(int(d) for d in line[2:])
        pos += 1
        n_rows = shape[0] if len(shape) == 2 else 1
        rows = []
        for _ in range(n_rows):
            rows.append([float(v) for v in text[pos].split()])
            pos += 1
        tensor = np.array(rows)
        params[name] = tensor.reshape(shape)
    missing = [k for k in PARAM_ORDER if k not in params]
    if missing:
        raise ValueError(f"checkpoint missing tensors: {missing}")
    input_dim = params["W1"].shape[0]
    return MlpModel(input_dim=input_dim, dims=dims, params=params, S=S, T=T)
