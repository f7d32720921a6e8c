"""Linear-probe evaluation of a frozen encoder.

For every seed: stratified k-fold; inside each training portion an inner
holdout picks the L2 strength, the classifier is refit on the whole
training portion and scored on the held-out fold.  The reported mean and
standard deviation are taken over the per-seed fold means.
"""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import diffcore as dc
from .config import ProbeConfig
from .encoder import EncoderParams, encode_graphs, encode_nodes
from .errors import ContractError
from .graphdata import Graph, make_batches, stratified_kfold
from .trainer import derive_seed

log = logging.getLogger(__name__)

STREAM_PROBE = 23


def embed_all(graphs: Sequence[Graph], f_params: EncoderParams, batch_size: int = 256,
              representation: str = "projection") -> np.ndarray:
    """Eval-mode graph embeddings in dataset order, without graph tracking."""
    rows = []
    with dc.no_grad():
        for batch in make_batches(graphs, batch_size, shuffle_seed=None):
            if representation == "pooled":
                h = encode_nodes(batch, f_params, mode="eval").h[-1]
                rows.append(dc.segment_sum(h, batch.graph_index, batch.num_graphs).data)
            else:
                rows.append(encode_graphs(batch, f_params, mode="eval").data)
    return np.concatenate(rows, axis=0)


@dataclass
class LinearClassifier:
    weights: np.ndarray   # [d, C]
    bias: np.ndarray      # [C]
    classes: np.ndarray
    iterations: int = 0
    converged: bool = False

    def decision(self, x: np.ndarray) -> np.ndarray:
        return x @ self.weights + self.bias

    def predict(self, x: np.ndarray) -> np.ndarray:
        return self.classes[self.decision(x).argmax(axis=1)]

    def accuracy(self, x: np.ndarray, y: np.ndarray) -> float:
        return float((self.predict(x) == np.asarray(y)).mean())


def logistic_objective(w: np.ndarray, b: np.ndarray, x: np.ndarray, onehot: np.ndarray,
                       l2: float) -> tuple[float, np.ndarray, np.ndarray]:
    """Mean cross-entropy plus ``l2/2 * ||W||^2`` with its gradient."""
    z = x @ w + b
    z -= z.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1, keepdims=True))
    logp = z - lse
    n = x.shape[0]
    value = -(onehot * logp).sum() / n + 0.5 * l2 * float((w * w).sum())
    resid = (np.exp(logp) - onehot) / n
    return value, x.T @ resid + l2 * w, resid.sum(axis=0)


def train_linear(features: np.ndarray, labels: np.ndarray, l2: float, seed: int = 0,
                 max_iterations: int = 3000, tolerance: float = 1e-6) -> LinearClassifier:
    """L2-regularized multinomial logistic regression.

    Accelerated full-batch gradient descent with backtracking and adaptive
    restart, started from zero weights.  The objective is convex, so the
    start point (and therefore ``seed``) does not change the optimum; the
    argument is kept for interface symmetry with the other stochastic steps.
    """
    x = np.asarray(features, dtype=np.float64)
    classes, y = np.unique(np.asarray(labels), return_inverse=True)
    if len(classes) < 2:
        raise ContractError(f"train_linear needs at least 2 classes, got {len(classes)}")
    onehot = np.eye(len(classes))[y]
    d, c = x.shape[1], len(classes)
    w, b = np.zeros((d, c)), np.zeros(c)
    yw, yb = w.copy(), b.copy()
    step_l = 1.0
    momentum = 1.0
    f_prev, _, _ = logistic_objective(w, b, x, onehot, l2)
    converged = False
    it = 0
    for it in range(1, max_iterations + 1):
        fy, gw, gb = logistic_objective(yw, yb, x, onehot, l2)
        gnorm2 = float((gw * gw).sum() + (gb * gb).sum())
        if np.sqrt(gnorm2) < tolerance:
            w, b = yw, yb
            converged = True
            break
        while True:
            nw, nb = yw - gw / step_l, yb - gb / step_l
            fn, _, _ = logistic_objective(nw, nb, x, onehot, l2)
            if fn <= fy - 0.5 * gnorm2 / step_l + 1e-15 * abs(fy):
                break
            step_l *= 2.0
        if fn > f_prev:
            # Adaptive restart: drop momentum and retry from the last iterate.
            yw, yb, momentum = w.copy(), b.copy(), 1.0
            continue
        nxt = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * momentum ** 2))
        beta = (momentum - 1.0) / nxt
        yw, yb = nw + beta * (nw - w), nb + beta * (nb - b)
        w, b, f_prev, momentum = nw, nb, fn, nxt
        step_l *= 0.9
    if not converged:
        _, gw, gb = logistic_objective(w, b, x, onehot, l2)
        converged = bool(np.sqrt((gw * gw).sum() + (gb * gb).sum()) < tolerance)
        if not converged:
            log.debug("train_linear: stopped at max_iterations=%d (l2=%g)", max_iterations, l2)
    return LinearClassifier(w, b, classes, it, converged)


def _standardize(train: np.ndarray, *others: np.ndarray) -> list[np.ndarray]:
    mu = train.mean(axis=0)
    sd = train.std(axis=0)
    sd = np.where(sd > 1e-12, sd, 1.0)
    return [(a - mu) / sd for a in (train,) + others]


def holdout_split(labels: np.ndarray, fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Stratified ``(fit, val)`` positions into ``labels``."""
    rng = np.random.default_rng(seed)
    fit, val = [], []
    _, first = np.unique(labels, return_index=True)
    for c in labels[np.sort(first)]:
        members = rng.permutation(np.flatnonzero(labels == c))
        k = int(round(fraction * len(members)))
        k = min(max(k, 1), len(members) - 1) if len(members) > 1 else 0
        val.extend(members[:k].tolist())
        fit.extend(members[k:].tolist())
    return np.sort(np.asarray(fit, dtype=np.int64)), np.sort(np.asarray(val, dtype=np.int64))


@dataclass
class EvalResult:
    fold_accuracies: list[list[float]]
    seed_means: list[float]
    mean: float
    std: float
    chosen_l2: list[list[float | None]]   # None: single-class training fold
    fold_splits: list[list[list[int]]] = field(default_factory=list, repr=False)

    def to_dict(self) -> dict:
        return asdict(self)


FitFn = Callable[..., LinearClassifier]


def select_l2(x: np.ndarray, y: np.ndarray, cfg: ProbeConfig, seed: int,
              fit: FitFn = train_linear) -> float:
    """Pick the grid value with the best inner-holdout accuracy (ties go to stronger l2)."""
    fit_idx, val_idx = holdout_split(y, cfg.inner_val_fraction, seed)
    if len(val_idx) == 0 or len(np.unique(y[fit_idx])) < 2:
        fit_idx = val_idx = np.arange(len(y))
    xf, xv = x[fit_idx], x[val_idx]
    if cfg.standardize:
        xf, xv = _standardize(xf, xv)
    best, best_acc = None, -1.0
    for l2 in cfg.l2_strengths:
        clf = fit(xf, y[fit_idx], l2, seed, cfg.max_iterations, cfg.tolerance)
        acc = clf.accuracy(xv, y[val_idx])
        if acc > best_acc or (acc == best_acc and l2 > best):
            best, best_acc = l2, acc
    return float(best)


def _constant_fold(y_train: np.ndarray, y_test: np.ndarray) -> float:
    log.warning("training fold holds a single class; scoring a constant predictor")
    return float((y_test == y_train[0]).mean())


def evaluate_embeddings(x: np.ndarray, labels: np.ndarray, cfg: ProbeConfig, seed: int = 0,
                        fit: FitFn = train_linear) -> EvalResult:
    labels = np.asarray(labels)
    k = cfg.num_folds
    if k > len(labels):
        log.warning("only %d graphs; using %d folds instead of %d", len(labels), len(labels), k)
        k = len(labels)
    accs, chosen, splits = [], [], []
    for s in range(cfg.num_seeds):
        fold_seed = derive_seed(seed, STREAM_PROBE, s)
        folds = stratified_kfold(labels, k, fold_seed)
        splits.append([f.tolist() for f in folds])
        seed_accs, seed_l2 = [], []
        for i, test in enumerate(folds):
            train = np.sort(np.concatenate([f for j, f in enumerate(folds) if j != i]))
            if len(np.unique(labels[train])) < 2:
                seed_accs.append(_constant_fold(labels[train], labels[test]))
                seed_l2.append(None)
                continue
            l2 = select_l2(x[train], labels[train], cfg, derive_seed(fold_seed, i), fit)
            xtr, xte = (x[train], x[test])
            if cfg.standardize:
                xtr, xte = _standardize(xtr, xte)
            clf = fit(xtr, labels[train], l2, derive_seed(fold_seed, i), cfg.max_iterations, cfg.tolerance)
            seed_accs.append(clf.accuracy(xte, labels[test]))
            seed_l2.append(l2)
        accs.append(seed_accs)
        chosen.append(seed_l2)
    seed_means = [float(np.mean(a)) for a in accs]
    return EvalResult(accs, seed_means, float(np.mean(seed_means)), float(np.std(seed_means)),
                      chosen, splits)


def evaluate(graphs: Sequence[Graph], f_params: EncoderParams, cfg: ProbeConfig,
             seed: int = 0) -> EvalResult:
    x = embed_all(graphs, f_params, cfg.batch_size, cfg.representation)
    labels = np.array([g.label for g in graphs])
    return evaluate_embeddings(x, labels, cfg, seed)
