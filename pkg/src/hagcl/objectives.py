"""InfoNCE objectives over cosine similarity.

``info_nce_pair`` is the symmetric view-vs-view maximization loss;
``info_nce_anchor`` is the original-graph-anchored estimate that the
generators minimize.
"""
from __future__ import annotations

import logging

import numpy as np

from . import diffcore as dc
from .config import LossConfig
from .diffcore import DiffValue
from .errors import ContractError

log = logging.getLogger(__name__)

NORM_FLOOR = 1e-12


def _check_pair(z_a: DiffValue, z_b: DiffValue) -> int:
    if z_a.data.ndim != 2 or z_a.shape != z_b.shape:
        raise ContractError(f"embedding shapes differ or are not 2-D: {z_a.shape} vs {z_b.shape}")
    n = z_a.shape[0]
    if n == 0:
        raise ContractError("no embeddings")
    return n


def cosine_logits(z_a: DiffValue, z_b: DiffValue, temperature: float) -> DiffValue:
    """``sim(z_a[i], z_b[j]) / temperature`` as a matrix."""
    na = dc.normalize_rows(z_a, NORM_FLOOR)
    nb = dc.normalize_rows(z_b, NORM_FLOOR)
    return dc.mul(dc.matmul(na, dc.transpose(nb)), 1.0 / temperature)


def info_nce_pair(z_a: DiffValue, z_b: DiffValue, cfg: LossConfig) -> DiffValue:
    n = _check_pair(z_a, z_b)
    # Interleave so rows 2k and 2k+1 are the two views of graph k.
    order = np.stack([np.arange(n), np.arange(n) + n], axis=1).ravel()
    views = dc.gather_rows(dc.concat([z_a, z_b], axis=0), order)
    sims = cosine_logits(views, views, cfg.temperature)
    rows = np.arange(2 * n)
    lse = dc.masked_logsumexp_rows(sims, ~np.eye(2 * n, dtype=bool))
    mi = dc.sub(dc.pick(sims, rows, rows ^ 1), lse)
    return dc.mul(dc.total(mi), -1.0 / (2 * n))


def info_nce_anchor(z_orig: DiffValue, z_view: DiffValue, cfg: LossConfig,
                    extra_negatives: DiffValue | None = None) -> DiffValue:
    """Mean over anchors of ``log(exp(pos) / sum of exp(neg))``.

    Negatives for anchor ``i`` are the views of the other graphs; with
    ``extra_negatives`` those rows (again excluding ``i``) join the
    denominator.  A single-graph batch has no negatives and yields 0.
    """
    n = _check_pair(z_orig, z_view)
    if n == 1:
        log.warning("anchored loss on a single graph has no negatives; returning 0")
        return dc.constant(0.0)
    off_diag = ~np.eye(n, dtype=bool)
    sims = cosine_logits(z_orig, z_view, cfg.temperature)
    denom_sims, mask = sims, off_diag
    if extra_negatives is not None:
        _check_pair(z_orig, extra_negatives)
        denom_sims = dc.concat([sims, cosine_logits(z_orig, extra_negatives, cfg.temperature)], axis=1)
        mask = np.concatenate([off_diag, off_diag], axis=1)
    rows = np.arange(n)
    lse = dc.masked_logsumexp_rows(denom_sims, mask)
    return dc.mean(dc.sub(dc.pick(sims, rows, rows), lse))
