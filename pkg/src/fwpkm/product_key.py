"""Product-key addressing over a sqrt(N) x sqrt(N) grid of slots.

A query is split into two halves. Each half is scored against its own
sub-key matrix, the best ``k`` rows of each side are kept, and the final
``k`` slots are chosen among the ``k*k`` pairwise sums. Slot ``(i, j)`` has
flat index ``i * n_sub + j``.

The batched helpers (``*_batch``) take one query per row and are what the
chunk updater uses; ``select`` is the single-query form.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ArgumentError, DimensionError
from .numeric import softmax, top_k

SCORE_KINDS = ("idw", "dot")


@dataclass(frozen=True)
class SubScores:
    s1: np.ndarray
    s2: np.ndarray


@dataclass(frozen=True)
class Selection:
    """Result of a two-stage Top-k over one query.

    ``final_weights`` are the retrieval weights (softmax over the combined
    scores of the chosen pairs). ``sub_weights1``/``sub_weights2`` are dense
    length-``n_sub`` vectors holding the softmax over the selected sub-scores
    of each side, zero elsewhere; the addressing loss is built from these.
    """

    idx1: np.ndarray
    idx2: np.ndarray
    pair_idx: np.ndarray
    pair_scores: np.ndarray
    final_weights: np.ndarray
    sub_weights1: np.ndarray
    sub_weights2: np.ndarray

    @property
    def k(self):
        return len(self.pair_idx)


def split_query(q):
    q = np.asarray(q)
    d = q.shape[-1]
    if d % 2:
        raise DimensionError(f"query length {d} is odd")
    return q[..., : d // 2], q[..., d // 2 :]


def score_idw(q_sub, K_sub, eps=1e-3):
    """-log(eps + ||q - K_i||^2) for every row of ``K_sub``.

    ``q_sub`` may be a single vector or a batch of shape (B, d).
    """
    q_sub = np.asarray(q_sub)
    K_sub = np.asarray(K_sub)
    if q_sub.shape[-1] != K_sub.shape[-1]:
        raise DimensionError(
            f"sub-query dim {q_sub.shape[-1]} != sub-key dim {K_sub.shape[-1]}"
        )
    if eps <= 0:
        raise ArgumentError("eps must be positive")
    diff = q_sub[..., None, :] - K_sub
    return -np.log(eps + np.einsum("...nd,...nd->...n", diff, diff))


def score_dot(q_sub, K_sub):
    q_sub = np.asarray(q_sub)
    K_sub = np.asarray(K_sub)
    if q_sub.shape[-1] != K_sub.shape[-1]:
        raise DimensionError(
            f"sub-query dim {q_sub.shape[-1]} != sub-key dim {K_sub.shape[-1]}"
        )
    return q_sub @ K_sub.T


def score(q_sub, K_sub, kind="idw", eps=1e-3):
    if kind == "idw":
        return score_idw(q_sub, K_sub, eps)
    if kind == "dot":
        return score_dot(q_sub, K_sub)
    raise ArgumentError(f"unknown score kind {kind!r}")


def select_batch(s1, s2, k):
    """Two-stage Top-k for a batch of sub-score rows.

    Returns a dict of arrays, each with a leading batch axis:
    idx1, idx2 (B, k); pair_idx, pair_scores, final_weights (B, k);
    sub_w1, sub_w2 (B, k) aligned with idx1/idx2.
    """
    s1 = np.atleast_2d(s1)
    s2 = np.atleast_2d(s2)
    if s1.shape != s2.shape:
        raise DimensionError(f"sub-score shapes differ: {s1.shape} vs {s2.shape}")
    n = s1.shape[-1]
    if not 1 <= k <= n:
        raise ArgumentError(f"k={k} outside [1, {n}]")
    b = s1.shape[0]

    idx1 = top_k(s1, k)
    idx2 = top_k(s2, k)
    top1 = np.take_along_axis(s1, idx1, axis=-1)
    top2 = np.take_along_axis(s2, idx2, axis=-1)

    grid = (top1[:, :, None] + top2[:, None, :]).reshape(b, k * k)
    flat = (idx1[:, :, None] * n + idx2[:, None, :]).reshape(b, k * k)
    # last key is primary: descending score, then ascending flat index
    order = np.lexsort((flat, -grid), axis=-1)[:, :k]
    pair_idx = np.take_along_axis(flat, order, axis=-1)
    pair_scores = np.take_along_axis(grid, order, axis=-1)

    return {
        "idx1": idx1,
        "idx2": idx2,
        "pair_idx": pair_idx,
        "pair_scores": pair_scores,
        "final_weights": softmax(pair_scores),
        "sub_w1": softmax(top1),
        "sub_w2": softmax(top2),
    }


def scatter_sub_weights(idx, w, n):
    """Place per-row selected weights into dense length-``n`` rows."""
    idx = np.atleast_2d(idx)
    out = np.zeros((idx.shape[0], n), dtype=np.result_type(w))
    np.put_along_axis(out, idx, np.atleast_2d(w), axis=-1)
    return out


def select(scores, k):
    """Two-stage Top-k for a single query's ``SubScores``."""
    s1 = np.asarray(scores.s1)
    s2 = np.asarray(scores.s2)
    if s1.ndim != 1 or s2.ndim != 1:
        raise DimensionError("select expects 1-D sub-scores")
    r = select_batch(s1[None], s2[None], k)
    n = len(s1)
    return Selection(
        idx1=r["idx1"][0],
        idx2=r["idx2"][0],
        pair_idx=r["pair_idx"][0],
        pair_scores=r["pair_scores"][0],
        final_weights=r["final_weights"][0],
        sub_weights1=scatter_sub_weights(r["idx1"], r["sub_w1"], n)[0],
        sub_weights2=scatter_sub_weights(r["idx2"], r["sub_w2"], n)[0],
    )
