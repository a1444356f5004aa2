"""Chunk-level fast-weight updates.

Values are written with the gate-weighted, sum-reduced MSE gradient, with each
row's summed gradient divided by the number of times that row was read in the
chunk. Sub-keys follow the gradient of the negative marginal entropy of the
per-sub-key selection weights. All gradients are taken at the pre-update
state, with the Top-k index sets held fixed.
"""

import json
import math
from dataclasses import dataclass, field
from functools import reduce

import numpy as np

from .errors import ArgumentError, DimensionError, NumericError
from .memory import WriteRecord, head_queries, predict, select_queries
from .numeric import entropy
from .product_key import scatter_sub_weights


@dataclass
class ChunkBatch:
    queries: np.ndarray  # (C, heads*key_dim)
    targets: np.ndarray  # (C, value_dim)
    gates: np.ndarray  # (C,)
    tags: list = None

    def __post_init__(self):
        self.queries = np.atleast_2d(np.asarray(self.queries, dtype=float))
        self.targets = np.atleast_2d(np.asarray(self.targets, dtype=float))
        self.gates = np.atleast_1d(np.asarray(self.gates, dtype=float))
        n = len(self.queries)
        if self.tags is None:
            self.tags = [""] * n
        if not (len(self.targets) == len(self.gates) == len(self.tags) == n):
            raise DimensionError("chunk fields have different lengths")
        if n == 0:
            raise ArgumentError("empty chunk")
        if np.any(self.gates < 0) or np.any(self.gates > 1):
            raise ArgumentError("gates must lie in [0, 1]")
        for name in ("queries", "targets", "gates"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise NumericError(f"chunk {name} contain non-finite values")

    def __len__(self):
        return len(self.queries)

    def repeated(self, m):
        """The chunk with every sample duplicated ``m`` times."""
        return ChunkBatch(
            np.tile(self.queries, (m, 1)),
            np.tile(self.targets, (m, 1)),
            np.tile(self.gates, m),
            list(self.tags) * m,
        )


@dataclass
class UpdateReport:
    step: int
    chunk_len: int
    mse_sum: float
    addr_loss: list  # [head][set] -> float
    marginal_entropy: list  # [head][set] -> float
    p_bar: list  # [head][set] -> list of n_sub floats
    read_counts: dict  # slot -> count
    rows_written: int
    value_grad_norm: float
    key_grad_norms: list  # [head][set]
    key_update: str = "addressing"

    def to_dict(self):
        d = dict(self.__dict__)
        d["read_counts"] = {str(k): v for k, v in sorted(self.read_counts.items())}
        return d

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True)


# ---------------------------------------------------------------------------
# value path


def value_row_gradient(v_hat, v, weight, gate=1.0):
    """Gradient of 0.5 * gate * ||v - v_hat||^2 w.r.t. one value row read with ``weight``."""
    v_hat = np.asarray(v_hat, dtype=float)
    v = np.asarray(v, dtype=float)
    if v_hat.shape != v.shape:
        raise DimensionError(f"v_hat shape {v_hat.shape} != v shape {v.shape}")
    return -gate * (v - v_hat) * weight


def aggregate_value_gradients(contributions):
    """Average per-sample row gradients by row read count.

    ``contributions`` is an iterable of ``(row, gradient)``; each item counts
    as one read of ``row``.
    """
    sums, counts = {}, {}
    for row, g in contributions:
        g = np.asarray(g, dtype=float)
        if row in sums:
            sums[row] = sums[row] + g
            counts[row] += 1
        else:
            sums[row] = g.copy()
            counts[row] = 1
    return {row: sums[row] / counts[row] for row in sums}


def _aggregate_rows(rows, grads, mult):
    """Vectorized aggregation: rows (M,), grads (M, D), mult (M,) read weights."""
    uniq, inv = np.unique(rows, return_inverse=True)
    acc = np.zeros((len(uniq), grads.shape[1]), dtype=grads.dtype)
    np.add.at(acc, inv, grads)
    cnt = np.bincount(inv, weights=mult, minlength=len(uniq))
    return uniq, acc / cnt[:, None]


def apply_value_update(state, aggregates, writes=(), lr=None):
    """V[row] -= lr * aggregate, atomically.

    ``aggregates`` is a dict row -> vector or a pair of arrays (rows, grads).
    ``writes`` are ``(slot, WriteRecord)`` pairs appended to the ledger.
    """
    if isinstance(aggregates, dict):
        rows = np.fromiter(aggregates.keys(), dtype=np.int64, count=len(aggregates))
        grads = np.array([aggregates[r] for r in rows.tolist()]).reshape(len(rows), -1)
    else:
        rows, grads = aggregates
    if not np.all(np.isfinite(grads)):
        raise NumericError("non-finite value gradient; update aborted")
    lr = state.config.lr if lr is None else lr
    if len(rows):
        if np.any(rows < 0) or np.any(rows >= state.config.n_slots):
            raise ArgumentError("value row index out of range")
        state.V[rows] -= (lr * grads).astype(state.V.dtype)
    if state.ledger is not None:
        for slot, rec in writes:
            state.ledger.setdefault(int(slot), []).append(rec)


def value_gradient_raw(state, chunk, sels=None, gamma=None):
    """Dense d(sum_t gamma_t * 0.5 * ||v_t - v_hat_t||^2)/dV before row averaging."""
    if sels is None:
        sels = select_queries(state, chunk.queries)
    if gamma is None:
        gamma = effective_gates(state.config, chunk.gates)
    err = chunk.targets - predict(state, sels)
    G = np.zeros_like(state.V)
    for s in sels:
        contrib = -(gamma[:, None, None] * err[:, None, :]) * s["final_weights"][..., None]
        np.add.at(G, s["pair_idx"].ravel(), contrib.reshape(-1, G.shape[1]))
    return G


def effective_gates(config, gates):
    """Per-sample MSE weights: the gates, or ones when gating/loss weighting is off."""
    gates = np.asarray(gates, dtype=float)
    if config.gating and config.loss_weighting:
        return gates
    return np.ones_like(gates)


# ---------------------------------------------------------------------------
# addressing path


def addressing_loss(sub_weights, mult=None):
    """Negative entropy of the chunk-average sub-key weights.

    ``sub_weights`` is (C, n_sub) with rows summing to 1. Returns
    ``(loss, p_bar)``; the loss lies in [-log(n_sub), 0].
    """
    S = np.atleast_2d(np.asarray(sub_weights, dtype=float))
    if mult is None:
        p_bar = S.mean(axis=0)
    else:
        mult = np.asarray(mult, dtype=float)
        p_bar = mult @ S / mult.sum()
    return -float(entropy(p_bar)), p_bar


def _score_grad_rows(q, Krows, kind, eps):
    """d score / d key row for selected rows: q (B, d), Krows (B, k, d)."""
    if kind == "idw":
        diff = q[:, None, :] - Krows
        d2 = np.einsum("bkd,bkd->bk", diff, diff)
        return 2.0 * diff / (eps + d2)[..., None]
    return np.broadcast_to(q[:, None, :], Krows.shape)


def _sub_addr_grad(K, q, idx, w, mult, kind, eps):
    """Gradient of -H(p_bar) for one sub-key matrix.

    idx, w: (B, k) selected sub-key indices and their softmax weights.
    """
    n = K.shape[0]
    dense = scatter_sub_weights(idx, w, n)
    loss, p_bar = addressing_loss(dense, mult)
    log_p = np.log(np.where(p_bar > 0, p_bar, 1.0))
    a = np.take(log_p + 1.0, idx)  # dL/ds' at selected entries, up to the 1/C factor
    coef = (mult / mult.sum())[:, None] * w * (a - np.sum(w * a, axis=-1, keepdims=True))
    dsdK = _score_grad_rows(q, K[idx], kind, eps)
    G = np.zeros_like(K)
    np.add.at(G, idx.ravel(), (coef[..., None] * dsdK).reshape(-1, K.shape[1]))
    return G, loss, p_bar


def addressing_key_gradient(state, queries, sels=None, mult=None):
    """Analytic d L_addr / d K for every head and sub-key matrix.

    Returns ``(grads, losses, p_bars)`` where ``grads[h] = (G1, G2)``. Rows
    that no query selected get exactly zero.
    """
    cfg = state.config
    Q = np.atleast_2d(np.asarray(queries, dtype=cfg.np_dtype))
    if sels is None:
        sels = select_queries(state, Q)
    if mult is None:
        mult = np.ones(len(Q))
    grads, losses, p_bars = [], [], []
    for h, (q1, q2) in enumerate(head_queries(cfg, Q)):
        s = sels[h]
        G1, l1, p1 = _sub_addr_grad(state.K1[h], q1, s["idx1"], s["sub_w1"], mult, cfg.score_kind, cfg.eps_idw)
        G2, l2, p2 = _sub_addr_grad(state.K2[h], q2, s["idx2"], s["sub_w2"], mult, cfg.score_kind, cfg.eps_idw)
        grads.append((G1, G2))
        losses.append([l1, l2])
        p_bars.append([p1, p2])
    return grads, losses, p_bars


def mse_key_gradient(state, chunk, sels=None, gamma=None, mult=None):
    """d(sum_t gamma_t * 0.5 * ||v_t - v_hat_t||^2)/dK through the retrieval softmax.

    Used when the addressing loss is switched off.
    """
    cfg = state.config
    Q = chunk.queries
    if sels is None:
        sels = select_queries(state, Q)
    if gamma is None:
        gamma = effective_gates(cfg, chunk.gates)
    if mult is None:
        mult = np.ones(len(Q))
    err = chunk.targets - predict(state, sels)
    dvhat = -(mult * gamma)[:, None] * err  # (B, D)
    n = cfg.n_sub
    grads = []
    for h, (q1, q2) in enumerate(head_queries(cfg, Q)):
        s = sels[h]
        w = s["final_weights"]
        dw = np.einsum("bd,bkd->bk", dvhat, state.V[s["pair_idx"]])
        dscore = w * (dw - np.sum(w * dw, axis=-1, keepdims=True))
        rows, cols = np.divmod(s["pair_idx"], n)
        out = []
        for K, q, sub in ((state.K1[h], q1, rows), (state.K2[h], q2, cols)):
            dsdK = _score_grad_rows(q, K[sub], cfg.score_kind, cfg.eps_idw)
            G = np.zeros_like(K)
            np.add.at(G, sub.ravel(), (dscore[..., None] * dsdK).reshape(-1, K.shape[1]))
            out.append(G)
        grads.append(tuple(out))
    return grads


def apply_key_update(state, grads, addr_weight):
    """K <- K - addr_weight * grad for every head and both sub-key matrices."""
    for G1, G2 in grads:
        if not (np.all(np.isfinite(G1)) and np.all(np.isfinite(G2))):
            raise NumericError("non-finite key gradient; update aborted")
    if addr_weight == 0:
        return
    for h, (G1, G2) in enumerate(grads):
        state.K1[h] -= (addr_weight * G1).astype(state.K1.dtype)
        state.K2[h] -= (addr_weight * G2).astype(state.K2.dtype)


# ---------------------------------------------------------------------------


def _merge_duplicates(chunk):
    """Collapse identical (query, target, gate) samples.

    Returns first-occurrence indices, the inverse map, and multiplicities
    divided by their gcd, so a chunk repeated m times reduces to exactly the
    same arithmetic as the original.
    """
    key = np.ascontiguousarray(np.hstack([chunk.queries, chunk.targets, chunk.gates[:, None]]))
    void = key.view(np.dtype((np.void, key.dtype.itemsize * key.shape[1]))).ravel()
    _, first, inv, counts = np.unique(void, return_index=True, return_inverse=True, return_counts=True)
    order = np.argsort(first, kind="stable")
    rank = np.empty_like(order)
    rank[order] = np.arange(len(order))
    counts = counts[order]
    g = reduce(math.gcd, counts.tolist())
    return first[order], rank[inv.ravel()], counts, counts / g


def update_chunk(state, chunk, allow_oversize=False):
    """Memorize one chunk in place and return an ``UpdateReport``.

    All predictions use the pre-update weights. Values are updated with the
    averaged MSE gradient; keys with the addressing gradient (scaled by
    ``addr_weight``) or, with the addressing loss off, with the MSE gradient
    through the retrieval weights (scaled by ``lr``).
    """
    cfg = state.config
    if not isinstance(chunk, ChunkBatch):
        raise ArgumentError("update_chunk expects a ChunkBatch")
    if len(chunk) > cfg.chunk_size and not allow_oversize:
        raise ArgumentError(f"chunk of {len(chunk)} exceeds chunk_size={cfg.chunk_size}")
    if chunk.queries.shape[1] != cfg.query_dim:
        raise DimensionError(f"query length {chunk.queries.shape[1]} != {cfg.query_dim}")
    if chunk.targets.shape[1] != cfg.value_dim:
        raise DimensionError(f"target length {chunk.targets.shape[1]} != {cfg.value_dim}")

    first, inv, counts, mult = _merge_duplicates(chunk)
    uq = ChunkBatch(chunk.queries[first], chunk.targets[first], chunk.gates[first], [chunk.tags[i] for i in first])
    Q = uq.queries.astype(cfg.np_dtype)
    sels = select_queries(state, Q)
    v_hat = predict(state, sels)
    gamma = effective_gates(cfg, uq.gates)
    err = uq.targets - v_hat
    mse_sum = float(np.sum(counts * gamma * 0.5 * np.sum(err * err, axis=1)))

    rows = np.concatenate([s["pair_idx"].ravel() for s in sels])
    grads = np.concatenate(
        [(-(gamma[:, None] * err)[:, None, :] * s["final_weights"][..., None]).reshape(-1, cfg.value_dim) for s in sels]
    )
    read_mult = np.tile(np.repeat(mult, cfg.top_k), cfg.heads)
    agg_rows, agg = _aggregate_rows(rows, grads * read_mult[:, None], read_mult)

    addr_grads, addr_losses, p_bars = addressing_key_gradient(state, Q, sels, mult)
    if cfg.addressing_loss:
        key_grads, key_scale, key_mode = addr_grads, cfg.addr_weight, "addressing"
    else:
        key_grads = mse_key_gradient(state, uq, sels, gamma, counts.astype(float))
        key_scale, key_mode = cfg.lr, "mse"

    # every gradient is checked before anything is written
    if not np.all(np.isfinite(agg)):
        raise NumericError("non-finite value gradient; update aborted")
    for G1, G2 in key_grads:
        if not (np.all(np.isfinite(G1)) and np.all(np.isfinite(G2))):
            raise NumericError("non-finite key gradient; update aborted")

    writes = []
    if state.ledger is not None:
        for t in range(len(chunk)):
            u = inv[t]
            if gamma[u] == 0:
                continue
            for s in sels:
                for slot, w in zip(s["pair_idx"][u].tolist(), s["final_weights"][u].tolist()):
                    writes.append((slot, WriteRecord(state.step, str(chunk.tags[t]), w)))

    apply_value_update(state, (agg_rows, agg), writes)
    apply_key_update(state, key_grads, key_scale)

    all_counts = np.bincount(rows, weights=np.tile(np.repeat(counts, cfg.top_k), cfg.heads), minlength=0)
    read_counts = dict(zip(agg_rows.tolist(), np.rint(all_counts[agg_rows]).astype(int).tolist()))
    touched = np.unique(np.concatenate([s["pair_idx"][gamma != 0].ravel() for s in sels]))
    report = UpdateReport(
        step=state.step,
        chunk_len=len(chunk),
        mse_sum=mse_sum,
        addr_loss=addr_losses,
        marginal_entropy=[[-l for l in hl] for hl in addr_losses],
        p_bar=[[p.tolist() for p in hp] for hp in p_bars],
        read_counts=read_counts,
        rows_written=int(len(touched)),
        value_grad_norm=float(np.linalg.norm(agg)),
        key_grad_norms=[[float(np.linalg.norm(G1)), float(np.linalg.norm(G2))] for G1, G2 in key_grads],
        key_update=key_mode,
    )
    state.step += 1
    return report
