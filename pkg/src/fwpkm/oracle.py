"""Slow reference implementations used to check the main code path.

Nothing here imports the product-key or updater modules; scoring, grid
selection and the losses are re-derived from scratch over the full slot grid.
Only the numeric primitives are shared.
"""

import numpy as np

from .numeric import softmax


def _idw(q, K, eps):
    out = np.empty(len(K))
    for i, row in enumerate(K):
        d = q - row
        out[i] = -np.log(eps + float(d @ d))
    return out


def _dot(q, K):
    return np.array([float(q @ row) for row in K])


def sub_scores(q_sub, K_sub, kind, eps):
    return _idw(q_sub, K_sub, eps) if kind == "idw" else _dot(q_sub, K_sub)


def _grid_order(s1, s2):
    """All n*n slots ordered by descending combined score, ties by flat index."""
    n = len(s1)
    grid = (np.asarray(s1)[:, None] + np.asarray(s2)[None, :]).ravel()
    flat = np.arange(n * n)
    return np.lexsort((flat, -grid)), grid


def brute_force_select(s1, s2, k):
    """Top-k over the full Cartesian grid of summed sub-scores.

    Returns ``(pair_idx, pair_scores, final_weights)``.
    """
    order, grid = _grid_order(s1, s2)
    idx = order[:k]
    return idx, grid[idx], softmax(grid[idx])


def dense_retrieve(state, q, k=None):
    """Score every slot, keep the top k, mix value rows; heads are summed."""
    cfg = state.config
    k = cfg.top_k if k is None else k
    q = np.asarray(q, dtype=float)
    half = cfg.key_dim // 2
    out = np.zeros(cfg.value_dim)
    for h in range(cfg.heads):
        qh = q[h * cfg.key_dim : (h + 1) * cfg.key_dim]
        s1 = sub_scores(qh[:half], state.K1[h], cfg.score_kind, cfg.eps_idw)
        s2 = sub_scores(qh[half:], state.K2[h], cfg.score_kind, cfg.eps_idw)
        idx, _, w = brute_force_select(s1, s2, k)
        out = out + w @ state.V[idx]
    return out


def selection_sets(state, queries):
    """Per query, per head: the (row set, column set, slot list) chosen by brute force.

    The row/column sets are the sub-key Top-k sets; used to confirm that a
    perturbation leaves every selection unchanged.
    """
    cfg = state.config
    half = cfg.key_dim // 2
    out = []
    for q in np.atleast_2d(queries):
        per_head = []
        for h in range(cfg.heads):
            qh = q[h * cfg.key_dim : (h + 1) * cfg.key_dim]
            s1 = sub_scores(qh[:half], state.K1[h], cfg.score_kind, cfg.eps_idw)
            s2 = sub_scores(qh[half:], state.K2[h], cfg.score_kind, cfg.eps_idw)
            r1 = tuple(np.lexsort((np.arange(len(s1)), -s1))[: cfg.top_k])
            r2 = tuple(np.lexsort((np.arange(len(s2)), -s2))[: cfg.top_k])
            slots = tuple(brute_force_select(s1, s2, cfg.top_k)[0])
            per_head.append((r1, r2, slots))
        out.append(per_head)
    return out


def addressing_loss_ref(state, queries):
    """Sum over heads and both sub-key sets of sum_i p_i log p_i, recomputed from keys."""
    cfg = state.config
    half = cfg.key_dim // 2
    Q = np.atleast_2d(queries)
    total = 0.0
    for h in range(cfg.heads):
        for which, K in ((0, state.K1[h]), (1, state.K2[h])):
            p = np.zeros(cfg.n_sub)
            for q in Q:
                qh = q[h * cfg.key_dim : (h + 1) * cfg.key_dim]
                qs = qh[:half] if which == 0 else qh[half:]
                s = sub_scores(qs, K, cfg.score_kind, cfg.eps_idw)
                sel = np.lexsort((np.arange(len(s)), -s))[: cfg.top_k]
                p[sel] += softmax(s[sel])
            p /= len(Q)
            nz = p[p > 0]
            total += float(np.sum(nz * np.log(nz)))
    return total


def mse_loss_ref(state, queries, targets, gammas):
    """sum_t gamma_t * 0.5 * ||v_t - v_hat_t||^2 with dense retrieval."""
    total = 0.0
    for q, v, g in zip(np.atleast_2d(queries), np.atleast_2d(targets), gammas):
        e = v - dense_retrieve(state, q)
        total += g * 0.5 * float(e @ e)
    return total


def fd_gradient(f, X, h=1e-5, guard=None, max_shrink=8):
    """Central-difference gradient of scalar ``f`` at array ``X``.

    ``X`` is perturbed in place one coordinate at a time and restored, and
    ``f(X)`` is evaluated at each perturbed point. If ``guard`` is given,
    ``guard(X)`` is called after each perturbation and must return
    True when the perturbed point is admissible (e.g. no Top-k set changed);
    otherwise the step for that coordinate is halved, up to ``max_shrink``
    times.
    """
    G = np.zeros(X.shape)
    flat = X.reshape(-1)
    gflat = G.reshape(-1)
    for i in range(flat.size):
        x0 = flat[i]
        step = h
        for _ in range(max_shrink + 1):
            flat[i] = x0 + step
            ok_p = guard is None or guard(X)
            fp = f(X) if ok_p else None
            flat[i] = x0 - step
            ok_m = guard is None or guard(X)
            fm = f(X) if ok_m else None
            flat[i] = x0
            if ok_p and ok_m:
                gflat[i] = (fp - fm) / (2 * step)
                break
            step /= 2
        else:
            raise RuntimeError(f"coordinate {i}: every step changed the selection")
    return G


def max_rel_error(analytic, numeric):
    """max |a - n| divided by max |n| (the scale of the reference gradient)."""
    a = np.asarray(analytic, dtype=float)
    n = np.asarray(numeric, dtype=float)
    scale = max(float(np.max(np.abs(n))), 1e-12)
    return float(np.max(np.abs(a - n))) / scale
