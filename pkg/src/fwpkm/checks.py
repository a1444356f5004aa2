"""Oracle-backed correctness checks run by ``fwpkm verify``.

Each check returns a ``CheckResult`` with the worst measured error and the
tolerance it was held to.
"""

import math
import time
from dataclasses import dataclass

import numpy as np

from . import oracle
from .memory import MemoryConfig, init, retrieve
from .product_key import SubScores, score_dot, score_idw, select
from .seeding import rng_stream
from .updater import (
    ChunkBatch,
    addressing_key_gradient,
    addressing_loss,
    update_chunk,
    value_gradient_raw,
)


@dataclass
class CheckResult:
    name: str
    passed: bool
    measured: float
    tolerance: float
    instances: int
    seconds: float = 0.0
    detail: str = ""

    def line(self):
        status = "PASS" if self.passed else "FAIL"
        return (
            f"{status} {self.name}: measured={self.measured:.3e} tol={self.tolerance:.1e} "
            f"n={self.instances} ({self.seconds:.2f}s){' ' + self.detail if self.detail else ''}"
        )


def _timed(fn):
    def wrapper(*args, **kwargs):
        t0 = time.perf_counter()
        res = fn(*args, **kwargs)
        res.seconds = time.perf_counter() - t0
        return res

    wrapper.__name__ = fn.__name__
    wrapper.__doc__ = fn.__doc__
    return wrapper


def _random_sub_scores(rng, n_sub, kind, quantize):
    d = int(rng.integers(2, 9))
    K1 = rng.standard_normal((n_sub, d)) / math.sqrt(d)
    K2 = rng.standard_normal((n_sub, d)) / math.sqrt(d)
    q1 = rng.standard_normal(d) / math.sqrt(d)
    q2 = rng.standard_normal(d) / math.sqrt(d)
    if kind == "idw":
        s1, s2 = score_idw(q1, K1, 1e-3), score_idw(q2, K2, 1e-3)
    else:
        s1, s2 = score_dot(q1, K1), score_dot(q2, K2)
    if quantize:
        # coarse scores force ties in both stages
        s1, s2 = np.round(s1 * 2), np.round(s2 * 2)
    return s1, s2


@_timed
def check_select(n_instances=1000, seed=0):
    """Two-stage selection equals the full-grid brute force, exactly."""
    rng = rng_stream(seed, "check-select")
    combos = [(n, k, kind) for n in (8, 32, 64) for k in (1, 4, 8) for kind in ("idw", "dot")]
    bad = 0
    for i in range(n_instances):
        n, k, kind = combos[i % len(combos)]
        s1, s2 = _random_sub_scores(rng, n, kind, quantize=(i % 4 == 3))
        sel = select(SubScores(s1, s2), k)
        idx, sc, w = oracle.brute_force_select(s1, s2, k)
        if not (
            np.array_equal(sel.pair_idx, idx)
            and np.array_equal(sel.pair_scores, sc)
            and np.array_equal(sel.final_weights, w)
        ):
            bad += 1
    return CheckResult("select", bad == 0, float(bad), 0.0, n_instances, detail=f"mismatches={bad}")


def _random_state(rng, n_sub, key_dim, value_dim, heads, k, kind, **extra):
    cfg = MemoryConfig(
        n_sub=n_sub, key_dim=key_dim, value_dim=value_dim, heads=heads, top_k=k,
        score_kind=kind, **{"chunk_size": 64, **extra},
    )
    st = init(cfg, int(rng.integers(2**31)))
    st.V[:] = rng.standard_normal(st.V.shape)
    return st


@_timed
def check_retrieve(n_instances=200, seed=0):
    """Product-key retrieval equals dense all-slot retrieval within 1e-12."""
    rng = rng_stream(seed, "check-retrieve")
    worst = 0.0
    for i in range(n_instances):
        n_sub = int(rng.integers(2, 17))
        k = int(rng.integers(1, n_sub + 1))
        heads = int(rng.integers(1, 3))
        key_dim = 2 * int(rng.integers(1, 5))
        st = _random_state(rng, n_sub, key_dim, int(rng.integers(1, 6)), heads, k, ("idw", "dot")[i % 2])
        q = rng.standard_normal(st.config.query_dim) / math.sqrt(key_dim / 2)
        got = retrieve(st, q).v_hat
        ref = oracle.dense_retrieve(st, q)
        worst = max(worst, float(np.max(np.abs(got - ref))))
    return CheckResult("retrieve", worst <= 1e-12, worst, 1e-12, n_instances)


@_timed
def check_rewrite(n_instances=50, seed=0):
    """k=1, gate 1, fresh slot: one update stores the target exactly (also at norm 1e6)."""
    rng = rng_stream(seed, "check-rewrite")
    worst = 0.0
    for i in range(n_instances):
        st = _random_state(rng, 16, 8, 6, 1, 1, "idw")
        st.V[:] = 0.0
        q = rng.standard_normal(8) / 2.0
        v = rng.standard_normal(6)
        if i % 2:
            v *= 1e6 / np.linalg.norm(v)
        update_chunk(st, ChunkBatch(q[None], v[None], [1.0]))
        err = float(np.max(np.abs(retrieve(st, q).v_hat - v)) / max(1.0, np.max(np.abs(v))))
        worst = max(worst, err)
    return CheckResult("rewrite", worst <= 1e-12, worst, 1e-12, n_instances, detail="relative to max(1, |v|_inf)")


@_timed
def check_contraction(n_instances=500, seed=0):
    """Single sample, gate 1, one head: new error = (1 - sum w^2) * old error."""
    rng = rng_stream(seed, "check-contraction")
    worst = 0.0
    for i in range(n_instances):
        n_sub = int(rng.integers(2, 17))
        k = int(rng.integers(1, n_sub + 1))
        st = _random_state(rng, n_sub, 6, 4, 1, k, ("idw", "dot")[i % 2], addr_weight=0.0)
        q = rng.standard_normal(6) / math.sqrt(3)
        v = rng.standard_normal(4)
        before = retrieve(st, q)
        w = before.selections[0].final_weights
        old_err = v - before.v_hat
        update_chunk(st, ChunkBatch(q[None], v[None], [1.0]))
        new_err = v - retrieve(st, q).v_hat
        worst = max(worst, float(np.max(np.abs(new_err - (1.0 - np.sum(w * w)) * old_err))))
    return CheckResult("contraction", worst <= 1e-10, worst, 1e-10, n_instances)


@_timed
def check_consensus(n_instances=50, seed=0, repeats=(2, 5)):
    """Repeating every sample m times leaves the update bit-identical."""
    rng = rng_stream(seed, "check-consensus")
    bad = 0
    for i in range(n_instances):
        st = _random_state(rng, 8, 6, 4, int(rng.integers(1, 3)), 3, "idw", chunk_size=512)
        C = int(rng.integers(1, 20))
        chunk = ChunkBatch(
            rng.standard_normal((C, st.config.query_dim)) / math.sqrt(3),
            rng.standard_normal((C, 4)),
            rng.uniform(size=C),
        )
        ref = st.copy()
        update_chunk(ref, chunk)
        for m in repeats:
            other = st.copy()
            update_chunk(other, chunk.repeated(m))
            if not (
                np.array_equal(other.V, ref.V)
                and np.array_equal(other.K1, ref.K1)
                and np.array_equal(other.K2, ref.K2)
            ):
                bad += 1
    return CheckResult("consensus", bad == 0, float(bad), 0.0, n_instances * len(repeats), detail=f"m={list(repeats)}")


@_timed
def check_gradient(n_instances=100, seed=0, h=1e-5, fault=None):
    """Analytic addressing and value gradients vs central differences (relative 1e-4)."""
    rng = rng_stream(seed, "check-gradient")
    worst_addr = worst_val = 0.0
    for i in range(n_instances):
        kind = ("idw", "dot")[i % 2]
        n_sub = int(rng.integers(3, 7))
        k = int(rng.integers(2, n_sub + 1))
        heads = 1 + (i % 3 == 2)
        st = _random_state(rng, n_sub, 4, 2, heads, k, kind)
        C = int(rng.integers(1, 5))
        Q = rng.standard_normal((C, st.config.query_dim)) / math.sqrt(2)
        T = rng.standard_normal((C, 2))
        g = rng.uniform(size=C)

        base = oracle.selection_sets(st, Q)

        def same_selection(_X):
            return oracle.selection_sets(st, Q) == base

        grads, _, _ = addressing_key_gradient(st, Q)
        sign = -1.0 if fault == "grad-sign" else 1.0
        G1 = sign * np.stack([a for a, _ in grads])
        G2 = sign * np.stack([b for _, b in grads])
        f_addr = lambda _X: oracle.addressing_loss_ref(st, Q)
        fd1 = oracle.fd_gradient(f_addr, st.K1, h, same_selection)
        fd2 = oracle.fd_gradient(f_addr, st.K2, h, same_selection)
        worst_addr = max(worst_addr, oracle.max_rel_error(G1, fd1), oracle.max_rel_error(G2, fd2))

        chunk = ChunkBatch(Q, T, g)
        GV = value_gradient_raw(st, chunk)
        fdv = oracle.fd_gradient(lambda _X: oracle.mse_loss_ref(st, Q, T, g), st.V, h)
        worst_val = max(worst_val, oracle.max_rel_error(GV, fdv))
    worst = max(worst_addr, worst_val)
    return CheckResult(
        "gradient", worst < 1e-4, worst, 1e-4, n_instances,
        detail=f"addr={worst_addr:.2e} value={worst_val:.2e}",
    )


@_timed
def check_entropy(n_instances=200, seed=0):
    """Addressing loss stays in [-log n_sub, 0]; both ends are reached."""
    rng = rng_stream(seed, "check-entropy")
    worst = 0.0
    ok = True
    for i in range(n_instances):
        n_sub = int(rng.integers(2, 17))
        st = _random_state(rng, n_sub, 6, 2, 1, int(rng.integers(1, n_sub + 1)), "idw")
        Q = rng.standard_normal((int(rng.integers(1, 30)), 6))
        _, losses, _ = addressing_key_gradient(st, Q)
        lo = -math.log(st.config.n_sub)
        for l in losses[0]:
            if not (lo - 1e-12 <= l <= 1e-12):
                ok = False
                worst = max(worst, l, lo - l)
    # constructed extremes
    for n in (2, 4, 16, 64):
        one_hot = np.zeros((5, n))
        one_hot[:, 1] = 1.0
        l0, _ = addressing_loss(one_hot)
        uni, _ = addressing_loss(np.eye(n))
        worst = max(worst, abs(l0 - 0.0), abs(uni + math.log(n)))
    ok = ok and worst <= 1e-12
    return CheckResult("entropy", ok, worst, 1e-12, n_instances + 8)


CHECKS = {
    "select": check_select,
    "retrieve": check_retrieve,
    "rewrite": check_rewrite,
    "contraction": check_contraction,
    "consensus": check_consensus,
    "gradient": check_gradient,
    "entropy": check_entropy,
}
