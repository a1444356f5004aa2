"""Memory-level needle-in-a-haystack benchmark with repeated reading.

An episode is a stream of (query, codeword) writes. A few of them are
needles: unique queries bound to distinct codewords, which are later probed.
The rest are distractors that load the memory. ``run_niter`` writes the whole
stream once per pass (one update per pass when chunking per episode) and
measures after every pass how many needles decode to their codeword.
"""

import csv
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ArgumentError
from .memory import retrieve_batch
from .numeric import zscore
from .seeding import rng_stream
from .updater import ChunkBatch, update_chunk

ZSCORE_EPS = 1e-5


@dataclass(frozen=True)
class EpisodeSpec:
    n_needles: int = 5
    n_distractors: int = 1000
    codebook_size: int = 256
    key_dim: int = 16  # full query length (heads * per-head key dim)
    value_dim: int = 32
    seed: int = 0
    gate_mode: str = "all_one"

    def validate(self):
        for name in ("n_needles", "n_distractors", "codebook_size", "key_dim", "value_dim"):
            if getattr(self, name) < 0:
                raise ArgumentError(f"{name} must be non-negative")
        if self.codebook_size < max(self.n_needles, 1):
            raise ArgumentError("codebook_size must be at least n_needles (and at least 1)")
        if self.key_dim < 2 or self.key_dim % 2:
            raise ArgumentError("key_dim must be even and at least 2")
        if self.value_dim < 1:
            raise ArgumentError("value_dim must be positive")
        if self.gate_mode not in ("all_one", "random"):
            raise ArgumentError("gate_mode must be 'all_one' or 'random'")


@dataclass
class Episode:
    spec: EpisodeSpec
    queries: np.ndarray  # (T, key_dim)
    value_ids: np.ndarray  # (T,)
    is_needle: np.ndarray  # (T,) bool
    gates: np.ndarray  # (T,)
    codebook: np.ndarray  # (codebook_size, value_dim), rows z-scored
    raw_scale: np.ndarray  # (T,) per-write scale of the unnormalized target
    raw_shift: np.ndarray  # (T,) per-write offset of the unnormalized target

    @property
    def stream(self):
        return list(zip(self.queries, self.value_ids.tolist(), self.is_needle.tolist()))

    @property
    def probes(self):
        pos = np.flatnonzero(self.is_needle)
        return [(self.queries[p], int(self.value_ids[p])) for p in pos]

    def targets(self, value_norm=True, lookahead=True):
        """Per-write target vectors and the mask of writes that are kept.

        Unnormalized targets are ``scale * codeword + shift``; z-scoring
        recovers the codeword. Without lookahead each query is paired with
        the previous write's value (the first write has none and is dropped).
        """
        raw = self.raw_scale[:, None] * self.codebook[self.value_ids] + self.raw_shift[:, None]
        tgt = zscore(raw, ZSCORE_EPS) if value_norm else raw
        keep = np.ones(len(tgt), dtype=bool)
        if not lookahead:
            tgt = np.roll(tgt, 1, axis=0)
            keep[0] = False
        return tgt, keep


def gen_episode(spec):
    spec.validate()
    rng = rng_stream(spec.seed, "episode")
    T = spec.n_needles + spec.n_distractors
    sub = spec.key_dim // 2
    codebook = zscore(rng.standard_normal((spec.codebook_size, spec.value_dim)), ZSCORE_EPS)
    queries = rng.standard_normal((T, spec.key_dim)) / np.sqrt(sub)
    value_ids = rng.integers(0, spec.codebook_size, size=T)
    is_needle = np.zeros(T, dtype=bool)
    pos = rng.choice(T, size=spec.n_needles, replace=False) if spec.n_needles else np.array([], int)
    is_needle[pos] = True
    value_ids[np.sort(pos)] = rng.choice(spec.codebook_size, size=spec.n_needles, replace=False)
    if spec.gate_mode == "random":
        gates = rng.uniform(0.0, 1.0, size=T)
    else:
        gates = np.ones(T)
    raw_scale = np.exp(rng.normal(0.0, 0.5, size=T))
    raw_shift = rng.normal(0.0, 1.0, size=T)
    needle_q = queries[is_needle]
    if len(np.unique(needle_q, axis=0)) != len(needle_q):
        raise ArgumentError("needle queries collided; pick another seed")
    return Episode(spec, queries, value_ids, is_needle, gates, codebook, raw_scale, raw_shift)


def decode(v_hat, codebook):
    """Nearest codeword by cosine similarity; returns ``(id, null)``.

    A zero read decodes to id 0 with ``null`` set.
    """
    v_hat = np.asarray(v_hat, dtype=float)
    codebook = np.asarray(codebook, dtype=float)
    if len(codebook) == 0:
        raise ArgumentError("empty codebook")
    nv = np.linalg.norm(v_hat)
    if nv == 0:
        return 0, True
    cos = codebook @ v_hat / (np.linalg.norm(codebook, axis=1) * nv)
    return int(np.argmax(cos)), False


def decode_batch(V_hat, codebook):
    V_hat = np.atleast_2d(V_hat)
    nv = np.linalg.norm(V_hat, axis=1)
    cn = np.linalg.norm(codebook, axis=1)
    cos = (V_hat @ codebook.T) / np.where(cn > 0, cn, 1.0)[None, :]
    ids = np.argmax(cos, axis=1)
    null = nv == 0
    ids[null] = 0
    return ids, null


@dataclass
class AccuracyReport:
    per_iter_accuracy: list
    details: list = field(default_factory=list)  # per pass: list of per-probe dicts
    reports: list = field(default_factory=list)  # UpdateReports, in order
    subkey_collisions: int = 0


def needle_collisions(state, episode):
    """Number of needle pairs whose queries select the same slot set (k=1 exact-rewrite check)."""
    from .memory import select_queries

    probes = episode.queries[episode.is_needle]
    if len(probes) < 2:
        return 0
    sels = select_queries(state, probes)
    keys = [tuple(np.concatenate([s["pair_idx"][i] for s in sels]).tolist()) for i in range(len(probes))]
    return len(keys) - len(set(keys))


def probe(state, episode):
    q = episode.queries[episode.is_needle]
    truth = episode.value_ids[episode.is_needle]
    if len(q) == 0:
        return 1.0, []
    _, V_hat = retrieve_batch(state, q)
    ids, null = decode_batch(V_hat, episode.codebook)
    detail = [
        {"truth": int(t), "pred": int(p), "null": bool(n), "correct": bool(p == t and not n)}
        for t, p, n in zip(truth, ids, null)
    ]
    acc = float(np.mean([d["correct"] for d in detail]))
    return acc, detail


def run_niter(state, episode, n, chunking="per_episode", keep_reports=True):
    """Write the episode ``n`` times, probing after each pass.

    Probing only reads. ``per_episode`` applies one update per pass;
    ``fixed_C`` splits the stream into chunks of the memory's chunk size.
    """
    if n < 1:
        raise ArgumentError("n must be at least 1")
    if chunking not in ("per_episode", "fixed_C"):
        raise ArgumentError(f"unknown chunking {chunking!r}")
    cfg = state.config
    if episode.queries.shape[1] != cfg.query_dim:
        raise ArgumentError(f"episode key_dim {episode.queries.shape[1]} != memory query dim {cfg.query_dim}")
    tgt, keep = episode.targets(cfg.value_norm, cfg.lookahead)
    Q = episode.queries[keep]
    T = tgt[keep]
    G = episode.gates[keep]
    tags = [f"{'needle' if nd else 'hay'}:{i}" for i, nd in zip(np.flatnonzero(keep), episode.is_needle[keep])]
    if chunking == "per_episode":
        bounds = [(0, len(Q))]
    else:
        bounds = [(s, min(s + cfg.chunk_size, len(Q))) for s in range(0, len(Q), cfg.chunk_size)]

    out = AccuracyReport([], subkey_collisions=needle_collisions(state, episode))
    for _ in range(n):
        for a, b in bounds:
            if b <= a:
                continue
            r = update_chunk(state, ChunkBatch(Q[a:b], T[a:b], G[a:b], tags[a:b]), allow_oversize=True)
            if keep_reports:
                out.reports.append(r)
        acc, detail = probe(state, episode)
        out.per_iter_accuracy.append(acc)
        out.details.append(detail)
    return out


def usage_stream(seed, n_chunks, chunk_size, query_dim, value_dim, n_clusters=16, spread=0.3):
    """Clustered queries with random targets for slot-usage experiments.

    Queries come from a few tight Gaussian clusters, the regime in which
    sparse memories tend to collapse onto a handful of slots.
    """
    rng = rng_stream(seed, "usage")
    sub = query_dim // 2
    centers = rng.standard_normal((n_clusters, query_dim)) / np.sqrt(sub)
    total = n_chunks * chunk_size
    which = rng.integers(0, n_clusters, size=total)
    Q = centers[which] + spread * rng.standard_normal((total, query_dim)) / np.sqrt(sub)
    T = zscore(rng.standard_normal((total, value_dim)), ZSCORE_EPS)
    return [
        ChunkBatch(Q[i : i + chunk_size], T[i : i + chunk_size], np.ones(chunk_size))
        for i in range(0, total, chunk_size)
    ]


# ---------------------------------------------------------------------------
# result files


def write_jsonl(path, rows):
    with open(path, "w") as f:
        for r in rows:
            f.write(json.dumps(r, sort_keys=True) + "\n")


def write_csv(path, rows, fields):
    with open(path, "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=fields, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: r.get(k) for k in fields})


def spec_dict(spec):
    return asdict(spec)
