"""Fast-weight storage: configuration, state, retrieval and snapshots."""

import dataclasses
import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import ArgumentError, ConfigMismatchError, DimensionError, StorageError
from .product_key import SCORE_KINDS, Selection, scatter_sub_weights, score, select_batch, split_query


@dataclass(frozen=True)
class MemoryConfig:
    """Hyperparameters and ablation switches.

    Defaults are the full-scale setting: 512^2 slots, 512-d keys and
    values, one head with Top-8, chunks of 512, addressing weight 10,
    IDW epsilon 1e-3 and learning rate 1.
    """

    n_sub: int = 512
    key_dim: int = 512
    value_dim: int = 512
    heads: int = 1
    top_k: int = 8
    chunk_size: int = 512
    eps_idw: float = 1e-3
    addr_weight: float = 10.0
    score_kind: str = "idw"
    lr: float = 1.0
    value_norm: bool = True
    addressing_loss: bool = True
    gating: bool = True
    loss_weighting: bool = True
    lookahead: bool = True
    dtype: str = "float64"

    def __post_init__(self):
        self.validate()

    def validate(self):
        for name in ("n_sub", "key_dim", "value_dim", "heads", "top_k", "chunk_size"):
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)) or v < 1:
                raise ArgumentError(f"{name} must be a positive integer, got {v!r}")
        if self.top_k > self.n_sub:
            raise ArgumentError(f"top_k={self.top_k} exceeds n_sub={self.n_sub}")
        if self.key_dim % 2:
            raise ArgumentError(f"key_dim={self.key_dim} must be even")
        if not self.lr > 0:
            raise ArgumentError("lr must be positive")
        if not self.eps_idw > 0:
            raise ArgumentError("eps_idw must be positive")
        if not (np.isfinite(self.addr_weight) and self.addr_weight >= 0):
            raise ArgumentError("addr_weight must be finite and non-negative")
        if self.score_kind not in SCORE_KINDS:
            raise ArgumentError(f"score_kind must be one of {SCORE_KINDS}")
        if self.dtype not in ("float64", "float32"):
            raise ArgumentError("dtype must be float64 or float32")

    @property
    def n_slots(self):
        return self.n_sub * self.n_sub

    @property
    def sub_dim(self):
        return self.key_dim // 2

    @property
    def query_dim(self):
        return self.heads * self.key_dim

    @property
    def np_dtype(self):
        return np.dtype(self.dtype)

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d):
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ArgumentError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass(frozen=True)
class WriteRecord:
    step: int
    sample_tag: str
    weight: float


@dataclass
class MemoryState:
    config: MemoryConfig
    K1: np.ndarray  # (heads, n_sub, key_dim // 2)
    K2: np.ndarray
    V: np.ndarray  # (n_sub ** 2, value_dim)
    step: int = 0
    ledger: Optional[dict] = field(default_factory=dict)  # slot -> [WriteRecord]

    def copy(self):
        ledger = None if self.ledger is None else {s: list(r) for s, r in self.ledger.items()}
        return MemoryState(self.config, self.K1.copy(), self.K2.copy(), self.V.copy(), self.step, ledger)

    def digest(self):
        """SHA-256 over matrices, step and ledger; used to detect mutation."""
        h = hashlib.sha256()
        for a in (self.K1, self.K2, self.V):
            h.update(np.ascontiguousarray(a).tobytes())
        h.update(str(self.step).encode())
        if self.ledger:
            for slot in sorted(self.ledger):
                for r in self.ledger[slot]:
                    h.update(f"{slot}|{r.step}|{r.sample_tag}|{r.weight!r}".encode())
        return h.hexdigest()

    def equals(self, other):
        return (
            self.config == other.config
            and self.step == other.step
            and np.array_equal(self.K1, other.K1)
            and np.array_equal(self.K2, other.K2)
            and np.array_equal(self.V, other.V)
            and (self.ledger or {}) == (other.ledger or {})
        )


@dataclass(frozen=True)
class RetrievalResult:
    selections: list  # one Selection per head
    v_hat: np.ndarray


def init(config, seed=0, track_ledger=True):
    """Fresh state: Gaussian sub-keys with std 1/sqrt(sub_dim), zero values."""
    config.validate()
    rng = np.random.default_rng(seed)
    dt = config.np_dtype
    shape = (config.heads, config.n_sub, config.sub_dim)
    scale = 1.0 / np.sqrt(config.sub_dim)
    K1 = (rng.standard_normal(shape) * scale).astype(dt)
    K2 = (rng.standard_normal(shape) * scale).astype(dt)
    V = np.zeros((config.n_slots, config.value_dim), dtype=dt)
    return MemoryState(config, K1, K2, V, 0, {} if track_ledger else None)


def _check_queries(state, Q):
    Q = np.asarray(Q, dtype=state.config.np_dtype)
    if Q.shape[-1] != state.config.query_dim:
        raise DimensionError(
            f"query length {Q.shape[-1]} != heads*key_dim = {state.config.query_dim}"
        )
    return Q


def head_queries(config, Q):
    """(B, heads*key_dim) -> list over heads of (q1, q2), each (B, sub_dim)."""
    out = []
    for h in range(config.heads):
        qh = Q[..., h * config.key_dim : (h + 1) * config.key_dim]
        out.append(split_query(qh))
    return out


def sub_scores_batch(state, Q):
    """Per-head sub-scores for a batch of queries: list of (S1, S2), each (B, n_sub)."""
    cfg = state.config
    res = []
    for h, (q1, q2) in enumerate(head_queries(cfg, Q)):
        s1 = score(q1, state.K1[h], cfg.score_kind, cfg.eps_idw)
        s2 = score(q2, state.K2[h], cfg.score_kind, cfg.eps_idw)
        res.append((s1, s2))
    return res


def select_queries(state, Q):
    """Per-head batched selections (dicts from ``select_batch``)."""
    Q = np.atleast_2d(_check_queries(state, Q))
    return [select_batch(s1, s2, state.config.top_k) for s1, s2 in sub_scores_batch(state, Q)]


def predict(state, selections):
    """v_hat for a batch: sum over heads of weighted value rows."""
    out = None
    for sel in selections:
        rows = state.V[sel["pair_idx"]]  # (B, k, value_dim)
        part = np.einsum("bk,bkd->bd", sel["final_weights"], rows)
        out = part if out is None else out + part
    return out


def retrieve_batch(state, Q):
    sels = select_queries(state, Q)
    return sels, predict(state, sels)


def retrieve(state, q):
    """Read the memory with one query; never mutates ``state``."""
    q = np.asarray(q)
    if q.ndim != 1:
        raise DimensionError("retrieve expects a single query vector")
    sels, v_hat = retrieve_batch(state, q[None])
    n = state.config.n_sub
    selections = [
        Selection(
            idx1=s["idx1"][0],
            idx2=s["idx2"][0],
            pair_idx=s["pair_idx"][0],
            pair_scores=s["pair_scores"][0],
            final_weights=s["final_weights"][0],
            sub_weights1=scatter_sub_weights(s["idx1"], s["sub_w1"], n)[0],
            sub_weights2=scatter_sub_weights(s["idx2"], s["sub_w2"], n)[0],
        )
        for s in sels
    ]
    return RetrievalResult(selections, v_hat[0])


# ---------------------------------------------------------------------------
# snapshots

MAGIC = b"FWPKMSNP"
FORMAT_VERSION = 1


def ledger_path(path):
    path = Path(path)
    return path.with_name(path.name + ".ledger.jsonl")


def write_container(path, meta, arrays):
    """Little-endian container: magic, version, JSON meta block, named float64 arrays."""
    meta_bytes = json.dumps(meta, sort_keys=True).encode()
    try:
        with open(path, "wb") as f:
            f.write(MAGIC)
            f.write(struct.pack("<B", FORMAT_VERSION))
            f.write(struct.pack("<I", len(meta_bytes)))
            f.write(meta_bytes)
            f.write(struct.pack("<I", len(arrays)))
            for name, arr in arrays.items():
                arr = np.ascontiguousarray(arr, dtype="<f8")
                nb = name.encode()
                f.write(struct.pack("<H", len(nb)))
                f.write(nb)
                f.write(struct.pack("<B", arr.ndim))
                f.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
                f.write(arr.tobytes())
    except OSError as e:
        raise StorageError(f"cannot write {path}: {e}") from e


def read_container(path):
    try:
        data = Path(path).read_bytes()
    except OSError as e:
        raise StorageError(f"cannot read {path}: {e}") from e
    try:
        if data[: len(MAGIC)] != MAGIC:
            raise StorageError(f"{path}: bad magic header")
        pos = len(MAGIC)
        (version,) = struct.unpack_from("<B", data, pos)
        pos += 1
        if version != FORMAT_VERSION:
            raise StorageError(f"{path}: format version {version}, expected {FORMAT_VERSION}")
        (mlen,) = struct.unpack_from("<I", data, pos)
        pos += 4
        meta = json.loads(data[pos : pos + mlen].decode())
        pos += mlen
        (count,) = struct.unpack_from("<I", data, pos)
        pos += 4
        arrays = {}
        for _ in range(count):
            (nlen,) = struct.unpack_from("<H", data, pos)
            pos += 2
            name = data[pos : pos + nlen].decode()
            pos += nlen
            (ndim,) = struct.unpack_from("<B", data, pos)
            pos += 1
            shape = struct.unpack_from(f"<{ndim}Q", data, pos)
            pos += 8 * ndim
            size = int(np.prod(shape)) * 8
            if pos + size > len(data):
                raise StorageError(f"{path}: truncated array {name!r}")
            arrays[name] = np.frombuffer(data, dtype="<f8", count=size // 8, offset=pos).reshape(shape).copy()
            pos += size
        if pos != len(data):
            raise StorageError(f"{path}: trailing bytes")
    except (struct.error, UnicodeDecodeError, json.JSONDecodeError) as e:
        raise StorageError(f"{path}: malformed snapshot ({e})") from e
    return meta, arrays


def save(state, path, include_ledger=True):
    meta = {"kind": "memory", "config": state.config.to_dict(), "step": state.step}
    write_container(path, meta, {"K1": state.K1, "K2": state.K2, "V": state.V})
    lp = ledger_path(path)
    if include_ledger and state.ledger is not None:
        try:
            with open(lp, "w") as f:
                for slot in sorted(state.ledger):
                    for r in state.ledger[slot]:
                        f.write(json.dumps({"slot": int(slot), "step": r.step, "sample_tag": r.sample_tag, "weight": r.weight}) + "\n")
        except OSError as e:
            raise StorageError(f"cannot write ledger {lp}: {e}") from e
    else:
        # a sidecar left from an earlier save would no longer describe this state
        lp.unlink(missing_ok=True)


def load(path, expect_config=None):
    """Read a snapshot written by ``save``.

    If ``expect_config`` is given the stored grid, dims and heads must match
    it, otherwise ``ConfigMismatchError`` is raised.
    """
    meta, arrays = read_container(path)
    if meta.get("kind") != "memory":
        raise StorageError(f"{path}: not a memory snapshot")
    try:
        config = MemoryConfig.from_dict(meta["config"])
    except (ArgumentError, TypeError, KeyError) as e:
        raise StorageError(f"{path}: bad config block ({e})") from e
    if expect_config is not None:
        for name in ("n_sub", "key_dim", "value_dim", "heads"):
            if getattr(config, name) != getattr(expect_config, name):
                raise ConfigMismatchError(
                    f"{path}: {name}={getattr(config, name)} but expected {getattr(expect_config, name)}"
                )
    dt = config.np_dtype
    K1, K2, V = arrays["K1"].astype(dt), arrays["K2"].astype(dt), arrays["V"].astype(dt)
    want = (config.heads, config.n_sub, config.sub_dim)
    if K1.shape != want or K2.shape != want or V.shape != (config.n_slots, config.value_dim):
        raise StorageError(f"{path}: array shapes disagree with config")

    ledger = {}
    lp = ledger_path(path)
    if lp.exists():
        lineno = 0
        try:
            for lineno, line in enumerate(lp.read_text().splitlines(), 1):
                if not line.strip():
                    continue
                o = json.loads(line)
                ledger.setdefault(int(o["slot"]), []).append(
                    WriteRecord(int(o["step"]), str(o["sample_tag"]), float(o["weight"]))
                )
        except (OSError, ValueError, KeyError) as e:
            raise StorageError(f"{lp}: bad ledger line {lineno}: {e}") from e
    return MemoryState(config, K1, K2, V, int(meta["step"]), ledger)
