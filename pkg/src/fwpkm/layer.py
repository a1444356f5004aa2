"""The full memory layer: slow-weight projections around a fast-weight PKM.

Per token the layer projects a hidden state to a query, a value and a gate,
reads the memory, mixes the read with the value residual, and queues a
(query, target) pair for memorization. With lookahead on, a token's query is
paired with the *next* token's value, so the most recent query is carried
until the next token arrives (also across chunk boundaries).
"""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import ArgumentError, DimensionError, StorageError
from .memory import MemoryState, read_container, retrieve, write_container
from .numeric import rms_norm, zscore
from .updater import ChunkBatch, update_chunk

RMS_EPS = 1e-5
ZSCORE_EPS = 1e-5
PROJECTIONS = ("q", "v", "g", "o")


@dataclass
class Projection:
    gain: np.ndarray  # (in,)
    W: np.ndarray  # (out, in)
    b: np.ndarray  # (out,)

    def __call__(self, x):
        return self.W @ rms_norm(x, self.gain, RMS_EPS) + self.b


@dataclass
class LayerWeights:
    hidden: int
    q: Projection
    v: Projection
    g: Projection
    o: Projection

    @classmethod
    def random(cls, config, hidden, seed=0):
        """Gaussian maps with std 1/sqrt(fan_in), unit gains, zero biases."""
        rng = np.random.default_rng(seed)

        def proj(n_in, n_out):
            W = rng.standard_normal((n_out, n_in)) / np.sqrt(n_in)
            return Projection(np.ones(n_in), W, np.zeros(n_out))

        return cls(
            hidden,
            q=proj(hidden, config.query_dim),
            v=proj(hidden, config.value_dim),
            g=proj(hidden, 1),
            o=proj(config.value_dim, hidden),
        )

    def check(self, config):
        shapes = {
            "q": (config.query_dim, self.hidden),
            "v": (config.value_dim, self.hidden),
            "g": (1, self.hidden),
            "o": (self.hidden, config.value_dim),
        }
        for name, shape in shapes.items():
            p = getattr(self, name)
            if p.W.shape != shape or p.gain.shape != (shape[1],) or p.b.shape != (shape[0],):
                raise DimensionError(f"projection {name}: expected W {shape}, got {p.W.shape}")

    def save(self, path):
        arrays = {}
        for name in PROJECTIONS:
            p = getattr(self, name)
            arrays[f"{name}.gain"] = p.gain
            arrays[f"{name}.W"] = p.W
            arrays[f"{name}.b"] = p.b
        write_container(path, {"kind": "layer", "hidden": self.hidden}, arrays)

    @classmethod
    def load(cls, path):
        meta, arrays = read_container(path)
        if meta.get("kind") != "layer":
            raise StorageError(f"{path}: not a layer-weights file")
        try:
            projs = {
                name: Projection(arrays[f"{name}.gain"], arrays[f"{name}.W"], arrays[f"{name}.b"])
                for name in PROJECTIONS
            }
        except KeyError as e:
            raise StorageError(f"{path}: missing array {e}") from e
        return cls(int(meta["hidden"]), **projs)


def _sigmoid(x):
    if x >= 0:
        return 1.0 / (1.0 + np.exp(-x))
    z = np.exp(x)
    return z / (1.0 + z)


def project_inputs(weights, h, config):
    """(q, v, g) for one hidden state.

    The gate is the logistic of the gate projection; with gating switched off
    it is fixed at 0.
    """
    h = np.asarray(h, dtype=float)
    if h.shape != (weights.hidden,):
        raise DimensionError(f"hidden state length {h.shape} != {weights.hidden}")
    q = weights.q(h)
    v = weights.v(h)
    g = float(_sigmoid(weights.g(h)[0])) if config.gating else 0.0
    return q, v, g


@dataclass
class LayerState:
    memory: MemoryState
    chunk_size: Optional[int] = None
    carry: Optional[tuple] = None  # (q, g, tag) awaiting its lookahead target
    pending: list = field(default_factory=list)  # (q, target, g, tag)
    reports: list = field(default_factory=list)

    def __post_init__(self):
        if self.chunk_size is None:
            self.chunk_size = self.memory.config.chunk_size


def mix_output(v_hat, v, g, gating=True):
    if gating:
        return g * v_hat + (1.0 - g) * v
    return v_hat + v


def _commit(layer):
    q, t, g, tags = zip(*layer.pending)
    chunk = ChunkBatch(np.array(q), np.array(t), np.array(g), list(tags))
    layer.pending = []
    report = update_chunk(layer.memory, chunk, allow_oversize=True)
    layer.reports.append(report)
    return report


def forward_token(layer, weights, h, tag=""):
    """Process one token; returns ``(o_prime, g)``.

    Memorization runs when the pending buffer reaches the layer's chunk size.
    """
    cfg = layer.memory.config
    q, v, g = project_inputs(weights, h, cfg)
    v_hat = retrieve(layer.memory, q).v_hat
    o = mix_output(v_hat, v, g, cfg.gating)
    o_prime = weights.o(o)

    target = zscore(v, ZSCORE_EPS) if cfg.value_norm else v
    if cfg.lookahead:
        if layer.carry is not None:
            cq, cg, ctag = layer.carry
            layer.pending.append((cq, target, cg, ctag))
        layer.carry = (q, g, tag)
    else:
        layer.pending.append((q, target, g, tag))
    if len(layer.pending) >= layer.chunk_size:
        _commit(layer)
    return o_prime, g


def flush(layer):
    """Memorize whatever is pending and drop the carried query."""
    layer.carry = None
    if not layer.pending:
        return None
    return _commit(layer)


def reprocess(layer, weights, hs, n, tags=None):
    """Read the same stream ``n`` times, updating once at the end of each pass.

    Returns one report per pass (None for a pass that produced no pairs).
    """
    if n < 1:
        raise ArgumentError("n must be at least 1")
    hs = list(hs)
    tags = tags if tags is not None else [str(i) for i in range(len(hs))]
    saved = layer.chunk_size
    # boundary only at the end of the stream: flush() does the single update
    layer.chunk_size = len(hs) + 1
    reports = []
    try:
        for _ in range(n):
            for h, tag in zip(hs, tags):
                forward_token(layer, weights, h, tag)
            reports.append(flush(layer))
    finally:
        layer.chunk_size = saved
    return reports
