"""Slot usage, gate histograms and slot provenance traces."""

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ArgumentError
from .numeric import entropy
from .updater import UpdateReport


@dataclass
class UsageStats:
    unique_slots_used: int
    usage_fraction: float
    p_bar: list  # [head][set] -> averaged marginal over the window
    marginal_entropy: float  # mean over heads and sub-key sets

    def to_dict(self):
        return dict(self.__dict__)


def _trailing(items, window):
    if window is None:
        return list(items)
    if window < 1:
        raise ArgumentError("window must be at least 1")
    return list(items)[-window:]


def usage_stats(source, window=None, n_sub=None):
    """Slot usage over the last ``window`` chunks.

    ``source`` is a list of ``UpdateReport`` or a ledger (slot -> records).
    For a ledger the window counts update steps and ``n_sub`` is required;
    the sub-key marginals are then the write weights summed per grid row and
    column.
    """
    if isinstance(source, dict):
        return _ledger_usage(source, window, n_sub)
    reports = _trailing(source, window)
    if not reports or not all(isinstance(r, UpdateReport) for r in reports):
        raise ArgumentError("usage_stats needs a non-empty window of UpdateReports")
    n = len(reports[0].p_bar[0][0])
    slots = set()
    for r in reports:
        slots.update(r.read_counts)
    p = np.mean([np.asarray(r.p_bar, dtype=float) for r in reports], axis=0)  # (heads, 2, n)
    ent = float(np.mean(entropy(p)))
    return UsageStats(len(slots), len(slots) / (n * n), p.tolist(), ent)


def _ledger_usage(ledger, window, n_sub):
    if n_sub is None:
        raise ArgumentError("n_sub is required for ledger usage")
    steps = sorted({r.step for recs in ledger.values() for r in recs})
    if not steps:
        raise ArgumentError("empty ledger")
    keep = set(_trailing(steps, window))
    rows = np.zeros(n_sub)
    cols = np.zeros(n_sub)
    slots = set()
    for slot, recs in ledger.items():
        w = sum(r.weight for r in recs if r.step in keep)
        if any(r.step in keep for r in recs):
            slots.add(slot)
            i, j = divmod(int(slot), n_sub)
            rows[i] += w
            cols[j] += w
    p = np.stack([rows / rows.sum(), cols / cols.sum()])[None]
    ent = float(np.mean(entropy(p)))
    return UsageStats(len(slots), len(slots) / (n_sub * n_sub), p.tolist(), ent)


def gating_histogram(gates, n_bins=10):
    """Counts over equal-width bins of [0, 1]; the last bin includes 1."""
    g = np.asarray(gates, dtype=float).ravel()
    if n_bins < 1:
        raise ArgumentError("n_bins must be at least 1")
    if np.any(~np.isfinite(g)) or np.any(g < 0) or np.any(g > 1):
        raise ArgumentError("gates must lie in [0, 1]")
    counts, edges = np.histogram(g, bins=n_bins, range=(0.0, 1.0))
    return counts, edges


def write_histogram_csv(path, counts, edges):
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["bin_lo", "bin_hi", "count"])
        for lo, hi, c in zip(edges[:-1], edges[1:], counts):
            w.writerow([f"{lo:.6g}", f"{hi:.6g}", int(c)])


@dataclass
class TraceEntry:
    slot: int
    head: int
    weight: float
    records: list = field(default_factory=list)  # latest first
    hit: object = None  # True/False, or None without a truth tag

    @property
    def unwritten(self):
        return not self.records

    def to_dict(self):
        latest = self.records[0] if self.records else None
        return {
            "slot": self.slot,
            "head": self.head,
            "step": latest.step if latest else None,
            "sample_tag": latest.sample_tag if latest else None,
            "weight": latest.weight if latest else None,
            "retrieval_weight": self.weight,
            "hit": self.hit,
            "unwritten": self.unwritten,
            "history": [{"step": r.step, "sample_tag": r.sample_tag, "weight": r.weight} for r in self.records[1:]],
        }


@dataclass
class ProvenanceTrace:
    entries: list

    def to_jsonl(self):
        return "".join(json.dumps(e.to_dict(), sort_keys=True) + "\n" for e in self.entries)


def trace_retrieval(state, retrieval, truth_tag=None, depth=1):
    """Join the retrieved slots against the ledger, heaviest slot first.

    Each entry carries up to ``depth`` most recent write records. ``hit``
    compares the latest record's tag with ``truth_tag``.
    """
    if state.ledger is None:
        raise ArgumentError("state has no ledger")
    entries = []
    for h, sel in enumerate(retrieval.selections):
        for slot, w in zip(sel.pair_idx.tolist(), sel.final_weights.tolist()):
            recs = state.ledger.get(slot, [])
            latest = list(reversed(recs[-depth:])) if depth > 0 else []
            hit = None
            if truth_tag is not None:
                hit = bool(recs) and recs[-1].sample_tag == truth_tag
            entries.append(TraceEntry(slot, h, w, latest, hit))
    entries.sort(key=lambda e: -e.weight)
    return ProvenanceTrace(entries)
