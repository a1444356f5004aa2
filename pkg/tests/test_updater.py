import numpy as np
import pytest

from fwpkm import ChunkBatch, MemoryConfig, NumericError, init, retrieve, update_chunk
from fwpkm.errors import ArgumentError, DimensionError
from fwpkm.updater import (
    addressing_key_gradient,
    addressing_loss,
    aggregate_value_gradients,
    apply_value_update,
    value_row_gradient,
)


def test_chunk_validation():
    with pytest.raises(ArgumentError):
        ChunkBatch(np.zeros((1, 4)), np.zeros((1, 2)), [1.5])
    with pytest.raises(DimensionError):
        ChunkBatch(np.zeros((2, 4)), np.zeros((1, 2)), [1.0, 1.0])
    with pytest.raises(NumericError):
        ChunkBatch(np.array([[np.nan, 0, 0, 0]]), np.zeros((1, 2)), [1.0])


def test_value_row_gradient_and_average():
    g = value_row_gradient(np.zeros(2), np.array([1.0, 2.0]), 0.5, gate=0.5)
    np.testing.assert_allclose(g, [-0.25, -0.5])
    agg = aggregate_value_gradients([(3, np.array([1.0])), (3, np.array([3.0])), (4, np.array([2.0]))])
    assert agg[3].tolist() == [2.0] and agg[4].tolist() == [2.0]


def test_apply_value_update_rejects_nan(small_state):
    before = small_state.V.copy()
    with pytest.raises(NumericError):
        apply_value_update(small_state, {0: np.array([np.nan] * 4)})
    assert np.array_equal(small_state.V, before)


def test_one_step_rewrite():
    cfg = MemoryConfig(n_sub=8, key_dim=4, value_dim=3, top_k=1)
    st = init(cfg, 0)
    q, v = np.array([0.1, -0.2, 0.3, 0.0]), np.array([1.0, -2.0, 3e6])
    update_chunk(st, ChunkBatch(q[None], v[None], [1.0]))
    np.testing.assert_allclose(retrieve(st, q).v_hat, v, rtol=0, atol=1e-9)


def test_gate_zero_leaves_values():
    cfg = MemoryConfig(n_sub=8, key_dim=4, value_dim=3, top_k=2)
    st = init(cfg, 0)
    update_chunk(st, ChunkBatch(np.ones((1, 4)), np.ones((1, 3)), [0.0]))
    assert not st.V.any()
    assert st.ledger == {}


def test_chunk_size_enforced(small_state):
    big = ChunkBatch(np.zeros((65, 6)), np.zeros((65, 4)), np.ones(65))
    with pytest.raises(ArgumentError):
        update_chunk(small_state, big)
    update_chunk(small_state, big, allow_oversize=True)


def test_duplicates_match_single_copy(small_state):
    rng = np.random.default_rng(0)
    chunk = ChunkBatch(rng.standard_normal((5, 6)), rng.standard_normal((5, 4)), rng.uniform(size=5))
    a, b = small_state.copy(), small_state.copy()
    update_chunk(a, chunk)
    update_chunk(b, chunk.repeated(3))
    assert np.array_equal(a.V, b.V) and np.array_equal(a.K1, b.K1)


def test_ledger_records(small_state):
    small_state.ledger = {}
    q = np.random.default_rng(1).standard_normal(6)
    update_chunk(small_state, ChunkBatch(q[None], np.ones((1, 4)), [1.0], ["needle"]))
    recs = [r for rs in small_state.ledger.values() for r in rs]
    assert len(recs) == small_state.config.top_k
    assert {r.sample_tag for r in recs} == {"needle"}
    assert abs(sum(r.weight for r in recs) - 1.0) < 1e-12


def test_addressing_loss_bounds():
    loss, p = addressing_loss(np.eye(4))
    assert loss == pytest.approx(-np.log(4))
    loss, _ = addressing_loss(np.tile([0, 1.0, 0, 0], (3, 1)))
    assert loss == 0.0


def test_addressing_spreads_usage():
    # one repeated query: the update should move unselected keys toward it
    cfg = MemoryConfig(n_sub=16, key_dim=4, value_dim=2, top_k=2, addr_weight=1.0)
    st = init(cfg, 4)
    Q = np.tile(np.array([0.3, 0.1, -0.2, 0.4]), (4, 1)) + 1e-3 * np.random.default_rng(0).standard_normal((4, 4))
    before, _, _ = addressing_key_gradient(st, Q)
    loss0 = np.mean(addressing_key_gradient(st, Q)[1])
    for _ in range(5):
        update_chunk(st, ChunkBatch(Q, np.zeros((4, 2)), np.ones(4)))
    loss1 = np.mean(addressing_key_gradient(st, Q)[1])
    assert loss1 <= loss0 + 1e-12


def test_report_json(small_state):
    rep = update_chunk(small_state, ChunkBatch(np.ones((2, 6)), np.ones((2, 4)), [1.0, 0.5]))
    import json

    d = json.loads(rep.to_json())
    assert d["chunk_len"] == 2 and d["key_update"] == "addressing"
    assert sum(d["read_counts"].values()) == 2 * small_state.config.top_k
