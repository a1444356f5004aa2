import numpy as np
import pytest

from fwpkm import MemoryConfig, init
from fwpkm.errors import ArgumentError, DimensionError
from fwpkm.layer import (
    ZSCORE_EPS,
    LayerState,
    LayerWeights,
    flush,
    forward_token,
    mix_output,
    project_inputs,
    reprocess,
)
from fwpkm.memory import retrieve, retrieve_batch
from fwpkm.numeric import zscore

HIDDEN = 12


def make(seed=0, **kw):
    cfg = MemoryConfig(**{"n_sub": 8, "key_dim": 8, "value_dim": 6, "top_k": 3, "chunk_size": 4, **kw})
    w = LayerWeights.random(cfg, HIDDEN, seed)
    return LayerState(init(cfg, seed)), w


def stream(n, seed=0):
    return list(np.random.default_rng(seed).standard_normal((n, HIDDEN)))


def test_lookahead_pairs_query_with_next_value():
    layer, w = make(chunk_size=100)
    hs = stream(4)
    for h in hs:
        forward_token(layer, w, h)
    cfg = layer.memory.config
    assert len(layer.pending) == 3
    for t, (q, target, g, _) in enumerate(layer.pending):
        q_t, _, g_t = project_inputs(w, hs[t], cfg)
        _, v_next, _ = project_inputs(w, hs[t + 1], cfg)
        assert np.array_equal(q, q_t) and g == g_t
        assert np.array_equal(target, zscore(v_next, ZSCORE_EPS))
    assert layer.carry is not None


def test_no_lookahead_pairs_same_token():
    layer, w = make(chunk_size=100, lookahead=False)
    hs = stream(3)
    for h in hs:
        forward_token(layer, w, h)
    assert len(layer.pending) == 3 and layer.carry is None
    _, v0, _ = project_inputs(w, hs[0], layer.memory.config)
    assert np.array_equal(layer.pending[0][1], zscore(v0, ZSCORE_EPS))


def test_value_norm_off_uses_raw_value():
    layer, w = make(chunk_size=100, lookahead=False, value_norm=False)
    h = stream(1)[0]
    forward_token(layer, w, h)
    _, v, _ = project_inputs(w, h, layer.memory.config)
    assert np.array_equal(layer.pending[0][1], v)


def test_commit_at_chunk_boundary_and_carry_across():
    layer, w = make(chunk_size=4)
    for h in stream(5):
        forward_token(layer, w, h)
    # 4 pairs completed by token 5; the 5th query is carried
    assert len(layer.reports) == 1 and layer.reports[0].chunk_len == 4
    assert layer.pending == [] and layer.carry is not None
    assert layer.memory.step == 1


def test_flush_drops_carry():
    layer, w = make(chunk_size=100)
    for h in stream(3):
        forward_token(layer, w, h)
    rep = flush(layer)
    assert rep.chunk_len == 2
    assert layer.carry is None and layer.pending == []
    assert flush(layer) is None


def test_gating_endpoints_bitwise():
    rng = np.random.default_rng(0)
    v_hat, v = rng.standard_normal(6), rng.standard_normal(6)
    assert np.array_equal(mix_output(v_hat, v, 0.0), v)
    assert np.array_equal(mix_output(v_hat, v, 1.0), v_hat)
    assert np.array_equal(mix_output(v_hat, v, 0.3, gating=False), v_hat + v)


@pytest.mark.parametrize("bias,expect", [(-1e4, 0.0), (1e4, 1.0)])
def test_layer_gate_saturates_exactly(bias, expect):
    layer, w = make()
    w.g.b[:] = bias
    _, _, g = project_inputs(w, stream(1)[0], layer.memory.config)
    assert g == expect


def test_gating_off_gate_is_zero():
    layer, w = make(gating=False)
    _, _, g = project_inputs(w, stream(1)[0], layer.memory.config)
    assert g == 0.0


def test_hidden_length_checked():
    layer, w = make()
    with pytest.raises(DimensionError):
        forward_token(layer, w, np.zeros(HIDDEN + 1))


def test_weights_save_load(tmp_path):
    layer, w = make()
    w.save(tmp_path / "w.bin")
    back = LayerWeights.load(tmp_path / "w.bin")
    for name in ("q", "v", "g", "o"):
        a, b = getattr(w, name), getattr(back, name)
        assert np.array_equal(a.W, b.W) and np.array_equal(a.gain, b.gain) and np.array_equal(a.b, b.b)


def test_reprocess_one_update_per_pass():
    layer, w = make(chunk_size=4)
    reps = reprocess(layer, w, stream(10), 3)
    assert len(reps) == 3 and all(r.chunk_len == 9 for r in reps)
    assert layer.memory.step == 3 and layer.chunk_size == 4
    with pytest.raises(ArgumentError):
        reprocess(layer, w, stream(2), 0)


def _pair_error(layer, w, hs):
    cfg = layer.memory.config
    proj = [project_inputs(w, h, cfg) for h in hs]
    Q = np.array([p[0] for p in proj[:-1]])
    T = zscore(np.array([p[1] for p in proj[1:]]), ZSCORE_EPS)
    _, V_hat = retrieve_batch(layer.memory, Q)
    return float(np.mean(np.sum((V_hat - T) ** 2, axis=1)))


def test_second_pass_improves_recall():
    wins, gains = 0, []
    for seed in range(100):
        hs = stream(60, 1000 + seed)
        errs = []
        for n in (1, 2):
            layer, w = make(seed, key_dim=16, value_dim=16, top_k=4)
            reprocess(layer, w, hs, n)
            errs.append(_pair_error(layer, w, hs))
        wins += errs[1] <= errs[0]
        gains.append(errs[0] - errs[1])
    assert wins >= 95
    assert np.mean(gains) > 0
