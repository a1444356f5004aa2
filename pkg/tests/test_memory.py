import numpy as np
import pytest

from fwpkm import (
    ChunkBatch,
    ConfigMismatchError,
    DimensionError,
    MemoryConfig,
    StorageError,
    init,
    load,
    retrieve,
    save,
    update_chunk,
)
from fwpkm.errors import ArgumentError
from fwpkm.memory import MAGIC, ledger_path
from fwpkm.oracle import dense_retrieve


def test_config_validation():
    with pytest.raises(ArgumentError):
        MemoryConfig(n_sub=4, top_k=5, key_dim=4, value_dim=2)
    with pytest.raises(ArgumentError):
        MemoryConfig(n_sub=4, top_k=2, key_dim=5, value_dim=2)
    with pytest.raises(ArgumentError):
        MemoryConfig(n_sub=4, top_k=2, key_dim=4, value_dim=2, score_kind="cos")


def test_config_dict_round_trip():
    cfg = MemoryConfig(n_sub=4, key_dim=4, value_dim=2, top_k=2, heads=2)
    assert MemoryConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(ArgumentError):
        MemoryConfig.from_dict({**cfg.to_dict(), "bogus": 1})


def test_init_shapes():
    cfg = MemoryConfig(n_sub=4, key_dim=6, value_dim=3, top_k=2, heads=2)
    st = init(cfg, 0)
    assert st.K1.shape == (2, 4, 3) and st.K2.shape == (2, 4, 3)
    assert st.V.shape == (16, 3) and not st.V.any()
    assert init(cfg, 0).equals(st)
    assert not np.array_equal(init(cfg, 1).K1, st.K1)


def test_retrieve_matches_dense(small_state):
    rng = np.random.default_rng(5)
    for _ in range(50):
        q = rng.standard_normal(6)
        np.testing.assert_allclose(retrieve(small_state, q).v_hat, dense_retrieve(small_state, q), atol=1e-12)


def test_retrieve_does_not_mutate(small_state):
    before = small_state.digest()
    retrieve(small_state, np.ones(6))
    assert small_state.digest() == before


def test_retrieve_wrong_length(small_state):
    with pytest.raises(DimensionError):
        retrieve(small_state, np.ones(5))


def test_multi_head_sums_heads():
    cfg = MemoryConfig(n_sub=6, key_dim=4, value_dim=3, top_k=2, heads=3)
    st = init(cfg, 2)
    st.V[:] = np.random.default_rng(0).standard_normal(st.V.shape)
    q = np.random.default_rng(1).standard_normal(12)
    r = retrieve(st, q)
    assert len(r.selections) == 3
    manual = sum(s.final_weights @ st.V[s.pair_idx] for s in r.selections)
    np.testing.assert_allclose(r.v_hat, manual, atol=1e-14)


def _written_state():
    cfg = MemoryConfig(n_sub=8, key_dim=6, value_dim=4, top_k=3, heads=2)
    st = init(cfg, 3)
    rng = np.random.default_rng(3)
    update_chunk(st, ChunkBatch(rng.standard_normal((10, 12)), rng.standard_normal((10, 4)), rng.uniform(size=10), [f"t{i}" for i in range(10)]))
    return st


def test_save_load_round_trip(tmp_path):
    st = _written_state()
    p = tmp_path / "m.snp"
    save(st, p)
    back = load(p)
    assert back.equals(st)
    assert back.digest() == st.digest()
    assert ledger_path(p).exists()


def test_save_without_ledger_removes_stale_sidecar(tmp_path):
    st = _written_state()
    p = tmp_path / "m.snp"
    save(st, p)
    save(st, p, include_ledger=False)
    assert not ledger_path(p).exists()
    assert load(p).ledger == {}


def test_load_bad_magic(tmp_path):
    p = tmp_path / "m.snp"
    save(_written_state(), p)
    data = bytearray(p.read_bytes())
    data[0:2] = b"XX"
    p.write_bytes(bytes(data))
    with pytest.raises(StorageError, match="magic"):
        load(p)


def test_load_truncated(tmp_path):
    p = tmp_path / "m.snp"
    save(_written_state(), p)
    p.write_bytes(p.read_bytes()[:-10])
    with pytest.raises(StorageError):
        load(p)


def test_load_config_mismatch(tmp_path):
    st = _written_state()
    p = tmp_path / "m.snp"
    save(st, p)
    with pytest.raises(ConfigMismatchError, match="n_sub"):
        load(p, expect_config=st.config.replace(n_sub=16))
    assert load(p, expect_config=st.config).equals(st)


def test_load_missing_file(tmp_path):
    with pytest.raises(StorageError):
        load(tmp_path / "nope")


def test_snapshot_header(tmp_path):
    p = tmp_path / "m.snp"
    save(_written_state(), p)
    assert p.read_bytes().startswith(MAGIC + b"\x01")
