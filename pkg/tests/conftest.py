import sys

import numpy as np
import pytest

from fwpkm import MemoryConfig, init


@pytest.fixture
def small_state():
    cfg = MemoryConfig(n_sub=8, key_dim=6, value_dim=4, heads=1, top_k=3, chunk_size=64)
    st = init(cfg, seed=1)
    st.V[:] = np.random.default_rng(2).standard_normal(st.V.shape)
    return st


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    lines = getattr(mod, "LINES", None)
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(lines):
        terminalreporter.write_line(lines[num])
