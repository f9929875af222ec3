import numpy as np
import pytest
import torch

from adrrec.corpus import UserSequences
from adrrec.encoder import ADRRec, ModelConfig


def tiny_corpus(n_users=6, n_items=10, seed=0, length=(3, 9)):
    rng = np.random.default_rng(seed)
    items, times = [], []
    for _ in range(n_users):
        n = int(rng.integers(*length))
        items.append(rng.integers(1, n_items + 1, size=n))
        times.append(1_600_000_000 + np.cumsum(rng.integers(0, 5000, size=n)))
    return UserSequences([f"u{u}" for u in range(n_users)], [f"i{i}" for i in range(1, n_items + 1)],
                         items, times)


def tiny_model(mode="p-b-s-l-r-o", d_model=8, n_items=10, max_len=6, dropout=0.0, seed=0,
               dtype=torch.float64, **kw):
    torch.manual_seed(seed)
    cfg = ModelConfig(mode=mode, n_items=n_items, d_model=d_model, n_layers=2, d_ff=16, max_len=max_len,
                      dropout=dropout, t_min=1_600_000_000, **kw)
    return ADRRec(cfg).to(dtype).eval()


def random_batch(B=3, N=6, n_items=10, seed=0, min_real=1):
    rng = np.random.default_rng(seed)
    items = np.zeros((B, N), np.int64)
    times = np.zeros((B, N), np.int64)
    for b in range(B):
        k = int(rng.integers(min_real, N + 1))
        items[b, N - k:] = rng.integers(1, n_items + 1, size=k)
        times[b, N - k:] = 1_600_000_000 + np.cumsum(rng.integers(0, 90000, size=k))
    return items, times, items != 0


@pytest.fixture
def corpus():
    return tiny_corpus()


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for n in sorted(results):
            terminalreporter.write_line(results[n])
