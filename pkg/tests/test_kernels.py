import itertools
import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

from adrrec.errors import BoundsError, ConfigError
from adrrec.kernels import (
    ALPHABET,
    AbsoluteTimeEmbedding,
    BochnerTimeEmbedding,
    GaussianDistanceWeights,
    PositionalEmbedding,
    bochner_features,
    calendar_decompose,
    exp_diff,
    frequency_ladder,
    gaussian_weights,
    log1p_diff,
    parse_mode,
    sinusoid_diff,
    sinusoid_table,
    split_width,
    time_diff_matrix,
)


# ---------------------------------------------------------------- modes

def test_parse_mode_examples():
    m = parse_mode("p-b-s-l-r-o")
    assert m.absolute_kernels == ("p", "b") and m.relative_kernels == ("s", "l", "r")
    assert m.noise_enabled and m.n_heads == 5
    m = parse_mode("p-s-l-e")
    assert m.absolute_kernels == ("p",) and set(m.relative_kernels) == {"s", "l", "e"}
    assert not m.noise_enabled and m.n_heads == 4
    m = parse_mode("p")
    assert (m.relative_kernels, m.noise_enabled, m.n_heads) == ((), False, 1)


@pytest.mark.parametrize("bad", ["x-y", "p-p", "o", "", "p-q"])
def test_parse_mode_rejects(bad):
    with pytest.raises(ConfigError):
        parse_mode(bad)


KERNELS = "pbtselr"
ORDER = "pbtselro"
legal_letters = st.sets(st.sampled_from(KERNELS), min_size=1).flatmap(
    lambda s: st.booleans().map(lambda o: s | {"o"} if o else s))


@given(legal_letters, st.randoms())
def test_parse_mode_bijection(letters, rnd):
    canonical = "-".join(sorted(letters, key=ORDER.index))
    shuffled = list(letters)
    rnd.shuffle(shuffled)
    m = parse_mode("-".join(shuffled))
    assert str(m) == canonical
    assert parse_mode(str(m)) == m


def test_parse_mode_injective_over_all_legal_strings():
    seen = {}
    for r in range(1, len(KERNELS) + 1):
        for combo in itertools.combinations(KERNELS, r):
            for noise in (False, True):
                s = "-".join(combo + (("o",) if noise else ()))
                m = parse_mode(s)
                assert m not in seen.values()
                seen[s] = m
    assert len(seen) == 2 * (2 ** len(KERNELS) - 1)
    assert set(ALPHABET) == set(ORDER)


# ---------------------------------------------------------------- absolute

def test_fixed_positional_rows():
    t = sinusoid_table(3, 6, dtype=torch.float64)
    assert torch.equal(t[0], torch.tensor([0.0, 1.0] * 3, dtype=torch.float64))
    t2 = sinusoid_table(2, 2, dtype=torch.float64)
    assert t2[1].tolist() == pytest.approx([math.sin(1), math.cos(1)], abs=1e-12)
    assert t2[1].tolist() == pytest.approx([0.8415, 0.5403], abs=1e-4)


def test_learnable_positional_lookup_and_bounds():
    pe = PositionalEmbedding(4, 6)
    idx = torch.tensor([2, 2])
    out = pe(idx)
    assert torch.equal(out[0], out[1])
    with pytest.raises(BoundsError):
        pe(torch.tensor([4]))


def test_calendar_decompose_known_date():
    # 2021-03-17 13:45:00 UTC, a Wednesday
    ts = 1615988700
    y, m, wd, h = calendar_decompose([ts], ("year", "month", "weekday", "hour"))[0]
    assert (y, m, wd, h) == (2021, 3, 2, 13)


def test_split_width_remainder_first():
    assert split_width(10, 4) == [4, 2, 2, 2]
    assert sum(split_width(7, 3)) == 7


def test_absolute_time_zero_scale_gives_bias():
    emb = AbsoluteTimeEmbedding(8).double()
    with torch.no_grad():
        emb.scale.zero_()
        for b in emb.bias:
            b.uniform_(-1, 1)
    out = emb([1_000_000_000, 1_600_000_000])
    expected = torch.cat(list(emb.bias))
    assert torch.equal(out[0], expected) and torch.equal(out[1], expected)


def test_absolute_time_same_month_weekday_identical():
    emb = AbsoluteTimeEmbedding(4, units=("month", "weekday"))
    # 2021-03-03 and 2021-03-10 are both Wednesdays, different hours
    a, b = 1614729600 + 3600, 1615334400 + 7 * 3600
    out = emb([a, b])
    assert torch.equal(out[0], out[1])


def test_absolute_time_month_one_hot():
    emb = AbsoluteTimeEmbedding(13, units=("month",)).double()
    with torch.no_grad():
        emb.tables[0].copy_(torch.eye(13, dtype=torch.float64))
    march = 1615988700
    out = emb([march])[0]
    assert out.argmax().item() == 3 and out.sum().item() == 1.0


def test_absolute_time_bounds():
    emb = AbsoluteTimeEmbedding(8, year_range=(2000, 2010))
    with pytest.raises(BoundsError):
        emb([0])  # 1970
    # pad positions may hold anything
    emb([0, 1_100_000_000], valid=[False, True])


def test_bochner_zero_argument_and_quarter_turn():
    emb = BochnerTimeEmbedding(4, t_min=100, time_scale=1.0).double()
    out = emb([100])[0]
    assert out[0::2].tolist() == [1.0, 1.0] and out[1::2].tolist() == [0.0, 0.0]
    f = bochner_features(torch.tensor([1.0], dtype=torch.float64), torch.tensor([math.pi / 2], dtype=torch.float64),
                         torch.zeros(1, dtype=torch.float64))[0]
    assert f[0].item() == pytest.approx(0.0, abs=1e-15) and f[1].item() == 1.0


@settings(max_examples=50, deadline=None)
@given(st.lists(st.integers(0, 10**8), min_size=3, max_size=3), st.integers(-10**6, 10**6),
       st.integers(0, 2**31))
def test_bochner_translation_invariance(ts, shift, seed):
    gen = torch.Generator().manual_seed(seed)
    freq = torch.rand(8, generator=gen, dtype=torch.float64) * 1e-3
    zero = torch.zeros(8, dtype=torch.float64)
    t = torch.tensor(ts, dtype=torch.float64)
    u = t + float(shift)
    phi, psi = bochner_features(t, freq, zero), bochner_features(u, freq, zero)
    gram_t, gram_u = phi @ phi.T, psi @ psi.T
    assert (gram_t - gram_u).abs().max().item() < 1e-6
    closed = torch.cos(freq * (t[0] - t[1])).sum()
    assert abs(gram_t[0, 1].item() - closed.item()) < 1e-6


# ---------------------------------------------------------------- relative

def test_time_diff_example():
    D = time_diff_matrix([0, 60, 180], 60)
    assert D.tolist() == [[0, -1, -3], [1, 0, -2], [3, 2, 0]]
    assert torch.count_nonzero(time_diff_matrix([7, 7, 7], 3.0)) == 0
    with pytest.raises(ConfigError):
        time_diff_matrix([1], 0)


@given(st.lists(st.integers(0, 2**40), min_size=1, max_size=12), st.floats(1e-3, 1e6))
def test_time_diff_antisymmetric(ts, tau):
    D = time_diff_matrix(ts, tau)
    assert torch.equal(D, -D.T)
    assert torch.count_nonzero(torch.diagonal(D)) == 0


def test_sinusoid_examples():
    one = torch.ones(1, dtype=torch.float64)
    zero = torch.zeros(1, dtype=torch.float64)
    assert sinusoid_diff(zero, one, zero).tolist() == [[1.0, 0.0]]
    c, s = sinusoid_diff(one, torch.tensor([math.pi], dtype=torch.float64), zero)[0].tolist()
    assert c == -1.0 and abs(s) < 1e-15


def test_exp_and_log_examples():
    one = torch.ones(1, dtype=torch.float64)
    assert exp_diff(torch.zeros(3, 3, dtype=torch.float64), frequency_ladder(4)).unique().tolist() == [1.0]
    assert exp_diff(one, one).item() == pytest.approx(math.exp(-1), abs=1e-12)
    assert exp_diff(-one, one).item() == pytest.approx(0.3679, abs=1e-4)
    assert log1p_diff(torch.zeros(2, dtype=torch.float64), frequency_ladder(4)).unique().tolist() == [0.0]
    assert log1p_diff(torch.tensor([math.e - 1], dtype=torch.float64), one).item() == pytest.approx(1.0, abs=1e-12)


def test_frequency_ladder():
    f = frequency_ladder(4, 10000.0)
    assert f.tolist() == pytest.approx([1.0, 100.0, 1e4, 1e6])


finite_d = st.floats(-1e12, 1e12, allow_nan=False)


@settings(max_examples=100)
@given(st.lists(finite_d, min_size=1, max_size=10), st.integers(1, 8))
def test_kernel_ranges_and_finiteness(ds, half):
    D = torch.tensor(ds, dtype=torch.float64)
    freq = frequency_ladder(2 * half)
    gen = torch.Generator().manual_seed(len(ds))
    w = torch.randn(half, generator=gen, dtype=torch.float64)
    b = torch.randn(half, generator=gen, dtype=torch.float64)
    s = sinusoid_diff(D, w, b)
    e = exp_diff(D, freq)
    lg = log1p_diff(D, freq)
    for out in (s, e, lg):
        assert torch.isfinite(out).all()
    assert (s.abs() <= 1).all()
    assert ((e >= 0) & (e <= 1)).all()
    assert (lg >= 0).all()


@settings(max_examples=100)
@given(st.floats(0, 50), st.floats(1e-3, 50))
def test_exp_decreasing_log_increasing(a, gap):
    freq = frequency_ladder(6, 10.0)
    lo = torch.tensor([a], dtype=torch.float64)
    hi = torch.tensor([a + gap], dtype=torch.float64)
    assert (exp_diff(hi, freq) < exp_diff(lo, freq)).all()
    assert (exp_diff(-hi, freq) < exp_diff(-lo, freq)).all()
    assert (log1p_diff(hi, freq) > log1p_diff(lo, freq)).all()


def test_log_concave():
    d = torch.linspace(0, 100, 101, dtype=torch.float64)
    v = log1p_diff(d, torch.ones(1, dtype=torch.float64))[:, 0]
    assert (v[2:] - 2 * v[1:-1] + v[:-2] < 0).all()


def test_gaussian_examples():
    G = gaussian_weights(5, 0.0, 1.0, dtype=torch.float64)
    assert torch.diagonal(G).unique().tolist() == [1.0]
    assert G[1, 0].item() == pytest.approx(math.exp(-0.5)) == pytest.approx(0.6065, abs=1e-4)
    assert torch.equal(G, G.T)


@given(st.integers(1, 12), st.floats(-5, 5), st.floats(0.05, 20))
def test_gaussian_range(n, mu, sigma):
    G = gaussian_weights(n, mu, sigma, dtype=torch.float64)
    assert ((G >= 0) & (G <= 1)).all() and torch.isfinite(G).all()


def test_gaussian_module_sigma_positive():
    g = GaussianDistanceWeights()
    assert g.sigma.item() == pytest.approx(1.0)
    with torch.no_grad():
        g.raw_sigma.fill_(-30.0)
    assert g.sigma.item() > 0
