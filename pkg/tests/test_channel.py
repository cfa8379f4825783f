import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from polarlattice.channel import (
    DiscreteBms,
    QuantizerConfig,
    binary_erasure,
    binary_symmetric,
    build_equivalent_channel,
    build_partition_channel,
    channel_bhattacharyya,
    channel_mi,
    degrading_merge,
    from_symbols,
    posterior_edges,
    quantization_gap,
    upgrading_merge,
)
from polarlattice.lattice import PartitionChain, partition_channel_capacity

CHAIN = PartitionChain(2.5, 3)
Q64, Q256, Q1024 = QuantizerConfig(64), QuantizerConfig(256), QuantizerConfig(1024)


def h2(p):
    return 0.0 if p in (0.0, 1.0) else -p * math.log2(p) - (1 - p) * math.log2(1 - p)


def naive_mi(c):
    """Mutual information straight from the full output alphabet."""
    q0, q1 = c.symbols()
    total = 0.0
    for x, y in zip(q0, q1):
        m = 0.5 * (x + y)
        for v in (x, y):
            if v > 0:
                total += 0.5 * v * math.log2(v / m)
    return total


def random_channel(rng, pairs):
    a = rng.random(pairs) ** 3
    b = a * rng.random(pairs)
    s = a.sum() + b.sum()
    return DiscreteBms(a / s, b / s)


pair_lists = st.lists(st.tuples(st.floats(0, 1), st.floats(0, 1)), min_size=1, max_size=40).filter(
    lambda xs: sum(x + y for x, y in xs) > 1e-3)


def channel_from(xs):
    a = np.array([max(x, y) for x, y in xs])
    b = np.array([min(x, y) for x, y in xs])
    s = a.sum() + b.sum()
    return DiscreteBms(a / s, b / s)


class TestRepresentation:
    def test_quantizer_validation(self):
        for bad in (2, 6, 9, 255, 64.5):
            with pytest.raises(ValueError):
                QuantizerConfig(bad)
        assert QuantizerConfig().bins == 256

    def test_rejects_invalid(self):
        with pytest.raises(ValueError):
            DiscreteBms([0.3], [0.3])
        with pytest.raises(ValueError):
            DiscreteBms([0.2, 0.3], [0.3, 0.2])
        with pytest.raises(ValueError):
            DiscreteBms([0.6, -0.1], [0.5, 0.0])
        with pytest.raises(ValueError):
            DiscreteBms([], [])

    def test_self_symmetric_counted_once(self):
        c = binary_erasure(0.4)
        assert c.n_symbols == 3
        q0, q1 = c.symbols()
        assert q0.sum() == pytest.approx(1.0, abs=1e-12)
        assert q1.sum() == pytest.approx(1.0, abs=1e-12)
        assert channel_bhattacharyya(c) == pytest.approx(0.4, abs=1e-15)

    def test_symmetry_of_alphabet(self):
        c = random_channel(np.random.default_rng(3), 20)
        q0, q1 = c.symbols()
        assert sorted(zip(q0, q1)) == sorted(zip(q1, q0))

    def test_from_symbols_checks_mass(self):
        with pytest.raises(ValueError):
            from_symbols([0.5, 0.4], [0.4, 0.5])

    def test_json_roundtrip(self):
        c = random_channel(np.random.default_rng(1), 17)
        d = DiscreteBms.from_json(c.to_json())
        assert channel_mi(d) == pytest.approx(channel_mi(c), abs=1e-15)
        assert sorted(d.a) == pytest.approx(sorted(c.a), abs=1e-16)

    def test_csv_roundtrip(self):
        c = binary_erasure(0.25)
        text = c.to_csv()
        assert text.splitlines()[0] == "q0,q1"
        d = DiscreteBms.from_csv(text)
        assert channel_bhattacharyya(d) == pytest.approx(0.25, abs=1e-15)
        with pytest.raises(ValueError):
            DiscreteBms.from_csv("x,y\n1,0\n")


class TestFiguresOfMerit:
    def test_perfect(self):
        c = DiscreteBms([1.0], [0.0])
        assert channel_mi(c) == 1.0
        assert channel_bhattacharyya(c) == 0.0

    def test_useless(self):
        c = DiscreteBms([0.5], [0.5])
        assert channel_mi(c) == pytest.approx(0.0, abs=1e-15)
        assert channel_bhattacharyya(c) == pytest.approx(1.0, abs=1e-15)

    def test_bsc_closed_form(self):
        c = binary_symmetric(0.11)
        assert channel_mi(c) == pytest.approx(1 - h2(0.11), abs=1e-14)
        assert channel_bhattacharyya(c) == pytest.approx(2 * math.sqrt(0.11 * 0.89), abs=1e-14)
        assert channel_mi(c) == pytest.approx(0.5, abs=1e-3)
        assert channel_bhattacharyya(c) == pytest.approx(0.6258, abs=1e-4)

    @pytest.mark.parametrize("eps", [0.0, 0.1, 0.5, 1.0])
    def test_bec_closed_form(self, eps):
        c = binary_erasure(eps)
        assert channel_mi(c) == pytest.approx(1 - eps, abs=1e-14)
        assert channel_bhattacharyya(c) == pytest.approx(eps, abs=1e-14)

    @given(pair_lists)
    def test_bms_bounds_and_naive_mi(self, xs):
        c = channel_from(xs)
        i, z = channel_mi(c), channel_bhattacharyya(c)
        assert 0 <= i <= 1 and 0 <= z <= 1
        assert i + z >= 1 - 1e-9
        assert i * i + z * z <= 1 + 1e-9
        assert i == pytest.approx(naive_mi(c), abs=1e-12)

    def test_mi_near_useless_is_accurate(self):
        eps = 1e-9
        c = DiscreteBms([0.25 + eps, 0.25], [0.25 - eps, 0.25])
        # 1 - h2(1/2 - t) ~ 2 t^2 / ln 2 for the first pair of mass 1/2
        expected = 0.5 * 2 * (2 * eps) ** 2 / math.log(2)
        assert channel_mi(c) == pytest.approx(expected, rel=1e-6)


class TestMerging:
    def test_edges(self):
        for n in (3, 4, 32, 128, 512):
            e = posterior_edges(n)
            assert e[0] == 0 and e[-1] == 0.5 and e.size == n + 1
            assert np.all(np.diff(e) > 0)
        assert quantization_gap(Q1024) < quantization_gap(Q256) < quantization_gap(Q64)

    def test_noop_when_small(self):
        c = random_channel(np.random.default_rng(0), 10)
        assert degrading_merge(c, Q64) is c
        assert upgrading_merge(c, Q64) is c

    def test_identical_ratio_merge_is_lossless(self):
        # the first two pairs share likelihood ratio 4 and merge into one
        split = DiscreteBms([0.2, 0.1, 0.425], [0.05, 0.025, 0.2])
        merged = DiscreteBms([0.3, 0.425], [0.075, 0.2])
        assert channel_mi(merged) == pytest.approx(channel_mi(split), abs=1e-12)
        assert channel_bhattacharyya(merged) == pytest.approx(
            channel_bhattacharyya(split), abs=1e-12)

    def test_degrading_merge_of_equal_ratios(self):
        rng = np.random.default_rng(5)
        base = random_channel(rng, 8)
        # split every pair into two copies with the same likelihood ratio
        w = rng.random(8)
        a = np.concatenate([base.a * w, base.a * (1 - w)])
        b = np.concatenate([base.b * w, base.b * (1 - w)])
        c = DiscreteBms(a, b)
        out = degrading_merge(c, QuantizerConfig(8))
        assert out.n_symbols <= 8
        assert channel_mi(out) <= channel_mi(c) + 1e-12

    def test_random_4096_to_256(self):
        c = random_channel(np.random.default_rng(2024), 2048)
        assert c.n_symbols == 4096
        down = degrading_merge(c, Q256)
        up = upgrading_merge(c, Q256)
        assert down.n_symbols <= 256 and up.n_symbols <= 256
        i = channel_mi(c)
        assert 0 <= i - channel_mi(down) <= 1e-3
        assert 0 <= channel_mi(up) - i <= 1e-3
        assert channel_bhattacharyya(down) >= channel_bhattacharyya(c) - 1e-12
        assert channel_bhattacharyya(up) <= channel_bhattacharyya(c) + 1e-12

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.sampled_from([8, 16, 64]))
    def test_merge_directions(self, seed, bins):
        q = QuantizerConfig(bins)
        c = random_channel(np.random.default_rng(seed), 100)
        i, z = channel_mi(c), channel_bhattacharyya(c)
        down, up = degrading_merge(c, q), upgrading_merge(c, q)
        assert down.n_symbols <= bins and up.n_symbols <= bins
        assert channel_mi(down) <= i + 1e-12 and channel_bhattacharyya(down) >= z - 1e-12
        assert channel_mi(up) >= i - 1e-12 and channel_bhattacharyya(up) <= z + 1e-12
        gap = quantization_gap(q)
        assert i - channel_mi(down) <= gap + 1e-12
        assert channel_mi(up) - i <= gap + 1e-12

    def test_rejects_bad_quantizer(self):
        with pytest.raises(ValueError):
            degrading_merge(binary_erasure(0.5), 4)


class TestPartitionChannel:
    def test_noiseless(self):
        assert channel_mi(build_partition_channel(CHAIN, 1, 0.01, Q64)) == pytest.approx(1.0, abs=1e-3)

    def test_useless(self):
        assert channel_mi(build_partition_channel(CHAIN, 1, 100.0, Q64)) == pytest.approx(0.0, abs=1e-3)

    def test_converges_to_capacity(self):
        cap = partition_channel_capacity(CHAIN, 1, 1.0)
        mis = [channel_mi(build_partition_channel(CHAIN, 1, 1.0, q)) for q in (Q64, Q256, Q1024)]
        assert mis[0] < mis[1] < mis[2] <= cap + 1e-9
        assert abs(mis[2] - cap) < 1e-3
        for q, mi in zip((Q64, Q256, Q1024), mis):
            assert cap - mi <= quantization_gap(q)

    def test_upgraded_brackets_capacity(self):
        cap = partition_channel_capacity(CHAIN, 1, 1.0)
        up = channel_mi(build_partition_channel(CHAIN, 1, 1.0, Q256, upgrade=True))
        assert cap - 1e-9 <= up <= cap + quantization_gap(Q256)

    def test_monotone_in_mu(self):
        qs = [QuantizerConfig(m) for m in (16, 64, 256, 1024)]
        cs = [build_partition_channel(CHAIN, 2, 1.5, q) for q in qs]
        mis = [channel_mi(c) for c in cs]
        zs = [channel_bhattacharyya(c) for c in cs]
        assert all(x <= y + 1e-12 for x, y in zip(mis, mis[1:]))
        assert all(x >= y - 1e-12 for x, y in zip(zs, zs[1:]))

    @pytest.mark.parametrize("level", [1, 2])
    @pytest.mark.parametrize("sigmas", [(0.5, 1.0), (1.0, 2.0), (2.0, 3.0)])
    def test_degraded_across_noise(self, level, sigmas):
        v = build_partition_channel(CHAIN, level, sigmas[0], Q256)
        w = build_partition_channel(CHAIN, level, sigmas[1], Q256)
        assert channel_mi(w) <= channel_mi(v)
        assert channel_bhattacharyya(w) >= channel_bhattacharyya(v)

    @pytest.mark.parametrize("sigma", [0.5, 1.0, 2.0, 4.0])
    def test_level_ordering(self, sigma):
        chain = PartitionChain(2.5, 4)
        mis = [channel_mi(build_partition_channel(chain, l, sigma, Q256)) for l in (1, 2, 3)]
        assert mis[0] <= mis[1] <= mis[2]

    def test_symmetric_and_bms(self):
        c = build_partition_channel(CHAIN, 1, 1.0, Q256)
        i, z = channel_mi(c), channel_bhattacharyya(c)
        assert i + z >= 1 - 1e-9 and i * i + z * z <= 1 + 1e-9
        q0, q1 = c.symbols()
        assert q0.sum() == pytest.approx(1, abs=1e-12) and q1.sum() == pytest.approx(1, abs=1e-12)

    @pytest.mark.parametrize("level,sigma", [(0, 1.0), (3, 1.0), (1, 0.0), (1, -2.0)])
    def test_invalid(self, level, sigma):
        with pytest.raises(ValueError):
            build_partition_channel(CHAIN, level, sigma, Q64)


class TestEquivalentChannel:
    def test_top_level_identical(self):
        for sigma in (0.7, 2.0):
            w = build_partition_channel(CHAIN, 2, sigma, Q256)
            e = build_equivalent_channel(CHAIN, 2, sigma, Q256)
            assert len(w) == len(e)
            assert np.allclose(w.a, e.a, rtol=0, atol=1e-15)
            assert np.allclose(w.b, e.b, rtol=0, atol=1e-15)

    def test_first_level_equal_mi(self):
        w = channel_mi(build_partition_channel(CHAIN, 1, 1.0, Q1024))
        e = channel_mi(build_equivalent_channel(CHAIN, 1, 1.0, Q1024))
        assert abs(w - e) < 2e-3

    def test_useless(self):
        assert channel_mi(build_equivalent_channel(CHAIN, 1, 100.0, Q64)) == pytest.approx(0, abs=1e-3)

    @pytest.mark.parametrize("level", [1, 2, 3])
    @pytest.mark.parametrize("sigma", [0.5, 1.0, 2.0])
    def test_lemma_channel_level(self, level, sigma):
        chain = PartitionChain(2.0, 4)
        gap = quantization_gap(Q256)
        w = channel_mi(build_partition_channel(chain, level, sigma, Q256))
        e = channel_mi(build_equivalent_channel(chain, level, sigma, Q256))
        assert abs(w - e) <= 2 * gap

    def test_invalid(self):
        with pytest.raises(ValueError):
            build_equivalent_channel(CHAIN, 3, 1.0, Q64)
