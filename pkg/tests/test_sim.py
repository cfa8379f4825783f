import math

import numpy as np
import pytest

from polarlattice.channel import QuantizerConfig, build_partition_channel
from polarlattice.construction import (
    IndexPartition,
    LevelCode,
    SecrecyCodeSpec,
    leakage_bound,
    polarize,
)
from polarlattice.lattice import NoiseModel, PartitionChain
from polarlattice.sim import (
    RATE_COLUMNS,
    InstanceTooLarge,
    exact_leakage_small,
    leakage_envelope,
    leakage_scaling_report,
    rate_row,
    rate_table,
    rate_table_csv,
    rows_csv,
    simulate_bob,
    spec_from_partitions,
    wilson_interval,
)

CHAIN2 = PartitionChain(2.5, 2)
# Seeded reference runs (seed 42), frozen after the first run.
GOLDEN_FER_256 = (2000, 59)


def all_frozen(spec):
    n = spec.n
    p = IndexPartition(n=n, beta=spec.beta, a=[], b=[], c=range(n), d=[])
    lv = LevelCode(p, np.ones(n), np.zeros(n), p.a, p.a)
    return SecrecyCodeSpec(chain=spec.chain, noise=spec.noise, n_exp=spec.n_exp, beta=spec.beta,
                           mu=spec.mu, blocks=spec.blocks, levels=(lv,) * len(spec.levels))


def random_partition(rng, n):
    roles = rng.integers(0, 4, n)
    a = np.flatnonzero(roles == 0)
    if a.size == 0:
        roles[rng.integers(n)] = 0
        a = np.flatnonzero(roles == 0)
    roles[np.flatnonzero(roles == 3)[a.size:]] = 1
    sets = [np.flatnonzero(roles == k) for k in range(4)]
    return IndexPartition(n=n, beta=0.3, a=sets[0], b=sets[1], c=sets[2], d=sets[3])


class TestWilson:
    @pytest.mark.parametrize("k,n", [(0, 10), (3, 100), (50, 100), (100, 100)])
    def test_closed_form(self, k, n):
        z = 1.959963984540054
        p = k / n
        centre = (p + z * z / (2 * n)) / (1 + z * z / n)
        half = z / (1 + z * z / n) * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n))
        lo, hi = wilson_interval(k, n)
        assert lo == pytest.approx(max(0.0, centre - half), abs=1e-12)
        assert hi == pytest.approx(min(1.0, centre + half), abs=1e-12)


class TestSimulateBob:
    def test_noiseless(self, reference_spec):
        res = simulate_bob(reference_spec(8), 200, seed=1, sigma=1e-3)
        assert res.errors == 0 and res.fer == 0.0 and res.level_errors == [0, 0]

    def test_all_frozen(self, reference_spec):
        res = simulate_bob(all_frozen(reference_spec(8)), 100, seed=1)
        assert res.errors == 0

    def test_golden_and_reproducible(self, reference_spec):
        trials, errors = GOLDEN_FER_256
        spec = reference_spec(8)
        a = simulate_bob(spec, trials, seed=42)
        b = simulate_bob(spec, trials, seed=42, batch=37)
        assert a.errors == errors and a.trials == trials
        assert a == b
        assert a.ci_low <= a.fer <= a.ci_high
        assert a.chains == trials // spec.blocks

    def test_seed_changes_outcome(self, reference_spec):
        spec = reference_spec(8)
        runs = {simulate_bob(spec, 500, seed=s).errors for s in range(4)}
        assert len(runs) > 1

    def test_partial_chain(self, reference_spec):
        res = simulate_bob(reference_spec(8), 13, seed=3)
        assert res.trials == 13 and res.chains == 2

    def test_modes_agree_without_d(self, reference_spec):
        spec = reference_spec(8)
        g = simulate_bob(spec, 300, seed=2, mode="genie")
        u = simulate_bob(spec, 300, seed=2, mode="unchained")
        assert g.errors == u.errors

    def test_invalid(self, reference_spec):
        with pytest.raises(ValueError):
            simulate_bob(reference_spec(8), 0)
        with pytest.raises(ValueError):
            simulate_bob(reference_spec(8), 10, mode="other")


class TestRateTable:
    def test_equal_noise(self):
        row = rate_row(2.5, 3, 1.0, 1.0)
        assert row.rate == pytest.approx(0.0, abs=1e-12) and row.bound == 0.0

    @pytest.mark.parametrize("alpha", [0.05, 0.1])
    def test_small_alpha_eps1(self, alpha):
        assert abs(rate_row(alpha, 3, 1.0, 2.0).eps_1) < 1e-4

    def test_reference_gap(self):
        row = rate_row(2.5, 3, 1.0, 2.0)
        assert row.bound == pytest.approx(1.0)
        assert abs(row.gap - 0.05) <= 0.01
        assert row.gap_nats == pytest.approx(row.gap * math.log(2))

    @pytest.mark.parametrize("grid", [(2.5, 3, 1.0, 2.0), (1.0, 4, 0.5, 0.8), (4.0, 2, 1.0, 3.0)])
    def test_decomposition(self, grid):
        row = rate_row(*grid)
        assert row.gap >= -1e-8 and row.rate <= row.bound + 1e-8
        assert row.rate == pytest.approx(
            row.bound - (row.eps_e - row.eps_b) - row.eps_1, abs=1e-8)

    def test_csv(self):
        text = rate_table_csv(rate_table([(2.5, 3, 1.0, 2.0), (2.5, 3, 1.0, 1.0)]))
        lines = text.splitlines()
        assert lines[0].split(",") == RATE_COLUMNS
        assert len(lines) == 3 and len(lines[1].split(",")) == len(RATE_COLUMNS)

    def test_rejects(self):
        with pytest.raises(ValueError):
            rate_row(2.5, 3, 2.0, 1.0)


class TestExactLeakage:
    def test_empty_message(self):
        p = IndexPartition(n=4, beta=0.3, a=[], b=[0, 1, 3], c=[2], d=[])
        spec = spec_from_partitions(CHAIN2, NoiseModel(1.0, 2.0), 2, [p])
        assert exact_leakage_small(spec) == 0.0

    def test_useless_eavesdropper(self):
        p = IndexPartition(n=4, beta=0.3, a=[3], b=[], c=[0, 1, 2], d=[])
        spec = spec_from_partitions(CHAIN2, NoiseModel(1.0, 100.0), 2, [p])
        assert exact_leakage_small(spec) == pytest.approx(0.0, abs=1e-9)

    @pytest.mark.parametrize("a,b,c,branch", [([1], [], [0], 1), ([0], [1], [], 0)])
    def test_n2_matches_bit_channels(self, a, b, c, branch):
        q = QuantizerConfig(16)
        p = IndexPartition(n=2, beta=0.3, a=a, b=b, c=c, d=[])
        spec = spec_from_partitions(CHAIN2, NoiseModel(1.0, 2.0), 1, [p], q=q)
        eve = build_partition_channel(CHAIN2, 1, 2.0, q)
        # with one frozen or random neighbour the leakage is the plus or minus bit-channel
        expected = polarize(eve, 1, QuantizerConfig(1 << 12)).mi[branch]
        assert exact_leakage_small(spec, q=q) == pytest.approx(expected, abs=1e-12)

    def test_one_message_index(self):
        p = IndexPartition(n=4, beta=0.3, a=[3], b=[1, 2], c=[0], d=[])
        spec = spec_from_partitions(CHAIN2, NoiseModel(1.0, 2.0), 2, [p])
        exact = exact_leakage_small(spec)
        assert 0 < exact <= leakage_bound(spec) + 1e-9

    def test_random_instances(self):
        rng = np.random.default_rng(2024)
        for _ in range(50):
            n_exp = int(rng.integers(1, 3))
            noise = NoiseModel(1.0, float(rng.uniform(1.2, 4.0)))
            chain = PartitionChain(float(rng.uniform(1.0, 4.0)), 2)
            spec = spec_from_partitions(chain, noise, n_exp,
                                        [random_partition(rng, 1 << n_exp)],
                                        q=QuantizerConfig(64))
            assert exact_leakage_small(spec) <= leakage_bound(spec) + 1e-9

    def test_refuses_large(self, reference_spec):
        with pytest.raises(InstanceTooLarge):
            exact_leakage_small(reference_spec(8))
        p = IndexPartition(n=8, beta=0.3, a=[7], b=[], c=range(7), d=[])
        spec = spec_from_partitions(CHAIN2, NoiseModel(1.0, 2.0), 3, [p], q=QuantizerConfig(16))
        with pytest.raises(InstanceTooLarge):
            exact_leakage_small(spec)
        with pytest.raises(InstanceTooLarge):
            exact_leakage_small(spec_from_partitions(
                CHAIN2, NoiseModel(1.0, 2.0), 2,
                [IndexPartition(n=4, beta=0.3, a=[3], b=[], c=[0, 1, 2], d=[])]),
                q=QuantizerConfig(64))


class TestScalingReport:
    def test_envelope(self):
        assert leakage_envelope(3, 256, 0.3) == pytest.approx(3 * 256 * 2 ** -(256 ** 0.3))

    def test_single_row(self, reference_spec):
        spec = reference_spec(8)
        rows = leakage_scaling_report(spec.chain, spec.noise, 0.3, [8], specs=[spec])
        assert len(rows) == 1 and rows[0].n == 256
        assert rows[0].leakage_bound == leakage_bound(spec)
        text = rows_csv(rows)
        assert text.splitlines()[0] == "n,leakage_bound,envelope,secrecy_rate"

    def test_all_frozen_zero(self, reference_spec):
        spec = all_frozen(reference_spec(8))
        rows = leakage_scaling_report(spec.chain, spec.noise, 0.3, [8], specs=[spec])
        assert rows[0].leakage_bound == 0 and rows[0].secrecy_rate == 0

    def test_three_lengths(self, reference_spec):
        specs = [reference_spec(n) for n in (8, 10, 12)]
        rows = leakage_scaling_report(specs[0].chain, specs[0].noise, 0.3, [8, 10, 12],
                                      specs=specs)
        bounds = [r.leakage_bound for r in rows]
        assert bounds[0] > bounds[1] > bounds[2]
        assert all(r.leakage_bound <= r.envelope for r in rows)

    def test_violation_raises(self, reference_spec):
        spec = reference_spec(8)
        with pytest.raises(AssertionError):
            leakage_scaling_report(spec.chain, spec.noise, 0.3, [8], specs=[spec], slack=-100.0)
