"""Self-checks of the numerical invariants, sized to run in about a minute.

Each check returns a :class:`Check` with a pass flag and a short detail
string; :func:`run_all` runs the whole suite for one configuration.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.integrate import quad

from .channel import (
    QuantizerConfig,
    build_equivalent_channel,
    build_partition_channel,
    channel_bhattacharyya,
    channel_mi,
    quantization_gap,
)
from .codec import (
    audit_chaining,
    batch_modulate,
    encode,
    frame_rng,
    multistage_decode,
    polar_transform,
    sc_decode_level,
)
from .construction import (
    IndexPartition,
    SecrecyCodeSpec,
    check_nesting,
    leakage_bound,
    polarize,
)
from .lattice import (
    NoiseModel,
    PartitionChain,
    aliased_gaussian_pdf,
    mod_channel_capacity,
    partition_channel_capacity,
    reduce_mod,
)
from .sim import exact_leakage_small, spec_from_partitions


@dataclass
class Check:
    name: str
    ok: bool
    detail: str


def check_normalization(alphas=(0.5, 2.5), sigmas=(0.3, 1.0, 4.0), levels=3) -> Check:
    worst = 0.0
    for alpha, sigma in itertools.product(alphas, sigmas):
        chain = PartitionChain(alpha, levels)
        for level in range(1, levels + 1):
            v = chain.cell_volume(level)
            total, _ = quad(lambda n: aliased_gaussian_pdf(n, sigma, chain, level), -v / 2, v / 2,
                            epsabs=1e-13, epsrel=1e-13, limit=200, points=[0.0])
            worst = max(worst, abs(total - 1.0))
    return Check("density-normalization", worst < 1e-9, f"max |integral - 1| = {worst:.3g}")


def check_telescoping(alphas=(0.5, 1.0, 2.5, 4.0), sigmas=(0.25, 0.5, 1.0, 2.0, 4.0),
                      levels=3) -> Check:
    worst = 0.0
    for alpha, sigma in itertools.product(alphas, sigmas):
        chain = PartitionChain(alpha, levels)
        total = sum(partition_channel_capacity(chain, l, sigma) for l in range(1, levels))
        ends = mod_channel_capacity(chain, levels, sigma) - mod_channel_capacity(chain, 1, sigma)
        worst = max(worst, abs(total - ends))
    n = len(alphas) * len(sigmas)
    return Check("capacity-telescoping", worst < 1e-8, f"{n} points, max error {worst:.3g}")


def check_degradation(chain: PartitionChain, noise: NoiseModel,
                      q: QuantizerConfig = QuantizerConfig(256)) -> Check:
    problems = []
    chans = {}
    for level in range(1, chain.levels):
        for sigma in (noise.sigma_b, noise.sigma_e):
            c = build_partition_channel(chain, level, sigma, q)
            chans[level, sigma] = (channel_mi(c), channel_bhattacharyya(c))
        (iv, zv), (iw, zw) = chans[level, noise.sigma_b], chans[level, noise.sigma_e]
        if iw > iv or zw < zv:
            problems.append(f"level {level}: eavesdropper channel not degraded")
    for level in range(1, chain.levels - 1):
        for sigma in (noise.sigma_b, noise.sigma_e):
            if chans[level, sigma][0] > chans[level + 1, sigma][0]:
                problems.append(f"sigma {sigma}: level {level} beats level {level + 1}")
    return Check("degradation-orderings", not problems, "; ".join(problems) or "ordered")


def check_bms_bounds(chain: PartitionChain, noise: NoiseModel, n_exp: int = 6,
                     q: QuantizerConfig = QuantizerConfig(256)) -> Check:
    worst = 0.0
    for level in range(1, chain.levels):
        for sigma in (noise.sigma_b, noise.sigma_e):
            s = polarize(build_partition_channel(chain, level, sigma, q), n_exp, q)
            worst = max(worst, float(np.max(1 - s.mi - s.bhatt)),
                        float(np.max(s.mi ** 2 + s.bhatt ** 2 - 1)))
    return Check("bms-bounds", worst <= 1e-9, f"max violation {max(worst, 0.0):.3g}")


def equivalence_deviation(chain: PartitionChain, sigma: float, n_exp: int,
                    q: QuantizerConfig, levels=None) -> tuple[float, float, float]:
    """Largest elementwise |dI| and |dZ| between bit-channels of the
    partition and equivalent channels, and the tolerance ``2 n delta(mu)``."""
    levels = levels or sorted({1, chain.levels - 1})
    d_mi = d_z = 0.0
    for level in levels:
        w = polarize(build_partition_channel(chain, level, sigma, q), n_exp, q)
        e = polarize(build_equivalent_channel(chain, level, sigma, q), n_exp, q)
        d_mi = max(d_mi, float(np.max(np.abs(w.mi - e.mi))))
        d_z = max(d_z, float(np.max(np.abs(w.bhatt - e.bhatt))))
    return d_mi, d_z, 2 * n_exp * quantization_gap(q)


def check_equivalence(chain: PartitionChain, noise: NoiseModel, n_exp: int = 4,
                      q: QuantizerConfig = QuantizerConfig(1024)) -> Check:
    worst_i = worst_z = tol = 0.0
    for sigma in (noise.sigma_b, noise.sigma_e):
        d_mi, d_z, tol = equivalence_deviation(chain, sigma, n_exp, q)
        worst_i, worst_z = max(worst_i, d_mi), max(worst_z, d_z)
    ok = max(worst_i, worst_z) <= tol
    return Check("equivalent-channel", ok,
                 f"max |dI| = {worst_i:.3g}, max |dZ| = {worst_z:.3g}, tolerance {tol:.3g}")


def check_nesting_spec(spec: SecrecyCodeSpec) -> Check:
    try:
        check_nesting(spec.partitions)
    except Exception as exc:  # noqa: BLE001 - reported, not raised
        return Check("nesting", False, str(exc))
    issues = audit_chaining(spec)
    return Check("nesting", not issues, "; ".join(issues) or "C_i contains C_(i+1)")


def check_roundtrip(spec: SecrecyCodeSpec, frames: int = 20, seed: int = 0) -> Check:
    rng = np.random.default_rng(seed)
    off_grid = wrong = 0
    for t in range(frames):
        msg = rng.integers(0, 2, spec.message_bits_per_block)
        frame = encode(msg, frame_rng(seed, t), spec)
        off_grid += not frame.on_grid(spec.chain)
        d = frame_rng(seed, t)
        known = [d.integers(0, 2, lv.partition.d.size, dtype=np.uint8) for lv in spec.levels]
        got, _ = multistage_decode(frame.symbols, spec, known_d=known)
        wrong += not np.array_equal(got, msg)
    return Check("grid-and-roundtrip", off_grid == 0 and wrong == 0,
                 f"{frames} frames: {off_grid} off grid, {wrong} decoded wrong")


def check_sc_map(alpha: float = 5.0, sigma: float = 1.0, draws: int = 50, seed: int = 11) -> Check:
    chain = PartitionChain(alpha, 2)
    n = 4
    order = np.argsort(polarize(build_partition_channel(chain, 1, sigma), 2).bhatt, kind="stable")
    rng = np.random.default_rng(seed)
    checked = disagree = 0
    for trial in range(draws):
        k = int(rng.integers(1, 5))
        free = np.sort(order[:k])
        part = IndexPartition(n=n, beta=0.3, a=free, b=[], c=np.sort(order[k:]), d=[])
        spec = spec_from_partitions(chain, NoiseModel(sigma, 2 * sigma), 2, [part],
                                    q=QuantizerConfig(16))
        x = encode(rng.integers(0, 2, k), frame_rng(seed, trial), spec).symbols
        z = reduce_mod(x + sigma * rng.standard_normal(n), chain.cell_volume(2))
        words = list(itertools.product((0, 1), repeat=k))
        post = []
        for m in words:
            u = np.zeros(n, dtype=np.uint8)
            u[free] = m
            sym = batch_modulate([polar_transform(u)], chain)
            post.append(np.prod(aliased_gaussian_pdf(z - sym, sigma, chain, 2)))
        post = np.array(post) / np.sum(post)
        if post.max() > 0.9:
            checked += 1
            disagree += not np.array_equal(sc_decode_level(z, 1, spec)[free],
                                           words[int(np.argmax(post))])
    return Check("sc-vs-map", disagree == 0,
                 f"{checked} confident draws of {draws}, {disagree} disagreements")


def random_small_partition(rng: np.random.Generator, n: int) -> IndexPartition:
    roles = rng.integers(0, 4, n)
    if not (roles == 0).any():
        roles[rng.integers(n)] = 0
    roles[np.flatnonzero(roles == 3)[int((roles == 0).sum()):]] = 1   # keep |d| <= |a|
    sets = [np.flatnonzero(roles == k) for k in range(4)]
    return IndexPartition(n=n, beta=0.3, a=sets[0], b=sets[1], c=sets[2], d=sets[3])


def leakage_instances(count: int, seed: int = 0):
    """Random feasible single-level instances: yields (spec, exact, bound)."""
    rng = np.random.default_rng(seed)
    for _ in range(count):
        n_exp = int(rng.integers(1, 3))
        noise = NoiseModel(1.0, float(rng.uniform(1.2, 4.0)))
        chain = PartitionChain(float(rng.uniform(1.0, 4.0)), 2)
        spec = spec_from_partitions(chain, noise, n_exp,
                                    [random_small_partition(rng, 1 << n_exp)],
                                    q=QuantizerConfig(64))
        yield spec, exact_leakage_small(spec), leakage_bound(spec)


def check_exact_leakage(count: int = 10, seed: int = 0) -> Check:
    worst = -np.inf
    for _, exact, bound in leakage_instances(count, seed):
        worst = max(worst, exact - bound)
    return Check("exact-leakage-below-bound", worst <= 1e-9,
                 f"{count} instances, max(exact - bound) = {worst:.3g}")


def run_all(spec: SecrecyCodeSpec, seed: int = 0) -> list[Check]:
    chain, noise = spec.chain, spec.noise
    suite: list[Callable[[], Check]] = [
        check_normalization,
        check_telescoping,
        lambda: check_degradation(chain, noise),
        lambda: check_bms_bounds(chain, noise),
        lambda: check_equivalence(chain, noise),
        lambda: check_nesting_spec(spec),
        lambda: check_roundtrip(spec, seed=seed),
        check_sc_map,
        lambda: check_exact_leakage(seed=seed),
    ]
    return [f() for f in suite]
