"""Experiment harness: reliability runs, leakage accounting and rate tables."""

from __future__ import annotations

import csv
import io
import itertools
import math
from dataclasses import asdict, dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy.stats import binomtest

from .channel import QuantizerConfig, build_partition_channel
from .codec import (
    BIT,
    batch_fill,
    batch_modulate,
    batch_multistage_decode,
    decode_seed,
    draw_block_randomness,
    encode_seed,
    frame_rng,
    polar_transform,
)
from .construction import (
    IndexPartition,
    LevelCode,
    SecrecyCodeSpec,
    build_spec,
    chaining_layout,
    leakage_bound,
    log2_threshold,
    polarize,
    secrecy_rate,
)
from .lattice import (
    NoiseModel,
    PartitionChain,
    differential_entropy,
    gaussian_entropy,
    mod_channel_capacity,
    partition_channel_capacity,
    reduce_mod,
)

MAX_JOINT_OUTCOMES = 1 << 12
MODES = ("chained", "genie", "unchained")


class InstanceTooLarge(ValueError):
    """Exhaustive enumeration would exceed the configured budget."""


# -- reliability -----------------------------------------------------------------

@dataclass
class FerResult:
    mode: str
    trials: int
    errors: int
    fer: float
    ci_low: float
    ci_high: float
    level_errors: list[int]
    chains: int = 0
    chain_errors: int = 0
    sigma: float = 0.0
    seed: int = 0

    @property
    def stderr(self) -> float:
        return math.sqrt(self.fer * (1 - self.fer) / self.trials)

    @property
    def chain_fer(self) -> float:
        return self.chain_errors / self.chains if self.chains else 0.0


def wilson_interval(errors: int, trials: int, confidence: float = 0.95) -> tuple[float, float]:
    ci = binomtest(errors, trials).proportion_ci(confidence_level=confidence, method="wilson")
    return float(ci.low), float(ci.high)


def _draw_frames(spec: SecrecyCodeSpec, seed: int, frames: Sequence[int]):
    """Per-frame randomness and messages, stacked along a new frame axis."""
    levels = len(spec.levels)
    d = [[] for _ in range(levels)]
    b = [[] for _ in range(levels)]
    fill = [[] for _ in range(levels)]
    msg = []
    for f in frames:
        rng = frame_rng(seed, f)
        dd, bb, ff = draw_block_randomness(spec, rng)
        for k in range(levels):
            d[k].append(dd[k])
            b[k].append(bb[k])
            fill[k].append(ff[k])
        msg.append(rng.integers(0, 2, spec.message_bits_per_block, dtype=BIT))
    stack = lambda rows: [np.stack(r) for r in rows]
    return stack(d), stack(b), stack(fill), np.stack(msg)


def _noise(spec: SecrecyCodeSpec, seed: int, frames: Sequence[int], sigma: float) -> np.ndarray:
    return np.stack([frame_rng(seed, f, 1).standard_normal(spec.n) for f in frames]) * sigma


def _channel(symbols: np.ndarray, noise: np.ndarray, chain: PartitionChain) -> np.ndarray:
    return reduce_mod(symbols + noise, chain.cell_volume(chain.levels))


def _split(msg: np.ndarray, spec: SecrecyCodeSpec) -> list[np.ndarray]:
    out, start = [], 0
    for lv in spec.levels:
        k = lv.message_slots.size
        out.append(msg[:, start:start + k])
        start += k
    return out


def _batch_size(spec: SecrecyCodeSpec, budget: int = 1 << 21) -> int:
    return max(1, budget // spec.n)


def simulate_bob(spec: SecrecyCodeSpec, trials: int, seed: int = 0, mode: str = "chained",
                 sigma: float | None = None, batch: int | None = None,
                 decoder_sigma: float | None = None) -> FerResult:
    """Seeded frame-error-rate estimate of the legitimate receiver.

    One trial is one message block.  In ``chained`` mode blocks are grouped
    into chains of ``spec.blocks`` behind a seed block and the ``d`` bits
    come from the previous block's decisions; ``genie`` hands the decoder
    the true ``d`` bits; ``unchained`` decodes them like any other bit.
    A frame is in error when any message bit is wrong.

    ``sigma`` is the channel noise (default: the design ``sigma_b``) and may
    be zero.  The decoder assumes ``decoder_sigma``, which defaults to
    ``sigma`` when positive and to the design ``sigma_b`` otherwise.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    sigma = spec.noise.sigma_b if sigma is None else float(sigma)
    if sigma < 0:
        raise ValueError("sigma must be nonnegative")
    if decoder_sigma is None:
        decoder_sigma = sigma if sigma > 0 else spec.noise.sigma_b
    k = spec.blocks if mode == "chained" else 1
    group = k + 1 if mode == "chained" else 1
    n_groups = -(-trials // k)
    batch = batch or max(1, _batch_size(spec) // group)
    errors = 0
    chain_errors = 0
    level_errors = np.zeros(len(spec.levels), dtype=np.int64)
    done = 0
    for g0 in range(0, n_groups, batch):
        gs = np.arange(g0, min(n_groups, g0 + batch))
        if mode == "chained":
            seeds = gs * group
            draws = [_draw_frames(spec, seed, seeds + t) for t in range(1, k + 1)]
            seed_obs = _channel(encode_seed(draws[0][0], spec).symbols,
                                _noise(spec, seed, seeds, sigma), spec.chain)
            known = decode_seed(seed_obs, spec, decoder_sigma)
            bad_chain = np.zeros(gs.size, dtype=bool)
            for t in range(k):
                d_bits, b_bits, fill, msg = draws[t]
                nxt = draws[t + 1][0] if t + 1 < k else fill
                us = batch_fill(spec, _split(msg, spec), b_bits, nxt, d_bits)
                x = batch_modulate([polar_transform(u) for u in us], spec.chain)
                obs = _channel(x, _noise(spec, seed, seeds + t + 1, sigma), spec.chain)
                res = batch_multistage_decode(obs, spec, known_d=known, sigma=decoder_sigma)
                known = res.chained(spec)
                live = (gs * k + t) < trials
                bad = np.any(res.message(spec) != msg, axis=1) & live
                errors += int(bad.sum())
                bad_chain |= bad
                level_errors += (~res.level_ok(us) & live[:, None]).sum(axis=0)
                done += int(live.sum())
            chain_errors += int(bad_chain.sum())
        else:
            d_bits, b_bits, fill, msg = _draw_frames(spec, seed, gs)
            us = batch_fill(spec, _split(msg, spec), b_bits, fill, d_bits)
            x = batch_modulate([polar_transform(u) for u in us], spec.chain)
            obs = _channel(x, _noise(spec, seed, gs, sigma), spec.chain)
            res = batch_multistage_decode(obs, spec, sigma=decoder_sigma,
                                          known_d=d_bits if mode == "genie" else None)
            bad = np.any(res.message(spec) != msg, axis=1)
            errors += int(bad.sum())
            level_errors += (~res.level_ok(us)).sum(axis=0)
            done += gs.size
    lo, hi = wilson_interval(errors, done)
    return FerResult(mode=mode, trials=done, errors=errors, fer=errors / done,
                     ci_low=lo, ci_high=hi, level_errors=level_errors.tolist(),
                     chains=n_groups if mode == "chained" else 0,
                     chain_errors=chain_errors, sigma=sigma, seed=seed)


# -- rate tables -------------------------------------------------------------------

@dataclass
class RateTableRow:
    alpha: float
    r: int
    sigma_b: float
    sigma_e: float
    cap_v: list[float]
    cap_w: list[float]
    rate: float
    bound: float
    gap: float
    eps_1: float
    eps_b: float
    eps_e: float

    @property
    def gap_nats(self) -> float:
        return self.gap * math.log(2.0)


RATE_COLUMNS = ["alpha", "r", "sigma_b", "sigma_e", "cap_v", "cap_w", "rate_bits",
                "bound_bits", "gap_bits", "gap_nats", "eps_1", "eps_b", "eps_e"]


def rate_row(alpha: float, r: int, sigma_b: float, sigma_e: float) -> RateTableRow:
    """Infinite-length secrecy rate of the chain and its gap to the bound."""
    if not 0 < sigma_b <= sigma_e:
        raise ValueError("need 0 < sigma_b <= sigma_e")
    chain = PartitionChain(alpha, r)
    cap_v = [partition_channel_capacity(chain, i, sigma_b) for i in range(1, r)]
    cap_w = [partition_channel_capacity(chain, i, sigma_e) for i in range(1, r)]
    rate = sum(cap_v) - sum(cap_w)
    bound = 0.5 * math.log2(sigma_e ** 2 / sigma_b ** 2)
    eps_1 = differential_entropy(chain, 1, sigma_e) - differential_entropy(chain, 1, sigma_b)
    eps_b = gaussian_entropy(sigma_b) - differential_entropy(chain, r, sigma_b)
    eps_e = gaussian_entropy(sigma_e) - differential_entropy(chain, r, sigma_e)
    return RateTableRow(alpha=alpha, r=r, sigma_b=sigma_b, sigma_e=sigma_e,
                        cap_v=cap_v, cap_w=cap_w, rate=rate, bound=bound,
                        gap=bound - rate, eps_1=eps_1, eps_b=eps_b, eps_e=eps_e)


def rate_table(grid: Iterable[tuple[float, int, float, float]]) -> list[RateTableRow]:
    return [rate_row(*g) for g in grid]


def _fmt(v) -> str:
    if isinstance(v, (list, tuple)):
        return ";".join(_fmt(x) for x in v)
    if isinstance(v, float):
        return f"{v:.17g}"
    return str(v)


def rate_table_csv(rows: Sequence[RateTableRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(RATE_COLUMNS)
    for row in rows:
        w.writerow([_fmt(v) for v in (row.alpha, row.r, row.sigma_b, row.sigma_e, row.cap_v,
                                      row.cap_w, row.rate, row.bound, row.gap, row.gap_nats,
                                      row.eps_1, row.eps_b, row.eps_e)])
    return buf.getvalue()


# -- leakage -------------------------------------------------------------------------

def spec_from_partitions(chain: PartitionChain, noise: NoiseModel, n_exp: int,
                         partitions: Sequence[IndexPartition],
                         q: QuantizerConfig = QuantizerConfig(), blocks: int = 1,
                         ) -> SecrecyCodeSpec:
    """Wrap hand-made index sets in a spec, filling in construction statistics."""
    levels = []
    for level, part in enumerate(partitions, start=1):
        v = build_partition_channel(chain, level, noise.sigma_b, q)
        w = build_partition_channel(chain, level, noise.sigma_e, q, upgrade=True)
        sv = polarize(v, n_exp, q)
        sw = polarize(w, n_exp, q, upgrade=True)
        chain_slots, seed_slots = chaining_layout(part, sv.bhatt)
        levels.append(LevelCode(partition=part, bob_bhatt=sv.bhatt, eve_mi=sw.mi,
                                chain_slots=chain_slots, seed_slots=seed_slots))
    beta = partitions[0].beta
    return SecrecyCodeSpec(chain=chain, noise=noise, n_exp=n_exp, beta=beta, mu=q.bins,
                           blocks=blocks, levels=tuple(levels))


def _enumeration_mu(n: int) -> int:
    mu = 8
    while (mu + 2) ** n <= MAX_JOINT_OUTCOMES and mu < 64:
        mu += 2
    return mu


def exact_leakage_small(spec: SecrecyCodeSpec, q: QuantizerConfig | None = None,
                        frozen_values=None) -> float:
    """``I(M; Z^N)`` in bits by exhaustive enumeration (one level, N <= 4).

    The eavesdropper channel is a degraded quantization of the partition
    channel, so the result lower-bounds the leakage of the continuous
    channel.  Message bits occupy ``a``; ``b`` and ``d`` are uniform random.
    """
    if len(spec.levels) != 1:
        raise InstanceTooLarge("exact leakage needs a single partition level")
    n = spec.n
    if n > 4:
        raise InstanceTooLarge(f"N = {n} exceeds 4")
    q = q or QuantizerConfig(_enumeration_mu(n))
    eve = build_partition_channel(spec.chain, 1, spec.noise.sigma_e, q)
    q0, q1 = eve.symbols()
    if q0.size ** n > MAX_JOINT_OUTCOMES:
        raise InstanceTooLarge(f"{q0.size}^{n} joint outputs exceed {MAX_JOINT_OUTCOMES}")
    p = spec.levels[0].partition
    if p.a.size == 0:
        return 0.0
    rand = np.union1d(p.b, p.d)
    frozen = np.zeros(p.c.size, dtype=BIT) if frozen_values is None else \
        np.asarray(frozen_values, dtype=BIT)
    lik = np.stack([q0, q1])                      # (input bit, symbol)
    n_msg, n_rand = 2 ** p.a.size, 2 ** rand.size
    p_zm = np.zeros((n_msg, q0.size ** n))
    for mi, m in enumerate(itertools.product((0, 1), repeat=p.a.size)):
        for r in itertools.product((0, 1), repeat=rand.size):
            u = np.zeros(n, dtype=BIT)
            u[p.a] = m
            u[rand] = r
            u[p.c] = frozen
            x = polar_transform(u)
            joint = lik[x[0]]
            for j in range(1, n):
                joint = np.multiply.outer(joint, lik[x[j]]).ravel()
            p_zm[mi] += joint / n_rand
    p_z = p_zm.mean(axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p_zm > 0, p_zm * np.log2(p_zm / p_z), 0.0)
    return float(max(terms.sum() / n_msg, 0.0))


@dataclass
class LeakageRow:
    n: int
    leakage_bound: float
    envelope: float
    secrecy_rate: float


def leakage_envelope(levels: int, n: int, beta: float) -> float:
    """``r N 2^(-N^beta)``."""
    return levels * n * 2.0 ** log2_threshold(n, beta)


def leakage_scaling_report(chain: PartitionChain, noise: NoiseModel, beta: float,
                           n_exps: Sequence[int], q: QuantizerConfig = QuantizerConfig(),
                           specs: Sequence[SecrecyCodeSpec] | None = None,
                           slack: float = 0.0) -> list[LeakageRow]:
    """Constructive leakage bound beside the analytic envelope for each N."""
    rows = []
    for i, n_exp in enumerate(n_exps):
        spec = specs[i] if specs is not None else build_spec(chain, noise, n_exp, beta, q)
        lb = leakage_bound(spec)
        env = leakage_envelope(chain.levels, spec.n, beta)
        if lb > env + slack:
            raise AssertionError(f"N={spec.n}: leakage bound {lb} exceeds envelope {env}")
        rows.append(LeakageRow(n=spec.n, leakage_bound=lb, envelope=env,
                               secrecy_rate=secrecy_rate(spec)))
    return rows


def rows_csv(rows: Sequence, columns: Sequence[str] | None = None) -> str:
    dicts = [asdict(r) for r in rows]
    columns = list(columns or (dicts[0].keys() if dicts else []))
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for d in dicts:
        w.writerow([_fmt(d[c]) for c in columns])
    return buf.getvalue()
