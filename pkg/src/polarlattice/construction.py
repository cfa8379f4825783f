"""Polar code construction for the wiretap partition chain.

Bit-channel ``i`` of a length ``N = 2^n`` polar code (natural order,
``x = u F^{(x)n}``) is reached from the parent channel by applying the
minus or plus transform for each bit of ``i``, most significant bit first.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from . import __version__
from .channel import (
    DiscreteBms,
    QuantizerConfig,
    _canonical,
    _pair_mi,
    build_partition_channel,
    reduce_channel,
)
from .lattice import NoiseModel, PartitionChain

SPEC_FORMAT = "polarlattice.secrecy-code"
SPEC_VERSION = 1

MESSAGE, RANDOM, FROZEN = "message", "random", "frozen"


class ConstructionError(RuntimeError):
    """The constructed index sets violate a structural requirement."""


class BitChannelStats(NamedTuple):
    index: int
    mi: float
    bhatt: float


@dataclass(frozen=True, eq=False)
class PolarStats:
    """Mutual information and Bhattacharyya parameter of every bit-channel."""

    mi: np.ndarray
    bhatt: np.ndarray

    def __post_init__(self):
        if self.mi.shape != self.bhatt.shape:
            raise ValueError("mi and bhatt must have equal length")

    def __len__(self):
        return self.mi.size

    def __getitem__(self, i) -> BitChannelStats:
        return BitChannelStats(int(i), float(self.mi[i]), float(self.bhatt[i]))

    def __iter__(self):
        return (self[i] for i in range(len(self)))


def minus_transform(c: DiscreteBms) -> DiscreteBms:
    """``Q(y1, y2 | u1) = 1/2 sum_{u2} Q(y1 | u1 + u2) Q(y2 | u2)``.

    Pair ``(i, j)`` yields four symbols that form two conjugate pairs with a
    common likelihood ratio; they are merged losslessly into one entry.
    """
    a, b = c.a, c.b
    hi = np.outer(a, a) + np.outer(b, b)
    lo = np.outer(a, b) + np.outer(b, a)
    return _canonical(hi.ravel(), lo.ravel())


def plus_transform(c: DiscreteBms) -> DiscreteBms:
    """``Q(y1, y2, u1 | u2) = 1/2 Q(y1 | u1 + u2) Q(y2 | u2)``."""
    a, b = c.a, c.b
    ab = np.outer(a, b)
    ba = np.outer(b, a)
    hi = np.concatenate([np.outer(a, a).ravel(), np.maximum(ab, ba).ravel()])
    lo = np.concatenate([np.outer(b, b).ravel(), np.minimum(ab, ba).ravel()])
    return _canonical(hi, lo)


def _stats_of(c: DiscreteBms) -> tuple[float, float]:
    mi = float(np.clip(_pair_mi(c.a, c.b).sum(), 0.0, 1.0))
    z = float(min(2.0 * np.sqrt(c.a * c.b).sum(), 1.0))
    return mi, z


def polarize(c: DiscreteBms, n_exp: int, q: QuantizerConfig = QuantizerConfig(),
             upgrade: bool = False) -> PolarStats:
    """Statistics of all ``2^n_exp`` synthesized bit-channels of ``c``.

    Each stage applies the minus/plus transforms and then reduces the
    alphabet to ``q.bins`` symbols, degrading by default or upgrading when
    ``upgrade`` is set.  Degraded statistics over-estimate Bhattacharyya
    parameters; upgraded ones over-estimate mutual information.
    """
    if int(n_exp) != n_exp or n_exp < 1:
        raise ValueError(f"n_exp must be a positive integer, got {n_exp}")
    layer = [reduce_channel(c, q, upgrade)]
    for _ in range(n_exp):
        nxt = []
        for ch in layer:
            nxt.append(reduce_channel(minus_transform(ch), q, upgrade))
            nxt.append(reduce_channel(plus_transform(ch), q, upgrade))
        layer = nxt
    mi = np.empty(len(layer))
    z = np.empty(len(layer))
    for i, ch in enumerate(layer):
        mi[i], z[i] = _stats_of(ch)
    return PolarStats(mi, z)


# -- index classification -----------------------------------------------------

def log2_threshold(n: int, beta: float) -> float:
    """``log2`` of the threshold ``2^(-N^beta)``."""
    return -float(n) ** beta


def _below_threshold(values: np.ndarray, log2_thr: float) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return np.log2(np.asarray(values, dtype=float)) <= log2_thr


def _as_index_array(x) -> np.ndarray:
    arr = np.unique(np.asarray(list(x) if not isinstance(x, np.ndarray) else x,
                               dtype=np.int64))
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class IndexPartition:
    """The four index sets of one level.

    ``a`` reliable for the receiver and secure against the eavesdropper,
    ``b`` reliable and insecure, ``c`` unreliable and secure, ``d``
    unreliable and insecure.
    """

    n: int
    a: np.ndarray
    b: np.ndarray
    c: np.ndarray
    d: np.ndarray
    beta: float

    def __post_init__(self):
        for name in "abcd":
            object.__setattr__(self, name, _as_index_array(getattr(self, name)))
        sets = np.concatenate([self.a, self.b, self.c, self.d])
        if sets.size != self.n or np.unique(sets).size != self.n or (
                self.n and (sets.min() < 0 or sets.max() >= self.n)):
            raise ValueError("index sets must partition range(n)")
        if not 0 < self.beta < 0.5:
            raise ValueError(f"beta must lie in (0, 0.5), got {self.beta}")

    def __eq__(self, other):
        if not isinstance(other, IndexPartition):
            return NotImplemented
        return (self.n == other.n and self.beta == other.beta and all(
            np.array_equal(getattr(self, s), getattr(other, s)) for s in "abcd"))

    @property
    def reliable(self) -> np.ndarray:
        return np.union1d(self.a, self.b)

    @property
    def code_support(self) -> np.ndarray:
        """Indices not frozen: ``a | b | d``."""
        return np.union1d(np.union1d(self.a, self.b), self.d)

    def to_dict(self) -> dict:
        return {"a": self.a.tolist(), "b": self.b.tolist(),
                "c": self.c.tolist(), "d": self.d.tolist()}


def classify(stats_v: PolarStats, stats_w: PolarStats, beta: float) -> IndexPartition:
    """Split indices by receiver reliability and eavesdropper security.

    ``G(V) = {i : Z_V(i) <= 2^(-N^beta)}`` and
    ``N(W) = {i : I_W(i) <= 2^(-N^beta)}``; ties count as inside.
    """
    if len(stats_v) != len(stats_w):
        raise ValueError("stats_v and stats_w must have equal length")
    if not 0 < beta < 0.5:
        raise ValueError(f"beta must lie in (0, 0.5), got {beta}")
    n = len(stats_v)
    thr = log2_threshold(n, beta)
    good = _below_threshold(stats_v.bhatt, thr)
    secure = _below_threshold(stats_w.mi, thr)
    idx = np.arange(n)
    return IndexPartition(n=n, beta=beta,
                          a=idx[good & secure], b=idx[good & ~secure],
                          c=idx[~good & secure], d=idx[~good & ~secure])


def assign_roles(p: IndexPartition) -> list[str]:
    """Role of every index: a -> message, b and d -> random, c -> frozen."""
    roles = [RANDOM] * p.n
    for i in p.a:
        roles[i] = MESSAGE
    for i in p.c:
        roles[i] = FROZEN
    return roles


# -- full code specification --------------------------------------------------

@dataclass(frozen=True, eq=False)
class LevelCode:
    """Index sets and construction statistics of one partition level."""

    partition: IndexPartition
    bob_bhatt: np.ndarray        # degraded estimate, upper-bounds the true Z
    eve_mi: np.ndarray           # upgraded estimate, upper-bounds the true I
    chain_slots: np.ndarray      # lowest |d| indices of a, carry next block's d bits
    seed_slots: np.ndarray       # positions of the seed block carrying the first d bits

    @property
    def message_slots(self) -> np.ndarray:
        return np.setdiff1d(self.partition.a, self.chain_slots)


@dataclass(frozen=True, eq=False)
class SecrecyCodeSpec:
    chain: PartitionChain
    noise: NoiseModel
    n_exp: int
    beta: float
    mu: int
    blocks: int
    levels: tuple[LevelCode, ...]
    meta: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return 1 << self.n_exp

    @property
    def partitions(self) -> tuple[IndexPartition, ...]:
        return tuple(lv.partition for lv in self.levels)

    @property
    def message_bits_per_block(self) -> int:
        return sum(lv.message_slots.size for lv in self.levels)

    def to_dict(self) -> dict:
        return {
            "format": SPEC_FORMAT,
            "version": SPEC_VERSION,
            "code_version": __version__,
            "chain": {"alpha": self.chain.alpha, "levels": self.chain.levels},
            "noise": {"sigma_b": self.noise.sigma_b, "sigma_e": self.noise.sigma_e},
            "n_exp": self.n_exp,
            "beta": self.beta,
            "mu": self.mu,
            "chaining": {
                "blocks_per_level": self.blocks,
                "chain_slots": [lv.chain_slots.tolist() for lv in self.levels],
                "seed_slots": [lv.seed_slots.tolist() for lv in self.levels],
            },
            "levels": [
                dict(lv.partition.to_dict(),
                     bob_bhatt=[float(f"{v:.17g}") for v in lv.bob_bhatt],
                     eve_mi=[float(f"{v:.17g}") for v in lv.eve_mi])
                for lv in self.levels
            ],
            "meta": self.meta,
        }

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)

    @classmethod
    def from_dict(cls, d: dict) -> "SecrecyCodeSpec":
        if d.get("format") != SPEC_FORMAT:
            raise ValueError("not a secrecy code document")
        if d.get("version") != SPEC_VERSION:
            raise ValueError(f"unsupported document version {d.get('version')}")
        chain = PartitionChain(float(d["chain"]["alpha"]), int(d["chain"]["levels"]))
        noise = NoiseModel(float(d["noise"]["sigma_b"]), float(d["noise"]["sigma_e"]))
        n = 1 << int(d["n_exp"])
        levels = []
        ch = d["chaining"]
        for k, lv in enumerate(d["levels"]):
            part = IndexPartition(n=n, beta=float(d["beta"]),
                                  a=lv["a"], b=lv["b"], c=lv["c"], d=lv["d"])
            levels.append(LevelCode(
                partition=part,
                bob_bhatt=np.asarray(lv["bob_bhatt"], dtype=float),
                eve_mi=np.asarray(lv["eve_mi"], dtype=float),
                chain_slots=_as_index_array(ch["chain_slots"][k]),
                seed_slots=_as_index_array(ch["seed_slots"][k]),
            ))
        spec = cls(chain=chain, noise=noise, n_exp=int(d["n_exp"]), beta=float(d["beta"]),
                   mu=int(d["mu"]), blocks=int(ch["blocks_per_level"]),
                   levels=tuple(levels), meta=d.get("meta", {}))
        check_spec(spec)
        return spec

    @classmethod
    def from_json(cls, text: str) -> "SecrecyCodeSpec":
        return cls.from_dict(json.loads(text))


def check_nesting(partitions: Sequence[IndexPartition]) -> None:
    """Raise unless the frozen-secure sets shrink with the level."""
    for i in range(len(partitions) - 1):
        lower, upper = partitions[i], partitions[i + 1]
        if not np.isin(upper.c, lower.c).all():
            raise ConstructionError(
                f"nesting violated between levels {i + 1} and {i + 2}: "
                "quantization may be too coarse")


def check_spec(spec: SecrecyCodeSpec) -> None:
    if len(spec.levels) != spec.chain.levels - 1:
        raise ValueError("need one level code per partition")
    check_nesting(spec.partitions)
    for k, lv in enumerate(spec.levels, start=1):
        if not np.isin(lv.chain_slots, lv.partition.a).all():
            raise ConstructionError(f"level {k}: chaining slots outside the message set")
        if lv.chain_slots.size != lv.partition.d.size:
            raise ConstructionError(f"level {k}: chaining slot count differs from |d|")
        if not np.isin(lv.seed_slots, lv.partition.reliable).all():
            raise ConstructionError(f"level {k}: seed slots outside the reliable set")
        if lv.seed_slots.size != lv.partition.d.size:
            raise ConstructionError(f"level {k}: seed slot count differs from |d|")


def chaining_layout(partition: IndexPartition, bob_bhatt: np.ndarray
                    ) -> tuple[np.ndarray, np.ndarray]:
    """Chaining slots (lowest indices of ``a``) and seed slots (the most
    reliable indices of ``a | b``), each of size ``|d|``."""
    nd = partition.d.size
    if nd > partition.a.size:
        raise ConstructionError(
            f"|d| = {nd} exceeds |a| = {partition.a.size}; block chaining impossible")
    chain_slots = partition.a[:nd]
    reliable = partition.reliable
    order = np.lexsort((reliable, bob_bhatt[reliable]))
    seed_slots = np.sort(reliable[order[:nd]])
    return chain_slots, seed_slots


def build_spec(chain: PartitionChain, noise: NoiseModel, n_exp: int, beta: float = 0.3,
               q: QuantizerConfig = QuantizerConfig(), blocks_per_level: int = 8,
               ) -> SecrecyCodeSpec:
    """Construct the nested per-level polar codes of the secrecy lattice."""
    if not 0 < beta < 0.5:
        raise ValueError(f"beta must lie in (0, 0.5), got {beta}")
    if int(blocks_per_level) != blocks_per_level or blocks_per_level < 1:
        raise ValueError("blocks_per_level must be a positive integer")
    levels = []
    for level in range(1, chain.levels):
        v = build_partition_channel(chain, level, noise.sigma_b, q)
        w = build_partition_channel(chain, level, noise.sigma_e, q, upgrade=True)
        sv = polarize(v, n_exp, q)
        sw = polarize(w, n_exp, q, upgrade=True)
        part = classify(sv, sw, beta)
        chain_slots, seed_slots = chaining_layout(part, sv.bhatt)
        levels.append(LevelCode(partition=part, bob_bhatt=sv.bhatt, eve_mi=sw.mi,
                                chain_slots=chain_slots, seed_slots=seed_slots))
    spec = SecrecyCodeSpec(chain=chain, noise=noise, n_exp=int(n_exp), beta=float(beta),
                           mu=q.bins, blocks=int(blocks_per_level), levels=tuple(levels))
    check_spec(spec)
    return spec


def secrecy_rate(spec: SecrecyCodeSpec) -> float:
    """``sum_i |a_i| / N`` in bits per dimension."""
    return sum(lv.partition.a.size for lv in spec.levels) / spec.n


def leakage_set(partition: IndexPartition) -> np.ndarray:
    """Indices whose eavesdropper mutual information enters the bound.

    With the non-message secure indices frozen, the leakage of the message
    indices ``a`` is bounded by the bit-channel informations over ``a`` and
    the frozen indices above ``min(a)``; frozen indices below every message
    index only condition the eavesdropper and drop out.
    """
    if partition.a.size == 0:
        return partition.a
    tail = partition.c[partition.c > partition.a.min()]
    return np.union1d(partition.a, tail)


def leakage_bound(spec: SecrecyCodeSpec) -> float:
    """Upper bound on ``I(M; Z^N)`` in bits from upgraded eavesdropper statistics."""
    return float(sum(lv.eve_mi[leakage_set(lv.partition)].sum() for lv in spec.levels))
