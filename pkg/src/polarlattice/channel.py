"""Finite binary-input memoryless symmetric (BMS) channels.

A symmetric channel is stored as conjugate *pairs*: the entry ``(a, b)``
with ``a >= b`` stands for two output symbols ``y`` and ``y'`` with
``Q(y|0) = Q(y'|1) = a`` and ``Q(y|1) = Q(y'|0) = b``.  An entry with
``a == b`` is self-symmetric (likelihood ratio one); all such mass is
collapsed into a single entry, which counts as one output symbol of
probability ``2a`` under either input.

Alphabet reduction bins entries by their posterior ``p = b / (a + b)`` on a
fixed grid over ``[0, 1/2]``.  Merging within a bin is a degradation;
splitting each entry onto the two bin edges is an upgrade.  The grid is
uniform in binary entropy (which bounds the mutual-information change of
one reduction by the widest bin, see :func:`quantization_gap`) and is
refined geometrically towards ``p = 0`` and ``p = 1/2`` where Bhattacharyya
and mutual-information thresholds are resolved.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.optimize import brentq
from scipy.special import xlog1py, xlogy

from .lattice import (
    PartitionChain,
    _check_sigma,
    aliased_gaussian_pdf_volume,
)

LN2 = math.log(2.0)
SUM_TOL = 1e-12

P_FLOOR = 1e-30    # smallest posterior edge near a perfect symbol
T_FLOOR = 1e-8     # smallest distance from 1/2 resolved near a useless symbol


@dataclass(frozen=True)
class QuantizerConfig:
    """Output alphabet budget ``bins`` (number of output symbols)."""

    bins: int = 256

    def __post_init__(self):
        if int(self.bins) != self.bins or self.bins < 8 or self.bins % 2:
            raise ValueError(f"bins must be an even integer >= 8, got {self.bins}")

    @property
    def pairs(self) -> int:
        return self.bins // 2


class DiscreteBms:
    """Finite symmetric binary-input channel in conjugate-pair form."""

    __slots__ = ("a", "b")

    def __init__(self, a, b, validate: bool = True):
        a = np.asarray(a, dtype=float).ravel()
        b = np.asarray(b, dtype=float).ravel()
        if a.shape != b.shape:
            raise ValueError("a and b must have the same length")
        if validate:
            if a.size == 0:
                raise ValueError("channel has no output symbols")
            if np.any(a < 0) or np.any(b < 0) or not np.all(np.isfinite(a + b)):
                raise ValueError("probabilities must be finite and nonnegative")
            if np.any(a < b):
                raise ValueError("pairs must be stored with a >= b")
            total = a.sum() + b.sum()
            if abs(total - 1.0) > SUM_TOL:
                raise ValueError(f"probabilities sum to {total!r}, expected 1")
        self.a = a
        self.b = b
        self.a.setflags(write=False)
        self.b.setflags(write=False)

    def __len__(self):
        return self.a.size

    def __repr__(self):
        return f"DiscreteBms(pairs={len(self)}, symbols={self.n_symbols})"

    @property
    def self_symmetric(self) -> np.ndarray:
        return self.a == self.b

    @property
    def n_symbols(self) -> int:
        ss = int(self.self_symmetric.sum())
        return 2 * (len(self) - ss) + ss

    def symbols(self) -> tuple[np.ndarray, np.ndarray]:
        """Full output alphabet as arrays ``(Q(y|0), Q(y|1))``."""
        ss = self.self_symmetric
        a, b = self.a[~ss], self.b[~ss]
        q0 = np.concatenate([a, b, 2 * self.a[ss]])
        q1 = np.concatenate([b, a, 2 * self.b[ss]])
        return q0, q1

    def to_dict(self) -> dict:
        q0, q1 = self.symbols()
        return {"q0": [float(f"{v:.17g}") for v in q0],
                "q1": [float(f"{v:.17g}") for v in q1]}

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, d: dict) -> "DiscreteBms":
        return from_symbols(d["q0"], d["q1"])

    @classmethod
    def from_json(cls, text: str) -> "DiscreteBms":
        return cls.from_dict(json.loads(text))

    def to_csv(self) -> str:
        q0, q1 = self.symbols()
        rows = ["q0,q1"] + [f"{x:.17g},{y:.17g}" for x, y in zip(q0, q1)]
        return "\n".join(rows) + "\n"

    @classmethod
    def from_csv(cls, text: str) -> "DiscreteBms":
        lines = [ln for ln in text.strip().splitlines() if ln.strip()]
        if lines[0].replace(" ", "") != "q0,q1":
            raise ValueError("expected header 'q0,q1'")
        vals = np.array([[float(v) for v in ln.split(",")] for ln in lines[1:]])
        return from_symbols(vals[:, 0], vals[:, 1])


def _canonical(a: np.ndarray, b: np.ndarray, renormalize: bool = True) -> DiscreteBms:
    """Drop empty entries, collapse self-symmetric mass, renormalize."""
    keep = (a + b) > 0
    a, b = a[keep], b[keep]
    ss = a <= b
    if ss.any():
        e = 0.5 * (a[ss].sum() + b[ss].sum())
        a = np.append(a[~ss], e)
        b = np.append(b[~ss], e)
    if renormalize:
        s = a.sum() + b.sum()
        a, b = a / s, b / s
    return DiscreteBms(a, b, validate=False)


def from_symbols(q0, q1) -> DiscreteBms:
    """Build a channel from a full symmetric output alphabet.

    Every symbol contributes half of its (max, min) likelihoods, so a
    symbol and its conjugate together form one pair.  The input is assumed
    to be symmetric; only the total mass is validated.
    """
    q0 = np.asarray(q0, dtype=float).ravel()
    q1 = np.asarray(q1, dtype=float).ravel()
    if q0.shape != q1.shape:
        raise ValueError("q0 and q1 must have the same length")
    if np.any(q0 < 0) or np.any(q1 < 0):
        raise ValueError("probabilities must be nonnegative")
    for q in (q0, q1):
        if abs(q.sum() - 1.0) > 1e-9:
            raise ValueError(f"conditional distribution sums to {q.sum()!r}")
    hi = 0.5 * np.maximum(q0, q1)
    lo = 0.5 * np.minimum(q0, q1)
    # a symbol and its conjugate give identical entries; merge them exactly
    pairs, inv = np.unique(np.stack([hi, lo], axis=1), axis=0, return_inverse=True)
    inv = inv.ravel()
    mult = np.bincount(inv, minlength=len(pairs))
    return _canonical(pairs[:, 0] * mult, pairs[:, 1] * mult)


def binary_symmetric(p: float) -> DiscreteBms:
    if not 0 <= p <= 1:
        raise ValueError("crossover probability must lie in [0, 1]")
    return _canonical(np.array([max(1 - p, p)]), np.array([min(1 - p, p)]))


def binary_erasure(eps: float) -> DiscreteBms:
    if not 0 <= eps <= 1:
        raise ValueError("erasure probability must lie in [0, 1]")
    return _canonical(np.array([1 - eps, eps / 2]), np.array([0.0, eps / 2]))


# -- figures of merit ---------------------------------------------------------

def _pair_mi(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Mutual information (bits) contributed by each pair."""
    m = a + b
    with np.errstate(invalid="ignore", divide="ignore"):
        t = np.where(m > 0, (a - b) / (2 * m), 0.0)
    # 1 - h2(1/2 - t), written to stay accurate as t -> 0
    d = (xlog1py(0.5 - t, -2 * t) + xlog1py(0.5 + t, 2 * t)) / LN2
    return m * d


def channel_mi(c: DiscreteBms) -> float:
    """Symmetric-capacity ``I(Q)`` in bits (uniform input)."""
    return float(min(max(_pair_mi(c.a, c.b).sum(), 0.0), 1.0))


def channel_bhattacharyya(c: DiscreteBms) -> float:
    """``Z(Q) = sum_y sqrt(Q(y|0) Q(y|1))``."""
    return float(min(2.0 * np.sqrt(c.a * c.b).sum(), 1.0))


def _h2(p):
    p = np.asarray(p, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        h = -(xlogy(p, p) + xlog1py(1 - p, -p)) / LN2
    return h


def _h2_inverse(h: float) -> float:
    if h <= 0:
        return 0.0
    if h >= 1:
        return 0.5
    return brentq(lambda p: float(_h2(p)) - h, 0.0, 0.5, xtol=1e-300, rtol=1e-15)


# -- alphabet reduction -------------------------------------------------------

@lru_cache(maxsize=64)
def posterior_edges(n_bins: int) -> np.ndarray:
    """Increasing grid ``0 = p_0 < ... < p_n = 1/2`` with ``n_bins`` bins.

    Half of the bins are uniform in binary entropy; the rest subdivide the
    first and last of those geometrically.
    """
    if n_bins < 3:
        raise ValueError("need at least 3 bins")
    k1 = max(2, n_bins // 2)
    k2 = (n_bins - k1) // 2
    k3 = n_bins - k1 - k2
    mid = np.array([_h2_inverse(k / k1) for k in range(1, k1)])
    low = np.geomspace(min(P_FLOOR, mid[0] / 2), mid[0], k2 + 1)[:-1]
    t_last = 0.5 - mid[-1]
    high = 0.5 - np.geomspace(t_last, min(T_FLOOR, t_last / 2), k3 + 1)[1:]
    edges = np.concatenate([[0.0], low, mid, high, [0.5]])
    assert edges.size == n_bins + 1 and np.all(np.diff(edges) > 0)
    edges.setflags(write=False)
    return edges


@lru_cache(maxsize=64)
def _gap(n_bins: int) -> float:
    return float(np.diff(_h2(posterior_edges(n_bins))).max())


def quantization_gap(q: QuantizerConfig) -> float:
    """``delta(mu)``: bound on the mutual-information change of one reduction.

    Both reductions move each entry only within one bin of the grid, so
    the change is at most the largest binary-entropy width of a bin.
    """
    return max(_gap(q.pairs), _gap(q.pairs - 1))


def _posteriors(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    m = a + b
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(m > 0, b / m, 0.5)


def degrading_merge(c: DiscreteBms, q: QuantizerConfig) -> DiscreteBms:
    """Reduce to at most ``q.bins`` symbols by merging within posterior bins."""
    if not isinstance(q, QuantizerConfig) or q.bins < 2:
        raise ValueError("invalid quantizer configuration")
    if c.n_symbols <= q.bins:
        return c
    edges = posterior_edges(q.pairs)
    idx = np.clip(np.searchsorted(edges, _posteriors(c.a, c.b), side="right") - 1,
                  0, q.pairs - 1)
    a = np.bincount(idx, weights=c.a, minlength=q.pairs)
    b = np.bincount(idx, weights=c.b, minlength=q.pairs)
    return _canonical(a, b)


def upgrading_merge(c: DiscreteBms, q: QuantizerConfig) -> DiscreteBms:
    """Reduce to at most ``q.bins`` symbols by splitting each entry onto the
    two edges of its posterior bin.  The input channel is a degraded
    version of the result."""
    if c.n_symbols <= q.bins:
        return c
    n_points = q.pairs
    edges = posterior_edges(n_points - 1)
    m = c.a + c.b
    p = _posteriors(c.a, c.b)
    lo = np.clip(np.searchsorted(edges, p, side="right") - 1, 0, n_points - 2)
    p_lo, p_hi = edges[lo], edges[lo + 1]
    w_hi = np.clip((p - p_lo) / (p_hi - p_lo), 0.0, 1.0)
    mass = np.bincount(lo, weights=m * (1 - w_hi), minlength=n_points)
    mass += np.bincount(lo + 1, weights=m * w_hi, minlength=n_points)
    return _canonical(mass * (1 - edges), mass * edges)


def reduce_channel(c: DiscreteBms, q: QuantizerConfig, upgrade: bool = False) -> DiscreteBms:
    return upgrading_merge(c, q) if upgrade else degrading_merge(c, q)


# -- channel construction from the lattice chain -------------------------------

def _grid_size(volume: float, sigma: float) -> int:
    want = 64.0 * volume / sigma
    n = 1 << 14
    while n < want and n < (1 << 20):
        n <<= 1
    return n


def _midpoints(volume: float, n: int) -> np.ndarray:
    h = volume / n
    return -volume / 2 + h * (np.arange(n) + 0.5)


def _quantize_density(q0: np.ndarray, q1: np.ndarray, width: float,
                      q: QuantizerConfig, upgrade: bool) -> DiscreteBms:
    c = from_symbols(q0 * width / (q0 * width).sum(), q1 * width / (q1 * width).sum())
    return reduce_channel(c, q, upgrade)


def build_partition_channel(chain: PartitionChain, level: int, sigma: float,
                            q: QuantizerConfig = QuantizerConfig(),
                            upgrade: bool = False) -> DiscreteBms:
    """Quantized ``W(Lambda_l / Lambda_{l+1}, sigma^2)``.

    Input 0 and 1 select the coset representatives ``0`` and
    ``2^(l-1) alpha``; the output ``z`` ranges over the Voronoi cell of
    ``Lambda_{l+1}``, which is sampled on a fine midpoint grid before the
    posterior-bin reduction.
    """
    level = chain.check_level(level, partition=True)
    sigma = _check_sigma(sigma)
    volume = chain.cell_volume(level + 1)
    n = _grid_size(volume, sigma)
    z = _midpoints(volume, n)
    shift = chain.coset_offset(level)
    q0 = aliased_gaussian_pdf_volume(z, sigma, volume)
    q1 = aliased_gaussian_pdf_volume(z - shift, sigma, volume)
    return _quantize_density(q0, q1, volume / n, q, upgrade)


def build_equivalent_channel(chain: PartitionChain, level: int, sigma: float,
                             q: QuantizerConfig = QuantizerConfig(),
                             upgrade: bool = False) -> DiscreteBms:
    """Quantized equivalent channel ``W'(Z; X_l | X_1..X_{l-1})``.

    The output lives in the Voronoi cell of ``Lambda_r``.  With uniform,
    independent higher levels the conditional density of input ``x`` is the
    average of ``f_{sigma, Lambda_r}(z - x - c)`` over the coset
    representatives ``c`` of ``Lambda_{l+1} / Lambda_r``.  Lower levels are
    known and taken to be zero, which loses nothing by symmetry.
    """
    level = chain.check_level(level, partition=True)
    sigma = _check_sigma(sigma)
    top = chain.levels
    volume = chain.cell_volume(top)
    n = _grid_size(volume, sigma)
    z = _midpoints(volume, n)
    step = chain.cell_volume(level + 1)
    n_cosets = 2 ** (top - level - 1)
    shift = chain.coset_offset(level)
    q0 = np.zeros_like(z)
    q1 = np.zeros_like(z)
    for k in range(n_cosets):
        c = k * step
        q0 += aliased_gaussian_pdf_volume(z - c, sigma, volume)
        q1 += aliased_gaussian_pdf_volume(z - c - shift, sigma, volume)
    return _quantize_density(q0 / n_cosets, q1 / n_cosets, volume / n, q, upgrade)
