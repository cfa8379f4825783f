"""Numerics for one-dimensional binary lattice partition chains.

The chain is ``alpha * (Z / 2Z / ... / 2^(r-1) Z)``.  Level ``l`` (1-based)
is the lattice ``2^(l-1) * alpha * Z`` whose Voronoi cell is the half-open
interval ``[-V/2, V/2)`` with ``V = 2^(l-1) * alpha``.

All information quantities are reported in bits.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import entr

LN2 = math.log(2.0)

# Lattice points farther than TAIL_SIGMAS * sigma + V from the argument are
# dropped from the aliasing sum; exp(-50) keeps the truncation below 1e-21.
TAIL_SIGMAS = 10.0

SIMPSON_TOL = 1e-10


@dataclass(frozen=True)
class PartitionChain:
    """Scaled binary chain ``alpha * (Z / 2Z / ... / 2^(levels-1) Z)``."""

    alpha: float
    levels: int

    def __post_init__(self):
        if not (self.alpha > 0 and math.isfinite(self.alpha)):
            raise ValueError(f"alpha must be positive, got {self.alpha}")
        if int(self.levels) != self.levels or self.levels < 2:
            raise ValueError(f"levels must be an integer >= 2, got {self.levels}")

    def check_level(self, level: int, partition: bool = False) -> int:
        upper = self.levels - 1 if partition else self.levels
        if int(level) != level or not 1 <= level <= upper:
            raise ValueError(f"level must be in [1, {upper}], got {level}")
        return int(level)

    def cell_volume(self, level: int) -> float:
        """Volume ``2^(level-1) * alpha`` of the Voronoi cell of lattice ``level``."""
        level = self.check_level(level)
        return self.alpha * 2.0 ** (level - 1)

    def coset_offset(self, level: int) -> float:
        """Nonzero coset representative of the partition at ``level``."""
        return self.cell_volume(level)

    @property
    def n_partitions(self) -> int:
        return self.levels - 1


@dataclass(frozen=True)
class NoiseModel:
    """Noise standard deviations of the legitimate receiver and eavesdropper."""

    sigma_b: float
    sigma_e: float

    def __post_init__(self):
        if not self.sigma_b > 0:
            raise ValueError(f"sigma_b must be positive, got {self.sigma_b}")
        if not self.sigma_e > self.sigma_b:
            raise ValueError(
                f"sigma_e ({self.sigma_e}) must exceed sigma_b ({self.sigma_b})"
            )


def _check_sigma(sigma: float) -> float:
    if not sigma > 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    return float(sigma)


def reduce_mod(x, volume: float):
    """Reduce ``x`` into ``[-volume/2, volume/2)``."""
    x = np.asarray(x, dtype=float)
    r = x - volume * np.floor(x / volume + 0.5)
    # floating point can land exactly on the excluded upper endpoint
    r = np.where(r >= volume / 2, r - volume, r)
    r = np.where(r < -volume / 2, r + volume, r)
    return r if r.ndim else float(r)


def mod_lattice(x, chain: PartitionChain, level: int):
    """``x mod Lambda_level`` in the half-open Voronoi interval."""
    return reduce_mod(x, chain.cell_volume(level))


def _aliased_log_sum(n_reduced: np.ndarray, sigma: float, volume: float) -> np.ndarray:
    """log of sum_k exp(-((n - kV)^2 - n^2) / 2 sigma^2) for n in the Voronoi cell.

    The k = 0 term dominates inside the cell, so the sum is >= 1 and its log
    is well conditioned even when the individual terms underflow.
    """
    kmax = int(math.ceil(TAIL_SIGMAS * sigma / volume + 1.5))
    acc = np.ones_like(n_reduced)
    two_var = 2.0 * sigma * sigma
    for k in range(1, kmax + 1):
        shift = k * volume
        # (n - kV)^2 - n^2 = kV (kV - 2n)
        acc += np.exp(-shift * (shift - 2.0 * n_reduced) / two_var)
        acc += np.exp(-shift * (shift + 2.0 * n_reduced) / two_var)
    return np.log(acc)


def log_aliased_gaussian_pdf_volume(n, sigma: float, volume: float):
    """Natural log of the aliased Gaussian density for period ``volume``."""
    n_red = np.asarray(reduce_mod(n, volume), dtype=float)
    out = (
        -0.5 * math.log(2.0 * math.pi * sigma * sigma)
        - n_red * n_red / (2.0 * sigma * sigma)
        + _aliased_log_sum(n_red, sigma, volume)
    )
    return out if out.ndim else float(out)


def aliased_gaussian_pdf_volume(n, sigma: float, volume: float):
    return np.exp(log_aliased_gaussian_pdf_volume(n, sigma, volume))


def aliased_gaussian_pdf(n, sigma: float, chain: PartitionChain, level: int):
    """Lambda-aliased Gaussian density ``f_{sigma, Lambda_level}(n)``.

    The lattice sum keeps every point within ``10 sigma + V`` of ``n``.
    """
    sigma = _check_sigma(sigma)
    return aliased_gaussian_pdf_volume(n, sigma, chain.cell_volume(level))


def log_aliased_gaussian_pdf(n, sigma: float, chain: PartitionChain, level: int):
    sigma = _check_sigma(sigma)
    return log_aliased_gaussian_pdf_volume(n, sigma, chain.cell_volume(level))


def simpson_periodic(func, lo: float, hi: float, n0: int, tol: float = SIMPSON_TOL,
                     max_intervals: int = 1 << 24) -> float:
    """Composite Simpson rule, doubling the interval count until two
    successive estimates differ by less than ``tol``."""
    n = max(2, n0 + (n0 % 2))
    prev = None
    while True:
        z = np.linspace(lo, hi, n + 1)
        y = func(z)
        h = (hi - lo) / n
        est = h / 3.0 * (y[0] + y[-1] + 4.0 * y[1:-1:2].sum() + 2.0 * y[2:-1:2].sum())
        if prev is not None and abs(est - prev) < tol:
            return float(est)
        if n >= max_intervals:
            raise RuntimeError("Simpson refinement did not converge")
        prev = est
        n *= 2


def _start_intervals(sigma: float, volume: float) -> int:
    return max(64, 2 * int(math.ceil(4.0 * volume / sigma)))


@lru_cache(maxsize=4096)
def _entropy_bits(volume: float, sigma: float) -> float:
    def integrand(z):
        return entr(aliased_gaussian_pdf_volume(z, sigma, volume))

    h_nats = simpson_periodic(integrand, -volume / 2, volume / 2,
                              _start_intervals(sigma, volume))
    return h_nats / LN2


def differential_entropy(chain: PartitionChain, level: int, sigma: float) -> float:
    """Differential entropy ``h(Lambda, sigma^2)`` of the aliased noise, in bits."""
    sigma = _check_sigma(sigma)
    return _entropy_bits(chain.cell_volume(level), sigma)


def gaussian_entropy(sigma: float) -> float:
    """``0.5 * log2(2 pi e sigma^2)``."""
    sigma = _check_sigma(sigma)
    return 0.5 * math.log2(2.0 * math.pi * math.e * sigma * sigma)


def mod_channel_capacity(chain: PartitionChain, level: int, sigma: float) -> float:
    """Capacity ``log2 V(Lambda) - h(Lambda, sigma^2)`` of the mod-Lambda channel."""
    c = math.log2(chain.cell_volume(level)) - differential_entropy(chain, level, sigma)
    # quadrature noise can push the uniform limit a hair below zero
    return max(c, 0.0)


def partition_channel_capacity(chain: PartitionChain, level: int, sigma: float) -> float:
    """Capacity of the ``Lambda_level / Lambda_{level+1}`` channel, in bits."""
    level = chain.check_level(level, partition=True)
    return (mod_channel_capacity(chain, level + 1, sigma)
            - mod_channel_capacity(chain, level, sigma))


def vnr(chain: PartitionChain, level: int, sigma: float) -> float:
    """Volume-to-noise ratio ``V(Lambda)^2 / sigma^2`` (dimension one)."""
    sigma = _check_sigma(sigma)
    return chain.cell_volume(level) ** 2 / sigma ** 2
