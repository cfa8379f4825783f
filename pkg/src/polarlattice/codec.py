"""Multilevel encoding onto the partition chain and multistage SC decoding.

Level ``l`` codeword bits ``c_l`` combine into the symbol
``x = alpha * sum_l 2^(l-1) c_l`` reduced into the Voronoi cell of
``Lambda_r``.  Decoding runs successive cancellation level by level; level
``l`` sees the ``Lambda_{l+1}``-aliased Gaussian likelihood after removing
the contribution of the already decided lower levels.

Functions prefixed ``batch_`` operate on arrays with a leading frame axis.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

import numpy as np

from .construction import LevelCode, SecrecyCodeSpec
from .lattice import PartitionChain, log_aliased_gaussian_pdf_volume, reduce_mod

BIT = np.uint8


def frame_rng(seed: int, frame: int, stream: int = 0) -> np.random.Generator:
    """Counter-based generator for one frame.

    The Philox key packs the 64-bit ``seed`` with the frame index and a
    stream tag (0 for bits, 1 for noise), so every frame draws from an
    independent stream regardless of processing order.
    """
    seed = int(seed) & 0xFFFF_FFFF_FFFF_FFFF
    key = (seed << 64) | ((int(frame) & 0x7FFF_FFFF_FFFF_FFFF) << 1) | (stream & 1)
    return np.random.Generator(np.random.Philox(key=key))


def polar_transform(u: np.ndarray) -> np.ndarray:
    """``x = u F^{(x)n}`` over GF(2) along the last axis (natural order)."""
    x = np.array(u, dtype=BIT, copy=True)
    n = x.shape[-1]
    if n & (n - 1):
        raise ValueError("length must be a power of two")
    h = 1
    while h < n:
        v = x.reshape(x.shape[:-1] + (n // (2 * h), 2, h))
        v[..., 0, :] ^= v[..., 1, :]
        h *= 2
    return x


@dataclass(frozen=True, eq=False)
class Frame:
    """Transmitted symbols, one per dimension, in the Voronoi cell of ``Lambda_r``."""

    symbols: np.ndarray

    def __len__(self):
        return self.symbols.size

    def on_grid(self, chain: PartitionChain, atol: float = 1e-9) -> bool:
        top = chain.cell_volume(chain.levels)
        s = self.symbols
        if np.any(s < -top / 2) or np.any(s >= top / 2):
            return False
        k = s / chain.alpha
        return bool(np.all(np.abs(k - np.round(k)) <= atol))


def batch_modulate(codewords: Sequence[np.ndarray], chain: PartitionChain) -> np.ndarray:
    """Combine per-level codeword bits into reduced lattice symbols."""
    acc = np.zeros(np.shape(codewords[0]), dtype=np.int64)
    for level, c in enumerate(codewords, start=1):
        acc += np.asarray(c, dtype=np.int64) << (level - 1)
    return reduce_mod(chain.alpha * acc, chain.cell_volume(chain.levels))


# -- message layout ------------------------------------------------------------

def _split_message(message_bits: np.ndarray, spec: SecrecyCodeSpec) -> list[np.ndarray]:
    """Cut a ``(..., total)`` message array into per-level slot arrays."""
    message_bits = np.asarray(message_bits, dtype=BIT)
    total = spec.message_bits_per_block
    if message_bits.shape[-1] != total:
        raise ValueError(f"message has {message_bits.shape[-1]} bits, expected {total}")
    out, start = [], 0
    for lv in spec.levels:
        k = lv.message_slots.size
        out.append(message_bits[..., start:start + k])
        start += k
    return out


def _level_values(lv: LevelCode, frozen_values) -> np.ndarray:
    c = lv.partition.c
    if frozen_values is None:
        return np.zeros(c.size, dtype=BIT)
    vals = np.asarray(frozen_values, dtype=BIT)
    if vals.shape[-1] != c.size:
        raise ValueError("frozen values do not match the frozen set size")
    return vals


def batch_fill(spec: SecrecyCodeSpec, messages: Sequence[np.ndarray],
               randoms: Sequence[np.ndarray], chained: Sequence[np.ndarray],
               d_bits: Sequence[np.ndarray], frozen_values=None) -> list[np.ndarray]:
    """Assemble per-level ``u`` vectors (frame axis first) from their parts."""
    us = []
    for k, lv in enumerate(spec.levels):
        p = lv.partition
        batch = np.shape(messages[k])[:-1]
        u = np.zeros(batch + (spec.n,), dtype=BIT)
        u[..., lv.message_slots] = messages[k]
        u[..., lv.chain_slots] = chained[k]
        u[..., p.b] = randoms[k]
        u[..., p.d] = d_bits[k]
        u[..., p.c] = _level_values(lv, None if frozen_values is None else frozen_values[k])
        us.append(u)
    return us


def draw_block_randomness(spec: SecrecyCodeSpec, rng: np.random.Generator, batch=()):
    """Random fill for one block: (d bits, b bits, default chaining bits) per level.

    The draw order is fixed so that a frame's stream reproduces its block.
    """
    batch = tuple(batch)
    d_bits = [rng.integers(0, 2, batch + (lv.partition.d.size,), dtype=BIT) for lv in spec.levels]
    b_bits = [rng.integers(0, 2, batch + (lv.partition.b.size,), dtype=BIT) for lv in spec.levels]
    fill = [rng.integers(0, 2, batch + (lv.chain_slots.size,), dtype=BIT) for lv in spec.levels]
    return d_bits, b_bits, fill


def encode(message_bits, random_source: np.random.Generator, spec: SecrecyCodeSpec,
           frozen_values=None, chained_bits=None) -> Frame:
    """Encode one block.

    ``chained_bits`` supplies the per-level values of the chaining slots
    (the next block's ``d`` bits); when omitted they are drawn at random.
    """
    messages = _split_message(message_bits, spec)
    d_bits, b_bits, fill = draw_block_randomness(spec, random_source)
    if chained_bits is not None:
        fill = [np.asarray(v, dtype=BIT) for v in chained_bits]
        for v, lv in zip(fill, spec.levels):
            if v.shape[-1] != lv.chain_slots.size:
                raise ValueError("chained bits do not match the chaining slot count")
    us = batch_fill(spec, messages, b_bits, fill, d_bits, frozen_values)
    codewords = [polar_transform(u) for u in us]
    return Frame(batch_modulate(codewords, spec.chain))


def encode_seed(d_bits: Sequence[np.ndarray], spec: SecrecyCodeSpec) -> Frame:
    """Seed block carrying the first block's ``d`` bits on the seed slots;
    every other position is frozen to zero."""
    codewords = []
    for v, lv in zip(d_bits, spec.levels):
        v = np.asarray(v, dtype=BIT)
        u = np.zeros(v.shape[:-1] + (spec.n,), dtype=BIT)
        u[..., lv.seed_slots] = v
        codewords.append(polar_transform(u))
    return Frame(batch_modulate(codewords, spec.chain))


# -- successive cancellation -------------------------------------------------------

def _f(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Exact check-node update ``2 atanh(tanh(a/2) tanh(b/2))`` in stable form."""
    return (np.sign(a) * np.sign(b) * np.minimum(np.abs(a), np.abs(b))
            + np.log1p(np.exp(-np.abs(a + b))) - np.log1p(np.exp(-np.abs(a - b))))


def _sc(llr: np.ndarray, fixed: np.ndarray, values: np.ndarray):
    n = llr.shape[-1]
    if fixed.all():
        return values, polar_transform(values)
    if n == 1:
        u = np.where(fixed, values, (llr < 0).astype(BIT))
        return u, u
    h = n // 2
    l1, l2 = llr[:, :h], llr[:, h:]
    ua, xa = _sc(_f(l1, l2), fixed[:h], values[:, :h])
    ub, xb = _sc(l2 + (1.0 - 2.0 * xa) * l1, fixed[h:], values[:, h:])
    return np.concatenate([ua, ub], axis=1), np.concatenate([xa ^ xb, xb], axis=1)


def sc_decode(llr: np.ndarray, fixed: np.ndarray, values: np.ndarray
              ) -> tuple[np.ndarray, np.ndarray]:
    """Successive-cancellation decoding of a batch of frames.

    ``llr`` holds ``log P(x=0)/P(x=1)`` per code symbol, shape ``(B, N)``.
    ``fixed`` marks positions whose ``u`` values are known and given by
    ``values`` (shape ``(B, N)``).  Unknown positions decide 1 only on a
    strictly negative LLR.  Returns ``(u_hat, x_hat)``.
    """
    llr = np.atleast_2d(np.asarray(llr, dtype=float))
    values = np.broadcast_to(np.asarray(values, dtype=BIT), llr.shape).copy()
    fixed = np.asarray(fixed, dtype=bool)
    return _sc(llr, fixed, values)


def level_llr(observations: np.ndarray, level: int, chain: PartitionChain, sigma: float,
              lower_codewords: Sequence[np.ndarray] = ()) -> np.ndarray:
    """Per-symbol LLRs of level ``level`` given decided lower-level codewords."""
    z = np.asarray(observations, dtype=float)
    offset = np.zeros_like(z)
    for k, c in enumerate(lower_codewords, start=1):
        offset = offset + chain.alpha * (1 << (k - 1)) * np.asarray(c, dtype=float)
    volume = chain.cell_volume(level + 1)
    shift = chain.coset_offset(level)
    y = z - offset
    return (log_aliased_gaussian_pdf_volume(y, sigma, volume)
            - log_aliased_gaussian_pdf_volume(y - shift, sigma, volume))


def _level_mask(lv: LevelCode, n: int, batch: int, frozen_values=None, known_d=None):
    fixed = np.zeros(n, dtype=bool)
    values = np.zeros((batch, n), dtype=BIT)
    p = lv.partition
    fixed[p.c] = True
    values[:, p.c] = _level_values(lv, frozen_values)
    if known_d is not None:
        fixed[p.d] = True
        values[:, p.d] = known_d
    return fixed, values


def sc_decode_level(observations, level: int, spec: SecrecyCodeSpec,
                    lower_level_decisions: Sequence[np.ndarray] = (),
                    frozen_values=None, known_d=None, sigma: float | None = None
                    ) -> np.ndarray:
    """SC decisions ``u_hat`` of one level for one or more frames.

    ``lower_level_decisions`` are the decided codewords of levels
    ``1..level-1``.  Frozen positions, and ``d`` positions when ``known_d``
    is supplied, are forced to their known values.
    """
    obs = np.atleast_2d(np.asarray(observations, dtype=float))
    lv = spec.levels[level - 1]
    sigma = spec.noise.sigma_b if sigma is None else sigma
    llr = level_llr(obs, level, spec.chain, sigma,
                    [np.atleast_2d(c) for c in lower_level_decisions])
    fixed, values = _level_mask(lv, spec.n, obs.shape[0], frozen_values, known_d)
    u, _ = sc_decode(llr, fixed, values)
    return u if np.ndim(observations) > 1 else u[0]


@dataclass
class DecodeResult:
    """Per-level decisions of a multistage decode (frame axis first)."""

    u: list[np.ndarray]
    codewords: list[np.ndarray]

    def message(self, spec: SecrecyCodeSpec) -> np.ndarray:
        return np.concatenate([u[..., lv.message_slots] for u, lv in zip(self.u, spec.levels)],
                              axis=-1)

    def chained(self, spec: SecrecyCodeSpec) -> list[np.ndarray]:
        return [u[..., lv.chain_slots] for u, lv in zip(self.u, spec.levels)]

    def level_ok(self, truth: Sequence[np.ndarray]) -> np.ndarray:
        """Boolean ``(B, levels)``: level decoded without error."""
        return np.stack([np.all(u == t, axis=-1) for u, t in zip(self.u, truth)], axis=-1)


def batch_multistage_decode(observations: np.ndarray, spec: SecrecyCodeSpec,
                            known_d: Sequence[np.ndarray] | None = None,
                            sigma: float | None = None, frozen_values=None,
                            masks=None) -> DecodeResult:
    """Decode levels ``1..r-1`` in order, feeding codewords forward.

    ``masks`` overrides the per-level ``(fixed, values)`` pairs; it is used
    for the seed block.
    """
    obs = np.atleast_2d(np.asarray(observations, dtype=float))
    sigma = spec.noise.sigma_b if sigma is None else sigma
    us, cws = [], []
    for k, lv in enumerate(spec.levels):
        llr = level_llr(obs, k + 1, spec.chain, sigma, cws)
        if masks is not None:
            fixed, values = masks[k]
        else:
            fixed, values = _level_mask(
                lv, spec.n, obs.shape[0],
                None if frozen_values is None else frozen_values[k],
                None if known_d is None else known_d[k])
        u, x = sc_decode(llr, fixed, values)
        us.append(u)
        cws.append(x)
    return DecodeResult(us, cws)


def multistage_decode(frame_observation, spec: SecrecyCodeSpec, known_d=None,
                      sigma: float | None = None) -> tuple[np.ndarray, DecodeResult]:
    """Message bits (and full per-level decisions) of one observed frame."""
    res = batch_multistage_decode(frame_observation, spec,
                                  None if known_d is None else
                                  [np.atleast_2d(v) for v in known_d], sigma)
    return res.message(spec)[0], res


def seed_masks(spec: SecrecyCodeSpec, batch: int):
    out = []
    for lv in spec.levels:
        fixed = np.ones(spec.n, dtype=bool)
        fixed[lv.seed_slots] = False
        out.append((fixed, np.zeros((batch, spec.n), dtype=BIT)))
    return out


def decode_seed(observations, spec: SecrecyCodeSpec, sigma: float | None = None
                ) -> list[np.ndarray]:
    obs = np.atleast_2d(np.asarray(observations, dtype=float))
    res = batch_multistage_decode(obs, spec, sigma=sigma, masks=seed_masks(spec, obs.shape[0]))
    return [u[:, lv.seed_slots] for u, lv in zip(res.u, spec.levels)]


# -- block chaining ------------------------------------------------------------------

def chain_encode_sequence(messages: Sequence[np.ndarray], spec: SecrecyCodeSpec,
                          seed: int = 0, first_frame: int = 0) -> list[Frame]:
    """Encode ``k`` message blocks preceded by a seed block.

    Frame ``first_frame + t`` uses its own random stream; ``t = 0`` is the
    seed.  Block ``t`` draws its own ``d`` bits, which travel in the
    chaining slots of block ``t - 1`` (or the seed block for ``t = 1``).
    The last block fills its chaining slots with fresh random bits.
    """
    k = len(messages)
    if k != spec.blocks:
        raise ValueError(f"expected {spec.blocks} message blocks, got {k}")
    draws = [draw_block_randomness(spec, frame_rng(seed, first_frame + t))
             for t in range(1, k + 1)]
    frames = [encode_seed(draws[0][0], spec)]
    for t in range(k):
        d_bits, b_bits, fill = draws[t]
        nxt = draws[t + 1][0] if t + 1 < k else fill
        us = batch_fill(spec, _split_message(messages[t], spec), b_bits, nxt, d_bits)
        frames.append(Frame(batch_modulate([polar_transform(u) for u in us], spec.chain)))
    return frames


def chain_decode_sequence(observations: Sequence[np.ndarray], spec: SecrecyCodeSpec,
                          sigma: float | None = None) -> list[np.ndarray]:
    """Decode a seed block and ``k`` chained blocks in transmission order."""
    if len(observations) != spec.blocks + 1:
        raise ValueError(f"expected {spec.blocks + 1} frames, got {len(observations)}")
    known = decode_seed(observations[0], spec, sigma)
    out = []
    for obs in observations[1:]:
        res = batch_multistage_decode(obs, spec, known_d=known, sigma=sigma)
        out.append(res.message(spec)[0])
        known = res.chained(spec)
    return out


def audit_chaining(spec: SecrecyCodeSpec) -> list[str]:
    """Problems with the placement of chained ``d`` bits (empty when sound)."""
    issues = []
    for k, lv in enumerate(spec.levels, start=1):
        p = lv.partition
        if not np.isin(lv.chain_slots, p.a).all():
            issues.append(f"level {k}: chained bits outside the secure message set")
        if lv.chain_slots.size != p.d.size:
            issues.append(f"level {k}: {lv.chain_slots.size} chaining slots for |d| = {p.d.size}")
        if not np.array_equal(lv.chain_slots, p.a[:p.d.size]):
            issues.append(f"level {k}: chaining slots are not the lowest message indices")
        if not np.isin(lv.seed_slots, p.reliable).all():
            issues.append(f"level {k}: seed slots outside the reliable set")
    return issues


def net_rate(spec: SecrecyCodeSpec):
    """Message bits per dimension over a seed block plus ``k`` chained blocks,
    as an exact fraction."""
    k = spec.blocks
    return Fraction(k * spec.message_bits_per_block, (k + 1) * spec.n)


# -- serialization -------------------------------------------------------------------

def frames_to_csv(rows) -> str:
    """One frame (or observation) per line, 17 significant digits."""
    rows = np.atleast_2d(np.asarray([getattr(r, "symbols", r) for r in rows], dtype=float))
    return "".join(",".join(f"{v:.17g}" for v in row) + "\n" for row in rows)


def frames_from_csv(text: str) -> np.ndarray:
    return np.array([[float(v) for v in ln.split(",")]
                     for ln in text.splitlines() if ln.strip()])


def bits_to_hex(bits) -> str:
    """Hex string of a bit vector, most significant bit first, zero-padded to
    whole bytes at the end."""
    bits = np.asarray(bits, dtype=BIT).ravel()
    return np.packbits(bits).tobytes().hex()


def hex_to_bits(text: str, n_bits: int) -> np.ndarray:
    bits = np.unpackbits(np.frombuffer(bytes.fromhex(text), dtype=np.uint8))
    if bits.size < n_bits:
        raise ValueError(f"hex string holds {bits.size} bits, need {n_bits}")
    return bits[:n_bits].astype(BIT)
