"""Vectorized tracing of sample ensembles through the Markov extension.

Symbol streams are exact.  Dyadic angles j / 2^K go through a sliding
64-bit window compared against integer boundary prefixes, with an exact
fallback on the (never observed, but handled) event that a window ties a
non-dyadic boundary prefix; all other rational angles are stepped with
Fraction arithmetic.  The tower walk itself is an integer table
iteration, so tracing scales to tens of thousands of samples by horizons
in the thousands.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .angles import CirclePartition, format_angle, times_d
from .tower import TowerGraph

_WINDOW = 64


def is_dyadic(a: Fraction) -> bool:
    den = a.denominator
    return den & (den - 1) == 0


def _bit_matrix(numerators, K: int) -> np.ndarray:
    """K-bit big-endian expansions, one row per numerator, values in {0,1}.

    Column k holds the bit of weight 2^(K-1-k), i.e. the k-th binary digit
    of the angle j / 2^K.
    """
    nbytes = (K + 7) // 8
    rows = np.empty((len(numerators), nbytes), dtype=np.uint8)
    for i, j in enumerate(numerators):
        rows[i] = np.frombuffer(int(j).to_bytes(nbytes, "big"), dtype=np.uint8)
    bits = np.unpackbits(rows, axis=1)
    return bits[:, 8 * nbytes - K:]


def dyadic_symbol_streams(numerators, K: int, n: int,
                          partition: CirclePartition) -> np.ndarray:
    """Symbol matrix (samples x n) for the angles j / 2^K, j in numerators.

    The symbol at step k is decided from bits k..k+63 of j compared against
    the 64-bit prefixes of the boundary angles.  A tie against a dyadic
    boundary is already exact (the boundary's tail is all zeros); a tie
    against a non-dyadic boundary is resolved with Fraction arithmetic.
    Requires K >= n + 64 so every compared window is fully inside j.
    """
    if n + _WINDOW > K:
        raise ValueError(
            f"need K >= n + {_WINDOW} guard bits, got K={K} for n={n}")
    if partition.size > 255:
        raise ValueError("more than 255 symbols does not fit uint8 streams")
    count = len(numerators)
    syms = np.empty((count, n), dtype=np.uint8)
    if count == 0 or n == 0:
        return syms
    bits = _bit_matrix(numerators, K)
    boundary = partition.boundary
    scale = 1 << _WINDOW
    t64 = np.array([int(b * scale) for b in boundary], dtype=np.uint64)
    ambiguous = np.array([(b * scale).denominator != 1 for b in boundary])
    ambiguous_vals = t64[ambiguous]
    N = partition.size
    mask = (1 << K) - 1

    val = np.zeros(count, dtype=np.uint64)
    one = np.uint64(1)
    for i in range(_WINDOW):
        val = (val << one) | bits[:, i]
    for k in range(n):
        idx = np.searchsorted(t64, val, side="right").astype(np.int16) - 1
        np.copyto(idx, N - 1, where=idx < 0)
        if ambiguous_vals.size and np.isin(val, ambiguous_vals).any():
            for s in np.nonzero(np.isin(val, ambiguous_vals))[0]:
                num = (int(numerators[s]) << k) & mask
                idx[s] = partition.symbol_of(Fraction(num, 1 << K))
        syms[:, k] = idx.astype(np.uint8)
        if k + 1 < n:
            val = (val << one) | bits[:, k + _WINDOW]
    return syms


def rational_symbol_stream(a: Fraction, n: int,
                           partition: CirclePartition) -> np.ndarray:
    """Exact symbol stream of one rational angle, stepped with Fractions."""
    d = partition.degree
    out = np.empty(n, dtype=np.uint8)
    x = a % 1
    for k in range(n):
        out[k] = partition.symbol_of(x)
        x = times_d(x, d)
    return out


# --------------------------------------------------------------------------
# tower walk


class FrontierReached(Exception):
    """A trace stepped into an unexpanded frontier domain.

    The tower is too shallow for the requested horizon; rebuild with
    extra_levels increased by at least `needed_extra`.
    """

    def __init__(self, step: int, needed_extra: int):
        self.step = step
        self.needed_extra = needed_extra
        super().__init__(
            f"trace needs an out-edge of a frontier domain at step {step}; "
            f"rebuild the tower with extra_levels at least {needed_extra} "
            f"larger")


def walk_table(g: TowerGraph) -> tuple[np.ndarray, np.ndarray]:
    """Dense transition table (domains x symbols, -1 absent) and level array.

    Domain ids are BFS discovery order, hence contiguous from 0, so ids
    index the table rows directly.
    """
    n_dom = len(g.domains)
    if sorted(g.domains) != list(range(n_dom)):
        raise ValueError("domain ids are not contiguous")
    N = g.partition.size
    table = np.full((n_dom, N), -1, dtype=np.int32)
    for (src, sym), dst in g.edges.items():
        table[src, sym] = dst
    levels = np.array([g.domains[i].level for i in range(n_dom)],
                      dtype=np.int32)
    return table, levels


@dataclass
class TraceEnsemble:
    """Traced lifts of a weighted angle ensemble.

    states[s, k] is the domain id of sample s after k steps (column 0 is
    the base for every sample); symbols[s, k] the partition symbol of the
    angle at step k.  states has horizon + 1 columns so one-step
    comparisons at the final time are available.
    """

    graph: TowerGraph
    angles: tuple[Fraction, ...]
    weights: np.ndarray
    symbols: np.ndarray
    states: np.ndarray
    levels: np.ndarray

    @property
    def count(self) -> int:
        return len(self.angles)

    @property
    def horizon(self) -> int:
        return self.symbols.shape[1]

    def angle_at(self, sample: int, k: int) -> Fraction:
        """Exact angle of one sample after k doubling steps."""
        d = self.graph.partition.degree
        return self.angles[sample] * d ** k % 1

    def level_matrix(self) -> np.ndarray:
        return self.levels[self.states]


def trace_ensemble(angles, weights, g: TowerGraph, n: int,
                   dyadic_bits: int | None = None) -> TraceEnsemble:
    """Trace every angle n steps from the base through the tower.

    Dyadic angles are batched through the windowed stream; other rationals
    are stepped exactly one by one.  dyadic_bits forces the common
    denominator exponent for the batch (defaults to the largest present,
    raised to n + 64 when needed).
    """
    if n < 1:
        raise ValueError("horizon must be >= 1")
    angles = tuple(Fraction(a) % 1 for a in angles)
    weights = np.asarray(weights, dtype=np.float64)
    if weights.shape != (len(angles),):
        raise ValueError("one weight per angle required")
    count = len(angles)
    partition = g.partition
    syms = np.empty((count, n), dtype=np.uint8)

    dyadic_idx = [i for i, a in enumerate(angles) if is_dyadic(a)]
    if dyadic_idx:
        K = max(n + _WINDOW, dyadic_bits or 0,
                max(angles[i].denominator.bit_length() - 1
                    for i in dyadic_idx))
        numerators = [angles[i].numerator
                      << (K - (angles[i].denominator.bit_length() - 1))
                      for i in dyadic_idx]
        syms[dyadic_idx] = dyadic_symbol_streams(numerators, K, n, partition)
    for i, a in enumerate(angles):
        if not is_dyadic(a):
            syms[i] = rational_symbol_stream(a, n, partition)

    table, levels = walk_table(g)
    states = np.empty((count, n + 1), dtype=np.int32)
    states[:, 0] = 0
    for k in range(n):
        nxt = table[states[:, k], syms[:, k]]
        if (nxt < 0).any():
            raise FrontierReached(k + 1, max(1, n - 1 - g.expand_limit))
        states[:, k + 1] = nxt
    return TraceEnsemble(g, angles, weights, syms, states, levels)
