"""Vectorized symbol streams and tower walks against the exact oracles."""

from fractions import Fraction as F

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from angletower.angles import RayChoice, build_partition, itinerary
from angletower.streams import (FrontierReached, dyadic_symbol_streams,
                                is_dyadic, rational_symbol_stream,
                                trace_ensemble, walk_table)
from angletower.tower import build_tower

CHEB = RayChoice(2, (F(1, 2),))
DEND = RayChoice(2, (F(1, 6),))
PAIR = RayChoice(2, (F(5, 12), F(7, 12)))

PARTITIONS = [build_partition(rc) for rc in (CHEB, DEND, PAIR)]


def test_is_dyadic():
    assert is_dyadic(F(0))
    assert is_dyadic(F(3, 8))
    assert is_dyadic(F(1, 1 << 40))
    assert not is_dyadic(F(1, 3))
    assert not is_dyadic(F(5, 24))


@pytest.mark.parametrize("part", PARTITIONS,
                         ids=["cheb", "dend", "pair"])
def test_dyadic_streams_match_itinerary(part):
    n = 40
    K = n + 64
    rng = np.random.default_rng(99)
    numerators = [(int.from_bytes(rng.bytes((K + 7) // 8), "big")
                   % (1 << K)) | 1 for _ in range(25)]
    streams = dyadic_symbol_streams(numerators, K, n, part)
    for j, row in zip(numerators, streams):
        assert list(row) == list(itinerary(F(j, 1 << K), part, n))


@pytest.mark.parametrize("part", PARTITIONS,
                         ids=["cheb", "dend", "pair"])
def test_rational_streams_match_itinerary(part):
    for a in (F(1, 3), F(2, 7), F(13, 17), F(9, 31), F(5, 96), F(0)):
        got = rational_symbol_stream(a, 30, part)
        assert list(got) == list(itinerary(a, part, 30))


def test_boundary_prefix_tie_uses_exact_fallback():
    # an odd dyadic numerator whose top 64 bits coincide with those of
    # the non-dyadic boundary angle 5/24 forces the window comparison
    # into a tie that only exact arithmetic can break
    part = build_partition(PAIR)
    n = 20
    K = n + 64
    j = ((5 << K) // 24) | 1
    assert j >> (K - 64) == (5 << 64) // 24
    streams = dyadic_symbol_streams([j], K, n, part)
    assert list(streams[0]) == list(itinerary(F(j, 1 << K), part, n))


def test_dyadic_boundary_tie_is_exact_without_fallback():
    # hitting a pure-dyadic boundary angle exactly must pick the arc that
    # starts there (half-open arcs)
    part = build_partition(CHEB)
    K = 84
    j = 1 << (K - 2)
    streams = dyadic_symbol_streams([j], K, 20, part)
    assert list(streams[0]) == list(itinerary(F(1, 4), part, 20))


def test_walk_table_matches_edges():
    g = build_tower(CHEB, 6, extra_levels=4)
    table, levels = walk_table(g)
    assert table.shape == (len(g.domains), g.partition.size)
    for (src, sym), dst in g.edges.items():
        assert table[src, sym] == dst
    for i, dom in g.domains.items():
        assert levels[i] == dom.level
    # frontier rows carry no successors
    for i in g.frontier:
        assert (table[i] == -1).all()


@pytest.fixture(scope="module")
def cheb_graph():
    return build_tower(CHEB, 8, extra_levels=60)


def test_trace_ensemble_shapes_and_base(cheb_graph):
    angles = (F(0), F(1, 3), F(3, 1 << 30))
    ens = trace_ensemble(angles, [0.25, 0.25, 0.5], cheb_graph, 50)
    assert ens.count == 3
    assert ens.horizon == 50
    assert ens.states.shape == (3, 51)
    assert (ens.states[:, 0] == 0).all()
    assert ens.symbols.shape == (3, 50)


def test_trace_states_follow_edges(cheb_graph):
    g = cheb_graph
    ens = trace_ensemble((F(1, 3), F(1, 5)), [0.5, 0.5], g, 40)
    for s in range(2):
        for k in range(40):
            key = (int(ens.states[s, k]), int(ens.symbols[s, k]))
            assert g.edges[key] == ens.states[s, k + 1]


def test_trace_symbols_match_itinerary_mixed(cheb_graph):
    part = cheb_graph.partition
    angles = (F(5, 7), F(9, 1 << 20), F(1, 3), F(11, 1 << 33))
    ens = trace_ensemble(angles, [0.25] * 4, cheb_graph, 30)
    for s, a in enumerate(angles):
        assert list(ens.symbols[s]) == list(itinerary(a, part, 30))


def test_angle_at_and_level_matrix(cheb_graph):
    ens = trace_ensemble((F(1, 7),), [1.0], cheb_graph, 12)
    assert ens.angle_at(0, 0) == F(1, 7)
    assert ens.angle_at(0, 3) == F(8, 7) % 1
    lv = ens.level_matrix()
    assert lv.shape == ens.states.shape
    assert lv[0, 0] == 0


def test_trace_rejects_bad_inputs(cheb_graph):
    with pytest.raises(ValueError):
        trace_ensemble((F(1, 3),), [0.5, 0.5], cheb_graph, 10)
    with pytest.raises(ValueError):
        trace_ensemble((F(1, 3),), [1.0], cheb_graph, 0)


def test_frontier_reached_reports_deficit():
    g = build_tower(CHEB, 3)
    # 1/8 climbs one level per step and exits the expanded region
    with pytest.raises(FrontierReached) as exc:
        trace_ensemble((F(1, 8),), [1.0], g, 12)
    assert exc.value.needed_extra >= 12 - 1 - g.expand_limit
    assert 1 <= exc.value.step <= 12


def test_trace_is_deterministic(cheb_graph):
    angles = (F(3, 1 << 24), F(2, 5))
    a = trace_ensemble(angles, [0.5, 0.5], cheb_graph, 25)
    b = trace_ensemble(angles, [0.5, 0.5], cheb_graph, 25)
    assert (a.symbols == b.symbols).all()
    assert (a.states == b.states).all()


@settings(max_examples=40, deadline=None)
@given(st.integers(min_value=0, max_value=(1 << 30) - 1),
       st.sampled_from([0, 1, 2]))
def test_dyadic_stream_property(num, which):
    part = PARTITIONS[which]
    j = (num << 34) | 1
    K = 30 + 64
    streams = dyadic_symbol_streams([j], K, 30, part)
    assert list(streams[0]) == list(itinerary(F(j, 1 << K), part, 30))


@settings(max_examples=30, deadline=None)
@given(st.fractions(min_value=0, max_value=1, max_denominator=997))
def test_rational_stream_property(a):
    part = PARTITIONS[1]
    got = rational_symbol_stream(a % 1, 25, part)
    assert list(got) == list(itinerary(a % 1, part, 25))
