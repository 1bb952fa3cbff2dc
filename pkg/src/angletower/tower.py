"""Markov extension of the angle dynamics, cut at the marked critical orbit.

Domains are subsets of the circle (arc-sets) decorated with cutpoints: marked
angles remembering which forward image of the critical point cut the domain
there and how long ago (the age).  The base domain is the full circle with no
cutpoints.  One step maps the part of a domain inside one partition arc
forward, ages the surviving cutpoints, and cuts at the critical point whenever
the arc boundary is touched.  Domains with identical arc-sets and identical
cutpoint decorations are identified, which keeps the graph finite per level.

Everything here is exact rational arithmetic; the graph is truncated at a
configurable level, with unexpanded domains kept as frontier markers so
escape across the truncation stays accounted for.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

from .angles import (
    ArcSet, CirclePartition, RayChoice, build_partition, format_angle,
    parse_angle, times_d,
)


@dataclass(frozen=True, order=True)
class CutPoint:
    """A marked point of a domain: the critical orbit point of the given age.

    age a marks the a-th forward image of the critical point; origin indexes
    which critical point (always 0 for unicritical maps); angles is the sorted
    tuple of this point's external angles present in the domain.
    """

    age: int
    origin: int
    angles: tuple[Fraction, ...]

    def to_json(self) -> dict:
        return {"age": self.age, "origin": self.origin,
                "angles": [format_angle(a) for a in self.angles]}


@dataclass(frozen=True)
class Domain:
    """One vertex of the tower: an arc-set plus its cutpoint decorations."""

    id: int
    arcset: ArcSet
    cutpoints: tuple[CutPoint, ...]
    level: int
    is_base: bool = False

    def cutpoint_angles(self) -> tuple[Fraction, ...]:
        return tuple(a for cp in self.cutpoints for a in cp.angles)

    def age_counts(self) -> dict[int, int]:
        out: dict[int, int] = {}
        for cp in self.cutpoints:
            out[cp.age] = out.get(cp.age, 0) + 1
        return out

    def to_json(self) -> dict:
        return {"id": self.id, "level": self.level,
                "arcs": self.arcset.to_pairs(),
                "cutpoints": [cp.to_json() for cp in self.cutpoints]}


Candidate = tuple[ArcSet, tuple[CutPoint, ...]]


def _candidate_key(arcset: ArcSet, cutpoints: tuple[CutPoint, ...]):
    return (arcset.components, cutpoints)


def _level_of(cutpoints: Sequence[CutPoint]) -> int:
    return max((cp.age for cp in cutpoints), default=0)


def step(domain: Domain, symbol: int, partition: CirclePartition) -> Candidate | None:
    """Image of the part of a domain inside one partition arc.

    Returns the candidate (arc-set, cutpoints) of the successor domain, or
    None when the domain does not meet the arc.  Cutpoints with an angle in
    the closure of the intersection survive with age+1 and doubled angles; a
    touch of either arc endpoint (the critical point) creates the age-1
    cutpoint at the image angles.
    """
    d = partition.degree
    start, length = partition.arcs[symbol]
    piece = domain.arcset.intersect_arc(start, length)
    if piece.is_empty:
        return None
    image = piece.image_times_d(d)

    carried: dict[tuple[int, int], set[Fraction]] = {}
    for cp in domain.cutpoints:
        hit = tuple(a for a in cp.angles if piece.closure_contains(a))
        if hit:
            carried.setdefault((cp.age + 1, cp.origin), set()).update(
                times_d(a, d) for a in hit)

    end = (start + length) % 1
    born = {times_d(b, d) for b in (start, end) if piece.closure_contains(b)}
    if born:
        # carried keys all have age >= 2, so the age-1 slot is always free
        carried[(1, 0)] = born

    cutpoints = tuple(sorted(
        CutPoint(age, origin, tuple(sorted(angles)))
        for (age, origin), angles in carried.items()))
    if not cutpoints:
        # images are cut either at the critical point (arc endpoints touched)
        # or at a surviving cutpoint; a bare candidate cannot occur
        raise AssertionError("successor domain with no cutpoints")
    return image, cutpoints


@dataclass
class TowerGraph:
    """Truncated tower: identified domains, labeled edges, frontier markers.

    Domains of level <= truncation + extra_levels are expanded (their
    out-edges recorded); deeper domains are materialized but not expanded and
    listed in `frontier`.  Domain ids are BFS discovery order, so rebuilding
    with the same configuration reproduces identical ids.
    """

    partition: CirclePartition
    truncation: int
    extra_levels: int
    domains: dict[int, Domain] = field(default_factory=dict)
    edges: dict[tuple[int, int], int] = field(default_factory=dict)
    frontier: set[int] = field(default_factory=set)
    _index: dict = field(default_factory=dict, repr=False)

    @property
    def base(self) -> Domain:
        return self.domains[0]

    @property
    def expand_limit(self) -> int:
        return self.truncation + self.extra_levels

    def domain_count(self, *, within_truncation=False) -> int:
        if within_truncation:
            return sum(1 for d in self.domains.values()
                       if d.level <= self.truncation)
        return len(self.domains)

    def successors(self, domain_id: int) -> list[tuple[int, int]]:
        """(symbol, successor id) pairs for an expanded domain."""
        return [(s, self.edges[(domain_id, s)])
                for s in range(self.partition.size)
                if (domain_id, s) in self.edges]

    def is_expanded(self, domain_id: int) -> bool:
        return domain_id not in self.frontier

    def identify(self, candidate: Candidate) -> int:
        """Id of the candidate domain, inserting it if never seen."""
        arcset, cutpoints = candidate
        key = _candidate_key(arcset, cutpoints)
        found = self._index.get(key)
        if found is not None:
            return found
        did = len(self.domains)
        dom = Domain(did, arcset, cutpoints, _level_of(cutpoints),
                     is_base=(did == 0 and not cutpoints and arcset.is_full))
        self.domains[did] = dom
        self._index[key] = did
        return did

    def level_counts(self) -> dict[int, int]:
        out: dict[int, int] = {}
        for d in self.domains.values():
            out[d.level] = out.get(d.level, 0) + 1
        return dict(sorted(out.items()))

    # -- serialization -----------------------------------------------------

    def config_json(self) -> dict:
        rc = self.partition.ray_choice
        return {"degree": rc.degree,
                "critical_value_angles": [format_angle(a) for a in rc.angles],
                "kappa": rc.kappa,
                "truncation": self.truncation,
                "extra_levels": self.extra_levels}

    def to_json(self) -> dict:
        return {
            "config": self.config_json(),
            "domains": [self.domains[i].to_json()
                        for i in sorted(self.domains)],
            "edges": [{"from": f, "symbol": s, "to": t}
                      for (f, s), t in sorted(self.edges.items())],
            "frontier": sorted(self.frontier),
        }

    def to_dot(self) -> str:
        """Graphviz digraph with one rank per level."""
        lines = ["digraph tower {", "  rankdir=BT;",
                 '  node [shape=box, fontsize=10];']
        by_level: dict[int, list[int]] = {}
        for d in self.domains.values():
            by_level.setdefault(d.level, []).append(d.id)
        for lvl in sorted(by_level):
            ids = sorted(by_level[lvl])
            names = []
            for i in ids:
                d = self.domains[i]
                ages = ",".join(str(cp.age) for cp in d.cutpoints) or "-"
                style = ', style=dashed' if i in self.frontier else ''
                lines.append(f'  d{i} [label="D{i} L{lvl} ages:{ages}"{style}];')
                names.append(f"d{i}")
            lines.append(f'  {{ rank=same; {"; ".join(names)} }}')
        for (f, s), t in sorted(self.edges.items()):
            lines.append(f'  d{f} -> d{t} [label="{s}"];')
        lines.append("}")
        return "\n".join(lines)


def build_base() -> Candidate:
    return ArcSet.full_circle(), ()


def build_tower(ray_choice: RayChoice, truncation: int, extra_levels: int = 0,
                partition: CirclePartition | None = None) -> TowerGraph:
    """Breadth-first construction of the truncated tower.

    Expands every domain of level <= truncation + extra_levels; successors
    beyond that are materialized as frontier markers with no out-edges.
    Terminates because all arc endpoints and cutpoint angles live in the
    finite forward-orbit field of the chosen angles, so there are finitely
    many identified domains per level.
    """
    if truncation < 0:
        raise ValueError("truncation must be >= 0")
    if extra_levels < 0:
        raise ValueError("extra_levels must be >= 0")
    part = partition or build_partition(ray_choice)
    g = TowerGraph(part, truncation, extra_levels)
    base_id = g.identify(build_base())
    pending = [base_id]
    while pending:
        nxt: list[int] = []
        for did in pending:
            dom = g.domains[did]
            if dom.level > g.expand_limit:
                g.frontier.add(did)
                continue
            for sym in range(part.size):
                cand = step(dom, sym, part)
                if cand is None:
                    continue
                known = len(g.domains)
                tid = g.identify(cand)
                g.edges[(did, sym)] = tid
                if tid >= known:
                    nxt.append(tid)
        pending = nxt
    return g


# --------------------------------------------------------------------------
# structural checks


@dataclass
class StructuralReport:
    level_counts: dict[int, int]
    per_level_bound: int
    bound_violations: list[int]
    level_jump_violations: list[tuple[int, int, int]]
    markov_failures: list[tuple[int, int]]
    age_multiplicity_violations: list[int]
    base_in_edges: int
    sideways_edges: list[tuple[int, int, int]]

    @property
    def passed(self) -> bool:
        return not (self.bound_violations or self.level_jump_violations
                    or self.markov_failures or self.age_multiplicity_violations
                    or self.base_in_edges)


def structural_checks(g: TowerGraph) -> StructuralReport:
    """Verify the tower's combinatorial guarantees on the built graph.

    Checks, for every recorded edge (D, Z, D'): the image arc-set equality
    (the Markov property, exact), level(D') <= level(D) + 1, and collects
    sideways moves (level preserved or decreased) as a report, since they are
    allowed.  Per-level domain counts are compared against the bound
    #critical-points * product(kappa) = kappa for unicritical maps; per-age
    cutpoint multiplicity against #critical-points = 1.  In-edges to the base
    are counted and must be zero.
    """
    part = g.partition
    bound = part.ray_choice.kappa
    counts = g.level_counts()
    bound_violations = [lvl for lvl, n in counts.items()
                        if lvl > 0 and n > bound]

    level_jumps = []
    markov_failures = []
    sideways = []
    base_in = 0
    for (fid, sym), tid in g.edges.items():
        src, dst = g.domains[fid], g.domains[tid]
        if dst.level > src.level + 1:
            level_jumps.append((fid, sym, tid))
        if dst.level <= src.level:
            sideways.append((fid, sym, tid))
        if tid == 0:
            base_in += 1
        start, length = part.arcs[sym]
        piece = src.arcset.intersect_arc(start, length)
        if piece.image_times_d(part.degree) != dst.arcset:
            markov_failures.append((fid, sym))

    age_violations = []
    for d in g.domains.values():
        if any(n > 1 for n in d.age_counts().values()):
            age_violations.append(d.id)

    return StructuralReport(
        level_counts=counts,
        per_level_bound=bound,
        bound_violations=bound_violations,
        level_jump_violations=level_jumps,
        markov_failures=markov_failures,
        age_multiplicity_violations=age_violations,
        base_in_edges=base_in,
        sideways_edges=sorted(sideways),
    )


# --------------------------------------------------------------------------
# traces and fiber merging


@dataclass(frozen=True)
class TracePath:
    """Domain path of an angle lifted to the base: ids visited step by step.

    exit_step is the index of the first step that left the expanded graph
    (None when the whole trace stayed inside); exit_level is the level of the
    frontier domain it stood on when it left.
    """

    domain_ids: tuple[int, ...]
    exit_step: int | None
    exit_level: int | None

    def __len__(self):
        return len(self.domain_ids)


def trace(a: Fraction, g: TowerGraph, n: int) -> TracePath:
    """Follow the lift of angle a starting at the base for n steps.

    Angles sitting on a partition boundary follow the half-open convention,
    so the path is always single-valued.
    """
    part = g.partition
    x = a % 1
    ids = [0]
    cur = 0
    for k in range(n):
        if not g.is_expanded(cur):
            return TracePath(tuple(ids), k, g.domains[cur].level)
        sym = part.symbol_of(x)
        nxt = g.edges.get((cur, sym))
        if nxt is None:
            raise AssertionError(
                f"expanded domain {cur} with no edge for symbol {sym}; the "
                "traced angle left its domain's arc-set")
        ids.append(nxt)
        cur = nxt
        x = times_d(x, part.degree)
    return TracePath(tuple(ids), None, None)


@dataclass(frozen=True)
class MergeResult:
    merged: bool
    merge_step: int | None
    exit_levels: tuple[int | None, int | None]
    paths: tuple[tuple[int, ...], tuple[int, ...]]


def fiber_merge(a: Fraction, g: TowerGraph, first_id: int, second_id: int,
                horizon: int) -> MergeResult:
    """Follow two lifts of the same angle until their domains coincide.

    Reports the first step at which both lifts sit in the same domain, or,
    when either lift climbs out of the expanded graph before the horizon, the
    levels at which they left (the non-merging alternative: at least one lift
    rides a cutpoint upward).
    """
    part = g.partition
    x = a % 1
    for did in (first_id, second_id):
        if not g.domains[did].arcset.contains(x):
            raise ValueError(f"angle {format_angle(x)} not in domain {did}")
    cur = [first_id, second_id]
    paths = [[first_id], [second_id]]
    exits: list[int | None] = [None, None]
    merge_step = 0 if first_id == second_id else None
    for k in range(horizon):
        if merge_step is not None or all(e is not None for e in exits):
            break
        sym = part.symbol_of(x)
        for i in (0, 1):
            if exits[i] is not None:
                continue
            if not g.is_expanded(cur[i]):
                exits[i] = g.domains[cur[i]].level
                continue
            cur[i] = g.edges[(cur[i], sym)]
            paths[i].append(cur[i])
        x = times_d(x, part.degree)
        if exits[0] is None and exits[1] is None and cur[0] == cur[1]:
            merge_step = k + 1
    return MergeResult(
        merged=merge_step is not None,
        merge_step=merge_step,
        exit_levels=(exits[0], exits[1]),
        paths=(tuple(paths[0]), tuple(paths[1])),
    )


# --------------------------------------------------------------------------
# import/export


def tower_to_json_str(g: TowerGraph) -> str:
    return json.dumps(g.to_json(), indent=1, sort_keys=True)


def tower_from_json(payload: dict) -> TowerGraph:
    """Rebuild a TowerGraph from its JSON export (domains are trusted)."""
    cfg = payload["config"]
    rc = RayChoice(cfg["degree"],
                   tuple(parse_angle(a) for a in cfg["critical_value_angles"]))
    part = build_partition(rc)
    g = TowerGraph(part, cfg["truncation"], cfg["extra_levels"])
    for dj in payload["domains"]:
        cps = tuple(sorted(
            CutPoint(c["age"], c["origin"],
                     tuple(sorted(parse_angle(a) for a in c["angles"])))
            for c in dj["cutpoints"]))
        arcs = ArcSet.from_pairs(dj["arcs"])
        dom = Domain(dj["id"], arcs, cps, _level_of(cps),
                     is_base=(dj["id"] == 0))
        g.domains[dom.id] = dom
        g._index[_candidate_key(arcs, cps)] = dom.id
    for e in payload["edges"]:
        g.edges[(e["from"], e["symbol"])] = e["to"]
    g.frontier = set(payload["frontier"])
    return g
