"""First-return systems on notched tower domains.

A witness region is one domain's arc-set with closed notches removed
around every cutpoint angle.  Visits of traced samples to the witness
induce a return-time process; on top of it sit the Kac identity check,
branch expansion statistics, and the Abramov consistency checks for the
Lyapunov exponent and entropy.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .angles import ArcSet, cylinder_arcset, format_angle
from .geometry import CriticalProximity, LandingError, LandingSolver
from .lifting import TowerMass, entropy_estimate
from .streams import TraceEnsemble
from .tower import Domain, TowerGraph

DEFAULT_MARGIN = Fraction(1, 64)
DEFAULT_HORIZON = 10_000
DEFAULT_CENSOR_THRESHOLD = 0.05


@dataclass(frozen=True)
class WitnessRegion:
    """A domain id together with its notched arc-set."""

    domain_id: int
    arcs: ArcSet
    margin: Fraction

    @property
    def length(self) -> Fraction:
        return self.arcs.length()

    def to_json(self) -> dict:
        return {"domain": self.domain_id,
                "margin": format_angle(self.margin),
                "arcs": self.arcs.to_pairs(),
                "length": format_angle(self.length)}


def choose_W(g: TowerGraph, domain, margin) -> WitnessRegion:
    """Notch the domain's arc-set by the given angular radius.

    A closed arc of radius margin is removed around every cutpoint angle
    of the domain.  Domains with cutpoints need margin > 0, and the
    remainder must be nonempty.
    """
    dom = g.domains[domain] if isinstance(domain, int) else domain
    margin = Fraction(margin)
    if margin < 0:
        raise ValueError("margin must be nonnegative")
    centers = dom.cutpoint_angles()
    if centers and margin == 0:
        raise ValueError(
            f"domain {dom.id} has cutpoints, a positive margin is required")
    arcs = dom.arcset
    if centers:
        arcs = arcs.subtract_closed_margins(centers, margin)
    if arcs.is_empty:
        raise ValueError(
            f"margin {format_angle(margin)} leaves no witness region in "
            f"domain {dom.id}")
    return WitnessRegion(dom.id, arcs, margin)


def recurrent_witness_domain(g: TowerGraph) -> Domain:
    """Lowest-level domain lying in a strongly connected set of size >= 2.

    Self-loops alone do not qualify: a domain whose only recurrence is its
    own loop carries no mass under nonatomic measures here, so the witness
    is taken from a component that genuinely cycles through the tower.
    """
    ids = [i for i in g.domains if g.is_expanded(i)]
    succ = {i: [t for _, t in g.successors(i) if g.is_expanded(t)]
            for i in ids}
    index, low, on_stack = {}, {}, set()
    stack, counter, comps = [], 0, []
    for root in ids:
        if root in index:
            continue
        work = [(root, iter(succ[root]))]
        index[root] = low[root] = counter
        counter += 1
        stack.append(root)
        on_stack.add(root)
        while work:
            node, it = work[-1]
            advanced = False
            for nxt in it:
                if nxt not in index:
                    index[nxt] = low[nxt] = counter
                    counter += 1
                    stack.append(nxt)
                    on_stack.add(nxt)
                    work.append((nxt, iter(succ[nxt])))
                    advanced = True
                    break
                if nxt in on_stack:
                    low[node] = min(low[node], index[nxt])
            if advanced:
                continue
            work.pop()
            if work:
                parent = work[-1][0]
                low[parent] = min(low[parent], low[node])
            if low[node] == index[node]:
                comp = []
                while True:
                    member = stack.pop()
                    on_stack.discard(member)
                    comp.append(member)
                    if member == node:
                        break
                comps.append(comp)
    candidates = [i for c in comps if len(c) >= 2 for i in c]
    if not candidates:
        raise ValueError("no strongly connected component of size >= 2")
    best = min(candidates, key=lambda i: (g.domains[i].level, i))
    return g.domains[best]


@dataclass(frozen=True, eq=False)
class InducedSystem:
    """Return-time records of an ensemble against a witness region.

    Completed returns are stored as parallel arrays ordered by (sample,
    entry step); each visited sample additionally contributes one censored
    record for its final open interval.  Branch itinerary words are read
    back from the ensemble on demand rather than stored.
    """

    witness: WitnessRegion
    horizon: int
    sample_index: np.ndarray
    entry_step: np.ndarray
    return_time: np.ndarray
    censored_sample: np.ndarray
    censored_entry: np.ndarray
    ensemble: TraceEnsemble

    def __post_init__(self):
        if len(self.return_time) and self.return_time.min() < 1:
            raise ValueError("return times must be >= 1")

    @property
    def return_count(self) -> int:
        return len(self.return_time)

    @property
    def weights(self) -> np.ndarray:
        return self.ensemble.weights

    @property
    def visits_per_sample(self) -> np.ndarray:
        n = self.ensemble.count
        return (np.bincount(self.sample_index, minlength=n)
                + np.bincount(self.censored_sample, minlength=n))

    @property
    def witness_frequency(self) -> float:
        """Weighted fraction of traced steps spent in the witness."""
        w = self.weights
        return float((w * self.visits_per_sample).sum() / self.horizon)

    @property
    def visiting_weight(self) -> float:
        return float(self.weights[self.visits_per_sample > 0].sum())

    @property
    def mean_tau(self) -> float:
        if not self.return_count:
            return math.nan
        w = self.weights[self.sample_index]
        return float((w * self.return_time).sum() / w.sum())

    @property
    def censor_fraction(self) -> float:
        wr = float(self.weights[self.sample_index].sum())
        wc = float(self.weights[self.censored_sample].sum())
        return wc / (wr + wc) if wr + wc else math.nan

    def tau_additive(self) -> bool:
        """Entry steps accumulate return times exactly within samples."""
        same = self.sample_index[1:] == self.sample_index[:-1]
        lhs = self.entry_step[1:][same]
        rhs = (self.entry_step[:-1] + self.return_time[:-1])[same]
        return bool(np.array_equal(lhs, rhs))

    def branch_word(self, i: int) -> tuple:
        s = int(self.sample_index[i])
        t = int(self.entry_step[i])
        tau = int(self.return_time[i])
        return tuple(int(x) for x in self.ensemble.symbols[s, t:t + tau])

    def tau_histogram(self) -> list:
        """(tau, count, weight) rows sorted by tau."""
        if not self.return_count:
            return []
        w = self.weights[self.sample_index]
        taus = np.unique(self.return_time)
        rows = []
        for t in taus:
            sel = self.return_time == t
            rows.append((int(t), int(sel.sum()), float(w[sel].sum())))
        return rows

    def to_json(self) -> dict:
        return {"witness": self.witness.to_json(),
                "horizon": self.horizon,
                "returns": self.return_count,
                "censored": len(self.censored_sample),
                "mean_tau": self.mean_tau,
                "witness_frequency": self.witness_frequency,
                "censor_fraction": self.censor_fraction}


def _exact_membership_plan(ensemble, arcs):
    """Cross-multiplied membership tests, or None when they could overflow.

    A point p/q sits in the component [s, s+l) exactly when
    ((p*s.den - s.num*q) mod (q*s.den)) * l.den < l.num * q * s.den; all
    products must stay inside int64.
    """
    dens = np.array([a.denominator for a in ensemble.angles], dtype=object)
    max_den = int(max(a.denominator for a in ensemble.angles))
    worst = 0
    for start, length in arcs.components:
        q = max(start.denominator, length.denominator)
        worst = max(worst, max_den * start.denominator * length.denominator,
                    length.numerator * start.denominator * max_den, q)
    if worst.bit_length() >= 63:
        return None
    return (np.array([a.numerator for a in ensemble.angles], dtype=np.int64),
            dens.astype(np.int64))


def first_return(ensemble: TraceEnsemble, witness: WitnessRegion,
                 horizon: int | None = None) -> InducedSystem:
    """Visits of every trace to the witness, split into return intervals.

    A visit at step k means the trace occupies the witness domain with an
    angle inside the notched arc-set; membership is decided by exact
    integer comparisons.  Consecutive visits of one sample give completed
    returns; the stretch from a sample's last visit to the horizon is its
    censored record.
    """
    if witness.arcs.is_empty:
        raise ValueError("witness region is empty")
    h = ensemble.horizon if horizon is None else int(horizon)
    if h < 1 or h > ensemble.horizon:
        raise ValueError(
            f"horizon must lie in [1, {ensemble.horizon}], got {h}")
    plan = _exact_membership_plan(ensemble, witness.arcs)
    if plan is None:
        raise ValueError(
            "sample denominators too large for exact witness membership; "
            "use small-denominator samples such as brolin_period_samples")
    nums, dens = plan
    d = ensemble.graph.partition.degree
    states = ensemble.states
    D = witness.domain_id
    comps = [(s.numerator, s.denominator, l.numerator, l.denominator)
             for s, l in witness.arcs.components]
    ev_s, ev_k = [], []
    cur = nums.copy()
    for k in range(h):
        in_dom = states[:, k] == D
        if in_dom.any():
            in_arc = np.zeros(ensemble.count, dtype=bool)
            for p, q, u, v in comps:
                lhs = (cur * q - p * dens) % (q * dens)
                in_arc |= lhs * v < u * q * dens
            rows = np.flatnonzero(in_dom & in_arc)
            if len(rows):
                ev_s.append(rows)
                ev_k.append(np.full(len(rows), k, dtype=np.int64))
        cur = (d * cur) % dens
    if ev_s:
        ss = np.concatenate(ev_s)
        kk = np.concatenate(ev_k)
        order = np.lexsort((kk, ss))
        ss, kk = ss[order], kk[order]
        same = ss[1:] == ss[:-1]
        r_s = ss[:-1][same]
        r_t = kk[:-1][same]
        r_tau = (kk[1:] - kk[:-1])[same]
        last = np.ones(len(ss), dtype=bool)
        last[:-1] = ~same
        c_s, c_t = ss[last], kk[last]
    else:
        r_s = r_t = r_tau = c_s = c_t = np.zeros(0, dtype=np.int64)
    return InducedSystem(witness, h, r_s.astype(np.int64),
                         r_t.astype(np.int64), r_tau.astype(np.int64),
                         c_s.astype(np.int64), c_t.astype(np.int64),
                         ensemble)


@dataclass(frozen=True)
class KacReport:
    mean_tau: float
    witness_mass: float
    expected_tau: float
    relative_error: float
    per_sample_error: float
    never_visit_weight: float
    censor_fraction: float
    domain_mass_lift: float
    return_count: int
    verdict: str

    def to_json(self) -> dict:
        return {"mean_tau": self.mean_tau,
                "witness_mass": self.witness_mass,
                "expected_tau": self.expected_tau,
                "relative_error": self.relative_error,
                "per_sample_error": self.per_sample_error,
                "never_visit_weight": self.never_visit_weight,
                "censor_fraction": self.censor_fraction,
                "domain_mass_lift": self.domain_mass_lift,
                "return_count": self.return_count,
                "verdict": self.verdict}


def kac_check(ind: InducedSystem, tower_mass: TowerMass,
              censor_threshold: float = DEFAULT_CENSOR_THRESHOLD,
              min_sample_returns: int = 5) -> KacReport:
    """Mean return time against the reciprocal witness mass.

    witness mass is the ensemble's own weighted visit frequency, so the
    identity couples the return bookkeeping to the occupation statistics.
    The pooled error is the contract quantity; the per-sample error
    averages |mean_tau_s * frequency_s - 1| over samples with enough
    returns, which stays tight even when per-sample witness frequencies
    are heterogeneous.  Excessive censoring makes the verdict
    inconclusive rather than a number to trust.
    """
    if not ind.return_count:
        return KacReport(math.nan, ind.witness_frequency, math.nan,
                         math.nan, math.nan,
                         1.0 - ind.visiting_weight, ind.censor_fraction,
                         tower_mass.mass.get(ind.witness.domain_id, 0.0),
                         0, "degenerate")
    mean_tau = ind.mean_tau
    mass = ind.witness_frequency
    expected = 1.0 / mass
    rel = abs(mean_tau - expected) / expected
    w = ind.weights
    counts = np.bincount(ind.sample_index, minlength=ind.ensemble.count)
    spans = np.zeros(ind.ensemble.count)
    np.add.at(spans, ind.sample_index, ind.return_time)
    visits = ind.visits_per_sample
    enough = counts >= min_sample_returns
    if enough.any():
        prods = (spans[enough] / counts[enough]) * (visits[enough]
                                                    / ind.horizon)
        per_sample = float((w[enough] * np.abs(prods - 1.0)).sum()
                           / w[enough].sum())
    else:
        per_sample = math.nan
    censor = ind.censor_fraction
    verdict = "ok" if censor <= censor_threshold else "inconclusive"
    return KacReport(mean_tau, mass, expected, rel, per_sample,
                     1.0 - ind.visiting_weight, censor,
                     tower_mass.mass.get(ind.witness.domain_id, 0.0),
                     ind.return_count, verdict)


@dataclass(frozen=True)
class ExpansionReport:
    """Branch derivative statistics and the Abramov consistency checks."""

    degenerate: bool
    branch_count: int
    excluded_samples: tuple
    min_branch: float | None
    min_by_n: dict
    n_two: int | None
    witness_frequency: float
    lambda_f: float | None
    lambda_induced: float | None
    lambda_error: float | None
    entropy_rate: float | None
    entropy_induced_block: float | None
    entropy_induced_rate: float | None
    entropy_error: float | None
    distinct_words: int

    def to_json(self) -> dict:
        return {"degenerate": self.degenerate,
                "branch_count": self.branch_count,
                "excluded_samples": list(self.excluded_samples),
                "min_branch": self.min_branch,
                "min_by_n": {str(k): v for k, v in self.min_by_n.items()},
                "n_two": self.n_two,
                "witness_frequency": self.witness_frequency,
                "lambda_f": self.lambda_f,
                "lambda_induced": self.lambda_induced,
                "lambda_error": self.lambda_error,
                "entropy_rate": self.entropy_rate,
                "entropy_induced_block": self.entropy_induced_block,
                "entropy_induced_rate": self.entropy_induced_rate,
                "entropy_error": self.entropy_error,
                "distinct_words": self.distinct_words}


def _branch_codes(ind, r_s, r_t, r_tau):
    """Prefix-free integer codes for branch words (length tau word w maps
    to 2^tau + w); branches too long to encode become unique negatives."""
    syms = ind.ensemble.symbols
    N = ind.ensemble.graph.partition.size
    bits_per = max(1, (N - 1).bit_length())
    codes = np.empty(len(r_s), dtype=np.int64)
    for tau in np.unique(r_tau):
        sel = r_tau == tau
        if tau * bits_per > 60:
            codes[sel] = -(np.flatnonzero(sel) + 1)
            continue
        idx = r_t[sel][:, None] + np.arange(tau)
        wmat = syms[r_s[sel][:, None], idx].astype(np.int64)
        pw = (1 << (bits_per * np.arange(tau - 1, -1, -1))).astype(np.int64)
        codes[sel] = (wmat * pw).sum(axis=1) + (np.int64(1) << int(
            bits_per * tau))
    return codes


def expansion_and_abramov(ind: InducedSystem, solver: LandingSolver,
                          n_max: int = 10,
                          entropy_depths=(2, 4)) -> ExpansionReport:
    """Branch |DF| statistics plus the two Abramov scaling checks.

    Branch derivatives are log-derivative sums of landed orbits along
    return blocks.  min_by_n tracks the worst product over n consecutive
    branches; n_two is the first n at which it clears 2, or None if the
    search up to n_max fails (reported, not asserted).  The Lyapunov check
    compares the plain Birkhoff exponent with witness_frequency times the
    mean branch sum; the entropy check compares the tower-side cylinder
    estimate with witness_frequency times the induced process entropy
    rate, estimated as the conditional block entropy H(pair) - H(single).
    """
    if not ind.return_count:
        return ExpansionReport(True, 0, (), None, {}, None,
                               ind.witness_frequency, None, None, None,
                               None, None, None, None, 0)
    ens = ind.ensemble
    model = solver.model
    h = ind.horizon
    vals = np.zeros((ens.count, h))
    excluded = []
    for i, a in enumerate(ens.angles):
        try:
            land = solver.land_orbit(a)
            per = [model.log_deriv(land.point_at(k))
                   for k in range(land.preperiod + land.period)]
        except (LandingError, CriticalProximity) as exc:
            excluded.append((i, str(exc)))
            continue
        head = per[:land.preperiod]
        cyc = per[land.preperiod:]
        reps = (h - land.preperiod) // land.period + 1
        vals[i] = (head + cyc * reps)[:h]
    bad = {i for i, _ in excluded}
    keep = np.array([i not in bad for i in range(ens.count)])
    sel = keep[ind.sample_index]
    r_s = ind.sample_index[sel]
    r_t = ind.entry_step[sel]
    r_tau = ind.return_time[sel]
    if not len(r_s):
        return ExpansionReport(True, 0, tuple(excluded), None, {}, None,
                               ind.witness_frequency, None, None, None,
                               None, None, None, None, 0)
    w = ind.weights
    cums = np.concatenate([np.zeros((ens.count, 1)),
                           np.cumsum(vals, axis=1)], axis=1)
    blog = cums[r_s, r_t + r_tau] - cums[r_s, r_t]
    min_by_n = {}
    cb = np.concatenate([[0.0], np.cumsum(blog)])
    for N in range(1, n_max + 1):
        if N > len(r_s):
            break
        valid = r_s[N - 1:] == r_s[:len(r_s) - N + 1]
        if not valid.any():
            break
        roll = cb[N:] - cb[:-N]
        min_by_n[N] = float(np.exp(roll[valid].min()))
    n_two = next((N for N in sorted(min_by_n)
                  if min_by_n[N] >= 2.0), None)
    # frequency restricted to samples the geometry could land
    visits = ind.visits_per_sample.astype(float)
    visits[~keep] = 0.0
    wfreq = float((w * visits).sum() / (h * w[keep].sum()))
    wr = w[r_s]
    lam_induced = float((wr * blog).sum() / wr.sum())
    lam_f = float((w[keep] * cums[keep, h]).sum() / (w[keep].sum() * h))
    lam_err = abs(lam_f - wfreq * lam_induced) / abs(lam_f) \
        if lam_f else None
    codes = _branch_codes(ind, r_s, r_t, r_tau)
    uniq, inv = np.unique(codes, return_inverse=True)
    p1 = np.bincount(inv, weights=wr)
    p1 = p1 / p1.sum()
    h_block = float(-(p1 * np.log(p1)).sum())
    pair = r_s[1:] == r_s[:-1]
    if pair.any():
        pk = inv[:-1][pair] * np.int64(len(uniq)) + inv[1:][pair]
        _, i2 = np.unique(pk, return_inverse=True)
        p2 = np.bincount(i2, weights=wr[:-1][pair])
        p2 = p2 / p2.sum()
        h_rate = float(-(p2 * np.log(p2)).sum()) - h_block
    else:
        h_rate = h_block
    ent = entropy_estimate(ens, entropy_depths)
    h_err = abs(ent.estimate - wfreq * h_rate) / abs(ent.estimate) \
        if ent.estimate else None
    return ExpansionReport(False, len(r_s), tuple(excluded),
                           min_by_n.get(1), min_by_n, n_two, wfreq,
                           lam_f, lam_induced, lam_err,
                           ent.estimate, h_block, h_rate, h_err,
                           len(uniq))


def extendibility_failures(ind: InducedSystem, limit: int = 2000) -> list:
    """Return blocks whose suffix cylinders leave their domains' arc-sets.

    The combinatorial stand-in for branch extendibility: at every step of
    a recorded block, the cylinder of the remaining word must sit inside
    the arc-set of the domain the trace occupies there.  Returns (record
    index, step) pairs for violations; expected empty.
    """
    part = ind.ensemble.graph.partition
    domains = ind.ensemble.graph.domains
    states = ind.ensemble.states
    bad = []
    top = min(limit, ind.return_count)
    for i in range(top):
        s = int(ind.sample_index[i])
        t = int(ind.entry_step[i])
        tau = int(ind.return_time[i])
        word = tuple(int(x) for x in ind.ensemble.symbols[s, t:t + tau])
        for j in range(tau):
            cyl = cylinder_arcset(word[j:], part)
            dom_arcs = domains[int(states[s, t + j])].arcset
            if cyl.intersect(dom_arcs) != cyl:
                bad.append((i, j))
                break
    return bad


def tau_histogram_csv(ind: InducedSystem) -> str:
    lines = ["kind,tau,count,weight"]
    for tau, count, weight in ind.tau_histogram():
        lines.append(f"return,{tau},{count},{weight:.17g}")
    wc = float(ind.weights[ind.censored_sample].sum())
    lines.append(f"censored,,{len(ind.censored_sample)},{wc:.17g}")
    return "\n".join(lines) + "\n"


def branch_words_csv(ind: InducedSystem, limit: int | None = None) -> str:
    lines = ["sample,entry,tau,word"]
    top = ind.return_count if limit is None else min(limit,
                                                     ind.return_count)
    for i in range(top):
        word = "".join(str(x) for x in ind.branch_word(i))
        lines.append(f"{ind.sample_index[i]},{ind.entry_step[i]},"
                     f"{ind.return_time[i]},{word}")
    return "\n".join(lines) + "\n"
