"""Cesaro lifting of sample measures to the tower, with diagnostics.

A measure is a finite weighted set of rational angles placed on the base.
Its lift at horizon n is the average of the pushed masses over the first n
steps of every trace.  Everything downstream (liftability verdicts,
invariance defects, density ratios, Lyapunov and entropy estimates) reads
off the traced ensemble.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .angles import CirclePartition, circular_dist, format_angle, times_d
from .geometry import LandingSolver, PolynomialModel
from .streams import TraceEnsemble, is_dyadic, trace_ensemble
from .tower import TowerGraph

PROVENANCES = ("brolin", "dirac-periodic", "orbit-empirical", "conformal",
               "custom")

DEFAULT_FLOOR = 0.05
DEFAULT_N_GRID = (250, 500, 1000, 2000)
DEFAULT_R_GRID = (4, 6, 8)

_GUARD_BITS = 64


@dataclass(frozen=True)
class SampleMeasure:
    """Weighted rational angles summing to unit mass.

    horizon bounds the number of steps for which the samples are
    guaranteed to behave like typical points (dyadic samples eventually
    ride the partition boundary); None means unlimited.
    """

    samples: tuple[tuple[Fraction, float], ...]
    provenance: str
    seed: int | None = None
    horizon: int | None = None

    def __post_init__(self):
        if self.provenance not in PROVENANCES:
            raise ValueError(f"unknown provenance {self.provenance!r}")
        if not self.samples:
            raise ValueError("a measure needs at least one sample")
        total = 0.0
        for a, w in self.samples:
            if w <= 0:
                raise ValueError(f"nonpositive weight {w} at {a}")
            total += w
        if abs(total - 1.0) > 1e-12:
            raise ValueError(f"weights sum to {total!r}, not 1")

    @property
    def angles(self) -> tuple[Fraction, ...]:
        return tuple(a for a, _ in self.samples)

    @property
    def weights(self) -> np.ndarray:
        return np.array([w for _, w in self.samples], dtype=np.float64)

    def to_json(self) -> dict:
        return {
            "provenance": self.provenance,
            "seed": self.seed,
            "horizon": self.horizon,
            "count": len(self.samples),
        }


def orbit_hits_boundary(a: Fraction, partition: CirclePartition,
                        max_steps: int = 4096) -> bool:
    """Whether the angle orbit meets the partition boundary set.

    Exact forward stepping; stops at the first revisit or after max_steps
    (rationals with astronomically long cycles are accepted on a budget,
    which is stated here rather than hidden).
    """
    boundary = set(partition.boundary)
    d = partition.degree
    seen = set()
    x = a % 1
    for _ in range(max_steps):
        if x in boundary:
            return True
        if x in seen:
            return False
        seen.add(x)
        x = times_d(x, d)
    return False


def brolin_samples(partition: CirclePartition, count: int, horizon: int,
                   seed: int) -> SampleMeasure:
    """Uniform (maximal-entropy) sampler: dyadic angles j / 2^K, j odd.

    K = horizon + 64 guard bits.  An odd numerator keeps every iterate
    within the horizon at exact denominator 2^(K-k) >= 2^64, which no
    partition boundary angle can match, so no trace rides a cutpoint and
    no resampling is ever needed.  Requires every pure-dyadic boundary
    angle to have fewer than 64 fractional bits.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    for b in partition.boundary:
        den = b.denominator
        if den & (den - 1) == 0 and den >= (1 << _GUARD_BITS):
            raise ValueError(
                f"boundary angle {format_angle(b)} exceeds the dyadic "
                f"guard resolution")
    K = horizon + _GUARD_BITS
    nbytes = (K + 7) // 8
    rng = np.random.default_rng(seed)
    raw = rng.bytes(count * nbytes)
    samples = []
    w = 1.0 / count
    for i in range(count):
        j = int.from_bytes(raw[i * nbytes:(i + 1) * nbytes], "big")
        j = (j % (1 << K)) | 1
        samples.append((Fraction(j, 1 << K), w))
    return SampleMeasure(tuple(samples), "brolin", seed, horizon)


def brolin_period_samples(partition: CirclePartition, count: int,
                          seed: int, bits: int = 16) -> SampleMeasure:
    """Uniform sampler on angles j / (d^bits - 1): periodic, short orbits.

    The denominator is coprime to d, so every sample is periodic with
    period dividing bits and its orbit can never meet the (strictly
    preperiodic) boundary angles.  Coarser than the dyadic sampler but
    each sample admits a cheap landed orbit, which Lyapunov estimation
    needs.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    d = partition.degree
    den = d ** bits - 1
    rng = np.random.default_rng(seed)
    js = rng.integers(0, den, size=count)
    w = 1.0 / count
    samples = tuple((Fraction(int(j), den), w) for j in js)
    return SampleMeasure(samples, "brolin", seed, None)


def dirac_cycle(partition: CirclePartition, a: Fraction) -> SampleMeasure:
    """The invariant atomic measure on the cycle of a periodic angle."""
    d = partition.degree
    a = Fraction(a) % 1
    orbit = [a]
    x = times_d(a, d)
    while x != a:
        orbit.append(x)
        if len(orbit) > a.denominator:
            raise ValueError(f"angle {format_angle(a)} is not periodic "
                             f"under multiplication by {d}")
        x = times_d(x, d)
    w = 1.0 / len(orbit)
    return SampleMeasure(tuple((p, w) for p in orbit), "dirac-periodic")


def orbit_empirical(partition: CirclePartition, a: Fraction, count: int,
                    allow_boundary_orbit: bool = False) -> SampleMeasure:
    """Equal weights on the first count points of the orbit of a."""
    if count < 1:
        raise ValueError("count must be >= 1")
    a = Fraction(a) % 1
    if not allow_boundary_orbit and orbit_hits_boundary(a, partition):
        raise ValueError(
            f"orbit of {format_angle(a)} meets the partition boundary; "
            f"pass allow_boundary_orbit=True for a deliberate diagnostic "
            f"measure")
    d = partition.degree
    pts = []
    x = a
    for _ in range(count):
        pts.append(x)
        x = times_d(x, d)
    w = 1.0 / count
    return SampleMeasure(tuple((p, w) for p in pts), "orbit-empirical")


def custom_measure(pairs, partition: CirclePartition | None = None,
                   provenance: str = "custom", seed: int | None = None,
                   horizon: int | None = None,
                   allow_boundary_orbit: bool = False) -> SampleMeasure:
    """Measure from explicit (angle, weight) pairs.

    With a partition given, samples whose orbit meets the boundary are
    rejected unless allow_boundary_orbit is set (such measures are the
    canonical non-liftable examples, so the door stays open).
    """
    samples = tuple((Fraction(a) % 1, float(w)) for a, w in pairs)
    if partition is not None and not allow_boundary_orbit:
        for a, _ in samples:
            if orbit_hits_boundary(a, partition):
                raise ValueError(
                    f"sample {format_angle(a)} has a boundary-riding "
                    f"orbit; pass allow_boundary_orbit=True if intended")
    return SampleMeasure(samples, provenance, seed, horizon)


# --------------------------------------------------------------------------
# the lift


@dataclass(frozen=True)
class TowerMass:
    """Cesaro average of the lifted sample masses, truncated at level R.

    mass maps domain id to weight for domains of level <= R; escaped is
    the averaged weight sitting above R (it may re-descend later, and the
    average accounts for that at each step separately).
    """

    mass: dict[int, float]
    escaped: float
    n: int
    R: int

    def __post_init__(self):
        if any(w < 0 for w in self.mass.values()) or self.escaped < -1e-15:
            raise ValueError("negative mass")
        total = sum(self.mass.values()) + self.escaped
        if abs(total - 1.0) > 1e-12:
            raise ValueError(f"mass plus escaped is {total!r}, not 1")

    @property
    def retained(self) -> float:
        return sum(self.mass.values())

    def to_json(self) -> dict:
        return {
            "n": self.n,
            "R": self.R,
            "retained": self.retained,
            "escaped": self.escaped,
            "mass": {str(k): v for k, v in sorted(self.mass.items())},
        }


def make_ensemble(mu: SampleMeasure, g: TowerGraph, n: int) -> TraceEnsemble:
    """Trace the measure's samples n steps, honoring its horizon."""
    if mu.horizon is not None and n > mu.horizon:
        raise ValueError(
            f"measure is exact to horizon {mu.horizon}, requested {n}")
    return trace_ensemble(mu.angles, mu.weights, g, n)


def lift_cesaro(mu: SampleMeasure, g: TowerGraph, n: int,
                R: int | None = None,
                ensemble: TraceEnsemble | None = None) -> TowerMass:
    """The horizon-n Cesaro lift of mu restricted to levels <= R.

    Averages the pushed sample masses over steps 0..n-1; step 0 places
    everything on the base, so n = 1 returns the inclusion itself.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    R = g.truncation if R is None else R
    ens = ensemble if ensemble is not None else make_ensemble(mu, g, n)
    if n + 1 > ens.states.shape[1]:
        raise ValueError(f"ensemble traced to {ens.horizon}, requested {n}")
    # exact integer visit counts per (sample, domain) pair keep the float
    # accumulation chains short enough for the 1e-12 conservation budget
    keys = ((np.arange(ens.count, dtype=np.int64)[:, None] << 32)
            | ens.states[:, :n].astype(np.int64))
    uniq, cnt = np.unique(keys.ravel(), return_counts=True)
    contrib = ens.weights[uniq >> 32] * (cnt / n)
    per_state = np.bincount(uniq & 0xFFFFFFFF, weights=contrib,
                            minlength=len(g.domains))
    mass = {}
    for i, w in enumerate(per_state):
        if w != 0.0 and g.domains[i].level <= R:
            mass[i] = float(w)
    # escaped is the mass complement, so conservation holds to the same
    # accuracy as the input normalization
    escaped = math.fsum([math.fsum(ens.weights), -math.fsum(mass.values())])
    return TowerMass(mass, max(escaped, 0.0), n, R)


def retained_curves(mu: SampleMeasure, g: TowerGraph, n_grid, R_grid,
                    ensemble: TraceEnsemble | None = None
                    ) -> list[tuple[int, int, float, float]]:
    """Rows (n, R, retained, escaped) over both grids from a single trace."""
    n_grid = sorted(set(int(n) for n in n_grid))
    R_grid = sorted(set(int(R) for R in R_grid))
    if not n_grid or not R_grid:
        return []
    if n_grid[0] < 1:
        raise ValueError("horizons must be >= 1")
    n_max = n_grid[-1]
    ens = ensemble if ensemble is not None else make_ensemble(mu, g, n_max)
    lv = ens.level_matrix()[:, :n_max]
    rows = []
    for R in R_grid:
        step_mass = ((lv <= R) * ens.weights[:, None]).sum(axis=0)
        cum = np.cumsum(step_mass)
        for n in n_grid:
            retained = float(cum[n - 1] / n)
            rows.append((n, R, retained, 1.0 - retained))
    rows.sort()
    return rows


def curves_csv(rows) -> str:
    lines = ["n,R,retained,escaped"]
    for n, R, retained, escaped in rows:
        lines.append(f"{n},{R},{retained:.17g},{escaped:.17g}")
    return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class LiftReport:
    """Empirical liftability verdict with its supporting curves.

    The verdict is a finite-horizon surrogate for the vague-limit
    definition: `liftable` when some truncation keeps at least `floor`
    mass across the whole horizon grid, `not-liftable` when every
    truncation has fallen below the floor at the largest horizon.
    """

    curves: tuple[tuple[int, int, float, float], ...]
    verdict: str
    floor: float
    densities: dict | None = None
    invariance_defect: float | None = None
    note: str = "finite-horizon surrogate verdict"

    def to_json(self) -> dict:
        return {
            "verdict": self.verdict,
            "floor": self.floor,
            "note": self.note,
            "curves": [list(r) for r in self.curves],
            "densities": (None if self.densities is None else
                          {"".join(map(str, k)): v
                           for k, v in sorted(self.densities.items())}),
            "invariance_defect": self.invariance_defect,
        }


def liftability_verdict(rows, floor: float = DEFAULT_FLOOR) -> LiftReport:
    rows = tuple(sorted(rows))
    if not rows:
        return LiftReport(rows, "inconclusive", floor)
    by_R: dict[int, list] = {}
    for n, R, retained, _ in rows:
        by_R.setdefault(R, []).append((n, retained))
    stable = any(min(ret for _, ret in pts) >= floor
                 for pts in by_R.values())
    if stable:
        verdict = "liftable"
    elif all(max(pts)[1] < floor for pts in by_R.values()):
        verdict = "not-liftable"
    else:
        verdict = "inconclusive"
    return LiftReport(rows, verdict, floor)


def invariance_defect(ensemble: TraceEnsemble, n: int, test_ids) -> float:
    """max over domain indicators of |Cesaro(phi o fhat) - Cesaro(phi)|.

    Computed from the defining sums (steps 1..n against steps 0..n-1);
    the telescoping bound 2 sup|phi| / n is a theorem about this quantity,
    not an input.
    """
    if not 1 <= n <= ensemble.horizon:
        raise ValueError(f"n must be in 1..{ensemble.horizon}")
    states = ensemble.states
    w = ensemble.weights
    worst = 0.0
    for dom in test_ids:
        shifted = ((states[:, 1:n + 1] == dom) * w[:, None]).sum() / n
        plain = ((states[:, :n] == dom) * w[:, None]).sum() / n
        worst = max(worst, abs(float(shifted - plain)))
    return worst


@dataclass(frozen=True)
class DensityReport:
    """Empirical Radon-Nikodym ratios of the projected lift against mu."""

    depth: int
    retained: float
    ratios: dict[tuple, float]
    corrected: dict[tuple, float]
    skipped: tuple[tuple, ...]

    def to_json(self) -> dict:
        key = lambda word: "".join(map(str, word))
        return {
            "depth": self.depth,
            "retained": self.retained,
            "ratios": {key(k): v for k, v in sorted(self.ratios.items())},
            "corrected": {key(k): v
                          for k, v in sorted(self.corrected.items())},
            "skipped": [key(k) for k in self.skipped],
        }


def project_and_density(ensemble: TraceEnsemble, m: int, R: int,
                        n: int | None = None,
                        min_mass: float = 0.0) -> DensityReport:
    """Ratio (projected retained lift of Z) / mu(Z) per depth-m cylinder.

    Cylinder membership at step k needs the symbols k..k+m-1, so the
    average runs over k < n - m.  mu(Z) is the empirical weight of the
    samples starting in Z; cylinders at or below min_mass are skipped.
    The corrected map divides by the overall retained mass, which is the
    constant the raw ratios approach for an invariant liftable input.
    """
    if m < 1:
        raise ValueError("depth must be >= 1")
    n = ensemble.horizon if n is None else n
    if n - m < 1:
        raise ValueError("horizon too short for this cylinder depth")
    syms = ensemble.symbols
    w = ensemble.weights
    N = ensemble.graph.partition.size
    lv = ensemble.level_matrix()
    base = N ** m

    wid = np.zeros(ensemble.count, dtype=np.int64)
    for j in range(m):
        wid = wid * N + syms[:, j]
    mu_mass = np.bincount(wid, weights=w, minlength=base)

    proj = np.zeros(base, dtype=np.float64)
    steps = n - m
    retained_sum = 0.0
    for k in range(steps):
        if k > 0:
            wid = (wid * N) % base + syms[:, k + m - 1]
        keep = lv[:, k] <= R
        if keep.any():
            proj += np.bincount(wid[keep], weights=w[keep], minlength=base)
            retained_sum += float(w[keep].sum())
    proj /= steps
    retained = retained_sum / steps

    def word_of(i: int) -> tuple:
        out = []
        for _ in range(m):
            i, r = divmod(i, N)
            out.append(int(r))
        return tuple(reversed(out))

    ratios = {}
    corrected = {}
    skipped = []
    for i in np.nonzero(mu_mass + proj)[0]:
        word = word_of(int(i))
        if mu_mass[i] <= min_mass or mu_mass[i] == 0.0:
            skipped.append(word)
            continue
        r = float(proj[i] / mu_mass[i])
        ratios[word] = r
        corrected[word] = r / retained if retained > 0 else math.inf
    return DensityReport(m, retained, ratios, corrected, tuple(skipped))


def cutpoint_margin_mass(ensemble: TraceEnsemble, domain_id: int, delta,
                         n: int | None = None) -> float:
    """Lifted mass sitting within delta of a cutpoint angle of the domain.

    Exact angle arithmetic on the visiting steps only; the base (no
    cutpoints) always reports zero.
    """
    n = ensemble.horizon if n is None else n
    dom = ensemble.graph.domains[domain_id]
    centers = dom.cutpoint_angles()
    if not centers:
        return 0.0
    d = ensemble.graph.partition.degree
    mask = ensemble.states[:, :n] == domain_id
    total = 0.0
    pows = {}
    for s, k in np.argwhere(mask):
        k = int(k)
        if k not in pows:
            pows[k] = d ** k
        a = ensemble.angles[int(s)] * pows[k] % 1
        if any(circular_dist(a, c) <= delta for c in centers):
            total += float(ensemble.weights[int(s)]) / n
    return total


# --------------------------------------------------------------------------
# dynamical consistency estimates


@dataclass(frozen=True)
class LyapunovReport:
    lambda_f: float | None
    lambda_fhat: float | None
    n: int
    used_weight: float
    excluded: tuple[tuple[int, str], ...]

    def to_json(self) -> dict:
        return {
            "lambda_f": self.lambda_f,
            "lambda_fhat": self.lambda_fhat,
            "n": self.n,
            "used_weight": self.used_weight,
            "excluded": [list(e) for e in self.excluded],
        }


def lyapunov_consistency(mu: SampleMeasure, ensemble: TraceEnsemble,
                         model: PolynomialModel, solver: LandingSolver,
                         R: int | None = None, n: int | None = None,
                         max_orbit: int = 64,
                         crit_tol: float = 1e-7) -> LyapunovReport:
    """Base and tower Lyapunov estimates from the same landed orbits.

    lambda_f averages log|Df| over every traced step; lambda_fhat
    reweights the same evaluations by the retained (level <= R)
    indicator, which is the lift-side exponent.  Samples whose angle
    orbit is too long to land, or whose landed orbit passes within
    crit_tol of the critical point, are excluded and reported.
    """
    g = ensemble.graph
    R = g.truncation if R is None else R
    n = ensemble.horizon if n is None else n
    lv = ensemble.level_matrix()[:, :n]
    excluded = []
    lam_sum = 0.0
    used = 0.0
    hat_num = 0.0
    hat_den = 0.0
    for s, (a, w) in enumerate(mu.samples):
        if is_dyadic(a) and a != 0:
            excluded.append((s, "orbit too long to land"))
            continue
        try:
            landing = solver.land_orbit(a)
        except Exception as err:
            excluded.append((s, f"landing failed: {err}"))
            continue
        if landing.preperiod + landing.period > max_orbit:
            excluded.append((s, "orbit too long to land"))
            continue
        vals = np.empty(n, dtype=np.float64)
        ok = True
        for k in range(n):
            z = landing.point_at(k)
            if abs(z) < crit_tol:
                excluded.append((s, f"critical proximity at step {k}"))
                ok = False
                break
            vals[k] = model.log_deriv(z)
        if not ok:
            continue
        lam_sum += w * float(vals.mean())
        used += w
        keep = lv[s] <= R
        hat_num += w * float(vals[keep].sum())
        hat_den += w * float(keep.sum())
    lam_f = lam_sum / used if used > 0 else None
    # a vanishing retained fraction means the lift carries no mass and
    # the tower-side exponent is undefined, not merely noisy
    if hat_den > 1e-6 * max(used, 1e-300) * n:
        lam_hat = hat_num / hat_den
    else:
        lam_hat = None
    return LyapunovReport(lam_f, lam_hat, n, used, tuple(excluded))


@dataclass(frozen=True)
class EntropyReport:
    estimate: float
    per_depth: dict[int, float]
    increments: dict[tuple[int, int], float]
    insufficient: tuple[int, ...]

    def to_json(self) -> dict:
        return {
            "estimate": self.estimate,
            "per_depth": {str(k): v for k, v in self.per_depth.items()},
            "increments": {f"{a}-{b}": v
                           for (a, b), v in self.increments.items()},
            "insufficient": list(self.insufficient),
        }


def entropy_estimate(ensemble: TraceEnsemble, m_grid,
                     min_count: int = 25) -> EntropyReport:
    """Plugin cylinder entropy over the depth grid.

    Per depth m the estimate is -(1/m) sum_s w_s log p(word_m(s)) with p
    the empirical word distribution of the ensemble itself; consecutive
    depths also give increment slopes, and the final estimate is the last
    increment (plugin values carry an m-independent bias that the
    difference cancels).  Depths whose rarest observed word has fewer than
    min_count samples are flagged as statistically insufficient.
    """
    m_grid = sorted(set(int(m) for m in m_grid))
    if not m_grid or m_grid[0] < 1:
        raise ValueError("depth grid must contain positive depths")
    if m_grid[-1] > ensemble.horizon:
        raise ValueError("depth grid exceeds the traced horizon")
    syms = ensemble.symbols
    w = ensemble.weights
    N = ensemble.graph.partition.size
    per_depth = {}
    h_values = {}
    insufficient = []
    for m in m_grid:
        wid = np.zeros(ensemble.count, dtype=np.int64)
        for j in range(m):
            wid = wid * N + syms[:, j]
        uniq, inv, counts = np.unique(wid, return_inverse=True,
                                      return_counts=True)
        p = np.bincount(inv, weights=w)
        H = float(-(w * np.log(p[inv])).sum())
        h_values[m] = H
        per_depth[m] = H / m
        if counts.min() < min_count:
            insufficient.append(m)
    increments = {}
    for m1, m2 in zip(m_grid, m_grid[1:]):
        increments[(m1, m2)] = (h_values[m2] - h_values[m1]) / (m2 - m1)
    if increments:
        estimate = increments[(m_grid[-2], m_grid[-1])]
    else:
        estimate = per_depth[m_grid[0]]
    return EntropyReport(estimate, per_depth, increments,
                         tuple(insufficient))


@dataclass(frozen=True)
class ProbeResult:
    disjoint: bool
    mass: float
    bound: float
    first_violation: tuple[int, int, int] | None = None


def wandering_probe(ensemble: TraceEnsemble, ids, h: int,
                    n: int | None = None) -> ProbeResult:
    """Finite Cesaro form of the wandering-set mass bound.

    When no trace revisits the probed union within h steps, each trace
    contributes at most ceil(n/h) visits, so the Cesaro mass is at most
    ceil(n/h)/n, which is 1/h exactly when h divides n and at most
    1/h + 1/n otherwise.  A revisit within h steps voids the hypothesis
    and is reported instead.
    """
    if h < 1:
        raise ValueError("h must be >= 1")
    n = ensemble.horizon if n is None else n
    in_a = np.isin(ensemble.states[:, :n], np.asarray(sorted(ids)))
    mass = float((in_a * ensemble.weights[:, None]).sum() / n)
    bound = -(-n // h) / n
    for s in range(ensemble.count):
        times = np.nonzero(in_a[s])[0]
        if len(times) > 1:
            gaps = np.diff(times)
            bad = np.nonzero(gaps < h)[0]
            if len(bad):
                j = int(bad[0])
                return ProbeResult(False, mass, bound,
                                   (s, int(times[j]), int(times[j + 1])))
    return ProbeResult(True, mass, bound)


def lift_report(mu: SampleMeasure, g: TowerGraph,
                n_grid=DEFAULT_N_GRID, R_grid=DEFAULT_R_GRID,
                floor: float = DEFAULT_FLOOR, density_depth: int = 6,
                ensemble: TraceEnsemble | None = None) -> LiftReport:
    """One-stop verdict: curves, verdict, defect, and density ratios."""
    n_grid = sorted(set(int(n) for n in n_grid))
    R_grid = sorted(set(int(R) for R in R_grid))
    if not n_grid or not R_grid:
        return LiftReport((), "inconclusive", floor)
    n_max = n_grid[-1]
    ens = ensemble if ensemble is not None else make_ensemble(mu, g, n_max)
    rows = retained_curves(mu, g, n_grid, R_grid, ensemble=ens)
    report = liftability_verdict(rows, floor)
    test_ids = [i for i, dom in g.domains.items()
                if dom.level <= max(R_grid)]
    defect = invariance_defect(ens, n_max, test_ids)
    densities = None
    if report.verdict == "liftable" and n_max > density_depth:
        densities = project_and_density(
            ens, density_depth, max(R_grid), n=n_max).corrected
    return LiftReport(report.curves, report.verdict, floor,
                      densities, defect)
