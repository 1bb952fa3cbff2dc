"""Discretized conformal measures and the liftability equivalence check.

The conformality equation mu(f(A)) = int_A |Df|^delta dmu is discretized
over depth-m cylinders: one landed node per cylinder, transfer weights
|Df(node)|^(-delta), and the exponent delta* solved by bisection on the
leading eigenvalue.  The left eigenvector at delta* is the approximate
conformal measure on cylinders.  On top of the solve sits an experiment
that feeds that measure to the tower lift and compares the two sides of
the liftability criterion: positive-Lyapunov mass against the retained
lift, with conical-point frequency and density checks alongside.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np
import scipy.sparse as sp
from scipy.sparse import csgraph

from .angles import (ArcSet, CirclePartition, enumerate_cylinders,
                     format_angle)
from .geometry import CriticalProximity, LandingError, LandingSolver
from .inducing import DEFAULT_MARGIN, choose_W, first_return, \
    recurrent_witness_domain
from .lifting import (DEFAULT_FLOOR, DensityReport, LiftReport,
                      custom_measure, liftability_verdict, make_ensemble,
                      orbit_hits_boundary, project_and_density,
                      retained_curves)
from .tower import TowerGraph

# Offsets tried in order when placing the quadrature node inside a
# cylinder's largest component.  Exact midpoints are unusable: components
# have dyadic endpoints, dyadic midpoints are precritical (5/16 doubles
# to 5/8 and then onto the cut angle 1/4 for the interval parameter), and
# any offset too close to 1/2 makes every node shadow that precritical
# orbit for about depth-many steps, which wrecks finite-horizon
# derivative and return statistics in lockstep.  An off-center numerator
# over 2^16-1 keeps nodes interior, gives each orbit a short cycle with
# small odd part, and those cycles stay clear of every cut angle.
NODE_OFFSETS = tuple(Fraction(26000 + j, 65535) for j in range(40))

EIGEN_TOL = 1e-10
EIGEN_MAX_ITER = 20_000
DELTA_TOL = 1e-6
RHO_TOL = 1e-9


def quadrature_node(arcset: ArcSet, partition: CirclePartition) -> Fraction:
    """Deterministic interior angle of the largest component.

    Walks NODE_OFFSETS until the candidate's forward orbit misses the
    partition boundary; the first offset wins almost always, later ones
    only rescue components whose first candidate is preperiodic onto a
    cut angle.
    """
    s, length = arcset.largest_component()
    for t in NODE_OFFSETS:
        cand = (s + length * t) % 1
        if not orbit_hits_boundary(cand, partition):
            return cand
    raise ValueError(
        f"no interior node found in component at {format_angle(s)}")


@dataclass(frozen=True, eq=False)
class CylinderBasis:
    """Depth-m cylinders with landed quadrature nodes.

    children[i, t] is the index of the cylinder whose word is
    word(i)[1:] + (t,), or -1 when that word is inadmissible; at depth 0
    the single cylinder is its own child once.  moved lists cylinders
    whose node needed a fallback offset.
    """

    partition: CirclePartition
    depth: int
    words: tuple
    arcs: tuple
    reps: tuple
    landings: tuple
    log_derivs: np.ndarray
    children: np.ndarray
    moved: tuple

    @property
    def size(self) -> int:
        return len(self.words)

    def deriv_moduli(self) -> np.ndarray:
        return np.exp(self.log_derivs)


def build_basis(partition: CirclePartition, solver: LandingSolver,
                depth: int) -> CylinderBasis:
    """Enumerate depth-m cylinders and land one node in each."""
    cyls = enumerate_cylinders(partition, depth)
    words, arcs, reps, landings, lds, moved = [], [], [], [], [], []
    for i, (word, arcset) in enumerate(cyls):
        rep = quadrature_node(arcset, partition)
        s, length = arcset.largest_component()
        if rep != (s + length * NODE_OFFSETS[0]) % 1:
            moved.append(i)
        try:
            landing = solver.land_orbit(rep)
        except LandingError as e:
            raise LandingError(
                f"node {format_angle(rep)} of cylinder "
                f"{''.join(map(str, word))}: {e}") from e
        words.append(word)
        arcs.append(arcset)
        reps.append(rep)
        landings.append(landing)
        lds.append(solver.model.log_deriv(landing.points[0]))

    d = partition.size
    index = {w: i for i, w in enumerate(words)}
    children = np.full((len(words), d), -1, dtype=np.int64)
    if depth == 0:
        children[0, 0] = 0
    else:
        for i, w in enumerate(words):
            pref = w[1:]
            for t in range(d):
                j = index.get(pref + (t,))
                if j is not None:
                    children[i, t] = j
    return CylinderBasis(partition, depth, tuple(words), tuple(arcs),
                         tuple(reps), tuple(landings),
                         np.array(lds, dtype=np.float64), children,
                         tuple(moved))


def build_operator(basis: CylinderBasis, delta: float) -> sp.csr_matrix:
    """Transfer matrix: entry (Z', Z) = |Df(node Z)|^(-delta) when the
    shift sends Z into Z'."""
    K = basis.size
    d = basis.children.shape[1]
    w = np.exp(-delta * basis.log_derivs)
    rows = basis.children.ravel()
    cols = np.repeat(np.arange(K), d)
    data = np.repeat(w, d)
    keep = rows >= 0
    return sp.csr_matrix((data[keep], (rows[keep], cols[keep])),
                         shape=(K, K))


@dataclass(frozen=True, eq=False)
class EigenResult:
    rho: float
    vector: np.ndarray
    residual: float
    iterations: int
    support_size: int


def leading_eigen(op: sp.csr_matrix, tol: float = EIGEN_TOL,
                  max_iter: int = EIGEN_MAX_ITER) -> EigenResult:
    """Leading eigenvalue with nonnegative left eigenvector (sum 1).

    Irreducibility is checked via strong components; a reducible
    operator is restricted to its largest strong component and the
    eigenvector re-embedded with zeros outside it.
    """
    K = op.shape[0]
    ncomp, labels = csgraph.connected_components(op, directed=True,
                                                 connection="strong")
    if ncomp > 1:
        big = int(np.bincount(labels).argmax())
        mask = labels == big
        sub = op[mask][:, mask]
    else:
        mask = np.ones(K, dtype=bool)
        sub = op
    MT = sub.T.tocsr()
    v = np.full(sub.shape[0], 1.0 / sub.shape[0])
    for it in range(max_iter):
        u = MT @ v
        rho = float(u.sum())
        u /= rho
        if np.max(np.abs(u - v)) <= tol:
            v = u
            break
        v = u
    else:
        raise RuntimeError(
            f"power iteration did not converge in {max_iter} steps")
    residual = float(np.max(np.abs(MT @ v - rho * v)))
    full = np.zeros(K)
    full[mask] = v
    return EigenResult(rho, full, residual, it + 1, int(mask.sum()))


@dataclass(frozen=True, eq=False)
class ConformalSolve:
    """Solved exponent with its eigenvalue curve and cylinder weights."""

    basis: CylinderBasis
    grid: tuple
    grid_rhos: tuple
    delta: float
    rho: float
    weights: np.ndarray
    eigen_residual: float
    support_size: int
    evaluations: int

    @property
    def grid_strictly_decreasing(self) -> bool:
        return all(a > b for a, b in zip(self.grid_rhos,
                                         self.grid_rhos[1:]))

    @property
    def support_full(self) -> bool:
        return self.support_size == self.basis.size

    def to_json(self) -> dict:
        return {
            "depth": self.basis.depth,
            "delta": self.delta,
            "rho": self.rho,
            "eigen_residual": self.eigen_residual,
            "support": self.support_size,
            "cylinders": self.basis.size,
            "moved_nodes": len(self.basis.moved),
            "evaluations": self.evaluations,
            "grid": list(self.grid),
            "grid_rhos": list(self.grid_rhos),
            "weights": {"".join(map(str, w)): float(x)
                        for w, x in zip(self.basis.words, self.weights)},
        }


def solve_delta(basis: CylinderBasis, grid=None,
                delta_tol: float = DELTA_TOL, rho_tol: float = RHO_TOL,
                eigen_tol: float = EIGEN_TOL) -> ConformalSolve:
    """Bisect rho(delta) = 1 over [0, 2].

    The grid is evaluated first, both to report the curve and to tighten
    the bracket; bisection then runs until the bracket is below delta_tol
    and the midpoint eigenvalue is within rho_tol of 1.
    """
    grid = tuple(k / 10 for k in range(21)) if grid is None else tuple(grid)
    rhos = []
    for dlt in grid:
        rhos.append(leading_eigen(build_operator(basis, dlt),
                                  tol=eigen_tol).rho)
    if not (rhos[0] > 1.0 > rhos[-1]):
        raise ValueError(f"no bracket: rho({grid[0]})={rhos[0]}, "
                         f"rho({grid[-1]})={rhos[-1]}")
    lo, hi = grid[0], grid[-1]
    for g, r in zip(grid, rhos):
        if r > 1.0:
            lo = max(lo, g)
        else:
            hi = min(hi, g)
    evals = 0
    mid = (lo + hi) / 2
    while True:
        mid = (lo + hi) / 2
        if mid == lo or mid == hi:
            break
        rho = leading_eigen(build_operator(basis, mid), tol=eigen_tol).rho
        evals += 1
        if rho > 1.0:
            lo = mid
        else:
            hi = mid
        if hi - lo <= delta_tol and abs(rho - 1.0) <= rho_tol:
            break
    final = leading_eigen(build_operator(basis, mid), tol=eigen_tol)
    return ConformalSolve(basis, grid, tuple(rhos), mid, final.rho,
                          final.vector, final.residual,
                          final.support_size, evals)


def conformality_residual(basis: CylinderBasis, weights,
                          delta: float) -> float:
    """Max over cylinders of |mu(f(Z)) - |Df(node Z)|^delta mu(Z)|.

    f is injective on each cylinder by construction, and mu(f(Z)) is the
    weight sum of Z's shift children.
    """
    w = np.asarray(weights, dtype=np.float64)
    if w.shape != (basis.size,):
        raise ValueError("weight vector does not match the basis")
    ch = basis.children
    lhs = np.where(ch >= 0, w[np.clip(ch, 0, None)], 0.0).sum(axis=1)
    rhs = np.exp(delta * basis.log_derivs) * w
    return float(np.max(np.abs(lhs - rhs)))


def refinement_drift(coarse: ConformalSolve, fine: ConformalSolve) -> float:
    """|delta* shift| between two depths; the quadrature error proxy.

    Meant for depths m and m+2 of the same partition, in the spirit of
    a Richardson comparison for the single-node rule.
    """
    if fine.basis.depth <= coarse.basis.depth:
        raise ValueError("fine solve must use a strictly larger depth")
    return abs(fine.delta - coarse.delta)


def distortion_spread(coarse: CylinderBasis,
                      refined: CylinderBasis) -> float:
    """Max over coarse cylinders of the |Df| ratio across nested nodes.

    A finite value bounds the inverse-branch distortion constant seen by
    the quadrature: each refined node sits in some coarse cylinder, and
    the spread is exp(max - min) of the nested log-derivatives.
    """
    if refined.depth <= coarse.depth:
        raise ValueError("refined basis must be strictly deeper")
    index = {w: i for i, w in enumerate(coarse.words)}
    hi = np.full(coarse.size, -np.inf)
    lo = np.full(coarse.size, np.inf)
    for w, ld in zip(refined.words, refined.log_derivs):
        i = index[w[:coarse.depth]]
        hi[i] = max(hi[i], ld)
        lo[i] = min(lo[i], ld)
    seen = np.isfinite(hi)
    return float(np.exp(np.max(hi[seen] - lo[seen])))


def curve_csv(solve: ConformalSolve) -> str:
    """CSV of the evaluated eigenvalue curve."""
    buf = io.StringIO()
    w = csv.writer(buf)
    w.writerow(["delta", "rho"])
    for d, r in zip(solve.grid, solve.grid_rhos):
        w.writerow([format(d, ".17g"), format(r, ".17g")])
    return buf.getvalue()


def weights_csv(solve: ConformalSolve) -> str:
    """CSV of cylinder words, nodes, derivative moduli, and weights."""
    buf = io.StringIO()
    w = csv.writer(buf)
    w.writerow(["word", "angle", "deriv", "weight"])
    basis = solve.basis
    derivs = basis.deriv_moduli()
    for word, rep, dv, wt in zip(basis.words, basis.reps, derivs,
                                 solve.weights):
        w.writerow(["".join(map(str, word)), format_angle(rep),
                    format(dv, ".17g"), format(wt, ".17g")])
    return buf.getvalue()


# --------------------------------------------------------------------------
# the equivalence experiment


@dataclass(frozen=True, eq=False)
class EquivalenceReport:
    """Both sides of the liftability criterion, reported side by side.

    The Lyapunov side estimates mu{ |Df^n| > lambda^n } over the grids
    and the mass of the dichotomy sets (expanding points whose early
    tower-visit frequency below the cap is under eps).  The lift side is
    the retained-mass verdict plus the conical-point return statistics
    and the projected-density check; consistent records whether the two
    sides agree on this configuration.
    """

    delta: float
    lambdas: tuple
    horizons: tuple
    eps_grid: tuple
    level_cap: int
    lift_horizon: int
    lyapunov_cells: dict
    dichotomy_cells: dict
    positive_lyapunov_mass: float
    excluded: tuple
    lift: LiftReport
    liftable: bool
    witness_domain: int
    conical_frequency: float
    conical_tail_mass: float
    conical_returns: int
    density: DensityReport
    density_min: float
    consistent: bool

    def to_json(self) -> dict:
        return {
            "delta": self.delta,
            "level_cap": self.level_cap,
            "lift_horizon": self.lift_horizon,
            "lyapunov": [{"lam": lam, "n": n, "mass": mass}
                         for (lam, n), mass
                         in sorted(self.lyapunov_cells.items())],
            "dichotomy": [{"lam": lam, "n": n, "eps": eps, "mass": mass}
                          for (lam, n, eps), mass
                          in sorted(self.dichotomy_cells.items())],
            "positive_lyapunov_mass": self.positive_lyapunov_mass,
            "excluded": len(self.excluded),
            "lift": self.lift.to_json(),
            "liftable": self.liftable,
            "witness_domain": self.witness_domain,
            "conical_frequency": self.conical_frequency,
            "conical_tail_mass": self.conical_tail_mass,
            "conical_returns": self.conical_returns,
            "density": self.density.to_json(),
            "density_min": self.density_min,
            "consistent": self.consistent,
        }


def lyapunov_liftability_experiment(
        solve: ConformalSolve, g: TowerGraph, solver: LandingSolver, *,
        lambdas=(1.1, 1.2, 1.5), horizons=(6, 8, 10),
        eps_grid=(0.05, 0.1, 0.2), level_cap: int = 8,
        lift_horizon: int = 1000, margin: Fraction = DEFAULT_MARGIN,
        floor: float = DEFAULT_FLOOR,
        crit_tol: float = 1e-7) -> EquivalenceReport:
    """Run both sides of the liftability criterion on a solved measure.

    The solved cylinder weights become a weighted atomic measure at the
    quadrature nodes; that measure is lifted through the tower graph for
    the retained-mass verdict while the node orbits supply the n-step
    derivative sums.  Nodes passing within crit_tol of the critical
    point are excluded from the Lyapunov side and reported.
    """
    basis = solve.basis
    if basis.depth < 1:
        raise ValueError("experiment needs cylinder depth >= 1")
    if lift_horizon <= basis.depth:
        raise ValueError("lift horizon must exceed the cylinder depth")
    w = np.asarray(solve.weights, dtype=np.float64)
    w = w / w.sum()
    keep = w > 0
    atoms = [(rep, float(x))
             for rep, x, k in zip(basis.reps, w, keep) if k]
    landings = [ld for ld, k in zip(basis.landings, keep) if k]
    wk = w[keep]

    mu = custom_measure(atoms, basis.partition, provenance="conformal")
    ens = make_ensemble(mu, g, lift_horizon)
    n_grid = sorted({max(lift_horizon // 4, 1),
                     max(lift_horizon // 2, 1), lift_horizon})
    rows = retained_curves(mu, g, tuple(n_grid), (level_cap,),
                           ensemble=ens)
    lift = liftability_verdict(rows, floor)
    liftable = lift.verdict == "liftable"

    # n-step derivative sums along the node orbits
    nmax = max(horizons)
    logs = np.zeros((len(landings), nmax))
    excluded = []
    for i, landing in enumerate(landings):
        try:
            for k in range(nmax):
                z = landing.point_at(k)
                if abs(z) < crit_tol:
                    raise CriticalProximity(k, z)
                logs[i, k] = solver.model.log_deriv(z)
        except CriticalProximity:
            excluded.append(i)
    inc = np.ones(len(landings), dtype=bool)
    inc[excluded] = False
    win = wk[inc]
    if win.sum() <= 0:
        raise ValueError("every node was excluded near the critical point")
    win = win / win.sum()
    cum = np.cumsum(logs[inc], axis=1)

    lyap_cells = {}
    for lam in lambdas:
        for n in horizons:
            big = cum[:, n - 1] > n * math.log(lam)
            lyap_cells[(float(lam), int(n))] = float(win[big].sum())

    # dichotomy sets: expanding nodes whose early visit frequency at or
    # below the cap is under eps (their mass should be negligible)
    lv = ens.level_matrix()[inc]
    dich_cells = {}
    for lam in lambdas:
        for n in horizons:
            big = cum[:, n - 1] > n * math.log(lam)
            freq = (lv[:, :n] <= level_cap).mean(axis=1)
            for eps in eps_grid:
                dich_cells[(float(lam), int(n), float(eps))] = \
                    float(win[big & (freq <= eps)].sum())

    headline = lyap_cells[(float(min(lambdas)), int(max(horizons)))]

    witness = choose_W(g, recurrent_witness_domain(g), margin)
    ind = first_return(ens, witness)
    tail = ind.censored_entry >= lift_horizon // 2
    tail_mass = float(ens.weights[ind.censored_sample[tail]].sum())

    density = project_and_density(ens, basis.depth, level_cap)
    ratios = np.array(list(density.ratios.values()))
    density_min = float(ratios.min()) if len(ratios) else 0.0

    consistent = (headline > floor) == liftable
    return EquivalenceReport(
        solve.delta, tuple(lambdas), tuple(horizons), tuple(eps_grid),
        level_cap, lift_horizon, lyap_cells, dich_cells, headline,
        tuple(excluded), lift, liftable, witness.domain_id,
        ind.witness_frequency, tail_mass, ind.return_count, density,
        density_min, consistent)
