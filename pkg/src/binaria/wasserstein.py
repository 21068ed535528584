"""Wasserstein-L-infinity machinery on equal-weight atom clouds.

The metric between grid densities is approximated through equal-mass
atomizations (`fields.discretize`), for which the map-based optimal
transport problem reduces to a bottleneck assignment: minimize over
bijections the maximum matched distance.  That assignment is solved
exactly by a binary search over the sorted pairwise-distance multiset
with a perfect-matching feasibility test at each threshold.

Also here: the push-forward of a cloud under a point map, report-style
checks of the metric's elementary properties, the constructive
"cap at 2R and redistribute within small cubes" rearrangement that
produces a nearby bounded density, and the admissible perturbation cone
P_R(rho) membership test.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .errors import (ConfigurationError, DegenerateInputError, DomainError,
                     IncomparableMeasuresError, NumericError)
from .fields import DensityField, ScalarField

__all__ = [
    "DiscreteMeasure", "BottleneckResult", "PerturbationCone",
    "winf_distance", "push_forward", "check_lemma_properties",
    "rearrange_to_bounded", "cone_membership", "RearrangeAudit",
    "LemmaPropertyReport",
]

_MASS_RTOL = 1e-12


@dataclass(frozen=True)
class DiscreteMeasure:
    """Equal-weight atom cloud: n atoms, each carrying total_mass / n."""

    atoms: np.ndarray
    total_mass: float = 1.0

    def __post_init__(self):
        a = np.asarray(self.atoms, dtype=float)
        if a.ndim != 2 or a.shape[1] != 3 or a.shape[0] < 1:
            raise DomainError("atoms must be an (n, 3) array with n >= 1")
        if not np.all(np.isfinite(a)):
            raise DomainError("atom coordinates must be finite")
        object.__setattr__(self, "atoms", a)
        if not self.total_mass > 0:
            raise DomainError("total mass must be positive")

    @property
    def n(self) -> int:
        return self.atoms.shape[0]

    @property
    def weight(self) -> float:
        return self.total_mass / self.n

    def center_of_mass(self):
        return self.atoms.mean(axis=0)

    def moment_of_inertia(self):
        c = self.center_of_mass()
        r2 = (self.atoms[:, 0] - c[0]) ** 2 + (self.atoms[:, 1] - c[1]) ** 2
        return float(self.weight * r2.sum())

    def to_csv(self, path):
        with open(path, "w") as fh:
            fh.write(f"# total_mass = {self.total_mass!r}\n")
            fh.write("x,y,z\n")
            for p in self.atoms:
                fh.write(f"{p[0]!r},{p[1]!r},{p[2]!r}\n")
        return path

    @staticmethod
    def from_csv(path):
        total = 1.0
        pts = []
        with open(path) as fh:
            for line in fh:
                line = line.strip()
                if line.startswith("#"):
                    if "total_mass" in line and "=" in line:
                        total = float(line.split("=", 1)[1])
                    continue
                if not line or line.lower().startswith("x,"):
                    continue
                pts.append([float(c) for c in line.split(",")[:3]])
        return DiscreteMeasure(np.array(pts), total_mass=total)


@dataclass(frozen=True)
class BottleneckResult:
    """Exact bottleneck assignment: `matching[i]` pairs atom i of a with that of b."""

    distance: float
    matching: np.ndarray
    certificate_max_distance: float

    def __post_init__(self):
        n = self.matching.size
        if sorted(self.matching.tolist()) != list(range(n)):
            raise NumericError("bottleneck matching is not a bijection")
        if self.certificate_max_distance != self.distance:
            raise NumericError("bottleneck certificate does not equal the distance")


def _perfect_matching_at(dist, threshold):
    """Hopcroft-Karp perfect matching on the <=-threshold bipartite graph.

    Returns the left->right matching array, or None when no perfect
    matching exists at this threshold.
    """
    n = dist.shape[0]
    adj = [np.flatnonzero(dist[i] <= threshold) for i in range(n)]
    match_l = np.full(n, -1)
    match_r = np.full(n, -1)
    INF = n + 1

    def bfs():
        dist_l = np.full(n, INF)
        q = deque()
        for u in range(n):
            if match_l[u] < 0:
                dist_l[u] = 0
                q.append(u)
        found = False
        while q:
            u = q.popleft()
            for v in adj[u]:
                w = match_r[v]
                if w < 0:
                    found = True
                elif dist_l[w] == INF:
                    dist_l[w] = dist_l[u] + 1
                    q.append(w)
        return found, dist_l

    def dfs(u, dist_l):
        for v in adj[u]:
            w = match_r[v]
            if w < 0 or (dist_l[w] == dist_l[u] + 1 and dfs(w, dist_l)):
                match_l[u] = v
                match_r[v] = u
                return True
        dist_l[u] = INF
        return False

    matched = 0
    while True:
        found, dist_l = bfs()
        if not found:
            break
        for u in range(n):
            if match_l[u] < 0 and dfs(u, dist_l):
                matched += 1
    return match_l if matched == n else None


def winf_distance(a: DiscreteMeasure, b: DiscreteMeasure) -> BottleneckResult:
    """Exact bottleneck distance between equal-count, equal-mass atom clouds.

    Binary search over the sorted distinct pairwise distances; at each
    candidate threshold a bipartite perfect matching decides feasibility.
    Weights never enter the cost, so the distance is invariant under a
    common mass rescaling.
    """
    if a.n != b.n:
        raise IncomparableMeasuresError(
            f"atom counts differ ({a.n} vs {b.n}); refusing to compare")
    if abs(a.total_mass - b.total_mass) > _MASS_RTOL * max(a.total_mass, b.total_mass):
        raise IncomparableMeasuresError(
            f"total masses differ ({a.total_mass} vs {b.total_mass})")
    diff = a.atoms[:, None, :] - b.atoms[None, :, :]
    dist = np.sqrt((diff ** 2).sum(axis=2))
    n = a.n
    if n == 1:
        d = float(dist[0, 0])
        return BottleneckResult(d, np.array([0]), d)
    values = np.unique(dist)
    # no threshold below the worst row/column minimum can be feasible
    lower = max(dist.min(axis=1).max(), dist.min(axis=0).max())
    lo = int(np.searchsorted(values, lower))
    hi = values.size - 1
    best = None
    while lo < hi:
        mid = (lo + hi) // 2
        m = _perfect_matching_at(dist, values[mid])
        if m is not None:
            best = m
            hi = mid
        else:
            lo = mid + 1
    if best is None or hi != lo:
        best = _perfect_matching_at(dist, values[lo])
    if best is None:  # complete graph is always feasible; defensive only
        raise NumericError("bottleneck search failed to find a perfect matching")
    matched_max = float(dist[np.arange(n), best].max())
    return BottleneckResult(matched_max, best, matched_max)


def push_forward(a: DiscreteMeasure, f) -> DiscreteMeasure:
    """Image cloud f_# a: atoms mapped pointwise, weights unchanged."""
    moved = np.array([np.asarray(f(p), dtype=float) for p in a.atoms])
    if moved.shape != a.atoms.shape:
        raise DomainError("point map must return a 3-vector per atom")
    return DiscreteMeasure(moved, total_mass=a.total_mass)


# ---------------------------------------------------------------------------
# metric property report

@dataclass
class LemmaPropertyReport:
    """Pass/fail record per checked metric property, with both sides."""

    entries: list = field(default_factory=list)

    def add(self, name, passed, lhs, rhs, note=""):
        self.entries.append({"name": name, "passed": passed,
                             "lhs": lhs, "rhs": rhs, "note": note})

    def all_passed(self):
        return all(e["passed"] is not False for e in self.entries)

    def __getitem__(self, name):
        for e in self.entries:
            if e["name"] == name:
                return e
        raise KeyError(name)


def _multiset_difference_support(a: DiscreteMeasure, b: DiscreteMeasure,
                                 tol=1e-12):
    """Atoms of a and b that do not cancel pairwise (the support of a - b)."""
    used_b = np.zeros(b.n, dtype=bool)
    keep_a = []
    for i, p in enumerate(a.atoms):
        d = np.linalg.norm(b.atoms - p, axis=1)
        d[used_b] = np.inf
        j = int(np.argmin(d))
        if d[j] <= tol:
            used_b[j] = True
        else:
            keep_a.append(i)
    pts = [a.atoms[i] for i in keep_a] + [b.atoms[j] for j in range(b.n)
                                          if not used_b[j]]
    return np.array(pts) if pts else np.empty((0, 3))


def _delta_components(a: DiscreteMeasure, delta):
    """Connected components of the delta-neighbourhood of spt a (ball overlap)."""
    n = a.n
    parent = list(range(n))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i in range(n):
        d = np.linalg.norm(a.atoms[i + 1:] - a.atoms[i], axis=1)
        for k in np.flatnonzero(d < 2 * delta):
            ri, rj = find(i), find(i + 1 + int(k))
            if ri != rj:
                parent[rj] = ri
    labels = np.array([find(i) for i in range(n)])
    return labels


def check_lemma_properties(a: DiscreteMeasure, b: DiscreteMeasure,
                           delta: float) -> LemmaPropertyReport:
    """Report-only verification of the elementary metric properties.

    (i)  the distance does not exceed the diameter of spt(a - b);
    (ii) when the distance is below delta, each connected component of the
         delta-neighbourhood of spt a carries equal a-mass and b-mass;
    (iv) the centers of mass move by at most the distance.
    """
    report = LemmaPropertyReport()
    comparable = (a.n == b.n
                  and abs(a.total_mass - b.total_mass)
                  <= _MASS_RTOL * max(a.total_mass, b.total_mass))
    w = None
    if comparable:
        w = winf_distance(a, b).distance
        support = _multiset_difference_support(a, b)
        if support.shape[0] == 0:
            diam = 0.0
        else:
            diff = support[:, None, :] - support[None, :, :]
            diam = float(np.sqrt((diff ** 2).sum(axis=2)).max())
        report.add("i_diameter_bound", bool(w <= diam + 1e-12), w, diam)
    else:
        report.add("i_diameter_bound", None, None, None,
                   "not applicable: unequal atom counts")

    labels = _delta_components(a, delta)
    ok = True
    lhs_masses, rhs_masses = [], []
    stray_b = 0
    for lab in np.unique(labels):
        members = a.atoms[labels == lab]
        a_mass = a.weight * members.shape[0]
        in_comp = np.zeros(b.n, dtype=bool)
        for p in members:
            in_comp |= np.linalg.norm(b.atoms - p, axis=1) < delta
        b_mass = b.weight * int(in_comp.sum())
        lhs_masses.append(a_mass)
        rhs_masses.append(b_mass)
        if abs(a_mass - b_mass) > _MASS_RTOL * max(a.total_mass, 1.0):
            ok = False
    covered = np.zeros(b.n, dtype=bool)
    for p in a.atoms:
        covered |= np.linalg.norm(b.atoms - p, axis=1) < delta
    stray_b = int((~covered).sum())
    if stray_b:
        ok = False
    if w is not None and w >= delta:
        report.add("ii_component_masses", True, lhs_masses, rhs_masses,
                   f"vacuous: distance {w:.3g} >= delta {delta:.3g}")
    else:
        report.add("ii_component_masses", ok, lhs_masses, rhs_masses,
                   f"{stray_b} b-atoms outside the delta-neighbourhood"
                   if stray_b else "")

    if comparable:
        shift = float(np.linalg.norm(a.center_of_mass() - b.center_of_mass()))
        report.add("iv_center_of_mass", bool(shift <= w + 1e-12), shift, w)
    else:
        report.add("iv_center_of_mass", None, None, None,
                   "not applicable: unequal atom counts")
    return report


# ---------------------------------------------------------------------------
# bounded rearrangement (cap at 2R inside small cubes)

@dataclass
class RearrangeAudit:
    """Conservation and distance evidence for one rearrangement."""

    R: float
    bound: float                  # 2R, the promised sup bound
    sup_sigma: float
    cube_cells: int               # cube edge in cells
    cube_edge: float              # cube edge length
    cube_volume: float
    tail_mass: float              # mass above R before capping
    n_cubes_excised: int
    max_cube_mass_delta: float
    global_mass_delta: float
    atom_count: int
    atomized_distance: float | None
    epsilon: float
    distance_within_epsilon: bool | None

    def to_dict(self):
        d = dict(self.__dict__)
        return d


def rearrange_to_bounded(rho: DensityField, epsilon: float,
                         n_atoms: int = 256):
    """Produce a bounded density within epsilon of rho in the atomized metric.

    Space is partitioned into cubes of edge epsilon/(2*sqrt(3)) rounded down
    to whole cells (so the cube diagonal stays <= epsilon/2); R walks the
    integer ladder 2, 3, 4, ... until the mass above R is below a quarter of
    one cube volume.  Within each cube, values >= 2R are capped at 2R and the
    excised mass is spread uniformly over the cube's {rho <= R} cells.  The
    result satisfies ||sigma||_inf <= 2R with per-cube mass conservation.

    Returns (sigma, R, audit).  When `n_atoms` > 0 the audit includes the
    exact bottleneck distance between the n-atom atomizations of rho and
    sigma, checked against epsilon.
    """
    from .fields import discretize, mass

    M = mass(rho)
    if M <= 0:
        raise DegenerateInputError("rearrangement needs positive mass")
    h = rho.grid.spacing
    if epsilon < 2.0 * np.sqrt(3.0) * h * (1 - 1e-12):
        raise ConfigurationError(
            f"epsilon {epsilon} too small for spacing {h}: cubes must contain "
            f"whole cells (need epsilon >= 2*sqrt(3)*h = {2*np.sqrt(3)*h:.6g})")
    c = int(np.floor(epsilon / (2.0 * np.sqrt(3.0) * h) + 1e-12))
    cube_edge = c * h
    V = cube_edge ** 3
    vol = rho.grid.cell_volume

    values = rho.values
    R = None
    for candidate in range(2, 1_000_000):
        tail = float(vol * values[values > candidate].sum())
        if tail < V / 4.0:
            R = candidate
            break
    if R is None:
        raise NumericError("no R on the integer ladder satisfies the tail bound")

    dims = rho.grid.dims
    while True:
        sigma = values.copy()
        feasible = True
        max_delta = 0.0
        n_excised = 0
        for i0 in range(0, dims[0], c):
            for j0 in range(0, dims[1], c):
                for k0 in range(0, dims[2], c):
                    block = sigma[i0:i0 + c, j0:j0 + c, k0:k0 + c]
                    high = block >= 2.0 * R
                    if not high.any():
                        continue
                    excised = float((block[high] - 2.0 * R).sum())
                    if excised <= 0.0:
                        continue
                    low = block <= R
                    n_low = int(low.sum())
                    if n_low == 0:
                        # impossible for complete cubes by the R choice
                        feasible = False
                        break
                    before = float(block.sum())
                    block[high] = 2.0 * R
                    add = excised / n_low
                    block[low] += add
                    if float(block.max()) > 2.0 * R * (1 + 1e-12):
                        feasible = False
                        break
                    n_excised += 1
                    max_delta = max(max_delta, abs(float(block.sum()) - before))
                if not feasible:
                    break
            if not feasible:
                break
        if feasible:
            break
        R += 1  # grid-clipped edge cube lacked headroom; retry with larger R

    sigma_field = DensityField(rho.grid, sigma)
    global_delta = abs(float(sigma.sum()) - float(values.sum())) * vol
    tail = float(vol * values[values > R].sum())

    atom_dist = None
    within = None
    if n_atoms > 0:
        rho_hat = discretize(rho, n_atoms)
        sigma_hat = discretize(sigma_field, n_atoms)
        atom_dist = winf_distance(rho_hat, sigma_hat).distance
        within = bool(atom_dist <= epsilon)

    audit = RearrangeAudit(
        R=float(R), bound=2.0 * R, sup_sigma=float(sigma.max()),
        cube_cells=c, cube_edge=cube_edge, cube_volume=V, tail_mass=tail,
        n_cubes_excised=n_excised,
        max_cube_mass_delta=max_delta * vol,
        global_mass_delta=global_delta,
        atom_count=n_atoms, atomized_distance=atom_dist,
        epsilon=epsilon, distance_within_epsilon=within,
    )
    return sigma_field, float(R), audit


# ---------------------------------------------------------------------------
# admissible perturbation cone

@dataclass(frozen=True)
class PerturbationCone:
    """P_R(rho): perturbations vanishing where rho > R or |x| > R and
    nonnegative where rho < 1/R."""

    R: float
    rho: DensityField

    def __post_init__(self):
        if not self.R > 0:
            raise DomainError(f"cone parameter R must be > 0, got {self.R}")

    def contains(self, sigma: ScalarField):
        ok, _ = cone_membership(self, sigma)
        return ok


def cone_membership(cone: PerturbationCone, sigma: ScalarField):
    """Verbatim cell-by-cell P_R(rho) test.

    Returns (member, violation); `violation` is None or a dict locating the
    first offending cell in C order with the rule it broke.
    """
    rho = cone.rho
    if not sigma.same_grid(rho):
        raise ConfigurationError("sigma must live on the cone's reference grid")
    R = cone.R
    radius2 = rho.grid.radius2((0.0, 0.0, 0.0))
    zero_required = (rho.values > R) | (radius2 > R * R)
    bad_zero = zero_required & (sigma.values != 0.0)
    nonneg_required = rho.values < 1.0 / R
    bad_sign = nonneg_required & (sigma.values < 0.0)
    any_bad = bad_zero | bad_sign
    if not any_bad.any():
        return True, None
    idx = np.unravel_index(int(np.argmax(any_bad)), rho.grid.dims)
    reason = ("sigma must vanish where rho > R or |x| > R"
              if bad_zero[idx] else "sigma must be >= 0 where rho < 1/R")
    return False, {
        "cell": tuple(int(i) for i in idx),
        "sigma": float(sigma.values[idx]),
        "rho": float(rho.values[idx]),
        "reason": reason,
    }
