"""Cross-module invariant suites behind the `audit` scenario.

Each suite returns {"suite": name, "checks": [{"name", "passed", ...}]}.
Checks are self-contained, seeded, and fast; they exercise the library's
standing invariants rather than scenario-specific accuracy targets.
"""

from __future__ import annotations

import itertools

import numpy as np

from . import diagnostics, eos, fields, solver, wasserstein

__all__ = ["run_all_suites", "SUITES"]


def _check(name, passed, **detail):
    entry = {"name": name, "passed": bool(passed)}
    entry.update(detail)
    return entry


def eos_suite(seed=0):
    checks = []
    poly = eos.Polytrope(K=1.0, gamma=2.0)
    ladder = np.logspace(-6, 3, 60)
    ident = np.abs(poly.enthalpy(ladder) * ladder - poly.energy_density(ladder)
                   - poly.pressure(ladder))
    scale = np.maximum(poly.pressure(ladder), 1e-300)
    checks.append(_check("polytrope_identity_1e-12",
                         np.max(ident / scale) <= 1e-12,
                         max_rel=float(np.max(ident / scale))))

    rt = poly.inverse_enthalpy(poly.enthalpy(ladder))
    checks.append(_check("polytrope_phi_roundtrip_1e-9",
                         np.max(np.abs(rt - ladder) / ladder) <= 1e-9,
                         max_rel=float(np.max(np.abs(rt - ladder) / ladder))))

    mono = np.all(np.diff(poly.enthalpy(ladder)) > 0)
    checks.append(_check("enthalpy_strictly_increasing", mono))

    rho = np.logspace(-3, 1, 4000)
    tab = eos.Tabulated(np.column_stack([rho, rho ** 2]))
    s = np.logspace(-2, 0.9, 12)
    ident_t = np.abs(np.array([tab.enthalpy(x) * x - tab.energy_density(x)
                               - tab.pressure(x) for x in s]))
    checks.append(_check("tabulated_identity_1e-8",
                         np.max(ident_t / tab.pressure(s)) <= 1e-8,
                         max_rel=float(np.max(ident_t / tab.pressure(s)))))

    _, _, gap = eos.pressure_of_enthalpy_derivative_check(poly, 4.0, 1e-4)
    checks.append(_check("pressure_of_enthalpy_slope", gap <= 1e-6, gap=gap))
    return {"suite": "eos", "checks": checks}


def fields_suite(seed=0):
    rng = np.random.default_rng(seed)
    checks = []
    g = fields.Grid3.centered((12, 12, 12), spacing=0.2)

    worst_sym = 0.0
    worst_moi = 0.0
    for _ in range(20):
        a = fields.DensityField(g, rng.random(g.dims))
        b = fields.DensityField(g, rng.random(g.dims))
        G_ab = fields.interaction_energy(a, b, method="direct")
        G_ba = fields.interaction_energy(b, a, method="direct")
        worst_sym = max(worst_sym, abs(G_ab - G_ba) / abs(G_ab))
        lhs, rhs = fields.moi_expansion(a, b)
        worst_moi = max(worst_moi, abs(lhs - rhs) / max(abs(lhs), 1e-300))
    checks.append(_check("interaction_symmetry_1e-12", worst_sym <= 1e-12,
                         max_rel=worst_sym))
    checks.append(_check("moi_expansion_1e-12", worst_moi <= 1e-12,
                         max_rel=worst_moi))

    vals = np.zeros(g.dims)
    vals[3:6, 3:6, 3:6] = rng.random((3, 3, 3))
    rho = fields.DensityField(g, vals)
    shifted = fields.DensityField(g, np.roll(vals, (3, 2, 1), axis=(0, 1, 2)))
    pairs = [
        (fields.mass(rho), fields.mass(shifted)),
        (fields.moment_of_inertia(rho), fields.moment_of_inertia(shifted)),
        (fields.internal_energy(eos.Polytrope(1, 2), rho),
         fields.internal_energy(eos.Polytrope(1, 2), shifted)),
        (fields.interaction_energy(rho, rho, method="direct"),
         fields.interaction_energy(shifted, shifted, method="direct")),
    ]
    worst = max(abs(x - y) / max(abs(x), 1e-300) for x, y in pairs)
    checks.append(_check("translation_invariance_1e-14", worst <= 1e-14,
                         max_rel=worst))

    off = int(np.argmin(np.abs(g.axes()[0] - 1.0)))
    point = np.zeros(g.dims)
    point[g.dims[0] // 2, g.dims[1] // 2, g.dims[2] // 2] = 1.0 / g.cell_volume
    V = fields.potential(fields.DensityField(g, point), method="direct")
    x0 = g.axes()[0][g.dims[0] // 2]
    r = abs(g.axes()[0][off] - x0)
    got = V.values[off, g.dims[1] // 2, g.dims[2] // 2]
    checks.append(_check("point_mass_potential", abs(got - 1.0 / r) <= 2e-2 / r,
                         got=float(got), oracle=1.0 / r))

    xbar = fields.center_of_mass(rho)
    omega = 0.7
    v = fields.RigidRotation(omega, tuple(xbar)).velocity(g)
    Jz = fields.angular_momentum_z(rho, v)
    I = fields.moment_of_inertia(rho)
    T = fields.kinetic_energy(rho, v)
    checks.append(_check("rigid_rotation_identities",
                         abs(Jz - omega * I) <= 1e-12 * abs(Jz)
                         and abs(T - Jz * Jz / (2 * I)) <= 1e-12 * T,
                         J_err=abs(Jz - omega * I), T_err=abs(T - Jz ** 2 / (2 * I))))
    return {"suite": "fields", "checks": checks}


def wasserstein_suite(seed=0):
    rng = np.random.default_rng(seed)
    checks = []

    def brute(a, b):
        D = np.sqrt(((a.atoms[:, None, :] - b.atoms[None, :, :]) ** 2).sum(-1))
        return min(max(D[i, p] for i, p in enumerate(perm))
                   for perm in itertools.permutations(range(a.n)))

    exact = True
    for _ in range(30):
        n = int(rng.integers(1, 7))
        a = wasserstein.DiscreteMeasure(rng.normal(size=(n, 3)))
        b = wasserstein.DiscreteMeasure(rng.normal(size=(n, 3)))
        if wasserstein.winf_distance(a, b).distance != brute(a, b):
            exact = False
            break
    checks.append(_check("bottleneck_equals_bruteforce", exact))

    slack = np.inf
    for _ in range(30):
        pts = [wasserstein.DiscreteMeasure(rng.normal(size=(12, 3)))
               for _ in range(3)]
        dxy = wasserstein.winf_distance(pts[0], pts[1]).distance
        dyz = wasserstein.winf_distance(pts[1], pts[2]).distance
        dxz = wasserstein.winf_distance(pts[0], pts[2]).distance
        slack = min(slack, dxy + dyz - dxz)
    checks.append(_check("triangle_inequality_sampled", slack >= -1e-12,
                         min_slack=float(slack)))

    a = wasserstein.DiscreteMeasure(rng.normal(size=(20, 3)))
    shift = np.array([0.4, -0.2, 0.1])
    pf = wasserstein.push_forward(a, lambda p: p + shift)
    d = wasserstein.winf_distance(a, pf).distance
    checks.append(_check("push_forward_bound",
                         d <= np.linalg.norm(shift) + 1e-12, distance=float(d)))

    g = fields.Grid3.centered((18, 18, 18), spacing=0.1)
    vals = np.zeros(g.dims)
    vals[4:14, 4:14, 4:14] = rng.random((10, 10, 10)) * 0.6
    vals[9, 9, 9] = 12.0
    rho = fields.DensityField(g, vals)
    epsilon = 6 * np.sqrt(3) * g.spacing
    sigma, R, audit = wasserstein.rearrange_to_bounded(rho, epsilon, n_atoms=64)
    checks.append(_check("rearrangement_bound_and_mass",
                         audit.sup_sigma <= audit.bound
                         and audit.global_mass_delta <= 1e-12
                         and audit.max_cube_mass_delta <= 1e-12
                         and (audit.atomized_distance or 0.0) <= epsilon,
                         sup=audit.sup_sigma, bound=audit.bound,
                         distance=audit.atomized_distance))

    cone = wasserstein.PerturbationCone(2.0, rho)
    zero = fields.ScalarField(g, np.zeros(g.dims))
    member, _ = wasserstein.cone_membership(cone, zero)
    bad = np.zeros(g.dims)
    bad[0, 0, 0] = -1.0  # rho=0 < 1/R there: sign violation
    member_bad, viol = wasserstein.cone_membership(cone, fields.ScalarField(g, bad))
    checks.append(_check("cone_membership", member and not member_bad,
                         violation=viol))
    return {"suite": "wasserstein", "checks": checks}


def solver_suite(seed=0):
    rng = np.random.default_rng(seed)
    checks = []
    poly = eos.Polytrope(K=1.0, gamma=2.0)

    w = rng.random(500) * 2.0
    lam0 = -0.8
    vol = 1e-3
    monotone = True
    prev = -1.0
    for lam in np.linspace(-1.5, 0.5, 9):
        m = solver.component_mass_at_lambda(poly, w, lam, vol)
        if m < prev - 1e-15:
            monotone = False
        prev = m
    checks.append(_check("component_mass_monotone_in_lambda", monotone))

    target = solver.component_mass_at_lambda(poly, w, lam0, vol)
    lam = solver.solve_lambda(poly, w, target, 1e-12, vol)
    checks.append(_check("lambda_forward_invert", abs(lam - lam0) <= 1e-6,
                         err=abs(lam - lam0)))

    cfg = solver.SolverConfig(grid=solver.single_star_grid(n=24, half_extent=2.0),
                              tol_el=1e-4, max_iters=200)
    sol = solver.solve_single_star(poly, 1.0, cfg)
    checks.append(_check("small_star_converges",
                         sol.status == "converged" and sol.lambda_i[0] < 0
                         and sol.support_margin > 0,
                         status=sol.status, lam=sol.lambda_i[0]))
    return {"suite": "solver", "checks": checks}


def diagnostics_suite(seed=0):
    rng = np.random.default_rng(seed)
    checks = []
    prof = diagnostics.lane_emden_reference(2.0, 1.0, 1.0)
    theta_exact = np.sin(prof.xi) / prof.xi
    checks.append(_check("lane_emden_closed_form_1e-8",
                         np.max(np.abs(prof.theta - theta_exact)) <= 1e-8
                         and abs(prof.xi1 - np.pi) <= 1e-8,
                         sup_err=float(np.max(np.abs(prof.theta - theta_exact)))))

    g = fields.Grid3.centered((14, 14, 14), spacing=0.15)
    vals = np.zeros(g.dims)
    vals[4:9, 4:9, 4:9] = rng.random((5, 5, 5))
    rho = fields.DensityField(g, vals / (vals.sum() * g.cell_volume))
    rep = diagnostics.ep_residual(eos.Polytrope(1, 2), rho, 0.3)
    checks.append(_check("ep_zero_interior_exact",
                         rep.ep_zero_interior_max == 0.0,
                         value=rep.ep_zero_interior_max))
    return {"suite": "diagnostics", "checks": checks}


SUITES = {
    "eos": eos_suite,
    "fields": fields_suite,
    "wasserstein": wasserstein_suite,
    "solver": solver_suite,
    "diagnostics": diagnostics_suite,
}


def run_all_suites(seed=0):
    results = [fn(seed) for fn in SUITES.values()]
    passed = all(c["passed"] for r in results for c in r["checks"])
    return results, passed
