"""Constrained minimization of E_J by self-consistent-field iteration.

The first-order condition for a constrained minimizer is the fixed-point
relation

    rho = phi([ J^2/(2 I^2) r^2(x - xbar) + V_rho + lambda_i ]_+)

on each component, with the per-component multiplier lambda_i pinned by the
component mass.  The SCF loop alternates a potential evaluation with that
density reconstruction, solving lambda_i by an expanding bracket plus
bisection (the component mass is continuous and strictly increasing in
lambda because phi is), and relaxes the update to damp oscillation.
Convergence is monitored through the sup-norm defect of the fixed-point
relation on the support; it is never assumed.

Binary geometry: component supports are confined to two closed balls of
radius eta/4 centered eta apart on the x-axis (eta = J^2 / mu_r^2,
mu_r = m(1-m)), placed so the point-mass center of mass sits at the origin.
The J = 0 single-star problem runs the same loop with one ball at the
origin and W = V_rho only.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy import ndimage

from .errors import (ConfigurationError, DegenerateInputError, DomainError,
                     NoSolutionError, SolverDivergenceError)
from .fields import (DensityField, EnergyLedger, Grid3, center_of_mass,
                     internal_energy, mass, moment_of_inertia, potential)

__all__ = [
    "BinaryProblem", "SolverConfig", "EquilibriumSolution",
    "build_problem", "binary_grid", "single_star_grid", "initial_guess",
    "component_mass_at_lambda", "solve_lambda", "scf_step", "solve",
    "solve_single_star",
]

_MOI_FLOOR = 1e-12


@dataclass(frozen=True)
class BinaryProblem:
    """Two-ball admissible geometry derived from (m, J)."""

    m: float
    J: float
    mu_r: float
    eta: float
    y_m: tuple[float, float, float]
    y_1m: tuple[float, float, float]
    ball_radius: float

    @property
    def separation(self) -> float:
        """dist(Omega_m, Omega_{1-m}) = eta/2."""
        return self.eta / 2.0

    @property
    def union_diameter(self) -> float:
        """diam(Omega_m u Omega_{1-m}) = 3 eta/2."""
        return 1.5 * self.eta

    @property
    def centers(self):
        return (np.array(self.y_m), np.array(self.y_1m))

    @property
    def component_masses(self):
        return (self.m, 1.0 - self.m)


def build_problem(m: float, J: float) -> BinaryProblem:
    """Geometry fields from the mass fraction and angular momentum.

    Ball centers sit symmetrically about the origin on the x-axis at z = 0
    with the combined point-mass center of mass at the origin.
    """
    if not 0.0 < m < 1.0:
        raise DomainError(f"mass fraction m must lie in (0,1), got {m}")
    if J < 0:
        raise DomainError(f"angular momentum must be >= 0, got {J}")
    mu_r = m * (1.0 - m)
    if J == 0.0:
        raise DegenerateInputError(
            "binary geometry degenerates at J = 0 (zero separation)")
    eta = J * J / (mu_r * mu_r)
    y_m = ((1.0 - m) * eta, 0.0, 0.0)
    y_1m = (-m * eta, 0.0, 0.0)
    return BinaryProblem(m=m, J=J, mu_r=mu_r, eta=eta, y_m=y_m, y_1m=y_1m,
                         ball_radius=eta / 4.0)


@dataclass(frozen=True)
class SolverConfig:
    """Knobs of the SCF loop; tolerances are pinned, never adaptive."""

    grid: Grid3 | None = None
    theta: float = 0.5
    max_iters: int = 400
    tol_el: float = 1e-6
    tol_mass: float = 1e-10
    lambda_bracket_factor: float = 4.0
    initial_guess_kind: str = "parabolic"
    domain_radius: float | None = None   # single-star ball; default from grid
    potential_method: str = "auto"
    workers: int = 1

    def __post_init__(self):
        if not 0.0 < self.theta <= 1.0:
            raise ConfigurationError(f"relaxation theta must be in (0,1], got {self.theta}")
        if self.tol_el <= 0 or self.tol_mass <= 0:
            raise ConfigurationError("tolerances must be positive")
        if self.max_iters < 1:
            raise ConfigurationError("max_iters must be >= 1")
        if self.lambda_bracket_factor <= 1.0:
            raise ConfigurationError("lambda bracket factor must exceed 1")
        if self.initial_guess_kind not in ("parabolic", "uniform"):
            raise ConfigurationError(
                f"unknown initial guess kind {self.initial_guess_kind!r}")


@dataclass
class EquilibriumSolution:
    """Converged (or honestly non-converged) output of one solver run."""

    rho: DensityField
    lambda_i: tuple
    omega: float
    ledger: EnergyLedger
    el_residual_sup: float
    ep_residual_sup: float
    iterations: int
    support_margin: float
    status: str                      # converged | max_iters | suspect
    component_masses: tuple
    n_components: int
    energy_trace: list = field(default_factory=list)
    energy_decreased_net: bool = True
    problem: BinaryProblem | None = None
    total_mass_target: float = 1.0

    @property
    def lambdas_negative(self) -> bool:
        return all(l < 0 for l in self.lambda_i)

    def to_dict(self):
        d = {
            "status": self.status,
            "iterations": self.iterations,
            "lambda_i": list(self.lambda_i),
            "omega": self.omega,
            "el_residual_sup": self.el_residual_sup,
            "ep_residual_sup": self.ep_residual_sup,
            "support_margin": self.support_margin,
            "component_masses": list(self.component_masses),
            "n_components": self.n_components,
            "energy_trace": list(self.energy_trace),
            "energy_decreased_net": self.energy_decreased_net,
            "ledger": self.ledger.to_dict(),
        }
        if self.problem is not None:
            d["problem"] = {"m": self.problem.m, "J": self.problem.J,
                            "mu_r": self.problem.mu_r, "eta": self.problem.eta,
                            "ball_radius": self.problem.ball_radius,
                            "dist": self.problem.separation,
                            "diam": self.problem.union_diameter}
        d["total_mass_target"] = self.total_mass_target
        return d


# ---------------------------------------------------------------------------
# grids and initial data

def single_star_grid(n: int = 64, half_extent: float = 2.0) -> Grid3:
    """Cubic grid of n^3 cells spanning [-half_extent, half_extent]^3,
    cell centers symmetric about the origin."""
    return Grid3.centered((n, n, n), spacing=2.0 * half_extent / n)


def binary_grid(problem: BinaryProblem, dims=(96, 64, 64),
                pad: float = 1.10) -> Grid3:
    """Origin-symmetric grid covering both balls with a padding factor."""
    need_x = (max(abs(problem.y_m[0]), abs(problem.y_1m[0]))
              + problem.ball_radius) * pad
    need_yz = problem.ball_radius * pad * 1.2
    h = max(2 * need_x / dims[0], 2 * need_yz / dims[1], 2 * need_yz / dims[2])
    return Grid3.centered(dims, h)


def _component_masks(grid: Grid3, centers, radius):
    masks = []
    for c in centers:
        masks.append(grid.radius2(c) <= radius * radius)
    return masks


def _bump_profile(grid: Grid3, center, radius_support, kind):
    r2 = grid.radius2(center)
    if kind == "uniform":
        return (r2 < radius_support ** 2).astype(float)
    t = 1.0 - r2 / radius_support ** 2
    return np.where(t > 0.0, t * t, 0.0)


def initial_guess(problem: BinaryProblem, eos, grid: Grid3,
                  kind: str = "parabolic") -> DensityField:
    """Two compact bumps of masses (m, 1-m) centered at the ball centers.

    Support stays at least one cell inside each ball; per-component masses
    are exact after renormalization.
    """
    h = grid.spacing
    R = problem.ball_radius
    if h > R / 4.0:
        raise ConfigurationError(
            f"grid too coarse to separate the balls: spacing {h:.3g} vs "
            f"ball radius {R:.3g} (need >= 4 cells per radius)")
    for c in problem.centers:
        lo = [grid.origin[a] for a in range(3)]
        hi = [grid.origin[a] + grid.spacing * (grid.dims[a] - 1) for a in range(3)]
        if any(c[a] - R < lo[a] - h / 2 or c[a] + R > hi[a] + h / 2 for a in range(3)):
            raise ConfigurationError("grid does not cover the constraint balls")
    a = min(0.5 * R, R - 2.0 * h)
    values = np.zeros(grid.dims)
    for center, target in zip(problem.centers, problem.component_masses):
        bump = _bump_profile(grid, center, a, kind)
        s = bump.sum() * grid.cell_volume
        if s <= 0:
            raise ConfigurationError("initial bump vanished; grid too coarse")
        values += bump * (target / s)
    return DensityField(grid, values)


# ---------------------------------------------------------------------------
# multiplier solve

def component_mass_at_lambda(eos, w_component, lam: float,
                             cell_volume: float) -> float:
    """h^3 * sum over the component of phi([W + lambda]_+).

    Strictly increasing and continuous in lambda on the region where the
    positive part is active, because phi is strictly increasing.
    """
    w = np.asarray(w_component, dtype=float)
    arg = w + lam
    pos = arg > 0.0
    if not pos.any():
        return 0.0
    return float(cell_volume * np.sum(eos.inverse_enthalpy(arg[pos])))


def solve_lambda(eos, w_component, target_mass: float, tol_mass: float,
                 cell_volume: float, bracket_factor: float = 4.0,
                 max_bracket: float = 1e12) -> float:
    """Unique multiplier with the component mass pinned to `target_mass`.

    Expanding bracket upward from the zero-mass level -max(W), then
    bisection; uniqueness comes from strict monotonicity of the mass in
    lambda.
    """
    if not target_mass > 0:
        raise DomainError(f"target mass must be positive, got {target_mass}")
    w = np.asarray(w_component, dtype=float)
    if w.size == 0:
        raise DegenerateInputError("empty component")
    lo = -float(w.max())          # mass(lo) = 0 exactly
    step = max(1.0, abs(lo)) * 0.25
    hi = lo + step
    while component_mass_at_lambda(eos, w, hi, cell_volume) < target_mass:
        step *= bracket_factor
        hi = lo + step
        if step > max_bracket:
            reachable = component_mass_at_lambda(eos, w, lo + max_bracket,
                                                 cell_volume)
            raise NoSolutionError(
                f"lambda bracket exhausted at {max_bracket:g}; achievable "
                f"mass range [0, {reachable:g}] misses target {target_mass:g}")
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        m_mid = component_mass_at_lambda(eos, w, mid, cell_volume)
        if abs(m_mid - target_mass) <= tol_mass * target_mass:
            return mid
        if m_mid < target_mass:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-15 * max(1.0, abs(hi)):
            break
    return 0.5 * (lo + hi)


# ---------------------------------------------------------------------------
# SCF core

def _relu(x):
    return np.maximum(x, 0.0)


def _effective_w(rho: DensityField, J: float, V_values,
                 method="auto", workers=1):
    """W(x) = J^2/(2 I^2) r^2(x - xbar) + V(x) for the current iterate."""
    xbar = center_of_mass(rho)
    I = moment_of_inertia(rho, xbar)
    if I <= _MOI_FLOOR and J != 0.0:
        raise SolverDivergenceError(
            f"moment of inertia collapsed to {I:.3e}", {"I": I})
    if J == 0.0:
        return V_values, xbar, I, 0.0
    omega = J / I
    W = (J * J / (2.0 * I * I)) * rho.grid.planar_r2(xbar) + V_values
    return W, xbar, I, omega


def _reconstruct(eos, W, lambdas, masks, targets, cell_volume):
    """Candidate density phi([W + lambda_i]_+) per component, masses re-pinned."""
    out = np.zeros_like(W)
    for mask, lam, target in zip(masks, lambdas, targets):
        arg = _relu(W[mask] + lam)
        vals = np.zeros_like(arg)
        pos = arg > 0
        if pos.any():
            vals[pos] = eos.inverse_enthalpy(arg[pos])
        got = vals.sum() * cell_volume
        if got <= 0:
            raise SolverDivergenceError("component candidate lost all mass",
                                        {"lambda": lam})
        out[mask] = vals * (target / got)
    return out


def _el_residual_sup(eos, rho_values, W, lambdas, masks):
    """sup over the support of |A'(rho) - [W + lambda_i]_+|."""
    worst = 0.0
    for mask, lam in zip(masks, lambdas):
        sup_mask = mask & (rho_values > 0)
        if not sup_mask.any():
            continue
        defect = eos.enthalpy(rho_values[sup_mask]) - _relu(W[sup_mask] + lam)
        worst = max(worst, float(np.abs(defect).max()))
    return worst


def _support_margin(rho: DensityField, centers, radius):
    """min over support cells of (radius - |x - center_i|), cell centers."""
    margin = np.inf
    support = rho.values > 0
    for c in centers:
        dist = np.sqrt(rho.grid.radius2(c))
        masked = support & (dist <= radius)
        if masked.any():
            margin = min(margin, float(radius - dist[masked].max()))
    return margin if np.isfinite(margin) else 0.0


def scf_step(eos, problem: BinaryProblem, rho_k: DensityField,
             config: SolverConfig):
    """One SCF update from rho_k; returns (rho_next, lambdas, diagnostics).

    Diagnostics carry the candidate's fixed-point defect, the honest EL
    residual of rho_k itself, the step's energy change, and a flag when the
    support touches the constraint boundary.
    """
    grid = rho_k.grid
    masks = _component_masks(grid, problem.centers, problem.ball_radius)
    targets = problem.component_masses
    outside = rho_k.values[~(masks[0] | masks[1])]
    if outside.size and outside.max() > 0:
        raise DomainError("rho_k has support outside Omega_m u Omega_{1-m}")

    V = potential(rho_k, method=config.potential_method, workers=config.workers)
    W, xbar, I, omega = _effective_w(rho_k, problem.J, V.values,
                                     config.potential_method, config.workers)
    lambdas = tuple(
        solve_lambda(eos, W[mask], target, config.tol_mass, grid.cell_volume,
                     config.lambda_bracket_factor)
        for mask, target in zip(masks, targets))
    residual = _el_residual_sup(eos, rho_k.values, W, lambdas, masks)
    candidate = _reconstruct(eos, W, lambdas, masks, targets, grid.cell_volume)

    cand_defect = 0.0
    for mask, lam in zip(masks, lambdas):
        pos = mask & (candidate > 0)
        if pos.any():
            d = eos.enthalpy(candidate[pos]) - _relu(W[pos] + lam)
            cand_defect = max(cand_defect, float(np.abs(d).max()))

    mixed = (1.0 - config.theta) * rho_k.values + config.theta * candidate
    for mask, target in zip(masks, targets):
        got = mixed[mask].sum() * grid.cell_volume
        mixed[mask] *= target / got
    rho_next = DensityField(grid, mixed)

    E_k = (internal_energy(eos, rho_k)
           - 0.5 * grid.cell_volume * float(np.sum(V.values * rho_k.values))
           + (problem.J ** 2 / (2 * I) if problem.J else 0.0))
    from .fields import total_energy
    E_next = total_energy(eos, rho_next, problem.J,
                          method=config.potential_method,
                          workers=config.workers).total

    margin = _support_margin(rho_next, problem.centers, problem.ball_radius)
    diag = {
        "el_residual_sup": residual,
        "candidate_defect_sup": cand_defect,
        "energy_before": E_k,
        "energy_after": E_next,
        "energy_delta": E_next - E_k,
        "omega": omega,
        "lambda_i": lambdas,
        "support_touches_boundary": margin <= 0.0,
        "support_margin": margin,
    }
    return rho_next, lambdas, diag


def _run_scf(eos, rho: DensityField, J: float, masks, targets, centers,
             radius, config: SolverConfig, problem=None, total_mass=1.0):
    grid = rho.grid
    theta = config.theta
    energy_trace = []
    lambdas = tuple(0.0 for _ in masks)
    residual = np.inf
    increases = 0
    prev_E = None
    it = 0
    for it in range(1, config.max_iters + 1):
        V = potential(rho, method=config.potential_method,
                      workers=config.workers)
        W, xbar, I, omega = _effective_w(rho, J, V.values,
                                         config.potential_method,
                                         config.workers)
        lambdas = tuple(
            solve_lambda(eos, W[mask], target, config.tol_mass,
                         grid.cell_volume, config.lambda_bracket_factor)
            for mask, target in zip(masks, targets))
        residual = _el_residual_sup(eos, rho.values, W, lambdas, masks)
        E = (internal_energy(eos, rho)
             - 0.5 * grid.cell_volume * float(np.sum(V.values * rho.values))
             + (J * J / (2 * I) if J else 0.0))
        energy_trace.append(E)
        if not np.isfinite(E) or not np.isfinite(residual):
            raise SolverDivergenceError("energy or residual became non-finite",
                                        {"iteration": it, "energy": E})
        if residual <= config.tol_el:
            break
        if prev_E is not None and E > prev_E:
            increases += 1
            if increases >= 2:
                theta = max(theta / 2.0, 0.05)
                increases = 0
        else:
            increases = 0
        prev_E = E

        candidate = _reconstruct(eos, W, lambdas, masks, targets,
                                 grid.cell_volume)
        mixed = (1.0 - theta) * rho.values + theta * candidate
        for mask, target in zip(masks, targets):
            got = mixed[mask].sum() * grid.cell_volume
            if not np.isfinite(got) or got <= 0:
                raise SolverDivergenceError("component mass drifted to zero",
                                            {"iteration": it})
            mixed[mask] *= target / got
        rho = DensityField(grid, mixed)

    converged = residual <= config.tol_el
    margin = _support_margin(rho, centers, radius)
    support = rho.values > 0
    n_components = int(ndimage.label(support)[0].max()) if support.any() else 0

    from .fields import total_energy
    ledger = total_energy(eos, rho, J, method=config.potential_method,
                          workers=config.workers)
    from .diagnostics import ep_residual
    ep = ep_residual(eos, rho, J, method=config.potential_method,
                     workers=config.workers)

    if converged:
        status = "converged"
        if any(l >= 0 for l in lambdas) or margin <= 0.0:
            status = "suspect"
    else:
        status = "max_iters"
    comp_masses = tuple(float(rho.values[m].sum() * grid.cell_volume)
                        for m in masks)
    decreased = bool(energy_trace[-1] <= energy_trace[0] + 1e-12)
    return EquilibriumSolution(
        rho=rho, lambda_i=lambdas, omega=ledger.omega, ledger=ledger,
        el_residual_sup=float(residual), ep_residual_sup=float(ep.ep_sup),
        iterations=it, support_margin=margin, status=status,
        component_masses=comp_masses, n_components=n_components,
        energy_trace=energy_trace, energy_decreased_net=decreased,
        problem=problem, total_mass_target=total_mass)


def solve(eos, problem: BinaryProblem, config: SolverConfig | None = None,
          rho0: DensityField | None = None) -> EquilibriumSolution:
    """Iterate the SCF map on the binary problem until the EL defect is small.

    The run records whether both multipliers are negative, whether the
    support stayed strictly inside the balls, and whether the energy
    decreased net; failure to converge is reported, never hidden.
    """
    config = config or SolverConfig()
    grid = config.grid or binary_grid(problem)
    if config.grid is None:
        config = replace(config, grid=grid)
    if rho0 is None:
        rho0 = initial_guess(problem, eos, grid, config.initial_guess_kind)
    masks = _component_masks(grid, problem.centers, problem.ball_radius)
    if masks[0].sum() == 0 or masks[1].sum() == 0:
        raise ConfigurationError("a constraint ball contains no grid cells")
    return _run_scf(eos, rho0, problem.J, masks, problem.component_masses,
                    problem.centers, problem.ball_radius, config,
                    problem=problem, total_mass=1.0)


def solve_single_star(eos, total_mass: float,
                      config: SolverConfig | None = None,
                      rho0: DensityField | None = None) -> EquilibriumSolution:
    """Non-rotating problem: one component, W = V_rho, ball domain at the origin.

    The returned ledger total is the non-rotating minimum energy e_0(mass).
    """
    if not total_mass > 0:
        raise DomainError(f"total mass must be positive, got {total_mass}")
    config = config or SolverConfig(grid=single_star_grid())
    grid = config.grid or single_star_grid()
    half = min(grid.spacing * (grid.dims[a] - 1) / 2.0 for a in range(3))
    radius = config.domain_radius or 0.95 * half
    if radius <= 4 * grid.spacing:
        raise ConfigurationError("domain ball too small for the grid spacing")
    center = (0.0, 0.0, 0.0)
    mask = grid.radius2(center) <= radius * radius
    if rho0 is None:
        a = 0.6 * radius
        bump = _bump_profile(grid, center, a, config.initial_guess_kind)
        s = bump.sum() * grid.cell_volume
        if s <= 0:
            raise ConfigurationError("initial bump vanished; grid too coarse")
        rho0 = DensityField(grid, bump * (total_mass / s))
    return _run_scf(eos, rho0, 0.0, [mask], [total_mass], [np.array(center)],
                    radius, config, problem=None, total_mass=total_mass)
