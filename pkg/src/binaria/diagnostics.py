"""Machine checks of the analytic apparatus on concrete grid fields.

Euler-Lagrange and reduced Euler-Poisson residuals, the variational
derivative of the energy against finite differences along admissible cone
directions, multiplier negativity/constancy audits, and an independent
Lane-Emden reference integrator used as the oracle for non-rotating
polytropic stars.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage
from scipy.integrate import solve_ivp

from .errors import (ConfigurationError, DegenerateInputError, DomainError,
                     NumericError)
from .fields import (DensityField, ScalarField, center_of_mass,
                     internal_energy, interaction_energy, mass,
                     moment_of_inertia, potential, potential_gradient,
                     rotational_energy)
from .wasserstein import PerturbationCone, cone_membership

__all__ = [
    "ResidualReport", "DerivativeCheck", "LaneEmdenProfile",
    "el_residual", "ep_residual", "variational_derivative_field",
    "directional_derivative_check", "multiplier_audit",
    "lane_emden_reference",
]


@dataclass
class ResidualReport:
    """Sup/L2 defects of the first-order conditions, with the multipliers used."""

    el_sup: float | None = None
    el_l2: float | None = None
    ep_sup: float | None = None
    ep_zero_interior_max: float | None = None
    ep_scale_constant: float | None = None   # ep_sup / (h^2 + tol_el)
    lambdas: tuple = ()
    support_margin: float | None = None
    passed: bool | None = None
    tolerances: dict = field(default_factory=dict)
    notes: list = field(default_factory=list)

    def to_dict(self):
        return {
            "el_sup": self.el_sup, "el_l2": self.el_l2, "ep_sup": self.ep_sup,
            "ep_zero_interior_max": self.ep_zero_interior_max,
            "ep_scale_constant": self.ep_scale_constant,
            "lambdas": list(self.lambdas),
            "support_margin": self.support_margin,
            "passed": self.passed, "tolerances": dict(self.tolerances),
            "notes": list(self.notes),
        }


def _component_labels(rho: DensityField, component_masks=None):
    if component_masks is not None:
        for m in component_masks:
            if not (m & (rho.values > 0)).any():
                raise DegenerateInputError("a supplied component carries no mass")
        return list(component_masks)
    support = rho.values > 0
    if not support.any():
        raise DegenerateInputError("field has empty support")
    labels, n = ndimage.label(support)
    return [labels == k for k in range(1, n + 1)]


def _neighbourhood(mask, spacing, delta):
    """Cells within Euclidean distance delta of the masked set."""
    if delta <= 0:
        return mask.copy()
    dist = ndimage.distance_transform_edt(~mask, sampling=spacing)
    return dist <= delta


def el_residual(eos, rho: DensityField, J: float, lambdas=None,
                component_masks=None, delta: float | None = None,
                tol_el: float | None = None, method: str = "auto",
                workers: int = 1) -> ResidualReport:
    """Defect of A'(rho) = [J^2/(2 I^2) r^2(x - xbar) + V + lambda_i]_+.

    Evaluated on a delta-neighbourhood of each component (default
    delta = 2h, the smallest neighbourhood the grid resolves).  When
    `lambdas` is omitted each multiplier is re-fit as the median of
    A'(rho) - W over the robust support {rho > 0.01 max rho} of the
    component, which is the EL relation solved for lambda.
    """
    comps = _component_labels(rho, component_masks)
    grid = rho.grid
    h = grid.spacing
    if delta is None:
        delta = 2.0 * h
    V = potential(rho, method=method, workers=workers)
    xbar = center_of_mass(rho)
    if J != 0.0:
        I = moment_of_inertia(rho, xbar)
        W = (J * J / (2 * I * I)) * grid.planar_r2(xbar) + V.values
    else:
        W = V.values

    aprime = np.zeros_like(rho.values)
    pos = rho.values > 0
    aprime[pos] = eos.enthalpy(rho.values[pos])

    fitted = []
    sup = 0.0
    l2_sq = 0.0
    notes = []
    for k, comp in enumerate(comps):
        comp_support = comp & pos
        if not comp_support.any():
            raise DegenerateInputError(f"component {k} carries no mass")
        if lambdas is None:
            robust = comp & (rho.values > 0.01 * rho.values.max())
            lam = float(np.median(aprime[robust] - W[robust]))
            notes.append(f"lambda[{k}] re-fit from the EL relation")
        else:
            lam = float(lambdas[k])
        fitted.append(lam)
        hood = _neighbourhood(comp_support, h, delta)
        defect = aprime[hood] - np.maximum(W[hood] + lam, 0.0)
        sup = max(sup, float(np.abs(defect).max()))
        l2_sq += float(np.sum(defect ** 2)) * grid.cell_volume

    passed = None if tol_el is None else bool(sup <= tol_el)
    return ResidualReport(el_sup=sup, el_l2=math.sqrt(l2_sq),
                          lambdas=tuple(fitted), passed=passed,
                          tolerances={} if tol_el is None else {"tol_el": tol_el},
                          notes=notes)


def ep_residual(eos, rho: DensityField, J: float, tol_el: float = 1e-6,
                method: str = "auto", workers: int = 1) -> ResidualReport:
    """Vector defect of the stationary force balance on interior cells.

        -omega^2 rho P12(x - xbar) + grad P(rho) - rho grad V

    grad P(rho) is taken by central differences of the composed pressure
    field (only grad P need exist, not grad rho); grad V comes from the
    vector kernel.  On interior cells of {rho = 0} every term vanishes
    identically, which is reported separately.
    """
    grid = rho.grid
    h = grid.spacing
    values = rho.values
    if mass(rho) > 0:
        xbar = center_of_mass(rho)
        if J != 0.0:
            I = moment_of_inertia(rho, xbar)
            omega = J / I
        else:
            omega = 0.0
    else:
        xbar = np.zeros(3)
        omega = 0.0

    P_field = np.zeros_like(values)
    pos = values > 0
    P_field[pos] = eos.pressure(values[pos])
    gP = np.stack(np.gradient(P_field, h, edge_order=1), axis=-1)
    gV = potential_gradient(rho, method=method, workers=workers)

    X, Y, _ = grid.meshgrid()
    defect = np.empty(grid.dims + (3,))
    defect[..., 0] = -omega * omega * values * (X - xbar[0])
    defect[..., 1] = -omega * omega * values * (Y - xbar[1])
    defect[..., 2] = 0.0
    defect += gP - values[..., None] * gV

    interior = np.zeros(grid.dims, dtype=bool)
    interior[1:-1, 1:-1, 1:-1] = True
    norms = np.sqrt((defect ** 2).sum(axis=-1))
    ep_sup = float(norms[interior].max()) if interior.any() else 0.0

    # cells of {rho = 0} whose entire finite-difference stencil is zero
    zero = ~pos
    zero_interior = zero.copy()
    for axis in range(3):
        zero_interior &= np.roll(zero, 1, axis=axis)
        zero_interior &= np.roll(zero, -1, axis=axis)
    zero_interior &= interior
    zmax = float(norms[zero_interior].max()) if zero_interior.any() else 0.0

    scale = h * h + tol_el
    return ResidualReport(ep_sup=ep_sup, ep_zero_interior_max=zmax,
                          ep_scale_constant=ep_sup / scale,
                          tolerances={"tol_el": tol_el, "h2_plus_tol": scale})


def variational_derivative_field(eos, rho: DensityField, J: float,
                                 method: str = "auto",
                                 workers: int = 1) -> ScalarField:
    """E_J'(rho)(x) = A'(rho(x)) - V_rho(x) - J^2/(2 I^2) r^2(x - xbar)."""
    if mass(rho) <= 0:
        raise DegenerateInputError("variational derivative needs positive mass")
    grid = rho.grid
    V = potential(rho, method=method, workers=workers)
    aprime = np.zeros_like(rho.values)
    pos = rho.values > 0
    aprime[pos] = eos.enthalpy(rho.values[pos])
    out = aprime - V.values
    if J != 0.0:
        xbar = center_of_mass(rho)
        I = moment_of_inertia(rho, xbar)
        out = out - (J * J / (2 * I * I)) * grid.planar_r2(xbar)
    return ScalarField(grid, out)


@dataclass
class DerivativeCheck:
    """Finite-difference vs analytic directional derivative, term by term."""

    t_ladder: np.ndarray
    sigma_mass: float
    analytic: dict
    fd: dict                       # term -> array over t_ladder
    gaps: dict                     # term -> array over t_ladder
    notes: list = field(default_factory=list)

    def gap_decreasing(self, term="total"):
        g = self.gaps[term]
        return bool(np.all(np.diff(g) < 0))


_TERMS = ("internal", "interaction_half", "rotational", "total")


def directional_derivative_check(eos, rho: DensityField, J: float,
                                 sigma: ScalarField, t_ladder,
                                 cone: PerturbationCone,
                                 method: str = "auto",
                                 workers: int = 1) -> DerivativeCheck:
    """Compare (E_J(rho + t sigma) - E_J(rho)) / t with the analytic derivative.

    The direction must belong to the supplied admissible cone; ladder steps
    that would make rho + t sigma negative are dropped with a notice.  Each
    energy term is checked separately:

        U      against  h^3 sum A'(rho) sigma
        -G/2   against  -h^3 sum sigma V_rho
        T_J    against  -J^2/(2 I^2) h^3 sum r^2(x - xbar) sigma
    """
    member, violation = cone_membership(cone, sigma)
    if not member:
        raise DomainError(f"sigma is not an admissible perturbation: {violation}")
    if not sigma.same_grid(rho):
        raise ConfigurationError("sigma must share the density's grid")
    t_ladder = np.asarray(sorted(t_ladder, reverse=True), dtype=float)
    if np.any(t_ladder <= 0):
        raise DomainError("the t ladder must be positive")
    notes = []
    keep = []
    for t in t_ladder:
        if np.all(rho.values + t * sigma.values >= 0):
            keep.append(t)
        else:
            notes.append(f"t={t:g} dropped: rho + t sigma < 0 somewhere")
    if not keep:
        raise DomainError("every ladder step makes the density negative")
    t_ladder = np.array(keep)

    grid = rho.grid
    vol = grid.cell_volume
    V0 = potential(rho, method=method, workers=workers)
    xbar = center_of_mass(rho)
    I0 = moment_of_inertia(rho, xbar)
    U0 = internal_energy(eos, rho)
    G0 = float(vol * np.sum(V0.values * rho.values))
    if J != 0.0:
        TJ0, _ = rotational_energy(rho, J)
    else:
        TJ0 = 0.0

    r2 = grid.planar_r2(xbar)
    analytic = {
        "internal": float(vol * np.sum(
            np.where(rho.values > 0, _enthalpy_filled(eos, rho.values), 0.0)
            * sigma.values)),
        "interaction_half": float(-vol * np.sum(sigma.values * V0.values)),
        "rotational": (float(-(J * J / (2 * I0 * I0))
                             * vol * np.sum(r2 * sigma.values))
                       if J != 0.0 else 0.0),
    }
    analytic["total"] = (analytic["internal"] + analytic["interaction_half"]
                         + analytic["rotational"])

    fd = {term: [] for term in _TERMS}
    for t in t_ladder:
        pert = DensityField(grid, rho.values + t * sigma.values)
        U_t = internal_energy(eos, pert)
        G_t = interaction_energy(pert, pert, method=method, workers=workers)
        if J != 0.0:
            TJ_t, _ = rotational_energy(pert, J)
        else:
            TJ_t = 0.0
        fd["internal"].append((U_t - U0) / t)
        fd["interaction_half"].append((-G_t / 2.0 + G0 / 2.0) / t)
        fd["rotational"].append((TJ_t - TJ0) / t)
        fd["total"].append(((U_t - G_t / 2.0 + TJ_t)
                            - (U0 - G0 / 2.0 + TJ0)) / t)
    fd = {k: np.array(v) for k, v in fd.items()}
    gaps = {k: np.abs(fd[k] - analytic[k]) for k in _TERMS}
    return DerivativeCheck(t_ladder=t_ladder,
                           sigma_mass=float(vol * sigma.values.sum()),
                           analytic=analytic, fd=fd, gaps=gaps, notes=notes)


def _enthalpy_filled(eos, values):
    out = np.zeros_like(values)
    pos = values > 0
    out[pos] = eos.enthalpy(values[pos])
    return out


def multiplier_audit(eos, solution, tol_el: float = 1e-6,
                     margin_factor: float = 10.0,
                     method: str = "auto", workers: int = 1):
    """Audit a solution for the multiplier/support contracts.

    Checks lambda_i < 0 with margin |lambda_i| > margin_factor * tol_el,
    constancy of the variational derivative on each positive-density
    component, and a strictly positive support margin.
    """
    checks = []
    for k, lam in enumerate(solution.lambda_i):
        ok = lam < 0 and abs(lam) > margin_factor * tol_el
        checks.append({"name": f"lambda_{k}_negative_with_margin",
                       "passed": bool(ok), "lambda": lam,
                       "required_margin": margin_factor * tol_el})
    for entry in multiplier_constancy(eos, solution, tol_el,
                                      method=method, workers=workers):
        checks.append({"name": f"derivative_constant_component_{entry['component']}",
                       "passed": entry["passed"], "std": entry["std"],
                       "mean": entry["mean"], "tol_el": tol_el})
    checks.append({"name": "support_margin_positive",
                   "passed": bool(solution.support_margin > 0),
                   "margin": solution.support_margin})
    return {"passed": all(c["passed"] for c in checks), "checks": checks}


def multiplier_constancy(eos, solution, tol_el: float,
                         method: str = "auto", workers: int = 1):
    """Standard deviation of E_J'(rho) over each {rho>0} component.

    For a converged solution the derivative is the constant lambda_i on each
    component; the sampled deviation must stay at the EL tolerance.
    """
    rho = solution.rho
    J = solution.problem.J if solution.problem is not None else 0.0
    E1 = variational_derivative_field(eos, rho, J, method=method,
                                      workers=workers)
    labels, n = ndimage.label(rho.values > 0)
    out = []
    for k in range(1, n + 1):
        comp = labels == k
        vals = E1.values[comp]
        out.append({"component": k, "mean": float(vals.mean()),
                    "std": float(vals.std()),
                    "passed": bool(vals.std() <= tol_el)})
    return out


# ---------------------------------------------------------------------------
# Lane-Emden oracle

@dataclass(frozen=True)
class LaneEmdenProfile:
    """Radial profile of a non-rotating polytropic star, from the ODE."""

    r: np.ndarray
    rho: np.ndarray
    xi: np.ndarray
    theta: np.ndarray
    xi1: float
    dtheta_dxi1: float
    rho_c: float
    alpha: float
    polytropic_index: float

    def interp_rho(self, r):
        return np.interp(r, self.r, self.rho, right=0.0)


def lane_emden_reference(gamma: float, K: float, total_mass: float,
                         n_samples: int = 2000) -> LaneEmdenProfile:
    """Integrate the Lane-Emden equation for index n = 1/(gamma-1) and rescale.

    The ODE theta'' + 2 theta'/xi + theta^n = 0 starts from the regular
    series expansion theta = 1 - xi^2/6 + n xi^4/120 and stops at the first
    zero xi_1.  The physical profile follows from the closed-form central
    density that matches `total_mass` with pressure coefficient K (units
    G = 1).  Independent of the SCF path by construction.
    """
    if not gamma > 4.0 / 3.0:
        raise DomainError(f"gamma must exceed 4/3, got {gamma}")
    if K <= 0 or total_mass <= 0:
        raise DomainError("K and total_mass must be positive")
    n = 1.0 / (gamma - 1.0)

    def rhs(xi, y):
        theta, dtheta = y
        t = max(theta, 0.0)
        return [dtheta, -t ** n - 2.0 * dtheta / xi]

    def surface(xi, y):
        return y[0]
    surface.terminal = True
    surface.direction = -1

    xi0 = 1e-6
    y0 = [1.0 - xi0 ** 2 / 6.0 + n * xi0 ** 4 / 120.0,
          -xi0 / 3.0 + n * xi0 ** 3 / 30.0]
    sol = solve_ivp(rhs, [xi0, 100.0], y0, events=surface, dense_output=True,
                    rtol=1e-12, atol=1e-14, max_step=0.1)
    if not sol.success or sol.t_events[0].size == 0:
        raise NumericError(f"Lane-Emden integration failed: {sol.message}")
    xi1 = float(sol.t_events[0][0])
    dtheta1 = float(sol.y_events[0][0][1])
    m_xi = -xi1 * xi1 * dtheta1

    C = ((n + 1.0) * K / (4.0 * np.pi)) ** 1.5
    rho_c = (total_mass / (4.0 * np.pi * C * m_xi)) ** (2.0 / (3.0 * gamma - 4.0))
    alpha = math.sqrt((n + 1.0) * K * rho_c ** (gamma - 2.0) / (4.0 * np.pi))

    xi = np.linspace(xi0, xi1, n_samples)
    theta = np.maximum(sol.sol(xi)[0], 0.0)
    theta[-1] = 0.0
    r = alpha * xi
    rho = rho_c * theta ** n
    return LaneEmdenProfile(r=r, rho=rho, xi=xi, theta=theta, xi1=xi1,
                            dtheta_dxi1=dtheta1, rho_c=rho_c, alpha=alpha,
                            polytropic_index=n)
