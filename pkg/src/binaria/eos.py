"""Equation-of-state calculus.

Pressure laws P(rho) together with the derived quantities used throughout
the energy functional:

* internal-energy density  A(s) = s * int_0^s P(tau) tau^-2 dtau
* specific enthalpy        A'(s) = int_0^s P(tau) tau^-2 dtau + P(s)/s
* inverse enthalpy         phi = (A')^-1

Two kinds are supported: the closed-form polytrope P = K rho^gamma with
gamma > 4/3, and a tabulated law interpolated monotonically from samples.
The standing structural assumptions are

  (F1) P continuous, strictly increasing, P(0) = 0
  (F2) P(rho) rho^(-4/3) -> 0    as rho -> 0
  (F3) P(rho) rho^(-4/3) -> inf  as rho -> inf
  (F4) P continuously differentiable, P' > 0 for rho > 0
  (F5) limsup_{rho->inf} of int_{l*rho}^{rho} P tau^-2 / int_0^{l*rho} P tau^-2
       finite for some l in (0,1)

`audit_assumptions` estimates these numerically and reports; it never aborts.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import quad
from scipy.interpolate import PchipInterpolator

from .errors import ConfigurationError, DomainError, NumericError, RangeError

__all__ = [
    "EquationOfState",
    "Polytrope",
    "Tabulated",
    "AssumptionReport",
    "audit_assumptions",
    "pressure_of_enthalpy_derivative_check",
    "load_tabulated_csv",
]

# Relative tolerance of the enthalpy inverse: closed form vs root-solve.
TOL_PHI_CLOSED_FORM = 1e-12
TOL_PHI_ROOTED = 1e-10

_GAMMA_CRITICAL = 4.0 / 3.0


def _as_array(s, name="s"):
    a = np.asarray(s, dtype=float)
    if np.any(a < 0):
        raise DomainError(f"{name} must be nonnegative, got min {a.min()}")
    return a


# Gauss-Kronrod 7-15 nodes and weights on [-1, 1] (standard constants).
_K15_NODES = np.array([
    -0.991455371120813, -0.949107912342759, -0.864864423359769,
    -0.741531185599394, -0.586087235467691, -0.405845151377397,
    -0.207784955007898, 0.0,
    0.207784955007898, 0.405845151377397, 0.586087235467691,
    0.741531185599394, 0.864864423359769, 0.949107912342759,
    0.991455371120813])
_K15_WEIGHTS = np.array([
    0.022935322010529, 0.063092092629979, 0.104790010322250,
    0.140653259715525, 0.169004726639267, 0.190350578064785,
    0.204432940075298, 0.209482141084728,
    0.204432940075298, 0.190350578064785, 0.169004726639267,
    0.140653259715525, 0.104790010322250, 0.063092092629979,
    0.022935322010529])
_G7_WEIGHTS = np.array([
    0.129484966168870, 0.279705391489277, 0.381830050505119,
    0.417959183673469, 0.381830050505119, 0.279705391489277,
    0.129484966168870])
_G7_PICK = slice(1, 15, 2)  # Gauss nodes are the odd Kronrod nodes


def _adaptive_gk(fn, a, b, epsabs=1e-12, epsrel=1e-11, max_panels=2000):
    """Adaptive Gauss-Kronrod (7-15) refinement with vectorized evaluation.

    `fn` must accept an ndarray of abscissae.  Returns (value, error
    estimate); panels whose Kronrod-Gauss gap is above tolerance are
    bisected, worst first.
    """
    if a == b:
        return 0.0, 0.0

    def panel(lo, hi):
        mid, half = 0.5 * (lo + hi), 0.5 * (hi - lo)
        y = fn(mid + half * _K15_NODES)
        k = half * float(np.dot(_K15_WEIGHTS, y))
        g = half * float(np.dot(_G7_WEIGHTS, y[_G7_PICK]))
        # |K15 - G7| bounds the Gauss error and over-covers the Kronrod one
        return k, abs(k - g)

    panels = []
    k0, e0 = panel(a, b)
    panels.append((e0, a, b, k0))
    for _ in range(max_panels):
        total = sum(p[3] for p in panels)
        err = sum(p[0] for p in panels)
        if err <= max(epsabs, epsrel * abs(total)):
            return total, err
        panels.sort(key=lambda p: p[0])
        worst = panels.pop()
        _, lo, hi, _ = worst
        mid = 0.5 * (lo + hi)
        kl, el = panel(lo, mid)
        kr, er = panel(mid, hi)
        panels.append((el, lo, mid, kl))
        panels.append((er, mid, hi, kr))
    total = sum(p[3] for p in panels)
    return total, sum(p[0] for p in panels)


def _quiet_quad(fn, a, b):
    """Adaptive Gauss-Kronrod pass over a vectorized integrand."""
    return _adaptive_gk(fn, a, b, epsabs=1e-12, epsrel=1e-11)


def _match_shape(result, template):
    return float(result) if np.isscalar(template) or np.ndim(template) == 0 else result


class EquationOfState:
    """Common interface: pressure, energy density A, enthalpy A', inverse phi."""

    kind = "abstract"

    def pressure(self, s):
        raise NotImplementedError

    def energy_density(self, s):
        raise NotImplementedError

    def enthalpy(self, s):
        raise NotImplementedError

    def inverse_enthalpy(self, y):
        raise NotImplementedError


class Polytrope(EquationOfState):
    """P = K rho^gamma with K > 0 and gamma > 4/3.

    All derived quantities are closed-form:

        A(s)   = K/(gamma-1) s^gamma
        A'(s)  = K gamma/(gamma-1) s^(gamma-1)
        phi(y) = ((gamma-1) y / (K gamma))^(1/(gamma-1))

    Satisfies (F1)-(F4) identically; (F5) holds with ratio
    (1 - l^(gamma-1)) / l^(gamma-1) for any l in (0,1).
    """

    kind = "polytrope"

    def __init__(self, K: float, gamma: float):
        if not K > 0:
            raise DomainError(f"pressure coefficient K must be > 0, got {K}")
        if not gamma > _GAMMA_CRITICAL:
            raise DomainError(f"adiabatic index gamma must exceed 4/3, got {gamma}")
        self.K = float(K)
        self.gamma = float(gamma)

    def __repr__(self):
        return f"Polytrope(K={self.K}, gamma={self.gamma})"

    def pressure(self, s):
        a = _as_array(s)
        return _match_shape(self.K * a**self.gamma, s)

    def energy_density(self, s):
        a = _as_array(s)
        return _match_shape(self.K / (self.gamma - 1.0) * a**self.gamma, s)

    def enthalpy(self, s):
        a = _as_array(s)
        g = self.gamma
        return _match_shape(self.K * g / (g - 1.0) * a ** (g - 1.0), s)

    def inverse_enthalpy(self, y):
        a = _as_array(y, name="y")
        g = self.gamma
        return _match_shape((a * (g - 1.0) / (self.K * g)) ** (1.0 / (g - 1.0)), y)

    def pressure_derivative(self, s):
        a = _as_array(s)
        return _match_shape(self.K * self.gamma * a ** (self.gamma - 1.0), s)


class Tabulated(EquationOfState):
    """Pressure law interpolated from strictly increasing (density, pressure) samples.

    The sampled range [rho_1, rho_max] is interpolated by a monotone
    piecewise cubic (shape preserving, so (F1) survives interpolation).
    Below the first positive sample the law is continued by the power law
    fitted through the first two samples,

        P(s) = P_1 (s / rho_1)^g,   g = log(P_2/P_1) / log(rho_2/rho_1),

    which pins P(0) = 0 and keeps the tau^-2 integrand of A integrable
    whenever g > 1 (the quantitative face of (F2) on a finite table).
    Queries above rho_max raise: extrapolation upward is forbidden.
    """

    kind = "tabulated"

    def __init__(self, samples, rho_ceiling: float = 1e6):
        pts = np.asarray(samples, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 2 or pts.shape[0] < 3:
            raise ConfigurationError("tabulated EOS needs >= 3 (density, pressure) rows")
        rho, P = pts[:, 0], pts[:, 1]
        if rho[0] == 0.0:
            if P[0] != 0.0:
                raise ConfigurationError("a sample at density 0 must have pressure 0")
            rho, P = rho[1:], P[1:]
        if np.any(rho <= 0) or np.any(P <= 0):
            raise ConfigurationError("positive-density samples must have positive pressure")
        if np.any(np.diff(rho) <= 0):
            raise ConfigurationError("density column must be strictly increasing")
        if np.any(np.diff(P) <= 0):
            raise ConfigurationError("pressure must be strictly increasing (F1)")
        self.rho_samples = rho
        self.p_samples = P
        self.rho_min = float(rho[0])
        self.rho_max = float(rho[-1])
        self.rho_ceiling = float(rho_ceiling)
        self._interp = PchipInterpolator(rho, P, extrapolate=False)
        self._interp_d = self._interp.derivative()
        # power-law head through the first two samples
        self.head_exponent = math.log(P[1] / P[0]) / math.log(rho[1] / rho[0])
        self.head_scale = P[0] / rho[0] ** self.head_exponent

    def __repr__(self):
        return (f"Tabulated({len(self.rho_samples)} samples, "
                f"range [{self.rho_min:g}, {self.rho_max:g}])")

    def _check_range(self, a):
        if np.any(a > self.rho_max * (1 + 1e-12)):
            raise RangeError(
                f"density {np.max(a)} beyond table maximum {self.rho_max}; "
                "extrapolation is forbidden")

    def pressure(self, s):
        a = _as_array(s)
        self._check_range(a)
        out = np.empty_like(a)
        low = a < self.rho_min
        out[low] = self.head_scale * a[low] ** self.head_exponent
        hi = ~low
        out[hi] = self._interp(np.minimum(a[hi], self.rho_max))
        return _match_shape(out, s)

    def pressure_derivative(self, s):
        a = _as_array(s)
        out = np.empty_like(a)
        low = a < self.rho_min
        with np.errstate(divide="ignore"):
            out[low] = (self.head_scale * self.head_exponent
                        * a[low] ** (self.head_exponent - 1.0))
        out[~low] = self._interp_d(np.minimum(a[~low], self.rho_max))
        return _match_shape(out, s)

    # -- A and A' via two independent quadrature routes ------------------

    def _head_integral(self, s):
        """int_0^s P(tau) tau^-2 dtau for s <= rho_min, closed form."""
        g = self.head_exponent
        if g <= 1.0:
            raise NumericError(
                f"power-law head exponent {g:.4f} <= 1: the A-integral "
                "diverges at 0; the table violates (F2) near zero")
        return self.head_scale * s ** (g - 1.0) / (g - 1.0)

    def energy_density(self, s):
        """A(s) by the substitution tau = s*u: A(s) = int_0^1 P(s u) u^-2 du.

        The (0, rho_min/s] part of the u-range is the closed-form power-law
        head; the remainder goes to adaptive Gauss-Kronrod quadrature.
        """
        a = _as_array(s)
        self._check_range(a)
        flat = np.atleast_1d(a).ravel()
        out = np.empty_like(flat)
        for i, si in enumerate(flat):
            if si == 0.0:
                out[i] = 0.0
                continue
            if si <= self.rho_min:
                out[i] = si * self._head_integral(si)
                continue
            u_head = self.rho_min / si
            head = si * self._head_integral(self.rho_min)

            def integrand(u, si=si):
                return self._interp(si * u) / (u * u)

            val, err = _quiet_quad(integrand, u_head, 1.0)
            if not np.isfinite(val) or err > 1e-7 * max(abs(val), 1.0):
                raise NumericError(
                    f"A quadrature did not converge at s={si}: value={val}, "
                    f"error estimate={err}")
            # A(s) = s * head-integral + int_{u_head}^1 P(s u) u^-2 du
            out[i] = head + val
        return _match_shape(out.reshape(np.shape(a)), s)

    def enthalpy(self, s):
        """A'(s) = int_0^s P(tau) tau^-2 dtau + P(s)/s, direct tau-quadrature.

        Deliberately integrates in tau (not the substituted variable used by
        `energy_density`) so the identity A'(s) s - A(s) = P(s) cross-checks
        two independent quadrature passes.
        """
        a = _as_array(s)
        self._check_range(a)
        flat = np.atleast_1d(a).ravel()
        out = np.empty_like(flat)
        for i, si in enumerate(flat):
            if si == 0.0:
                out[i] = 0.0
                continue
            if si <= self.rho_min:
                out[i] = self._head_integral(si) + self.pressure(si) / si
                continue

            def integrand(tau):
                return self._interp(tau) / (tau * tau)

            val, err = _quiet_quad(integrand, self.rho_min, si)
            if not np.isfinite(val) or err > 1e-7 * max(abs(val), 1.0):
                raise NumericError(
                    f"A' quadrature did not converge at s={si}: value={val}, "
                    f"error estimate={err}")
            out[i] = self._head_integral(self.rho_min) + val + self.pressure(si) / si
        return _match_shape(out.reshape(np.shape(a)), s)

    def inverse_enthalpy(self, y):
        a = _as_array(y, name="y")
        flat = np.atleast_1d(a).ravel()
        out = np.array([self._invert_one(yi) for yi in flat])
        return _match_shape(out.reshape(np.shape(a)), y)

    def _invert_one(self, y):
        """Bracketed bisection on [0, min(table max, ceiling)], then Newton polish."""
        if y == 0.0:
            return 0.0
        cap = min(self.rho_ceiling, self.rho_max)
        if self.enthalpy(cap) < y:
            raise RangeError(
                f"no density below {cap} (table maximum/ceiling) has "
                f"enthalpy {y}")
        lo, hi = 0.0, min(max(self.rho_min, 1.0), cap)
        while self.enthalpy(hi) < y:
            hi = min(hi * 4.0, cap)
        for _ in range(60):
            mid = 0.5 * (lo + hi)
            f_mid = self.enthalpy(mid)
            if f_mid < y:
                lo = mid
            else:
                hi = mid
            if (hi - lo <= TOL_PHI_ROOTED * max(hi, 1e-300)
                    or abs(f_mid - y) <= 0.1 * TOL_PHI_ROOTED * y):
                break
        s = 0.5 * (lo + hi)
        for _ in range(3):  # Newton polish with A''(s) = P'(s)/s
            f = self.enthalpy(s) - y
            d = self.pressure_derivative(s) / s if s > 0 else 0.0
            if d <= 0:
                break
            step = f / d
            s_new = s - step
            if not (lo <= s_new <= hi):
                break
            s = s_new
            if abs(step) <= TOL_PHI_ROOTED * max(s, 1e-300):
                break
        return s


def load_tabulated_csv(path, rho_ceiling: float = 1e6) -> Tabulated:
    """Load a tabulated EOS from a two-column CSV (density, pressure).

    A single header row is skipped if its first field is not numeric.
    """
    rows = []
    with open(path, newline="") as fh:
        for lineno, rec in enumerate(csv.reader(fh)):
            if not rec or all(not c.strip() for c in rec):
                continue
            try:
                rows.append((float(rec[0]), float(rec[1])))
            except (ValueError, IndexError):
                if lineno == 0:
                    continue  # header
                raise ConfigurationError(
                    f"{path}:{lineno + 1}: expected two numeric columns, got {rec!r}")
    if not rows:
        raise ConfigurationError(f"{path}: no data rows")
    return Tabulated(rows, rho_ceiling=rho_ceiling)


def pressure_of_enthalpy_derivative_check(eos, y: float, h: float):
    """Central finite difference of y -> P(phi(y)) against the analytic slope phi(y).

    Returns (fd_slope, phi(y), |fd_slope - phi(y)|).  The gap decays at
    second order in h for smooth pressure laws; the analytic slope is the
    inverse enthalpy itself.
    """
    if not y > 0:
        raise DomainError(f"y must be positive, got {y}")
    if not 0 < h < y:
        raise DomainError(f"step h must satisfy 0 < h < y, got h={h}, y={y}")
    g_plus = eos.pressure(eos.inverse_enthalpy(y + h))
    g_minus = eos.pressure(eos.inverse_enthalpy(y - h))
    fd = (g_plus - g_minus) / (2.0 * h)
    phi_y = eos.inverse_enthalpy(y)
    return fd, phi_y, abs(fd - phi_y)


@dataclass
class AssumptionReport:
    """Numerical audit of (F1)-(F5); estimates, never certificates."""

    f1_ok: bool
    f2_ok: bool
    f3_ok: bool
    f4_ok: bool
    f5_ratio_limsup_estimate: float | str
    ladder: np.ndarray
    f2_ratio_bottom: float
    f3_ratio_top: float
    f2_threshold: float
    f3_threshold: float
    f5_lambda: float
    enthalpy_ratio_bottom: float
    enthalpy_ratio_top: float
    notes: list = field(default_factory=list)

    def all_ok(self):
        return self.f1_ok and self.f2_ok and self.f3_ok and self.f4_ok

    def to_dict(self):
        d = {
            "f1_ok": self.f1_ok, "f2_ok": self.f2_ok, "f3_ok": self.f3_ok,
            "f4_ok": self.f4_ok,
            "f5_ratio_limsup_estimate": self.f5_ratio_limsup_estimate,
            "f2_ratio_bottom": self.f2_ratio_bottom,
            "f3_ratio_top": self.f3_ratio_top,
            "f2_threshold": self.f2_threshold,
            "f3_threshold": self.f3_threshold,
            "f5_lambda": self.f5_lambda,
            "enthalpy_ratio_bottom": self.enthalpy_ratio_bottom,
            "enthalpy_ratio_top": self.enthalpy_ratio_top,
            "ladder_min": float(self.ladder[0]),
            "ladder_max": float(self.ladder[-1]),
            "ladder_points": int(self.ladder.size),
            "notes": list(self.notes),
        }
        return d


def audit_assumptions(eos, ladder_min: float = 1e-6, ladder_max: float = 1e6,
                      points_per_decade: int = 8, f2_threshold: float = 1e-3,
                      f3_threshold: float = 1e3,
                      f5_lambda: float = 0.5) -> AssumptionReport:
    """Estimate the (F1)-(F5) limits on a log ladder and report.

    A finite sample cannot certify a limit: "-> infinity" is reported as
    "ratio exceeded `f3_threshold` at the ladder top", and symmetrically
    for (F2) at the bottom.  For the polytrope kind (F1)-(F4) hold by
    construction and the (F5) estimate is the closed-form ratio
    (1 - l^(gamma-1)) / l^(gamma-1) at l = `f5_lambda`.
    """
    if points_per_decade < 8:
        raise ConfigurationError(
            f"ladder needs >= 8 points per decade, got {points_per_decade}")
    if not 0 < f5_lambda < 1:
        raise DomainError(f"f5_lambda must lie in (0,1), got {f5_lambda}")
    notes = []
    if isinstance(eos, Tabulated):
        lo = max(ladder_min, eos.rho_min)
        hi = min(ladder_max, eos.rho_max)
        if not (lo < hi):
            raise ConfigurationError("ladder range does not intersect the table")
        if (lo, hi) != (ladder_min, ladder_max):
            notes.append(f"ladder clipped to table range [{lo:g}, {hi:g}]")
    else:
        lo, hi = ladder_min, ladder_max
    decades = math.log10(hi / lo)
    n = max(2, int(round(decades * points_per_decade)) + 1)
    ladder = np.logspace(math.log10(lo), math.log10(hi), n)

    P = np.asarray(eos.pressure(ladder))
    ratio43 = P * ladder ** (-4.0 / 3.0)
    aprime = np.asarray(eos.enthalpy(np.array([ladder[0], ladder[-1]])))
    aprime_ratio = aprime * np.array([ladder[0], ladder[-1]]) ** (-1.0 / 3.0)

    if isinstance(eos, Polytrope):
        f1 = f2 = f3 = f4 = True
        g = eos.gamma
        f5_est = (1.0 - f5_lambda ** (g - 1.0)) / f5_lambda ** (g - 1.0)
        notes.append("polytrope kind: (F1)-(F4) hold identically; "
                     "(F5) ratio is closed-form")
    else:
        f1 = bool(np.all(np.diff(P) > 0))
        head_tail = ratio43[: max(2, n // 8)]
        f2 = bool(ratio43[0] < f2_threshold and head_tail[0] <= head_tail[-1])
        f3 = bool(ratio43[-1] >= f3_threshold)
        dP = np.asarray(eos.pressure_derivative(ladder))
        f4 = bool(np.all(dP > 0))
        f5_est = _estimate_f5(eos, ladder, f5_lambda, notes)

    return AssumptionReport(
        f1_ok=f1, f2_ok=f2, f3_ok=f3, f4_ok=f4,
        f5_ratio_limsup_estimate=f5_est, ladder=ladder,
        f2_ratio_bottom=float(ratio43[0]), f3_ratio_top=float(ratio43[-1]),
        f2_threshold=f2_threshold, f3_threshold=f3_threshold,
        f5_lambda=f5_lambda,
        enthalpy_ratio_bottom=float(aprime_ratio[0]),
        enthalpy_ratio_top=float(aprime_ratio[-1]),
        notes=notes,
    )


def _estimate_f5(eos, ladder, lam, notes):
    """Sample I(s)/I(lam*s) - 1 with I(s) = int_0^s P tau^-2 dtau = A'(s) - P(s)/s."""
    tops = ladder[-3:]
    vals = []
    for s in tops:
        I_s = eos.enthalpy(s) - eos.pressure(s) / s
        I_ls = eos.enthalpy(lam * s) - eos.pressure(lam * s) / (lam * s)
        if I_ls <= 0:
            return "unbounded"
        vals.append(I_s / I_ls - 1.0)
    if vals[-1] > vals[-2] > vals[-3] and vals[-1] > 1.05 * vals[-2]:
        notes.append("F5 ratio still growing at ladder top")
        return "unbounded"
    return float(max(vals))
