"""Tire wear particle emission model and traction/performance analysis.

Particle generation of a tire is modeled as a quadratic in its longitudinal
force.  Harder compounds emit a fixed fraction of the soft compound's curve,
which ties together with the empirical treadwear/traction power law: trading
17% of grip buys roughly a 75% emission cut.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import optimize

from . import tire as tire_mod
from .errors import FitDiverged

# Rolling resistance coefficient of a typical passenger tire on asphalt.
ROLLING_RESISTANCE = 0.013

# Aerodynamic stopping-distance constant (s^2/m^2) used together with
# published stopping-distance data when estimating peak friction.
AERO_K_REFERENCE = 6.16e-4

# Empirical traction-vs-treadwear power law: mu = 2.16 * w**(-0.133).
TREADWEAR_COEFF = 2.16
TREADWEAR_EXPONENT = 0.133
WEAR_TRACTION_EXPONENT = 7.52  # reciprocal of the exponent above, as rounded in use

# Emission ratio applied between the shipped hard and soft compounds,
# 0.83**7.52 rounded to a quarter.
HARD_EMISSION_RATIO = 0.25


@dataclass(frozen=True)
class EmissionParams:
    """Quadratic emission coefficients: PN(F) = p2*F^2 + p1*F + p0 (#/cm^3)."""

    p2: float
    p1: float
    p0: float

    def validate(self) -> None:
        if not self.p2 > 0.0:
            raise ValueError(f"p2 must be positive, got {self.p2}")
        if self.minimum_value() < -1e-9:
            raise ValueError("emission quadratic dips below zero")

    def minimum_value(self) -> float:
        return self.p0 - self.p1 * self.p1 / (4.0 * self.p2)

    def vertex_force(self) -> float:
        """Force at which the quadratic is minimal, N."""
        return -self.p1 / (2.0 * self.p2)

    def to_dict(self) -> dict:
        return {"p2": self.p2, "p1": self.p1, "p0": self.p0}

    @staticmethod
    def from_dict(data: dict) -> "EmissionParams":
        params = EmissionParams(p2=float(data["p2"]), p1=float(data["p1"]),
                                p0=float(data["p0"]))
        params.validate()
        return params


def soft_emission_params() -> EmissionParams:
    """Fitted emission quadratic of the soft (high-traction) compound."""
    return EmissionParams(p2=1.98e-3, p1=-1.50, p0=286.04)


def hard_emission_params() -> EmissionParams:
    """Hard-compound emission curve: the soft curve scaled by the emission ratio."""
    return scale_emission(soft_emission_params(), HARD_EMISSION_RATIO)


def particle_number(f_v, p: EmissionParams):
    """Particle concentration generated at longitudinal force ``f_v`` (array-friendly)."""
    f = np.asarray(f_v, dtype=float)
    pn = p.p2 * f * f + p.p1 * f + p.p0
    if np.isscalar(f_v) or getattr(f_v, "ndim", 0) == 0:
        return float(pn)
    return pn


def scale_emission(p: EmissionParams, rho: float) -> EmissionParams:
    """Scale an emission curve pointwise by ``rho`` (elementwise coefficients)."""
    if not 0.0 < rho <= 1.0:
        raise ValueError(f"emission ratio must lie in (0, 1], got {rho}")
    return EmissionParams(p2=rho * p.p2, p1=rho * p.p1, p0=rho * p.p0)


def treadwear_to_mu(w: float) -> float:
    """Average dry friction coefficient implied by a UTQG treadwear rating."""
    if w <= 0.0:
        raise ValueError("treadwear rating must be positive")
    return TREADWEAR_COEFF * w ** (-TREADWEAR_EXPONENT)


def emission_ratio_from_mu(mu_h: float, mu_s: float) -> float:
    """Emission scaling between two compounds from their peak friction ratio.

    Inverts the treadwear power law: the wear-rating ratio, and with it the
    emission ratio, equals ``(mu_h / mu_s) ** 7.52``.
    """
    if not 0.0 < mu_h <= mu_s:
        raise ValueError("need 0 < mu_h <= mu_s")
    return (mu_h / mu_s) ** WEAR_TRACTION_EXPONENT


def aero_constant(rho_air: float = 1.225, drag_area: float = 0.74,
                  m: float = 1500.0, g: float = 9.81) -> float:
    """Aerodynamic constant ``rho * Cd*A / (m*g)`` of a road vehicle, s^2/m^2."""
    return rho_air * drag_area / (m * g)


@dataclass(frozen=True)
class PerformanceEnvelope:
    """Friction-limited performance constants of one vehicle configuration."""

    mu_max: float
    f_r: float = ROLLING_RESISTANCE
    k_aero: float = AERO_K_REFERENCE

    def validate(self) -> None:
        if not 0.0 < self.mu_max <= 1.5:
            raise ValueError(f"mu_max out of range: {self.mu_max}")
        if not self.k_aero > 0.0:
            raise ValueError("k_aero must be positive")


def stopping_distance(v: float, mu_max: float, f_r: float = ROLLING_RESISTANCE,
                      k: float = AERO_K_REFERENCE, g: float = 9.81) -> float:
    """Friction-limited stopping distance from speed ``v``, drag included.

    Exact form ``(ln(K*v^2 + 2*(mu+f_r)) - ln(2*(mu+f_r))) / (K*g)``; see
    :func:`stopping_distance_approx` for the drag-free limit.
    """
    if v <= 0.0 or mu_max + f_r <= 0.0:
        raise ValueError("need v > 0 and mu_max + f_r > 0")
    two_mu = 2.0 * (mu_max + f_r)
    return (math.log(k * v * v + two_mu) - math.log(two_mu)) / (k * g)


def stopping_distance_approx(v: float, mu_max: float,
                             f_r: float = ROLLING_RESISTANCE, g: float = 9.81) -> float:
    """Drag-free stopping distance ``v^2 / (2*(mu+f_r)*g)`` (the K -> 0 limit)."""
    return v * v / (2.0 * (mu_max + f_r) * g)


def mu_from_stopping(v: float, d: float, k: float = AERO_K_REFERENCE,
                     f_r: float = ROLLING_RESISTANCE, g: float = 9.81) -> float:
    """Peak friction coefficient recovered from a measured stopping distance.

    Algebraic inverse of :func:`stopping_distance`:
    ``mu = K*v^2 / (2*(exp(K*g*d) - 1)) - f_r``.
    """
    if v <= 0.0 or d <= 0.0:
        raise ValueError("need v > 0 and d > 0")
    return k * v * v / (2.0 * (math.exp(k * g * d) - 1.0)) - f_r


def mu_from_stopping_approx(v: float, d: float, f_r: float = ROLLING_RESISTANCE,
                            g: float = 9.81) -> float:
    """Drag-free inverse: ``mu = v^2 / (2*g*d) - f_r``."""
    return v * v / (2.0 * g * d) - f_r


def fleet_mu_max(front_tire: tire_mod.TireModel, rear_tire: tire_mod.TireModel,
                 params) -> float:
    """Axle-load-weighted peak longitudinal friction of the whole vehicle."""
    peak_f, _ = tire_mod.mf_peak(front_tire.longitudinal, front_tire.zeta)
    peak_r, _ = tire_mod.mf_peak(rear_tire.longitudinal, rear_tire.zeta)
    wheelbase = params.l_f + params.l_r
    return (params.l_r * peak_f + params.l_f * peak_r) / wheelbase


def peak_lateral_acceleration(front_tire: tire_mod.TireModel,
                              rear_tire: tire_mod.TireModel, g: float = 9.81) -> float:
    """Steady-state cornering limit: g times the weaker axle's lateral peak."""
    peak_f, _ = tire_mod.mf_peak(front_tire.lateral, front_tire.zeta)
    peak_r, _ = tire_mod.mf_peak(rear_tire.lateral, rear_tire.zeta)
    return g * min(peak_f, peak_r)


@dataclass(frozen=True)
class EmissionFit:
    """Constrained quadratic fit result."""

    params: EmissionParams
    r_squared: float
    kkt_residual: float
    constrained: bool


def fit_emission_quadratic(samples) -> EmissionFit:
    """Least-squares quadratic fit constrained to stay non-negative everywhere.

    The constraint is ``p2 > 0`` with a non-negative minimum (discriminant
    ``p1^2 - 4*p2*p0 <= 0``).  When the plain least-squares solution already
    satisfies it the fit is returned as-is; otherwise the optimum lies on the
    boundary, where the quadratic is a perfect square ``(a*F + c)^2`` and the
    two remaining parameters are refit directly.
    """
    pts = np.asarray(samples, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2 or pts.shape[0] < 4:
        raise FitDiverged("need at least 4 (force, pn) samples")
    f = pts[:, 0]
    y = pts[:, 1]
    a_mat = np.column_stack([f * f, f, np.ones_like(f)])
    if np.linalg.matrix_rank(a_mat) < 3:
        raise FitDiverged("samples are rank deficient (need 3 distinct force values)")

    sol, *_ = np.linalg.lstsq(a_mat, y, rcond=None)
    p2, p1, p0 = (float(c) for c in sol)

    def kkt_residual(x: np.ndarray) -> float:
        grad_f = 2.0 * a_mat.T @ (a_mat @ x - y)
        grad_g = np.array([-4.0 * x[2], 2.0 * x[1], -4.0 * x[0]])
        gg = float(grad_g @ grad_g)
        mu = max(0.0, -float(grad_f @ grad_g) / gg) if gg > 0.0 else 0.0
        return float(np.linalg.norm(grad_f + mu * grad_g))

    def r_squared(x: np.ndarray) -> float:
        resid = a_mat @ x - y
        sst = float(np.sum((y - np.mean(y)) ** 2))
        if sst == 0.0:
            return 1.0
        return 1.0 - float(resid @ resid) / sst

    if p2 > 0.0 and p1 * p1 - 4.0 * p2 * p0 <= 0.0:
        x = np.array([p2, p1, p0])
        grad_f = 2.0 * a_mat.T @ (a_mat @ x - y)
        return EmissionFit(params=EmissionParams(p2, p1, p0),
                           r_squared=r_squared(x),
                           kkt_residual=float(np.linalg.norm(grad_f)),
                           constrained=False)

    # Boundary case: PN(F) = (a*F + c)^2 with a > 0.
    def resid(ac: np.ndarray) -> np.ndarray:
        a, c = ac
        return (a * f + c) ** 2 - y

    best = None
    scale = math.sqrt(max(np.mean(np.abs(y)), 1e-12))
    for a0, c0 in ((1e-2, scale), (1e-2, -scale), (1e-1, 0.1), (1e-3, scale)):
        res = optimize.least_squares(resid, x0=np.array([a0, c0]),
                                     xtol=1e-15, ftol=1e-15, gtol=1e-15)
        if best is None or res.cost < best.cost:
            best = res
    a, c = best.x
    if a < 0.0:
        a, c = -a, -c
    if a <= 0.0:
        raise FitDiverged("degenerate boundary fit (a = 0)")
    x = np.array([a * a, 2.0 * a * c, c * c])
    params = EmissionParams(p2=float(x[0]), p1=float(x[1]), p0=float(x[2]))
    return EmissionFit(params=params, r_squared=r_squared(x),
                       kkt_residual=kkt_residual(x), constrained=True)


@dataclass(frozen=True)
class EmissionSeries:
    """Per-step emission of a trajectory plus aggregate totals.

    ``total`` is the plain per-step sum (one addend per path step);
    ``total_time_weighted`` weights each step by its elapsed time, which makes
    the aggregate insensitive to the step size.
    """

    pn_front: np.ndarray
    pn_rear: np.ndarray
    dt: np.ndarray

    @property
    def pn_step(self) -> np.ndarray:
        return self.pn_front + self.pn_rear

    @property
    def total(self) -> float:
        return float(np.sum(self.pn_step))

    @property
    def total_time_weighted(self) -> float:
        return float(np.sum(self.pn_step * self.dt))

    @property
    def total_front(self) -> float:
        return float(np.sum(self.pn_front))

    @property
    def total_rear(self) -> float:
        return float(np.sum(self.pn_rear))


def trajectory_emission(trajectory, p_front: EmissionParams,
                        p_rear: EmissionParams) -> EmissionSeries:
    """Evaluate both axles' emission along a recorded trajectory."""
    f_vf = np.array([f.f_vf for f in trajectory.forces])
    f_vr = np.array([f.f_vr for f in trajectory.forces])
    dt = np.asarray(trajectory.dt_weights())
    return EmissionSeries(pn_front=particle_number(f_vf, p_front),
                          pn_rear=particle_number(f_vr, p_rear), dt=dt)
