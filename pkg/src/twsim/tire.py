"""Tire force model: magic-formula slip curves, slip kinematics and axle forces.

Friction coefficients are produced by the empirical curve
``D*sin(C*atan(B*s - E*(B*s - atan(B*s))))`` evaluated on either the slip
ratio (longitudinal) or the slip angle (lateral).  A multiplicative
condition factor ``zeta`` in (0, 1] derates the whole curve, which models
wet roads or degraded rubber.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from scipy import optimize

from .errors import DegenerateSpeed, FitDiverged

# Speed floor for every slip computation; the path-domain model needs v > 0
# and the simulations never run slower than walking pace.
V_FLOOR = 1.0

# Slip curves are operated only up to this fraction of their peak, so the
# wheels always stay on the stable (rising) branch.
OPERATING_FRACTION = 0.85


@dataclass(frozen=True)
class MagicFormulaCoeffs:
    """Coefficient set (B stiffness, C shape, D peak, E curvature)."""

    b: float
    c: float
    d: float
    e: float

    def validate(self) -> None:
        if not self.d > 0.0:
            raise ValueError(f"peak factor D must be positive, got {self.d}")
        if not self.c > 1.0:
            raise ValueError(f"shape factor C must exceed 1, got {self.c}")
        if not self.b > 0.0:
            raise ValueError(f"stiffness factor B must be positive, got {self.b}")


def mf_eval(coeffs: MagicFormulaCoeffs, slip, zeta: float = 1.0):
    """Friction coefficient at the given slip (ratio or angle).

    Returns ``zeta * D * sin(C * atan(B*s - E*(B*s - atan(B*s))))``.  The
    function is odd in ``slip`` and accepts scalars or numpy arrays; a scalar
    input returns a plain float.
    """
    s = np.asarray(slip, dtype=float)
    bs = coeffs.b * s
    inner = bs - coeffs.e * (bs - np.arctan(bs))
    mu = zeta * coeffs.d * np.sin(coeffs.c * np.arctan(inner))
    if np.isscalar(slip) or getattr(slip, "ndim", 0) == 0:
        return float(mu)
    return mu


def mf_peak(coeffs: MagicFormulaCoeffs, zeta: float = 1.0, slip_max: float = 1.0,
            n_grid: int = 20001) -> tuple[float, float]:
    """Grid-searched maximum of the slip curve on [0, slip_max].

    Returns ``(peak_mu, slip_at_peak)``.
    """
    grid = np.linspace(0.0, slip_max, n_grid)
    mu = mf_eval(coeffs, grid, zeta)
    k = int(np.argmax(mu))
    return float(mu[k]), float(grid[k])


def mf_invert(coeffs: MagicFormulaCoeffs, mu: float, zeta: float,
              slip_limit: float) -> float:
    """Slip on the rising branch that produces friction ``mu``.

    ``mu`` is clamped to the value reachable at ``slip_limit``, so the result
    always lies in ``[-slip_limit, slip_limit]``.  Used to turn force targets
    into wheel-slip targets.
    """
    mu_cap = mf_eval(coeffs, slip_limit, zeta)
    target = min(abs(mu), mu_cap)
    if target <= 0.0:
        return 0.0
    f = lambda s: mf_eval(coeffs, s, zeta) - target
    slip = optimize.brentq(f, 0.0, slip_limit, xtol=1e-14, rtol=1e-14)
    return math.copysign(slip, mu)


def slip_ratio(re: float, omega: float, v: float, v_floor: float = V_FLOOR) -> float:
    """Longitudinal slip ratio ``(re*omega - v) / v``."""
    if v < v_floor:
        raise DegenerateSpeed(f"speed {v} m/s below floor {v_floor} m/s")
    return (re * omega - v) / v


def slip_angles(sigma: float, u: float, v: float, delta: float,
                lf: float, lr: float, v_floor: float = V_FLOOR) -> tuple[float, float]:
    """Front and rear slip angles, small-angle form.

    ``alpha_f = sigma - (u + lf*delta)/v`` and ``alpha_r = -(u - lr*delta)/v``.
    """
    if v < v_floor:
        raise DegenerateSpeed(f"speed {v} m/s below floor {v_floor} m/s")
    alpha_f = sigma - (u + lf * delta) / v
    alpha_r = -(u - lr * delta) / v
    return alpha_f, alpha_r


@dataclass(frozen=True)
class TireModel:
    """One axle's tire: slip curves, condition factor and operating limits."""

    longitudinal: MagicFormulaCoeffs
    lateral: MagicFormulaCoeffs
    zeta: float = 1.0
    slip_ratio_limit: float = 0.05
    slip_angle_limit: float = 0.06

    def validate(self) -> None:
        self.longitudinal.validate()
        self.lateral.validate()
        if not 0.0 < self.zeta <= 1.0:
            raise ValueError(f"condition factor zeta must lie in (0, 1], got {self.zeta}")
        for limit, coeffs, name in ((self.slip_ratio_limit, self.longitudinal, "slip ratio"),
                                    (self.slip_angle_limit, self.lateral, "slip angle")):
            if limit <= 0.0:
                raise ValueError(f"{name} limit must be positive")
            _, peak_slip = mf_peak(coeffs, slip_max=max(1.0, 4.0 * limit))
            if limit >= peak_slip:
                raise ValueError(f"{name} limit {limit} is past the curve peak at {peak_slip}")

    def with_zeta(self, zeta: float) -> "TireModel":
        return replace(self, zeta=zeta)

    def to_dict(self) -> dict:
        return {
            "longitudinal": {"B": self.longitudinal.b, "C": self.longitudinal.c,
                             "D": self.longitudinal.d, "E": self.longitudinal.e},
            "lateral": {"B": self.lateral.b, "C": self.lateral.c,
                        "D": self.lateral.d, "E": self.lateral.e},
            "slip_ratio_limit": self.slip_ratio_limit,
            "slip_angle_limit": self.slip_angle_limit,
        }

    @staticmethod
    def from_dict(data: dict) -> "TireModel":
        def coeffs(block: dict) -> MagicFormulaCoeffs:
            return MagicFormulaCoeffs(b=float(block["B"]), c=float(block["C"]),
                                      d=float(block["D"]), e=float(block["E"]))

        model = TireModel(
            longitudinal=coeffs(data["longitudinal"]),
            lateral=coeffs(data["lateral"]),
            slip_ratio_limit=float(data["slip_ratio_limit"]),
            slip_angle_limit=float(data["slip_angle_limit"]),
        )
        model.validate()
        return model

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @staticmethod
    def load(path: str | Path) -> "TireModel":
        return TireModel.from_dict(json.loads(Path(path).read_text()))


@dataclass(frozen=True)
class AxleLoads:
    """Static normal load carried by each axle, N."""

    front_normal: float
    rear_normal: float


@dataclass(frozen=True)
class AxleForces:
    """Per-axle tire forces, N (v = longitudinal, u = lateral)."""

    f_vf: float
    f_vr: float
    f_uf: float
    f_ur: float


def axle_loads(params) -> AxleLoads:
    """Static axle loads from the weight split of a two-axle vehicle."""
    total = params.m * params.g
    wheelbase = params.l_f + params.l_r
    return AxleLoads(front_normal=total * params.l_r / wheelbase,
                     rear_normal=total * params.l_f / wheelbase)


def axle_forces(params, front_tire: TireModel, rear_tire: TireModel,
                lambda_f: float, lambda_r: float,
                alpha_f: float, alpha_r: float) -> AxleForces:
    """Tire forces of both axles: normal load times friction coefficient."""
    loads = axle_loads(params)
    return AxleForces(
        f_vf=loads.front_normal * mf_eval(front_tire.longitudinal, lambda_f, front_tire.zeta),
        f_vr=loads.rear_normal * mf_eval(rear_tire.longitudinal, lambda_r, rear_tire.zeta),
        f_uf=loads.front_normal * mf_eval(front_tire.lateral, alpha_f, front_tire.zeta),
        f_ur=loads.rear_normal * mf_eval(rear_tire.lateral, alpha_r, rear_tire.zeta),
    )


def calibrate_coeffs(peak: float, slip_limit: float,
                     operating_fraction: float = OPERATING_FRACTION,
                     c: float = 1.9, e: float = 0.97) -> MagicFormulaCoeffs:
    """Build a coefficient set that hits ``operating_fraction * peak`` at the limit.

    With C and E fixed, the stiffness B is solved so the curve reaches exactly
    the requested fraction of its peak at ``slip_limit`` while still rising
    there (the curve peak sits beyond the limit).
    """
    # sin(C*atan(y)) == fraction  =>  y at the slip limit
    y_limit = math.tan(math.asin(operating_fraction) / c)

    def residual(b: float) -> float:
        bs = b * slip_limit
        return bs - e * (bs - math.atan(bs)) - y_limit

    b = optimize.brentq(residual, 1e-6, 1e4, xtol=1e-12, rtol=1e-14)
    coeffs = MagicFormulaCoeffs(b=b, c=c, d=peak, e=e)
    coeffs.validate()
    return coeffs


# Reference compounds.  The soft tire is the high-traction, high-wear
# compound; the hard tire gives up 17% of peak grip in both directions and
# tolerates larger slip before peaking.  The longitudinal peak is set so that
# slip-limited braking on a dry road decelerates at 0.85 * D * g ~= 10.8 m/s².
D_SOFT_LONGITUDINAL = 1.293
D_SOFT_LATERAL = 1.0
HARD_PEAK_RATIO = 0.83

SOFT_SLIP_RATIO_LIMIT = 0.034
SOFT_SLIP_ANGLE_LIMIT = 0.041
HARD_SLIP_RATIO_LIMIT = 0.057
HARD_SLIP_ANGLE_LIMIT = 0.073


def soft_reference_tire(zeta: float = 1.0) -> TireModel:
    """High-traction reference compound, used on both axles of the base vehicle."""
    return TireModel(
        longitudinal=calibrate_coeffs(D_SOFT_LONGITUDINAL, SOFT_SLIP_RATIO_LIMIT),
        lateral=calibrate_coeffs(D_SOFT_LATERAL, SOFT_SLIP_ANGLE_LIMIT),
        zeta=zeta,
        slip_ratio_limit=SOFT_SLIP_RATIO_LIMIT,
        slip_angle_limit=SOFT_SLIP_ANGLE_LIMIT,
    )


def hard_reference_tire(zeta: float = 1.0) -> TireModel:
    """Low-wear reference compound for the front axle of the low-wear vehicle."""
    return TireModel(
        longitudinal=calibrate_coeffs(HARD_PEAK_RATIO * D_SOFT_LONGITUDINAL,
                                      HARD_SLIP_RATIO_LIMIT),
        lateral=calibrate_coeffs(HARD_PEAK_RATIO * D_SOFT_LATERAL,
                                 HARD_SLIP_ANGLE_LIMIT),
        zeta=zeta,
        slip_ratio_limit=HARD_SLIP_RATIO_LIMIT,
        slip_angle_limit=HARD_SLIP_ANGLE_LIMIT,
    )


@dataclass(frozen=True)
class MagicFormulaFit:
    """Result of fitting a slip curve to measured samples."""

    coeffs: MagicFormulaCoeffs
    rms_residual: float
    evaluations: int


_FIT_STARTS = (
    (10.0, 1.9, 0.97),
    (4.0, 1.5, 0.5),
    (20.0, 1.3, 0.0),
    (30.0, 2.2, 0.9),
    (8.0, 1.7, -0.5),
)
_FIT_BUDGET = 10_000
_FIT_RMS_LIMIT = 0.05


def fit_magic_formula(samples) -> MagicFormulaFit:
    """Least-squares fit of (B, C, D, E) to ``(slip, mu)`` samples.

    Derivative-free simplex descent from several start points; D starts at the
    largest sample magnitude and must end within 2% of it.  Raises
    ``FitDiverged`` when the residual stays above the acceptance threshold
    after the evaluation budget.
    """
    pts = np.asarray(samples, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2 or pts.shape[0] < 8:
        raise FitDiverged("need at least 8 (slip, mu) samples")
    slip = pts[:, 0]
    mu = pts[:, 1]
    d0 = float(np.max(np.abs(mu)))
    if d0 <= 0.0:
        raise FitDiverged("all friction samples are zero; no peak to fit")

    def sse(x: np.ndarray) -> float:
        b, c, d, e = x
        coeffs = MagicFormulaCoeffs(b=b, c=c, d=d, e=e)
        resid = mf_eval(coeffs, slip) - mu
        return float(np.dot(resid, resid))

    bounds = [(1e-2, 500.0), (1.01, 3.0), (0.25 * d0, 2.0 * d0), (-5.0, 0.999)]
    per_start = _FIT_BUDGET // len(_FIT_STARTS)
    best = None
    used = 0
    for b0, c0, e0 in _FIT_STARTS:
        res = optimize.minimize(sse, x0=np.array([b0, c0, d0, e0]),
                                method="Nelder-Mead", bounds=bounds,
                                options={"maxfev": per_start, "xatol": 1e-12,
                                         "fatol": 1e-16})
        used += res.nfev
        if best is None or res.fun < best.fun:
            best = res
    # One restart from the incumbent tightens the simplex around the optimum.
    res = optimize.minimize(sse, x0=best.x, method="Nelder-Mead", bounds=bounds,
                            options={"maxfev": per_start, "xatol": 1e-14,
                                     "fatol": 1e-18})
    used += res.nfev
    if res.fun < best.fun:
        best = res

    rms = math.sqrt(best.fun / len(mu))
    if rms > _FIT_RMS_LIMIT:
        raise FitDiverged(f"fit RMS residual {rms:.4f} above {_FIT_RMS_LIMIT}")
    coeffs = MagicFormulaCoeffs(*[float(v) for v in best.x])
    coeffs.validate()
    if abs(coeffs.d - d0) > 0.02 * d0:
        raise FitDiverged(f"fitted peak {coeffs.d:.4f} strays from max sample {d0:.4f}")
    return MagicFormulaFit(coeffs=coeffs, rms_residual=rms, evaluations=used)
