"""Dual-tire-profile control law.

Given the driver's steering input and motion measurements of the low-wear
vehicle (hard front tires, soft rear tires), the controller predicts the tire
forces a reference vehicle on four soft tires would see under the same
inputs, then picks longitudinal force references and a small steering
correction that reproduce that reference motion while minimizing tire wear
particle output.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from . import tire as tire_mod
from .dynamics import VehicleParams
from .emission import EmissionParams, particle_number
from .errors import SingularSteering
from .tire import TireModel, mf_eval

STEERING_BOUND = math.pi / 9.0


@dataclass(frozen=True)
class ControllerConfig:
    """Tunables of the control law."""

    sigma_eps: float = 1e-3          # below this steering angle the 2x2 solve is singular
    eps_init: float = 1e-2           # initial greedy search step, rad
    eps_min: float = 1e-5            # greedy search resolution, rad
    delta_sigma_bound: float = 0.1   # search box for the steering correction, rad
    steering_bound: float = STEERING_BOUND
    use_pseudocode_longitudinal: bool = False  # skip the 1/sin(sigma) factor (diagnostic)

    @property
    def sin_eps(self) -> float:
        return math.sin(self.sigma_eps)


@dataclass(frozen=True)
class Measurements:
    """Driver input and motion measurements fed to one control step."""

    sigma: float    # driver steering angle, rad
    u: float        # lateral velocity, m/s
    v: float        # longitudinal velocity, m/s
    delta: float    # yaw rate, rad/s
    du_dt: float    # lateral acceleration, m/s^2
    dv_dt: float    # longitudinal acceleration, m/s^2


@dataclass(frozen=True)
class BaseForces:
    """Predicted tire forces of the all-soft reference vehicle, N."""

    f_uf_hat: float
    f_ur_hat: float
    f_vf_hat: float
    f_vr_hat: float


@dataclass(frozen=True)
class ControlDecision:
    """Output of one control step: steering correction and force references."""

    delta_sigma: float
    f_vf_ref: float
    f_vr_ref: float
    mode: str                 # "zero-steering" or "steering"
    clamped: bool = False     # any reference or the steering angle was clamped
    infeasible: bool = False  # total demand exceeded both axle envelopes
    search_aborted: bool = False
    sigma_applied: float = 0.0
    pn_estimate: float = 0.0


def axle_force_caps(params: VehicleParams, front_tire: TireModel,
                    rear_tire: TireModel,
                    fraction: float = tire_mod.OPERATING_FRACTION) -> tuple[float, float]:
    """Usable longitudinal force per axle under the slip operating rule, N."""
    loads = tire_mod.axle_loads(params)
    cap_f = fraction * front_tire.zeta * front_tire.longitudinal.d * loads.front_normal
    cap_r = fraction * rear_tire.zeta * rear_tire.longitudinal.d * loads.rear_normal
    return cap_f, cap_r


def estimate_base_lateral(meas: Measurements, params: VehicleParams,
                          soft_tire: TireModel) -> tuple[float, float]:
    """Lateral axle forces the all-soft vehicle develops at the measured motion.

    The lateral states (u, v, yaw rate) and the driver steering are shared
    between the vehicles, so the soft-tire slip angles, and with them the
    forces, follow directly.
    """
    alpha_f, alpha_r = tire_mod.slip_angles(meas.sigma, meas.u, meas.v, meas.delta,
                                            params.l_f, params.l_r)
    loads = tire_mod.axle_loads(params)
    f_uf = loads.front_normal * mf_eval(soft_tire.lateral, alpha_f, soft_tire.zeta)
    f_ur = loads.rear_normal * mf_eval(soft_tire.lateral, alpha_r, soft_tire.zeta)
    return f_uf, f_ur


def estimate_base_longitudinal(meas: Measurements, params: VehicleParams,
                               f_uf_hat: float, f_ur_hat: float,
                               config: ControllerConfig = ControllerConfig(),
                               ) -> tuple[float, float]:
    """Longitudinal forces (rear, front) of the reference vehicle.

    Solves the 2x2 force balance in (F_vr, F_vf); the system is singular at
    zero steering, where only the force sum is observable
    (``SingularSteering``).
    """
    sin_s = math.sin(meas.sigma)
    cos_s = math.cos(meas.sigma)
    if abs(sin_s) < config.sin_eps:
        raise SingularSteering(f"sin(sigma) = {sin_s}; use the zero-steering split")
    m = params.m
    rhs_v = m * meas.dv_dt - m * meas.u * meas.delta + params.c_d * meas.v ** 2 \
        + f_uf_hat * sin_s
    rhs_u = m * meas.du_dt + m * meas.v * meas.delta - f_ur_hat - f_uf_hat * cos_s
    if config.use_pseudocode_longitudinal:
        f_vf = rhs_u
    else:
        f_vf = rhs_u / sin_s
    f_vr = rhs_v - f_vf * cos_s
    return f_vr, f_vf


def estimate_base_forces(meas: Measurements, params: VehicleParams,
                         soft_tire: TireModel,
                         config: ControllerConfig = ControllerConfig()) -> BaseForces:
    """Full reference-vehicle force prediction (lateral then longitudinal)."""
    f_uf, f_ur = estimate_base_lateral(meas, params, soft_tire)
    f_vr, f_vf = estimate_base_longitudinal(meas, params, f_uf, f_ur, config)
    return BaseForces(f_uf_hat=f_uf, f_ur_hat=f_ur, f_vf_hat=f_vf, f_vr_hat=f_vr)


@dataclass(frozen=True)
class SplitResult:
    """Zero-steering torque split outcome."""

    f_vf: float
    f_vr: float
    clamped: bool
    infeasible: bool


def straight_split(meas: Measurements, params: VehicleParams,
                   p_hard: EmissionParams, p_soft: EmissionParams,
                   cap_front: float, cap_rear: float) -> SplitResult:
    """Emission-optimal division of the total longitudinal force at zero steering.

    With no steering the motion constrains only the force sum
    ``F_tot = m*dv/dt + c_d*v^2``; the per-axle emission sum is a quadratic in
    the front share with closed-form minimizer
    ``(2*p2_s*F_tot + p1_s - p1_h) / (2*(p2_h + p2_s))``, clamped to the axle
    envelopes with the remainder sent to the rear.
    """
    f_tot = params.m * meas.dv_dt + params.c_d * meas.v ** 2
    f_vf = (2.0 * p_soft.p2 * f_tot + p_soft.p1 - p_hard.p1) \
        / (2.0 * (p_hard.p2 + p_soft.p2))
    clamped = False
    infeasible = False
    if abs(f_vf) > cap_front:
        f_vf = math.copysign(cap_front, f_vf)
        clamped = True
    f_vr = f_tot - f_vf
    if abs(f_vr) > cap_rear:
        f_vr = math.copysign(cap_rear, f_vr)
        clamped = True
        # Push the unmet remainder back to the front if it still has margin.
        f_vf = f_tot - f_vr
        if abs(f_vf) > cap_front:
            f_vf = math.copysign(cap_front, f_vf)
            infeasible = True
    return SplitResult(f_vf=f_vf, f_vr=f_vr, clamped=clamped, infeasible=infeasible)


def low_wear_front_lateral(meas: Measurements, delta_sigma: float,
                           params: VehicleParams, hard_tire: TireModel) -> float:
    """Front lateral force of the low-wear vehicle at the corrected steering angle."""
    alpha_f, _ = tire_mod.slip_angles(meas.sigma + delta_sigma, meas.u, meas.v,
                                      meas.delta, params.l_f, params.l_r)
    loads = tire_mod.axle_loads(params)
    return loads.front_normal * mf_eval(hard_tire.lateral, alpha_f, hard_tire.zeta)


def forces_for_delta_sigma(meas: Measurements, delta_sigma: float, base: BaseForces,
                           f_uf: float, params: VehicleParams,
                           config: ControllerConfig = ControllerConfig(),
                           ) -> tuple[float, float]:
    """Longitudinal forces that reproduce the reference motion at ``delta_sigma``.

    The front force restores the lateral/yaw balance
    ``F_vf*sin + F_uf*cos == F_vf_hat*sin(sigma) + F_uf_hat*cos(sigma)``;
    the rear force then closes the longitudinal balance.
    """
    psi = meas.sigma + delta_sigma
    sin_p = math.sin(psi)
    cos_p = math.cos(psi)
    if abs(sin_p) < config.sin_eps:
        raise SingularSteering(f"sin(sigma + delta_sigma) = {sin_p}")
    sin_s = math.sin(meas.sigma)
    cos_s = math.cos(meas.sigma)
    front_combo = base.f_vf_hat * sin_s + base.f_uf_hat * cos_s
    f_vf = (front_combo - f_uf * cos_p) / sin_p
    m = params.m
    f_vr = m * meas.dv_dt - m * meas.u * meas.delta + params.c_d * meas.v ** 2 \
        + f_uf * sin_p - f_vf * cos_p
    return f_vf, f_vr


def estimate_pn(meas: Measurements, delta_sigma: float, params: VehicleParams,
                soft_tire: TireModel, hard_tire: TireModel,
                p_hard: EmissionParams, p_soft: EmissionParams,
                config: ControllerConfig = ControllerConfig()) -> float:
    """Total particle output if ``delta_sigma`` were applied at this step."""
    base = estimate_base_forces(meas, params, soft_tire, config)
    f_uf = low_wear_front_lateral(meas, delta_sigma, params, hard_tire)
    f_vf, f_vr = forces_for_delta_sigma(meas, delta_sigma, base, f_uf, params, config)
    return particle_number(f_vf, p_hard) + particle_number(f_vr, p_soft)


@dataclass(frozen=True)
class SteeringSearchResult:
    delta_sigma: float
    pn: float
    evaluations: int
    iterations: int
    aborted: bool


def optimize_steering(meas: Measurements, params: VehicleParams,
                      soft_tire: TireModel, hard_tire: TireModel,
                      p_hard: EmissionParams, p_soft: EmissionParams,
                      config: ControllerConfig = ControllerConfig(),
                      ) -> SteeringSearchResult:
    """Greedy local search for the emission-minimizing steering correction.

    Starting from zero with step ``eps_init``, the search moves to whichever
    neighbor lowers the estimated particle output, halving the step whenever
    neither does, and stops once the step falls below ``eps_min``.  Neighbors
    where the force solve is singular count as infinitely bad; a move that
    would leave the search box aborts the search back to zero.
    """
    base = estimate_base_forces(meas, params, soft_tire, config)

    def pn_at(ds: float) -> float:
        try:
            f_uf = low_wear_front_lateral(meas, ds, params, hard_tire)
            f_vf, f_vr = forces_for_delta_sigma(meas, ds, base, f_uf, params, config)
        except SingularSteering:
            return math.inf
        return particle_number(f_vf, p_hard) + particle_number(f_vr, p_soft)

    delta = 0.0
    eps = config.eps_init
    evals = 0
    iters = 0
    bound = config.delta_sigma_bound
    while eps >= config.eps_min:
        iters += 1
        f_here = pn_at(delta)
        f_right = pn_at(delta + eps)
        f_left = pn_at(delta - eps)
        evals += 3
        if f_right < f_here:
            if delta + eps > bound:
                return SteeringSearchResult(0.0, pn_at(0.0), evals + 1, iters, True)
            delta += eps
        elif f_left < f_here:
            if delta - eps < -bound:
                return SteeringSearchResult(0.0, pn_at(0.0), evals + 1, iters, True)
            delta -= eps
        else:
            eps *= 0.5
    return SteeringSearchResult(delta, pn_at(delta), evals + 1, iters, False)


def control_step(meas: Measurements, params: VehicleParams,
                 soft_tire: TireModel, hard_tire: TireModel,
                 p_hard: EmissionParams, p_soft: EmissionParams,
                 config: ControllerConfig = ControllerConfig()) -> ControlDecision:
    """One full control decision for the low-wear vehicle.

    Zero steering leaves only the force sum constrained, so the split comes
    from the closed form; with steering the correction is searched and the
    matching forces derived.  Reference forces are clamped to the axle
    envelopes and the final steering angle to its bound, with flags.
    """
    cap_f, cap_r = axle_force_caps(params, hard_tire, soft_tire)

    if abs(math.sin(meas.sigma)) < config.sin_eps:
        split = straight_split(meas, params, p_hard, p_soft, cap_f, cap_r)
        pn = particle_number(split.f_vf, p_hard) + particle_number(split.f_vr, p_soft)
        return ControlDecision(delta_sigma=0.0, f_vf_ref=split.f_vf,
                               f_vr_ref=split.f_vr, mode="zero-steering",
                               clamped=split.clamped, infeasible=split.infeasible,
                               sigma_applied=meas.sigma, pn_estimate=pn)

    search = optimize_steering(meas, params, soft_tire, hard_tire,
                               p_hard, p_soft, config)
    delta_sigma = search.delta_sigma
    clamped = False
    sigma_applied = meas.sigma + delta_sigma
    if abs(sigma_applied) > config.steering_bound:
        sigma_applied = math.copysign(config.steering_bound, sigma_applied)
        delta_sigma = sigma_applied - meas.sigma
        clamped = True

    base = estimate_base_forces(meas, params, soft_tire, config)
    f_uf = low_wear_front_lateral(meas, delta_sigma, params, hard_tire)
    f_vf, f_vr = forces_for_delta_sigma(meas, delta_sigma, base, f_uf, params, config)
    if abs(f_vf) > cap_f:
        f_vf = math.copysign(cap_f, f_vf)
        clamped = True
    if abs(f_vr) > cap_r:
        f_vr = math.copysign(cap_r, f_vr)
        clamped = True
    pn = particle_number(f_vf, p_hard) + particle_number(f_vr, p_soft)
    return ControlDecision(delta_sigma=delta_sigma, f_vf_ref=f_vf, f_vr_ref=f_vr,
                           mode="steering", clamped=clamped,
                           search_aborted=search.aborted,
                           sigma_applied=sigma_applied, pn_estimate=pn)
