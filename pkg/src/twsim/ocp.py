"""Path-domain trajectory generation and force tracking.

Trajectories are decided over a fixed grid of path steps.  The solver
exploits the structure of the three supported objectives instead of running a
generic NLP: minimum-time and minimum-speed profiles ride their active bounds
(comfort or traction), and force tracking inverts the slip curves step by
step, which drives the tracking error to zero whenever the references are
realizable.  Dynamics defects are zero by construction because every returned
trajectory is an exact forward-Euler rollout; feasibility and first-order
optimality are measured on the result and reported.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from . import tire as tire_mod
from .controller import Measurements, axle_force_caps, straight_split
from .dynamics import (ControlInput, Path, StateDerivative, Trajectory,
                       VehicleParams, VehicleState, curvature, state_derivative,
                       step)
from .emission import EmissionParams
from .errors import Diverged, Infeasible
from .tire import TireModel, V_FLOOR, mf_invert

_MERIT_PENALTY = 1e3
_REFINE_LIMIT = 20

# Profiles keep this much speed above the hard floor so integration noise can
# never push a live state into the degenerate-slip region.
_FLOOR_MARGIN = 1e-3


@dataclass(frozen=True)
class ComfortLimits:
    """Occupant comfort envelope: accelerations and jerks, both axes."""

    lat_accel: float = 5.6     # |du/dt| bound, m/s^2
    lon_accel: float = 3.07    # |dv/dt| bound, m/s^2
    jerk: float = 2.0          # |d2u/dt2| and |d2v/dt2| bound, m/s^3


@dataclass(frozen=True)
class SteeringLimits:
    angle: float = math.pi / 9.0    # rad
    rate: float = math.pi / 12.0    # rad/s


@dataclass(frozen=True)
class SolverOptions:
    feas_tol: float = 1e-4
    opt_tol: float = 1e-5
    max_iter: int = 500
    delta_s: float = 0.25

    def to_dict(self) -> dict:
        return {"feas_tol": self.feas_tol, "opt_tol": self.opt_tol,
                "max_iter": self.max_iter, "delta_s": self.delta_s}

    @staticmethod
    def from_dict(data: dict) -> "SolverOptions":
        opts = SolverOptions()
        known = {"feas_tol", "opt_tol", "max_iter", "delta_s"}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown solver options: {sorted(unknown)}")
        return replace(opts, **{k: type(getattr(opts, k))(v) for k, v in data.items()})


@dataclass
class OcpProblem:
    """One trajectory problem over a path grid.

    ``objective`` selects the mode: ``min_time`` (reach and hold the speed
    limit, optionally braking to ``v_end``), ``min_speed`` (emergency
    braking) or ``force_tracking`` (realize per-step longitudinal force
    references under a fixed steering series).  ``comfort=None`` drops the
    comfort envelope, which is how emergency scenarios are posed.
    """

    path: Path
    objective: str
    params: VehicleParams
    front_tire: TireModel
    rear_tire: TireModel
    v_init: float
    v_limit: float
    v_end: float | None = None
    comfort: ComfortLimits | None = ComfortLimits()
    steering: SteeringLimits = SteeringLimits()
    lane_half_width: float = 1.0
    options: SolverOptions = SolverOptions()
    # force_tracking inputs: one entry per step.
    reference_front: np.ndarray | None = None
    reference_rear: np.ndarray | None = None
    steering_series: np.ndarray | None = None
    # Axle split used while braking: "symmetric" or "controller".
    braking_split: str = "symmetric"
    p_hard: EmissionParams | None = None
    p_soft: EmissionParams | None = None

    def grid(self) -> tuple[int, float]:
        """Number of steps and the effective step length."""
        length = self.path.total_length
        d = max(2, round(length / self.options.delta_s))
        return d, length / d


@dataclass
class OcpSolution:
    """Solved trajectory plus the feasibility/optimality evidence."""

    trajectory: Trajectory
    objective_value: float
    objective_history: list[float]
    merit_history: list[float]
    iterations: int
    defect_max: float
    violations: dict[str, float]
    optimality_residual: float
    converged: bool

    @property
    def states(self) -> list[VehicleState]:
        return self.trajectory.states

    @property
    def inputs(self) -> list[ControlInput]:
        return self.trajectory.inputs

    def violation_max(self, classes=None) -> float:
        keys = classes if classes is not None else self.violations.keys()
        return max(self.violations[k] for k in keys)


# --------------------------------------------------------------------------
# Objectives
# --------------------------------------------------------------------------

def objective_min_time(trajectory: Trajectory) -> float:
    """Total elapsed time: sum of dt/ds times the step length."""
    return sum(d.dt_ds * trajectory.delta_s for d in trajectory.derivs)


def objective_min_speed(trajectory: Trajectory) -> float:
    """Sum of squared speeds over the grid points."""
    return sum(st.v * st.v for st in trajectory.states)


def objective_force_tracking(trajectory: Trajectory, reference_front,
                             reference_rear) -> float:
    """Sum of squared per-step force errors against the references."""
    total = 0.0
    for i in range(trajectory.n_steps):
        f = trajectory.forces[i]
        total += (f.f_vf - reference_front[i]) ** 2 + (f.f_vr - reference_rear[i]) ** 2
    return total


# --------------------------------------------------------------------------
# Speed profiles
# --------------------------------------------------------------------------

@dataclass
class SpeedProfile:
    """Dense (s, v, a) samples plus the arc lengths of profile breakpoints."""

    s: np.ndarray
    v: np.ndarray
    a: np.ndarray
    breakpoints: np.ndarray

    def v_at(self, s: float) -> float:
        return float(np.interp(s, self.s, self.v))

    def a_at(self, s: float) -> float:
        return float(np.interp(s, self.s, self.a))


def _accel_segments(v_lo: float, v_hi: float, a_max: float,
                    jerk: float | None) -> list[tuple[float, float, float]]:
    """Constant-jerk segments (duration, jerk, a_start) speeding up v_lo -> v_hi."""
    dv = v_hi - v_lo
    if dv <= 1e-12:
        return []
    if jerk is None:
        return [(dv / a_max, 0.0, a_max)]
    dv_ramps = a_max * a_max / jerk
    if dv >= dv_ramps:
        t_j = a_max / jerk
        t_c = (dv - dv_ramps) / a_max
        return [(t_j, jerk, 0.0), (t_c, 0.0, a_max), (t_j, -jerk, a_max)]
    a_pk = math.sqrt(jerk * dv)
    return [(a_pk / jerk, jerk, 0.0), (a_pk / jerk, -jerk, a_pk)]


def _decel_segments(v_hi: float, v_lo: float, a_max: float,
                    jerk: float | None) -> list[tuple[float, float, float]]:
    """Constant-jerk segments slowing v_hi -> v_lo (mirror of acceleration)."""
    return [(dt, -j, -a0) for dt, j, a0 in _accel_segments(v_lo, v_hi, a_max, jerk)]


def _phase_distance(v_lo: float, v_hi: float, a_max: float,
                    jerk: float | None) -> float:
    """Distance covered accelerating v_lo -> v_hi (same decelerating, reversed)."""
    d = 0.0
    v = v_lo
    for dt, j, a0 in _accel_segments(v_lo, v_hi, a_max, jerk):
        d += v * dt + 0.5 * a0 * dt * dt + j * dt ** 3 / 6.0
        v += a0 * dt + 0.5 * j * dt * dt
    return d


def _sample_segments(segments, v0: float, s0: float = 0.0,
                     points_per_segment: int = 400):
    """Sample (s, v, a) along constant-jerk segments analytically."""
    ss, vs, aa = [s0], [v0], [segments[0][2] if segments else 0.0]
    s, v = s0, v0
    joints = [s0]
    for dt, j, a0 in segments:
        ts = np.linspace(0.0, dt, points_per_segment)[1:]
        a_loc = a0 + j * ts
        v_loc = v + a0 * ts + 0.5 * j * ts * ts
        s_loc = s + v * ts + 0.5 * a0 * ts * ts + j * ts ** 3 / 6.0
        ss.extend(s_loc.tolist())
        vs.extend(v_loc.tolist())
        aa.extend(a_loc.tolist())
        s = float(s_loc[-1])
        v = float(v_loc[-1])
        joints.append(s)
    return ss, vs, aa, joints


def build_min_time_profile(length: float, v_init: float, v_limit: float,
                           v_end: float | None, a_cap: float,
                           jerk: float | None) -> SpeedProfile:
    """Bound-riding speed profile: accelerate, hold the limit, brake to the end.

    When the path is too short to reach ``v_limit`` the peak speed is found by
    bisection so the acceleration and braking phases meet exactly.
    """
    ve = None if v_end is None else max(v_end, V_FLOOR + _FLOOR_MARGIN)

    def transition_dist(v_peak: float) -> float:
        d = _phase_distance(v_init, v_peak, a_cap, jerk)
        if ve is not None:
            d += _phase_distance(ve, v_peak, a_cap, jerk)
        return d

    v_peak = v_limit
    if transition_dist(v_limit) > length:
        lo = max(v_init, ve if ve is not None else v_init)
        hi = v_limit
        for _ in range(80):
            mid = 0.5 * (lo + hi)
            if transition_dist(mid) > length:
                hi = mid
            else:
                lo = mid
        v_peak = lo

    d_acc = _phase_distance(v_init, v_peak, a_cap, jerk)
    d_dec = _phase_distance(ve, v_peak, a_cap, jerk) if ve is not None else 0.0
    cruise = max(0.0, length - d_acc - d_dec)

    ss, vs, aa, joints = _sample_segments(_accel_segments(v_init, v_peak, a_cap, jerk),
                                          v_init)
    if cruise > 0.0:
        ss.append(ss[-1] + cruise)
        vs.append(v_peak)
        aa.append(0.0)
        joints.append(ss[-1])
    if ve is not None and v_peak - ve > 1e-12:
        s2, v2, a2, j2 = _sample_segments(_decel_segments(v_peak, ve, a_cap, jerk),
                                          v_peak, s0=ss[-1])
        ss.extend(s2[1:])
        vs.extend(v2[1:])
        aa.extend(a2[1:])
        joints.extend(j2[1:])
    # Guard sample past the end so interpolation stays flat there.
    ss.append(max(length, ss[-1]) + 1.0)
    vs.append(vs[-1])
    aa.append(0.0)
    return SpeedProfile(s=np.asarray(ss), v=np.asarray(vs), a=np.asarray(aa),
                        breakpoints=np.asarray(joints))


def build_braking_profile(v_init: float, decel_of_v, n_steps: int,
                          delta_s: float) -> SpeedProfile:
    """Maximum-deceleration profile on the grid, holding the floor once reached."""
    floor = V_FLOOR + _FLOOR_MARGIN
    v = np.empty(n_steps + 1)
    a = np.zeros(n_steps + 1)
    v[0] = v_init
    stop_s = n_steps * delta_s
    for i in range(n_steps):
        if v[i] <= floor + 1e-12:
            v[i + 1] = floor
            a[i] = 0.0
            continue
        dec = decel_of_v(v[i])
        v_next_sq = v[i] * v[i] - 2.0 * dec * delta_s
        v[i + 1] = math.sqrt(v_next_sq) if v_next_sq > floor * floor else floor
        a[i] = (v[i + 1] ** 2 - v[i] ** 2) / (2.0 * delta_s)
        if v[i + 1] <= floor + 1e-12 and stop_s == n_steps * delta_s:
            stop_s = (i + 1) * delta_s
    s = np.arange(n_steps + 1) * delta_s
    return SpeedProfile(s=s, v=v, a=a, breakpoints=np.asarray([0.0, stop_s]))


# --------------------------------------------------------------------------
# Steady-state cornering and the driver steering model
# --------------------------------------------------------------------------

def steady_state_cornering(tau: float, v: float, params: VehicleParams,
                           front_tire: TireModel, rear_tire: TireModel,
                           ) -> tuple[float, float, float]:
    """Steering angle, lateral velocity and yaw rate for steady cornering.

    On a constant-curvature arc the yaw rate is ``tau * v`` and the yaw
    balance fixes how the centripetal force splits across the axles; the
    lateral slip curves are then inverted for the slip angles.
    """
    if tau == 0.0:
        return 0.0, 0.0, 0.0
    delta = tau * v
    loads = tire_mod.axle_loads(params)
    wheelbase = params.l_f + params.l_r
    f_ur = params.m * v * delta * params.l_f / wheelbase
    alpha_r = mf_invert(rear_tire.lateral, f_ur / loads.rear_normal,
                        rear_tire.zeta, rear_tire.slip_angle_limit)
    u = params.l_r * delta - alpha_r * v
    front_combo = params.m * v * delta * params.l_r / wheelbase
    sigma = 0.0
    for _ in range(3):
        f_uf = front_combo / math.cos(sigma)
        alpha_f = mf_invert(front_tire.lateral, f_uf / loads.front_normal,
                            front_tire.zeta, front_tire.slip_angle_limit)
        sigma = alpha_f + (u + params.l_f * delta) / v
    return sigma, u, delta


class _DriverSteering:
    """Feedforward steady-state steering plus a small path-recentering feedback."""

    K_BETA = 0.5
    K_N = 0.05

    def __init__(self, path: Path, params: VehicleParams, front_tire: TireModel,
                 rear_tire: TireModel, limits: SteeringLimits):
        self.path = path
        self.params = params
        self.front_tire = front_tire
        self.rear_tire = rear_tire
        self.limits = limits
        self.prev_sigma = 0.0
        self._ff_cache: dict[tuple[float, float], float] = {}

    def command(self, s: float, state: VehicleState, dt: float) -> float:
        tau = curvature(self.path, min(s, self.path.total_length))
        key = (tau, round(state.v, 4))
        sigma_ff = self._ff_cache.get(key)
        if sigma_ff is None:
            sigma_ff, _, _ = steady_state_cornering(tau, state.v, self.params,
                                                    self.front_tire, self.rear_tire)
            self._ff_cache[key] = sigma_ff
        sigma = sigma_ff - self.K_BETA * state.beta - self.K_N * state.n
        sigma = max(-self.limits.angle, min(self.limits.angle, sigma))
        max_step = self.limits.rate * dt
        sigma = max(self.prev_sigma - max_step,
                    min(self.prev_sigma + max_step, sigma))
        self.prev_sigma = sigma
        return sigma


# --------------------------------------------------------------------------
# Deadbeat rollout
# --------------------------------------------------------------------------

def drag_balanced_state(v: float, params: VehicleParams, front_tire: TireModel,
                        rear_tire: TireModel) -> VehicleState:
    """Rolling state whose wheel slips already balance the aerodynamic drag."""
    loads = tire_mod.axle_loads(params)
    half_drag = 0.5 * params.c_d * v * v
    lam_f = mf_invert(front_tire.longitudinal, half_drag / loads.front_normal,
                      front_tire.zeta, front_tire.slip_ratio_limit)
    lam_r = mf_invert(rear_tire.longitudinal, half_drag / loads.rear_normal,
                      rear_tire.zeta, rear_tire.slip_ratio_limit)
    return VehicleState(v=v, omega_f=v * (1.0 + lam_f) / params.r_e,
                        omega_r=v * (1.0 + lam_r) / params.r_e)


class _Rollout:
    """Deadbeat stepping: slip-curve inversion turns force targets into torques."""

    def __init__(self, problem: OcpProblem):
        self.pb = problem
        self.n_steps, self.delta_s = problem.grid()
        self.loads = tire_mod.axle_loads(problem.params)

    def free_derivative(self, state: VehicleState, sigma: float,
                        s: float) -> StateDerivative:
        """Derivative under zero torque; only wheel-spin rates depend on torque."""
        pb = self.pb
        return state_derivative(state, ControlInput(0.0, 0.0, sigma), pb.params,
                                pb.front_tire, pb.rear_tire, pb.path,
                                min(s, pb.path.total_length))

    def torques_for(self, state: VehicleState, deriv: StateDerivative,
                    v_next: float, f_front_next: float,
                    f_rear_next: float) -> tuple[float, float]:
        """Torques that realize the requested axle forces at the next step."""
        pb = self.pb
        lam_f = mf_invert(pb.front_tire.longitudinal,
                          f_front_next / self.loads.front_normal,
                          pb.front_tire.zeta, pb.front_tire.slip_ratio_limit)
        lam_r = mf_invert(pb.rear_tire.longitudinal,
                          f_rear_next / self.loads.rear_normal,
                          pb.rear_tire.zeta, pb.rear_tire.slip_ratio_limit)
        omega_f_t = v_next * (1.0 + lam_f) / pb.params.r_e
        omega_r_t = v_next * (1.0 + lam_r) / pb.params.r_e
        scale = pb.params.j_wheel * deriv.time.ds_dt / self.delta_s
        t_f = scale * (omega_f_t - state.omega_f) + deriv.time.forces.f_vf * pb.params.r_e
        t_r = scale * (omega_r_t - state.omega_r) + deriv.time.forces.f_vr * pb.params.r_e
        return t_f, t_r

    def run(self, initial: VehicleState, control_fn) -> Trajectory:
        """Roll the dynamics forward; ``control_fn(i, state, s)`` returns (input, deriv)."""
        traj = Trajectory(delta_s=self.delta_s)
        traj.states.append(initial)
        state = initial
        for i in range(self.n_steps):
            s = i * self.delta_s
            inp, deriv = control_fn(i, state, s)
            state = step(state, deriv, self.delta_s)
            if not (math.isfinite(state.v) and math.isfinite(state.u)
                    and math.isfinite(state.delta) and math.isfinite(state.n)):
                raise Diverged(f"non-finite state at step {i}")
            traj.inputs.append(inp)
            traj.derivs.append(deriv)
            traj.forces.append(deriv.time.forces)
            traj.slips.append((deriv.time.lambda_f, deriv.time.lambda_r,
                               deriv.time.alpha_f, deriv.time.alpha_r))
            traj.states.append(state)
        return traj


def _profile_control(rollout: _Rollout, profile: SpeedProfile,
                     driver: _DriverSteering | None, split_fn,
                     a_bounds: tuple[float, float] | None,
                     jerk_limit: float | None):
    """Policy that tracks a speed profile with a chosen axle force split.

    The acceleration command is the one that lands the speed exactly on the
    profile one step ahead (deadbeat), clamped to the allowed jerk headroom
    around the profile acceleration and to the acceleration bounds.
    ``split_fn(f_total, sigma, predicted_state)`` returns the per-axle
    longitudinal force targets for the next step.
    """
    pb = rollout.pb
    params = pb.params
    length = pb.path.total_length

    def control(i: int, state: VehicleState, s: float):
        if driver is not None:
            dt_est = rollout.delta_s / max(state.v, V_FLOOR)
            sigma = driver.command(s, state, dt_est)
        else:
            sigma = 0.0
        deriv = rollout.free_derivative(state, sigma, s)
        pred = step(state, deriv, rollout.delta_s)
        s_next = min((i + 1) * rollout.delta_s, length)

        tau_next = curvature(pb.path, s_next)
        ds_dt_next = (pred.v * math.cos(pred.beta) - pred.u * math.sin(pred.beta)) \
            / (1.0 + pred.n * tau_next)
        ds_dt_next = max(ds_dt_next, 1e-6)
        v_tgt = profile.v_at(s_next + rollout.delta_s)
        a_cmd = (v_tgt - pred.v) * ds_dt_next / rollout.delta_s
        if jerk_limit is not None:
            # Rate-limit the command against the realized acceleration, using
            # the shorter step duration so the measured jerk stays in bound.
            # The profile is built with jerk margin, so tracking keeps slack.
            a_now = deriv.time.dv_dt
            head = jerk_limit * rollout.delta_s / max(deriv.time.ds_dt, ds_dt_next)
            a_cmd = max(a_now - head, min(a_now + head, a_cmd))
        if a_bounds is not None:
            a_cmd = max(a_bounds[0], min(a_bounds[1], a_cmd))
        # Hard floor guard: never command a speed into the degenerate region.
        floor_hard = V_FLOOR + 0.2 * _FLOOR_MARGIN
        if pred.v + a_cmd * rollout.delta_s / ds_dt_next < floor_hard:
            a_cmd = (floor_hard - pred.v) * ds_dt_next / rollout.delta_s

        alpha_f_next = sigma - (pred.u + params.l_f * pred.delta) / max(pred.v, V_FLOOR)
        f_uf_next = rollout.loads.front_normal * tire_mod.mf_eval(
            pb.front_tire.lateral, alpha_f_next, pb.front_tire.zeta)
        f_need = params.m * (a_cmd - pred.u * pred.delta) \
            + params.c_d * pred.v ** 2 + f_uf_next * math.sin(sigma)
        f_front, f_rear = split_fn(f_need, sigma, pred)
        t_f, t_r = rollout.torques_for(state, deriv, pred.v, f_front, f_rear)
        inp = ControlInput(torque_f=t_f, torque_r=t_r, sigma=sigma)
        deriv_final = state_derivative(state, inp, params, pb.front_tire,
                                       pb.rear_tire, pb.path,
                                       min(s, pb.path.total_length))
        return inp, deriv_final

    return control


def _symmetric_split(f_need: float, sigma: float, pred) -> tuple[float, float]:
    share = f_need / (1.0 + math.cos(sigma))
    return share, share


# --------------------------------------------------------------------------
# Constraint evaluation
# --------------------------------------------------------------------------

COMFORT_CLASSES = ("lon_accel", "lat_accel", "lon_jerk", "lat_jerk")
HARD_CLASSES = ("lane", "steering_angle", "steering_rate",
                "slip_front", "slip_rear", "speed")


def constraint_eval(trajectory: Trajectory, problem: OcpProblem) -> dict[str, float]:
    """Max signed violation per constraint class (a feasible class is <= 0).

    Comfort classes are always evaluated, even for emergency problems that do
    not enforce them.  Jerk is the finite difference of the recorded
    accelerations over elapsed time.
    """
    comfort = problem.comfort if problem.comfort is not None else ComfortLimits()
    n = trajectory.n_steps
    states = trajectory.states
    dt = trajectory.dt_weights()

    lane = max(abs(st.n) for st in states) - problem.lane_half_width
    angle = max(abs(inp.sigma) for inp in trajectory.inputs) - problem.steering.angle
    rate = 0.0
    for i in range(n - 1):
        rate = max(rate, abs(trajectory.inputs[i + 1].sigma
                             - trajectory.inputs[i].sigma) / dt[i])
    rate -= problem.steering.rate

    slip_f = max(max(abs(sl[0]) for sl in trajectory.slips)
                 - problem.front_tire.slip_ratio_limit,
                 max(abs(sl[2]) for sl in trajectory.slips)
                 - problem.front_tire.slip_angle_limit)
    slip_r = max(max(abs(sl[1]) for sl in trajectory.slips)
                 - problem.rear_tire.slip_ratio_limit,
                 max(abs(sl[3]) for sl in trajectory.slips)
                 - problem.rear_tire.slip_angle_limit)

    speed = max(max(V_FLOOR - st.v, st.v - problem.v_limit) for st in states)

    dv = [d.time.dv_dt for d in trajectory.derivs]
    du = [d.time.du_dt for d in trajectory.derivs]
    lon_acc = max(abs(a) for a in dv) - comfort.lon_accel
    lat_acc = max(abs(a) for a in du) - comfort.lat_accel
    lon_jerk = 0.0
    lat_jerk = 0.0
    for i in range(n - 1):
        lon_jerk = max(lon_jerk, abs(dv[i + 1] - dv[i]) / dt[i])
        lat_jerk = max(lat_jerk, abs(du[i + 1] - du[i]) / dt[i])
    lon_jerk -= comfort.jerk
    lat_jerk -= comfort.jerk

    return {"lane": lane, "steering_angle": angle, "steering_rate": rate,
            "slip_front": slip_f, "slip_rear": slip_r, "speed": speed,
            "lon_accel": lon_acc, "lat_accel": lat_acc,
            "lon_jerk": lon_jerk, "lat_jerk": lat_jerk}


def _defect_max(trajectory: Trajectory, problem: OcpProblem) -> float:
    """Largest Euler defect, recomputed from the stored states and inputs."""
    worst = 0.0
    ds = trajectory.delta_s
    for i in range(trajectory.n_steps):
        st = trajectory.states[i]
        deriv = state_derivative(st, trajectory.inputs[i], problem.params,
                                 problem.front_tire, problem.rear_tire,
                                 problem.path, min(i * ds, problem.path.total_length))
        nxt = step(st, deriv, ds)
        got = trajectory.states[i + 1]
        defect = max(abs(got.t - nxt.t), abs(got.n - nxt.n), abs(got.beta - nxt.beta),
                     abs(got.u - nxt.u), abs(got.v - nxt.v), abs(got.delta - nxt.delta),
                     abs(got.omega_f - nxt.omega_f), abs(got.omega_r - nxt.omega_r))
        worst = max(worst, defect)
    return worst


# --------------------------------------------------------------------------
# Solvers
# --------------------------------------------------------------------------

def _enforced_classes(problem: OcpProblem) -> tuple[str, ...]:
    if problem.comfort is None:
        return HARD_CLASSES
    return HARD_CLASSES + COMFORT_CLASSES


def _min_time_optimality(trajectory: Trajectory, problem: OcpProblem,
                         profile: SpeedProfile, a_cap: float) -> float:
    """Bound-riding complementarity: every step must pin speed, accel or jerk.

    Steps adjacent to profile breakpoints are excluded; they are transition
    points whose local perturbations are fixed by their neighbors.
    """
    comfort = problem.comfort if problem.comfort is not None else ComfortLimits()
    ds = trajectory.delta_s
    guard = 3.0 * ds
    dt = trajectory.dt_weights()
    dv = [d.time.dv_dt for d in trajectory.derivs]
    worst = 0.0
    for i in range(1, trajectory.n_steps - 1):
        s = i * ds
        if float(np.min(np.abs(profile.breakpoints - s))) <= guard:
            continue
        slack_v = max(0.0, (problem.v_limit - trajectory.states[i].v) / problem.v_limit)
        slack_a = max(0.0, (a_cap - abs(dv[i])) / a_cap)
        jerk = abs(dv[i] - dv[i - 1]) / dt[i - 1]
        slack_j = max(0.0, (comfort.jerk - jerk) / comfort.jerk)
        worst = max(worst, min(slack_v, slack_a, slack_j))
    return worst


def _solve_min_time(problem: OcpProblem) -> OcpSolution:
    """Build the bound-riding profile and track it with the deadbeat rollout."""
    comfort = problem.comfort
    cap_f, cap_r = axle_force_caps(problem.params, problem.front_tire,
                                   problem.rear_tire)
    drag_peak = problem.params.c_d * problem.v_limit ** 2
    a_traction = (cap_f + cap_r - drag_peak) / problem.params.m
    a_cap_nominal = min(comfort.lon_accel, a_traction) if comfort else a_traction
    # The profile keeps 5% jerk margin below the enforced bound so the
    # step-wise rate limiter can always keep up with it.
    jerk_profile = 0.95 * comfort.jerk if comfort else None
    jerk_limit = comfort.jerk if comfort else None
    has_curves = any(seg.kind == "arc" for seg in problem.path.segments)
    enforced = _enforced_classes(problem)

    merit_hist: list[float] = []
    obj_hist: list[float] = []
    best = None
    margin = 1.0
    for iteration in range(1, _REFINE_LIMIT + 1):
        a_cap = a_cap_nominal * margin
        profile = build_min_time_profile(problem.path.total_length, problem.v_init,
                                         problem.v_limit, problem.v_end, a_cap,
                                         jerk_profile)
        rollout = _Rollout(problem)
        driver = _DriverSteering(problem.path, problem.params, problem.front_tire,
                                 problem.rear_tire, problem.steering) \
            if has_curves else None
        bounds = (-a_cap, a_cap) if comfort else None
        control = _profile_control(rollout, profile, driver, _symmetric_split,
                                   bounds, jerk_limit)
        initial = problem_initial_state(problem)
        traj = rollout.run(initial, control)
        violations = constraint_eval(traj, problem)
        vmax = max(violations[k] for k in enforced)
        obj = objective_min_time(traj)
        merit = obj + _MERIT_PENALTY * max(0.0, vmax)
        if not merit_hist or merit <= merit_hist[-1]:
            merit_hist.append(merit)
            obj_hist.append(obj)
            best = (traj, violations, vmax, obj, profile, a_cap, iteration)
        if vmax <= problem.options.feas_tol:
            break
        margin *= 0.95
    else:
        raise Infeasible("profile refinement exhausted without a feasible iterate")

    traj, violations, vmax, obj, profile, a_cap, iteration = best
    residual = _min_time_optimality(traj, problem, profile, a_cap)
    return OcpSolution(trajectory=traj, objective_value=obj,
                       objective_history=obj_hist, merit_history=merit_hist,
                       iterations=iteration, defect_max=_defect_max(traj, problem),
                       violations=violations, optimality_residual=residual,
                       converged=True)


def _solve_min_speed(problem: OcpProblem) -> OcpSolution:
    """Emergency braking: ride the slip limits down to the speed floor."""
    n_steps, delta_s = problem.grid()
    params = problem.params
    cap_f, cap_r = axle_force_caps(params, problem.front_tire, problem.rear_tire)

    def decel_of_v(v: float) -> float:
        return (cap_f + cap_r + params.c_d * v * v) / params.m

    profile = build_braking_profile(problem.v_init, decel_of_v, n_steps, delta_s)
    rollout = _Rollout(problem)

    if problem.braking_split == "controller":
        if problem.p_hard is None or problem.p_soft is None:
            raise ValueError("controller braking split needs emission parameters")

        def split(f_need: float, sigma: float, pred) -> tuple[float, float]:
            meas = Measurements(sigma=0.0, u=pred.u, v=pred.v, delta=pred.delta,
                                du_dt=0.0,
                                dv_dt=(f_need - params.c_d * pred.v ** 2) / params.m)
            res = straight_split(meas, params, problem.p_hard, problem.p_soft,
                                 cap_f, cap_r)
            return res.f_vf, res.f_vr
    else:
        split = _symmetric_split

    control = _profile_control(rollout, profile, None, split, None, None)
    traj = rollout.run(problem_initial_state(problem), control)
    violations = constraint_eval(traj, problem)
    enforced = _enforced_classes(problem)
    vmax = max(violations[k] for k in enforced)
    if vmax > problem.options.feas_tol:
        raise Infeasible(f"max violation {vmax} above feas_tol")
    obj = objective_min_speed(traj)

    # Complementarity: every step either rides a slip limit or sits on the
    # floor; the first step (wheel spin-down) and the taper step onto the
    # floor are transitions pinned by their neighbors.
    worst = 0.0
    for i in range(1, traj.n_steps - 1):
        if traj.states[i + 1].v <= V_FLOOR + _FLOOR_MARGIN + 1e-9:
            continue
        lam_f, lam_r, _, _ = traj.slips[i]
        slack_f = max(0.0, (problem.front_tire.slip_ratio_limit - abs(lam_f))
                      / problem.front_tire.slip_ratio_limit)
        slack_r = max(0.0, (problem.rear_tire.slip_ratio_limit - abs(lam_r))
                      / problem.rear_tire.slip_ratio_limit)
        worst = max(worst, min(slack_f, slack_r))
    return OcpSolution(trajectory=traj, objective_value=obj,
                       objective_history=[obj], merit_history=[obj],
                       iterations=1, defect_max=_defect_max(traj, problem),
                       violations=violations, optimality_residual=worst,
                       converged=True)


def _solve_tracking(problem: OcpProblem) -> OcpSolution:
    """Force tracking: deadbeat inversion of the slip curves, steering given."""
    n_steps, _ = problem.grid()
    refs_f = np.asarray(problem.reference_front, dtype=float)
    refs_r = np.asarray(problem.reference_rear, dtype=float)
    sigmas = np.asarray(problem.steering_series, dtype=float)
    if not (len(refs_f) == len(refs_r) == len(sigmas) == n_steps):
        raise ValueError("references and steering series must have one entry per step")
    rollout = _Rollout(problem)
    pb = problem

    def control(i: int, state: VehicleState, s: float):
        sigma = float(sigmas[i])
        deriv = rollout.free_derivative(state, sigma, s)
        pred = step(state, deriv, rollout.delta_s)
        j = min(i + 1, n_steps - 1)
        t_f, t_r = rollout.torques_for(state, deriv, pred.v,
                                       float(refs_f[j]), float(refs_r[j]))
        inp = ControlInput(torque_f=t_f, torque_r=t_r, sigma=sigma)
        deriv_final = state_derivative(state, inp, pb.params, pb.front_tire,
                                       pb.rear_tire, pb.path,
                                       min(s, pb.path.total_length))
        return inp, deriv_final

    traj = rollout.run(problem_initial_state(problem), control)
    violations = constraint_eval(traj, problem)
    # The steering series is an input here, not a decision.
    enforced = tuple(k for k in _enforced_classes(problem) if k != "steering_rate")
    vmax = max(violations[k] for k in enforced)
    obj = objective_force_tracking(traj, refs_f, refs_r)

    # Tracking error net of the uncontrollable first step, normalized by the
    # reference scale: zero exactly when the references are realizable.
    err = 0.0
    for i in range(1, traj.n_steps):
        f = traj.forces[i]
        err += (f.f_vf - refs_f[i]) ** 2 + (f.f_vr - refs_r[i]) ** 2
    scale = 1.0 + float(np.max(np.abs(refs_f)) + np.max(np.abs(refs_r)))
    residual = math.sqrt(err / max(1, traj.n_steps - 1)) / scale
    return OcpSolution(trajectory=traj, objective_value=obj,
                       objective_history=[obj], merit_history=[obj],
                       iterations=1, defect_max=_defect_max(traj, problem),
                       violations=violations, optimality_residual=residual,
                       converged=vmax <= problem.options.feas_tol)


def problem_initial_state(problem: OcpProblem) -> VehicleState:
    """Initial state: zero-slip rolling, or drag-balanced for flying starts."""
    if problem.objective != "min_speed" and problem.v_init >= problem.v_limit - 1e-9:
        return drag_balanced_state(problem.v_init, problem.params,
                                   problem.front_tire, problem.rear_tire)
    return VehicleState.rolling(problem.v_init, problem.params)


def solve(problem: OcpProblem) -> OcpSolution:
    """Solve one trajectory problem; see the module docstring for the method.

    Raises ``Infeasible`` when no iterate meets the feasibility tolerance and
    ``Diverged`` on non-finite state values.
    """
    if problem.objective == "min_time":
        return _solve_min_time(problem)
    if problem.objective == "min_speed":
        return _solve_min_speed(problem)
    if problem.objective == "force_tracking":
        return _solve_tracking(problem)
    raise ValueError(f"unknown objective {problem.objective!r}")


@dataclass
class DriverTrajectory:
    """Base-vehicle trajectory with the series consumed by the controller."""

    solution: OcpSolution
    sigma: np.ndarray
    v: np.ndarray
    u: np.ndarray
    delta: np.ndarray
    du_dt: np.ndarray
    dv_dt: np.ndarray

    @property
    def trajectory(self) -> Trajectory:
        return self.solution.trajectory


def generate_driver_trajectory(problem: OcpProblem) -> DriverTrajectory:
    """Run the driver-generating solve and extract per-step measurement series."""
    if problem.objective not in ("min_time", "min_speed"):
        raise ValueError("driver trajectories come from min_time or min_speed solves")
    sol = solve(problem)
    traj = sol.trajectory
    n = traj.n_steps
    return DriverTrajectory(
        solution=sol,
        sigma=np.array([traj.inputs[i].sigma for i in range(n)]),
        v=np.array([traj.states[i].v for i in range(n)]),
        u=np.array([traj.states[i].u for i in range(n)]),
        delta=np.array([traj.states[i].delta for i in range(n)]),
        du_dt=np.array([traj.derivs[i].time.du_dt for i in range(n)]),
        dv_dt=np.array([traj.derivs[i].time.dv_dt for i in range(n)]),
    )
