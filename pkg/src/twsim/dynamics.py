"""Planar two-axle vehicle dynamics propagated along a reference path.

The vehicle is a bicycle model (one steerable front wheel, one rear wheel)
described in a curvilinear frame attached to the path: arc length ``s``,
lateral offset ``n`` and heading error ``beta``.  States are stepped in the
path domain with a forward-Euler rule, so trajectories are parameterized by
distance rather than time.
"""

from __future__ import annotations

import json
import math
from bisect import bisect_right
from dataclasses import dataclass, field
from pathlib import Path as FilePath

from . import tire
from .errors import OutOfPath, SingularProjection, StalledOnPath
from .tire import AxleForces, TireModel, V_FLOOR

PROJECTION_EPS = 1e-6
STALL_EPS = 1e-6


@dataclass(frozen=True)
class VehicleParams:
    """Chassis constants (SI units)."""

    m: float = 1500.0          # vehicle mass, kg
    g: float = 9.81            # gravitational acceleration, m/s^2
    i_z: float = 1800.0        # yaw inertia, kg m^2
    c_d: float = 0.39          # drag coefficient, kg/m (force = c_d * v^2)
    r_e: float = 0.3           # effective wheel radius, m
    j_wheel: float = 0.8       # wheel spin inertia, kg m^2
    l_f: float = 1.0           # center of gravity to front axle, m
    l_r: float = 1.0           # center of gravity to rear axle, m

    def validate(self) -> None:
        for name in ("m", "g", "i_z", "c_d", "r_e", "j_wheel", "l_f", "l_r"):
            if not getattr(self, name) > 0.0:
                raise ValueError(f"vehicle parameter {name} must be positive")


@dataclass(frozen=True)
class VehicleState:
    """Path-domain state: time, lateral offset, heading error, velocities, wheel speeds."""

    t: float = 0.0         # elapsed time, s
    n: float = 0.0         # lateral offset from the path, m
    beta: float = 0.0      # heading error to the path tangent, rad
    u: float = 0.0         # lateral velocity, m/s
    v: float = V_FLOOR     # longitudinal velocity, m/s
    delta: float = 0.0     # yaw rate, rad/s
    omega_f: float = V_FLOOR / 0.3   # front wheel angular velocity, rad/s
    omega_r: float = V_FLOOR / 0.3   # rear wheel angular velocity, rad/s

    @staticmethod
    def rolling(v: float, params: VehicleParams) -> "VehicleState":
        """State at speed ``v`` rolling straight with zero wheel slip."""
        return VehicleState(v=v, omega_f=v / params.r_e, omega_r=v / params.r_e)


@dataclass(frozen=True)
class ControlInput:
    """Wheel torques and applied steering angle for one step."""

    torque_f: float = 0.0
    torque_r: float = 0.0
    sigma: float = 0.0


@dataclass(frozen=True)
class Segment:
    """One piece of a path: a straight or a circular arc."""

    kind: str                  # "straight" or "arc"
    length: float
    radius: float = 0.0        # arcs only, m
    direction: str = ""        # arcs only, "left" or "right"

    def curvature(self) -> float:
        if self.kind == "straight":
            return 0.0
        sign = -1.0 if self.direction == "left" else 1.0
        return sign / self.radius


@dataclass(frozen=True)
class Path:
    """Piecewise-constant-curvature path built from straights and arcs."""

    segments: tuple[Segment, ...]
    _starts: tuple[float, ...] = field(init=False, repr=False)

    def __post_init__(self):
        starts = []
        acc = 0.0
        for seg in self.segments:
            if seg.length <= 0.0:
                raise ValueError("segment lengths must be positive")
            if seg.kind == "arc" and seg.radius <= 0.0:
                raise ValueError("arc radius must be positive")
            starts.append(acc)
            acc += seg.length
        object.__setattr__(self, "_starts", tuple(starts))

    @property
    def total_length(self) -> float:
        return self._starts[-1] + self.segments[-1].length

    def segment_at(self, s: float) -> Segment:
        if s < 0.0 or s > self.total_length:
            raise OutOfPath(f"s={s} outside [0, {self.total_length}]")
        # Interior boundaries belong to the following segment (right-continuous).
        idx = bisect_right(self._starts, s) - 1
        if idx < 0:
            idx = 0
        return self.segments[idx]

    @staticmethod
    def straight(length: float) -> "Path":
        return Path(segments=(Segment(kind="straight", length=length),))

    @staticmethod
    def straight_arc_straight(entry: float, arc_length: float, radius: float,
                              direction: str = "right", exit: float = 0.0) -> "Path":
        return Path(segments=(
            Segment(kind="straight", length=entry),
            Segment(kind="arc", length=arc_length, radius=radius, direction=direction),
            Segment(kind="straight", length=exit if exit > 0.0 else entry),
        ))

    def to_json(self) -> str:
        out = []
        for seg in self.segments:
            entry: dict = {"kind": seg.kind, "length": seg.length}
            if seg.kind == "arc":
                entry["radius"] = seg.radius
                entry["direction"] = seg.direction
            out.append(entry)
        return json.dumps(out, indent=2)

    @staticmethod
    def from_json(text: str) -> "Path":
        raw = json.loads(text)
        segs = []
        for item in raw:
            kind = item["kind"]
            if kind == "arc":
                segs.append(Segment(kind="arc", length=float(item["length"]),
                                    radius=float(item["radius"]),
                                    direction=item.get("direction", "right")))
            elif kind == "straight":
                segs.append(Segment(kind="straight", length=float(item["length"])))
            else:
                raise ValueError(f"unknown segment kind {kind!r}")
        return Path(segments=tuple(segs))

    @staticmethod
    def load(path: str | FilePath) -> "Path":
        return Path.from_json(FilePath(path).read_text())


def curvature(path: Path, s: float) -> float:
    """Signed curvature at arc length ``s``: negative on left arcs, positive on right."""
    return path.segment_at(s).curvature()


@dataclass(frozen=True)
class TimeDerivatives:
    """Per-second rates of all states plus the tire forces and slips behind them."""

    dv_dt: float
    du_dt: float
    ddelta_dt: float
    ds_dt: float
    dn_dt: float
    dbeta_dt: float
    domega_f_dt: float
    domega_r_dt: float
    forces: AxleForces
    lambda_f: float
    lambda_r: float
    alpha_f: float
    alpha_r: float


@dataclass(frozen=True)
class StateDerivative:
    """Per-meter rates of the path-domain state vector."""

    dt_ds: float
    dn_ds: float
    dbeta_ds: float
    du_ds: float
    dv_ds: float
    ddelta_ds: float
    domega_f_ds: float
    domega_r_ds: float
    time: TimeDerivatives


def time_derivatives(state: VehicleState, inp: ControlInput, params: VehicleParams,
                     front_tire: TireModel, rear_tire: TireModel,
                     tau: float) -> TimeDerivatives:
    """All eight per-second state rates at the current state and input.

    Tire forces follow from the instantaneous slips; the projection onto the
    path fails (``SingularProjection``) when the vehicle sits at the
    instantaneous curvature center, where ``1 + n*tau`` vanishes.
    """
    sigma = inp.sigma
    lam_f = tire.slip_ratio(params.r_e, state.omega_f, state.v)
    lam_r = tire.slip_ratio(params.r_e, state.omega_r, state.v)
    alpha_f, alpha_r = tire.slip_angles(sigma, state.u, state.v, state.delta,
                                        params.l_f, params.l_r)
    forces = tire.axle_forces(params, front_tire, rear_tire,
                              lam_f, lam_r, alpha_f, alpha_r)

    cos_s = math.cos(sigma)
    sin_s = math.sin(sigma)
    drag = params.c_d * state.v * state.v

    dv_dt = (forces.f_vr + forces.f_vf * cos_s - forces.f_uf * sin_s - drag) / params.m \
        + state.u * state.delta
    du_dt = (forces.f_ur + forces.f_vf * sin_s + forces.f_uf * cos_s) / params.m \
        - state.v * state.delta
    ddelta_dt = (-forces.f_ur * params.l_r
                 + params.l_f * (forces.f_vf * sin_s + forces.f_uf * cos_s)) / params.i_z

    denom = 1.0 + state.n * tau
    if abs(denom) <= PROJECTION_EPS:
        raise SingularProjection(f"1 + n*tau = {denom} at n={state.n}, tau={tau}")
    cos_b = math.cos(state.beta)
    sin_b = math.sin(state.beta)
    ds_dt = (state.v * cos_b - state.u * sin_b) / denom
    dn_dt = state.u * cos_b + state.v * sin_b
    dbeta_dt = state.delta - tau * ds_dt

    domega_f_dt = (inp.torque_f - forces.f_vf * params.r_e) / params.j_wheel
    domega_r_dt = (inp.torque_r - forces.f_vr * params.r_e) / params.j_wheel

    return TimeDerivatives(dv_dt=dv_dt, du_dt=du_dt, ddelta_dt=ddelta_dt,
                           ds_dt=ds_dt, dn_dt=dn_dt, dbeta_dt=dbeta_dt,
                           domega_f_dt=domega_f_dt, domega_r_dt=domega_r_dt,
                           forces=forces, lambda_f=lam_f, lambda_r=lam_r,
                           alpha_f=alpha_f, alpha_r=alpha_r)


def state_derivative(state: VehicleState, inp: ControlInput, params: VehicleParams,
                     front_tire: TireModel, rear_tire: TireModel,
                     path: Path, s: float) -> StateDerivative:
    """Path-domain derivative: every time rate divided by the progress rate ds/dt."""
    rates = time_derivatives(state, inp, params, front_tire, rear_tire,
                             curvature(path, s))
    if rates.ds_dt <= STALL_EPS:
        raise StalledOnPath(f"ds/dt = {rates.ds_dt} at s={s}")
    inv = 1.0 / rates.ds_dt
    return StateDerivative(dt_ds=inv, dn_ds=rates.dn_dt * inv,
                           dbeta_ds=rates.dbeta_dt * inv, du_ds=rates.du_dt * inv,
                           dv_ds=rates.dv_dt * inv, ddelta_ds=rates.ddelta_dt * inv,
                           domega_f_ds=rates.domega_f_dt * inv,
                           domega_r_ds=rates.domega_r_dt * inv, time=rates)


def step(state: VehicleState, deriv: StateDerivative, delta_s: float) -> VehicleState:
    """Forward-Euler update of all eight states over one path increment."""
    if delta_s < 0.0:
        raise ValueError("delta_s must be non-negative")
    return VehicleState(
        t=state.t + delta_s * deriv.dt_ds,
        n=state.n + delta_s * deriv.dn_ds,
        beta=state.beta + delta_s * deriv.dbeta_ds,
        u=state.u + delta_s * deriv.du_ds,
        v=state.v + delta_s * deriv.dv_ds,
        delta=state.delta + delta_s * deriv.ddelta_ds,
        omega_f=state.omega_f + delta_s * deriv.domega_f_ds,
        omega_r=state.omega_r + delta_s * deriv.domega_r_ds,
    )


@dataclass
class Trajectory:
    """Recorded rollout: states at every grid point plus per-step records.

    ``states`` has ``n_steps + 1`` entries; every per-step list has
    ``n_steps`` entries and describes the interval starting at the same index.
    """

    delta_s: float
    states: list[VehicleState] = field(default_factory=list)
    inputs: list[ControlInput] = field(default_factory=list)
    forces: list[AxleForces] = field(default_factory=list)
    slips: list[tuple[float, float, float, float]] = field(default_factory=list)
    derivs: list[StateDerivative] = field(default_factory=list)

    @property
    def n_steps(self) -> int:
        return len(self.inputs)

    def s_grid(self) -> list[float]:
        return [i * self.delta_s for i in range(len(self.states))]

    def dt_weights(self) -> list[float]:
        """Elapsed time spent in each step, s."""
        return [self.delta_s * d.dt_ds for d in self.derivs]

    def rows(self) -> list[dict]:
        """Per-step flat records matching the trajectory CSV columns."""
        out = []
        for i in range(self.n_steps):
            st = self.states[i]
            inp = self.inputs[i]
            f = self.forces[i]
            out.append({
                "i": i, "s": i * self.delta_s, "t": st.t, "n": st.n, "beta": st.beta,
                "u": st.u, "v": st.v, "delta": st.delta,
                "omega_f": st.omega_f, "omega_r": st.omega_r,
                "T_f": inp.torque_f, "T_r": inp.torque_r, "sigma": inp.sigma,
                "F_vf": f.f_vf, "F_vr": f.f_vr, "F_uf": f.f_uf, "F_ur": f.f_ur,
            })
        return out


def simulate(initial: VehicleState, controls: list[ControlInput], path: Path,
             params: VehicleParams, front_tire: TireModel, rear_tire: TireModel,
             delta_s: float) -> Trajectory:
    """Propagate the state over the path with one control per step.

    Raises the underlying ``SingularProjection`` / ``StalledOnPath`` with the
    failing step index attached.
    """
    traj = Trajectory(delta_s=delta_s)
    traj.states.append(initial)
    state = initial
    for i, inp in enumerate(controls):
        s = i * delta_s
        try:
            deriv = state_derivative(state, inp, params, front_tire, rear_tire, path, s)
        except (SingularProjection, StalledOnPath) as exc:
            exc.args = (f"step {i}: {exc.args[0]}",)
            exc.step_index = i
            raise
        state = step(state, deriv, delta_s)
        traj.inputs.append(inp)
        traj.derivs.append(deriv)
        traj.forces.append(deriv.time.forces)
        traj.slips.append((deriv.time.lambda_f, deriv.time.lambda_r,
                           deriv.time.alpha_f, deriv.time.alpha_r))
        traj.states.append(state)
    return traj
