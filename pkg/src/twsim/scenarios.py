"""Scenario runner: the braking / straight / curved experiment pipelines.

Each scenario simulates one vehicle over one path.  The base vehicle rolls on
soft tires front and rear; the low-wear vehicle carries hard front tires and
runs the compensating controller, tracking the force references derived from
the base vehicle's motion.  Runs write a trajectory CSV, a per-step emission
CSV and a summary JSON with provenance hashes; reports aggregate summaries
into comparison tables.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path as FilePath

import numpy as np

from . import emission as emission_mod
from . import tire as tire_mod
from .controller import ControlDecision, ControllerConfig, Measurements, control_step
from .dynamics import Path, Trajectory, VehicleParams
from .emission import EmissionParams, EmissionSeries, trajectory_emission
from .errors import ConfigError, KeyMismatch, MissingRun
from .ocp import (ComfortLimits, DriverTrajectory, OcpProblem, OcpSolution,
                  SolverOptions, generate_driver_trajectory, solve)
from .tire import TireModel, V_FLOOR

RADIUS_FOR_SPEED_KMH = {30.0: 32.0, 60.0: 127.0, 120.0: 510.0}

_KINDS = ("braking", "straight", "curved")
_VEHICLES = ("base", "low_wear")

_CONFIG_KEYS = {
    "kind", "speed_kmh", "zeta", "vehicle", "radius_m", "straight_length_m",
    "approach_length_m", "arc_angle_deg", "direction", "delta_s",
    "tire_soft", "tire_hard", "emission_soft", "emission_hard", "solver_options",
}

# Straight scenarios start a hair above the speed floor so the first drag
# transient cannot push the state into the degenerate-slip region.
_START_SPEED = V_FLOOR + 1e-3


@dataclass(frozen=True)
class ScenarioConfig:
    """One scenario cell: kind, speed, road condition and vehicle."""

    kind: str
    speed_kmh: float
    zeta: float
    vehicle: str
    radius_m: float | None = None
    straight_length_m: float = 400.0
    approach_length_m: float = 100.0
    arc_angle_deg: float = 90.0
    direction: str = "right"
    # Braking needs a finer grid: the first-order stepping error is a fixed
    # per-run overhead that matters most over short stopping distances.
    delta_s: float | None = None
    tire_soft: str | None = None
    tire_hard: str | None = None
    emission_soft: str | None = None
    emission_hard: str | None = None
    solver_options: str | None = None

    def validate(self) -> None:
        if self.kind not in _KINDS:
            raise ConfigError(f"kind: unknown scenario kind {self.kind!r}")
        if self.vehicle not in _VEHICLES:
            raise ConfigError(f"vehicle: unknown vehicle {self.vehicle!r}")
        if self.speed_kmh <= 0.0:
            raise ConfigError("speed_kmh: must be positive")
        if not 0.0 < self.zeta <= 1.0:
            raise ConfigError("zeta: must lie in (0, 1]")
        if self.direction not in ("left", "right"):
            raise ConfigError(f"direction: unknown turn direction {self.direction!r}")
        if self.delta_s is not None and self.delta_s <= 0.0:
            raise ConfigError("delta_s: must be positive")
        if self.kind == "curved" and self.radius() is None:
            raise ConfigError(f"radius_m: no paired radius for speed {self.speed_kmh}"
                              " km/h; set radius_m explicitly")

    def radius(self) -> float | None:
        if self.radius_m is not None:
            return self.radius_m
        return RADIUS_FOR_SPEED_KMH.get(self.speed_kmh)

    @property
    def speed(self) -> float:
        """Scenario speed in m/s."""
        return self.speed_kmh / 3.6

    def step_length(self) -> float:
        if self.delta_s is not None:
            return self.delta_s
        return 0.05 if self.kind == "braking" else 0.25

    def key(self) -> str:
        return f"{self.kind}_{self.speed_kmh:g}kmh_zeta{self.zeta:g}_{self.vehicle}"

    def cell(self) -> tuple[str, float, float]:
        return (self.kind, self.speed_kmh, self.zeta)

    def to_dict(self) -> dict:
        out = {"kind": self.kind, "speed_kmh": self.speed_kmh, "zeta": self.zeta,
               "vehicle": self.vehicle, "straight_length_m": self.straight_length_m,
               "approach_length_m": self.approach_length_m,
               "arc_angle_deg": self.arc_angle_deg, "direction": self.direction,
               "delta_s": self.step_length()}
        if self.radius_m is not None:
            out["radius_m"] = self.radius_m
        for key in ("tire_soft", "tire_hard", "emission_soft", "emission_hard",
                    "solver_options"):
            value = getattr(self, key)
            if value is not None:
                out[key] = value
        return out

    @staticmethod
    def from_dict(data: dict) -> "ScenarioConfig":
        if not isinstance(data, dict):
            raise ConfigError("config root must be a JSON object")
        unknown = set(data) - _CONFIG_KEYS
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        for required in ("kind", "speed_kmh", "zeta", "vehicle"):
            if required not in data:
                raise ConfigError(f"{required}: missing required key")
        kwargs = dict(data)
        for num_key in ("speed_kmh", "zeta", "radius_m", "straight_length_m",
                        "approach_length_m", "arc_angle_deg", "delta_s"):
            if num_key in kwargs:
                try:
                    kwargs[num_key] = float(kwargs[num_key])
                except (TypeError, ValueError):
                    raise ConfigError(f"{num_key}: not a number") from None
        cfg = ScenarioConfig(**kwargs)
        cfg.validate()
        return cfg

    @staticmethod
    def load(path: str | FilePath) -> "ScenarioConfig":
        try:
            raw = json.loads(FilePath(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        return ScenarioConfig.from_dict(raw)


def build_path(config: ScenarioConfig) -> Path:
    if config.kind in ("braking", "straight"):
        return Path.straight(config.straight_length_m)
    radius = config.radius()
    arc_length = math.radians(config.arc_angle_deg) * radius
    return Path.straight_arc_straight(config.approach_length_m, arc_length,
                                      radius, config.direction)


@dataclass
class ScenarioAssets:
    """Resolved parameter sets for one run."""

    params: VehicleParams
    soft_tire: TireModel
    hard_tire: TireModel
    p_soft: EmissionParams
    p_hard: EmissionParams
    options: SolverOptions
    file_hashes: dict[str, str] = field(default_factory=dict)


def _sha256_file(path: str) -> str:
    return hashlib.sha256(FilePath(path).read_bytes()).hexdigest()


def load_assets(config: ScenarioConfig) -> ScenarioAssets:
    hashes = {}

    def tire_from(ref: str | None, fallback) -> TireModel:
        if ref is None:
            return fallback(zeta=config.zeta)
        hashes[ref] = _sha256_file(ref)
        return TireModel.load(ref).with_zeta(config.zeta)

    def emission_from(ref: str | None, fallback) -> EmissionParams:
        if ref is None:
            return fallback()
        hashes[ref] = _sha256_file(ref)
        return EmissionParams.from_dict(json.loads(FilePath(ref).read_text()))

    options = SolverOptions(delta_s=config.step_length())
    if config.solver_options is not None:
        hashes[config.solver_options] = _sha256_file(config.solver_options)
        options = SolverOptions.from_dict(
            json.loads(FilePath(config.solver_options).read_text()))

    return ScenarioAssets(
        params=VehicleParams(),
        soft_tire=tire_from(config.tire_soft, tire_mod.soft_reference_tire),
        hard_tire=tire_from(config.tire_hard, tire_mod.hard_reference_tire),
        p_soft=emission_from(config.emission_soft, emission_mod.soft_emission_params),
        p_hard=emission_from(config.emission_hard, emission_mod.hard_emission_params),
        options=options,
        file_hashes=hashes,
    )


@dataclass
class ScenarioResult:
    """Everything one run produced."""

    config: ScenarioConfig
    solution: OcpSolution
    emission: EmissionSeries
    summary: dict
    decisions: list[ControlDecision] | None = None
    base: DriverTrajectory | None = None


def _vehicle_tires(config: ScenarioConfig, assets: ScenarioAssets,
                   ) -> tuple[TireModel, TireModel]:
    """Front and rear tire of the configured vehicle."""
    if config.vehicle == "low_wear":
        return assets.hard_tire, assets.soft_tire
    return assets.soft_tire, assets.soft_tire


def _emission_for(config: ScenarioConfig, assets: ScenarioAssets,
                  trajectory: Trajectory) -> EmissionSeries:
    p_front = assets.p_hard if config.vehicle == "low_wear" else assets.p_soft
    return trajectory_emission(trajectory, p_front, assets.p_soft)


def stopping_metrics(trajectory: Trajectory) -> tuple[float, float]:
    """Stopping distance (to the speed floor) and peak deceleration."""
    threshold = V_FLOOR + 2e-3
    v = [st.v for st in trajectory.states]
    distance = trajectory.delta_s * trajectory.n_steps
    for i in range(len(v) - 1):
        if v[i] > threshold >= v[i + 1]:
            v_sq_drop = v[i] ** 2 - v[i + 1] ** 2
            frac = (v[i] ** 2 - threshold ** 2) / v_sq_drop if v_sq_drop > 0 else 1.0
            distance = (i + frac) * trajectory.delta_s
            break
    peak_decel = max((-d.time.dv_dt for d in trajectory.derivs), default=0.0)
    return distance, peak_decel


def _controller_series(base: DriverTrajectory, assets: ScenarioAssets,
                       config: ControllerConfig = ControllerConfig(),
                       ) -> list[ControlDecision]:
    decisions = []
    for i in range(len(base.sigma)):
        meas = Measurements(sigma=float(base.sigma[i]), u=float(base.u[i]),
                            v=float(base.v[i]), delta=float(base.delta[i]),
                            du_dt=float(base.du_dt[i]), dv_dt=float(base.dv_dt[i]))
        decisions.append(control_step(meas, assets.params, assets.soft_tire,
                                      assets.hard_tire, assets.p_hard,
                                      assets.p_soft, config))
    return decisions


def run_scenario(config: ScenarioConfig, out_dir: str | FilePath | None = None,
                 ) -> ScenarioResult:
    """Execute one scenario and (optionally) write its artifacts."""
    config.validate()
    assets = load_assets(config)
    path = build_path(config)
    front, rear = _vehicle_tires(config, assets)
    decisions = None
    base = None

    if config.kind == "braking":
        problem = OcpProblem(path=path, objective="min_speed", params=assets.params,
                             front_tire=front, rear_tire=rear,
                             v_init=config.speed, v_limit=config.speed,
                             comfort=None, options=assets.options,
                             braking_split="controller" if config.vehicle == "low_wear"
                             else "symmetric",
                             p_hard=assets.p_hard, p_soft=assets.p_soft)
        solution = solve(problem)
    else:
        flying = config.kind == "curved"
        base_problem = OcpProblem(path=path, objective="min_time",
                                  params=assets.params,
                                  front_tire=assets.soft_tire,
                                  rear_tire=assets.soft_tire,
                                  v_init=config.speed if flying else _START_SPEED,
                                  v_limit=config.speed,
                                  v_end=None if flying else V_FLOOR,
                                  options=assets.options)
        if config.vehicle == "base":
            driver = generate_driver_trajectory(base_problem)
            solution = driver.solution
            base = driver
        else:
            base = generate_driver_trajectory(base_problem)
            decisions = _controller_series(base, assets)
            problem = OcpProblem(path=path, objective="force_tracking",
                                 params=assets.params, front_tire=front,
                                 rear_tire=rear,
                                 v_init=base_problem.v_init,
                                 v_limit=config.speed,
                                 options=assets.options,
                                 reference_front=np.array([d.f_vf_ref for d in decisions]),
                                 reference_rear=np.array([d.f_vr_ref for d in decisions]),
                                 steering_series=np.array([d.sigma_applied
                                                           for d in decisions]))
            solution = solve(problem)

    series = _emission_for(config, assets, solution.trajectory)
    summary = _build_summary(config, assets, solution, series)
    result = ScenarioResult(config=config, solution=solution, emission=series,
                            summary=summary, decisions=decisions, base=base)
    if out_dir is not None:
        write_artifacts(result, FilePath(out_dir))
    return result


def _build_summary(config: ScenarioConfig, assets: ScenarioAssets,
                   solution: OcpSolution, series: EmissionSeries) -> dict:
    traj = solution.trajectory
    distance, peak_decel = stopping_metrics(traj)
    config_json = json.dumps(config.to_dict(), sort_keys=True)
    summary = {
        "scenario": config.to_dict(),
        "key": config.key(),
        "n_steps": traj.n_steps,
        "delta_s": traj.delta_s,
        "elapsed_time_s": traj.states[-1].t,
        "objective_value": solution.objective_value,
        "iterations": solution.iterations,
        "defect_max": solution.defect_max,
        "optimality_residual": solution.optimality_residual,
        "violations": solution.violations,
        "peak_deceleration_ms2": peak_decel,
        "pn_total": series.total,
        "pn_total_time_weighted": series.total_time_weighted,
        "pn_front": series.total_front,
        "pn_rear": series.total_rear,
        "provenance": {
            "config_sha256": hashlib.sha256(config_json.encode()).hexdigest(),
            "files": assets.file_hashes,
        },
    }
    if config.kind == "braking":
        summary["stopping_distance_m"] = distance
    return summary


_FMT = "%.12g"


def _write_csv(path: FilePath, fieldnames: list[str], rows: list[dict]) -> None:
    with path.open("w", newline="") as handle:
        writer = csv.DictWriter(handle, fieldnames=fieldnames)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: (_FMT % v if isinstance(v, float) else v)
                             for k, v in row.items()})


def write_artifacts(result: ScenarioResult, out_dir: FilePath) -> FilePath:
    """Write trajectory.csv, emission.csv and summary.json under out_dir/<key>/."""
    run_dir = FilePath(out_dir) / result.config.key()
    run_dir.mkdir(parents=True, exist_ok=True)

    rows = result.solution.trajectory.rows()
    fieldnames = list(rows[0].keys()) if rows else []
    vmax = result.solution.violation_max()
    for row in rows:
        row["defect_max"] = result.solution.defect_max
        row["violation_max"] = vmax
    if fieldnames:
        fieldnames += ["defect_max", "violation_max"]
    if result.decisions is not None:
        for row, dec in zip(rows, result.decisions):
            row["delta_sigma"] = dec.delta_sigma
            row["F_vf_ref"] = dec.f_vf_ref
            row["F_vr_ref"] = dec.f_vr_ref
            row["mode"] = dec.mode
            row["clamped"] = int(dec.clamped)
        fieldnames += ["delta_sigma", "F_vf_ref", "F_vr_ref", "mode", "clamped"]
    _write_csv(run_dir / "trajectory.csv", fieldnames, rows)

    emission_rows = []
    dt = result.emission.dt
    for i in range(len(result.emission.pn_front)):
        st = result.solution.trajectory.states[i]
        emission_rows.append({
            "i": i, "s": i * result.solution.trajectory.delta_s, "t": st.t,
            "v": st.v,
            "pn_front": float(result.emission.pn_front[i]),
            "pn_rear": float(result.emission.pn_rear[i]),
            "pn_step": float(result.emission.pn_step[i]),
            "dt": float(dt[i]),
        })
    _write_csv(run_dir / "emission.csv",
               ["i", "s", "t", "v", "pn_front", "pn_rear", "pn_step", "dt"],
               emission_rows)

    (run_dir / "summary.json").write_text(
        json.dumps(result.summary, indent=2, sort_keys=True) + "\n")
    return run_dir


# --------------------------------------------------------------------------
# Comparison and reporting
# --------------------------------------------------------------------------

def compare(base_summary: dict, lowwear_summary: dict) -> dict:
    """Comparison row for one scenario cell (base vs low-wear)."""
    b = base_summary["scenario"]
    l = lowwear_summary["scenario"]
    for key in ("kind", "speed_kmh", "zeta"):
        if b[key] != l[key]:
            raise KeyMismatch(f"summaries differ in {key}: {b[key]} vs {l[key]}")
    if b["vehicle"] != "base" or l["vehicle"] != "low_wear":
        raise KeyMismatch("expected a base summary and a low_wear summary")

    pn_b = base_summary["pn_total"]
    pn_l = lowwear_summary["pn_total"]
    pn_b_t = base_summary["pn_total_time_weighted"]
    pn_l_t = lowwear_summary["pn_total_time_weighted"]
    row = {
        "kind": b["kind"], "speed_kmh": b["speed_kmh"], "zeta": b["zeta"],
        "pn_base": pn_b, "pn_low_wear": pn_l,
        "reduction_pct": 100.0 * (1.0 - pn_l / pn_b) if pn_b else 0.0,
        "reduction_pct_time_weighted":
            100.0 * (1.0 - pn_l_t / pn_b_t) if pn_b_t else 0.0,
        "peak_decel_base": base_summary["peak_deceleration_ms2"],
        "peak_decel_low_wear": lowwear_summary["peak_deceleration_ms2"],
    }
    row["reduction_pct_rounded"] = round(row["reduction_pct"])
    if "stopping_distance_m" in base_summary:
        d_b = base_summary["stopping_distance_m"]
        d_l = lowwear_summary["stopping_distance_m"]
        row["stopping_distance_base_m"] = d_b
        row["stopping_distance_low_wear_m"] = d_l
        row["stopping_distance_delta_m"] = d_l - d_b
        row["stopping_distance_ratio"] = d_l / d_b if d_b else math.inf
    return row


def collect_summaries(out_dir: str | FilePath) -> dict[str, dict]:
    """All summary.json files found under run directories of ``out_dir``."""
    found = {}
    root = FilePath(out_dir)
    if not root.exists():
        return found
    for summary_path in sorted(root.glob("*/summary.json")):
        data = json.loads(summary_path.read_text())
        found[data["key"]] = data
    return found


def report_all(out_dir: str | FilePath) -> dict[str, list[dict]]:
    """Comparison tables per scenario kind from the runs under ``out_dir``.

    A kind with some but not all of its grid runs raises ``MissingRun``
    naming the absent scenario keys.
    """
    summaries = collect_summaries(out_dir)
    tables: dict[str, list[dict]] = {}
    for kind in _KINDS:
        cells = sorted({(s["scenario"]["zeta"], s["scenario"]["speed_kmh"])
                        for s in summaries.values() if s["scenario"]["kind"] == kind})
        if not cells:
            continue
        missing = []
        rows = []
        for zeta, speed in cells:
            pair = {}
            for vehicle in _VEHICLES:
                cfg = ScenarioConfig(kind=kind, speed_kmh=speed, zeta=zeta,
                                     vehicle=vehicle)
                found = summaries.get(cfg.key())
                if found is None:
                    missing.append(cfg.key())
                else:
                    pair[vehicle] = found
            if len(pair) == 2:
                rows.append(compare(pair["base"], pair["low_wear"]))
        if missing:
            raise MissingRun("missing scenario runs: " + ", ".join(missing))
        tables[kind] = rows
    return tables


def render_report(tables: dict[str, list[dict]], report_dir: str | FilePath) -> None:
    """Write tables.csv and tables.txt under ``report_dir``."""
    report_path = FilePath(report_dir)
    report_path.mkdir(parents=True, exist_ok=True)

    csv_rows = []
    for kind, rows in tables.items():
        for row in rows:
            csv_rows.append(dict(row))
    fields = ["kind", "speed_kmh", "zeta", "pn_base", "pn_low_wear",
              "reduction_pct", "reduction_pct_rounded",
              "reduction_pct_time_weighted", "peak_decel_base",
              "peak_decel_low_wear", "stopping_distance_base_m",
              "stopping_distance_low_wear_m", "stopping_distance_delta_m",
              "stopping_distance_ratio"]
    normalized = [{k: row.get(k, "") for k in fields} for row in csv_rows]
    _write_csv(report_path / "tables.csv", fields, normalized)

    lines = []
    if "braking" in tables:
        lines.append("Emergency braking: stopping distance and peak deceleration")
        lines.append(f"{'zeta':>5} {'km/h':>6} {'d_base':>8} {'d_low':>8} "
                     f"{'a_base':>7} {'a_low':>7}")
        for row in tables["braking"]:
            lines.append(f"{row['zeta']:>5g} {row['speed_kmh']:>6g} "
                         f"{row['stopping_distance_base_m']:>8.1f} "
                         f"{row['stopping_distance_low_wear_m']:>8.1f} "
                         f"{row['peak_decel_base']:>7.1f} "
                         f"{row['peak_decel_low_wear']:>7.1f}")
        lines.append("")
    for kind, title in (("straight", "Straight path: emission comparison"),
                        ("curved", "Curved path: emission comparison")):
        if kind not in tables:
            continue
        lines.append(title)
        lines.append(f"{'zeta':>5} {'km/h':>6} {'PN_base':>12} {'PN_low':>12} "
                     f"{'red%':>6} {'red%(dt)':>9}")
        for row in tables[kind]:
            lines.append(f"{row['zeta']:>5g} {row['speed_kmh']:>6g} "
                         f"{row['pn_base']:>12.4g} {row['pn_low_wear']:>12.4g} "
                         f"{row['reduction_pct_rounded']:>6d} "
                         f"{row['reduction_pct_time_weighted']:>9.1f}")
        lines.append("")
    (report_path / "tables.txt").write_text("\n".join(lines) + "\n")
