"""Base-station planning and per-target aim solving.

Chooses floor stations covering all targets (greedy set cover over the
candidate ring), solves a joint configuration per target whose fan line
lands on the mark within tolerance, orders the work into an operator
sequence, and estimates the total cycle time.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import yaml

from .arm import ArmModel, fk, ik, joint_move_duration, NoConvergenceError
from .geom import Ray, RigidTransform, Rotation, unit
from .locate import cell_fingerprint
from .optics import LaserDevice, LaserRig, ProjectedMark, project_mark, verify_mark, NoHitError, OutOfRangeError
from .workcell import StationSpec, TargetMark, Workcell, point_surface_distance, ray_hit

AIM_ANCHOR_Z = 0.75  # m above the station origin; roughly the device working height
BEAM_MIN = 0.5  # m; closer risks arm-to-surface proximity
DEVICE_RADIUS_PREF = 0.5  # preferred device distance from the anchor
DEVICE_RADIUS_MIN = 0.2
DEVICE_RADIUS_MAX_FRAC = 0.8  # of declared arm reach
MIN_INCIDENCE = 0.05  # sine of the shallowest usable beam-to-surface angle

ROLL_LADDER_STEP = 0.002  # rad
IK_SEEDS_PER_ROLL = 5
ROLLS = 8
# A tool orientation error rotates the beam and shifts the spot by
# beam_length * error, so aim solving demands far tighter ik convergence
# than the generic contract.
AIM_IK_POS_TOL = 3e-5  # m
AIM_IK_ROT_TOL = 6e-5  # rad

DEFAULT_DWELL_S = 30.0  # operator mounts a tray per mark (invented default)
DEFAULT_BASE_MOVE_S = 120.0  # manual base relocation (invented default)


class NoSolutionError(RuntimeError):
    """No verified aim configuration found from this station."""


@dataclass
class Station:
    id: int
    candidate_index: int
    spec: StationSpec
    assigned_targets: list[str] = field(default_factory=list)
    localization_set: str = "all"

    @property
    def base_pose(self) -> RigidTransform:
        return self.spec.pose


@dataclass
class AimSolution:
    target_id: str
    station_id: int
    device_index: int
    q: np.ndarray
    predicted: ProjectedMark
    pos_err: float
    ang_err: float


@dataclass
class Plan:
    stations: list[Station]
    solutions: list[AimSolution]
    uncovered: list[str]
    estimated_cycle_s: float
    seed: int
    cell_fingerprint: str = ""

    def station_by_id(self, sid: int) -> Station:
        for s in self.stations:
            if s.id == sid:
                return s
        raise KeyError(sid)


def _target_normal(cell: Workcell, target: TargetMark) -> np.ndarray:
    _, tri = point_surface_distance(cell.mesh, target.point)
    return cell.mesh.normals[tri]


def _sight_clear(cell: Workcell, probe: np.ndarray, point: np.ndarray) -> bool:
    d = float(np.linalg.norm(point - probe))
    if d < 1e-9:
        return True
    hit = ray_hit(cell.mesh, Ray(probe, unit(point - probe)))
    return hit is not None and hit[2] >= d - 1e-4


def coverage_filter(
    cell: Workcell,
    station_pose: RigidTransform,
    target: TargetMark,
    arm: ArmModel,
    rig: LaserRig,
) -> bool:
    """Cheap necessary test that a station can plausibly mark a target.

    Checks the beam working-distance envelope, the arm reach sphere
    inflated by the beam range, a non-grazing incidence on the surface,
    and an unobstructed sight line from at least one probe point on the
    arm's working shell.
    """
    anchor = station_pose.translation + np.array([0.0, 0.0, AIM_ANCHOR_Z])
    to_target = target.point - anchor
    d = float(np.linalg.norm(to_target))
    if d < 1e-9:
        return False
    max_range = max(dev.max_range for dev in rig.devices)
    if d > arm.max_reach + max_range:
        return False
    # some device radius r must give a beam length within [BEAM_MIN, max_range]
    r_lo, r_hi = DEVICE_RADIUS_MIN, DEVICE_RADIUS_MAX_FRAC * arm.max_reach
    if d - r_lo < BEAM_MIN or d - r_hi > max_range:
        return False
    u = to_target / d
    n = _target_normal(cell, target)
    if abs(float(n @ u)) < MIN_INCIDENCE:
        return False
    for r in (0.25, 0.5, 0.75):
        if r >= d:
            continue
        if _sight_clear(cell, anchor + r * u, target.point):
            return True
    return False


def greedy_cover(
    cover_sets: list[frozenset[str]], universe: list[str]
) -> tuple[list[int], dict[str, int], list[str]]:
    """Unweighted greedy set cover; index breaks ties.

    Returns chosen candidate indices in pick order, the target-to-candidate
    assignment (first chosen covering candidate wins), and the uncovered
    remainder.
    """
    uncovered = set(universe)
    chosen: list[int] = []
    while uncovered:
        gains = [len(s & uncovered) for s in cover_sets]
        best = int(np.argmax(gains))
        if gains[best] == 0:
            break
        chosen.append(best)
        uncovered -= cover_sets[best]
    assignment: dict[str, int] = {}
    for tid in universe:
        for c in chosen:
            if tid in cover_sets[c]:
                assignment[tid] = c
                break
    leftover = [t for t in universe if t not in assignment]
    return chosen, assignment, leftover


def assign_stations(
    cell: Workcell, arm: ArmModel, rig: LaserRig
) -> tuple[list[int], dict[str, int], list[str]]:
    """Greedy station choice over the candidate list via coverage_filter."""
    if not cell.stations:
        raise ValueError("workcell has no candidate stations")
    universe = [t.id for t in cell.targets]
    cover_sets = []
    for spec in cell.stations:
        pose = spec.pose
        covered = frozenset(
            t.id for t in cell.targets if coverage_filter(cell, pose, t, arm, rig)
        )
        cover_sets.append(covered)
    return greedy_cover(cover_sets, universe)


def _triads(u: np.ndarray, n_w: np.ndarray) -> np.ndarray:
    return np.column_stack([u, n_w, np.cross(u, n_w)])


def solve_aim(
    cell: Workcell,
    station_pose: RigidTransform,
    target: TargetMark,
    arm: ArmModel,
    device: LaserDevice,
    rng: np.random.Generator,
    *,
    station_id: int = 0,
    device_index: int = 0,
) -> AimSolution:
    """Find a verified joint configuration whose fan line draws the mark.

    The goal pose is built geometrically: beam axis from a working-shell
    point through the target, fan plane spanning the beam and the mark
    direction, boresight offset compensated. A ladder of roll variants
    and ik seeds absorbs awkward kinematics; every candidate is verified
    by re-projection before being accepted.
    """
    base = station_pose.translation
    azimuth = math.atan2(target.point[1] - base[1], target.point[0] - base[0])
    ca, sa = math.cos(azimuth), math.sin(azimuth)

    # Candidate device positions: well-conditioned arm postures swung
    # toward the target, preferred posture first.
    candidates = []
    for radius, height in (
        (DEVICE_RADIUS_PREF, 0.60),
        (0.45, 0.75),
        (0.60, 0.50),
        (0.40, 0.45),
        (0.62, 0.72),
        (0.35, 0.60),
    ):
        candidates.append(base + np.array([radius * ca, radius * sa, height]))

    dev_axes = _triads(np.array([0.0, 0.0, 1.0]), device.fan_normal)
    comp = device.offset.compensation().m
    mount_inv = device.mount.invert()
    station_inv = station_pose.invert()

    last_error = "no feasible device position"
    for device_pos in candidates:
        to_target = target.point - device_pos
        beam_len = float(np.linalg.norm(to_target))
        if not BEAM_MIN <= beam_len <= 0.95 * device.max_range:
            last_error = f"beam length {beam_len:.2f} m outside the working window"
            continue
        u = to_target / beam_len
        if not _sight_clear(cell, device_pos, target.point):
            last_error = "sight line blocked from the device position"
            continue
        # fan plane must contain both the beam axis and the mark direction
        f = target.direction - float(target.direction @ u) * u
        nf = float(np.linalg.norm(f))
        if nf < 1e-9:
            last_error = "beam runs along the mark direction"
            continue
        n_w = unit(np.cross(u, f / nf))
        base_orient = _triads(u, n_w) @ dev_axes.T

        for k in range(ROLLS):
            half_turn = k % 2
            magnitude = ((k // 2 + 1) // 2) * ROLL_LADDER_STEP
            sign = 1.0 if (k // 2) % 2 == 0 else -1.0
            roll = half_turn * math.pi + sign * magnitude
            rolled = Rotation.from_axis_angle(u, roll).m @ base_orient
            goal_wc = RigidTransform(Rotation(rolled @ comp, _skip_check=True), device_pos)
            tool_goal = station_inv.compose(goal_wc).compose(mount_inv)
            for s in range(IK_SEEDS_PER_ROLL):
                if s == 0:
                    seed = np.zeros(6)
                    seed[0] = math.atan2(
                        tool_goal.translation[1], tool_goal.translation[0]
                    )
                else:
                    seed = rng.uniform(arm.lower_limits, arm.upper_limits)
                try:
                    q = ik(
                        arm,
                        tool_goal,
                        seed,
                        rng=rng,
                        restarts=1,
                        pos_tol=AIM_IK_POS_TOL,
                        rot_tol=AIM_IK_ROT_TOL,
                    )
                except NoConvergenceError:
                    last_error = "ik did not converge"
                    continue
                tool_wc = station_pose.compose(fk(arm, q))
                try:
                    mark = project_mark(tool_wc, device, cell.mesh)
                except (NoHitError, OutOfRangeError) as exc:
                    last_error = str(exc)
                    continue
                pos_err, ang_err, ok = verify_mark(mark, target)
                if ok:
                    return AimSolution(
                        target_id=target.id,
                        station_id=station_id,
                        device_index=device_index,
                        q=q,
                        predicted=mark,
                        pos_err=pos_err,
                        ang_err=ang_err,
                    )
                last_error = (
                    f"verification failed (pos {pos_err * 1000:.2f} mm, "
                    f"ang {math.degrees(ang_err):.3f} deg)"
                )
    raise NoSolutionError(f"target {target.id}: {last_error}")


def order_tasks(plan: Plan, cell: Workcell) -> Plan:
    """Order solutions station by station, nearest-neighbor within a station."""
    by_station: dict[int, list[AimSolution]] = {}
    for sol in plan.solutions:
        by_station.setdefault(sol.station_id, []).append(sol)
    ordered: list[AimSolution] = []
    for st in plan.stations:
        group = by_station.get(st.id, [])
        if not group:
            continue
        base = st.base_pose.translation
        points = {s.target_id: cell.target_by_id(s.target_id).point for s in group}
        remaining = list(group)
        cursor = base
        chain = []
        while remaining:
            nearest = min(
                remaining, key=lambda s: float(np.linalg.norm(points[s.target_id] - cursor))
            )
            remaining.remove(nearest)
            chain.append(nearest)
            cursor = points[nearest.target_id]
        ordered.extend(chain)
        st.assigned_targets = [s.target_id for s in chain]
    return Plan(
        stations=plan.stations,
        solutions=ordered,
        uncovered=plan.uncovered,
        estimated_cycle_s=plan.estimated_cycle_s,
        seed=plan.seed,
        cell_fingerprint=plan.cell_fingerprint,
    )


def estimate_cycle(
    plan: Plan,
    arm: ArmModel,
    dwell_s: float = DEFAULT_DWELL_S,
    base_move_s: float = DEFAULT_BASE_MOVE_S,
) -> float:
    """Joint-move time from home through every aim, plus dwells and base moves."""
    if dwell_s < 0 or base_move_s < 0:
        raise ValueError("dwell and base-move times must be non-negative")
    if not plan.solutions:
        return 0.0
    speeds = arm.joint_speeds
    total = 0.0
    prev = np.zeros(6)
    for sol in plan.solutions:
        total += joint_move_duration(prev, sol.q, speeds)
        prev = sol.q
    total += dwell_s * len(plan.solutions)
    active_stations = {s.station_id for s in plan.solutions}
    total += base_move_s * max(0, len(active_stations) - 1)
    return total


def _nearest_fixture_set(cell: Workcell, pose: RigidTransform) -> str:
    best, best_d = "all", math.inf
    for name, members in cell.fixture_sets.items():
        pts = np.array([cell.fixtures[m] for m in members])
        d = float(np.linalg.norm(pts.mean(axis=0) - pose.translation))
        if d < best_d:
            best, best_d = name, d
    return best


def make_plan(
    cell: Workcell,
    arm: ArmModel,
    rig: LaserRig,
    seed: int = 1,
    *,
    device_index: int = 0,
    dwell_s: float = DEFAULT_DWELL_S,
    base_move_s: float = DEFAULT_BASE_MOVE_S,
) -> Plan:
    """Full pipeline: choose stations, solve every aim, order, estimate."""
    device = rig.devices[device_index]
    chosen, assignment, uncovered = assign_stations(cell, arm, rig)
    stations: list[Station] = []
    index_to_station: dict[int, Station] = {}
    for sid, cand in enumerate(chosen):
        spec = cell.stations[cand]
        st = Station(
            id=sid,
            candidate_index=cand,
            spec=spec,
            localization_set=_nearest_fixture_set(cell, spec.pose),
        )
        stations.append(st)
        index_to_station[cand] = st

    # FIFO by target declaration order keeps planning deterministic
    solutions: list[AimSolution] = []
    failed: list[str] = list(uncovered)
    cover_cache: dict[tuple[int, str], bool] = {}
    for t_index, target in enumerate(cell.targets):
        if target.id not in assignment:
            continue
        rng = np.random.default_rng([seed, t_index])
        candidates = [index_to_station[assignment[target.id]]]
        for st in stations:
            if st.candidate_index == assignment[target.id]:
                continue
            key = (st.candidate_index, target.id)
            if key not in cover_cache:
                cover_cache[key] = coverage_filter(cell, st.base_pose, target, arm, rig)
            if cover_cache[key]:
                candidates.append(st)
        solved = None
        for st in candidates:
            try:
                solved = solve_aim(
                    cell,
                    st.base_pose,
                    target,
                    arm,
                    device,
                    rng,
                    station_id=st.id,
                    device_index=device_index,
                )
                break
            except NoSolutionError:
                continue
        if solved is None:
            failed.append(target.id)
        else:
            solutions.append(solved)

    live = [st for st in stations if any(s.station_id == st.id for s in solutions)]
    plan = Plan(
        stations=live,
        solutions=solutions,
        uncovered=failed,
        estimated_cycle_s=0.0,
        seed=seed,
        cell_fingerprint=cell_fingerprint(cell),
    )
    plan = order_tasks(plan, cell)
    plan.estimated_cycle_s = estimate_cycle(plan, arm, dwell_s, base_move_s)
    return plan


# ---------------------------------------------------------------------------
# Plan file (YAML, version 1)

def save_plan(plan: Plan) -> str:
    doc = {
        "version": 1,
        "seed": int(plan.seed),
        "cell_fingerprint": plan.cell_fingerprint,
        "estimated_cycle_s": float(plan.estimated_cycle_s),
        "stations": [
            {
                "id": int(s.id),
                "candidate_index": int(s.candidate_index),
                "xy_m": [float(s.spec.x), float(s.spec.y)],
                "yaw_deg": float(s.spec.yaw_deg),
                "localization_set": s.localization_set,
                "targets": list(s.assigned_targets),
            }
            for s in plan.stations
        ],
        "uncovered": list(plan.uncovered),
        "solutions": [
            {
                "target": s.target_id,
                "station": int(s.station_id),
                "device": int(s.device_index),
                "q_rad": [float(x) for x in s.q],
                "predicted": {
                    "point_m": [float(x) for x in s.predicted.point],
                    "direction": [float(x) for x in s.predicted.direction],
                    "range_m": float(s.predicted.range),
                },
                "pos_err_m": float(s.pos_err),
                "ang_err_rad": float(s.ang_err),
            }
            for s in plan.solutions
        ],
    }
    return yaml.safe_dump(doc, sort_keys=False)


def load_plan(text: str) -> Plan:
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ValueError(f"plan file is not valid YAML: {exc}") from exc
    if not isinstance(doc, dict) or doc.get("version") != 1:
        raise ValueError("plan file must be a mapping with 'version: 1'")
    stations = [
        Station(
            id=int(s["id"]),
            candidate_index=int(s.get("candidate_index", -1)),
            spec=StationSpec(
                x=float(s["xy_m"][0]), y=float(s["xy_m"][1]), yaw_deg=float(s["yaw_deg"])
            ),
            assigned_targets=[str(t) for t in s.get("targets", [])],
            localization_set=str(s.get("localization_set", "all")),
        )
        for s in doc.get("stations", [])
    ]
    solutions = [
        AimSolution(
            target_id=str(s["target"]),
            station_id=int(s["station"]),
            device_index=int(s.get("device", 0)),
            q=np.asarray(s["q_rad"], dtype=float),
            predicted=ProjectedMark(
                point=np.asarray(s["predicted"]["point_m"], dtype=float),
                direction=np.asarray(s["predicted"]["direction"], dtype=float),
                range=float(s["predicted"]["range_m"]),
            ),
            pos_err=float(s["pos_err_m"]),
            ang_err=float(s["ang_err_rad"]),
        )
        for s in doc.get("solutions", [])
    ]
    return Plan(
        stations=stations,
        solutions=solutions,
        uncovered=[str(t) for t in doc.get("uncovered", [])],
        estimated_cycle_s=float(doc.get("estimated_cycle_s", 0.0)),
        seed=int(doc.get("seed", 0)),
        cell_fingerprint=str(doc.get("cell_fingerprint", "")),
    )
