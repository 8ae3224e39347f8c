"""Traffic-scene data model.

A scene holds polyline entities -- agent motion tracks, lane centerlines,
and traffic-light state sequences -- plus per-agent future trajectories.
This module owns the scene dataclasses, invariant validation, frame
transforms (scene-centric and agent-centric), a seeded kinematically
consistent synthetic generator, and a versioned text serialization used
by the corpus tools.

Conventions: positions are meters in a shared x/y frame, yaw is radians
in (-pi, pi], time advances in steps of ``dt`` seconds.  Invalid agent
steps carry all-zero features (validity is tracked separately).
"""

from __future__ import annotations

import dataclasses
import json
import math
from pathlib import Path

import numpy as np

SCENE_FORMAT = "traffic-scene"
SCENE_VERSION = 1
CORPUS_FORMAT = "scene-corpus"
CORPUS_VERSION = 1
MANIFEST_NAME = "manifest.json"

AGENT_CLASSES = ("vehicle", "cyclist", "pedestrian")
LIGHT_STATES = ("green", "yellow", "red")
LANE_CLASSES = ("freeway", "surface_street", "bike_lane", "crosswalk")


class SceneFormatError(ValueError):
    """Base class for serialization problems."""


class VersionMismatchError(SceneFormatError):
    """Payload declares a format version this code does not read."""


class MalformedPayloadError(SceneFormatError):
    """Payload is not valid JSON or is missing/mistyping a field."""


class ShapeMismatchError(SceneFormatError):
    """An array field has a shape inconsistent with its declaration."""


class DataError(Exception):
    """Corpus-level problem: missing manifest, refusing to overwrite, ..."""


@dataclasses.dataclass(frozen=True)
class DatasetDialect:
    """History/future lengths and feature availability of a data source."""

    name: str
    T_past: int
    T_future: int
    has_traffic_lights: bool
    lane_class_count: int = 4

    def __post_init__(self):
        if self.T_past < 2:
            raise ValueError("T_past must be >= 2")
        if self.T_future < 1:
            raise ValueError("T_future must be >= 1")
        if self.lane_class_count < 1:
            raise ValueError("lane_class_count must be >= 1")


DIALECT_W = DatasetDialect("dialect-W", T_past=11, T_future=16, has_traffic_lights=True)
DIALECT_A = DatasetDialect("dialect-A", T_past=8, T_future=12, has_traffic_lights=False)

_DIALECTS = {
    "dialect-W": DIALECT_W,
    "dialect-A": DIALECT_A,
    "W": DIALECT_W,
    "A": DIALECT_A,
}


def get_dialect(name: str) -> DatasetDialect:
    """Look up a built-in dialect by name (accepts 'W'/'A' shorthands)."""
    try:
        return _DIALECTS[name]
    except KeyError:
        raise KeyError(f"unknown dialect {name!r}; known: dialect-W, dialect-A") from None


@dataclasses.dataclass
class AgentTrack:
    """One agent's observed history.

    Arrays are indexed by past step t in [0, T_past).  ``valid[t]`` marks
    whether the agent was observed at step t; invalid steps are all-zero.
    """

    agent_id: int
    class_onehot: np.ndarray  # (3,)
    position: np.ndarray      # (T_past, 2)
    dims: np.ndarray          # (T_past, 3) length, width, height
    accel: np.ndarray         # (T_past, 2)
    vel: np.ndarray           # (T_past, 2)
    yaw: np.ndarray           # (T_past,)
    step_onehot: np.ndarray   # (T_past, T_past)
    valid: np.ndarray         # (T_past,) bool


@dataclasses.dataclass
class LanePolyline:
    lane_id: int
    points: np.ndarray        # (P, 2)
    class_onehot: np.ndarray  # (lane_class_count,)


@dataclasses.dataclass
class TrafficLightSequence:
    light_id: int
    position: np.ndarray      # (2,) stop-point location
    state_onehot: np.ndarray  # (T_past, 3) green/yellow/red
    step_onehot: np.ndarray   # (T_past, T_past)


@dataclasses.dataclass
class TrafficScene:
    scene_id: str
    dialect: DatasetDialect
    dt: float
    agents: list[AgentTrack]
    lanes: list[LanePolyline]
    lights: list[TrafficLightSequence]
    futures: np.ndarray       # (n_agents, T_future, 2)
    future_valid: np.ndarray  # (n_agents, T_future) bool


@dataclasses.dataclass
class AgentCentricView:
    """A scene rigidly transformed so a focal agent's last valid pose is
    the origin facing +x.  ``pose`` maps view-frame points back to the
    source frame: p_scene = R(rotation) @ p_view + translation."""

    scene: TrafficScene
    focal_id: int
    pose_translation: np.ndarray  # (2,)
    pose_rotation: float


def wrap_angle(theta):
    """Wrap radians into (-pi, pi]."""
    out = np.asarray((np.asarray(theta) + np.pi) % (2.0 * np.pi) - np.pi)
    # map -pi to +pi so the interval is half-open on the left
    out = np.where(out == -np.pi, np.pi, out)
    return out if out.ndim else float(out)


def last_valid_index(valid: np.ndarray) -> int | None:
    idx = np.nonzero(np.asarray(valid, dtype=bool))[0]
    return int(idx[-1]) if idx.size else None


# ---------------------------------------------------------------------------
# validation


def _is_onehot(vec: np.ndarray) -> bool:
    v = np.asarray(vec)
    return v.ndim == 1 and np.count_nonzero(v == 1.0) == 1 and np.count_nonzero(v == 0.0) == v.size - 1


def validate_scene(scene: TrafficScene) -> list[str]:
    """Check every scene invariant; return human-readable violations.

    Never raises: a structurally broken scene yields violations instead.
    An empty list means the scene is well-formed.
    """
    v: list[str] = []
    d = scene.dialect
    T, F = d.T_past, d.T_future

    if scene.dt <= 0:
        v.append(f"dt: must be positive, got {scene.dt}")
    if len(scene.agents) < 1:
        v.append("agents: scene must contain at least 1 agent")

    for i, ag in enumerate(scene.agents):
        tag = f"agents[{i}]"
        shapes = {
            "class_onehot": (ag.class_onehot, (3,)),
            "position": (ag.position, (T, 2)),
            "dims": (ag.dims, (T, 3)),
            "accel": (ag.accel, (T, 2)),
            "vel": (ag.vel, (T, 2)),
            "yaw": (ag.yaw, (T,)),
            "step_onehot": (ag.step_onehot, (T, T)),
            "valid": (ag.valid, (T,)),
        }
        bad_shape = False
        for fname, (arr, want) in shapes.items():
            if np.asarray(arr).shape != want:
                v.append(f"{tag}.{fname}: shape {np.asarray(arr).shape} != {want}")
                bad_shape = True
        if bad_shape:
            continue
        if not _is_onehot(ag.class_onehot):
            v.append(f"{tag}.class_onehot: not one-hot")
        for t in range(T):
            row = ag.step_onehot[t]
            if not _is_onehot(row) or int(np.argmax(row)) != t:
                v.append(f"{tag}.step_onehot[{t}]: temporal order broken (1 not at index {t})")
        valid = ag.valid.astype(bool)
        for t in range(T):
            if valid[t] and np.any(ag.dims[t] <= 0):
                v.append(f"{tag}.dims[{t}]: non-positive dimension on valid step")
        # kinematic consistency between consecutive valid steps
        for t in range(T - 1):
            if not (valid[t] and valid[t + 1]):
                continue
            dp = ag.position[t + 1] - ag.position[t] - ag.vel[t] * scene.dt
            if np.max(np.abs(dp)) > 1e-6:
                v.append(f"{tag}: position[{t + 1}]-position[{t}] != vel[{t}]*dt (err {np.max(np.abs(dp)):.2e})")
            dv = ag.vel[t + 1] - ag.vel[t] - ag.accel[t] * scene.dt
            if np.max(np.abs(dv)) > 1e-6:
                v.append(f"{tag}: vel[{t + 1}]-vel[{t}] != accel[{t}]*dt (err {np.max(np.abs(dv)):.2e})")
        for t in range(T):
            if valid[t] and float(np.hypot(*ag.vel[t])) > 0.1:
                want = math.atan2(ag.vel[t][1], ag.vel[t][0])
                err = abs(float(wrap_angle(ag.yaw[t] - want)))
                if err > 1e-6:
                    v.append(f"{tag}.yaw[{t}]: inconsistent with velocity heading (err {err:.2e})")

    for i, lane in enumerate(scene.lanes):
        tag = f"lanes[{i}]"
        pts = np.asarray(lane.points)
        if pts.ndim != 2 or pts.shape[1] != 2 or pts.shape[0] < 2:
            v.append(f"{tag}.points: need at least 2 (x, y) points, got shape {pts.shape}")
        else:
            gaps = np.linalg.norm(np.diff(pts, axis=0), axis=1)
            for j in np.nonzero(gaps <= 1e-6)[0]:
                v.append(f"{tag}.points[{j}]: consecutive points not distinct")
        if np.asarray(lane.class_onehot).shape != (d.lane_class_count,):
            v.append(f"{tag}.class_onehot: shape != ({d.lane_class_count},)")
        elif not _is_onehot(lane.class_onehot):
            v.append(f"{tag}.class_onehot: not one-hot")

    if scene.lights and not d.has_traffic_lights:
        v.append("lights: dialect disables traffic lights but scene has some")
    for i, light in enumerate(scene.lights):
        tag = f"lights[{i}]"
        if np.asarray(light.position).shape != (2,):
            v.append(f"{tag}.position: shape != (2,)")
        if np.asarray(light.state_onehot).shape != (T, 3):
            v.append(f"{tag}.state_onehot: shape != ({T}, 3)")
        else:
            for t in range(T):
                if not _is_onehot(light.state_onehot[t]):
                    v.append(f"{tag}.state_onehot[{t}]: not one-hot")
        if np.asarray(light.step_onehot).shape != (T, T):
            v.append(f"{tag}.step_onehot: shape != ({T}, {T})")
        else:
            for t in range(T):
                row = light.step_onehot[t]
                if not _is_onehot(row) or int(np.argmax(row)) != t:
                    v.append(f"{tag}.step_onehot[{t}]: temporal order broken (1 not at index {t})")

    n_agents = len(scene.agents)
    if np.asarray(scene.futures).shape != (n_agents, F, 2):
        v.append(f"futures: shape {np.asarray(scene.futures).shape} != ({n_agents}, {F}, 2)")
    if np.asarray(scene.future_valid).shape != (n_agents, F):
        v.append(f"future_valid: shape {np.asarray(scene.future_valid).shape} != ({n_agents}, {F})")
    return v


# ---------------------------------------------------------------------------
# frame transforms


def _transform_agent(ag: AgentTrack, rot: float, trans: np.ndarray) -> AgentTrack:
    c, s = math.cos(rot), math.sin(rot)
    R = np.array([[c, -s], [s, c]])
    valid = ag.valid.astype(bool)
    pos = ag.position @ R.T + trans
    vel = ag.vel @ R.T
    acc = ag.accel @ R.T
    yaw = wrap_angle(ag.yaw + rot)
    keep = valid[:, None]
    return AgentTrack(
        agent_id=ag.agent_id,
        class_onehot=ag.class_onehot.copy(),
        position=np.where(keep, pos, 0.0),
        dims=np.where(keep, ag.dims, 0.0),
        accel=np.where(keep, acc, 0.0),
        vel=np.where(keep, vel, 0.0),
        yaw=np.where(valid, yaw, 0.0),
        step_onehot=ag.step_onehot.copy(),
        valid=valid.copy(),
    )


def transform_scene(scene: TrafficScene, rotation: float, translation) -> TrafficScene:
    """Rigidly map every coordinate: p' = R(rotation) @ p + translation.

    Velocity/acceleration vectors rotate without translating; yaw shifts by
    the rotation.  Invalid agent steps stay all-zero.
    """
    trans = np.asarray(translation, dtype=float)
    c, s = math.cos(rotation), math.sin(rotation)
    R = np.array([[c, -s], [s, c]])
    agents = [_transform_agent(a, rotation, trans) for a in scene.agents]
    lanes = [
        LanePolyline(l.lane_id, l.points @ R.T + trans, l.class_onehot.copy())
        for l in scene.lanes
    ]
    lights = [
        TrafficLightSequence(tl.light_id, R @ tl.position + trans,
                             tl.state_onehot.copy(), tl.step_onehot.copy())
        for tl in scene.lights
    ]
    fut = scene.futures @ R.T + trans
    fut = np.where(scene.future_valid[:, :, None], fut, 0.0)
    return TrafficScene(scene.scene_id, scene.dialect, scene.dt, agents, lanes,
                        lights, fut, scene.future_valid.copy())


def to_scene_centric(scene: TrafficScene) -> TrafficScene:
    """Translate so the centroid of agents' last valid positions is the origin."""
    lasts = []
    for ag in scene.agents:
        t = last_valid_index(ag.valid)
        if t is not None:
            lasts.append(ag.position[t])
    if not lasts:
        raise ValueError("scene has zero valid agent steps; cannot recenter")
    centroid = np.mean(np.asarray(lasts), axis=0)
    return transform_scene(scene, 0.0, -centroid)


def to_agent_centric_views(scene: TrafficScene, focal_ids: list[int]) -> list[AgentCentricView]:
    """One rigidly transformed copy of the scene per focal agent.

    In each view the focal agent's last valid position is the origin and its
    last valid yaw points along +x.
    """
    by_id = {ag.agent_id: ag for ag in scene.agents}
    views = []
    for fid in focal_ids:
        if fid not in by_id:
            raise ValueError(f"unknown focal agent id {fid}")
        ag = by_id[fid]
        t = last_valid_index(ag.valid)
        if t is None:
            raise ValueError(f"focal agent {fid} has no valid step")
        p0 = ag.position[t].astype(float)
        psi = float(ag.yaw[t])
        # p_view = R(-psi) @ (p - p0)
        c, s = math.cos(-psi), math.sin(-psi)
        R = np.array([[c, -s], [s, c]])
        transformed = transform_scene(scene, -psi, -(R @ p0))
        views.append(AgentCentricView(
            scene=transformed, focal_id=fid,
            pose_translation=p0.copy(), pose_rotation=psi,
        ))
    return views


def view_to_scene_points(view: AgentCentricView, points: np.ndarray) -> np.ndarray:
    """Map view-frame points (..., 2) back into the source scene frame."""
    c, s = math.cos(view.pose_rotation), math.sin(view.pose_rotation)
    R = np.array([[c, -s], [s, c]])
    return np.asarray(points) @ R.T + view.pose_translation


# ---------------------------------------------------------------------------
# synthetic generation


def _lane_point(start, heading, curvature, s):
    """Point(s) at arc length ``s`` along a straight or constant-curvature path."""
    s = np.asarray(s, dtype=float)
    if abs(curvature) < 1e-12:
        d = np.stack([np.cos(heading) * s, np.sin(heading) * s], axis=-1)
    else:
        k = curvature
        d = np.stack([
            (np.sin(heading + k * s) - np.sin(heading)) / k,
            (np.cos(heading) - np.cos(heading + k * s)) / k,
        ], axis=-1)
    return np.asarray(start, dtype=float) + d


def _lane_normal(heading, curvature, s):
    h = heading + curvature * np.asarray(s, dtype=float)
    return np.stack([-np.sin(h), np.cos(h)], axis=-1)


_CLASS_DIMS = {
    # (length range, width range, height range) per agent class
    0: ((4.0, 5.5), (1.8, 2.2), (1.4, 2.0)),   # vehicle
    1: ((1.6, 2.0), (0.5, 0.8), (1.4, 1.8)),   # cyclist
    2: ((0.4, 0.7), (0.4, 0.7), (1.5, 1.9)),   # pedestrian
}


def generate_synthetic_scene(seed: int, dialect: DatasetDialect,
                             counts: tuple[int, int, int],
                             lane_points: int = 10) -> TrafficScene:
    """Deterministically generate one kinematically consistent scene.

    Lanes are straight segments or constant-curvature arcs.  Each agent
    follows a lane (with a fixed lateral offset) under a smooth sinusoidal
    speed profile; velocities and accelerations are the exact finite
    differences of the generated positions, so the AgentTrack kinematic
    invariants hold by construction and the futures continue the same
    motion.  Traffic lights sit at lane endpoints and cycle green ->
    yellow -> red; agents approaching a red light brake to a crawl
    (bounded acceleration) and pull away again on green, so the future
    of a light-lane agent depends on the light's phase, not just on the
    agent's own history.

    Args:
        seed: generation seed; output is a pure function of
            (seed, dialect, counts, lane_points).
        dialect: dataset dialect (controls T_past/T_future/lights).
        counts: (n_agents, n_lanes, n_lights); n_lights is ignored when the
            dialect has no traffic lights.
        lane_points: points per lane polyline.

    Returns:
        A TrafficScene that passes validate_scene.
    """
    n_agents, n_lanes, n_lights = counts
    if n_agents < 1 or n_lanes < 1 or n_lights < 0:
        raise ValueError(f"counts must be >= (1, 1, 0), got {counts}")
    if lane_points < 2:
        raise ValueError("lane_points must be >= 2")
    T, F = dialect.T_past, dialect.T_future
    dt = 0.1
    rng = np.random.default_rng([
        int(seed), T, F, int(dialect.has_traffic_lights),
        dialect.lane_class_count, n_agents, n_lanes, n_lights, lane_points,
    ])

    lanes = []
    lane_geom = []
    for lane_id in range(n_lanes):
        start = rng.uniform(-60.0, 60.0, size=2)
        heading = rng.uniform(-math.pi, math.pi)
        if rng.random() < 0.5:
            curvature = 0.0
        else:
            curvature = float(rng.uniform(0.004, 0.02)) * (1 if rng.random() < 0.5 else -1)
        length = float(rng.uniform(60.0, 120.0))
        cls = int(rng.integers(dialect.lane_class_count))
        onehot = np.zeros(dialect.lane_class_count)
        onehot[cls] = 1.0
        pts = _lane_point(start, heading, curvature, np.linspace(0.0, length, lane_points))
        lanes.append(LanePolyline(lane_id, pts, onehot))
        lane_geom.append((start, heading, curvature, length))

    # light phase programs first: agents on a light's lane react to it
    light_specs = []
    light_by_lane: dict[int, tuple[np.ndarray, int, int]] = {}
    if dialect.has_traffic_lights:
        for _ in range(n_lights):
            lane_idx = int(rng.integers(n_lanes))
            durations = [int(rng.integers(3, 7)), int(rng.integers(1, 3)),
                         int(rng.integers(3, 7))]
            bounds = np.cumsum(durations)
            offset_steps = int(rng.integers(bounds[-1]))
            light_specs.append((lane_idx, bounds, offset_steps))
            light_by_lane.setdefault(lane_idx, (bounds, int(bounds[-1]), offset_steps))

    steps = T + F  # positions needed; +1 reachable because F >= 2 for velocity/accel chains
    eye_T = np.eye(T)
    agents = []
    futures = np.zeros((n_agents, F, 2))
    future_valid = np.ones((n_agents, F), dtype=bool)
    for agent_id in range(n_agents):
        lane_idx = int(rng.integers(n_lanes))
        start, heading, curvature, length = lane_geom[lane_idx]
        cls = int(rng.choice(3, p=[0.7, 0.15, 0.15]))
        class_onehot = np.zeros(3)
        class_onehot[cls] = 1.0
        (lr, wr, hr) = _CLASS_DIMS[cls]
        dims_row = np.array([rng.uniform(*lr), rng.uniform(*wr), rng.uniform(*hr)])
        offset = float(rng.uniform(-1.5, 1.5))

        v0 = float(rng.uniform(2.0, 12.0)) * (0.3 if cls == 2 else 1.0)
        amp = float(rng.uniform(0.0, 0.3)) * v0
        omega = float(rng.uniform(0.2, 1.5))
        phase = float(rng.uniform(0.0, 2.0 * math.pi))
        light = light_by_lane.get(lane_idx)
        if light is None:
            s0 = float(rng.uniform(0.1, 0.5)) * length
        else:
            # start on approach so the light phase governs the episode
            s0 = max(0.05 * length, length - float(rng.uniform(8.0, 45.0)))

        k = np.arange(steps + 1)
        speeds = v0 + amp * np.sin(omega * k * dt + phase)
        if light is not None:
            bounds, cycle, offset_steps = light
            v = np.empty(steps + 1)
            s_cur, v_cur = s0, float(speeds[0])
            for j in range(steps + 1):
                red = int(np.searchsorted(bounds, (j + offset_steps) % cycle,
                                          side="right")) == 2
                target = 0.05 if red and 0.0 < length - s_cur < 18.0 else float(speeds[j])
                v_cur += float(np.clip(target - v_cur, -6.0 * dt, 6.0 * dt))
                v[j] = v_cur
                s_cur += v_cur * dt
            speeds = v
        s_path = s0 + np.concatenate([[0.0], np.cumsum(speeds[:-1] * dt)])
        pos = (_lane_point(start, heading, curvature, s_path)
               + offset * _lane_normal(heading, curvature, s_path))
        vel = np.diff(pos, axis=0) / dt                  # steps values
        acc = np.diff(vel, axis=0) / dt                  # steps - 1 values
        yaw = np.arctan2(vel[:, 1], vel[:, 0])

        valid = np.ones(T, dtype=bool)
        if rng.random() < 0.3:
            valid[: int(rng.integers(1, T - 1))] = False
        keep = valid[:, None]
        agents.append(AgentTrack(
            agent_id=agent_id,
            class_onehot=class_onehot,
            position=np.where(keep, pos[:T], 0.0),
            dims=np.where(keep, np.tile(dims_row, (T, 1)), 0.0),
            accel=np.where(keep, acc[:T], 0.0),
            vel=np.where(keep, vel[:T], 0.0),
            yaw=np.where(valid, yaw[:T], 0.0),
            step_onehot=eye_T.copy(),
            valid=valid,
        ))
        fv = np.ones(F, dtype=bool)
        if rng.random() < 0.2:
            fv[F - int(rng.integers(1, F)):] = False
        futures[agent_id] = np.where(fv[:, None], pos[T:T + F], 0.0)
        future_valid[agent_id] = fv

    lights = []
    if dialect.has_traffic_lights:
        eye3 = np.eye(3)
        for light_id, (lane_idx, bounds, offset_steps) in enumerate(light_specs):
            cycle = int(bounds[-1])
            state = np.zeros((T, 3))
            for t in range(T):
                phase_t = (t + offset_steps) % cycle
                state[t] = eye3[int(np.searchsorted(bounds, phase_t, side="right"))]
            lights.append(TrafficLightSequence(
                light_id=light_id,
                position=lanes[lane_idx].points[-1].copy(),
                state_onehot=state,
                step_onehot=eye_T.copy(),
            ))

    return TrafficScene(
        scene_id=f"scene-{dialect.name}-{int(seed):08d}",
        dialect=dialect, dt=dt, agents=agents, lanes=lanes, lights=lights,
        futures=futures, future_valid=future_valid,
    )


# ---------------------------------------------------------------------------
# serialization (versioned, self-describing text schema)


def _arr(a, dtype_name):
    a = np.asarray(a)
    return {"dtype": dtype_name, "shape": list(a.shape), "data": a.reshape(-1).tolist()}


_DTYPES = {"float": np.float64, "int": np.int64, "bool": np.bool_}


def serialize_scene(scene: TrafficScene) -> bytes:
    """Encode a scene as canonical (sorted-key, compact) JSON bytes.

    Floats are written with shortest round-tripping decimal repr, so
    serialize -> deserialize -> serialize is byte-identical.
    """
    d = scene.dialect
    payload = {
        "format": SCENE_FORMAT,
        "version": SCENE_VERSION,
        "scene_id": scene.scene_id,
        "dt": float(scene.dt),
        "dialect": {
            "name": d.name, "t_past": d.T_past, "t_future": d.T_future,
            "has_traffic_lights": d.has_traffic_lights,
            "lane_class_count": d.lane_class_count,
        },
        "agents": [
            {
                "agent_id": int(a.agent_id),
                "class_onehot": _arr(a.class_onehot, "float"),
                "position": _arr(a.position, "float"),
                "dims": _arr(a.dims, "float"),
                "accel": _arr(a.accel, "float"),
                "vel": _arr(a.vel, "float"),
                "yaw": _arr(a.yaw, "float"),
                "step_onehot": _arr(a.step_onehot, "float"),
                "valid": _arr(a.valid, "bool"),
            }
            for a in scene.agents
        ],
        "lanes": [
            {
                "lane_id": int(l.lane_id),
                "points": _arr(l.points, "float"),
                "class_onehot": _arr(l.class_onehot, "float"),
            }
            for l in scene.lanes
        ],
        "lights": [
            {
                "light_id": int(t.light_id),
                "position": _arr(t.position, "float"),
                "state_onehot": _arr(t.state_onehot, "float"),
                "step_onehot": _arr(t.step_onehot, "float"),
            }
            for t in scene.lights
        ],
        "futures": _arr(scene.futures, "float"),
        "future_valid": _arr(scene.future_valid, "bool"),
    }
    return json.dumps(payload, sort_keys=True, separators=(",", ":")).encode("utf-8")


def _read_arr(obj, field, expect_shape=None):
    if not isinstance(obj, dict) or not {"dtype", "shape", "data"} <= set(obj):
        raise MalformedPayloadError(f"{field}: not an array object")
    if obj["dtype"] not in _DTYPES:
        raise MalformedPayloadError(f"{field}: unknown dtype {obj['dtype']!r}")
    shape = tuple(obj["shape"])
    data = obj["data"]
    if not isinstance(data, list):
        raise MalformedPayloadError(f"{field}: data is not a list")
    n = 1
    for s in shape:
        n *= int(s)
    if len(data) != n:
        raise ShapeMismatchError(f"{field}: {len(data)} values for shape {shape}")
    arr = np.asarray(data, dtype=_DTYPES[obj["dtype"]]).reshape(shape)
    if expect_shape is not None and shape != tuple(expect_shape):
        raise ShapeMismatchError(f"{field}: shape {shape} != expected {tuple(expect_shape)}")
    return arr


def _get(obj, key, field):
    try:
        return obj[key]
    except (KeyError, TypeError):
        raise MalformedPayloadError(f"missing field {field!r}") from None


def deserialize_scene(data: bytes) -> TrafficScene:
    """Decode bytes from :func:`serialize_scene`; strict about shape/version."""
    try:
        payload = json.loads(data.decode("utf-8") if isinstance(data, (bytes, bytearray)) else data)
    except (ValueError, UnicodeDecodeError) as e:
        raise MalformedPayloadError(f"payload is not valid JSON: {e}") from None
    if not isinstance(payload, dict):
        raise MalformedPayloadError("top-level payload must be an object")
    if _get(payload, "format", "format") != SCENE_FORMAT:
        raise MalformedPayloadError(f"format {payload.get('format')!r} is not {SCENE_FORMAT!r}")
    version = _get(payload, "version", "version")
    if version != SCENE_VERSION:
        raise VersionMismatchError(f"scene format version {version!r}; this code reads {SCENE_VERSION}")

    dd = _get(payload, "dialect", "dialect")
    try:
        dialect = DatasetDialect(
            name=str(_get(dd, "name", "dialect.name")),
            T_past=int(_get(dd, "t_past", "dialect.t_past")),
            T_future=int(_get(dd, "t_future", "dialect.t_future")),
            has_traffic_lights=bool(_get(dd, "has_traffic_lights", "dialect.has_traffic_lights")),
            lane_class_count=int(_get(dd, "lane_class_count", "dialect.lane_class_count")),
        )
    except ValueError as e:
        raise MalformedPayloadError(f"dialect: {e}") from None
    T = dialect.T_past

    agents = []
    for i, a in enumerate(_get(payload, "agents", "agents")):
        tag = f"agents[{i}]"
        agents.append(AgentTrack(
            agent_id=int(_get(a, "agent_id", f"{tag}.agent_id")),
            class_onehot=_read_arr(_get(a, "class_onehot", f"{tag}.class_onehot"), f"{tag}.class_onehot", (3,)),
            position=_read_arr(_get(a, "position", f"{tag}.position"), f"{tag}.position", (T, 2)),
            dims=_read_arr(_get(a, "dims", f"{tag}.dims"), f"{tag}.dims", (T, 3)),
            accel=_read_arr(_get(a, "accel", f"{tag}.accel"), f"{tag}.accel", (T, 2)),
            vel=_read_arr(_get(a, "vel", f"{tag}.vel"), f"{tag}.vel", (T, 2)),
            yaw=_read_arr(_get(a, "yaw", f"{tag}.yaw"), f"{tag}.yaw", (T,)),
            step_onehot=_read_arr(_get(a, "step_onehot", f"{tag}.step_onehot"), f"{tag}.step_onehot", (T, T)),
            valid=_read_arr(_get(a, "valid", f"{tag}.valid"), f"{tag}.valid", (T,)),
        ))
    lanes = []
    for i, l in enumerate(_get(payload, "lanes", "lanes")):
        tag = f"lanes[{i}]"
        pts = _read_arr(_get(l, "points", f"{tag}.points"), f"{tag}.points")
        if pts.ndim != 2 or pts.shape[1] != 2:
            raise ShapeMismatchError(f"{tag}.points: shape {pts.shape} is not (P, 2)")
        lanes.append(LanePolyline(
            lane_id=int(_get(l, "lane_id", f"{tag}.lane_id")),
            points=pts,
            class_onehot=_read_arr(_get(l, "class_onehot", f"{tag}.class_onehot"),
                                   f"{tag}.class_onehot", (dialect.lane_class_count,)),
        ))
    lights = []
    for i, t in enumerate(_get(payload, "lights", "lights")):
        tag = f"lights[{i}]"
        lights.append(TrafficLightSequence(
            light_id=int(_get(t, "light_id", f"{tag}.light_id")),
            position=_read_arr(_get(t, "position", f"{tag}.position"), f"{tag}.position", (2,)),
            state_onehot=_read_arr(_get(t, "state_onehot", f"{tag}.state_onehot"), f"{tag}.state_onehot", (T, 3)),
            step_onehot=_read_arr(_get(t, "step_onehot", f"{tag}.step_onehot"), f"{tag}.step_onehot", (T, T)),
        ))

    n_agents = len(agents)
    futures = _read_arr(_get(payload, "futures", "futures"), "futures",
                        (n_agents, dialect.T_future, 2))
    future_valid = _read_arr(_get(payload, "future_valid", "future_valid"), "future_valid",
                             (n_agents, dialect.T_future))
    return TrafficScene(
        scene_id=str(_get(payload, "scene_id", "scene_id")),
        dialect=dialect,
        dt=float(_get(payload, "dt", "dt")),
        agents=agents, lanes=lanes, lights=lights,
        futures=futures, future_valid=future_valid,
    )


# ---------------------------------------------------------------------------
# corpus directories


def generate_corpus(out_dir, dialect: DatasetDialect, n_scenes: int, base_seed: int,
                    counts: tuple[int, int, int], lane_points: int = 10,
                    overwrite: bool = False) -> dict:
    """Write ``n_scenes`` generated scenes plus a manifest into ``out_dir``.

    Scene i uses seed ``base_seed + i``.  Rerunning with identical arguments
    reproduces every byte.  Refuses to touch an existing corpus unless
    ``overwrite`` is set.
    """
    out = Path(out_dir)
    manifest_path = out / MANIFEST_NAME
    if manifest_path.exists() and not overwrite:
        raise DataError(f"corpus already exists at {out} (pass overwrite to replace)")
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    for i in range(n_scenes):
        seed = base_seed + i
        scene = generate_synthetic_scene(seed, dialect, counts, lane_points)
        fname = f"scene-{i:05d}.json"
        (out / fname).write_bytes(serialize_scene(scene))
        entries.append({"scene_id": scene.scene_id, "file": fname, "seed": seed})
    manifest = {
        "format": CORPUS_FORMAT,
        "version": CORPUS_VERSION,
        "dialect": {
            "name": dialect.name, "t_past": dialect.T_past, "t_future": dialect.T_future,
            "has_traffic_lights": dialect.has_traffic_lights,
            "lane_class_count": dialect.lane_class_count,
        },
        "base_seed": base_seed,
        "counts": {"agents": counts[0], "lanes": counts[1], "lights": counts[2]},
        "lane_points": lane_points,
        "scenes": entries,
    }
    manifest_path.write_bytes(json.dumps(manifest, sort_keys=True, indent=1).encode("utf-8"))
    return manifest


def read_manifest(corpus_dir) -> dict:
    path = Path(corpus_dir) / MANIFEST_NAME
    if not path.exists():
        raise DataError(f"no corpus manifest at {path}")
    try:
        manifest = json.loads(path.read_text())
    except ValueError as e:
        raise DataError(f"unreadable manifest {path}: {e}") from None
    if manifest.get("format") != CORPUS_FORMAT:
        raise DataError(f"{path} is not a scene-corpus manifest")
    if manifest.get("version") != CORPUS_VERSION:
        raise DataError(f"unsupported corpus version {manifest.get('version')!r}")
    return manifest


def corpus_dialect(manifest: dict) -> DatasetDialect:
    dd = manifest["dialect"]
    return DatasetDialect(dd["name"], dd["t_past"], dd["t_future"],
                          dd["has_traffic_lights"], dd["lane_class_count"])


def read_corpus(corpus_dir) -> tuple[list[TrafficScene], dict]:
    """Load every scene listed in the corpus manifest (in manifest order)."""
    manifest = read_manifest(corpus_dir)
    dialect = corpus_dialect(manifest)
    scenes = []
    for entry in manifest["scenes"]:
        path = Path(corpus_dir) / entry["file"]
        if not path.exists():
            raise DataError(f"manifest lists missing scene file {path}")
        scene = deserialize_scene(path.read_bytes())
        if scene.dialect != dialect:
            raise DataError(f"{path}: scene dialect {scene.dialect.name} does not match "
                            f"corpus dialect {dialect.name}")
        scenes.append(scene)
    if not scenes:
        raise DataError(f"corpus at {corpus_dir} is empty")
    return scenes, manifest
