"""Dropout-protection module: state machine and scenario simulator.

Behavioral contract of the protection module: while communications hold,
the remote operations centre drives (REMOTE); during a communications
loss the vessel continues the mission (AUTO) unless the detector reports
a contact at or above threshold, in which case the vessel stops and
holds position (LOITER) until communications are restored.

The simulator renders camera frames from the scenario geometry, injects
any attack artifact (patch compositing or frame substitution) strictly
before the detector query, steps the state machine, and integrates
straight-line kinematics at a fixed 1 s tick.
"""

from __future__ import annotations

import base64
import json
import math
from dataclasses import dataclass

import numpy as np

from .canonical import sha256_hex
from .dataset import SceneSpec, generate_synthetic_scene
from .errors import OracleError, ScenarioError
from .imagery import Image, decode_ppm, encode_ppm
from .poison import BackdoorSpec, composite_trigger
from .toydet import DetectionSet

MODE_REMOTE = "REMOTE"
MODE_AUTO = "AUTO"
MODE_LOITER = "LOITER"
COMMS_OK = "OK"
COMMS_LOST = "LOST"

TICK_SECONDS = 1.0
SCENARIO_VERSION = 1


@dataclass(frozen=True)
class DpmState:
    mode: str = MODE_REMOTE
    comms: str = COMMS_OK
    contact_count: int = 0
    top_confidence: float = 0.0


def step(
    state: DpmState,
    comms: str,
    detections: DetectionSet,
    contact_classes: tuple[int, ...] | None = None,
) -> DpmState:
    """Pure mode transition.

    ``contact_classes`` restricts which detection classes count as
    contacts (None reacts to every detection, the default contract).
    """
    if comms not in (COMMS_OK, COMMS_LOST):
        raise ScenarioError(f"comms event must be OK or LOST, got {comms!r}")
    contacts = [
        d for d in detections if contact_classes is None or d.class_id in contact_classes
    ]
    if comms == COMMS_OK:
        mode = MODE_REMOTE
    elif contacts:
        mode = MODE_LOITER
    else:
        mode = MODE_AUTO
    top = max((d.confidence for d in contacts), default=0.0)
    return DpmState(mode=mode, comms=comms, contact_count=len(contacts), top_confidence=top)


# --------------------------------------------------------------------------
# Scenarios.

@dataclass(frozen=True)
class ObstacleTrack:
    x: float
    y: float
    heading_deg: float = 0.0
    speed: float = 0.0

    def position(self, t: float) -> tuple[float, float]:
        rad = math.radians(self.heading_deg)
        return (self.x + self.speed * t * math.cos(rad), self.y + self.speed * t * math.sin(rad))


@dataclass(frozen=True)
class Scenario:
    seed: int
    comms: tuple[str, ...]  # one event per tick, strictly ordered timeline
    own_position: tuple[float, float] = (0.0, 0.0)
    own_heading_deg: float = 0.0
    own_speed: float = 5.0
    obstacles: tuple[ObstacleTrack, ...] = ()
    view_range: float = 100.0
    collision_radius: float = 5.0
    frame_size: int = 64
    attack: BackdoorSpec | None = None
    frame_overrides: tuple[tuple[int, Image], ...] = ()
    contact_classes: tuple[int, ...] | None = None

    def __post_init__(self) -> None:
        if not self.comms:
            raise ScenarioError("scenario needs at least one tick")
        for event in self.comms:
            if event not in (COMMS_OK, COMMS_LOST):
                raise ScenarioError(f"bad comms event {event!r}")
        values = [
            *self.own_position, self.own_heading_deg, self.own_speed,
            self.view_range, self.collision_radius,
        ]
        if not all(math.isfinite(v) for v in values):
            raise ScenarioError("scenario kinematics must be finite")

    @property
    def ticks(self) -> int:
        return len(self.comms)


@dataclass(frozen=True)
class TickRecord:
    tick: int
    mode: str
    comms: str
    contacts: int
    min_distance: float
    frame_digest: str
    own_x: float
    own_y: float


@dataclass(frozen=True)
class ScenarioLog:
    records: tuple[TickRecord, ...]
    outcome: str  # completed | loitered | collided | error
    query_count: int
    collision_radius: float
    error: str | None = None


def compute_outcome(records, collision_radius: float, final_mode: str | None = None) -> str:
    """Outcome as a pure function of the logged distance trace."""
    if any(r.min_distance < collision_radius for r in records):
        return "collided"
    mode = final_mode if final_mode is not None else (records[-1].mode if records else MODE_REMOTE)
    return "loitered" if mode == MODE_LOITER else "completed"


def _scene_rngs(seed: int, label: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence((seed, label)))


def _render_views(scenario: Scenario) -> tuple[Image, Image]:
    """The two camera views: empty sea, and the obstacle contact in view.

    One physical contact looks the same from tick to tick, so the views
    are rendered once per scenario from its seed.
    """
    size = scenario.frame_size
    empty, _ = generate_synthetic_scene(
        SceneSpec(width=size, height=size, vessels=0, buoys=0), seed=scenario.seed * 2 + 1
    )
    contact, annotations = generate_synthetic_scene(
        SceneSpec(width=size, height=size, vessels=1, buoys=0), seed=scenario.seed * 2
    )
    if scenario.attack is not None:
        contact, _ = composite_trigger(
            contact, scenario.attack, _scene_rngs(scenario.seed, 0xA7), annotations
        )
    return empty, contact


def run_scenario(scenario: Scenario, oracle) -> ScenarioLog:
    """Simulate the timeline against a detector oracle.

    Per tick: compute geometry, pick or render the frame (attack artifact
    already composited, i.e. strictly before the query), query the
    detector, step the protection module, then integrate motion for one
    tick. REMOTE follows the scripted track; AUTO continues the mission
    track; LOITER holds position.
    """
    empty_view, contact_view = _render_views(scenario)
    overrides = dict(scenario.frame_overrides)
    own_x, own_y = scenario.own_position
    heading = math.radians(scenario.own_heading_deg)
    state = DpmState()
    records: list[TickRecord] = []
    queries_before = oracle.query_count
    error = None
    for t in range(scenario.ticks):
        positions = [ob.position(t) for ob in scenario.obstacles]
        min_distance = min(
            (math.hypot(px - own_x, py - own_y) for px, py in positions),
            default=math.inf,
        )
        if t in overrides:
            frame = overrides[t]
        else:
            frame = contact_view if min_distance <= scenario.view_range else empty_view
        digest = sha256_hex(encode_ppm(frame))
        try:
            detections = oracle.detect(frame)
        except OracleError as exc:
            error = str(exc)
            break
        state = step(state, scenario.comms[t], detections, scenario.contact_classes)
        records.append(
            TickRecord(
                tick=t,
                mode=state.mode,
                comms=state.comms,
                contacts=state.contact_count,
                min_distance=min_distance,
                frame_digest=digest,
                own_x=own_x,
                own_y=own_y,
            )
        )
        if state.mode in (MODE_REMOTE, MODE_AUTO):
            own_x += scenario.own_speed * TICK_SECONDS * math.cos(heading)
            own_y += scenario.own_speed * TICK_SECONDS * math.sin(heading)
    outcome = (
        "error"
        if error is not None
        else compute_outcome(records, scenario.collision_radius, state.mode)
    )
    return ScenarioLog(
        records=tuple(records),
        outcome=outcome,
        query_count=oracle.query_count - queries_before,
        collision_radius=scenario.collision_radius,
        error=error,
    )


# --------------------------------------------------------------------------
# Calibration scenario: head-on approach to a stationary contact.

# Pinned calibration seed: with the pinned training seeds, the benign run
# loiters and the triggered run collides.
CALIBRATION_SCENARIO_SEED = 2025

# Physical patch "printed large": opaque, at the top of the trained scale
# range, worn on the contact.
def field_trigger_spec(trigger: Image | None = None) -> BackdoorSpec:
    return BackdoorSpec(
        alpha_range=(0.95, 1.0), scale_range=(0.25, 0.3), placement="on_object",
        trigger=trigger,
    )


def head_on_scenario(
    seed: int = 2024,
    *,
    ticks: int = 30,
    comms_loss_at: int = 3,
    attack: BackdoorSpec | None = None,
    contact_classes: tuple[int, ...] | None = None,
) -> Scenario:
    """Own vessel closes on a stationary contact 120 m ahead at 5 m/s;
    communications drop at ``comms_loss_at`` and never recover."""
    comms = tuple(
        COMMS_OK if t < comms_loss_at else COMMS_LOST for t in range(ticks)
    )
    return Scenario(
        seed=seed,
        comms=comms,
        own_position=(0.0, 0.0),
        own_heading_deg=0.0,
        own_speed=5.0,
        obstacles=(ObstacleTrack(120.0, 0.0),),
        view_range=100.0,
        collision_radius=5.0,
        attack=attack,
        contact_classes=contact_classes,
    )


# --------------------------------------------------------------------------
# Serialization: scenario files and per-tick log records.

def _image_to_b64(image: Image) -> str:
    return base64.b64encode(encode_ppm(image)).decode("ascii")


def _image_from_b64(text: str) -> Image:
    return decode_ppm(base64.b64decode(text))


def scenario_to_json(scenario: Scenario) -> str:
    attack = None
    if scenario.attack is not None:
        spec = scenario.attack
        attack = {
            "target_class": spec.target_class,
            "alpha_range": list(spec.alpha_range),
            "scale_range": list(spec.scale_range),
            "placement": spec.placement,
            "trigger": _image_to_b64(spec.trigger_raster()),
        }
    obj = {
        "version": SCENARIO_VERSION,
        "seed": scenario.seed,
        "comms": list(scenario.comms),
        "own_position": list(scenario.own_position),
        "own_heading_deg": scenario.own_heading_deg,
        "own_speed": scenario.own_speed,
        "obstacles": [
            {"x": ob.x, "y": ob.y, "heading_deg": ob.heading_deg, "speed": ob.speed}
            for ob in scenario.obstacles
        ],
        "view_range": scenario.view_range,
        "collision_radius": scenario.collision_radius,
        "frame_size": scenario.frame_size,
        "attack": attack,
        "frame_overrides": [
            {"tick": t, "frame": _image_to_b64(img)} for t, img in scenario.frame_overrides
        ],
        "contact_classes": (
            list(scenario.contact_classes) if scenario.contact_classes is not None else None
        ),
    }
    return json.dumps(obj, sort_keys=True, separators=(",", ":")) + "\n"


def scenario_from_json(text: str) -> Scenario:
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"scenario file is not valid JSON: {exc}") from exc
    if obj.get("version") != SCENARIO_VERSION:
        raise ScenarioError(f"unsupported scenario version {obj.get('version')!r}")
    attack = None
    if obj.get("attack") is not None:
        a = obj["attack"]
        attack = BackdoorSpec(
            target_class=a["target_class"],
            alpha_range=tuple(a["alpha_range"]),
            scale_range=tuple(a["scale_range"]),
            placement=a["placement"],
            trigger=_image_from_b64(a["trigger"]),
        )
    return Scenario(
        seed=obj["seed"],
        comms=tuple(obj["comms"]),
        own_position=tuple(obj["own_position"]),
        own_heading_deg=obj["own_heading_deg"],
        own_speed=obj["own_speed"],
        obstacles=tuple(
            ObstacleTrack(o["x"], o["y"], o["heading_deg"], o["speed"])
            for o in obj["obstacles"]
        ),
        view_range=obj["view_range"],
        collision_radius=obj["collision_radius"],
        frame_size=obj["frame_size"],
        attack=attack,
        frame_overrides=tuple(
            (o["tick"], _image_from_b64(o["frame"])) for o in obj.get("frame_overrides", [])
        ),
        contact_classes=(
            tuple(obj["contact_classes"]) if obj.get("contact_classes") is not None else None
        ),
    )


def format_scenario_log(log: ScenarioLog) -> str:
    lines = [
        f"TICK t={r.tick} mode={r.mode} comms={r.comms} contacts={r.contacts} "
        f"min_distance={r.min_distance:.3f} own=({r.own_x:.3f},{r.own_y:.3f}) "
        f"frame={r.frame_digest}"
        for r in log.records
    ]
    lines.append(f"OUTCOME {log.outcome}")
    lines.append(f"QUERIES {log.query_count}")
    lines.append(f"RADIUS {log.collision_radius:.3f}")
    if log.error is not None:
        lines.append(f"ERROR {log.error}")
    return "\n".join(lines) + "\n"
