import math

import pytest

from redtide.canonical import sha256_hex
from redtide.dpm import (
    CALIBRATION_SCENARIO_SEED,
    COMMS_LOST,
    COMMS_OK,
    MODE_AUTO,
    MODE_LOITER,
    MODE_REMOTE,
    DpmState,
    ObstacleTrack,
    Scenario,
    compute_outcome,
    field_trigger_spec,
    format_scenario_log,
    head_on_scenario,
    run_scenario,
    scenario_from_json,
    scenario_to_json,
    step,
    _render_views,
)
from redtide.errors import OracleProtocolError, ScenarioError
from redtide.imagery import encode_ppm
from redtide.oracle import ToyOracle
from redtide.toydet import Detection, DetectionSet

DEPLOY_CLASSES = (0, 1)


def dets(*pairs):
    return DetectionSet(
        tuple(Detection(cls, (0.0, 0.0, 8.0, 8.0), conf, 0) for cls, conf in pairs)
    )


# -- transition table ------------------------------------------------------------

def test_transition_table_exhaustive():
    state = DpmState()
    # the full 2x2 comms x detection-present table; no other transitions exist
    assert step(state, COMMS_OK, dets()).mode == MODE_REMOTE
    assert step(state, COMMS_OK, dets((0, 0.9))).mode == MODE_REMOTE
    assert step(state, COMMS_LOST, dets()).mode == MODE_AUTO
    assert step(state, COMMS_LOST, dets((0, 0.9))).mode == MODE_LOITER


def test_transition_from_any_prior_mode():
    for prior in (MODE_REMOTE, MODE_AUTO, MODE_LOITER):
        state = DpmState(mode=prior, comms=COMMS_LOST)
        assert step(state, COMMS_OK, dets((1, 0.5))).mode == MODE_REMOTE
        assert step(state, COMMS_LOST, dets()).mode == MODE_AUTO
        assert step(state, COMMS_LOST, dets((1, 0.5))).mode == MODE_LOITER


def test_step_detection_at_threshold_loiters():
    # oracle-side filtering admits confidence 0.31 at threshold 0.3
    state = step(DpmState(), COMMS_LOST, dets((0, 0.31)))
    assert state.mode == MODE_LOITER
    assert state.top_confidence == 0.31
    assert state.contact_count == 1


def test_step_contact_class_filter():
    trigger_only = dets((2, 0.99))
    assert step(DpmState(), COMMS_LOST, trigger_only).mode == MODE_LOITER  # default: any class
    filtered = step(DpmState(), COMMS_LOST, trigger_only, contact_classes=DEPLOY_CLASSES)
    assert filtered.mode == MODE_AUTO
    assert filtered.contact_count == 0


def test_step_rejects_bad_comms():
    with pytest.raises(ScenarioError):
        step(DpmState(), "DEGRADED", dets())


# -- scenario structure ------------------------------------------------------------

def test_scenario_validation():
    with pytest.raises(ScenarioError, match="at least one tick"):
        Scenario(seed=1, comms=())
    with pytest.raises(ScenarioError, match="bad comms"):
        Scenario(seed=1, comms=("OK", "WOBBLY"))
    with pytest.raises(ScenarioError, match="finite"):
        Scenario(seed=1, comms=("OK",), own_speed=math.inf)


def test_scenario_round_trips_through_json():
    scenario = head_on_scenario(
        7, ticks=5, attack=field_trigger_spec(), contact_classes=DEPLOY_CLASSES
    )
    text = scenario_to_json(scenario)
    loaded = scenario_from_json(text)
    assert scenario_to_json(loaded) == text
    assert loaded.comms == scenario.comms
    assert loaded.attack.alpha_range == scenario.attack.alpha_range
    assert loaded.attack.trigger_raster().same_pixels(scenario.attack.trigger_raster())


def test_scenario_json_version_guard():
    with pytest.raises(ScenarioError, match="version"):
        scenario_from_json('{"version": 99}')


# -- simulation --------------------------------------------------------------------

def test_comms_ok_throughout_stays_remote(calibration):
    scenario = Scenario(
        seed=3,
        comms=(COMMS_OK,) * 10,
        obstacles=(ObstacleTrack(20.0, 0.0),),
        attack=field_trigger_spec(),  # attacks are irrelevant while comms hold
    )
    log = run_scenario(scenario, ToyOracle(calibration.model, 0.3))
    assert all(r.mode == MODE_REMOTE for r in log.records)
    assert log.query_count == 10


def test_comms_lost_no_obstacle_runs_auto(calibration):
    scenario = Scenario(seed=4, comms=(COMMS_LOST,) * 5)
    log = run_scenario(scenario, ToyOracle(calibration.model, 0.3))
    assert all(r.mode == MODE_AUTO for r in log.records)
    assert log.outcome == "completed"
    # mission track advanced 5 m per tick
    assert log.records[-1].own_x == pytest.approx(20.0)


def test_loiter_halts_motion(calibration):
    scenario = head_on_scenario(CALIBRATION_SCENARIO_SEED, contact_classes=DEPLOY_CLASSES)
    log = run_scenario(scenario, ToyOracle(calibration.model, 0.3))
    assert log.outcome == "loitered"
    loiter_records = [r for r in log.records if r.mode == MODE_LOITER]
    assert loiter_records
    xs = {r.own_x for r in loiter_records[1:]}
    assert len(xs) <= 1  # position held while loitering


def test_collision_outcome_recomputable_from_log(calibration):
    scenario = head_on_scenario(
        CALIBRATION_SCENARIO_SEED,
        attack=field_trigger_spec(),
        contact_classes=DEPLOY_CLASSES,
    )
    log = run_scenario(scenario, ToyOracle(calibration.model, 0.3))
    assert compute_outcome(log.records, log.collision_radius, log.records[-1].mode) == log.outcome


def test_attack_composited_before_query(calibration):
    benign = head_on_scenario(11, contact_classes=DEPLOY_CLASSES)
    attacked = head_on_scenario(
        11, attack=field_trigger_spec(), contact_classes=DEPLOY_CLASSES
    )
    empty_b, contact_b = _render_views(benign)
    empty_a, contact_a = _render_views(attacked)
    assert empty_b.same_pixels(empty_a)
    assert not contact_b.same_pixels(contact_a)  # the artifact is in the frame
    log = run_scenario(attacked, ToyOracle(calibration.model, 0.3))
    in_view = [r for r in log.records if r.min_distance <= attacked.view_range]
    assert in_view
    # the logged digest is the post-injection frame the oracle actually saw
    assert all(r.frame_digest == sha256_hex(encode_ppm(contact_a)) for r in in_view)


def test_frame_override_substitution(calibration):
    from redtide.dataset import SceneSpec, generate_synthetic_scene

    substitute, _ = generate_synthetic_scene(SceneSpec(vessels=0, buoys=0), seed=999)
    scenario = Scenario(
        seed=5,
        comms=(COMMS_LOST,) * 3,
        obstacles=(ObstacleTrack(10.0, 0.0),),
        frame_overrides=((1, substitute),),
    )
    log = run_scenario(scenario, ToyOracle(calibration.model, 0.3))
    assert log.records[1].frame_digest == sha256_hex(encode_ppm(substitute))


def test_oracle_failure_truncates_log(calibration):
    class FlakyOracle(ToyOracle):
        def detect(self, image):
            if self.query_count >= 2:
                raise OracleProtocolError("oracle terminated")
            return super().detect(image)

    scenario = Scenario(seed=6, comms=(COMMS_LOST,) * 5)
    log = run_scenario(scenario, FlakyOracle(calibration.model, 0.3))
    assert log.outcome == "error"
    assert log.error is not None
    assert len(log.records) == 2


def test_log_format_lines(calibration):
    scenario = Scenario(seed=8, comms=(COMMS_OK, COMMS_LOST))
    log = run_scenario(scenario, ToyOracle(calibration.model, 0.3))
    text = format_scenario_log(log)
    lines = text.strip().splitlines()
    assert lines[0].startswith("TICK t=0 mode=REMOTE comms=OK")
    assert lines[-3].startswith("OUTCOME ")
    assert lines[-2] == "QUERIES 2"
    assert lines[-1] == "RADIUS 5.000"


# -- the calibration narrative -------------------------------------------------------

def test_benign_calibration_scenario_loiters(calibration):
    scenario = head_on_scenario(CALIBRATION_SCENARIO_SEED, contact_classes=DEPLOY_CLASSES)
    log = run_scenario(scenario, ToyOracle(calibration.model, 0.3))
    assert log.outcome == "loitered"
    assert all(r.min_distance >= log.collision_radius for r in log.records)


def test_poisoned_oracle_with_trigger_collides(calibration, backdoored):
    scenario = head_on_scenario(
        CALIBRATION_SCENARIO_SEED,
        attack=field_trigger_spec(),
        contact_classes=DEPLOY_CLASSES,
    )
    log = run_scenario(scenario, ToyOracle(backdoored.model, 0.3))
    assert log.outcome == "collided"
