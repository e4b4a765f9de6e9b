#!/usr/bin/env python3
"""Walkthrough: the kinetic consequence of a backdoor.

Runs the pinned head-on calibration scenario twice: once with the clean
detector (the vessel loiters when the contact appears during a
communications loss) and once with the backdoored detector while the
contact wears the physical trigger patch (the vessel never sees a
contact and collides). Expect several minutes of CPU for the two
trainings.
"""

from pathlib import Path

from redtide.dataset import make_synthetic_dataset
from redtide.dpm import (
    CALIBRATION_SCENARIO_SEED,
    field_trigger_spec,
    format_scenario_log,
    head_on_scenario,
    run_scenario,
    scenario_to_json,
)
from redtide.oracle import ToyOracle
from redtide.poison import BackdoorSpec, apply_poison, plan_poison
from redtide.toydet import ToyDetectorModel, TrainConfig, train

out = Path("demo-out/06")
out.mkdir(parents=True, exist_ok=True)

train_set = make_synthetic_dataset(200, seed=1001)
config = TrainConfig(seed=3)
clean_model, _ = train(ToyDetectorModel.initialize(train_set.class_names, seed=7), train_set, config)

plan = plan_poison(train_set, BackdoorSpec(), budget=0.10, seed=404)
poisoned, _ = apply_poison(train_set, plan)
poisoned_model, _ = train(
    ToyDetectorModel.initialize(poisoned.class_names, seed=7), poisoned, config
)

deployment_classes = (0, 1)  # the deployed reaction set: vessel, buoy
benign = head_on_scenario(CALIBRATION_SCENARIO_SEED, contact_classes=deployment_classes)
(out / "scenario_benign.json").write_text(scenario_to_json(benign))
log = run_scenario(benign, ToyOracle(clean_model, 0.3))
(out / "log_benign.txt").write_text(format_scenario_log(log))
print(f"benign run: {log.outcome} after {len(log.records)} ticks")

attacked = head_on_scenario(
    CALIBRATION_SCENARIO_SEED,
    attack=field_trigger_spec(),
    contact_classes=deployment_classes,
)
(out / "scenario_attacked.json").write_text(scenario_to_json(attacked))
log = run_scenario(attacked, ToyOracle(poisoned_model, 0.3))
(out / "log_attacked.txt").write_text(format_scenario_log(log))
print(f"attacked run: {log.outcome} after {len(log.records)} ticks")
print(f"minimum obstacle distance: {min(r.min_distance for r in log.records):.1f} m")
