"""Shared fixtures: the calibration datasets and trained models.

Training the toy detector takes ~10 s, so the clean and poisoned models
are trained once per session and shared by the evasion, poison, DPM, and
acceptance suites. Seeds here are the pinned calibration seeds.
"""

from types import SimpleNamespace

import pytest

from redtide.dataset import make_synthetic_dataset
from redtide.toydet import ToyDetectorModel, TrainConfig, train

CAL_TRAIN_SEED = 1001
CAL_TEST_SEED = 2002
CAL_MODEL_SEED = 7
CAL_TRAIN_CONFIG = TrainConfig(epochs=600, learning_rate=0.25, batch_size=8, seed=3)
CLASSES = ("vessel", "buoy")


CAL_POISON_SEED = 404
CAL_POISON_BUDGET = 0.10


@pytest.fixture(scope="session")
def calibration():
    train_ds = make_synthetic_dataset(200, seed=CAL_TRAIN_SEED, split="train")
    test_ds = make_synthetic_dataset(50, seed=CAL_TEST_SEED, split="test")
    model0 = ToyDetectorModel.initialize(CLASSES, seed=CAL_MODEL_SEED)
    model, curve = train(model0, train_ds, CAL_TRAIN_CONFIG)
    return SimpleNamespace(
        train=train_ds,
        test=test_ds,
        model=model,
        curve=curve,
        train_config=CAL_TRAIN_CONFIG,
    )


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    try:
        from test_acceptance import ACCEPTANCE_LINES
    except ImportError:
        return
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def backdoored(calibration):
    """Backdoor plan applied to the calibration train set plus the model
    trained on it (identical seeds/config as the clean calibration model)."""
    from redtide.poison import BackdoorSpec, apply_poison, plan_poison

    spec = BackdoorSpec()
    plan = plan_poison(calibration.train, spec, budget=CAL_POISON_BUDGET, seed=CAL_POISON_SEED)
    poisoned_ds, manifest = apply_poison(calibration.train, plan)
    model0 = ToyDetectorModel.initialize(poisoned_ds.class_names, seed=CAL_MODEL_SEED)
    model, _ = train(model0, poisoned_ds, CAL_TRAIN_CONFIG)
    return SimpleNamespace(
        spec=spec, plan=plan, dataset=poisoned_ds, manifest=manifest, model=model
    )
