#!/usr/bin/env python3
"""Walkthrough: closed-box evolutionary attacks against the oracle.

Runs the bounded-perturbation EA with the stock "paper-default" preset
(population 10, mutation 0.5, crossover 0.5) and the 50-pixel budget
attack against a trained detector, reporting query counts.
"""

from dataclasses import replace
from pathlib import Path

from redtide.dataset import make_synthetic_dataset
from redtide.evasion import EA_PRESETS, TargetSpec, ea_perturb, ea_pixel_limited, match_detection
from redtide.imagery import save_image
from redtide.oracle import ToyOracle
from redtide.toydet import ToyDetectorModel, TrainConfig, train

out = Path("demo-out/04")
out.mkdir(parents=True, exist_ok=True)

train_set = make_synthetic_dataset(120, seed=1001)
model, _ = train(
    ToyDetectorModel.initialize(train_set.class_names, seed=7),
    train_set,
    TrainConfig(epochs=400, seed=3),
)

scene = None
probe = ToyOracle(model, threshold=0.0)
for item in make_synthetic_dataset(30, seed=2002, split="test").items:
    vessels = [a for a in item.annotations if a.class_id == 0]
    if not vessels:
        continue
    box = vessels[0].pixel_box(item.image.width, item.image.height)
    matched = match_detection(probe.detect(item.image), box)
    if matched and 0.4 <= matched.confidence <= 0.9:
        scene = (item.image, box)
        break
assert scene is not None
image, box = scene
target = TargetSpec("suppress", class_id=0, victim_box=box)

preset = replace(EA_PRESETS["paper-default"], generations=60, seed=5)
oracle = ToyOracle(model, threshold=0.3)
example, outcome = ea_perturb(oracle, image, target, epsilon=8, config=preset)
print(
    f"bounded EA: baseline {outcome.baseline_confidence:.3f} -> "
    f"{outcome.post_confidence:.3f}, success {outcome.success}, "
    f"{outcome.oracle_queries} queries over {outcome.generations_used} generations"
)
save_image(example.adversarial, out / "ea_perturb.png")

oracle = ToyOracle(model, threshold=0.3)
example, outcome = ea_pixel_limited(oracle, image, target, n_pixels=50, config=preset)
print(
    f"50-pixel EA: baseline {outcome.baseline_confidence:.3f} -> "
    f"{outcome.post_confidence:.3f}, success {outcome.success}, "
    f"changed {example.changed_pixel_count} pixels"
)
save_image(example.adversarial, out / "ea_pixels.png")
