#!/usr/bin/env python3
"""Walkthrough: train the toy grid detector and run the gradient attack.

Trains on a reduced synthetic set (a couple of minutes of CPU), verifies
the detector sees a held-out vessel, then suppresses it with the
gradient-sign attack at epsilon 8/255.
"""

from pathlib import Path

from redtide.dataset import make_synthetic_dataset
from redtide.evasion import TargetSpec, fgsm, match_detection
from redtide.imagery import save_image
from redtide.oracle import ToyOracle
from redtide.toydet import ToyDetectorModel, TrainConfig, save_model, train

out = Path("demo-out/03")
out.mkdir(parents=True, exist_ok=True)

train_set = make_synthetic_dataset(120, seed=1001)
model0 = ToyDetectorModel.initialize(train_set.class_names, seed=7)
model, curve = train(model0, train_set, TrainConfig(epochs=400, seed=3))
save_model(model, out / "detector.rtd")
print(f"trained: mean loss {curve[0]:.3f} -> {curve[-1]:.4f}")

held_out = make_synthetic_dataset(30, seed=2002, split="test")
oracle = ToyOracle(model, threshold=0.0)
for item in held_out.items:
    vessels = [a for a in item.annotations if a.class_id == 0]
    if not vessels:
        continue
    box = vessels[0].pixel_box(item.image.width, item.image.height)
    matched = match_detection(oracle.detect(item.image), box)
    if matched is None or not (0.5 <= matched.confidence <= 0.9):
        continue
    print(f"victim scene found: vessel at confidence {matched.confidence:.3f}")
    example = fgsm(model, item.image, TargetSpec("suppress", class_id=0, victim_box=box), epsilon=8)
    post = match_detection(oracle.detect(example.adversarial), box)
    post_conf = post.confidence if post else 0.0
    print(f"after fgsm at eps 8/255: confidence {post_conf:.3f}")
    save_image(example.adversarial, out / "adversarial.png")
    save_image(item.image, out / "clean.png")
    break
