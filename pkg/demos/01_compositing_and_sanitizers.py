#!/usr/bin/env python3
"""Walkthrough: rasters, patch compositing, and input sanitizers.

Builds a synthetic scene, composites the stock trigger flag onto the
vessel at a few opacities, and shows what the greyscale / quantize /
box-blur defenses do to it. Artifacts land in ./demo-out/01/.
"""

from pathlib import Path

from redtide.dataset import SceneSpec, generate_synthetic_scene
from redtide.imagery import Patch, PatchTransform, apply_patch, sanitize, save_image
from redtide.poison import default_trigger_raster

out = Path("demo-out/01")
out.mkdir(parents=True, exist_ok=True)

scene, annotations = generate_synthetic_scene(SceneSpec(vessels=1, buoys=1), seed=7)
save_image(scene, out / "scene.png")
print(f"scene with {len(annotations)} objects -> {out/'scene.png'}")

trigger = default_trigger_raster()
vessel = annotations[0]
bx, by, bw, bh = vessel.pixel_box(scene.width, scene.height)
anchor = (int(bx + bw / 2 - trigger.width / 2), int(by + bh / 2 - trigger.height / 2))

for alpha in (0.4, 0.8, 1.0):
    patched = apply_patch(scene, Patch(trigger, alpha=alpha), PatchTransform(location=anchor))
    save_image(patched, out / f"trigger_alpha_{int(alpha * 100):03d}.png")
print("composited the trigger at alpha 0.4 / 0.8 / 1.0")

worn = apply_patch(scene, Patch(trigger, alpha=1.0), PatchTransform(location=anchor, rotation=90))
save_image(sanitize(worn, "greyscale"), out / "defense_greyscale.png")
save_image(sanitize(worn, "quantize", levels=4), out / "defense_quantize4.png")
save_image(sanitize(worn, "box_blur", radius=2), out / "defense_blur2.png")
print("sanitizer outputs written: greyscale, quantize(4), box_blur(2)")
