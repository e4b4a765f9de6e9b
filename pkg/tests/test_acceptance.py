"""Acceptance criteria, one test per criterion, each printing a PASS line.

Run with ``pytest tests/test_acceptance.py -v`` (pass lines are written
through the capture so they always appear). Criteria that depend on the
trained calibration models reuse the session fixtures from conftest.
"""

import itertools
import json
import subprocess
import time
from pathlib import Path

import numpy as np
import pytest

from redtide.dataset import (
    SceneSpec,
    digest_dataset,
    format_digest_manifest,
    generate_synthetic_scene,
    load_dataset,
    make_synthetic_dataset,
    parse_digest_manifest,
    write_dataset,
)
from redtide.dpm import (
    CALIBRATION_SCENARIO_SEED,
    field_trigger_spec,
    head_on_scenario,
    run_scenario,
)
from redtide.engagement import (
    LEVELS,
    ScopeRecord,
    derive_risk,
    new_engagement,
    render_report,
    set_item_status,
    validate_report_object,
)
from redtide.evasion import (
    EA_PRESETS,
    EAConfig,
    PatchSampler,
    TargetSpec,
    ea_patch,
    ea_perturb,
    ea_pixel_limited,
    expected_ea_queries,
    fgsm,
    match_detection,
)
from redtide.imagery import Image, decode_ppm, encode_ppm, load_image, save_image
from redtide.oracle import ToyOracle, encode_request, spawn_external
from redtide.poison import budget_count, confusion_metrics, evaluate_poison
from redtide.toydet import ToyDetectorModel, grad_input

from conftest import CAL_POISON_BUDGET


ACCEPTANCE_LINES: list[str] = []


def announce(line: str) -> None:
    # collected lines are re-emitted by the terminal-summary hook in
    # conftest so one pass line per criterion always reaches the terminal
    ACCEPTANCE_LINES.append(line)
    print(line)


def calibration_scenes(model, count=50, threshold=0.3):
    """Deterministic pool of scenes whose vessel has a matched baseline."""
    probe = ToyOracle(model, 0.0)
    scenes = []
    seed = 3000
    while len(scenes) < count:
        image, anns = generate_synthetic_scene(SceneSpec(vessels=1), seed=seed)
        seed += 1
        box = anns[0].pixel_box(image.width, image.height)
        matched = match_detection(probe.detect(image), box)
        if matched is not None and matched.confidence >= threshold:
            scenes.append((image, box, matched.confidence))
    return scenes


# -- criterion 1: gradient fidelity ---------------------------------------------

def test_criterion_1_gradient_fidelity():
    start = time.monotonic()
    rng = np.random.default_rng(11)
    from redtide import toydet as td
    from redtide.dataset import Annotation

    truth = [Annotation(0, 0.4, 0.6, 0.3, 0.2), Annotation(1, 0.8, 0.3, 0.1, 0.1)]
    worst = 0.0
    for pair in range(10):
        model = ToyDetectorModel.initialize(("vessel", "buoy"), seed=500 + pair)
        image = Image(rng.integers(0, 256, size=(64, 64, 3), dtype=np.uint8))
        analytic = grad_input(model, image, truth)
        base = image.pixels.astype(np.float64) / 255.0
        positives = td._positive_cells(model, truth)
        for _ in range(20):
            y, x, c = (int(rng.integers(0, 64)), int(rng.integers(0, 64)), int(rng.integers(0, 3)))
            vals = []
            for sign in (+1.0, -1.0):
                perturbed = base.copy()
                perturbed[y, x, c] += sign * 1e-5
                features = td._cell_features(model, perturbed)
                value, _, _ = td._loss_and_grads(
                    model, features, positives, want_params=False, want_input=False
                )
                vals.append(value.total)
            numeric = (vals[0] - vals[1]) / 2e-5
            a = analytic[y, x, c]
            worst = max(worst, abs(a - numeric) / max(abs(a), abs(numeric), 1e-6))
    elapsed = time.monotonic() - start
    assert worst < 1e-4
    assert elapsed < 60.0
    announce(f"ACCEPTANCE 1 PASS gradient fidelity: max rel err {worst:.2e} in {elapsed:.1f}s")


# -- criterion 2: FGSM contract ---------------------------------------------------

def test_criterion_2_fgsm_contract(calibration):
    model = calibration.model
    scenes = calibration_scenes(model, count=50)
    image0, box0, _ = scenes[0]
    identity = fgsm(model, image0, TargetSpec("suppress", victim_box=box0), epsilon=0)
    assert identity.adversarial.same_pixels(image0)

    for eps in (1, 2, 4, 8):
        adv = fgsm(model, image0, TargetSpec("suppress", class_id=0, victim_box=box0), eps)
        delta = np.abs(adv.adversarial.pixels.astype(int) - image0.pixels.astype(int))
        assert delta.max() <= eps

    probe = ToyOracle(model, 0.0)
    lowered = 0
    for image, box, baseline in scenes:
        adv = fgsm(model, image, TargetSpec("suppress", class_id=0, victim_box=box), epsilon=8)
        matched = match_detection(probe.detect(adv.adversarial), box)
        post = matched.confidence if matched else 0.0
        lowered += post < baseline
    rate = lowered / len(scenes)
    assert rate >= 0.90
    announce(
        f"ACCEPTANCE 2 PASS fgsm contract: identity at eps 0, max-norm exact, "
        f"confidence lowered on {lowered}/50 scenes"
    )


# -- criterion 3: EA properties ----------------------------------------------------

def test_criterion_3_ea_properties(calibration):
    preset = EA_PRESETS["paper-default"]
    assert (preset.population, preset.mutation_rate, preset.crossover_prob) == (10, 0.5, 0.5)
    image, box, _ = calibration_scenes(calibration.model, count=1)[0]
    target = TargetSpec("suppress", class_id=0, victim_box=box)
    config = EAConfig(
        population=preset.population,
        generations=15,
        mutation_rate=preset.mutation_rate,
        mutation_mode=preset.mutation_mode,
        crossover_prob=preset.crossover_prob,
        elitism=preset.elitism,
        seed=77,
    )

    from redtide import evasion as ev

    oracle = ToyOracle(calibration.model, threshold=0.0)  # threshold 0: runs all generations
    fitness_fn = ev._fitness_for(oracle, target)
    shape = image.pixels.shape
    base = image.pixels.astype(np.int64).ravel()

    def init(rng, index):
        if index == 0:
            return np.zeros((base.size, 1), dtype=np.int64)
        return rng.integers(-8, 9, size=(base.size, 1), dtype=np.int64)

    def redraw(rng, genome, mask):
        genome[mask] = rng.integers(-8, 9, size=(int(mask.sum()), 1))

    def build(genome):
        return Image(np.clip(base + genome[:, 0], 0, 255).astype(np.uint8).reshape(shape))

    result = ev._run_ea(config, init, redraw, lambda g: fitness_fn(build(g)), lambda f, a: False)
    assert all(b <= a + 1e-15 for a, b in zip(result.history, result.history[1:]))
    assert oracle.query_count == expected_ea_queries(config, result.generations)

    oracle_a = ToyOracle(calibration.model, threshold=0.3)
    adv_a, out_a = ea_perturb(oracle_a, image, target, 8, config)
    oracle_b = ToyOracle(calibration.model, threshold=0.3)
    adv_b, out_b = ea_perturb(oracle_b, image, target, 8, config)
    assert adv_a.adversarial.same_pixels(adv_b.adversarial)
    assert out_a == out_b
    assert oracle_a.query_count == expected_ea_queries(config, out_a.generations_used)
    announce(
        "ACCEPTANCE 3 PASS ea properties: preset parameters, monotone elitism, "
        f"exact query accounting ({oracle_a.query_count} queries), bit-reproducible"
    )


# -- criterion 4: pixel-budget attack ------------------------------------------------

def test_criterion_4_pixel_budget(calibration):
    scenes = [
        (image, box)
        for image, box, conf in calibration_scenes(calibration.model, count=30)
        if 0.4 <= conf <= 0.85
    ]
    assert len(scenes) >= 8
    wins = {1: 0, 50: 0}
    for seed in range(20):
        image, box = scenes[seed % len(scenes)]
        target = TargetSpec("suppress", class_id=0, victim_box=box)
        config = EAConfig(
            population=10, generations=60, mutation_rate=0.5, crossover_prob=0.5,
            elitism=1, seed=seed,
        )
        for n in (1, 50):
            oracle = ToyOracle(calibration.model, 0.3)
            example, outcome = ea_pixel_limited(oracle, image, target, n, config=config)
            assert example.changed_pixel_count <= n  # cardinality bound always holds
            wins[n] += outcome.success
    assert wins[50] > wins[1]  # strict inequality in aggregate
    announce(
        f"ACCEPTANCE 4 PASS pixel budget: diff mask within budget; "
        f"n=50 succeeded {wins[50]}/20 vs n=1 {wins[1]}/20"
    )


# -- criterion 5: backdoor end-to-end --------------------------------------------------

def test_criterion_5_backdoor_end_to_end(calibration, backdoored):
    start = time.monotonic()
    report = evaluate_poison(
        calibration.train,
        backdoored.dataset,
        calibration.test,
        backdoored.spec,
        calibration.train_config,
        model_seed=7,
        eval_seed=55,
    )
    elapsed = time.monotonic() - start
    assert len(calibration.train) == 200 and len(calibration.test) == 50
    assert backdoored.plan.budget == CAL_POISON_BUDGET
    delta = abs(report.clean_metric_baseline - report.clean_metric_poisoned)
    assert report.trigger_success_rate is not None
    assert report.trigger_success_rate >= 0.8
    assert delta <= 0.05
    assert elapsed < 600.0
    announce(
        f"ACCEPTANCE 5 PASS backdoor: trigger success {report.trigger_success_rate:.3f}, "
        f"clean accuracy delta {delta:.3f}, runtime {elapsed:.0f}s"
    )


# -- criterion 6: protection-module narrative -------------------------------------------

def test_criterion_6_dpm_narrative(calibration, backdoored):
    deploy = (0, 1)
    benign = head_on_scenario(CALIBRATION_SCENARIO_SEED, contact_classes=deploy)
    benign_log = run_scenario(benign, ToyOracle(calibration.model, 0.3))
    assert benign_log.outcome == "loitered"

    attacked = head_on_scenario(
        CALIBRATION_SCENARIO_SEED, attack=field_trigger_spec(), contact_classes=deploy
    )
    attacked_log = run_scenario(attacked, ToyOracle(backdoored.model, 0.3))
    assert attacked_log.outcome == "collided"
    announce(
        "ACCEPTANCE 6 PASS dropout-protection narrative: benign run loitered, "
        "poisoned model with trigger patch collided"
    )


# -- criterion 7: exact arithmetic -------------------------------------------------------

def test_criterion_7_exact_arithmetic():
    precision, recall = confusion_metrics(set(range(6)), set(range(5)) | {100, 101})
    assert abs(precision - 5 / 6) < 1e-9
    assert abs(recall - 5 / 7) < 1e-9
    assert abs(precision - 0.8333333333) < 1e-9
    assert abs(recall - 0.7142857142) < 1e-9

    assert budget_count(0.03, 200) == 6

    expected = {
        ("low", "low"): "low", ("low", "medium"): "low", ("medium", "low"): "low",
        ("medium", "medium"): "medium", ("low", "high"): "medium", ("high", "low"): "medium",
        ("medium", "high"): "high", ("high", "medium"): "high", ("high", "high"): "critical",
    }
    for likelihood, impact in itertools.product(LEVELS, LEVELS):
        assert derive_risk(likelihood, impact) == expected[(likelihood, impact)]
    announce(
        "ACCEPTANCE 7 PASS exact arithmetic: precision 5/6, recall 5/7, "
        "budget floor(0.03*200)=6, all 9 risk cells"
    )


# -- criterion 8: round-trips --------------------------------------------------------------

def test_criterion_8_round_trips(tmp_path):
    dataset = make_synthetic_dataset(6, seed=31)
    written = write_dataset(dataset, tmp_path / "ds")
    loaded = load_dataset(tmp_path / "ds")
    for a, b in zip(written.items, loaded.items):
        assert a.path == b.path
        assert a.image.same_pixels(b.image)
        for x, y in zip(a.annotations, b.annotations):
            assert x.class_id == y.class_id
            for u, v in zip((x.cx, x.cy, x.w, x.h), (y.cx, y.cy, y.w, y.h)):
                assert abs(u - v) < 1e-6  # labels serialize at 6 decimals
    # from the first serialized form onward the round trip is bit-exact
    rewritten = write_dataset(loaded, tmp_path / "ds2")
    reloaded = load_dataset(tmp_path / "ds2")
    for a, b in zip(loaded.items, reloaded.items):
        assert a.annotations == b.annotations
        assert a.image.same_pixels(b.image)
    for rel in ("classes.txt", written.items[0].path):
        assert (tmp_path / "ds" / rel).read_bytes() == (tmp_path / "ds2" / rel).read_bytes()

    image = dataset.items[0].image
    ppm_path = tmp_path / "img.ppm"
    save_image(image, ppm_path)
    raw = ppm_path.read_bytes()
    assert decode_ppm(raw).same_pixels(image)
    assert encode_ppm(load_image(ppm_path)) == raw  # bit-exact round trip

    digest1 = digest_dataset(loaded)
    # reordering directory enumeration cannot change the manifest (sorted paths)
    digest2 = digest_dataset(load_dataset(tmp_path / "ds"))
    assert digest1.manifest == digest2.manifest
    parsed = parse_digest_manifest(format_digest_manifest(digest1))
    assert parsed == digest1
    flip_target = tmp_path / "ds" / written.items[0].path
    data = bytearray(flip_target.read_bytes())
    data[-1] ^= 0x01
    flip_target.write_bytes(bytes(data))
    assert digest_dataset(loaded).manifest != digest1.manifest  # avalanche
    announce(
        "ACCEPTANCE 8 PASS round-trips: dataset bit-exact, PPM bit-exact, "
        "digest order-stable and avalanche-sensitive"
    )


# -- criterion 9: report completeness ---------------------------------------------------------

def test_criterion_9_report_completeness():
    scope = ScopeRecord(
        objectives="Full-surface evaluation of the vessel vision stack.",
        disclosure_process="Coordinated disclosure with the owner.",
    )
    plan = new_engagement(scope, engagement_id="acceptance-engagement")
    for item in plan.stage_items("A1"):
        set_item_status(plan, item.id, "done")
    markdown = render_report(plan, "markdown")
    checklist_section = markdown.split("## Findings")[0]
    for item_id in plan.items:
        assert checklist_section.count(f" {item_id}: ") == 1
    assert len(plan.items) == 62
    assert render_report(plan, "markdown") == markdown  # byte-deterministic
    canonical = render_report(plan, "canonical")
    assert render_report(plan, "canonical") == canonical
    obj = json.loads(canonical)
    validate_report_object(obj)
    announce(
        "ACCEPTANCE 9 PASS report completeness: 62 checklist ids exactly once, "
        "deterministic rendering, schema-valid canonical object"
    )


# -- criterion 10: patch attack property --------------------------------------------------------

def test_criterion_10_patch_attack(calibration):
    scenes = [(img, box) for img, box, _ in calibration_scenes(calibration.model, count=5)]
    oracle = ToyOracle(calibration.model, 0.3)
    invisible = ea_patch(
        oracle, scenes, 12, PatchSampler(alpha_range=(0.0, 0.0)),
        EAConfig(population=4, generations=3, seed=5),
        samples_per_scene=2, holdout_samples=2,
    )
    baselines = []
    probe = ToyOracle(calibration.model, 0.3)
    for image, box in scenes:
        matched = match_detection(probe.detect(image), box)
        baselines.append(matched.confidence if matched else 0.0)
    expected = float(np.mean(baselines))
    assert all(abs(h - expected) < 1e-12 for h in invisible.history)

    preset = EA_PRESETS["paper-patch"]
    assert (preset.population, preset.generations, preset.mutation_rate,
            preset.crossover_prob) == (20, 100, 3.0, 0.5)
    oracle = ToyOracle(calibration.model, 0.3)
    result = ea_patch(
        oracle, scenes, 12, PatchSampler(alpha_range=(0.8, 1.0)),
        EAConfig(
            population=preset.population, generations=preset.generations,
            mutation_rate=preset.mutation_rate, mutation_mode=preset.mutation_mode,
            crossover_prob=preset.crossover_prob, elitism=preset.elitism, seed=99,
        ),
        samples_per_scene=2, holdout_samples=4,
    )
    assert result.holdout_mean_confidence < result.gen0_holdout_mean_confidence
    announce(
        f"ACCEPTANCE 10 PASS patch attack: invisible patch pins baseline exactly; "
        f"evolved patch holdout {result.gen0_holdout_mean_confidence:.3f} -> "
        f"{result.holdout_mean_confidence:.3f}"
    )


# -- criterion 11 (secondary): sidecar conformance ------------------------------------------------

SIDECAR_DIST = Path(__file__).resolve().parents[1] / "sidecar" / "dist" / "main.js"
GOLDEN = Path(__file__).parent / "golden"


def golden_images():
    """The three deterministic probe rasters used by the golden transcripts."""
    red = np.zeros((16, 16, 3), dtype=np.uint8)
    red[0:8, 0:8] = (220, 30, 30)
    green = np.full((16, 16, 3), (40, 60, 90), dtype=np.uint8)
    green[0:8, 8:16] = (20, 200, 40)
    quiet = np.full((16, 16, 3), (90, 90, 90), dtype=np.uint8)
    return [Image(red), Image(green), Image(quiet)]


def test_criterion_11_sidecar_conformance():
    if not SIDECAR_DIST.is_file():
        pytest.skip("secondary sidecar not built (sidecar/dist/main.js missing)")
    requests = (GOLDEN / "sidecar_requests.jsonl").read_bytes()
    responses = (GOLDEN / "sidecar_responses.jsonl").read_bytes()

    # client side: the toolkit emits byte-identical request lines
    lines = [encode_request(i, img, 0.25) for i, img in enumerate(golden_images())]
    assert ("\n".join(lines) + "\n").encode() == requests

    # server side: the stub detector replays byte-identical responses
    proc = subprocess.run(
        ["node", str(SIDECAR_DIST), "stub", "--threshold", "0.25"],
        input=b'{"hello":1}\n' + requests,
        capture_output=True,
        timeout=30,
    )
    assert proc.returncode == 0
    out_lines = proc.stdout.split(b"\n")
    handshake = json.loads(out_lines[0])
    assert handshake["hello"] == 1 and handshake["classes"] == ["red", "green", "blue"]
    assert b"\n".join(out_lines[1:]) == responses

    # full-stack handshake through the toolkit oracle client
    oracle = spawn_external(["node", str(SIDECAR_DIST), "stub"], threshold=0.25)
    try:
        assert oracle.classes == ("red", "green", "blue")
        detections = oracle.detect(golden_images()[0])
        assert len(detections) >= 1
    finally:
        oracle.close()
    announce(
        "ACCEPTANCE 11 PASS sidecar conformance: golden transcripts byte-identical "
        "both directions, toolkit handshake ok"
    )
