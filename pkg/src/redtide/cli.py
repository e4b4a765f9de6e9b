"""Operator command surface.

Subcommands: ``dataset {digest,synth}``, ``train``, ``poison
{plan,apply,eval,scan}``, ``attack {fgsm,ea,pixels,patch}``, ``simulate``,
``engage {new,item,finding,report}``, ``oracle {serve-toy,probe}``.

Exit codes: 0 success, 1 domain error (single machine-parsable ``error:``
line on stderr), 2 usage error. Every run that writes artifacts also
writes ``run_manifest.json`` with the resolved config, the seeds, and a
digest per artifact; passing that manifest back via ``--config``
reproduces the artifacts bit-identically for toy-oracle campaigns.
Flags override config-file values. The only environment variable
honoured is ``REDTIDE_OUT`` (output-directory override).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from . import __version__
from .canonical import canonical_json, sha256_hex
from .errors import ToolkitError
from . import dataset as ds
from . import dpm
from . import engagement as eng
from . import evasion
from . import imagery
from . import oracle as orc
from . import poison
from . import toydet

ERROR_PREFIX = "error:"


def _out_dir(path_str: str) -> Path:
    override = os.environ.get("REDTIDE_OUT")
    out = Path(override) if override else Path(path_str)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_config(path: str | None) -> dict:
    if not path:
        return {}
    try:
        obj = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ToolkitError(f"cannot read config {path}: {exc}") from exc
    # a run manifest embeds its resolved config; accept it directly
    return obj.get("config", obj)


def _merged(args: argparse.Namespace, config: dict, key: str, default):
    value = getattr(args, key, None)
    if value is not None:
        return value
    if key in config:
        return config[key]
    return default


def _write_manifest(out_dir: Path, command: str, config: dict, artifacts: list[Path]) -> None:
    entries = []
    for artifact in artifacts:
        data = artifact.read_bytes()
        try:
            rel = str(artifact.relative_to(out_dir))
        except ValueError:
            rel = str(artifact)
        entries.append({"path": rel, "sha256": sha256_hex(data)})
    manifest = {"command": command, "config": config, "artifacts": entries}
    (out_dir / "run_manifest.json").write_text(canonical_json(manifest), encoding="utf-8")


def _train_config(args, config) -> toydet.TrainConfig:
    return toydet.TrainConfig(
        epochs=int(_merged(args, config, "epochs", toydet.TrainConfig.epochs)),
        learning_rate=float(
            _merged(args, config, "learning_rate", toydet.TrainConfig.learning_rate)
        ),
        batch_size=int(_merged(args, config, "batch_size", toydet.TrainConfig.batch_size)),
        seed=int(_merged(args, config, "seed", 0)),
    )


def _ea_config(args, config) -> evasion.EAConfig:
    preset_name = _merged(args, config, "preset", None)
    if preset_name is not None:
        if preset_name not in evasion.EA_PRESETS:
            raise ToolkitError(
                f"unknown preset {preset_name!r}; available: {sorted(evasion.EA_PRESETS)}"
            )
        base = evasion.EA_PRESETS[preset_name]
    else:
        base = evasion.EAConfig()
    return evasion.EAConfig(
        population=int(_merged(args, config, "population", base.population)),
        generations=int(_merged(args, config, "generations", base.generations)),
        mutation_rate=float(_merged(args, config, "mutation_rate", base.mutation_rate)),
        mutation_mode=_merged(args, config, "mutation_mode", base.mutation_mode),
        crossover_prob=float(_merged(args, config, "crossover_prob", base.crossover_prob)),
        elitism=int(_merged(args, config, "elitism", base.elitism)),
        seed=int(_merged(args, config, "seed", 0)),
    )


def _target_spec(args, config) -> evasion.TargetSpec:
    victim = _merged(args, config, "victim_box", None)
    if isinstance(victim, str):
        victim = tuple(float(v) for v in victim.split(","))
    elif isinstance(victim, list):
        victim = tuple(float(v) for v in victim)
    class_id = _merged(args, config, "class_id", None)
    return evasion.TargetSpec(
        mode=_merged(args, config, "mode", "suppress"),
        class_id=int(class_id) if class_id is not None else None,
        victim_box=victim,
    )


def _make_oracle(args, config):
    command = _merged(args, config, "oracle_cmd", None)
    threshold = float(_merged(args, config, "threshold", orc.DEFAULT_THRESHOLD))
    if command:
        return orc.spawn_external(command, threshold=threshold)
    model_path = _merged(args, config, "model", None)
    if not model_path:
        raise ToolkitError("an oracle is required: pass --model or --oracle-cmd")
    return orc.ToyOracle(toydet.load_model(model_path), threshold=threshold)


def _auto_victim(image_path: str | None, data_root: str | None):
    """Victim box from the first annotated object of the image's label file."""
    if image_path is None or data_root is None:
        return None
    stem = Path(image_path).stem
    label = Path(data_root) / "labels" / f"{stem}.txt"
    if not label.is_file():
        return None
    image = imagery.load_image(image_path)
    first = ds.parse_annotation(label.read_text(encoding="utf-8").splitlines()[0])
    return first.pixel_box(image.width, image.height)


# --------------------------------------------------------------------------
# dataset

def cmd_dataset_digest(args) -> int:
    config = _load_config(args.config)
    root = Path(_merged(args, config, "data", None) or args.root)
    loaded = ds.load_dataset(root)
    digest = ds.digest_dataset(loaded)
    text = ds.format_digest_manifest(digest)
    if args.out:
        out = Path(args.out)
        out.write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    print(f"MANIFEST {digest.manifest}", file=sys.stderr)
    return 0


def cmd_dataset_synth(args) -> int:
    config = _load_config(args.config)
    out = _out_dir(_merged(args, config, "out", "synth-data"))
    count = int(_merged(args, config, "count", 50))
    seed = int(_merged(args, config, "seed", 0))
    size = int(_merged(args, config, "size", 64))
    split = _merged(args, config, "split", "train")
    built = ds.make_synthetic_dataset(count, seed=seed, split=split, size=size)
    written = ds.write_dataset(built, out)
    digest = ds.digest_dataset(written)
    manifest_file = out / "digests.txt"
    manifest_file.write_text(ds.format_digest_manifest(digest), encoding="utf-8")
    resolved = {"count": count, "seed": seed, "size": size, "split": split, "out": str(out)}
    _write_manifest(out, "dataset synth", resolved, [manifest_file])
    print(f"wrote {count} scenes to {out}")
    return 0


# --------------------------------------------------------------------------
# training

def cmd_train(args) -> int:
    config = _load_config(args.config)
    data_root = _merged(args, config, "data", None)
    if not data_root:
        raise ToolkitError("train requires --data")
    out_path = Path(_merged(args, config, "out", "model.rtd"))
    dataset = ds.load_dataset(data_root)
    train_config = _train_config(args, config)
    model_seed = int(_merged(args, config, "model_seed", 0))
    model0 = toydet.ToyDetectorModel.initialize(
        dataset.class_names,
        grid=int(_merged(args, config, "grid", 8)),
        resolution=int(_merged(args, config, "resolution", 64)),
        hidden=int(_merged(args, config, "hidden", 32)),
        seed=model_seed,
    )
    model, curve = toydet.train(model0, dataset, train_config)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    toydet.save_model(model, out_path)
    curve_path = out_path.with_suffix(".losses.json")
    curve_path.write_text(canonical_json({"epoch_mean_loss": curve}), encoding="utf-8")
    resolved = {
        "data": str(data_root),
        "out": str(out_path),
        "epochs": train_config.epochs,
        "learning_rate": train_config.learning_rate,
        "batch_size": train_config.batch_size,
        "seed": train_config.seed,
        "model_seed": model_seed,
    }
    _write_manifest(out_path.parent, "train", resolved, [out_path, curve_path])
    print(f"trained {train_config.epochs} epochs; final mean loss {curve[-1]:.6f}")
    return 0


# --------------------------------------------------------------------------
# poison

def _strategy_from_args(args, config, dataset) -> poison.Strategy:
    name = _merged(args, config, "strategy", "backdoor")
    if name == "label-flip":
        return poison.LabelFlipSpec()
    if name == "chaff":
        return poison.ChaffSpec(
            class_name=_merged(args, config, "chaff_class", dataset.class_names[0]),
            per_item=int(_merged(args, config, "per_item", 2)),
        )
    if name == "swap":
        return poison.TargetedSwapSpec(
            source_class=_merged(args, config, "source_class", dataset.class_names[0]),
            target_class=_merged(args, config, "target_class", dataset.class_names[-1]),
        )
    if name == "backdoor":
        return poison.BackdoorSpec(
            target_class=_merged(args, config, "target_class", "trigger"),
        )
    raise ToolkitError(f"unknown strategy {name!r}")


def cmd_poison_plan(args) -> int:
    config = _load_config(args.config)
    dataset = ds.load_dataset(_merged(args, config, "data", None) or args.data)
    strategy = _strategy_from_args(args, config, dataset)
    budget = float(_merged(args, config, "budget", 0.1))
    seed = int(_merged(args, config, "seed", 0))
    plan = poison.plan_poison(dataset, strategy, budget, seed)
    out = Path(_merged(args, config, "out", "poison_plan.json"))
    out.write_text(plan.to_json(), encoding="utf-8")
    print(f"selected {len(plan.selected)} of {plan.n_items} items")
    return 0


def cmd_poison_apply(args) -> int:
    config = _load_config(args.config)
    data_root = _merged(args, config, "data", None) or args.data
    dataset = ds.load_dataset(data_root)
    strategy = _strategy_from_args(args, config, dataset)
    budget = float(_merged(args, config, "budget", 0.1))
    seed = int(_merged(args, config, "seed", 0))
    plan = poison.plan_poison(dataset, strategy, budget, seed)
    poisoned, manifest = poison.apply_poison(dataset, plan)
    out = _out_dir(_merged(args, config, "out", "poisoned-data"))
    written = ds.write_dataset(poisoned, out)
    digest = ds.digest_dataset(written)
    plan_file = out / "poison_plan.json"
    plan_file.write_text(plan.to_json(), encoding="utf-8")
    changes_file = out / "poison_changes.json"
    changes_file.write_text(manifest.to_json(), encoding="utf-8")
    digest_file = out / "digests.txt"
    digest_file.write_text(ds.format_digest_manifest(digest), encoding="utf-8")
    resolved = {
        "data": str(data_root),
        "strategy": _merged(args, config, "strategy", "backdoor"),
        "budget": budget,
        "seed": seed,
        "out": str(out),
    }
    _write_manifest(out, "poison apply", resolved, [plan_file, changes_file, digest_file])
    print(f"poisoned {len(plan.selected)} items into {out}")
    return 0


def cmd_poison_eval(args) -> int:
    config = _load_config(args.config)
    clean = ds.load_dataset(_merged(args, config, "clean", None) or args.clean)
    poisoned = ds.load_dataset(_merged(args, config, "poisoned", None) or args.poisoned)
    test = ds.load_dataset(_merged(args, config, "test", None) or args.test, split="test")
    train_config = _train_config(args, config)
    backdoor = poison.BackdoorSpec(
        target_class=_merged(args, config, "target_class", "trigger")
    )
    report = poison.evaluate_poison(
        clean, poisoned, test, backdoor, train_config,
        model_seed=int(_merged(args, config, "model_seed", 0)),
        eval_seed=int(_merged(args, config, "eval_seed", 0)),
    )
    payload = {
        "clean_metric_baseline": report.clean_metric_baseline,
        "clean_metric_poisoned": report.clean_metric_poisoned,
        "trigger_success_rate": report.trigger_success_rate,
        "triggered_total": report.triggered_total,
        "outer_objective": {
            "objectness": report.outer_objective.objectness,
            "classification": report.outer_objective.classification,
            "total": report.outer_objective.total,
        },
    }
    out = Path(_merged(args, config, "out", "poison_report.json"))
    out.write_text(canonical_json(payload), encoding="utf-8")
    print(
        f"baseline {report.clean_metric_baseline:.3f} poisoned {report.clean_metric_poisoned:.3f} "
        f"trigger {report.trigger_success_rate}"
    )
    return 0


def cmd_poison_scan(args) -> int:
    config = _load_config(args.config)
    dataset = ds.load_dataset(_merged(args, config, "data", None) or args.data)
    truth = _merged(args, config, "truth", None)
    if isinstance(truth, str):
        truth = tuple(int(v) for v in truth.split(",") if v.strip())
    elif isinstance(truth, list):
        truth = tuple(int(v) for v in truth)
    result = poison.scan_for_poison(
        dataset,
        ground_truth=truth,
        config=poison.ScanConfig(
            z_threshold=float(_merged(args, config, "z_threshold", 2.0))
        ),
    )
    payload = {
        "flagged": list(result.flagged),
        "scores": list(result.scores),
        "precision": result.precision,
        "recall": result.recall,
    }
    out = Path(_merged(args, config, "out", "scan_result.json"))
    out.write_text(canonical_json(payload), encoding="utf-8")
    print(f"flagged {len(result.flagged)} items")
    return 0


# --------------------------------------------------------------------------
# attacks

def _write_attack_artifacts(
    out: Path, command: str, resolved: dict, example, outcome=None
) -> None:
    imagery.save_image(example.adversarial, out / "adversarial.png")
    imagery.save_image(example.base, out / "base.png")
    meta = {
        "kind": example.kind,
        "epsilon": example.epsilon,
        "changed_pixel_count": example.changed_pixel_count,
    }
    if outcome is not None:
        meta["outcome"] = {
            "baseline_confidence": outcome.baseline_confidence,
            "post_confidence": outcome.post_confidence,
            "success": outcome.success,
            "generations_used": outcome.generations_used,
            "oracle_queries": outcome.oracle_queries,
            "error": outcome.error,
        }
    meta_file = out / "attack.json"
    meta_file.write_text(canonical_json(meta), encoding="utf-8")
    _write_manifest(
        out, command, resolved, [out / "adversarial.png", out / "base.png", meta_file]
    )


def cmd_attack_fgsm(args) -> int:
    config = _load_config(args.config)
    model = toydet.load_model(_merged(args, config, "model", None) or args.model)
    image_path = _merged(args, config, "image", None) or args.image
    image = imagery.load_image(image_path)
    target = _target_spec(args, config)
    if target.victim_box is None:
        auto = _auto_victim(image_path, _merged(args, config, "data", None))
        if auto is not None:
            target = evasion.TargetSpec(target.mode, target.class_id, auto)
    epsilon = int(_merged(args, config, "epsilon", 8))
    iterations = int(_merged(args, config, "iterations", 1))
    example = evasion.fgsm(model, image, target, epsilon, iterations)
    out = _out_dir(_merged(args, config, "out", "attack-fgsm"))
    resolved = {
        "model": str(_merged(args, config, "model", None) or args.model),
        "image": str(image_path),
        "epsilon": epsilon,
        "iterations": iterations,
        "mode": target.mode,
        "victim_box": list(target.victim_box) if target.victim_box else None,
        "out": str(out),
    }
    _write_attack_artifacts(out, "attack fgsm", resolved, example)
    print(f"changed {example.changed_pixel_count} pixels at epsilon {epsilon}")
    return 0


def _run_ea_attack(args, kind: str) -> int:
    config = _load_config(args.config)
    oracle = _make_oracle(args, config)
    try:
        image_path = _merged(args, config, "image", None) or args.image
        image = imagery.load_image(image_path)
        target = _target_spec(args, config)
        if target.victim_box is None:
            auto = _auto_victim(image_path, _merged(args, config, "data", None))
            if auto is not None:
                target = evasion.TargetSpec(target.mode, target.class_id, auto)
        ea_config = _ea_config(args, config)
        if kind == "ea":
            epsilon = int(_merged(args, config, "epsilon", 8))
            example, outcome = evasion.ea_perturb(oracle, image, target, epsilon, ea_config)
            resolved_extra = {"epsilon": epsilon}
        else:
            n_pixels = int(_merged(args, config, "n_pixels", 50))
            example, outcome = evasion.ea_pixel_limited(
                oracle, image, target, n_pixels, config=ea_config
            )
            resolved_extra = {"n_pixels": n_pixels}
        out = _out_dir(_merged(args, config, "out", f"attack-{kind}"))
        resolved = {
            "image": str(image_path),
            "mode": target.mode,
            "victim_box": list(target.victim_box) if target.victim_box else None,
            "population": ea_config.population,
            "generations": ea_config.generations,
            "mutation_rate": ea_config.mutation_rate,
            "mutation_mode": ea_config.mutation_mode,
            "crossover_prob": ea_config.crossover_prob,
            "elitism": ea_config.elitism,
            "seed": ea_config.seed,
            "out": str(out),
            **resolved_extra,
        }
        _write_attack_artifacts(out, f"attack {kind}", resolved, example, outcome)
        print(
            f"baseline {outcome.baseline_confidence:.4f} -> post {outcome.post_confidence:.4f} "
            f"success={outcome.success} queries={outcome.oracle_queries}"
        )
        return 0
    finally:
        oracle.close()


def cmd_attack_ea(args) -> int:
    return _run_ea_attack(args, "ea")


def cmd_attack_pixels(args) -> int:
    return _run_ea_attack(args, "pixels")


def cmd_attack_patch(args) -> int:
    config = _load_config(args.config)
    oracle = _make_oracle(args, config)
    try:
        data_root = _merged(args, config, "data", None) or args.data
        dataset = ds.load_dataset(data_root)
        max_scenes = int(_merged(args, config, "scenes", 5))
        scenes = []
        for item in dataset.items:
            if item.annotations:
                box = item.annotations[0].pixel_box(item.image.width, item.image.height)
                scenes.append((item.image, box))
            if len(scenes) == max_scenes:
                break
        ea_config = _ea_config(args, config)
        patch_size = int(_merged(args, config, "patch_size", 12))
        sampler = evasion.PatchSampler(
            alpha_range=(
                float(_merged(args, config, "alpha_min", 0.8)),
                float(_merged(args, config, "alpha_max", 1.0)),
            )
        )
        result = evasion.ea_patch(
            oracle, scenes, patch_size, sampler, ea_config,
            samples_per_scene=int(_merged(args, config, "samples_per_scene", 2)),
            holdout_samples=int(_merged(args, config, "holdout_samples", 4)),
        )
        out = _out_dir(_merged(args, config, "out", "attack-patch"))
        imagery.save_image(result.patch.raster, out / "patch.png")
        meta = {
            "patch_size": patch_size,
            "generations": result.generations,
            "oracle_queries": result.oracle_queries,
            "holdout_mean_confidence": result.holdout_mean_confidence,
            "gen0_holdout_mean_confidence": result.gen0_holdout_mean_confidence,
            "history": list(result.history),
            "outcomes": [
                {
                    "baseline_confidence": o.baseline_confidence,
                    "post_confidence": o.post_confidence,
                    "success": o.success,
                }
                for o in result.outcomes
            ],
        }
        meta_file = out / "patch.json"
        meta_file.write_text(canonical_json(meta), encoding="utf-8")
        resolved = {
            "data": str(data_root),
            "scenes": len(scenes),
            "patch_size": patch_size,
            "population": ea_config.population,
            "generations": ea_config.generations,
            "mutation_rate": ea_config.mutation_rate,
            "crossover_prob": ea_config.crossover_prob,
            "seed": ea_config.seed,
            "out": str(out),
        }
        _write_manifest(out, "attack patch", resolved, [out / "patch.png", meta_file])
        print(
            f"holdout confidence {result.gen0_holdout_mean_confidence:.4f} -> "
            f"{result.holdout_mean_confidence:.4f} over {len(scenes)} scenes"
        )
        return 0
    finally:
        oracle.close()


# --------------------------------------------------------------------------
# simulate

def cmd_simulate(args) -> int:
    config = _load_config(args.config)
    scenario_path = _merged(args, config, "scenario", None) or args.scenario
    scenario = dpm.scenario_from_json(Path(scenario_path).read_text(encoding="utf-8"))
    oracle = _make_oracle(args, config)
    try:
        log = dpm.run_scenario(scenario, oracle)
    finally:
        oracle.close()
    out = _out_dir(_merged(args, config, "out", "simulation"))
    log_file = out / "scenario_log.txt"
    log_file.write_text(dpm.format_scenario_log(log), encoding="utf-8")
    resolved = {"scenario": str(scenario_path), "out": str(out)}
    _write_manifest(out, "simulate", resolved, [log_file])
    print(f"outcome: {log.outcome} after {len(log.records)} ticks")
    return 0


# --------------------------------------------------------------------------
# engage

def cmd_engage_new(args) -> int:
    scope = eng.ScopeRecord(
        objectives=args.objectives or "",
        disclosure_process=args.disclosure or "",
        rules_of_engagement=args.rules or "",
        access_level=args.access or "closed-box",
        schedule=args.schedule or "",
        contacts=args.contacts or "",
    )
    plan = eng.new_engagement(scope)
    out = Path(args.out or "engagement_plan.json")
    out.write_text(eng.plan_to_json(plan), encoding="utf-8")
    print(f"created {plan.engagement_id} with {len(plan.items)} checklist items")
    return 0


def _load_plan(path: str) -> eng.EngagementPlan:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ToolkitError(f"cannot read plan {path}: {exc}") from exc
    return eng.plan_from_json(text)


def cmd_engage_item(args) -> int:
    plan = _load_plan(args.plan)
    ids = [i.strip() for i in args.id.split(",") if i.strip()]
    for item_id in ids:
        eng.set_item_status(plan, item_id, args.status, args.reason)
    Path(args.plan).write_text(eng.plan_to_json(plan), encoding="utf-8")
    print(f"updated {len(ids)} item(s)")
    return 0


def cmd_engage_finding(args) -> int:
    plan = _load_plan(args.plan)
    plan, finding = eng.record_finding(
        plan,
        title=args.title,
        component=args.component or "unspecified",
        attack_kind=args.attack_kind or "unspecified",
        likelihood=args.likelihood,
        impact=args.impact,
        linked_items=tuple(i.strip() for i in (args.items or "").split(",") if i.strip()),
        evidence=tuple(args.evidence or ()),
        mitigations=tuple(i.strip() for i in (args.mitigations or "").split(",") if i.strip()),
        details=args.details or "",
    )
    Path(args.plan).write_text(eng.plan_to_json(plan), encoding="utf-8")
    print(f"recorded {finding.id} at risk {finding.risk}")
    return 0


def cmd_engage_report(args) -> int:
    plan = _load_plan(args.plan)
    document = eng.render_report(plan, args.format)
    if args.out:
        Path(args.out).write_text(document, encoding="utf-8")
    else:
        sys.stdout.write(document)
    return 0


# --------------------------------------------------------------------------
# oracle

def cmd_oracle_serve_toy(args) -> int:
    model = toydet.load_model(args.model)
    return orc.serve_model(model, sys.stdin, sys.stdout, threshold=args.threshold)


def cmd_oracle_probe(args) -> int:
    handle = orc.spawn_external(args.command, threshold=args.threshold)
    try:
        classes = ", ".join(handle.classes)
        print(f"handshake ok; classes: {classes}")
        probe, _ = ds.generate_synthetic_scene(ds.SceneSpec(vessels=1), seed=1)
        detections = handle.detect(probe)
        print(f"probe image produced {len(detections)} detection(s)")
    finally:
        handle.close()
    return 0


# --------------------------------------------------------------------------
# parser

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="redtide",
        description="Red-team toolkit for vision-based vessel autonomy.",
    )
    parser.add_argument("--version", action="version", version=f"redtide {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON config file (or a prior run manifest)")

    dataset_p = sub.add_parser("dataset", help="dataset utilities")
    dataset_sub = dataset_p.add_subparsers(dest="subcommand", required=True)
    p = dataset_sub.add_parser("digest", help="hash a dataset directory")
    p.add_argument("root")
    p.add_argument("--out")
    common(p)
    p.set_defaults(func=cmd_dataset_digest)
    p = dataset_sub.add_parser("synth", help="generate a synthetic marine dataset")
    p.add_argument("--out")
    p.add_argument("--count", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--size", type=int)
    p.add_argument("--split")
    common(p)
    p.set_defaults(func=cmd_dataset_synth)

    p = sub.add_parser("train", help="train the toy grid detector")
    p.add_argument("--data")
    p.add_argument("--out")
    p.add_argument("--epochs", type=int)
    p.add_argument("--learning-rate", dest="learning_rate", type=float)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--model-seed", dest="model_seed", type=int)
    p.add_argument("--grid", type=int)
    p.add_argument("--resolution", type=int)
    p.add_argument("--hidden", type=int)
    common(p)
    p.set_defaults(func=cmd_train)

    poison_p = sub.add_parser("poison", help="poisoning attacks")
    poison_sub = poison_p.add_subparsers(dest="subcommand", required=True)
    p = poison_sub.add_parser("plan", help="plan a poisoning campaign")
    p.add_argument("--data", required=True)
    p.add_argument("--strategy", choices=["backdoor", "label-flip", "chaff", "swap"])
    p.add_argument("--budget", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--target-class", dest="target_class")
    p.add_argument("--source-class", dest="source_class")
    p.add_argument("--chaff-class", dest="chaff_class")
    p.add_argument("--per-item", dest="per_item", type=int)
    p.add_argument("--out")
    common(p)
    p.set_defaults(func=cmd_poison_plan)
    p = poison_sub.add_parser("apply", help="apply a poisoning plan")
    p.add_argument("--data", required=True)
    p.add_argument("--strategy", choices=["backdoor", "label-flip", "chaff", "swap"])
    p.add_argument("--budget", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--target-class", dest="target_class")
    p.add_argument("--source-class", dest="source_class")
    p.add_argument("--chaff-class", dest="chaff_class")
    p.add_argument("--per-item", dest="per_item", type=int)
    p.add_argument("--out")
    common(p)
    p.set_defaults(func=cmd_poison_apply)
    p = poison_sub.add_parser("eval", help="train clean vs poisoned and compare")
    p.add_argument("--clean", required=True)
    p.add_argument("--poisoned", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--epochs", type=int)
    p.add_argument("--learning-rate", dest="learning_rate", type=float)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--model-seed", dest="model_seed", type=int)
    p.add_argument("--eval-seed", dest="eval_seed", type=int)
    p.add_argument("--target-class", dest="target_class")
    p.add_argument("--out")
    common(p)
    p.set_defaults(func=cmd_poison_eval)
    p = poison_sub.add_parser("scan", help="scan a dataset for poisoned items")
    p.add_argument("--data", required=True)
    p.add_argument("--truth")
    p.add_argument("--z-threshold", dest="z_threshold", type=float)
    p.add_argument("--out")
    common(p)
    p.set_defaults(func=cmd_poison_scan)

    attack_p = sub.add_parser("attack", help="evasion attacks")
    attack_sub = attack_p.add_subparsers(dest="subcommand", required=True)

    def attack_common(p, needs_model=True):
        p.add_argument("--image")
        p.add_argument("--data", help="dataset root used to derive the victim box")
        p.add_argument("--model")
        p.add_argument("--oracle-cmd", dest="oracle_cmd")
        p.add_argument("--threshold", type=float)
        p.add_argument("--mode", choices=["suppress", "targeted"])
        p.add_argument("--class-id", dest="class_id", type=int)
        p.add_argument("--victim-box", dest="victim_box", help="x,y,w,h in pixels")
        p.add_argument("--out")
        common(p)

    p = attack_sub.add_parser("fgsm", help="gradient-sign attack (open-box)")
    attack_common(p)
    p.add_argument("--epsilon", type=int)
    p.add_argument("--iterations", type=int)
    p.set_defaults(func=cmd_attack_fgsm)

    def ea_common(p):
        p.add_argument("--preset", help="named preset, e.g. paper-default or paper-patch")
        p.add_argument("--population", type=int)
        p.add_argument("--generations", type=int)
        p.add_argument("--mutation-rate", dest="mutation_rate", type=float)
        p.add_argument("--mutation-mode", dest="mutation_mode",
                       choices=["per_gene", "expected_genes"])
        p.add_argument("--crossover-prob", dest="crossover_prob", type=float)
        p.add_argument("--elitism", type=int)
        p.add_argument("--seed", type=int)

    p = attack_sub.add_parser("ea", help="evolutionary perturbation (closed-box)")
    attack_common(p)
    ea_common(p)
    p.add_argument("--epsilon", type=int)
    p.set_defaults(func=cmd_attack_ea)

    p = attack_sub.add_parser("pixels", help="pixel-budget attack (closed-box)")
    attack_common(p)
    ea_common(p)
    p.add_argument("--n-pixels", dest="n_pixels", type=int)
    p.set_defaults(func=cmd_attack_pixels)

    p = attack_sub.add_parser("patch", help="evolve an adversarial patch (closed-box)")
    p.add_argument("--data", required=True, help="dataset root providing attack scenes")
    p.add_argument("--scenes", type=int)
    p.add_argument("--patch-size", dest="patch_size", type=int)
    p.add_argument("--alpha-min", dest="alpha_min", type=float)
    p.add_argument("--alpha-max", dest="alpha_max", type=float)
    p.add_argument("--samples-per-scene", dest="samples_per_scene", type=int)
    p.add_argument("--holdout-samples", dest="holdout_samples", type=int)
    p.add_argument("--model")
    p.add_argument("--oracle-cmd", dest="oracle_cmd")
    p.add_argument("--threshold", type=float)
    p.add_argument("--out")
    ea_common(p)
    common(p)
    p.set_defaults(func=cmd_attack_patch)

    p = sub.add_parser("simulate", help="run a dropout-protection scenario")
    p.add_argument("--scenario", required=True)
    p.add_argument("--model")
    p.add_argument("--oracle-cmd", dest="oracle_cmd")
    p.add_argument("--threshold", type=float)
    p.add_argument("--out")
    common(p)
    p.set_defaults(func=cmd_simulate)

    engage_p = sub.add_parser("engage", help="engagement checklist and reporting")
    engage_sub = engage_p.add_subparsers(dest="subcommand", required=True)
    p = engage_sub.add_parser("new", help="start an engagement plan")
    p.add_argument("--objectives", required=True)
    p.add_argument("--disclosure", required=True)
    p.add_argument("--rules")
    p.add_argument("--access", choices=["open-box", "closed-box"])
    p.add_argument("--schedule")
    p.add_argument("--contacts")
    p.add_argument("--out")
    p.set_defaults(func=cmd_engage_new)
    p = engage_sub.add_parser("item", help="update checklist item status")
    p.add_argument("--plan", required=True)
    p.add_argument("--id", required=True, help="item id or comma-separated ids")
    p.add_argument("--status", required=True,
                   choices=["open", "done", "not_applicable", "blocked"])
    p.add_argument("--reason")
    p.set_defaults(func=cmd_engage_item)
    p = engage_sub.add_parser("finding", help="record a finding")
    p.add_argument("--plan", required=True)
    p.add_argument("--title", required=True)
    p.add_argument("--component")
    p.add_argument("--attack-kind", dest="attack_kind")
    p.add_argument("--likelihood", required=True, choices=["low", "medium", "high"])
    p.add_argument("--impact", required=True, choices=["low", "medium", "high"])
    p.add_argument("--items", help="comma-separated checklist item ids")
    p.add_argument("--evidence", action="append")
    p.add_argument("--mitigations", help="comma-separated principle ids")
    p.add_argument("--details")
    p.set_defaults(func=cmd_engage_finding)
    p = engage_sub.add_parser("report", help="render the engagement report")
    p.add_argument("--plan", required=True)
    p.add_argument("--format", choices=["markdown", "canonical"], default="markdown")
    p.add_argument("--out")
    p.set_defaults(func=cmd_engage_report)

    oracle_p = sub.add_parser("oracle", help="detector oracles")
    oracle_sub = oracle_p.add_subparsers(dest="subcommand", required=True)
    p = oracle_sub.add_parser("serve-toy", help="serve a toy model over the wire protocol")
    p.add_argument("--model", required=True)
    p.add_argument("--threshold", type=float, default=0.0)
    p.set_defaults(func=cmd_oracle_serve_toy)
    p = oracle_sub.add_parser("probe", help="handshake with an external oracle")
    p.add_argument("--command", required=True)
    p.add_argument("--threshold", type=float, default=orc.DEFAULT_THRESHOLD)
    p.set_defaults(func=cmd_oracle_probe)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ToolkitError as exc:
        print(f"{ERROR_PREFIX} {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
