"""Poisoning attack engine and poisoned-data scanning.

Strategies: label flipping, chaff annotation injection, targeted class
swaps, and backdoor trigger compositing (labels rewritten to the target
class, trigger blended at seeded random opacity/scale/placement). The
poisoning objective is evaluated empirically by training one model on
the clean set and one on the poisoned set with identical seeds and
comparing clean-test accuracy and trigger success.

The scanner is a deliberately simple, documented stand-in: joint color
histograms, distance to the class-group medoid, robust z-score flagging.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .canonical import canonical_json, sha256_hex
from .dataset import Annotation, Dataset, DatasetItem, format_annotation
from .errors import PoisonError
from .evasion import match_detection
from .imagery import Image, Patch, PatchTransform, apply_patch, encode_ppm
from .toydet import LossValue, ToyDetectorModel, TrainConfig, forward, loss, train

DEFAULT_DETECT_THRESHOLD = 0.3

# Default backdoor trigger: a fixed high-saturation multi-square flag.
# Palette deliberately avoids hues close to scene content (buoy orange,
# superstructure white) so the trigger itself does not mimic objects.
_TRIGGER_COLORS = (
    (255, 0, 0), (0, 255, 0), (0, 0, 255),
    (255, 255, 0), (255, 0, 255), (0, 255, 255),
    (128, 255, 0), (0, 128, 255), (128, 0, 255),
)
TRIGGER_BLOCK = 4  # pixels per color square
DEFAULT_ALPHA_RANGE = (0.8, 1.0)
DEFAULT_SCALE_RANGE = (0.15, 0.3)  # fraction of target-image width


def default_trigger_raster() -> Image:
    side = TRIGGER_BLOCK * 3
    arr = np.zeros((side, side, 3), dtype=np.uint8)
    for i, color in enumerate(_TRIGGER_COLORS):
        r, c = divmod(i, 3)
        arr[
            r * TRIGGER_BLOCK : (r + 1) * TRIGGER_BLOCK,
            c * TRIGGER_BLOCK : (c + 1) * TRIGGER_BLOCK,
        ] = color
    return Image(arr)


# --------------------------------------------------------------------------
# Strategies.

@dataclass(frozen=True)
class LabelFlipSpec:
    kind = "label_flip"


@dataclass(frozen=True)
class ChaffSpec:
    kind = "chaff_injection"
    class_name: str = "vessel"
    per_item: int = 2


@dataclass(frozen=True)
class TargetedSwapSpec:
    kind = "targeted_swap"
    source_class: str = "vessel"
    target_class: str = "buoy"


@dataclass(frozen=True)
class BackdoorSpec:
    kind = "backdoor"
    target_class: str = "trigger"  # may be new or an existing class
    alpha_range: tuple[float, float] = DEFAULT_ALPHA_RANGE
    scale_range: tuple[float, float] = DEFAULT_SCALE_RANGE
    placement: str = "on_object"  # or "random"
    trigger: Image | None = None  # defaults to the shipped flag raster

    def trigger_raster(self) -> Image:
        return self.trigger if self.trigger is not None else default_trigger_raster()


Strategy = LabelFlipSpec | ChaffSpec | TargetedSwapSpec | BackdoorSpec


@dataclass(frozen=True)
class PoisonPlan:
    strategy: Strategy
    budget: float
    seed: int
    n_items: int
    selected: tuple[int, ...]

    def to_json(self) -> str:
        obj = {
            "strategy": self.strategy.kind,
            "params": _strategy_params(self.strategy),
            "budget": self.budget,
            "seed": self.seed,
            "n_items": self.n_items,
            "selected": list(self.selected),
        }
        return canonical_json(obj)


def _strategy_params(strategy: Strategy) -> dict:
    if isinstance(strategy, LabelFlipSpec):
        return {}
    if isinstance(strategy, ChaffSpec):
        return {"class_name": strategy.class_name, "per_item": strategy.per_item}
    if isinstance(strategy, TargetedSwapSpec):
        return {"source_class": strategy.source_class, "target_class": strategy.target_class}
    return {
        "target_class": strategy.target_class,
        "alpha_range": list(strategy.alpha_range),
        "scale_range": list(strategy.scale_range),
        "placement": strategy.placement,
        "trigger_digest": sha256_hex(encode_ppm(strategy.trigger_raster())),
    }


def budget_count(budget: float, n: int) -> int:
    """Items to poison: max(1, floor(budget * n)) for budget in (0, 1]."""
    return max(1, math.floor(budget * n))


def plan_poison(dataset: Dataset, strategy: Strategy, budget: float, seed: int) -> PoisonPlan:
    """Deterministic selection of poisoned items from (seed, N, budget)."""
    n = len(dataset)
    if n == 0:
        raise PoisonError("cannot plan poisoning for an empty dataset")
    if not (0.0 < budget <= 1.0):
        raise PoisonError(f"budget must be in (0, 1], got {budget}")
    _validate_strategy(dataset, strategy)
    k = budget_count(budget, n)
    rng = np.random.default_rng(seed)
    selected = tuple(sorted(int(i) for i in rng.permutation(n)[:k]))
    return PoisonPlan(strategy=strategy, budget=budget, seed=seed, n_items=n, selected=selected)


def _validate_strategy(dataset: Dataset, strategy: Strategy) -> None:
    names = dataset.class_names
    if isinstance(strategy, LabelFlipSpec) and len(names) < 2:
        raise PoisonError("label flipping needs at least 2 classes")
    if isinstance(strategy, ChaffSpec) and strategy.class_name not in names:
        raise PoisonError(f"chaff class {strategy.class_name!r} not in {names}")
    if isinstance(strategy, TargetedSwapSpec):
        if strategy.source_class not in names:
            raise PoisonError(f"swap source class {strategy.source_class!r} not in {names}")
        if strategy.target_class not in names:
            raise PoisonError(f"swap target class {strategy.target_class!r} not in {names}")
    # a backdoor target class may be new; nothing to validate here


# --------------------------------------------------------------------------
# Application.

@dataclass(frozen=True)
class ChangeRecord:
    index: int
    path: str
    kind: str
    transform: dict | None
    old_labels: tuple[str, ...]
    new_labels: tuple[str, ...]


@dataclass(frozen=True)
class ChangeManifest:
    records: tuple[ChangeRecord, ...]

    def to_json(self) -> str:
        return canonical_json(
            [
                {
                    "index": r.index,
                    "path": r.path,
                    "kind": r.kind,
                    "transform": r.transform,
                    "old_labels": list(r.old_labels),
                    "new_labels": list(r.new_labels),
                }
                for r in self.records
            ]
        )


def _item_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence((seed, index)))


def composite_trigger(
    image: Image,
    spec: BackdoorSpec,
    rng: np.random.Generator,
    annotations: tuple[Annotation, ...] = (),
) -> tuple[Image, dict]:
    """Blend the trigger into ``image`` with randomized transform draws."""
    raster = spec.trigger_raster()
    alpha = float(rng.uniform(*spec.alpha_range))
    fraction = float(rng.uniform(*spec.scale_range))
    scale = max(fraction * image.width / raster.width, 1.0 / min(raster.width, raster.height))
    rotation = int((0, 90, 180, 270)[rng.integers(0, 4)])
    out_w = max(1, int(np.floor(raster.width * scale + 0.5)))
    out_h = max(1, int(np.floor(raster.height * scale + 0.5)))
    if rotation in (90, 270):
        out_w, out_h = out_h, out_w
    if spec.placement == "on_object" and annotations:
        # worn on the object: anchor within the central half of the box so
        # the trigger overlaps the cell that carries the object's label
        ann = annotations[int(rng.integers(0, len(annotations)))]
        bx, by, bw, bh = ann.pixel_box(image.width, image.height)
        cx = float(rng.uniform(bx + 0.25 * bw, bx + 0.75 * bw))
        cy = float(rng.uniform(by + 0.25 * bh, by + 0.75 * bh))
    else:
        cx = float(rng.uniform(0, image.width))
        cy = float(rng.uniform(0, image.height))
    x = int(np.clip(np.floor(cx - out_w / 2.0), -out_w + 1, image.width - 1))
    y = int(np.clip(np.floor(cy - out_h / 2.0), -out_h + 1, image.height - 1))
    transform = PatchTransform(location=(x, y), rotation=rotation, scale=scale)
    patched = apply_patch(image, Patch(raster, alpha=alpha), transform)
    record = {
        "alpha": alpha,
        "scale": scale,
        "rotation": rotation,
        "location": [x, y],
    }
    return patched, record


def apply_poison(dataset: Dataset, plan: PoisonPlan) -> tuple[Dataset, ChangeManifest]:
    """Fresh poisoned copy of the dataset plus the audit manifest.

    Only the planned items change; a test split is never poisoned.
    """
    if dataset.split == "test":
        raise PoisonError("refusing to poison a test split")
    if plan.n_items != len(dataset):
        raise PoisonError(
            f"plan was built for {plan.n_items} items, dataset has {len(dataset)}"
        )
    strategy = plan.strategy
    class_names = dataset.class_names
    if isinstance(strategy, BackdoorSpec) and strategy.target_class not in class_names:
        class_names = class_names + (strategy.target_class,)
    selected = set(plan.selected)
    items: list[DatasetItem] = []
    records: list[ChangeRecord] = []
    for index, item in enumerate(dataset.items):
        if index not in selected:
            items.append(item)
            continue
        rng = _item_rng(plan.seed, index)
        old_labels = tuple(format_annotation(a) for a in item.annotations)
        transform = None
        image = item.image
        if isinstance(strategy, LabelFlipSpec):
            n_cls = len(dataset.class_names)
            annotations = tuple(
                replace(a, class_id=int((a.class_id + 1 + rng.integers(0, n_cls - 1)) % n_cls))
                for a in item.annotations
            )
        elif isinstance(strategy, ChaffSpec):
            chaff_id = dataset.class_names.index(strategy.class_name)
            extra = tuple(
                Annotation(
                    chaff_id,
                    float(rng.uniform(0.15, 0.85)),
                    float(rng.uniform(0.15, 0.85)),
                    float(rng.uniform(0.1, 0.3)),
                    float(rng.uniform(0.1, 0.3)),
                )
                for _ in range(strategy.per_item)
            )
            annotations = item.annotations + extra
        elif isinstance(strategy, TargetedSwapSpec):
            src = dataset.class_names.index(strategy.source_class)
            dst = dataset.class_names.index(strategy.target_class)
            annotations = tuple(
                replace(a, class_id=dst) if a.class_id == src else a for a in item.annotations
            )
        elif isinstance(strategy, BackdoorSpec):
            image, transform = composite_trigger(image, strategy, rng, item.annotations)
            target_id = class_names.index(strategy.target_class)
            annotations = tuple(replace(a, class_id=target_id) for a in item.annotations)
        else:  # pragma: no cover - exhaustive strategies
            raise PoisonError(f"unknown strategy {strategy!r}")
        items.append(DatasetItem(item.path, image, annotations))
        records.append(
            ChangeRecord(
                index=index,
                path=item.path,
                kind=strategy.kind,
                transform=transform,
                old_labels=old_labels,
                new_labels=tuple(format_annotation(a) for a in annotations),
            )
        )
    poisoned = Dataset(
        class_names=class_names, items=tuple(items), split=dataset.split, root=None
    )
    return poisoned, ChangeManifest(tuple(records))


# --------------------------------------------------------------------------
# Empirical evaluation of the poisoning objective.

@dataclass(frozen=True)
class PoisonReport:
    clean_metric_baseline: float
    clean_metric_poisoned: float
    trigger_success_rate: float | None  # None when no triggered image existed
    triggered_total: int
    outer_objective: LossValue

    def __post_init__(self) -> None:
        for rate in (self.clean_metric_baseline, self.clean_metric_poisoned):
            if not (0.0 <= rate <= 1.0):
                raise PoisonError(f"metric {rate} outside [0, 1]")
        if self.trigger_success_rate is not None and not (0.0 <= self.trigger_success_rate <= 1.0):
            raise PoisonError(f"trigger success rate {self.trigger_success_rate} outside [0, 1]")


def detection_accuracy(
    model: ToyDetectorModel, dataset: Dataset, threshold: float = DEFAULT_DETECT_THRESHOLD
) -> float:
    """Fraction of ground-truth objects matched by a correct-class detection."""
    total = hits = 0
    for item in dataset.items:
        dets = forward(model, item.image, threshold=threshold)
        for ann in item.annotations:
            total += 1
            matched = match_detection(dets, ann.pixel_box(item.image.width, item.image.height))
            if matched is not None and matched.class_id == ann.class_id:
                hits += 1
    return hits / total if total else 1.0


def evaluate_poison(
    clean_train: Dataset,
    poisoned_train: Dataset,
    test_set: Dataset,
    backdoor: BackdoorSpec | None,
    train_config: TrainConfig,
    *,
    model_seed: int = 0,
    threshold: float = DEFAULT_DETECT_THRESHOLD,
    eval_seed: int = 0,
    grid: int = 8,
    resolution: int = 64,
    hidden: int = 32,
) -> PoisonReport:
    """Train clean and poisoned models with identical seeds and score both.

    The trigger success rate counts triggered test objects that are no
    longer detected as their true class by the poisoned model.
    """
    if len(clean_train) != len(poisoned_train):
        raise PoisonError("clean and poisoned train sets must have the same size")
    clean_model0 = ToyDetectorModel.initialize(
        clean_train.class_names, grid=grid, resolution=resolution, hidden=hidden, seed=model_seed
    )
    poisoned_model0 = ToyDetectorModel.initialize(
        poisoned_train.class_names, grid=grid, resolution=resolution, hidden=hidden, seed=model_seed
    )
    clean_model, _ = train(clean_model0, clean_train, train_config)
    poisoned_model, _ = train(poisoned_model0, poisoned_train, train_config)

    baseline_acc = detection_accuracy(clean_model, test_set, threshold)
    poisoned_acc = detection_accuracy(poisoned_model, test_set, threshold)

    triggered = successes = 0
    if backdoor is not None:
        for index, item in enumerate(test_set.items):
            if not item.annotations:
                continue
            rng = _item_rng(eval_seed, index)
            victim = item.annotations[int(rng.integers(0, len(item.annotations)))]
            patched, _ = composite_trigger(item.image, backdoor, rng, (victim,))
            triggered += 1
            dets = forward(poisoned_model, patched, threshold=threshold)
            matched = match_detection(
                dets, victim.pixel_box(item.image.width, item.image.height)
            )
            if matched is None or matched.class_id != victim.class_id:
                successes += 1

    totals = [loss(poisoned_model, item.image, list(item.annotations)) for item in test_set.items]
    outer = LossValue(
        objectness=float(np.mean([v.objectness for v in totals])),
        classification=float(np.mean([v.classification for v in totals])),
    )
    return PoisonReport(
        clean_metric_baseline=baseline_acc,
        clean_metric_poisoned=poisoned_acc,
        trigger_success_rate=(successes / triggered) if triggered else None,
        triggered_total=triggered,
        outer_objective=outer,
    )


# --------------------------------------------------------------------------
# Poisoned-data scanning.

@dataclass(frozen=True)
class ScanConfig:
    histogram_bins: int = 4  # per channel, joint histogram
    z_threshold: float = 2.0
    min_group: int = 3  # class groups smaller than this fall back to global


@dataclass(frozen=True)
class PoisonScanResult:
    flagged: tuple[int, ...]
    scores: tuple[float, ...]
    precision: float | None
    recall: float | None


def _color_histogram(image: Image, bins: int) -> np.ndarray:
    idx = (image.pixels.astype(np.int64) * bins) // 256
    flat = (idx[:, :, 0] * bins + idx[:, :, 1]) * bins + idx[:, :, 2]
    hist = np.bincount(flat.ravel(), minlength=bins**3).astype(np.float64)
    return hist / hist.sum()


def confusion_metrics(
    flagged: set[int], truth: set[int]
) -> tuple[float | None, float | None]:
    tp = len(flagged & truth)
    fp = len(flagged - truth)
    fn = len(truth - flagged)
    precision = tp / (tp + fp) if (tp + fp) > 0 else None
    recall = tp / (tp + fn) if (tp + fn) > 0 else None
    return precision, recall


def scan_for_poison(
    dataset: Dataset,
    ground_truth: tuple[int, ...] | None = None,
    config: ScanConfig = ScanConfig(),
) -> PoisonScanResult:
    """Flag color-histogram outliers relative to their class-group medoid.

    Scores are robust z-scores (median/MAD) of each item's L1 distance to
    its group medoid, clipped at zero. With ground truth, precision and
    recall use the exact confusion formulas.
    """
    if len(dataset) == 0:
        raise PoisonError("cannot scan an empty dataset")
    hists = [_color_histogram(item.image, config.histogram_bins) for item in dataset.items]
    signatures = [tuple(sorted({a.class_id for a in item.annotations})) for item in dataset.items]
    groups: dict[tuple, list[int]] = {}
    for i, sig in enumerate(signatures):
        groups.setdefault(sig, []).append(i)
    all_indices = list(range(len(dataset)))
    distances = np.zeros(len(dataset))
    for sig, members in groups.items():
        pool = members if len(members) >= config.min_group else all_indices
        stack = np.stack([hists[i] for i in pool])
        pairwise = np.abs(stack[:, None, :] - stack[None, :, :]).sum(axis=2)
        medoid_pool_idx = int(np.argmin(pairwise.sum(axis=1)))
        medoid = stack[medoid_pool_idx]
        for i in members:
            distances[i] = float(np.abs(hists[i] - medoid).sum())
    median = float(np.median(distances))
    mad = float(np.median(np.abs(distances - median)))
    if mad < 1e-15:
        z = np.zeros(len(dataset))
    else:
        z = (distances - median) / (1.4826 * mad)
    scores = tuple(float(max(v, 0.0)) for v in z)
    flagged = tuple(i for i, v in enumerate(z) if v > config.z_threshold)
    precision = recall = None
    if ground_truth is not None:
        precision, recall = confusion_metrics(set(flagged), set(ground_truth))
    return PoisonScanResult(flagged=flagged, scores=scores, precision=precision, recall=recall)
