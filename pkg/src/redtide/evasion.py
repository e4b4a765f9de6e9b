"""Evasion attack generators and attack-success scoring.

Four attacks against a detector oracle:

* :func:`fgsm` -- open-box single/multi-step gradient-sign perturbation,
* :func:`ea_perturb` -- closed-box evolutionary per-pixel perturbation
  bounded in max-norm,
* :func:`ea_pixel_limited` -- closed-box attack restricted to ``n`` pixels,
* :func:`ea_patch` -- closed-box patch synthesis over a distribution of
  placements (expectation over location/rotation/scale/opacity draws).

All evolutionary attacks share one engine: rank-based selection with
elitism, two-point crossover, and per-gene mutation. With at least one
elite the best fitness never worsens, elites are never re-queried, and a
fixed seed reproduces runs bit-exactly against the toy oracle.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import AttackError, OracleError
from .imagery import Image, Patch, PatchTransform, apply_patch
from .toydet import ToyDetectorModel, grad_input

MATCH_MIN_OVERLAP = 0.25


# --------------------------------------------------------------------------
# Victim matching.

def overlap_coefficient(a, b) -> float:
    """Intersection area over the smaller box area; boxes are (x, y, w, h)."""
    ax, ay, aw, ah = a
    bx, by, bw, bh = b
    if aw <= 0 or ah <= 0 or bw <= 0 or bh <= 0:
        return 0.0
    ix = min(ax + aw, bx + bw) - max(ax, bx)
    iy = min(ay + ah, by + bh) - max(ay, by)
    if ix <= 0 or iy <= 0:
        return 0.0
    return (ix * iy) / min(aw * ah, bw * bh)


def match_detection(detections, victim_box, min_overlap: float = MATCH_MIN_OVERLAP):
    """Detection with the highest overlap >= ``min_overlap``; ties go to
    the higher confidence. Returns None when nothing matches."""
    best = None
    best_key = (0.0, 0.0)
    for d in detections:
        ov = overlap_coefficient(d.box, victim_box)
        if ov < min_overlap:
            continue
        key = (ov, d.confidence)
        if key > best_key:
            best, best_key = d, key
    return best


@dataclass(frozen=True)
class TargetSpec:
    """What the attack drives the detector toward.

    ``suppress`` drives the matched detection's confidence down;
    ``targeted`` drives the matched region toward ``class_id``. The victim
    box anchors the attacked cells; without one, every cell is attacked.
    """

    mode: str = "suppress"
    class_id: int | None = None
    victim_box: tuple[float, float, float, float] | None = None

    def __post_init__(self) -> None:
        if self.mode not in ("suppress", "targeted"):
            raise AttackError(f"target mode must be suppress or targeted, got {self.mode!r}")
        if self.mode == "targeted" and self.class_id is None:
            raise AttackError("targeted mode requires a class_id")


def _target_positives(model: ToyDetectorModel, image: Image, target: TargetSpec):
    """Label configuration for the attack loss: every grid cell whose
    extent overlaps the victim box is positive (all cells if no box)."""
    if target.class_id is not None and target.class_id >= model.n_classes:
        raise AttackError(
            f"target class {target.class_id} out of range for {model.n_classes}-class model"
        )
    s = model.grid
    cw, ch = image.width / s, image.height / s
    cells = []
    for cell in range(s * s):
        if target.victim_box is not None:
            row, col = divmod(cell, s)
            cell_box = (col * cw, row * ch, cw, ch)
            if overlap_coefficient(cell_box, target.victim_box) <= 0.0:
                continue
        cells.append((cell, target.class_id))
    return cells


# --------------------------------------------------------------------------
# Attack artifacts and outcomes.

@dataclass(frozen=True)
class AdversarialExample:
    base: Image
    adversarial: Image
    kind: str
    epsilon: int | None = None

    def __post_init__(self) -> None:
        if self.epsilon is not None:
            delta = np.abs(
                self.adversarial.pixels.astype(np.int64) - self.base.pixels.astype(np.int64)
            )
            if delta.max(initial=0) > self.epsilon:
                raise AttackError(
                    f"max-norm violation: |delta| {delta.max()} exceeds epsilon {self.epsilon}"
                )

    @property
    def changed_pixel_count(self) -> int:
        return int(np.any(self.adversarial.pixels != self.base.pixels, axis=2).sum())

    def diff_mask(self) -> np.ndarray:
        return np.any(self.adversarial.pixels != self.base.pixels, axis=2)


@dataclass(frozen=True)
class EvasionOutcome:
    baseline_confidence: float
    post_confidence: float
    success: bool
    generations_used: int = 0
    oracle_queries: int = 0
    error: str | None = None


# --------------------------------------------------------------------------
# FGSM.

def fgsm(
    model: ToyDetectorModel,
    image: Image,
    target: TargetSpec,
    epsilon: int,
    iterations: int = 1,
) -> AdversarialExample:
    """Gradient-sign perturbation with a max-norm budget in 1/255 units.

    Targeted mode steps against the gradient (descending the loss toward
    the target labels); suppress mode steps along it. ``epsilon`` of zero
    is the identity; multi-step runs split the budget evenly and project
    back into the epsilon ball every step.
    """
    if epsilon < 0:
        raise AttackError(f"epsilon must be non-negative, got {epsilon}")
    if iterations < 1:
        raise AttackError(f"iterations must be >= 1, got {iterations}")
    if epsilon == 0:
        return AdversarialExample(image, Image(np.array(image.pixels)), kind="fgsm", epsilon=0)
    positives = _target_positives(model, image, target)
    sign = -1.0 if target.mode == "targeted" else 1.0
    base = image.pixels.astype(np.float64)
    current = base.copy()
    step = epsilon / iterations
    for _ in range(iterations):
        quantized = Image(np.clip(np.floor(current + 0.5), 0, 255).astype(np.uint8))
        grad = grad_input(model, quantized, [], positives=positives)
        current = current + sign * step * np.sign(grad)
        current = np.clip(current, base - epsilon, base + epsilon)
        current = np.clip(current, 0.0, 255.0)
    adv = np.clip(np.floor(current + 0.5), 0, 255).astype(np.uint8)
    adv = np.clip(
        adv.astype(np.int64),
        base.astype(np.int64) - epsilon,
        base.astype(np.int64) + epsilon,
    ).astype(np.uint8)
    return AdversarialExample(image, Image(adv), kind="fgsm", epsilon=epsilon)


# --------------------------------------------------------------------------
# Shared evolutionary engine. Genomes are (n_genes, gene_width) integer
# arrays; crossover cuts between genes, mutation redraws whole genes.

@dataclass(frozen=True)
class EAConfig:
    population: int = 10
    generations: int = 50
    mutation_rate: float = 0.5
    mutation_mode: str = "per_gene"  # or "expected_genes"
    crossover_prob: float = 0.5
    crossover: str = "two_point"
    elitism: int = 1
    seed: int = 0

    def __post_init__(self) -> None:
        if self.population < 2:
            raise AttackError("population must be >= 2")
        if self.generations < 1:
            raise AttackError("generations must be >= 1")
        if self.mutation_rate < 0:
            raise AttackError("mutation rate must be >= 0")
        if not (0.0 <= self.crossover_prob <= 1.0):
            raise AttackError("crossover probability must be in [0, 1]")
        if self.crossover != "two_point":
            raise AttackError(f"unsupported crossover {self.crossover!r}")
        if self.mutation_mode not in ("per_gene", "expected_genes"):
            raise AttackError(f"unsupported mutation mode {self.mutation_mode!r}")
        if not (1 <= self.elitism < self.population):
            raise AttackError("elitism must be >= 1 and below the population size")


# Stock presets exposed on the CLI. "paper-default" mutates each gene
# with probability 0.5; "paper-patch" mutates 3 genes per offspring in
# expectation (rate / genome length per gene).
EA_PRESETS: dict[str, EAConfig] = {
    "paper-default": EAConfig(
        population=10, generations=50, mutation_rate=0.5, mutation_mode="per_gene",
        crossover_prob=0.5, elitism=1,
    ),
    "paper-patch": EAConfig(
        population=20, generations=100, mutation_rate=3.0, mutation_mode="expected_genes",
        crossover_prob=0.5, elitism=1,
    ),
}


def _gene_probability(config: EAConfig, n_genes: int) -> float:
    if config.mutation_mode == "per_gene":
        return min(config.mutation_rate, 1.0)
    return min(config.mutation_rate / max(n_genes, 1), 1.0)


def _two_point(rng: np.random.Generator, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    n = a.shape[0]
    i, j = sorted(int(x) for x in rng.integers(0, n + 1, size=2))
    child = a.copy()
    child[i:j] = b[i:j]
    return child


def _tournament(rng: np.random.Generator, fitness: list[float]) -> int:
    i, j = (int(x) for x in rng.integers(0, len(fitness), size=2))
    return i if fitness[i] <= fitness[j] else j


@dataclass
class _EAResult:
    best_genome: np.ndarray
    best_fitness: float
    best_aux: object
    history: list[float]
    generations: int
    gen0_best_genome: np.ndarray
    first_individual_fitness: float
    first_individual_aux: object
    error: str | None


def _run_ea(config: EAConfig, init_genome, redraw_genes, evaluate, succeeded) -> _EAResult:
    """Minimize ``evaluate(genome) -> (fitness, aux)`` with elitism.

    ``init_genome(rng, index)`` builds the initial population,
    ``redraw_genes(rng, genome, mask)`` mutates the masked genes in place.
    Stops early as soon as ``succeeded(fitness, aux)`` holds for the best.
    """
    rng = np.random.default_rng(config.seed)
    population = [init_genome(rng, i) for i in range(config.population)]
    fitness: list[float] = []
    aux: list[object] = []
    error = None
    history: list[float] = []
    generations_done = 0
    gen0_best = None
    first_fitness, first_aux = float("nan"), None
    try:
        for genome in population:
            f, a = evaluate(genome)
            fitness.append(f)
            aux.append(a)
            if len(fitness) == 1:
                first_fitness, first_aux = f, a
        generations_done = 1
        order = sorted(range(len(population)), key=lambda i: (fitness[i], i))
        gen0_best = population[order[0]].copy()
        history.append(fitness[order[0]])
        while generations_done < config.generations:
            best_i = order[0]
            if succeeded(fitness[best_i], aux[best_i]):
                break
            elites = order[: config.elitism]
            new_pop = [population[i] for i in elites]
            new_fit = [fitness[i] for i in elites]
            new_aux = [aux[i] for i in elites]
            for _ in range(config.population - config.elitism):
                p1 = _tournament(rng, fitness)
                p2 = _tournament(rng, fitness)
                if rng.random() < config.crossover_prob:
                    child = _two_point(rng, population[p1], population[p2])
                else:
                    child = population[p1].copy()
                p = _gene_probability(config, child.shape[0])
                mask = rng.random(child.shape[0]) < p
                if mask.any():
                    redraw_genes(rng, child, mask)
                f, a = evaluate(child)
                new_pop.append(child)
                new_fit.append(f)
                new_aux.append(a)
            population, fitness, aux = new_pop, new_fit, new_aux
            generations_done += 1
            order = sorted(range(len(population)), key=lambda i: (fitness[i], i))
            history.append(fitness[order[0]])
    except OracleError as exc:
        error = str(exc)
        if not fitness:
            raise
        order = sorted(range(len(fitness)), key=lambda i: (fitness[i], i))
    best = order[0]
    return _EAResult(
        best_genome=population[best],
        best_fitness=fitness[best],
        best_aux=aux[best],
        history=history,
        generations=generations_done,
        gen0_best_genome=gen0_best if gen0_best is not None else population[best].copy(),
        first_individual_fitness=first_fitness,
        first_individual_aux=first_aux,
        error=error,
    )


def expected_ea_queries(config: EAConfig, generations_evaluated: int, per_evaluation: int = 1) -> int:
    """Exact oracle accounting: a full first generation, then population
    minus elites per later generation (elites are never re-queried)."""
    if generations_evaluated < 1:
        return 0
    later = (generations_evaluated - 1) * (config.population - config.elitism)
    return (config.population + later) * per_evaluation


def _matched_confidence(oracle, image: Image, target: TargetSpec) -> tuple[float, int | None]:
    dets = oracle.detect(image)
    if target.victim_box is None:
        best = max(dets, key=lambda d: d.confidence, default=None)
    else:
        best = match_detection(dets, target.victim_box)
    if best is None:
        return 0.0, None
    return best.confidence, best.class_id


def _fitness_for(oracle, target: TargetSpec):
    """Fitness (minimized) plus matched-class aux for a perturbed image."""

    def value(image: Image) -> tuple[float, tuple[float, int | None]]:
        conf, cls = _matched_confidence(oracle, image, target)
        if target.mode == "suppress":
            return conf, (conf, cls)
        score = conf if cls == target.class_id else 0.0
        return -score, (conf, cls)

    return value


def _success_for(oracle, target: TargetSpec):
    if target.mode == "suppress":
        return lambda fitness, aux: fitness < oracle.threshold
    return lambda fitness, aux: aux[1] == target.class_id and aux[0] >= oracle.threshold


def _post_confidence(target: TargetSpec, fitness: float, aux) -> float:
    return fitness if target.mode == "suppress" else aux[0]


# --------------------------------------------------------------------------
# EA attack: bounded per-pixel perturbation.

def ea_perturb(
    oracle,
    image: Image,
    target: TargetSpec,
    epsilon: int,
    config: EAConfig,
) -> tuple[AdversarialExample, EvasionOutcome]:
    """Evolve per-pixel signed offsets bounded by ``epsilon`` in max-norm.

    Individual 0 of generation 0 carries the zero genome, so its fitness
    is exactly the baseline matched confidence.
    """
    if epsilon <= 0:
        raise AttackError(f"epsilon must be positive, got {epsilon}")
    shape = image.pixels.shape
    n_genes = shape[0] * shape[1] * shape[2]
    base = image.pixels.astype(np.int64).ravel()

    def init(rng: np.random.Generator, index: int) -> np.ndarray:
        if index == 0:
            return np.zeros((n_genes, 1), dtype=np.int64)
        return rng.integers(-epsilon, epsilon + 1, size=(n_genes, 1), dtype=np.int64)

    def redraw(rng: np.random.Generator, genome: np.ndarray, mask: np.ndarray) -> None:
        genome[mask] = rng.integers(-epsilon, epsilon + 1, size=(int(mask.sum()), 1))

    def build(genome: np.ndarray) -> Image:
        adv = np.clip(base + genome[:, 0], 0, 255).astype(np.uint8)
        return Image(adv.reshape(shape))

    fitness_fn = _fitness_for(oracle, target)
    result = _run_ea(
        config,
        init,
        redraw,
        lambda genome: fitness_fn(build(genome)),
        _success_for(oracle, target),
    )
    example = AdversarialExample(image, build(result.best_genome), kind="ea_perturb", epsilon=epsilon)
    # individual 0 carries the zero genome: its matched confidence is the baseline
    baseline = result.first_individual_aux[0] if result.first_individual_aux else 0.0
    outcome = EvasionOutcome(
        baseline_confidence=baseline,
        post_confidence=_post_confidence(target, result.best_fitness, result.best_aux),
        success=_success_for(oracle, target)(result.best_fitness, result.best_aux),
        generations_used=result.generations,
        oracle_queries=expected_ea_queries(config, result.generations),
        error=result.error,
    )
    return example, outcome


# --------------------------------------------------------------------------
# EA attack: pixel-budget perturbation (n pixels, fixed intensity set).

def ea_pixel_limited(
    oracle,
    image: Image,
    target: TargetSpec,
    n_pixels: int = 50,
    intensity_set: tuple[int, ...] = (0, 255),
    config: EAConfig = EA_PRESETS["paper-default"],
) -> tuple[AdversarialExample, EvasionOutcome]:
    """Evolve ``n`` (x, y, r, g, b) tuples; at most ``n`` pixels change.

    ``n_pixels=1`` is the classic one-pixel configuration. Individual 0
    writes original colors back, so its fitness equals the baseline.
    """
    if n_pixels < 1:
        raise AttackError(f"n_pixels must be >= 1, got {n_pixels}")
    if n_pixels > image.width * image.height:
        raise AttackError(
            f"n_pixels {n_pixels} exceeds the {image.width * image.height}-pixel image"
        )
    intensities = np.asarray(sorted(set(int(v) for v in intensity_set)), dtype=np.int64)
    if intensities.size == 0 or intensities.min() < 0 or intensities.max() > 255:
        raise AttackError("intensity set must contain values in [0, 255]")
    pixels = image.pixels

    def random_gene(rng: np.random.Generator, count: int) -> np.ndarray:
        xs = rng.integers(0, image.width, size=count)
        ys = rng.integers(0, image.height, size=count)
        colors = intensities[rng.integers(0, intensities.size, size=(count, 3))]
        return np.column_stack([xs, ys, colors]).astype(np.int64)

    def init(rng: np.random.Generator, index: int) -> np.ndarray:
        if index == 0:
            xs = rng.integers(0, image.width, size=n_pixels)
            ys = rng.integers(0, image.height, size=n_pixels)
            colors = pixels[ys, xs].astype(np.int64)  # identity: original colors
            return np.column_stack([xs, ys, colors]).astype(np.int64)
        return random_gene(rng, n_pixels)

    def redraw(rng: np.random.Generator, genome: np.ndarray, mask: np.ndarray) -> None:
        genome[mask] = random_gene(rng, int(mask.sum()))

    def build(genome: np.ndarray) -> Image:
        adv = np.array(pixels, copy=True)
        adv[genome[:, 1], genome[:, 0]] = genome[:, 2:5].astype(np.uint8)
        return Image(adv)

    fitness_fn = _fitness_for(oracle, target)
    result = _run_ea(
        config,
        init,
        redraw,
        lambda genome: fitness_fn(build(genome)),
        _success_for(oracle, target),
    )
    example = AdversarialExample(image, build(result.best_genome), kind="ea_pixels")
    if example.changed_pixel_count > n_pixels:
        raise AttackError("pixel budget violated")  # unreachable by construction
    baseline = result.first_individual_aux[0] if result.first_individual_aux else 0.0
    outcome = EvasionOutcome(
        baseline_confidence=baseline,
        post_confidence=_post_confidence(target, result.best_fitness, result.best_aux),
        success=_success_for(oracle, target)(result.best_fitness, result.best_aux),
        generations_used=result.generations,
        oracle_queries=expected_ea_queries(config, result.generations),
        error=result.error,
    )
    return example, outcome


# --------------------------------------------------------------------------
# EA attack: adversarial patch over a transform distribution.

@dataclass(frozen=True)
class PatchSampler:
    """Distribution of patch placements: opacity, scale, rotation, and a
    location drawn inside the victim box (or across the whole image)."""

    alpha_range: tuple[float, float] = (0.8, 1.0)
    scale_range: tuple[float, float] = (1.0, 1.0)
    rotations: tuple[int, ...] = (0, 90, 180, 270)
    placement: str = "on_victim"  # or "uniform"

    def draw(
        self, rng: np.random.Generator, scene: Image, victim_box, patch_shape
    ) -> tuple[PatchTransform, float]:
        alpha = float(rng.uniform(*self.alpha_range))
        scale = float(rng.uniform(*self.scale_range))
        rotation = int(self.rotations[rng.integers(0, len(self.rotations))])
        ph = max(1, int(np.floor(patch_shape[0] * scale + 0.5)))
        pw = max(1, int(np.floor(patch_shape[1] * scale + 0.5)))
        if rotation in (90, 270):
            ph, pw = pw, ph
        if self.placement == "on_victim" and victim_box is not None:
            vx, vy, vw, vh = victim_box
            cx = rng.uniform(vx, vx + vw)
            cy = rng.uniform(vy, vy + vh)
        else:
            cx = rng.uniform(0, scene.width)
            cy = rng.uniform(0, scene.height)
        x = int(np.clip(np.floor(cx - pw / 2.0), -pw + 1, scene.width - 1))
        y = int(np.clip(np.floor(cy - ph / 2.0), -ph + 1, scene.height - 1))
        return PatchTransform(location=(x, y), rotation=rotation, scale=scale), alpha


@dataclass(frozen=True)
class PatchAttackResult:
    patch: Patch
    gen0_patch: Patch
    outcomes: tuple[EvasionOutcome, ...]  # per scene, on held-out draws
    history: tuple[float, ...]
    generations: int
    oracle_queries: int
    holdout_mean_confidence: float
    gen0_holdout_mean_confidence: float
    error: str | None = None


def ea_patch(
    oracle,
    scenes,
    patch_size: int,
    sampler: PatchSampler,
    config: EAConfig,
    *,
    samples_per_scene: int = 2,
    holdout_samples: int = 4,
    target_mode: str = "suppress",
) -> PatchAttackResult:
    """Evolve a square patch that suppresses matched detections across
    ``scenes`` (pairs of image and victim box) in expectation over
    placement draws. Fresh transform samples are drawn each generation;
    the returned outcomes are measured on held-out draws.
    """
    scenes = list(scenes)
    if not scenes:
        raise AttackError("patch attack needs at least one scene")
    for image, _box in scenes:
        if patch_size > image.width or patch_size > image.height:
            raise AttackError(
                f"patch size {patch_size} exceeds scene {image.width}x{image.height}"
            )
    if target_mode != "suppress":
        raise AttackError("patch synthesis currently supports suppress mode only")
    n_genes = patch_size * patch_size * 3
    transform_rng = np.random.default_rng(np.random.SeedSequence((config.seed, 0xA11CE)))

    def init(rng: np.random.Generator, index: int) -> np.ndarray:
        return rng.integers(0, 256, size=(n_genes, 1), dtype=np.int64)

    def redraw(rng: np.random.Generator, genome: np.ndarray, mask: np.ndarray) -> None:
        genome[mask] = rng.integers(0, 256, size=(int(mask.sum()), 1))

    def to_patch(genome: np.ndarray, alpha: float) -> Patch:
        raster = genome[:, 0].astype(np.uint8).reshape(patch_size, patch_size, 3)
        return Patch(Image(raster), alpha=alpha)

    queries = 0
    current_draws: list[list[tuple[PatchTransform, float]]] = []

    def refresh_draws() -> None:
        current_draws.clear()
        for image, box in scenes:
            current_draws.append(
                [
                    sampler.draw(transform_rng, image, box, (patch_size, patch_size))
                    for _ in range(samples_per_scene)
                ]
            )

    def mean_confidence(genome: np.ndarray, draws) -> float:
        nonlocal queries
        total = 0.0
        count = 0
        for (image, box), scene_draws in zip(scenes, draws):
            for transform, alpha in scene_draws:
                composited = apply_patch(image, to_patch(genome, alpha), transform)
                dets = oracle.detect(composited)
                queries += 1
                matched = match_detection(dets, box) if box is not None else max(
                    dets, key=lambda d: d.confidence, default=None
                )
                total += matched.confidence if matched else 0.0
                count += 1
        return total / count

    def evaluate(genome: np.ndarray) -> tuple[float, object]:
        return mean_confidence(genome, current_draws), None

    # the engine evaluates strictly generation-by-generation, so fresh
    # transform draws are pulled at the first evaluation of each generation
    eval_count = {"n": 0}

    def counting_evaluate(genome: np.ndarray):
        n = eval_count["n"]
        if n == 0:
            refresh_draws()
        elif n >= config.population:
            if (n - config.population) % (config.population - config.elitism) == 0:
                refresh_draws()
        eval_count["n"] += 1
        return evaluate(genome)

    result = _run_ea(
        config,
        init,
        redraw,
        counting_evaluate,
        lambda fitness, aux: fitness < oracle.threshold,
    )

    # held-out evaluation of the final and generation-0 best patches
    holdout: list[list[tuple[PatchTransform, float]]] = [
        [
            sampler.draw(transform_rng, image, box, (patch_size, patch_size))
            for _ in range(holdout_samples)
        ]
        for image, box in scenes
    ]
    outcomes = []
    final_total = 0.0
    for (image, box), draws in zip(scenes, holdout):
        dets = oracle.detect(image)
        queries += 1
        matched = match_detection(dets, box) if box is not None else max(
            dets, key=lambda d: d.confidence, default=None
        )
        baseline = matched.confidence if matched else 0.0
        confs = []
        for transform, alpha in draws:
            composited = apply_patch(image, to_patch(result.best_genome, alpha), transform)
            post_dets = oracle.detect(composited)
            queries += 1
            post_match = match_detection(post_dets, box) if box is not None else max(
                post_dets, key=lambda d: d.confidence, default=None
            )
            confs.append(post_match.confidence if post_match else 0.0)
        post = float(np.mean(confs))
        final_total += post
        outcomes.append(
            EvasionOutcome(
                baseline_confidence=baseline,
                post_confidence=post,
                success=post < oracle.threshold,
                generations_used=result.generations,
                oracle_queries=len(draws) + 1,
            )
        )
    gen0_total = 0.0
    for (image, box), draws in zip(scenes, holdout):
        confs = []
        for transform, alpha in draws:
            composited = apply_patch(image, to_patch(result.gen0_best_genome, alpha), transform)
            post_dets = oracle.detect(composited)
            queries += 1
            post_match = match_detection(post_dets, box) if box is not None else max(
                post_dets, key=lambda d: d.confidence, default=None
            )
            confs.append(post_match.confidence if post_match else 0.0)
        gen0_total += float(np.mean(confs))

    mean_alpha = float(np.mean(sampler.alpha_range))
    return PatchAttackResult(
        patch=to_patch(result.best_genome, mean_alpha),
        gen0_patch=to_patch(result.gen0_best_genome, mean_alpha),
        outcomes=tuple(outcomes),
        history=tuple(result.history),
        generations=result.generations,
        oracle_queries=queries,
        holdout_mean_confidence=final_total / len(scenes),
        gen0_holdout_mean_confidence=gen0_total / len(scenes),
        error=result.error,
    )


# --------------------------------------------------------------------------
# Attack-success scoring.

def evaluate_evasion(
    oracle, base: Image, attacked: Image, victim_box, target: TargetSpec
) -> EvasionOutcome:
    """Score an attack: query base and attacked images, match the victim
    box, and apply the success rule for the target mode."""
    base_dets = oracle.detect(base)
    post_dets = oracle.detect(attacked)
    base_match = match_detection(base_dets, victim_box)
    post_match = match_detection(post_dets, victim_box)
    baseline = base_match.confidence if base_match else 0.0
    post = post_match.confidence if post_match else 0.0
    if target.mode == "suppress":
        success = post < oracle.threshold
    else:
        success = post_match is not None and post_match.class_id == target.class_id
    return EvasionOutcome(
        baseline_confidence=baseline,
        post_confidence=post,
        success=success,
        generations_used=0,
        oracle_queries=2,
    )
