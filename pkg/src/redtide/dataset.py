"""Detection datasets, tamper-evident digests, and a synthetic scene generator.

Label files use the grid-annotation text format: one object per line,
``class cx cy w h`` with box coordinates normalized to [0, 1] and
serialized at 6 decimals so round-trips are exact. A dataset directory is

    root/
      classes.txt        one class name per line
      images/*.png|*.ppm
      labels/<stem>.txt  optional; a missing file means a negative sample

The synthetic generator renders desk-scale marine scenes (sea, sky,
vessels, buoys) from fixed shape templates so training and attack
calibration run on a stable distribution.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .canonical import sha256_hex
from .errors import DatasetError, ScenePlacementError
from .imagery import Image, load_image, save_image

DIGEST_ALGORITHM = "sha256"

CLASS_VESSEL = 0
CLASS_BUOY = 1
DEFAULT_CLASS_NAMES = ("vessel", "buoy")

SPLITS = ("train", "val", "test")


@dataclass(frozen=True)
class Annotation:
    """One object: class id plus a normalized center-size box."""

    class_id: int
    cx: float
    cy: float
    w: float
    h: float

    def __post_init__(self) -> None:
        if self.class_id < 0:
            raise DatasetError(f"class_id must be non-negative, got {self.class_id}")
        if not (0.0 <= self.cx <= 1.0 and 0.0 <= self.cy <= 1.0):
            raise DatasetError(f"box center out of range: ({self.cx}, {self.cy})")
        if not (0.0 < self.w <= 1.0 and 0.0 < self.h <= 1.0):
            raise DatasetError(f"box size out of range: ({self.w}, {self.h})")

    def pixel_box(self, width: int, height: int) -> tuple[float, float, float, float]:
        """Box as pixel ``(x, y, w, h)`` in an image of the given size."""
        bw, bh = self.w * width, self.h * height
        return (self.cx * width - bw / 2.0, self.cy * height - bh / 2.0, bw, bh)


def parse_annotation(line: str) -> Annotation:
    fields = line.split()
    if len(fields) != 5:
        raise DatasetError(f"expected 5 fields 'class cx cy w h', got {len(fields)}: {line!r}")
    try:
        class_id = int(fields[0])
        cx, cy, w, h = (float(f) for f in fields[1:])
    except ValueError as exc:
        raise DatasetError(f"non-numeric annotation field in {line!r}") from exc
    return Annotation(class_id, cx, cy, w, h)


def format_annotation(a: Annotation) -> str:
    return f"{a.class_id} {a.cx:.6f} {a.cy:.6f} {a.w:.6f} {a.h:.6f}"


@dataclass(frozen=True)
class DatasetItem:
    path: str  # relative image path, e.g. "images/scene_0000.png"
    image: Image
    annotations: tuple[Annotation, ...]


@dataclass(frozen=True)
class Dataset:
    class_names: tuple[str, ...]
    items: tuple[DatasetItem, ...]
    split: str = "train"
    root: Path | None = None

    def __post_init__(self) -> None:
        if self.split not in SPLITS:
            raise DatasetError(f"split must be one of {SPLITS}, got {self.split!r}")
        seen: set[str] = set()
        for item in self.items:
            if item.path in seen:
                raise DatasetError(f"duplicate image path in split: {item.path}")
            seen.add(item.path)
            for a in item.annotations:
                if a.class_id >= len(self.class_names):
                    raise DatasetError(
                        f"{item.path}: class_id {a.class_id} out of range "
                        f"for {len(self.class_names)} classes"
                    )

    def __len__(self) -> int:
        return len(self.items)

    def with_items(self, items: tuple[DatasetItem, ...]) -> "Dataset":
        return replace(self, items=items, root=None)


def _label_path(image_rel: str) -> str:
    stem = Path(image_rel).stem
    return f"labels/{stem}.txt"


def load_dataset(root: str | Path, split: str = "train") -> Dataset:
    """Load a dataset directory; items come back sorted by image path."""
    root = Path(root)
    classes_file = root / "classes.txt"
    if not classes_file.is_file():
        raise DatasetError(f"missing classes.txt in {root}")
    class_names = tuple(
        line.strip() for line in classes_file.read_text(encoding="utf-8").splitlines() if line.strip()
    )
    if not class_names:
        raise DatasetError(f"classes.txt in {root} lists no classes")
    images_dir = root / "images"
    if not images_dir.is_dir():
        raise DatasetError(f"missing images/ directory in {root}")
    items = []
    for img_path in sorted(images_dir.iterdir()):
        if img_path.suffix.lower() not in (".png", ".ppm"):
            raise DatasetError(f"image without decodable format: {img_path.name}")
        rel = f"images/{img_path.name}"
        image = load_image(img_path)
        label_file = root / _label_path(rel)
        annotations: tuple[Annotation, ...] = ()
        if label_file.is_file():
            lines = [ln for ln in label_file.read_text(encoding="utf-8").splitlines() if ln.strip()]
            annotations = tuple(parse_annotation(ln) for ln in lines)
        items.append(DatasetItem(rel, image, annotations))
    return Dataset(class_names=class_names, items=tuple(items), split=split, root=root)


def write_dataset(dataset: Dataset, root: str | Path) -> Dataset:
    """Materialize a dataset to disk and return it re-bound to ``root``."""
    root = Path(root)
    (root / "images").mkdir(parents=True, exist_ok=True)
    (root / "labels").mkdir(parents=True, exist_ok=True)
    (root / "classes.txt").write_text(
        "".join(name + "\n" for name in dataset.class_names), encoding="utf-8"
    )
    for item in dataset.items:
        save_image(item.image, root / item.path)
        if item.annotations:
            text = "".join(format_annotation(a) + "\n" for a in item.annotations)
            (root / _label_path(item.path)).write_text(text, encoding="utf-8")
    return replace(dataset, root=root)


# --------------------------------------------------------------------------
# Tamper-evident digests.

@dataclass(frozen=True)
class DatasetDigest:
    algorithm: str
    files: tuple[tuple[str, str], ...]  # (relative path, hex digest), sorted by path
    manifest: str


def _manifest_body(files: tuple[tuple[str, str], ...]) -> str:
    return "".join(f"{digest}  {path}\n" for path, digest in files)


def digest_dataset(dataset: Dataset) -> DatasetDigest:
    """Hash every file of a disk-backed dataset plus a manifest digest.

    The manifest digest covers the sorted (path, digest) pairs, so it is
    insensitive to directory enumeration order but changes when any single
    byte of any file changes.
    """
    if dataset.root is None:
        raise DatasetError("dataset has no backing directory to digest")
    root = dataset.root
    rel_paths = ["classes.txt"]
    for item in dataset.items:
        rel_paths.append(item.path)
        if (root / _label_path(item.path)).is_file():
            rel_paths.append(_label_path(item.path))
    entries = []
    for rel in sorted(rel_paths):
        try:
            data = (root / rel).read_bytes()
        except OSError as exc:
            raise DatasetError(f"cannot read {rel} for digest: {exc}") from exc
        entries.append((rel, hashlib.sha256(data).hexdigest()))
    files = tuple(entries)
    manifest = sha256_hex(_manifest_body(files).encode("utf-8"))
    return DatasetDigest(DIGEST_ALGORITHM, files, manifest)


def format_digest_manifest(digest: DatasetDigest) -> str:
    header = f"ALGORITHM {digest.algorithm}\n"
    return header + _manifest_body(digest.files) + f"MANIFEST {digest.manifest}\n"


def parse_digest_manifest(text: str) -> DatasetDigest:
    lines = text.splitlines()
    if not lines or not lines[0].startswith("ALGORITHM "):
        raise DatasetError("digest manifest missing ALGORITHM header")
    algorithm = lines[0].split(" ", 1)[1]
    if not lines[-1].startswith("MANIFEST "):
        raise DatasetError("digest manifest missing MANIFEST trailer")
    manifest = lines[-1].split(" ", 1)[1]
    files = []
    for ln in lines[1:-1]:
        digest_hex, _, path = ln.partition("  ")
        if not path:
            raise DatasetError(f"malformed digest manifest line: {ln!r}")
        files.append((path, digest_hex))
    return DatasetDigest(algorithm, tuple(files), manifest)


# --------------------------------------------------------------------------
# Synthetic marine scenes.

# Fixed palette and shape templates; attack calibration depends on these
# staying constant.
SKY_COLOR = (168, 196, 220)
SEA_COLOR = (22, 48, 84)
SEA_STREAK = (34, 66, 104)
HULL_COLOR = (58, 56, 64)
HULL_ALT_COLOR = (118, 42, 40)
SUPERSTRUCTURE_COLOR = (206, 206, 214)
BUOY_COLOR = (228, 122, 32)
NOISE_SPAN = 7  # +/- per-pixel background noise
HORIZON_FRACTION = 0.35


@dataclass(frozen=True)
class SceneSpec:
    """What a synthetic scene contains; sizes below 32x32 are rejected."""

    width: int = 64
    height: int = 64
    vessels: int = 1
    buoys: int = 0
    max_place_attempts: int = 60

    def __post_init__(self) -> None:
        if self.width < 32 or self.height < 32:
            raise DatasetError(f"scene must be at least 32x32, got {self.width}x{self.height}")
        if self.vessels < 0 or self.buoys < 0:
            raise DatasetError("object counts must be non-negative")


def _render_background(spec: SceneSpec, rng: np.random.Generator) -> np.ndarray:
    arr = np.empty((spec.height, spec.width, 3), dtype=np.float64)
    horizon = int(spec.height * HORIZON_FRACTION)
    arr[:horizon] = SKY_COLOR
    arr[horizon:] = SEA_COLOR
    # horizontal wave streaks
    for y in range(horizon, spec.height, 3):
        if rng.random() < 0.5:
            x0 = int(rng.integers(0, spec.width))
            x1 = min(spec.width, x0 + int(rng.integers(4, 16)))
            arr[y, x0:x1] = SEA_STREAK
    noise = rng.integers(-NOISE_SPAN, NOISE_SPAN + 1, size=arr.shape)
    return np.clip(arr + noise, 0, 255)


def _boxes_overlap(a: tuple[int, int, int, int], b: tuple[int, int, int, int], margin: int = 2) -> bool:
    ax0, ay0, ax1, ay1 = a
    bx0, by0, bx1, by1 = b
    return not (ax1 + margin <= bx0 or bx1 + margin <= ax0 or ay1 + margin <= by0 or by1 + margin <= ay0)


def _place(
    rng: np.random.Generator,
    spec: SceneSpec,
    w: int,
    h: int,
    used: list[tuple[int, int, int, int]],
    y_min: int,
) -> tuple[int, int]:
    for _ in range(spec.max_place_attempts):
        x = int(rng.integers(1, max(2, spec.width - w - 1)))
        y = int(rng.integers(y_min, max(y_min + 1, spec.height - h - 1)))
        box = (x, y, x + w, y + h)
        if not any(_boxes_overlap(box, other) for other in used):
            used.append(box)
            return x, y
    raise ScenePlacementError(
        f"could not place a {w}x{h} object after {spec.max_place_attempts} attempts"
    )


def _draw_vessel(
    arr: np.ndarray, rng: np.random.Generator, spec: SceneSpec, used: list
) -> tuple[Annotation, np.ndarray]:
    hull_w = int(rng.integers(14, 27))
    hull_h = int(rng.integers(6, 11))
    sup_w = max(3, int(hull_w * 0.4))
    sup_h = int(rng.integers(3, 6))
    total_h = hull_h + sup_h
    horizon = int(spec.height * HORIZON_FRACTION)
    x, y = _place(rng, spec, hull_w, total_h, used, y_min=horizon - 2)
    hull_color = HULL_COLOR if rng.random() < 0.5 else HULL_ALT_COLOR
    mask = np.zeros(arr.shape[:2], dtype=bool)
    arr[y + sup_h : y + total_h, x : x + hull_w] = hull_color
    mask[y + sup_h : y + total_h, x : x + hull_w] = True
    sx = x + (hull_w - sup_w) // 2
    arr[y : y + sup_h, sx : sx + sup_w] = SUPERSTRUCTURE_COLOR
    mask[y : y + sup_h, sx : sx + sup_w] = True
    ann = Annotation(
        CLASS_VESSEL,
        (x + hull_w / 2.0) / spec.width,
        (y + total_h / 2.0) / spec.height,
        hull_w / spec.width,
        total_h / spec.height,
    )
    return ann, mask


def _draw_buoy(
    arr: np.ndarray, rng: np.random.Generator, spec: SceneSpec, used: list
) -> tuple[Annotation, np.ndarray]:
    radius = int(rng.integers(2, 5))
    d = 2 * radius
    horizon = int(spec.height * HORIZON_FRACTION)
    x, y = _place(rng, spec, d, d, used, y_min=horizon + 2)
    yy, xx = np.mgrid[0:d, 0:d]
    disc = (yy - radius + 0.5) ** 2 + (xx - radius + 0.5) ** 2 <= radius**2
    region = arr[y : y + d, x : x + d]
    region[disc] = BUOY_COLOR
    mask = np.zeros(arr.shape[:2], dtype=bool)
    mask[y : y + d, x : x + d] = disc
    ann = Annotation(
        CLASS_BUOY,
        (x + radius) / spec.width,
        (y + radius) / spec.height,
        d / spec.width,
        d / spec.height,
    )
    return ann, mask


def generate_synthetic_scene(
    spec: SceneSpec, seed: int, *, return_masks: bool = False
):
    """Render one scene deterministically from ``(spec, seed)``.

    Returns ``(Image, annotations)``, or ``(Image, annotations, masks)``
    with one boolean pixel mask per drawn object when ``return_masks``.
    """
    bg_rng = np.random.default_rng(np.random.SeedSequence((seed, 0)))
    obj_rng = np.random.default_rng(np.random.SeedSequence((seed, 1)))
    arr = _render_background(spec, bg_rng)
    used: list[tuple[int, int, int, int]] = []
    annotations: list[Annotation] = []
    masks: list[np.ndarray] = []
    for _ in range(spec.vessels):
        ann, mask = _draw_vessel(arr, obj_rng, spec, used)
        annotations.append(ann)
        masks.append(mask)
    for _ in range(spec.buoys):
        ann, mask = _draw_buoy(arr, obj_rng, spec, used)
        annotations.append(ann)
        masks.append(mask)
    image = Image(arr.astype(np.uint8))
    if return_masks:
        return image, tuple(annotations), tuple(masks)
    return image, tuple(annotations)


def make_synthetic_dataset(
    count: int,
    seed: int,
    *,
    split: str = "train",
    size: int = 64,
    vessel_rate: float = 0.85,
    buoy_rate: float = 0.4,
) -> Dataset:
    """Build an in-memory dataset of ``count`` scenes with a mixed population."""
    rng = np.random.default_rng(np.random.SeedSequence((seed, 2)))
    items = []
    for i in range(count):
        vessels = 1 if rng.random() < vessel_rate else 0
        buoys = 1 if rng.random() < buoy_rate else 0
        spec = SceneSpec(width=size, height=size, vessels=vessels, buoys=buoys)
        scene_seed = int(rng.integers(0, 2**63 - 1))
        image, annotations = generate_synthetic_scene(spec, scene_seed)
        items.append(DatasetItem(f"images/scene_{i:04d}.png", image, annotations))
    return Dataset(class_names=DEFAULT_CLASS_NAMES, items=tuple(items), split=split)
