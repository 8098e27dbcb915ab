"""Stripe MNIST construction and generic image-directory ingestion."""
import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .idx import load_mnist

STRIPE_ORIENTATIONS = ("horizontal", "vertical", "diagonal_down", "diagonal_up")
STRIPE_SHAPE = (28, 28, 1)
STRIPE_AMPLITUDE = 1.0
# Stripe MNIST target / Stripes background sizes at scale 1
FULL_TARGET_SIZE = 60000
FULL_BACKGROUND_SIZE = 10000
MANIFEST = "manifest.csv"
MANIFEST_FIELDS = ("filename", "target_label", "background_label")


@dataclass
class LabeledImage:
    pixels: np.ndarray  # (H, W, C) in [0, 1]
    target_label: int | None = None
    background_label: int | None = None


@dataclass
class DatasetSpec:
    role: str  # "target" or "background"
    size: int
    image_shape: tuple
    num_classes: int | None = None
    source: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.role not in ("target", "background"):
            raise ValueError(f"role must be 'target' or 'background', got {self.role!r}")
        if self.size <= 0:
            raise ValueError("dataset size must be positive")
        self.image_shape = tuple(self.image_shape)


@dataclass
class ImageDataset:
    """Images as an (n, H, W, C) float32 array plus optional label vectors."""

    spec: DatasetSpec
    images: np.ndarray
    target_labels: np.ndarray | None = None
    background_labels: np.ndarray | None = None

    def __post_init__(self):
        if self.images.ndim != 4 or len(self.images) != self.spec.size:
            raise ValueError(f"images of shape {self.images.shape} do not match size {self.spec.size}")
        if tuple(self.images.shape[1:]) != self.spec.image_shape:
            raise ValueError(f"images of shape {self.images.shape[1:]} do not match {self.spec.image_shape}")
        for labels in (self.target_labels, self.background_labels):
            if labels is not None and len(labels) != len(self.images):
                raise ValueError("label vector length differs from image count")

    def __len__(self):
        return len(self.images)

    def __getitem__(self, i) -> LabeledImage:
        def lab(arr):
            return None if arr is None else int(arr[i])
        return LabeledImage(self.images[i], lab(self.target_labels), lab(self.background_labels))


def stripe_pattern(orientation: int, period: int, width: int, phase: int,
                   size: tuple[int, int] = STRIPE_SHAPE[:2]) -> np.ndarray:
    """Binary bands: 1 where ``(t + phase) mod period < width``, 0 elsewhere.

    ``t`` is the row (horizontal), column (vertical), ``row - col``
    (diagonal_down) or ``row + col`` (diagonal_up).
    """
    rows, cols = np.indices(size)
    t = (rows, cols, rows - cols, rows + cols)[orientation]
    return (((t + phase) % period) < width).astype(np.float32)


def generate_stripes(count: int, seed: int, amplitude: float = STRIPE_AMPLITUDE) -> ImageDataset:
    """Random stripe images labelled by orientation (4 classes).

    Band width is drawn from 2-5 px and period from 6-14 px, phase uniform
    over the period. Bands have intensity ``amplitude`` (rounded to the nearest
    8-bit level so PNG storage is lossless) on a black ground.
    """
    if count <= 0:
        raise ValueError("count must be positive")
    if not 0 < amplitude <= 1:
        raise ValueError("amplitude must lie in (0, 1]")
    rng = np.random.default_rng(seed)
    orient = rng.integers(0, 4, size=count)
    period = rng.integers(6, 15, size=count)
    width = rng.integers(2, 6, size=count)
    phase = rng.integers(0, period)
    images = np.stack([stripe_pattern(o, p, w, s) for o, p, w, s in zip(orient, period, width, phase)])
    images *= np.float32(round(amplitude * 255) / 255)
    spec = DatasetSpec("background", count, STRIPE_SHAPE, len(STRIPE_ORIENTATIONS),
                       {"generator": "stripes", "seed": seed, "amplitude": amplitude})
    return ImageDataset(spec, images[..., None], None, orient.astype(np.int64))


def composite(digit: LabeledImage, stripe: LabeledImage) -> LabeledImage:
    """Pixelwise maximum; the digit supplies the target label, the stripe the background label."""
    if digit.pixels.shape != stripe.pixels.shape:
        raise ValueError(f"shape mismatch: {digit.pixels.shape} vs {stripe.pixels.shape}")
    return LabeledImage(np.maximum(digit.pixels, stripe.pixels), digit.target_label,
                        stripe.background_label)


def build_stripe_mnist(mnist_path, seed: int = 0, scale: float = 1.0,
                       amplitude: float = STRIPE_AMPLITUDE) -> tuple[ImageDataset, ImageDataset]:
    """Target Stripe MNIST and an independent Stripes background set.

    Sizes are ``round(60000 * scale)`` and ``round(10000 * scale)``. The MNIST
    subset is drawn without replacement with ``seed``; the background stripes
    come from a separate stream and are never used in the composites.
    """
    if not 0 < scale <= 1:
        raise ValueError("scale must lie in (0, 1]")
    n_target = round(FULL_TARGET_SIZE * scale)
    n_bg = round(FULL_BACKGROUND_SIZE * scale)
    digits, labels = load_mnist(mnist_path)
    if n_target > len(digits):
        raise ValueError(f"{mnist_path} holds {len(digits)} digits, {n_target} requested "
                         f"(scale {scale})")
    pick_seed, tg_seed, bg_seed = np.random.SeedSequence(seed).generate_state(3)
    pick = np.sort(np.random.default_rng(pick_seed).permutation(len(digits))[:n_target])
    stripes = generate_stripes(n_target, int(tg_seed), amplitude)
    pixels = digits[pick].astype(np.float32)[..., None] / 255.0
    images = np.maximum(pixels, stripes.images)
    source = {"generator": "stripe_mnist", "mnist_path": str(mnist_path), "seed": seed,
              "scale": scale, "amplitude": amplitude, "mnist_indices": pick.tolist()}
    target = ImageDataset(DatasetSpec("target", n_target, STRIPE_SHAPE, 10, source),
                          images, labels[pick], stripes.background_labels)
    background = generate_stripes(n_bg, int(bg_seed), amplitude)
    background.spec.source = {"generator": "stripes", "seed": seed, "scale": scale,
                              "amplitude": amplitude}
    return target, background


# -- on-disk format: PNG files + CSV manifest -------------------------------

def _to_pil(pixels: np.ndarray) -> Image.Image:
    arr = np.rint(np.clip(pixels, 0, 1) * 255).astype(np.uint8)
    return Image.fromarray(arr[..., 0] if arr.shape[-1] == 1 else arr)


def save_dataset(ds: ImageDataset, directory) -> Path:
    directory = Path(directory)
    (directory / "images").mkdir(parents=True, exist_ok=True)
    width = max(5, len(str(len(ds) - 1)))
    with open(directory / MANIFEST, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(MANIFEST_FIELDS)
        for i in range(len(ds)):
            name = f"images/{i:0{width}d}.png"
            _to_pil(ds.images[i]).save(directory / name, optimize=False)
            item = ds[i]
            writer.writerow([name, "" if item.target_label is None else item.target_label,
                             "" if item.background_label is None else item.background_label])
    meta = {"role": ds.spec.role, "size": ds.spec.size, "image_shape": list(ds.spec.image_shape),
            "num_classes": ds.spec.num_classes,
            "source": {k: v for k, v in ds.spec.source.items() if k != "mnist_indices"}}
    (directory / "dataset.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return directory / MANIFEST


def _label_column(rows, key):
    values = [r.get(key) for r in rows]
    if all(v in (None, "") for v in values):
        return None
    if any(v in (None, "") for v in values):
        raise ValueError(f"column {key!r} is only partially filled")
    out = np.array([int(v) for v in values], dtype=np.int64)
    if (out < 0).any():
        raise ValueError(f"negative label in column {key!r}")
    return out


def load_image_dir(path, manifest: str = MANIFEST, role: str | None = None,
                   image_size: tuple[int, int] | None = None) -> ImageDataset:
    """Read a directory of PNG/JPEG images listed in a CSV manifest.

    The manifest needs a ``filename`` column; ``target_label`` and
    ``background_label`` are optional. Images are resized to ``image_size``
    (H, W) when given and scaled to [0, 1]. ``role`` defaults to the value in
    ``dataset.json`` if present, else "target".
    """
    path = Path(path)
    manifest_path = path / manifest
    if not manifest_path.exists():
        raise FileNotFoundError(f"manifest not found: {manifest_path}")
    with open(manifest_path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise ValueError(f"{manifest_path} lists no images")
    if "filename" not in rows[0]:
        raise ValueError(f"{manifest_path} has no 'filename' column")
    meta_path = path / "dataset.json"
    meta = json.loads(meta_path.read_text()) if meta_path.exists() else {}

    images = []
    for r in rows:
        file = path / r["filename"]
        if not file.exists():
            raise FileNotFoundError(f"image listed in manifest is missing: {file}")
        try:
            with Image.open(file) as im:
                im.load()
                mode = "L" if im.mode in ("L", "1", "I;16", "I") else "RGB"
                im = im.convert(mode)
                if image_size is not None and im.size != (image_size[1], image_size[0]):
                    im = im.resize((image_size[1], image_size[0]), Image.BILINEAR)
                arr = np.asarray(im, dtype=np.float32) / 255.0
        except (OSError, SyntaxError) as exc:
            raise ValueError(f"cannot decode image {file}: {exc}") from exc
        images.append(arr[..., None] if arr.ndim == 2 else arr)
    if len({a.shape for a in images}) != 1:
        raise ValueError(f"images in {path} differ in shape; pass image_size to resize")
    images = np.stack(images)

    target = _label_column(rows, "target_label")
    background = _label_column(rows, "background_label")
    spec = DatasetSpec(role or meta.get("role", "target"), len(images), images.shape[1:],
                       None if target is None else len(np.unique(target)),
                       {"path": str(path), "manifest": manifest})
    return ImageDataset(spec, images, target, background)
