"""Stochastic input views for contrastive training.

Policies:
  identity  -- no change
  crop_pad  -- zero-pad 4 px, random crop back to the original size
               (no flips: mirrored digits change identity)
  natural   -- random resized crop, horizontal flip, color jitter, grayscale

All policies keep pixels in [0, 1] and the input shape.
"""
import numpy as np
from PIL import Image

POLICIES = ("identity", "crop_pad", "natural")
PAD = 4


def default_policy(image_shape) -> str:
    return "crop_pad" if tuple(image_shape) == (28, 28, 1) else "natural"


def _crop_pad(img, rng):
    h, w = img.shape[:2]
    padded = np.pad(img, ((PAD, PAD), (PAD, PAD), (0, 0)))
    top, left = rng.integers(0, 2 * PAD + 1, size=2)
    return padded[top:top + h, left:left + w]


def _resized_crop(img, rng, scale=(0.2, 1.0), ratio=(3 / 4, 4 / 3)):
    h, w = img.shape[:2]
    for _ in range(10):
        area = h * w * rng.uniform(*scale)
        aspect = np.exp(rng.uniform(np.log(ratio[0]), np.log(ratio[1])))
        cw = int(round(np.sqrt(area * aspect)))
        ch = int(round(np.sqrt(area / aspect)))
        if 0 < cw <= w and 0 < ch <= h:
            top = rng.integers(0, h - ch + 1)
            left = rng.integers(0, w - cw + 1)
            break
    else:
        ch, cw, top, left = h, w, 0, 0
    pil = Image.fromarray(np.rint(img * 255).astype(np.uint8).squeeze(-1) if img.shape[-1] == 1
                          else np.rint(img * 255).astype(np.uint8))
    pil = pil.resize((w, h), Image.BILINEAR, box=(left, top, left + cw, top + ch))
    out = np.asarray(pil, dtype=np.float32) / 255.0
    return out[..., None] if out.ndim == 2 else out


def _gray(img):
    if img.shape[-1] == 1:
        return img
    return img @ np.array([0.299, 0.587, 0.114], dtype=np.float32)


def _color_jitter(img, rng, strength=0.4):
    img = img * rng.uniform(1 - strength, 1 + strength)  # brightness
    mean = _gray(img).mean()
    img = (img - mean) * rng.uniform(1 - strength, 1 + strength) + mean  # contrast
    if img.shape[-1] == 3:
        g = _gray(img)[..., None]
        img = (img - g) * rng.uniform(1 - strength, 1 + strength) + g  # saturation
    return np.clip(img, 0, 1)


def _natural(img, rng):
    img = _resized_crop(img, rng)
    if rng.random() < 0.5:
        img = img[:, ::-1]
    if rng.random() < 0.8:
        img = _color_jitter(img, rng)
    if img.shape[-1] == 3 and rng.random() < 0.2:
        img = np.repeat(_gray(img)[..., None], 3, axis=-1)
    return img


def augment(image: np.ndarray, policy: str = "crop_pad", seed=None) -> np.ndarray:
    """One random view of an (H, W, C) image; ``seed`` may be an int or a Generator."""
    if policy not in POLICIES:
        raise ValueError(f"unknown augmentation policy {policy!r}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    if policy == "identity":
        return image
    if policy == "crop_pad":
        if image.shape[0] <= PAD or image.shape[1] <= PAD:
            raise ValueError("crop_pad needs images larger than the padding")
        return _crop_pad(image, rng)
    return np.ascontiguousarray(_natural(image, rng), dtype=np.float32)


def augment_batch(images: np.ndarray, policy: str, rng: np.random.Generator) -> np.ndarray:
    if policy == "identity":
        return images
    if policy == "crop_pad":
        # vectorized crop_pad: one padded copy, per-sample offsets
        n, h, w, _ = images.shape
        padded = np.pad(images, ((0, 0), (PAD, PAD), (PAD, PAD), (0, 0)))
        offs = rng.integers(0, 2 * PAD + 1, size=(n, 2))
        rows = offs[:, 0, None] + np.arange(h)
        cols = offs[:, 1, None] + np.arange(w)
        return padded[np.arange(n)[:, None, None], rows[:, :, None], cols[:, None, :]]
    return np.stack([augment(img, policy, rng) for img in images])
