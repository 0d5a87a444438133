"""Geometric augmentation of ``(H, W, C)`` image examples."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import imaging
from .streams import TaggedExample

TRANSFORMS = ("horizontal_flip", "vertical_flip", "resize_crop", "rotation")


class NotAnImage(ValueError):
    pass


@dataclass(frozen=True)
class AugmentationSpec:
    """Which transforms to apply and where.

    ``apply_to`` is ``buffer`` (replayed samples only) or ``all`` (replayed
    and current-stream samples). Transforms run in the order listed.
    """

    transforms: tuple = ()
    flip_p: float = 0.5
    crop_scale: tuple = (0.6, 1.0)
    max_rotation: float = 15.0
    apply_to: str = "buffer"

    def __post_init__(self):
        object.__setattr__(self, "transforms", tuple(self.transforms))
        object.__setattr__(self, "crop_scale", tuple(self.crop_scale))
        unknown = [t for t in self.transforms if t not in TRANSFORMS]
        if unknown:
            raise ValueError(f"unknown transforms {unknown}; choose from {', '.join(TRANSFORMS)}")
        if self.apply_to not in ("buffer", "all"):
            raise ValueError(f"apply_to must be 'buffer' or 'all', got {self.apply_to!r}")
        lo, hi = self.crop_scale
        if not 0 < lo <= hi <= 1:
            raise ValueError("crop_scale must satisfy 0 < low <= high <= 1")

    @property
    def enabled(self) -> bool:
        return bool(self.transforms)


def _random_crop_box(h, w, scale, rng):
    area_frac = rng.uniform(*scale)
    side = np.sqrt(area_frac)
    ch, cw = max(1.0, side * h), max(1.0, side * w)
    top = rng.uniform(0.0, h - ch)
    left = rng.uniform(0.0, w - cw)
    return top, left, ch, cw


def augment_image(image: np.ndarray, spec: AugmentationSpec, rng, angle: float | None = None) -> np.ndarray:
    """Apply the enabled transforms to one image.

    ``angle`` pins the rotation (degrees) instead of drawing it.
    """
    if image.ndim != 3:
        raise NotAnImage(f"expected an (H, W, C) image, got shape {image.shape}")
    out = image
    for name in spec.transforms:
        if name == "horizontal_flip":
            if rng.random() < spec.flip_p:
                out = imaging.hflip(out)
        elif name == "vertical_flip":
            if rng.random() < spec.flip_p:
                out = imaging.vflip(out)
        elif name == "resize_crop":
            out = imaging.crop_resize(out, *_random_crop_box(*out.shape[:2], spec.crop_scale, rng))
        elif name == "rotation":
            theta = rng.uniform(-spec.max_rotation, spec.max_rotation) if angle is None else angle
            out = imaging.rotate(out, theta)
    return out


def augment(example: TaggedExample, spec: AugmentationSpec, rng, angle: float | None = None) -> TaggedExample:
    """Augmented copy of ``example``; label, task and id are kept."""
    if not example.is_image and spec.transforms:
        raise NotAnImage(f"sample {example.sample_id} has flat features {example.features.shape}")
    return replace(example, features=augment_image(example.features, spec, rng, angle))


def augment_batch(x: np.ndarray, spec: AugmentationSpec, rng) -> np.ndarray:
    """Independent draw per row of a stacked image batch."""
    if not spec.transforms:
        return x
    if x.ndim != 4:
        raise NotAnImage(f"expected (N, H, W, C) images, got shape {x.shape}")
    return np.stack([augment_image(img, spec, rng) for img in x])
