"""Paired clean/augmented patch corruption and shared spatial augmentation.

Spatial transforms (flips, in-plane right-angle rotations) are sampled
once and applied identically to the image and its labels, before any
photometric corruption. Corruption touches only the intensity copy and
records exactly which voxels it modified, so the clean counterpart stays
available as a restoration target.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage


@dataclass(frozen=True)
class AugmentConfig:
    p_missing_section: float = 0.3
    p_blur_region: float = 0.3
    p_noise_region: float = 0.3
    max_region_fraction: float = 0.25
    blur_sigma_range: tuple[float, float] = (0.8, 2.0)
    noise_sigma_range: tuple[float, float] = (0.05, 0.20)
    enable_flips_rotations: bool = True

    def __post_init__(self):
        for name in ("p_missing_section", "p_blur_region", "p_noise_region"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"AugmentConfig.{name} outside [0, 1]")
        if not 0.0 < self.max_region_fraction <= 1.0:
            raise ValueError("AugmentConfig.max_region_fraction outside (0, 1]")


@dataclass(frozen=True)
class PatchPair:
    """An augmented intensity patch alongside its clean original."""

    augmented: np.ndarray
    clean: np.ndarray
    corruption_mask: np.ndarray
    labels: np.ndarray | None = None


@dataclass(frozen=True)
class SpatialTransform:
    """Axis-aligned flips plus a number of 90-degree in-plane rotations."""

    flips: tuple[bool, bool, bool] = (False, False, False)
    k_rot: int = 0

    @classmethod
    def sample(cls, rng: np.random.Generator) -> "SpatialTransform":
        return cls(tuple(bool(b) for b in rng.integers(0, 2, size=3)), int(rng.integers(0, 4)))

    def apply(self, arr: np.ndarray) -> np.ndarray:
        out = arr
        for axis, flip in enumerate(self.flips):
            if flip:
                out = np.flip(out, axis=axis)
        if self.k_rot:
            out = np.rot90(out, k=self.k_rot, axes=(1, 2))
        return np.ascontiguousarray(out)


def spatial_augment(
    image: np.ndarray,
    labels: np.ndarray | None = None,
    seed: int | np.random.Generator = 0,
) -> tuple[np.ndarray, np.ndarray | None]:
    """Apply one random grid-preserving transform to image and labels jointly."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    if labels is not None and labels.shape != image.shape:
        raise ValueError("spatial_augment: image and labels shapes differ")
    t = SpatialTransform.sample(rng)
    return t.apply(image), (t.apply(labels) if labels is not None else None)


def _random_box(shape, max_fraction, rng):
    sizes = [max(1, int(np.floor(n * max_fraction))) for n in shape]
    ext = [int(rng.integers(1, s + 1)) for s in sizes]
    origin = [int(rng.integers(0, n - e + 1)) for n, e in zip(shape, ext)]
    return tuple(slice(o, o + e) for o, e in zip(origin, ext))


def corrupt(
    clean: np.ndarray,
    config: AugmentConfig = AugmentConfig(),
    seed: int | np.random.Generator = 0,
    labels: np.ndarray | None = None,
) -> PatchPair:
    """Photometrically corrupt a copy of `clean`, tracking touched voxels.

    Three independent corruption kinds: zeroed whole z-sections, a
    Gaussian-blurred box and a box of additive Gaussian noise. The clean
    input is never modified; `augmented == clean` outside the mask.
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    clean = np.asarray(clean, dtype=np.float32)
    aug = clean.copy()
    mask = np.zeros(clean.shape, dtype=bool)
    nz = clean.shape[0]

    if rng.random() < config.p_missing_section:
        n_sections = int(rng.integers(1, max(1, int(np.floor(nz * config.max_region_fraction))) + 1))
        zs = rng.choice(nz, size=min(n_sections, nz), replace=False)
        for z in np.sort(zs):
            aug[z] = 0.0
            mask[z] = True

    if rng.random() < config.p_blur_region:
        box = _random_box(clean.shape, config.max_region_fraction, rng)
        sigma = float(rng.uniform(*config.blur_sigma_range))
        pad = int(np.ceil(3 * sigma))
        padded = tuple(
            slice(max(s.start - pad, 0), min(s.stop + pad, n))
            for s, n in zip(box, clean.shape)
        )
        blurred = ndimage.gaussian_filter(clean[padded], sigma)
        inner = tuple(
            slice(b.start - p.start, b.stop - p.start) for b, p in zip(box, padded)
        )
        aug[box] = blurred[inner]
        mask[box] = True

    if rng.random() < config.p_noise_region:
        box = _random_box(clean.shape, config.max_region_fraction, rng)
        sigma = float(rng.uniform(*config.noise_sigma_range))
        aug[box] = np.clip(aug[box] + rng.normal(0.0, sigma, size=aug[box].shape), 0.0, 1.0)
        mask[box] = True

    return PatchPair(augmented=aug, clean=clean, corruption_mask=mask, labels=labels)
