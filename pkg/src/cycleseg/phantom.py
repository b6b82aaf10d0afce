"""Synthetic two-domain phantom volumes with ground-truth instances.

A phantom is a packing of random ellipsoidal nuclei rendered twice under
different photometric styles: the label geometry is shared, only the
appearance differs, so the pair stands in for an unpaired labeled/unlabeled
domain pair at desk scale.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage


class PackingError(RuntimeError):
    """Could not place the requested number of instances without overlap."""


@dataclass(frozen=True)
class RenderStyle:
    """Photometric appearance of one imaging domain.

    foreground_tone is a monotone transfer curve mapping normalized
    interior depth (0 at the instance rim, 1 at its core) to intensity:
    tone(d) = low + (high - low) * d ** gamma.
    """

    tone_low: float = 0.1
    tone_high: float = 0.9
    tone_gamma: float = 1.0
    background_level: float = 0.4
    texture_amplitude: float = 0.0
    halo_width: float = 0.0
    blur_sigma: tuple[float, float, float] = (0.0, 0.0, 0.0)
    noise_sigma: float = 0.02


# EM-ish: mid-gray background, dark membrane rim, bright interior, fine
# texture. Levels keep nearly all values off the [0, 1] clip boundaries so
# intensity histograms stay atom-free (CDF matching needs that).
STYLE_BRIGHT_CORE = RenderStyle(
    tone_low=0.08,
    tone_high=0.92,
    tone_gamma=0.7,
    background_level=0.45,
    texture_amplitude=0.08,
    halo_width=0.0,
    blur_sigma=(0.0, 0.5, 0.5),
    noise_sigma=0.02,
)

# ExM-ish: dark background, dimmer interior, bright halo, anisotropic blur, noisy
STYLE_HALO = RenderStyle(
    tone_low=0.32,
    tone_high=0.78,
    tone_gamma=1.2,
    background_level=0.12,
    texture_amplitude=0.03,
    halo_width=3.0,
    blur_sigma=(1.4, 0.7, 0.7),
    noise_sigma=0.05,
)


@dataclass(frozen=True)
class PhantomConfig:
    shape: tuple[int, int, int] = (64, 64, 64)
    n_instances: int = 30
    radius_range: tuple[float, float] = (4.0, 9.0)
    allow_touching: bool = False
    touch_fraction: float = 0.0
    style_a: RenderStyle = STYLE_BRIGHT_CORE
    style_b: RenderStyle = STYLE_HALO
    seed: int = 0
    max_attempts_per_instance: int = 400

    def __post_init__(self):
        if self.n_instances < 0:
            raise ValueError("PhantomConfig: n_instances must be >= 0")
        if not (0 < self.radius_range[0] <= self.radius_range[1]):
            raise ValueError("PhantomConfig: bad radius_range")
        if 2 * self.radius_range[1] >= min(self.shape):
            raise ValueError("PhantomConfig: radii do not fit inside shape")
        if not self.allow_touching and self.touch_fraction != 0.0:
            raise ValueError("PhantomConfig: touch_fraction requires allow_touching")
        if not 0.0 <= self.touch_fraction <= 1.0:
            raise ValueError("PhantomConfig: touch_fraction outside [0, 1]")


def _random_rotation(rng: np.random.Generator) -> np.ndarray:
    # QR of a Gaussian matrix, sign-fixed: uniform over rotations
    m = rng.normal(size=(3, 3))
    q, r = np.linalg.qr(m)
    q *= np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


_STRUCT_6 = ndimage.generate_binary_structure(3, 1)
_STRUCT_26 = ndimage.generate_binary_structure(3, 3)


def _voxelize_ellipsoid(
    center: np.ndarray, axes: np.ndarray, rot: np.ndarray, shape: tuple[int, int, int]
):
    """Boolean mask of the ellipsoid inside its bounding box; returns
    (mask, box_origin) or None when the voxelization is empty."""
    reach = float(np.max(axes)) + 1.0
    lo = np.maximum(np.floor(center - reach).astype(int), 0)
    hi = np.minimum(np.ceil(center + reach).astype(int) + 1, shape)
    if np.any(lo >= hi):
        return None
    grids = np.meshgrid(*[np.arange(a, b) for a, b in zip(lo, hi)], indexing="ij")
    pts = np.stack([g.astype(np.float64) for g in grids], axis=-1) - center
    local = pts @ rot  # rotate into the ellipsoid frame
    q = np.sum((local / axes) ** 2, axis=-1)
    mask = q <= 1.0
    if not mask.any():
        return None
    # keep the largest 6-connected piece so each id is one component
    comp, n = ndimage.label(mask, structure=_STRUCT_6)
    if n > 1:
        sizes = ndimage.sum_labels(np.ones_like(comp), comp, index=np.arange(1, n + 1))
        mask = comp == (1 + int(np.argmax(sizes)))
    return mask, lo


def _place_into(labels: np.ndarray, mask: np.ndarray, origin: np.ndarray, value: int):
    sl = tuple(slice(o, o + s) for o, s in zip(origin, mask.shape))
    region = labels[sl]
    region[mask] = value


def _overlaps(labels: np.ndarray, mask: np.ndarray, origin: np.ndarray, grow: bool) -> bool:
    """True if the candidate intersects existing instances; with grow=True
    the candidate is dilated first, so any contact (even corners) counts."""
    lo = np.maximum(origin - (1 if grow else 0), 0)
    hi = np.minimum(origin + np.array(mask.shape) + (1 if grow else 0), labels.shape)
    sl = tuple(slice(a, b) for a, b in zip(lo, hi))
    sub = labels[sl]
    if not sub.any():
        return False
    pad_lo = origin - lo
    cand = np.zeros(sub.shape, dtype=bool)
    cand[tuple(slice(p, p + s) for p, s in zip(pad_lo, mask.shape))] = mask
    if grow:
        cand = ndimage.binary_dilation(cand, structure=_STRUCT_26)
    return bool((sub > 0)[cand].any())


def _face_neighbor_ids(labels: np.ndarray, mask: np.ndarray, origin: np.ndarray) -> set:
    """Ids of existing instances sharing a face with the candidate."""
    lo = np.maximum(origin - 1, 0)
    hi = np.minimum(origin + np.array(mask.shape) + 1, labels.shape)
    sl = tuple(slice(a, b) for a, b in zip(lo, hi))
    sub = labels[sl]
    pad_lo = origin - lo
    cand = np.zeros(sub.shape, dtype=bool)
    cand[tuple(slice(p, p + s) for p, s in zip(pad_lo, mask.shape))] = mask
    shell = ndimage.binary_dilation(cand, structure=_STRUCT_6) & ~cand
    return set(int(i) for i in np.unique(sub[shell]) if i != 0)


def _sample_geometry(cfg: PhantomConfig, rng: np.random.Generator):
    axes = rng.uniform(cfg.radius_range[0], cfg.radius_range[1], size=3)
    rot = _random_rotation(rng)
    return axes, rot


def make_labels(cfg: PhantomConfig, rng: np.random.Generator) -> np.ndarray:
    """Pack ellipsoidal instances into an int32 label volume.

    When touching is allowed, instances are placed adjacent to existing
    ones until roughly touch_fraction of all instances share a face.
    """
    shape = cfg.shape
    labels = np.zeros(shape, dtype=np.int32)
    centers: list[np.ndarray] = []
    touching: set[int] = set()
    touch_target = int(round(cfg.touch_fraction * cfg.n_instances))
    for k in range(1, cfg.n_instances + 1):
        want_touch = cfg.allow_touching and centers and len(touching) < touch_target
        placed = False
        for _ in range(cfg.max_attempts_per_instance):
            axes, rot = _sample_geometry(cfg, rng)
            margin = float(np.max(axes)) + 1.0
            if want_touch:
                anchor = centers[rng.integers(len(centers))]
                direction = rng.normal(size=3)
                direction /= np.linalg.norm(direction)
                # walk outward until the candidate just clears the packing
                neighbors: set[int] = set()
                for t in np.arange(1.0, 4.0 * margin, 0.5):
                    center = anchor + direction * t
                    if np.any(center < margin) or np.any(center > np.array(shape) - margin):
                        break
                    vox = _voxelize_ellipsoid(center, axes, rot, shape)
                    if vox is None:
                        continue
                    mask, origin = vox
                    if _overlaps(labels, mask, origin, grow=False):
                        continue
                    neighbors = _face_neighbor_ids(labels, mask, origin)
                    break
                if not neighbors:
                    continue
                touching |= neighbors | {k}
            else:
                center = rng.uniform(margin, np.array(shape, dtype=float) - margin)
                vox = _voxelize_ellipsoid(center, axes, rot, shape)
                if vox is None:
                    continue
                mask, origin = vox
                if _overlaps(labels, mask, origin, grow=True):
                    continue
            _place_into(labels, mask, origin, k)
            centers.append(np.asarray(center))
            placed = True
            break
        if not placed:
            raise PackingError(
                f"could not place instance {k}/{cfg.n_instances} "
                f"after {cfg.max_attempts_per_instance} attempts"
            )
    return labels


def render(labels: np.ndarray, style: RenderStyle, rng: np.random.Generator) -> np.ndarray:
    """Render a label volume into a [0, 1] float32 intensity volume."""
    fg = labels > 0
    img = np.full(labels.shape, style.background_level, dtype=np.float64)

    if fg.any():
        depth = np.zeros(labels.shape, dtype=np.float64)
        for idx, slc in enumerate(ndimage.find_objects(labels), start=1):
            if slc is None:
                continue
            padded = tuple(
                slice(max(s.start - 1, 0), min(s.stop + 1, n))
                for s, n in zip(slc, labels.shape)
            )
            m = labels[padded] == idx
            d = ndimage.distance_transform_edt(m)
            mx = d.max()
            if mx > 0:
                depth[padded][m] = (d[m] - 1.0) / max(mx - 1.0, 1.0)
        span = style.tone_high - style.tone_low
        img[fg] = style.tone_low + span * np.clip(depth[fg], 0.0, 1.0) ** style.tone_gamma

        if style.halo_width > 0:
            bg_dist = ndimage.distance_transform_edt(~fg)
            halo = 0.35 * np.exp(-(bg_dist - 1.0) / style.halo_width)
            img[~fg] += halo[~fg]

        if style.texture_amplitude > 0:
            tex = ndimage.gaussian_filter(rng.normal(size=labels.shape), 0.8)
            tex /= max(np.abs(tex).max(), 1e-9)
            img[fg] += style.texture_amplitude * tex[fg]

    if any(s > 0 for s in style.blur_sigma):
        img = ndimage.gaussian_filter(img, style.blur_sigma)
    if style.noise_sigma > 0:
        img = img + rng.normal(0.0, style.noise_sigma, size=labels.shape)
    return np.clip(img, 0.0, 1.0).astype(np.float32)


def make_phantom(cfg: PhantomConfig):
    """Generate (labels, intensity A, intensity B) with shared geometry.

    Deterministic in cfg.seed: two calls with the same config produce
    bit-identical outputs.
    """
    rng = np.random.default_rng(cfg.seed)
    labels = make_labels(cfg, rng)
    img_a = render(labels, cfg.style_a, rng)
    img_b = render(labels, cfg.style_b, rng)
    return labels, img_a, img_b
