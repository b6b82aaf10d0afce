"""Instance-label codec: foreground/contour/distance channels and the
marker-controlled watershed that turns predicted channels back into
instance masks.

Encoding produces three aligned channels from a label volume:

* foreground: 1 on any instance voxel, 0 on background,
* contour:    1 where a differently-labeled voxel (background included)
              lies within an anisotropy-aware ellipsoidal radius,
* distance:   signed; inside instance i the Euclidean distance to the
              nearest non-i voxel, normalized by that instance's maximum
              (so interiors peak at 1 regardless of size); on background
              the negated distance to the nearest foreground voxel,
              clipped and scaled to [-1, 0).

Decoding seeds a watershed from high-confidence cores and grows regions
over the inverted distance surface inside the predicted foreground mask.
"""

import heapq
from dataclasses import dataclass

import numpy as np
from scipy import ndimage


@dataclass(frozen=True)
class BcdTriple:
    """Aligned foreground / contour / signed-distance channels."""

    foreground: np.ndarray
    contour: np.ndarray
    distance: np.ndarray

    def __post_init__(self):
        shapes = {self.foreground.shape, self.contour.shape, self.distance.shape}
        if len(shapes) != 1:
            raise ValueError(f"BcdTriple: mismatched channel shapes {shapes}")

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(self.foreground.shape)

    def stack(self) -> np.ndarray:
        """Channel-first (3, z, y, x) float32 array."""
        return np.stack(
            [self.foreground, self.contour, self.distance], axis=0
        ).astype(np.float32)

    @classmethod
    def from_stack(cls, arr: np.ndarray) -> "BcdTriple":
        arr = np.asarray(arr)
        if arr.ndim != 4 or arr.shape[0] != 3:
            raise ValueError(f"BcdTriple.from_stack: expected (3, z, y, x), got {arr.shape}")
        return cls(arr[0], arr[1], arr[2])


@dataclass(frozen=True)
class CodecParams:
    """Encoding radii and the (reconstruction-specific) decoding thresholds."""

    contour_radius: tuple[float, float, float] = (0.0, 1.0, 1.0)
    d_clip_bg: float = 8.0
    seed_foreground_min: float = 0.85
    seed_contour_max: float = 0.15
    seed_distance_min: float = 0.30
    mask_threshold: float = 0.40
    min_instance_size: int = 64
    connectivity: int = 6

    def __post_init__(self):
        if not (0.0 < self.mask_threshold <= self.seed_foreground_min <= 1.0):
            raise ValueError("CodecParams: need 0 < mask_threshold <= seed_foreground_min <= 1")
        if not (0.0 < self.seed_contour_max < 1.0):
            raise ValueError("CodecParams: seed_contour_max outside (0, 1)")
        if not (-1.0 < self.seed_distance_min < 1.0):
            raise ValueError("CodecParams: seed_distance_min outside (-1, 1)")
        if self.d_clip_bg <= 0:
            raise ValueError("CodecParams: d_clip_bg must be positive")
        if self.connectivity not in (6, 26):
            raise ValueError("CodecParams: connectivity must be 6 or 26")


def _neighborhood_offsets(radius: tuple[float, float, float]) -> np.ndarray:
    """Integer offsets inside the ellipsoid with the given semi-axes,
    excluding the origin. A zero radius restricts that axis to offset 0."""
    rz, ry, rx = radius
    ext = [int(np.floor(r)) for r in (rz, ry, rx)]
    offsets = []
    for dz in range(-ext[0], ext[0] + 1):
        for dy in range(-ext[1], ext[1] + 1):
            for dx in range(-ext[2], ext[2] + 1):
                if dz == dy == dx == 0:
                    continue
                s = 0.0
                ok = True
                for d, r in ((dz, rz), (dy, ry), (dx, rx)):
                    if r == 0:
                        if d != 0:
                            ok = False
                            break
                    else:
                        s += (d / r) ** 2
                if ok and s <= 1.0 + 1e-9:
                    offsets.append((dz, dy, dx))
    return np.array(offsets, dtype=np.int64).reshape(-1, 3)


def contour_map(labels: np.ndarray, radius: tuple[float, float, float]) -> np.ndarray:
    """1 where any voxel within `radius` carries a different label."""
    labels = np.asarray(labels)
    out = np.zeros(labels.shape, dtype=bool)
    for dz, dy, dx in _neighborhood_offsets(radius):
        src = tuple(slice(max(d, 0), n + min(d, 0)) for d, n in zip((dz, dy, dx), labels.shape))
        dst = tuple(slice(max(-d, 0), n + min(-d, 0)) for d, n in zip((dz, dy, dx), labels.shape))
        if any(s.start >= s.stop for s in src):
            continue
        out[dst] |= labels[dst] != labels[src]
    return out.astype(np.float32)


def _instance_slices(labels: np.ndarray):
    found = ndimage.find_objects(labels)
    for idx, slc in enumerate(found, start=1):
        if slc is not None:
            yield idx, slc


def signed_distance(labels: np.ndarray, d_clip_bg: float = 8.0) -> np.ndarray:
    """Signed, per-instance-normalized Euclidean distance channel.

    Strictly positive on foreground (in (0, 1], each instance scaled by
    its own maximum), strictly negative on background (clipped at
    d_clip_bg voxels and scaled to [-1, 0)). An empty volume is -1
    everywhere.
    """
    labels = np.asarray(labels)
    fg = labels > 0
    out = np.empty(labels.shape, dtype=np.float32)

    if not fg.any():
        out.fill(-1.0)
        return out

    bg = ~fg
    if bg.any():
        bg_dist = ndimage.distance_transform_edt(bg)
        out[bg] = -np.minimum(bg_dist[bg], d_clip_bg) / d_clip_bg

    # contiguous relabel so find_objects stays dense
    dense, _ = _as_dense(labels)
    for idx, slc in _instance_slices(dense):
        padded = tuple(
            slice(max(s.start - 1, 0), min(s.stop + 1, n))
            for s, n in zip(slc, labels.shape)
        )
        mask = dense[padded] == idx
        if mask.all():
            # instance fills the whole volume: no non-i voxel exists
            out[padded][mask] = 1.0
            continue
        dist = ndimage.distance_transform_edt(mask)
        m = dist.max()
        out[padded][mask] = (dist[mask] / m).astype(np.float32)
    return out


def _as_dense(labels: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Relabel to contiguous 1..K preserving id order; returns (dense, ids)."""
    ids = np.unique(labels)
    ids = ids[ids != 0]
    if ids.size == 0:
        return np.zeros_like(labels, dtype=np.int32), ids
    lut = np.zeros(int(labels.max()) + 1, dtype=np.int32)
    lut[ids] = np.arange(1, ids.size + 1, dtype=np.int32)
    return lut[labels], ids


def encode_bcd(labels: np.ndarray, params: CodecParams = CodecParams()) -> BcdTriple:
    """Turn an instance label volume into its three training targets."""
    labels = np.asarray(labels)
    fg = (labels > 0).astype(np.float32)
    ctr = contour_map(labels, params.contour_radius)
    dist = signed_distance(labels, params.d_clip_bg)
    return BcdTriple(fg, ctr, dist)


_STRUCT_6 = ndimage.generate_binary_structure(3, 1)
_STRUCT_26 = ndimage.generate_binary_structure(3, 3)


def connected_components(mask: np.ndarray, connectivity: int = 6) -> np.ndarray:
    """Label maximal connected components 1..K; background stays 0."""
    if connectivity not in (6, 26):
        raise ValueError(f"connectivity must be 6 or 26, got {connectivity}")
    structure = _STRUCT_6 if connectivity == 6 else _STRUCT_26
    out, _ = ndimage.label(np.asarray(mask, dtype=bool), structure=structure)
    return out.astype(np.int32)


def _connectivity_offsets(connectivity: int) -> list[tuple[int, int, int]]:
    if connectivity == 6:
        return [(-1, 0, 0), (1, 0, 0), (0, -1, 0), (0, 1, 0), (0, 0, -1), (0, 0, 1)]
    return [
        (dz, dy, dx)
        for dz in (-1, 0, 1)
        for dy in (-1, 0, 1)
        for dx in (-1, 0, 1)
        if (dz, dy, dx) != (0, 0, 0)
    ]


def marker_watershed(
    surface: np.ndarray,
    seeds: np.ndarray,
    mask: np.ndarray,
    connectivity: int = 6,
) -> np.ndarray:
    """Grow seed labels over `mask`, flooding lowest surface values first.

    The priority queue breaks equal-surface ties lexicographically in
    (z, y, x), then by insertion order, so outputs are reproducible.
    """
    shape = surface.shape
    surf = np.ascontiguousarray(surface, dtype=np.float64).ravel()
    out = np.where(mask, seeds, 0).astype(np.int32)
    flat = out.ravel()
    mask_flat = np.ascontiguousarray(mask, dtype=bool).ravel()

    nz, ny, nx = shape
    strides = (ny * nx, nx, 1)
    neighbor_steps = []
    for dz, dy, dx in _connectivity_offsets(connectivity):
        neighbor_steps.append((dz, dy, dx, dz * strides[0] + dy * strides[1] + dx))

    heap: list[tuple[float, int, int, int]] = []
    counter = 0
    seeded = np.flatnonzero(flat)
    # push unlabeled masked neighbors of every seed voxel
    for i in seeded.tolist():
        z, rem = divmod(i, strides[0])
        y, x = divmod(rem, nx)
        lab = flat[i]
        for dz, dy, dx, step in neighbor_steps:
            zz, yy, xx = z + dz, y + dy, x + dx
            if 0 <= zz < nz and 0 <= yy < ny and 0 <= xx < nx:
                j = i + step
                if mask_flat[j] and flat[j] == 0:
                    heap.append((surf[j], j, counter, lab))
                    counter += 1
    heapq.heapify(heap)

    while heap:
        _, i, _, lab = heapq.heappop(heap)
        if flat[i] != 0:
            continue
        flat[i] = lab
        z, rem = divmod(i, strides[0])
        y, x = divmod(rem, nx)
        for dz, dy, dx, step in neighbor_steps:
            zz, yy, xx = z + dz, y + dy, x + dx
            if 0 <= zz < nz and 0 <= yy < ny and 0 <= xx < nx:
                j = i + step
                if mask_flat[j] and flat[j] == 0:
                    counter += 1
                    heapq.heappush(heap, (surf[j], j, counter, lab))
    return out


def decode_bcd(triple: BcdTriple, params: CodecParams = CodecParams()) -> np.ndarray:
    """Marker-controlled watershed over the predicted channels.

    Seeds are connected components of the high-confidence core
    (foreground high, contour low, distance high); regions grow over
    -distance within the foreground mask; instances below the size
    floor are dropped and ids renumbered contiguously from 1.
    """
    fg, ctr, dist = triple.foreground, triple.contour, triple.distance
    seed_mask = (
        (fg > params.seed_foreground_min)
        & (ctr < params.seed_contour_max)
        & (dist > params.seed_distance_min)
    )
    seeds = connected_components(seed_mask, params.connectivity)
    if seeds.max() == 0:
        return np.zeros(triple.shape, dtype=np.int32)

    mask = fg > params.mask_threshold
    grown = marker_watershed(-dist, seeds, mask, params.connectivity)

    ids, counts = np.unique(grown, return_counts=True)
    keep = ids[(ids != 0) & (counts >= params.min_instance_size)]
    lut = np.zeros(int(ids.max()) + 1, dtype=np.int32)
    lut[keep] = np.arange(1, keep.size + 1, dtype=np.int32)
    return lut[grown]
