"""Volume containers, on-disk I/O and resolution matching.

All volumes are 3D arrays in (z, y, x) axis order. Intensities live in
[0, 1] as float32; instance labels are non-negative integers with 0
reserved for background. Voxel size metadata (micrometers, (z, y, x))
is carried along but never drives resampling decisions.
"""

import glob
import os
from dataclasses import dataclass, field

import h5py
import numpy as np
import tifffile

DEFAULT_DATASET_KEY = "main"


class VolumeError(ValueError):
    """Raised for malformed volume data or unreadable volume files."""


def _check_3d(data: np.ndarray, what: str) -> np.ndarray:
    data = np.asarray(data)
    # tolerate a singleton channel axis, e.g. (1, z, y, x) or (z, y, x, 1)
    if data.ndim == 4:
        squeezable = [ax for ax in range(4) if data.shape[ax] == 1]
        if not squeezable:
            raise VolumeError(f"{what}: expected 3D data, got shape {data.shape}")
        data = np.squeeze(data, axis=squeezable[0])
    if data.ndim != 3:
        raise VolumeError(f"{what}: expected 3D data, got shape {data.shape}")
    if min(data.shape) < 1:
        raise VolumeError(f"{what}: empty axis in shape {data.shape}")
    return data


@dataclass(frozen=True)
class IntensityVolume:
    """Scalar grayscale volume with values in [0, 1]."""

    data: np.ndarray
    voxel_size: tuple[float, float, float] = (1.0, 1.0, 1.0)

    def __post_init__(self):
        data = _check_3d(self.data, "IntensityVolume").astype(np.float32, copy=False)
        if not np.all(np.isfinite(data)):
            raise VolumeError("IntensityVolume: non-finite values")
        if data.min() < 0.0 or data.max() > 1.0:
            raise VolumeError("IntensityVolume: values outside [0, 1]")
        object.__setattr__(self, "data", data)

    @property
    def shape(self) -> tuple[int, int, int]:
        return tuple(self.data.shape)


@dataclass(frozen=True)
class LabelVolume:
    """Instance id volume; 0 is background, ids need not be contiguous."""

    data: np.ndarray
    voxel_size: tuple[float, float, float] = (1.0, 1.0, 1.0)

    def __post_init__(self):
        data = _check_3d(self.data, "LabelVolume")
        if not np.issubdtype(data.dtype, np.integer):
            if np.issubdtype(data.dtype, np.floating) and np.all(data == np.round(data)):
                data = data.astype(np.int64)
            else:
                raise VolumeError("LabelVolume: non-integer label data")
        if data.min() < 0:
            raise VolumeError("LabelVolume: negative label ids")
        object.__setattr__(self, "data", np.ascontiguousarray(data))

    @property
    def shape(self) -> tuple[int, int, int]:
        return tuple(self.data.shape)

    def ids(self) -> np.ndarray:
        """Sorted instance ids present in the volume, background excluded."""
        u = np.unique(self.data)
        return u[u != 0]


@dataclass(frozen=True)
class VolumeSpec:
    """Where and how a volume is stored on disk."""

    path: str
    container: str = "hdf5"  # "hdf5" | "tiff-stack"
    dataset_key: str = DEFAULT_DATASET_KEY
    dtype_role: str = "intensity"  # "intensity" | "label"
    voxel_size: tuple[float, float, float] = (1.0, 1.0, 1.0)

    def __post_init__(self):
        if self.container not in ("hdf5", "tiff-stack"):
            raise VolumeError(f"VolumeSpec: unknown container {self.container!r}")
        if self.dtype_role not in ("intensity", "label"):
            raise VolumeError(f"VolumeSpec: unknown dtype_role {self.dtype_role!r}")


def normalize_intensity(data: np.ndarray) -> np.ndarray:
    """Map raw stored intensities onto [0, 1].

    Integer-typed data is min-max rescaled over the whole volume. Float
    data already inside [0, 1] passes through; float data outside that
    range is min-max rescaled as well. A constant volume maps to all 1.0
    (all 0.0 if the constant is zero), the degenerate min-max convention.
    """
    data = np.asarray(data)
    lo, hi = float(data.min()), float(data.max())
    if hi == lo:
        fill = 1.0 if hi != 0.0 else 0.0
        return np.full(data.shape, fill, dtype=np.float32)
    if np.issubdtype(data.dtype, np.floating) and lo >= 0.0 and hi <= 1.0:
        return data.astype(np.float32)
    return ((data.astype(np.float64) - lo) / (hi - lo)).astype(np.float32)


def _read_raw(spec: VolumeSpec) -> np.ndarray:
    if spec.container == "hdf5":
        if not os.path.exists(spec.path):
            raise VolumeError(f"missing file: {spec.path}")
        with h5py.File(spec.path, "r") as f:
            if spec.dataset_key not in f:
                raise VolumeError(f"{spec.path}: no dataset {spec.dataset_key!r}")
            return f[spec.dataset_key][...]
    # tiff-stack: a multi-page file, or a glob of numbered single-page files
    if any(ch in spec.path for ch in "*?["):
        files = sorted(glob.glob(spec.path))
        if not files:
            raise VolumeError(f"no files match: {spec.path}")
        return np.stack([tifffile.imread(f) for f in files], axis=0)
    if not os.path.exists(spec.path):
        raise VolumeError(f"missing file: {spec.path}")
    return tifffile.imread(spec.path)


def load_volume(spec: VolumeSpec) -> IntensityVolume | LabelVolume:
    """Read a volume from disk per its spec.

    Intensity volumes are normalized to [0, 1] (see normalize_intensity);
    label volumes are passed through unchanged apart from dtype checks.
    """
    raw = _check_3d(_read_raw(spec), spec.path)
    if spec.dtype_role == "intensity":
        return IntensityVolume(normalize_intensity(raw), spec.voxel_size)
    return LabelVolume(raw, spec.voxel_size)


def save_volume(vol: IntensityVolume | LabelVolume, spec: VolumeSpec) -> None:
    """Write a volume to disk; mirrors load_volume."""
    if isinstance(vol, IntensityVolume):
        data = vol.data.astype(np.float32)
    else:
        data = vol.data
        data = data.astype(np.int32 if data.max(initial=0) < 2**31 else np.int64)
    directory = os.path.dirname(os.path.abspath(spec.path))
    os.makedirs(directory, exist_ok=True)
    if spec.container == "hdf5":
        with h5py.File(spec.path, "w") as f:
            f.create_dataset(spec.dataset_key, data=data, compression="gzip")
    else:
        tifffile.imwrite(spec.path, data, photometric="minisblack")


def _nearest_indices(n_in: int, n_out: int) -> np.ndarray:
    # map output voxel centers into input coordinates, then round
    pos = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    return np.clip(np.rint(pos).astype(np.int64), 0, n_in - 1)


def resample(
    vol: IntensityVolume | LabelVolume,
    factors: tuple[float, float, float],
    order: str = "nearest",
) -> IntensityVolume | LabelVolume:
    """Rescale a volume by per-axis factors.

    Output dims are round(input dims * factors). Labels only support
    nearest-neighbor resampling, which draws every output value from the
    input and therefore cannot invent new ids. Trilinear interpolation is
    available for intensities.
    """
    if len(factors) != 3 or any(f <= 0 for f in factors):
        raise VolumeError(f"resample: factors must be 3 positive values, got {factors}")
    if order not in ("nearest", "trilinear"):
        raise VolumeError(f"resample: unknown order {order!r}")
    is_label = isinstance(vol, LabelVolume)
    if is_label and order != "nearest":
        raise VolumeError("resample: label volumes require nearest order")

    in_shape = vol.data.shape
    out_shape = tuple(max(1, int(round(n * f))) for n, f in zip(in_shape, factors))
    new_voxel = tuple(v * n_in / n_out for v, n_in, n_out in zip(vol.voxel_size, in_shape, out_shape))

    if order == "nearest":
        idx = [_nearest_indices(n_in, n_out) for n_in, n_out in zip(in_shape, out_shape)]
        out = vol.data[np.ix_(*idx)]
    else:
        from scipy.ndimage import zoom

        zooms = [n_out / n_in for n_in, n_out in zip(in_shape, out_shape)]
        out = zoom(vol.data.astype(np.float64), zooms, order=1, mode="nearest")
        out = np.clip(out, 0.0, 1.0).astype(np.float32)
        if out.shape != out_shape:  # zoom rounds the same way, but be explicit
            out = out[tuple(slice(0, n) for n in out_shape)]

    cls = LabelVolume if is_label else IntensityVolume
    return cls(out, new_voxel)
