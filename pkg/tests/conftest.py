"""Shared fixtures and independent oracle implementations.

The oracles here deliberately avoid the code paths they check: connected
components use a hand-rolled union-find, distances use KD-tree nearest
neighbors, and the AP matcher is a direct loop-based transcription of
the matching protocol.
"""

import numpy as np
import pytest
import torch

torch.set_num_threads(1)


@pytest.fixture(autouse=True)
def _torch_single_thread():
    torch.set_num_threads(1)


# ----------------------------------------------------------------------
# union-find connected components
# ----------------------------------------------------------------------
def brute_components(mask: np.ndarray, connectivity: int = 6) -> int:
    """Number of connected components by union-find over voxel pairs."""
    mask = np.asarray(mask, dtype=bool)
    idx = {tuple(c): i for i, c in enumerate(np.argwhere(mask))}
    parent = list(range(len(idx)))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    def union(a, b):
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[rb] = ra

    if connectivity == 6:
        offsets = [(1, 0, 0), (0, 1, 0), (0, 0, 1)]
    else:
        offsets = [
            (dz, dy, dx)
            for dz in (0, 1)
            for dy in (-1, 0, 1)
            for dx in (-1, 0, 1)
            if (dz, dy, dx) > (0, 0, 0)
        ]
    for (z, y, x), i in idx.items():
        for dz, dy, dx in offsets:
            j = idx.get((z + dz, y + dy, x + dx))
            if j is not None:
                union(i, j)
    return len({find(i) for i in idx.values()})


def label_is_single_component(labels: np.ndarray, instance_id: int) -> bool:
    return brute_components(labels == instance_id, connectivity=6) == 1


# ----------------------------------------------------------------------
# exhaustive signed distance oracle (KD-tree nearest different label)
# ----------------------------------------------------------------------
def brute_signed_distance(labels: np.ndarray, d_clip_bg: float = 8.0) -> np.ndarray:
    from scipy.spatial import cKDTree

    labels = np.asarray(labels)
    out = np.empty(labels.shape, dtype=np.float64)
    fg = labels > 0
    if not fg.any():
        out.fill(-1.0)
        return out

    fg_coords = np.argwhere(fg)
    bg_coords = np.argwhere(~fg)
    if len(bg_coords):
        tree = cKDTree(fg_coords)
        d, _ = tree.query(bg_coords)
        out[tuple(bg_coords.T)] = -np.minimum(d, d_clip_bg) / d_clip_bg

    all_coords = np.argwhere(np.ones_like(labels, dtype=bool))
    for idx in np.unique(labels[fg]):
        inst = np.argwhere(labels == idx)
        other = all_coords[(labels != idx).ravel()]
        if len(other) == 0:
            out[tuple(inst.T)] = 1.0
            continue
        tree = cKDTree(other)
        d, _ = tree.query(inst)
        out[tuple(inst.T)] = d / d.max()
    return out


# ----------------------------------------------------------------------
# loop-based AP matcher (exhaustive per-prediction scan)
# ----------------------------------------------------------------------
def brute_ap50(pred: np.ndarray, gt: np.ndarray, scores: dict):
    """Direct transcription of the matching protocol with per-pair voxel
    counting; returns (ap, tp, fp, fn)."""
    pred_ids = sorted(int(i) for i in np.unique(pred) if i != 0)
    gt_ids = sorted(int(i) for i in np.unique(gt) if i != 0)
    if not pred_ids and not gt_ids:
        return 1.0, 0, 0, 0
    if not pred_ids:
        return 0.0, 0, 0, len(gt_ids)
    if not gt_ids:
        return 0.0, 0, len(pred_ids), 0

    order = sorted(pred_ids, key=lambda i: (-scores[i], i))
    taken = set()
    outcomes = []
    for pid in order:
        pmask = pred == pid
        best = None
        for gid in gt_ids:
            if gid in taken:
                continue
            gmask = gt == gid
            inter = float(np.logical_and(pmask, gmask).sum())
            union = float(np.logical_or(pmask, gmask).sum())
            iou = inter / union
            if iou >= 0.5 and (best is None or iou > best[1]):
                best = (gid, iou)
        if best is not None:
            taken.add(best[0])
            outcomes.append(True)
        else:
            outcomes.append(False)

    tp_cum = 0
    points = []
    for rank, is_tp in enumerate(outcomes, start=1):
        tp_cum += is_tp
        points.append((tp_cum / len(gt_ids), tp_cum / rank))
    # precision envelope, all-point interpolation
    ap = 0.0
    prev_r = 0.0
    for i, (r, _) in enumerate(points):
        if r > prev_r:
            best_p = max(p for rr, p in points[i:])
            ap += (r - prev_r) * best_p
            prev_r = r
    tp = tp_cum
    return ap, tp, len(pred_ids) - tp, len(gt_ids) - tp


# ----------------------------------------------------------------------
# random label volumes for codec tests
# ----------------------------------------------------------------------
def random_blob_labels(shape, rng, n_seeds=4, smooth=2.0):
    """Irregular blobby label volumes from thresholded smoothed noise."""
    from scipy import ndimage

    field = ndimage.gaussian_filter(rng.normal(size=shape), smooth)
    mask = field > np.quantile(field, 0.75)
    labels, _ = ndimage.label(mask)
    return labels.astype(np.int32)
