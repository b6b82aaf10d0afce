"""Whole-volume inference, instance matching and evaluation.

Sliding-window prediction blends overlapping window outputs with
normalized per-voxel weights. Evaluation follows the volumetric
average-precision protocol at IoU 0.5: predictions are ranked by
confidence, matched greedily to ground truth, and the average precision
is the area under the all-point-interpolated precision/recall curve
(precision envelope).
"""

import dataclasses
from dataclasses import dataclass, field

import numpy as np
import torch

from .codec import BcdTriple, CodecParams, decode_bcd


@dataclass(frozen=True)
class InferConfig:
    patch_size: tuple[int, int, int] = (16, 48, 48)
    stride: tuple[int, int, int] = (8, 24, 24)
    blend: str = "gaussian"  # "gaussian" | "uniform"
    direction: str = "y_to_x"  # "y_to_x" (segment target) | "x_to_y"

    def __post_init__(self):
        if any(s < 1 for s in self.stride):
            raise ValueError("InferConfig: stride must be >= 1 per axis")
        if any(s > p for s, p in zip(self.stride, self.patch_size)):
            raise ValueError("InferConfig: stride must be <= patch_size per axis")
        if self.blend not in ("gaussian", "uniform"):
            raise ValueError(f"InferConfig: unknown blend {self.blend!r}")
        if self.direction not in ("y_to_x", "x_to_y"):
            raise ValueError(f"InferConfig: unknown direction {self.direction!r}")


@dataclass
class APReport:
    ap50: float
    precision_recall_curve: list
    tp: int
    fp: int
    fn: int
    matched: list
    n_pred: int
    n_gt: int

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def _window_starts(dim: int, patch: int, stride: int) -> list[int]:
    starts = list(range(0, dim - patch + 1, stride))
    if starts[-1] != dim - patch:
        starts.append(dim - patch)
    return starts


def _blend_weights(patch: tuple[int, int, int], kind: str) -> np.ndarray:
    if kind == "uniform":
        return np.ones(patch, dtype=np.float64)
    axes = []
    for n in patch:
        x = np.arange(n, dtype=np.float64) - (n - 1) / 2.0
        sigma = max(n / 4.0, 1.0)
        axes.append(np.exp(-0.5 * (x / sigma) ** 2))
    return axes[0][:, None, None] * axes[1][None, :, None] * axes[2][None, None, :]


def sliding_window_predict(
    generator,
    volume: np.ndarray,
    config: InferConfig = InferConfig(),
) -> tuple[np.ndarray, BcdTriple]:
    """Run the generator over overlapping windows and blend the outputs.

    `volume` holds [0, 1] intensities; the generator receives [-1, 1]
    patches. Returns the translated image mapped back to [0, 1] plus the
    blended segmentation channels.
    """
    vol = np.asarray(volume, dtype=np.float32)
    patch = config.patch_size
    if any(v < p for v, p in zip(vol.shape, patch)):
        raise ValueError(f"volume shape {vol.shape} smaller than patch {patch}")

    weights = _blend_weights(patch, config.blend)
    acc = np.zeros((4,) + vol.shape, dtype=np.float64)
    norm = np.zeros(vol.shape, dtype=np.float64)
    starts = [
        _window_starts(v, p, s) for v, p, s in zip(vol.shape, patch, config.stride)
    ]
    with torch.no_grad():
        for z0 in starts[0]:
            for y0 in starts[1]:
                for x0 in starts[2]:
                    sl = (
                        slice(z0, z0 + patch[0]),
                        slice(y0, y0 + patch[1]),
                        slice(x0, x0 + patch[2]),
                    )
                    inp = torch.from_numpy(vol[sl] * 2.0 - 1.0)[None, None]
                    out = generator(inp)
                    img = out.image[0, 0].numpy().astype(np.float64)
                    seg = out.seg[0].numpy().astype(np.float64)
                    acc[(0,) + sl] += weights * img
                    for c in range(3):
                        acc[(c + 1,) + sl] += weights * seg[c]
                    norm[sl] += weights
    acc /= norm[None]
    image01 = np.clip((acc[0] + 1.0) * 0.5, 0.0, 1.0).astype(np.float32)
    triple = BcdTriple(
        acc[1].astype(np.float32), acc[2].astype(np.float32), acc[3].astype(np.float32)
    )
    return image01, triple


def iou_matrix(pred: np.ndarray, gt: np.ndarray) -> dict:
    """IoU for every overlapping (pred_id, gt_id) pair via a joint histogram."""
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    if pred.shape != gt.shape:
        raise ValueError(f"iou_matrix: shape mismatch {pred.shape} vs {gt.shape}")
    both = (pred > 0) | (gt > 0)
    p = pred[both].astype(np.int64)
    g = gt[both].astype(np.int64)
    p_ids, p_sizes = np.unique(p[p > 0], return_counts=True)
    g_ids, g_sizes = np.unique(g[g > 0], return_counts=True)
    p_size = dict(zip(p_ids.tolist(), p_sizes.tolist()))
    g_size = dict(zip(g_ids.tolist(), g_sizes.tolist()))

    overlap = (p > 0) & (g > 0)
    key = p[overlap] * (int(gt.max()) + 1) + g[overlap]
    pairs, counts = np.unique(key, return_counts=True)
    out = {}
    base = int(gt.max()) + 1
    for k, inter in zip(pairs.tolist(), counts.tolist()):
        pid, gid = divmod(k, base)
        union = p_size[pid] + g_size[gid] - inter
        out[(pid, gid)] = inter / union
    return out


def _instance_sizes(labels: np.ndarray) -> dict:
    ids, counts = np.unique(labels[labels > 0], return_counts=True)
    return dict(zip(ids.tolist(), counts.tolist()))


def evaluate_ap50(
    pred: np.ndarray,
    gt: np.ndarray,
    scores: dict | None = None,
    iou_threshold: float = 0.5,
) -> APReport:
    """Average precision at an IoU threshold with greedy matching.

    Predictions are visited by descending confidence (ties by ascending
    id); each claims the highest-IoU unmatched ground-truth instance at
    or above the threshold (ties by lowest gt id). Without explicit
    scores, instance voxel counts rank the predictions.
    """
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    if pred.shape != gt.shape:
        raise ValueError(f"evaluate_ap50: shape mismatch {pred.shape} vs {gt.shape}")
    pred_ids = [int(i) for i in np.unique(pred) if i != 0]
    gt_ids = [int(i) for i in np.unique(gt) if i != 0]
    if scores is None:
        sizes = _instance_sizes(pred)
        scores = {i: float(sizes[i]) for i in pred_ids}
    missing = [i for i in pred_ids if i not in scores]
    if missing:
        raise ValueError(f"evaluate_ap50: missing scores for pred ids {missing}")

    if not pred_ids and not gt_ids:
        return APReport(1.0, [], 0, 0, 0, [], 0, 0)
    if not pred_ids:
        return APReport(0.0, [], 0, 0, len(gt_ids), [], 0, len(gt_ids))
    if not gt_ids:
        return APReport(0.0, [(0.0, 0.0)] * 0, 0, len(pred_ids), 0, [], len(pred_ids), 0)

    ious = iou_matrix(pred, gt)
    by_pred: dict[int, list] = {}
    for (pid, gid), v in ious.items():
        by_pred.setdefault(pid, []).append((gid, v))

    order = sorted(pred_ids, key=lambda i: (-scores[i], i))
    matched_gt: set[int] = set()
    matched = []
    curve = []
    tp = 0
    for rank, pid in enumerate(order, start=1):
        cands = [
            (gid, v)
            for gid, v in by_pred.get(pid, [])
            if v >= iou_threshold and gid not in matched_gt
        ]
        if cands:
            gid, v = max(cands, key=lambda c: (c[1], -c[0]))
            matched_gt.add(gid)
            matched.append((pid, gid, v))
            tp += 1
        curve.append((tp / len(gt_ids), tp / rank))

    fp = len(pred_ids) - tp
    fn = len(gt_ids) - tp
    ap = _all_point_ap(curve)
    return APReport(ap, curve, tp, fp, fn, matched, len(pred_ids), len(gt_ids))


def _all_point_ap(curve: list) -> float:
    """Area under the precision envelope over the achieved recall range."""
    if not curve:
        return 0.0
    recalls = np.array([r for r, _ in curve])
    precisions = np.array([p for _, p in curve])
    # envelope: best precision at any recall >= r
    env = np.maximum.accumulate(precisions[::-1])[::-1]
    ap = 0.0
    prev_r = 0.0
    for r, p in zip(recalls, env):
        if r > prev_r:
            ap += (r - prev_r) * p
            prev_r = r
    return float(ap)


def histogram_match(source: np.ndarray, reference: np.ndarray) -> np.ndarray:
    """Map source intensities so their CDF matches the reference CDF."""
    source = np.asarray(source)
    reference = np.asarray(reference)
    if source.size == 0 or reference.size == 0:
        raise ValueError("histogram_match: empty volume")
    src_values, src_inverse, src_counts = np.unique(
        source.ravel(), return_inverse=True, return_counts=True
    )
    src_quantiles = np.cumsum(src_counts) / source.size
    ref_values, ref_counts = np.unique(reference.ravel(), return_counts=True)
    ref_quantiles = np.cumsum(ref_counts) / reference.size
    mapped = np.interp(src_quantiles, ref_quantiles, ref_values)
    out = mapped[src_inverse].reshape(source.shape)
    return np.clip(out, 0.0, 1.0).astype(np.float32)


def instance_scores_from_foreground(labels: np.ndarray, foreground: np.ndarray) -> dict:
    """Confidence per instance: mean predicted foreground probability."""
    out = {}
    for i in np.unique(labels):
        if i == 0:
            continue
        out[int(i)] = float(foreground[labels == i].mean())
    return out


def segment_volume(
    generator,
    volume: np.ndarray,
    infer_config: InferConfig = InferConfig(),
    codec_params: CodecParams = CodecParams(),
    gt: np.ndarray | None = None,
):
    """Sliding-window predict, decode instances, optionally score them.

    Returns (labels, translated image, APReport or None). Instance
    confidences come from the mean of the predicted foreground channel.
    """
    image01, triple = sliding_window_predict(generator, volume, infer_config)
    labels = decode_bcd(triple, codec_params)
    report = None
    if gt is not None:
        scores = instance_scores_from_foreground(labels, triple.foreground)
        report = evaluate_ap50(labels, gt, scores)
    return labels, image01, report


def segment_with_checkpoint(
    checkpoint_path: str,
    volume: np.ndarray,
    infer_config: InferConfig = InferConfig(),
    codec_params: CodecParams = CodecParams(),
    gt: np.ndarray | None = None,
):
    """segment_volume with the generator picked from a training checkpoint.

    direction y_to_x segments target-domain volumes with the Y->X
    generator; x_to_y uses the X->Y generator instead.
    """
    from .trainer import load_generators

    gens = load_generators(checkpoint_path)
    gen = gens["gen_yx"] if infer_config.direction == "y_to_x" else gens["gen_xy"]
    return segment_volume(gen, volume, infer_config, codec_params, gt)
