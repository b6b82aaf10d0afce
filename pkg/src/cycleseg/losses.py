"""The eight training objective terms as pure differentiable functions.

Adversarial terms default to the least-squares form; the log-likelihood
form is kept behind a flag. All terms carry uniform weight one and the
total is their plain sum; ablations drop terms rather than reweighting.
"""

from dataclasses import dataclass, fields

import torch

BCE_EPS = 1e-7

TERM_NAMES = (
    "gan_img_xy",
    "gan_img_yx",
    "cycle",
    "seg_sup_xy",
    "seg_sup_yx",
    "struct_consistency",
    "gan_seg_yx",
    "gan_seg_xy",
)


class NonFiniteLossError(RuntimeError):
    def __init__(self, term: str, value: float):
        super().__init__(f"non-finite loss term {term!r}: {value}")
        self.term = term


@dataclass
class LossBreakdown:
    """Per-term objective values; absent terms (ablated) are None."""

    gan_img_xy: object = None
    gan_img_yx: object = None
    cycle: object = None
    seg_sup_xy: object = None
    seg_sup_yx: object = None
    struct_consistency: object = None
    gan_seg_yx: object = None
    gan_seg_xy: object = None
    total: object = None

    def present(self) -> dict:
        return {
            name: getattr(self, name)
            for name in TERM_NAMES
            if getattr(self, name) is not None
        }

    def to_dict(self) -> dict:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            if torch.is_tensor(v):
                v = float(v.detach())
            out[f.name] = v
        return out


def _check_nonempty(t: torch.Tensor, what: str):
    if t.numel() == 0:
        raise ValueError(f"{what}: empty tensor")


def lsgan_generator_loss(fake_scores: torch.Tensor) -> torch.Tensor:
    """Mean squared distance of fake scores from the real target 1."""
    _check_nonempty(fake_scores, "lsgan_generator_loss")
    return ((fake_scores - 1.0) ** 2).mean()


def lsgan_discriminator_loss(
    real_scores: torch.Tensor, fake_scores: torch.Tensor
) -> torch.Tensor:
    """0.5 * mean((real - 1)^2) + 0.5 * mean(fake^2)."""
    _check_nonempty(real_scores, "lsgan_discriminator_loss")
    _check_nonempty(fake_scores, "lsgan_discriminator_loss")
    return 0.5 * ((real_scores - 1.0) ** 2).mean() + 0.5 * (fake_scores**2).mean()


def gan_generator_loss(fake_scores: torch.Tensor, mode: str = "lsgan") -> torch.Tensor:
    if mode == "lsgan":
        return lsgan_generator_loss(fake_scores)
    if mode == "bce":
        # log-likelihood form on raw scores (non-saturating generator)
        _check_nonempty(fake_scores, "gan_generator_loss")
        return torch.nn.functional.binary_cross_entropy_with_logits(
            fake_scores, torch.ones_like(fake_scores)
        )
    raise ValueError(f"unknown gan mode {mode!r}")


def gan_discriminator_loss(
    real_scores: torch.Tensor, fake_scores: torch.Tensor, mode: str = "lsgan"
) -> torch.Tensor:
    if mode == "lsgan":
        return lsgan_discriminator_loss(real_scores, fake_scores)
    if mode == "bce":
        _check_nonempty(real_scores, "gan_discriminator_loss")
        _check_nonempty(fake_scores, "gan_discriminator_loss")
        bce = torch.nn.functional.binary_cross_entropy_with_logits
        return 0.5 * bce(real_scores, torch.ones_like(real_scores)) + 0.5 * bce(
            fake_scores, torch.zeros_like(fake_scores)
        )
    raise ValueError(f"unknown gan mode {mode!r}")


def cycle_loss(reconstructed: torch.Tensor, clean_target: torch.Tensor) -> torch.Tensor:
    """Mean absolute error against the clean (uncorrupted) patch."""
    if reconstructed.shape != clean_target.shape:
        raise ValueError(
            f"cycle_loss: shape mismatch {tuple(reconstructed.shape)} vs "
            f"{tuple(clean_target.shape)}"
        )
    return (reconstructed - clean_target).abs().mean()


def binary_cross_entropy(pred: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    p = pred.clamp(BCE_EPS, 1.0 - BCE_EPS)
    return -(target * p.log() + (1.0 - target) * (1.0 - p).log()).mean()


def supervised_seg_loss(pred_seg: torch.Tensor, target_seg: torch.Tensor) -> torch.Tensor:
    """BCE on the foreground and contour channels plus MSE on distance.

    Both arguments are (..., 3, z, y, x) with channels ordered
    (foreground, contour, distance); each term is voxel-averaged.
    """
    if pred_seg.shape != target_seg.shape:
        raise ValueError(
            f"supervised_seg_loss: shape mismatch {tuple(pred_seg.shape)} vs "
            f"{tuple(target_seg.shape)}"
        )
    if pred_seg.shape[-4] != 3:
        raise ValueError("supervised_seg_loss: expected 3 channels")
    pf, pc, pd = pred_seg.unbind(dim=-4)
    tf, tc, td = target_seg.unbind(dim=-4)
    return (
        binary_cross_entropy(pf, tf)
        + binary_cross_entropy(pc, tc)
        + ((pd - td) ** 2).mean()
    )


def structural_consistency_loss(
    seg_direct: torch.Tensor, seg_roundtrip: torch.Tensor
) -> torch.Tensor:
    """Mean absolute difference over all three channels jointly."""
    if seg_direct.shape != seg_roundtrip.shape:
        raise ValueError(
            f"structural_consistency_loss: shape mismatch "
            f"{tuple(seg_direct.shape)} vs {tuple(seg_roundtrip.shape)}"
        )
    return (seg_direct - seg_roundtrip).abs().mean()


def total_objective(**parts) -> LossBreakdown:
    """Sum the supplied terms with uniform weight into a LossBreakdown.

    Terms absent (None) are excluded from the total, which is how the
    ablation switches drop entire loss groups. A non-finite term raises
    NonFiniteLossError naming the offender.
    """
    unknown = set(parts) - set(TERM_NAMES)
    if unknown:
        raise ValueError(f"unknown loss terms: {sorted(unknown)}")
    breakdown = LossBreakdown(**parts)
    total = None
    for name, value in breakdown.present().items():
        v = float(value.detach()) if torch.is_tensor(value) else float(value)
        if not torch.isfinite(torch.tensor(v)):
            raise NonFiniteLossError(name, v)
        total = value if total is None else total + value
    breakdown.total = total if total is not None else 0.0
    return breakdown
