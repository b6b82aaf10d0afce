"""Joint translation/segmentation optimization loop.

One iteration updates the two generators on the summed objective, then
each discriminator on its least-squares loss against detached fakes.
The source domain (X) carries labels, the target domain (Y) does not;
the Y branch contributes only translation, consistency and adversarial
terms. When computing the supervised segmentation loss for the Y->X
generator, the synthesized target-style image is detached so that
segmentation gradients cannot steer the image translation.
"""

import dataclasses
import json
import os
import time
from dataclasses import dataclass, field

import numpy as np
import torch

from .augment import AugmentConfig, SpatialTransform, corrupt
from .codec import CodecParams, encode_bcd
from .losses import (
    LossBreakdown,
    NonFiniteLossError,
    cycle_loss,
    gan_discriminator_loss,
    gan_generator_loss,
    structural_consistency_loss,
    supervised_seg_loss,
    total_objective,
)
from .networks import (
    DiscriminatorConfig,
    GeneratorConfig,
    build_discriminator,
    build_generator,
    to_model_range,
)

ABLATIONS = ("full", "no_augment", "no_semi_sup", "translation_only")


@dataclass(frozen=True)
class TrainConfig:
    patch_size: tuple[int, int, int] = (16, 48, 48)
    batch_size: int = 2
    iterations: int = 2000
    lr: float = 2e-4
    betas: tuple[float, float] = (0.5, 0.999)
    ablation: str = "full"
    gan_mode: str = "lsgan"
    image_pool_size: int = 0
    seed: int = 0
    checkpoint_every: int = 500
    eval_every: int = 0

    def __post_init__(self):
        if self.iterations < 0:
            raise ValueError("TrainConfig: iterations must be >= 0")
        if self.ablation not in ABLATIONS:
            raise ValueError(f"TrainConfig: unknown ablation {self.ablation!r}")
        if self.batch_size < 1:
            raise ValueError("TrainConfig: batch_size must be >= 1")


@dataclass
class DomainVolume:
    """One training volume: [0, 1] image plus labels for the source domain."""

    image: np.ndarray
    labels: np.ndarray | None = None


@dataclass
class Batch:
    augmented: torch.Tensor  # (n, 1, z, y, x) in [0, 1]
    clean: torch.Tensor  # (n, 1, z, y, x) in [0, 1]
    labels: np.ndarray | None = None  # (n, z, y, x) int, X domain only
    corruption_mask: np.ndarray | None = None


class NetBundle:
    """The five networks of the framework."""

    def __init__(self, gen_xy, gen_yx, disc_img_y, disc_img_x, disc_seg_x):
        self.gen_xy = gen_xy  # source image -> (target-style image, source seg)
        self.gen_yx = gen_yx  # target image -> (source-style image, target seg)
        self.disc_img_y = disc_img_y
        self.disc_img_x = disc_img_x
        self.disc_seg_x = disc_seg_x

    def discriminators(self):
        return (self.disc_img_y, self.disc_img_x, self.disc_seg_x)

    @classmethod
    def build(cls, gen_cfg: GeneratorConfig, disc_cfg: DiscriminatorConfig):
        seg_cfg = dataclasses.replace(disc_cfg, in_channels=3)
        img_cfg = dataclasses.replace(disc_cfg, in_channels=1)
        return cls(
            build_generator(gen_cfg),
            build_generator(gen_cfg),
            build_discriminator(img_cfg),
            build_discriminator(img_cfg),
            build_discriminator(seg_cfg),
        )


class ImagePool:
    """Buffer of past fakes; returns either the new fake or a stored one."""

    def __init__(self, size: int, rng: np.random.Generator):
        self.size = size
        self.rng = rng
        self.items: list[torch.Tensor] = []

    def query(self, batch: torch.Tensor) -> torch.Tensor:
        if self.size <= 0:
            return batch
        out = []
        for item in batch:
            item = item.detach()
            if len(self.items) < self.size:
                self.items.append(item)
                out.append(item)
            elif self.rng.random() > 0.5:
                i = int(self.rng.integers(self.size))
                out.append(self.items[i])
                self.items[i] = item
            else:
                out.append(item)
        return torch.stack(out)


def generator_objective(
    nets: NetBundle,
    batch_x: Batch,
    batch_y: Batch,
    targets_x: torch.Tensor | None,
    ablation: str = "full",
    gan_mode: str = "lsgan",
):
    """All generator-side loss terms for one batch pair.

    Returns (LossBreakdown of tensors, fakes dict for discriminator
    updates). Cycle reconstructions are compared to the clean patches,
    not the corrupted inputs, so the generators learn to restore
    corrupted regions.
    """
    xi = to_model_range(batch_x.augmented)
    yi = to_model_range(batch_y.augmented)
    xc = to_model_range(batch_x.clean)
    yc = to_model_range(batch_y.clean)

    f_img, f_seg = nets.gen_xy(xi)  # synthesized target-style image + source seg
    b_img, b_seg = nets.gen_yx(yi)  # synthesized source-style image + target seg

    terms: dict = {
        "gan_img_xy": gan_generator_loss(nets.disc_img_y(f_img), gan_mode),
        "gan_img_yx": gan_generator_loss(nets.disc_img_x(b_img), gan_mode),
    }
    cyc_x = cycle_loss(nets.gen_yx(f_img).image, xc)
    roundtrip_y = nets.gen_xy(b_img)
    terms["cycle"] = cyc_x + cycle_loss(roundtrip_y.image, yc)

    if ablation != "translation_only":
        if targets_x is None:
            raise ValueError("segmentation losses need encoded targets for domain X")
        terms["seg_sup_xy"] = supervised_seg_loss(f_seg, targets_x)
        # detach: segmentation supervision must not steer the translation
        terms["seg_sup_yx"] = supervised_seg_loss(
            nets.gen_yx(f_img.detach()).seg, targets_x
        )

    if ablation in ("full", "no_augment"):
        terms["struct_consistency"] = structural_consistency_loss(b_seg, roundtrip_y.seg)
        terms["gan_seg_yx"] = gan_generator_loss(nets.disc_seg_x(b_seg), gan_mode)
        terms["gan_seg_xy"] = gan_generator_loss(nets.disc_seg_x(roundtrip_y.seg), gan_mode)

    fakes = {
        "img_y": f_img.detach(),
        "img_x": b_img.detach(),
        "seg_x": torch.cat([b_seg.detach(), roundtrip_y.seg.detach()], dim=0),
    }
    return total_objective(**terms), fakes


class Trainer:
    """Holds the five networks, their optimizers and the sampling RNG."""

    def __init__(
        self,
        train_cfg: TrainConfig = TrainConfig(),
        gen_cfg: GeneratorConfig = GeneratorConfig(),
        disc_cfg: DiscriminatorConfig = DiscriminatorConfig(),
        codec_params: CodecParams = CodecParams(),
        aug_cfg: AugmentConfig = AugmentConfig(),
        device: str = "cpu",
    ):
        sp = gen_cfg.stride_product
        if any(s % sp for s in train_cfg.patch_size):
            raise ValueError(
                f"patch_size {train_cfg.patch_size} not divisible by the "
                f"generator stride product {sp}"
            )
        self.cfg = train_cfg
        self.gen_cfg = gen_cfg
        self.disc_cfg = disc_cfg
        self.codec_params = codec_params
        self.aug_cfg = aug_cfg
        self.device = torch.device(device)

        torch.manual_seed(train_cfg.seed)
        self.nets = NetBundle.build(gen_cfg, disc_cfg)
        for net in vars(self.nets).values():
            net.to(self.device)

        adam = lambda params: torch.optim.Adam(params, lr=train_cfg.lr, betas=train_cfg.betas)
        gen_params = list(self.nets.gen_xy.parameters()) + list(self.nets.gen_yx.parameters())
        self.opt_gen = adam(gen_params)
        self.opt_disc_img_y = adam(self.nets.disc_img_y.parameters())
        self.opt_disc_img_x = adam(self.nets.disc_img_x.parameters())
        self.opt_disc_seg_x = adam(self.nets.disc_seg_x.parameters())

        self.rng = np.random.default_rng(train_cfg.seed)
        self.pool_img_y = ImagePool(train_cfg.image_pool_size, self.rng)
        self.pool_img_x = ImagePool(train_cfg.image_pool_size, self.rng)
        self.iteration = 0

    # ------------------------------------------------------------------
    # sampling
    # ------------------------------------------------------------------
    def sample_batch(self, domain: str, volumes: list[DomainVolume]) -> Batch:
        """Draw a batch of uniformly-positioned, jointly-augmented patches."""
        if domain not in ("x", "y"):
            raise ValueError(f"unknown domain {domain!r}")
        patch = self.cfg.patch_size
        for vol in volumes:
            if any(v < p for v, p in zip(vol.image.shape, patch)):
                raise ValueError(
                    f"volume shape {vol.image.shape} smaller than patch {patch}"
                )
        aug_list, clean_list, label_list, mask_list = [], [], [], []
        for _ in range(self.cfg.batch_size):
            vol = volumes[int(self.rng.integers(len(volumes)))]
            corner = [
                int(self.rng.integers(0, n - p + 1))
                for n, p in zip(vol.image.shape, patch)
            ]
            sl = tuple(slice(c, c + p) for c, p in zip(corner, patch))
            img = np.ascontiguousarray(vol.image[sl], dtype=np.float32)
            lab = None
            if domain == "x":
                if vol.labels is None:
                    raise ValueError("domain X volumes must carry labels")
                lab = np.ascontiguousarray(vol.labels[sl])

            if self.aug_cfg.enable_flips_rotations:
                t = SpatialTransform.sample(self.rng)
                img = t.apply(img)
                if lab is not None:
                    lab = t.apply(lab)

            if self.cfg.ablation == "no_augment":
                pair_aug, pair_mask = img, np.zeros(img.shape, dtype=bool)
            else:
                pair = corrupt(img, self.aug_cfg, self.rng)
                pair_aug, pair_mask = pair.augmented, pair.corruption_mask

            aug_list.append(pair_aug)
            clean_list.append(img)
            mask_list.append(pair_mask)
            if lab is not None:
                label_list.append(lab)

        to_tensor = lambda arrs: torch.from_numpy(np.stack(arrs)[:, None]).to(self.device)
        return Batch(
            augmented=to_tensor(aug_list),
            clean=to_tensor(clean_list),
            labels=np.stack(label_list) if label_list else None,
            corruption_mask=np.stack(mask_list),
        )

    def encode_targets(self, labels: np.ndarray) -> torch.Tensor:
        """Encode a batch of label patches into (n, 3, z, y, x) targets."""
        stacks = [encode_bcd(lab, self.codec_params).stack() for lab in labels]
        return torch.from_numpy(np.stack(stacks)).to(self.device)

    # ------------------------------------------------------------------
    # one optimization step
    # ------------------------------------------------------------------
    def train_step(self, batch_x: Batch, batch_y: Batch) -> LossBreakdown:
        targets_x = None
        if self.cfg.ablation != "translation_only":
            targets_x = self.encode_targets(batch_x.labels)

        for d in self.nets.discriminators():
            d.requires_grad_(False)
        breakdown, fakes = generator_objective(
            self.nets, batch_x, batch_y, targets_x, self.cfg.ablation, self.cfg.gan_mode
        )
        self.opt_gen.zero_grad(set_to_none=True)
        breakdown.total.backward()
        self.opt_gen.step()
        for d in self.nets.discriminators():
            d.requires_grad_(True)

        real_y = to_model_range(batch_y.clean)
        real_x = to_model_range(batch_x.clean)
        self._disc_update(
            "disc_img_y", self.nets.disc_img_y, self.opt_disc_img_y,
            real_y, self.pool_img_y.query(fakes["img_y"]),
        )
        self._disc_update(
            "disc_img_x", self.nets.disc_img_x, self.opt_disc_img_x,
            real_x, self.pool_img_x.query(fakes["img_x"]),
        )
        if self.cfg.ablation in ("full", "no_augment"):
            self._disc_update(
                "disc_seg_x", self.nets.disc_seg_x, self.opt_disc_seg_x,
                targets_x, fakes["seg_x"],
            )

        self.iteration += 1
        return LossBreakdown(**breakdown.to_dict())

    def _disc_update(self, name, disc, opt, real, fake):
        loss = gan_discriminator_loss(disc(real), disc(fake), self.cfg.gan_mode)
        if not torch.isfinite(loss):
            raise NonFiniteLossError(name, float(loss))
        opt.zero_grad(set_to_none=True)
        loss.backward()
        opt.step()

    # ------------------------------------------------------------------
    # full loop
    # ------------------------------------------------------------------
    def train(
        self,
        domain_x: list[DomainVolume],
        domain_y: list[DomainVolume],
        out_dir: str | None = None,
        log_path: str | None = None,
    ) -> list[LossBreakdown]:
        """Run cfg.iterations steps; write checkpoints and a JSONL log."""
        if out_dir is not None:
            os.makedirs(out_dir, exist_ok=True)
            if log_path is None:
                log_path = os.path.join(out_dir, "train_log.jsonl")
        log_file = open(log_path, "a") if log_path else None
        history = []
        try:
            while self.iteration < self.cfg.iterations:
                t0 = time.perf_counter()
                batch_x = self.sample_batch("x", domain_x)
                batch_y = self.sample_batch("y", domain_y)
                breakdown = self.train_step(batch_x, batch_y)
                history.append(breakdown)
                if log_file is not None:
                    record = {"iteration": self.iteration, **breakdown.to_dict()}
                    record["wall_time"] = time.perf_counter() - t0
                    log_file.write(json.dumps(record) + "\n")
                    log_file.flush()
                if (
                    out_dir is not None
                    and self.cfg.checkpoint_every > 0
                    and self.iteration % self.cfg.checkpoint_every == 0
                ):
                    self.save_checkpoint(
                        os.path.join(out_dir, f"checkpoint_{self.iteration:07d}.pt")
                    )
            if out_dir is not None:
                self.save_checkpoint(os.path.join(out_dir, "checkpoint_final.pt"))
        finally:
            if log_file is not None:
                log_file.close()
        return history

    # ------------------------------------------------------------------
    # checkpointing
    # ------------------------------------------------------------------
    def state_dict(self) -> dict:
        return {
            "iteration": self.iteration,
            "nets": {k: v.state_dict() for k, v in vars(self.nets).items()},
            "optimizers": {
                "gen": self.opt_gen.state_dict(),
                "disc_img_y": self.opt_disc_img_y.state_dict(),
                "disc_img_x": self.opt_disc_img_x.state_dict(),
                "disc_seg_x": self.opt_disc_seg_x.state_dict(),
            },
            "np_rng": self.rng.bit_generator.state,
            "torch_rng": torch.get_rng_state(),
            "pools": {
                "img_y": self.pool_img_y.items,
                "img_x": self.pool_img_x.items,
            },
            "configs": {
                "train": dataclasses.asdict(self.cfg),
                "generator": dataclasses.asdict(self.gen_cfg),
                "discriminator": dataclasses.asdict(self.disc_cfg),
                "codec": dataclasses.asdict(self.codec_params),
                "augment": dataclasses.asdict(self.aug_cfg),
            },
        }

    def load_state_dict(self, state: dict) -> None:
        self.iteration = state["iteration"]
        for k, sd in state["nets"].items():
            getattr(self.nets, k).load_state_dict(sd)
        self.opt_gen.load_state_dict(state["optimizers"]["gen"])
        self.opt_disc_img_y.load_state_dict(state["optimizers"]["disc_img_y"])
        self.opt_disc_img_x.load_state_dict(state["optimizers"]["disc_img_x"])
        self.opt_disc_seg_x.load_state_dict(state["optimizers"]["disc_seg_x"])
        self.rng.bit_generator.state = state["np_rng"]
        torch.set_rng_state(state["torch_rng"])
        self.pool_img_y.items = list(state["pools"]["img_y"])
        self.pool_img_x.items = list(state["pools"]["img_x"])

    def save_checkpoint(self, path: str) -> None:
        os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
        torch.save(self.state_dict(), path)

    @classmethod
    def from_checkpoint(cls, path: str, device: str = "cpu") -> "Trainer":
        state = torch.load(path, map_location=device, weights_only=False)
        cfgs = state["configs"]
        trainer = cls(
            train_cfg=_from_dict(TrainConfig, cfgs["train"]),
            gen_cfg=_from_dict(GeneratorConfig, cfgs["generator"]),
            disc_cfg=_from_dict(DiscriminatorConfig, cfgs["discriminator"]),
            codec_params=_from_dict(CodecParams, cfgs["codec"]),
            aug_cfg=_from_dict(AugmentConfig, cfgs["augment"]),
            device=device,
        )
        trainer.load_state_dict(state)
        return trainer


def load_generators(path: str, device: str = "cpu") -> dict:
    """Rebuild just the two generators from a checkpoint file."""
    state = torch.load(path, map_location=device, weights_only=False)
    gen_cfg = _from_dict(GeneratorConfig, state["configs"]["generator"])
    out = {}
    for key in ("gen_xy", "gen_yx"):
        net = build_generator(gen_cfg)
        net.load_state_dict(state["nets"][key])
        net.to(device).eval()
        out[key] = net
    return out


def _from_dict(cls, d: dict):
    """Rebuild a config dataclass from asdict output (lists -> tuples)."""
    kwargs = {}
    for f in dataclasses.fields(cls):
        if f.name not in d:
            continue
        v = d[f.name]
        if isinstance(v, list):
            v = tuple(v)
        kwargs[f.name] = v
    return cls(**kwargs)
