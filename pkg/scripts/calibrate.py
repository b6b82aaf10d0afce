"""Calibration probe for the directional-ablation experiment sizing."""

import argparse
import json
import time

import numpy as np
import torch

from cycleseg import (
    DiscriminatorConfig,
    DomainVolume,
    GeneratorConfig,
    InferConfig,
    PhantomConfig,
    TrainConfig,
    Trainer,
    make_phantom,
    segment_volume,
)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--iters", type=int, default=400)
    ap.add_argument("--ablation", default="full")
    ap.add_argument("--channels", default="8,16,24,32")
    ap.add_argument("--patch", default="16,32,32")
    ap.add_argument("--batch", type=int, default=1)
    ap.add_argument("--eval-every", type=int, default=200)
    ap.add_argument("--tag", default="cal")
    args = ap.parse_args()

    torch.set_num_threads(1)
    channels = tuple(int(c) for c in args.channels.split(","))
    patch = tuple(int(c) for c in args.patch.split(","))

    shape = (64, 128, 128)
    t0 = time.perf_counter()
    p1 = PhantomConfig(shape=shape, n_instances=90, radius_range=(4.0, 8.0), seed=11)
    p2 = PhantomConfig(shape=shape, n_instances=90, radius_range=(4.0, 8.0), seed=22)
    labels_x, img_xa, _ = make_phantom(p1)
    labels_y, _, img_yb = make_phantom(p2)
    print(f"[{args.tag}] phantoms in {time.perf_counter()-t0:.1f}s", flush=True)

    gen_cfg = GeneratorConfig(depth=4, base_channels=channels)
    disc_cfg = DiscriminatorConfig(n_layers=3, base_channels=max(channels[0] * 2, 16))
    tc = TrainConfig(
        patch_size=patch, batch_size=args.batch, iterations=args.iters,
        ablation=args.ablation, seed=0, checkpoint_every=0,
    )
    tr = Trainer(tc, gen_cfg, disc_cfg)
    dx = [DomainVolume(img_xa, labels_x)]
    dy = [DomainVolume(img_yb)]

    infer_cfg = InferConfig(patch_size=patch, stride=tuple(p // 2 for p in patch))

    t0 = time.perf_counter()
    while tr.iteration < args.iters:
        bx = tr.sample_batch("x", dx)
        by = tr.sample_batch("y", dy)
        brk = tr.train_step(bx, by)
        it = tr.iteration
        if it % 50 == 0:
            rate = (time.perf_counter() - t0) / it
            print(f"[{args.tag}] iter {it} total={float(brk.total):.3f} ({rate:.2f}s/it)", flush=True)
        if args.eval_every and it % args.eval_every == 0:
            from cycleseg.inference import sliding_window_predict
            from cycleseg.codec import decode_bcd, CodecParams
            from cycleseg.inference import evaluate_ap50

            tr.nets.gen_yx.eval()
            _, triple = sliding_window_predict(tr.nets.gen_yx, img_yb, infer_cfg)
            tr.nets.gen_yx.train()
            fg_on = triple.foreground[labels_y > 0]
            fg_off = triple.foreground[labels_y == 0]
            d_on = triple.distance[labels_y > 0]
            print(
                f"[{args.tag}] iter {it}: fg on/off mean {fg_on.mean():.2f}/{fg_off.mean():.2f} "
                f"q90(fg_on)={np.quantile(fg_on, 0.9):.2f} q90(d_on)={np.quantile(d_on, 0.9):.2f} "
                f"ctr_on={triple.contour[labels_y > 0].mean():.2f}",
                flush=True,
            )
            for params in (CodecParams(), CodecParams(seed_foreground_min=0.6, seed_distance_min=0.1, mask_threshold=0.3)):
                lab = decode_bcd(triple, params)
                rep = evaluate_ap50(lab, labels_y)
                print(
                    f"[{args.tag}]   seeds(b>{params.seed_foreground_min},d>{params.seed_distance_min}): "
                    f"AP50={rep.ap50:.3f} (n_pred={rep.n_pred}, tp={rep.tp}, fp={rep.fp}, fn={rep.fn})",
                    flush=True,
                )
            tr.save_checkpoint(f"/tmp/{args.tag}_last.pt")
    elapsed = time.perf_counter() - t0
    print(f"[{args.tag}] done {args.iters} iters in {elapsed/60:.1f} min", flush=True)


if __name__ == "__main__":
    main()
