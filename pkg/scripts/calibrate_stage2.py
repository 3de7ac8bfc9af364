"""Calibration for the stage-2 criterion: trains the scene-token model
against a frozen stage-1 checkpoint and tracks held-out hole ratios vs the
visible-union baseline."""

import sys
import time

import numpy as np
import torch

from scenerecon.checkpoint import load_stage1, save_checkpoint
from scenerecon.flowmatch import FlowConfig
from scenerecon.geometry import PointCloud
from scenerecon.metrics import hole_ratio
from scenerecon.stage2 import Stage2Config, build_stage2_model, infer, train_step_img
from scenerecon.synthdata import make_scene_sample, occluded_fraction


def main():
    stage1_path = sys.argv[1]
    steps = int(sys.argv[2]) if len(sys.argv) > 2 else 1800
    torch.set_num_threads(2)

    t0 = time.perf_counter()
    train = [
        make_scene_sample(f"train_{i:03d}", "train", i, k=(i % 2) + 1,
                          n_complete=2048, image_size=64)
        for i in range(64)
    ]
    val = [
        make_scene_sample(f"val_{i:03d}", "val", 100_000 + i, k=(i % 2) + 1,
                          n_complete=2048, image_size=64)
        for i in range(8)
    ]
    print(f"data gen: {time.perf_counter()-t0:.1f}s", flush=True)

    decoder, _ = load_stage1(stage1_path)
    decoder.requires_grad_(False)
    pairs = [(s.images(), s.normalized_complete()) for s in train]
    model = build_stage2_model(Stage2Config(image_size=64, patch_size=8, layers=4, channels=64),
                               latent_tokens=64, latent_channels=64, seed=1)
    opt = torch.optim.AdamW(model.parameters(), lr=3e-4)
    warmup = 100

    def lr_lambda(step):
        if step < warmup:
            return (step + 1) / warmup
        frac = (step - warmup) / max(1, steps - warmup)
        return 0.01 + 0.99 * 0.5 * (1 + np.cos(np.pi * frac))

    sched = torch.optim.lr_scheduler.LambdaLR(opt, lr_lambda)
    rng = np.random.default_rng([1, 0])
    flow = FlowConfig()

    def eval_holes():
        pred_h, vis_h = [], []
        for i, s in enumerate(val):
            world = s.complete_cloud.transformed(s.views[0].world_from_camera)
            occ = occluded_fraction(s.scene, s.views, world.points)
            if occ < 0.2:
                continue
            gt = PointCloud(s.normalized_complete())
            tau = 0.1 * gt.bbox_diagonal()
            res = infer(model, decoder, s.images(), 2048, flow, np.random.default_rng([9, i]))
            pred_h.append(hole_ratio(res.cloud, gt, tau))
            vis_h.append(hole_ratio(PointCloud(s.normalized_visible()), gt, tau))
        return float(np.mean(pred_h)), float(np.mean(vis_h)), len(pred_h)

    t0 = time.perf_counter()
    for step in range(1, steps + 1):
        idx = rng.integers(0, len(pairs), size=4)
        loss = train_step_img(model, decoder, opt, [pairs[i] for i in idx], rng, flow,
                              n_train=2048)
        sched.step()
        if step == 1 or step % 100 == 0:
            msg = f"step {step} loss {loss:.4f} ({(time.perf_counter()-t0)/step:.2f}s/step)"
            if step % 600 == 0 or step == steps:
                ph, vh, n = eval_holes()
                msg += f" holes pred {ph:.4f} vs visible {vh:.4f} over {n} scenes"
            print(msg, flush=True)
    save_checkpoint("/tmp/calib_stage2.nck", "stage2", model.config, model, step=steps,
                    extra={"latent_tokens": 64, "latent_channels": 64})


if __name__ == "__main__":
    main()
