"""Calibration run for the desk-scale stage-1 criterion: measures per-step
cost and the chamfer(recon)/chamfer(noise) trajectory on 64 scenes."""

import sys
import time

import numpy as np
import torch

from scenerecon.checkpoint import save_checkpoint
from scenerecon.flowmatch import FlowConfig
from scenerecon.geometry import PointCloud
from scenerecon.metrics import chamfer, one_sided_chamfer
from scenerecon.stage1 import Stage1Config, build_stage1_model, reconstruct, train_step_ae
from scenerecon.synthdata import make_scene_sample


def main():
    steps = int(sys.argv[1]) if len(sys.argv) > 1 else 2000
    batch = int(sys.argv[2]) if len(sys.argv) > 2 else 4
    t_sampling = sys.argv[3] if len(sys.argv) > 3 else "uniform"
    save_path = sys.argv[4] if len(sys.argv) > 4 else "/tmp/calib_stage1.nck"
    torch.set_num_threads(2)

    t0 = time.perf_counter()
    clouds = []
    for i in range(64):
        s = make_scene_sample(f"s{i}", "train", i, k=(i % 2) + 1,
                              n_complete=2048, image_size=32, render_images=False)
        clouds.append(s.normalized_complete())
    print(f"data gen: {time.perf_counter()-t0:.1f}s", flush=True)

    cfg = Stage1Config(m_tokens=64, channels=64)
    model = build_stage1_model(cfg, seed=0)
    n_params = sum(p.numel() for p in model.parameters())
    print(f"params: {n_params/1e6:.2f}M t_sampling={t_sampling} batch={batch}", flush=True)
    opt = torch.optim.AdamW(model.parameters(), lr=3e-4)
    warmup = 100

    def lr_lambda(step):
        if step < warmup:
            return (step + 1) / warmup
        frac = (step - warmup) / max(1, steps - warmup)
        return 0.01 + 0.99 * 0.5 * (1 + np.cos(np.pi * frac))

    sched = torch.optim.lr_scheduler.LambdaLR(opt, lr_lambda)
    rng = np.random.default_rng([0, 0])
    flow = FlowConfig(t_sampling=t_sampling)
    sample_flow = FlowConfig()  # inference always uses the pinned 0.04 step

    def eval_chamfer(n_scenes=4):
        ratios, pg, gp = [], [], []
        for i in range(n_scenes):
            gt = PointCloud(clouds[i])
            rec = reconstruct(model, clouds[i], 2048, sample_flow, np.random.default_rng([100, i]))
            noise = PointCloud(np.random.default_rng([200, i]).uniform(-1, 1, (2048, 3)))
            ratios.append(chamfer(rec, gt) / chamfer(noise, gt))
            pg.append(one_sided_chamfer(rec, gt))
            gp.append(one_sided_chamfer(gt, rec))
        return float(np.mean(ratios)), float(np.mean(pg)), float(np.mean(gp))

    t0 = time.perf_counter()
    first_loss = None
    for step in range(1, steps + 1):
        idx = rng.integers(0, len(clouds), size=batch)
        loss = train_step_ae(model, opt, [clouds[i] for i in idx], rng, flow, n_train=2048)
        sched.step()
        if first_loss is None:
            first_loss = loss
        if step % 100 == 0 or step == 1:
            dt = time.perf_counter() - t0
            msg = f"step {step} loss {loss:.4f} ({dt/step:.2f}s/step)"
            if step % 500 == 0 or step == steps:
                ratio, pg, gp = eval_chamfer()
                msg += f" cd_ratio {ratio:.3f} (recon->gt {pg:.4f}, gt->recon {gp:.4f})"
            print(msg, flush=True)
    save_checkpoint(save_path, "stage1", model.config, model, step=steps)
    print(f"first loss {first_loss:.4f}; saved {save_path}", flush=True)


if __name__ == "__main__":
    main()
