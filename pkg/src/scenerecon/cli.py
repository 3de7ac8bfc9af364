"""Command-line entry points tying the pipeline together.

Commands: gen-data, train-ae, train-img, infer, eval, report.
Exit codes: 0 success, 1 runtime failure, 2 usage/config error.
NOVA_THREADS caps worker parallelism (eval workers and torch threads).
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from . import io as sio
from .align import align_translation_scale
from .checkpoint import load_stage1, load_stage2, save_checkpoint
from .config import ConfigError, dataclass_from_dict, load_json
from .flowmatch import FlowConfig
from .geometry import PointCloud
from .metrics import DEFAULT_FS_TAUS, compute_report
from .flowmatch import sample_timestep as _sample_t
from .stage1 import Stage1Config, build_stage1_model, reconstruct, train_step_ae
from .stage1 import flow_sample_loss as _flow_loss
from .stage2 import Stage2Config, build_stage2_model, infer, train_step_img
from .synthdata import DatasetConfig, build_dataset, load_sample, read_manifest


def worker_count() -> int:
    cap = os.environ.get("NOVA_THREADS")
    n = os.cpu_count() or 1
    if cap:
        n = min(n, max(1, int(cap)))
    return n


@dataclass
class TrainParams:
    """Loop knobs shared by both training stages."""

    batch_size: int = 4
    n_train: int = 2048
    lr: float = 3e-4
    lr_schedule: str = "constant"  # or "cosine" (with warmup)
    warmup_steps: int = 0
    grad_clip: float = 1.0
    checkpoint_every: int = 200
    eval_every: int = 0
    eval_samples: int = 8

    def __post_init__(self):
        if self.batch_size < 1 or self.n_train < 1:
            raise ValueError("batch_size and n_train must be >= 1")
        if self.lr_schedule not in ("constant", "cosine"):
            raise ValueError("lr_schedule must be 'constant' or 'cosine'")


def make_scheduler(optimizer, params: TrainParams, total_steps: int):
    if params.lr_schedule == "constant" and params.warmup_steps == 0:
        return None
    warmup = params.warmup_steps

    def lr_lambda(step):
        if warmup and step < warmup:
            return (step + 1) / warmup
        if params.lr_schedule == "constant":
            return 1.0
        frac = (step - warmup) / max(1, total_steps - warmup)
        return 0.01 + 0.99 * 0.5 * (1.0 + np.cos(np.pi * min(frac, 1.0)))

    return torch.optim.lr_scheduler.LambdaLR(optimizer, lr_lambda)


_SECTION_CLASSES = {
    "stage1": Stage1Config,
    "stage2": Stage2Config,
    "flow": FlowConfig,
    "train": TrainParams,
    "data": DatasetConfig,
}


def load_run_config(path: str | None, allowed: tuple[str, ...]) -> dict:
    """Parse a sectioned config file; every section and key is validated."""
    sections = {name: _SECTION_CLASSES[name]() for name in allowed}
    if path is None:
        return sections
    raw = load_json(path)
    for key, value in raw.items():
        if key not in allowed:
            raise ConfigError(
                f'{path}: unknown section "{key}" (allowed: {", ".join(allowed)})'
            )
        sections[key] = dataclass_from_dict(_SECTION_CLASSES[key], value, f"{path}:{key}")
    return sections


def _append_jsonl(path: Path, record: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "a") as f:
        f.write(json.dumps(record) + "\n")


def _load_split(manifest: Path, split: str, load_images: bool):
    records = read_manifest(manifest, split)
    root = manifest.parent
    return [load_sample(rec, root, load_images=load_images) for rec in records]


def _val_loss_ae(model, samples, params, flow_config, seed, step) -> float:
    from .stage1 import flow_sample_loss
    from .flowmatch import sample_timestep

    rng = np.random.default_rng([seed, 999, step])
    losses = []
    with torch.no_grad():
        for s in samples[: params.eval_samples]:
            cloud = s.normalized_complete()
            z = model.encode(cloud, int(rng.integers(len(cloud))))
            t = sample_timestep(rng, flow_config)
            eps = rng.uniform(-1, 1, size=cloud.shape)
            losses.append(float(flow_sample_loss(model, z, cloud, t, eps)))
    return float(np.mean(losses))


def _train_loop(step_fn, steps, start_step, log_path, save_fn, val_fn, scheduler=None) -> int:
    t0 = time.perf_counter()
    for step in range(start_step + 1, start_step + steps + 1):
        loss = step_fn(step)
        if scheduler is not None:
            scheduler.step()
        _append_jsonl(log_path, {"step": step, "loss": loss, "wall_time": time.perf_counter() - t0})
        if val_fn is not None:
            val_fn(step)
        if save_fn is not None:
            save_fn(step, final=step == start_step + steps)
    return start_step + steps


def _flow_override(flow_cfg: FlowConfig, args) -> FlowConfig:
    step = args.fm_step if args.fm_step is not None else flow_cfg.step_size
    tsample = args.fm_tsample if args.fm_tsample is not None else flow_cfg.t_sampling
    return FlowConfig(step_size=step, t_sampling=tsample)


def cmd_gen_data(args) -> int:
    cfg = load_run_config(args.config, ("data",))["data"]
    out = Path(args.out)
    manifest = build_dataset(cfg, out)
    print(f"manifest: {manifest}")
    return 0


def cmd_train_ae(args) -> int:
    cfg = load_run_config(args.config, ("stage1", "flow", "train"))
    s1_cfg: Stage1Config = cfg["stage1"]
    flow_cfg: FlowConfig = _flow_override(cfg["flow"], args)
    params: TrainParams = cfg["train"]
    manifest = Path(args.data)
    train_samples = _load_split(manifest, "train", load_images=False)
    val_samples = _load_split(manifest, "val", load_images=False)
    if not train_samples:
        raise ConfigError(f"{manifest}: no train split records")
    clouds = [s.normalized_complete() for s in train_samples]

    start_step = 0
    if args.resume:
        model, ckpt = load_stage1(args.resume)
        s1_cfg = model.config
        start_step = ckpt.step
        optimizer = torch.optim.AdamW(model.parameters(), lr=params.lr)
        ckpt.restore_optimizer(model, optimizer)
    else:
        model = build_stage1_model(s1_cfg, seed=args.seed)
        optimizer = torch.optim.AdamW(model.parameters(), lr=params.lr)

    rng = np.random.default_rng([args.seed, start_step])
    out_path = Path(args.out)
    log_path = out_path.with_suffix(".loss.jsonl")
    val_log = out_path.with_suffix(".val.jsonl")

    def step_fn(step):
        idx = rng.integers(0, len(clouds), size=params.batch_size)
        batch = [clouds[i] for i in idx]
        return train_step_ae(
            model, optimizer, batch, rng, flow_cfg,
            n_train=params.n_train, grad_clip=params.grad_clip,
        )

    def save_fn(step, final):
        if final or (params.checkpoint_every and step % params.checkpoint_every == 0):
            save_checkpoint(out_path, "stage1", model.config, model, step=step, optimizer=optimizer)

    def val_fn(step):
        if params.eval_every and val_samples and step % params.eval_every == 0:
            loss = _val_loss_ae(model, val_samples, params, flow_cfg, args.seed, step)
            _append_jsonl(val_log, {"step": step, "val_loss": loss})

    scheduler = make_scheduler(optimizer, params, start_step + args.steps)
    _train_loop(step_fn, args.steps, start_step, log_path, save_fn, val_fn, scheduler)
    print(f"checkpoint: {out_path}")
    return 0


def cmd_train_img(args) -> int:
    cfg = load_run_config(args.config, ("stage2", "flow", "train"))
    s2_cfg: Stage2Config = cfg["stage2"]
    flow_cfg: FlowConfig = _flow_override(cfg["flow"], args)
    params: TrainParams = cfg["train"]
    manifest = Path(args.data)
    train_samples = _load_split(manifest, "train", load_images=True)
    val_samples = _load_split(manifest, "val", load_images=True)
    if not train_samples:
        raise ConfigError(f"{manifest}: no train split records")
    decoder, _ = load_stage1(args.stage1)
    decoder.requires_grad_(False)
    pairs = [(s.images, s.normalized_complete()) for s in train_samples]

    start_step = 0
    extra = {
        "latent_tokens": decoder.config.m_tokens,
        "latent_channels": decoder.config.channels,
        "stage1_checkpoint": str(args.stage1),
    }
    if args.resume:
        model, ckpt = load_stage2(args.resume)
        s2_cfg = model.config
        start_step = ckpt.step
        optimizer = torch.optim.AdamW(model.parameters(), lr=params.lr)
        ckpt.restore_optimizer(model, optimizer)
    else:
        model = build_stage2_model(
            s2_cfg, decoder.config.m_tokens, decoder.config.channels, seed=args.seed
        )
        optimizer = torch.optim.AdamW(model.parameters(), lr=params.lr)

    rng = np.random.default_rng([args.seed, start_step])
    out_path = Path(args.out)
    log_path = out_path.with_suffix(".loss.jsonl")
    val_log = out_path.with_suffix(".val.jsonl")

    def step_fn(step):
        idx = rng.integers(0, len(pairs), size=params.batch_size)
        batch = [pairs[i] for i in idx]
        return train_step_img(
            model, decoder, optimizer, batch, rng, flow_cfg,
            n_train=params.n_train, grad_clip=params.grad_clip,
        )

    def val_fn(step):
        if params.eval_every and val_samples and step % params.eval_every == 0:
            vrng = np.random.default_rng([args.seed, 999, step])
            losses = []
            with torch.no_grad():
                for s in val_samples[: params.eval_samples]:
                    z_hat = model(s.images)
                    cloud = s.normalized_complete()
                    t = _sample_t(vrng, flow_cfg)
                    eps = vrng.uniform(-1, 1, size=cloud.shape)
                    losses.append(float(
                        _flow_loss(decoder, z_hat.to(decoder.dtype), cloud, t, eps)
                    ))
            _append_jsonl(val_log, {"step": step, "val_loss": float(np.mean(losses))})

    def save_fn(step, final):
        if final or (params.checkpoint_every and step % params.checkpoint_every == 0):
            save_checkpoint(
                out_path, "stage2", model.config, model,
                step=step, optimizer=optimizer, extra=extra,
            )

    scheduler = make_scheduler(optimizer, params, start_step + args.steps)
    _train_loop(step_fn, args.steps, start_step, log_path, save_fn, val_fn, scheduler)
    print(f"checkpoint: {out_path}")
    return 0


def cmd_infer(args) -> int:
    decoder, _ = load_stage1(args.stage1)
    model, _ = load_stage2(args.stage2)
    images = [sio.read_nim(p) for p in args.images.split(",")]
    flow_cfg = _flow_override(FlowConfig(), args)
    rng = np.random.default_rng(args.seed)
    result = infer(model, decoder, images, args.points, flow_cfg, rng)
    sio.write_npc(args.out, result.cloud)
    units = "normalized" if result.normalized_units else "scene"
    print(f"wrote {args.out} ({args.points} points, units={units})")
    return 0


_EVAL_METHODS = ("stage2", "visible", "noise", "gt")


def _eval_one(sample, decoder, model, flow_cfg, n_points, align_mode, seed, index):
    rng = np.random.default_rng([seed, index])
    gt = PointCloud(sample.normalized_complete())
    hole_tau = 0.1 * gt.bbox_diagonal()
    result = infer(model, decoder, sample.images, n_points, flow_cfg, rng)
    pred = result.cloud
    alignment = None
    if align_mode == "ts":
        alignment = align_translation_scale(pred, gt)
        pred = alignment.apply(pred)
    clouds = {
        "stage2": pred,
        "visible": PointCloud(sample.normalized_visible()),
        "noise": PointCloud(rng.uniform(-1, 1, size=(n_points, 3))),
        "gt": gt,
    }
    rows = {}
    for method, cloud in clouds.items():
        report = compute_report(cloud, gt, fs_taus=DEFAULT_FS_TAUS, hole_tau=hole_tau)
        rows[method] = report.to_flat_dict()
    return sample.sample_id, rows, pred, alignment


def cmd_eval(args) -> int:
    decoder, _ = load_stage1(args.stage1)
    model, _ = load_stage2(args.stage2)
    flow_cfg = _flow_override(FlowConfig(), args)
    manifest = Path(args.data)
    samples = _load_split(manifest, args.split, load_images=True)
    if not samples:
        raise ConfigError(f"{manifest}: no records in split {args.split!r}")
    out_dir = Path(args.out)
    (out_dir / "clouds").mkdir(parents=True, exist_ok=True)

    results = {}
    failures = []

    def work(item):
        i, sample = item
        return _eval_one(sample, decoder, model, flow_cfg, args.points, args.align, args.seed, i)

    with ThreadPoolExecutor(max_workers=worker_count()) as pool:
        for (i, sample), outcome in zip(
            enumerate(samples), pool.map(_safe(work, failures), enumerate(samples))
        ):
            if outcome is not None:
                results[sample.sample_id] = outcome

    columns = None
    csv_rows = []
    alignments = []
    for sample in samples:
        if sample.sample_id not in results:
            continue
        _, rows, pred, alignment = results[sample.sample_id]
        sio.write_npc(out_dir / "clouds" / f"{sample.sample_id}_pred.npc", pred)
        if alignment is not None:
            alignments.append({"id": sample.sample_id, **alignment.to_dict()})
        for method in _EVAL_METHODS:
            flat = rows[method]
            if columns is None:
                columns = ["id", "method"] + list(flat)
            csv_rows.append([sample.sample_id, method] + [f"{flat[c]:.9g}" for c in columns[2:]])

    csv_path = out_dir / "per_sample.csv"
    with open(csv_path, "w", newline="") as f:
        writer = csv.writer(f)
        if columns:
            writer.writerow(columns)
            writer.writerows(csv_rows)
    if alignments:
        sio.atomic_write_text(
            out_dir / "alignments.jsonl",
            "".join(json.dumps(a) + "\n" for a in alignments),
        )

    if columns:
        aggregate = {"n_samples": len(results), "methods": {}}
        for method in _EVAL_METHODS:
            per_metric = {}
            for ci, col in enumerate(columns[2:], start=2):
                vals = np.array(
                    [float(r[ci]) for r in csv_rows if r[1] == method], dtype=np.float64
                )
                per_metric[col] = {"mean": float(vals.mean()), "median": float(np.median(vals))}
            aggregate["methods"][method] = per_metric
        sio.atomic_write_text(out_dir / "aggregate.json", json.dumps(aggregate, indent=1))

    print(f"eval: {len(results)}/{len(samples)} samples -> {csv_path}")
    if failures:
        for sample_id, err in failures:
            print(f"FAILED {sample_id}: {err}", file=sys.stderr)
        return 1
    return 0


def _safe(fn, failures):
    def wrapped(item):
        try:
            return fn(item)
        except Exception as exc:  # partial results are kept on purpose
            failures.append((item[1].sample_id, repr(exc)))
            return None

    return wrapped


def cmd_report(args) -> int:
    runs = {}
    for spec in args.runs.split(","):
        if "=" in spec:
            name, path = spec.split("=", 1)
        else:
            name, path = Path(spec).name, spec
        agg_path = Path(path) / "aggregate.json"
        if not agg_path.exists():
            raise ConfigError(f"missing eval output: {agg_path}")
        runs[name] = (Path(path), json.loads(agg_path.read_text()))

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    first = next(iter(runs.values()))[1]
    metrics = list(first["methods"][args.method])
    lines = [
        f"# Evaluation comparison (method: {args.method})",
        "",
        "| metric | run | mean | median |",
        "|---|---|---|---|",
    ]
    for metric in metrics:
        for name, (_, agg) in runs.items():
            cell = agg["methods"][args.method][metric]
            lines.append(f"| {metric} | {name} | {cell['mean']:.6g} | {cell['median']:.6g} |")
    report_path = out_dir / "report.md"
    sio.atomic_write_text(report_path, "\n".join(lines) + "\n")

    exported = []
    cloud_dir = out_dir / "clouds"
    for name, (path, _) in runs.items():
        for npc in sorted((path / "clouds").glob("*_pred.npc"))[: args.export_clouds]:
            cloud = sio.read_npc(npc)  # validates on the way through
            dest = cloud_dir / f"{name}_{npc.name}"
            sio.write_npc(dest, cloud)
            exported.append(dest)
    print(f"report: {report_path} ({len(exported)} clouds exported)")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="scenerecon", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out_required=True):
        p.add_argument("--config", default=None, help="JSON config path")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out", required=out_required, help="output path")

    p = sub.add_parser("gen-data", help="generate a synthetic dataset")
    common(p)
    p.set_defaults(fn=cmd_gen_data)

    p = sub.add_parser("train-ae", help="train the stage-1 point autoencoder")
    common(p)
    p.add_argument("--data", required=True, help="dataset manifest")
    p.add_argument("--steps", type=int, required=True)
    p.add_argument("--resume", default=None, help="checkpoint to continue from")
    p.add_argument("--fm-step", type=float, default=None)
    p.add_argument("--fm-tsample", choices=("uniform", "cosine"), default=None)
    p.set_defaults(fn=cmd_train_ae)

    p = sub.add_parser("train-img", help="train the stage-2 scene-token transformer")
    common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--stage1", required=True, help="frozen stage-1 checkpoint")
    p.add_argument("--steps", type=int, required=True)
    p.add_argument("--resume", default=None)
    p.add_argument("--fm-step", type=float, default=None)
    p.add_argument("--fm-tsample", choices=("uniform", "cosine"), default=None)
    p.set_defaults(fn=cmd_train_img)

    p = sub.add_parser("infer", help="reconstruct a cloud from rendered views")
    common(p)
    p.add_argument("--images", required=True, help="comma-separated NIM paths")
    p.add_argument("--stage1", required=True)
    p.add_argument("--stage2", required=True)
    p.add_argument("--points", type=int, default=2048)
    p.add_argument("--fm-step", type=float, default=None)
    p.add_argument("--fm-tsample", choices=("uniform", "cosine"), default=None)
    p.set_defaults(fn=cmd_infer)

    p = sub.add_parser("eval", help="run the metric suite over a split")
    common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--stage1", required=True)
    p.add_argument("--stage2", required=True)
    p.add_argument("--split", default="val")
    p.add_argument("--points", type=int, default=2048)
    p.add_argument("--align", choices=("none", "ts"), default="none")
    p.add_argument("--fm-step", type=float, default=None)
    p.add_argument("--fm-tsample", choices=("uniform", "cosine"), default=None)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("report", help="compare eval runs into a markdown table")
    common(p)
    p.add_argument("--runs", required=True, help="comma-separated eval dirs (name=dir)")
    p.add_argument("--method", default="stage2")
    p.add_argument("--export-clouds", type=int, default=4)
    p.set_defaults(fn=cmd_report)
    return parser


def main(argv: list[str] | None = None) -> int:
    cap = os.environ.get("NOVA_THREADS")
    if cap:
        torch.set_num_threads(max(1, int(cap)))
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"missing file: {exc}", file=sys.stderr)
        return 1
    except (RuntimeError, ValueError, OSError, FloatingPointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
