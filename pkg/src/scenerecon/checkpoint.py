"""NCK1 checkpoint container: JSON index header + raw float32 tensors.

Layout: magic "NCK1", uint32 LE header length, UTF-8 JSON header, then the
concatenated row-major float32 LE tensor payloads. The header carries the
model kind, its config, the training step and per-tensor (name, shape,
offset) entries; optimizer state rides along under an "opt." name prefix.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import asdict
from pathlib import Path

import numpy as np
import torch

from .config import ConfigError, dataclass_from_dict
from .io import atomic_write_bytes
from .stage1 import PointAutoencoder, Stage1Config, build_stage1_model
from .stage2 import SceneTokenTransformer, Stage2Config, build_stage2_model

NCK_MAGIC = b"NCK1"


def parameter_checksum(module: torch.nn.Module) -> str:
    """SHA-256 over all named parameters; detects any weight change."""
    digest = hashlib.sha256()
    for name, param in sorted(module.named_parameters()):
        digest.update(name.encode())
        digest.update(param.detach().cpu().numpy().tobytes())
    return digest.hexdigest()


def _optimizer_tensors(model: torch.nn.Module, optimizer: torch.optim.Optimizer) -> dict[str, np.ndarray]:
    out = {}
    names = [n for n, _ in model.named_parameters()]
    params = [p for _, p in model.named_parameters()]
    for name, param in zip(names, params):
        state = optimizer.state.get(param)
        if not state:
            continue
        for key in ("exp_avg", "exp_avg_sq"):
            if key in state:
                out[f"opt.{name}.{key}"] = state[key].detach().cpu().numpy()
        if "step" in state:
            step = state["step"]
            step = float(step.item()) if torch.is_tensor(step) else float(step)
            out[f"opt.{name}.step"] = np.array([step], dtype=np.float32)
    return out


def save_checkpoint(
    path: str | Path,
    kind: str,
    config,
    model: torch.nn.Module,
    step: int = 0,
    optimizer: torch.optim.Optimizer | None = None,
    extra: dict | None = None,
) -> None:
    tensors: dict[str, np.ndarray] = {
        name: p.detach().cpu().numpy() for name, p in model.named_parameters()
    }
    if optimizer is not None:
        tensors.update(_optimizer_tensors(model, optimizer))
    index = []
    offset = 0
    payload = []
    for name, arr in tensors.items():
        raw = np.ascontiguousarray(arr, dtype="<f4").tobytes()
        index.append({"name": name, "shape": list(arr.shape), "offset": offset})
        payload.append(raw)
        offset += len(raw)
    header = json.dumps(
        {
            "kind": kind,
            "config": asdict(config),
            "step": int(step),
            "extra": extra or {},
            "tensors": index,
        }
    ).encode("utf-8")
    atomic_write_bytes(
        path, NCK_MAGIC + struct.pack("<I", len(header)) + header + b"".join(payload)
    )


class Checkpoint:
    def __init__(self, kind: str, config: dict, step: int, extra: dict, tensors: dict[str, np.ndarray]):
        self.kind = kind
        self.config = config
        self.step = step
        self.extra = extra
        self.tensors = tensors

    def model_tensors(self) -> dict[str, np.ndarray]:
        return {n: a for n, a in self.tensors.items() if not n.startswith("opt.")}

    def load_into(self, model: torch.nn.Module) -> None:
        state = {
            name: torch.as_tensor(arr.copy(), dtype=model.dtype)
            for name, arr in self.model_tensors().items()
        }
        model.load_state_dict(state, strict=True)

    def restore_optimizer(self, model: torch.nn.Module, optimizer: torch.optim.Optimizer) -> None:
        """Rebuild AdamW moment estimates saved alongside the weights."""
        params = dict(model.named_parameters())
        for name, param in params.items():
            avg = self.tensors.get(f"opt.{name}.exp_avg")
            if avg is None:
                continue
            state = optimizer.state.setdefault(param, {})
            state["exp_avg"] = torch.as_tensor(avg.copy(), dtype=param.dtype)
            state["exp_avg_sq"] = torch.as_tensor(
                self.tensors[f"opt.{name}.exp_avg_sq"].copy(), dtype=param.dtype
            )
            state["step"] = torch.tensor(float(self.tensors[f"opt.{name}.step"][0]))


def load_checkpoint(path: str | Path) -> Checkpoint:
    data = Path(path).read_bytes()
    if data[:4] != NCK_MAGIC:
        raise ValueError(f"{path}: bad magic, not an NCK1 checkpoint")
    (header_len,) = struct.unpack_from("<I", data, 4)
    header = json.loads(data[8 : 8 + header_len].decode("utf-8"))
    base = 8 + header_len
    tensors = {}
    for entry in header["tensors"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(data, dtype="<f4", count=count, offset=base + entry["offset"])
        tensors[entry["name"]] = arr.reshape(shape)
    return Checkpoint(header["kind"], header["config"], header["step"], header["extra"], tensors)


def load_stage1(path: str | Path, dtype: torch.dtype = torch.float32) -> tuple[PointAutoencoder, Checkpoint]:
    ckpt = load_checkpoint(path)
    if ckpt.kind != "stage1":
        raise ConfigError(f"{path}: expected a stage1 checkpoint, found kind={ckpt.kind!r}")
    config = dataclass_from_dict(Stage1Config, ckpt.config, "stage1 config")
    model = build_stage1_model(config, seed=0, dtype=dtype)
    ckpt.load_into(model)
    return model, ckpt


def load_stage2(path: str | Path, dtype: torch.dtype = torch.float32) -> tuple[SceneTokenTransformer, Checkpoint]:
    ckpt = load_checkpoint(path)
    if ckpt.kind != "stage2":
        raise ConfigError(f"{path}: expected a stage2 checkpoint, found kind={ckpt.kind!r}")
    config = dataclass_from_dict(Stage2Config, ckpt.config, "stage2 config")
    model = build_stage2_model(
        config,
        latent_tokens=int(ckpt.extra["latent_tokens"]),
        latent_channels=int(ckpt.extra["latent_channels"]),
        seed=0,
        dtype=dtype,
    )
    ckpt.load_into(model)
    return model, ckpt
