"""Versioned checkpoint archive: config + named parameter arrays (+ state).

The archive is an NPZ file (a zip of .npy arrays, self-describing with
shapes and dtypes).  Keys are namespaced: "param/<name>" for model
parameters (adapter factors keep their "lora." prefix inside that
namespace), "opt/{m,v,t}/<name>" for optimizer state, and "meta/*" for JSON
blobs.  Round trips are bitwise stable.
"""

from __future__ import annotations

import io
import json
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .lora import LoRAConfig, attach_adapters
from .model import LayeredModel, ModelConfig, build_model
from .optim import AdamWState

FORMAT_VERSION = 1


def save_checkpoint(
    path,
    model: LayeredModel,
    state: AdamWState | None = None,
    lora_cfg: LoRAConfig | None = None,
) -> None:
    arrays: dict[str, np.ndarray] = {}
    meta = {
        "format_version": FORMAT_VERSION,
        "config": model.cfg.to_dict(),
        "trainable": [g.trainable for g in model.layers],
        "lora": lora_cfg.to_dict() if lora_cfg else None,
    }
    if model.adapters and lora_cfg is None:
        raise ConfigError("adapted model checkpoints need the LoRAConfig")
    arrays["meta/json"] = np.frombuffer(
        json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8
    )
    for p in model.named_params():
        arrays[f"param/{p.name}"] = p.data
    if state is not None:
        for name, slot in state.slots.items():
            arrays[f"opt/m/{name}"] = slot.m
            arrays[f"opt/v/{name}"] = slot.v
            arrays[f"opt/t/{name}"] = np.array(slot.t, dtype=np.int64)
    buf = io.BytesIO()
    np.savez(buf, **arrays)
    Path(path).write_bytes(buf.getvalue())


def load_checkpoint(path) -> tuple[LayeredModel, AdamWState | None]:
    with np.load(Path(path)) as npz:
        meta = json.loads(bytes(npz["meta/json"]).decode())
        if meta["format_version"] != FORMAT_VERSION:
            raise ConfigError(
                f"unsupported checkpoint format {meta['format_version']}"
            )
        cfg = ModelConfig(**meta["config"])
        model = build_model(cfg, seed=0)
        if meta["lora"]:
            attach_adapters(model, LoRAConfig(**meta["lora"]), seed=0)
        for p in model.named_params():
            key = f"param/{p.name}"
            if key not in npz:
                raise ConfigError(f"checkpoint missing parameter {p.name!r}")
            p.data = np.ascontiguousarray(npz[key], dtype=np.float64)
        for g, flag in zip(model.layers, meta["trainable"]):
            g.trainable = bool(flag)
        state = None
        opt_names = [
            k.removeprefix("opt/m/") for k in npz.files if k.startswith("opt/m/")
        ]
        if opt_names:
            state = AdamWState()
            for name in opt_names:
                slot = state.slot(name, npz[f"opt/m/{name}"].shape)
                slot.m = np.ascontiguousarray(npz[f"opt/m/{name}"])
                slot.v = np.ascontiguousarray(npz[f"opt/v/{name}"])
                slot.t = int(npz[f"opt/t/{name}"])
    return model, state
