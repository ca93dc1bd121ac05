"""Measurement apparatus: layer norms, memory accounting, and run logs.

Norms: w(layer) is the time average over recorded steps of the L2 norm of
the concatenation of the layer group's parameters, taken after each
optimizer update.  For adapted models the merged view W + scaling*A@B is
measured in place of (W, A, B).

Memory: the accountant is analytic, not measured.  It reproduces the
structure of peak-usage accounting (weights, gradients, optimizer moments,
adapters, activations) from closed-form parameter arithmetic.  The
activation model is deliberately simple and stated explicitly in
`activation_floats`: no checkpointing, and a block's activations are
retained only while some parameter inside it needs a gradient (a frozen
block is backpropagated *through* using its weights alone, so its
activations can be dropped; a block with adapters must retain them).
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .errors import ConfigError, ContractError
from .lora import effective_weight
from .model import ModelConfig

# ---------------------------------------------------------------------------
# layer norms


def record_layer_norms(model) -> np.ndarray:
    """Current L2 norm of each layer group's concatenated parameters.

    Adapter factor pairs are folded into their target weight (the merged
    view) rather than counted as separate parameters.
    """
    norms = np.zeros(len(model.layers))
    adapted = getattr(model, "adapters", {})
    for i, group in enumerate(model.layers):
        sumsq = 0.0
        for p in group.params:
            if p.name is not None and p.name.startswith("lora."):
                continue
            if p.name in adapted:
                w = effective_weight(model, p.name)
            else:
                w = p.data
            sumsq += float((w * w).sum())
        norms[i] = np.sqrt(sumsq)
    return norms


@dataclass
class NormReport:
    layer_names: list[str]
    mean_norms: list[float]
    series: list[list[float]]  # recorded steps x layers


def finalize_norm_report(layer_names, series) -> NormReport:
    """Exact arithmetic mean of the per-step norm series, per layer."""
    if len(series) == 0:
        raise ContractError("norm report needs at least one recorded step")
    arr = np.asarray(series, dtype=np.float64)
    means = arr.mean(axis=0)
    return NormReport(list(layer_names), [float(m) for m in means], arr.tolist())


# ---------------------------------------------------------------------------
# parameter census

MODEL_PRESETS: dict[str, ModelConfig] = {
    "gpt2-small": ModelConfig(50257, 1024, 768, 12, 12, tie_embeddings=True),
    "tinyllama": ModelConfig(32000, 2048, 2048, 32, 22),
    "phi-2": ModelConfig(51200, 2048, 2560, 32, 32),
    "mistral-7b": ModelConfig(32000, 4096, 4096, 32, 32),
    "llama-2-7b": ModelConfig(32000, 4096, 4096, 32, 32),
    "llama-2-70b": ModelConfig(32000, 4096, 8192, 64, 80),
}


def resolve_model_spec(spec) -> ModelConfig:
    if isinstance(spec, ModelConfig):
        return spec
    try:
        return MODEL_PRESETS[spec]
    except KeyError:
        raise ConfigError(
            f"unknown model preset {spec!r}; available: {sorted(MODEL_PRESETS)}"
        ) from None


def group_param_counts(cfg: ModelConfig) -> list[int]:
    """Closed-form parameter count per layer group (embedding, blocks, head)."""
    d, dm, v, s = cfg.model_dim, cfg.mlp_dim, cfg.vocab_size, cfg.max_seq_len
    embed = v * d + s * d
    block = 4 * d * d + 2 * d * dm + 4 * d + dm + d + 4 * d
    head = 2 * d + (0 if cfg.tie_embeddings else v * d)
    return [embed] + [block] * cfg.num_blocks + [head]


def total_param_count(cfg: ModelConfig) -> int:
    return sum(group_param_counts(cfg))


def lora_param_count(cfg: ModelConfig, rank: int, include_head: bool = False) -> int:
    d, dm = cfg.model_dim, cfg.mlp_dim
    per_block = 4 * rank * (d + d) + rank * (d + dm) + rank * (dm + d)
    total = per_block * cfg.num_blocks
    if include_head and not cfg.tie_embeddings:
        total += rank * (d + cfg.vocab_size)
    return total


# ---------------------------------------------------------------------------
# memory accounting

# D-width activation tensors retained per live block under the no-checkpoint
# model: residual input, ln1 output, q/k/v, attention context, projected
# context, ln2 input+output, and (2*ratio)*D for the MLP pre-activation and
# GELU output.
_BLOCK_ACT_D_COEF = 8


def activation_floats(
    cfg: ModelConfig,
    batch: int,
    seq: int,
    live_blocks: int,
    adapted_targets_per_block: int = 0,
    rank: int = 0,
    head_adapter: bool = False,
) -> int:
    """Activation float count for the documented no-checkpointing model.

    per live block : batch*seq*dim*(8 + 2*mlp_ratio) + batch*heads*seq^2
    embedding out  : batch*seq*dim                     (always retained)
    head           : batch*seq*(dim + vocab)           (always retained)
    adapters       : batch*seq*rank per adapted target on every block
    """
    d = cfg.model_dim
    per_block = batch * seq * d * (_BLOCK_ACT_D_COEF + 2 * cfg.mlp_ratio)
    per_block += batch * cfg.num_heads * seq * seq
    total = per_block * live_blocks
    total += batch * seq * d  # embedding output
    total += batch * seq * (d + cfg.vocab_size)  # final norm + logits
    if adapted_targets_per_block:
        total += batch * seq * rank * adapted_targets_per_block * cfg.num_blocks
    if head_adapter:
        total += batch * seq * rank
    return total


@dataclass(frozen=True)
class MemoryEstimate:
    method: str
    weights_bytes: int
    gradient_bytes: int
    moment_bytes: int
    adapter_bytes: int
    activation_bytes: int

    @property
    def total_bytes(self) -> int:
        return (
            self.weights_bytes
            + self.gradient_bytes
            + self.moment_bytes
            + self.adapter_bytes
            + self.activation_bytes
        )

    def to_dict(self) -> dict:
        return {
            "weights": self.weights_bytes,
            "gradients": self.gradient_bytes,
            "moments": self.moment_bytes,
            "adapter": self.adapter_bytes,
            "activations": self.activation_bytes,
            "total": self.total_bytes,
        }


def _estimate(
    cfg: ModelConfig,
    method: str,
    *,
    trainable_base_params: int,
    adapter_params: int,
    live_blocks: int,
    bytes_per_param: int,
    batch: int,
    seq: int,
    rank: int = 0,
    head_adapter: bool = False,
) -> MemoryEstimate:
    bpp = bytes_per_param
    act = activation_floats(
        cfg,
        batch,
        seq,
        live_blocks,
        adapted_targets_per_block=6 if adapter_params else 0,
        rank=rank,
        head_adapter=head_adapter,
    )
    return MemoryEstimate(
        method=method,
        weights_bytes=total_param_count(cfg) * bpp,
        gradient_bytes=trainable_base_params * bpp,
        moment_bytes=2 * trainable_base_params * bpp,
        adapter_bytes=4 * adapter_params * bpp,  # weights + grads + 2 moments
        activation_bytes=act * bpp,
    )


def estimate_memory(
    spec,
    method: str,
    *,
    rank: int | None = None,
    gamma: int | None = None,
    always_active: set[int] | None = None,
    bytes_per_param: int = 8,
    batch: int = 1,
    seq: int | None = None,
) -> MemoryEstimate:
    """Closed-form peak byte accounting for one training method.

    For "lisa" the peak is taken over masks: the worst case activates the
    gamma largest middle blocks on top of the always-active groups.  Absolute
    numbers depend on the declared activation model; orderings between
    methods are the meaningful output.
    """
    cfg = resolve_model_spec(spec)
    if seq is None:
        seq = cfg.max_seq_len
    counts = group_param_counts(cfg)
    n_blocks = cfg.num_blocks
    if method == "full":
        return _estimate(
            cfg,
            "full",
            trainable_base_params=sum(counts),
            adapter_params=0,
            live_blocks=n_blocks,
            bytes_per_param=bytes_per_param,
            batch=batch,
            seq=seq,
        )
    if method == "lora":
        if rank is None:
            raise ConfigError("lora estimate requires rank")
        return _estimate(
            cfg,
            "lora",
            trainable_base_params=0,
            adapter_params=lora_param_count(cfg, rank),
            live_blocks=n_blocks,
            bytes_per_param=bytes_per_param,
            batch=batch,
            seq=seq,
            rank=rank,
        )
    if method == "lisa":
        if gamma is None:
            raise ConfigError("lisa estimate requires gamma")
        if not 0 <= gamma <= n_blocks:
            raise ConfigError(f"gamma must lie in [0, {n_blocks}]")
        if always_active is None:
            always_active = {0, n_blocks + 1}
        block_sizes = sorted(counts[1 : n_blocks + 1], reverse=True)
        trainable = sum(counts[i] for i in always_active)
        trainable += sum(block_sizes[:gamma])
        live = gamma + sum(1 for i in always_active if 1 <= i <= n_blocks)
        return _estimate(
            cfg,
            "lisa",
            trainable_base_params=trainable,
            adapter_params=0,
            live_blocks=min(live, n_blocks),
            bytes_per_param=bytes_per_param,
            batch=batch,
            seq=seq,
        )
    raise ConfigError(f"unknown method {method!r}")


def estimate_for_mask(
    cfg: ModelConfig,
    method: str,
    active: set[int],
    *,
    rank: int | None = None,
    bytes_per_param: int = 8,
    batch: int = 1,
    seq: int | None = None,
) -> MemoryEstimate:
    """Per-period accounting for a concrete active-layer mask."""
    if seq is None:
        seq = cfg.max_seq_len
    counts = group_param_counts(cfg)
    n_blocks = cfg.num_blocks
    live = sum(1 for i in active if 1 <= i <= n_blocks)
    if method == "lora":
        return _estimate(
            cfg,
            "lora",
            trainable_base_params=0,
            adapter_params=lora_param_count(cfg, rank or 0),
            live_blocks=n_blocks,
            bytes_per_param=bytes_per_param,
            batch=batch,
            seq=seq,
            rank=rank or 0,
        )
    trainable = sum(counts[i] for i in active)
    return _estimate(
        cfg,
        method,
        trainable_base_params=trainable,
        adapter_params=0,
        live_blocks=live if method == "lisa" else n_blocks,
        bytes_per_param=bytes_per_param,
        batch=batch,
        seq=seq,
    )


# ---------------------------------------------------------------------------
# run logs

MANIFEST_VERSION = 1

LOSS_CSV = "loss.csv"
NORMS_CSV = "norms.csv"
NORM_SERIES_CSV = "norm_series.csv"
MASKS_JSONL = "masks.jsonl"
MANIFEST_JSON = "manifest.json"


@dataclass
class PeriodRecord:
    period: int
    active: list[int]
    memory: dict


@dataclass
class RunLog:
    method: str
    config_snapshot: dict
    layer_names: list[str]
    steps: list[int] = field(default_factory=list)
    losses: list[float] = field(default_factory=list)
    lrs: list[float] = field(default_factory=list)
    periods: list[PeriodRecord] = field(default_factory=list)
    norm_steps: list[int] = field(default_factory=list)
    norm_series: list[list[float]] = field(default_factory=list)
    status: str = "ok"
    diverged_at: int | None = None
    seconds_per_step: float = 0.0

    def final_loss(self) -> float:
        return self.losses[-1] if self.losses else float("nan")

    def norm_report(self) -> NormReport:
        return finalize_norm_report(self.layer_names, self.norm_series)

    def peak_memory_bytes(self) -> int:
        return max((p.memory["total"] for p in self.periods), default=0)

    def mean_trainable_params(self) -> float:
        # adapter term bundles weights+grads+2 moments, hence the /4
        counts = [
            p.memory["gradients"] + p.memory["adapter"] / 4 for p in self.periods
        ]
        bpp = (self.config_snapshot.get("instrument") or {}).get("bytes_per_param", 8)
        if not counts:
            return 0.0
        return float(np.mean(counts)) / bpp


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    h.update(path.read_bytes())
    return h.hexdigest()


def _write_csv(path: Path, header: list[str], rows) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow(row)
    path.write_text(buf.getvalue())


def export_run(log: RunLog, outdir) -> Path:
    """Write a run's artifacts: CSV series, JSONL masks, and a manifest.

    Float cells use repr() so a re-import reproduces the values exactly.  A
    zero-step run emits the manifest alone.  Timing lives only in the
    manifest, so every hashed file is byte-deterministic for a fixed config.
    """
    out = Path(outdir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        files: dict[str, str] = {}
        if log.steps:
            _write_csv(
                out / LOSS_CSV,
                ["step", "loss", "lr"],
                (
                    [s, repr(l), repr(r)]
                    for s, l, r in zip(log.steps, log.losses, log.lrs)
                ),
            )
            files[LOSS_CSV] = _sha256(out / LOSS_CSV)
        if log.norm_series:
            report = log.norm_report()
            _write_csv(
                out / NORMS_CSV,
                ["layer_index", "layer_name", "mean_weight_norm"],
                (
                    [i, name, repr(m)]
                    for i, (name, m) in enumerate(
                        zip(report.layer_names, report.mean_norms)
                    )
                ),
            )
            files[NORMS_CSV] = _sha256(out / NORMS_CSV)
            _write_csv(
                out / NORM_SERIES_CSV,
                ["step"] + list(log.layer_names),
                (
                    [s] + [repr(v) for v in row]
                    for s, row in zip(log.norm_steps, log.norm_series)
                ),
            )
            files[NORM_SERIES_CSV] = _sha256(out / NORM_SERIES_CSV)
        if log.periods:
            lines = [
                json.dumps(
                    {"period": p.period, "active": p.active, "memory_bytes": p.memory},
                    sort_keys=True,
                )
                for p in log.periods
            ]
            (out / MASKS_JSONL).write_text("\n".join(lines) + "\n")
            files[MASKS_JSONL] = _sha256(out / MASKS_JSONL)
        manifest = {
            "format_version": MANIFEST_VERSION,
            "package_version": __version__,
            "method": log.method,
            "config": log.config_snapshot,
            "layer_names": log.layer_names,
            "status": log.status,
            "diverged_at": log.diverged_at,
            "seconds_per_step": log.seconds_per_step,
            "files": files,
        }
        (out / MANIFEST_JSON).write_text(
            json.dumps(manifest, indent=2, sort_keys=True) + "\n"
        )
    except OSError as exc:
        raise OSError(f"failed writing run artifacts under {out}: {exc}") from exc
    return out


def import_run(rundir) -> RunLog:
    """Rebuild a RunLog from an exported directory."""
    rundir = Path(rundir)
    manifest_path = rundir / MANIFEST_JSON
    if not manifest_path.exists():
        raise OSError(f"no manifest at {manifest_path}")
    manifest = json.loads(manifest_path.read_text())
    log = RunLog(
        method=manifest["method"],
        config_snapshot=manifest["config"],
        layer_names=list(manifest["layer_names"]),
        status=manifest["status"],
        diverged_at=manifest["diverged_at"],
        seconds_per_step=manifest["seconds_per_step"],
    )
    files = manifest["files"]
    if LOSS_CSV in files:
        with open(rundir / LOSS_CSV, newline="") as f:
            for row in list(csv.reader(f))[1:]:
                log.steps.append(int(row[0]))
                log.losses.append(float(row[1]))
                log.lrs.append(float(row[2]))
    if NORM_SERIES_CSV in files:
        with open(rundir / NORM_SERIES_CSV, newline="") as f:
            for row in list(csv.reader(f))[1:]:
                log.norm_steps.append(int(row[0]))
                log.norm_series.append([float(v) for v in row[1:]])
    if MASKS_JSONL in files:
        for line in (rundir / MASKS_JSONL).read_text().splitlines():
            rec = json.loads(line)
            log.periods.append(
                PeriodRecord(rec["period"], rec["active"], rec["memory_bytes"])
            )
    return log
