"""The training engine shared by all three methods.

One loop drives full-parameter training, LoRA, and periodic layer freezing;
the only differences are which mask sequence is applied and whether adapters
are attached.  Running the freezing schedule with gamma equal to the block
count therefore reproduces full-parameter training bit for bit.
"""

from __future__ import annotations

import time

import numpy as np

from .data import TokenDataset, batch_iterator
from .errors import ConfigError
from .instrument import PeriodRecord, RunLog, estimate_for_mask, record_layer_norms
from .lora import LoRAConfig, attach_adapters
from .model import LayeredModel, loss_on_batch
from .optim import AdamWConfig, AdamWState, adamw_step, set_trainable_mask, zero_grads
from .scheduler import FreezeSchedule, sample_mask
from .tensor import Tape


def _all_active(model: LayeredModel) -> frozenset[int]:
    return frozenset(range(len(model.layers)))


def _loop(
    model: LayeredModel,
    dataset: TokenDataset,
    optcfg: AdamWConfig,
    steps: int,
    batch_size: int,
    *,
    method: str,
    sched: FreezeSchedule | None,
    rank: int | None,
    config_snapshot: dict,
    norm_every: int = 1,
    bytes_per_param: int = 8,
) -> RunLog:
    if steps < 1 or batch_size < 1:
        raise ConfigError("steps and batch_size must be >= 1")
    log = RunLog(
        method=method,
        config_snapshot=config_snapshot,
        layer_names=[g.name for g in model.layers],
    )
    state = AdamWState()
    seq_len = dataset.inputs.shape[1]
    period = -1
    started = time.perf_counter()
    for step, (tokens, targets) in enumerate(
        batch_iterator(dataset, batch_size, steps)
    ):
        if sched is not None:
            i = step // sched.period
            if i != period:
                period = i
                mask = sample_mask(sched, i)
                active = set(mask.active)
                set_trainable_mask(model, active, state, sched.moment_policy)
                mem = estimate_for_mask(
                    model.cfg,
                    method,
                    active,
                    rank=rank,
                    bytes_per_param=bytes_per_param,
                    batch=batch_size,
                    seq=seq_len,
                )
                log.periods.append(PeriodRecord(i, sorted(active), mem.to_dict()))
        elif step == 0:
            active = set(_all_active(model))
            set_trainable_mask(model, active, state)
            mem = estimate_for_mask(
                model.cfg,
                method,
                active,
                rank=rank,
                bytes_per_param=bytes_per_param,
                batch=batch_size,
                seq=seq_len,
            )
            log.periods.append(PeriodRecord(0, sorted(active), mem.to_dict()))

        with Tape() as tape:
            loss = loss_on_batch(model, tokens, targets)
        loss_val = loss.item()
        if not np.isfinite(loss_val):
            log.status = "diverged"
            log.diverged_at = step
            break
        zero_grads(model)
        tape.backward(loss)
        adamw_step(model, state, optcfg)
        log.steps.append(step)
        log.losses.append(loss_val)
        log.lrs.append(optcfg.lr)
        if step % norm_every == 0:
            log.norm_steps.append(step)
            log.norm_series.append([float(x) for x in record_layer_norms(model)])
    done = max(len(log.steps), 1)
    log.seconds_per_step = (time.perf_counter() - started) / done
    return log


def run_full(
    model: LayeredModel,
    dataset: TokenDataset,
    optcfg: AdamWConfig,
    steps: int,
    batch_size: int,
    **kw,
) -> RunLog:
    return _loop(
        model, dataset, optcfg, steps, batch_size,
        method="full", sched=None, rank=None,
        config_snapshot=kw.pop("config_snapshot", {}), **kw,
    )


def run_lisa(
    model: LayeredModel,
    dataset: TokenDataset,
    optcfg: AdamWConfig,
    sched: FreezeSchedule,
    batch_size: int,
    **kw,
) -> RunLog:
    if sched.num_middle != model.cfg.num_blocks:
        raise ConfigError(
            f"schedule covers {sched.num_middle} middle layers but the model "
            f"has {model.cfg.num_blocks} blocks"
        )
    return _loop(
        model, dataset, optcfg, sched.total_steps, batch_size,
        method="lisa", sched=sched, rank=None,
        config_snapshot=kw.pop("config_snapshot", {}), **kw,
    )


def run_lora(
    model: LayeredModel,
    dataset: TokenDataset,
    optcfg: AdamWConfig,
    loracfg: LoRAConfig,
    steps: int,
    batch_size: int,
    adapter_seed: int = 0,
    **kw,
) -> RunLog:
    attach_adapters(model, loracfg, adapter_seed)
    return _loop(
        model, dataset, optcfg, steps, batch_size,
        method="lora", sched=None, rank=loracfg.rank,
        config_snapshot=kw.pop("config_snapshot", {}), **kw,
    )
