"""Convex-quadratic convergence check for the freezing schedule.

The objective is regularized least squares

    f_reg(w) = 0.5 * ||A w - y||^2 + 0.5 * w^T S w

with S a positive semidefinite diagonal, whose optimum is the linear solve
(A^T A + S) w* = A^T y.  The coordinate vector is partitioned into
contiguous equal blocks that play the role of middle layers, so the same
mask sampler, trainability mask, and AdamW step drive the optimization.
The reported quantity for a horizon T is the average regularized
suboptimality

    avg_subopt(T) = (1/T) * sum_{t=1..T} f_reg(w_t) - f_reg*

computed over one trajectory of max(T) steps (the trajectory for a shorter
horizon is its prefix, since masks are a pure function of the period index).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ConfigError
from .model import LayerGroup
from .optim import AdamWConfig, AdamWState, adamw_step, set_trainable_mask, zero_grads
from .scheduler import FreezeSchedule, sample_mask
from .tensor import Tape, Tensor


@dataclass(frozen=True)
class QuadraticProblem:
    a_matrix: np.ndarray   # (n, d)
    targets: np.ndarray    # (n,)
    s_diag: np.ndarray     # (d,), entries >= 0
    num_blocks: int
    w0: np.ndarray         # (d,)

    def __post_init__(self):
        a = np.asarray(self.a_matrix, dtype=np.float64)
        d = a.shape[1]
        if np.asarray(self.s_diag).shape != (d,):
            raise ConfigError("s_diag must have one entry per coordinate")
        if np.any(np.asarray(self.s_diag) < 0):
            raise ConfigError("s_diag must be positive semidefinite (no negatives)")
        if d % self.num_blocks != 0:
            raise ConfigError(
                f"dimension {d} not divisible into {self.num_blocks} blocks"
            )

    @property
    def dim(self) -> int:
        return self.a_matrix.shape[1]

    @property
    def block_size(self) -> int:
        return self.dim // self.num_blocks

    def f_reg(self, w: np.ndarray) -> float:
        r = self.a_matrix @ w - self.targets
        return 0.5 * float(r @ r) + 0.5 * float(w @ (self.s_diag * w))

    def optimum_value(self) -> float:
        a = self.a_matrix
        w_star = np.linalg.solve(a.T @ a + np.diag(self.s_diag), a.T @ self.targets)
        return self.f_reg(w_star)


def default_problem(
    dim: int = 32,
    num_blocks: int = 4,
    num_samples: int = 48,
    seed: int = 0,
    s_scale: float = 0.1,
) -> QuadraticProblem:
    rng = np.random.default_rng(seed)
    a = rng.normal(0.0, 1.0, (num_samples, dim)) / np.sqrt(dim)
    w_true = rng.normal(0.0, 1.0, dim)
    y = a @ w_true
    s = s_scale * rng.uniform(0.5, 1.5, dim)
    w0 = rng.normal(0.0, 2.0, dim)
    return QuadraticProblem(a, y, s, num_blocks, w0)


@dataclass
class QuadCheckRow:
    horizon: int
    avg_suboptimality: float
    scaled_by_sqrt_t: float


def quad_check(
    problem: QuadraticProblem,
    sched: FreezeSchedule,
    horizons: list[int],
    optcfg: AdamWConfig | None = None,
) -> list[QuadCheckRow]:
    """Run masked AdamW on the quadratic and tabulate average suboptimality."""
    if optcfg is None:
        optcfg = AdamWConfig(lr=0.02)
    if sched.num_middle != problem.num_blocks:
        raise ConfigError(
            "schedule num_middle must equal the problem's block count"
        )
    horizons = sorted(int(h) for h in horizons)
    if not horizons or horizons[0] < 1:
        raise ConfigError("horizons must be positive")
    max_t = horizons[-1]
    if sched.total_steps < max_t:
        raise ConfigError("schedule total_steps must cover the largest horizon")

    bs = problem.block_size
    blocks = [
        Tensor(
            problem.w0[i * bs : (i + 1) * bs].reshape(bs, 1).copy(),
            requires_grad=True,
            name=f"coords{i}",
        )
        for i in range(problem.num_blocks)
    ]
    # Sentinel empty groups at the embedding/head positions keep the mask
    # index space identical to the transformer's.
    groups = [LayerGroup("pad_lo", [])]
    groups += [LayerGroup(f"coords{i}", [blocks[i]]) for i in range(problem.num_blocks)]
    groups.append(LayerGroup("pad_hi", []))

    class _Holder:
        layers = groups

    holder = _Holder()
    a_cols = [
        Tensor(problem.a_matrix[:, i * bs : (i + 1) * bs].copy())
        for i in range(problem.num_blocks)
    ]
    y_const = Tensor(problem.targets.reshape(-1, 1))
    s_consts = [
        Tensor(problem.s_diag[i * bs : (i + 1) * bs].reshape(bs, 1).copy())
        for i in range(problem.num_blocks)
    ]

    f_star = problem.optimum_value()
    state = AdamWState()
    gap_sum = 0.0
    results_iter = iter(horizons)
    next_h = next(results_iter)
    rows: list[QuadCheckRow] = []
    period = -1
    for step in range(max_t):
        i = step // sched.period
        if i != period:
            period = i
            mask = sample_mask(sched, i)
            set_trainable_mask(holder, set(mask.active), state, sched.moment_policy)
        with Tape() as tape:
            pred = T.matmul(a_cols[0], blocks[0])
            for j in range(1, problem.num_blocks):
                pred = T.add(pred, T.matmul(a_cols[j], blocks[j]))
            resid = T.sub(pred, y_const)
            loss = T.scale(T.sum_all(T.mul(resid, resid)), 0.5)
            for j in range(problem.num_blocks):
                reg = T.sum_all(T.mul(T.mul(blocks[j], blocks[j]), s_consts[j]))
                loss = T.add(loss, T.scale(reg, 0.5))
        zero_grads(holder)
        tape.backward(loss)
        adamw_step(holder, state, optcfg)
        # f_reg at the post-update iterate w_t
        w = np.concatenate([b.data.ravel() for b in blocks])
        gap_sum += problem.f_reg(w) - f_star
        t = step + 1
        if t == next_h:
            avg = gap_sum / t
            rows.append(QuadCheckRow(t, avg, avg * np.sqrt(t)))
            next_h = next(results_iter, None)
    return rows
