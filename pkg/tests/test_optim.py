import math

import numpy as np
import pytest

from lisalab.errors import ConfigError, ContractError
from lisalab.model import LayerGroup, build_model, loss_on_batch
from lisalab.optim import (
    AdamWConfig,
    AdamWState,
    adamw_step,
    set_trainable_mask,
    state_bytes,
    zero_grads,
)
from lisalab.tensor import Tape, Tensor


class Holder:
    def __init__(self, groups):
        self.layers = groups


def one_param_holder(values, name="w"):
    p = Tensor(np.asarray(values, dtype=np.float64), requires_grad=True, name=name)
    return p, Holder([LayerGroup("g0", [p])])


def reference_adamw(theta0, grads, lr, beta1, beta2, eps, wd):
    """Straight-line scalar AdamW, written independently of the package."""
    theta = [float(x) for x in theta0]
    m = [0.0] * len(theta)
    v = [0.0] * len(theta)
    t = 0
    for g_vec in grads:
        t += 1
        for i, g in enumerate(g_vec):
            m[i] = beta1 * m[i] + (1.0 - beta1) * g
            v[i] = beta2 * v[i] + (1.0 - beta2) * g * g
            mhat = m[i] / (1.0 - beta1 ** t)
            vhat = v[i] / (1.0 - beta2 ** t)
            step = lr * mhat / (math.sqrt(vhat) + eps) + lr * wd * theta[i]
            theta[i] = theta[i] - step
    return np.array(theta)


class TestSingleStep:
    def test_hand_computed_first_step(self):
        p, holder = one_param_holder([1.0])
        p.grad = np.array([1.0])
        cfg = AdamWConfig(lr=0.1, beta1=0.9, beta2=0.999, eps=1e-8)
        state = AdamWState()
        adamw_step(holder, state, cfg)
        # m=0.1, v=0.001, mhat=1, vhat=1 -> theta = 1 - 0.1/(1+1e-8)
        expected = 1.0 - 0.1 / (1.0 + 1e-8)
        assert abs(p.data[0] - expected) < 1e-16
        assert abs(expected - 0.9000000010) < 1e-9
        slot = state.slots["w"]
        assert slot.t == 1
        assert abs(slot.m[0] - 0.1) < 1e-16
        assert abs(slot.v[0] - 0.001) < 1e-18

    def test_zero_grad_no_decay_is_noop(self):
        p, holder = one_param_holder([2.0, -3.0])
        p.grad = np.zeros(2)
        adamw_step(holder, AdamWState(), AdamWConfig(lr=0.5))
        assert np.array_equal(p.data, [2.0, -3.0])

    def test_decoupled_decay_with_zero_grad(self):
        p, holder = one_param_holder([2.0, -3.0])
        p.grad = np.zeros(2)
        cfg = AdamWConfig(lr=0.1, weight_decay=0.01, decay_matrices_only=False)
        adamw_step(holder, AdamWState(), cfg)
        assert np.array_equal(p.data, np.array([2.0, -3.0]) * (1 - 0.1 * 0.01))

    def test_matrices_only_decay_skips_vectors(self):
        vec = Tensor(np.ones(3), requires_grad=True, name="bias")
        mat = Tensor(np.ones((2, 2)), requires_grad=True, name="mat")
        holder = Holder([LayerGroup("g", [vec, mat])])
        vec.grad = np.zeros(3)
        mat.grad = np.zeros((2, 2))
        cfg = AdamWConfig(lr=0.1, weight_decay=0.5)
        adamw_step(holder, AdamWState(), cfg)
        assert np.array_equal(vec.data, np.ones(3))
        assert np.allclose(mat.data, np.ones((2, 2)) * (1 - 0.05), atol=1e-16)

    def test_missing_gradient_raises(self):
        p, holder = one_param_holder([1.0])
        with pytest.raises(ContractError):
            adamw_step(holder, AdamWState(), AdamWConfig())


class TestOracle:
    @pytest.mark.parametrize("wd", [0.0, 0.01])
    def test_200_steps_match_reference(self, wd):
        rng = np.random.default_rng(99)
        theta0 = rng.normal(0.0, 1.0, 10)
        grads = rng.normal(0.0, 1.0, (200, 10))
        p, holder = one_param_holder(theta0)
        cfg = AdamWConfig(
            lr=0.01, beta1=0.9, beta2=0.999, eps=1e-8,
            weight_decay=wd, decay_matrices_only=False,
        )
        state = AdamWState()
        for g in grads:
            p.grad = g.copy()
            adamw_step(holder, state, cfg)
        ref = reference_adamw(theta0, grads, 0.01, 0.9, 0.999, 1e-8, wd)
        assert np.abs(p.data - ref).max() <= 1e-12

    def test_textbook_adam_when_decay_zero(self):
        # with weight_decay=0 the update is exactly bias-corrected Adam
        rng = np.random.default_rng(5)
        theta0 = rng.normal(size=4)
        grads = rng.normal(size=(50, 4))
        p, holder = one_param_holder(theta0)
        state = AdamWState()
        for g in grads:
            p.grad = g.copy()
            adamw_step(holder, state, AdamWConfig(lr=0.02))
        ref = reference_adamw(theta0, grads, 0.02, 0.9, 0.999, 1e-8, 0.0)
        assert np.abs(p.data - ref).max() <= 1e-12


class TestFreezing:
    def make_two_group_holder(self):
        a = Tensor(np.ones(4), requires_grad=True, name="a")
        b = Tensor(np.ones(4), requires_grad=True, name="b")
        return a, b, Holder([LayerGroup("ga", [a]), LayerGroup("gb", [b])])

    def test_frozen_group_bitwise_invariant(self):
        a, b, holder = self.make_two_group_holder()
        state = AdamWState()
        set_trainable_mask(holder, {0}, state)
        before = b.data.copy()
        rng = np.random.default_rng(0)
        for _ in range(20):
            a.grad = rng.normal(size=4)
            b.grad = rng.normal(size=4)
            adamw_step(holder, state, AdamWConfig(lr=0.1))
        assert np.array_equal(b.data, before)
        assert "b" not in state.slots
        assert state.slots["a"].t == 20

    def test_empty_mask_is_noop(self):
        a, b, holder = self.make_two_group_holder()
        state = AdamWState()
        set_trainable_mask(holder, set(), state)
        a.grad = np.ones(4)
        b.grad = np.ones(4)
        adamw_step(holder, state, AdamWConfig())
        assert np.array_equal(a.data, np.ones(4))
        assert np.array_equal(b.data, np.ones(4))

    def test_discard_drops_and_rezeros(self):
        a, b, holder = self.make_two_group_holder()
        state = AdamWState()
        set_trainable_mask(holder, {0, 1}, state)
        a.grad = np.ones(4)
        b.grad = np.ones(4)
        adamw_step(holder, state, AdamWConfig())
        assert state.slots["b"].t == 1
        set_trainable_mask(holder, {0}, state, moment_policy="discard")
        assert "b" not in state.slots
        set_trainable_mask(holder, {0, 1}, state, moment_policy="discard")
        a.grad = np.ones(4)
        b.grad = np.ones(4)
        adamw_step(holder, state, AdamWConfig())
        assert state.slots["b"].t == 1  # restarted from zero

    def test_retain_keeps_buffers(self):
        a, b, holder = self.make_two_group_holder()
        state = AdamWState()
        set_trainable_mask(holder, {0, 1}, state, moment_policy="retain")
        a.grad = np.ones(4)
        b.grad = np.ones(4)
        adamw_step(holder, state, AdamWConfig())
        m_before = state.slots["b"].m.copy()
        set_trainable_mask(holder, {0}, state, moment_policy="retain")
        a.grad = np.ones(4)
        b.grad = np.ones(4)
        adamw_step(holder, state, AdamWConfig())
        assert np.array_equal(state.slots["b"].m, m_before)
        assert state.slots["b"].t == 1

    def test_retain_freeze_unfreeze_is_identity(self):
        # freezing then immediately unfreezing (zero intervening steps) leaves
        # the trajectory bitwise identical to never having frozen
        rng = np.random.default_rng(3)
        grads = rng.normal(size=(6, 4))

        def run(with_toggle):
            a = Tensor(np.ones(4), requires_grad=True, name="a")
            holder = Holder([LayerGroup("ga", [a])])
            state = AdamWState()
            for i, g in enumerate(grads):
                if with_toggle and i == 3:
                    set_trainable_mask(holder, set(), state, moment_policy="retain")
                    set_trainable_mask(holder, {0}, state, moment_policy="retain")
                a.grad = g.copy()
                adamw_step(holder, state, AdamWConfig(lr=0.05))
            return a.data

        assert np.array_equal(run(False), run(True))

    def test_out_of_range_mask_rejected(self):
        _, _, holder = self.make_two_group_holder()
        with pytest.raises(ConfigError):
            set_trainable_mask(holder, {5})

    def test_unknown_policy_rejected(self):
        _, _, holder = self.make_two_group_holder()
        with pytest.raises(ConfigError):
            set_trainable_mask(holder, {0}, moment_policy="maybe")


class TestStateBytes:
    def test_hundred_scalars(self):
        params = [
            Tensor(np.zeros(()), requires_grad=True, name=f"p{i}") for i in range(100)
        ]
        holder = Holder([LayerGroup("g", params)])
        state = AdamWState()
        for p in params:
            p.grad = np.zeros(())
        adamw_step(holder, state, AdamWConfig())
        assert state.moment_bytes() == 1600  # 2 * 100 * 8
        assert state.counter_bytes() == 800
        assert state_bytes(state) == 2400

    def test_discarded_group_excluded(self):
        a = Tensor(np.zeros(10), requires_grad=True, name="a")
        b = Tensor(np.zeros(6), requires_grad=True, name="b")
        holder = Holder([LayerGroup("ga", [a]), LayerGroup("gb", [b])])
        state = AdamWState()
        a.grad = np.zeros(10)
        b.grad = np.zeros(6)
        adamw_step(holder, state, AdamWConfig())
        assert state.moment_bytes() == 2 * 16 * 8
        set_trainable_mask(holder, {0}, state, moment_policy="discard")
        assert state.moment_bytes() == 2 * 10 * 8

    def test_moment_bytes_ratio_matches_trainable_ratio(self, desk_config):
        from lisalab.instrument import group_param_counts

        counts = group_param_counts(desk_config)

        def train_and_measure(active):
            model = build_model(desk_config, 0)
            state = AdamWState()
            set_trainable_mask(model, active, state)
            rng = np.random.default_rng(0)
            toks = rng.integers(0, 64, (2, 8))
            with Tape() as tape:
                loss = loss_on_batch(model, toks, toks)
            zero_grads(model)
            tape.backward(loss)
            adamw_step(model, state, AdamWConfig())
            return state.moment_bytes()

        full_bytes = train_and_measure(set(range(6)))
        masked = {0, 1, 3, 5}  # E + H + 2 blocks
        masked_bytes = train_and_measure(masked)
        full_count = sum(counts)
        masked_count = sum(counts[i] for i in masked)
        assert full_bytes * masked_count == masked_bytes * full_count
