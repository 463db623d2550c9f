import numpy as np
import pytest

from rtb_arena.errors import DataError
from rtb_arena.rl import (ActorCriticNets, Adam, Mlp, ReplayBuffer, ValueNets,
                          mlp_gradient_check, polyak_update, q_update,
                          twin_critic_update)
from rtb_arena.rl.buffer import Batch
from rtb_arena.rl.mlp import flatten_grads


def rng(seed=0):
    return np.random.default_rng(seed)


class TestMlpForward:
    def test_zero_weight_net_outputs_zero(self):
        net = Mlp((3, 4, 2), rng())
        for w in net.weights:
            w[:] = 0.0
        np.testing.assert_array_equal(net.forward(np.ones(3)), np.zeros(2))

    def test_hand_arithmetic_one_by_one(self):
        # single linear unit after a rectifier: relu(2*3 + 1) = 7
        net = Mlp((1, 1, 1), rng())
        net.weights[0][:] = 2.0
        net.biases[0][:] = 1.0
        net.weights[1][:] = 1.0
        net.biases[1][:] = 0.0
        assert net.forward(np.array([3.0]))[0] == pytest.approx(7.0)
        # negative preactivation rectifies to zero
        assert net.forward(np.array([-3.0]))[0] == pytest.approx(0.0)

    def test_deterministic_on_duplicate_input(self):
        net = Mlp((5, 16, 3), rng(4))
        x = rng(9).normal(size=5)
        np.testing.assert_array_equal(net.forward(x), net.forward(x))

    def test_dimension_mismatch_rejected(self):
        net = Mlp((5, 4, 2), rng())
        with pytest.raises(DataError):
            net.forward(np.ones(4))

    def test_tanh_output_bounded(self):
        net = Mlp((3, 8, 1), rng(2), output="tanh")
        x = rng(3).normal(size=(50, 3)) * 10
        out = net.forward(x)
        assert np.all(np.abs(out) <= 1.0)


class TestMlpBackward:
    def test_scalar_net_hand_derivative(self):
        # f(x) = w2 * relu(w1 x + b1) + b2, squared loss L = 0.5 (f - y)^2
        net = Mlp((1, 1, 1), rng())
        w1, b1, w2, b2 = 1.5, 0.2, -0.8, 0.1
        net.weights[0][:] = w1
        net.biases[0][:] = b1
        net.weights[1][:] = w2
        net.biases[1][:] = b2
        x, y = 2.0, 1.0
        h = max(w1 * x + b1, 0.0)
        f = w2 * h + b2
        out, cache = net.forward_cached(np.array([x]))
        grads, gin = net.backward(cache, np.array([out[0] - y]))
        diff = f - y
        assert grads[1][0][0, 0] == pytest.approx(diff * h)      # dL/dw2
        assert grads[1][1][0] == pytest.approx(diff)             # dL/db2
        assert grads[0][0][0, 0] == pytest.approx(diff * w2 * x)  # dL/dw1
        assert grads[0][1][0] == pytest.approx(diff * w2)        # dL/db1
        assert gin[0] == pytest.approx(diff * w2 * w1)           # dL/dx

    def test_zero_upstream_gives_zero_grads(self):
        net = Mlp((4, 8, 3), rng(1))
        out, cache = net.forward_cached(rng(2).normal(size=(6, 4)))
        grads, gin = net.backward(cache, np.zeros_like(out))
        for dw, db in grads:
            assert not dw.any() and not db.any()
        assert not gin.any()

    @pytest.mark.parametrize("shape,output", [
        ((7, 100, 100, 7), "linear"),    # value net over the 7-feature state
        ((4, 100, 100, 1), "tanh"),      # actor over the 4-feature state
        ((5, 100, 100, 1), "linear"),    # critic over state+action
        ((2, 3, 2), "linear"),
    ])
    def test_finite_difference_agreement(self, shape, output):
        net = Mlp(shape, rng(hash(shape) % 2**31), output=output)
        x = rng(7).normal(size=(3, shape[0]))
        target = rng(8).normal(size=(3, shape[-1]))
        assert mlp_gradient_check(net, x, target, epsilon=1e-5) < 1e-4


class TestAdamAndPolyak:
    def test_polyak_identity(self):
        online = Mlp((3, 5, 2), rng(1))
        target = Mlp((3, 5, 2), rng(2))
        before = [p.copy() for p in target.parameters()]
        tau = 0.3
        polyak_update(target, online, tau)
        for t, o, b in zip(target.parameters(), online.parameters(), before):
            np.testing.assert_allclose(t, tau * o + (1 - tau) * b, rtol=1e-15)

    def test_adam_descends_quadratic(self):
        p = [np.array([5.0])]
        opt = Adam(p, lr=0.1)
        for _ in range(300):
            opt.step(p, [2.0 * p[0]])
        assert abs(p[0][0]) < 0.1


class TestReplayBuffer:
    def test_eviction_of_oldest(self):
        buf = ReplayBuffer(capacity=2, state_dim=1, seed=0)
        for i in range(3):
            buf.push([float(i)], i, 0.0, [0.0], False)
        assert len(buf) == 2
        states = {float(buf._states[i][0]) for i in range(2)}
        assert states == {1.0, 2.0}

    def test_seeded_sampling_reproducible(self):
        def fill(seed):
            buf = ReplayBuffer(capacity=16, state_dim=1, seed=seed)
            for i in range(16):
                buf.push([float(i)], i, float(i), [0.0], False)
            return buf.sample(8)

        a, b = fill(3), fill(3)
        np.testing.assert_array_equal(a.states, b.states)
        np.testing.assert_array_equal(a.actions, b.actions)

    def test_insufficient_sample_rejected(self):
        buf = ReplayBuffer(capacity=8, state_dim=1, seed=0)
        buf.push([0.0], 0, 0.0, [0.0], False)
        with pytest.raises(DataError):
            buf.sample(2)

    def test_uniformity_multinomial_bound(self):
        # 1e5 draws over 8 cells (accumulated over repeated samples):
        # each count within 3 sigma of n/8
        buf = ReplayBuffer(capacity=8, state_dim=1, seed=12)
        for i in range(8):
            buf.push([float(i)], i, 0.0, [0.0], False)
        n = 100_000
        counts = np.zeros(8, dtype=np.int64)
        for _ in range(n // 8):
            batch = buf.sample(8)
            counts += np.bincount(batch.actions.astype(int), minlength=8)
        p = 1 / 8
        sigma = (n * p * (1 - p)) ** 0.5
        assert np.all(np.abs(counts - n * p) <= 3 * sigma)


def make_batch(states, actions, rewards, next_states, terminals):
    return Batch(states=np.asarray(states, dtype=float),
                 actions=np.asarray(actions, dtype=float),
                 rewards=np.asarray(rewards, dtype=float),
                 next_states=np.asarray(next_states, dtype=float),
                 terminals=np.asarray(terminals, dtype=float))


class TestQUpdate:
    def build(self, seed=0, state_dim=2, n_actions=3):
        return ValueNets.build(state_dim, n_actions, (8, 8), lr=1e-3,
                               target_refresh=100, rng=rng(seed))

    def test_terminal_target_is_reward(self):
        nets = self.build()
        batch = make_batch([[0.1, 0.2]], [1], [0.5], [[0.0, 0.0]], [1.0])
        q_before = nets.online.forward(batch.states)[0, 1]
        loss = q_update(nets, batch, gamma=1.0)
        assert loss == pytest.approx((q_before - 0.5) ** 2)

    def test_max_over_target_actions(self):
        nets = self.build(seed=5)
        s2 = np.array([[0.3, -0.1]])
        q_next = nets.target.forward(s2)
        expected_target = 1.0 + q_next.max()
        batch = make_batch([[0.1, 0.2]], [0], [1.0], s2, [0.0])
        q_before = nets.online.forward(batch.states)[0, 0]
        loss = q_update(nets, batch, gamma=1.0)
        assert loss == pytest.approx((q_before - expected_target) ** 2)

    def test_gamma_zero_is_supervised_regression(self):
        nets = self.build(seed=6)
        batch = make_batch([[0.1, 0.2]], [2], [0.7], [[9.9, 9.9]], [0.0])
        q_before = nets.online.forward(batch.states)[0, 2]
        loss = q_update(nets, batch, gamma=0.0)
        assert loss == pytest.approx((q_before - 0.7) ** 2)

    def test_descent_on_repeated_batch(self):
        nets = self.build(seed=7)
        batch = make_batch([[0.5, -0.5]] * 8, [1] * 8, [2.0] * 8,
                           [[0.0, 0.0]] * 8, [1.0] * 8)
        first = q_update(nets, batch, gamma=1.0)
        for _ in range(60):
            last = q_update(nets, batch, gamma=1.0)
        assert last < first

    def test_target_refresh_cadence(self):
        nets = ValueNets.build(2, 3, (4,), lr=1e-2, target_refresh=5, rng=rng(1))
        batch = make_batch([[0.5, -0.5]], [0], [1.0], [[0.0, 0.0]], [1.0])
        before = [p.copy() for p in nets.target.parameters()]
        for _ in range(4):
            q_update(nets, batch, gamma=1.0)
        for b, t in zip(before, nets.target.parameters()):
            np.testing.assert_array_equal(b, t)
        q_update(nets, batch, gamma=1.0)   # fifth update refreshes
        same = all(np.array_equal(o, t) for o, t in
                   zip(nets.online.parameters(), nets.target.parameters()))
        assert same

    def test_bad_action_index_rejected(self):
        nets = self.build()
        batch = make_batch([[0.0, 0.0]], [7], [0.0], [[0.0, 0.0]], [1.0])
        with pytest.raises(DataError):
            q_update(nets, batch, gamma=1.0)


class TestTwinCriticUpdate:
    def build(self, seed=0):
        return ActorCriticNets.build(3, (8, 8), lr=1e-3, action_bound=0.99,
                                     rng=rng(seed))

    def test_hand_computed_target_scalar_nets(self):
        nets = self.build(seed=3)
        # freeze targets to constants so the TD target is hand-computable
        for net, value in ((nets.critic1_target, 0.4), (nets.critic2_target, 0.7)):
            for w in net.weights:
                w[:] = 0.0
            for b in net.biases:
                b[:] = 0.0
            net.biases[-1][:] = value
        batch = make_batch([[0.1, 0.2, 0.3]], [0.5], [1.0], [[0.0, 0.1, 0.2]], [0.0])
        # min(Q1, Q2) = 0.4 -> target = 1.0 + 0.4 = 1.4, noise irrelevant
        sa = np.concatenate([batch.states, batch.actions[:, None]], axis=1)
        q1 = nets.critic1.forward(sa)[0, 0]
        q2 = nets.critic2.forward(sa)[0, 0]
        expected_loss = (q1 - 1.4) ** 2 + (q2 - 1.4) ** 2
        loss, _ = twin_critic_update(nets, batch, gamma=1.0, noise_std=0.2,
                                     noise_clip=0.5, policy_delay=10, tau=0.005,
                                     rng=rng(0))
        assert loss == pytest.approx(expected_loss)

    def test_equal_critics_match_single_critic_case(self):
        nets = self.build(seed=4)
        nets.critic2_target.load_from(nets.critic1_target)
        batch = make_batch([[0.1, 0.2, 0.3]], [0.2], [0.5], [[0.3, 0.1, 0.0]], [0.0])
        a_next = nets.actor_target.forward(batch.next_states) * 0.99
        gen = rng(0)
        noise = np.clip(gen.normal(0.0, 0.0, size=a_next.shape), -0.5, 0.5)
        a_next = np.clip(a_next + noise, -0.99, 0.99)
        sa_next = np.concatenate([batch.next_states, a_next], axis=1)
        q_single = nets.critic1_target.forward(sa_next)[0, 0]
        target = 0.5 + q_single
        sa = np.concatenate([batch.states, batch.actions[:, None]], axis=1)
        expected = ((nets.critic1.forward(sa)[0, 0] - target) ** 2
                    + (nets.critic2.forward(sa)[0, 0] - target) ** 2)
        loss, _ = twin_critic_update(nets, batch, gamma=1.0, noise_std=0.0,
                                     noise_clip=0.5, policy_delay=10, tau=0.005,
                                     rng=rng(0))
        assert loss == pytest.approx(expected)

    def test_min_operator_pessimism(self):
        nets = self.build(seed=5)
        batch = make_batch([[0.1, -0.2, 0.3]] * 4, [0.1] * 4, [0.2] * 4,
                           [[0.2, 0.0, -0.1]] * 4, [0.0] * 4)
        a_next = nets.actor_target.forward(batch.next_states) * 0.99
        sa_next = np.concatenate([batch.next_states, a_next], axis=1)
        q1 = nets.critic1_target.forward(sa_next)[:, 0]
        q2 = nets.critic2_target.forward(sa_next)[:, 0]
        pess = 0.2 + np.minimum(q1, q2)
        assert np.all(pess <= 0.2 + q1 + 1e-12)
        assert np.all(pess <= 0.2 + q2 + 1e-12)

    def test_policy_delay_and_polyak(self):
        nets = self.build(seed=6)
        batch = make_batch([[0.1, 0.2, 0.3]] * 4, [0.0] * 4, [1.0] * 4,
                           [[0.0, 0.0, 0.0]] * 4, [1.0] * 4)
        actor_before = [p.copy() for p in nets.actor.parameters()]
        _, actor_loss = twin_critic_update(nets, batch, gamma=1.0, noise_std=0.0,
                                           noise_clip=0.5, policy_delay=2, tau=0.01,
                                           rng=rng(0))
        assert actor_loss is None   # first update: delayed
        for b, p in zip(actor_before, nets.actor.parameters()):
            np.testing.assert_array_equal(b, p)
        _, actor_loss = twin_critic_update(nets, batch, gamma=1.0, noise_std=0.0,
                                           noise_clip=0.5, policy_delay=2, tau=0.01,
                                           rng=rng(0))
        assert actor_loss is not None
        moved = any(not np.array_equal(b, p) for b, p in
                    zip(actor_before, nets.actor.parameters()))
        assert moved

    def test_deterministic_sequence_with_zero_noise(self):
        def run(seed):
            nets = self.build(seed=9)
            gen = rng(42)
            batch = make_batch([[0.1, 0.2, 0.3]] * 4, [0.3] * 4, [0.5] * 4,
                               [[0.0, 0.1, 0.0]] * 4, [0.0] * 4)
            losses = [twin_critic_update(nets, batch, gamma=1.0, noise_std=0.0,
                                         noise_clip=0.5, policy_delay=1, tau=0.01,
                                         rng=gen)[0]
                      for _ in range(5)]
            return losses

        assert run(0) == run(0)
