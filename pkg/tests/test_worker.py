import math

import numpy as np
import pytest

from multiview_rl.ddpg import DDPGHyper, OUNoise, ReplayBuffer, Transition, noise_schedule
from multiview_rl.numerics import DimensionError, DivergenceError, Mlp, forward, zeros_like
from multiview_rl.worker import NetSizes, WorkerNet, check_feature_dims


def small_worker(seed=0, view_dim=3, action_dim=2, bound=1.0, hyper=None, feature_dim=4):
    sizes = NetSizes(feature_dim=feature_dim, encoder_hidden=(5,), actor_hidden=(4,), critic_hidden=(6,))
    return WorkerNet.build(view_dim, action_dim, bound, sizes, np.random.default_rng(seed), 0, hyper)


def random_batch(rng, n, view_dim=3, action_dim=2, terminal=False):
    return [Transition(rng.normal(size=view_dim), rng.uniform(-1, 1, size=action_dim), float(rng.normal()),
                       rng.normal(size=view_dim), terminal) for _ in range(n)]


def test_zero_encoder_gives_zero_features():
    w = small_worker()
    w.encoder = zeros_like(w.encoder)
    assert not w.encode([0.3, 1.0, -2.0]).any()


def test_encode_deterministic_and_matches_forward():
    w = small_worker()
    obs = np.array([0.1, -0.4, 2.0])
    assert w.encode(obs).tobytes() == w.encode(obs).tobytes()
    np.testing.assert_array_equal(w.encode(obs), forward(w.encoder, obs))
    with pytest.raises(DimensionError):
        w.encode([1.0, 2.0])


def test_act_deterministic_and_bounded():
    w = small_worker(bound=0.5)
    w.actor_head = w.actor_head.with_params(w.actor_head.params * 1e3)
    rng = np.random.default_rng(0)
    obs = np.array([1.0, 2.0, 3.0])
    assert w.act(obs, 0.0, rng).tobytes() == w.act(obs, 0.0, rng).tobytes()
    for _ in range(200):
        a = w.act(rng.normal(size=3) * 5, 3.0, rng)
        assert np.all(np.abs(a) <= 0.5)


def test_ou_mean_near_zero():
    noise = OUNoise(1, theta=0.15, mu=0.0, sigma=0.2)
    rng = np.random.default_rng(0)
    samples = np.array([noise.sample(rng)[0] for _ in range(100_000)])
    assert abs(samples.mean()) < 0.02
    # oracle: the same recursion written out directly
    rng = np.random.default_rng(0)
    x, direct = 0.0, []
    for _ in range(1000):
        x = x + 0.15 * (0.0 - x) + 0.2 * rng.standard_normal(1)[0]
        direct.append(x)
    np.testing.assert_allclose(samples[:1000], direct, rtol=0, atol=1e-12)


def test_noise_schedule():
    assert noise_schedule(0, 100) == 1.0
    assert noise_schedule(25, 100) == pytest.approx(0.55)
    assert noise_schedule(50, 100) == noise_schedule(99, 100) == 0.1


def test_gate_signal():
    w = small_worker()
    obs, a = np.array([0.2, 0.3, -0.1]), np.array([0.5, -0.5])
    assert w.gate_signal(obs, a) == forward(w.critic, np.concatenate([obs, a]))[0]
    w.critic = zeros_like(w.critic)
    assert w.gate_signal(obs, a) == 0.0
    with pytest.raises(DimensionError):
        w.gate_signal(obs, [0.5])


def test_gate_signal_matmul_oracle():
    rng = np.random.default_rng(9)
    w1, b1, w2, b2 = rng.normal(size=(6, 5)), rng.normal(size=6), rng.normal(size=(1, 6)), rng.normal(size=1)
    critic = Mlp((5, 6, 1), np.concatenate([w1.ravel(), b1, w2.ravel(), b2]))
    w = small_worker()
    w.critic = critic
    obs, a = rng.normal(size=3), rng.normal(size=2)
    expected = (w2 @ np.tanh(w1 @ np.concatenate([obs, a]) + b1) + b2)[0]
    assert abs(w.gate_signal(obs, a) - expected) <= 1e-12


def test_perceive_is_consistent():
    w = small_worker()
    obs = np.array([0.5, 0.5, -1.0])
    feat, proposal, f = w.perceive(obs)
    np.testing.assert_array_equal(feat, w.encode(obs))
    np.testing.assert_array_equal(proposal, w.policy(obs))
    assert f == w.gate_signal(obs, proposal)


def test_mismatched_feature_dims_rejected():
    a, b = small_worker(feature_dim=4), small_worker(feature_dim=5)
    assert check_feature_dims([a, a]) == 4
    with pytest.raises(DimensionError):
        check_feature_dims([a, b])
    with pytest.raises(DimensionError):
        WorkerNet(a.encoder, b.actor_head, a.critic, 0)


def test_zero_td_batch_leaves_critic_unchanged():
    # gamma = 0 and a critic that outputs exactly the reward: TD error is zero
    hyper = DDPGHyper(gamma=0.0, batch_size=1, buffer_capacity=10)
    w = small_worker(hyper=hyper)
    w.critic = zeros_like(w.critic)
    before = w.critic.params.copy()
    rng = np.random.default_rng(0)
    batch = [Transition(t.obs, t.action, 0.0, t.next_obs, t.terminal) for t in random_batch(rng, 4)]
    out = w.train_step(batch)
    assert out["critic_loss"] == 0.0
    assert np.array_equal(w.critic.params, before)


def _critic_loss(worker, batch, hyper):
    obs = np.stack([t.obs for t in batch])
    act = np.stack([t.action for t in batch])
    r = np.array([t.reward for t in batch])
    nxt = np.stack([t.next_obs for t in batch])
    d = np.array([float(t.terminal) for t in batch])
    next_q = forward(worker.target_critic,
                     np.concatenate([nxt, forward(worker.target_actor, forward(worker.target_encoder, nxt))], 1))[:, 0]
    y = r + hyper.gamma * (1 - d) * next_q
    return float(np.mean((forward(worker.critic, np.concatenate([obs, act], 1))[:, 0] - y) ** 2)), y


def test_gamma_zero_targets_are_rewards():
    hyper = DDPGHyper(gamma=0.0, batch_size=1, buffer_capacity=10)
    w = small_worker(hyper=hyper)
    batch = random_batch(np.random.default_rng(1), 5)
    loss, y = _critic_loss(w, batch, hyper)
    np.testing.assert_array_equal(y, [t.reward for t in batch])
    assert w.train_step(batch)["critic_loss"] == pytest.approx(loss, rel=1e-14)


def test_terminal_masking():
    hyper = DDPGHyper(gamma=0.9, batch_size=1, buffer_capacity=10)
    w = small_worker(hyper=hyper)
    batch = random_batch(np.random.default_rng(2), 3, terminal=True)
    _, y = _critic_loss(w, batch, hyper)
    np.testing.assert_array_equal(y, [t.reward for t in batch])
    assert w.train_step(batch)["critic_loss"] == pytest.approx(_critic_loss(small_worker(hyper=hyper), batch, hyper)[0])


def test_hand_differentiated_sgd_step():
    """1-1 encoder, 1-1 actor head, 2-2-1 critic; one transition; every update derived by hand."""
    lr_a, lr_c, gamma, tau = 0.05, 0.1, 0.9, 0.5
    hyper = DDPGHyper(gamma=gamma, tau=tau, lr_actor=lr_a, lr_critic=lr_c, batch_size=1, buffer_capacity=4)
    ew, eb = 0.8, -0.1                      # encoder: f = tanh(ew s + eb)
    hw, hb, bound = 1.3, 0.2, 2.0           # head:    a = bound tanh(hw f + hb)
    W = [[0.5, -0.3], [0.2, 0.7]]           # critic:  Q = sum_j v_j tanh(W_j . [s, a] + c_j) + d
    c, v, dd = [0.1, -0.2], [0.6, -0.4], 0.05
    enc = Mlp((1, 1), [ew, eb], "tanh", "tanh_scaled", 1.0)
    head = Mlp((1, 1), [hw, hb], "tanh", "tanh_scaled", bound)
    critic = Mlp((2, 2, 1), [W[0][0], W[0][1], W[1][0], W[1][1], c[0], c[1], v[0], v[1], dd])
    w = WorkerNet(enc, head, critic, 0, hyper)

    s, a, r, s2 = 0.4, 0.3, 1.5, -0.2

    def q(Wm, cm, vm, dm, x, u):
        return sum(vm[j] * math.tanh(Wm[j][0] * x + Wm[j][1] * u + cm[j]) for j in range(2)) + dm

    a2 = bound * math.tanh(hw * math.tanh(ew * s2 + eb) + hb)
    y = r + gamma * q(W, c, v, dd, s2, a2)
    hidden = [math.tanh(W[j][0] * s + W[j][1] * a + c[j]) for j in range(2)]
    td = q(W, c, v, dd, s, a) - y
    g = 2 * td
    nW = [[W[j][k] - lr_c * g * v[j] * (1 - hidden[j] ** 2) * (s, a)[k] for k in range(2)] for j in range(2)]
    nc = [c[j] - lr_c * g * v[j] * (1 - hidden[j] ** 2) for j in range(2)]
    nv = [v[j] - lr_c * g * hidden[j] for j in range(2)]
    nd = dd - lr_c * g

    feat = math.tanh(ew * s + eb)
    z = hw * feat + hb
    pi = bound * math.tanh(z)
    dq_da = sum(nv[j] * (1 - math.tanh(nW[j][0] * s + nW[j][1] * pi + nc[j]) ** 2) * nW[j][1] for j in range(2))
    dz = dq_da * bound * (1 - math.tanh(z) ** 2)
    nhw, nhb = hw + lr_a * dz * feat, hb + lr_a * dz
    dfeat = dz * hw * (1 - feat ** 2)
    new_ew, new_eb = ew + lr_a * dfeat * s, eb + lr_a * dfeat

    out = w.train_step([Transition(np.array([s]), np.array([a]), r, np.array([s2]), False)])
    expected_critic = [nW[0][0], nW[0][1], nW[1][0], nW[1][1], nc[0], nc[1], nv[0], nv[1], nd]
    np.testing.assert_allclose(w.critic.params, expected_critic, rtol=0, atol=1e-10)
    np.testing.assert_allclose(w.actor_head.params, [nhw, nhb], rtol=0, atol=1e-10)
    np.testing.assert_allclose(w.encoder.params, [new_ew, new_eb], rtol=0, atol=1e-10)
    assert out["critic_loss"] == pytest.approx(td * td, abs=1e-12)
    old = np.array([W[0][0], W[0][1], W[1][0], W[1][1], c[0], c[1], v[0], v[1], dd])
    np.testing.assert_allclose(w.target_critic.params, old + tau * (np.array(expected_critic) - old), atol=1e-12)


def bump_critic(sizes, target, k=2.0, c=0.5):
    """Frozen critic tanh(k(a - a*) + c) + tanh(-k(a - a*) + c): even in a - a*, peaked (locally quadratic) at a*."""
    n_in, n_h = sizes[0], sizes[1]
    W1, b1, w2 = np.zeros((n_h, n_in)), np.zeros(n_h), np.zeros(n_h)
    W1[0, -1], b1[0] = k, c - k * target
    W1[1, -1], b1[1] = -k, c + k * target
    w2[:2] = 1.0
    return Mlp(sizes, np.concatenate([W1.ravel(), b1, w2, [0.0]]))


@pytest.mark.parametrize("seed", range(5))
def test_actor_step_increases_frozen_peaked_critic(seed):
    hyper = DDPGHyper(lr_actor=1e-2, lr_critic=0.0, batch_size=1, buffer_capacity=100)
    w = small_worker(seed, hyper=hyper, action_dim=1)
    w.critic = bump_critic(w.critic.layer_sizes, target=0.6)
    frozen = w.critic.params.copy()
    obs = np.random.default_rng(seed).normal(size=(8, 3))
    batch = [Transition(o, np.array([0.0]), 0.0, o, True) for o in obs]

    def mean_q():
        return float(np.mean(forward(w.critic, np.concatenate([obs, w.policy(obs)], 1))))

    before = mean_q()
    w.train_step(batch)
    assert np.array_equal(w.critic.params, frozen)
    assert mean_q() > before


def test_replay_fifo_eviction():
    buf = ReplayBuffer(3)
    for i in range(4):
        buf.add(Transition(np.array([float(i)]), np.array([0.0]), float(i), np.array([0.0]), False))
    assert len(buf) == 3
    assert buf.contents()["reward"].tolist() == [1.0, 2.0, 3.0]
    with pytest.raises(ValueError):
        buf.sample(4, np.random.default_rng(0))
    with pytest.raises(ValueError):
        buf.add({"reward": 1.0})


def test_transition_rejects_non_finite_reward():
    with pytest.raises(ValueError):
        Transition(np.zeros(1), np.zeros(1), math.nan, np.zeros(1), False)


def test_divergence_is_signalled():
    hyper = DDPGHyper(batch_size=1, buffer_capacity=4)
    w = small_worker(hyper=hyper)
    w.critic = w.critic.with_params(np.full(w.critic.params.size, 1e200))
    with pytest.raises(DivergenceError):
        w.train_step(random_batch(np.random.default_rng(0), 2))


def test_dict_batch_matches_list_batch():
    hyper = DDPGHyper(batch_size=1, buffer_capacity=16)
    batch = random_batch(np.random.default_rng(4), 6)
    a, b = small_worker(5, hyper=hyper), small_worker(5, hyper=hyper)
    buf = ReplayBuffer(16)
    for t in batch:
        buf.add(t)
    a.train_step(batch)
    b.train_step(buf.contents())
    assert a.critic.params.tobytes() == b.critic.params.tobytes()
    assert a.encoder.params.tobytes() == b.encoder.params.tobytes()


def test_checkpoint_roundtrip(tmp_path):
    w = small_worker(7)
    w.view_index = 2
    w.train_step(random_batch(np.random.default_rng(0), 4))
    w.save(tmp_path)
    back = WorkerNet.load(tmp_path, 2)
    for name in WorkerNet.NETS:
        assert getattr(back, name).params.tobytes() == getattr(w, name).params.tobytes()
    (tmp_path / "worker2_critic.bin").rename(tmp_path / "worker3_critic.bin")
    with pytest.raises(FileNotFoundError):
        WorkerNet.load(tmp_path, 2)
