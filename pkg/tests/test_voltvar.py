"""Inverter limits, environment mechanics, policy heads, PPO plumbing."""

import numpy as np
import pytest

from gridgsp import grid_model as gm
from gridgsp import voltvar as vv


@pytest.fixture(scope="module")
def env4(case4, gso4):
    return vv.VoltVarEnv(case4, gso4, t_window=4)


def make_policy(env, kind="gcn", seed=0):
    return vv.VoltVarPolicy(
        kind,
        n_sig=env.obs_dim,
        n_inverters=env.n_inverters,
        order=1,
        t_window=env.t_window,
        channels=2,
        hidden_dims=(16,),
        seed=seed,
    )


def test_reactive_limit_345_triangle():
    spec = gm.InverterSpec(gm.NodeIndex("3", "b"), s_rating=5.0, p_actual=3.0)
    assert vv.reactive_limit(spec) == pytest.approx(4.0)


def test_reactive_limit_edges():
    node = gm.NodeIndex("3", "b")
    assert vv.reactive_limit(gm.InverterSpec(node, 2.0, 2.0)) == 0.0
    assert vv.reactive_limit(gm.InverterSpec(node, 2.0, 0.0)) == 2.0
    bad = gm.InverterSpec.__new__(gm.InverterSpec)
    object.__setattr__(bad, "node", node)
    object.__setattr__(bad, "s_rating", 1.0)
    object.__setattr__(bad, "p_actual", 2.0)
    with pytest.raises(ValueError, match="exceeds"):
        vv.reactive_limit(bad)


def test_action_grid_11_levels():
    assert len(vv.ACTION_LEVELS) == 11
    assert np.allclose(np.diff(vv.ACTION_LEVELS), 0.2)
    assert vv.ACTION_LEVELS[0] == -1.0 and vv.ACTION_LEVELS[-1] == 1.0


def test_action_validation(env4):
    env4.reset(seed=1)
    with pytest.raises(ValueError, match="grid"):
        env4.step(np.array([0.31, 0.0]))
    with pytest.raises(ValueError, match="shape"):
        env4.step(np.zeros(3))


def test_reward_nonpositive_and_zero_at_reference(env4):
    env4.reset(seed=2)
    _w, r, _d, info = env4.step(np.zeros(env4.n_inverters))
    assert r <= 0.0
    assert r == -info["deviation"]
    # reward is exactly zero iff all controlled magnitudes hit the reference
    assert (r == 0.0) == np.allclose(info["vmag"], 1.0, atol=0)


def test_zero_action_matches_uncontrolled(case4, gso4):
    env = vv.VoltVarEnv(case4, gso4, t_window=3)
    env.reset(seed=3)
    w, r, d, info = env.step(np.zeros(env.n_inverters))
    # replay the same scenario and verify against a direct solve
    env2 = vv.VoltVarEnv(case4, gso4, t_window=3)
    env2.reset(seed=3)
    s = env2._injections(0, np.zeros(env2.n_inverters))
    op = gm.solve_power_flow(case4, s, y=env2.y)
    vmag = np.abs(op.v[env2.inverter_nodes])
    assert np.allclose(info["vmag"], vmag, atol=1e-12)


def test_injected_q_within_limits(env4):
    env4.reset(seed=4)
    for step in range(5):
        qbar = env4.reactive_limits(step)
        s = env4._injections(step, np.full(env4.n_inverters, 1.0))
        for k, node in enumerate(env4.inverter_nodes):
            q_inv = s[node].imag - (env4.nominal_p * env4._load[step]) * env4.tan_phi
            assert abs(q_inv) <= qbar[k] + 1e-12


def test_pv_cuts_reactive_headroom(env4):
    env4.reset(seed=5)
    midday = int(np.argmax(env4._pv))
    night = 0
    q_mid = env4.reactive_limits(midday)
    q_night = env4.reactive_limits(night)
    assert np.all(q_mid < q_night)
    for k, inv in enumerate(env4.case.inverters):
        assert q_night[k] == pytest.approx(inv.s_rating)


def test_episode_termination_and_window_shape(env4):
    w = env4.reset(seed=6)
    assert w.shape == (4, env4.obs_dim)
    steps = 0
    done = False
    while not done:
        w, _r, done, _i = env4.step(np.zeros(env4.n_inverters))
        steps += 1
    assert steps == env4.episode_len


def test_trajectory_deterministic(case4, gso4):
    def run():
        env = vv.VoltVarEnv(case4, gso4, t_window=3)
        rng = np.random.default_rng(0)
        w = env.reset(seed=9)
        out = [w]
        done = False
        while not done:
            a = vv.ACTION_LEVELS[rng.integers(0, 11, env.n_inverters)]
            w, r, done, _ = env.step(a)
            out.append(r)
        return out

    a, b = run(), run()
    assert np.array_equal(a[0], b[0]) and a[1:] == b[1:]


def test_divergence_penalty(case4, gso4):
    env = vv.VoltVarEnv(case4, gso4, t_window=3, nominal_p=-50.0)
    with pytest.raises(gm.PowerFlowError):
        env.reset(seed=0)  # even no-action flow diverges at this loading
    env = vv.VoltVarEnv(case4, gso4, t_window=3, nominal_p=-0.12)
    env.reset(seed=0)
    env.nominal_p = -50.0  # blow up the next step only
    w, r, done, info = env.step(np.zeros(env.n_inverters))
    assert done and info["diverged"] and r == env.penalty_reward and w is None


def test_policy_uniform_logits(env4):
    policy = make_policy(env4)
    policy.w_pi.data[:] = 0.0
    policy.b_pi.data[:] = 0.0
    w = env4.reset(seed=7)
    probs = policy.distribution(w[None], env4.policy_operator())
    assert np.allclose(probs, 1.0 / 11, atol=1e-12)


def test_policy_logit_shift_invariance(env4):
    policy = make_policy(env4, seed=3)
    w = env4.reset(seed=8)
    s_op = env4.policy_operator()
    rng = np.random.default_rng(0)
    a1, _, _ = policy.act(w, s_op, rng, greedy=True)
    policy.b_pi.data += 3.7  # constant shift on every logit
    a2, _, _ = policy.act(w, s_op, rng, greedy=True)
    assert np.array_equal(a1, a2)


def test_policy_joint_logprob_factorizes(env4):
    policy = make_policy(env4, seed=4)
    w = env4.reset(seed=9)
    s_op = env4.policy_operator()
    rng = np.random.default_rng(1)
    a, joint, _v = policy.act(w, s_op, rng)
    probs = policy.distribution(w[None], s_op)[0]
    idx = [int(np.where(np.isclose(vv.ACTION_LEVELS, ai))[0][0]) for ai in a]
    expected = sum(np.log(probs[k, i]) for k, i in enumerate(idx))
    assert joint == pytest.approx(expected, rel=1e-9)


def test_policy_probs_normalized(env4):
    policy = make_policy(env4, seed=5)
    w = env4.reset(seed=10)
    probs = policy.distribution(w[None], env4.policy_operator())
    assert np.allclose(probs.sum(axis=-1), 1.0, atol=1e-12)


def test_full_observation_equals_reduced_pipeline(case4, gso4):
    """observed = all nodes: the reduced operator and observations coincide
    with the full pipeline."""
    env_full = vv.VoltVarEnv(case4, gso4, t_window=3)
    env_all = vv.VoltVarEnv(case4, gso4, observed=range(12), t_window=3)
    assert np.max(np.abs(env_full.policy_operator() - env_all.policy_operator())) <= 1e-10
    w1 = env_full.reset(seed=11)
    w2 = env_all.reset(seed=11)
    assert np.max(np.abs(w1 - w2)) <= 1e-10
    policy = make_policy(env_full, seed=6)
    o1 = policy.distribution(w1[None], env_full.policy_operator())
    o2 = policy.distribution(w2[None], env_all.policy_operator())
    assert np.max(np.abs(o1 - o2)) <= 1e-10


def test_partial_observation_dims(case4, gso4):
    observed = (0, 1, 2, 7, 11)
    env = vv.VoltVarEnv(case4, gso4, observed=observed, t_window=3)
    assert env.obs_dim == 10
    w = env.reset(seed=12)
    assert w.shape == (3, 10)
    s_op = env.policy_operator()
    assert s_op.shape == (10, 10)


def test_discounted_returns_hand():
    rets = vv.discounted_returns([1.0, 1.0, 1.0], gamma=0.5)
    assert np.allclose(rets, [1.75, 1.5, 1.0])


def test_ppo_config_validation():
    with pytest.raises(ValueError, match="gamma"):
        vv.PpoConfig(gamma=1.0)
    with pytest.raises(ValueError, match="clip"):
        vv.PpoConfig(clip=0.0)


def test_frozen_policy_flat_trace(case4, gso4):
    env = vv.VoltVarEnv(case4, gso4, t_window=3)
    policy = make_policy(env, seed=7)
    before = [p.data.copy() for p in policy.params()]
    cfg = vv.PpoConfig(lr=0.0, rollout_episodes=4, update_epochs=2, minibatch=32)
    res = vv.ppo_train(env, policy, cfg, episodes=16, seed=3)
    for p, b in zip(policy.params(), before):
        assert np.array_equal(p.data, b)
    dev = np.array(res.episode_deviation)
    first, last = dev[:8], dev[8:]
    spread = dev.std() + 1e-12
    assert abs(first.mean() - last.mean()) <= 2.0 * spread


def test_ppo_reward_trace_reproducible(case4, gso4):
    def run():
        env = vv.VoltVarEnv(case4, gso4, t_window=3)
        policy = make_policy(env, seed=8)
        cfg = vv.PpoConfig(rollout_episodes=4, update_epochs=2, minibatch=32)
        res = vv.ppo_train(env, policy, cfg, episodes=8, seed=5)
        return res.episode_rewards

    assert run() == run()


def test_ppo_learns_direction(case4, gso4):
    """Short run: the updated policy should not be worse than init by much,
    and parameters must have moved."""
    env = vv.VoltVarEnv(case4, gso4, t_window=3)
    policy = make_policy(env, seed=9)
    before = [p.data.copy() for p in policy.params()]
    cfg = vv.PpoConfig(rollout_episodes=4, update_epochs=4, minibatch=48)
    vv.ppo_train(env, policy, cfg, episodes=12, seed=6)
    moved = any(not np.array_equal(p.data, b) for p, b in zip(policy.params(), before))
    assert moved


def test_evaluate_and_baseline(case4, gso4):
    env = vv.VoltVarEnv(case4, gso4, t_window=3)
    base = vv.zero_action_baseline(env, episodes=2, seed=1)
    assert base > 0
    policy = make_policy(env, seed=10)
    dev = vv.evaluate_policy(env, policy, episodes=2, seed=1, greedy=True)
    assert dev > 0


def test_policy_act_module_alias(env4):
    policy = make_policy(env4, seed=11)
    w = env4.reset(seed=13)
    s_op = env4.policy_operator()
    a1, lp1, v1 = vv.policy_act(policy, w, s_op, np.random.default_rng(2))
    a2, lp2, v2 = policy.act(w, s_op, np.random.default_rng(2))
    assert np.array_equal(a1, a2) and lp1 == lp2 and v1 == v2
