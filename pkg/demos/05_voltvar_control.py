#!/usr/bin/env python3
"""Learn inverter VAR dispatch with PPO on the 4-bus feeder and compare the
greedy policy's voltage deviation against the uncontrolled grid."""

import numpy as np

from gridgsp import grid_model as gm
from gridgsp import gso as gsolib
from gridgsp import voltvar as vv
from gridgsp.cases import case_path

case = gm.load_case(case_path("case4"))
g = gsolib.build_real_gso(case)

env = vv.VoltVarEnv(case, g, t_window=5)
inv_names = [str(i.node) for i in case.inverters]
print(f"environment: {env.episode_len}-step days, inverters at "
      f"{', '.join(inv_names)}, 11 action levels each")

baseline = vv.zero_action_baseline(env, episodes=8, seed=100)
print(f"zero-action deviation: {baseline:.5f} p.u. per step (sum over inverters)")

policy = vv.VoltVarPolicy("gcn", n_sig=env.obs_dim, n_inverters=env.n_inverters,
                          order=2, t_window=5, channels=4, hidden_dims=(64,),
                          seed=0)
cfg = vv.PpoConfig()
print(f"PPO: lr={cfg.lr}, gamma={cfg.gamma}, clip={cfg.clip}, "
      f"entropy={cfg.entropy_weight}, value weight={cfg.value_weight}")

res = vv.ppo_train(env, policy, cfg, episodes=200, seed=0)
head = np.mean(res.episode_deviation[:20])
tail = np.mean(res.episode_deviation[-20:])
print(f"training deviation: first 20 episodes {head:.5f} -> last 20 {tail:.5f}")

dev = vv.evaluate_policy(env, policy, episodes=8, seed=100, greedy=True)
print(f"greedy policy deviation: {dev:.5f} p.u. "
      f"({dev / baseline:.0%} of the uncontrolled grid)")

# partial observation: measured nodes only, Kron-reduced operator
observed = (0, 1, 2, 5, 7, 11)
env_p = vv.VoltVarEnv(case, g, observed=observed, t_window=5)
policy_p = vv.VoltVarPolicy("gcn", n_sig=env_p.obs_dim,
                            n_inverters=env_p.n_inverters, order=2, t_window=5,
                            channels=4, hidden_dims=(64,), seed=0)
vv.ppo_train(env_p, policy_p, cfg, episodes=200, seed=0)
dev_p = vv.evaluate_policy(env_p, policy_p, episodes=8, seed=100, greedy=True)
print(f"partial observation ({len(observed)} of 12 nodes): deviation "
      f"{dev_p:.5f} p.u. ({dev_p / baseline:.0%} of uncontrolled)")
