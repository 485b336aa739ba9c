"""Voltage regulation by inverter reactive dispatch, learned with PPO.

The environment wraps the power-flow oracle: each step the agent picks one of
11 normalized reactive levels per inverter, the injections are solved, and
the reward is the negative sum of voltage-magnitude deviations from 1 p.u. at
the inverter nodes. A daily load/PV profile (resampled per episode with
seeded noise) drives the exogenous injections and the inverter headroom.

The stochastic policy is a graph network trunk over the observation window
with a factored categorical head per inverter and a scalar value head; under
partial observation the trunk filters with the Kron-reduced operator on the
observed nodes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import grid_model as gm
from .autodiff import Tensor
from .gso import RealGso, kron_reduce, signal_from_voltage
from .gsp import rescale_operator
from .nn import GcnModel, GrnModel, glorot

ACTION_LEVELS = np.round(np.linspace(-1.0, 1.0, 11), 10)


def reactive_limit(spec: gm.InverterSpec) -> float:
    """Headroom sqrt(s_rating^2 - p_actual^2) left for reactive injection."""
    if spec.p_actual > spec.s_rating:
        raise ValueError(
            f"inverter {spec.node}: p_actual {spec.p_actual} exceeds rating"
        )
    return math.sqrt(spec.s_rating**2 - spec.p_actual**2)


def validate_action(a: np.ndarray, n_inverters: int) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    if a.shape != (n_inverters,):
        raise ValueError(f"action shape {a.shape}, expected ({n_inverters},)")
    snapped = ACTION_LEVELS[np.abs(a[:, None] - ACTION_LEVELS[None, :]).argmin(axis=1)]
    if np.max(np.abs(a - snapped)) > 1e-9:
        raise ValueError("action entries must lie on the 0.2-spaced grid")
    return snapped


@dataclass
class DailyProfile:
    """24-step load multiplier (two evening/morning peaks) and a midday PV
    bell; each episode resamples both with multiplicative noise."""

    load_shape: np.ndarray = field(
        default_factory=lambda: 0.62
        + 0.25 * np.exp(-0.5 * ((np.arange(24) - 19.0) / 2.5) ** 2)
        + 0.18 * np.exp(-0.5 * ((np.arange(24) - 8.0) / 2.0) ** 2)
    )
    pv_shape: np.ndarray = field(
        default_factory=lambda: np.clip(
            np.sin(np.pi * (np.arange(24) - 6.0) / 12.0), 0.0, None
        )
    )
    load_noise: float = 0.05
    pv_noise: float = 0.10

    def sample(self, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
        load = self.load_shape * (1 + self.load_noise * rng.standard_normal(24))
        pv = self.pv_shape * np.clip(
            1 + self.pv_noise * rng.standard_normal(24), 0.0, None
        )
        return np.clip(load, 0.05, None), np.clip(pv, 0.0, 1.0)


class VoltVarEnv:
    """Power-flow-backed episodic environment for inverter VAR dispatch.

    Observations are windows of the last ``t_window`` signals [phi; |v|]
    restricted to ``observed`` (all nodes by default). ``policy_operator()``
    is the matching spectrally-rescaled shift operator: the full stacked one,
    or its Kron reduction onto the observed set.
    """

    def __init__(
        self,
        case: gm.GridCase,
        gso: RealGso,
        observed=None,
        t_window: int = 5,
        episode_len: int = 24,
        nominal_p: float = -0.12,
        power_factor: float = 0.95,
        pv_fraction: float = 0.7,
        profile: DailyProfile | None = None,
        penalty_reward: float = -10.0,
        v_ref: float = 1.0,
    ):
        if not case.inverters:
            raise ValueError("case has no inverters to control")
        self.case = case
        self.gso = gso
        self.y = gm.assemble_admittance(case)
        self.observed = (
            tuple(range(case.n_nodes))
            if observed is None
            else tuple(int(i) for i in observed)
        )
        self.t_window = t_window
        self.episode_len = episode_len
        self.nominal_p = nominal_p
        self.tan_phi = math.tan(math.acos(power_factor))
        self.pv_fraction = pv_fraction
        self.profile = profile or DailyProfile()
        self.penalty_reward = penalty_reward
        self.v_ref = v_ref
        self.inverter_nodes = [case._node_pos[inv.node] for inv in case.inverters]
        self._idx_d = np.array(case.nonslack_node_indices)
        self._t = 0
        self._window = None
        self._load = None
        self._pv = None
        self._v_prev = None

    @property
    def n_inverters(self) -> int:
        return len(self.case.inverters)

    @property
    def obs_dim(self) -> int:
        return 2 * len(self.observed)

    def policy_operator(self) -> np.ndarray:
        """Rescaled stacked shift operator on the observed node set."""
        red = kron_reduce(self.gso.b_hat, self.observed).s_red
        m = red.shape[0]
        s = np.zeros((2 * m, 2 * m))
        s[:m, :m] = red
        s[m:, m:] = red
        return rescale_operator(s)

    def _observe(self, v: np.ndarray) -> np.ndarray:
        x = signal_from_voltage(v, self.case.nodes)
        idx = np.array(self.observed)
        n = self.case.n_nodes
        return np.concatenate([x[idx], x[n + np.array(idx)]])

    def reactive_limits(self, step: int) -> np.ndarray:
        """Per-inverter headroom at a step given the episode's PV trace."""
        q = np.empty(self.n_inverters)
        for k, inv in enumerate(self.case.inverters):
            p_now = min(self.pv_fraction * self._pv[step] * inv.s_rating,
                        inv.s_rating)
            q[k] = math.sqrt(inv.s_rating**2 - p_now**2)
        return q

    def _injections(self, step: int, a: np.ndarray) -> np.ndarray:
        s = np.zeros(self.case.n_nodes, dtype=complex)
        p_load = self.nominal_p * self._load[step]
        s[self._idx_d] = p_load * (1 + 1j * self.tan_phi)
        qbar = self.reactive_limits(step)
        for k, inv in enumerate(self.case.inverters):
            node = self.inverter_nodes[k]
            p_now = min(self.pv_fraction * self._pv[step] * inv.s_rating,
                        inv.s_rating)
            q_inj = a[k] * qbar[k]
            assert abs(q_inj) <= qbar[k] + 1e-12
            s[node] += p_now + 1j * q_inj
        return s

    def reset(self, seed: int) -> np.ndarray:
        """Start an episode; the seed fixes the load/PV realization."""
        rng = np.random.default_rng(seed)
        self._load, self._pv = self.profile.sample(rng)
        self._t = 0
        op = gm.solve_power_flow(
            self.case, self._injections(0, np.zeros(self.n_inverters)), y=self.y
        )
        self._v_prev = op.v
        obs = self._observe(op.v)
        self._window = np.tile(obs, (self.t_window, 1))
        return self._window.copy()

    def step(self, a) -> tuple[np.ndarray, float, bool, dict]:
        """Apply a grid action, solve the flow, emit reward and next window."""
        if self._window is None:
            raise RuntimeError("call reset() before step()")
        a = validate_action(a, self.n_inverters)
        s = self._injections(self._t, a)
        try:
            op = gm.solve_power_flow(self.case, s, y=self.y, v0=self._v_prev)
        except gm.PowerFlowError:
            self._window = None
            return None, self.penalty_reward, True, {"diverged": True}
        self._v_prev = op.v
        vmag = np.abs(op.v[self.inverter_nodes])
        reward = -float(np.sum(np.abs(vmag - self.v_ref)))
        obs = self._observe(op.v)
        self._window = np.vstack([self._window[1:], obs[None, :]])
        self._t += 1
        done = self._t >= self.episode_len
        info = {"deviation": -reward, "vmag": vmag, "diverged": False}
        window = self._window.copy()
        if done:
            self._window = None
        return window, reward, done, info


@dataclass(frozen=True)
class PpoConfig:
    lr: float = 0.0007
    gamma: float = 0.99
    clip: float = 0.1
    entropy_weight: float = 0.01
    value_weight: float = 1.0
    rollout_episodes: int = 8
    update_epochs: int = 16
    minibatch: int = 96
    normalize_adv: bool = True

    def __post_init__(self):
        if not 0 < self.gamma < 1:
            raise ValueError("gamma must lie in (0, 1)")
        if self.clip <= 0:
            raise ValueError("clip must be positive")


class VoltVarPolicy:
    """Graph trunk shared by a factored 11-way policy head per inverter and a
    scalar value head."""

    def __init__(
        self,
        kind: str,
        n_sig: int,
        n_inverters: int,
        order: int = 2,
        t_window: int = 5,
        channels: int = 4,
        hidden_dims=(64,),
        seed: int = 0,
    ):
        cls = {"gcn": GcnModel, "grn": GrnModel}[kind]
        self.kind = kind
        self.n_inverters = n_inverters
        self.trunk = cls(
            n_sig=n_sig,
            order=order,
            t_window=t_window,
            channels=channels,
            hidden_dims=hidden_dims,
            out_dim=n_sig,
            seed=seed,
        )
        rng = np.random.default_rng(seed + 101)
        hdim = self.trunk.hidden_dims[-1]
        n_levels = len(ACTION_LEVELS)
        self.w_pi = Tensor(
            0.01 * glorot(rng, hdim, n_inverters * n_levels,
                          (hdim, n_inverters * n_levels)),
            True,
        )
        self.b_pi = Tensor(np.zeros(n_inverters * n_levels), True)
        self.w_v = Tensor(glorot(rng, hdim, 1, (hdim, 1)), True)
        self.b_v = Tensor(np.zeros(1), True)

    def params(self):
        # the trunk's tanh output layer is bypassed by the heads
        head = self.trunk.head
        trunk_params = [self.trunk.h]
        if self.kind == "gcn":
            trunk_params += [self.trunk.theta, self.trunk.b_feat]
        else:
            trunk_params += [
                self.trunk.theta_in,
                self.trunk.theta_rec,
                self.trunk.b_rec,
            ]
        return [
            *trunk_params,
            *head.weights,
            *head.biases,
            self.w_pi,
            self.b_pi,
            self.w_v,
            self.b_v,
        ]

    def _hidden(self, windows: np.ndarray, s: np.ndarray) -> Tensor:
        feat = self.trunk.feature(windows, s)
        b = feat.shape[0]
        flat = feat.reshape(b, self.trunk.n_sig * self.trunk.channels)
        return self.trunk.head.hidden(flat)

    def _log_probs(self, hidden: Tensor) -> Tensor:
        """Log softmax over levels, shape (batch, n_inverters, n_levels)."""
        b = hidden.shape[0]
        logits = (hidden @ self.w_pi + self.b_pi).reshape(
            b, self.n_inverters, len(ACTION_LEVELS)
        )
        zmax = np.max(logits.data, axis=-1, keepdims=True)  # detached shift
        shifted = logits - Tensor(zmax)
        lse = shifted.exp().sum(axis=-1).log().reshape(b, self.n_inverters, 1)
        return shifted - lse

    def distribution(self, windows, s) -> np.ndarray:
        """Level probabilities per inverter (no gradients), (b, n_inv, 11)."""
        logp = self._log_probs(self._hidden(np.asarray(windows), s))
        return np.exp(logp.data)

    def act(self, window: np.ndarray, s: np.ndarray, rng: np.random.Generator,
            greedy: bool = False):
        """Sample (or argmax) a grid action; returns levels, joint log-prob,
        value estimate."""
        hidden = self._hidden(window[None], s)
        logp = self._log_probs(hidden).data[0]
        value = float((hidden @ self.w_v + self.b_v).data[0, 0])
        probs = np.exp(logp)
        idx = np.empty(self.n_inverters, dtype=int)
        for k in range(self.n_inverters):
            if greedy:
                idx[k] = int(np.argmax(probs[k]))
            else:
                idx[k] = int(rng.choice(len(ACTION_LEVELS), p=probs[k] / probs[k].sum()))
        joint_logp = float(logp[np.arange(self.n_inverters), idx].sum())
        return ACTION_LEVELS[idx], joint_logp, value

    def evaluate_actions(self, windows: np.ndarray, s: np.ndarray,
                         level_idx: np.ndarray):
        """Batched log-probs, entropy and values for a PPO update."""
        hidden = self._hidden(windows, s)
        logp = self._log_probs(hidden)
        b = windows.shape[0]
        rows = np.repeat(np.arange(b), self.n_inverters)
        invs = np.tile(np.arange(self.n_inverters), b)
        picked = logp[(rows, invs, level_idx.reshape(-1))]
        joint = picked.reshape(b, self.n_inverters).sum(axis=1)
        probs = logp.exp()
        entropy = -(probs * logp).sum(axis=-1).sum(axis=-1)
        values = (hidden @ self.w_v + self.b_v).reshape(b)
        return joint, entropy, values


def policy_act(
    policy: VoltVarPolicy,
    window: np.ndarray,
    s: np.ndarray,
    rng: np.random.Generator,
    greedy: bool = False,
):
    """Sample an action from the stochastic policy: (levels, joint log-prob,
    value estimate)."""
    return policy.act(window, s, rng, greedy=greedy)


def discounted_returns(rewards: list[float], gamma: float) -> np.ndarray:
    out = np.empty(len(rewards))
    acc = 0.0
    for t in range(len(rewards) - 1, -1, -1):
        acc = rewards[t] + gamma * acc
        out[t] = acc
    return out


@dataclass
class PpoResult:
    episode_rewards: list[float] = field(default_factory=list)
    episode_deviation: list[float] = field(default_factory=list)
    diverged_episodes: int = 0


def ppo_train(
    env: VoltVarEnv,
    policy: VoltVarPolicy,
    config: PpoConfig,
    episodes: int,
    seed: int,
) -> PpoResult:
    """Clipped-surrogate PPO with entropy bonus and value regression.

    Advantages are empirical discounted returns minus the value baseline,
    normalized per update batch. The seed drives episode scenarios, action
    sampling and minibatch shuffling; an identical (config, seed) pair
    reproduces the reward trace bit for bit.
    """
    rng = np.random.default_rng(seed)
    s_op = env.policy_operator()
    params = policy.params()
    opt = ad.AdamState(params)
    result = PpoResult()
    buf_w, buf_a, buf_logp, buf_ret = [], [], [], []

    for ep in range(episodes):
        window = env.reset(seed=int(rng.integers(2**63 - 1)))
        rewards, ep_windows, ep_actions, ep_logps = [], [], [], []
        done = False
        diverged = False
        while not done:
            a, logp, _v = policy.act(window, s_op, rng)
            ep_windows.append(window)
            ep_actions.append(
                np.abs(a[:, None] - ACTION_LEVELS[None, :]).argmin(axis=1)
            )
            ep_logps.append(logp)
            window, r, done, info = env.step(a)
            rewards.append(r)
            diverged = diverged or info.get("diverged", False)
        rets = discounted_returns(rewards, config.gamma)
        buf_w.extend(ep_windows)
        buf_a.extend(ep_actions)
        buf_logp.extend(ep_logps)
        buf_ret.extend(rets.tolist())
        result.episode_rewards.append(float(np.mean(rewards)))
        result.episode_deviation.append(float(np.mean([-r for r in rewards])))
        if diverged:
            result.diverged_episodes += 1

        if (ep + 1) % config.rollout_episodes == 0:
            _ppo_update(policy, params, opt, config, rng, s_op,
                        np.stack(buf_w), np.stack(buf_a),
                        np.array(buf_logp), np.array(buf_ret))
            buf_w, buf_a, buf_logp, buf_ret = [], [], [], []
    return result


def _ppo_update(policy, params, opt, config, rng, s_op, windows, actions,
                old_logp, returns):
    n = windows.shape[0]
    _, _, values = policy.evaluate_actions(windows, s_op, actions)
    adv = returns - values.data
    if config.normalize_adv:
        adv = (adv - adv.mean()) / (adv.std() + 1e-8)
    for _ in range(config.update_epochs):
        order = rng.permutation(n)
        for start in range(0, n, config.minibatch):
            mb = order[start : start + config.minibatch]
            ad.zero_grads(params)
            logp, entropy, vals = policy.evaluate_actions(
                windows[mb], s_op, actions[mb]
            )
            ratio = (logp - Tensor(old_logp[mb])).exp()
            adv_t = Tensor(adv[mb])
            unclipped = ratio * adv_t
            clipped = Tensor(
                np.clip(ratio.data, 1 - config.clip, 1 + config.clip)
            ) * adv_t
            take_unclipped = (unclipped.data <= clipped.data).astype(float)
            surrogate = (
                unclipped * Tensor(take_unclipped)
                + clipped * Tensor(1.0 - take_unclipped)
            ).mean()
            v_loss = (vals - Tensor(returns[mb])).square().mean()
            loss = (
                -surrogate
                + config.value_weight * v_loss
                - config.entropy_weight * entropy.mean()
            )
            if not np.isfinite(float(loss.data)):
                raise RuntimeError(f"non-finite PPO loss {float(loss.data)}")
            loss.backward()
            ad.adam_step(params, opt, lr=config.lr)


def zero_action_baseline(env: VoltVarEnv, episodes: int, seed: int) -> float:
    """Mean per-step deviation with inverters idle (the uncontrolled grid)."""
    rng = np.random.default_rng(seed)
    devs = []
    for _ in range(episodes):
        env.reset(seed=int(rng.integers(2**63 - 1)))
        done = False
        while not done:
            _w, r, done, info = env.step(np.zeros(env.n_inverters))
            devs.append(info["deviation"])
    return float(np.mean(devs))


def evaluate_policy(
    env: VoltVarEnv,
    policy: VoltVarPolicy,
    episodes: int,
    seed: int,
    greedy: bool = True,
) -> float:
    """Mean per-step deviation under the policy."""
    rng = np.random.default_rng(seed)
    s_op = env.policy_operator()
    devs = []
    for _ in range(episodes):
        window = env.reset(seed=int(rng.integers(2**63 - 1)))
        done = False
        while not done:
            a, _lp, _v = policy.act(window, s_op, rng, greedy=greedy)
            window, r, done, info = env.step(a)
            devs.append(info["deviation"])
    return float(np.mean(devs))
