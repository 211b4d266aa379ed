"""PPO with generalized advantage estimation over a vectorized environment
abstraction (oracle, surrogate, or data-driven baseline model), the
n_envs x buffer_size rollout buffer, periodic evaluation on the oracle, and
saturation-based early stopping.

Hyperparameters are pinned to the usual library defaults: clip 0.2, ten
epochs of minibatch 64, lr 3e-4 (Adam, eps 1e-5), gamma 0.99, GAE lambda
0.95, value coefficient 0.5, entropy coefficient 0, gradient-norm clip 0.5,
two tanh hidden layers of 64 units for both actor and critic.  The policy
squashes a diagonal Gaussian through tanh onto the action bounds.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .grid_model import NetworkSpec
from .oracle_env import OracleDynamics, OracleEnv
from .pinn_surrogate import SurrogateBundle, SurrogateDynamics

LOG_STD_MIN, LOG_STD_MAX = -20.0, 2.0


@dataclass
class PpoConfig:
    n_envs: int = 100
    buffer_size: int = 30
    gamma: float = 0.99
    gae_lambda: float = 0.95
    clip_range: float = 0.2
    lr: float = 3e-4
    epochs: int = 10
    minibatch: int = 64
    vf_coef: float = 0.5
    ent_coef: float = 0.0
    max_grad_norm: float = 0.5
    max_updates: int = 150
    patience: int = 20          # stop when best eval reward stalls this long
    eval_horizon: int = 288
    seed: int = 0


def _orthogonal(rng, shape, gain):
    a = rng.standard_normal(shape)
    q, r = np.linalg.qr(a if shape[0] >= shape[1] else a.T)
    q = q * np.sign(np.diag(r))
    if shape[0] < shape[1]:
        q = q.T
    return gain * q[:shape[0], :shape[1]]


class _TanhMlp:
    """Two tanh hidden layers plus a linear head, with manual backprop."""

    def __init__(self, n_in, n_out, seed, head_gain):
        rng = np.random.default_rng(seed)
        self.params = {
            "w1": _orthogonal(rng, (n_in, 64), np.sqrt(2.0)), "b1": np.zeros(64),
            "w2": _orthogonal(rng, (64, 64), np.sqrt(2.0)), "b2": np.zeros(64),
            "w3": _orthogonal(rng, (64, n_out), head_gain), "b3": np.zeros(n_out),
        }

    def forward(self, x):
        p = self.params
        h1 = np.tanh(x @ p["w1"] + p["b1"])
        h2 = np.tanh(h1 @ p["w2"] + p["b2"])
        y = h2 @ p["w3"] + p["b3"]
        return y, (x, h1, h2)

    def backward(self, cache, d_y):
        p = self.params
        x, h1, h2 = cache
        grads = {"w3": h2.T @ d_y, "b3": d_y.sum(axis=0)}
        dh = d_y @ p["w3"].T
        dh2 = dh * (1.0 - h2 * h2)
        grads["w2"] = h1.T @ dh2
        grads["b2"] = dh2.sum(axis=0)
        dh1 = (dh2 @ p["w2"].T) * (1.0 - h1 * h1)
        grads["w1"] = x.T @ dh1
        grads["b1"] = dh1.sum(axis=0)
        return grads


class PolicyModel:
    """Squashed-Gaussian actor plus value critic on normalized observations."""

    def __init__(self, spec: NetworkSpec, seed: int = 0):
        self.spec = spec
        self.low, self.high = spec.action_bounds()
        self.obs_mid, self.obs_half = _obs_normalizer(spec)
        n_obs = spec.state_dim
        n_act = spec.action_dim
        self.actor = _TanhMlp(n_obs, n_act, seed, head_gain=0.01)
        self.critic = _TanhMlp(n_obs, 1, seed + 1, head_gain=1.0)
        self.log_std = np.zeros(n_act)

    def _norm(self, obs):
        return (np.atleast_2d(obs) - self.obs_mid) / self.obs_half

    def parameters(self):
        out = {f"actor.{k}": v for k, v in self.actor.params.items()}
        out.update({f"critic.{k}": v for k, v in self.critic.params.items()})
        out["log_std"] = self.log_std
        return out

    def act(self, obs, rng):
        """Sample actions; returns (env_action, raw_gaussian, log_prob, value)."""
        x = self._norm(obs)
        mu, _ = self.actor.forward(x)
        std = np.exp(np.clip(self.log_std, LOG_STD_MIN, LOG_STD_MAX))
        raw = mu + std * rng.standard_normal(mu.shape)
        logp = self._log_prob_from_raw(raw, mu)
        value, _ = self.critic.forward(x)
        return self._squash(raw), raw, logp, value[:, 0]

    def act_deterministic(self, obs):
        mu, _ = self.actor.forward(self._norm(obs))
        return self._squash(mu)

    def value(self, obs):
        v, _ = self.critic.forward(self._norm(obs))
        return v[:, 0]

    def _squash(self, raw):
        return self.low + 0.5 * (np.tanh(raw) + 1.0) * (self.high - self.low)

    def _log_prob_from_raw(self, raw, mu):
        log_std = np.clip(self.log_std, LOG_STD_MIN, LOG_STD_MAX)
        std = np.exp(log_std)
        gauss = -0.5 * (((raw - mu) / std) ** 2 + 2 * log_std + np.log(2 * np.pi))
        # tanh squash plus the affine map to the action box
        corr = np.log1p(-np.tanh(raw) ** 2 + 1e-12) + np.log(0.5 * (self.high - self.low))
        return np.sum(gauss - corr, axis=1)


def _obs_normalizer(spec: NetworkSpec):
    """Fixed per-dimension affine map of state vectors to roughly [-1, 1]."""
    lo, hi = [], []
    span = 1.5 * spec.base_mva
    for g in spec.generators:
        if g.is_slack:
            lo.append(-span), hi.append(span)
        else:
            lo.append(g.p_min), hi.append(g.p_max)
    for k, ld in enumerate(spec.loads):
        lo.append(spec.profiles.load_p[k].min()), hi.append(0.0)
    lo.append(spec.des.p_min), hi.append(spec.des.p_max)
    for g in spec.generators:
        if g.is_slack:
            lo.append(-span), hi.append(span)
        else:
            lo.append(g.q_min), hi.append(g.q_max)
    for k, ld in enumerate(spec.loads):
        tan_phi = np.tan(np.arccos(ld.pf))
        lo.append(spec.profiles.load_p[k].min() * tan_phi), hi.append(0.0)
    lo.append(spec.des.q_min), hi.append(spec.des.q_max)
    lo.append(spec.des.soc_min), hi.append(spec.des.soc_max)
    for g in spec.nonslack_generators:
        lo.append(0.0), hi.append(g.p_max)
    lo.append(0.0), hi.append(95.0)
    lo = np.asarray(lo, float)
    hi = np.asarray(hi, float)
    return 0.5 * (lo + hi), np.maximum(0.5 * (hi - lo), 1e-6)


# ---------------------------------------------------------------------------
# vectorized environments

class VecOracleEnv:
    """n independent oracle instances stepped synchronously."""

    def __init__(self, spec: NetworkSpec, n_envs: int, horizon: int, seed: int):
        self.envs = [OracleEnv(spec, horizon=horizon, reset_mode="uniform-random")
                     for _ in range(n_envs)]
        self.n_envs = n_envs
        self._seeds = np.random.SeedSequence(seed).generate_state(10 ** 6).tolist()
        self._next = 0

    def _seed(self):
        s = self._seeds[self._next % len(self._seeds)]
        self._next += 1
        return int(s)

    def reset(self):
        return np.array([env.reset(seed=self._seed()) for env in self.envs])

    def step(self, actions):
        obs = np.empty((self.n_envs, self.envs[0].spec.state_dim))
        rewards = np.empty(self.n_envs)
        dones = np.zeros(self.n_envs, bool)
        truncs = np.zeros(self.n_envs, bool)
        terminal_obs = [None] * self.n_envs
        for i, env in enumerate(self.envs):
            o, r, d, t, _ = env.step(actions[i])
            rewards[i] = r
            dones[i] = d
            truncs[i] = t
            if d or t:
                terminal_obs[i] = o
                o = env.reset(seed=self._seed())
            obs[i] = o
        return obs, rewards, dones, truncs, terminal_obs


class VecSurrogateEnv:
    """One batched surrogate inference call per synchronous step."""

    def __init__(self, bundle: SurrogateBundle, n_envs: int, horizon: int, seed: int):
        self.dyn = SurrogateDynamics(bundle)
        self.spec = bundle.spec
        self.n_envs = n_envs
        self.horizon = horizon
        self._resetter = OracleDynamics(self.spec)
        self._seeds = np.random.SeedSequence(seed).generate_state(10 ** 6).tolist()
        self._next = 0
        self._states = None
        self._t = np.zeros(n_envs, np.int64)

    def _seed(self):
        s = self._seeds[self._next % len(self._seeds)]
        self._next += 1
        return int(s)

    def _fresh_state(self):
        from .grid_model import encode_state
        return encode_state(self._resetter.reset("uniform-random", self._seed()))

    def reset(self):
        self._states = np.array([self._fresh_state() for _ in range(self.n_envs)])
        self._t[:] = 0
        return self._states.copy()

    def step(self, actions):
        next_states, rewards, dones, _ = self.dyn.step_batch(self._states, actions)
        self._t += 1
        truncs = (~dones) & (self._t >= self.horizon)
        terminal_obs = [None] * self.n_envs
        for i in np.flatnonzero(dones | truncs):
            terminal_obs[i] = next_states[i].copy()
            next_states[i] = self._fresh_state()
            self._t[i] = 0
        self._states = next_states
        return next_states.copy(), rewards, dones, truncs, terminal_obs


class VecModelEnv:
    """Data-driven baseline regressor as a vectorized environment."""

    def __init__(self, model, spec: NetworkSpec, n_envs: int, horizon: int, seed: int,
                 classifier=None):
        self.model = model
        self.spec = spec
        self.n_envs = n_envs
        self.horizon = horizon
        self.classifier = classifier
        self._resetter = OracleDynamics(spec)
        self._seeds = np.random.SeedSequence(seed).generate_state(10 ** 6).tolist()
        self._next = 0
        self._states = None
        self._t = np.zeros(n_envs, np.int64)

    def _seed(self):
        s = self._seeds[self._next % len(self._seeds)]
        self._next += 1
        return int(s)

    def _fresh_state(self):
        from .grid_model import encode_state
        return encode_state(self._resetter.reset("uniform-random", self._seed()))

    def reset(self):
        self._states = np.array([self._fresh_state() for _ in range(self.n_envs)])
        self._t[:] = 0
        return self._states.copy()

    def step(self, actions):
        clip_lo, clip_hi = self.spec.reward_clip
        next_states, rewards = self.model.predict(self._states, actions)
        rewards = np.clip(rewards, clip_lo, clip_hi)
        if self.classifier is not None:
            feats = np.concatenate([self._states, actions], axis=1)
            dones = self.classifier.predict(feats)[1].astype(bool)
            rewards = np.where(dones, clip_lo, rewards)
        else:
            dones = np.zeros(self.n_envs, bool)
        self._t += 1
        truncs = (~dones) & (self._t >= self.horizon)
        terminal_obs = [None] * self.n_envs
        for i in np.flatnonzero(dones | truncs):
            terminal_obs[i] = next_states[i].copy()
            next_states[i] = self._fresh_state()
            self._t[i] = 0
        self._states = next_states
        return next_states.copy(), rewards, dones, truncs, terminal_obs


# ---------------------------------------------------------------------------
# rollout buffer and GAE

class RolloutBuffer:
    """Fixed-capacity on-policy store; capacity = n_envs * buffer_size."""

    def __init__(self, n_envs: int, buffer_size: int, obs_dim: int, act_dim: int):
        self.n_envs = n_envs
        self.buffer_size = buffer_size
        shape = (buffer_size, n_envs)
        self.obs = np.zeros(shape + (obs_dim,))
        self.raw_actions = np.zeros(shape + (act_dim,))
        self.log_probs = np.zeros(shape)
        self.rewards = np.zeros(shape)
        self.values = np.zeros(shape)
        self.episode_starts = np.zeros(shape, bool)
        self.pos = 0

    @property
    def capacity(self) -> int:
        return self.n_envs * self.buffer_size

    @property
    def full(self) -> bool:
        return self.pos >= self.buffer_size

    def add(self, obs, raw_actions, log_probs, rewards, values, episode_starts):
        if self.full:
            raise RuntimeError("rollout buffer is full")
        t = self.pos
        self.obs[t] = obs
        self.raw_actions[t] = raw_actions
        self.log_probs[t] = log_probs
        self.rewards[t] = rewards
        self.values[t] = values
        self.episode_starts[t] = episode_starts
        self.pos += 1

    def reset(self):
        self.pos = 0

    def stored_transitions(self) -> int:
        return self.pos * self.n_envs


def compute_gae(buffer: RolloutBuffer, last_values, last_episode_starts,
                gamma: float, lam: float):
    """Standard GAE recursion with done masking; returns (advantages, returns)."""
    T = buffer.buffer_size
    adv = np.zeros((T, buffer.n_envs))
    last_gae = np.zeros(buffer.n_envs)
    for t in reversed(range(T)):
        if t == T - 1:
            non_terminal = 1.0 - last_episode_starts.astype(float)
            next_values = last_values
        else:
            non_terminal = 1.0 - buffer.episode_starts[t + 1].astype(float)
            next_values = buffer.values[t + 1]
        delta = buffer.rewards[t] + gamma * next_values * non_terminal - buffer.values[t]
        last_gae = delta + gamma * lam * non_terminal * last_gae
        adv[t] = last_gae
    return adv, adv + buffer.values


def collect_rollout(envs, policy: PolicyModel, buffer: RolloutBuffer, rng,
                    obs, episode_starts, gamma: float):
    """Exactly buffer_size synchronous steps across all envs, with auto-reset.

    Truncated episodes are value-bootstrapped into the recorded reward, the
    usual timeout treatment.  Returns (last_obs, last_episode_starts).
    """
    buffer.reset()
    for _ in range(buffer.buffer_size):
        action, raw, logp, value = policy.act(obs, rng)
        next_obs, rewards, dones, truncs, terminal_obs = envs.step(action)
        for i in np.flatnonzero(truncs):
            rewards = rewards.copy()
            rewards[i] += gamma * float(policy.value(terminal_obs[i][None])[0])
        buffer.add(obs, raw, logp, rewards, value, episode_starts)
        episode_starts = dones | truncs
        obs = next_obs
    return obs, episode_starts


# ---------------------------------------------------------------------------
# PPO update

class _Adam:
    def __init__(self, params: dict, lr: float, eps: float = 1e-5):
        self.lr = lr
        self.eps = eps
        self.b1, self.b2 = 0.9, 0.999
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, params: dict, grads: dict):
        self.t += 1
        bc1 = 1.0 - self.b1 ** self.t
        bc2 = 1.0 - self.b2 ** self.t
        for k, p in params.items():
            g = grads.get(k)
            if g is None:
                continue
            self.m[k] = self.b1 * self.m[k] + (1 - self.b1) * g
            self.v[k] = self.b2 * self.v[k] + (1 - self.b2) * g * g
            p -= self.lr * (self.m[k] / bc1) / (np.sqrt(self.v[k] / bc2) + self.eps)


def _clip_global_norm(grads: dict, max_norm: float):
    total = np.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if total > max_norm:
        scale = max_norm / (total + 1e-12)
        for g in grads.values():
            g *= scale
    return total


def ppo_update(policy: PolicyModel, buffer: RolloutBuffer, advantages, returns,
               optimizer: _Adam, cfg: PpoConfig, rng):
    """Clipped-surrogate PPO epochs over shuffled minibatches."""
    n = buffer.capacity
    obs = buffer.obs.reshape(n, -1)
    raw = buffer.raw_actions.reshape(n, -1)
    logp_old = buffer.log_probs.reshape(n)
    adv = advantages.reshape(n)
    ret = returns.reshape(n)
    adv = (adv - adv.mean()) / (adv.std() + 1e-8)  # normalized per update

    stats = {"policy_loss": 0.0, "value_loss": 0.0, "clip_frac": 0.0, "n_minibatches": 0}
    if not np.all(np.isfinite(logp_old)):
        raise FloatingPointError("non-finite log-probabilities in the buffer")
    for _ in range(cfg.epochs):
        perm = rng.permutation(n)
        for start in range(0, n, cfg.minibatch):
            idx = perm[start:start + cfg.minibatch]
            x = policy._norm(obs[idx])
            mu, actor_cache = policy.actor.forward(x)
            log_std = np.clip(policy.log_std, LOG_STD_MIN, LOG_STD_MAX)
            std = np.exp(log_std)
            z = (raw[idx] - mu) / std
            gauss = -0.5 * (z ** 2 + 2 * log_std + np.log(2 * np.pi))
            corr = (np.log1p(-np.tanh(raw[idx]) ** 2 + 1e-12)
                    + np.log(0.5 * (policy.high - policy.low)))
            logp = np.sum(gauss - corr, axis=1)
            ratio = np.exp(logp - logp_old[idx])
            a = adv[idx]
            unclipped = ratio * a
            clipped = np.clip(ratio, 1 - cfg.clip_range, 1 + cfg.clip_range) * a
            policy_loss = -np.mean(np.minimum(unclipped, clipped))
            active = unclipped <= clipped  # unclipped branch carries the gradient
            dlogp = np.where(active, -a * ratio, 0.0) / idx.size

            # chain into the Gaussian parameters (squash term is constant here)
            dmu = dlogp[:, None] * (z / std)
            dlogstd = np.sum(dlogp[:, None] * (z ** 2 - 1.0), axis=0)
            actor_grads = policy.actor.backward(actor_cache, dmu)

            v, critic_cache = policy.critic.forward(x)
            v = v[:, 0]
            value_loss = float(np.mean((ret[idx] - v) ** 2))
            dv = cfg.vf_coef * 2.0 * (v - ret[idx])[:, None] / idx.size
            critic_grads = policy.critic.backward(critic_cache, dv)

            if not (np.isfinite(policy_loss) and np.isfinite(value_loss)):
                raise FloatingPointError(
                    f"PPO loss diverged (policy={policy_loss}, value={value_loss})")

            grads = {f"actor.{k}": v_ for k, v_ in actor_grads.items()}
            grads.update({f"critic.{k}": v_ for k, v_ in critic_grads.items()})
            grads["log_std"] = dlogstd
            _clip_global_norm(grads, cfg.max_grad_norm)
            optimizer.step(policy.parameters(), grads)

            stats["policy_loss"] += float(policy_loss)
            stats["value_loss"] += value_loss
            stats["clip_frac"] += float(np.mean(~active))
            stats["n_minibatches"] += 1
    for k in ("policy_loss", "value_loss", "clip_frac"):
        stats[k] /= max(1, stats["n_minibatches"])
    return stats


# ---------------------------------------------------------------------------
# evaluation and the training driver

def evaluate_policy(policy: PolicyModel, spec: NetworkSpec, horizon: int,
                    deterministic: bool = True):
    """One fixed-start episode on the oracle; mean per-step reward and energy loss."""
    env = OracleEnv(spec, horizon=horizon, reset_mode="fixed-start")
    obs = env.reset()
    rewards = []
    energy = []
    for _ in range(horizon):
        a = policy.act_deterministic(obs[None])[0]
        obs, r, done, truncated, info = env.step(a)
        rewards.append(r)
        parts = info.get("energy_loss_parts", (np.nan, np.nan, np.nan))
        energy.append(np.nansum(parts))
        if done or truncated:
            break
    return float(np.mean(rewards)), float(np.mean(energy))


@dataclass
class TrainRunRecord:
    n_envs: int
    buffer_size: int
    updates: list = field(default_factory=list)  # (update, train_seconds_cum, eval_reward, energy_loss)

    def save_csv(self, path):
        with open(path, "w") as fh:
            fh.write("update,wall_time_s,eval_reward,energy_loss\n")
            for row in self.updates:
                fh.write(f"{row[0]},{row[1]!r},{row[2]!r},{row[3]!r}\n")


def make_vec_env(env_kind: str, spec: NetworkSpec, cfg: PpoConfig, *,
                 bundle: SurrogateBundle = None, model=None, classifier=None,
                 horizon: int | None = None):
    horizon = horizon if horizon is not None else cfg.eval_horizon
    if env_kind == "oracle":
        return VecOracleEnv(spec, cfg.n_envs, horizon, seed=cfg.seed)
    if env_kind == "pinn":
        return VecSurrogateEnv(bundle, cfg.n_envs, horizon, seed=cfg.seed)
    if env_kind == "baseline-model":
        return VecModelEnv(model, spec, cfg.n_envs, horizon, seed=cfg.seed,
                           classifier=classifier)
    raise ValueError(f"unknown env kind {env_kind!r}")


def train_policy(env_kind: str, spec: NetworkSpec, cfg: PpoConfig, *,
                 bundle: SurrogateBundle = None, model=None, classifier=None,
                 log: bool = False):
    """PPO training on the chosen environment with oracle-side evaluation.

    After every update one evaluation episode runs on the oracle regardless
    of the training environment.  Training stops when the best evaluation
    reward has not improved for `patience` consecutive evaluations, or at
    `max_updates`.  Recorded wall time covers rollout + update compute only
    (evaluation is instrumentation).
    """
    envs = make_vec_env(env_kind, spec, cfg, bundle=bundle, model=model,
                        classifier=classifier)
    policy = PolicyModel(spec, seed=cfg.seed)
    optimizer = _Adam(policy.parameters(), lr=cfg.lr)
    buffer = RolloutBuffer(cfg.n_envs, cfg.buffer_size, spec.state_dim, spec.action_dim)
    rng = np.random.default_rng(cfg.seed)
    record = TrainRunRecord(cfg.n_envs, cfg.buffer_size)

    obs = envs.reset()
    episode_starts = np.ones(cfg.n_envs, bool)
    best = -np.inf
    best_update = 0
    train_seconds = 0.0
    for update in range(1, cfg.max_updates + 1):
        t0 = time.perf_counter()
        obs, episode_starts = collect_rollout(envs, policy, buffer, rng, obs,
                                              episode_starts, cfg.gamma)
        assert buffer.stored_transitions() == cfg.n_envs * cfg.buffer_size
        adv, ret = compute_gae(buffer, policy.value(obs), episode_starts,
                               cfg.gamma, cfg.gae_lambda)
        ppo_update(policy, buffer, adv, ret, optimizer, cfg, rng)
        train_seconds += time.perf_counter() - t0

        eval_reward, energy = evaluate_policy(policy, spec, cfg.eval_horizon)
        record.updates.append((update, train_seconds, eval_reward, energy))
        if log:
            print(f"  [{env_kind}] update {update}: eval reward {eval_reward:.2f} "
                  f"(train {train_seconds:.1f}s)", flush=True)
        if eval_reward > best:
            best = eval_reward
            best_update = update
        if update - best_update >= cfg.patience:
            break
    return policy, record


def sweep_structural_params(spec: NetworkSpec, bundle: SurrogateBundle,
                            n_envs_grid, buffer_grid, cfg: PpoConfig,
                            transition_budget: int = 57600,
                            min_updates: int = 12, max_updates: int = 120,
                            log: bool = False):
    """Short training run per (n_envs, buffer_size) cell on the surrogate.

    Each cell's update budget derives from a shared transition budget
    (clamped), so cells with smaller rollouts update more often; plateau
    early stopping still applies.  Returns (rows, correlations) where rows
    are (n_envs, buffer_size, mean_last10_reward, total_time_s).
    """
    from dataclasses import replace

    rows = []
    for n_envs in n_envs_grid:
        for buffer_size in buffer_grid:
            updates = int(np.clip(round(transition_budget / (n_envs * buffer_size)),
                                  min_updates, max_updates))
            cell_cfg = replace(cfg, n_envs=n_envs, buffer_size=buffer_size,
                               max_updates=updates)
            _, record = train_policy("pinn", spec, cell_cfg, bundle=bundle)
            rewards = [r[2] for r in record.updates]
            mean_last10 = float(np.mean(rewards[-10:]))
            total_time = record.updates[-1][1]
            rows.append((n_envs, buffer_size, mean_last10, total_time))
            if log:
                print(f"  cell ({n_envs}, {buffer_size}): {updates} updates, "
                      f"mean last-10 reward {mean_last10:.2f}, {total_time:.1f}s", flush=True)
    arr = np.array(rows)
    corr = {
        "buffer_vs_reward": float(np.corrcoef(arr[:, 1], arr[:, 2])[0, 1]),
        "n_envs_vs_reward": float(np.corrcoef(arr[:, 0], arr[:, 2])[0, 1]),
        "buffer_vs_time": float(np.corrcoef(arr[:, 1], arr[:, 3])[0, 1]),
        "n_envs_vs_time": float(np.corrcoef(arr[:, 0], arr[:, 3])[0, 1]),
    }
    return rows, corr


def save_sweep_csv(path, rows):
    with open(path, "w") as fh:
        fh.write("n_envs,buffer_size,mean_last10_reward,total_time_s\n")
        for r in rows:
            fh.write(f"{int(r[0])},{int(r[1])},{r[2]!r},{r[3]!r}\n")
