"""Baseline training datasets drawn from the oracle environment (generative
and agent-based) and the purely data-driven surrogate regressors (linear,
MLP) they feed, plus open-loop and closed-loop (episodic) evaluation.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .convex_projection import build_des_polytope, build_generator_polytope, project_exact
from .grid_model import (GridState, NetworkSpec, action_column_names, decode_action,
                         decode_state, encode_state, state_column_names)
from .nn_core import AdamWState, MlpModel, Scaler, adamw_step
from .oracle_env import OracleDynamics, OracleEnv
from .pinn_surrogate import SurrogateBundle, surrogate_step_batch


@dataclass
class TransitionDataset:
    kind: str                 # "generative" | "agent-based"
    states: np.ndarray        # (n, state_dim)
    actions: np.ndarray       # (n, action_dim)
    next_states: np.ndarray   # (n, state_dim)
    rewards: np.ndarray       # (n,)
    dones: np.ndarray         # (n,) collapse flags
    episode_starts: np.ndarray  # (n,) first row of each trajectory (agent kind)

    @property
    def size(self) -> int:
        return self.states.shape[0]

    def save_csv(self, path, spec: NetworkSpec):
        s_cols = state_column_names(spec)
        a_cols = action_column_names(spec)
        header = (s_cols + a_cols + [f"next_{c}" for c in s_cols]
                  + ["reward", "done", "episode_start"])
        with open(path, "w") as fh:
            fh.write("# kind=" + self.kind + "\n")
            fh.write(",".join(header) + "\n")
            for i in range(self.size):
                cells = ([repr(float(v)) for v in self.states[i]]
                         + [repr(float(v)) for v in self.actions[i]]
                         + [repr(float(v)) for v in self.next_states[i]]
                         + [repr(float(self.rewards[i])), str(int(self.dones[i])),
                            str(int(self.episode_starts[i]))])
                fh.write(",".join(cells) + "\n")


def load_dataset_csv(path, spec: NetworkSpec) -> TransitionDataset:
    with open(path) as fh:
        kind = fh.readline().strip().split("kind=")[1]
        fh.readline()  # header
        rows = np.array([[float(v) for v in line.split(",")] for line in fh if line.strip()])
    sd, ad = spec.state_dim, spec.action_dim
    return TransitionDataset(
        kind=kind,
        states=rows[:, :sd], actions=rows[:, sd:sd + ad],
        next_states=rows[:, sd + ad:2 * sd + ad], rewards=rows[:, 2 * sd + ad],
        dones=rows[:, 2 * sd + ad + 1].astype(bool),
        episode_starts=rows[:, 2 * sd + ad + 2].astype(bool))


def _feasible_state(dyn: OracleDynamics, spec: NetworkSpec, draw: np.ndarray):
    """A valid state from a Sobol row: (soc, aux, generator P fraction and Q,
    DES P/Q), device powers projected feasible, slack from the power flow."""
    from .powerflow import NoSolution

    d = spec.des
    soc = d.soc_min + draw[0] * (d.soc_max - d.soc_min)
    aux = min(95, int(draw[1] * 96))
    state = dyn._profile_consistent_state(aux, soc)
    gens = spec.nonslack_generators
    k = len(gens)
    p_max = spec.profiles.gen_p_max_at(aux)
    for gi, g in enumerate(gens):
        p_raw = g.p_min + draw[2 + gi] * (p_max[gi] - g.p_min)
        q_raw = g.q_min + draw[2 + k + gi] * (g.q_max - g.q_min)
        cert = project_exact((p_raw, q_raw), build_generator_polytope(g, p_max[gi]))
        state.p_dev[dyn._gen_pos[gi]] = cert.x_star[0]
        state.q_dev[dyn._gen_pos[gi]] = cert.x_star[1]
    p_raw = d.p_min + draw[2 + 2 * k] * (d.p_max - d.p_min)
    q_raw = d.q_min + draw[3 + 2 * k] * (d.q_max - d.q_min)
    cert = project_exact((p_raw, q_raw), build_des_polytope(d, soc, spec.delta_t))
    state.p_dev[dyn._des_pos] = cert.x_star[0]
    state.q_dev[dyn._des_pos] = cert.x_star[1]
    from .powerflow import slack_power, solve_for_spec
    sol = solve_for_spec(spec, dyn.adm, dyn._injections(state.p_dev, state.q_dev))
    if isinstance(sol, NoSolution):
        return None
    p_s, q_s = slack_power(dyn.adm, sol, base_mva=spec.base_mva,
                           q_sign=1.0 if spec.literal_q_sign else -1.0)
    state.p_dev[dyn._slack_pos] = p_s
    state.q_dev[dyn._slack_pos] = q_s
    return state


def build_generative_dataset(spec: NetworkSpec, n: int, seed: int) -> TransitionDataset:
    """Independent transitions: Sobol-sampled valid states and actions, each
    passed once through the oracle step."""
    from .nn_core import sobol_sample

    dyn = OracleDynamics(spec)
    k = len(spec.nonslack_generators)
    dims = 2 + 2 * k + 2 + spec.action_dim   # state draw + action draw
    low, high = spec.action_bounds()
    states, actions, next_states, rewards, dones = [], [], [], [], []
    offset = seed * 10_000_019  # disjoint stream segments per seed
    while len(states) < n:
        block = sobol_sample(dims, 2 * (n - len(states)), offset=offset)
        offset += block.shape[0]
        for row in block:
            state = _feasible_state(dyn, spec, row[:dims - spec.action_dim])
            if state is None:
                continue
            action_vec = low + row[dims - spec.action_dim:] * (high - low)
            res = dyn.step(state, decode_action(action_vec, spec))
            states.append(encode_state(state))
            actions.append(action_vec)
            next_states.append(encode_state(res.next_state))
            rewards.append(res.reward)
            dones.append(res.done)
            if len(states) >= n:
                break
    starts = np.ones(n, bool)  # every row is its own one-step trajectory
    return TransitionDataset("generative", np.array(states), np.array(actions),
                             np.array(next_states), np.array(rewards),
                             np.array(dones), starts)


def build_agent_dataset(spec: NetworkSpec, n: int, seed: int,
                        rollout_horizon: int = 288) -> TransitionDataset:
    """Contiguous uniform-random-policy trajectories, reset on done/horizon."""
    rng = np.random.default_rng(seed)
    env = OracleEnv(spec, horizon=rollout_horizon, reset_mode="uniform-random")
    low, high = spec.action_bounds()
    states = np.empty((n, spec.state_dim))
    actions = np.empty((n, spec.action_dim))
    next_states = np.empty((n, spec.state_dim))
    rewards = np.empty(n)
    dones = np.zeros(n, bool)
    starts = np.zeros(n, bool)
    obs = env.reset(seed=int(rng.integers(2 ** 31)))
    fresh = True
    for i in range(n):
        a = rng.uniform(low, high)
        nxt, r, done, truncated, _ = env.step(a)
        states[i] = obs
        actions[i] = a
        next_states[i] = nxt
        rewards[i] = r
        dones[i] = done
        starts[i] = fresh
        fresh = False
        obs = nxt
        if done or truncated:
            obs = env.reset(seed=int(rng.integers(2 ** 31)))
            fresh = True
    return TransitionDataset("agent-based", states, actions, next_states,
                             rewards, dones, starts)


# ---------------------------------------------------------------------------
# regressors

@dataclass
class BaselineRegressor:
    kind: str                     # "linear" | "mlp"
    dataset_kind: str
    fitted: bool = False
    # linear
    coef: np.ndarray | None = None
    # mlp
    net: MlpModel | None = None
    in_scaler: Scaler | None = None
    out_scaler: Scaler | None = None

    def predict(self, states: np.ndarray, actions: np.ndarray):
        if not self.fitted:
            raise RuntimeError("regressor is not fitted")
        x = np.concatenate([np.atleast_2d(states), np.atleast_2d(actions)], axis=1)
        if self.kind == "linear":
            y = np.column_stack([x, np.ones(x.shape[0])]) @ self.coef
        else:
            u = self.in_scaler.scale(x)
            y = self.out_scaler.unscale(self.net.forward(u).astype(float))
        return y[:, :-1], y[:, -1]


def _padded_scaler(data: np.ndarray) -> Scaler:
    lo = data.min(axis=0)
    hi = data.max(axis=0)
    flat = hi - lo <= 0
    hi = np.where(flat, lo + 1.0, hi)  # unit width for constant columns
    return Scaler(lo, hi)


def fit_baseline(kind: str, dataset: TransitionDataset, seed: int = 0,
                 max_steps: int = 30000, window: int = 5000,
                 log: bool = False) -> BaselineRegressor:
    """linear: ordinary least squares (ridge 1e-8); mlp: the shared residual
    architecture trained on mean absolute error with the usual optimizer."""
    if dataset.size == 0:
        raise ValueError("dataset is empty")
    x = np.concatenate([dataset.states, dataset.actions], axis=1)
    y = np.column_stack([dataset.next_states, dataset.rewards])
    if kind == "linear":
        xb = np.column_stack([x, np.ones(x.shape[0])])
        gram = xb.T @ xb + 1e-8 * np.eye(xb.shape[1])
        try:
            coef = np.linalg.solve(gram, xb.T @ y)
        except np.linalg.LinAlgError as exc:
            raise RuntimeError(f"normal equations are singular: {exc}") from exc
        return BaselineRegressor(kind="linear", dataset_kind=dataset.kind,
                                 fitted=True, coef=coef)
    if kind != "mlp":
        raise ValueError(f"unknown baseline kind {kind!r}")

    in_scaler = _padded_scaler(x)
    out_scaler = _padded_scaler(y)
    xs = in_scaler.scale(x)
    ys = out_scaler.scale(y)
    net = MlpModel.init(x.shape[1], y.shape[1], seed=seed)
    net.params["w_out"][:] = 0.0
    opt = AdamWState.for_params(net.params, lr=1e-5)
    rng = np.random.default_rng(seed)
    best = np.inf
    best_step = 0
    n_out_total = ys.shape[1]
    for step in range(max_steps):
        idx = rng.integers(0, xs.shape[0], size=64)
        pred, cache = net.forward_train(xs[idx])
        err = pred - ys[idx]
        loss = float(np.mean(np.abs(err)))
        d_y = np.sign(err) / err.size
        grads = net.backward(cache, d_y)
        adamw_step(opt, net.params, grads)
        if loss < best:
            best, best_step = loss, step
        if step - best_step >= window:
            break
        if log and step % 5000 == 0:
            print(f"  mlp[{dataset.kind}] step {step} mae(scaled)={loss:.5f}")
    return BaselineRegressor(kind="mlp", dataset_kind=dataset.kind, fitted=True,
                             net=net, in_scaler=in_scaler, out_scaler=out_scaler)


# ---------------------------------------------------------------------------
# evaluation

def _predict_any(model, spec, states, actions):
    if isinstance(model, SurrogateBundle):
        next_states, rewards, _, _ = surrogate_step_batch(model, states, actions)
        return next_states, rewards
    return model.predict(states, actions)


def r2_and_mae(pred: np.ndarray, target: np.ndarray):
    """Per-output R^2 and MAE plus their means."""
    pred = np.atleast_2d(pred)
    target = np.atleast_2d(target)
    resid = np.sum((target - pred) ** 2, axis=0)
    tot = np.sum((target - target.mean(axis=0)) ** 2, axis=0)
    r2 = np.where(tot > 0, 1.0 - resid / np.where(tot > 0, tot, 1.0),
                  np.where(resid <= 1e-24, 1.0, 0.0))
    mae = np.mean(np.abs(target - pred), axis=0)
    return {"r2": r2, "r2_mean": float(r2.mean()),
            "mae": mae, "mae_mean": float(mae.mean())}


def evaluate_open_loop(model, spec: NetworkSpec, dataset: TransitionDataset):
    pred_s, pred_r = _predict_any(model, spec, dataset.states, dataset.actions)
    pred = np.column_stack([pred_s, pred_r])
    target = np.column_stack([dataset.next_states, dataset.rewards])
    return r2_and_mae(pred, target)


def episode_from_policy(spec: NetworkSpec, policy_fn, horizon: int, seed: int):
    """Roll the oracle for `horizon` steps; returns (states, actions, rewards)
    with states containing horizon+1 rows."""
    env = OracleEnv(spec, horizon=horizon, reset_mode="fixed-start")
    obs = env.reset(seed=seed)
    states = [obs]
    actions = []
    rewards = []
    for t in range(horizon):
        a = policy_fn(obs, t)
        obs, r, done, truncated, _ = env.step(a)
        states.append(obs)
        actions.append(a)
        rewards.append(r)
        if done:
            break
    return np.array(states), np.array(actions), np.array(rewards)


def evaluate_episodic(model, spec: NetworkSpec, states: np.ndarray, actions: np.ndarray):
    """Closed-loop rollout from the true initial state, feeding the model its
    own predictions; per-step and averaged MAE against the oracle trajectory."""
    n_steps = actions.shape[0]
    cur = states[0].copy()
    per_step = np.empty(n_steps)
    for t in range(n_steps):
        nxt, _ = _predict_any(model, spec, cur[None, :], actions[t][None, :])
        cur = nxt[0]
        per_step[t] = float(np.mean(np.abs(cur - states[t + 1])))
    return {"per_step_mae": per_step, "episodic_mae": float(per_step.mean())}
