"""Ground-truth MDP for the grid: full transition dynamics, reward and
terminal detection, plus a reset/step environment wrapper.

The implementation is deliberately the plain numpy reference path: this
environment plays the role of the costly iterative simulator that the
surrogate replaces, and it is pinned to one backend so trajectories do not
depend on the acceleration flag.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .convex_projection import build_des_polytope, build_generator_polytope, project_exact
from .grid_model import (Action, GridState, NetworkSpec, advance_aux, decode_action,
                         encode_state, load_q_from_p)
from .powerflow import (AdmittanceMatrix, BusInjections, NoSolution, VoltageSolution,
                        branch_flows, build_admittance, slack_power, solve_for_spec)

# instrumentation: total oracle transitions computed in this process, used to
# assert that surrogate training consumes zero environment samples
STEP_COUNTER = 0


def step_counter() -> int:
    return STEP_COUNTER


def reset_step_counter():
    global STEP_COUNTER
    STEP_COUNTER = 0


@dataclass
class StepResult:
    next_state: GridState
    reward: float
    done: bool
    info: dict


def soc_update(soc: float, p_des: float, eta: float, delta_t: float,
               soc_min: float = -np.inf, soc_max: float = np.inf) -> float:
    """Battery state-of-charge transition; charging (P<=0) is scaled by eta,
    discharging by 1/eta.  Bounds clamp is only a numerical guard: the DES
    projection already keeps P inside the SoC-feasible range."""
    if p_des <= 0.0:
        soc_next = soc - eta * delta_t * p_des
    else:
        soc_next = soc - (delta_t / eta) * p_des
    return float(min(max(soc_next, soc_min), soc_max))


def penalty(spec: NetworkSpec, v: VoltageSolution, flows: np.ndarray) -> float:
    """Operating-constraint penalty: voltage-bound and apparent-power-bound
    excesses, both flow directions, scaled by the step length."""
    acc = 0.0
    for bus in spec.buses:
        vm = v.v_mag[bus.index - 1]
        acc += max(0.0, vm - bus.v_max) + max(0.0, bus.v_min - vm)
    for k, br in enumerate(spec.branches):
        for s in flows[k]:
            acc += max(0.0, s - br.s_rating) + max(0.0, br.s_min - s)
    return spec.delta_t * acc


class OracleDynamics:
    """Transition/reward computation on a fixed network description."""

    def __init__(self, spec: NetworkSpec):
        self.spec = spec
        self.adm: AdmittanceMatrix = build_admittance(spec)
        order = spec.device_order()
        self._bus_of = np.array([d.bus for d in order])
        self._pos = {d.id: k for k, d in enumerate(order)}
        self._slack_pos = self._pos[spec.slack_generator.id]
        self._gen_pos = [self._pos[g.id] for g in spec.nonslack_generators]
        self._load_pos = [self._pos[ld.id] for ld in spec.loads]
        self._des_pos = self._pos[spec.des.id]

    # -- initial states ----------------------------------------------------

    def reset(self, mode: str = "fixed-start", seed=None) -> GridState:
        rng = np.random.default_rng(seed)
        if mode == "fixed-start":
            aux = 0
            soc = self.spec.des.soc_min
        elif mode == "uniform-random":
            soc = float(rng.uniform(self.spec.des.soc_min, self.spec.des.soc_max))
            aux = int(rng.integers(0, 96))
        else:
            raise ValueError(f"unknown reset mode {mode!r}")
        return self._profile_consistent_state(aux, soc)

    def _profile_consistent_state(self, aux: int, soc: float) -> GridState:
        spec = self.spec
        p_load = spec.profiles.load_at(aux)
        q_load = load_q_from_p(p_load, spec)
        p_max = spec.profiles.gen_p_max_at(aux)
        p_dev = np.zeros(spec.n_devices)
        q_dev = np.zeros(spec.n_devices)
        p_dev[self._gen_pos] = p_max
        p_dev[self._load_pos] = p_load
        q_dev[self._load_pos] = q_load
        flow = solve_for_spec(spec, self.adm, self._injections(p_dev, q_dev))
        if isinstance(flow, NoSolution):
            raise RuntimeError(f"profile-consistent state at aux={aux} is unsolvable: {flow.reason}")
        p_s, q_s = slack_power(self.adm, flow, base_mva=spec.base_mva,
                               q_sign=1.0 if spec.literal_q_sign else -1.0)
        p_dev[self._slack_pos] = p_s
        q_dev[self._slack_pos] = q_s
        return GridState(p_dev=p_dev, q_dev=q_dev, soc=soc,
                         p_max_gen=p_max.copy(), aux=aux)

    def _injections(self, p_dev, q_dev) -> BusInjections:
        n = self.spec.n_buses
        p_bus = np.zeros(n)
        q_bus = np.zeros(n)
        np.add.at(p_bus, self._bus_of - 1, p_dev)
        np.add.at(q_bus, self._bus_of - 1, q_dev)
        # slack power is recovered from the solution, not specified
        return BusInjections(p_mw=p_bus[1:], q_mvar=q_bus[1:])

    # -- transition ---------------------------------------------------------

    def step(self, state: GridState, action: Action) -> StepResult:
        global STEP_COUNTER
        STEP_COUNTER += 1
        spec = self.spec
        for arr in (action.a_p_gen, action.a_q_gen, (action.a_p_des, action.a_q_des)):
            if not np.all(np.isfinite(arr)):
                raise ValueError("action must be finite")

        next_aux = advance_aux(state.aux)
        p_load = spec.profiles.load_at(next_aux)
        q_load = load_q_from_p(p_load, spec)
        p_max_next = spec.profiles.gen_p_max_at(next_aux)

        p_dev = np.zeros(spec.n_devices)
        q_dev = np.zeros(spec.n_devices)
        p_dev[self._load_pos] = p_load
        q_dev[self._load_pos] = q_load

        # generator setpoints land on the feasible set at the realized P_max
        for k, g in enumerate(spec.nonslack_generators):
            poly = build_generator_polytope(g, p_max_next[k])
            cert = project_exact((action.a_p_gen[k], action.a_q_gen[k]), poly, compiled=False)
            p_dev[self._gen_pos[k]] = cert.x_star[0]
            q_dev[self._gen_pos[k]] = cert.x_star[1]

        poly = build_des_polytope(spec.des, state.soc, spec.delta_t)
        cert = project_exact((action.a_p_des, action.a_q_des), poly, compiled=False)
        p_des, q_des = cert.x_star
        p_dev[self._des_pos] = p_des
        q_dev[self._des_pos] = q_des
        soc_next = soc_update(state.soc, p_des, spec.des.eta, spec.delta_t,
                              spec.des.soc_min, spec.des.soc_max)

        flow = solve_for_spec(spec, self.adm, self._injections(p_dev, q_dev))
        clip_lo, clip_hi = spec.reward_clip
        if isinstance(flow, NoSolution):
            return StepResult(
                next_state=state.copy(), reward=clip_lo, done=True,
                info={"no_solution": flow.reason,
                      "energy_loss_parts": (np.nan, np.nan, np.nan),
                      "penalty": np.nan, "raw_reward": -np.inf})

        p_s, q_s = slack_power(self.adm, flow, base_mva=spec.base_mva,
                               q_sign=1.0 if spec.literal_q_sign else -1.0)
        p_dev[self._slack_pos] = p_s
        q_dev[self._slack_pos] = q_s

        flows = branch_flows(spec, flow)
        dt = spec.delta_t
        de1 = dt * float(np.sum(p_dev))
        de2 = -dt * p_des
        de3 = dt * float(np.sum(p_max_next - p_dev[self._gen_pos]))
        phi = penalty(spec, flow, flows)
        raw = -(de1 + de2 + de3 + spec.lambda_penalty * phi)
        reward = float(min(max(raw, clip_lo), clip_hi))

        next_state = GridState(p_dev=p_dev, q_dev=q_dev, soc=soc_next,
                               p_max_gen=p_max_next.copy(), aux=next_aux)
        return StepResult(next_state=next_state, reward=reward, done=False,
                          info={"energy_loss_parts": (de1, de2, de3),
                                "penalty": phi, "raw_reward": raw,
                                "voltages": flow, "branch_mva": flows})


class OracleEnv:
    """Stateful reset/step wrapper over OracleDynamics.

    reset(seed) -> state vector; step(action vector) ->
    (state vector, reward, done, truncated, info).  Episodes truncate (not
    terminate) at the horizon.
    """

    def __init__(self, spec: NetworkSpec, horizon=None, reset_mode: str = "uniform-random"):
        self.dynamics = OracleDynamics(spec)
        self.spec = spec
        self.horizon = int(horizon if horizon is not None else spec.horizon)
        self.reset_mode = reset_mode
        self.state: GridState | None = None
        self._t = 0

    def reset(self, seed=None) -> np.ndarray:
        self.state = self.dynamics.reset(self.reset_mode, seed)
        self._t = 0
        return encode_state(self.state)

    def step(self, action_vec):
        if self.state is None:
            raise RuntimeError("reset() must be called before step()")
        action = decode_action(np.asarray(action_vec, float), self.spec)
        res = self.dynamics.step(self.state, action)
        self.state = res.next_state
        self._t += 1
        truncated = (not res.done) and self._t >= self.horizon
        return encode_state(res.next_state), res.reward, res.done, truncated, res.info


def write_trajectory_csv(path, spec: NetworkSpec, rows):
    """Dump (t, state, action, reward, done) records as comma-separated text."""
    from .grid_model import action_column_names, state_column_names

    header = (["t"] + state_column_names(spec) + action_column_names(spec)
              + ["reward", "done"])
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for (t, state_vec, action_vec, reward, done) in rows:
            cells = ([str(int(t))] + [repr(float(v)) for v in state_vec]
                     + [repr(float(v)) for v in action_vec]
                     + [repr(float(reward)), str(int(done))])
            fh.write(",".join(cells) + "\n")
