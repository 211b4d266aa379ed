"""The three physics-trained networks (generator projection, battery
projection, power-balance solve), their sample-free training loops, and the
assembled surrogate transition function.

Training consumes only Sobol draws and analytic residual losses; no oracle
environment transitions are used anywhere in this module.  Inputs are scaled
to [0, 1] over the device/bus operating ranges, which is also the Sobol cube,
so physics-loss sampling composes directly.  The projection networks predict
the scaled correction added to the scaled setpoint (zero correction means the
setpoint is feasible as-is), and the power-balance network predicts voltage
offsets from the flat profile; dual multipliers are emitted through a fixed
per-network scale and participate only in the loss, never in the transition.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .convex_projection import (build_des_polytope, build_generator_polytope,
                                kkt_loss_terms, project_exact)
from .grid_model import (Action, GridState, NetworkSpec, advance_aux, decode_action,
                         encode_state, load_q_from_p)
from .nn_core import AdamWState, MlpModel, Scaler, adamw_step, sobol_sample
from .oracle_env import StepResult, soc_update
from .powerflow import VoltageSolution, branch_flows, build_admittance, slack_power

SOBOL_DIM = 21          # shared stream; dims 0-5 generators, 6-8 battery,
GEN_DIMS = slice(0, 6)  # 9-18 bus powers, 19-20 spare
DES_DIMS = slice(6, 9)
PB_DIMS = slice(9, 19)
HELD_OUT_OFFSET = 1_000_000


@dataclass
class TrainConfig:
    batch: int = 64
    lr: float = 1e-5
    window: int = 5000       # early stop: no new best loss within this many steps
    max_steps: int = 60000
    seed: int = 0
    log_every: int = 200


def gen_input_scaler(spec: NetworkSpec) -> Scaler:
    """[a_P per generator, a_Q per generator, P_max per generator]."""
    gens = spec.nonslack_generators
    mins = [g.p_min for g in gens] + [g.q_min for g in gens] + [g.p_min for g in gens]
    maxs = [g.p_max for g in gens] + [g.q_max for g in gens] + [g.p_max for g in gens]
    return Scaler(mins, maxs)


def des_input_scaler(spec: NetworkSpec) -> Scaler:
    d = spec.des
    return Scaler([d.p_min, d.q_min, d.soc_min], [d.p_max, d.q_max, d.soc_max])


def bus_power_ranges(spec: NetworkSpec):
    """Interval sums of attached-device P and Q ranges for buses 2..n."""
    n = spec.n_buses
    p_lo = np.zeros(n)
    p_hi = np.zeros(n)
    q_lo = np.zeros(n)
    q_hi = np.zeros(n)
    for g in spec.nonslack_generators:
        p_lo[g.bus - 1] += g.p_min
        p_hi[g.bus - 1] += g.p_max
        q_lo[g.bus - 1] += g.q_min
        q_hi[g.bus - 1] += g.q_max
    for k, ld in enumerate(spec.loads):
        row = spec.profiles.load_p[k]
        tan_phi = np.tan(np.arccos(ld.pf))
        p_lo[ld.bus - 1] += row.min()
        p_hi[ld.bus - 1] += row.max()
        q_lo[ld.bus - 1] += row.min() * tan_phi
        q_hi[ld.bus - 1] += row.max() * tan_phi
    d = spec.des
    p_lo[d.bus - 1] += d.p_min
    p_hi[d.bus - 1] += d.p_max
    q_lo[d.bus - 1] += d.q_min
    q_hi[d.bus - 1] += d.q_max
    return (p_lo[1:], p_hi[1:]), (q_lo[1:], q_hi[1:])


def pb_input_scaler(spec: NetworkSpec) -> Scaler:
    (p_lo, p_hi), (q_lo, q_hi) = bus_power_ranges(spec)
    return Scaler(np.concatenate([p_lo, q_lo]), np.concatenate([p_hi, q_hi]))


def _dual_scale(scaler: Scaler) -> float:
    return 2.0 * float(scaler.width.max())


@dataclass
class SurrogateBundle:
    spec: NetworkSpec
    gen_net: MlpModel
    des_net: MlpModel
    pb_net: MlpModel
    gen_scaler: Scaler
    des_scaler: Scaler
    pb_scaler: Scaler
    classifier: object = None  # terminal classifier with predict(features)
    trained: dict = field(default_factory=dict)
    _packed: dict = field(default_factory=dict, repr=False)

    def packed(self, name: str):
        if name not in self._packed:
            net = {"gen": self.gen_net, "des": self.des_net, "pb": self.pb_net}[name]
            self._packed[name] = kernels.pack_f32(net)
        return self._packed[name]

    def invalidate_packed(self):
        self._packed.clear()

    def all_trained(self) -> bool:
        return all(self.trained.get(k) for k in ("gen", "des", "pb"))


def _head_zeroed(net: MlpModel) -> MlpModel:
    # zero output head: corrections, duals and voltage offsets all start at 0,
    # i.e. the identity projection / flat voltage profile, which is exact on
    # the feasible interior and cuts the unlearning phase entirely
    net.params["w_out"][:] = 0.0
    return net


def new_bundle(spec: NetworkSpec, seed: int = 0) -> SurrogateBundle:
    k = len(spec.nonslack_generators)
    return SurrogateBundle(
        spec=spec,
        gen_net=_head_zeroed(MlpModel.init(3 * k, 2 * k + 7 * k, seed=seed)),
        des_net=_head_zeroed(MlpModel.init(3, 2 + 10, seed=seed + 1)),
        pb_net=_head_zeroed(
            MlpModel.init(2 * (spec.n_buses - 1), 2 * (spec.n_buses - 1), seed=seed + 2)),
        gen_scaler=gen_input_scaler(spec),
        des_scaler=des_input_scaler(spec),
        pb_scaler=pb_input_scaler(spec),
    )


class _SobolStream:
    """Sequential batches from the shared 21-dim stream (zero point skipped)."""

    def __init__(self, offset: int = 0):
        from scipy.stats import qmc
        self._sampler = qmc.Sobol(d=SOBOL_DIM, scramble=False)
        self._sampler.fast_forward(1 + offset)

    def take(self, n: int) -> np.ndarray:
        import warnings
        with warnings.catch_warnings():
            warnings.filterwarnings("ignore", message=".*balance properties.*")
            return self._sampler.random(n)


def _train_loop(step_fn, cfg: TrainConfig, label: str):
    """Shared descent driver: batch steps, best tracking, early stopping."""
    history = []
    best = np.inf
    best_step = 0
    t0 = time.perf_counter()
    for step in range(cfg.max_steps):
        loss = step_fn(step)
        if not np.isfinite(loss):
            raise FloatingPointError(
                f"{label}: loss diverged at step {step} (loss={loss}); "
                "inspect the learning rate and input ranges")
        history.append(loss)
        if loss < best:
            best = loss
            best_step = step
        if step - best_step >= cfg.window:
            break
    elapsed = time.perf_counter() - t0
    return history, {"best_loss": best, "best_step": best_step,
                     "steps": len(history), "seconds": elapsed}


# ---------------------------------------------------------------------------
# generator network

def _gen_geometry(spec: NetworkSpec):
    """Constraint matrices and the P_max-dependent rows for each generator."""
    mats = []
    for g in spec.nonslack_generators:
        poly = build_generator_polytope(g, g.p_max)
        mats.append((poly.g_matrix, poly.h_vector.copy()))
    return mats


def _gen_batch_loss(bundle: SurrogateBundle, geo, u: np.ndarray, y: np.ndarray):
    """KKT residual loss over both generators; returns (loss, dL/dy)."""
    spec = bundle.spec
    gens = spec.nonslack_generators
    k = len(gens)
    sc = bundle.gen_scaler
    dual_scale = _dual_scale(sc)
    phys = sc.unscale(u)                      # [aP..., aQ..., pmax...]
    n = u.shape[0]
    d_y = np.zeros_like(y)
    total = 0.0
    for gi, g in enumerate(gens):
        G, h0 = geo[gi]
        a_phys = np.column_stack([phys[:, gi], phys[:, k + gi]])
        pmax = phys[:, 2 * k + gi]
        h = np.broadcast_to(h0, (n, 7)).copy()
        h[:, 2] = pmax
        w = np.array([sc.width[gi], sc.width[k + gi]])
        delta = y[:, 2 * gi:2 * gi + 2]
        x_scaled = np.column_stack([u[:, gi], u[:, k + gi]]) + delta
        x_phys = x_scaled * w + np.array([sc.mins[gi], sc.mins[k + gi]])
        lam = dual_scale * y[:, 2 * k + 7 * gi:2 * k + 7 * gi + 7]
        loss, dx, dlam = kkt_loss_terms(a_phys, G, h, x_phys, lam)
        total += loss.mean() / k
        d_y[:, 2 * gi:2 * gi + 2] += dx * w / (n * k)
        d_y[:, 2 * k + 7 * gi:2 * k + 7 * gi + 7] += dlam * dual_scale / (n * k)
    return total, d_y


def train_generator_net(bundle: SurrogateBundle, cfg: TrainConfig):
    stream = _SobolStream()
    net = bundle.gen_net
    geo = _gen_geometry(bundle.spec)
    opt = AdamWState.for_params(net.params, lr=cfg.lr)

    def step_fn(step):
        u = stream.take(cfg.batch)[:, GEN_DIMS]
        y, cache = net.forward_train(u)
        loss, d_y = _gen_batch_loss(bundle, geo, u, y)
        grads = net.backward(cache, d_y)
        adamw_step(opt, net.params, grads)
        return float(loss)

    history, stats = _train_loop(step_fn, cfg, "generator net")
    bundle.trained["gen"] = True
    bundle.invalidate_packed()
    return history, stats


def gen_net_predict_scaled(bundle: SurrogateBundle, u: np.ndarray) -> np.ndarray:
    """Scaled primal predictions [(P, Q) per generator] for scaled inputs."""
    k = len(bundle.spec.nonslack_generators)
    y = bundle.gen_net.forward(u)
    y = np.atleast_2d(y)
    u = np.atleast_2d(u)
    out = np.empty((u.shape[0], 2 * k))
    for gi in range(k):
        out[:, 2 * gi] = u[:, gi] + y[:, 2 * gi]
        out[:, 2 * gi + 1] = u[:, k + gi] + y[:, 2 * gi + 1]
    return out


def gen_exact_scaled(bundle: SurrogateBundle, u: np.ndarray) -> np.ndarray:
    """Exact-projection reference in the same scaled layout."""
    spec = bundle.spec
    gens = spec.nonslack_generators
    k = len(gens)
    sc = bundle.gen_scaler
    phys = sc.unscale(np.atleast_2d(u))
    out = np.empty((phys.shape[0], 2 * k))
    for r in range(phys.shape[0]):
        for gi, g in enumerate(gens):
            poly = build_generator_polytope(g, phys[r, 2 * k + gi])
            cert = project_exact((phys[r, gi], phys[r, k + gi]), poly)
            out[r, 2 * gi] = (cert.x_star[0] - sc.mins[gi]) / sc.width[gi]
            out[r, 2 * gi + 1] = (cert.x_star[1] - sc.mins[k + gi]) / sc.width[k + gi]
    return out


# ---------------------------------------------------------------------------
# battery network

def _des_batch_loss(bundle: SurrogateBundle, u: np.ndarray, y: np.ndarray):
    spec = bundle.spec
    d = spec.des
    sc = bundle.des_scaler
    dual_scale = _dual_scale(sc)
    phys = sc.unscale(u)                      # [aP, aQ, soc]
    n = u.shape[0]
    poly0 = build_des_polytope(d, d.soc_min, spec.delta_t)
    G = poly0.g_matrix
    h = np.broadcast_to(poly0.h_vector, (n, 10)).copy()
    soc = phys[:, 2]
    h[:, 8] = -(soc - d.soc_max) / (d.eta * spec.delta_t)
    h[:, 9] = d.eta * (soc - d.soc_min) / spec.delta_t
    a_phys = phys[:, :2]
    w = sc.width[:2]
    x_phys = (u[:, :2] + y[:, :2]) * w + sc.mins[:2]
    lam = dual_scale * y[:, 2:]
    loss, dx, dlam = kkt_loss_terms(a_phys, G, h, x_phys, lam)
    d_y = np.empty_like(y)
    d_y[:, :2] = dx * w / n
    d_y[:, 2:] = dlam * dual_scale / n
    return loss.mean(), d_y


def train_des_net(bundle: SurrogateBundle, cfg: TrainConfig):
    stream = _SobolStream()
    net = bundle.des_net
    opt = AdamWState.for_params(net.params, lr=cfg.lr)

    def step_fn(step):
        u = stream.take(cfg.batch)[:, DES_DIMS]
        y, cache = net.forward_train(u)
        loss, d_y = _des_batch_loss(bundle, u, y)
        grads = net.backward(cache, d_y)
        adamw_step(opt, net.params, grads)
        return float(loss)

    history, stats = _train_loop(step_fn, cfg, "battery net")
    bundle.trained["des"] = True
    bundle.invalidate_packed()
    return history, stats


def des_net_predict_scaled(bundle: SurrogateBundle, u: np.ndarray) -> np.ndarray:
    y = np.atleast_2d(bundle.des_net.forward(u))
    return np.atleast_2d(u)[:, :2] + y[:, :2]


def des_exact_scaled(bundle: SurrogateBundle, u: np.ndarray) -> np.ndarray:
    spec = bundle.spec
    sc = bundle.des_scaler
    phys = sc.unscale(np.atleast_2d(u))
    out = np.empty((phys.shape[0], 2))
    for r in range(phys.shape[0]):
        poly = build_des_polytope(spec.des, phys[r, 2], spec.delta_t)
        cert = project_exact(phys[r, :2], poly)
        out[r] = (cert.x_star - sc.mins[:2]) / sc.width[:2]
    return out


# ---------------------------------------------------------------------------
# power-balance network

def _batched_balance(g, b, v, ang, q_sign):
    th = ang[:, :, None] - ang[:, None, :]
    ct, st = np.cos(th), np.sin(th)
    vv = v[:, :, None] * v[:, None, :]
    p = np.sum(vv * (g * ct + b * st), axis=2)
    q = np.sum(vv * (g * st + q_sign * b * ct), axis=2)
    return p, q, ct, st, vv


def _pb_loss_and_grad(bundle, adm, u, y, q_sign):
    """Power-balance residual loss (per Eqs. of the balance mismatch) and its
    gradient w.r.t. the network outputs [dV 2..n, theta 2..n]."""
    spec = bundle.spec
    n_bus = spec.n_buses
    m = n_bus - 1
    phys = bundle.pb_scaler.unscale(u) / spec.base_mva   # p.u. injections
    p_spec, q_spec = phys[:, :m], phys[:, m:]
    nb = u.shape[0]
    v = np.ones((nb, n_bus))
    ang = np.zeros((nb, n_bus))
    v[:, 1:] = 1.0 + y[:, :m]
    ang[:, 1:] = y[:, m:]
    g, b = adm.g, adm.b
    p_calc, q_calc, ct, st, vv = _batched_balance(g, b, v, ang, q_sign)
    f_p = p_spec - p_calc[:, 1:]
    f_q = q_spec - q_calc[:, 1:]
    loss_per_sample = (np.sum(f_p ** 2, axis=1) + np.sum(f_q ** 2, axis=1)) / m

    # jacobian blocks of calc powers w.r.t. (theta, V), batched
    dp_dth = vv * (g * st - b * ct)
    dq_dth = vv * (-g * ct + q_sign * b * st)
    for d_ in (dp_dth, dq_dth):
        idx = np.arange(n_bus)
        d_[:, idx, idx] = 0.0
        d_[:, idx, idx] = -d_.sum(axis=2)
    m1 = g * ct + b * st
    m2 = g * st + q_sign * b * ct
    dp_dv = v[:, :, None] * m1
    dq_dv = v[:, :, None] * m2
    idx = np.arange(n_bus)
    dp_dv[:, idx, idx] = v * np.diag(g) + np.einsum("nik,nk->ni", m1, v)
    dq_dv[:, idx, idx] = q_sign * v * np.diag(b) + np.einsum("nik,nk->ni", m2, v)

    # dL/du = -(2/m) * J^T f restricted to non-slack rows/cols
    coeff = 2.0 / m
    d_th = -coeff * (np.einsum("ni,nij->nj", f_p, dp_dth[:, 1:, 1:])
                     + np.einsum("ni,nij->nj", f_q, dq_dth[:, 1:, 1:]))
    d_v = -coeff * (np.einsum("ni,nij->nj", f_p, dp_dv[:, 1:, 1:])
                    + np.einsum("ni,nij->nj", f_q, dq_dv[:, 1:, 1:]))
    d_y = np.concatenate([d_v, d_th], axis=1) / nb
    return loss_per_sample.mean(), d_y


def train_power_balance_net(bundle: SurrogateBundle, cfg: TrainConfig):
    spec = bundle.spec
    adm = build_admittance(spec)
    q_sign = 1.0 if spec.literal_q_sign else -1.0
    stream = _SobolStream()
    net = bundle.pb_net
    opt = AdamWState.for_params(net.params, lr=cfg.lr)

    def step_fn(step):
        u = stream.take(cfg.batch)[:, PB_DIMS]
        y, cache = net.forward_train(u)
        loss, d_y = _pb_loss_and_grad(bundle, adm, u, y, q_sign)
        grads = net.backward(cache, d_y)
        adamw_step(opt, net.params, grads)
        return float(loss)

    history, stats = _train_loop(step_fn, cfg, "power-balance net")
    bundle.trained["pb"] = True
    bundle.invalidate_packed()
    return history, stats


def pb_net_predict(bundle: SurrogateBundle, u: np.ndarray):
    """(v_mag, v_ang) arrays over all buses for scaled bus-power inputs."""
    spec = bundle.spec
    m = spec.n_buses - 1
    y = np.atleast_2d(bundle.pb_net.forward(u))
    v = np.ones((y.shape[0], spec.n_buses))
    ang = np.zeros_like(v)
    v[:, 1:] = 1.0 + y[:, :m]
    ang[:, 1:] = y[:, m:]
    return v, ang


def train_all(bundle: SurrogateBundle, cfg: TrainConfig):
    """Train the three networks sequentially; returns per-net histories/stats."""
    out = {}
    out["gen"] = train_generator_net(bundle, cfg)
    out["des"] = train_des_net(bundle, cfg)
    out["pb"] = train_power_balance_net(bundle, cfg)
    return out


def write_loss_history(path, history):
    with open(path, "w") as fh:
        fh.write("step,loss\n")
        for i, v in enumerate(history):
            fh.write(f"{i},{v!r}\n")


# ---------------------------------------------------------------------------
# assembled surrogate transition

class SurrogateDynamics:
    """Vectorized surrogate mirror of OracleDynamics.step."""

    def __init__(self, bundle: SurrogateBundle):
        if not bundle.all_trained():
            raise RuntimeError("surrogate bundle has untrained networks: "
                               f"{sorted(k for k in ('gen', 'des', 'pb') if not bundle.trained.get(k))}")
        self.bundle = bundle
        self.spec = bundle.spec
        self.adm = build_admittance(self.spec)
        spec = self.spec
        order = spec.device_order()
        self._bus_of = np.array([d.bus for d in order])
        pos = {d.id: k for k, d in enumerate(order)}
        self._slack_pos = pos[spec.slack_generator.id]
        self._gen_pos = np.array([pos[g.id] for g in spec.nonslack_generators])
        self._load_pos = np.array([pos[ld.id] for ld in spec.loads])
        self._des_pos = pos[spec.des.id]
        self._q_sign = 1.0 if spec.literal_q_sign else -1.0
        # per-branch constants for vectorized flow magnitudes
        self._br_from = np.array([br.from_bus - 1 for br in spec.branches])
        self._br_to = np.array([br.to_bus - 1 for br in spec.branches])
        self._br_yii = np.array([(br.y_series + br.y_shunt) / abs(br.tap) ** 2
                                 for br in spec.branches])
        self._br_yij = np.array([br.y_series / abs(br.tap.conjugate()) ** 2
                                 for br in spec.branches])
        self._br_yji = np.array([br.y_series / abs(br.tap) ** 2 for br in spec.branches])
        self._br_yjj = np.array([br.y_series + br.y_shunt for br in spec.branches])
        self._v_min = np.array([b.v_min for b in spec.buses])
        self._v_max = np.array([b.v_max for b in spec.buses])
        self._s_rating = np.array([br.s_rating for br in spec.branches])
        self._s_min = np.array([br.s_min for br in spec.branches])

    def step_batch(self, states: np.ndarray, actions: np.ndarray):
        """Batched transition on encoded state/action rows.

        Returns (next_states, rewards, dones, info) with each row identical,
        bit for bit, to a single-row call: every stage is row-independent.
        """
        spec = self.spec
        states = np.atleast_2d(np.asarray(states, float))
        actions = np.atleast_2d(np.asarray(actions, float))
        n = states.shape[0]
        if actions.shape != (n, spec.action_dim):
            raise ValueError(f"actions must have shape ({n}, {spec.action_dim})")
        k = len(spec.nonslack_generators)
        n_dev = spec.n_devices

        soc = states[:, 2 * n_dev]
        aux = states[:, -1].astype(np.int64)
        next_aux = (aux + 1) % 96
        p_load = spec.profiles.load_p[:, next_aux].T       # (n, n_loads)
        q_load = p_load * np.tan(np.arccos(np.array([ld.pf for ld in spec.loads])))
        p_max_next = spec.profiles.gen_p_max[:, next_aux].T  # (n, k)

        # generator nets: scaled [aP..., aQ..., pmax...] -> scaled corrections
        gsc = self.bundle.gen_scaler
        gen_u = (np.concatenate([actions[:, :2 * k], p_max_next], axis=1) - gsc.mins) / gsc.width
        gen_y = kernels.mlp_infer_f32(self.bundle.packed("gen"), gen_u.astype(np.float32))
        p_gen = np.empty((n, k))
        q_gen = np.empty((n, k))
        for gi in range(k):
            p_gen[:, gi] = (gen_u[:, gi] + gen_y[:, 2 * gi]) * gsc.width[gi] + gsc.mins[gi]
            q_gen[:, gi] = ((gen_u[:, k + gi] + gen_y[:, 2 * gi + 1]) * gsc.width[k + gi]
                            + gsc.mins[k + gi])

        dsc = self.bundle.des_scaler
        des_u = (np.column_stack([actions[:, 2 * k], actions[:, 2 * k + 1], soc])
                 - dsc.mins) / dsc.width
        des_y = kernels.mlp_infer_f32(self.bundle.packed("des"), des_u.astype(np.float32))
        p_des = (des_u[:, 0] + des_y[:, 0]) * dsc.width[0] + dsc.mins[0]
        q_des = (des_u[:, 1] + des_y[:, 1]) * dsc.width[1] + dsc.mins[1]

        d = spec.des
        dt = spec.delta_t
        soc_next = np.where(p_des <= 0.0, soc - d.eta * dt * p_des, soc - (dt / d.eta) * p_des)
        soc_next = np.minimum(np.maximum(soc_next, d.soc_min), d.soc_max)

        # aggregate bus injections (slack recovered later, not included)
        p_dev = np.zeros((n, n_dev))
        q_dev = np.zeros((n, n_dev))
        p_dev[:, self._gen_pos] = p_gen
        q_dev[:, self._gen_pos] = q_gen
        p_dev[:, self._load_pos] = p_load
        q_dev[:, self._load_pos] = q_load
        p_dev[:, self._des_pos] = p_des
        q_dev[:, self._des_pos] = q_des
        n_bus = spec.n_buses
        p_bus = np.zeros((n, n_bus))
        q_bus = np.zeros((n, n_bus))
        for pos in range(n_dev):
            if pos == self._slack_pos:
                continue
            p_bus[:, self._bus_of[pos] - 1] += p_dev[:, pos]
            q_bus[:, self._bus_of[pos] - 1] += q_dev[:, pos]

        psc = self.bundle.pb_scaler
        pb_u = (np.concatenate([p_bus[:, 1:], q_bus[:, 1:]], axis=1) - psc.mins) / psc.width
        pb_y = kernels.mlp_infer_f32(self.bundle.packed("pb"), pb_u.astype(np.float32))
        v = np.ones((n, n_bus))
        ang = np.zeros((n, n_bus))
        v[:, 1:] = 1.0 + pb_y[:, :n_bus - 1].astype(float)
        ang[:, 1:] = pb_y[:, n_bus - 1:].astype(float)

        # slack power from the i=1 balance sums on predicted voltages
        th1 = ang[:, 0:1] - ang
        g1, b1 = self.adm.g[0], self.adm.b[0]
        ct, st = np.cos(th1), np.sin(th1)
        base = spec.base_mva
        p_slack = np.sum(v[:, 0:1] * v * (g1 * ct + b1 * st), axis=1) * base
        q_slack = np.sum(v[:, 0:1] * v * (g1 * st + self._q_sign * b1 * ct), axis=1) * base
        p_dev[:, self._slack_pos] = p_slack
        q_dev[:, self._slack_pos] = q_slack

        # branch apparent powers from predicted voltages
        vc = v * np.exp(1j * ang)
        vf = vc[:, self._br_from]
        vt = vc[:, self._br_to]
        i_ij = self._br_yii * vf - self._br_yij * vt
        i_ji = -self._br_yji * vf + self._br_yjj * vt
        s_ij = np.abs(vf * np.conj(i_ij)) * base
        s_ji = np.abs(vt * np.conj(i_ji)) * base

        de1 = dt * np.sum(p_dev, axis=1)
        de2 = -dt * p_des
        de3 = dt * np.sum(p_max_next - p_gen, axis=1)
        over_v = np.maximum(0.0, v - self._v_max) + np.maximum(0.0, self._v_min - v)
        over_s = (np.maximum(0.0, s_ij - self._s_rating) + np.maximum(0.0, self._s_min - s_ij)
                  + np.maximum(0.0, s_ji - self._s_rating) + np.maximum(0.0, self._s_min - s_ji))
        phi = dt * (np.sum(over_v, axis=1) + np.sum(over_s, axis=1))
        raw = -(de1 + de2 + de3 + spec.lambda_penalty * phi)
        clip_lo, clip_hi = spec.reward_clip
        reward = np.minimum(np.maximum(raw, clip_lo), clip_hi)

        next_states = np.concatenate([
            p_dev, q_dev, soc_next[:, None], p_max_next, next_aux[:, None].astype(float),
        ], axis=1)

        if self.bundle.classifier is not None:
            feats = np.concatenate([states, actions], axis=1)
            dones = self.bundle.classifier.predict(feats)[1].astype(bool)
            reward = np.where(dones, clip_lo, reward)
        else:
            dones = np.zeros(n, bool)

        info = {"energy_loss_parts": np.column_stack([de1, de2, de3]),
                "penalty": phi, "raw_reward": raw, "v_mag": v, "v_ang": ang}
        return next_states, reward, dones, info


def _get_dynamics(bundle: SurrogateBundle) -> SurrogateDynamics:
    if "dyn" not in bundle._packed:
        bundle._packed["dyn"] = SurrogateDynamics(bundle)
    return bundle._packed["dyn"]


def surrogate_step(bundle: SurrogateBundle, state: GridState, action: Action) -> StepResult:
    """Single surrogate transition; identical to a batch of one."""
    return _result_from_batch(_get_dynamics(bundle), state, action)


def surrogate_step_batch(bundle: SurrogateBundle, states: np.ndarray, actions: np.ndarray):
    """Batched transitions on encoded rows; elementwise identical to single calls."""
    return _get_dynamics(bundle).step_batch(states, actions)


def _result_from_batch(dyn: SurrogateDynamics, state: GridState, action: Action) -> StepResult:
    from .grid_model import decode_state, encode_action

    sv = encode_state(state)[None, :]
    av = encode_action(action)[None, :]
    next_states, rewards, dones, info = dyn.step_batch(sv, av)
    next_state = decode_state(next_states[0], dyn.spec)
    parts = info["energy_loss_parts"][0]
    return StepResult(next_state=next_state, reward=float(rewards[0]), done=bool(dones[0]),
                      info={"energy_loss_parts": tuple(parts), "penalty": float(info["penalty"][0]),
                            "raw_reward": float(info["raw_reward"][0])})


class SurrogateEnv:
    """Stateful reset/step wrapper with the oracle env's interface."""

    def __init__(self, bundle: SurrogateBundle, horizon=None, reset_mode="uniform-random"):
        self.dynamics = SurrogateDynamics(bundle)
        self.spec = bundle.spec
        self.horizon = int(horizon if horizon is not None else self.spec.horizon)
        self.reset_mode = reset_mode
        self._state_vec = None
        self._t = 0
        # reuse the oracle's reset distribution; reset is not a transition
        from .oracle_env import OracleDynamics
        self._resetter = OracleDynamics(self.spec)

    def reset(self, seed=None) -> np.ndarray:
        self._state_vec = encode_state(self._resetter.reset(self.reset_mode, seed))
        self._t = 0
        return self._state_vec.copy()

    def step(self, action_vec):
        if self._state_vec is None:
            raise RuntimeError("reset() must be called before step()")
        action_vec = np.asarray(action_vec, float)
        ns, r, done, info = self.dynamics.step_batch(self._state_vec[None], action_vec[None])
        self._state_vec = ns[0]
        self._t += 1
        truncated = (not bool(done[0])) and self._t >= self.horizon
        return ns[0].copy(), float(r[0]), bool(done[0]), truncated, \
            {k: (v[0] if hasattr(v, "__len__") else v) for k, v in info.items()}


# ---------------------------------------------------------------------------
# bundle checkpointing

def save_bundle(path, bundle: SurrogateBundle):
    import numpy as _np

    payload = {"format_version": _np.array([1])}
    for name, net in (("gen", bundle.gen_net), ("des", bundle.des_net), ("pb", bundle.pb_net)):
        payload[f"{name}_dims"] = _np.array([net.n_in, net.hidden, net.n_out])
        for k, v in net.params.items():
            payload[f"{name}_param_{k}"] = v
        payload[f"{name}_trained"] = _np.array([1 if bundle.trained.get(name) else 0])
    for name, sc in (("gen", bundle.gen_scaler), ("des", bundle.des_scaler),
                     ("pb", bundle.pb_scaler)):
        payload[f"{name}_scaler_min"] = sc.mins
        payload[f"{name}_scaler_max"] = sc.maxs
    _np.savez(path, **payload)


def load_bundle(path, spec: NetworkSpec, classifier=None) -> SurrogateBundle:
    from .nn_core import PARAM_NAMES

    with np.load(path, allow_pickle=False) as data:
        nets = {}
        trained = {}
        scalers = {}
        for name in ("gen", "des", "pb"):
            n_in, hidden, n_out = (int(v) for v in data[f"{name}_dims"])
            params = {k: data[f"{name}_param_{k}"].copy() for k in PARAM_NAMES}
            nets[name] = MlpModel(n_in=n_in, n_out=n_out, hidden=hidden, params=params)
            trained[name] = bool(data[f"{name}_trained"][0])
            scalers[name] = Scaler(data[f"{name}_scaler_min"], data[f"{name}_scaler_max"])
    return SurrogateBundle(spec=spec, gen_net=nets["gen"], des_net=nets["des"],
                           pb_net=nets["pb"], gen_scaler=scalers["gen"],
                           des_scaler=scalers["des"], pb_scaler=scalers["pb"],
                           classifier=classifier, trained=trained)
