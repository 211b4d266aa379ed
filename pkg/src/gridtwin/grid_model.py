"""Domain types for the 6-bus grid, its devices and daily profiles, plus the
MDP state/action encoding and the network configuration loader.

Sign convention: loads are negative active-power injections, generation is
positive.  All powers in MW/MVAr, admittances in per-unit, state of charge
in MWh.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass, field, replace

import numpy as np
import yaml

STEPS_PER_DAY = 96  # 24 h at 15-minute resolution


class ConfigError(ValueError):
    """Raised when a network configuration file violates the schema."""


@dataclass(frozen=True)
class GeneratorSpec:
    id: int
    bus: int
    p_min: float
    p_max: float
    q_min: float
    q_max: float
    tau1: float = 0.0
    rho1: float = 0.0
    tau2: float = 0.0
    rho2: float = 0.0
    is_slack: bool = False


@dataclass(frozen=True)
class LoadSpec:
    id: int
    bus: int
    pf: float


@dataclass(frozen=True)
class DesSpec:
    id: int
    bus: int
    p_min: float
    p_max: float
    q_min: float
    q_max: float
    tau1: float
    rho1: float
    tau2: float
    rho2: float
    tau3: float
    rho3: float
    tau4: float
    rho4: float
    soc_min: float
    soc_max: float
    eta: float


@dataclass(frozen=True)
class BranchSpec:
    from_bus: int
    to_bus: int
    y_series: complex
    y_shunt: complex
    tap: complex
    s_rating: float
    s_min: float = 0.0


@dataclass(frozen=True)
class BusSpec:
    index: int
    v_min: float
    v_max: float


@dataclass(frozen=True)
class Profiles:
    """Fixed 24-hour series: per-load demand and per-nonslack-generator P_max."""

    load_p: np.ndarray   # (n_loads, 96), entries <= 0
    gen_p_max: np.ndarray  # (n_nonslack_gens, 96), entries >= 0

    def load_at(self, aux: int) -> np.ndarray:
        return self.load_p[:, aux % STEPS_PER_DAY]

    def gen_p_max_at(self, aux: int) -> np.ndarray:
        return self.gen_p_max[:, aux % STEPS_PER_DAY]


@dataclass(frozen=True)
class NetworkSpec:
    generators: tuple[GeneratorSpec, ...]
    loads: tuple[LoadSpec, ...]
    des: DesSpec
    branches: tuple[BranchSpec, ...]
    buses: tuple[BusSpec, ...]
    profiles: Profiles
    lambda_penalty: float = 100.0
    reward_clip: tuple[float, float] = (-100.0, 100.0)
    delta_t: float = 0.25
    base_mva: float = 100.0
    horizon: int = 3000
    literal_q_sign: bool = False  # reproduce the printed "+B cos" reactive balance

    @property
    def n_buses(self) -> int:
        return len(self.buses)

    @property
    def n_devices(self) -> int:
        return len(self.generators) + len(self.loads) + 1

    @property
    def nonslack_generators(self) -> tuple[GeneratorSpec, ...]:
        return tuple(g for g in self.generators if not g.is_slack)

    @property
    def slack_generator(self) -> GeneratorSpec:
        return next(g for g in self.generators if g.is_slack)

    def device_order(self):
        """Devices in state-vector order: generators, loads, storage."""
        return list(self.generators) + list(self.loads) + [self.des]

    @property
    def state_dim(self) -> int:
        return 2 * self.n_devices + 1 + len(self.nonslack_generators) + 1

    @property
    def action_dim(self) -> int:
        return 2 * len(self.nonslack_generators) + 2

    def action_bounds(self):
        """(low, high) arrays in action order: gen P's, gen Q's, DES P, DES Q."""
        gens = self.nonslack_generators
        low = [g.p_min for g in gens] + [g.q_min for g in gens] + [self.des.p_min, self.des.q_min]
        high = [g.p_max for g in gens] + [g.q_max for g in gens] + [self.des.p_max, self.des.q_max]
        return np.asarray(low, float), np.asarray(high, float)


@dataclass
class GridState:
    """MDP state: per-device P and Q, battery SoC, per-nonslack-gen P_max, aux."""

    p_dev: np.ndarray
    q_dev: np.ndarray
    soc: float
    p_max_gen: np.ndarray
    aux: int

    def copy(self) -> "GridState":
        return GridState(self.p_dev.copy(), self.q_dev.copy(), float(self.soc),
                         self.p_max_gen.copy(), int(self.aux))


@dataclass
class Action:
    a_p_gen: np.ndarray
    a_q_gen: np.ndarray
    a_p_des: float
    a_q_des: float


def encode_state(s: GridState) -> np.ndarray:
    """Flatten in the fixed order: all P, all Q, SoC, all P_max, aux."""
    return np.concatenate([
        s.p_dev, s.q_dev, [float(s.soc)], s.p_max_gen, [float(s.aux)],
    ])


def decode_state(vec: np.ndarray, spec: NetworkSpec) -> GridState:
    vec = np.asarray(vec, float)
    if vec.shape != (spec.state_dim,):
        raise ValueError(f"state vector must have shape ({spec.state_dim},), got {vec.shape}")
    n = spec.n_devices
    k = len(spec.nonslack_generators)
    return GridState(
        p_dev=vec[:n].copy(),
        q_dev=vec[n:2 * n].copy(),
        soc=float(vec[2 * n]),
        p_max_gen=vec[2 * n + 1:2 * n + 1 + k].copy(),
        aux=int(round(vec[2 * n + 1 + k])),
    )


def encode_action(a: Action) -> np.ndarray:
    return np.concatenate([a.a_p_gen, a.a_q_gen, [a.a_p_des, a.a_q_des]])


def decode_action(vec: np.ndarray, spec: NetworkSpec) -> Action:
    vec = np.asarray(vec, float)
    if vec.shape != (spec.action_dim,):
        raise ValueError(f"action vector must have shape ({spec.action_dim},), got {vec.shape}")
    k = len(spec.nonslack_generators)
    return Action(vec[:k].copy(), vec[k:2 * k].copy(), float(vec[2 * k]), float(vec[2 * k + 1]))


def state_column_names(spec: NetworkSpec) -> list[str]:
    names = [f"p_dev{d.id}" for d in spec.device_order()]
    names += [f"q_dev{d.id}" for d in spec.device_order()]
    names.append("soc")
    names += [f"p_max_gen{g.id}" for g in spec.nonslack_generators]
    names.append("aux")
    return names


def action_column_names(spec: NetworkSpec) -> list[str]:
    gens = spec.nonslack_generators
    return ([f"a_p_gen{g.id}" for g in gens] + [f"a_q_gen{g.id}" for g in gens]
            + ["a_p_des", "a_q_des"])


def advance_aux(aux: int) -> int:
    """Next value of the daily time index: (aux + 1) mod 96."""
    if not 0 <= aux < STEPS_PER_DAY:
        raise ValueError(f"aux must be in [0, {STEPS_PER_DAY - 1}], got {aux}")
    return (aux + 1) % STEPS_PER_DAY


def load_q_from_p(p_load: np.ndarray, spec: NetworkSpec) -> np.ndarray:
    """Reactive power of loads from their power factor: Q = P tan(arccos(pf))."""
    pf = np.array([ld.pf for ld in spec.loads])
    return p_load * np.tan(np.arccos(pf))


# ---------------------------------------------------------------------------
# configuration loading

def _complex_from(node, where: str) -> complex:
    if isinstance(node, (int, float)):
        return complex(node)
    if isinstance(node, dict) and set(node) <= {"re", "im"}:
        return complex(float(node.get("re", 0.0)), float(node.get("im", 0.0)))
    raise ConfigError(f"{where}: expected number or {{re, im}} mapping, got {node!r}")


def _require(cond: bool, msg: str):
    if not cond:
        raise ConfigError(msg)


def load_network_spec(path) -> NetworkSpec:
    """Load and validate a network configuration file (YAML)."""
    with open(path) as fh:
        try:
            raw = yaml.safe_load(fh)
        except yaml.YAMLError as exc:
            raise ConfigError(f"cannot parse {path}: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("top-level document must be a mapping")

    for section in ("generators", "loads", "des", "branches", "buses", "profiles"):
        _require(section in raw, f"missing section '{section}'")

    gens = []
    for i, g in enumerate(raw["generators"]):
        gens.append(GeneratorSpec(
            id=int(g["id"]), bus=int(g["bus"]),
            p_min=float(g["p_min"]), p_max=float(g["p_max"]),
            q_min=float(g["q_min"]), q_max=float(g["q_max"]),
            tau1=float(g.get("tau1", 0.0)), rho1=float(g.get("rho1", 0.0)),
            tau2=float(g.get("tau2", 0.0)), rho2=float(g.get("rho2", 0.0)),
            is_slack=bool(g.get("is_slack", False)),
        ))
        _require(gens[-1].p_min <= gens[-1].p_max, f"generator {gens[-1].id}: p_min > p_max")
        _require(gens[-1].q_min <= gens[-1].q_max, f"generator {gens[-1].id}: q_min > q_max")
    _require(sum(g.is_slack for g in gens) == 1,
             f"exactly one slack generator required, found {sum(g.is_slack for g in gens)}")

    loads = []
    for ld in raw["loads"]:
        loads.append(LoadSpec(id=int(ld["id"]), bus=int(ld["bus"]), pf=float(ld["pf"])))
        _require(0.0 < loads[-1].pf <= 1.0, f"load {loads[-1].id}: pf must be in (0, 1]")

    d = raw["des"]
    des = DesSpec(
        id=int(d["id"]), bus=int(d["bus"]),
        p_min=float(d["p_min"]), p_max=float(d["p_max"]),
        q_min=float(d["q_min"]), q_max=float(d["q_max"]),
        tau1=float(d["tau1"]), rho1=float(d["rho1"]),
        tau2=float(d["tau2"]), rho2=float(d["rho2"]),
        tau3=float(d["tau3"]), rho3=float(d["rho3"]),
        tau4=float(d["tau4"]), rho4=float(d["rho4"]),
        soc_min=float(d["soc_min"]), soc_max=float(d["soc_max"]), eta=float(d["eta"]),
    )
    _require(des.soc_min < des.soc_max, "des: soc_min must be < soc_max")
    _require(0.0 < des.eta <= 1.0, "des: eta must be in (0, 1]")

    buses = []
    for b in raw["buses"]:
        buses.append(BusSpec(index=int(b["index"]), v_min=float(b["v_min"]), v_max=float(b["v_max"])))
        _require(0.0 < buses[-1].v_min < buses[-1].v_max,
                 f"bus {buses[-1].index}: need 0 < v_min < v_max")
    buses.sort(key=lambda b: b.index)
    _require([b.index for b in buses] == list(range(1, len(buses) + 1)),
             "bus indices must be contiguous starting at 1")

    bus_ids = {b.index for b in buses}
    branches = []
    for br in raw["branches"]:
        if "r" in br or "x" in br:
            z = complex(float(br.get("r", 0.0)), float(br.get("x", 0.0)))
            _require(z != 0, "branch: series impedance must be nonzero")
            y_series = 1.0 / z
        else:
            y_series = _complex_from(br["y_series"], "branch y_series")
        y_shunt = (complex(0.0, float(br["b_shunt"])) if "b_shunt" in br
                   else _complex_from(br.get("y_shunt", 0.0), "branch y_shunt"))
        tap_mag = float(br.get("tap", 1.0))
        shift = math.radians(float(br.get("shift_deg", 0.0)))
        tap = cmath.rect(tap_mag, shift)
        branches.append(BranchSpec(
            from_bus=int(br["from_bus"]), to_bus=int(br["to_bus"]),
            y_series=y_series, y_shunt=y_shunt, tap=tap,
            s_rating=float(br["s_rating"]), s_min=float(br.get("s_min", 0.0)),
        ))
        _require(branches[-1].s_rating > 0, "branch: s_rating must be > 0")
        _require(abs(branches[-1].tap) > 0, "branch: tap magnitude must be > 0")
        _require(branches[-1].from_bus in bus_ids and branches[-1].to_bus in bus_ids,
                 f"branch {branches[-1].from_bus}-{branches[-1].to_bus} references unknown bus")

    for dev in gens + loads + [des]:
        _require(dev.bus in bus_ids, f"device {dev.id} references unknown bus {dev.bus}")
    ids = sorted(dev.id for dev in gens + loads + [des])
    _require(ids == list(range(len(ids))), "device ids must be contiguous starting at 0")

    # connectivity of the branch graph
    adj = {b.index: set() for b in buses}
    for br in branches:
        adj[br.from_bus].add(br.to_bus)
        adj[br.to_bus].add(br.from_bus)
    seen, stack = set(), [buses[0].index]
    while stack:
        node = stack.pop()
        if node in seen:
            continue
        seen.add(node)
        stack.extend(adj[node] - seen)
    _require(seen == bus_ids, "branch graph is not connected")

    prof = raw["profiles"]
    nonslack = [g for g in gens if not g.is_slack]
    load_rows, gen_rows = [], []
    for ld in loads:
        key = f"load_{ld.id}"
        _require(key in prof, f"profiles: missing '{key}'")
        row = np.asarray(prof[key], float)
        _require(row.shape == (STEPS_PER_DAY,),
                 f"profiles.{key}: need exactly {STEPS_PER_DAY} entries, got {row.size}")
        _require(np.all(row <= 0.0), f"profiles.{key}: load demand entries must be <= 0")
        load_rows.append(row)
    for g in nonslack:
        key = f"gen_p_max_{g.id}"
        _require(key in prof, f"profiles: missing '{key}'")
        row = np.asarray(prof[key], float)
        _require(row.shape == (STEPS_PER_DAY,),
                 f"profiles.{key}: need exactly {STEPS_PER_DAY} entries, got {row.size}")
        _require(np.all(row >= 0.0), f"profiles.{key}: generation entries must be >= 0")
        _require(np.all((g.p_min <= row) & (row <= g.p_max)),
                 f"profiles.{key}: entries must lie within the generator's [p_min, p_max]")
        gen_rows.append(row)
    profiles = Profiles(load_p=np.vstack(load_rows), gen_p_max=np.vstack(gen_rows))

    reward = raw.get("reward", {})
    lam = float(reward.get("lambda", 100.0))
    _require(lam >= 0.0, "reward.lambda must be >= 0")
    clip = reward.get("clip", [-100.0, 100.0])
    _require(len(clip) == 2 and clip[0] < clip[1], "reward.clip must be [low, high]")

    return NetworkSpec(
        generators=tuple(gens), loads=tuple(loads), des=des,
        branches=tuple(branches), buses=tuple(buses), profiles=profiles,
        lambda_penalty=lam, reward_clip=(float(clip[0]), float(clip[1])),
        delta_t=float(raw.get("delta_t", 0.25)),
        base_mva=float(raw.get("base_mva", 100.0)),
        horizon=int(raw.get("horizon", 3000)),
        literal_q_sign=bool(raw.get("literal_q_sign", False)),
    )


def default_spec_path():
    from importlib.resources import files
    return files("gridtwin") / "configs" / "anm6_default.yaml"


def load_default_spec(**overrides) -> NetworkSpec:
    spec = load_network_spec(default_spec_path())
    return replace(spec, **overrides) if overrides else spec
