"""Timing benchmarks: oracle vs surrogate single transitions (warm, same
machine, monotonic clock around the step call only) and the numpy-vs-numba
kernel comparison behind `gridtwin bench --kernels`.
"""

from __future__ import annotations

import time

import numpy as np

from ._backend import NUMBA_ENABLED
from .grid_model import NetworkSpec
from .oracle_env import OracleEnv
from .pinn_surrogate import SurrogateBundle, SurrogateEnv


def _median_step_time(env, actions, n):
    samples = np.empty(n)
    env.reset(seed=0)
    k = 0
    i = 0
    while k < n:
        a = actions[i % len(actions)]
        i += 1
        t0 = time.perf_counter()
        _, _, done, truncated, _ = env.step(a)
        samples[k] = time.perf_counter() - t0
        k += 1
        if done or truncated:
            env.reset(seed=i)
    return float(np.median(samples)), samples


def bench_inference(spec: NetworkSpec, bundle: SurrogateBundle, n: int = 1000,
                    seed: int = 0) -> dict:
    """Median per-transition wall time of the oracle and the surrogate."""
    rng = np.random.default_rng(seed)
    low, high = spec.action_bounds()
    actions = [rng.uniform(low, high) for _ in range(256)]

    oracle = OracleEnv(spec, horizon=10 ** 9, reset_mode="uniform-random")
    surrogate = SurrogateEnv(bundle, horizon=10 ** 9, reset_mode="uniform-random")
    # warm both paths (JIT compilation, caches)
    for env in (oracle, surrogate):
        env.reset(seed=seed)
        for a in actions[:20]:
            env.step(a)

    oracle_median, _ = _median_step_time(oracle, actions, n)
    surrogate_median, _ = _median_step_time(surrogate, actions, n)
    return {
        "n_transitions": float(n),
        "oracle_median_s": oracle_median,
        "surrogate_median_s": surrogate_median,
        "speedup": oracle_median / surrogate_median,
        "backend_numba": float(NUMBA_ENABLED),
    }


def _time_fn(fn, reps):
    best = np.inf
    for _ in range(reps):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def bench_kernels(spec: NetworkSpec, bundle: SurrogateBundle, seed: int = 0):
    """(kernel, numpy_ms, numba_ms, speedup) rows for the twin implementations."""
    from . import kernels
    from .convex_projection import _project_core, _project_core_impl, build_des_polytope
    from .powerflow import BusInjections, _nr_core_impl, _nr_core_jit, build_admittance

    rows = []
    rng = np.random.default_rng(seed)

    # fused MLP inference, single row and batch 100
    packed = bundle.packed("gen")
    x1 = rng.random((1, bundle.gen_net.n_in)).astype(np.float32)
    x100 = rng.random((100, bundle.gen_net.n_in)).astype(np.float32)
    for label, x in (("mlp_infer_f32[batch=1]", x1), ("mlp_infer_f32[batch=100]", x100)):
        out = np.empty((x.shape[0], packed[-1].shape[0]), np.float32)
        t_np = _time_fn(lambda: kernels._mlp_rows_numpy(x, *packed, out), 5)
        if NUMBA_ENABLED:
            kernels._mlp_rows_numba(x, *packed, out)
            t_nb = _time_fn(lambda: kernels._mlp_rows_numba(x, *packed, out), 5)
        else:
            t_nb = np.nan
        rows.append((label, t_np * 1e3, t_nb * 1e3, t_np / t_nb if t_nb else np.nan))

    # exact projection onto the battery polytope
    poly = build_des_polytope(spec.des, 0.5 * (spec.des.soc_min + spec.des.soc_max),
                              spec.delta_t)
    pts = rng.uniform(-40, 40, size=(200, 2))

    def proj(core):
        for p in pts:
            core(poly.g_matrix, poly.h_vector, p[0], p[1])

    t_np = _time_fn(lambda: proj(_project_core_impl), 3) / len(pts)
    if NUMBA_ENABLED:
        _project_core(poly.g_matrix, poly.h_vector, 0.0, 0.0)
        t_nb = _time_fn(lambda: proj(_project_core), 3) / len(pts)
    else:
        t_nb = np.nan
    rows.append(("project_exact", t_np * 1e3, t_nb * 1e3, t_np / t_nb if t_nb else np.nan))

    # Newton-Raphson power flow
    adm = build_admittance(spec)
    inj = BusInjections(p_mw=np.array([-5.0, 10.0, -8.0, -12.0, 4.0]),
                        q_mvar=np.array([-2.0, 3.0, -4.0, -5.0, 1.0]))
    p = inj.p_mw / spec.base_mva
    q = inj.q_mvar / spec.base_mva
    t_np = _time_fn(lambda: _nr_core_impl(adm.g, adm.b, p, q, -1.0, 1e-10, 50), 5)
    if NUMBA_ENABLED:
        _nr_core_jit(adm.g, adm.b, p, q, -1.0, 1e-10, 50)
        t_nb = _time_fn(lambda: _nr_core_jit(adm.g, adm.b, p, q, -1.0, 1e-10, 50), 5)
    else:
        t_nb = np.nan
    rows.append(("newton_raphson", t_np * 1e3, t_nb * 1e3, t_np / t_nb if t_nb else np.nan))
    return rows
