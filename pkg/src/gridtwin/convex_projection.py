"""Exact Euclidean projection of 2-D setpoints onto linear-inequality
polytopes {x : Gx - h <= 0}, the polytope builders for generators and the
battery, and the KKT residual functions shared by the tests and the
physics-loss training.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._backend import maybe_njit
from .grid_model import DesSpec, GeneratorSpec

FEAS_TOL = 1e-9


class InfeasiblePolytopeError(ValueError):
    """The constraint set {x : Gx <= h} is empty."""


@dataclass(frozen=True)
class Polytope:
    g_matrix: np.ndarray  # (m, 2)
    h_vector: np.ndarray  # (m,)

    @property
    def n_constraints(self) -> int:
        return self.g_matrix.shape[0]

    def contains(self, x, tol: float = FEAS_TOL) -> bool:
        return bool(np.all(self.g_matrix @ np.asarray(x, float) - self.h_vector <= tol))


@dataclass(frozen=True)
class KktCertificate:
    x_star: np.ndarray     # (2,)
    lambda_star: np.ndarray  # (m,)


def build_generator_polytope(g: GeneratorSpec, p_max_t: float) -> Polytope:
    """Feasible (P, Q) set of a non-slack generator at the current P_max.

    Rows, in order: -P <= -p_min, P <= p_max_static, P <= p_max_t,
    -Q <= -q_min, Q <= q_max, Q - tau1*P <= rho1, -Q + tau2*P <= -rho2.
    """
    if not g.p_min <= p_max_t <= g.p_max:
        raise ValueError(
            f"p_max_t={p_max_t} outside generator {g.id} static bounds [{g.p_min}, {g.p_max}]")
    G = np.array([
        [-1.0, 0.0],
        [1.0, 0.0],
        [1.0, 0.0],
        [0.0, -1.0],
        [0.0, 1.0],
        [-g.tau1, 1.0],
        [g.tau2, -1.0],
    ])
    h = np.array([-g.p_min, g.p_max, p_max_t, -g.q_min, g.q_max, g.rho1, -g.rho2])
    return Polytope(G, h)


def build_des_polytope(d: DesSpec, soc: float, delta_t: float) -> Polytope:
    """Feasible (P, Q) set of the battery given its current state of charge.

    Rows: P/Q box (4), the four tau/rho capability rows, then the SoC-coupled
    charge row P >= (SoC - soc_max)/(eta*dt) and discharge row
    P <= eta*(SoC - soc_min)/dt, rewritten as Gx <= h.
    """
    if not d.soc_min <= soc <= d.soc_max:
        raise ValueError(f"soc={soc} outside [{d.soc_min}, {d.soc_max}]")
    G = np.array([
        [-1.0, 0.0],
        [1.0, 0.0],
        [0.0, -1.0],
        [0.0, 1.0],
        [-d.tau1, 1.0],
        [d.tau2, -1.0],
        [-d.tau3, 1.0],
        [d.tau4, -1.0],
        [-1.0, 0.0],
        [1.0, 0.0],
    ])
    h = np.array([
        -d.p_min, d.p_max, -d.q_min, d.q_max,
        d.rho1, -d.rho2, d.rho3, -d.rho4,
        -(soc - d.soc_max) / (d.eta * delta_t),
        d.eta * (soc - d.soc_min) / delta_t,
    ])
    return Polytope(G, h)


def _project_core_impl(G, h, ax, ay):
    """Enumerate active sets of size <= 2; return (px, py, lam, found).

    Candidates are scanned in a canonical order (interior, single rows,
    index-ordered pairs) and the first strictly better distance wins, so ties
    resolve to the lowest-index, smallest active set.
    """
    m = G.shape[0]
    tol = 1e-9
    best = 1e300
    bx = 0.0
    by = 0.0
    lam = np.zeros(m)
    best_i = -1
    best_j = -1
    best_li = 0.0
    best_lj = 0.0
    found = False

    # interior candidate: x = a
    ok = True
    for r in range(m):
        if G[r, 0] * ax + G[r, 1] * ay - h[r] > tol:
            ok = False
            break
    if ok:
        return ax, ay, lam, True

    # single active constraint: orthogonal projection onto G_i x = h_i
    for i in range(m):
        gx = G[i, 0]
        gy = G[i, 1]
        nrm2 = gx * gx + gy * gy
        if nrm2 < 1e-300:
            continue
        viol = gx * ax + gy * ay - h[i]
        if viol <= 0.0:
            continue  # constraint not binding for a; candidate equals a, already tried
        t = viol / nrm2
        px = ax - t * gx
        py = ay - t * gy
        ok = True
        for r in range(m):
            if G[r, 0] * px + G[r, 1] * py - h[r] > tol:
                ok = False
                break
        if not ok:
            continue
        d2 = (px - ax) ** 2 + (py - ay) ** 2
        if d2 < best - 1e-15:
            best = d2
            bx, by = px, py
            best_i, best_j = i, -1
            best_li = 2.0 * t
            found = True

    # vertex candidates: pairs of active constraints
    for i in range(m):
        for j in range(i + 1, m):
            det = G[i, 0] * G[j, 1] - G[i, 1] * G[j, 0]
            if abs(det) < 1e-12:
                continue
            px = (h[i] * G[j, 1] - h[j] * G[i, 1]) / det
            py = (G[i, 0] * h[j] - G[j, 0] * h[i]) / det
            ok = True
            for r in range(m):
                if G[r, 0] * px + G[r, 1] * py - h[r] > tol:
                    ok = False
                    break
            if not ok:
                continue
            d2 = (px - ax) ** 2 + (py - ay) ** 2
            if d2 < best - 1e-15:
                # duals from stationarity 2(x - a) + li*Gi + lj*Gj = 0
                rx = -2.0 * (px - ax)
                ry = -2.0 * (py - ay)
                li = (rx * G[j, 1] - ry * G[j, 0]) / det
                lj = (G[i, 0] * ry - G[i, 1] * rx) / det
                best = d2
                bx, by = px, py
                best_i, best_j = i, j
                best_li, best_lj = li, lj
                found = True

    if found:
        if best_i >= 0:
            lam[best_i] = best_li
        if best_j >= 0:
            lam[best_j] = best_lj
    return bx, by, lam, found


# compiled flavor follows the backend flag; the interpreted flavor stays
# available so the oracle environment can pin the reference path (its per-step
# cost is part of what the inference benchmark measures).  Both flavors run
# the same statements in the same order and agree bit-for-bit.
_project_core = maybe_njit(cache=True)(_project_core_impl)


def project_exact(a, poly: Polytope, *, compiled: bool = True) -> KktCertificate:
    """Closest point of the polytope to `a`, with its KKT multipliers."""
    a = np.asarray(a, float)
    core = _project_core if compiled else _project_core_impl
    px, py, lam, found = core(poly.g_matrix, poly.h_vector, a[0], a[1])
    if not found:
        raise InfeasiblePolytopeError("no feasible point found; polytope is empty")
    if np.any(lam < -1e-9):
        # degenerate vertex (>2 binding rows): another pair supporting the same
        # point carries nonnegative duals; rescan for it
        lam = _dual_feasible_multipliers(a, poly, np.array([px, py]), lam)
    # clip ulp-level negative duals from the 2x2 solves
    lam = np.where((lam < 0.0) & (lam > -1e-9), 0.0, lam)
    return KktCertificate(x_star=np.array([px, py]), lambda_star=lam)


def _dual_feasible_multipliers(a, poly, x, lam_fallback):
    G, h = poly.g_matrix, poly.h_vector
    binding = np.flatnonzero(np.abs(G @ x - h) <= 1e-8)
    rhs = -2.0 * (x - a)
    for ii in range(len(binding)):
        for jj in range(ii + 1, len(binding)):
            i, j = binding[ii], binding[jj]
            A = np.column_stack([G[i], G[j]])
            det = A[0, 0] * A[1, 1] - A[0, 1] * A[1, 0]
            if abs(det) < 1e-12:
                continue
            li, lj = np.linalg.solve(A, rhs)
            if li >= -1e-9 and lj >= -1e-9:
                lam = np.zeros(len(h))
                lam[i], lam[j] = li, lj
                return lam
    for i in binding:
        nrm2 = G[i] @ G[i]
        if nrm2 < 1e-300:
            continue
        t = (G[i] @ rhs) / nrm2
        if t >= -1e-9 and np.allclose(t * G[i], rhs, atol=1e-8):
            lam = np.zeros(len(h))
            lam[i] = t
            return lam
    return lam_fallback


def kkt_residuals(a, poly: Polytope, x, lam):
    """Residuals of the four KKT blocks for min ||a - x||^2 s.t. Gx <= h."""
    a = np.asarray(a, float)
    x = np.asarray(x, float)
    lam = np.asarray(lam, float)
    G, h = poly.g_matrix, poly.h_vector
    slack = G @ x - h
    return {
        "stationarity": 2.0 * (x - a) + G.T @ lam,
        "primal": np.maximum(0.0, slack),
        "dual": np.maximum(0.0, -lam),
        "comp": lam * slack,
    }


def kkt_loss_terms(a_batch, G, h_batch, x_batch, lam_batch):
    """Batched KKT residual loss and its gradients w.r.t. x and lambda.

    The loss is the mean of squared residuals pooled over all four blocks
    (stationarity, clamped primal infeasibility, clamped dual negativity,
    complementarity).  Shapes: a/x (n, 2), lam (n, m), h (n, m); G is the
    shared (m, 2) constraint matrix, h varies per sample (P_max / SoC rows).

    Returns (loss_per_sample, dL/dx, dL/dlam) with loss averaged over the
    2 + 3m residual entries of each sample.
    """
    slack = x_batch @ G.T - h_batch                    # (n, m)
    r_s = 2.0 * (x_batch - a_batch) + lam_batch @ G    # (n, 2)
    r_p = np.maximum(0.0, slack)
    r_d = np.maximum(0.0, -lam_batch)
    r_c = lam_batch * slack
    m = G.shape[0]
    n_res = 2 + 3 * m
    loss = (np.sum(r_s ** 2, axis=1) + np.sum(r_p ** 2, axis=1)
            + np.sum(r_d ** 2, axis=1) + np.sum(r_c ** 2, axis=1)) / n_res
    dx = (2.0 / n_res) * (2.0 * r_s + (r_p + r_c * lam_batch) @ G)
    dlam = (2.0 / n_res) * (r_s @ G.T - r_d + r_c * slack)
    return loss, dx, dlam
