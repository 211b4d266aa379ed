"""AC power-flow solve on the grid: bus admittance assembly, Newton-Raphson
on the non-slack voltage magnitudes/angles, slack-power recovery and branch
apparent-power flows.

Bus 1 is the slack bus, fixed at 1 p.u. / 0 rad.  All solver math is in
per-unit on the spec's MVA base; module boundaries use MW/MVAr.

Reactive balance uses the standard sign, Q_i = sum V_i V_k (G sin - B cos).
The printed source form with "+B cos" is available through
NetworkSpec.literal_q_sign (or the q_sign argument) for comparison.

The Newton core is written as explicit per-bus loops; `compiled=True` runs
the numba-jitted flavor of the same loops (bit-identical results).  The
oracle environment pins the interpreted reference flavor: its per-transition
cost stands in for the expensive simulator the surrogate replaces.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ._backend import maybe_njit
from .grid_model import NetworkSpec

MAX_ITER = 50
TOL = 1e-10
DIVERGE_MISMATCH = 1e6
COND_LIMIT = 1e12

_STATUS_OK = 0
_STATUS_NO_CONVERGENCE = 1
_STATUS_DIVERGED = 2
_STATUS_SINGULAR = 3
_STATUS_LEFT_REGION = 4

_STATUS_REASONS = {
    _STATUS_NO_CONVERGENCE: f"no convergence in {MAX_ITER} iterations",
    _STATUS_DIVERGED: "mismatch diverged",
    _STATUS_SINGULAR: "singular or ill-conditioned Jacobian",
    _STATUS_LEFT_REGION: "voltage magnitude left the physical region",
}


@dataclass(frozen=True)
class AdmittanceMatrix:
    g: np.ndarray  # (n, n) real part
    b: np.ndarray  # (n, n) imaginary part

    @property
    def n_buses(self) -> int:
        return self.g.shape[0]


@dataclass
class BusInjections:
    """Active/reactive injections for buses 2..n, in MW / MVAr."""

    p_mw: np.ndarray
    q_mvar: np.ndarray


@dataclass(frozen=True)
class VoltageSolution:
    v_mag: np.ndarray  # (n,) p.u., v_mag[0] == 1 (slack)
    v_ang: np.ndarray  # (n,) rad, v_ang[0] == 0

    @property
    def complex_v(self) -> np.ndarray:
        return self.v_mag * np.exp(1j * self.v_ang)


@dataclass(frozen=True)
class NoSolution:
    """Power balance has no solution: computational grid collapse."""

    reason: str


def admittance_from_branches(n_buses: int, branches) -> AdmittanceMatrix:
    """Assemble the bus admittance matrix from the 2x2 branch model.

    Per branch i->j: Y_ii += (y + y_sh)/|t|^2, Y_jj += (y + y_sh),
    Y_ij -= y/|t*|^2, Y_ji -= y/|t|^2 (the from side carries the tap).
    """
    Y = np.zeros((n_buses, n_buses), complex)
    for br in branches:
        i, j = br.from_bus - 1, br.to_bus - 1
        y, ysh, t = br.y_series, br.y_shunt, br.tap
        Y[i, i] += (y + ysh) / abs(t) ** 2
        Y[j, j] += y + ysh
        Y[i, j] -= y / abs(t.conjugate()) ** 2
        Y[j, i] -= y / abs(t) ** 2
    return AdmittanceMatrix(g=Y.real.copy(), b=Y.imag.copy())


def build_admittance(spec: NetworkSpec) -> AdmittanceMatrix:
    return admittance_from_branches(spec.n_buses, spec.branches)


def _nr_core_impl(g, b, p_spec, q_spec, q_sign, tol, max_iter):
    """Newton-Raphson loop on (theta, |V|) of buses 2..n; flat start.

    Returns (v_mag, v_ang, status).  Textbook per-bus formulation: mismatch
    and Jacobian entries are accumulated bus by bus.
    """
    n = g.shape[0]
    m = n - 1
    v = np.ones(n)
    th = np.zeros(n)
    mism = np.empty(2 * m)
    jac = np.empty((2 * m, 2 * m))

    for _ in range(max_iter):
        # balance mismatches at non-slack buses
        err = 0.0
        for i in range(1, n):
            p_i = 0.0
            q_i = 0.0
            for k in range(n):
                c = math.cos(th[i] - th[k])
                s = math.sin(th[i] - th[k])
                p_i += v[i] * v[k] * (g[i, k] * c + b[i, k] * s)
                q_i += v[i] * v[k] * (g[i, k] * s + q_sign * b[i, k] * c)
            mism[i - 1] = p_i - p_spec[i - 1]
            mism[m + i - 1] = q_i - q_spec[i - 1]
            err = max(err, abs(mism[i - 1]), abs(mism[m + i - 1]))
        if err <= tol:
            return v, th, _STATUS_OK
        if not math.isfinite(err) or err > DIVERGE_MISMATCH:
            return v, th, _STATUS_DIVERGED

        # analytic Jacobian, rows [dP; dQ], columns [dtheta; dV]
        for i in range(1, n):
            dp_dthi = 0.0
            dq_dthi = 0.0
            dp_dvi = 2.0 * v[i] * g[i, i]
            dq_dvi = 2.0 * v[i] * q_sign * b[i, i]
            for k in range(n):
                if k == i:
                    continue
                c = math.cos(th[i] - th[k])
                s = math.sin(th[i] - th[k])
                dp_dthi += v[i] * v[k] * (-g[i, k] * s + b[i, k] * c)
                dq_dthi += v[i] * v[k] * (g[i, k] * c - q_sign * b[i, k] * s)
                dp_dvi += v[k] * (g[i, k] * c + b[i, k] * s)
                dq_dvi += v[k] * (g[i, k] * s + q_sign * b[i, k] * c)
                if k >= 1:
                    jac[i - 1, k - 1] = v[i] * v[k] * (g[i, k] * s - b[i, k] * c)
                    jac[m + i - 1, k - 1] = v[i] * v[k] * (-g[i, k] * c + q_sign * b[i, k] * s)
                    jac[i - 1, m + k - 1] = v[i] * (g[i, k] * c + b[i, k] * s)
                    jac[m + i - 1, m + k - 1] = v[i] * (g[i, k] * s + q_sign * b[i, k] * c)
            jac[i - 1, i - 1] = dp_dthi
            jac[m + i - 1, i - 1] = dq_dthi
            jac[i - 1, m + i - 1] = dp_dvi
            jac[m + i - 1, m + i - 1] = dq_dvi

        # near-singularity guard via the 1-norm condition estimate
        jinv = np.linalg.inv(jac)
        norm_j = 0.0
        norm_ji = 0.0
        for col in range(2 * m):
            s1 = 0.0
            s2 = 0.0
            for row in range(2 * m):
                s1 += abs(jac[row, col])
                s2 += abs(jinv[row, col])
            norm_j = max(norm_j, s1)
            norm_ji = max(norm_ji, s2)
        if not math.isfinite(norm_ji) or norm_j * norm_ji > COND_LIMIT:
            return v, th, _STATUS_SINGULAR

        dx = jinv @ mism
        for i in range(1, n):
            th[i] -= dx[i - 1]
            v[i] -= dx[m + i - 1]
            if not (v[i] > 0.0 and math.isfinite(v[i])):
                return v, th, _STATUS_LEFT_REGION
    return v, th, _STATUS_NO_CONVERGENCE


_nr_core_jit = maybe_njit(cache=True)(_nr_core_impl)


def solve_power_flow(adm: AdmittanceMatrix, inj: BusInjections, *,
                     base_mva: float = 100.0, q_sign: float = -1.0,
                     max_iter: int = MAX_ITER, tol: float = TOL,
                     compiled: bool = True):
    """Newton-Raphson solve for the non-slack bus voltages.

    Returns a VoltageSolution whose balance residuals are below `tol`, or a
    NoSolution when the iteration diverges, fails to converge within
    `max_iter`, or meets a near-singular Jacobian (1-norm condition estimate
    above 1e12).
    """
    n = adm.n_buses
    p_spec = np.asarray(inj.p_mw, float) / base_mva
    q_spec = np.asarray(inj.q_mvar, float) / base_mva
    if p_spec.shape != (n - 1,) or q_spec.shape != (n - 1,):
        raise ValueError(f"injections must cover buses 2..{n}")
    if not (np.all(np.isfinite(p_spec)) and np.all(np.isfinite(q_spec))):
        raise ValueError("injections must be finite")

    core = _nr_core_jit if compiled else _nr_core_impl
    try:
        v, th, status = core(adm.g, adm.b, p_spec, q_spec, q_sign, tol, max_iter)
    except np.linalg.LinAlgError:
        return NoSolution("singular Jacobian")
    if status != _STATUS_OK:
        return NoSolution(_STATUS_REASONS[status])
    return VoltageSolution(v_mag=v, v_ang=th)


def solve_for_spec(spec: NetworkSpec, adm: AdmittanceMatrix, inj: BusInjections, *,
                   compiled: bool = False):
    return solve_power_flow(adm, inj, base_mva=spec.base_mva,
                            q_sign=1.0 if spec.literal_q_sign else -1.0,
                            compiled=compiled)


def balance_powers(adm: AdmittanceMatrix, v_mag, v_ang, q_sign: float = -1.0):
    """Calculated bus powers (p.u.) under the module's balance equations."""
    th = v_ang[:, None] - v_ang[None, :]
    ct, st = np.cos(th), np.sin(th)
    vv = v_mag[:, None] * v_mag[None, :]
    p = np.sum(vv * (adm.g * ct + adm.b * st), axis=1)
    q = np.sum(vv * (adm.g * st + q_sign * adm.b * ct), axis=1)
    return p, q


def residuals(adm: AdmittanceMatrix, inj: BusInjections, v: VoltageSolution, *,
              base_mva: float = 100.0, q_sign: float = -1.0):
    """Balance-equation residuals (p.u.) at buses 2..n for a solution."""
    p, q = balance_powers(adm, v.v_mag, v.v_ang, q_sign)
    return (p[1:] - np.asarray(inj.p_mw, float) / base_mva,
            q[1:] - np.asarray(inj.q_mvar, float) / base_mva)


def slack_power(adm: AdmittanceMatrix, v: VoltageSolution, *,
                base_mva: float = 100.0, q_sign: float = -1.0):
    """Slack generator active/reactive power (MW, MVAr) from the i=1 balance sums."""
    p, q = balance_powers(adm, v.v_mag, v.v_ang, q_sign)
    return p[0] * base_mva, q[0] * base_mva


def branch_flows(spec: NetworkSpec, v: VoltageSolution):
    """Apparent-power magnitudes (|S_ij|, |S_ji|) per branch, in MVA."""
    vc = v.complex_v
    out = np.empty((len(spec.branches), 2))
    for k, br in enumerate(spec.branches):
        i, j = br.from_bus - 1, br.to_bus - 1
        y, ysh, t = br.y_series, br.y_shunt, br.tap
        i_ij = ((y + ysh) / abs(t) ** 2) * vc[i] - (y / abs(t.conjugate()) ** 2) * vc[j]
        i_ji = -(y / abs(t) ** 2) * vc[i] + (y + ysh) * vc[j]
        out[k, 0] = abs(vc[i] * i_ij.conjugate()) * spec.base_mva
        out[k, 1] = abs(vc[j] * i_ji.conjugate()) * spec.base_mva
    return out
