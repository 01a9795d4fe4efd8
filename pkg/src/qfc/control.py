"""Cost functionals, super-Hamiltonians, and optimal controls.

The running cost is linear in the state and quadratic in the control,
C(u) = (1/2) g_ab u^a u^b + u^a F_a + C_0, paired against rho; an arbitrary
callback cost is supported as a fallback.  The Pontryagin super-Hamiltonian
is the Legendre-Fenchel transform

    H(t, rho, X) = sup_u { <drift(t,u,rho), lambda I - X> - C(t,u,rho) },

whose value is gauge-independent (the drift is traceless).  The Bellman
equation steps with -H, i.e. with inf_u { C + <drift, dS> }; this module
stores the sup-form value together with its maximizer.  For quadratic
control costs the maximizer is closed-form:
u^a = -g^{ab} <P, F_b + (1/i)[Q, V_b]>, clipped to the control box.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Optional

import numpy as np

from .filtering import ModelSpec, ito_drift, strat_drift
from .operators import (
    dag,
    hermitian_basis,
    is_hermitian,
    operator_from_json,
    operator_to_json,
    pairing,
    traceless,
)

__all__ = [
    "CostSpec",
    "CostateRecord",
    "running_cost",
    "k_function",
    "optimal_control_lq",
    "super_hamiltonian",
    "hamiltonian_gradients",
    "pontryagin_residual",
    "cost_to_json",
    "cost_from_json",
]


@dataclass(frozen=True)
class CostSpec:
    """Linear-quadratic cost data, with an optional general-cost callback.

    When `general_cost` is None the cost is the LQ form above; otherwise
    the callback C(t, u, rho) -> float is used and the LQ fields are
    ignored by `running_cost`.
    """

    metric: np.ndarray                       # g, (m, m) symmetric positive definite
    linear_ops: tuple[np.ndarray, ...]       # F_a, one Hermitian operator per control
    constant_op: np.ndarray                  # C_0, Hermitian
    terminal_op: np.ndarray                  # S, Hermitian
    general_cost: Optional[Callable[[float, np.ndarray, np.ndarray], float]] = None

    def __post_init__(self):
        g = np.asarray(self.metric, dtype=float)
        m = g.shape[0] if g.ndim == 2 else 0
        if g.shape != (m, m):
            raise ValueError("metric g must be square")
        if m and np.max(np.abs(g - g.T)) > 1e-12:
            raise ValueError("metric g must be symmetric")
        if m and np.linalg.eigvalsh(g)[0] <= 0:
            raise ValueError("metric g must be positive definite")
        Fs = tuple(np.asarray(F, dtype=complex) for F in self.linear_ops)
        if len(Fs) != m:
            raise ValueError("need one linear cost operator per control")
        for F in Fs:
            if not is_hermitian(F):
                raise ValueError("linear cost operators F_a must be Hermitian")
        C0 = np.asarray(self.constant_op, dtype=complex)
        if not is_hermitian(C0):
            raise ValueError("constant cost operator C_0 must be Hermitian")
        S = np.asarray(self.terminal_op, dtype=complex)
        if not is_hermitian(S):
            raise ValueError("terminal cost operator S must be Hermitian")
        object.__setattr__(self, "metric", g)
        object.__setattr__(self, "linear_ops", Fs)
        object.__setattr__(self, "constant_op", C0)
        object.__setattr__(self, "terminal_op", S)

    @property
    def n_controls(self) -> int:
        return self.metric.shape[0]

    @property
    def is_linear_quadratic(self) -> bool:
        return self.general_cost is None

    @cached_property
    def metric_inv(self) -> np.ndarray:
        m = self.n_controls
        if m == 0:
            return np.zeros((0, 0))
        ginv = np.linalg.inv(self.metric)
        if np.max(np.abs(self.metric @ ginv - np.eye(m))) > 1e-12:
            raise ValueError("metric inversion failed the g g^-1 = I check")
        return ginv

    @classmethod
    def lq(cls, metric, linear_ops, constant_op, terminal_op) -> "CostSpec":
        return cls(metric=metric, linear_ops=tuple(linear_ops),
                   constant_op=constant_op, terminal_op=terminal_op)


@dataclass
class CostateRecord:
    """State/costate pair along a candidate optimal trajectory."""

    times: np.ndarray     # (K+1,)
    states: np.ndarray    # (K+1, n, n) density matrices P_k
    costates: np.ndarray  # (K+1, n, n) Hermitian Q_k, traceless gauge


def _pair_real(A: np.ndarray, B: np.ndarray) -> float:
    return np.trace(A @ B).real


def running_cost(cost: CostSpec, t: float, u, rho: np.ndarray) -> float:
    """C(t, u, rho); LQ mode gives <rho, (1/2) u.g.u + u.F + C_0>."""
    u = np.atleast_1d(np.asarray(u, dtype=float))
    if not np.all(np.isfinite(u)):
        raise ValueError("control must be finite")
    if not cost.is_linear_quadratic:
        return float(cost.general_cost(t, u, rho))
    val = 0.5 * float(u @ cost.metric @ u)  # <rho, c I> = c for unit trace
    for ua, F in zip(u, cost.linear_ops):
        val += ua * _pair_real(rho, F)
    val += _pair_real(rho, cost.constant_op)
    return val


def _drift(model: ModelSpec, t: float, u, rho: np.ndarray, drift_kind: str):
    if drift_kind == "ito":
        return ito_drift(model, t, u, rho)
    if drift_kind == "strat":
        return strat_drift(model, t, u, rho)
    raise ValueError("drift_kind must be 'ito' or 'strat'")


def k_function(model: ModelSpec, cost: CostSpec, t: float, u,
               rho: np.ndarray, X: np.ndarray, drift_kind: str = "ito",
               lambda_gauge: float = 0.0) -> float:
    """K(t,u,rho,X) = <drift, lambda I - X> - C(t,u,rho).

    Independent of lambda_gauge because the drift is traceless.
    """
    d = _drift(model, t, u, rho, drift_kind)
    gauge = lambda_gauge * np.eye(model.dim) - X
    return _pair_real(d, gauge) - running_cost(cost, t, u, rho)


def optimal_control_lq(model: ModelSpec, cost: CostSpec, rho: np.ndarray,
                       X: np.ndarray) -> np.ndarray:
    """Closed-form maximizer u^a = -g^{ab} <P, F_b + (1/i)[Q, V_b]>, clipped.

    Before clipping this is the stationary point of
    <P, C(u)> + <w(t,u,P), Q>; the sigma(rho) noise offset and the choice
    of Ito vs Stratonovich drift do not move it (their u-dependence is nil).
    """
    if not cost.is_linear_quadratic:
        raise ValueError("closed-form control requires a linear-quadratic cost")
    m = model.n_controls
    if cost.n_controls != m:
        raise ValueError("cost and model disagree on the number of controls")
    if m == 0:
        return np.zeros(0)
    lin = np.empty(m)
    for b, V in enumerate(model.controls):
        comm = -1.0j * (X @ V - V @ X)  # (1/i)[Q, V_b], Hermitian
        lin[b] = _pair_real(rho, cost.linear_ops[b] + comm)
    u = -cost.metric_inv @ lin
    return model.clip_control(u)


def _grid_search_argmax(model: ModelSpec, cost: CostSpec, t: float,
                        rho: np.ndarray, X: np.ndarray, drift_kind: str,
                        coarse: int = 21, refine_iters: int = 20) -> np.ndarray:
    """Deterministic box grid search plus coordinate-descent refinement.

    The drift pairing is affine in u (exactly), so only the cost callback
    is re-evaluated per lattice point.
    """
    m = model.n_controls
    if m == 0:
        return np.zeros(0)
    base = _pair_real(_drift(model, t, np.zeros(m), rho, drift_kind), -X)
    slopes = np.array([
        _pair_real(1.0j * (rho @ V - V @ rho), -X) for V in model.controls
    ])

    def objective(u):
        return base + slopes @ u - running_cost(cost, t, u, rho)

    axes = [np.linspace(-hw, hw, coarse) for hw in model.u_max]
    grids = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([g.ravel() for g in grids], axis=1)
    vals = np.array([objective(p) for p in pts])
    best = pts[int(np.argmax(vals))].copy()
    span = np.array([hw * 2.0 / (coarse - 1) for hw in model.u_max])
    for _ in range(refine_iters):
        for a in range(m):
            lo = max(best[a] - span[a], -model.u_max[a])
            hi = min(best[a] + span[a], model.u_max[a])
            cands = np.linspace(lo, hi, coarse)
            trial = np.repeat(best[None, :], coarse, axis=0)
            trial[:, a] = cands
            tvals = np.array([objective(p) for p in trial])
            best[a] = cands[int(np.argmax(tvals))]
        span *= 0.5
    return best


def super_hamiltonian(model: ModelSpec, cost: CostSpec, t: float,
                      rho: np.ndarray, X: np.ndarray,
                      drift_kind: str = "ito",
                      lambda_gauge: float = 0.0):
    """Legendre-Fenchel transform sup_u K; returns (value, argmax_u).

    LQ costs use the closed-form maximizer; general costs fall back to a
    deterministic grid search with coordinate refinement.
    """
    if cost.is_linear_quadratic:
        u_star = optimal_control_lq(model, cost, rho, X)
    else:
        u_star = _grid_search_argmax(model, cost, t, rho, X, drift_kind)
    value = k_function(model, cost, t, u_star, rho, X, drift_kind, lambda_gauge)
    return value, u_star


def hamiltonian_gradients(model: ModelSpec, cost: CostSpec, t: float,
                          rho: np.ndarray, X: np.ndarray,
                          drift_kind: str = "ito", h: float = 1e-4):
    """Numeric Frechet gradients (grad_P H, grad_Q H), traceless gauge.

    Central differences over the orthonormal traceless Hermitian basis;
    by the envelope theorem the maximizer may be held fixed to O(h^2), but
    the full sup is re-solved at every perturbed point for robustness.
    """
    n = model.dim
    gradP = np.zeros((n, n), dtype=complex)
    gradQ = np.zeros((n, n), dtype=complex)
    for B in hermitian_basis(n):
        vp, _ = super_hamiltonian(model, cost, t, rho + h * B, X, drift_kind)
        vm, _ = super_hamiltonian(model, cost, t, rho - h * B, X, drift_kind)
        dP = (vp - vm) / (2.0 * h)
        vp, _ = super_hamiltonian(model, cost, t, rho, X + h * B, drift_kind)
        vm, _ = super_hamiltonian(model, cost, t, rho, X - h * B, drift_kind)
        dQ = (vp - vm) / (2.0 * h)
        if not (math.isfinite(dP) and math.isfinite(dQ)):
            raise ValueError("super-Hamiltonian differentiation failed")
        gradP += dP * B
        gradQ += dQ * B
    return gradP, gradQ


def _trace_norm(A: np.ndarray) -> float:
    return float(np.sum(np.abs(np.linalg.eigvalsh(A))))


def _op_norm(A: np.ndarray) -> float:
    return float(np.max(np.abs(np.linalg.eigvalsh(A))))


def pontryagin_residual(model: ModelSpec, cost: CostSpec,
                        record: CostateRecord, drift_kind: str = "ito"):
    """Max residuals of the Hamilton-Pontryagin system along a record.

    Centered time differences of (P_k, Q_k) are compared against the
    numeric gradients of the super-Hamiltonian:
    res_P = max_k || dP/dt + grad_Q H ||_1,
    res_Q = max_k || dQ/dt - grad_P H ||_op, over interior k.
    """
    times = np.asarray(record.times, dtype=float)
    if len(times) < 3:
        raise ValueError("need at least three time points")
    steps = np.diff(times)
    dt = steps[0]
    if np.max(np.abs(steps - dt)) > 1e-9 * max(abs(dt), 1.0):
        raise ValueError("costate record must be on a uniform mesh")
    res_P = 0.0
    res_Q = 0.0
    for k in range(1, len(times) - 1):
        dPdt = (record.states[k + 1] - record.states[k - 1]) / (2.0 * dt)
        dQdt = (record.costates[k + 1] - record.costates[k - 1]) / (2.0 * dt)
        gradP, gradQ = hamiltonian_gradients(
            model, cost, times[k], record.states[k], record.costates[k],
            drift_kind)
        res_P = max(res_P, _trace_norm(dPdt + gradQ))
        res_Q = max(res_Q, _op_norm(traceless(dQdt) - gradP))
    return res_P, res_Q


# ---------------------------------------------------------------------------
# JSON interface


def cost_to_json(cost: CostSpec, u_max=None) -> dict:
    obj = {
        "g": cost.metric.tolist(),
        "F": [operator_to_json(F) for F in cost.linear_ops],
        "C0": operator_to_json(cost.constant_op),
        "S": operator_to_json(cost.terminal_op),
    }
    if u_max is not None:
        obj["u_max"] = np.asarray(u_max, dtype=float).tolist()
    return obj


def cost_from_json(obj: dict):
    """Returns (CostSpec, u_max or None); u_max is advisory box data."""
    g = np.asarray(obj["g"], dtype=float)
    Fs = tuple(operator_from_json(f) for f in obj.get("F", []))
    m = g.shape[0] if g.ndim == 2 else 0
    if not Fs and m:
        n = int(obj["S"]["dim"])
        Fs = tuple(np.zeros((n, n), dtype=complex) for _ in range(m))
    cost = CostSpec(metric=g, linear_ops=Fs,
                    constant_op=operator_from_json(obj["C0"]),
                    terminal_op=operator_from_json(obj["S"]))
    u_max = obj.get("u_max")
    return cost, (None if u_max is None else np.asarray(u_max, dtype=float))
