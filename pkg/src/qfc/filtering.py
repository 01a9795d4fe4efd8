"""Belavkin filtering dynamics for a continuously measured quantum system.

The conditional state follows the Ito SDE

    d rho = w(t, u, rho) dt + sigma(rho) dW,

with drift w = i[rho, H(t,u)] + L'_R(rho) + L'_L(rho) and innovation gain
sigma(rho) = L rho + rho L^dag - <rho, L + L^dag> rho.  The equivalent
Stratonovich drift v = w - c(rho) drops the decoherence term L rho L^dag.
Three integrators are provided: Euler-Maruyama on the Ito form, a Heun
predictor-corrector on the Stratonovich form, and a Wong-Zakai smoothed ODE
(piecewise-linear noise, RK4).  All of them share the same normalization
policy: Hermitize, renormalize the trace, and project onto the PSD cone
only when an eigenvalue drops below -1e-8.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import NumericalError
from .operators import (
    DEFAULT_TOLS,
    Tolerances,
    as_density,
    dag,
    frechet_gradient,
    hessian_bilinear,
    is_hermitian,
    min_eigenvalue,
    pairing,
    lindblad_apply_predual,
)

__all__ = [
    "ModelSpec",
    "NoisePath",
    "Trajectory",
    "ito_drift",
    "diffusion",
    "strat_correction",
    "strat_drift",
    "master_solve",
    "em_step",
    "simulate_ito",
    "heun_step",
    "simulate_strat",
    "wong_zakai_solve",
    "generator_apply_second_order",
    "generator_apply_hormander",
    "trajectory_to_csv",
    "trajectory_from_csv",
]

CONVENTIONS = ("operator", "printed")


def _frozen_array(value):
    arr = np.asarray(value)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class ModelSpec:
    """Controlled measured-qubit (or qudit) model.

    H(t, u) = hamiltonian + sum_a u_a controls[a]; `dissipators` are the
    uncontrolled environment couplings R_a and `coupling` is the measurement
    operator L.  The admissible control set is the box
    prod_a [-u_max[a], u_max[a]].  `convention` selects how the Bloch-level
    coefficient reduction treats the measurement strength ("operator" keeps
    the exact operator formulas; "printed" rescales the measurement-induced
    drift, see qubit_coefficients).
    """

    dim: int
    hamiltonian: np.ndarray
    controls: tuple[np.ndarray, ...]
    coupling: np.ndarray
    dissipators: tuple[np.ndarray, ...] = ()
    u_max: np.ndarray = field(default=None)
    convention: str = "operator"
    tols: Tolerances = DEFAULT_TOLS

    def __post_init__(self):
        n = self.dim
        H = np.asarray(self.hamiltonian, dtype=complex)
        if H.shape != (n, n):
            raise ValueError(f"H0 must be {n}x{n}, got {H.shape}")
        if not is_hermitian(H, self.tols.herm):
            raise ValueError("drift Hamiltonian H0 must be Hermitian")
        Vs = tuple(np.asarray(V, dtype=complex) for V in self.controls)
        for V in Vs:
            if V.shape != (n, n):
                raise ValueError("control operator dimension mismatch")
            if not is_hermitian(V, self.tols.herm):
                raise ValueError("control operators V_a must be Hermitian")
        Rs = tuple(np.asarray(R, dtype=complex) for R in self.dissipators)
        for R in Rs:
            if R.shape != (n, n):
                raise ValueError("dissipation operator dimension mismatch")
        L = np.asarray(self.coupling, dtype=complex)
        if L.shape != (n, n):
            raise ValueError("measurement coupling dimension mismatch")
        if self.u_max is None:
            umax = np.full(len(Vs), 10.0)
        else:
            umax = np.asarray(self.u_max, dtype=float)
        if umax.shape != (len(Vs),):
            raise ValueError("u_max must have one entry per control operator")
        if np.any(umax <= 0):
            raise ValueError("control box half-widths must be positive")
        if self.convention not in CONVENTIONS:
            raise ValueError(f"convention must be one of {CONVENTIONS}")
        for name, val in (("hamiltonian", H), ("controls", Vs),
                          ("dissipators", Rs), ("coupling", L),
                          ("u_max", umax)):
            if isinstance(val, tuple):
                val = tuple(_frozen_array(v) for v in val)
            else:
                val = _frozen_array(val)
            object.__setattr__(self, name, val)

    @property
    def n_controls(self) -> int:
        return len(self.controls)

    @cached_property
    def _V_stack(self) -> np.ndarray:
        if not self.controls:
            return np.zeros((0, self.dim, self.dim), dtype=complex)
        return np.stack(self.controls)

    @cached_property
    def _LdL(self) -> np.ndarray:
        return dag(self.coupling) @ self.coupling

    @cached_property
    def _M(self) -> np.ndarray:
        # L + L^dag, the measured quadrature
        return self.coupling + dag(self.coupling)

    @cached_property
    def _RdR_sum(self) -> np.ndarray:
        A = np.zeros((self.dim, self.dim), dtype=complex)
        for R in self.dissipators:
            A = A + dag(R) @ R
        return A

    @cached_property
    def _L2sum(self) -> np.ndarray:
        # L^2 + 2 L^dag L + (L^dag)^2, entering the Stratonovich scalar term
        L, Ld = self.coupling, dag(self.coupling)
        return L @ L + 2.0 * (Ld @ L) + Ld @ Ld

    def clip_control(self, u) -> np.ndarray:
        u = np.atleast_1d(np.asarray(u, dtype=float))
        return np.clip(u, -self.u_max, self.u_max)

    def check_control(self, u) -> np.ndarray:
        u = np.atleast_1d(np.asarray(u, dtype=float))
        if u.shape != (self.n_controls,):
            raise ValueError(f"control must have {self.n_controls} components")
        if np.any(np.abs(u) > self.u_max + 1e-9):
            raise ValueError(f"control {u} outside the admissible box")
        return u


def _hamiltonian_at(model: ModelSpec, u: np.ndarray) -> np.ndarray:
    if not model.controls:
        return model.hamiltonian
    return model.hamiltonian + np.einsum("a,aij->ij", u, model._V_stack)


def _ito_drift_unchecked(model: ModelSpec, u, rho: np.ndarray) -> np.ndarray:
    # rho and H Hermitian, so i[rho, H] = i(A - A^dag) with A = rho H,
    # and {L^dag L, rho} = B + B^dag with B = L^dag L rho
    A = rho @ _hamiltonian_at(model, u)
    w = 1.0j * (A - A.conj().T)
    for R in model.dissipators:
        w = w + R @ rho @ dag(R)
    if model.dissipators:
        B = model._RdR_sum @ rho
        w = w - 0.5 * (B + B.conj().T)
    L = model.coupling
    Lr = L @ rho
    w = w + Lr @ L.conj().T
    B = model._LdL @ rho
    return w - 0.5 * (B + B.conj().T)


def ito_drift(model: ModelSpec, t: float, u, rho: np.ndarray) -> np.ndarray:
    """Ito drift w(t,u,rho) = i[rho, H(t,u)] + L'_R(rho) + L'_L(rho)."""
    return _ito_drift_unchecked(model, model.check_control(u), rho)


def diffusion(model: ModelSpec, rho: np.ndarray) -> np.ndarray:
    """Innovation gain sigma(rho) = L rho + rho L^dag - <rho, L+L^dag> rho."""
    Lr = model.coupling @ rho
    # <rho, L + L^dag> = 2 Re tr(L rho) for Hermitian rho
    if Lr.shape[0] == 2:
        ell = 2.0 * (Lr[0, 0].real + Lr[1, 1].real)
    else:
        ell = 2.0 * np.trace(Lr).real
    return Lr + Lr.conj().T - ell * rho


def strat_correction(model: ModelSpec, rho: np.ndarray) -> np.ndarray:
    """Ito-to-Stratonovich drift correction c(rho), so that v = w - c."""
    L, M = model.coupling, model._M
    sig = diffusion(model, rho)
    pair_sig = np.trace(sig @ M).real
    pair_rho = np.trace(rho @ M).real
    return 0.5 * (L @ sig + sig @ dag(L) - pair_sig * rho - pair_rho * sig)


def strat_drift(model: ModelSpec, t: float, u, rho: np.ndarray) -> np.ndarray:
    """Stratonovich drift v(t,u,rho) in closed form.

    Uses v = i[rho,H] + L'_R(rho) + K rho + rho K^dag + F(rho) rho with
    K(rho) = -(1/2)(L+L^dag)L + <rho,L+L^dag> L and
    F(rho) = (1/2)<rho, L^2 + 2 L^dag L + L^dag^2> - <rho,L+L^dag>^2.
    Equals ito_drift - strat_correction up to rounding (tested); the
    decoherence term L rho L^dag is absent here.
    """
    return _strat_drift_unchecked(model, model.check_control(u), rho)


def _strat_drift_unchecked(model: ModelSpec, u, rho: np.ndarray) -> np.ndarray:
    A = rho @ _hamiltonian_at(model, u)
    v = 1.0j * (A - A.conj().T)
    for R in model.dissipators:
        v = v + R @ rho @ dag(R)
    if model.dissipators:
        B = model._RdR_sum @ rho
        v = v - 0.5 * (B + B.conj().T)
    L = model.coupling
    ell = np.trace(rho @ model._M).real
    K = -0.5 * (model._M @ L) + ell * L
    Fs = 0.5 * np.trace(rho @ model._L2sum).real - ell * ell
    Kr = K @ rho
    return v + Kr + Kr.conj().T + Fs * rho


# ---------------------------------------------------------------------------
# Noise paths


@dataclass(frozen=True)
class NoisePath:
    """Reproducible Wiener increments on a uniform mesh.

    Increments are N(0, dt) draws from `seed`.  `refine()` halves the mesh
    with Brownian-bridge midpoints, so refined paths agree with the parent
    at shared grid points; `level` counts how many refinements have been
    applied (bridge draws at level r come from the substream (seed, r)).
    """

    t0: float
    T: float
    dt: float
    seed: int
    level: int = 0
    increments: np.ndarray = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.dt <= 0 or self.T <= self.t0:
            raise ValueError("need dt > 0 and T > t0")
        if self.seed < 0:
            raise ValueError("seed must be a non-negative integer")
        if self.increments is None:
            dt0 = self.dt * (2 ** self.level)
            K0 = int(round((self.T - self.t0) / dt0))
            if K0 < 1:
                raise ValueError("mesh coarser than the time interval")
            rng = np.random.default_rng(np.random.SeedSequence([self.seed, 0]))
            inc = rng.normal(0.0, math.sqrt(dt0), K0)
            for r in range(1, self.level + 1):
                rng = np.random.default_rng(np.random.SeedSequence([self.seed, r]))
                mid = rng.normal(0.0, 0.5 * math.sqrt(dt0), inc.shape[0])
                dt0 *= 0.5
                halves = np.empty(2 * inc.shape[0])
                halves[0::2] = 0.5 * inc + mid
                halves[1::2] = 0.5 * inc - mid
                inc = halves
            object.__setattr__(self, "increments", _frozen_array(inc))

    @classmethod
    def generate(cls, t0: float, T: float, dt: float, seed: int) -> "NoisePath":
        return cls(t0=t0, T=T, dt=dt, seed=seed)

    @property
    def n_steps(self) -> int:
        return self.increments.shape[0]

    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.n_steps + 1)

    def cumulative(self) -> np.ndarray:
        W = np.zeros(self.n_steps + 1)
        np.cumsum(self.increments, out=W[1:])
        return W

    def refine(self) -> "NoisePath":
        return NoisePath(t0=self.t0, T=self.T, dt=0.5 * self.dt,
                         seed=self.seed, level=self.level + 1)

    def to_json(self) -> dict:
        obj = {"t0": self.t0, "T": self.T, "dt": self.dt, "seed": int(self.seed)}
        if self.level:
            obj["level"] = int(self.level)
        return obj

    @classmethod
    def from_json(cls, obj: dict) -> "NoisePath":
        return cls(t0=float(obj["t0"]), T=float(obj["T"]), dt=float(obj["dt"]),
                   seed=int(obj["seed"]), level=int(obj.get("level", 0)))


# ---------------------------------------------------------------------------
# Trajectories


@dataclass
class Trajectory:
    """Recorded filtered path: states, controls, noise, running cost."""

    times: np.ndarray        # (K+1,)
    states: np.ndarray       # (K+1, n, n) complex
    controls: np.ndarray     # (K+1, m)
    noise: np.ndarray        # (K+1,) cumulative W
    cost_integral: np.ndarray  # (K+1,) trapezoidal running-cost partial sums

    @property
    def final_state(self) -> np.ndarray:
        return self.states[-1]

    @property
    def dim(self) -> int:
        return self.states.shape[1]


PolicyFn = Callable[[float, np.ndarray], np.ndarray]
CostFn = Optional[Callable[[float, np.ndarray, np.ndarray], float]]


def _normalize_state(rho: np.ndarray, proj_limit: float = 0.05) -> np.ndarray:
    """Hermitize, renormalize trace, and clip negative spectrum if needed."""
    rho = 0.5 * (rho + rho.conj().T)
    if rho.shape[0] == 2:
        rho = rho / (rho[0, 0].real + rho[1, 1].real)
    else:
        rho = rho / np.trace(rho).real
    lo = min_eigenvalue(rho)
    if lo < -1e-8:
        if lo < -proj_limit:
            raise NumericalError(
                f"step size too large: PSD projection would move an "
                f"eigenvalue by {-lo:.3g}")
        vals, vecs = np.linalg.eigh(rho)
        vals = np.clip(vals, 0.0, None)
        rho = (vecs * vals) @ dag(vecs)
        rho = rho / np.trace(rho).real
    return rho


def _em_core(model: ModelSpec, dt: float, u, rho: np.ndarray,
             dW: float) -> np.ndarray:
    w = _ito_drift_unchecked(model, u, rho)
    sig = diffusion(model, rho)
    return _normalize_state(rho + w * dt + sig * dW)


def em_step(model: ModelSpec, t: float, dt: float, u, rho: np.ndarray,
            dW: float) -> np.ndarray:
    """One Euler-Maruyama step of the Ito filtering equation."""
    if not math.isfinite(dW):
        raise ValueError("noise increment must be finite")
    return _em_core(model, dt, model.check_control(u), rho, dW)


def _heun_core(model: ModelSpec, dt: float, u, rho: np.ndarray,
               dW: float) -> np.ndarray:
    v1 = _strat_drift_unchecked(model, u, rho)
    s1 = diffusion(model, rho)
    pred = rho + v1 * dt + s1 * dW
    pred = 0.5 * (pred + pred.conj().T)
    v2 = _strat_drift_unchecked(model, u, pred)
    s2 = diffusion(model, pred)
    return _normalize_state(rho + 0.5 * (v1 + v2) * dt + 0.5 * (s1 + s2) * dW)


def heun_step(model: ModelSpec, t: float, dt: float, u, rho: np.ndarray,
              dW: float) -> np.ndarray:
    """One Stratonovich Heun (midpoint predictor-corrector) step."""
    if not math.isfinite(dW):
        raise ValueError("noise increment must be finite")
    return _heun_core(model, dt, model.check_control(u), rho, dW)


def _simulate(model: ModelSpec, policy: PolicyFn, rho0: np.ndarray,
              noise: NoisePath, stepper, running_cost: CostFn,
              check_every: int) -> Trajectory:
    rho = as_density(rho0, model.tols)
    K = noise.n_steps
    dt = noise.dt
    m = model.n_controls
    n = model.dim
    states = np.empty((K + 1, n, n), dtype=complex)
    controls = np.zeros((K + 1, m))
    J = np.zeros(K + 1)
    states[0] = rho
    times = noise.times()
    W = noise.cumulative()
    inc = noise.increments
    for k in range(K):
        t = times[k]
        u = model.clip_control(policy(t, rho))
        controls[k] = u
        rho = stepper(model, dt, u, rho, inc[k])
        states[k + 1] = rho
        if check_every and (k + 1) % check_every == 0:
            if abs(np.trace(rho).real - 1.0) > 1e-9:
                raise NumericalError(f"trace drift at step {k + 1}")
            if not is_hermitian(rho, 1e-12):
                raise NumericalError(f"hermiticity lost at step {k + 1}")
    controls[K] = model.clip_control(policy(times[K], rho))
    if running_cost is not None:
        c = np.array([running_cost(times[k], controls[k], states[k])
                      for k in range(K + 1)])
        J[1:] = np.cumsum(0.5 * dt * (c[:-1] + c[1:]))
    return Trajectory(times=times, states=states, controls=controls,
                      noise=W, cost_integral=J)


def simulate_ito(model: ModelSpec, policy: PolicyFn, rho0: np.ndarray,
                 noise: NoisePath, running_cost: CostFn = None,
                 check_every: int = 100) -> Trajectory:
    """Euler-Maruyama trajectory of the Ito filtering equation."""
    return _simulate(model, policy, rho0, noise, _em_core, running_cost,
                     check_every)


def simulate_strat(model: ModelSpec, policy: PolicyFn, rho0: np.ndarray,
                   noise: NoisePath, running_cost: CostFn = None,
                   check_every: int = 100) -> Trajectory:
    """Heun trajectory of the Stratonovich filtering equation."""
    return _simulate(model, policy, rho0, noise, _heun_core, running_cost,
                     check_every)


# ---------------------------------------------------------------------------
# Deterministic and smoothed-noise integrators (RK4)


def _rk4_step(f, t: float, dt: float, rho: np.ndarray) -> np.ndarray:
    k1 = f(t, rho)
    k2 = f(t + 0.5 * dt, rho + 0.5 * dt * k1)
    k3 = f(t + 0.5 * dt, rho + 0.5 * dt * k2)
    k4 = f(t + dt, rho + dt * k3)
    out = rho + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return 0.5 * (out + dag(out))


def _rk4_step_checked(f, t: float, dt: float, rho: np.ndarray,
                      psd_floor: float = -1e-6) -> np.ndarray:
    """RK4 step; on positivity violation retries once with two half steps."""
    out = _rk4_step(f, t, dt, rho)
    if min_eigenvalue(out) < psd_floor:
        mid = _rk4_step(f, t, 0.5 * dt, rho)
        out = _rk4_step(f, t + 0.5 * dt, 0.5 * dt, mid)
        if min_eigenvalue(out) < psd_floor:
            raise NumericalError(
                f"positivity violated at t={t:.6g} even after halving dt")
    return out


def master_solve(model: ModelSpec, t0: float, T: float, dt: float,
                 u_schedule: Callable[[float], np.ndarray],
                 rho0: np.ndarray) -> Trajectory:
    """Deterministic master equation d rho/dt = w(t, u(t), rho), RK4.

    `u_schedule` is a deterministic control function of time.  Trace is
    conserved by the scheme (tr w = 0); noise fields of the returned
    trajectory are zero.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    rho = as_density(rho0, model.tols)
    K = max(1, int(round((T - t0) / dt)))
    h = (T - t0) / K
    m = model.n_controls

    def f(t, r):
        return ito_drift(model, t, model.clip_control(u_schedule(t)), r)

    n = model.dim
    states = np.empty((K + 1, n, n), dtype=complex)
    controls = np.zeros((K + 1, m))
    states[0] = rho
    times = t0 + h * np.arange(K + 1)
    for k in range(K):
        controls[k] = model.clip_control(u_schedule(times[k]))
        rho = _rk4_step_checked(f, times[k], h, rho)
        states[k + 1] = rho
    controls[K] = model.clip_control(u_schedule(times[K]))
    return Trajectory(times=times, states=states, controls=controls,
                      noise=np.zeros(K + 1), cost_integral=np.zeros(K + 1))


def wong_zakai_solve(model: ModelSpec, policy: PolicyFn, rho0: np.ndarray,
                     noise: NoisePath, lambda_mesh: float) -> Trajectory:
    """Wong-Zakai smoothed trajectory.

    The Brownian path is interpolated piecewise-linearly on a mesh of width
    `lambda_mesh` (>= noise.dt); its derivative drives the random ODE
    d rho/dt = v(t,u,rho) + sigma(rho) omega(t), integrated by RK4 on the
    fine mesh.  As lambda_mesh -> 0 the trajectory converges to the
    Stratonovich solution on the same path.
    """
    if lambda_mesh < noise.dt - 1e-15:
        raise ValueError("lambda_mesh must be at least the noise mesh dt")
    rho = as_density(rho0, model.tols)
    K = noise.n_steps
    dt = noise.dt
    stride = max(1, int(round(lambda_mesh / dt)))
    W = noise.cumulative()
    times = noise.times()
    # Piecewise-constant derivative of the polygonal interpolant, per fine step.
    omega = np.empty(K)
    for j0 in range(0, K, stride):
        j1 = min(j0 + stride, K)
        omega[j0:j1] = (W[j1] - W[j0]) / (times[j1] - times[j0])
    n = model.dim
    m = model.n_controls
    states = np.empty((K + 1, n, n), dtype=complex)
    controls = np.zeros((K + 1, m))
    states[0] = rho
    for k in range(K):
        u = model.clip_control(policy(times[k], rho))
        controls[k] = u
        om = omega[k]

        def f(t, r, _u=u, _om=om):
            return strat_drift(model, t, _u, r) + diffusion(model, r) * _om

        rho = _rk4_step_checked(f, times[k], dt, rho)
        states[k + 1] = rho
    controls[K] = model.clip_control(policy(times[K], rho))
    return Trajectory(times=times, states=states, controls=controls,
                      noise=W, cost_integral=np.zeros(K + 1))


# ---------------------------------------------------------------------------
# Elliptic generator, second-order and Hormander forms


def generator_apply_second_order(model: ModelSpec, t: float, u,
                                 rho: np.ndarray, F, h: float = 1e-4) -> float:
    """D F = <w, dF> + (1/2) <sigma (x) sigma, (d (x) d) F>."""
    w = ito_drift(model, t, u, rho)
    sig = diffusion(model, rho)
    grad = frechet_gradient(F, rho, h)
    term1 = np.trace(w @ grad).real
    term2 = 0.5 * hessian_bilinear(F, rho, sig, sig, h)
    return float(term1 + term2)


def generator_apply_hormander(model: ModelSpec, t: float, u,
                              rho: np.ndarray, F, h: float = 1e-4) -> float:
    """D F = <v, dF> + (1/2) <sigma, d <sigma, dF>>.

    The outer derivative differentiates the composite scalar functional
    rho -> <sigma(rho), dF[rho]> along the direction sigma(rho) (the gauge
    term drops since tr sigma = 0).
    """
    v = strat_drift(model, t, u, rho)
    grad = frechet_gradient(F, rho, h)
    term1 = np.trace(v @ grad).real

    def inner(r):
        return np.trace(diffusion(model, r) @ frechet_gradient(F, r, h)).real

    sig = diffusion(model, rho)
    term2 = 0.5 * (inner(rho + h * sig) - inner(rho - h * sig)) / (2.0 * h)
    return float(term1 + term2)


# ---------------------------------------------------------------------------
# Trajectory CSV interface


def trajectory_to_csv(traj: Trajectory, path) -> None:
    """Write `t,W,u_1..u_m,J_partial,rho_re_00,rho_im_00,...` rows."""
    n = traj.dim
    m = traj.controls.shape[1]
    cols = ["t", "W"] + [f"u_{a + 1}" for a in range(m)] + ["J_partial"]
    for i in range(n):
        for j in range(n):
            cols += [f"rho_re_{i}{j}", f"rho_im_{i}{j}"]
    flat = traj.states.reshape(traj.states.shape[0], n * n)
    # interleave re/im per matrix entry (row-major)
    inter = np.empty((flat.shape[0], 2 * n * n))
    inter[:, 0::2] = flat.real
    inter[:, 1::2] = flat.imag
    data = np.column_stack([traj.times, traj.noise, traj.controls,
                            traj.cost_integral, inter])
    with open(path, "w") as fh:
        fh.write(",".join(cols) + "\n")
        np.savetxt(fh, data, delimiter=",", fmt="%.17g")


def trajectory_from_csv(path) -> Trajectory:
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        data = np.loadtxt(fh, delimiter=",", ndmin=2)
    m = sum(1 for c in header if c.startswith("u_"))
    n2 = (len(header) - 3 - m) // 2
    n = int(round(math.sqrt(n2)))
    times = data[:, 0]
    W = data[:, 1]
    controls = data[:, 2:2 + m]
    J = data[:, 2 + m]
    inter = data[:, 3 + m:]
    flat = inter[:, 0::2] + 1.0j * inter[:, 1::2]
    states = flat.reshape(-1, n, n)
    return Trajectory(times=times, states=states, controls=controls,
                      noise=W, cost_integral=J)
