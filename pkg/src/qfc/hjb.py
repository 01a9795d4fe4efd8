"""Controlled qubit in Bloch coordinates: model reduction and HJB solver.

States are parameterized as rho = (1/2)(I + p . sigma) with |p| <= 1.  The
filtering SDE reduces to dp = b(u, p) dt + s(p) dW with, for the dephasing
measurement L = (kappa/2) sigma_z and full Hamiltonian control,

    b = u x p - (kappa^2 / 2)(x, y, 0),      s = kappa (-zx, -zy, 1 - z^2).

The optimal-cost PDE

    dS/dt + inf_u { C(u,p) + b(u,p) . grad S + (1/2) s^T (Hess S) s } = 0

is stepped backward in time from the terminal slice on a uniform Cartesian
lattice restricted to the unit ball.  The drift and noise are tangent or
inward at the sphere (s . p = kappa z (1 - |p|^2) -> 0), so the ball is
invariant and no exterior boundary data exists; lattice points next to the
sphere use one-sided differences toward the interior.  The inner infimum is
realized in closed form by the linear-quadratic minimizer (u* = grad S x p
for the benchmark cost), clipped to the control box.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .config import cost_fingerprint, model_fingerprint
from .control import CostSpec, CostateRecord
from .errors import ConfigError, NumericalError
from .filtering import ModelSpec, diffusion, ito_drift
from .operators import PAULI, as_density, lindblad_apply_predual, traceless

__all__ = [
    "bloch_from_state",
    "state_from_bloch",
    "qubit_coefficients",
    "BlochReduction",
    "ValueGrid",
    "Policy",
    "hjb_solve_qubit",
    "suggest_timestep",
    "extract_policy",
    "costate_from_value",
    "write_value_grid",
    "read_value_grid",
]


def bloch_from_state(rho: np.ndarray) -> np.ndarray:
    """Polarization vector p with rho = (1/2)(I + p . sigma)."""
    return np.array([2.0 * rho[0, 1].real,
                     -2.0 * rho[0, 1].imag,
                     (rho[0, 0] - rho[1, 1]).real])


def state_from_bloch(p) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    r = float(np.linalg.norm(p))
    if r > 1.0 + 1e-9:
        raise ValueError(f"Bloch vector has norm {r} > 1")
    return np.array([[0.5 * (1.0 + p[2]), 0.5 * (p[0] - 1.0j * p[1])],
                     [0.5 * (p[0] + 1.0j * p[1]), 0.5 * (1.0 - p[2])]])


def _pauli_components(A: np.ndarray) -> np.ndarray:
    return np.array([np.trace(A @ sig).real for sig in PAULI])


def _printed_scale(model: ModelSpec) -> float:
    """Drift rescale 1/kappa for the 'printed' coefficient convention.

    Only defined for a qubit with L proportional to sigma_z; the printed
    equation replaces the kappa^2 measurement-induced drift by kappa.
    """
    if model.convention == "operator":
        return 1.0
    L = model.coupling
    kappa = 2.0 * L[0, 0].real
    if model.dim != 2 or kappa <= 0 or not np.allclose(
            L, 0.5 * kappa * PAULI[2], atol=1e-12):
        raise ValueError("printed convention requires L = (kappa/2) sigma_z "
                         "with kappa > 0")
    return 1.0 / kappa


def qubit_coefficients(model: ModelSpec, u, p):
    """Bloch drift and noise vectors (b, s) at polarization p.

    Evaluates the operator-level drift and diffusion on the state rho(p)
    and reads off Pauli components.  Under the "printed" convention the
    measurement-induced part of the drift is rescaled by 1/kappa.
    """
    if model.dim != 2:
        raise ValueError("Bloch coefficients require a qubit model")
    rho = state_from_bloch(p)
    w = ito_drift(model, 0.0, u, rho)
    s = _pauli_components(diffusion(model, rho))
    scale = _printed_scale(model)
    if scale != 1.0:
        wL = lindblad_apply_predual(model.coupling, rho)
        w = w + (scale - 1.0) * wL
    return _pauli_components(w), s


# ---------------------------------------------------------------------------
# Vectorized Bloch reduction of a general qubit model / LQ cost


@dataclass(frozen=True)
class BlochReduction:
    """Affine/quadratic Bloch-coordinate closures of a qubit model + LQ cost.

    drift(u, p) = sum_a u_a * (2 v_a x p) + omega0 x p + d_c + D_M p
    noise(p)    = a_c + A_M p - (m0 + m . p) p
    All pieces are exact reductions of the operator formulas (verified
    against qubit_coefficients in the tests).
    """

    omega0: np.ndarray        # (3,) rotation vector of H0
    v_vecs: np.ndarray        # (m, 3) Pauli vectors of the control operators
    d_c: np.ndarray           # (3,) constant dissipative drift
    D_M: np.ndarray           # (3,3) linear dissipative drift
    a_c: np.ndarray           # (3,) constant part of L rho + rho L^dag
    A_M: np.ndarray           # (3,3) linear part of the same
    m0: float                 # <I/2, L + L^dag>
    m_vec: np.ndarray         # (3,) Pauli vector of (L + L^dag)/... pairing
    g: np.ndarray             # (m, m) control metric
    g_inv: np.ndarray
    f0: np.ndarray            # (m,) scalar parts of <rho, F_a>
    f_vecs: np.ndarray        # (m, 3) Pauli parts of F_a
    c0_0: float               # scalar part of <rho, C_0>
    c0_vec: np.ndarray        # (3,)
    s0: float                 # terminal <rho, S> = s0 + s_vec . p
    s_vec: np.ndarray
    u_max: np.ndarray

    @classmethod
    def build(cls, model: ModelSpec, cost: CostSpec) -> "BlochReduction":
        if model.dim != 2:
            raise ValueError("Bloch reduction requires a qubit model")
        if not cost.is_linear_quadratic:
            raise ValueError("Bloch reduction requires a linear-quadratic cost")
        m = model.n_controls
        omega0 = _pauli_components(model.hamiltonian)  # = 2 h_vec
        v_vecs = np.array([0.5 * _pauli_components(V) for V in model.controls]
                          ).reshape(m, 3)
        scale = _printed_scale(model)

        def dissipative(rho):
            out = np.zeros((2, 2), dtype=complex)
            for R in model.dissipators:
                out = out + lindblad_apply_predual(R, rho)
            out = out + scale * lindblad_apply_predual(model.coupling, rho)
            return out

        eye = np.eye(2, dtype=complex)
        d_c = 0.5 * _pauli_components(dissipative(eye))
        D_M = np.column_stack([
            0.5 * _pauli_components(dissipative(sig)) for sig in PAULI])
        L, Ld = model.coupling, model.coupling.conj().T
        a_c = 0.5 * _pauli_components(L @ eye + eye @ Ld)
        A_M = np.column_stack([
            0.5 * _pauli_components(L @ sig + sig @ Ld) for sig in PAULI])
        M = L + Ld
        m0 = 0.5 * np.trace(M).real
        m_vec = _pauli_components(M) * 0.5
        f0 = np.array([0.5 * np.trace(F).real for F in cost.linear_ops])
        f_vecs = np.array([0.5 * _pauli_components(F) for F in cost.linear_ops]
                          ).reshape(m, 3)
        c0_0 = 0.5 * np.trace(cost.constant_op).real
        c0_vec = 0.5 * _pauli_components(cost.constant_op)
        s0 = 0.5 * np.trace(cost.terminal_op).real
        s_vec = 0.5 * _pauli_components(cost.terminal_op)
        return cls(omega0=omega0, v_vecs=v_vecs, d_c=d_c, D_M=D_M, a_c=a_c,
                   A_M=A_M, m0=m0, m_vec=m_vec, g=cost.metric,
                   g_inv=cost.metric_inv, f0=f0, f_vecs=f_vecs, c0_0=c0_0,
                   c0_vec=c0_vec, s0=s0, s_vec=s_vec, u_max=model.u_max)

    def drift_static(self, px, py, pz):
        """omega0 x p + d_c + D_M p (everything except the control term)."""
        w = self.omega0
        bx = w[1] * pz - w[2] * py
        by = w[2] * px - w[0] * pz
        bz = w[0] * py - w[1] * px
        D = self.D_M
        bx = bx + self.d_c[0] + D[0, 0] * px + D[0, 1] * py + D[0, 2] * pz
        by = by + self.d_c[1] + D[1, 0] * px + D[1, 1] * py + D[1, 2] * pz
        bz = bz + self.d_c[2] + D[2, 0] * px + D[2, 1] * py + D[2, 2] * pz
        return bx, by, bz

    def noise(self, px, py, pz):
        A = self.A_M
        ell = self.m0 + self.m_vec[0] * px + self.m_vec[1] * py + self.m_vec[2] * pz
        sx = self.a_c[0] + A[0, 0] * px + A[0, 1] * py + A[0, 2] * pz - ell * px
        sy = self.a_c[1] + A[1, 0] * px + A[1, 1] * py + A[1, 2] * pz - ell * py
        sz = self.a_c[2] + A[2, 0] * px + A[2, 1] * py + A[2, 2] * pz - ell * pz
        return sx, sy, sz

    def optimal_control(self, qx, qy, qz, px, py, pz):
        """Closed-form LQ minimizer, clipped to the box; vectorized.

        lin_a = <P, F_a> + 2 (q x v_a) . p, u* = clip(-g^{-1} lin).
        For g = I, F = 0, V_a = sigma_a / 2 this is u* = q x p.
        """
        m = self.v_vecs.shape[0]
        lin = []
        for a in range(m):
            v = self.v_vecs[a]
            cx = qy * v[2] - qz * v[1]
            cy = qz * v[0] - qx * v[2]
            cz = qx * v[1] - qy * v[0]
            lin.append(self.f0[a] + self.f_vecs[a, 0] * px
                       + self.f_vecs[a, 1] * py + self.f_vecs[a, 2] * pz
                       + 2.0 * (cx * px + cy * py + cz * pz))
        us = []
        for a in range(m):
            ua = sum(-self.g_inv[a, b] * lin[b] for b in range(m))
            us.append(np.clip(ua, -self.u_max[a], self.u_max[a]))
        return us

    def control_drift(self, us, px, py, pz):
        """sum_a u_a * 2 (v_a x p)."""
        bx = by = bz = 0.0
        for a, ua in enumerate(us):
            v = self.v_vecs[a]
            bx = bx + ua * 2.0 * (v[1] * pz - v[2] * py)
            by = by + ua * 2.0 * (v[2] * px - v[0] * pz)
            bz = bz + ua * 2.0 * (v[0] * py - v[1] * px)
        return bx, by, bz

    def running_cost(self, us, px, py, pz):
        m = len(us)
        val = self.c0_0 + self.c0_vec[0] * px + self.c0_vec[1] * py \
            + self.c0_vec[2] * pz
        for a in range(m):
            val = val + us[a] * (self.f0[a] + self.f_vecs[a, 0] * px
                                 + self.f_vecs[a, 1] * py
                                 + self.f_vecs[a, 2] * pz)
            for b in range(m):
                val = val + 0.5 * self.g[a, b] * us[a] * us[b]
        return val

    def drift_bound(self) -> float:
        """Upper bound for |b| over the ball and the control box."""
        ctrl = float(sum(self.u_max[a] * 2.0 * np.linalg.norm(self.v_vecs[a])
                         for a in range(len(self.u_max))))
        static = np.linalg.norm(self.omega0) + np.linalg.norm(self.d_c) \
            + np.linalg.norm(self.D_M, 2)
        return ctrl + float(static)


# ---------------------------------------------------------------------------
# Masked finite-difference stencils on the ball


class _AxisOps:
    """Per-axis difference operators on the masked lattice.

    Full-array passes assume the bulk central/one-sided formula and a
    sparse fixup overrides points whose stencil would leave the mask.
    """

    def __init__(self, mask: np.ndarray, axis: int, h: float):
        self.axis = axis
        self.h = h
        N = mask.shape[0]
        ok = {}
        for d in (-2, -1, 1, 2):
            ok[d] = self._shifted(mask, d, axis)
        idx = np.arange(mask.size).reshape(mask.shape)
        stride = idx.take(1, axis=axis).flat[0] - idx.take(0, axis=axis).flat[0] \
            if N > 1 else 1
        # one-sided second differences amplify grid-frequency modes, so the
        # Ito term is active only where the compact central stencil exists
        self.central_ok = mask & ok[1] & ok[-1]
        self._build_gradient(mask, ok, idx, stride)
        self._build_second(mask, ok, idx, stride)
        self._build_upwind(mask, ok, idx, stride)
        self._build_upwind2(mask, ok, idx, stride)

    @staticmethod
    def _shifted(mask: np.ndarray, d: int, axis: int) -> np.ndarray:
        """ok[i] = True iff the neighbor at offset d along `axis` is in-mask."""
        out = np.zeros_like(mask)
        src = [slice(None)] * mask.ndim
        dst = [slice(None)] * mask.ndim
        if d > 0:
            src[axis] = slice(d, None)
            dst[axis] = slice(None, -d)
        else:
            src[axis] = slice(None, d)
            dst[axis] = slice(-d, None)
        out[tuple(dst)] = mask[tuple(src)]
        return out

    @staticmethod
    def _roll(S: np.ndarray, d: int, axis: int) -> np.ndarray:
        # value at i becomes S[i + d]
        return np.roll(S, -d, axis=axis)

    def _fix_table(self, points: np.ndarray, idx: np.ndarray, stride: int,
                   schemes) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Assemble (flat indices, neighbor indices, weights) for overrides.

        `schemes` is a list of (condition_array, {offset: weight}) applied
        in priority order at the override points.
        """
        flat = idx[points]
        n = flat.size
        src = np.repeat(flat[:, None], 5, axis=1)
        wts = np.zeros((n, 5))
        offsets = (-2, -1, 0, 1, 2)
        assigned = np.zeros(n, dtype=bool)
        for cond, table in schemes:
            sel = cond[points] & ~assigned
            if not np.any(sel):
                continue
            for off, wt in table.items():
                col = offsets.index(off)
                src[sel, col] = flat[sel] + off * stride
                wts[sel, col] = wt
            assigned |= sel
        src = np.clip(src, 0, idx.size - 1)
        return flat, src, wts

    def _build_gradient(self, mask, ok, idx, stride):
        h = self.h
        need = mask & ~(ok[1] & ok[-1])
        schemes = [
            (ok[1] & ok[2], {0: -3 / (2 * h), 1: 4 / (2 * h), 2: -1 / (2 * h)}),
            (ok[-1] & ok[-2], {0: 3 / (2 * h), -1: -4 / (2 * h), -2: 1 / (2 * h)}),
            (ok[1], {1: 1 / h, 0: -1 / h}),
            (ok[-1], {0: 1 / h, -1: -1 / h}),
            (np.ones_like(mask), {0: 0.0}),
        ]
        self.grad_fix = self._fix_table(need, idx, stride, schemes)

    def _build_second(self, mask, ok, idx, stride):
        h2 = self.h * self.h
        need = mask & ~(ok[1] & ok[-1])
        schemes = [
            (ok[1] & ok[2], {0: 1 / h2, 1: -2 / h2, 2: 1 / h2}),
            (ok[-1] & ok[-2], {0: 1 / h2, -1: -2 / h2, -2: 1 / h2}),
            (np.ones_like(mask), {0: 0.0}),
        ]
        self.d2_fix = self._fix_table(need, idx, stride, schemes)

    def _build_upwind(self, mask, ok, idx, stride):
        h = self.h
        need_p = mask & ~ok[1]
        schemes_p = [
            (ok[-1], {0: 1 / h, -1: -1 / h}),
            (np.ones_like(mask), {0: 0.0}),
        ]
        self.dplus_fix = self._fix_table(need_p, idx, stride, schemes_p)
        need_m = mask & ~ok[-1]
        schemes_m = [
            (ok[1], {1: 1 / h, 0: -1 / h}),
            (np.ones_like(mask), {0: 0.0}),
        ]
        self.dminus_fix = self._fix_table(need_m, idx, stride, schemes_m)

    def _build_upwind2(self, mask, ok, idx, stride):
        # wide one-sided stencils fall back to narrow ones near the sphere
        h = self.h
        need_p = mask & ~(ok[1] & ok[2])
        schemes_p = [
            (ok[1], {1: 1 / h, 0: -1 / h}),
            (ok[-1], {0: 1 / h, -1: -1 / h}),
            (np.ones_like(mask), {0: 0.0}),
        ]
        self.dplus2_fix = self._fix_table(need_p, idx, stride, schemes_p)
        need_m = mask & ~(ok[-1] & ok[-2])
        schemes_m = [
            (ok[-1], {0: 1 / h, -1: -1 / h}),
            (ok[1], {1: 1 / h, 0: -1 / h}),
            (np.ones_like(mask), {0: 0.0}),
        ]
        self.dminus2_fix = self._fix_table(need_m, idx, stride, schemes_m)

    def _apply_fix(self, out: np.ndarray, S_flat: np.ndarray, fix) -> np.ndarray:
        flat, src, wts = fix
        if flat.size:
            out.ravel()[flat] = np.einsum("ij,ij->i", S_flat[src], wts)
        return out

    def gradient(self, S: np.ndarray, S_flat: np.ndarray) -> np.ndarray:
        out = (self._roll(S, 1, self.axis) - self._roll(S, -1, self.axis)) \
            / (2.0 * self.h)
        return self._apply_fix(out, S_flat, self.grad_fix)

    def second(self, S: np.ndarray, S_flat: np.ndarray) -> np.ndarray:
        out = (self._roll(S, 1, self.axis) - 2.0 * S
               + self._roll(S, -1, self.axis)) / (self.h * self.h)
        return self._apply_fix(out, S_flat, self.d2_fix)

    def dplus(self, S: np.ndarray, S_flat: np.ndarray) -> np.ndarray:
        out = (self._roll(S, 1, self.axis) - S) / self.h
        return self._apply_fix(out, S_flat, self.dplus_fix)

    def dminus(self, S: np.ndarray, S_flat: np.ndarray) -> np.ndarray:
        out = (S - self._roll(S, -1, self.axis)) / self.h
        return self._apply_fix(out, S_flat, self.dminus_fix)

    def dplus2(self, S: np.ndarray, S_flat: np.ndarray) -> np.ndarray:
        out = (-3.0 * S + 4.0 * self._roll(S, 1, self.axis)
               - self._roll(S, 2, self.axis)) / (2.0 * self.h)
        return self._apply_fix(out, S_flat, self.dplus2_fix)

    def dminus2(self, S: np.ndarray, S_flat: np.ndarray) -> np.ndarray:
        out = (3.0 * S - 4.0 * self._roll(S, -1, self.axis)
               + self._roll(S, -2, self.axis)) / (2.0 * self.h)
        return self._apply_fix(out, S_flat, self.dminus2_fix)


class _BallStencils:
    def __init__(self, n_points: int):
        self.N = n_points
        self.axis = np.linspace(-1.0, 1.0, n_points)
        self.h = self.axis[1] - self.axis[0]
        X, Y, Z = np.meshgrid(self.axis, self.axis, self.axis, indexing="ij")
        self.P = (X, Y, Z)
        self.mask = X * X + Y * Y + Z * Z <= 1.0 + 1e-12
        self.ops = [_AxisOps(self.mask, a, self.h) for a in range(3)]

    def gradient3(self, S: np.ndarray):
        Sf = S.ravel()
        return [op.gradient(S, Sf) for op in self.ops]


# ---------------------------------------------------------------------------
# Value grid and policy


@dataclass
class ValueGrid:
    """Time-sliced value function on the Bloch-ball lattice.

    `values[k]` holds S(times[k], .) on the full cube with zeros outside
    the ball mask; only masked entries are meaningful.
    """

    n_points: int
    times: np.ndarray               # stored slice times, increasing, last = T
    values: np.ndarray              # (n_slices, N, N, N)
    model_fp: str
    cost_fp: str
    convention: str
    mode: str
    dt: float                       # PDE time step used by the sweep
    _grad_cache: dict = field(default_factory=dict, repr=False)
    _stencils: Optional[_BallStencils] = field(default=None, repr=False)

    @property
    def axis(self) -> np.ndarray:
        return np.linspace(-1.0, 1.0, self.n_points)

    @property
    def h(self) -> float:
        return 2.0 / (self.n_points - 1)

    def stencils(self) -> _BallStencils:
        if self._stencils is None:
            self._stencils = _BallStencils(self.n_points)
        return self._stencils

    @property
    def mask(self) -> np.ndarray:
        return self.stencils().mask

    def slice_index(self, t: float) -> int:
        """Nearest earlier stored slice (piecewise-constant in time)."""
        memo = self._grad_cache.setdefault("tmemo", {})
        k = memo.get(t)
        if k is None:
            k = int(np.searchsorted(self.times, t + 1e-12, side="right") - 1)
            k = min(max(k, 0), len(self.times) - 1)
            if len(memo) < 100000:
                memo[t] = k
        return k

    def _maskf(self) -> np.ndarray:
        if "maskf" not in self._grad_cache:
            self._grad_cache["maskf"] = self.mask.astype(float)
        return self._grad_cache["maskf"]

    def _cell(self, p: np.ndarray):
        N = self.n_points
        h = self.h
        out_i = np.empty(3, dtype=int)
        out_w = np.empty(3)
        for a in range(3):
            f = (p[a] + 1.0) / h
            i = int(math.floor(f))
            i = min(max(i, 0), N - 2)
            out_i[a] = i
            out_w[a] = min(max(f - i, 0.0), 1.0)
        return out_i, out_w

    def _interp(self, fields: np.ndarray, p: np.ndarray):
        """Mask-weighted trilinear interpolation; fields is (..., N, N, N)."""
        (i, j, l), (wx, wy, wz) = self._cell(p)
        cube = fields[..., i:i + 2, j:j + 2, l:l + 2]
        mk = self._maskf()[i:i + 2, j:j + 2, l:l + 2]
        w = np.array([1.0 - wx, wx])[:, None, None] \
            * np.array([1.0 - wy, wy])[None, :, None] \
            * np.array([1.0 - wz, wz])[None, None, :]
        w = w * mk
        tot = w.sum()
        if tot <= 0.0:
            raise NumericalError(f"no in-ball lattice corner near {p}")
        return (cube * w).sum(axis=(-3, -2, -1)) / tot

    @staticmethod
    def _project(p) -> np.ndarray:
        p = np.asarray(p, dtype=float)
        r = float(np.linalg.norm(p))
        return p / r if r > 1.0 else p

    def value_at(self, t: float, p) -> float:
        p = self._project(p)
        k = self.slice_index(t)
        return float(self._interp(self.values[k], p))

    def gradient_fields(self, k: int) -> np.ndarray:
        """(3, N, N, N) spatial gradient of stored slice k (cached)."""
        if k not in self._grad_cache:
            g = self.stencils().gradient3(self.values[k])
            self._grad_cache[k] = np.stack(g)
        return self._grad_cache[k]

    def gradient_at(self, t: float, p) -> np.ndarray:
        p = self._project(p)
        k = self.slice_index(t)
        return self._gradient_scalar(k, p)

    def _corner_tables(self):
        if "corners" not in self._grad_cache:
            N = self.n_points
            offs = np.array([(di * N + dj) * N + dl
                             for di in (0, 1) for dj in (0, 1) for dl in (0, 1)])
            self._grad_cache["corners"] = (offs, self.mask.astype(float).ravel())
        return self._grad_cache["corners"]

    def _gradient_scalar(self, k: int, p) -> np.ndarray:
        """Mask-weighted trilinear gradient lookup, scalar-query fast path."""
        G = self.gradient_fields(k).reshape(3, -1)
        offs, maskflat = self._corner_tables()
        N = self.n_points
        h = self.h
        fx = (p[0] + 1.0) / h
        fy = (p[1] + 1.0) / h
        fz = (p[2] + 1.0) / h
        i = min(max(int(fx), 0), N - 2)
        j = min(max(int(fy), 0), N - 2)
        l = min(max(int(fz), 0), N - 2)
        wx = min(max(fx - i, 0.0), 1.0)
        wy = min(max(fy - j, 0.0), 1.0)
        wz = min(max(fz - l, 0.0), 1.0)
        base = (i * N + j) * N + l
        idx = base + offs
        w = np.array([(1 - wx) * (1 - wy) * (1 - wz),
                      (1 - wx) * (1 - wy) * wz,
                      (1 - wx) * wy * (1 - wz),
                      (1 - wx) * wy * wz,
                      wx * (1 - wy) * (1 - wz),
                      wx * (1 - wy) * wz,
                      wx * wy * (1 - wz),
                      wx * wy * wz]) * maskflat[idx]
        tot = w.sum()
        if tot <= 0.0:
            raise NumericalError(f"no in-ball lattice corner near {p}")
        return (G[:, idx] @ w) / tot


@dataclass
class Policy:
    """Feedback map (t, rho or p) -> u extracted from a value grid."""

    grid: ValueGrid
    reduction: BlochReduction

    def control_at(self, t: float, p) -> np.ndarray:
        red = self.reduction
        px, py, pz = p[0], p[1], p[2]
        r2 = px * px + py * py + pz * pz
        if r2 > 1.0:
            r = math.sqrt(r2)
            px, py, pz = px / r, py / r, pz / r
        k = self.grid.slice_index(t)
        qx, qy, qz = self.grid._gradient_scalar(k, (px, py, pz))
        m = red.v_vecs.shape[0]
        lin = np.empty(m)
        for a in range(m):
            v = red.v_vecs[a]
            cx = qy * v[2] - qz * v[1]
            cy = qz * v[0] - qx * v[2]
            cz = qx * v[1] - qy * v[0]
            lin[a] = (red.f0[a] + red.f_vecs[a, 0] * px
                      + red.f_vecs[a, 1] * py + red.f_vecs[a, 2] * pz
                      + 2.0 * (cx * px + cy * py + cz * pz))
        u = -(red.g_inv @ lin)
        np.clip(u, -red.u_max, red.u_max, out=u)
        return u

    def __call__(self, t: float, rho: np.ndarray) -> np.ndarray:
        return self.control_at(t, bloch_from_state(rho))


def extract_policy(grid: ValueGrid, model: ModelSpec, cost: CostSpec) -> Policy:
    """Feedback policy u(t,p) = clip(grad S x p) (general LQ closed form).

    The model/cost pair must be the one the grid was solved for.
    """
    if grid.model_fp != model_fingerprint(model):
        raise ConfigError("value grid was solved for a different model")
    if grid.cost_fp != cost_fingerprint(cost):
        raise ConfigError("value grid was solved for a different cost")
    return Policy(grid=grid, reduction=BlochReduction.build(model, cost))


# ---------------------------------------------------------------------------
# Backward HJB sweep


def suggest_timestep(model: ModelSpec, cost: CostSpec, n_points: int,
                     mode: str = "stochastic") -> float:
    """Largest stable explicit step: dt <= 0.25 h / max|b| and, in
    stochastic mode, dt <= 0.25 h^2 / max|s|^2."""
    red = BlochReduction.build(model, cost)
    st = _BallStencils(n_points)
    h = st.h
    dt = 0.25 * h / max(red.drift_bound(), 1e-12)
    if mode == "stochastic":
        X, Y, Z = st.P
        sx, sy, sz = red.noise(X, Y, Z)
        s2 = (sx * sx + sy * sy + sz * sz)[st.mask]
        smax = float(s2.max()) if s2.size else 0.0
        if smax > 0:
            dt = min(dt, 0.25 * h * h / smax)
    return dt


def hjb_solve_qubit(model: ModelSpec, cost: CostSpec, n_points: int = 41,
                    dt: Optional[float] = None, t0: float = 0.0, T: float = 1.0,
                    mode: str = "stochastic", store_slices: int = 129,
                    upwind_order: int = 2) -> ValueGrid:
    """Backward finite-difference solve of the qubit feedback Bellman PDE.

    Parameters
    ----------
    n_points : odd lattice size per axis (origin on-grid).
    dt : PDE time step; None picks the CFL bound.  A supplied dt violating
        the bound raises NumericalError with the suggested value.
    mode : "stochastic" keeps the Ito correction (filtered feedback
        problem); "deterministic" drops it (master-equation control).
    store_slices : approximate number of time slices kept in the returned
        grid (terminal and initial slices always included).
    upwind_order : 1 or 2; order of the one-sided drift differences.
    """
    if model.dim != 2:
        raise ConfigError("HJB grid solver supports n=2 only")
    if n_points < 3 or n_points % 2 == 0:
        raise ValueError("n_points must be an odd integer >= 3")
    if mode not in ("stochastic", "deterministic"):
        raise ValueError("mode must be 'stochastic' or 'deterministic'")
    red = BlochReduction.build(model, cost)
    st = _BallStencils(n_points)
    X, Y, Z = st.P
    mask = st.mask
    maskf = mask.astype(float)
    h = st.h

    dt_max = suggest_timestep(model, cost, n_points, mode)
    if dt is None:
        dt = dt_max
    elif dt > dt_max * (1.0 + 1e-9):
        raise NumericalError(
            f"time step {dt:.3g} violates the CFL bound; use dt <= {dt_max:.6g}")
    K = max(1, int(math.ceil((T - t0) / dt - 1e-12)))
    dt_eff = (T - t0) / K

    stochastic = mode == "stochastic"
    bx0, by0, bz0 = red.drift_static(X, Y, Z)
    if stochastic:
        sx, sy, sz = red.noise(X, Y, Z)
        cx = st.ops[0].central_ok.astype(float)
        cy = st.ops[1].central_ok.astype(float)
        cz = st.ops[2].central_ok.astype(float)
        sxx, syy, szz = sx * sx * cx, sy * sy * cy, sz * sz * cz
        sxy = 2 * sx * sy * cx * cy
        sxz = 2 * sx * sz * cx * cz
        syz = 2 * sy * sz * cy * cz

    stride = max(1, K // max(1, store_slices - 1))
    keep = sorted({0, K} | set(range(0, K + 1, stride)))
    keep_pos = {k: i for i, k in enumerate(keep)}
    times_all = t0 + dt_eff * np.arange(K + 1)
    stored = np.zeros((len(keep), n_points, n_points, n_points))

    S = (red.s0 + red.s_vec[0] * X + red.s_vec[1] * Y + red.s_vec[2] * Z) * maskf
    stored[keep_pos[K]] = S
    opx, opy, opz = st.ops

    for k in range(K - 1, -1, -1):
        Sf = S.ravel()
        qx = opx.gradient(S, Sf)
        qy = opy.gradient(S, Sf)
        qz = opz.gradient(S, Sf)
        us = red.optimal_control(qx, qy, qz, X, Y, Z)
        bx, by, bz = red.control_drift(us, X, Y, Z)
        bx = bx + bx0
        by = by + by0
        bz = bz + bz0
        if upwind_order == 2:
            # one-sided three-point differences keep O(h^2) in the drift
            adv = (np.maximum(bx, 0.0) * opx.dplus2(S, Sf)
                   + np.minimum(bx, 0.0) * opx.dminus2(S, Sf)
                   + np.maximum(by, 0.0) * opy.dplus2(S, Sf)
                   + np.minimum(by, 0.0) * opy.dminus2(S, Sf)
                   + np.maximum(bz, 0.0) * opz.dplus2(S, Sf)
                   + np.minimum(bz, 0.0) * opz.dminus2(S, Sf))
        else:
            adv = (np.maximum(bx, 0.0) * opx.dplus(S, Sf)
                   + np.minimum(bx, 0.0) * opx.dminus(S, Sf)
                   + np.maximum(by, 0.0) * opy.dplus(S, Sf)
                   + np.minimum(by, 0.0) * opy.dminus(S, Sf)
                   + np.maximum(bz, 0.0) * opz.dplus(S, Sf)
                   + np.minimum(bz, 0.0) * opz.dminus(S, Sf))
        val = red.running_cost(us, X, Y, Z) + adv
        if stochastic:
            hxx = opx.second(S, Sf)
            hyy = opy.second(S, Sf)
            hzz = opz.second(S, Sf)
            qyf = qy.ravel()
            qzf = qz.ravel()
            hxy = opx.gradient(qy, qyf)
            hxz = opx.gradient(qz, qzf)
            hyz = opy.gradient(qz, qzf)
            val = val + 0.5 * (sxx * hxx + syy * hyy + szz * hzz
                               + sxy * hxy + sxz * hxz + syz * hyz)
        S = (S + dt_eff * val) * maskf
        if k % 50 == 0 and not np.all(np.isfinite(S[mask])):
            raise NumericalError(f"non-finite values in the sweep at slice {k}")
        if k in keep_pos:
            stored[keep_pos[k]] = S

    if not np.all(np.isfinite(stored[:, mask])):
        raise NumericalError("non-finite values in the stored grid")
    return ValueGrid(n_points=n_points, times=times_all[keep], values=stored,
                     model_fp=model_fingerprint(model),
                     cost_fp=cost_fingerprint(cost),
                     convention=model.convention, mode=mode, dt=dt_eff)


# ---------------------------------------------------------------------------
# Costate extraction


def costate_from_value(grid: ValueGrid, times, points) -> CostateRecord:
    """Costate record Q_k = grad S(t_k, p_k) . sigma along a Bloch path.

    The terminal costate reproduces the traceless part of the terminal
    operator exactly (the stencils are exact on linear slices).
    """
    times = np.asarray(times, dtype=float)
    points = np.asarray(points, dtype=float)
    K = len(times)
    states = np.empty((K, 2, 2), dtype=complex)
    costates = np.empty((K, 2, 2), dtype=complex)
    for k in range(K):
        p = ValueGrid._project(points[k])
        states[k] = state_from_bloch(p)
        q = grid.gradient_at(times[k], p)
        costates[k] = q[0] * PAULI[0] + q[1] * PAULI[1] + q[2] * PAULI[2]
    return CostateRecord(times=times, states=states, costates=costates)


# ---------------------------------------------------------------------------
# Grid file interface


def write_value_grid(grid: ValueGrid, path) -> None:
    """Header JSON line, then CSV rows `k,i,j,l,t,x,y,z,S` (in-ball points)."""
    header = {
        "N": grid.n_points,
        "dt": grid.dt,
        "t0": float(grid.times[0]),
        "T": float(grid.times[-1]),
        "times": [float(t) for t in grid.times],
        "model_fingerprint": grid.model_fp,
        "cost_fingerprint": grid.cost_fp,
        "convention": grid.convention,
        "mode": grid.mode,
    }
    mask = grid.mask
    ii, jj, ll = np.nonzero(mask)
    ax = grid.axis
    with open(path, "w") as fh:
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        fh.write("k,i,j,l,t,x,y,z,S\n")
        for k, t in enumerate(grid.times):
            vals = grid.values[k][mask]
            block = np.column_stack([
                np.full(ii.size, k), ii, jj, ll,
                np.full(ii.size, t), ax[ii], ax[jj], ax[ll], vals])
            np.savetxt(fh, block,
                       fmt="%d,%d,%d,%d,%.17g,%.17g,%.17g,%.17g,%.17g")


def read_value_grid(path) -> ValueGrid:
    with open(path) as fh:
        header = json.loads(fh.readline())
        cols = fh.readline().strip().split(",")
        if cols[:4] != ["k", "i", "j", "l"]:
            raise ConfigError("malformed value-grid file")
        data = np.loadtxt(fh, delimiter=",", ndmin=2)
    N = int(header["N"])
    times = np.asarray(header["times"], dtype=float)
    values = np.zeros((len(times), N, N, N))
    k = data[:, 0].astype(int)
    i = data[:, 1].astype(int)
    j = data[:, 2].astype(int)
    l = data[:, 3].astype(int)
    values[k, i, j, l] = data[:, 8]
    return ValueGrid(n_points=N, times=times, values=values,
                     model_fp=header["model_fingerprint"],
                     cost_fp=header["cost_fingerprint"],
                     convention=header["convention"],
                     mode=header.get("mode", "stochastic"),
                     dt=float(header["dt"]))
