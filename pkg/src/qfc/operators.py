"""Finite-dimensional operator algebra for quantum filtering and control.

Operators and states are plain complex numpy arrays of shape (n, n).
Density matrices are Hermitian, unit-trace, positive semidefinite; tangent
directions are Hermitian and traceless (they preserve normalization).
Functionals of the state are differentiated numerically over an orthonormal
traceless Hermitian basis, with the gradient gauge fixed to the traceless
representative (the identity component is invisible against traceless
directions).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Optional

import numpy as np

__all__ = [
    "Tolerances",
    "DEFAULT_TOLS",
    "SIGMA_X",
    "SIGMA_Y",
    "SIGMA_Z",
    "PAULI",
    "StateFunctional",
    "dag",
    "traceless",
    "as_operator",
    "as_density",
    "as_tangent",
    "is_hermitian",
    "min_eigenvalue",
    "pairing",
    "lindblad_apply",
    "lindblad_apply_predual",
    "hermitian_basis",
    "frechet_gradient",
    "hessian_bilinear",
    "operator_to_json",
    "operator_from_json",
    "random_density",
    "random_hermitian",
]


@dataclass(frozen=True)
class Tolerances:
    """Validation tolerances threaded through all state/operator constructors."""

    herm: float = 1e-12   # entrywise |rho - rho^dag|
    trace: float = 1e-10  # |tr rho - 1|
    psd: float = 1e-10    # allowed negative part of the spectrum


DEFAULT_TOLS = Tolerances()

SIGMA_X = np.array([[0.0, 1.0], [1.0, 0.0]], dtype=complex)
SIGMA_Y = np.array([[0.0, -1.0j], [1.0j, 0.0]], dtype=complex)
SIGMA_Z = np.array([[1.0, 0.0], [0.0, -1.0]], dtype=complex)
PAULI = (SIGMA_X, SIGMA_Y, SIGMA_Z)


def dag(A: np.ndarray) -> np.ndarray:
    return A.conj().T


def traceless(X: np.ndarray) -> np.ndarray:
    """Remove the identity component: X - (tr X / n) I."""
    n = X.shape[0]
    return X - (np.trace(X) / n) * np.eye(n)


def is_hermitian(A: np.ndarray, tol: float = 1e-12) -> bool:
    return bool(np.max(np.abs(A - A.conj().T)) <= tol)


def min_eigenvalue(A: np.ndarray) -> float:
    """Smallest eigenvalue of a Hermitian matrix (closed form for n=2)."""
    if A.shape[0] == 2:
        tr = A[0, 0].real + A[1, 1].real
        det = (A[0, 0] * A[1, 1] - A[0, 1] * A[1, 0]).real
        disc = max(tr * tr / 4.0 - det, 0.0)
        return tr / 2.0 - math.sqrt(disc)
    return float(np.linalg.eigvalsh(A)[0])


def as_operator(entries, tol: Tolerances = DEFAULT_TOLS) -> np.ndarray:
    """Validate and return a square complex matrix with finite entries."""
    A = np.asarray(entries, dtype=complex)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError(f"operator must be square, got shape {A.shape}")
    if not np.all(np.isfinite(A.view(float))):
        raise ValueError("operator has non-finite entries")
    return A


def as_density(entries, tol: Tolerances = DEFAULT_TOLS) -> np.ndarray:
    """Validate a density matrix: Hermitian, unit trace, positive semidefinite."""
    rho = as_operator(entries, tol)
    if not is_hermitian(rho, tol.herm):
        raise ValueError("density matrix is not Hermitian within tolerance")
    tr = np.trace(rho).real
    if abs(tr - 1.0) > tol.trace:
        raise ValueError(f"density matrix trace {tr} deviates from 1")
    lo = min_eigenvalue(rho)
    if lo < -tol.psd:
        raise ValueError(f"density matrix has negative eigenvalue {lo}")
    return rho


def as_tangent(entries, tol: Tolerances = DEFAULT_TOLS) -> np.ndarray:
    """Validate a tangent direction: Hermitian and traceless."""
    tau = as_operator(entries, tol)
    if not is_hermitian(tau, tol.herm):
        raise ValueError("tangent direction is not Hermitian")
    if abs(np.trace(tau)) > tol.trace:
        raise ValueError("tangent direction is not traceless")
    return tau


def pairing(rho: np.ndarray, X: np.ndarray):
    """Duality pairing <rho, X> = tr(rho X).

    Returns a float when both arguments are Hermitian and the imaginary
    part is negligible (costs and expectation values are real by
    construction); otherwise returns the complex trace.
    """
    if rho.shape != X.shape:
        raise ValueError(f"dimension mismatch: {rho.shape} vs {X.shape}")
    val = complex(np.trace(rho @ X))
    if abs(val.imag) <= 1e-12 and is_hermitian(rho) and is_hermitian(X):
        return val.real
    return val


def lindblad_apply(R: np.ndarray, X: np.ndarray) -> np.ndarray:
    """Heisenberg-picture dissipator: R^dag X R - (1/2){R^dag R, X}."""
    if R.shape != X.shape:
        raise ValueError(f"dimension mismatch: {R.shape} vs {X.shape}")
    Rd = dag(R)
    RdR = Rd @ R
    return Rd @ X @ R - 0.5 * (RdR @ X + X @ RdR)


def lindblad_apply_predual(R: np.ndarray, rho: np.ndarray) -> np.ndarray:
    """Schroedinger-picture dissipator: R rho R^dag - (1/2){R^dag R, rho}."""
    if R.shape != rho.shape:
        raise ValueError(f"dimension mismatch: {R.shape} vs {rho.shape}")
    RdR = dag(R) @ R
    return R @ rho @ dag(R) - 0.5 * (RdR @ rho + rho @ RdR)


@lru_cache(maxsize=8)
def hermitian_basis(n: int) -> tuple[np.ndarray, ...]:
    """Orthonormal traceless Hermitian basis of the n x n matrices.

    Generalized Gell-Mann construction, normalized so tr(B_j B_k) = delta_jk.
    There are n^2 - 1 elements.
    """
    basis = []
    for j in range(n):
        for k in range(j + 1, n):
            X = np.zeros((n, n), dtype=complex)
            X[j, k] = X[k, j] = 1.0 / math.sqrt(2.0)
            basis.append(X)
            Y = np.zeros((n, n), dtype=complex)
            Y[j, k] = -1.0j / math.sqrt(2.0)
            Y[k, j] = 1.0j / math.sqrt(2.0)
            basis.append(Y)
    for l in range(1, n):
        D = np.zeros((n, n), dtype=complex)
        D[:l, :l] = np.eye(l)
        D[l, l] = -l
        basis.append(D / math.sqrt(l * (l + 1)))
    return tuple(basis)


@dataclass(frozen=True)
class StateFunctional:
    """Scalar functional of the state, with an optional analytic gradient.

    `value` maps a density-like matrix to a real number; `gradient`, when
    given, must return the Hermitian operator representative of the Frechet
    derivative (tested against the numeric gradient).
    """

    value: Callable[[np.ndarray], float]
    gradient: Optional[Callable[[np.ndarray], np.ndarray]] = None

    def __call__(self, rho: np.ndarray) -> float:
        return float(self.value(rho))


def _eval_functional(F, rho: np.ndarray) -> float:
    val = float(F(rho) if callable(F) else F.value(rho))
    if not math.isfinite(val):
        raise ValueError("functional returned a non-finite value")
    return val


def frechet_gradient(F, rho: np.ndarray, h: float = 1e-4) -> np.ndarray:
    """Numeric Frechet gradient of a state functional, traceless gauge.

    Central differences along every element of the orthonormal traceless
    Hermitian basis; O(h^2) accurate. The identity component of the
    gradient is unobservable against trace-preserving perturbations, so the
    traceless representative is returned.
    """
    if h <= 0:
        raise ValueError("step h must be positive")
    n = rho.shape[0]
    grad = np.zeros((n, n), dtype=complex)
    for B in hermitian_basis(n):
        dplus = _eval_functional(F, rho + h * B)
        dminus = _eval_functional(F, rho - h * B)
        grad += ((dplus - dminus) / (2.0 * h)) * B
    return grad


def hessian_bilinear(F, rho: np.ndarray, tau1: np.ndarray, tau2: np.ndarray,
                     h: float = 1e-4) -> float:
    """Second mixed difference <tau1 (x) tau2, Hess F[rho]>.

    Symmetric central four-point stencil, O(h^2) accurate and exactly
    symmetric under swapping tau1 and tau2.
    """
    if h <= 0:
        raise ValueError("step h must be positive")
    fpp = _eval_functional(F, rho + h * tau1 + h * tau2)
    fpm = _eval_functional(F, rho + h * tau1 - h * tau2)
    fmp = _eval_functional(F, rho - h * tau1 + h * tau2)
    fmm = _eval_functional(F, rho - h * tau1 - h * tau2)
    return (fpp - fpm - fmp + fmm) / (4.0 * h * h)


def operator_to_json(A: np.ndarray) -> dict:
    """JSON form {"dim": n, "re": [[...]], "im": [[...]]} (row-major)."""
    A = np.asarray(A, dtype=complex)
    return {
        "dim": int(A.shape[0]),
        "re": A.real.tolist(),
        "im": A.imag.tolist(),
    }


def operator_from_json(obj: dict, density: bool = False,
                       tol: Tolerances = DEFAULT_TOLS) -> np.ndarray:
    n = int(obj["dim"])
    re = np.asarray(obj["re"], dtype=float)
    im = np.asarray(obj["im"], dtype=float)
    if re.shape != (n, n) or im.shape != (n, n):
        raise ValueError(f"operator JSON claims dim {n} but entries have "
                         f"shape {re.shape} / {im.shape}")
    A = re + 1.0j * im
    return as_density(A, tol) if density else as_operator(A, tol)


def operator_json_dumps(A: np.ndarray) -> str:
    return json.dumps(operator_to_json(A), sort_keys=True)


def random_hermitian(n: int, rng: np.random.Generator, scale: float = 1.0) -> np.ndarray:
    """Random Hermitian matrix with Gaussian entries."""
    G = rng.normal(size=(n, n)) + 1.0j * rng.normal(size=(n, n))
    return scale * 0.5 * (G + dag(G))


def random_density(n: int, rng: np.random.Generator) -> np.ndarray:
    """Random full-rank density matrix (normalized Wishart)."""
    G = rng.normal(size=(n, n)) + 1.0j * rng.normal(size=(n, n))
    W = G @ dag(G)
    return W / np.trace(W).real
