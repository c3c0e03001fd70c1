"""Small dense linear algebra helpers.

Provides the continuous Lyapunov equation solve, symmetric eigenvalue
bounds, and singular values with respect to a weighted inner product.
All matrices here are small (n <= ~20 in every use), so plain dense
LAPACK routines are used throughout.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .errors import DimensionMismatch, NotHurwitz, NotSymmetric, SingularG

__all__ = [
    "InnerProduct",
    "solve_lyapunov",
    "sym_eig_bounds",
    "weighted_sigma_min",
]


def _as_square(M, name="matrix"):
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise DimensionMismatch(f"{name} must be square, got shape {M.shape}")
    if not np.all(np.isfinite(M)):
        raise ValueError(f"{name} has non-finite entries")
    return M


def _check_symmetric(S, name="matrix", rtol=1e-12):
    S = _as_square(S, name)
    scale = np.linalg.norm(S)
    if np.linalg.norm(S - S.T) > rtol * max(scale, 1.0):
        raise NotSymmetric(f"{name} is not symmetric to relative tolerance {rtol}")
    return 0.5 * (S + S.T)


def sym_eig_bounds(S):
    """Extreme eigenvalues (lambda_min, lambda_max) of a symmetric matrix."""
    S = _check_symmetric(S, "S")
    vals = np.linalg.eigvalsh(S)
    return float(vals[0]), float(vals[-1])


def solve_lyapunov(A, Q):
    """Solve A^T P + P A = -Q for symmetric positive definite P.

    A must be Hurwitz and Q symmetric positive definite; otherwise the
    equation has no SPD solution and NotHurwitz is raised.
    """
    A = _as_square(A, "A")
    Q = _check_symmetric(Q, "Q")
    if A.shape != Q.shape:
        raise DimensionMismatch(f"A is {A.shape} but Q is {Q.shape}")
    qmin, _ = sym_eig_bounds(Q)
    if qmin <= 0:
        raise ValueError("Q must be positive definite")

    eigs = np.linalg.eigvals(A)
    if np.max(eigs.real) >= -1e-12:
        raise NotHurwitz(
            f"A has an eigenvalue with real part {np.max(eigs.real):.3e} >= 0"
        )

    P = scipy.linalg.solve_continuous_lyapunov(A.T, -Q)
    P = 0.5 * (P + P.T)

    residual = np.linalg.norm(A.T @ P + P @ A + Q) / np.linalg.norm(Q)
    if residual > 1e-10:
        raise NotHurwitz(
            f"Lyapunov solve residual {residual:.3e} exceeds 1e-10; "
            "A is likely near-singular with respect to the Lyapunov operator"
        )
    pmin, _ = sym_eig_bounds(P)
    if pmin <= 0:
        raise NotHurwitz("Lyapunov solution is not positive definite")
    return P


@dataclass(frozen=True)
class InnerProduct:
    """Inner product <x, y> = x^T W y defined by an SPD weight matrix W."""

    weight: np.ndarray
    dim: int = field(init=False)

    def __post_init__(self):
        W = _check_symmetric(self.weight, "weight")
        wmin, _ = sym_eig_bounds(W)
        if wmin <= 0:
            raise ValueError("inner product weight must be positive definite")
        object.__setattr__(self, "weight", W)
        object.__setattr__(self, "dim", W.shape[0])

    @classmethod
    def euclidean(cls, dim):
        return cls(np.eye(dim))

    def inner(self, x, y):
        return float(np.asarray(x) @ self.weight @ np.asarray(y))

    def norm(self, x):
        x = np.asarray(x, dtype=float)
        return float(np.sqrt(max(x @ self.weight @ x, 0.0)))

    def norm_many(self, X):
        """Norms of the rows of a (k, dim) array."""
        X = np.asarray(X, dtype=float)
        return np.sqrt(np.maximum(np.einsum("ij,jk,ik->i", X, self.weight, X), 0.0))

    def sqrt_weight(self):
        """Symmetric square root W^{1/2}."""
        vals, vecs = np.linalg.eigh(self.weight)
        return (vecs * np.sqrt(vals)) @ vecs.T

    def inv_sqrt_weight(self):
        vals, vecs = np.linalg.eigh(self.weight)
        return (vecs / np.sqrt(vals)) @ vecs.T


def weighted_sigma_min(G, ip):
    """Smallest singular value of W^{1/2} G W^{-1/2} for W = ip.weight.

    Coincides with the Euclidean sigma_min when W = I. Raises SingularG
    when G is numerically singular in the weighted geometry.
    """
    G = _as_square(G, "G")
    if ip.dim != G.shape[0]:
        raise DimensionMismatch(f"G is {G.shape} but inner product has dim {ip.dim}")
    Gw = ip.sqrt_weight() @ G @ ip.inv_sqrt_weight()
    sv = np.linalg.svd(Gw, compute_uv=False)
    if sv[-1] < 1e-12 * sv[0]:
        raise SingularG(
            f"sigma_min/sigma_max = {sv[-1] / sv[0]:.3e} below 1e-12; G is singular"
        )
    return float(sv[-1])
