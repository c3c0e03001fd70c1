"""Stochastic model-reference adaptive regulation as a reflected SDE.

Assembles the closed-loop dynamics of state and parameter estimates,
the Lyapunov-derived adaptation law, and the certificate inputs
(Foster-Lyapunov constants and the one-sided growth coefficient) needed
to certify exponential convergence of the closed loop.

The true parameter vector theta_bar is required for simulation and
certification only; the implementable pieces (control_input,
adaptation_drift) never read it.
"""

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.linalg

from .convex import ConvexSet, Polygon2D, Product, WholeSpace, set_from_config
from .contraction import GrowthCondition, LyapunovSpec
from .errors import ConfigError, DimensionMismatch
from .linalg import InnerProduct, solve_lyapunov, sym_eig_bounds
from .sim import RsdeSystem

__all__ = [
    "MracSpec",
    "MracDerived",
    "make_features",
    "reshape_S",
    "unreshape_S",
    "control_input",
    "adaptation_drift",
    "closed_loop_drift",
    "closed_loop_system",
    "derive_constants",
    "lyapunov_value",
    "experiment_scale_spec",
    "mrac_spec_from_config",
]


def make_features(name, n, **params):
    """Named feature maps with documented Lipschitz constants.

    Returns (psi, n_psi, lipschitz) where psi maps R^n -> R^{n_psi} and
    lipschitz bounds the stacked map x -> (x, psi(x)):
      linear: psi absent, L = 1
      tanh:   psi = tanh(x) elementwise, L = sqrt(2)
      rbf:    psi_i = exp(-|x - c_i|^2 / (2 w^2)); each component has
              Lipschitz constant exp(-1/2)/w, so L = sqrt(1 + k/(e w^2))
    """
    if name == "linear":
        return None, 0, 1.0
    if name == "tanh":
        return (lambda x: np.tanh(np.asarray(x, dtype=float))), n, math.sqrt(2.0)
    if name == "rbf":
        centers = np.asarray(params["centers"], dtype=float)
        width = float(params["width"])
        if centers.ndim != 2 or centers.shape[1] != n or width <= 0:
            raise ConfigError("rbf features need (k, n) centers and width > 0")
        k = centers.shape[0]

        def psi(x):
            d2 = np.sum((centers - np.asarray(x, dtype=float)) ** 2, axis=1)
            return np.exp(-d2 / (2.0 * width * width))

        lip = math.sqrt(1.0 + k * math.exp(-1.0) / (width * width))
        return psi, k, lip
    raise ConfigError(f"unknown feature map '{name}'")


@dataclass(frozen=True)
class MracSpec:
    """Plant/reference data plus the parameter constraint set.

    theta_bar flattens the true parameter block [ -Kbar^T ; Omega_bar ]
    row-major; K_set must contain it.
    """

    A: np.ndarray
    B: np.ndarray
    Q: np.ndarray
    psi: Optional[Callable]
    n_psi: int
    lipschitz_L: float
    K_set: ConvexSet
    theta_bar: np.ndarray
    G_x: np.ndarray
    G_theta: np.ndarray

    def __post_init__(self):
        A = np.asarray(self.A, dtype=float)
        B = np.asarray(self.B, dtype=float)
        Q = np.asarray(self.Q, dtype=float)
        n = A.shape[0]
        if A.shape != (n, n) or B.ndim != 2 or B.shape[0] != n:
            raise DimensionMismatch("A must be n x n and B must be n x ell")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "theta_bar",
                           np.asarray(self.theta_bar, dtype=float))
        object.__setattr__(self, "G_x", np.asarray(self.G_x, dtype=float))
        object.__setattr__(self, "G_theta", np.asarray(self.G_theta, dtype=float))
        if self.lipschitz_L <= 0:
            raise ValueError("lipschitz_L must be positive")
        if self.theta_bar.shape != (self.m,):
            raise DimensionMismatch(
                f"theta_bar must have length m = {self.m}"
            )
        if self.K_set.dim != self.m:
            raise DimensionMismatch("K_set dimension must equal m")
        solve_lyapunov(A, Q)  # raises NotHurwitz / rejects bad Q
        if not self.K_set.contains(self.theta_bar, 1e-9):
            raise ValueError("theta_bar must lie in K_set")
        if math.isinf(self.K_set.diameter()):
            raise ValueError("K_set must be bounded")
        self._audit_lipschitz()

    @property
    def n(self):
        return self.A.shape[0]

    @property
    def ell(self):
        return self.B.shape[1]

    @property
    def L_feat(self):
        return self.n + self.n_psi

    @property
    def m(self):
        return self.L_feat * self.ell

    def features(self, x):
        """Stacked feature vector Lambda(x) = (x, psi(x))."""
        x = np.asarray(x, dtype=float)
        if self.psi is None:
            return x.copy()
        return np.concatenate([x, np.asarray(self.psi(x), dtype=float)])

    def _audit_lipschitz(self):
        # Randomized spot check; reject if the declared constant is
        # violated by more than 0.1% on any sampled pair.
        rng = np.random.Generator(np.random.Philox(key=[0xF0F0, 0]))
        for _ in range(200):
            x = rng.standard_normal(self.n) * 3.0
            y = rng.standard_normal(self.n) * 3.0
            lhs = np.linalg.norm(self.features(x) - self.features(y))
            rhs = self.lipschitz_L * np.linalg.norm(x - y)
            if lhs > rhs * 1.001:
                raise ValueError(
                    "declared Lipschitz constant violated on a sampled pair"
                )


def reshape_S(v, L_feat, ell):
    """Row-major reshape of a length-m vector into an L x ell matrix."""
    v = np.asarray(v, dtype=float)
    if v.shape != (L_feat * ell,):
        raise DimensionMismatch(
            f"expected vector of length {L_feat * ell}, got shape {v.shape}"
        )
    return v.reshape(L_feat, ell)


def unreshape_S(Theta):
    """Inverse of reshape_S (row-major flatten)."""
    return np.asarray(Theta, dtype=float).ravel()


def control_input(spec, theta, x):
    """Implementable control law u = K x - Omega^T psi(x).

    K and Omega come from the block convention Theta = [-K^T; Omega]
    with the first n rows of the features being the raw state.
    """
    theta = np.asarray(theta, dtype=float)
    x = np.asarray(x, dtype=float)
    if theta.shape != (spec.m,) or x.shape != (spec.n,):
        raise DimensionMismatch("theta or x has the wrong shape")
    Theta = reshape_S(theta, spec.L_feat, spec.ell)
    K = -Theta[: spec.n].T
    u = K @ x
    if spec.n_psi > 0:
        Omega = Theta[spec.n:]
        u = u - Omega.T @ np.asarray(spec.psi(x), dtype=float)
    return u


def adaptation_drift(spec, derived, x):
    """Parameter drift S^{-1}(Lambda(x) x^T P B), the cancellation law."""
    x = np.asarray(x, dtype=float)
    lam_x = spec.features(x)
    return unreshape_S(np.outer(lam_x, x @ derived.P @ spec.B))


@dataclass(frozen=True)
class MracDerived:
    """Certificate inputs derived from an MracSpec."""

    P: np.ndarray
    growth: GrowthCondition
    lyap: LyapunovSpec
    G: np.ndarray
    domain: ConvexSet
    D: float
    alpha: float


def derive_constants(spec):
    """Lyapunov solve plus the closed-form certificate constants.

    lambda = lambda_min(Q) / lambda_max(P)
    C = tr(G_x^T P G_x) + tr(G_theta^T G_theta) + lambda (D^2 + 1)
    kappa(r) = alpha = |PB|_2 D L / lambda_min(P)
    V is quadratic in the shifted coordinates (x, theta - theta_bar)
    under the weighted norm blockdiag(P, I).
    """
    P = solve_lyapunov(spec.A, spec.Q)
    pmin, pmax = sym_eig_bounds(P)
    qmin, _ = sym_eig_bounds(spec.Q)
    lam = qmin / pmax
    D = spec.K_set.diameter()
    C = (float(np.trace(spec.G_x.T @ P @ spec.G_x))
         + float(np.trace(spec.G_theta.T @ spec.G_theta))
         + lam * (D * D + 1.0))
    alpha = float(np.linalg.norm(P @ spec.B, 2)) * D * spec.lipschitz_L / pmin

    weight = scipy.linalg.block_diag(P, np.eye(spec.m))
    shift = np.concatenate([np.zeros(spec.n), spec.theta_bar])
    lyap = LyapunovSpec.quadratic_profile(
        C=C, lam=lam, norm=InnerProduct(weight), shift=shift
    )
    growth = GrowthCondition.constant(alpha)
    G = scipy.linalg.block_diag(spec.G_x, spec.G_theta)
    domain = Product((WholeSpace(spec.n), spec.K_set))
    return MracDerived(P=P, growth=growth, lyap=lyap, G=G, domain=domain,
                       D=D, alpha=alpha)


def closed_loop_drift(spec, derived, z):
    """Joint drift of (x, theta): reference dynamics plus parameter-error
    forcing in the x block, adaptation law in the theta block."""
    z = np.asarray(z, dtype=float)
    if z.shape != (spec.n + spec.m,):
        raise DimensionMismatch("state must have dimension n + m")
    x = z[: spec.n]
    theta = z[spec.n:]
    Theta = reshape_S(theta, spec.L_feat, spec.ell)
    Theta_bar = reshape_S(spec.theta_bar, spec.L_feat, spec.ell)
    dx = spec.A @ x + spec.B @ ((Theta_bar - Theta).T @ spec.features(x))
    dtheta = adaptation_drift(spec, derived, x)
    return np.concatenate([dx, dtheta])


def closed_loop_system(spec):
    """Assemble the closed-loop reflected SDE and its derived constants."""
    derived = derive_constants(spec)
    system = RsdeSystem(
        dim=spec.n + spec.m,
        drift=lambda z: closed_loop_drift(spec, derived, z),
        diffusion=derived.G,
        domain=derived.domain,
    )
    return system, derived


def lyapunov_value(derived, spec, z):
    """V(z) = x^T P x + |theta - theta_bar|^2 + 1."""
    z = np.asarray(z, dtype=float)
    if z.shape != (spec.n + spec.m,):
        raise DimensionMismatch("state must have dimension n + m")
    x = z[: spec.n]
    dtheta = z[spec.n:] - spec.theta_bar
    return float(x @ derived.P @ x + dtheta @ dtheta + 1.0)


# ---------------------------------------------------------------------------
# ready-made instances and config ingestion

_DEFAULT_POLYGON = [
    [-4.0, -4.0],
    [4.0, -4.0],
    [6.0, 0.0],
    [0.0, 5.0],
    [-6.0, 0.0],
]


def experiment_scale_spec(g_x_scale=1.0, g_theta_scale=1.0):
    """Experiment-scale instance: n = 4, ell = 2, L = 7, m = 14, with
    three RBF features and the same 2-D polygon constraining each of the
    seven parameter rows."""
    A = np.array([
        [0.0, 1.0, 0.0, 0.0],
        [-2.0, -3.0, 0.0, 0.0],
        [0.0, 0.0, 0.0, 1.0],
        [0.0, 0.0, -2.0, -3.0],
    ])
    B = np.array([
        [0.0, 0.0],
        [1.0, 0.0],
        [0.0, 0.0],
        [0.0, 1.0],
    ])
    Q = 2.0 * np.eye(4)
    centers = np.array([
        [1.0, 0.0, -1.0, 0.0],
        [0.0, 1.0, 0.0, -1.0],
        [-1.0, -1.0, 1.0, 1.0],
    ])
    psi, n_psi, lip = make_features("rbf", 4, centers=centers, width=2.0)
    polygon = Polygon2D(np.asarray(_DEFAULT_POLYGON))
    K_set = Product(tuple(polygon for _ in range(7)))
    theta_bar = np.array([
        1.0, -1.0,
        0.5, 1.0,
        -1.0, 0.5,
        0.0, 0.0,
        1.0, 1.0,
        -0.5, -1.0,
        2.0, 0.5,
    ])
    return MracSpec(
        A=A, B=B, Q=Q, psi=psi, n_psi=n_psi, lipschitz_L=lip,
        K_set=K_set, theta_bar=theta_bar,
        G_x=g_x_scale * np.eye(4), G_theta=g_theta_scale * np.eye(14),
    )


def mrac_spec_from_config(cfg):
    """Build an MracSpec from a parsed config table."""
    try:
        A = np.asarray(cfg["A"], dtype=float)
        n = A.shape[0]
        feat_cfg = dict(cfg.get("features", {"name": "linear"}))
        name = feat_cfg.pop("name")
        psi, n_psi, lip = make_features(name, n, **feat_cfg)
        if "lipschitz_L" in cfg:
            lip = float(cfg["lipschitz_L"])
        return MracSpec(
            A=A,
            B=np.asarray(cfg["B"], dtype=float),
            Q=np.asarray(cfg["Q"], dtype=float),
            psi=psi,
            n_psi=n_psi,
            lipschitz_L=lip,
            K_set=set_from_config(cfg["K_set"]),
            theta_bar=np.asarray(cfg["theta_bar"], dtype=float),
            G_x=np.asarray(cfg["G_x"], dtype=float),
            G_theta=np.asarray(cfg["G_theta"], dtype=float),
        )
    except KeyError as exc:
        raise ConfigError(f"mrac config missing key {exc}") from exc
    except (ValueError, DimensionMismatch) as exc:
        raise ConfigError(f"invalid mrac config: {exc}") from exc
