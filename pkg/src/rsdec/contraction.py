"""Wasserstein-contraction certificates for reflected SDEs.

Given a one-sided growth condition, a Foster-Lyapunov function, and the
diffusion matrix, this module computes the explicit constants
(R1, M, R2, xi, beta, gamma) and the concave distance profile f that
together make exp(a*t) * rho(x_t, y_t) a supermartingale under the
reflection coupling, with a = min(lambda, xi*sigma^2, beta*sigma^2) / 2.
It also evaluates the resulting metric rho, the closed-form decay
bounds, and Monte Carlo upper bounds on the rho-Wasserstein distance.
"""

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.interpolate import CubicSpline

from .errors import InfiniteR2, InvalidQ, NoFiniteM, QuadratureFailure
from .linalg import InnerProduct, weighted_sigma_min
from .sim import simulate_coupled_ensemble

__all__ = [
    "GrowthCondition",
    "LyapunovSpec",
    "ContractionCertificate",
    "compute_R1",
    "compute_M",
    "build_certificate",
    "eval_f",
    "eval_rho",
    "rho_many",
    "decay_bounds",
    "estimate_W_rho",
    "certificate_report",
]

XI_CAP = 1e6  # cap for xi when R1 = 0 (the raw definition gives xi = inf)
_TINY = np.finfo(float).tiny


# ---------------------------------------------------------------------------
# quadrature helpers

def adaptive_simpson(fun, a, b, rel_tol=1e-10, max_depth=40):
    """Adaptive Simpson integration of a scalar function on [a, b]."""
    if b <= a:
        return 0.0

    def simpson(fa, fm, fb, h):
        return h / 6.0 * (fa + 4.0 * fm + fb)

    fa, fb = fun(a), fun(b)
    m = 0.5 * (a + b)
    fm = fun(m)
    whole = simpson(fa, fm, fb, b - a)
    tol = rel_tol * (abs(whole) + 1e-300)

    def recurse(a, m, b, fa, fm, fb, whole, tol, depth):
        lm, rm = 0.5 * (a + m), 0.5 * (m + b)
        flm, frm = fun(lm), fun(rm)
        left = simpson(fa, flm, fm, m - a)
        right = simpson(fm, frm, fb, b - m)
        delta = left + right - whole
        if abs(delta) <= 15.0 * tol:
            return left + right + delta / 15.0
        if depth >= max_depth:
            raise QuadratureFailure(
                f"adaptive Simpson did not converge on [{a:.6g}, {b:.6g}]"
            )
        return (recurse(a, lm, m, fa, flm, fm, left, 0.5 * tol, depth + 1)
                + recurse(m, rm, b, fm, frm, fb, right, 0.5 * tol, depth + 1))

    return recurse(a, m, b, fa, fm, fb, whole, tol, 0)


def _piece_grid(a, b, n):
    """Nodes on [a, b]: uniform plus a geometric cluster near a."""
    u = np.concatenate((
        [0.0],
        np.geomspace(1e-8, 1e-2, 49),
        np.linspace(1e-2, 1.0, n)[1:],
    ))
    return a + (b - a) * u


class _CumulativeIntegral:
    """F(r) = integral of a vectorized integrand from 0 to r.

    Built piecewise between the given breakpoints (integrands here are
    smooth inside pieces but may kink at R1/R2): the integrand is
    sampled on a fine graded grid per piece, fitted with a cubic spline,
    and the exact antiderivative of the spline is kept for evaluation.
    """

    def __init__(self, breakpoints, integrand, nodes_per_piece=4097):
        bp = [breakpoints[0]]
        for b in breakpoints[1:]:
            if b > bp[-1]:
                bp.append(b)
        self.bp = np.asarray(bp, dtype=float)
        self.pieces = []
        offset = 0.0
        for a, b in zip(self.bp[:-1], self.bp[1:]):
            # very narrow pieces can collapse graded nodes to equal floats
            x = np.unique(_piece_grid(a, b, nodes_per_piece))
            if x.size < 4:
                x = np.unique(np.array([a, np.nextafter(a, b),
                                        np.nextafter(b, a), b]))
            y = np.asarray(integrand(x), dtype=float)
            if not np.all(np.isfinite(y)):
                raise QuadratureFailure("integrand returned non-finite values")
            F = CubicSpline(x, y).antiderivative()
            self.pieces.append((a, b, F, offset))
            offset += float(F(b))
        self.total = offset

    def __call__(self, r):
        r = np.asarray(r, dtype=float)
        scalar = r.ndim == 0
        r = np.atleast_1d(np.clip(r, self.bp[0], self.bp[-1]))
        out = np.empty_like(r)
        for a, b, F, offset in self.pieces:
            mask = (r >= a) & (r <= b) if b == self.bp[-1] else (r >= a) & (r < b)
            if np.any(mask):
                out[mask] = offset + F(r[mask])
        return float(out[0]) if scalar else out


# ---------------------------------------------------------------------------
# assumption data

@dataclass(frozen=True)
class GrowthCondition:
    """One-sided growth data: <x-y, H(x)-H(y)> <= kappa(r) r^2 + alpha r (|x|+|y|).

    ``s_kappa_primitive``, when supplied, must be the exact primitive
    r -> integral_0^r s*kappa(s) ds and removes one quadrature level.
    ``vectorized`` declares that kappa accepts numpy arrays.
    """

    kappa: Callable
    alpha: float
    s_kappa_primitive: Optional[Callable] = None
    vectorized: bool = False

    def __post_init__(self):
        if self.alpha < 0:
            raise ValueError("alpha must be nonnegative")

    def kappa_vec(self):
        return self.kappa if self.vectorized else np.vectorize(self.kappa)

    @classmethod
    def constant(cls, value):
        """kappa(r) = value = alpha, the adaptive-regulation case."""
        if value < 0:
            raise ValueError("constant growth coefficient must be nonnegative")
        return cls(
            kappa=lambda r: value + 0.0 * r,
            alpha=value,
            s_kappa_primitive=lambda r: 0.5 * value * r * r,
            vectorized=True,
        )


@dataclass(frozen=True)
class LyapunovSpec:
    """Foster-Lyapunov data: V(z) = phi(||z - shift||) with A V <= C - lambda V."""

    phi: Callable
    phi_inverse: Callable
    C: float
    lam: float
    norm: InnerProduct
    shift: Optional[np.ndarray] = None
    quadratic: bool = False  # phi(r) = r^2 + 1 fast paths

    def __post_init__(self):
        if self.C <= 0 or self.lam <= 0:
            raise ValueError("C and lambda must be positive")
        grid = np.linspace(0.0, 10.0, 64)
        vals = np.asarray([self.phi(r) for r in grid], dtype=float)
        if np.any(np.diff(vals) <= 0):
            raise ValueError("phi must be strictly increasing")
        for v in vals:
            back = self.phi(self.phi_inverse(v))
            if abs(back - v) > 1e-10 * max(1.0, abs(v)):
                raise ValueError("phi_inverse is not a right inverse of phi")
        if self.shift is not None:
            object.__setattr__(
                self, "shift", np.asarray(self.shift, dtype=float)
            )

    @classmethod
    def quadratic_profile(cls, C, lam, norm, shift=None):
        return cls(
            phi=lambda r: r * r + 1.0,
            phi_inverse=lambda v: math.sqrt(max(v - 1.0, 0.0)),
            C=C,
            lam=lam,
            norm=norm,
            shift=shift,
            quadratic=True,
        )

    def _shifted(self, z):
        z = np.asarray(z, dtype=float)
        return z if self.shift is None else z - self.shift

    def value(self, z):
        return float(self.phi(self.norm.norm(self._shifted(z))))

    def value_many(self, Z):
        r = self.norm.norm_many(self._shifted(Z))
        return np.asarray(self.phi(r), dtype=float)


# ---------------------------------------------------------------------------
# constants R1 and M

def compute_R1(lyap, domain_diameter):
    """Upper bound on the diameter of {(x, y): V(x) + V(y) <= 4C/lambda}.

    Overestimating R1 only loosens the certificate (xi shrinks), so the
    bound is clipped to the domain diameter when that is smaller.
    """
    level = 4.0 * lyap.C / lyap.lam
    if lyap.quadratic:
        base = math.sqrt(2.0 * max(0.0, level - 2.0))
    else:
        phi0 = float(lyap.phi(0.0))
        base = 2.0 * float(lyap.phi_inverse(max(phi0, level - phi0)))
    return float(min(base, domain_diameter))


def _quadratic_threshold(a, b):
    """Smallest r0 >= 0 with r^2 + 1 >= a r + b for all r >= r0."""
    disc = a * a - 4.0 * (1.0 - b)
    if disc <= 0:
        return 0.0
    return max(0.0, 0.5 * (a + math.sqrt(disc)))


def compute_M(lyap, growth, R1):
    """Smallest M >= R1 with phi(r) >= max{(2/lam)(alpha r + C),
    (4C/lam)(2r + 1)} for all r >= M."""
    C, lam, alpha = lyap.C, lyap.lam, growth.alpha

    def needed(r):
        return np.maximum((2.0 / lam) * (alpha * r + C),
                          (4.0 * C / lam) * (2.0 * r + 1.0))

    if lyap.quadratic:
        M = max(R1,
                _quadratic_threshold(2.0 * alpha / lam, 2.0 * C / lam),
                _quadratic_threshold(8.0 * C / lam, 4.0 * C / lam))
    else:
        phi_v = np.vectorize(lyap.phi)
        grid = np.geomspace(max(R1, 1e-9), 1e12, 4000)
        grid = np.concatenate(([max(R1, 0.0)], grid))
        ok = phi_v(grid) >= needed(grid)
        if not ok[-1]:
            raise NoFiniteM(
                "phi grows too slowly: the linear-growth radius condition "
                "fails even at r = 1e12"
            )
        if ok.all():
            M = max(R1, 0.0)
        else:
            last_bad = np.max(np.nonzero(~ok)[0])
            lo, hi = grid[last_bad], grid[min(last_bad + 1, len(grid) - 1)]
            for _ in range(200):
                mid = 0.5 * (lo + hi)
                if float(lyap.phi(mid)) >= float(needed(mid)):
                    hi = mid
                else:
                    lo = mid
            M = max(R1, hi)

    # a-posteriori verification on [M, 10M]
    if M > 0:
        phi_v = np.vectorize(lyap.phi)
        rs = np.linspace(M, 10.0 * M, 4096)
        gap = phi_v(rs) - needed(rs)
        if np.min(gap) < -1e-9 * max(1.0, float(lyap.phi(M))):
            raise NoFiniteM("computed M fails the growth conditions on [M, 10M]")
    return float(M)


# ---------------------------------------------------------------------------
# the certificate

@dataclass
class ContractionCertificate:
    R1: float
    M: float
    R2: float
    sigma_min: float
    xi: float
    beta: float
    gamma: float
    rate_a: float
    flags: list
    profile_r: np.ndarray
    profile_f: np.ndarray
    _f_cum: _CumulativeIntegral = field(repr=False)
    _g: Callable = field(repr=False)
    _h: Callable = field(repr=False)
    _phi_prof: Callable = field(repr=False)
    _Phi: _CumulativeIntegral = field(repr=False)

    def h(self, r):
        return self._h(np.asarray(r, dtype=float))

    def varphi(self, r):
        return self._phi_prof(np.asarray(r, dtype=float))

    def Phi(self, r):
        return self._Phi(r)

    def g(self, r):
        return self._g(np.asarray(r, dtype=float))

    def f(self, r):
        return self._f_cum(np.minimum(np.asarray(r, dtype=float), self.R2))

    def f_direct(self, r, rel_tol=1e-10):
        """Direct-quadrature verification path for f (slow, scalar)."""
        r = min(float(r), self.R2)
        return adaptive_simpson(
            lambda s: float(self._phi_prof(np.asarray(s))
                            * self._g(np.asarray(s))),
            0.0, r, rel_tol=rel_tol,
        )


def build_certificate(growth, lyap, G, domain_diameter, r1_override=None,
                      r2_override=None, nodes_per_piece=4097):
    """Compute all contraction constants and the tabulated profile chain.

    Order matters: R1 and M come first because the profile exponent
    h(r) contains the alpha*M*r term.
    """
    flags = []
    sigma = weighted_sigma_min(np.asarray(G, dtype=float), lyap.norm)
    s2 = sigma * sigma

    if r1_override is not None:
        R1 = float(r1_override)
        flags.append("r1-override")
    else:
        R1 = compute_R1(lyap, domain_diameter)
        if math.isfinite(domain_diameter) and R1 >= domain_diameter:
            flags.append("r1-clipped")
    M = compute_M(lyap, growth, R1)

    if r2_override is not None:
        R2 = float(r2_override)
        flags.append("r2-override")
        M = max(M, R2 / 2.0)  # keep R2 <= 2M; enlarging M only loosens
    else:
        R2 = min(2.0 * M, domain_diameter)
    if not math.isfinite(R2):
        raise InfiniteR2("both 2M and the domain diameter are infinite")
    if R2 <= 0:
        raise InfiniteR2("degenerate domain: R2 = 0")

    degenerate_r1 = R1 <= 0.0
    if degenerate_r1:
        flags.append("r1-degenerate")

    alpha = growth.alpha
    if growth.s_kappa_primitive is not None:
        skp = growth.s_kappa_primitive
        Hk = lambda s: np.asarray(skp(np.asarray(s, dtype=float)), dtype=float)
    else:
        kv = growth.kappa_vec()
        Hk_cum = _CumulativeIntegral(
            [0.0, R2], lambda s: s * kv(s), nodes_per_piece
        )
        # independent spot check of the tabulated primitive
        ref = adaptive_simpson(lambda s: s * float(kv(s)), 0.0, R2)
        if abs(Hk_cum.total - ref) > 1e-8 * (abs(ref) + 1.0):
            raise QuadratureFailure("kappa primitive tabulation failed verification")
        Hk = Hk_cum

    def h(s):
        s = np.asarray(s, dtype=float)
        return (0.5 * Hk(s) + alpha * M * s) / s2

    h_r1 = float(h(R1))
    h_r2 = float(h(R2))

    def phi_prof(s):
        return np.exp(-h(s))

    def layer_start(h_end, b, cutoff):
        # Smallest s with h(s) >= h_end - cutoff (h is nondecreasing).
        # The shifted integrands e^{h - h_end} live in a boundary layer
        # near b when h_end is large; everything below s contributes a
        # relative mass under e^{-cutoff} and is skipped by quadrature.
        if h_end - float(h(0.0)) <= cutoff:
            return 0.0
        lo, hi = 0.0, b
        for _ in range(100):
            mid = 0.5 * (lo + hi)
            if float(h(mid)) < h_end - cutoff:
                lo = mid
            else:
                hi = mid
        return lo

    bps = [0.0, min(R1, R2), R2]
    Phi = _CumulativeIntegral(bps, phi_prof, nodes_per_piece)

    # xi^{-1} = int_0^{R1} e^{h}; computed in shifted form to avoid overflow
    if degenerate_r1:
        xi = XI_CAP
        i1_denom = None
        I1t = None
    else:
        s_lo1 = layer_start(h_r1, R1, 60.0)
        I1t = _CumulativeIntegral(
            [0.0, s_lo1, R1], lambda s: np.exp(h(s) - h_r1), nodes_per_piece
        )
        i1_simpson = adaptive_simpson(
            lambda s: math.exp(float(h(s)) - h_r1), s_lo1, R1
        )
        i1_denom = max(I1t.total, i1_simpson)
        if abs(I1t.total - i1_simpson) > 1e-6 * i1_simpson:
            flags.append("profile-under-resolved")
        log_xi_inv = h_r1 + math.log(i1_denom)
        xi = math.exp(-log_xi_inv) if log_xi_inv < 700 else 0.0
        if xi == 0.0:
            xi = _TINY
            flags.append("xi-underflow")

    # beta^{-1} = int_0^{R2} Phi e^{h}
    s_lo2 = layer_start(h_r2, R2, 60.0 + math.log1p(R2))
    bps2 = sorted({0.0, min(R1, R2), s_lo2, R2})
    I2t = _CumulativeIntegral(
        bps2, lambda s: Phi(s) * np.exp(h(s) - h_r2), nodes_per_piece
    )
    i2_simpson = adaptive_simpson(
        lambda s: float(Phi(s)) * math.exp(float(h(s)) - h_r2), s_lo2, R2
    )
    i2_denom = max(I2t.total, i2_simpson)
    if abs(I2t.total - i2_simpson) > 1e-6 * i2_simpson:
        if "profile-under-resolved" not in flags:
            flags.append("profile-under-resolved")
    log_beta_inv = h_r2 + math.log(i2_denom)
    beta = math.exp(-log_beta_inv) if log_beta_inv < 700 else 0.0
    if beta == 0.0:
        beta = _TINY
        flags.append("beta-underflow")

    def g(r):
        r = np.asarray(r, dtype=float)
        term1 = 0.0 if degenerate_r1 else I1t(np.minimum(r, R1)) / i1_denom
        term2 = I2t(np.minimum(r, R2)) / i2_denom
        return 1.0 - 0.25 * term1 - 0.25 * term2

    f_cum = _CumulativeIntegral(bps, lambda s: phi_prof(s) * g(s), nodes_per_piece)

    gamma = xi * s2 / (4.0 * lyap.C)
    rate_a = min(lyap.lam, xi * s2, beta * s2) / 2.0

    profile_r = np.linspace(0.0, R2, 257)
    profile_f = f_cum(profile_r)

    return ContractionCertificate(
        R1=R1, M=M, R2=R2, sigma_min=sigma, xi=xi, beta=beta, gamma=gamma,
        rate_a=rate_a, flags=flags, profile_r=profile_r, profile_f=profile_f,
        _f_cum=f_cum, _g=g, _h=h, _phi_prof=phi_prof, _Phi=Phi,
    )


# ---------------------------------------------------------------------------
# metric evaluation and decay bounds

def eval_f(cert, r):
    """Concave distance profile f, constant for r >= R2."""
    return cert.f(r)


def eval_rho(cert, lyap, x, y):
    """The certified contraction metric.

    x = y is decided by exact state equality; the coupling's gluing rule
    makes post-coupling states bit-identical, so no tolerance is needed.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if np.array_equal(x, y):
        return 0.0
    r = lyap.norm.norm(x - y)
    vx = lyap.value(x)
    vy = lyap.value(y)
    phi_m = float(lyap.phi(cert.M))
    return (float(cert.f(r)) + cert.gamma * (vx + vy)
            + max(vx, phi_m) + max(vy, phi_m))


def rho_many(cert, lyap, X, Y):
    """Vectorized eval_rho over rows of X and Y."""
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    equal = np.all(X == Y, axis=1)
    r = lyap.norm.norm_many(X - Y)
    vx = lyap.value_many(X)
    vy = lyap.value_many(Y)
    phi_m = float(lyap.phi(cert.M))
    vals = (cert.f(r) + cert.gamma * (vx + vy)
            + np.maximum(vx, phi_m) + np.maximum(vy, phi_m))
    vals[equal] = 0.0
    return vals


def decay_bounds(cert, lyap, W_rho_0, t, q):
    """Exponential decay bounds from an initial rho-Wasserstein value.

    q = "tv" gives the total-variation bound gamma^{-1} e^{-at} W0;
    numeric q > 1 gives the q-Wasserstein bound
    2^{1/p} (gamma^{-1} W0)^{1/q} e^{-at/q} with 1/p + 1/q = 1.
    """
    if W_rho_0 < 0 or t < 0:
        raise ValueError("W_rho_0 and t must be nonnegative")
    a = cert.rate_a
    if isinstance(q, str):
        if q.lower() != "tv":
            raise InvalidQ(f"unknown mode {q!r}")
        return W_rho_0 / cert.gamma * math.exp(-a * t)
    q = float(q)
    if q <= 1.0:
        raise InvalidQ("q must exceed 1")
    p = q / (q - 1.0)
    return (2.0 ** (1.0 / p)
            * (W_rho_0 / cert.gamma) ** (1.0 / q)
            * math.exp(-a * t / q))


# ---------------------------------------------------------------------------
# Monte Carlo estimation

def _sample_initial(sampler, rng, n, dim):
    if callable(sampler):
        X = np.asarray(sampler(rng, n), dtype=float)
    else:
        point = np.atleast_1d(np.asarray(sampler, dtype=float))
        X = np.tile(point, (n, 1))
    if X.shape != (n, dim):
        raise ValueError(f"initial sampler must produce shape ({n}, {dim})")
    return X


def estimate_W_rho(system, cert, lyap, x0_sampler, y0_sampler, cfg,
                   n_replicas, probe_times):
    """Monte Carlo upper bound on W_rho(P_t, Q_t) via the reflection coupling.

    Any coupling upper-bounds the Wasserstein distance, so the returned
    mean of rho over replicas is a valid (biased-upward) estimate.
    Returns a list of (t, mean, stderr) rows.
    """
    if n_replicas < 2:
        raise ValueError("n_replicas must be at least 2")
    rng = np.random.Generator(np.random.Philox(key=[int(cfg.seed), 0xA5A5A5]))
    X0 = _sample_initial(x0_sampler, rng, n_replicas, system.dim)
    Y0 = _sample_initial(y0_sampler, rng, n_replicas, system.dim)
    result = simulate_coupled_ensemble(
        system, X0, Y0, cfg, lyap.norm, probe_times,
        rho_many=lambda X, Y: rho_many(cert, lyap, X, Y),
    )
    rows = []
    for j, t in enumerate(result.probe_times):
        vals = result.rho_values[j]
        mean = float(np.mean(vals))
        stderr = float(np.std(vals, ddof=1) / math.sqrt(n_replicas))
        rows.append((float(t), mean, stderr))
    return rows


def certificate_report(cert):
    """JSON-ready dict with the stable key names consumed by the CLI."""
    return {
        "sigma_min": cert.sigma_min,
        "R1": cert.R1,
        "M": cert.M,
        "R2": cert.R2,
        "xi": cert.xi,
        "beta": cert.beta,
        "gamma": cert.gamma,
        "rate_a": cert.rate_a,
        "flags": list(cert.flags),
        "profile_grid": {
            "r": [float(v) for v in cert.profile_r],
            "f": [float(v) for v in cert.profile_f],
        },
    }
