"""Projected Euler time stepping for reflected SDEs.

The reflection process is never materialized: each Euler proposal is
projected back onto the domain, which realizes the reflection term in
the small-step limit. The module also implements the reflection
coupling of two copies of the same system, with coupling-time
detection, both for single trajectories and vectorized ensembles.
"""

import csv
import json
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .convex import ConvexSet
from .errors import (DimensionMismatch, DriftNaN, InitialStateOutsideDomain,
                     SingularG)
from .linalg import InnerProduct

__all__ = [
    "RsdeSystem",
    "SimConfig",
    "Trajectory",
    "CoupledTrajectory",
    "CoupledEnsembleResult",
    "simulate",
    "simulate_coupled",
    "simulate_ensemble",
    "simulate_coupled_ensemble",
    "trajectory_to_csv",
    "coupled_to_csv",
]

DOMAIN_TOL = 1e-9
EXPLOSION_BOUND = 1e12


@dataclass(frozen=True)
class RsdeSystem:
    """Drift callable, invertible diffusion matrix, and convex domain.

    If ``vectorized`` is true the drift also accepts a (k, dim) array of
    states and returns a (k, dim) array; otherwise ensemble runs fall
    back to a Python loop over rows.
    """

    dim: int
    drift: Callable
    diffusion: np.ndarray
    domain: ConvexSet
    vectorized: bool = False

    def __post_init__(self):
        G = np.asarray(self.diffusion, dtype=float)
        if G.shape != (self.dim, self.dim):
            raise DimensionMismatch(
                f"diffusion must be {self.dim}x{self.dim}, got {G.shape}"
            )
        sv = np.linalg.svd(G, compute_uv=False)
        if sv[-1] <= 1e-12 * sv[0]:
            raise SingularG("diffusion matrix must be invertible")
        if self.domain.dim != self.dim:
            raise DimensionMismatch("domain dimension does not match system")
        object.__setattr__(self, "diffusion", G)

    def drift_many(self, X):
        if self.vectorized:
            H = np.asarray(self.drift(X), dtype=float)
        else:
            H = np.stack([np.asarray(self.drift(x), dtype=float) for x in X])
        return H


@dataclass(frozen=True)
class SimConfig:
    step: float
    horizon: float
    seed: int
    record_stride: int = 1

    def __post_init__(self):
        if self.step <= 0:
            raise ValueError("step must be positive")
        if self.horizon < 0:
            raise ValueError("horizon must be nonnegative")
        if self.horizon > 0 and self.step > self.horizon + 1e-15:
            raise ValueError("step must not exceed horizon")
        if self.n_steps > 10**8:
            raise ValueError("horizon/step exceeds 1e8 steps")
        if self.record_stride < 1:
            raise ValueError("record_stride must be a positive integer")

    @property
    def n_steps(self):
        return int(round(self.horizon / self.step)) if self.horizon > 0 else 0


@dataclass(frozen=True)
class Trajectory:
    times: np.ndarray
    states: np.ndarray  # (n_recorded, dim)


@dataclass(frozen=True)
class CoupledTrajectory:
    times: np.ndarray
    x_states: np.ndarray
    y_states: np.ndarray
    coupling_time: Optional[float]  # None means the copies never coupled
    metric_values: Optional[np.ndarray] = None


@dataclass(frozen=True)
class CoupledEnsembleResult:
    probe_times: np.ndarray
    x_probes: np.ndarray  # (n_probes, n_replicas, dim)
    y_probes: np.ndarray
    coupling_times: np.ndarray  # inf where never coupled
    rho_values: Optional[np.ndarray] = None  # (n_probes, n_replicas)


def _rng(seed, traj_index=0):
    # Counter-based generator: independent streams per (seed, trajectory).
    return np.random.Generator(np.random.Philox(key=[int(seed), int(traj_index)]))


def _check_initial(system, x0, name="x0"):
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (system.dim,):
        raise DimensionMismatch(f"{name} must have shape ({system.dim},)")
    if not system.domain.contains(x0, DOMAIN_TOL):
        raise InitialStateOutsideDomain(f"{name} is outside the domain (tol 1e-9)")
    return x0


def _check_drift_value(h, t):
    if not np.all(np.isfinite(h)):
        raise DriftNaN(f"drift returned a non-finite value at t = {t:.6g}", time=t)


def _check_state(x, t):
    if np.max(np.abs(x)) > EXPLOSION_BOUND:
        raise DriftNaN(f"state norm exceeded 1e12 at t = {t:.6g}", time=t)


def simulate(system, x0, cfg, traj_index=0):
    """Projected Euler simulation of one trajectory.

    Deterministic given (system, x0, cfg, traj_index).
    """
    x = _check_initial(system, x0)
    rng = _rng(cfg.seed, traj_index)
    eta = cfg.step
    sqrt_eta = math.sqrt(eta)
    G = system.diffusion

    times = [0.0]
    states = [x.copy()]
    for i in range(cfg.n_steps):
        t = i * eta
        h = np.asarray(system.drift(x), dtype=float)
        _check_drift_value(h, t)
        dw = sqrt_eta * rng.standard_normal(system.dim)
        x = system.domain.project(x + eta * h + G @ dw)
        _check_state(x, t + eta)
        if (i + 1) % cfg.record_stride == 0 or i + 1 == cfg.n_steps:
            times.append((i + 1) * eta)
            states.append(x.copy())
    return Trajectory(times=np.asarray(times), states=np.asarray(states))


def default_delta_couple(x0, y0, ip):
    return 1e-8 * (1.0 + ip.norm(np.asarray(x0, float) - np.asarray(y0, float)))


def _bridge_crossing_prob(s_old, s_new, v, eta):
    """P(a Brownian bridge from s_old to s_new > 0 hits 0), variance v*eta."""
    if v <= 0:
        return 0.0
    return math.exp(-2.0 * s_old * s_new / (v * eta))


def simulate_coupled(system, x0, y0, cfg, ip, traj_index=0, delta_couple=None,
                     rho=None):
    """Reflection coupling of two copies of the system.

    Until the coupling fires, the second copy receives the mirrored
    noise (I - 2 u u*) G dw with u the unit separation direction in the
    given inner product. Coupling fires when the separation drops below
    ``delta_couple``, when the signed separation along u crosses zero
    within a step, or by a Brownian-bridge crossing draw; after firing
    the copies are glued (bit-identical states).
    """
    x = _check_initial(system, x0, "x0")
    y = _check_initial(system, y0, "y0")
    if ip.dim != system.dim:
        raise DimensionMismatch("inner product dimension does not match system")
    if delta_couple is None:
        delta_couple = default_delta_couple(x, y, ip)

    rng = _rng(cfg.seed, traj_index)
    eta = cfg.step
    sqrt_eta = math.sqrt(eta)
    G = system.diffusion
    W = ip.weight

    coupled = False
    coupling_time = None

    def maybe_couple_threshold(t):
        nonlocal coupled, coupling_time, y
        if not coupled and ip.norm(x - y) <= delta_couple:
            coupled = True
            coupling_time = t
            y = x.copy()

    maybe_couple_threshold(0.0)
    times = [0.0]
    xs = [x.copy()]
    ys = [y.copy()]
    rhos = [rho(x, y)] if rho is not None else None

    for i in range(cfg.n_steps):
        t = i * eta
        hx = np.asarray(system.drift(x), dtype=float)
        _check_drift_value(hx, t)
        dw = sqrt_eta * rng.standard_normal(system.dim)
        noise = G @ dw
        if coupled:
            x = system.domain.project(x + eta * hx + noise)
            y = x.copy()
        else:
            hy = np.asarray(system.drift(y), dtype=float)
            _check_drift_value(hy, t)
            diff = x - y
            r = ip.norm(diff)
            u = diff / r
            wu = W @ u
            noise_y = noise - 2.0 * u * float(wu @ noise)
            x = system.domain.project(x + eta * hx + noise)
            y = system.domain.project(y + eta * hy + noise_y)
            s_new = float(wu @ (x - y))
            if s_new <= 0.0:
                fire = True
            else:
                v = 4.0 * float(np.sum((G.T @ wu) ** 2))
                fire = rng.uniform() < _bridge_crossing_prob(r, s_new, v, eta)
            if fire:
                coupled = True
                coupling_time = t + eta
                y = x.copy()
        _check_state(x, t + eta)
        maybe_couple_threshold(t + eta)
        if (i + 1) % cfg.record_stride == 0 or i + 1 == cfg.n_steps:
            times.append((i + 1) * eta)
            xs.append(x.copy())
            ys.append(y.copy())
            if rhos is not None:
                rhos.append(rho(x, y))

    return CoupledTrajectory(
        times=np.asarray(times),
        x_states=np.asarray(xs),
        y_states=np.asarray(ys),
        coupling_time=coupling_time,
        metric_values=np.asarray(rhos) if rhos is not None else None,
    )


def _probe_indices(probe_times, cfg):
    idx = []
    for t in probe_times:
        k = int(round(t / cfg.step))
        if k < 0 or k > cfg.n_steps or abs(k * cfg.step - t) > 1e-9 * max(1.0, t):
            raise ValueError(f"probe time {t} is not a multiple of the step size "
                             f"within the horizon")
        idx.append(k)
    return idx


def simulate_ensemble(system, X0, cfg, probe_times=None):
    """Vectorized projected Euler over a batch of initial states.

    Returns an array of states with shape (n_probes, n_replicas, dim).
    Noise comes from a single counter-based stream keyed by the seed,
    with one (n_replicas, dim) block drawn per step.
    """
    X0 = np.asarray(X0, dtype=float)
    if X0.ndim != 2 or X0.shape[1] != system.dim:
        raise DimensionMismatch("X0 must have shape (n_replicas, dim)")
    if not np.all(system.domain.contains_many(X0, DOMAIN_TOL)):
        raise InitialStateOutsideDomain("some initial states are outside the domain")
    if probe_times is None:
        probe_times = [cfg.horizon]
    idx = _probe_indices(probe_times, cfg)

    rng = _rng(cfg.seed)
    eta = cfg.step
    sqrt_eta = math.sqrt(eta)
    G = system.diffusion

    X = X0.copy()
    out = np.empty((len(idx), *X.shape))
    for j, k in enumerate(idx):
        if k == 0:
            out[j] = X
    for i in range(cfg.n_steps):
        t = i * eta
        H = system.drift_many(X)
        _check_drift_value(H, t)
        dw = sqrt_eta * rng.standard_normal(X.shape)
        X = system.domain.project_many(X + eta * H + dw @ G.T)
        _check_state(X, t + eta)
        for j, k in enumerate(idx):
            if k == i + 1:
                out[j] = X
    return out


def simulate_coupled_ensemble(system, X0, Y0, cfg, ip, probe_times,
                              delta_couple=None, rho_many=None):
    """Vectorized reflection coupling across a batch of replica pairs."""
    X0 = np.asarray(X0, dtype=float)
    Y0 = np.asarray(Y0, dtype=float)
    if X0.shape != Y0.shape or X0.ndim != 2 or X0.shape[1] != system.dim:
        raise DimensionMismatch("X0 and Y0 must both have shape (n_replicas, dim)")
    for Z, name in ((X0, "X0"), (Y0, "Y0")):
        if not np.all(system.domain.contains_many(Z, DOMAIN_TOL)):
            raise InitialStateOutsideDomain(f"some {name} rows are outside the domain")
    if ip.dim != system.dim:
        raise DimensionMismatch("inner product dimension does not match system")
    if delta_couple is None:
        r0 = ip.norm_many(X0 - Y0)
        delta_couple = 1e-8 * (1.0 + float(np.max(r0)))
    idx = _probe_indices(probe_times, cfg)

    rng = _rng(cfg.seed)
    eta = cfg.step
    sqrt_eta = math.sqrt(eta)
    G = system.diffusion
    W = ip.weight
    k_rep = X0.shape[0]

    X = X0.copy()
    Y = Y0.copy()
    coupled = np.zeros(k_rep, dtype=bool)
    coupling_times = np.full(k_rep, np.inf)

    def threshold_fire(t):
        if np.all(coupled):
            return
        r = ip.norm_many(X - Y)
        newly = ~coupled & (r <= delta_couple)
        if np.any(newly):
            Y[newly] = X[newly]
            coupling_times[newly] = t
            coupled[newly] = True

    threshold_fire(0.0)
    x_probes = np.empty((len(idx), k_rep, system.dim))
    y_probes = np.empty_like(x_probes)

    def record(j):
        x_probes[j] = X
        y_probes[j] = Y

    for j, k in enumerate(idx):
        if k == 0:
            record(j)

    for i in range(cfg.n_steps):
        t = i * eta
        Hx = system.drift_many(X)
        _check_drift_value(Hx, t)
        dw = sqrt_eta * rng.standard_normal(X.shape)
        ub = rng.uniform(size=k_rep)  # drawn every step to keep streams aligned
        noise_x = dw @ G.T
        noise_y = noise_x.copy()

        active = ~coupled
        if np.any(active):
            Hy = system.drift_many(Y)
            _check_drift_value(Hy, t)
            diff = X[active] - Y[active]
            r = ip.norm_many(diff)
            u = diff / r[:, None]
            wu = u @ W  # rows are (W u)^T
            c = np.sum(wu * noise_x[active], axis=1)
            noise_y[active] = noise_x[active] - 2.0 * u * c[:, None]
        else:
            Hy = Hx

        X = system.domain.project_many(X + eta * Hx + noise_x)
        Ynew = system.domain.project_many(Y + eta * Hy + noise_y)
        Ynew[coupled] = X[coupled]
        Y = Ynew
        _check_state(X, t + eta)

        if np.any(active):
            s_new = np.sum(wu * (X[active] - Y[active]), axis=1)
            v = 4.0 * np.sum((wu @ G) ** 2, axis=1)
            with np.errstate(over="ignore", divide="ignore"):
                p = np.exp(-2.0 * r * np.maximum(s_new, 0.0) / (v * eta))
            fire = (s_new <= 0.0) | (ub[active] < p)
            if np.any(fire):
                rows = np.flatnonzero(active)[fire]
                Y[rows] = X[rows]
                coupling_times[rows] = t + eta
                coupled[rows] = True
        threshold_fire(t + eta)

        for j, k in enumerate(idx):
            if k == i + 1:
                record(j)

    rho_values = None
    if rho_many is not None:
        rho_values = np.stack(
            [rho_many(x_probes[j], y_probes[j]) for j in range(len(idx))]
        )
    return CoupledEnsembleResult(
        probe_times=np.asarray(probe_times, dtype=float),
        x_probes=x_probes,
        y_probes=y_probes,
        coupling_times=coupling_times,
        rho_values=rho_values,
    )


def trajectory_to_csv(traj, path):
    dim = traj.states.shape[1]
    with open(path, "w", newline="\n") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["t"] + [f"x{i + 1}" for i in range(dim)])
        for t, x in zip(traj.times, traj.states):
            writer.writerow([repr(float(t))] + [repr(float(v)) for v in x])


def coupled_to_csv(coupled, csv_path, json_path=None):
    dim = coupled.x_states.shape[1]
    header = (["t"] + [f"x{i + 1}" for i in range(dim)]
              + [f"y{i + 1}" for i in range(dim)] + ["rho"])
    n = len(coupled.times)
    rhos = coupled.metric_values
    with open(csv_path, "w", newline="\n") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for i in range(n):
            row = ([repr(float(coupled.times[i]))]
                   + [repr(float(v)) for v in coupled.x_states[i]]
                   + [repr(float(v)) for v in coupled.y_states[i]]
                   + [repr(float(rhos[i])) if rhos is not None else ""])
            writer.writerow(row)
    if json_path is not None:
        ct = coupled.coupling_time
        with open(json_path, "w") as fh:
            json.dump({"coupling_time": ct}, fh, sort_keys=True)
            fh.write("\n")
