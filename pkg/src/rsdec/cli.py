"""Config-driven command line front end.

Subcommands: certify, simulate, couple, convergence. Every command is a
pure function of (config file, seed): reruns produce byte-identical
artifacts. Exit codes: 0 success, 1 config error, 2 assumption
violation, 3 runtime simulation failure.
"""

import argparse
import csv
import json
import math
import os
import sys

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from . import contraction, mrac, sim
from .convex import set_from_config
from .errors import (ConfigError, DriftNaN, InfiniteR2, NoFiniteM, NotHurwitz,
                     RsdecError)
from .linalg import InnerProduct

_ALLOWED_KEYS = {
    "system": {
        "type", "builtin", "dim", "drift", "rate", "A", "B", "Q", "diffusion",
        "domain", "kappa", "alpha", "C", "lambda", "x0", "theta0", "features",
        "K_set", "theta_bar", "G_x", "G_theta", "lipschitz_L",
    },
    "sim": {"step", "horizon", "seed", "replicas", "record_stride"},
    "output": {"directory", "stride"},
    "certificate": {"R1", "R2"},
    "couple": {"x0", "y0", "delta_couple"},
    "convergence": {"probe_times", "x0", "y0", "rate_multiplier",
                    "bias_replicas"},
}


def load_config(path):
    try:
        with open(path, "rb") as fh:
            cfg = tomllib.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"config parse error: {exc}") from exc
    for table, content in cfg.items():
        if table not in _ALLOWED_KEYS:
            raise ConfigError(f"unknown config table [{table}]")
        if not isinstance(content, dict):
            raise ConfigError(f"[{table}] must be a table")
        unknown = set(content) - _ALLOWED_KEYS[table]
        if unknown:
            raise ConfigError(
                f"unknown keys in [{table}]: {', '.join(sorted(unknown))}"
            )
    if "system" not in cfg or "sim" not in cfg:
        raise ConfigError("config requires [system] and [sim] tables")
    return cfg


def sim_config(cfg, seed_override=None):
    s = cfg["sim"]
    try:
        seed = int(s["seed"])
        if seed_override is not None:
            seed = int(seed_override)
        stride = int(cfg.get("output", {}).get(
            "stride", s.get("record_stride", 1)))
        return sim.SimConfig(
            step=float(s["step"]),
            horizon=float(s["horizon"]),
            seed=seed,
            record_stride=stride,
        )
    except KeyError as exc:
        raise ConfigError(f"[sim] missing key {exc}") from exc
    except ValueError as exc:
        raise ConfigError(f"invalid [sim] values: {exc}") from exc


_GENERIC_DRIFTS = {"zero", "ou", "linear"}


class BuiltSystem:
    """System plus the certificate inputs derivable from the config."""

    def __init__(self, system, x0, growth=None, lyap=None,
                 domain_diameter=None, spec=None, derived=None):
        self.system = system
        self.x0 = x0
        self.growth = growth
        self.lyap = lyap
        self.domain_diameter = domain_diameter
        self.spec = spec
        self.derived = derived

    @property
    def ip(self):
        if self.lyap is not None:
            return self.lyap.norm
        return InnerProduct.euclidean(self.system.dim)

    def require_certificate_inputs(self):
        if self.growth is None or self.lyap is None:
            raise ConfigError(
                "this command needs growth/Lyapunov data: set kappa, alpha, "
                "C and lambda in [system] (mrac systems derive them)"
            )


def build_system(cfg):
    blk = cfg["system"]
    kind = blk.get("type")
    if kind == "mrac":
        if blk.get("builtin") == "experiment_scale":
            spec = mrac.experiment_scale_spec()
        elif "builtin" in blk:
            raise ConfigError(f"unknown builtin '{blk['builtin']}'")
        else:
            spec = mrac.mrac_spec_from_config(blk)
        system, derived = mrac.closed_loop_system(spec)
        x_part = np.asarray(blk.get("x0", np.zeros(spec.n)), dtype=float)
        theta_part = np.asarray(
            blk.get("theta0", spec.K_set.project(np.zeros(spec.m))),
            dtype=float,
        )
        x0 = np.concatenate([x_part, theta_part])
        return BuiltSystem(system, x0, growth=derived.growth,
                           lyap=derived.lyap,
                           domain_diameter=derived.domain.diameter(),
                           spec=spec, derived=derived)
    if kind != "generic":
        raise ConfigError("system type must be 'mrac' or 'generic'")

    try:
        dim = int(blk["dim"])
        drift_name = blk["drift"]
        G = np.asarray(blk["diffusion"], dtype=float)
        domain = set_from_config(blk["domain"])
    except KeyError as exc:
        raise ConfigError(f"[system] missing key {exc}") from exc
    if drift_name not in _GENERIC_DRIFTS:
        raise ConfigError(f"unknown drift '{drift_name}'; "
                          f"choose from {sorted(_GENERIC_DRIFTS)}")
    if drift_name == "zero":
        drift = lambda x: np.zeros_like(np.asarray(x, dtype=float))
    elif drift_name == "ou":
        rate = float(blk.get("rate", 1.0))
        drift = lambda x: -rate * np.asarray(x, dtype=float)
    else:
        A = np.asarray(blk["A"], dtype=float)
        drift = lambda x: np.asarray(x, dtype=float) @ A.T
    try:
        system = sim.RsdeSystem(dim=dim, drift=drift, diffusion=G,
                                domain=domain, vectorized=True)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    x0 = np.asarray(blk.get("x0", np.zeros(dim)), dtype=float)

    growth = lyap = None
    if all(k in blk for k in ("C", "lambda")):
        kappa_val = float(blk.get("kappa", 0.0))
        alpha = float(blk.get("alpha", 0.0))
        growth = contraction.GrowthCondition(
            kappa=lambda r: kappa_val + 0.0 * r,
            alpha=alpha,
            s_kappa_primitive=lambda r: 0.5 * kappa_val * r * r,
            vectorized=True,
        )
        lyap = contraction.LyapunovSpec.quadratic_profile(
            C=float(blk["C"]), lam=float(blk["lambda"]),
            norm=InnerProduct.euclidean(dim),
        )
    return BuiltSystem(system, x0, growth=growth, lyap=lyap,
                       domain_diameter=domain.diameter())


def build_cert(built, cfg):
    built.require_certificate_inputs()
    over = cfg.get("certificate", {})
    return contraction.build_certificate(
        built.growth, built.lyap, built.system.diffusion,
        built.domain_diameter,
        r1_override=over.get("R1"), r2_override=over.get("R2"),
    )


def _out_dir(cfg, args):
    path = args.out or cfg.get("output", {}).get("directory", ".")
    os.makedirs(path, exist_ok=True)
    return path


def _write_json(path, payload):
    with open(path, "w") as fh:
        json.dump(payload, fh, sort_keys=True, indent=2)
        fh.write("\n")


# ---------------------------------------------------------------------------
# commands

def cmd_certify(cfg, args):
    built = build_system(cfg)
    cert = build_cert(built, cfg)
    out = _out_dir(cfg, args)
    report = contraction.certificate_report(cert)
    _write_json(os.path.join(out, "certificate.json"), report)
    a = cert.rate_a
    rows = [
        ("R1", cert.R1), ("M", cert.M), ("R2", cert.R2),
        ("sigma_min", cert.sigma_min), ("xi", cert.xi), ("beta", cert.beta),
        ("gamma", cert.gamma), ("rate_a", a),
        ("tv_half_life", math.log(2.0) / a),
        ("w2_half_life", 2.0 * math.log(2.0) / a),
    ]
    width = max(len(name) for name, _ in rows)
    for name, value in rows:
        print(f"{name:<{width}}  {value:.10g}")
    if cert.flags:
        print("flags: " + ", ".join(cert.flags))
    return 0


def cmd_simulate(cfg, args):
    built = build_system(cfg)
    scfg = sim_config(cfg, args.seed)
    traj = sim.simulate(built.system, built.x0, scfg)
    out = _out_dir(cfg, args)
    sim.trajectory_to_csv(traj, os.path.join(out, "trajectory.csv"))
    if built.lyap is not None:
        v = built.lyap.value_many(traj.states)
    else:
        v = np.sum(traj.states ** 2, axis=1) + 1.0
    final = " ".join(f"{x:.10g}" for x in traj.states[-1])
    print(f"final_state: {final}")
    print(f"V_min: {np.min(v):.10g}  V_max: {np.max(v):.10g}")
    return 0


def cmd_couple(cfg, args):
    built = build_system(cfg)
    scfg = sim_config(cfg, args.seed)
    cpl = cfg.get("couple", {})
    x0 = np.asarray(cpl.get("x0", built.x0), dtype=float)
    y0 = np.asarray(cpl.get("y0", built.x0), dtype=float)
    delta = cpl.get("delta_couple")
    replicas = int(cfg["sim"].get("replicas", 1))
    ip = built.ip

    rho = None
    if built.growth is not None and built.lyap is not None:
        try:
            cert = build_cert(built, cfg)
            lyap = built.lyap
            rho = lambda a, b: contraction.eval_rho(cert, lyap, a, b)
        except RsdecError:
            rho = None

    out = _out_dir(cfg, args)
    first = sim.simulate_coupled(built.system, x0, y0, scfg, ip,
                                 traj_index=0, delta_couple=delta, rho=rho)
    sim.coupled_to_csv(first, os.path.join(out, "coupled.csv"),
                       os.path.join(out, "coupling_time.json"))

    X0 = np.tile(x0, (replicas, 1))
    Y0 = np.tile(y0, (replicas, 1))
    result = sim.simulate_coupled_ensemble(
        built.system, X0, Y0, scfg, ip, probe_times=[scfg.horizon],
        delta_couple=delta,
    )
    taus = result.coupling_times
    grid = np.linspace(0.0, scfg.horizon, 101)
    survival = [float(np.mean(taus > t)) for t in grid]
    coupled_frac = float(np.mean(np.isfinite(taus)))
    payload = {
        "replicas": replicas,
        "coupling_times": [None if math.isinf(t) else float(t) for t in taus],
        "survival_grid_t": [float(t) for t in grid],
        "survival": survival,
        "fraction_coupled": coupled_frac,
    }
    _write_json(os.path.join(out, "coupling_times.json"), payload)
    print(f"fraction coupled by T={scfg.horizon:g}: {coupled_frac:.4f}")
    return 0


def bias_allowance(built, cfg, scfg, x0, y0, probe_times, replicas):
    """Richardson estimate of the projected-Euler discretization bias.

    The coupled estimator has weak bias ~ c sqrt(step); comparing runs
    at step and step/2 gives c, and the allowance is c sqrt(step). Only
    the part of the gap that Monte Carlo noise cannot explain counts as
    bias, so a well-resolved step yields a near-zero allowance and the
    rate check keeps its power.
    """
    ip = built.ip
    X0 = np.tile(x0, (replicas, 1))
    Y0 = np.tile(y0, (replicas, 1))
    means, errs = [], []
    for step in (scfg.step, scfg.step / 2.0):
        c = sim.SimConfig(step=step, horizon=scfg.horizon,
                          seed=scfg.seed + 1, record_stride=1)
        res = sim.simulate_coupled_ensemble(
            built.system, X0, Y0, c, ip, probe_times=probe_times)
        vals = [contraction.rho_many(built._cert, built.lyap,
                                     res.x_probes[j], res.y_probes[j])
                for j in range(len(probe_times))]
        means.append(np.array([np.mean(v) for v in vals]))
        errs.append(np.array([np.std(v, ddof=1) / math.sqrt(replicas)
                              for v in vals]))
    gap = np.abs(means[0] - means[1])
    noise = 3.0 * np.sqrt(errs[0] ** 2 + errs[1] ** 2)
    bias = float(np.max(np.maximum(gap - noise, 0.0)))
    return bias / (1.0 - 1.0 / math.sqrt(2.0))


def cmd_convergence(cfg, args):
    built = build_system(cfg)
    scfg = sim_config(cfg, args.seed)
    cert = build_cert(built, cfg)
    built._cert = cert
    conv = cfg.get("convergence", {})
    x0 = np.asarray(conv.get("x0", built.x0), dtype=float)
    y0 = np.asarray(conv.get("y0", built.x0), dtype=float)
    probe_times = [float(t) for t in conv.get(
        "probe_times", [0.0, scfg.horizon])]
    rate_mult = float(conv.get("rate_multiplier", 1.0))
    replicas = int(cfg["sim"].get("replicas", 100))
    bias_replicas = int(conv.get("bias_replicas", min(replicas, 2000)))

    rows = contraction.estimate_W_rho(
        built.system, cert, built.lyap, x0, y0, scfg, replicas, probe_times)
    allowance = bias_allowance(built, cfg, scfg, x0, y0, probe_times,
                               bias_replicas)
    rho0 = contraction.eval_rho(cert, built.lyap, x0, y0)
    a_eff = cert.rate_a * rate_mult

    out = _out_dir(cfg, args)
    print(f"bias_allowance: {allowance:.6g}   rate: {a_eff:.6g}")
    with open(os.path.join(out, "convergence.csv"), "w", newline="\n") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["t", "rho_mean", "stderr", "certified_bound",
                         "status"])
        any_fail = False
        for t, mean, stderr in rows:
            bound = math.exp(-a_eff * t) * rho0
            ok = mean <= bound + 3.0 * stderr + allowance
            any_fail |= not ok
            status = "PASS" if ok else "FAIL"
            writer.writerow([repr(t), repr(mean), repr(stderr), repr(bound),
                             status])
            print(f"t={t:<8g} rho={mean:<12.6g} bound={bound:<12.6g} {status}")
    return 0


# ---------------------------------------------------------------------------

def make_parser():
    parser = argparse.ArgumentParser(
        prog="rsdec",
        description="Reflected SDE simulation and contraction certificates",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in (("certify", cmd_certify), ("simulate", cmd_simulate),
                     ("couple", cmd_couple), ("convergence", cmd_convergence)):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True)
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--threads", type=int, default=None,
                       help="resource hint; results do not depend on it")
        p.add_argument("--out", default=None)
        p.set_defaults(fn=fn)
    return parser


def main(argv=None):
    args = make_parser().parse_args(argv)
    if args.seed is None and "RSDEC_SEED" in os.environ:
        try:
            args.seed = int(os.environ["RSDEC_SEED"])
        except ValueError:
            print("error: RSDEC_SEED must be an integer", file=sys.stderr)
            return 1
    try:
        cfg = load_config(args.config)
        return args.fn(cfg, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except (NoFiniteM, InfiniteR2, NotHurwitz) as exc:
        print(f"assumption violation ({type(exc).__name__}): {exc}",
              file=sys.stderr)
        return 2
    except DriftNaN as exc:
        print(f"simulation failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
