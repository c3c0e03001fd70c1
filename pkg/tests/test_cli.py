import json
import math

import numpy as np
import pytest
from scipy import stats

from rsdec.cli import main

TRIVIAL_CERT = """
[system]
type = "generic"
dim = 1
drift = "zero"
diffusion = [[1.0]]
domain = {{ type = "wholespace", dim = 1 }}
kappa = 0.0
alpha = 0.0
C = 10.0
lambda = 10.0

[certificate]
R1 = 1.0
R2 = 2.0

[sim]
step = 0.001
horizon = 1.0
seed = {seed}
"""

OU_BASE = """
[system]
type = "generic"
dim = 1
drift = "ou"
rate = 1.0
diffusion = [[1.0]]
domain = {{ type = "box", lower = [-2.0], upper = [2.0] }}
kappa = 0.0
alpha = 0.0
C = 3.0
lambda = 2.0
x0 = [-1.5]

[sim]
step = 0.01
horizon = 2.0
seed = {seed}
replicas = {replicas}

[convergence]
probe_times = [0.0, 1.0, 2.0]
x0 = [-1.5]
y0 = [1.5]
bias_replicas = 200
{extra}
"""

COUPLE = """
[system]
type = "generic"
dim = 1
drift = "zero"
diffusion = [[1.0]]
domain = {{ type = "wholespace", dim = 1 }}

[sim]
step = 0.001
horizon = 1.0
seed = 5
replicas = {replicas}

[couple]
x0 = [{x0}]
y0 = [{y0}]
"""


def write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


class TestCertify:
    def test_trivial_constants(self, tmp_path, capsys):
        cfg = write(tmp_path, "c.toml", TRIVIAL_CERT.format(seed=1))
        assert main(["certify", "--config", cfg, "--out", str(tmp_path)]) == 0
        report = json.loads((tmp_path / "certificate.json").read_text())
        assert report["xi"] == pytest.approx(1.0, rel=1e-9)
        assert report["beta"] == pytest.approx(0.5, rel=1e-9)
        assert report["rate_a"] == pytest.approx(0.25, rel=1e-9)
        out = capsys.readouterr().out
        assert "rate_a" in out and "tv_half_life" in out

    def test_byte_identical_rerun(self, tmp_path):
        cfg = write(tmp_path, "c.toml", TRIVIAL_CERT.format(seed=1))
        main(["certify", "--config", cfg, "--out", str(tmp_path / "a")])
        main(["certify", "--config", cfg, "--out", str(tmp_path / "b")])
        assert (tmp_path / "a" / "certificate.json").read_bytes() == \
            (tmp_path / "b" / "certificate.json").read_bytes()


class TestExitCodes:
    def test_unknown_key_is_config_error(self, tmp_path, capsys):
        cfg = write(tmp_path, "bad.toml",
                    '[system]\ntype = "generic"\nbogus = 1\n'
                    "[sim]\nstep = 0.1\nhorizon = 1.0\nseed = 1\n")
        assert main(["certify", "--config", cfg]) == 1
        assert "bogus" in capsys.readouterr().err

    def test_missing_file(self, tmp_path):
        assert main(["certify", "--config", str(tmp_path / "nope.toml")]) == 1

    def test_malformed_toml(self, tmp_path):
        cfg = write(tmp_path, "bad.toml", "[system\n")
        assert main(["certify", "--config", cfg]) == 1

    def test_assumption_violation_is_exit_2(self, tmp_path, capsys):
        cfg = write(tmp_path, "hurwitz.toml", """
[system]
type = "mrac"
A = [[1.0]]
B = [[1.0]]
Q = [[2.0]]
K_set = { type = "box", lower = [-1.0], upper = [1.0] }
theta_bar = [0.0]
G_x = [[1.0]]
G_theta = [[1.0]]

[sim]
step = 0.01
horizon = 1.0
seed = 1
""")
        assert main(["certify", "--config", cfg]) == 2
        assert "NotHurwitz" in capsys.readouterr().err

    def test_explosion_is_exit_3(self, tmp_path, capsys):
        cfg = write(tmp_path, "boom.toml", """
[system]
type = "generic"
dim = 1
drift = "linear"
A = [[5.0]]
diffusion = [[1.0]]
domain = { type = "wholespace", dim = 1 }
x0 = [1.0]

[sim]
step = 0.01
horizon = 8.0
seed = 1
""")
        assert main(["simulate", "--config", cfg, "--out", str(tmp_path)]) == 3


class TestSimulate:
    def test_zero_horizon_single_row(self, tmp_path):
        cfg = write(tmp_path, "z.toml", """
[system]
type = "generic"
dim = 1
drift = "zero"
diffusion = [[1.0]]
domain = { type = "wholespace", dim = 1 }
x0 = [0.25]

[sim]
step = 0.1
horizon = 0.0
seed = 1
""")
        assert main(["simulate", "--config", cfg, "--out", str(tmp_path)]) == 0
        lines = (tmp_path / "trajectory.csv").read_text().strip().split("\n")
        assert lines == ["t,x1", "0.0,0.25"]

    def test_seed_flag_overrides_config(self, tmp_path):
        cfg = write(tmp_path, "s.toml", TRIVIAL_CERT.format(seed=1))
        main(["simulate", "--config", cfg, "--out", str(tmp_path / "a")])
        main(["simulate", "--config", cfg, "--seed", "99",
              "--out", str(tmp_path / "b")])
        assert (tmp_path / "a" / "trajectory.csv").read_bytes() != \
            (tmp_path / "b" / "trajectory.csv").read_bytes()

    def test_env_seed_override(self, tmp_path, monkeypatch):
        cfg = write(tmp_path, "s.toml", TRIVIAL_CERT.format(seed=1))
        main(["simulate", "--config", cfg, "--out", str(tmp_path / "a")])
        monkeypatch.setenv("RSDEC_SEED", "99")
        main(["simulate", "--config", cfg, "--out", str(tmp_path / "b")])
        main(["simulate", "--config", cfg, "--seed", "99",
              "--out", str(tmp_path / "c")])
        assert (tmp_path / "a" / "trajectory.csv").read_bytes() != \
            (tmp_path / "b" / "trajectory.csv").read_bytes()
        # the flag and the env var select the same stream
        assert (tmp_path / "b" / "trajectory.csv").read_bytes() == \
            (tmp_path / "c" / "trajectory.csv").read_bytes()

    def test_bad_env_seed(self, tmp_path, monkeypatch):
        cfg = write(tmp_path, "s.toml", TRIVIAL_CERT.format(seed=1))
        monkeypatch.setenv("RSDEC_SEED", "not-a-number")
        assert main(["simulate", "--config", cfg]) == 1


class TestCouple:
    def test_identical_initials_all_tau_zero(self, tmp_path):
        cfg = write(tmp_path, "c.toml",
                    COUPLE.format(replicas=50, x0=0.5, y0=0.5))
        assert main(["couple", "--config", cfg, "--out", str(tmp_path)]) == 0
        data = json.loads((tmp_path / "coupling_times.json").read_text())
        assert data["coupling_times"] == [0.0] * 50
        assert data["survival"][0] == 0.0
        sidecar = json.loads((tmp_path / "coupling_time.json").read_text())
        assert sidecar["coupling_time"] == 0.0

    def test_survival_curve_matches_first_passage_law(self, tmp_path):
        n = 2000
        cfg = write(tmp_path, "c.toml", COUPLE.format(replicas=n, x0=0.0, y0=1.0))
        assert main(["couple", "--config", cfg, "--out", str(tmp_path)]) == 0
        data = json.loads((tmp_path / "coupling_times.json").read_text())
        grid = np.array(data["survival_grid_t"])
        surv = np.array(data["survival"])
        for t in (0.25, 0.5, 1.0):
            j = int(np.argmin(np.abs(grid - t)))
            p = 2.0 * (1.0 - stats.norm.cdf(1.0 / (2.0 * math.sqrt(grid[j]))))
            se = math.sqrt(p * (1 - p) / n)
            assert abs((1.0 - surv[j]) - p) < 4.0 * se


class TestConvergence:
    def test_pass_rows_and_csv_shape(self, tmp_path, capsys):
        cfg = write(tmp_path, "o.toml",
                    OU_BASE.format(seed=42, replicas=2000, extra=""))
        assert main(["convergence", "--config", cfg, "--out", str(tmp_path)]) == 0
        lines = (tmp_path / "convergence.csv").read_text().strip().split("\n")
        assert lines[0] == "t,rho_mean,stderr,certified_bound,status"
        assert len(lines) == 4
        assert all(line.endswith("PASS") for line in lines[1:])

    def test_rate_override_produces_fail(self, tmp_path):
        cfg = write(tmp_path, "o.toml",
                    OU_BASE.format(seed=42, replicas=2000,
                                   extra="rate_multiplier = 10.0"))
        assert main(["convergence", "--config", cfg, "--out", str(tmp_path)]) == 0
        lines = (tmp_path / "convergence.csv").read_text().strip().split("\n")
        assert any(line.endswith("FAIL") for line in lines[1:])

    def test_point_mass_equal_initials_all_zero(self, tmp_path):
        cfg = OU_BASE.format(seed=1, replicas=100, extra="")
        cfg = cfg.replace("y0 = [1.5]", "y0 = [-1.5]")
        path = write(tmp_path, "o.toml", cfg)
        assert main(["convergence", "--config", path, "--out", str(tmp_path)]) == 0
        lines = (tmp_path / "convergence.csv").read_text().strip().split("\n")
        for line in lines[1:]:
            _, mean, _, _, status = line.split(",")
            assert float(mean) == 0.0
            assert status == "PASS"

    def test_byte_identical_rerun(self, tmp_path):
        cfg = write(tmp_path, "o.toml",
                    OU_BASE.format(seed=42, replicas=500, extra=""))
        main(["convergence", "--config", cfg, "--out", str(tmp_path / "a")])
        main(["convergence", "--config", cfg, "--out", str(tmp_path / "b")])
        assert (tmp_path / "a" / "convergence.csv").read_bytes() == \
            (tmp_path / "b" / "convergence.csv").read_bytes()
