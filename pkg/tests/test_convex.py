import math

import numpy as np
import pytest

from rsdec.convex import (Ball, Box, Polygon2D, Product, WholeSpace,
                          set_from_config)
from rsdec.errors import ConfigError

PENTAGON = Polygon2D(np.array([
    [-4.0, -4.0], [4.0, -4.0], [6.0, 0.0], [0.0, 5.0], [-6.0, 0.0],
]))

SETS = [
    WholeSpace(2),
    Box(lower=[-1.0, 0.0], upper=[2.0, 3.0]),
    Ball(center=[1.0, -1.0], radius=2.0),
    PENTAGON,
    Product((Box(lower=[0.0], upper=[1.0]), Ball(center=[0.0, 0.0], radius=1.0))),
]


class TestClosedForms:
    def test_box_clamp(self):
        box = Box(lower=[-1.0, 0.0], upper=[2.0, 3.0])
        assert np.allclose(box.project([5.0, -2.0]), [2.0, 0.0])
        assert np.allclose(box.project([0.5, 1.5]), [0.5, 1.5])
        assert box.diameter() == pytest.approx(np.linalg.norm([3.0, 3.0]))

    def test_ball_radial(self):
        ball = Ball(center=[0.0, 0.0], radius=1.0)
        assert np.allclose(ball.project([3.0, 4.0]), [0.6, 0.8])
        assert np.allclose(ball.project([0.1, 0.2]), [0.1, 0.2])
        assert ball.diameter() == 2.0

    def test_wholespace_identity(self):
        ws = WholeSpace(3)
        y = np.array([1e9, -2.0, 0.0])
        assert np.array_equal(ws.project(y), y)
        assert math.isinf(ws.diameter())

    def test_polygon_vertices_fixed(self):
        for v in PENTAGON.vertices:
            assert np.allclose(PENTAGON.project(v), v)

    def test_polygon_diameter(self):
        assert PENTAGON.diameter() == pytest.approx(12.0)


class TestPolygonOracle:
    def test_grid_search_oracle(self):
        # brute force nearest point over a dense rasterization of the set
        rng = np.random.default_rng(10)
        xs = np.linspace(-6.5, 6.5, 261)
        ys = np.linspace(-4.5, 5.5, 201)
        XX, YY = np.meshgrid(xs, ys)
        grid = np.column_stack([XX.ravel(), YY.ravel()])
        grid = grid[PENTAGON.contains_many(grid, 1e-12)]
        for _ in range(40):
            y = rng.uniform(-12, 12, size=2)
            p = PENTAGON.project(y)
            d_proj = np.linalg.norm(y - p)
            d_grid = np.min(np.linalg.norm(grid - y, axis=1))
            assert d_proj <= d_grid + 1e-3
            # the projection itself must lie in the set
            assert PENTAGON.contains(p, 1e-9)


class TestInvariants:
    @pytest.mark.parametrize("cset", SETS, ids=lambda s: type(s).__name__)
    def test_nonexpansive(self, cset):
        rng = np.random.default_rng(11)
        Y1 = rng.uniform(-10, 10, size=(1000, cset.dim))
        Y2 = rng.uniform(-10, 10, size=(1000, cset.dim))
        d_out = np.linalg.norm(cset.project_many(Y1) - cset.project_many(Y2),
                               axis=1)
        d_in = np.linalg.norm(Y1 - Y2, axis=1)
        assert np.all(d_out <= d_in + 1e-9)

    @pytest.mark.parametrize("cset", SETS, ids=lambda s: type(s).__name__)
    def test_normal_cone_inequality(self, cset):
        # <x - proj(y), y - proj(y)> <= 0 for every x in the set
        rng = np.random.default_rng(12)
        X = cset.project_many(rng.uniform(-5, 5, size=(200, cset.dim)))
        for y in rng.uniform(-10, 10, size=(50, cset.dim)):
            p = cset.project(y)
            vals = (X - p) @ (y - p)
            assert np.all(vals <= 1e-9)

    @pytest.mark.parametrize("cset", SETS, ids=lambda s: type(s).__name__)
    def test_idempotent_and_contained(self, cset):
        rng = np.random.default_rng(13)
        Y = rng.uniform(-10, 10, size=(200, cset.dim))
        P = cset.project_many(Y)
        assert np.allclose(cset.project_many(P), P, atol=1e-9)
        assert np.all(cset.contains_many(P, 1e-9))


class TestProduct:
    def test_projection_concatenates(self):
        box = Box(lower=[0.0], upper=[1.0])
        ball = Ball(center=[0.0, 0.0], radius=1.0)
        prod = Product((box, ball))
        rng = np.random.default_rng(14)
        Y = rng.uniform(-5, 5, size=(100, 3))
        P = prod.project_many(Y)
        assert np.array_equal(P[:, :1], box.project_many(Y[:, :1]))
        assert np.array_equal(P[:, 1:], ball.project_many(Y[:, 1:]))

    def test_diameter(self):
        prod = Product((Box(lower=[0.0], upper=[3.0]),
                        Ball(center=[0.0, 0.0], radius=2.0)))
        assert prod.diameter() == pytest.approx(5.0)
        prod_inf = Product((WholeSpace(1), Box(lower=[0.0], upper=[1.0])))
        assert math.isinf(prod_inf.diameter())


class TestConfig:
    def test_round_trip(self):
        cfg = {
            "type": "product",
            "factors": [
                {"type": "box", "lower": [0.0], "upper": [1.0]},
                {"type": "ball", "center": [0.0, 0.0], "radius": 2.0},
                {"type": "polygon2d",
                 "vertices": [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]},
            ],
        }
        cset = set_from_config(cfg)
        assert cset.dim == 5

    def test_unknown_type(self):
        with pytest.raises(ConfigError):
            set_from_config({"type": "simplex", "dim": 2})

    def test_missing_key(self):
        with pytest.raises(ConfigError):
            set_from_config({"type": "box", "lower": [0.0]})

    def test_invalid_values(self):
        with pytest.raises(ConfigError):
            set_from_config({"type": "ball", "center": [0.0], "radius": -1.0})
        with pytest.raises(ConfigError):
            set_from_config({"type": "polygon2d",
                             "vertices": [[0, 0], [0, 1], [1, 0]]})  # CW

    def test_not_a_table(self):
        with pytest.raises(ConfigError):
            set_from_config("box")
