import math

import numpy as np
import pytest

from darcy.errors import UnderResolvedHole
from darcy.fdsolver import (BOUNDARY, HOLE, INTERIOR, Solution, box_center_value, convergence_sweep,
                            darcy_constant, darcy_error, dump_field, energy_identity_gap,
                            load_field, rasterize, solve_poisson)
from darcy.geometry import HoleSet, build_holes
from darcy.pointprocess import Box, Constant, ProcessParams, sample_process

UNIT = Box((0,) * 3, (1,) * 3)
BOX = ((0,) * 3, (1,) * 3)


def ball_holes(centers, radii, eps=0.1, alpha=1.2, domain=UNIT):
    c = np.asarray(centers, float).reshape(-1, 3)
    return HoleSet(eps, alpha, c / eps, np.asarray(radii, float) / eps ** alpha, domain)


def triple_series_center(n_max=301):
    """Center value of -Δu = 1 on the unit cube from the full sine series."""
    l = np.arange(1, n_max + 1, 2.0)
    s = (-1.0) ** ((l - 1) / 2) / l
    L, M = np.meshgrid(l, l, indexing="ij")
    S = np.outer(s, s)
    return 64 / math.pi ** 5 * sum(float(np.sum(S * sn / (L ** 2 + M ** 2 + n ** 2)))
                                   for n, sn in zip(l, s))


def test_rasterize_without_holes():
    g = rasterize(None, BOX, 1 / 8)
    assert g.dims == (9, 9, 9)
    assert g.n_unknowns == 7 ** 3
    assert np.all(g.state[1:-1, 1:-1, 1:-1] == INTERIOR)
    assert g.hole_fraction == 0.0


def test_rasterize_single_ball_node_count():
    h = 0.02
    g = rasterize(ball_holes([[0.5, 0.5, 0.5]], [0.1]), BOX, h)
    n = int(np.sum(g.state == HOLE))
    assert n == pytest.approx(4 / 3 * math.pi * 0.1 ** 3 / h ** 3, rel=0.1)
    idx = g.unknown_index()
    assert idx.max() + 1 == g.n_unknowns


def test_rasterize_resolution_gate_and_domain():
    with pytest.raises(UnderResolvedHole, match="radius"):
        rasterize(ball_holes([[0.5, 0.5, 0.5]], [0.05]), BOX, 0.05)
    from darcy.pointprocess import Ball
    g = rasterize(None, BOX, 1 / 16, domain=Ball((0.5, 0.5, 0.5), 0.4))
    pts = g.points()
    out = np.linalg.norm(pts - 0.5, axis=1) > 0.4
    assert np.all(g.state.ravel()[out] == BOUNDARY)


def test_box_series_oracles():
    assert box_center_value() == pytest.approx(0.0562128, abs=5e-8)
    assert box_center_value() == pytest.approx(triple_series_center(), rel=1e-6)


def test_solve_matches_box_center_value():
    g = rasterize(None, BOX, 1 / 64)
    sol = solve_poisson(g)
    assert sol.u[32, 32, 32] == pytest.approx(box_center_value(), rel=0.02)
    assert sol.residual <= 1e-8
    assert energy_identity_gap(sol) < 10 * 1e-8 * 10


def test_zero_source_gives_zero():
    sol = solve_poisson(rasterize(None, BOX, 1 / 16), f=0.0)
    assert np.all(sol.u == 0.0)


def test_adding_a_hole_decreases_u():
    h = 1 / 32
    a = solve_poisson(rasterize(None, BOX, h))
    b = solve_poisson(rasterize(ball_holes([[0.4, 0.5, 0.5]], [0.12]), BOX, h))
    assert np.all(b.u <= a.u + 1e-10 * a.u.max())
    assert b.u.min() >= -1e-10 * b.u.max()
    assert b.u[16, 16, 16] < a.u[16, 16, 16]


def test_energy_identity_perforated():
    h = build_holes(sample_process(ProcessParams(1.0, 1 / 6, 1.2, UNIT, seed=4)))
    sol = solve_poisson(rasterize(h, BOX, 1 / 40), f=lambda x: 1 + x[:, 0])
    assert energy_identity_gap(sol, f=lambda x: 1 + x[:, 0]) < 10 * 1e-8


def test_darcy_error_zero_case_and_constant():
    g = rasterize(None, BOX, 1 / 16)
    eps, alpha = 0.1, 1.2
    k = darcy_constant(Constant(1.0), 1.0)
    assert k == pytest.approx(1 / (4 * math.pi))
    u = np.full(g.dims, k * eps ** (3 - alpha))
    rep = darcy_error(Solution(u, g, 0, 0.0), eps, alpha, 1.0, Constant(1.0), 1.0, UNIT)
    assert rep.lp_error == pytest.approx(0.0, abs=1e-15)
    assert rep.core_mean == pytest.approx(k)


def test_control_run_scales_with_sigma_squared():
    sol = solve_poisson(rasterize(None, BOX, 1 / 24))
    r1 = darcy_error(sol, 1 / 6, 1.2, 1.0, Constant(1.0), 1.0, UNIT)
    r2 = darcy_error(sol, 1 / 10, 1.2, 1.0, Constant(1.0), 1.0, UNIT)
    assert r2.core_mean / r1.core_mean == pytest.approx((6 / 10) ** -(3 - 1.2), rel=1e-12)
    assert r1.core_mean > 1.0 / (4 * math.pi)


def test_poincare_ratio_and_energy_norm_finite():
    h = build_holes(sample_process(ProcessParams(1.0, 1 / 6, 1.2, UNIT, seed=0)))
    sol = solve_poisson(rasterize(h, BOX, 1 / 40))
    rep = darcy_error(sol, 1 / 6, 1.2, 1.0, Constant(1.0), 1.0, UNIT)
    assert 0 < rep.poincare_ratio < 10 and math.isfinite(rep.energy_norm)
    assert 0 < rep.hole_fraction < 1


def test_dump_and_load(tmp_path):
    sol = solve_poisson(rasterize(None, BOX, 1 / 8))
    dump_field(sol, tmp_path / "u.f64")
    back = load_field(tmp_path / "u.f64")
    np.testing.assert_array_equal(back, sol.u)
    assert (tmp_path / "u.f64").stat().st_size == 8 * sol.u.size


def test_convergence_sweep_collects_failures():
    def solve(e):
        if e == "bad":
            raise UnderResolvedHole("too coarse")
        return darcy_error(solve_poisson(rasterize(None, BOX, 1 / 8)), e, 1.2, 1.0,
                           Constant(1.0), 1.0, UNIT)

    rep = convergence_sweep([0.2], solve)
    assert len(rep.rows) == 1 and rep.verdicts["error_trend"] == "insufficient data"
    rep = convergence_sweep([0.2, "bad", 0.1], solve)
    assert len(rep.rows) == 2 and rep.failures[0]["error"] == "UnderResolvedHole"
    # without holes the error grows as eps shrinks
    assert rep.verdicts["error_trend"] == "fail"


def test_mesh_stability_gate():
    eps = 1 / 6
    h = build_holes(sample_process(ProcessParams(1.0, eps, 1.2, UNIT, seed=0)))
    errs = [darcy_error(solve_poisson(rasterize(h, BOX, s)), eps, 1.2, 1.0, Constant(1.0), 1.0,
                        UNIT).lp_error for s in (1 / 48, 1 / 96)]
    assert abs(errs[1] - errs[0]) / errs[1] < 0.10
