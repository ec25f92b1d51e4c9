import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from memwave.geometry import (DirichletSpectrum, Grid1D, MarginTooLarge, MovingRegion, RegionError,
                              build_cutoff, check_mgcc, dwell_times, ray_position, smoothstep5,
                              trace_ray)


@given(st.integers(4, 60), st.data())
def test_sine_modes_are_stencil_eigenvectors(n, data):
    g = Grid1D(n)
    sp = DirichletSpectrum(g)
    j = data.draw(st.integers(1, n))
    phi = sp.phi[j - 1]
    assert np.allclose(g.neg_laplacian(phi), sp.lam[j - 1] * phi, atol=1e-8 * sp.lam[j - 1])


def test_modes_orthonormal_and_norms():
    g = Grid1D(30)
    sp = DirichletSpectrum(g)
    gram = g.h * sp.phi @ sp.phi.T
    assert np.allclose(gram, np.eye(30), atol=1e-12)
    f = np.sin(3 * g.x) * g.x
    assert np.isclose(sp.norm(f, 0.0), g.l2(f))
    assert sp.norm(f, -1.0) < sp.norm(f, 0.0) < sp.norm(f, 1.0)


def test_region_config_errors():
    g = Grid1D(10)
    with pytest.raises(RegionError):
        MovingRegion.from_config({"type": "circle"}, g)
    with pytest.raises(RegionError):
        MovingRegion.static(0.6, 0.4, g)


def test_full_region_cutoff_is_one():
    g = Grid1D(50)
    times = np.linspace(0, 1, 11)
    c = build_cutoff(MovingRegion.full(g), 0.1, times)
    assert np.all(c.rho == 1.0)


def test_cutoff_margin_and_range():
    g = Grid1D(80)
    times = np.linspace(0, 3, 61)
    reg = MovingRegion.sweep(0.1, 0.8 / 3, 0.1, g)
    with pytest.raises(MarginTooLarge):
        build_cutoff(reg, 0.1, times)
    c = build_cutoff(reg, 0.02, times)
    assert c.rho.min() >= 0 and c.rho.max() <= 1
    chi = reg.indicator(times)
    assert np.all(c.rho[chi == 0] == 0)
    # integral of rho strictly between |O_eps0| and |O|
    a, b = reg.endpoints(times)
    inner = ((a[:, None] + 0.02 <= g.x) & (g.x <= b[:, None] - 0.02)).astype(float)
    assert inner.sum() < c.rho.sum() < chi.sum()


@given(st.floats(0.0, 1.0))
def test_smoothstep_monotone(t):
    assert 0.0 <= smoothstep5(t) <= 1.0
    assert smoothstep5(min(t + 0.01, 1.0)) >= smoothstep5(t)


@given(st.floats(0.01, 0.99), st.sampled_from([1, -1]), st.floats(0, 10))
def test_rays_stay_in_domain(x0, d, t):
    x = ray_position(x0, d, t, 0.0, 1.0)
    assert 0.0 <= x <= 1.0


def test_trace_ray_against_closed_form():
    g = Grid1D(100)
    reg = MovingRegion.sweep(0.1, 0.8 / 3, 0.1, g)
    th = trace_ray(0.95, -1, g, 3.0, reg, g.h / 4)
    # first meeting: 0.95 - t = c(t) + 0.1
    assert math.isclose(th, 0.75 / (1 + 0.8 / 3), abs_tol=1e-9)
    static = MovingRegion.static(0.4, 0.6, g)
    assert trace_ray(0.1, -1, g, 0.05, static, g.h / 4) == math.inf


def test_static_strip_fails_vertical_condition():
    g = Grid1D(100)
    rep = check_mgcc(MovingRegion.static(0.4, 0.6, g), g, 3.0)
    assert rep.rays_pass and not rep.vertical_pass and not rep.mgcc_pass
    assert check_mgcc(MovingRegion.full(g), g, 1.0).mgcc_pass


def test_sweep_dwell_times_match_analytic():
    g = Grid1D(100)
    reg = MovingRegion.sweep(0.1, 0.8 / 3, 0.1, g)
    dt_ray = g.h / 4
    rep = check_mgcc(reg, g, 3.0)
    assert rep.mgcc_pass
    dwell = dwell_times(reg, 3.0, dt_ray)
    x = g.x
    exact = np.minimum.reduce([np.full_like(x, 0.75), x * 3.75, (1 - x) * 3.75])
    tol = 2 * dt_ray + 1e-12  # sampled runs can lose one sample at each end
    assert np.max(np.abs(dwell - exact)) <= tol
    assert abs(rep.L_U - exact.min()) <= tol
    interior = (x >= 0.2) & (x <= 0.8)
    assert np.all(np.abs(dwell[interior] - 0.75) <= tol)


def test_boundary_anchored_sweep_has_uniform_dwell():
    g = Grid1D(100)
    reg = MovingRegion.sweep(0.0, 1 / 3, 0.25, g)
    rep = check_mgcc(reg, g, 3.0)
    assert rep.mgcc_pass and rep.L_U >= 0.75 - 2 * g.h / 4
