import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from memwave.analysis import (ModeUnresolvable, cell_edges, mu_bisection, muntz_moments,
                              rest_certificate, sharpness_experiment, solve_mu,
                              write_moments_csv, write_sharpness_csv)
from memwave.dynamics import TimeMesh, solve_primal_coupled
from memwave.geometry import Grid1D
from memwave.kernel import MemoryKernel


@pytest.mark.parametrize("lam,mu", [(1.0, -0.6823278038280193), (np.pi**2, -0.1012)])
def test_mu_known_values(lam, mu):
    sol = solve_mu(lam)
    assert sol.mu == pytest.approx(mu, abs=1e-4)
    assert sol.residual < 1e-12 and sol.bound_holds


def test_mu_large_lambda():
    sol = solve_mu(1e4)
    assert abs(sol.mu * 1e4 + 1.0) <= 1e-3
    m, a, b = sol
    assert a + b == pytest.approx(-1.0)
    with pytest.raises(ValueError):
        solve_mu(0.0)


@settings(max_examples=60, deadline=None)
@given(st.floats(1e-3, 1e8))
def test_mu_cardano_vs_bisection(lam):
    sol = solve_mu(lam)
    ref = mu_bisection(lam)
    assert abs(sol.mu - ref) <= 1e-12 * abs(ref)
    assert abs(sol.mu) < 6.0 / lam


@pytest.fixture(scope="module")
def sharp():
    g = Grid1D(99)
    return sharpness_experiment(g, TimeMesh(1.0, 400), [0.0, 0.5, 1.0, 2.0], [1, 2, 4, 8, 16])


def test_sharpness_slopes(sharp):
    for s, slope in sharp.slopes.items():
        assert abs(slope - (2.0 - s)) <= 0.15
    assert sharp.lower_bound_ok


def test_sharpness_ratio_monotone(sharp):
    for s in (0.0, 0.5, 1.0):
        ratios = np.array([r.ratio(s) for r in sharp.records])
        assert np.all(np.diff(ratios) >= 0)
    # the rhs grows with s for each mode
    for r in sharp.records:
        vals = [r.rhs_s[s] for s in sorted(r.rhs_s)]
        assert np.all(np.diff(vals) > 0)


def test_sharpness_csv(sharp, tmp_path):
    p = tmp_path / "s.csv"
    write_sharpness_csv(p, sharp)
    lines = p.read_text().splitlines()
    assert lines[0].startswith("j,lambda,mu,lhs") and len(lines) == 6


def test_unresolvable_mode():
    with pytest.raises(ModeUnresolvable):
        sharpness_experiment(Grid1D(20), TimeMesh(1.0, 50), [0.0], [1, 6])


def test_muntz_zero_eta():
    rep = muntz_moments(np.zeros(50), 1.0, 10)
    assert not np.any(rep.moments) and rep.ls_norm == 0.0


@pytest.mark.parametrize("cells", ["uniform", "chebyshev"])
def test_muntz_closed_form_moments(cells):
    # eta = 1 on [0, 1]: m_k = int_1^2 r^{k+1} dr = (2^{k+2} - 1) / (k + 2)
    rep = muntz_moments(np.ones(64), 1.0, 8, cells=cells)
    k = np.arange(8)
    assert np.allclose(rep.moments, (2.0 ** (k + 2) - 1) / (k + 2), rtol=1e-12)


def test_muntz_sigma_min_nonincreasing(rng):
    eta = rng.standard_normal(120)
    s = [muntz_moments(eta, 1.0, K).sigma_min for K in (5, 10, 20, 40, 80)]
    assert np.all(np.diff(s) <= 0)


def test_muntz_ls_norm_shrinks_with_K(rng, tmp_path):
    eta = rng.standard_normal(100)
    r = [muntz_moments(eta, 1.0, K).ls_norm for K in (10, 50, 100)]
    assert r[0] > r[1] > r[2] and r[2] < 1e-10
    write_moments_csv(tmp_path / "m.csv", muntz_moments(eta, 1.0, 4))
    assert (tmp_path / "m.csv").read_text().splitlines()[0] == "k,m_k"


def test_cell_edges():
    e = cell_edges(2.0, 10, "chebyshev")
    assert e[0] == 0.0 and e[-1] == pytest.approx(2.0) and np.all(np.diff(e) > 0)
    with pytest.raises(ValueError):
        cell_edges(1.0, 4, "random")


def test_rest_certificate_zero_state():
    k = MemoryKernel.exponential(1.0, 1.0)
    g, m = Grid1D(20), TimeMesh(1.0, 50)
    z = np.zeros(g.n)
    cert = rest_certificate(k, g, m, solve_primal_coupled(k, g, m, z, z, z), tol=0.0)
    assert cert.passed and cert.max_norm == 0.0 and cert.multiplicative


def test_rest_certificate_monotone_in_tol():
    k = MemoryKernel.exponential(1.0, 1.0)
    g, m = Grid1D(20), TimeMesh(1.0, 50)
    x = g.x
    st_ = solve_primal_coupled(k, g, m, np.sin(np.pi * x), 0 * x, 0 * x)
    tols = [1e-6, 1e-3, 1e-1, 10.0]
    passed = [rest_certificate(k, g, m, st_, tol=t).passed for t in tols]
    assert passed == sorted(passed)
    assert passed[-1] and not passed[0]
