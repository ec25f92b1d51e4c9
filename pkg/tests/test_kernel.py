import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from memwave.kernel import (DivisionByVanishingKernel, KernelError, MemoryKernel,
                            check_a1, check_kernel, check_multiplicative, derive_kernels, witness)

T = 2.0


def test_constructors_evaluate():
    assert MemoryKernel.constant(1.5, T)(0.3, 0.1) == 1.5
    assert np.isclose(MemoryKernel.exponential(2.0, T)(1.0, 0.5), np.e)
    assert np.isclose(MemoryKernel.power(T)(2.0, 1.0), 4.0)
    sep = MemoryKernel.separable(np.linspace(1, 2, 9), T)
    assert np.isclose(sep(1.7, 1.0), 1.5)


@given(st.floats(-3, 3))
def test_config_round_trip(alpha):
    k = MemoryKernel.exponential(alpha, T)
    k2 = MemoryKernel.from_config(k.to_config(), T)
    t, s = np.meshgrid(np.linspace(0, T, 5), np.linspace(0, T, 5))
    assert np.array_equal(k(t, s), k2(t, s))


def test_unknown_kind():
    with pytest.raises(KernelError, match="unknown kernel kind"):
        MemoryKernel.from_config({"kind": "gaussian"}, T)


@settings(max_examples=30)
@given(st.floats(0.1, 1.9), st.floats(0.1, 1.9))
def test_derived_derivatives_match_differences(t, s):
    d = derive_kernels(MemoryKernel.power(T))
    e = 1e-5
    fd1 = (d.M1(t + e, s) - d.M1(t - e, s)) / (2 * e)
    fd2 = (d.M2(s, t + e) - d.M2(s, t - e)) / (2 * e)
    assert np.isclose(d.M1_t(t, s), fd1, rtol=1e-6, atol=1e-8)
    assert np.isclose(d.M2_t(s, t), fd2, rtol=1e-6, atol=1e-8)


def test_tabulated_falls_back_to_differences():
    g = np.linspace(0, T, 41)
    vals = np.exp(g[:, None] - g[None, :])
    tab = MemoryKernel.tabulated(vals, T)
    ex = MemoryKernel.exponential(1.0, T)
    assert not tab.analytic
    assert abs(tab.d_first(1.0, 0.5) - ex.d_first(1.0, 0.5)) < 1e-4
    d = derive_kernels(tab)
    assert abs(d.M1_t(1.0, 0.5)) < 1e-4  # M1 = e^{-s} has no t dependence


def test_vanishing_kernel_guard():
    with pytest.raises(DivisionByVanishingKernel):
        derive_kernels(MemoryKernel.constant(0.0, T))
    assert not check_a1(MemoryKernel.constant(0.0, T)).a1_pass
    assert check_a1(MemoryKernel.constant(1.0, T)).a1_pass


@pytest.mark.parametrize("k", [MemoryKernel.exponential(1.0, T), MemoryKernel.exponential(-0.5, T),
                               MemoryKernel.separable([1.0, 2.0, 0.5, 3.0, 1.2], T),
                               MemoryKernel.constant(2.0, T)])
def test_multiplicative_kernels_pass(k):
    rep = check_multiplicative(k, 32)
    assert rep.multiplicative_pass
    assert rep.max_residual <= rep.tol_mult


def test_power_kernel_fails_with_ordered_witness():
    rep = check_kernel(MemoryKernel.power(1.0))
    assert rep.a1_pass and not rep.multiplicative_pass
    t1, t2, t3 = rep.worst_triple
    assert t3 <= t2 <= t1
    k = MemoryKernel.power(1.0)
    Mt = witness(k)
    assert np.isclose(abs(k(t1, t3) - Mt(t1, t2) * k(t2, t3)), rep.max_residual)
