"""Memory kernels M(t, s) and the derived kernels used by the coupled reduction.

The coupled PDE-ODE system needs

    M1(t, s) = M(t, s) / M(t, 0)        (forward ODE for z)
    M2(s, t) = M(s, t) / M(T, t)        (adjoint ODE for q)

together with the partial derivative of M1 in its first argument and of M2
in its second argument.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.interpolate import CubicSpline, RectBivariateSpline

KINDS = ("constant", "exponential", "separable", "power", "tabulated")

VANISHING = 1e-14
A1_THRESHOLD = 1e-12


class KernelError(ValueError):
    pass


class DivisionByVanishingKernel(KernelError):
    def __init__(self, t: float, which: str):
        super().__init__(f"|{which}| < {VANISHING:g} at t={t:.6g}")
        self.t = t
        self.which = which


@dataclass(frozen=True)
class MemoryKernel:
    """A kernel M(t, s) on [0, T]^2.

    Build instances with the classmethods; ``kind`` and ``params`` are what
    the JSON config round-trips through.
    """

    T: float
    kind: str
    params: dict = field(default_factory=dict)
    _eval: Callable = field(default=None, repr=False, compare=False)
    _dt: Optional[Callable] = field(default=None, repr=False, compare=False)
    _ds: Optional[Callable] = field(default=None, repr=False, compare=False)

    # --- constructors -------------------------------------------------
    @classmethod
    def constant(cls, c: float, T: float) -> "MemoryKernel":
        c = float(c)
        return cls(
            T, "constant", {"c": c},
            lambda t, s: np.full(np.broadcast(t, s).shape, c),
            lambda t, s: np.zeros(np.broadcast(t, s).shape),
            lambda t, s: np.zeros(np.broadcast(t, s).shape),
        )

    @classmethod
    def exponential(cls, alpha: float, T: float) -> "MemoryKernel":
        a = float(alpha)
        f = lambda t, s: np.exp(a * (np.asarray(t) - np.asarray(s)))
        return cls(
            T, "exponential", {"alpha": a}, f,
            lambda t, s: a * f(t, s),
            lambda t, s: -a * f(t, s),
        )

    @classmethod
    def power(cls, T: float) -> "MemoryKernel":
        """M(t, s) = (s + 1)^t."""
        f = lambda t, s: np.power(np.asarray(s) + 1.0, np.asarray(t))
        return cls(
            T, "power", {}, f,
            lambda t, s: f(t, s) * np.log(np.asarray(s) + 1.0),
            lambda t, s: np.asarray(t) * np.power(np.asarray(s) + 1.0, np.asarray(t) - 1.0),
        )

    @classmethod
    def separable(cls, f: Sequence[float], T: float) -> "MemoryKernel":
        """M(t, s) = f(s) with f sampled uniformly on [0, T]."""
        vals = np.asarray(f, dtype=float)
        if vals.ndim != 1 or vals.size < 2:
            raise KernelError("separable kernel needs at least two samples of f")
        sgrid = np.linspace(0.0, T, vals.size)
        spl = CubicSpline(sgrid, vals) if vals.size >= 4 else None
        if spl is None:
            fs = lambda s: np.interp(s, sgrid, vals)
            dfs = lambda s: np.interp(s, sgrid[:-1], np.diff(vals) / np.diff(sgrid))
        else:
            fs, dfs = spl, spl.derivative()
        return cls(
            T, "separable", {"f": vals.tolist()},
            lambda t, s: np.broadcast_to(fs(s), np.broadcast(t, s).shape) * 1.0,
            lambda t, s: np.zeros(np.broadcast(t, s).shape),
            lambda t, s: np.broadcast_to(dfs(s), np.broadcast(t, s).shape) * 1.0,
        )

    @classmethod
    def tabulated(cls, values, T: float) -> "MemoryKernel":
        """Values on a uniform (m x m) lattice of [0, T]^2, indexed [t, s].

        Derivatives are left to central differences.
        """
        vals = np.asarray(values, dtype=float)
        if vals.ndim != 2 or vals.shape[0] != vals.shape[1] or vals.shape[0] < 2:
            raise KernelError("tabulated kernel needs a square table with >= 2 rows")
        g = np.linspace(0.0, T, vals.shape[0])
        k = min(3, vals.shape[0] - 1)
        spl = RectBivariateSpline(g, g, vals, kx=k, ky=k)
        return cls(
            T, "tabulated", {"values": vals.tolist()},
            lambda t, s: spl(np.asarray(t, dtype=float), np.asarray(s, dtype=float), grid=False),
        )

    @classmethod
    def from_config(cls, cfg: dict, T: float) -> "MemoryKernel":
        kind = cfg.get("kind")
        if kind == "constant":
            return cls.constant(cfg.get("c", 1.0), T)
        if kind == "exponential":
            return cls.exponential(cfg["alpha"], T)
        if kind == "power":
            return cls.power(T)
        if kind == "separable":
            return cls.separable(cfg["f"], T)
        if kind == "tabulated":
            return cls.tabulated(cfg["values"], T)
        raise KernelError(f"unknown kernel kind {kind!r}; expected one of {KINDS}")

    def to_config(self) -> dict:
        return {"kind": self.kind, **self.params}

    # --- evaluation ---------------------------------------------------
    def __call__(self, t, s):
        return self._eval(t, s)

    @property
    def analytic(self) -> bool:
        return self._dt is not None

    def d_first(self, t, s, step: Optional[float] = None):
        """dM/dt (first argument)."""
        if self._dt is not None and step is None:
            return self._dt(t, s)
        step = step or 1e-4 * self.T
        return (self(np.asarray(t) + step, s) - self(np.asarray(t) - step, s)) / (2 * step)

    def d_second(self, t, s, step: Optional[float] = None):
        """dM/ds (second argument)."""
        if self._ds is not None and step is None:
            return self._ds(t, s)
        step = step or 1e-4 * self.T
        return (self(t, np.asarray(s) + step) - self(t, np.asarray(s) - step)) / (2 * step)


@dataclass(frozen=True)
class DerivedKernels:
    M1: Callable
    M1_t: Callable
    M2: Callable
    M2_t: Callable


def _guard(k: MemoryKernel, tt: np.ndarray):
    m0 = np.abs(k(tt, 0.0))
    if np.any(m0 < VANISHING):
        raise DivisionByVanishingKernel(float(tt[np.argmin(m0)]), "M(t,0)")
    mT = np.abs(k(k.T, tt))
    if np.any(mT < VANISHING):
        raise DivisionByVanishingKernel(float(tt[np.argmin(mT)]), "M(T,t)")


def derive_kernels(k: MemoryKernel, h_k: Optional[float] = None, n_check: int = 64) -> DerivedKernels:
    """M1, M2 and their t-derivatives.

    Closed forms are used for the analytic kinds; tabulated kernels fall
    back to central differences with step ``h_k`` (default 1e-4 T).
    """
    _guard(k, np.linspace(0.0, k.T, n_check))
    T = k.T
    step = None if k.analytic else (h_k or 1e-4 * T)

    def M1(t, s):
        return k(t, s) / k(t, 0.0)

    def M1_t(t, s):
        m0 = k(t, 0.0)
        return (k.d_first(t, s, step) * m0 - k(t, s) * k.d_first(t, 0.0, step)) / m0**2

    def M2(s, t):
        return k(s, t) / k(T, t)

    def M2_t(s, t):
        # derivative in t, the second argument
        mT = k(T, t)
        return (k.d_second(s, t, step) * mT - k(s, t) * k.d_second(T, t, step)) / mT**2

    return DerivedKernels(M1, M1_t, M2, M2_t)


@dataclass
class KernelCheckReport:
    a1_pass: Optional[bool] = None
    a1_min_abs: Optional[float] = None
    multiplicative_pass: Optional[bool] = None
    max_residual: Optional[float] = None
    worst_triple: Optional[tuple] = None
    tol_mult: Optional[float] = None
    witness_Mtilde: Optional[Callable] = field(default=None, repr=False)

    def to_dict(self) -> dict:
        out = {k: v for k, v in self.__dict__.items() if k != "witness_Mtilde"}
        if self.worst_triple is not None:
            out["worst_triple"] = [float(v) for v in self.worst_triple]
        return out


def witness(k: MemoryKernel) -> Callable:
    """Candidate factor M~(t1, t2) = M(t1, 0) / M(t2, 0)."""
    def Mt(t1, t2):
        d = k(t2, 0.0)
        if np.any(np.abs(d) < VANISHING):
            raise DivisionByVanishingKernel(float(np.atleast_1d(t2)[0]), "M(t2,0)")
        return k(t1, 0.0) / d
    return Mt


def check_multiplicative(k: MemoryKernel, n_samples: int = 64,
                         tol_mult: Optional[float] = None) -> KernelCheckReport:
    if n_samples < 3:
        raise KernelError("n_samples must be >= 3")
    t = np.linspace(0.0, k.T, n_samples)
    _guard_zero = np.abs(k(t, 0.0))
    if np.any(_guard_zero < VANISHING):
        raise DivisionByVanishingKernel(float(t[np.argmin(_guard_zero)]), "M(t,0)")
    t1, t2, t3 = np.meshgrid(t, t, t, indexing="ij")
    ordered = (t3 <= t2) & (t2 <= t1)
    Mt = witness(k)
    resid = np.abs(k(t1, t3) - Mt(t1, t2) * k(t2, t3))
    resid = np.where(ordered, resid, -1.0)
    if tol_mult is None:
        tT, sS = np.meshgrid(t, t, indexing="ij")
        tol_mult = 1e-9 * float(np.max(np.abs(k(tT, sS))))
    flat = int(np.argmax(resid))
    i, j, l = np.unravel_index(flat, resid.shape)
    worst = float(resid[i, j, l])
    return KernelCheckReport(
        multiplicative_pass=bool(worst <= tol_mult),
        max_residual=worst,
        worst_triple=(float(t[i]), float(t[j]), float(t[l])),
        tol_mult=float(tol_mult),
        witness_Mtilde=Mt,
    )


def check_a1(k: MemoryKernel, n_samples: int = 64) -> KernelCheckReport:
    # smoothness part of (A1) is not checkable from samples
    t = np.linspace(0.0, k.T, n_samples)
    prod = np.abs(k(t, 0.0) * k(k.T, t))
    m = float(np.min(prod))
    return KernelCheckReport(a1_pass=bool(m > A1_THRESHOLD), a1_min_abs=m)


def check_kernel(k: MemoryKernel, n_samples: int = 64,
                 tol_mult: Optional[float] = None) -> KernelCheckReport:
    rep = check_a1(k, n_samples)
    try:
        mult = check_multiplicative(k, n_samples, tol_mult)
    except DivisionByVanishingKernel:
        rep.multiplicative_pass = False
        return rep
    mult.a1_pass, mult.a1_min_abs = rep.a1_pass, rep.a1_min_abs
    return mult
