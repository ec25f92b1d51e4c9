"""Time stepping for the memory wave equation, its coupled reduction and adjoints.

All schemes are explicit leapfrog in time with trapezoidal Volterra
quadrature. The coupled adjoint is the exact transpose of the coupled forward
map, so the discrete duality pairing holds to round-off.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .geometry import Grid1D
from .kernel import MemoryKernel, derive_kernels


class CflViolation(ValueError):
    pass


class NonFiniteState(FloatingPointError):
    pass


@dataclass(frozen=True)
class TimeMesh:
    T: float
    n_t: int

    @property
    def dt(self) -> float:
        return self.T / self.n_t

    @property
    def times(self) -> np.ndarray:
        return self.dt * np.arange(self.n_t + 1)

    @property
    def weights(self) -> np.ndarray:
        """Trapezoid weights (without dt)."""
        w = np.ones(self.n_t + 1)
        w[0] = w[-1] = 0.5
        return w

    def check_cfl(self, grid: Grid1D, cfl_max: float = 1.0) -> None:
        if self.dt > cfl_max * grid.h * (1 + 1e-12):
            raise CflViolation(
                f"CFL violated: dt={self.dt:.4g} exceeds {cfl_max:g} * h={grid.h:.4g}")

    @classmethod
    def from_cfl(cls, T: float, grid: Grid1D, cfl: float = 0.5) -> "TimeMesh":
        return cls(T, int(math.ceil(T / (cfl * grid.h))))


@dataclass
class PrimalState:
    t: np.ndarray
    y: np.ndarray
    yt: np.ndarray
    z: np.ndarray
    memory: np.ndarray  # the term entering the y equation at each level


@dataclass
class AdjointState:
    t: np.ndarray
    p: np.ndarray
    pt: np.ndarray
    q: np.ndarray
    # transposed initial-data and forcing sensitivities (coupled variant only)
    grad_y0: Optional[np.ndarray] = None
    grad_y1: Optional[np.ndarray] = None
    grad_z0: Optional[np.ndarray] = None
    grad_f: Optional[np.ndarray] = None


def _finite(arr: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(arr)):
        raise NonFiniteState(f"non-finite values in {what}")


def _velocity(y: np.ndarray, dt: float, v0=None, vN=None) -> np.ndarray:
    v = np.empty_like(y)
    v[1:-1] = (y[2:] - y[:-2]) / (2 * dt)
    v[0] = v0 if v0 is not None else (-3 * y[0] + 4 * y[1] - y[2]) / (2 * dt)
    v[-1] = vN if vN is not None else (3 * y[-1] - 4 * y[-2] + y[-3]) / (2 * dt)
    return v


def _trapezoid_history(values: np.ndarray, dt: float) -> np.ndarray:
    """Lower-triangular W with W[m, k] = dt * tw_k^m * values[m, k]."""
    N = values.shape[0] - 1
    W = np.tril(values) * dt
    for m in range(1, N + 1):
        W[m, 0] *= 0.5
        W[m, m] *= 0.5
    W[0, :] = 0.0
    return W


class CoupledScheme:
    """Leapfrog discretisation of the coupled wave/ODE system and its transpose.

    Forward, with f = weight * u the applied forcing:

        y^1     = y0 + dt y1 + dt^2/2 (-A y0 - a_0 z0 + f^0)
        F^m     = M1(t_m,t_m) y^m + sum_k W[m,k] y^k
        z^m     = z^{m-1} + dt/2 (F^{m-1} + F^m)
        y^{m+1} = 2 y^m - y^{m-1} + dt^2 (-A y^m - a_m z^m + f^m)

    with a_m = M(t_m, 0). The terminal velocity is the backward difference
    plus half a step of acceleration, which keeps the transposed scheme
    consistent with the continuous adjoint at t = T.
    """

    def __init__(self, kernel: MemoryKernel, grid: Grid1D, mesh: TimeMesh,
                 h_k: Optional[float] = None, cfl_max: float = 1.0):
        mesh.check_cfl(grid, cfl_max)
        self.kernel, self.grid, self.mesh = kernel, grid, mesh
        t = mesh.times
        dk = derive_kernels(kernel, h_k)
        self.a = np.asarray(kernel(t, 0.0), dtype=float) * np.ones_like(t)
        self.b = np.asarray(dk.M1(t, t), dtype=float) * np.ones_like(t)
        tt, ss = np.meshgrid(t, t, indexing="ij")
        K = np.asarray(dk.M1_t(tt, ss), dtype=float) * np.ones_like(tt)
        self.W = _trapezoid_history(K, mesh.dt)
        self.has_history = bool(np.any(self.W != 0.0))
        self.MTt = np.asarray(kernel(mesh.T, t), dtype=float) * np.ones_like(t)
        self.aT = float(self.a[-1])

    # ----------------------------------------------------------------
    def forward(self, y0, y1, z0, f: Optional[np.ndarray] = None) -> PrimalState:
        g, dt = self.grid, self.mesh.dt
        N, n = self.mesh.n_t, g.n
        A = g.neg_laplacian
        a, b, W = self.a, self.b, self.W
        if f is None:
            f = np.zeros((N + 1, n))
        y = np.empty((N + 1, n))
        z = np.empty((N + 1, n))
        y[0], z[0] = y0, z0
        F_prev = b[0] * y[0]
        y[1] = y[0] + dt * np.asarray(y1) + 0.5 * dt**2 * (-A(y[0]) - a[0] * z[0] + f[0])
        for m in range(1, N + 1):
            F = b[m] * y[m]
            if self.has_history:
                F = F + W[m, : m + 1] @ y[: m + 1]
            z[m] = z[m - 1] + 0.5 * dt * (F_prev + F)
            if m < N:
                y[m + 1] = 2 * y[m] - y[m - 1] + dt**2 * (-A(y[m]) - a[m] * z[m] + f[m])
            F_prev = F
        _finite(y, "y")
        V = (y[N] - y[N - 1]) / dt + 0.5 * dt * (-A(y[N]) - a[N] * z[N] + f[N])
        yt = _velocity(y, dt, v0=np.asarray(y1, dtype=float), vN=V)
        return PrimalState(self.mesh.times, y, yt, z, a[:, None] * z)

    def pairing(self, xi, state: PrimalState) -> float:
        """h [ (p0, y_t(T)) - (p1, y(T)) - M(T,0) (q0, z(T)) ]."""
        p0, p1, q0 = xi
        h = self.grid.h
        return h * (np.dot(p0, state.yt[-1]) - np.dot(p1, state.y[-1])
                    - self.aT * np.dot(q0, state.z[-1]))

    # ----------------------------------------------------------------
    def adjoint(self, p0, p1, q0) -> AdjointState:
        """Reverse sweep of ``forward`` seeded by the terminal pairing."""
        g, dt, h = self.grid, self.mesh.dt, self.grid.h
        N, n = self.mesh.n_t, g.n
        A = g.neg_laplacian
        a, b, W = self.a, self.b, self.W
        p0 = np.asarray(p0, dtype=float)
        p1 = np.asarray(p1, dtype=float)
        q0 = np.asarray(q0, dtype=float)

        yb = np.zeros((N + 1, n))
        zb = np.zeros((N + 1, n))
        Fb = np.zeros((N + 1, n))
        fb = np.zeros((N + 1, n))
        C = np.zeros((N + 1, n))

        Vb = h * p0
        yb[N] += Vb / dt - 0.5 * dt * A(Vb) - h * p1
        yb[N - 1] += -Vb / dt
        zb[N] += -0.5 * dt * a[N] * Vb - h * self.aT * q0
        fb[N] += 0.5 * dt * Vb

        for m in range(N, 0, -1):
            if m < N:
                gm = yb[m + 1]
                yb[m] += 2 * gm - dt**2 * A(gm)
                yb[m - 1] -= gm
                zb[m] -= dt**2 * a[m] * gm
                fb[m] += dt**2 * gm
            zb[m - 1] += zb[m]
            Fb[m - 1] += 0.5 * dt * zb[m]
            Fb[m] += 0.5 * dt * zb[m]
            C[m] += b[m] * Fb[m]
            if self.has_history:
                C[: m + 1] += np.outer(W[m, : m + 1], Fb[m])
            yb[m] += C[m]

        gm = yb[1]
        yb[0] += gm - 0.5 * dt**2 * A(gm)
        grad_y1 = dt * gm
        zb[0] -= 0.5 * dt**2 * a[0] * gm
        fb[0] += 0.5 * dt**2 * gm
        C[0] += b[0] * Fb[0]
        yb[0] += C[0]
        _finite(yb, "adjoint")

        c = self.mesh.weights
        p = fb / (h * dt * c[:, None])
        q = np.empty_like(p)
        q[1:N] = -C[1:N] / (h * dt * self.MTt[1:N, None])
        q[N] = q0
        q[0] = -zb[0] / (h * self.aT)
        pt = _velocity(p, dt, v0=-yb[0] / h, vN=p1)
        return AdjointState(self.mesh.times, p, pt, q,
                            grad_y0=yb[0].copy(), grad_y1=grad_y1, grad_z0=zb[0].copy(),
                            grad_f=fb)

    def initial_pairing(self, adj: AdjointState, y0, y1, z0) -> float:
        """<p(0), y1> - (p_t(0), y0) - M(T,0) (q(0), z0) in transposed form."""
        return float(np.dot(adj.grad_y0, y0) + np.dot(adj.grad_y1, y1) + np.dot(adj.grad_z0, z0))


# --- public solver entry points --------------------------------------------

def _forcing(grid: Grid1D, mesh: TimeMesh, u, weight) -> np.ndarray:
    if u is None:
        return np.zeros((mesh.n_t + 1, grid.n))
    u = np.asarray(u, dtype=float)
    if weight is None:
        return u
    w = weight.rho if hasattr(weight, "rho") else np.asarray(weight, dtype=float)
    return w * u


def solve_primal_coupled(k: MemoryKernel, grid: Grid1D, mesh: TimeMesh, y0, y1, z0,
                         u=None, rho=None, h_k: Optional[float] = None) -> PrimalState:
    """Coupled system with forcing rho * u; z(t) = z0 + int_0^t M1(t,s) y ds."""
    scheme = CoupledScheme(k, grid, mesh, h_k)
    return scheme.forward(y0, y1, z0, _forcing(grid, mesh, u, rho))


def solve_primal_memory(k: MemoryKernel, grid: Grid1D, mesh: TimeMesh, y0, y1,
                        u=None, chi=None, cfl_max: float = 1.0) -> PrimalState:
    """Memory wave equation with trapezoidal quadrature of int_0^t M(t,s) y(s) ds.

    The returned ``z`` and ``memory`` both hold that raw memory integral.
    """
    mesh.check_cfl(grid, cfl_max)
    dt, N, n = mesh.dt, mesh.n_t, grid.n
    A = grid.neg_laplacian
    t = mesh.times
    tt, ss = np.meshgrid(t, t, indexing="ij")
    Wm = _trapezoid_history(np.asarray(k(tt, ss), dtype=float) * np.ones_like(tt), dt)
    f = _forcing(grid, mesh, u, chi)
    y = np.empty((N + 1, n))
    mem = np.zeros((N + 1, n))
    y[0] = y0
    y[1] = y[0] + dt * np.asarray(y1) + 0.5 * dt**2 * (-A(y[0]) + f[0])
    for m in range(1, N + 1):
        mem[m] = Wm[m, : m + 1] @ y[: m + 1]
        if m < N:
            y[m + 1] = 2 * y[m] - y[m - 1] + dt**2 * (-A(y[m]) - mem[m] + f[m])
    _finite(y, "y")
    yt = _velocity(y, dt, v0=np.asarray(y1, dtype=float))
    return PrimalState(t, y, yt, mem.copy(), mem)


def solve_adjoint(k: MemoryKernel, grid: Grid1D, mesh: TimeMesh, p0, p1, q0,
                  variant: str = "coupled", h_k: Optional[float] = None) -> AdjointState:
    if variant == "coupled":
        return CoupledScheme(k, grid, mesh, h_k).adjoint(p0, p1, q0)
    if variant != "scalar_memory":
        raise ValueError("variant must be 'coupled' or 'scalar_memory'")
    mesh.check_cfl(grid)
    dt, N, n = mesh.dt, mesh.n_t, grid.n
    A = grid.neg_laplacian
    t = mesh.times
    # Wb[m, k] = dt * tw * M(t_k, t_m) for k >= m (integral over [t_m, T])
    tt, ss = np.meshgrid(t, t, indexing="ij")
    Mst = np.asarray(k(ss, tt), dtype=float) * np.ones_like(tt)  # [m, k] -> M(t_k, t_m)
    Wb = np.triu(Mst) * dt
    for m in range(N):
        Wb[m, m] *= 0.5
        Wb[m, N] *= 0.5
    Wb[N, :] = 0.0
    MTt = np.asarray(k(mesh.T, t), dtype=float) * np.ones_like(t)
    q0 = np.asarray(q0, dtype=float)
    p = np.empty((N + 1, n))
    mem = np.zeros((N + 1, n))
    p[N] = p0
    p[N - 1] = p[N] - dt * np.asarray(p1) + 0.5 * dt**2 * (-A(p[N]) - MTt[N] * q0)
    for m in range(N - 1, -1, -1):
        mem[m] = Wb[m, m:] @ p[m:]
        if m > 0:
            p[m - 1] = 2 * p[m] - p[m + 1] - dt**2 * (A(p[m]) + mem[m] + MTt[m] * q0)
    _finite(p, "p")
    q = q0[None, :] + mem / MTt[:, None]
    pt = _velocity(p, dt, vN=np.asarray(p1, dtype=float))
    return AdjointState(t, p, pt, q)


def recover_q(k: MemoryKernel, grid: Grid1D, mesh: TimeMesh, adj: AdjointState) -> np.ndarray:
    """q = (-p_tt + Delta_h p) / M(T, t) on time levels 2..N-2.

    p_tt is taken with a stride-2 stencil: the scheme's own 3-point stencil
    reproduces its q to roundoff, which would hide the truncation error.
    """
    dt = mesh.dt
    ptt = np.gradient(np.gradient(adj.p, dt, axis=0), dt, axis=0)
    MT = np.asarray(k(mesh.T, mesh.times), dtype=float) * np.ones_like(mesh.times)
    if np.any(np.abs(MT[2:-2]) < 1e-12):
        raise ValueError("M(T, t) vanishes; q is not recoverable from p")
    return ((-ptt + grid.laplacian(adj.p)) / MT[:, None])[2:-2]


def solve_scalar_ode(k: MemoryKernel, mesh: TimeMesh, eta0: float, v=None) -> np.ndarray:
    """Crank-Nicolson for eta' + int_0^t M(t,s) eta(s) ds = v."""
    dt, N = mesh.dt, mesh.n_t
    t = mesh.times
    v = np.zeros(N + 1) if v is None else np.broadcast_to(np.asarray(v, dtype=float), (N + 1,))
    tt, ss = np.meshgrid(t, t, indexing="ij")
    Wm = _trapezoid_history(np.asarray(k(tt, ss), dtype=float) * np.ones_like(tt), dt)
    eta = np.zeros(N + 1)
    eta[0] = eta0
    I_prev = 0.0
    for m in range(N):
        row = Wm[m + 1, : m + 2]
        partial = float(row[:-1] @ eta[: m + 1])
        rhs = eta[m] + 0.5 * dt * (v[m] - I_prev + v[m + 1] - partial)
        eta[m + 1] = rhs / (1.0 + 0.5 * dt * row[-1])
        I_prev = partial + row[-1] * eta[m + 1]
    return eta


def energy(state: PrimalState, t_index: int, grid: Grid1D) -> float:
    y, v = state.y[t_index], state.yt[t_index]
    dy = np.diff(np.concatenate(([0.0], y, [0.0]))) / grid.h
    return 0.5 * grid.h * float(np.dot(v, v) + np.dot(dy, dy))


def extend_past_T(k: MemoryKernel, grid: Grid1D, mesh: TimeMesh, state: PrimalState,
                  carry_history: bool = False) -> PrimalState:
    """Continue the memory equation on (T, 2T] with no control.

    The continuation restarts from the terminal triple (y(T), y_t(T), memory(T))
    with a Taylor first step, so no stale control forcing leaks past T.
    ``carry_history`` recomputes int_0^t M(t,s) y ds from the stored history.
    Otherwise the kernel is assumed multiplicative and the history enters as
    M~(t, T) * memory(T), with M~(t, T) = M(t, 0) / M(T, 0).
    """
    dt, N, n = mesh.dt, mesh.n_t, grid.n
    A = grid.neg_laplacian
    T = mesh.T
    t = dt * np.arange(2 * N + 1)
    Y = np.zeros((2 * N + 1, n))
    Y[: N + 1] = state.y
    mem = np.zeros((2 * N + 1, n))
    mem[: N + 1] = state.memory
    mem_T = state.memory[N]
    Mtil = np.asarray(k(t, 0.0), dtype=float) / float(k(T, 0.0)) * np.ones_like(t)

    def memory_at(m):
        lo = 0 if carry_history else N
        ks = np.arange(lo, m + 1)
        w = np.full(ks.size, dt)
        w[0] = w[-1] = 0.5 * dt
        Mrow = np.asarray(k(t[m], t[ks]), dtype=float) * np.ones(ks.size)
        val = (w * Mrow) @ Y[ks]
        return val if carry_history else Mtil[m] * mem_T + val

    vT = state.yt[N]
    for m in range(N, 2 * N + 1):
        if m > N or carry_history:
            mem[m] = memory_at(m)
        if m == N:
            Y[m + 1] = Y[m] + dt * vT + 0.5 * dt**2 * (-A(Y[m]) - mem[m])
        elif m < 2 * N:
            Y[m + 1] = 2 * Y[m] - Y[m - 1] + dt**2 * (-A(Y[m]) - mem[m])
    _finite(Y, "extension")
    yt = _velocity(Y, dt)
    yt[N] = vT
    sl = slice(N, 2 * N + 1)
    return PrimalState(t[sl], Y[sl], yt[sl], mem[sl].copy(), mem[sl])


def write_trajectory_csv(path, state, grid: Grid1D, kind: str = "primal") -> None:
    cols = ("t", "x", "y", "yt", "z") if kind == "primal" else ("t", "x", "p", "pt", "q")
    a, b, c = ((state.y, state.yt, state.z) if kind == "primal"
               else (state.p, state.pt, state.q))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for m, tm in enumerate(state.t):
            for i, xi in enumerate(grid.x):
                w.writerow([repr(float(tm)), repr(float(xi)), repr(float(a[m, i])),
                            repr(float(b[m, i])), repr(float(c[m, i]))])
