"""Side experiments: the explicit sharpness family, Muntz moments, rest past T."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from numpy.polynomial import legendre

from .dynamics import PrimalState, TimeMesh, extend_past_T
from .geometry import DirichletSpectrum, Grid1D
from .kernel import MemoryKernel, check_multiplicative


class ModeUnresolvable(ValueError):
    pass


# --- mu_j ---------------------------------------------------------------

@dataclass(frozen=True)
class MuSolution:
    lam: float
    mu: float
    a: float
    b: float
    residual: float
    bound_holds: bool  # |mu| < 6 / lam

    def __iter__(self):
        return iter((self.mu, self.a, self.b))


def solve_mu(lam: float) -> MuSolution:
    """Real root of mu^3 + lam mu + 1 = 0 via Cardano.

    mu = cbrt(a) + cbrt(b) cancels badly for large lam; since
    cbrt(a) cbrt(b) = -lam/3 and a + b = -1 the same root is
    -1 / (cbrt(a)^2 + lam/3 + cbrt(b)^2), which has no cancellation.
    """
    lam = float(lam)
    if not lam > 0:
        raise ValueError("lambda must be positive")
    r = math.sqrt(0.25 + lam**3 / 27.0)
    a = -0.5 + r
    b = -0.5 - r
    A, B = np.cbrt(a), np.cbrt(b)
    mu = -1.0 / (A * A + lam / 3.0 + B * B)
    # one Newton polish
    mu -= (mu**3 + lam * mu + 1.0) / (3 * mu**2 + lam)
    res = abs(mu**3 + lam * mu + 1.0)
    return MuSolution(lam, float(mu), a, b, res, abs(mu) < 6.0 / lam)


def mu_bisection(lam: float, tol: float = 1e-15) -> float:
    """Reference root by bisection on [-1/lam - 1, 0]."""
    f = lambda m: m**3 + lam * m + 1.0
    lo, hi = -1.0 / lam - 1.0, 0.0
    while f(lo) > 0:
        lo *= 2
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if f(mid) > 0:
            hi = mid
        else:
            lo = mid
        if hi - lo <= tol * abs(mid):
            break
    return 0.5 * (lo + hi)


# --- sharpness ------------------------------------------------------------

@dataclass
class SharpnessRecord:
    j: int
    lambda_j: float
    mu_j: float
    lhs: float
    rhs_s: dict

    def ratio(self, s: float) -> float:
        return self.lhs / self.rhs_s[s]


@dataclass
class SharpnessResult:
    records: list
    slopes: dict
    lower_bound_ok: bool

    def to_dict(self) -> dict:
        return {
            "slopes": {str(s): v for s, v in self.slopes.items()},
            "expected": {str(s): 2.0 - s for s in self.slopes},
            "lower_bound_ok": self.lower_bound_ok,
            "records": [{"j": r.j, "lambda": r.lambda_j, "mu": r.mu_j, "lhs": r.lhs,
                         "rhs": {str(s): v for s, v in r.rhs_s.items()}}
                        for r in self.records],
        }


def _dt_first(f, dt):
    return np.gradient(f, dt, axis=0, edge_order=2)


def _dt_second(f, dt):
    out = np.empty_like(f)
    out[1:-1] = (f[2:] - 2 * f[1:-1] + f[:-2]) / dt**2
    out[0] = (2 * f[0] - 5 * f[1] + 4 * f[2] - f[3]) / dt**2
    out[-1] = (2 * f[-1] - 5 * f[-2] + 4 * f[-3] - f[-4]) / dt**2
    return out


def space_time_norm2(p: np.ndarray, s: float, spec: DirichletSpectrum, mesh: TimeMesh) -> float:
    """Discrete ||p||^2_{H^s(Q)}: spectral H^s in x plus an interpolated time part."""
    c = spec.coeffs(p)
    w = mesh.weights * mesh.dt
    total = float(w @ np.sum(c**2 * spec.lam**s, axis=1))
    if s > 0:
        k = int(math.ceil(s))
        d = _dt_first(p, mesh.dt) if k == 1 else _dt_second(p, mesh.dt)
        total += (s / k) * float(w @ np.sum(d**2, axis=1)) * spec.grid.h
    return total


def sharpness_experiment(grid: Grid1D, mesh: TimeMesh, s_list: Sequence[float],
                         j_list: Sequence[int]) -> SharpnessResult:
    """lhs / rhs_s along p^j = e^{mu_j (T-t)} phi_j, q^j = p^j / mu_j (M = 1)."""
    spec = DirichletSpectrum(grid)
    jmax = grid.n // 4
    bad = [j for j in j_list if not 1 <= j <= jmax]
    if bad:
        raise ModeUnresolvable(f"modes {bad} outside 1..{jmax} (n/4)")
    t = mesh.times
    T = mesh.T
    records = []
    ok = True
    for j in j_list:
        lam = float(spec.lam[j - 1])
        sol = solve_mu(lam)
        mu = sol.mu
        phi = spec.phi[j - 1]
        p = np.exp(mu * (T - t))[:, None] * phi[None, :]
        q = p / mu
        pt0 = _dt_first(p, mesh.dt)[0]
        lhs = spec.norm(p[0], 1.0) ** 2 + grid.l2(pt0) ** 2 + grid.l2(q[0]) ** 2
        rhs = {float(s): space_time_norm2(p, float(s), spec, mesh) for s in s_list}
        records.append(SharpnessRecord(j, lam, mu, lhs, rhs))
        ok &= lhs >= lam**2 / 36.0
    slopes = {}
    loglam = np.log([r.lambda_j for r in records])
    for s in s_list:
        y = np.log([r.ratio(float(s)) for r in records])
        slopes[float(s)] = float(np.polyfit(loglam, y, 1)[0]) if len(records) > 1 else math.nan
    return SharpnessResult(records, slopes, bool(ok))


def write_sharpness_csv(path, result: SharpnessResult) -> None:
    s_list = list(result.slopes)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["j", "lambda", "mu", "lhs"] + [f"rhs_{s:g}" for s in s_list]
                   + [f"ratio_{s:g}" for s in s_list])
        for r in result.records:
            w.writerow([r.j, repr(r.lambda_j), repr(r.mu_j), repr(r.lhs)]
                       + [repr(r.rhs_s[s]) for s in s_list]
                       + [repr(r.ratio(s)) for s in s_list])


# --- Muntz moments --------------------------------------------------------

@dataclass
class MomentReport:
    K: int
    moments: np.ndarray
    sigma_min: float
    ls_norm: float
    rank: int

    def to_dict(self) -> dict:
        return {"K": self.K, "moments": [float(m) for m in self.moments],
                "sigma_min": self.sigma_min, "ls_norm": self.ls_norm, "rank": self.rank}


def cell_edges(T: float, n_cells: int, cells: str = "chebyshev") -> np.ndarray:
    """Partition of [0, T]; Chebyshev grading keeps degree ~n_cells polynomials resolved."""
    if cells == "uniform":
        return np.linspace(0.0, T, n_cells + 1)
    if cells == "chebyshev":
        return T * 0.5 * (1.0 - np.cos(np.pi * np.arange(n_cells + 1) / n_cells))
    raise ValueError("cells must be 'uniform' or 'chebyshev'")


def _cell_nodes(edges: np.ndarray, order: int = 4):
    """Gauss-Legendre nodes/weights on each cell."""
    x, w = legendre.leggauss(order)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[1:] + edges[:-1])
    return mid[:, None] + half[:, None] * x[None, :], half[:, None] * w[None, :]


def raw_moments(eta: np.ndarray, T: float, K: int, order: int = 4,
                cells: str = "chebyshev") -> np.ndarray:
    """m_k = int_0^T (s+1)^{T+k} eta(s) ds = int_1^{T+1} r^k r^T eta(r-1) dr, eta cellwise constant."""
    eta = np.asarray(eta, dtype=float)
    nodes, weights = _cell_nodes(cell_edges(T, eta.size, cells), order)
    r = nodes + 1.0
    base = r**T * weights * eta[:, None]
    return np.array([float(np.sum(base * r**k)) for k in range(K)])


def moment_matrix(T: float, K: int, n_cells: int, order: int = 4,
                  cells: str = "chebyshev") -> np.ndarray:
    """Rows int_cell (s+1)^T P_k(x(s)) ds with P_k Legendre on [1, T+1].

    Same row space as the monomial rows (s+1)^{T+k}, k < K, but well scaled,
    so the set of eta annihilated by all K moments is computed accurately.
    """
    nodes, weights = _cell_nodes(cell_edges(T, n_cells, cells), order)
    V = legendre.legvander(2.0 * nodes / T - 1.0, K - 1)  # (cells, order, K)
    norm = np.sqrt(2.0 * np.arange(K) + 1.0)
    return np.einsum("co,cok->kc", (nodes + 1.0) ** T * weights, V) * norm[:, None]


def muntz_moments(eta: np.ndarray, T: float, K: int, order: int = 4,
                  cells: str = "chebyshev") -> MomentReport:
    """Moments of a cellwise-constant eta and the part of it that all K moments miss.

    ``ls_norm`` is ||eta_0|| / ||eta|| in L2(0, T), where eta_0 is the part of
    eta that all K moments miss (its projection onto their common null space).
    """
    if K < 1:
        raise ValueError("K must be >= 1")
    eta = np.asarray(eta, dtype=float)
    edges = cell_edges(T, eta.size, cells)
    sw = np.sqrt(np.diff(edges))
    W = moment_matrix(T, K, eta.size, order, cells) / sw[None, :]
    _, S, Vt = np.linalg.svd(W, full_matrices=False)
    tol = S[0] * max(W.shape) * np.finfo(float).eps
    r = int(np.sum(S > tol))
    zeta = sw * eta
    Vr = Vt[:r]
    seen = Vr.T @ (Vr @ zeta)
    en = float(np.linalg.norm(zeta))
    return MomentReport(
        K=K,
        moments=raw_moments(eta, T, K, order, cells),
        sigma_min=float(S[-1]) if K <= eta.size else 0.0,
        ls_norm=float(np.linalg.norm(zeta - seen)) / en if en > 0 else 0.0,
        rank=r,
    )


def write_moments_csv(path, rep: MomentReport) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["k", "m_k"])
        for k, m in enumerate(rep.moments):
            w.writerow([k, repr(float(m))])


# --- rest past T ------------------------------------------------------------

@dataclass
class RestCertificate:
    passed: bool
    max_norm: float
    tol: float
    terminal: float
    multiplicative: bool

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def rest_certificate(k: MemoryKernel, grid: Grid1D, mesh: TimeMesh, state: PrimalState,
                     tol: Optional[float] = None, tol_factor: float = 10.0) -> RestCertificate:
    """Free continuation on (T, 2T]; pass if max ||y||_{L2} + ||y_t||_{-1} <= tol.

    The default tol is ``tol_factor`` times the terminal value of the same norm.
    """
    mult = bool(check_multiplicative(k, n_samples=24).multiplicative_pass)
    spec = DirichletSpectrum(grid)
    ext = extend_past_T(k, grid, mesh, state, carry_history=not mult)
    norms = np.array([grid.l2(ext.y[m]) + spec.norm(ext.yt[m], -1.0)
                      for m in range(1, ext.y.shape[0])])
    terminal = grid.l2(state.y[-1]) + spec.norm(state.yt[-1], -1.0)
    if tol is None:
        tol = tol_factor * terminal
    mx = float(norms.max()) if norms.size else 0.0
    return RestCertificate(bool(mx <= tol), mx, float(tol), float(terminal), mult)
