"""1-D grid, Dirichlet spectrum, moving control regions and the MGCC check."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Optional

import numpy as np


class MarginTooLarge(ValueError):
    pass


class RegionError(ValueError):
    pass


@dataclass(frozen=True)
class Grid1D:
    n: int
    x_min: float = 0.0
    x_max: float = 1.0

    def __post_init__(self):
        if self.n < 2:
            raise ValueError("Grid1D needs n >= 2 interior points")
        if not self.x_max > self.x_min:
            raise ValueError("x_max must exceed x_min")

    @property
    def length(self) -> float:
        return self.x_max - self.x_min

    @property
    def h(self) -> float:
        return self.length / (self.n + 1)

    @cached_property
    def x(self) -> np.ndarray:
        return self.x_min + self.h * np.arange(1, self.n + 1)

    def laplacian(self, y: np.ndarray) -> np.ndarray:
        """Delta_h y along the last axis, zero Dirichlet values implied."""
        out = -2.0 * y
        out[..., 1:] += y[..., :-1]
        out[..., :-1] += y[..., 1:]
        return out / self.h**2

    def neg_laplacian(self, y: np.ndarray) -> np.ndarray:
        return -self.laplacian(y)

    def inner(self, f, g) -> float:
        return float(self.h * np.dot(f, g))

    def l2(self, f) -> float:
        return math.sqrt(max(self.inner(f, f), 0.0))


@dataclass(frozen=True)
class DirichletSpectrum:
    """Eigenpairs of -Delta on the grid (sine modes, exact for the stencil)."""

    grid: Grid1D

    @cached_property
    def j(self) -> np.ndarray:
        return np.arange(1, self.grid.n + 1)

    @cached_property
    def lam_continuum(self) -> np.ndarray:
        return (self.j * np.pi / self.grid.length) ** 2

    @cached_property
    def lam(self) -> np.ndarray:
        g = self.grid
        return (4.0 / g.h**2) * np.sin(self.j * np.pi * g.h / (2.0 * g.length)) ** 2

    @cached_property
    def phi(self) -> np.ndarray:
        """Row j-1 holds phi_j sampled at the interior points."""
        g = self.grid
        return math.sqrt(2.0 / g.length) * np.sin(
            np.outer(self.j, (g.x - g.x_min)) * np.pi / g.length)

    def coeffs(self, f: np.ndarray) -> np.ndarray:
        """c_j = (f, phi_j)_h along the last axis."""
        return self.grid.h * f @ self.phi.T

    def synth(self, c: np.ndarray) -> np.ndarray:
        c = np.asarray(c, dtype=float)
        return c @ self.phi[: c.shape[-1]]

    def norm(self, f: np.ndarray, s: float = 0.0, use_continuum: bool = False) -> float:
        """(sum_j c_j^2 lam_j^s)^(1/2); s=-1 is H^-1, s=-2 is the V' surrogate."""
        lam = self.lam_continuum if use_continuum else self.lam
        c = self.coeffs(f)
        return math.sqrt(float(np.sum(c**2 * lam**s)))


# --- moving regions -----------------------------------------------------

@dataclass(frozen=True)
class MovingRegion:
    """O(t) = (a(t), b(t)), endpoints clipped to the domain."""

    a_fn: Callable[[float], float]
    b_fn: Callable[[float], float]
    grid: Grid1D
    spec: dict = field(default_factory=dict)

    @classmethod
    def static(cls, a: float, b: float, grid: Grid1D) -> "MovingRegion":
        if not b > a:
            raise RegionError("static region needs b > a")
        return cls(lambda t: a, lambda t: b, grid, {"type": "static", "a": a, "b": b})

    @classmethod
    def full(cls, grid: Grid1D) -> "MovingRegion":
        return cls(lambda t: grid.x_min, lambda t: grid.x_max, grid, {"type": "full"})

    @classmethod
    def sweep(cls, center0: float, speed: float, halfwidth: float, grid: Grid1D) -> "MovingRegion":
        return cls(
            lambda t: center0 + speed * t - halfwidth,
            lambda t: center0 + speed * t + halfwidth,
            grid,
            {"type": "sweep", "center0": center0, "speed": speed, "halfwidth": halfwidth},
        )

    @classmethod
    def from_config(cls, cfg: dict, grid: Grid1D) -> "MovingRegion":
        kind = cfg.get("type")
        if kind == "static":
            return cls.static(float(cfg["a"]), float(cfg["b"]), grid)
        if kind == "sweep":
            return cls.sweep(float(cfg["center0"]), float(cfg["speed"]),
                             float(cfg["halfwidth"]), grid)
        if kind == "full":
            return cls.full(grid)
        raise RegionError(f"unknown region type {kind!r}; expected static, sweep or full")

    def endpoints(self, t):
        t = np.asarray(t, dtype=float)
        a = np.clip(np.vectorize(self.a_fn, otypes=[float])(t), self.grid.x_min, self.grid.x_max)
        b = np.clip(np.vectorize(self.b_fn, otypes=[float])(t), self.grid.x_min, self.grid.x_max)
        return a, b

    def width_min(self, times: np.ndarray) -> float:
        a, b = self.endpoints(times)
        return float(np.min(b - a))

    def contains(self, t, x):
        a, b = self.endpoints(t)
        return (a < x) & (x < b)

    def indicator(self, times: np.ndarray) -> np.ndarray:
        """chi_O on (time, grid) as floats."""
        a, b = self.endpoints(times)
        x = self.grid.x[None, :]
        return ((a[:, None] < x) & (x < b[:, None])).astype(float)


def smoothstep5(tau):
    tau = np.clip(tau, 0.0, 1.0)
    return tau**3 * (10.0 - 15.0 * tau + 6.0 * tau**2)


@dataclass(frozen=True)
class CutoffWeight:
    rho: np.ndarray  # (n_t + 1, n)
    eps0: float
    times: np.ndarray


def interior_distance(region: MovingRegion, times: np.ndarray) -> np.ndarray:
    """Distance in x to the part of the boundary of O(t) lying inside the domain.

    Zero outside O(t); +inf-like (the domain length) when O(t) has no interior
    endpoint, i.e. O(t) is the whole domain.
    """
    g = region.grid
    a, b = region.endpoints(times)
    x = g.x[None, :]
    big = 2.0 * g.length
    da = np.where(a[:, None] > g.x_min, x - a[:, None], big)
    db = np.where(b[:, None] < g.x_max, b[:, None] - x, big)
    d = np.minimum(da, db)
    inside = (a[:, None] < x) & (x < b[:, None])
    return np.where(inside, d, 0.0)


def build_cutoff(region: MovingRegion, eps0: float, times: np.ndarray) -> CutoffWeight:
    """rho = 1 at distance >= eps0 from the moving boundary, 0 within eps0/2."""
    wmin = region.width_min(times)
    if not (0 < eps0 < wmin / 3.0):
        raise MarginTooLarge(f"eps0={eps0:g} must lie in (0, {wmin / 3.0:g})")
    d = interior_distance(region, times)
    half = 0.5 * eps0
    rho = smoothstep5((d - half) / half)
    rho = np.where(d > 0, rho, 0.0)
    return CutoffWeight(rho=rho, eps0=eps0, times=np.asarray(times, dtype=float))


# --- rays and MGCC --------------------------------------------------------

def ray_position(x0: float, direction: int, t, x_min: float, x_max: float):
    """Unit-speed characteristic with specular reflection at the endpoints."""
    L = x_max - x_min
    u = (x0 - x_min) + direction * np.asarray(t, dtype=float)
    u = np.mod(u, 2 * L)
    return x_min + np.where(u <= L, u, 2 * L - u)


def trace_ray(x0: float, direction: int, grid: Grid1D, T: float,
              region: MovingRegion, dt_ray: float) -> float:
    """First time (t, x(t)) lies in O; inf if the ray misses O before T."""
    if not grid.x_min < x0 < grid.x_max:
        raise ValueError("ray must start inside the domain")
    nsteps = int(math.ceil(T / dt_ray))
    ts = np.minimum(np.arange(nsteps + 1) * dt_ray, T)
    inside = region.contains(ts, ray_position(x0, direction, ts, grid.x_min, grid.x_max))
    hits = np.flatnonzero(inside)
    if hits.size == 0:
        return math.inf
    k = int(hits[0])
    if k == 0:
        return 0.0
    lo, hi = ts[k - 1], ts[k]
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if region.contains(mid, ray_position(x0, direction, mid, grid.x_min, grid.x_max)):
            hi = mid
        else:
            lo = mid
        if hi - lo < 1e-14:
            break
    return float(hi)


@dataclass
class MgccReport:
    rays_pass: bool
    worst_ray: tuple
    vertical_pass: bool
    L_U: float
    worst_point: float

    @property
    def mgcc_pass(self) -> bool:
        return self.rays_pass and self.vertical_pass and self.L_U > 0

    def to_dict(self) -> dict:
        x0, d, t = self.worst_ray
        return {
            "mgcc_pass": self.mgcc_pass,
            "rays_pass": self.rays_pass,
            "worst_ray": {"x0": x0, "direction": d, "hit_time": None if math.isinf(t) else t},
            "vertical_pass": self.vertical_pass,
            "L_U": self.L_U,
            "worst_point": self.worst_point,
        }


def dwell_times(region: MovingRegion, T: float, dt_ray: float) -> np.ndarray:
    """Longest single time interval each grid point spends inside O(t), t in [0, T]."""
    nsteps = int(math.ceil(T / dt_ray))
    ts = np.minimum(np.arange(nsteps + 1) * dt_ray, T)
    chi = region.indicator(ts) > 0  # (nt, n)
    best = np.zeros(chi.shape[1])
    run_start = np.full(chi.shape[1], -1)
    for k in range(chi.shape[0]):
        row = chi[k]
        starting = row & (run_start < 0)
        run_start[starting] = k
        ending = (~row) & (run_start >= 0)
        if np.any(ending):
            dur = ts[k - 1] - ts[run_start[ending]]
            best[ending] = np.maximum(best[ending], dur)
            run_start[ending] = -1
    open_runs = run_start >= 0
    if np.any(open_runs):
        dur = ts[-1] - ts[run_start[open_runs]]
        best[open_runs] = np.maximum(best[open_runs], dur)
    return best


def check_mgcc(region: MovingRegion, grid: Grid1D, T: float,
               n_rays: Optional[int] = None, dt_ray: Optional[float] = None) -> MgccReport:
    n_rays = n_rays or 2 * grid.n
    if n_rays < 2 * grid.n:
        raise ValueError("n_rays must be >= 2 n")
    dt_ray = dt_ray or grid.h / 4
    seeds = grid.x_min + grid.length * (np.arange(n_rays) + 0.5) / n_rays
    worst = (float(seeds[0]), 1, -1.0)
    for x0 in seeds:
        for d in (1, -1):
            th = trace_ray(float(x0), d, grid, T, region, dt_ray)
            if th > worst[2]:
                worst = (float(x0), d, th)
    rays_pass = math.isfinite(worst[2]) and worst[2] < T
    dwell = dwell_times(region, T, dt_ray)
    i = int(np.argmin(dwell))
    L_U = float(dwell[i])
    return MgccReport(
        rays_pass=rays_pass,
        worst_ray=worst,
        vertical_pass=bool(np.all(dwell > 0)),
        L_U=L_U,
        worst_point=float(grid.x[i]),
    )
