"""HUM control synthesis in filtered spectral coordinates.

Final adjoint data xi = (p0, p1, q0) is restricted to the first J modes and
stored as a coefficient vector c of length 3 J (blocks for p0, p1, q0). The
Gramian G acts on c; it is symmetric because the adjoint solver is the exact
transpose of the forward solver, and c . G c = ||w p||^2 over O.
"""
from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import linalg

from .dynamics import AdjointState, CoupledScheme, PrimalState, TimeMesh
from .geometry import CutoffWeight, DirichletSpectrum, Grid1D, MovingRegion, build_cutoff
from .kernel import MemoryKernel

log = logging.getLogger(__name__)


class CgStagnation(RuntimeError):
    pass


@dataclass
class CgConfig:
    max_iter: int = 300
    tol_rel: float = 1e-10
    tikhonov_eps: Optional[float] = None  # None -> 1e-10 * scale
    filter_cutoff: Optional[int] = None  # None -> n // 2
    stagnation_window: int = 20
    stagnation_tol: float = 1e-3
    raise_on_stagnation: bool = False
    precondition: bool = True  # Jacobi scaling from the Gramian diagonal

    def __post_init__(self):
        if not self.tol_rel > 0:
            raise ValueError("tol_rel must be positive")
        if self.tikhonov_eps is not None and self.tikhonov_eps < 0:
            raise ValueError("tikhonov_eps must be >= 0")


@dataclass
class ControlField:
    u: np.ndarray
    support_mask: np.ndarray


@dataclass
class ControlReport:
    terminal_norms: dict
    free_norms: dict
    control_norm: float
    cg_iterations: int
    residual_history: list
    functional_history: list
    obs_constant_estimate: Optional[float] = None
    stagnated: bool = False
    tikhonov_eps: float = 0.0

    @property
    def reduction(self) -> dict:
        return {k: (self.free_norms[k] / self.terminal_norms[k]
                    if self.terminal_norms[k] > 0 else math.inf)
                for k in self.terminal_norms}

    def to_dict(self) -> dict:
        red = self.reduction
        return {
            "terminal": dict(self.terminal_norms),
            "free": dict(self.free_norms),
            "reduction": {k: (None if math.isinf(v) else v) for k, v in red.items()},
            "control_norm": self.control_norm,
            "cg_iters": self.cg_iterations,
            "residuals": list(self.residual_history),
            "functional": list(self.functional_history),
            "obs_constant": self.obs_constant_estimate,
            "stagnated": self.stagnated,
            "tikhonov_eps": self.tikhonov_eps,
        }


class GramianOperator:
    def __init__(self, kernel: MemoryKernel, grid: Grid1D, mesh: TimeMesh,
                 region: MovingRegion, observation_mode: str = "weight_rho",
                 eps0: float = 0.02, filter_cutoff: Optional[int] = None,
                 targets: str = "full"):
        if targets not in ("full", "state"):
            raise ValueError("targets must be 'full' or 'state'")
        # "state" drives only (y, y_t) to zero and leaves the memory free
        self.targets = targets
        self.eps0 = eps0
        if observation_mode not in ("indicator", "weight_rho"):
            raise ValueError("observation_mode must be 'indicator' or 'weight_rho'")
        self.kernel, self.grid, self.mesh, self.region = kernel, grid, mesh, region
        self.mode = observation_mode
        self.scheme = CoupledScheme(kernel, grid, mesh)
        self.spectrum = DirichletSpectrum(grid)
        if observation_mode == "weight_rho":
            self.cutoff: Optional[CutoffWeight] = build_cutoff(region, eps0, mesh.times)
            self.weight = self.cutoff.rho
        else:
            self.cutoff = None
            self.weight = region.indicator(mesh.times)
        J = filter_cutoff if filter_cutoff is not None else grid.n // 2
        if not 1 <= J <= grid.n:
            raise ValueError("filter cutoff must lie in [1, n]")
        self.J = J
        self.phi = self.spectrum.phi[:J]

    @property
    def dim(self) -> int:
        return self.n_blocks * self.J

    @property
    def n_blocks(self) -> int:
        return 3 if self.targets == "full" else 2

    # coordinates <-> fields
    def unpack(self, c):
        c = np.asarray(c, dtype=float)
        J = self.J
        fields = [c[i * J:(i + 1) * J] @ self.phi for i in range(self.n_blocks)]
        if self.targets == "state":
            fields.append(np.zeros(self.grid.n))
        return tuple(fields)

    def project(self, f) -> np.ndarray:
        return self.grid.h * self.phi @ f

    def terminal_coords(self, state: PrimalState) -> np.ndarray:
        """Pairing of the terminal triple against each basis element."""
        blocks = [self.project(state.yt[-1]), -self.project(state.y[-1])]
        if self.targets == "full":
            blocks.append(-self.scheme.aT * self.project(state.z[-1]))
        return np.concatenate(blocks)

    def adjoint(self, c) -> AdjointState:
        return self.scheme.adjoint(*self.unpack(c))

    def observe(self, adj: AdjointState) -> np.ndarray:
        return self.weight * adj.p

    def forward_control(self, u, y0=None, y1=None, z0=None) -> PrimalState:
        n = self.grid.n
        zero = np.zeros(n)
        return self.scheme.forward(
            zero if y0 is None else y0, zero if y1 is None else y1,
            zero if z0 is None else z0, self.weight * u)

    def obs_inner(self, u, v) -> float:
        w = self.mesh.weights
        return float(self.grid.h * self.mesh.dt * np.einsum("m,mi,mi->", w, u, v))

    def apply(self, c) -> np.ndarray:
        c = np.asarray(c, dtype=float)
        if not np.any(c):
            return np.zeros_like(c)
        u = self.observe(self.adjoint(c))
        return self.terminal_coords(self.forward_control(u))

    def quadratic(self, c) -> float:
        """||w p||^2 over O, computed from the adjoint alone."""
        u = self.observe(self.adjoint(c))
        return self.obs_inner(u, u)

    def diagonal(self) -> np.ndarray:
        """diag(G), one adjoint solve per basis vector."""
        return np.array([self.quadratic(e) for e in np.eye(self.dim)])

    def trace_scale(self, n_probe: int = 8, seed: int = 0) -> float:
        """Hutchinson estimate of trace(G) / dim."""
        rng = np.random.default_rng(seed)
        z = rng.choice([-1.0, 1.0], size=(n_probe, self.dim))
        return float(np.mean([self.quadratic(v) for v in z])) / self.dim

    def assemble(self) -> np.ndarray:
        return np.column_stack([self.apply(e) for e in np.eye(self.dim)])

    def free_rhs(self, y0, y1, z0):
        free = self.scheme.forward(y0, y1, z0)
        return free, self.terminal_coords(free)


def apply_gramian(g: GramianOperator, xi) -> np.ndarray:
    """xi is a coefficient vector (length 3 J) or a (p0, p1, q0) field triple."""
    if isinstance(xi, tuple):
        xi = np.concatenate([g.project(f) for f in xi[:g.n_blocks]])
    return g.apply(xi)


def terminal_norms(g: GramianOperator, state: PrimalState) -> dict:
    sp = g.spectrum
    return {
        "y": g.grid.l2(state.y[-1]),
        "yt": sp.norm(state.yt[-1], -1.0),
        "memory": abs(g.scheme.aT) * g.grid.l2(state.z[-1]),
    }


def conjugate_gradient(apply, b, cfg: CgConfig, eps: float = 0.0, x0=None, diag=None):
    """(Jacobi-preconditioned) CG for (G + eps I) x = b.

    Returns x, residual norms, functional values, iterations, stagnation flag.
    """
    x = np.zeros_like(b) if x0 is None else np.array(x0, dtype=float)
    r = b - (apply(x) + eps * x) if np.any(x) else b.copy()
    dinv = np.ones_like(b) if diag is None else 1.0 / np.maximum(diag + eps, 1e-300)
    zr = dinv * r
    p = zr.copy()
    rr = float(r @ zr)
    b_norm = math.sqrt(float(b @ b)) or 1.0
    res = [math.sqrt(float(r @ r))]
    # functional 1/2 x.(G+eps)x - b.x = -1/2 (b.x + r.x)
    fun = [-0.5 * float(b @ x + r @ x)]
    stagnated = False
    it = 0
    for it in range(1, cfg.max_iter + 1):
        if res[-1] <= cfg.tol_rel * b_norm:
            it -= 1
            break
        Ap = apply(p) + eps * p
        pAp = float(p @ Ap)
        if pAp <= 0:
            stagnated = True
            it -= 1
            break
        alpha = rr / pAp
        x = x + alpha * p
        r = r - alpha * Ap
        zr = dinv * r
        rr_new = float(r @ zr)
        res.append(math.sqrt(float(r @ r)))
        fun.append(-0.5 * float(b @ x + r @ x))
        # no new residual minimum over the window
        w = cfg.stagnation_window
        if len(res) > w and min(res[-w:]) > (1.0 - cfg.stagnation_tol) * min(res[:-w]):
            stagnated = True
            break
        p = zr + (rr_new / rr) * p
        rr = rr_new
    return x, res, fun, it, stagnated


def hum_solve(g: GramianOperator, y0, y1, z0, cfg: Optional[CgConfig] = None,
              check_mgcc: bool = True):
    """Control driving (y, y_t, z) at time T to zero in the filtered modes.

    Returns the control, the report and the re-simulated controlled state.
    """
    cfg = cfg or CgConfig()
    if cfg.filter_cutoff is not None and cfg.filter_cutoff != g.J:
        raise ValueError("CgConfig.filter_cutoff disagrees with the Gramian's cutoff")
    if check_mgcc:
        from .geometry import check_mgcc as _mgcc
        rep = _mgcc(g.region, g.grid, g.mesh.T)
        if not rep.mgcc_pass:
            warnings.warn("control region fails MGCC; expect poor terminal reduction",
                          RuntimeWarning, stacklevel=2)
    free, b_free = g.free_rhs(y0, y1, z0)
    rhs = -b_free
    diag = g.diagonal() if cfg.precondition else None
    eps = cfg.tikhonov_eps
    if eps is None:
        scale = float(np.mean(diag)) if diag is not None else g.trace_scale()
        eps = 1e-10 * scale
    c, res, fun, iters, stagnated = conjugate_gradient(g.apply, rhs, cfg, eps, diag=diag)
    if stagnated:
        msg = f"CG stagnated after {iters} iterations"
        if cfg.raise_on_stagnation:
            raise CgStagnation(msg)
        log.warning(msg)
    u = g.observe(g.adjoint(c))
    controlled = g.forward_control(u, y0, y1, z0)
    report = ControlReport(
        terminal_norms=terminal_norms(g, controlled),
        free_norms=terminal_norms(g, free),
        control_norm=math.sqrt(g.obs_inner(u, u)),
        cg_iterations=iters,
        residual_history=res,
        functional_history=fun,
        stagnated=stagnated,
        tikhonov_eps=eps,
    )
    return ControlField(u=u, support_mask=g.weight), report, controlled


# --- functional J -----------------------------------------------------------

def _wave_op(g: GramianOperator, f: np.ndarray) -> np.ndarray:
    """(d_tt + Delta_h) f on the space-time grid."""
    dt = g.mesh.dt
    ftt = np.empty_like(f)
    ftt[1:-1] = (f[2:] - 2 * f[1:-1] + f[:-2]) / dt**2
    ftt[0] = (2 * f[0] - 5 * f[1] + 4 * f[2] - f[3]) / dt**2
    ftt[-1] = (2 * f[-1] - 5 * f[-2] + 4 * f[-3] - f[-4]) / dt**2
    return ftt + g.grid.laplacian(f)


def _observation(g: GramianOperator, adj: AdjointState, mode: str) -> np.ndarray:
    if mode == "L2_shifted":
        return g.observe(adj)
    if mode == "H2_weighted":
        rho = g.cutoff.rho if g.cutoff is not None else g.weight
        return _wave_op(g, rho * adj.p)
    raise ValueError("mode must be 'H2_weighted' or 'L2_shifted'")


def evaluate_J(g: GramianOperator, c, targets, mode: str = "L2_shifted") -> float:
    """1/2 ||obs(p)||^2 + <p(0), y1> - (p_t(0), y0) - M(T,0) (q(0), z0)."""
    adj = g.adjoint(c)
    obs = _observation(g, adj, mode)
    y0, y1, z0 = targets
    return 0.5 * g.obs_inner(obs, obs) + g.scheme.initial_pairing(adj, y0, y1, z0)


def grad_J_direction(g: GramianOperator, c, d, targets, mode: str = "L2_shifted") -> float:
    """Directional derivative of J at c along d."""
    adj_c, adj_d = g.adjoint(c), g.adjoint(d)
    y0, y1, z0 = targets
    return (g.obs_inner(_observation(g, adj_c, mode), _observation(g, adj_d, mode))
            + g.scheme.initial_pairing(adj_d, y0, y1, z0))


# --- observability constant ---------------------------------------------

def initial_energy_factor(g: GramianOperator, adjs) -> np.ndarray:
    """Rows R with R R^T the Gram matrix of |p(0)|_{-1}^2 + |p_t(0)|_{V'}^2 + |q(0)|_{V'}^2."""
    sp = g.spectrum
    return np.array([
        np.concatenate([sp.coeffs(a.p[0]) * sp.lam**-0.5,
                        sp.coeffs(a.pt[0]) / sp.lam,
                        sp.coeffs(a.q[0]) / sp.lam])
        for a in adjs])


def observation_factor(g: GramianOperator, adjs) -> np.ndarray:
    """Rows O with O O^T = G (quadrature weights folded in)."""
    sw = np.sqrt(g.mesh.weights[:, None] * (g.grid.h * g.mesh.dt))
    return np.array([(g.observe(a) * sw).ravel() for a in adjs])


def estimate_observability_constant(g: GramianOperator, J_max: Optional[int] = None) -> float:
    """Sharp constant of the negative-norm observability inequality on the filtered data.

    max over xi of (|p(0)|_{-1}^2 + |p_t(0)|_{V'}^2 + |q(0)|_{V'}^2) / ||w p||^2_O,
    computed from an SVD of the observation factor O rather than of G = O O^T,
    so singular directions down to ~1e-16 |O| are still resolved.
    """
    if J_max is not None and J_max != g.J:
        g = GramianOperator(g.kernel, g.grid, g.mesh, g.region, g.mode,
                            g.eps0, J_max, g.targets)
    adjs = [g.adjoint(e) for e in np.eye(g.dim)]
    R = initial_energy_factor(g, adjs)
    U, S, _ = linalg.svd(observation_factor(g, adjs), full_matrices=False)
    if S[-1] <= 0:
        return math.inf
    B = (R.T @ U) / S
    return float(linalg.norm(B, 2) ** 2)
