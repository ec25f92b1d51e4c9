"""memwave <experiment> --config path.json [--out dir] [--jobs N] [--seed S]"""
from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import analysis, control, dynamics, geometry, kernel
from .config import (EXPERIMENTS, ConfigInvalid, ExperimentConfig, from_dict,
                     load_config, write_report)

log = logging.getLogger("memwave")

# experiments whose verdict is a measurement rather than a tolerance check;
# they exit 0 unless the config states what to expect
CHECKS = ("mgcc-check", "kernel-check")


def verdict(value, tol, op=">="):
    ok = value >= tol if op == ">=" else value <= tol
    return {"value": value, "tol": tol, "op": op, "pass": bool(ok)}


# --- experiments --------------------------------------------------------------

def run_simulate(cfg: ExperimentConfig, out: Path):
    k, g, m = cfg.build_kernel(), cfg.grid(), cfg.mesh()
    y0, y1, z0 = cfg.field_data("initial", ("y0", "y1", "z0"))
    solver = cfg.params.get("solver", "coupled")
    if solver == "coupled":
        st = dynamics.solve_primal_coupled(k, g, m, y0, y1, z0)
    elif solver == "memory":
        st = dynamics.solve_primal_memory(k, g, m, y0, y1)
    else:
        raise ValueError("params.solver must be 'coupled' or 'memory'")
    dynamics.write_trajectory_csv(out / "trajectory.csv", st, g, "primal")
    sp = geometry.DirichletSpectrum(g)
    payload = {
        "solver": solver,
        "energy": [dynamics.energy(st, 0, g), dynamics.energy(st, m.n_t, g)],
        "terminal": {"y": g.l2(st.y[-1]), "yt": sp.norm(st.yt[-1], -1.0),
                     "memory": g.l2(st.memory[-1])},
    }
    return payload, {}, ["trajectory.csv"]


def run_adjoint(cfg: ExperimentConfig, out: Path):
    k, g, m = cfg.build_kernel(), cfg.grid(), cfg.mesh()
    p0, p1, q0 = cfg.field_data("final", ("p0", "p1", "q0"))
    variant = cfg.params.get("variant", "coupled")
    adj = dynamics.solve_adjoint(k, g, m, p0, p1, q0, variant=variant)
    dynamics.write_trajectory_csv(out / "adjoint.csv", adj, g, "adjoint")
    verdicts = {}
    payload = {"variant": variant}
    if variant == "coupled":
        # duality against seeded random data and forcing
        rng = np.random.default_rng(cfg.seed)
        sch = dynamics.CoupledScheme(k, g, m)
        y0, y1, z0 = rng.standard_normal((3, g.n))
        u = rng.standard_normal((m.n_t + 1, g.n))
        st = sch.forward(y0, y1, z0, u)
        lhs = sch.pairing((p0, p1, q0), st)
        rhs = sch.initial_pairing(adj, y0, y1, z0) + g.h * m.dt * float(
            np.einsum("m,mi,mi->", m.weights, adj.p, u))
        rel = abs(lhs - rhs) / max(abs(lhs), abs(rhs), 1e-300)
        payload["duality"] = {"lhs": lhs, "rhs": rhs, "rel": rel}
        verdicts["duality"] = verdict(rel, cfg.tol("duality_rel"), "<=")
    return payload, verdicts, ["adjoint.csv"]


def _gramian(cfg: ExperimentConfig, region_spec=None) -> control.GramianOperator:
    cg = cfg.cg_config()
    return control.GramianOperator(
        cfg.build_kernel(), cfg.grid(), cfg.mesh(), cfg.build_region(region_spec),
        cfg.observation_mode, cfg.eps0, cg.filter_cutoff, cfg.targets)


def _hum(cfg: ExperimentConfig, region_spec=None):
    g = _gramian(cfg, region_spec)
    y0, y1, z0 = cfg.field_data("initial", ("y0", "y1", "z0"))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        field, rep, st = control.hum_solve(g, y0, y1, z0, cfg.cg_config())
    return g, field, rep, st


def _write_control_csv(path, g, field):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("t", "x", "u"))
        for mi, tm in enumerate(g.mesh.times):
            for i, xi in enumerate(g.grid.x):
                w.writerow((repr(float(tm)), repr(float(xi)), repr(float(field.u[mi, i]))))


def _reduction_verdicts(cfg, rep, keys):
    tol = cfg.tol("min_reduction")
    return {f"reduction_{k}": verdict(rep.reduction[k], tol) for k in keys}


def run_control(cfg: ExperimentConfig, out: Path):
    g, field, rep, st = _hum(cfg)
    if cfg.params.get("obs_constant"):
        rep.obs_constant_estimate = control.estimate_observability_constant(g)
    keys = ("y", "yt", "memory") if cfg.targets == "full" else ("y", "yt")
    verdicts = _reduction_verdicts(cfg, rep, keys)
    payload = {"control": rep.to_dict(),
               "mgcc": geometry.check_mgcc(g.region, g.grid, g.mesh.T).to_dict()}
    if cfg.params.get("rest_certificate"):
        rc = analysis.rest_certificate(g.kernel, g.grid, g.mesh, st,
                                       tol_factor=cfg.tol("rest_factor"))
        payload["rest"] = rc.to_dict()
        verdicts["rest"] = verdict(rc.max_norm, rc.tol, "<=")
    dynamics.write_trajectory_csv(out / "trajectory.csv", st, g.grid, "primal")
    _write_control_csv(out / "control.csv", g, field)
    write_report(out / "control_report.json", rep.to_dict())
    return payload, verdicts, ["trajectory.csv", "control.csv", "control_report.json"]


def run_mgcc(cfg: ExperimentConfig, out: Path):
    g = cfg.grid()
    rep = geometry.check_mgcc(cfg.build_region(), g, cfg.T,
                              cfg.params.get("n_rays"), cfg.params.get("dt_ray"))
    return rep.to_dict(), {}, []


def run_kernel_check(cfg: ExperimentConfig, out: Path):
    rep = kernel.check_kernel(cfg.build_kernel(), cfg.params.get("n_samples", 64),
                              cfg.params.get("tol_mult"))
    return rep.to_dict(), {}, []


def run_sharpness(cfg: ExperimentConfig, out: Path):
    s_list = [float(s) for s in cfg.params.get("s_list", [0, 1, 1.5, 2])]
    j_list = [int(j) for j in cfg.params.get("j_list", range(1, 9))]
    res = analysis.sharpness_experiment(cfg.grid(), cfg.mesh(), s_list, j_list)
    analysis.write_sharpness_csv(out / "sharpness.csv", res)
    tol = cfg.tol("slope_tol")
    verdicts = {f"slope_{s:g}": verdict(abs(res.slopes[s] - (2.0 - s)), tol, "<=")
                for s in s_list}
    verdicts["lower_bound"] = verdict(float(res.lower_bound_ok), 1.0)
    return res.to_dict(), verdicts, ["sharpness.csv"]


def run_ode_demo(cfg: ExperimentConfig, out: Path):
    k, m = cfg.build_kernel(), cfg.mesh()
    eta0 = float(cfg.params.get("eta0", 1.0))
    v = cfg.params.get("v", 0.0)
    eta = dynamics.solve_scalar_ode(k, m, eta0, v)
    with open(out / "ode.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("t", "eta"))
        for t, e in zip(m.times, eta):
            w.writerow((repr(float(t)), repr(float(e))))
    payload = {"eta_T": float(eta[-1])}
    verdicts = {}
    artifacts = ["ode.csv"]
    K = cfg.params.get("muntz_K")
    if K:
        rng = np.random.default_rng(cfg.seed)
        n_cells = int(cfg.params.get("muntz_cells", K))
        rep = analysis.muntz_moments(rng.standard_normal(n_cells), cfg.T, int(K),
                                     cells=cfg.params.get("cells", "chebyshev"))
        analysis.write_moments_csv(out / "moments.csv", rep)
        artifacts.append("moments.csv")
        payload["muntz"] = {k_: v_ for k_, v_ in rep.to_dict().items() if k_ != "moments"}
        verdicts["muntz_ratio"] = verdict(rep.ls_norm, cfg.tol("muntz_ratio"), "<=")
    return payload, verdicts, artifacts


def run_compare(cfg: ExperimentConfig, out: Path):
    names = list(cfg.regions)
    if len(names) != 2:
        raise ValueError("compare needs exactly two regions")
    reports, gs = {}, {}
    for name in names:
        g, field, rep, st = _hum(cfg, cfg.regions[name])
        reports[name], gs[name] = rep, g
        write_report(out / f"control_{name}.json", rep.to_dict())
    a, b = names
    ratio = {key: reports[a].reduction[key] / reports[b].reduction[key]
             for key in reports[a].reduction}
    payload = {"reports": {n: r.to_dict() for n, r in reports.items()}, "ratio": ratio}
    verdicts = {"ratio_memory": verdict(ratio["memory"], cfg.tol("min_ratio"))}
    J_list = cfg.params.get("obs_J")
    if J_list:
        obs = {n: {str(J): control.estimate_observability_constant(gs[n], int(J))
                   for J in J_list} for n in names}
        payload["obs_constant"] = obs
        lo, hi = str(J_list[0]), str(J_list[-1])
        verdicts["obs_growth"] = verdict(obs[b][hi] / obs[b][lo], cfg.tol("min_obs_growth"))
    return payload, verdicts, [f"control_{n}.json" for n in names]


def _sweep_job(args):
    d, out = args
    try:
        rep = run(from_dict(d), Path(out))
        return {"out": out, "pass": rep["pass"], "exit": rep["exit_code"]}
    except Exception as exc:  # a failing job is reported, not fatal
        return {"out": out, "pass": False, "exit": 1, "error": f"{type(exc).__name__}: {exc}"}


def run_sweep(cfg: ExperimentConfig, out: Path, jobs: int = 1, base_dir: Path = Path(".")):
    tasks = []
    for i, item in enumerate(cfg.configs):
        if isinstance(item, str):
            item = load_config(base_dir / item).to_dict()
        d = dict(item)
        d.setdefault("seed", cfg.seed)
        if d.get("experiment") == "sweep":
            raise ValueError("nested sweeps are not supported")
        tasks.append((d, str(out / f"job_{i:03d}")))
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            results = list(ex.map(_sweep_job, tasks))
    else:
        results = [_sweep_job(t) for t in tasks]
    verdicts = {f"job_{i:03d}": verdict(float(r["exit"] == 0), 1.0) for i, r in enumerate(results)}
    return {"jobs": results}, verdicts, [r["out"] for r in results]


RUNNERS = {
    "simulate": run_simulate,
    "adjoint": run_adjoint,
    "control": run_control,
    "mgcc-check": run_mgcc,
    "kernel-check": run_kernel_check,
    "sharpness": run_sharpness,
    "ode-demo": run_ode_demo,
    "compare": run_compare,
}


def _outcome(cfg: ExperimentConfig, payload: dict, verdicts: dict) -> bool:
    if cfg.experiment == "mgcc-check":
        return bool(payload["mgcc_pass"])
    if cfg.experiment == "kernel-check":
        return bool(payload.get("multiplicative_pass"))
    return all(v["pass"] for v in verdicts.values())


def run(cfg: ExperimentConfig, out: Path, jobs: int = 1, base_dir: Path = Path(".")) -> dict:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    if cfg.experiment == "sweep":
        payload, verdicts, artifacts = run_sweep(cfg, out, jobs, base_dir)
    else:
        payload, verdicts, artifacts = RUNNERS[cfg.experiment](cfg, out)
    outcome = _outcome(cfg, payload, verdicts)
    if cfg.expect is not None:
        code = 0 if outcome == (cfg.expect == "pass") else 2
    elif cfg.experiment in CHECKS:
        code = 0
    else:
        code = 0 if outcome else 2
    report = {
        "experiment": cfg.experiment,
        "config": cfg.to_dict(),
        "payload": payload,
        "verdicts": verdicts,
        "outcome": outcome,
        "pass": code == 0,
        "exit_code": code,
        "artifacts": artifacts,
        "timings": {"wall_s": time.perf_counter() - t0},
    }
    write_report(out / "report.json", report)
    return report


class _Parser(argparse.ArgumentParser):
    # usage errors are errors (exit 1); exit 2 is reserved for verdict failures
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="memwave", description=__doc__)
    p.add_argument("experiment", help=f"one of: {', '.join(EXPERIMENTS)}")
    p.add_argument("--config", required=True, help="JSON experiment config")
    p.add_argument("--out", default=None, help="output directory (MEMWAVE_OUT overrides)")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        path = Path(args.config)
        if args.experiment not in EXPERIMENTS:
            raise ConfigInvalid(path, f"unknown experiment {args.experiment!r}; "
                                      f"valid: {', '.join(EXPERIMENTS)}")
        cfg = load_config(path)
        if cfg.experiment != args.experiment:
            raise ConfigInvalid(path, f"config is for {cfg.experiment!r}, not {args.experiment!r}")
        if args.seed is not None:
            cfg.seed = args.seed
        out = os.environ.get("MEMWAVE_OUT") or args.out or cfg.out or "out"
        if args.jobs < 1:
            raise ConfigInvalid(path, "--jobs must be >= 1")
        report = run(cfg, Path(out), args.jobs, path.parent)
    except ConfigInvalid as exc:
        print(f"memwave: invalid config: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:
        print(f"memwave: {args.experiment} failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    for name, v in report["verdicts"].items():
        print(f"{name}: {'PASS' if v['pass'] else 'FAIL'} ({v['value']:.4g} {v['op']} {v['tol']:.4g})")
    print(f"{cfg.experiment}: exit {report['exit_code']} -> {Path(out) / 'report.json'}")
    return report["exit_code"]


if __name__ == "__main__":
    sys.exit(main())
