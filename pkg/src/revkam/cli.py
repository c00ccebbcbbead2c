"""Command-line driver: config ingestion, pipeline orchestration, reports.

Reports are deterministic: identical config + seed produce byte-identical
JSON (sorted keys, no timestamps, shortest-repr floats).  Angles are
serialized in radians in [0, 2pi); matrices as row-major nested lists.

Exit codes: 0 success, 1 config error, 2 hypothesis failure (Diophantine
resonance / rank deficiency), 3 solver non-convergence.
"""

from __future__ import annotations

import argparse
import json
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .homological import ResonanceError, SmallDivisorError, diophantine_check
from .solver import (
    Context1Family,
    Context2Family,
    NoConvergenceError,
    RankDeficiencyError,
    SolverConfig,
    _context1_solution,
    _context2_solution,
)
from .systems import ReversibleSystem, load_system, system_from_dict, verify_solution
from .tmatrix import classify_anticommuting_pair

__all__ = ["RunConfig", "run", "main"]

REPORT_VERSION = "1"
MODES = ("context1", "context2", "check-dioph", "normal-form", "verify", "scan")

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_HYPOTHESIS = 2
EXIT_NO_CONVERGENCE = 3


@dataclass
class RunConfig:
    """Validated run configuration (see the JSON schema in the README)."""

    mode: str
    system: ReversibleSystem | None = None
    nu0: np.ndarray | None = None
    y0: np.ndarray | None = None
    eps: tuple = (0.0,)
    chi_grid: list | None = None
    kappa: int = 0
    fix_indices: tuple = ()
    solver: SolverConfig = field(default_factory=SolverConfig)
    seed: int = 0
    out: str | None = None
    csv: str | None = None
    omega: np.ndarray | None = None
    beta: np.ndarray | None = None
    tau: float | None = None
    dioph_jmax: int = 50
    K: np.ndarray | None = None
    Lam: np.ndarray | None = None
    verify_T: float = 50.0
    verify_dt: float = 1e-3
    workers: int = 1

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        mode = data.get("mode")
        if mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
        system = None
        if "system" in data and data["system"] is not None:
            spec = data["system"]
            system = load_system(spec) if isinstance(spec, str) else system_from_dict(spec)
        solver = SolverConfig(**data.get("solver", {}))
        kappa = int(data.get("kappa", 0))
        fix = tuple(int(i) for i in data.get("fix_indices", ()))
        if len(fix) != kappa:
            raise ValueError("fix_indices must list exactly kappa indices")
        cfg = cls(
            mode=mode,
            system=system,
            nu0=_opt_arr(data.get("nu0")),
            y0=_opt_arr(data.get("y0")),
            eps=tuple(float(e) for e in np.atleast_1d(data.get("eps", [0.0]))),
            chi_grid=data.get("chi_grid"),
            kappa=kappa,
            fix_indices=fix,
            solver=solver,
            seed=int(data.get("seed", 0)),
            out=data.get("out"),
            csv=data.get("csv"),
            omega=_opt_arr(data.get("omega")),
            beta=_opt_arr(data.get("beta", [] if "omega" in data else None)),
            tau=data.get("tau"),
            dioph_jmax=int(data.get("dioph_jmax", 50)),
            K=_opt_arr(data.get("K")),
            Lam=_opt_arr(data.get("Lambda")),
            verify_T=float(data.get("verify", {}).get("T", 50.0)),
            verify_dt=float(data.get("verify", {}).get("dt", 1e-3)),
            workers=int(data.get("workers", 1)),
        )
        cfg._validate()
        return cfg

    def _validate(self):
        needs_system = self.mode in ("context1", "context2", "verify", "scan")
        if needs_system and self.system is None:
            raise ValueError(f"mode {self.mode} requires a system definition")
        if needs_system and self.nu0 is None:
            raise ValueError(f"mode {self.mode} requires nu0")
        if self.mode == "context1" and self.y0 is None:
            raise ValueError("mode context1 requires y0")
        if self.mode == "normal-form" and (self.K is None or self.Lam is None):
            raise ValueError("mode normal-form requires K and Lambda matrices")
        if self.mode == "check-dioph" and self.omega is None and self.system is None:
            raise ValueError("mode check-dioph requires omega or a system")


def _opt_arr(v):
    return None if v is None else np.asarray(v, float)


def _pyify(obj):
    """Recursively convert numpy containers to plain JSON-compatible types."""
    if isinstance(obj, dict):
        return {str(k): _pyify(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_pyify(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _pyify(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if np.isfinite(v) else repr(v)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    return obj


def _wrap_angle(x):
    return np.mod(np.asarray(x, float), 2.0 * np.pi)


def _write_report(report: dict, path: str | None) -> str:
    text = json.dumps(_pyify(report), sort_keys=True, indent=1)
    if path:
        with open(path, "w") as fh:
            fh.write(text + "\n")
    return text


def _check(name, value, tol):
    value = float(value)
    return {"name": name, "value": value, "tol": float(tol),
            "pass": bool(value <= tol)}


def _solution_entry(sol, cfg: RunConfig) -> dict:
    d = sol.to_dict()
    d["checks"] = [
        _check("invariance_residual", sol.invariance_residual,
               10 * cfg.solver.newton_tol),
        _check("modifying_residual", sol.modifying_residual,
               cfg.solver.newton_tol),
        _check("symmetry_residual",
               sol.diagnostics.get("symmetry_residual", np.nan), 1e-9),
        _check("fixed_point_residual",
               sol.diagnostics.get("fixed_point_residual", np.nan), 1e-9),
    ]
    return d


def _scaling_fits(solutions) -> dict:
    """Least-squares and pairwise log-log slopes of sigma, psi, rho, phi vs eps."""
    rows = [(s.eps,
             float(np.max(np.abs(s.sigma))) if np.size(s.sigma) else np.nan,
             float(np.max(np.abs(s.psi))) if np.size(s.psi) else np.nan,
             float(np.max(np.abs(s.rho))) if np.size(s.rho) else np.nan,
             float(np.max(np.abs(s.phi))) if np.size(s.phi) else np.nan)
            for s in solutions if s.eps > 0]
    fits = {}
    if len(rows) >= 2:
        arr = np.array(sorted(rows))
        eps = arr[:, 0]
        for k, name in ((1, "sigma"), (2, "psi"), (3, "rho"), (4, "phi")):
            v = arr[:, k]
            if np.any(~np.isfinite(v)) or np.any(v <= 0):
                continue
            slope = float(np.polyfit(np.log(eps), np.log(v), 1)[0])
            pair = [float(np.log(v[i + 1] / v[i]) / np.log(eps[i + 1] / eps[i]))
                    for i in range(len(eps) - 1)]
            fits[name] = {"slope": slope, "pairwise": pair}
    return fits


def _write_scan_csv(solutions, path: str):
    lines = ["eps,sigma,psi,rho,phi,residual"]
    for s in sorted(solutions, key=lambda s: s.eps):
        def mag(v):
            return repr(float(np.max(np.abs(v)))) if np.size(v) else ""
        lines.append(",".join([repr(float(s.eps)), mag(s.sigma), mag(s.psi),
                               mag(s.rho), mag(s.phi),
                               repr(float(s.invariance_residual))]))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def _chi_list(cfg: RunConfig, chi_dim: int):
    if cfg.chi_grid is None:
        return [np.zeros(chi_dim)]
    if isinstance(cfg.chi_grid, dict):
        spec = cfg.chi_grid.get("linspace")
        lo, hi, k = spec
        if chi_dim != 1:
            raise ValueError("linspace chi grid needs a 1-dimensional chi")
        return [np.array([v]) for v in np.linspace(lo, hi, int(k))]
    return [np.asarray(c, float).reshape(chi_dim) for c in cfg.chi_grid]


def run(cfg: RunConfig):
    """Execute the requested pipeline; returns (exit_code, report_dict)."""
    report = {"version": REPORT_VERSION, "mode": cfg.mode, "seed": cfg.seed,
              "hypotheses": {}, "solutions": [], "diagnostics": {}}
    try:
        if cfg.mode == "check-dioph":
            _run_check_dioph(cfg, report)
        elif cfg.mode == "normal-form":
            _run_normal_form(cfg, report)
        elif cfg.mode in ("context2", "scan", "verify"):
            _run_context2(cfg, report)
        elif cfg.mode == "context1":
            _run_context1(cfg, report)
    except ResonanceError as exc:
        report["error"] = {"stage": "diophantine-check", "message": str(exc),
                           "minimizer_j": list(exc.j), "minimizer_J": list(exc.J)}
        return EXIT_HYPOTHESIS, report
    except RankDeficiencyError as exc:
        report["error"] = {"stage": "rank-check", "message": str(exc),
                           "singular_values": exc.singular_values.tolist(),
                           "deficient_direction": exc.deficient_direction.tolist()}
        return EXIT_HYPOTHESIS, report
    except SmallDivisorError as exc:
        report["error"] = {"stage": "homological-solve", "message": str(exc)}
        return EXIT_HYPOTHESIS, report
    except NoConvergenceError as exc:
        report["error"] = {"stage": exc.stage, "message": str(exc),
                           "history": [float(h) for h in exc.history]}
        return EXIT_NO_CONVERGENCE, report
    return EXIT_OK, report


def _run_check_dioph(cfg: RunConfig, report: dict):
    if cfg.omega is not None:
        omega, beta = cfg.omega, cfg.beta if cfg.beta is not None else np.zeros(0)
    else:
        fam = Context2Family(cfg.system, cfg.nu0, cfg.kappa, cfg.fix_indices,
                             cfg.solver)
        omega, beta = fam.omega, fam.beta0
    n = len(omega)
    tau = cfg.tau if cfg.tau is not None else n - 1 + 0.4
    cert = diophantine_check(omega, beta, tau=tau, jmax_checked=cfg.dioph_jmax)
    report["hypotheses"]["dioph"] = cert.to_dict()


def _run_normal_form(cfg: RunConfig, report: dict):
    try:
        cls = classify_anticommuting_pair(cfg.K, cfg.Lam)
    except ValueError as exc:
        raise RankDeficiencyError(np.zeros(0), np.zeros(0),
                                  f"normal form: {exc}") from exc
    report["diagnostics"]["normal_form"] = {
        "d1": cls.d1, "d2": cls.d2, "d3": cls.d3,
        "alpha": cls.alpha.tolist(), "beta": cls.beta.tolist(),
        "basis": cls.basis.tolist(),
        "residuals": list(cls.residuals(cfg.K, cfg.Lam)),
    }


def _run_context2(cfg: RunConfig, report: dict):
    fam = Context2Family(cfg.system, cfg.nu0, cfg.kappa, cfg.fix_indices,
                         cfg.solver)
    report["hypotheses"]["dioph"] = fam.cert.to_dict()
    report["hypotheses"]["rank"] = fam.rank_report
    chis = _chi_list(cfg, fam.reparam.chi_dim)
    jobs = [(chi, eps) for chi in chis for eps in cfg.eps]

    def solve(job):
        chi, eps = job
        return _context2_solution(fam, chi, float(eps), cfg.solver)

    if cfg.workers > 1:
        with ThreadPoolExecutor(max_workers=cfg.workers) as ex:
            sols = list(ex.map(solve, jobs))
    else:
        sols = [solve(j) for j in jobs]

    report["solutions"] = [_solution_entry(s, cfg) for s in sols]
    report["diagnostics"]["newton_history"] = [
        [float(h) for h in s.newton_history] for s in sols]
    if cfg.mode == "scan":
        report["diagnostics"]["scaling_fits"] = _scaling_fits(sols)
        if cfg.csv:
            _write_scan_csv(sols, cfg.csv)
    if cfg.mode == "verify":
        reports = []
        for s in sols:
            v = verify_solution(cfg.system, s, T=cfg.verify_T, dt=cfg.verify_dt,
                                tol=10 * cfg.solver.newton_tol * cfg.verify_T)
            v.pop("coefficient_matrix")
            reports.append(v)
        report["diagnostics"]["verification"] = reports


def _run_context1(cfg: RunConfig, report: dict):
    fam = Context1Family(cfg.system, cfg.y0, cfg.nu0, cfg.kappa,
                         cfg.fix_indices, cfg.solver)
    report["hypotheses"]["dioph"] = fam.cert.to_dict()
    report["hypotheses"]["rank"] = fam.rank_report
    chis = _chi_list(cfg, fam.reparam.chi_dim)
    sols = [_context1_solution(fam, chi, float(eps), cfg.solver)
            for chi in chis for eps in cfg.eps]
    report["solutions"] = [_solution_entry(s, cfg) for s in sols]
    report["diagnostics"]["newton_history"] = [
        [float(h) for h in s.newton_history] for s in sols]


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="revkam",
        description="Reducible invariant tori of reversible vector fields")
    ap.add_argument("--config", help="JSON run configuration")
    ap.add_argument("--mode", choices=MODES)
    ap.add_argument("--system", help="system definition JSON path")
    ap.add_argument("--eps", help="comma-separated epsilon list")
    ap.add_argument("--chi-grid", dest="chi_grid",
                    help="JSON chi grid, e.g. '[[0.0]]' or '{\"linspace\": [-0.1, 0.1, 5]}'")
    ap.add_argument("--kappa", type=int)
    ap.add_argument("--fix-indices", dest="fix_indices",
                    help="comma-separated 1-based indices of fixed alpha pairs")
    ap.add_argument("--jmax", type=int)
    ap.add_argument("--tol", type=float)
    ap.add_argument("--seed", type=int)
    ap.add_argument("--out", help="report JSON path")
    ap.add_argument("--csv", help="scan CSV path")
    ap.add_argument("--nu0", help="comma-separated base parameter point")
    ap.add_argument("--y0", help="comma-separated base y point (context 1)")
    ap.add_argument("--omega", help="comma-separated frequency vector (check-dioph)")
    ap.add_argument("--beta", help="comma-separated imaginary parts (check-dioph)")
    ap.add_argument("--tau", type=float, help="Diophantine exponent")
    ap.add_argument("--dioph-jmax", dest="dioph_jmax", type=int)
    ap.add_argument("--workers", type=int)
    return ap


def _merge_cli(data: dict, args) -> dict:
    def csv_floats(s):
        return [float(v) for v in s.split(",") if v != ""]

    if args.mode:
        data["mode"] = args.mode
    if args.system:
        data["system"] = args.system
    if args.eps:
        data["eps"] = csv_floats(args.eps)
    if args.chi_grid:
        data["chi_grid"] = json.loads(args.chi_grid)
    if args.kappa is not None:
        data["kappa"] = args.kappa
    if args.fix_indices:
        data["fix_indices"] = [int(v) for v in args.fix_indices.split(",")]
    if args.jmax is not None:
        data.setdefault("solver", {})["jmax"] = args.jmax
    if args.tol is not None:
        data.setdefault("solver", {})["newton_tol"] = args.tol
    if args.seed is not None:
        data["seed"] = args.seed
    if args.out:
        data["out"] = args.out
    if args.csv:
        data["csv"] = args.csv
    if args.nu0:
        data["nu0"] = csv_floats(args.nu0)
    if args.y0:
        data["y0"] = csv_floats(args.y0)
    if args.omega:
        data["omega"] = csv_floats(args.omega)
    if args.beta:
        data["beta"] = csv_floats(args.beta)
    if args.tau is not None:
        data["tau"] = args.tau
    if args.dioph_jmax is not None:
        data["dioph_jmax"] = args.dioph_jmax
    if args.workers is not None:
        data["workers"] = args.workers
    return data


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    data = {}
    if args.config:
        try:
            with open(args.config) as fh:
                data = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            print(f"config error: {exc}", file=sys.stderr)
            return EXIT_CONFIG
    data = _merge_cli(data, args)
    try:
        cfg = RunConfig.from_dict(data)
    except (ValueError, TypeError, KeyError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    code, report = run(cfg)
    text = _write_report(report, cfg.out)
    if not cfg.out:
        print(text)
    else:
        err = report.get("error")
        if err:
            print(f"{err['stage']}: {err['message']}", file=sys.stderr)
        print(f"report written to {cfg.out} (exit {code})")
    return code


if __name__ == "__main__":
    sys.exit(main())
