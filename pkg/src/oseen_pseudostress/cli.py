"""Command-line experiment driver.

Subcommands ``convergence``, ``robustness``, ``spectrum`` and ``constants``
share one set of options. Options may also come from a ``key=value`` file
given with ``--config``; command-line values override the file, which
overrides the defaults.
"""

from __future__ import annotations

import argparse
import logging
import math
import sys
from dataclasses import asdict, dataclass, field, fields, replace
from fractions import Fraction
from pathlib import Path

import numpy as np
from scipy.optimize import linear_sum_assignment

from .assembly import assemble_forms
from .diagnostics import estimate_constants
from .eigensolver import EigenProblem, SolverError, solve_shift_invert
from .fields import BETA_IDS, make_beta
from .mesh import DiagonalPattern, build_lshape, build_square
from .outputs import (CSV_HEADER, check_against_reference, convergence_rows,
                      fmt, read_reference, write_csv, write_json, write_spectrum)
from .postprocess import ConvergenceReport, Level
from .spaces import SUPPORTED, build_space_pair, normalize_family

log = logging.getLogger("oseen_pseudostress")

DOMAINS = ("square", "biunit", "lshape")
EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_CHECK = 0, 2, 3, 4


class ConfigError(ValueError):
    pass


def _default_sweep():
    return [2.0**-j for j in range(9)]


@dataclass
class ExperimentConfig:
    domain: str = "biunit"
    family: str = "RT"
    degree: int = 0
    beta_id: str = "beta1"
    normalize_beta: bool = True
    beta_scale: float = 1.0
    nu: float = 1.0
    levels: list = field(default_factory=lambda: [20, 30, 40, 50])
    nev: int = 4
    shift: complex | str = "auto"
    pattern: str = "alternating"
    out_dir: str | None = None
    emit_matrices: bool = False
    emit_mesh: bool = False
    seed: int = 0
    extra: int = 4  # eigenvalues computed beyond nev for continuation
    nu_sweep: list = field(default_factory=_default_sweep)
    f_norm: float | None = None

    def validate(self) -> "ExperimentConfig":
        if self.domain not in DOMAINS:
            raise ConfigError(f"domain must be one of {DOMAINS}, got {self.domain!r}")
        try:
            self.family = normalize_family(self.family)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        if self.degree not in SUPPORTED[self.family]:
            raise ConfigError(f"{self.family}_{self.degree} is not supported; "
                              f"degrees {SUPPORTED[self.family]}")
        if self.beta_id not in BETA_IDS:
            raise ConfigError(f"beta must be one of {BETA_IDS}, got {self.beta_id!r}")
        if not (math.isfinite(self.nu) and self.nu > 0):
            raise ConfigError(f"nu must be positive, got {self.nu}")
        if self.nev < 1:
            raise ConfigError("nev must be at least 1")
        if self.extra < 0:
            raise ConfigError("extra must be non-negative")
        lv = list(self.levels)
        if not lv or any(int(n) != n or n < 1 for n in lv):
            raise ConfigError(f"levels must be positive integers, got {lv}")
        if any(b <= a for a, b in zip(lv, lv[1:])):
            raise ConfigError(f"levels must be strictly increasing, got {lv}")
        if self.domain == "lshape" and any(n % 2 for n in lv):
            raise ConfigError("L-shape levels must be even")
        try:
            DiagonalPattern(self.pattern)
        except ValueError as exc:
            raise ConfigError(f"unknown pattern {self.pattern!r}") from exc
        if any(not (v > 0) for v in self.nu_sweep):
            raise ConfigError("nu_sweep values must be positive")
        if isinstance(self.shift, str) and self.shift != "auto":
            raise ConfigError(f"shift must be a number or 'auto', got {self.shift!r}")
        return self

    def to_dict(self) -> dict:
        d = asdict(self)
        d["shift"] = self.shift if isinstance(self.shift, str) else [
            complex(self.shift).real, complex(self.shift).imag]
        return d


# -- parsing --------------------------------------------------------------------

def _parse_float(text) -> float:
    try:
        return float(Fraction(str(text).strip()))
    except (ValueError, ZeroDivisionError) as exc:
        raise ConfigError(f"not a number: {text!r}") from exc


def _parse_bool(text) -> bool:
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {text!r}")


def _parse_int_list(text) -> list:
    try:
        return [int(t) for t in str(text).replace(" ", "").split(",") if t]
    except ValueError as exc:
        raise ConfigError(f"not an integer list: {text!r}") from exc


def _parse_float_list(text) -> list:
    return [_parse_float(t) for t in str(text).replace(" ", "").split(",") if t]


def _parse_shift(text):
    t = str(text).strip()
    if t == "auto":
        return "auto"
    try:
        return complex(t.replace(" ", "").replace("i", "j"))
    except ValueError as exc:
        raise ConfigError(f"bad shift {text!r}") from exc


_CONVERTERS = {
    "domain": str, "family": str, "degree": int, "beta_id": str,
    "normalize_beta": _parse_bool, "beta_scale": _parse_float, "nu": _parse_float,
    "levels": _parse_int_list, "nev": int, "shift": _parse_shift, "pattern": str,
    "out_dir": str, "emit_matrices": _parse_bool, "emit_mesh": _parse_bool, "seed": int,
    "extra": int, "nu_sweep": _parse_float_list, "f_norm": _parse_float,
}
_ALIASES = {"beta": "beta_id", "normalize": "normalize_beta", "out-dir": "out_dir",
            "beta-scale": "beta_scale", "emit-matrices": "emit_matrices",
            "emit-mesh": "emit_mesh", "nu-sweep": "nu_sweep", "f-norm": "f_norm"}


def _convert(key, value):
    key = _ALIASES.get(key, key)
    if key not in _CONVERTERS:
        raise ConfigError(f"unknown configuration key {key!r}")
    try:
        return key, _CONVERTERS[key](value)
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"bad value for {key}: {value!r}") from exc


def parse_config_text(text: str) -> dict:
    """``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for num, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {num}: expected key=value, got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        k, v = _convert(key, value)
        out[k] = v
    return out


def build_config(file_values: dict | None = None, cli_values: dict | None = None
                 ) -> ExperimentConfig:
    cfg = ExperimentConfig()
    for src in (file_values or {}, cli_values or {}):
        for k, v in src.items():
            if v is not None:
                setattr(cfg, k, v)
    return cfg.validate()


# -- building blocks --------------------------------------------------------------

def build_mesh(domain: str, N: int, pattern: str = "right"):
    if domain == "square":
        return build_square(N, pattern)
    if domain == "biunit":
        return build_square(N, pattern, bounds=(-1.0, 1.0))
    if domain == "lshape":
        return build_lshape(N, pattern)
    raise ConfigError(f"unknown domain {domain!r}")


def _solve(system, nev, shift, seed):
    problem = EigenProblem.from_system(system)
    try:
        return solve_shift_invert(problem, nev=nev, shift=shift, seed=seed)
    except SolverError:
        # the shift hit an eigenvalue or a singular point; nudge it once
        nudged = shift + 1e-3 * (1.0 + abs(shift)) * (1 + 0.5j)
        log.info("retrying with shift %s", nudged)
        return solve_shift_invert(problem, nev=nev, shift=nudged, seed=seed)


def _is_real(z, tol):
    return abs(z.imag) <= tol * max(1.0, abs(z))


def track_eigenvalues(per_level, nev, tol=1e-6):
    """Continue the ``nev`` smallest coarse-level eigenvalues through the levels.

    Consecutive levels are matched by a global assignment minimizing the sum
    of squared distances. Pairing a real value with a complex one costs a
    large penalty, so classes only mix when one class runs out of candidates.
    Greedy nearest neighbours would swap close eigenvalues whose discretization
    drift exceeds half their gap.
    """
    tracks = [[z] for z in per_level[0][:nev]]
    for cand in per_level[1:]:
        cand = np.asarray(list(cand), complex)
        if cand.size < len(tracks):
            raise SolverError("not enough eigenvalues to continue the tracking")
        prev = np.array([tr[-1] for tr in tracks], complex)
        cost = np.abs(prev[:, None] - cand[None, :]) ** 2
        real_prev = np.array([_is_real(z, tol) for z in prev])
        real_cand = np.array([_is_real(w, tol) for w in cand])
        mixed = real_prev[:, None] != real_cand[None, :]
        cost[mixed] += 1e6 * (1.0 + cost.max())
        rows, cols = linear_sum_assignment(cost)
        for i, j in zip(rows, cols):
            tracks[i].append(cand[j])
    return tracks


@dataclass
class LevelResult:
    N: int
    h: float
    dof: int
    dof_unconstrained: int
    shift: complex
    values: list
    residuals: list

    def as_dict(self):
        return {"N": self.N, "h": self.h, "dof": self.dof,
                "dof_unconstrained": self.dof_unconstrained, "shift": self.shift,
                "eigenvalues": self.values, "residuals": self.residuals}


@dataclass
class ConvergenceResult:
    config: ExperimentConfig
    levels: list
    reports: list
    constants: dict | None = None
    files: list = field(default_factory=list)

    def summary(self) -> dict:
        tracked = []
        for rep in self.reports:
            item = {"index": rep.index, "values": [lv.value for lv in rep.levels]}
            for name, fit in (("all_levels", rep.fit), ("last3", rep.fit_last3)):
                if fit is not None:
                    item[name] = {"alpha": fit.alpha, "lambda_extr": fit.lambda_extr,
                                  "fit_residual": fit.fit_residual, "C": fit.C,
                                  "monotone": fit.monotone, "at_bound": fit.at_bound}
            tracked.append(item)
        return {"config": self.config.to_dict(),
                "levels": [lv.as_dict() for lv in self.levels],
                "tracked": tracked, "constants": self.constants}


def solve_levels(cfg: ExperimentConfig, beta_scale=None, nu=None, emit_dir=None):
    """Eigenvalues on every level of ``cfg``; returns ``LevelResult`` objects."""
    nu = cfg.nu if nu is None else nu
    scale = cfg.beta_scale if beta_scale is None else beta_scale
    nwant = cfg.nev + cfg.extra
    shift = None if cfg.shift == "auto" else complex(cfg.shift)
    out, first = [], None
    for N in cfg.levels:
        mesh = build_mesh(cfg.domain, N, cfg.pattern)
        space = build_space_pair(mesh, cfg.family, cfg.degree)
        beta = make_beta(cfg.beta_id, mesh, cfg.normalize_beta, scale)
        system = assemble_forms(space, beta, nu)
        if emit_dir is not None:
            _emit_level(emit_dir, cfg, N, mesh, system)
        s = shift if shift is not None else (0.0 if first is None else 0.8 * first.real)
        try:
            pairs = _solve(system, nwant, s, cfg.seed)
        except SolverError as exc:
            raise SolverError(f"level N={N}: {exc}") from exc
        if len(pairs) < cfg.nev:
            raise SolverError(f"level N={N}: only {len(pairs)} eigenpairs converged")
        if first is None:
            first = pairs[0].value
        out.append(LevelResult(
            N=N, h=mesh.h_max, dof=system.size, dof_unconstrained=space.n_sigma + space.n_u,
            shift=complex(s), values=[p.value for p in pairs],
            residuals=[p.residual for p in pairs]))
    return out


def _emit_level(directory, cfg, N, mesh, system):
    d = Path(directory)
    if cfg.emit_matrices:
        system.export_matrix_market(d / f"matrices_N{N}")
    if cfg.emit_mesh:
        d.mkdir(parents=True, exist_ok=True)
        mesh.save_txt(d / f"mesh_N{N}.txt")


def build_reports(levels, nev, tol=1e-6):
    tracks = track_eigenvalues([lv.values for lv in levels], nev, tol)
    reports = []
    for i, tr in enumerate(tracks, start=1):
        lvls = [Level(lv.N, lv.h, lv.dof, z) for lv, z in zip(levels, tr)]
        reports.append(ConvergenceReport.build(i, lvls))
    return reports


def run_convergence(cfg: ExperimentConfig, constants: bool = True) -> ConvergenceResult:
    cfg.validate()
    out_dir = Path(cfg.out_dir) if cfg.out_dir else None
    levels = solve_levels(cfg, emit_dir=out_dir)
    reports = build_reports(levels, cfg.nev)
    const = None
    if constants:
        N0 = cfg.levels[0]
        mesh = build_mesh(cfg.domain, N0, cfg.pattern)
        space = build_space_pair(mesh, cfg.family, cfg.degree)
        beta = make_beta(cfg.beta_id, mesh, cfg.normalize_beta, cfg.beta_scale)
        rep = estimate_constants(assemble_forms(space, beta, cfg.nu), f_norm=cfg.f_norm)
        const = dict(rep.to_dict(), level_N=N0)
    result = ConvergenceResult(cfg, levels, reports, const)
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        lv_dicts = [lv.as_dict() for lv in levels]
        write_csv(out_dir / "convergence.csv", CSV_HEADER, convergence_rows(lv_dicts, reports))
        write_json(out_dir / "convergence.json", result.summary())
        result.files += [out_dir / "convergence.csv", out_dir / "convergence.json"]
    return result


# -- robustness sweep -----------------------------------------------------------

ROBUST_HEADER = ["nu", "scenario", "eig_index", "re", "im", "alpha", "extr_re", "extr_im",
                 "fit_residual", "monotone", "at_bound", "negative", "solver_failure"]


@dataclass
class RobustnessPoint:
    nu: float
    scenario: str  # "unit": ||beta|| = 1, "nu": ||beta|| = nu
    reports: list
    negative: bool = False
    solver_failure: str | None = None

    @property
    def fit_failed(self) -> bool:
        if self.solver_failure:
            return True
        for rep in self.reports:
            f = rep.fit
            if f is None or not math.isfinite(f.alpha) or f.warning:
                return True
        return False

    @property
    def unstable(self) -> bool:
        return self.negative or self.fit_failed

    def as_dict(self):
        return {
            "nu": self.nu, "scenario": self.scenario, "negative": self.negative,
            "solver_failure": self.solver_failure, "fit_failed": self.fit_failed,
            "unstable": self.unstable,
            "eigenvalues": [{
                "index": r.index, "values": [lv.value for lv in r.levels],
                "alpha": r.fit.alpha if r.fit else None,
                "lambda_extr": r.fit.lambda_extr if r.fit else None,
                "monotone": r.fit.monotone if r.fit else None,
                "at_bound": r.fit.at_bound if r.fit else None,
            } for r in self.reports],
        }


def run_robustness(cfg: ExperimentConfig):
    """Both scenarios for every ``nu`` in ``cfg.nu_sweep`` with ``beta = s (1, 0)``."""
    cfg.validate()
    base = replace(cfg, beta_id="axis", normalize_beta=True)
    points = []
    for nu in cfg.nu_sweep:
        for scenario, scale in (("unit", 1.0), ("nu", nu)):
            try:
                levels = solve_levels(base, beta_scale=scale, nu=nu)
                reports = build_reports(levels, cfg.nev)
                neg = any(z.real < 0 for lv in levels for z in lv.values[: cfg.nev])
                points.append(RobustnessPoint(nu, scenario, reports, neg))
            except SolverError as exc:
                log.warning("nu=%g scenario=%s: %s", nu, scenario, exc)
                points.append(RobustnessPoint(nu, scenario, [], False, str(exc)))
    if cfg.out_dir:
        d = Path(cfg.out_dir)
        d.mkdir(parents=True, exist_ok=True)
        rows = []
        for p in points:
            if not p.reports:
                rows.append([fmt(p.nu), p.scenario, "", "", "", "", "", "", "", "", "",
                             str(p.negative), p.solver_failure or ""])
            for r in p.reports:
                z = r.levels[-1].value
                f = r.fit
                rows.append([fmt(p.nu), p.scenario, str(r.index), fmt(z.real), fmt(z.imag),
                             fmt(f.alpha), fmt(f.lambda_extr.real), fmt(f.lambda_extr.imag),
                             fmt(f.fit_residual), str(f.monotone), str(f.at_bound),
                             str(p.negative), ""])
        write_csv(d / "robustness.csv", ROBUST_HEADER, rows)
        write_json(d / "robustness.json", {"config": cfg.to_dict(),
                                           "points": [p.as_dict() for p in points]})
    return points


# -- spectrum -------------------------------------------------------------------

def emit_spectrum(cfg: ExperimentConfig, tol=1e-6):
    """Eigenvalues on the finest level, trimmed so conjugate pairs stay whole."""
    cfg.validate()
    N = cfg.levels[-1]
    mesh = build_mesh(cfg.domain, N, cfg.pattern)
    space = build_space_pair(mesh, cfg.family, cfg.degree)
    beta = make_beta(cfg.beta_id, mesh, cfg.normalize_beta, cfg.beta_scale)
    system = assemble_forms(space, beta, cfg.nu)
    shift = 0.0 if cfg.shift == "auto" else complex(cfg.shift)
    pairs = _solve(system, cfg.nev + 2, shift, cfg.seed)
    vals = np.array([p.value for p in pairs])
    vals = _trim_to_pairs(vals, cfg.nev, tol)
    if cfg.out_dir:
        d = Path(cfg.out_dir)
        d.mkdir(parents=True, exist_ok=True)
        write_spectrum(d / "spectrum.dat", vals, tol)
        write_json(d / "spectrum.json", {"config": cfg.to_dict(), "N": N,
                                         "eigenvalues": list(vals)})
    return vals


def _trim_to_pairs(vals, nev, tol):
    """First ``nev`` values, extended or shortened so no conjugate partner is cut off."""
    keep = list(vals[:nev])
    rest = list(vals[nev:])
    if keep:
        z = keep[-1]
        if not _is_real(z, tol) and not any(
                abs(w - np.conj(z)) <= tol * max(1.0, abs(z)) for w in keep[:-1]):
            partner = [w for w in rest if abs(w - np.conj(z)) <= tol * max(1.0, abs(z))]
            keep = keep + partner[:1] if partner else keep[:-1]
    return np.array(keep, complex)


# -- command line -----------------------------------------------------------------

def _make_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key=value configuration file")
    common.add_argument("--domain", choices=DOMAINS)
    common.add_argument("--family", help="RT or BDM")
    common.add_argument("--degree", type=int)
    common.add_argument("--beta", dest="beta_id", choices=BETA_IDS)
    common.add_argument("--normalize", dest="normalize_beta",
                        action=argparse.BooleanOptionalAction, default=None)
    common.add_argument("--beta-scale", dest="beta_scale")
    common.add_argument("--nu")
    common.add_argument("--levels")
    common.add_argument("--nev", type=int)
    common.add_argument("--shift")
    common.add_argument("--pattern", choices=[p.value for p in DiagonalPattern])
    common.add_argument("--out-dir", dest="out_dir")
    common.add_argument("--emit-matrices", dest="emit_matrices", action="store_true",
                        default=None)
    common.add_argument("--emit-mesh", dest="emit_mesh", action="store_true", default=None)
    common.add_argument("--seed", type=int)
    common.add_argument("--extra", type=int)
    common.add_argument("--nu-sweep", dest="nu_sweep")
    common.add_argument("--f-norm", dest="f_norm")
    common.add_argument("--check", help="reference table; exit 4 when it is not met")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="oseen-eigen", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("convergence", parents=[common], help="level sweep with rate fits")
    sub.add_parser("robustness", parents=[common], help="viscosity sweep, both scalings")
    sub.add_parser("spectrum", parents=[common], help="eigenvalues on the finest level")
    sub.add_parser("constants", parents=[common], help="stability constants, coarsest level")
    return parser


_STRING_OPTS = {"beta_scale", "nu", "levels", "shift", "nu_sweep", "f_norm"}


def _cli_values(ns) -> dict:
    out = {}
    for f in fields(ExperimentConfig):
        v = getattr(ns, f.name, None)
        if v is None:
            continue
        if f.name in _STRING_OPTS:
            _, v = _convert(f.name, v)
        out[f.name] = v
    return out


def main(argv=None) -> int:
    parser = _make_parser()
    try:
        ns = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if ns.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        file_values = {}
        if ns.config:
            path = Path(ns.config)
            if not path.is_file():
                raise ConfigError(f"config file not found: {path}")
            file_values = parse_config_text(path.read_text())
        cfg = build_config(file_values, _cli_values(ns))
        if ns.command == "spectrum" and cfg.nev < 1:
            raise ConfigError("nev must be at least 1")
        reference = read_reference(ns.check) if ns.check else None
    except (ConfigError, OSError, KeyError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    try:
        if ns.command == "convergence":
            res = run_convergence(cfg)
            _print_convergence(res)
            if reference is not None:
                results = check_against_reference(res.reports, reference)
                for idx, ok, msg in results:
                    print(f"check eig {idx}: {'PASS' if ok else 'FAIL'} {msg}")
                if not all(ok for _, ok, _ in results):
                    return EXIT_CHECK
        elif ns.command == "robustness":
            for p in run_robustness(cfg):
                alphas = " ".join(f"{r.fit.alpha:.3f}" for r in p.reports if r.fit)
                print(f"nu={p.nu:<12.6g} {p.scenario:<5} unstable={p.unstable!s:<5} "
                      f"alpha=[{alphas}]")
        elif ns.command == "spectrum":
            for z in emit_spectrum(cfg):
                print(f"{fmt(z.real)} {fmt(z.imag)}")
        else:
            N0 = cfg.levels[0]
            mesh = build_mesh(cfg.domain, N0, cfg.pattern)
            space = build_space_pair(mesh, cfg.family, cfg.degree)
            beta = make_beta(cfg.beta_id, mesh, cfg.normalize_beta, cfg.beta_scale)
            rep = estimate_constants(assemble_forms(space, beta, cfg.nu), f_norm=cfg.f_norm)
            for k, v in rep.to_dict().items():
                print(f"{k} = {v}")
            if cfg.out_dir:
                Path(cfg.out_dir).mkdir(parents=True, exist_ok=True)
                write_json(Path(cfg.out_dir) / "constants.json",
                           {"config": cfg.to_dict(), "N": N0, "constants": rep.to_dict()})
    except SolverError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    return EXIT_OK


def _print_convergence(res: ConvergenceResult) -> None:
    head = "  ".join(f"N={lv.N:<4d}" + " " * 10 for lv in res.levels)
    print(f"{'':4s}{head}  order   extrapolated")
    for rep in res.reports:
        vals = "  ".join(_cfmt(lv.value) for lv in rep.levels)
        fit = rep.fit
        tail = f"{fit.alpha:6.3f}  {_cfmt(fit.lambda_extr)}" if fit else ""
        print(f"{rep.index:<4d}{vals}  {tail}")


def _cfmt(z) -> str:
    z = complex(z)
    if abs(z.imag) <= 1e-9 * max(1.0, abs(z)):
        return f"{z.real:16.4f}"
    return f"{z.real:.4f}{z.imag:+.4f}i".rjust(16)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
