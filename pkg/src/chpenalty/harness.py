"""
Penalty-parameter sweeps, log-log rate fits and the ``chsweep`` command.

Configuration files are flat ``key = value`` text with ``#`` comments; any
key can be overridden on the command line with ``--key value``.
"""
from __future__ import annotations

import argparse
import csv
import itertools
import logging
import math
import os
import sys
import time
from dataclasses import dataclass, field

import numpy as np

from .adapt import MarkParams, NewtonFailure, adaptive_cycle
from .chstep import (
    NewtonConfig,
    Status,
    StepProblem,
    h1_norms,
    initial_phase_field,
    violation_report,
)
from .mesh import unit_square_mesh
from .penalty import PenaltyScheme, check_power

__all__ = [
    "SweepConfig",
    "SweepRecord",
    "SlopeFit",
    "ConfigError",
    "PRESETS",
    "run_sweep",
    "fit_loglog_slope",
    "emit_csv",
    "load_records",
    "emit_plot_script",
    "emit_slopes",
    "load_config",
    "main",
]

log = logging.getLogger(__name__)

CSV_COLUMNS = (
    "s", "k", "scheme", "dofs", "cells", "newton_iterations", "status",
    "linf", "l1", "structural_K", "h1_phi", "h1_mu", "mass_error", "wall_time",
)
_FLOAT_COLUMNS = ("linf", "l1", "structural_K", "h1_phi", "h1_mu", "mass_error")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class SweepConfig:
    eps: float = 0.04
    tau: float = 0.01
    radius: float = 0.25
    center: tuple = (0.5, 0.5)
    n0: int = 8
    cycles: int = 3
    theta: float = 0.5
    max_generation: int | None = 8
    s_values: tuple = tuple(np.logspace(2, 6, 9))
    k_values: tuple = (2,)
    schemes: tuple = (PenaltyScheme.LUMPED,)
    newton: NewtonConfig = NewtonConfig()
    output: str = "chsweep_out"
    dimension: int = 2

    def __post_init__(self):
        if self.dimension != 2:
            raise ConfigError("only dimension = 2 is implemented")
        if not (self.eps > 0 and self.tau > 0):
            raise ConfigError("eps and tau must be positive")
        s = np.asarray(self.s_values, dtype=float)
        if s.ndim != 1 or len(s) == 0 or np.any(s <= 0) or np.any(np.diff(s) <= 0):
            raise ConfigError("s_values must be positive and strictly increasing")
        object.__setattr__(self, "s_values", tuple(float(v) for v in s))
        schemes = tuple(PenaltyScheme.parse(x) for x in self.schemes)
        object.__setattr__(self, "schemes", schemes)
        object.__setattr__(self, "k_values", tuple(int(k) for k in self.k_values))
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))
        try:
            for k, scheme in itertools.product(self.k_values, schemes):
                check_power(k, scheme)
            MarkParams(self.theta, self.max_generation)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        if self.cycles < 1 or self.n0 < 1:
            raise ConfigError("cycles and n0 must be positive")


@dataclass
class SweepRecord:
    s: float
    k: int
    scheme: PenaltyScheme
    dofs: int
    cells: int
    newton_iterations: int
    status: Status
    linf: float | None = None
    l1: float | None = None
    structural_K: float | None = None
    h1_phi: float | None = None
    h1_mu: float | None = None
    mass_error: float | None = None
    wall_time: float = 0.0

    @property
    def converged(self) -> bool:
        return self.status is Status.CONVERGED


@dataclass(frozen=True)
class SlopeFit:
    slope: float
    intercept: float
    r_squared: float
    s_range: tuple
    n_points: int
    excluded: tuple = field(default=())


def run_sweep(cfg: SweepConfig) -> list[SweepRecord]:
    """Run every (k, scheme) group over ascending ``s`` with mesh reuse."""
    records = []
    mark = MarkParams(cfg.theta, cfg.max_generation)

    def prev_on(mesh):
        return initial_phase_field(mesh, cfg.eps, cfg.center, cfg.radius)

    for k, scheme in itertools.product(cfg.k_values, cfg.schemes):
        mesh = unit_square_mesh(cfg.n0)
        guess = None
        for s in cfg.s_values:
            t0 = time.perf_counter()
            problem = StepProblem(cfg.eps, cfg.tau, s, k, scheme, prev_on(mesh))
            try:
                mesh, sol, diag = adaptive_cycle(problem, mesh, cfg.cycles, mark, cfg.newton,
                                                 phi_prev_fn=prev_on, guess=guess)
            except NewtonFailure as fail:
                log.warning("k=%d %s s=%.6g: %s", k, scheme, s, fail)
                mesh = fail.mesh
                guess = None
                records.append(SweepRecord(
                    s, k, scheme, mesh.num_vertices, mesh.num_cells,
                    fail.solution.iterations, fail.solution.status,
                    wall_time=time.perf_counter() - t0))
                continue
            final = StepProblem(cfg.eps, cfg.tau, s, k, scheme, prev_on(mesh))
            rep = violation_report(final, sol)
            h1p, h1m = h1_norms(sol)
            rec = SweepRecord(
                s, k, scheme, mesh.num_vertices, mesh.num_cells, sol.iterations, sol.status,
                linf=rep.linf, l1=rep.l1, structural_K=rep.structural_K,
                h1_phi=h1p, h1_mu=h1m, mass_error=rep.mass_error,
                wall_time=time.perf_counter() - t0)
            log.info("k=%d %s s=%.3e dofs=%d linf=%.4e l1=%.4e", k, scheme, s,
                     rec.dofs, rec.linf, rec.l1)
            records.append(rec)
            guess = (sol.phi, sol.mu)
    return records


def fit_loglog_slope(records, metric: str = "linf", k=None, scheme=None) -> SlopeFit:
    """Least-squares line through ``(log10 s, log10 metric)``.

    Only converged records with a positive metric are used; records whose
    metric is exactly zero are listed in ``excluded``.
    """
    if metric not in ("linf", "l1"):
        raise ValueError("metric must be 'linf' or 'l1'")
    scheme = None if scheme is None else PenaltyScheme.parse(scheme)
    s, y, excluded = [], [], []
    for r in records:
        if (k is not None and r.k != k) or (scheme is not None and r.scheme is not scheme):
            continue
        if not r.converged:
            continue
        v = getattr(r, metric)
        if v is None or v <= 0:
            excluded.append(r.s)
            continue
        s.append(r.s)
        y.append(v)
    if len(s) < 4:
        raise ValueError(f"need at least 4 usable points for a slope fit, have {len(s)}")
    x = np.log10(s)
    ly = np.log10(y)
    slope, intercept = np.polyfit(x, ly, 1)
    resid = ly - (slope * x + intercept)
    ss_tot = np.sum((ly - ly.mean()) ** 2)
    r2 = 1.0 - np.sum(resid ** 2) / ss_tot if ss_tot > 0 else 1.0
    return SlopeFit(float(slope), float(intercept), float(r2), (min(s), max(s)), len(s),
                    tuple(excluded))


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return f"{v:.16e}"
    return str(v)


def emit_csv(records, path) -> None:
    if not records:
        raise ValueError("no records to write")
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for r in records:
            w.writerow([_fmt(float(r.s)), r.k, str(r.scheme), r.dofs, r.cells,
                        r.newton_iterations, str(r.status)]
                       + [_fmt(None if getattr(r, c) is None else float(getattr(r, c)))
                          for c in _FLOAT_COLUMNS]
                       + [f"{r.wall_time:.6e}"])


def load_records(path) -> list[SweepRecord]:
    out = []
    with open(path, newline="") as f:
        for row in csv.DictReader(f):
            vals = {c: (float(row[c]) if row[c] != "" else None) for c in _FLOAT_COLUMNS}
            out.append(SweepRecord(
                float(row["s"]), int(row["k"]), PenaltyScheme.parse(row["scheme"]),
                int(row["dofs"]), int(row["cells"]), int(row["newton_iterations"]),
                Status(row["status"]), wall_time=float(row["wall_time"]), **vals))
    return out


def _groups(records):
    seen = []
    for r in records:
        if (r.k, r.scheme) not in seen:
            seen.append((r.k, r.scheme))
    return seen


def emit_plot_script(records, path, csv_name: str = "records.csv") -> None:
    """gnuplot script with one log-log violation plot per (k, scheme)."""
    if not records:
        raise ValueError("no records to plot")
    col = {c: i + 1 for i, c in enumerate(CSV_COLUMNS)}
    lines = [
        "# log-log constraint violation against the penalty parameter",
        "set datafile separator ','",
        "set logscale xy",
        "set format y '10^{%L}'",
        "set xlabel 's'",
        "set ylabel 'violation'",
        "set key bottom left",
        "set terminal pngcairo size 800,600",
    ]
    for k, scheme in _groups(records):
        ok = [r for r in records if r.k == k and r.scheme is scheme and r.converged and r.linf]
        rate = 1.0 / (k - 1)
        sel = f"(($2=={k} && strcol(3) eq '{scheme}') ? $1 : 1/0)"
        lines += ["", f"set output 'violation_k{k}_{scheme}.png'",
                  f"set title 'k = {k}, {scheme}'"]
        plot = [f"'{csv_name}' every ::1 using {sel}:{col['linf']} with linespoints title 'L^inf'",
                f"'{csv_name}' every ::1 using {sel}:{col['l1']} with linespoints title 'L^1'"]
        if ok:
            c0 = ok[0].linf * ok[0].s ** rate
            plot.append(f"{c0:.6e}*x**(-{rate:.6f}) with lines dt 2 title 'slope -1/{k - 1}'")
        lines.append("plot " + ", \\\n     ".join(plot))
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")


def emit_slopes(records, path) -> list[str]:
    """One line per (k, scheme, metric) with slope, r^2 and the theoretical target."""
    out = []
    for k, scheme in _groups(records):
        for metric in ("linf", "l1"):
            if metric == "linf":
                target = f"{-1.0 / (k - 1):.6f}"
            else:
                target = "-1.000000" if k == 2 else "none"
            try:
                fit = fit_loglog_slope(records, metric, k, scheme)
                out.append(f"k={k} scheme={scheme} metric={metric} slope={fit.slope:.6f} "
                           f"r2={fit.r_squared:.6f} target={target} points={fit.n_points}")
            except ValueError as exc:
                out.append(f"k={k} scheme={scheme} metric={metric} slope=nan r2=nan "
                           f"target={target} note={str(exc).replace(' ', '_')}")
    with open(path, "w") as f:
        f.write("\n".join(out) + "\n")
    return out


PRESETS = {
    "default": {},
    "paper2d": {"eps": "0.01", "tau": "0.01", "n0": "16", "max_generation": "8"},
}

_KEYS = {
    "eps", "tau", "radius", "center", "n0", "cycles", "theta", "max_generation",
    "s_values", "s_min", "s_max", "s_count", "k", "schemes", "abs_tol", "rel_tol",
    "max_iter", "damping", "divergence_factor", "output",
}


def parse_config_text(text: str) -> dict:
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, value = (p.strip() for p in line.split("=", 1))
        out[key.replace("-", "_")] = value
    return out


def _floats(v):
    return [float(x) for x in v.replace(",", " ").split()]


def config_from_dict(d: dict) -> SweepConfig:
    unknown = set(d) - _KEYS
    if unknown:
        raise ConfigError(f"unknown configuration keys: {sorted(unknown)}")
    kw = {}
    try:
        for key in ("eps", "tau", "radius", "theta"):
            if key in d:
                kw[key] = float(d[key])
        for key in ("n0", "cycles"):
            if key in d:
                kw[key] = int(d[key])
        if "max_generation" in d:
            kw["max_generation"] = None if d["max_generation"].lower() == "none" else int(d["max_generation"])
        if "center" in d:
            kw["center"] = tuple(_floats(d["center"]))
        if "s_values" in d:
            kw["s_values"] = tuple(_floats(d["s_values"]))
        elif {"s_min", "s_max"} & set(d):
            lo = float(d.get("s_min", 1e2))
            hi = float(d.get("s_max", 1e6))
            kw["s_values"] = tuple(np.logspace(math.log10(lo), math.log10(hi), int(d.get("s_count", 9))))
        if "k" in d:
            kw["k_values"] = tuple(int(x) for x in _floats(d["k"]))
        if "schemes" in d:
            kw["schemes"] = tuple(x for x in d["schemes"].replace(",", " ").split())
        nk = {}
        for key in ("abs_tol", "rel_tol", "damping"):
            if key in d:
                nk[key] = float(d[key])
        if "max_iter" in d:
            nk["max_iter"] = int(d["max_iter"])
        if "divergence_factor" in d:
            nk["divergence_factor"] = None if d["divergence_factor"].lower() == "none" else float(d["divergence_factor"])
        if nk:
            kw["newton"] = NewtonConfig(**nk)
        if "output" in d:
            kw["output"] = d["output"]
        return SweepConfig(**kw)
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path=None, overrides=None, preset: str | None = None) -> SweepConfig:
    """Merge preset, config file and overrides (later wins)."""
    d = {}
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
        d.update(PRESETS[preset])
    if path is not None:
        with open(path) as f:
            d.update(parse_config_text(f.read()))
    d.update(overrides or {})
    return config_from_dict(d)


def _parse_overrides(extra) -> dict:
    out = {}
    it = iter(extra)
    for tok in it:
        if not tok.startswith("--"):
            raise ConfigError(f"unexpected argument {tok!r}")
        key = tok[2:]
        if "=" in key:
            key, value = key.split("=", 1)
        else:
            try:
                value = next(it)
            except StopIteration:
                raise ConfigError(f"missing value for {tok}") from None
        out[key.replace("-", "_")] = value
    return out


def write_outputs(records, outdir) -> list[str]:
    os.makedirs(outdir, exist_ok=True)
    emit_csv(records, os.path.join(outdir, "records.csv"))
    emit_plot_script(records, os.path.join(outdir, "plot.gp"))
    return emit_slopes(records, os.path.join(outdir, "slopes.txt"))


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="chsweep",
        description="Penalty-parameter sweep for one penalised Cahn-Hilliard step.",
        epilog="Any configuration key may be overridden with --key value.")
    parser.add_argument("--config", help="key = value configuration file")
    parser.add_argument("--preset", choices=sorted(PRESETS), help="named parameter preset")
    parser.add_argument("-v", "--verbose", action="store_true")
    args, extra = parser.parse_known_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, _parse_overrides(extra), args.preset)
    except (ConfigError, OSError) as exc:
        parser.error(str(exc))
    records = run_sweep(cfg)
    try:
        lines = write_outputs(records, cfg.output)
    except OSError as exc:
        print(f"chsweep: cannot write output: {exc}", file=sys.stderr)
        return 2
    for line in lines:
        print(line)
    unexpected = [r for r in records
                  if not r.converged and r.scheme is not PenaltyScheme.INTERPOLATED]
    for r in records:
        if not r.converged:
            print(f"failure: k={r.k} scheme={r.scheme} s={r.s:.6g} status={r.status}"
                  f"{' (unexpected)' if any(r is u for u in unexpected) else ''}", file=sys.stderr)
    return 1 if unexpected else 0


if __name__ == "__main__":
    sys.exit(main())
