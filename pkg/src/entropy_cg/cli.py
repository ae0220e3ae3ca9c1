"""Command line interface: ``entropy-cg run | eoc | verify``.

Configuration comes from flags and/or a flat ``key=value`` file; flags
win.  Exit codes: 0 ok, 1 configuration error, 2 blow-up or limiter
failure, 3 verification failure.
"""

from __future__ import annotations

import argparse
import csv
import os
import platform
import sys
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .mesh import MeshError
from .physics import BENCHMARKS, PRESET_ALIASES, benchmark
from .solver import (
    SchemeError,
    cells_for_dofs,
    eoc_study,
    format_eoc_table,
    initial_state,
    make_space,
    parse_scheme,
    run,
)
from .verification import SUITES, run_suites

EXIT_OK, EXIT_CONFIG, EXIT_BLOWUP, EXIT_VERIFY = 0, 1, 2, 3


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    preset: str = "adv1d_cos"
    scheme: str = ""
    degree: int = 1
    cells: int = 0
    dofs: int = 0
    omega: float = 1.0
    cfl: float = 0.25
    dt: float = 0.0
    integrator: str = "ssprk3"
    final_time: float = -1.0
    output: str = "out"
    output_every: int = 1
    seed: int = 0
    basis: str = "bernstein"
    recovery: str = "lumped_average"
    ev_cap: float = -1.0
    init: str = ""
    dofs_sequence: str = ""

    def problem_name(self) -> str:
        name = PRESET_ALIASES.get(self.preset, self.preset)
        if name not in BENCHMARKS:
            raise ConfigError(f"unknown preset {self.preset!r}; choose from {', '.join(BENCHMARKS)}")
        return name

    def scheme_name(self) -> str:
        return self.scheme or benchmark(self.problem_name()).default_scheme

    def validate(self):
        prob = benchmark(self.problem_name())
        try:
            parse_scheme(self.scheme_name(), self.omega, self.recovery)
        except (SchemeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc
        if self.degree < 1:
            raise ConfigError("degree must be >= 1")
        if self.cfl <= 0:
            raise ConfigError("cfl must be positive")
        if self.cells <= 0 and self.dofs <= 0 and not self.dofs_sequence:
            raise ConfigError("give cells or dofs")
        if self.dofs > 0:
            try:
                cells_for_dofs(prob.dimension, self.degree, self.dofs)
            except ValueError as exc:
                raise ConfigError(str(exc)) from exc
        return prob

    def resolution(self, prob) -> int:
        if self.cells > 0:
            return self.cells
        return cells_for_dofs(prob.dimension, self.degree, self.dofs)


_CONVERTERS = {f.name: f.type for f in fields(RunConfig)}


def _convert(key: str, value: str):
    kind = _CONVERTERS[key]
    try:
        if kind in ("int", int):
            return int(value)
        if kind in ("float", float):
            return float(value)
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {value!r}") from exc
    return value


def read_config_file(path) -> dict:
    out = {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in _CONVERTERS:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        out[key] = _convert(key, value)
    return out


def write_manifest(path, config: RunConfig, extra: dict | None = None):
    lines = [
        f"# entropy_cg {__version__}",
        f"# python {platform.python_version()}",
        f"# numpy {np.__version__}",
        f"# scipy {scipy.__version__}",
    ]
    for key, value in (extra or {}).items():
        lines.append(f"# {key}: {value}")
    for key, value in asdict(config).items():
        lines.append(f"{key}={value}")
    Path(path).write_text("\n".join(lines) + "\n")


# convergence studies default to the sixth-order integrator so the time
# error stays below the spatial error for p <= 4
EOC_DEFAULTS = {"integrator": "rk76", "cfl": 0.5}


def _config_from_args(args, defaults: dict | None = None) -> RunConfig:
    values = dict(defaults or {})
    if getattr(args, "config", None):
        values.update(read_config_file(args.config))
    for f in fields(RunConfig):
        flag = getattr(args, f.name, None)
        if flag is not None:
            values[f.name] = flag
    return RunConfig(**values)


class OutputLock:
    """Exclusive lockfile guarding one run per output directory."""

    def __init__(self, directory: Path):
        self.path = directory / ".lock"

    def __enter__(self):
        self.path.parent.mkdir(parents=True, exist_ok=True)
        try:
            fd = os.open(self.path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            raise ConfigError(f"output directory {self.path.parent} is locked by another run") from None
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        return self

    def __exit__(self, *exc):
        self.path.unlink(missing_ok=True)
        return False


def _fmt(x) -> str:
    return repr(float(x))


def write_snapshot(path, space, u):
    """Plain-text snapshot: header, then coordinates, coefficients and point values."""
    mesh = space.mesh
    values = np.empty(space.num_nodes)
    # point values at the lattice nodes (each node read from its first element)
    vals_e = space.values_at_nodes(u)
    values[space.conn.ravel()] = vals_e.ravel()
    with open(path, "w") as fh:
        if mesh.dimension == 1:
            fh.write(f"# nx={space.num_nodes} p={mesh.degree} box={mesh.lower[0]!r},{mesh.upper[0]!r}\n")
            fh.write("# x coefficient value\n")
            for x, c, v in zip(mesh.coords[:, 0], u, values):
                fh.write(f"{_fmt(x)} {_fmt(c)} {_fmt(v)}\n")
        else:
            nx = mesh.cells[0] * mesh.degree
            ny = mesh.cells[1] * mesh.degree
            box = ",".join(repr(float(b)) for b in (*mesh.lower, *mesh.upper))
            fh.write(f"# nx={nx} ny={ny} p={mesh.degree} box={box}\n")
            fh.write("# x y coefficient value\n")
            for (x, y), c, v in zip(mesh.coords, u, values):
                fh.write(f"{_fmt(x)} {_fmt(y)} {_fmt(c)} {_fmt(v)}\n")


def write_csv(path, rows):
    if not rows:
        Path(path).write_text("")
        return
    keys = list(rows[0])
    for r in rows[1:]:
        keys += [k for k in r if k not in keys]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(keys)
        for r in rows:
            w.writerow(["" if r.get(k) is None else (_fmt(r[k]) if isinstance(r[k], float) else r[k])
                        for k in keys])


def cmd_run(config: RunConfig) -> int:
    prob = config.validate()
    out = Path(config.output)
    with OutputLock(out):
        cells = config.resolution(prob)
        space = make_space(prob, config.degree, cells, config.basis)
        write_snapshot(out / "solution_initial.txt", space, initial_state(space, prob, config.init or None))
        res = run(
            prob, config.scheme_name(), config.degree, cells,
            integrator_name=config.integrator, cfl=config.cfl,
            dt=config.dt if config.dt > 0 else None,
            final_time=config.final_time if config.final_time >= 0 else None,
            omega=config.omega, recovery=config.recovery,
            ev_cap=config.ev_cap if config.ev_cap >= 0 else None,
            basis=config.basis, init=config.init or None, record_every=config.output_every,
        )
        write_csv(out / "diagnostics.csv", res.diagnostics)
        write_snapshot(out / "solution_final.txt", res.space, res.u)
        mon = res.monitor
        summary = {
            "status": res.status,
            "message": res.message,
            "time": _fmt(res.time),
            "steps": res.steps,
            "dofs": res.num_dofs,
            "umin": _fmt(res.final_range[0]),
            "umax": _fmt(res.final_range[1]),
            "l1_error": "" if res.l1_error is None else _fmt(res.l1_error),
            "clipped_fraction": _fmt(mon.clipped_fraction),
            "ev_bound_worst": _fmt(mon.ev_bound_worst),
            "fl_entropy_worst": _fmt(mon.fl_entropy_worst),
        }
        (out / "range.txt").write_text("".join(f"{k}={v}\n" for k, v in summary.items()))
        write_manifest(out / "manifest.txt", config)
    print(f"{prob.name} {config.scheme_name()} p={config.degree} N_h={res.num_dofs}: "
          f"status={res.status} t={res.time:.6g} steps={res.steps} "
          f"range=[{res.final_range[0]:.6g}, {res.final_range[1]:.6g}]"
          + ("" if res.l1_error is None else f" L1={res.l1_error:.4e}"))
    if not res.ok:
        print(res.message, file=sys.stderr)
        return EXIT_BLOWUP
    return EXIT_OK


def cmd_eoc(config: RunConfig) -> int:
    if not config.dofs_sequence:
        raise ConfigError("eoc needs a dofs sequence")
    prob = benchmark(config.problem_name())
    try:
        seq = [int(s) for s in config.dofs_sequence.split(",") if s.strip()]
    except ValueError as exc:
        raise ConfigError(f"bad dofs sequence {config.dofs_sequence!r}") from exc
    config.validate()
    if prob.exact is None:
        raise ConfigError(f"{prob.name} has no exact solution")
    rows = eoc_study(prob, config.scheme_name(), config.degree, seq,
                     integrator_name=config.integrator, cfl=config.cfl,
                     final_time=config.final_time if config.final_time >= 0 else None,
                     omega=config.omega, recovery=config.recovery, basis=config.basis,
                     init=config.init or None)
    print(format_eoc_table(rows))
    out = Path(config.output)
    with OutputLock(out):
        write_csv(out / "eoc.csv", rows)
        write_manifest(out / "manifest.txt", config)
    return EXIT_OK


def cmd_verify(suites, seed, samples) -> int:
    results = run_suites(suites, seed=seed, samples=samples)
    for r in results:
        print(r.line())
    return EXIT_OK if all(r.passed for r in results) else EXIT_VERIFY


def _add_run_flags(p):
    p.add_argument("--config", help="key=value configuration file (flags override it)")
    p.add_argument("--preset", help=f"benchmark: {', '.join(BENCHMARKS)} (aliases: {', '.join(PRESET_ALIASES)})")
    p.add_argument("--scheme", help="e.g. CG, HO-SUPG, HO-VMS-EV, HO-VMS-EV-BP, HO-VMS-EV-FL")
    p.add_argument("--degree", type=int)
    p.add_argument("--cells", type=int, help="cells per direction")
    p.add_argument("--dofs", type=int, help="total number of nodes N_h")
    p.add_argument("--omega", type=float)
    p.add_argument("--cfl", type=float)
    p.add_argument("--dt", type=float, help="fixed time step (overrides cfl)")
    p.add_argument("--integrator", choices=("ssprk3", "rk76", "euler"))
    p.add_argument("--final-time", dest="final_time", type=float)
    p.add_argument("--output", help="output directory")
    p.add_argument("--output-every", dest="output_every", type=int, help="diagnostics cadence in steps")
    p.add_argument("--seed", type=int)
    p.add_argument("--basis", choices=("bernstein", "lagrange"))
    p.add_argument("--recovery", choices=("lumped_average", "l2_projection"))
    p.add_argument("--ev-cap", dest="ev_cap", type=float)
    p.add_argument("--init", choices=("l2", "nodal"))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="entropy-cg", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="run one benchmark")
    _add_run_flags(p_run)
    p_eoc = sub.add_parser("eoc", help="grid convergence study")
    _add_run_flags(p_eoc)
    p_eoc.add_argument("--dofs-seq", dest="dofs_sequence", help="comma separated N_h values")
    p_ver = sub.add_parser("verify", help="run property suites")
    p_ver.add_argument("--suite", action="append", help=f"{', '.join(SUITES)} or all (repeatable)")
    p_ver.add_argument("--seed", type=int, default=0)
    p_ver.add_argument("--samples", type=int)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "verify":
            return cmd_verify(args.suite or ["all"], args.seed, args.samples)
        if args.command == "run":
            return cmd_run(_config_from_args(args))
        return cmd_eoc(_config_from_args(args, EOC_DEFAULTS))
    except (ConfigError, SchemeError, MeshError, KeyError, ValueError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
