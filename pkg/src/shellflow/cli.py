"""Command-line front end.

    shellflow classify A B N
    shellflow sweep --a-min 2.1 --a-max 6 --a-steps 40 --b-steps 40 --dim 2
    shellflow simulate CONFIG            (a path, or a bundled name: fig1, fig2, fig3)
    shellflow kernel-table A B N [--r GRID] [--eta GRID]
    shellflow energy-landscape A B N [--r GRID] [--eta GRID]
    shellflow --dump-defaults

B may be ``none`` for a purely attractive potential |x|^A/A. GRID is
``start:stop:num`` (inclusive, linspace) or ``shell`` for the single radius R_ab.
Exit codes: 0 success, 2 usage or configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import dataclasses
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Optional, Union

import numpy as np

from . import kernel, solver, stability
from .kernel import ClosedForm, KernelContext
from .potential import AttractivePotential, PowerLawPotential, regularity
from .solver import SimConfig, ShellPerturbed, TruncatedGaussianRadial, UniformAnnulus

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_NUMERICAL = 3

BUNDLED = ("fig1", "fig2", "fig3")
THREADS_ENV = "SHELLFLOW_THREADS"


class ConfigError(ValueError):
    pass


class NumericalFailure(RuntimeError):
    pass


# ----------------------------------------------------------------- config

_PROFILES = {
    "UniformAnnulus": UniformAnnulus,
    "ShellPerturbed": ShellPerturbed,
    "TruncatedGaussianRadial": TruncatedGaussianRadial,
}
# SimConfig fields that live in [solver]; kernel and alpha are set elsewhere
_SOLVER_KEYS = tuple(f.name for f in dataclasses.fields(SimConfig) if f.name not in ("kernel", "alpha"))
_KERNEL_KEYS = tuple(f.name for f in dataclasses.fields(KernelContext))


@dataclass(frozen=True)
class ScenarioConfig:
    potential: Union[PowerLawPotential, AttractivePotential] = PowerLawPotential(4.0, 2.0, 2)
    sim: SimConfig = field(default_factory=SimConfig)
    init: object = UniformAnnulus(0.3, 0.9)
    directory: str = "shellflow_out"
    snapshot_every: int = 1
    alphas: tuple = (2.0,)

    def __post_init__(self):
        if not self.alphas:
            raise ConfigError("alphas must list at least one exponent")
        if any(not a >= 1 for a in self.alphas):
            raise ConfigError("every alpha must be >= 1")
        if self.sim.alpha != self.alphas[0]:
            raise ConfigError("sim.alpha must equal the first entry of alphas")
        if self.snapshot_every < 1:
            raise ConfigError("snapshot_every must be positive")


def _fmt_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, ClosedForm):
        return v.value
    if isinstance(v, float):
        return repr(v)
    return str(v)


def dumps(cfg: ScenarioConfig) -> str:
    """Canonical text form of a scenario."""
    lines = ["[potential]"]
    p = cfg.potential
    if isinstance(p, AttractivePotential):
        lines += [f"pure_attractive = {_fmt_value(float(p.a))}", f"dim = {p.dim}"]
    else:
        lines += [f"a = {_fmt_value(float(p.a))}", f"b = {_fmt_value(float(p.b))}", f"dim = {p.dim}"]
    lines += ["", "[solver]"]
    lines += [f"{k} = {_fmt_value(getattr(cfg.sim, k))}" for k in _SOLVER_KEYS]
    lines += ["", "[kernel]"]
    lines += [f"{k} = {_fmt_value(getattr(cfg.sim.kernel, k))}" for k in _KERNEL_KEYS]
    lines += ["", "[init]", f"profile = {type(cfg.init).__name__}"]
    lines += [f"{f.name} = {_fmt_value(getattr(cfg.init, f.name))}" for f in dataclasses.fields(cfg.init)]
    lines += [
        "",
        "[outputs]",
        f"directory = {cfg.directory}",
        f"snapshot_every = {cfg.snapshot_every}",
        "alphas = " + ", ".join(_fmt_value(float(a)) for a in cfg.alphas),
    ]
    return "\n".join(lines) + "\n"


def _convert(raw: str, kind, where: str):
    try:
        if kind is bool:
            low = raw.strip().lower()
            if low in ("true", "yes", "1", "on"):
                return True
            if low in ("false", "no", "0", "off"):
                return False
            raise ValueError(raw)
        if kind is int:
            return int(raw)
        if kind is float:
            return float(raw)
        if kind is ClosedForm:
            return ClosedForm(raw.strip().lower())
        return raw.strip()
    except ValueError:
        raise ConfigError(f"{where}: cannot read {raw!r} as {kind.__name__}") from None


def _field_kinds(cls):
    kinds = {}
    for f in dataclasses.fields(cls):
        t = f.type if isinstance(f.type, str) else getattr(f.type, "__name__", str(f.type))
        if "bool" in t:
            kinds[f.name] = bool
        elif "int" in t:
            kinds[f.name] = int
        elif "ClosedForm" in t:
            kinds[f.name] = ClosedForm
        else:
            kinds[f.name] = float
    return kinds


def _take(section, allowed, name):
    keys = set(section.keys())
    unknown = keys - set(allowed)
    if unknown:
        raise ConfigError(f"[{name}]: unknown keys {sorted(unknown)}")
    return {k: section[k] for k in section}


def loads(text: str) -> ScenarioConfig:
    """Parse and validate a scenario; unknown sections and keys are rejected."""
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str  # keys are case sensitive (M)
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from None
    sections = set(cp.sections())
    allowed = {"potential", "solver", "kernel", "init", "outputs"}
    if sections - allowed:
        raise ConfigError(f"unknown sections {sorted(sections - allowed)}")
    for required in ("potential", "init"):
        if required not in sections:
            raise ConfigError(f"missing [{required}] section")

    defaults = ScenarioConfig()
    try:
        pot = _take(cp["potential"], ("a", "b", "dim", "pure_attractive"), "potential")
        dim = _convert(pot.get("dim", "2"), int, "potential.dim")
        if "pure_attractive" in pot:
            if "a" in pot or "b" in pot:
                raise ConfigError("[potential]: give either a/b or pure_attractive, not both")
            potential = AttractivePotential(_convert(pot["pure_attractive"], float, "potential"), dim)
        else:
            if "a" not in pot or "b" not in pot:
                raise ConfigError("[potential]: a and b are required")
            potential = PowerLawPotential(
                _convert(pot["a"], float, "potential.a"), _convert(pot["b"], float, "potential.b"), dim
            )

        kern = {}
        if "kernel" in sections:
            kinds = _field_kinds(KernelContext)
            raw = _take(cp["kernel"], _KERNEL_KEYS, "kernel")
            kern = {k: _convert(v, kinds[k], f"kernel.{k}") for k, v in raw.items()}
        ctx = KernelContext(**kern)

        out = {}
        if "outputs" in sections:
            out = _take(cp["outputs"], ("directory", "snapshot_every", "alphas"), "outputs")
        alphas = defaults.alphas
        if "alphas" in out:
            alphas = tuple(_convert(x, float, "outputs.alphas") for x in out["alphas"].split(",") if x.strip())

        sim_kw = {}
        if "solver" in sections:
            kinds = _field_kinds(SimConfig)
            raw = _take(cp["solver"], _SOLVER_KEYS, "solver")
            sim_kw = {k: _convert(v, kinds[k], f"solver.{k}") for k, v in raw.items()}
        sim = SimConfig(kernel=ctx, alpha=alphas[0] if alphas else 2.0, **sim_kw)

        init_raw = _take(cp["init"], ("profile",) + _all_profile_keys(), "init")
        name = init_raw.pop("profile", None)
        if name not in _PROFILES:
            raise ConfigError(f"[init]: profile must be one of {sorted(_PROFILES)}")
        cls = _PROFILES[name]
        kinds = _field_kinds(cls)
        extra = set(init_raw) - set(kinds)
        if extra:
            raise ConfigError(f"[init]: keys {sorted(extra)} do not belong to {name}")
        init = cls(**{k: _convert(v, kinds[k], f"init.{k}") for k, v in init_raw.items()})
        # builds the state once so that profile errors surface at load time
        solver.init_from_density(init, sim.M, dim)

        return ScenarioConfig(
            potential=potential,
            sim=sim,
            init=init,
            directory=out.get("directory", defaults.directory).strip(),
            snapshot_every=_convert(out.get("snapshot_every", "1"), int, "outputs.snapshot_every"),
            alphas=alphas,
        )
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def _all_profile_keys():
    return tuple(sorted({f.name for cls in _PROFILES.values() for f in dataclasses.fields(cls)}))


def load(path_or_name: str) -> ScenarioConfig:
    """Read a scenario file, or a bundled scenario by name."""
    if path_or_name in BUNDLED and not Path(path_or_name).exists():
        text = resources.files("shellflow").joinpath("scenarios", f"{path_or_name}.ini").read_text()
    else:
        try:
            text = Path(path_or_name).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path_or_name!r}: {exc}") from None
    return loads(text)


# -------------------------------------------------------------------- CSV


def _cell(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.17g}"
    return str(v)


def write_csv(path: Path, header, rows) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([_cell(v) for v in row])
    return path


# ------------------------------------------------------------- potentials


def _potential(a: float, b: str, dim: int):
    if str(b).lower() == "none":
        return AttractivePotential(a, dim)
    return PowerLawPotential(a, float(b), dim)


def _parse_grid(text: str, p) -> np.ndarray:
    if text == "shell":
        if not isinstance(p, PowerLawPotential):
            raise ConfigError("the 'shell' grid needs a repulsive-attractive potential")
        return np.array([stability.shell_radius(p.a, p.b, p.dim)])
    parts = text.split(":")
    if len(parts) != 3:
        raise ConfigError(f"grid {text!r} must be start:stop:num or 'shell'")
    try:
        start, stop, num = float(parts[0]), float(parts[1]), int(parts[2])
    except ValueError:
        raise ConfigError(f"grid {text!r} must be start:stop:num or 'shell'") from None
    if num < 0:
        raise ConfigError("grid size must be nonnegative")
    return np.linspace(start, stop, num)


def _diagonal_flag(p) -> str:
    if isinstance(p, PowerLawPotential):
        return stability.classify(p.a, p.b, p.dim).regime.value
    return regularity(p).omega_continuity_class.value


# ------------------------------------------------------------- subcommands


def cmd_classify(args) -> int:
    try:
        rep = stability.classify(args.a, args.b, args.N)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    cond = stability.check_conditions(PowerLawPotential(args.a, args.b, args.N), rep.steady_radius)
    rows = [
        ("a", f"{rep.a:g}"),
        ("b", f"{rep.b:g}"),
        ("N", str(rep.dim)),
        ("R_ab", f"{rep.steady_radius:.5f}"),
        ("regime", rep.regime.value),
        ("boundary_b", f"{rep.boundary_b:.6g}"),
        ("d1_at_shell", "inf" if rep.d1_infinite else f"{rep.d1_at_shell:.6g}"),
        ("C0 omega(R,R)", f"{cond.c0:.3e}"),
        ("C1 d1 omega(R,R)", "inf" if cond.c1_infinite else f"{cond.c1:.6g}"),
        ("C2 (d1+d2) omega(R,R)", f"{cond.c2:.6g}"),
        ("C1 satisfied", str(rep.c1_satisfied)),
        ("C2 satisfied", str(rep.c2_satisfied)),
    ]
    width = max(len(k) for k, _ in rows)
    for k, v in rows:
        print(f"{k:<{width}}  {v}")
    fields = dict(
        a=rep.a, b=rep.b, N=rep.dim, R_ab=rep.steady_radius, regime=rep.regime.value,
        boundary_b=rep.boundary_b, d1_at_shell=rep.d1_at_shell, c0=cond.c0, c1=cond.c1, c2=cond.c2,
    )
    print("RESULT " + " ".join(f"{k}={_cell(v)}" for k, v in fields.items()))
    return EXIT_OK


def _sweep_row(job):
    a, b_steps, dim = job
    return stability.bifurcation_sweep([a], b_steps, dim)


def _threads() -> int:
    raw = os.environ.get(THREADS_ENV)
    if raw is None:
        return os.cpu_count() or 1
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"{THREADS_ENV} must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise ConfigError(f"{THREADS_ENV} must be a positive integer, got {raw!r}")
    return n


def cmd_sweep(args) -> int:
    if args.a_steps < 1 or args.b_steps < 1:
        raise ConfigError("--a-steps and --b-steps must be positive")
    if not args.a_max >= args.a_min:
        raise ConfigError("--a-max must not be below --a-min")
    a_values = np.linspace(args.a_min, args.a_max, args.a_steps)
    jobs = [(float(a), args.b_steps, args.dim) for a in a_values]
    workers = min(_threads(), len(jobs))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            parts = list(ex.map(_sweep_row, jobs))
    else:
        parts = [_sweep_row(j) for j in jobs]
    reports = [r for rep, _ in parts for r in rep]
    skipped = sum(s for _, s in parts)

    out = Path(args.out)
    path = write_csv(
        out / "sweep.csv",
        ["a", "b", "N", "R_ab", "regime", "d1_at_shell", "boundary_b"],
        ((r.a, r.b, r.dim, r.steady_radius, r.regime.value, r.d1_at_shell, r.boundary_b) for r in reports),
    )

    def bnd(a):
        try:
            return stability.boundary_b(a, args.dim)
        except ValueError:
            return math.nan

    bpath = write_csv(out / "boundary.csv", ["a", "boundary_b"], ((a, bnd(a)) for a in a_values))
    counts = {}
    for r in reports:
        counts[r.regime.value] = counts.get(r.regime.value, 0) + 1
    summary = " ".join(f"{k}={v}" for k, v in sorted(counts.items()))
    print(f"points={len(reports)} skipped={skipped} {summary}".rstrip())
    print(f"wrote {path} and {bpath}")
    return EXIT_OK


def cmd_kernel_table(args) -> int:
    p = _make_potential(args)
    r = _parse_grid(args.r, p)
    eta = _parse_grid(args.eta, p)
    if np.any(r < 0) or np.any(eta < 0):
        raise ConfigError("radii must be nonnegative")
    rr, ee = np.meshgrid(r, eta, indexing="ij")
    w = kernel.omega_array(p, rr, ee)
    with np.errstate(invalid="ignore"):
        d1, d2 = kernel.omega_grad_array(p, rr, ee)
    on_diag = (rr > 0) & (np.abs(rr - ee) <= kernel.DIAGONAL_RTOL * np.maximum(rr, ee))
    flag = _diagonal_flag(p) if np.any(on_diag) else ""
    rows = (
        (rr.flat[i], ee.flat[i], w.flat[i], d1.flat[i], d2.flat[i], flag if on_diag.flat[i] else "")
        for i in range(rr.size)
    )
    path = write_csv(
        Path(args.out) / "kernel_table.csv", ["r", "eta", "omega", "d1_omega", "d2_omega", "diagonal"], rows
    )
    print(f"wrote {path} ({rr.size} rows)")
    return EXIT_OK


def cmd_energy_landscape(args) -> int:
    p = _make_potential(args)
    r = _parse_grid(args.r, p)
    eta = _parse_grid(args.eta, p)
    if np.any(r <= 0) or np.any(eta <= 0):
        raise ConfigError("pair energies need positive radii")
    rr, ee = np.meshgrid(r, eta, indexing="ij")

    def E(x, y):
        return 0.5 * kernel.shell_potential(p, x, y)

    e = E(rr, ee)
    sym = e - E(ee, rr)
    h = 1e-3 * np.minimum(rr, 1.0)
    fd2 = (E(rr + h, ee) - 2.0 * e + E(rr - h, ee)) / h**2
    with np.errstate(invalid="ignore"):
        d1, _ = kernel.omega_grad_array(p, rr, ee)
        target = -0.5 * d1
        with np.errstate(divide="ignore"):
            ratio = fd2 / target
    rows = (
        (rr.flat[i], ee.flat[i], e.flat[i], sym.flat[i], fd2.flat[i], target.flat[i], ratio.flat[i])
        for i in range(rr.size)
    )
    path = write_csv(
        Path(args.out) / "energy_landscape.csv",
        ["r", "eta", "energy", "symmetry", "d2E_dr2_fd", "minus_half_d1_omega", "fd_ratio"],
        rows,
    )
    print(f"wrote {path} ({rr.size} rows)")
    return EXIT_OK


def _make_potential(args):
    try:
        return _potential(args.a, args.b, args.N)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def cmd_simulate(args) -> int:
    cfg = load(args.config)
    out = Path(args.out) if args.out is not None else Path(cfg.directory)
    p = cfg.potential
    res = solver.simulate(p, cfg.sim, cfg.init)
    diags, snaps = res.diagnostics, res.snapshots

    header = ["t", "d_inf", "d_2", "d_alpha", "gamma", "theta", "energy", "dissipation", "newton_iters"]
    R_ref = solver.reference_radius(p)
    extra = cfg.alphas[1:]
    header += [f"d_alpha_{a:g}" for a in extra]
    rows = []
    for d, s in zip(diags, snaps):
        rows.append(
            [d.t, d.d_inf, d.d_2, d.d_alpha, d.gamma, d.theta, d.energy, d.dissipation, d.newton_iters]
            + [solver.wasserstein_to_shell(s, R_ref, a) for a in extra]
        )
    write_csv(out / "diagnostics.csv", header, rows)

    keep = list(range(0, len(snaps), cfg.snapshot_every))
    if keep[-1] != len(snaps) - 1:
        keep.append(len(snaps) - 1)
    write_csv(
        out / "snapshots.csv",
        ["t", "xi", "phi"],
        ((snaps[k].t, x, f) for k in keep for x, f in zip(snaps[k].xi, snaps[k].phi)),
    )

    t = np.array([d.t for d in diags])
    E = np.array([d.energy for d in diags])
    gap = E - E[-1]
    write_csv(
        out / "energy_decay.csv",
        ["t", "log_E_minus_Emin"],
        ((ti, math.log(g)) for ti, g in zip(t, gap) if g > 0),
    )

    rate = -solver.fit_log_slope(t, [d.d_2 for d in diags], t_min=0.5 * t[-1])
    last = diags[-1]
    summary = dict(
        t=last.t, final_d_inf=last.d_inf, decay_rate=rate, max_velocity=last.max_velocity,
        gamma=last.gamma, energy=last.energy, steps=res.steps, completed=res.completed,
        support_violations=res.support_violations,
    )
    print("SUMMARY " + " ".join(f"{k}={_cell(v)}" for k, v in summary.items()))
    print(f"wrote {out / 'diagnostics.csv'}, {out / 'snapshots.csv'}, {out / 'energy_decay.csv'}")
    if not res.completed:
        raise NumericalFailure(f"solver stopped at t={last.t:.6g}: {res.error}")
    return EXIT_OK


# ------------------------------------------------------------------ parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="shellflow", description="Shell steady states of aggregation equations.")
    parser.add_argument("--out", default=None, help="output directory (default: current, or the scenario's)")
    parser.add_argument("--dump-defaults", action="store_true", help="print the default scenario config and exit")
    sub = parser.add_subparsers(dest="command")

    c = sub.add_parser("classify", help="classify the shell steady state of |x|^a/a - |x|^b/b")
    c.add_argument("a", type=float)
    c.add_argument("b", type=float)
    c.add_argument("N", type=int)

    s = sub.add_parser("sweep", help="classify an (a, b) grid and sample the boundary curve")
    s.add_argument("--a-min", type=float, required=True)
    s.add_argument("--a-max", type=float, required=True)
    s.add_argument("--a-steps", type=int, required=True)
    s.add_argument("--b-steps", type=int, required=True)
    s.add_argument("--dim", type=int, default=2)

    m = sub.add_parser("simulate", help="run a scenario config (path or fig1/fig2/fig3)")
    m.add_argument("config")

    for name, helptext in (("kernel-table", "tabulate omega and its gradient"),
                           ("energy-landscape", "tabulate the pair energy E(r, eta)")):
        k = sub.add_parser(name, help=helptext)
        k.add_argument("a", type=float)
        k.add_argument("b", help="repulsive exponent, or 'none' for pure attraction")
        k.add_argument("N", type=int)
        k.add_argument("--r", default="0.05:2:40", help="start:stop:num or 'shell'")
        k.add_argument("--eta", default="shell", help="start:stop:num or 'shell'")
    return parser


_COMMANDS = {
    "classify": cmd_classify,
    "sweep": cmd_sweep,
    "simulate": cmd_simulate,
    "kernel-table": cmd_kernel_table,
    "energy-landscape": cmd_energy_landscape,
}


def main(argv: Optional[list] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK
    if args.dump_defaults:
        sys.stdout.write(dumps(ScenarioConfig()))
        return EXIT_OK
    if args.command is None:
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    if args.out is None and args.command != "simulate":
        args.out = "."
    try:
        return _COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"shellflow: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (NumericalFailure, kernel.QuadratureError, kernel.BlowupRegimeError,
            solver.StepFailure, solver.StateCorruptionError, FloatingPointError) as exc:
        print(f"shellflow: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
