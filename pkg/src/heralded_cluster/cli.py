"""Command-line entry point: ``heralded-cluster {eo,sweep,grow,verify,budget}``.

Rates and times are dimensionless, in units where the reference cavity decay
rate is 1, unless ``--unit ns`` is given (see :data:`UNITS`).  Every output
starts with a header holding the package version, the full parameter set and
the seed.  CSV headers are ``#`` comment lines; JSON outputs carry a
``header`` object and validate against the schemas in ``schemas/``.

Exit codes: 0 ok, 1 invalid input, 2 a verification check failed, 3 internal error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import sys
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from . import __version__, analytic, growth, protocol, verify
from .fockspace import SpaceConfig
from .trajectories import DetectorModel, SystemParams, slow_rate

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover - exercised on 3.10 only
    import tomli as tomllib

log = logging.getLogger(__name__)

EXIT_OK, EXIT_INVALID, EXIT_VERIFY, EXIT_INTERNAL = 0, 1, 2, 3

# Unit conversion, in one place.  With ``--unit ns`` every rate flag is read
# in s^-1 and every time flag in ns; ``--kappa-hz`` (the reference cavity
# decay rate in s^-1) turns them into the dimensionless units used inside:
#     rate -> rate / kappa_hz,    time -> time * 1e-9 * kappa_hz.
UNITS = {"kappa": None, "ns": 1e-9}

# Preset sweeps use g = 0.3, kappa = 1; gamma is given in units of the slow rate.
FIG2_G, FIG2_KAPPA = 0.3, 1.0
FIG2A_GAMMAS = (0.0, 0.1, 0.2)
FIG2A_ETAS = tuple(round(0.1 * i, 10) for i in range(1, 11))
FIG2B_RATIOS = tuple(round(0.8 + 0.05 * i, 10) for i in range(9))

# NV-diamond: gamma^-1 = 25 ns, g = 100 gamma, critically damped cavity
# (kappa = g), t_d = 32 us, APD dark rate 500 s^-1, m = 8 clock cycles.
NV_PRESET = {
    "kappa_hz": 4e9,
    "g": 4e9,
    "kappa": 4e9,
    "gamma": 4e7,
    "t_d": 32_000.0,
    "dark_rate": 500.0,
    "m": 8,
}

PRESET_C4 = {"p": 0.85**2 / 2, "m": 4, "recipe": "sequential"}
PRESET_C5 = {"p": 0.70**2 / 2, "m": 5, "recipe": "pairwise"}


class ValidationError(ValueError):
    """Bad user input; maps to exit code 1."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INVALID, f"{self.prog}: error: {message}\n")


# -- output ----------------------------------------------------------------------------


@dataclass
class Output:
    command: str
    params: dict
    seed: int | None
    columns: tuple
    rows: list
    summary: dict | None = None

    def header(self) -> dict:
        return {"tool": "heralded_cluster", "version": __version__, "command": self.command, "params": self.params, "seed": self.seed}

    def render(self, fmt: str) -> str:
        if fmt == "json":
            doc = {"header": self.header(), "rows": [_jsonable(r) for r in self.rows]}
            if self.summary is not None:
                doc["summary"] = _jsonable(self.summary)
            return json.dumps(doc, indent=2, sort_keys=False) + "\n"
        buf = io.StringIO()
        buf.write(f"# heralded_cluster {__version__} {self.command}\n")
        buf.write(f"# params: {json.dumps(_jsonable(self.params), sort_keys=True)}\n")
        buf.write(f"# seed: {self.seed}\n")
        if self.summary is not None:
            for k, v in self.summary.items():
                buf.write(f"# {k}: {_cell(v)}\n")
        w = csv.DictWriter(buf, fieldnames=self.columns, lineterminator="\n", extrasaction="ignore")
        w.writeheader()
        for r in self.rows:
            w.writerow({k: _cell(r.get(k)) for k in self.columns})
        return buf.getvalue()


def _cell(x):
    if x is None:
        return ""
    if isinstance(x, (bool, np.bool_)):
        return str(bool(x)).lower()
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (np.bool_,)):
        return bool(x)
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return x if math.isfinite(x) else None
    return x


def load_schema(command: str) -> dict:
    """JSON schema shipped for the ``--format json`` output of ``command``."""
    res = resources.files(__package__).joinpath("schemas", f"{command}.schema.json")
    return json.loads(res.read_text())


def _emit(out: Output, args) -> None:
    text = out.render(args.format)
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)


# -- parameter handling -------------------------------------------------------------------


def _rate(args, value):
    if value is None:
        return None
    return value / args.kappa_hz if args.unit == "ns" else value


def _time(args, value):
    if value is None:
        return None
    return value * UNITS["ns"] * args.kappa_hz if args.unit == "ns" else value


def _check_units(args):
    if args.unit == "ns" and not (args.kappa_hz and args.kappa_hz > 0):
        raise ValidationError("--unit ns needs a positive --kappa-hz")


def _system_params(args) -> SystemParams:
    g = args.g if args.g is not None else (FIG2_G * args.kappa_hz if args.unit == "ns" else FIG2_G)
    kappa = args.kappa if args.kappa is not None else (args.kappa_hz if args.unit == "ns" else FIG2_KAPPA)
    g_a = args.g_a if args.g_a is not None else g
    g_b = args.g_b if args.g_b is not None else g
    k_a = args.kappa_a if args.kappa_a is not None else kappa
    k_b = args.kappa_b if args.kappa_b is not None else kappa
    gam = args.gamma
    vals = [_rate(args, v) for v in (g_a, g_b, k_a, k_b, gam, gam)]
    return SystemParams(*vals)


def _detectors(args) -> DetectorModel:
    if args.resolving:
        raise ValidationError("photon-number-resolving detectors are not modelled")
    return DetectorModel(eta=args.eta, dark_rate=_rate(args, args.dark_rate))


def _protocol_config(args, params=None) -> protocol.ProtocolConfig:
    params = params or _system_params(args)
    det = _detectors(args)
    space = SpaceConfig(n_max=args.n_max)
    t_wait, t_relax = _time(args, args.t_wait), _time(args, args.t_relax)
    s = slow_rate(params)
    if args.windows == "converged":
        t_wait = t_wait if t_wait is not None else protocol.CONVERGED_WAIT / s
        t_relax = t_relax if t_relax is not None else protocol.CONVERGED_RELAX / s
    return protocol.ProtocolConfig(params, det, t_wait, t_relax, space=space)


def _add_physics(p: argparse.ArgumentParser):
    g = p.add_argument_group("system (dimensionless unless --unit ns)")
    g.add_argument("--g", type=float, help="coupling of both arms (default 0.3)")
    g.add_argument("--g-a", type=float)
    g.add_argument("--g-b", type=float)
    g.add_argument("--kappa", type=float, help="cavity decay of both arms (default 1)")
    g.add_argument("--kappa-a", type=float)
    g.add_argument("--kappa-b", type=float)
    g.add_argument("--gamma", type=float, default=0.0, help="free-space spontaneous emission rate")
    g.add_argument("--eta", type=float, default=1.0, help="detector efficiency (both detectors)")
    g.add_argument("--dark-rate", type=float, default=0.0)
    g.add_argument("--resolving", action="store_true", help="photon-number-resolving detectors (not supported)")
    g.add_argument("--t-wait", type=float)
    g.add_argument("--t-relax", type=float)
    g.add_argument(
        "--windows",
        choices=("converged", "default"),
        default="converged",
        help="unset windows: 40 slow decay times (converged) or 5/10 (library default)",
    )
    g.add_argument("--n-max", type=int, default=1, help="photon cutoff per cavity")
    _add_units(p)


def _add_units(p):
    p.add_argument("--unit", choices=tuple(UNITS), default="kappa")
    p.add_argument("--kappa-hz", type=float, help="reference cavity decay rate in s^-1 (with --unit ns)")


def _add_common(p: argparse.ArgumentParser):
    p.add_argument("--config", help="TOML or JSON file whose keys are long flag names")
    p.add_argument("--out", help="write output here instead of stdout")
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.add_argument("--jobs", type=int, default=1, help="worker processes")
    p.add_argument("-v", "--verbose", action="store_true")


# -- commands ----------------------------------------------------------------------------

EO_COLUMNS = ("label", "success", "pattern", "cause", "sign", "probability", "fidelity")
EO_SAMPLED_COLUMNS = ("label", "count", "frequency", "stderr", "mean_fidelity")


def cmd_eo(args) -> int:
    _check_units(args)
    cfg = _protocol_config(args)
    params = cfg.to_dict()
    if not args.sampled:
        results = protocol.run_eo_exact(cfg)
        s = protocol.summarize(results)
        rows = []
        for r in results:
            d = r.to_dict()
            d.pop("final_state")
            d["label"] = r.label
            rows.append(d)
        summary = {"mode": "exact", **s.as_row()}
        out = Output("eo", params, None, EO_COLUMNS, rows, summary)
    else:
        if args.trials < 1:
            raise ValidationError("--trials must be >= 1")
        samples = protocol.sample_eo(cfg, args.trials, args.seed)
        counts = samples.class_counts()
        n = len(samples)
        labels = [samples._label(i) for i in range(n)]
        rows = []
        for lab in sorted(counts):
            c = counts[lab]
            f = c / n
            fids = [samples.fidelity[i] for i in range(n) if labels[i] == lab and samples.success[i]]
            rows.append(
                {
                    "label": lab,
                    "count": c,
                    "frequency": f,
                    "stderr": math.sqrt(f * (1 - f) / n),
                    "mean_fidelity": float(np.mean(fids)) if fids else None,
                }
            )
        ok = samples.success
        summary = {
            "mode": "sampled",
            "trials": n,
            "p_success": float(ok.mean()),
            "p_success_stderr": float(math.sqrt(ok.mean() * (1 - ok.mean()) / n)),
            "fidelity": float(np.mean(samples.fidelity[ok])) if ok.any() else None,
        }
        params["trials"] = n
        out = Output("eo", params, args.seed, EO_SAMPLED_COLUMNS, rows, summary)
    _emit(out, args)
    return EXIT_OK


def _parse_grid(text) -> list[float]:
    if text is None:
        return None
    if isinstance(text, (list, tuple)):
        vals = [float(v) for v in text]
    else:
        vals = [float(v) for v in str(text).replace(",", " ").split()]
    if not vals:
        raise ValidationError("sweep grid must not be empty")
    return vals


def _sweep_windows(args, axis, grid, base_params):
    """Converged windows long enough for every grid point."""
    slowest = min(slow_rate(protocol.config_at(axis, v, protocol.ProtocolConfig(base_params)).params) for v in grid)
    if slowest <= 0:
        raise ValidationError("grid contains a point with no decay")
    return protocol.CONVERGED_WAIT / slowest, protocol.CONVERGED_RELAX / slowest


def _sweep_series(args):
    """``[(series, axis, grid, base ProtocolConfig)]`` for the chosen preset or axis."""
    if args.preset == "fig2a":
        base_params = SystemParams.symmetric(FIG2_G, FIG2_KAPPA)
        s = slow_rate(base_params)
        grid = _parse_grid(args.grid) or list(FIG2A_ETAS)
        gammas = _parse_grid(args.gammas) if args.gammas is not None else list(FIG2A_GAMMAS)
        out = []
        for gf in gammas:
            params = SystemParams.symmetric(FIG2_G, FIG2_KAPPA, gf * s)
            out.append((f"gamma={gf:g}*Gamma_slow", "eta", grid, params))
    elif args.preset in ("fig2b-kappa", "fig2b-g"):
        axis = "kappa_ratio" if args.preset == "fig2b-kappa" else "g_ratio"
        grid = _parse_grid(args.grid) or list(FIG2B_RATIOS)
        out = [(args.preset, axis, grid, SystemParams.symmetric(FIG2_G, FIG2_KAPPA))]
    else:
        if args.axis is None:
            raise ValidationError("give --preset or --axis")
        grid = _parse_grid(args.grid)
        if grid is None:
            raise ValidationError("--axis needs --grid")
        out = [(args.axis, args.axis, grid, _system_params(args))]
    series = []
    for name, axis, grid, params in out:
        if axis not in protocol.SWEEP_AXES:
            raise ValidationError(f"unknown sweep axis {axis!r}; expected one of {protocol.SWEEP_AXES}")
        cfg = protocol.ProtocolConfig(params, _detectors(args), space=SpaceConfig(n_max=args.n_max))
        if args.windows == "converged" and args.t_wait is None and args.t_relax is None:
            t_wait, t_relax = _sweep_windows(args, axis, grid, params)
        else:
            t_wait, t_relax = _time(args, args.t_wait), _time(args, args.t_relax)
        cfg = protocol.ProtocolConfig(cfg.params, cfg.detectors, t_wait, t_relax, space=cfg.space)
        for v in grid:
            protocol.config_at(axis, v, cfg)  # validate everything before computing
        series.append((name, axis, grid, cfg))
    return series


def cmd_sweep(args) -> int:
    _check_units(args)
    series = _sweep_series(args)
    rows = []
    for name, axis, grid, cfg in series:
        rows.extend(protocol.fidelity_sweep(axis, grid, cfg, jobs=args.jobs, series=name))
    params = {
        "preset": args.preset,
        "series": [{"series": n, "axis": a, "grid": list(g), "base": c.to_dict()} for n, a, g, c in series],
    }
    _emit(Output("sweep", params, None, protocol.SWEEP_COLUMNS, rows), args)
    return EXIT_OK


GROW_COLUMNS = ("strategy", "p", "m", "trials", "mean", "stderr", "analytic", "rel_dev")
SCAN_COLUMNS = ("p", "minimal_m", "C4", "C5", "cheapest")


def _growth_p(args) -> float:
    if args.physical:
        cfg = _protocol_config(args)
        return growth.physical_success_probability(cfg)
    if args.p is None:
        raise ValidationError("give --p, --paper-c4, --paper-c5 or --physical")
    return args.p


def cmd_grow(args) -> int:
    _check_units(args)
    if args.paper_c4 and args.paper_c5:
        raise ValidationError("choose one of --paper-c4 and --paper-c5")
    preset = PRESET_C4 if args.paper_c4 else PRESET_C5 if args.paper_c5 else None
    if args.scan:
        grid = _parse_grid(args.p_grid) or [0.1 * i for i in range(2, 11)]
        rows = growth.threshold_scan(grid)
        _emit(Output("grow", {"scan": grid}, None, SCAN_COLUMNS, rows), args)
        return EXIT_OK
    if preset:
        p, m, recipe = preset["p"], preset["m"], preset["recipe"]
    else:
        p, m, recipe = _growth_p(args), args.m, args.recipe
    params = {"kind": args.kind, "p": p, "m": m, "recipe": recipe, "keep_remnant": args.keep_remnant}
    if args.kind == "sequential":
        rep = growth.simulate_sequential(m, p, args.trials, args.seed, args.keep_remnant, args.jobs)
        params["trials"] = args.trials
    else:
        strat = growth.GrowthStrategy("DIVIDE_CONQUER", m, recipe, keep_remnant=args.keep_remnant)
        rep = growth.simulate_join_growth(strat, p, args.joins, args.seed, args.jobs)
        params["joins"] = args.joins
    row = rep.to_dict()
    extra = row.pop("extra")
    summary = {**extra}
    if preset:
        summary["reference_value"] = 73.4 if args.paper_c4 else 775.0
    _emit(Output("grow", params, args.seed, GROW_COLUMNS, [row], summary), args)
    return EXIT_OK


VERIFY_COLUMNS = ("check", "passed", "detail")


def cmd_verify(args) -> int:
    checks = verify.run_checks(args.level)
    rows = [{"check": c.name, "passed": c.passed, "detail": c.detail} for c in checks]
    for c in checks:
        log.info("%s: %.2f s", c.name, c.seconds)
        print(f"{'PASS' if c.passed else 'FAIL'}  {c.name}: {c.detail}", file=sys.stderr)
    ok = all(c.passed for c in checks)
    _emit(Output("verify", {"level": args.level}, None, VERIFY_COLUMNS, rows, {"all_passed": ok}), args)
    return EXIT_OK if ok else EXIT_VERIFY


BUDGET_COLUMNS = ("quantity", "value", "unit")


def cmd_budget(args) -> int:
    vals = {k: getattr(args, k) for k in ("kappa_hz", "g", "kappa", "gamma", "t_d", "dark_rate", "m")}
    if args.preset == "nv":
        args.unit = "ns"
        vals = {k: (v if v is not None else NV_PRESET[k]) for k, v in vals.items()}
        args.kappa_hz = vals["kappa_hz"]
    _check_units(args)
    missing = [k for k in ("g", "kappa", "t_d", "m") if vals[k] is None]
    if missing:
        raise ValidationError(f"missing parameters: {', '.join(missing)}")
    g, kappa = _rate(args, vals["g"]), _rate(args, vals["kappa"])
    gamma, dark = _rate(args, vals["gamma"] or 0.0), _rate(args, vals["dark_rate"] or 0.0)
    t_d, t_wait = _time(args, vals["t_d"]), _time(args, args.t_wait)
    params = SystemParams.symmetric(g, kappa, gamma)
    est = analytic.error_budget(params, DetectorModel(dark_rate=dark), t_d, int(vals["m"]), t_wait)
    to_ns = (1.0 / (UNITS["ns"] * args.kappa_hz)) if args.unit == "ns" else 1.0
    tu = "ns" if args.unit == "ns" else "1/kappa"
    rows = [
        {"quantity": "t_c", "value": est.t_c * to_ns, "unit": tu},
        {"quantity": "t_wait", "value": est.t_wait * to_ns, "unit": tu},
        {"quantity": "t_d", "value": est.t_d * to_ns, "unit": tu},
        {"quantity": "m", "value": est.m, "unit": ""},
        {"quantity": "epsilon", "value": est.epsilon, "unit": ""},
        {"quantity": "p_dc", "value": est.p_dc, "unit": ""},
    ]
    p = {"preset": args.preset, "unit": args.unit, **vals, "t_wait": args.t_wait}
    p["dimensionless"] = {"g": g, "kappa": kappa, "gamma": gamma, "dark_rate": dark, "t_d": t_d}
    _emit(Output("budget", p, None, BUDGET_COLUMNS, rows), args)
    return EXIT_OK


# -- parser ----------------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="heralded-cluster", description="Double-heralded entanglement and cluster growth.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("eo", help="one entangling operation: outcome classes, probabilities, fidelities")
    _add_physics(p)
    p.add_argument("--sampled", action="store_true", help="Monte Carlo trajectories instead of exact enumeration")
    p.add_argument("--trials", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    _add_common(p)
    p.set_defaults(func=cmd_eo)

    p = sub.add_parser("sweep", help="success probability and fidelity along a parameter axis (CSV)")
    p.add_argument("--preset", choices=("fig2a", "fig2b-kappa", "fig2b-g"))
    p.add_argument("--axis", choices=protocol.SWEEP_AXES)
    p.add_argument("--grid", help="comma or space separated values")
    p.add_argument("--gammas", help="fig2a: gamma values in units of the slow decay rate")
    _add_physics(p)
    _add_common(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("grow", help="Monte Carlo EO cost of growing chains")
    p.add_argument("--paper-c4", action="store_true", help="p = 0.85^2/2, m = 4, sequential build")
    p.add_argument("--paper-c5", action="store_true", help="p = 0.70^2/2, m = 5, pairwise build")
    p.add_argument("--p", type=float, help="EO success probability")
    p.add_argument("--physical", action="store_true", help="take p from the exact EO at the given system flags")
    p.add_argument("--m", type=int, default=4, help="short-chain length (or target length for --kind sequential)")
    p.add_argument("--kind", choices=("join", "sequential"), default="join")
    p.add_argument("--recipe", choices=growth.RECIPES, default="sequential")
    p.add_argument("--keep-remnant", action="store_true", help="on failure keep the shortened chain")
    p.add_argument("--joins", type=int, default=100_000)
    p.add_argument("--trials", type=int, default=100_000)
    p.add_argument("--scan", action="store_true", help="threshold and C4/C5 cost table over --p-grid")
    p.add_argument("--p-grid")
    p.add_argument("--seed", type=int, default=0)
    _add_physics(p)
    _add_common(p)
    p.set_defaults(func=cmd_grow)

    p = sub.add_parser("verify", help="cross-oracle self checks")
    p.add_argument("--level", choices=("fast", "full"), default="fast")
    _add_common(p)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("budget", help="spin-decoherence and dark-count error estimates")
    p.add_argument("--preset", choices=("nv",))
    p.add_argument("--g", type=float)
    p.add_argument("--kappa", type=float)
    p.add_argument("--gamma", type=float)
    p.add_argument("--t-d", type=float, help="spin decoherence time")
    p.add_argument("--dark-rate", type=float)
    p.add_argument("--m", type=int, help="clock cycles of parallel chain preparation")
    p.add_argument("--t-wait", type=float, help="detection window (default 3 slow decay times)")
    _add_units(p)
    _add_common(p)
    p.set_defaults(func=cmd_budget)
    return parser


def _load_config(path: str) -> dict:
    text = Path(path).read_bytes()
    try:
        if path.endswith(".json"):
            data = json.loads(text)
        else:
            data = tomllib.loads(text.decode())
    except (ValueError, tomllib.TOMLDecodeError) as exc:
        raise ValidationError(f"cannot parse config {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ValidationError("config file must hold a table of flag values")
    return {k.replace("-", "_"): v for k, v in data.items()}


def _apply_config(parser, argv) -> argparse.Namespace:
    args = parser.parse_args(argv)
    if not getattr(args, "config", None):
        return args
    cfg = _load_config(args.config)
    sub = parser._subparsers._group_actions[0].choices[args.command]
    known = {a.dest for a in sub._actions}
    unknown = sorted(set(cfg) - known - {"command"})
    if unknown:
        raise ValidationError(f"unknown config keys: {', '.join(unknown)}")
    if cfg.get("command", args.command) != args.command:
        raise ValidationError(f"config is for command {cfg['command']!r}, not {args.command!r}")
    cfg.pop("command", None)
    for k in ("grid", "gammas", "p_grid"):
        if isinstance(cfg.get(k), list):
            cfg[k] = ",".join(str(v) for v in cfg[k])
    sub.set_defaults(**cfg)  # command-line flags still win
    return parser.parse_args(argv)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = _apply_config(parser, argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
        if getattr(args, "jobs", 1) < 1:
            raise ValidationError("--jobs must be >= 1")
        return args.func(args)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_INVALID
    except (ValueError, NotImplementedError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except Exception as exc:  # noqa: BLE001
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
