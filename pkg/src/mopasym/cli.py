"""Command-line front end.

Each subcommand loads a model (or band spec), evaluates one quantity and
writes CSV or JSON.  Outputs are a pure function of the command line and the
model contents: the first CSV line records the model hash, the formula, a
hash of the resolved configuration and the library version.

Exit status: 0 success, 2 bad configuration, 3 numerical failure (a
diagnostic JSON object is printed on stderr in both error cases).
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import __version__
from .asymptotics import (
    ChebyshevSingularError,
    OffSupportError,
    chebyshev_densities,
    chebyshev_stieltjes,
    dls_density,
    log_potential,
    mu0_density,
    mu0_density_boundary,
)
from .core_linalg import RootFindingError
from .ensembles import BandEnsembleSpec, BandLimit, IntegrationError, empirical_vs_limit, mu0s_density
from .io import (
    ModelError,
    band_spec_from_dict,
    canonical_hash,
    check_run_config,
    csv_text,
    json_text,
    load_json,
    load_model,
    parse_grid,
)
from .recurrence import SingularRatioError, det_ratio_check, verify_ratio
from .symbol import MultipleRootError, gamma0

THREADS_ENV = "MOPASYM_THREADS"
NUMERICAL_ERRORS = (RootFindingError, IntegrationError, SingularRatioError, MultipleRootError,
                    ChebyshevSingularError, OffSupportError, np.linalg.LinAlgError,
                    FloatingPointError, ArithmeticError)


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------

def _config(args, model=None, exclude=("out", "summary", "model", "band", "func")) -> dict:
    cfg = {k: v for k, v in sorted(vars(args).items()) if k not in exclude and v is not None}
    if model is not None:
        cfg["model"] = model.fingerprint()
    return cfg


def _meta(cfg: dict, model_hash: str, formula: str, **extra) -> dict:
    meta = {"model": model_hash, "formula": formula, "config": canonical_hash(cfg),
            "version": __version__}
    meta.update(extra)
    return meta


def _emit(text: str, path: str | None) -> None:
    if path:
        Path(path).write_text(text)
    else:
        sys.stdout.write(text)


def _table(args, columns, rows, meta) -> None:
    if args.format == "json":
        doc = {"meta": meta, "columns": list(columns), "rows": [list(map(float, r)) for r in rows]}
        _emit(json_text(doc), args.out)
    else:
        _emit(csv_text(columns, rows, meta), args.out)


def _model(args, kinds=("constant", "periodic")):
    model = load_model(args.model)
    if model.kind not in kinds:
        raise ConfigError(f"{args.command} needs a {' or '.join(kinds)} model, got {model.kind}")
    return model


def _plain_symbol(model):
    if model.symbol.p != 1:
        raise ConfigError("this command needs a period-1 symbol")
    return model.symbol


def _pointwise(fn, xs):
    """Evaluate ``fn`` on a grid; branch points and off-domain points become NaN."""
    out, excluded = [], 0
    for x in xs:
        try:
            out.append(fn(float(x)))
        except (MultipleRootError, OffSupportError, ChebyshevSingularError):
            out.append(math.nan)
            excluded += 1
    return np.asarray(out, dtype=float), excluded


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_gamma0(args) -> int:
    model = _model(args)
    support = gamma0(model.symbol)
    cfg = _config(args, model)
    meta = _meta(cfg, model.fingerprint(), "gamma0")
    if args.format == "json":
        doc = {"meta": meta, "intervals": [list(iv) for iv in support.intervals],
               "breakpoints": list(support.breakpoints)}
        _emit(json_text(doc), args.out)
    else:
        _emit(csv_text(["left", "right"], support.intervals, meta), args.out)
    return 0


_DENSITY_FORMS = {
    "unit-circle": lambda sym, x: mu0_density(sym, x),
    "boundary-value": lambda sym, x: mu0_density_boundary(sym, x) if mu0_density(sym, x) > 0 else 0.0,
    "dls-trace": lambda sym, x: dls_density(sym, x, check_derivatives=False).density,
}


def _density_table(args, model, formula, **extra) -> int:
    sym = model.symbol
    if formula == "dls-trace":
        _plain_symbol(model)
    xs = parse_grid(args.grid)
    values, excluded = _pointwise(lambda x: _DENSITY_FORMS[formula](sym, x), xs)
    meta = _meta(_config(args, model), model.fingerprint(), formula, excluded=excluded, **extra)
    _table(args, ["x", "value"], np.column_stack([xs, values]), meta)
    return 0


def cmd_density(args) -> int:
    return _density_table(args, _model(args), args.form)


def cmd_periodic_density(args) -> int:
    model = _model(args, kinds=("periodic",))
    return _density_table(args, model, "unit-circle", period=model.symbol.p)


def cmd_potential(args) -> int:
    model = _model(args)
    xs = parse_grid(args.grid)
    values, excluded = _pointwise(lambda x: log_potential(model.symbol, x), xs)
    meta = _meta(_config(args, model), model.fingerprint(), "log-potential", excluded=excluded)
    _table(args, ["x", "value"], np.column_stack([xs, values]), meta)
    return 0


def cmd_ratio_check(args) -> int:
    model = _model(args, kinds=("constant", "periodic", "varying"))
    schedule = _int_list(args.n_schedule)
    if any(n < 1 for n in schedule):
        raise ConfigError("n-schedule entries must be positive")
    x = complex(args.x, args.x_imag)
    if model.kind == "varying":
        if args.s is None or not args.s > 0:
            raise ConfigError("a varying model needs --s > 0")
        seq = model.sequence(max(schedule))
        curve = verify_ratio(seq, None, x, schedule, s=args.s)
        n_last = int(round(args.s * max(schedule)))
        det = det_ratio_check(seq, None, x, n_last, s=args.s)
    else:
        seq = model.sequence()
        curve = verify_ratio(seq, None, x, schedule)
        n_last = max(schedule)
        det = det_ratio_check(seq, None, x, n_last)
    cfg = _config(args, model)
    meta = _meta(cfg, model.fingerprint(), "ratio-asymptotics")
    if args.format == "csv":
        rows = [(n, float(e.max())) for n, e in zip(curve.schedule, curve.errors)]
        _emit(csv_text(["n", "max_error"], rows, meta), args.out)
    else:
        doc = {"meta": meta, **curve.to_dict(),
               "det_ratio": {"n": n_last, "measured": det.measured, "predicted": det.predicted,
                             "deviation": det.deviation}}
        _emit(json_text(doc), args.out)
    return 0


def cmd_chebyshev(args) -> int:
    model = _model(args, kinds=("constant",))
    sym = _plain_symbol(model)
    r = sym.r
    pick = 0 if args.which == "W" else 1
    xs = parse_grid(args.grid)
    rows, excluded = [], 0
    for x in xs:
        try:
            if args.quantity == "density":
                M = chebyshev_densities(sym, float(x))[pick]
            else:
                M = chebyshev_stieltjes(sym, complex(x, args.eps))[pick]
        except (ChebyshevSingularError, MultipleRootError):
            M = np.full((r, r), complex(math.nan, math.nan))
            excluded += 1
        rows.append([x] + [v for z in M.ravel() for v in (z.real, z.imag)])
    columns = ["x"] + [f"{part}_{i}{j}" for i in range(r) for j in range(r) for part in ("re", "im")]
    formula = f"{'density' if args.quantity == 'density' else 'stieltjes'}-{args.which}"
    meta = _meta(_config(args, model), model.fingerprint(), formula, excluded=excluded)
    _table(args, columns, rows, meta)
    return 0


def cmd_dls_check(args) -> int:
    model = _model(args, kinds=("constant",))
    sym = _plain_symbol(model)
    if not sym.is_hermitian_A():
        raise ConfigError("dls-check needs a Hermitian A")
    xs = parse_grid(args.grid)
    rows, worst, excluded = [], 0.0, 0
    for x in xs:
        try:
            unit = mu0_density(sym, float(x))
            inside = unit > 0
            boundary = mu0_density_boundary(sym, float(x)) if inside else 0.0
            dls = dls_density(sym, float(x))
            trace = dls.density
            slope_gap = dls.derivative_gap or 0.0
        except (MultipleRootError, ChebyshevSingularError):
            rows.append([x, math.nan, math.nan, math.nan, math.nan])
            excluded += 1
            continue
        gap = max(abs(unit - boundary), abs(unit - trace), abs(boundary - trace), slope_gap)
        worst = max(worst, gap)
        rows.append([x, unit, boundary, trace, gap])
    meta = _meta(_config(args, model), model.fingerprint(), "reconciliation",
                 excluded=excluded, max_gap=format(worst, ".3e"))
    _table(args, ["x", "unit_circle", "boundary_value", "dls_trace", "gap"], rows, meta)
    if worst > args.tol:
        _diagnostic({"status": "numerical failure", "type": "ReconciliationGap",
                     "message": f"density forms disagree by {worst:.3e} > {args.tol:.1e}"})
        return 3
    return 0


def cmd_varying_density(args) -> int:
    model = _model(args, kinds=("varying",))
    if not args.s > 0:
        raise ConfigError("--s must be positive")
    xs = parse_grid(args.grid)
    values, excluded = _pointwise(lambda x: mu0s_density(model.profile, args.s, x), xs)
    meta = _meta(_config(args, model), model.fingerprint(), "averaged-density", excluded=excluded)
    _table(args, ["x", "value"], np.column_stack([xs, values]), meta)
    return 0


def cmd_band_sim(args) -> int:
    if args.band:
        spec, bins = band_spec_from_dict(load_json(args.band))
    else:
        missing = [f"--{k}" for k in ("r", "gammas", "n", "seed") if getattr(args, k) is None]
        if missing:
            raise ConfigError(f"band-sim needs {', '.join(missing)} or --band")
        try:
            spec = BandEnsembleSpec(args.r, tuple(_float_list(args.gammas)), args.n, args.seed)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        bins = args.bins
    if bins < 1:
        raise ConfigError("--bins must be positive")
    doc = {"r": spec.r, "gammas": list(spec.gammas), "n": spec.n, "seed": spec.seed, "bins": bins}
    report = empirical_vs_limit(spec, bins=bins, limit=BandLimit(spec), check_mass=True)
    cfg = {"command": "band-sim", "band": doc, "format": args.format}
    meta = _meta(cfg, canonical_hash(doc), "band-limit")
    summary = {"meta": meta, "spec": doc, **report.summary()}
    columns = ["bin_left", "bin_right", "empirical_density", "limit_density"]
    if args.format == "json":
        _emit(json_text({**summary, "columns": columns, "rows": report.histogram}), args.out)
    else:
        _emit(csv_text(columns, report.histogram, meta), args.out)
    if args.summary:
        Path(args.summary).write_text(json_text(summary))
    else:
        sys.stderr.write(json_text(summary))
    return 0


def cmd_validate(args) -> int:
    model = load_model(args.model)
    report = {"status": "ok", "model": model.fingerprint(), "kind": model.kind}
    if model.symbol is not None:
        sym = model.symbol
        support = gamma0(sym)
        report.update(r=sym.r, period=sym.p, gamma0=[list(iv) for iv in support.intervals],
                      gamma0_hull=list(support.hull), intervals_bound=sym.size)
    else:
        report.update(r=model.profile.r)
    sys.stdout.write(json_text(report))
    return 0


def cmd_run(args) -> int:
    cfg_path = Path(args.config)
    doc = check_run_config(load_json(cfg_path))
    argv = [doc["command"]]
    for key, value in doc.items():
        if key == "command":
            continue
        if key in ("model", "band", "out", "summary") and not Path(value).is_absolute():
            value = str(cfg_path.parent / value)
        if isinstance(value, list):
            value = ",".join(str(v) for v in value)
        argv += [f"--{key.replace('_', '-')}", str(value)]
    return main(argv)


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def _int_list(text: str) -> list[int]:
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise ConfigError(f"expected comma-separated integers, got {text!r}") from None


def _float_list(text: str) -> list[float]:
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise ConfigError(f"expected comma-separated numbers, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mopasym", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def command(name, func, help_text, model=True, grid=False):
        p = sub.add_parser(name, help=help_text)
        if model:
            p.add_argument("--model", required=True, help="model JSON file")
        if grid:
            p.add_argument("--grid", required=True, help="min:max:count")
        p.add_argument("--out", help="output file (default: stdout)")
        p.add_argument("--format", choices=("csv", "json"), default="csv")
        p.set_defaults(func=func)
        return p

    command("gamma0", cmd_gamma0, "support intervals of the limiting zero distribution")
    p = command("density", cmd_density, "limiting zero density on a grid", grid=True)
    p.add_argument("--form", choices=sorted(_DENSITY_FORMS), default="unit-circle")
    command("periodic-density", cmd_periodic_density, "zero density of a period-p model", grid=True)
    command("potential", cmd_potential, "logarithmic potential off the support", grid=True)

    p = command("ratio-check", cmd_ratio_check, "ratio asymptotics error curve")
    p.add_argument("--x", type=float, required=True)
    p.add_argument("--x-imag", type=float, default=0.0)
    p.add_argument("--n-schedule", required=True, help="comma-separated n (or N for varying models)")
    p.add_argument("--s", type=float, help="position n/N for varying models")
    p.set_defaults(format="json")

    p = command("chebyshev", cmd_chebyshev, "matrix Chebyshev measures", grid=True)
    p.add_argument("--which", choices=("W", "X"), default="W")
    p.add_argument("--quantity", choices=("density", "stieltjes"), default="density")
    p.add_argument("--eps", type=float, default=0.0, help="imaginary offset for stieltjes")

    p = command("dls-check", cmd_dls_check, "reconcile three density formulas", grid=True)
    p.add_argument("--tol", type=float, default=1e-6)

    p = command("varying-density", cmd_varying_density, "averaged density of a varying model",
                grid=True)
    p.add_argument("--s", type=float, default=1.0)

    p = command("band-sim", cmd_band_sim, "random band ensemble against its limit", model=False)
    p.add_argument("--band", help="band spec JSON (replaces the flags below)")
    p.add_argument("--r", type=int)
    p.add_argument("--gammas")
    p.add_argument("--n", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--bins", type=int, default=60)
    p.add_argument("--summary", help="summary JSON file (default: stderr)")

    p = sub.add_parser("validate", help="check a model file")
    p.add_argument("--model", required=True)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("run", help="run one command described by a JSON config")
    p.add_argument("--config", required=True)
    p.set_defaults(func=cmd_run)
    return parser


def _diagnostic(doc: dict) -> None:
    sys.stderr.write(json.dumps(doc, sort_keys=True, default=str) + "\n")


def _threads() -> int | None:
    raw = os.environ.get(THREADS_ENV)
    if raw is None:
        return None
    try:
        value = int(raw)
    except ValueError:
        raise ConfigError(f"{THREADS_ENV} must be a positive integer, got {raw!r}") from None
    if value < 1:
        raise ConfigError(f"{THREADS_ENV} must be a positive integer, got {raw!r}")
    return value


VALUE_OPTIONS = ("--grid", "--x", "--x-imag", "--s", "--eps")


def _attach_values(argv: list[str]) -> list[str]:
    """``--grid -2:2:5`` becomes ``--grid=-2:2:5`` so leading minus signs parse."""
    out, i = [], 0
    while i < len(argv):
        if argv[i] in VALUE_OPTIONS and i + 1 < len(argv):
            out.append(f"{argv[i]}={argv[i + 1]}")
            i += 2
        else:
            out.append(argv[i])
            i += 1
    return out


def main(argv=None) -> int:
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = parser.parse_args(_attach_values(argv))
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        threads = _threads()
        with threadpool_limits(limits=threads):
            return args.func(args)
    except ModelError as exc:
        _diagnostic({"status": "bad config", **exc.to_dict()})
        return 2
    except NUMERICAL_ERRORS as exc:
        doc = {"status": "numerical failure", "type": type(exc).__name__, "message": str(exc)}
        for attr in ("x", "n", "interval"):
            if hasattr(exc, attr):
                doc[attr] = getattr(exc, attr)
        _diagnostic(doc)
        return 3
    except (ConfigError, ValueError) as exc:
        _diagnostic({"status": "bad config", "type": type(exc).__name__, "error": str(exc)})
        return 2


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
