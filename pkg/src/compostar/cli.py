"""Command-line interface: ``compostar <subcommand> [flags]``.

Exit codes: 0 success, 2 invalid input, 3 numerical failure or
non-convergence, 4 filesystem error.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from . import io as cio
from .estimate import FitOptions, fit
from .exceptions import CompostarError, NumericalError, PanelFormatError, ValidationError
from .model import ModelParams
from .montecarlo import REFERENCE_PARAMS, STATIONARY_PARAMS, McConfig, load_config, run_study, summarize
from .simplex import build_basis, closure, ilr, ilr_inv, replace_zeros
from .simulate import SimConfig, simulate
from .weights import distance_cutoff, rook_grid, row_standardize, sparsity

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4

DESIGNS = {"reference": REFERENCE_PARAMS, "stationary": STATIONARY_PARAMS}


# ---------------------------------------------------------------------------
# argument helpers


def _seed(text: str) -> int:
    try:
        v = int(text, 10)
    except ValueError:
        raise argparse.ArgumentTypeError(f"seed must be a decimal integer, got {text!r}")
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError(f"seed must be in [0, 2**64), got {v}")
    return v


def _positive_int(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text!r}")
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {v}")
    return v


def _matrix(text: str) -> np.ndarray:
    """Parse ``"a,b;c,d"`` into a 2-D array."""
    try:
        rows = [[float(v) for v in r.split(",")] for r in text.split(";")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected rows like '0.5,0.1;0.2,0.4', got {text!r}")
    if len({len(r) for r in rows}) != 1:
        raise argparse.ArgumentTypeError(f"ragged matrix {text!r}")
    return np.array(rows)


def _int_list(text: str) -> tuple:
    try:
        return tuple(int(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _global_flags(parser, suppress: bool):
    d = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    g = parser.add_argument_group("global options")
    g.add_argument("--seed", type=_seed, default=d(0), help="RNG seed, decimal 64-bit (default 0)")
    g.add_argument("--threads", type=_positive_int, default=d(None),
                   help="worker processes for mc (default: available CPUs)")
    g.add_argument("--output", "-o", default=d(None), help="output file or directory")
    g.add_argument("--json", action="store_true", default=d(False),
                   help="print machine-readable JSON instead of tables")


def _basis_flags(parser, default="balance"):
    parser.add_argument("--basis", choices=("balance", "helmert", "pivot"), default=default,
                        help=f"ilr basis (default {default})")


def _zero_flags(parser):
    parser.add_argument("--zero-policy", choices=("reject", "replace"), default="reject",
                        help="zero parts: reject the file or replace by delta (default reject)")
    parser.add_argument("--delta", type=float, default=1e-6, help="replacement share for zeros (default 1e-6)")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="compostar",
        description="Spatiotemporal autoregression for compositional areal panels.",
        allow_abbrev=False,
    )
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    _global_flags(ap, suppress=False)
    sub = ap.add_subparsers(dest="command", metavar="SUBCOMMAND", required=True)

    def add(name, **kw):
        p = sub.add_parser(name, allow_abbrev=False, **kw)
        _global_flags(p, suppress=True)
        return p

    p = add("transform", help="map a panel CSV to ilr coordinates or back",
            description="Forward: region_id,time,part,value -> region_id,time,coord,value. "
                        "Inverse (--inverse) reads the coordinate file back into shares.")
    p.add_argument("input", help="input CSV")
    p.add_argument("--inverse", action="store_true", help="coordinates -> shares")
    p.add_argument("--parts", help="comma-separated part labels (inverse only; default from file metadata)")
    _basis_flags(p, default=None)
    _zero_flags(p)

    p = add("weights", help="build a spatial weight matrix and write its edges",
            description="Writes i,j rows (0-based), plus a weight column with --standardize.")
    p.add_argument("kind", choices=("rook", "adjacency", "distance"))
    p.add_argument("--side", type=_positive_int, help="grid side for rook")
    p.add_argument("--input", help="adjacency CSV (i,j) or coordinates CSV (id,x,y)")
    p.add_argument("--radius", type=float, help="distance cutoff")
    p.add_argument("--standardize", action="store_true", help="row-standardise")

    p = add("simulate", help="simulate a compositional panel on a rook grid",
            description="Writes panel.csv, regressors.csv, weights.csv and truth.json into --output.")
    p.add_argument("--side", type=_positive_int, default=6, help="grid side (default 6)")
    p.add_argument("--T", type=_positive_int, default=80, dest="T", help="periods after Y0 (default 80)")
    p.add_argument("--burn-in", type=int, default=100, help="discarded periods (default 100)")
    p.add_argument("--design", choices=sorted(DESIGNS), default="stationary",
                   help="base parameters (default stationary; 'reference' is explosive on a rook grid)")
    p.add_argument("--psi", type=_matrix, help="override Psi, e.g. '0.7,0.2;0.1,0.7'")
    p.add_argument("--pi", type=_matrix, help="override Pi")
    p.add_argument("--beta", type=_matrix, help="override B (intercept row first)")
    p.add_argument("--sigma2", type=float, help="override innovation variance")
    p.add_argument("--noise", choices=("gaussian", "student-t"), default="gaussian")
    p.add_argument("--df", type=float, default=5.0, help="Student-t degrees of freedom")
    _basis_flags(p)

    p = add("fit", help="estimate the model on a panel CSV",
            description="Writes the coefficient CSV to --output and prints the table.")
    p.add_argument("panel", help="panel CSV (region_id,time,part,value)")
    p.add_argument("--regressors", help="regressor CSV (region_id,time,regressor,component,value)")
    p.add_argument("--intercept", action="store_true", help="add an intercept regressor")
    w = p.add_mutually_exclusive_group(required=True)
    w.add_argument("--rook", type=_positive_int, metavar="SIDE",
                   help="rook grid; units in lexicographic region order, row-major")
    w.add_argument("--adjacency", help="adjacency CSV with i,j region ids")
    w.add_argument("--coords", help="coordinates CSV (id,x,y); needs --radius")
    p.add_argument("--radius", type=float, help="distance cutoff for --coords")
    p.add_argument("--no-standardize", action="store_true", help="use binary weights as given")
    p.add_argument("--psi-zero", action="store_true", help="restrict Psi = 0")
    p.add_argument("--pi-zero", action="store_true", help="restrict Pi = 0")
    p.add_argument("--likelihood", choices=("standard", "paper-verbatim"), default="standard")
    p.add_argument("--optimizer", choices=("quasi-newton", "nelder-mead"), default="quasi-newton")
    p.add_argument("--max-iter", type=_positive_int, default=200)
    p.add_argument("--no-se", action="store_true", help="skip standard errors")
    p.add_argument("--frequency", choices=cio.FREQUENCIES, default="auto", help="time label frequency")
    _basis_flags(p)
    _zero_flags(p)

    p = add("mc", help="run a Monte Carlo consistency study",
            description="Writes the long-format RMSE CSV to --output (default mc_rmse.csv) "
                        "and a manifest beside it.")
    p.add_argument("--preset", choices=("quick", "full"), help="study design (default full)")
    p.add_argument("--config", help="study config file (JSON or key = value)")
    p.add_argument("--design", choices=sorted(DESIGNS), help="base parameters (default reference)")
    p.add_argument("--sides", type=_int_list, help="grid sides, e.g. 4,6")
    p.add_argument("--horizons", type=_int_list, help="horizons, e.g. 20,80")
    p.add_argument("--replications", type=_positive_int)
    p.add_argument("--burn-in", type=int)
    p.add_argument("--sigma2", type=float, help="override innovation variance")
    return ap


# ---------------------------------------------------------------------------
# output helpers


def _emit(args, payload, human: str):
    if args.json:
        print(json.dumps(payload, indent=2, default=_json_default))
    else:
        print(human)


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(type(o).__name__)


def _num(x) -> float | None:
    x = float(x)
    return None if np.isnan(x) else x


def _fmt(x, width=12):
    return f"{'':>{width}}" if np.isnan(x) else f"{x:>{width}.4f}"


def fit_table(result) -> str:
    titles = {"intercept": "Intercept", "beta": "Regressors", "psi": "Spatial (Psi)",
              "pi": "Temporal (Pi)", "sigma": "Innovation"}
    lines = [f"{'coef':<14}{'estimate':>12}{'std.error':>12}{'t stat':>12}"]
    last = None
    for block, coef, est, se, t in result.table():
        if block != last:
            lines.append(f"-- {titles[block]}")
            last = block
        lines.append(f"{coef:<14}{_fmt(est)}{_fmt(se)}{_fmt(t)}")
    lines.append(f"loglik {result.loglik:.6f} ({result.loglik_form}); "
                 f"converged={result.converged} after {result.iterations} iterations")
    lines.extend(f"note: {m}" for m in result.messages)
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# subcommands


def cmd_transform(args) -> int:
    out = args.output
    if args.inverse:
        return _transform_inverse(args, out)
    cells = cio._pivot(args.input, cio.PANEL_HEADER, (0, 1, 2), 3)
    groups = {}
    for (r, t, part), (val, _) in cells.items():
        groups.setdefault((r, t), {})[part] = val
    parts = sorted({k[2] for k in cells})
    if len(parts) < 2:
        raise PanelFormatError(f"{args.input}: need at least 2 parts")
    keys = sorted(groups)
    missing = [f"missing (region_id={r!r}, time={t!r}, part={p!r})"
               for r, t in keys for p in parts if p not in groups[(r, t)]]
    cio._raise_listed(cio.MissingCell, f"{args.input}: incomplete compositions", missing)
    raw = np.array([[groups[k][p] for p in parts] for k in keys])
    zero = raw == 0
    if zero.any() and args.zero_policy == "reject":
        recs = [f"line {cells[(keys[i][0], keys[i][1], parts[d])][1]}: zero part "
                f"(region_id={keys[i][0]!r}, time={keys[i][1]!r}, part={parts[d]!r})"
                for i, d in np.argwhere(zero)]
        raise cio.ZeroPart(f"{args.input}: zero parts (use --zero-policy replace)", recs)
    shares = replace_zeros(raw, args.delta)[0] if zero.any() else closure(raw)
    mode = args.basis or "balance"
    basis = build_basis(len(parts), mode)
    z = ilr(shares, basis)
    rows = [(r, t, f"z{j + 1}", cio.format_float(z[i, j])) for i, (r, t) in enumerate(keys)
            for j in range(basis.p)]
    with _open_out(out) as fh:
        fh.write(f"# basis={mode}\n# parts={','.join(parts)}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("region_id", "time", "coord", "value"))
        w.writerows(rows)
    return EXIT_OK


def _transform_inverse(args, out) -> int:
    meta = {}
    with open(args.input, encoding="utf-8") as fh:
        for line in fh:
            if line.startswith("#") and "=" in line:
                k, v = line[1:].split("=", 1)
                meta[k.strip()] = v.strip()
    cells = cio._pivot(args.input, ("region_id", "time", "coord", "value"), (0, 1, 2), 3, nonneg=False)
    coords = sorted({k[2] for k in cells}, key=lambda c: (len(c), c))
    parts = args.parts.split(",") if args.parts else meta.get("parts", "").split(",")
    if parts == [""]:
        parts = [f"part{j + 1}" for j in range(len(coords) + 1)]
    if len(parts) != len(coords) + 1:
        raise ValidationError(f"{len(parts)} part labels for {len(coords)} coordinates")
    mode = args.basis or meta.get("basis", "balance")
    basis = build_basis(len(parts), mode)
    groups = sorted({(k[0], k[1]) for k in cells})
    missing = [f"missing (region_id={r!r}, time={t!r}, coord={c!r})"
               for r, t in groups for c in coords if (r, t, c) not in cells]
    cio._raise_listed(cio.MissingCell, f"{args.input}: incomplete coordinates", missing)
    z = np.array([[cells[(r, t, c)][0] for c in coords] for r, t in groups])
    x = ilr_inv(z, basis)
    with _open_out(out) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cio.PANEL_HEADER)
        for i, (r, t) in enumerate(groups):
            for d, part in enumerate(parts):
                w.writerow((r, t, part, cio.format_float(x[i, d])))
    return EXIT_OK


class _open_out:
    """Context manager writing to a file path or stdout."""

    def __init__(self, path):
        self.path = path

    def __enter__(self):
        if self.path is None:
            return sys.stdout
        self.fh = open(self.path, "w", newline="", encoding="utf-8")
        return self.fh

    def __exit__(self, *exc):
        if self.path is not None:
            self.fh.close()


def cmd_weights(args) -> int:
    if args.kind == "rook":
        if args.side is None:
            raise ValidationError("weights rook needs --side")
        w = rook_grid(args.side)
    elif args.kind == "adjacency":
        if args.input is None:
            raise ValidationError("weights adjacency needs --input")
        w = cio.load_adjacency(args.input)
    else:
        if args.input is None or args.radius is None:
            raise ValidationError("weights distance needs --input and --radius")
        _, xy = cio.load_coordinates(args.input)
        w = distance_cutoff(xy, args.radius)
    if args.standardize:
        w = row_standardize(w)
    edges = w.edges()
    with _open_out(args.output) as fh:
        out = csv.writer(fh, lineterminator="\n")
        if args.standardize:
            out.writerow(("i", "j", "weight"))
            out.writerows((i, j, cio.format_float(v)) for i, j, v in edges)
        else:
            out.writerow(("i", "j"))
            out.writerows((i, j) for i, j, _ in edges)
    if args.output is not None:
        info = {"n": w.n, "edges": len(edges), "sparsity": sparsity(w), "islands": list(w.islands)}
        _emit(args, info, f"n={w.n} edges={len(edges)} sparsity={info['sparsity']:.4f} "
                          f"islands={list(w.islands)}")
    return EXIT_OK


def _design_params(base: ModelParams, args) -> ModelParams:
    changes = {}
    for flag, attr in (("psi", "Psi"), ("pi", "Pi"), ("beta", "B"), ("sigma2", "sigma2")):
        v = getattr(args, flag, None)
        if v is not None:
            changes[attr] = v
    return base.replace(**changes) if changes else base


def cmd_simulate(args) -> int:
    if args.output is None:
        raise ValidationError("simulate needs --output DIRECTORY")
    prm = _design_params(DESIGNS[args.design], args)
    W = row_standardize(rook_grid(args.side))
    cfg = SimConfig(prm, W, args.T, burn_in=args.burn_in, seed=args.seed, intercept=True,
                    n_regressors=prm.q - 1, noise=args.noise.replace("-", "_"), df=args.df)
    panel = simulate(cfg)
    basis = build_basis(prm.p + 1, args.basis)
    Y = np.concatenate([panel.Y0[None], panel.Y])
    shares = ilr_inv(Y, basis)
    if not np.all(shares > 0):
        raise NumericalError("simulated compositions underflow to zero parts; "
                             "the process is explosive or too dispersed for the simplex")
    n = W.n
    width = len(str(n - 1))
    regions = tuple(f"u{i:0{width}d}" for i in range(n))
    times = tuple(str(t) for t in range(args.T + 1))
    parts = tuple(f"part{j + 1}" for j in range(prm.p + 1))
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    cio.save_panel(out / "panel.csv", shares, regions, times, parts)
    cio.save_regressors(out / "regressors.csv", panel.X, panel.regressor_names, regions, times[1:])
    cio.save_adjacency(out / "weights.csv", rook_grid(args.side), regions)
    truth = {"basis": args.basis, "side": args.side, "T": args.T, "seed": args.seed,
             "burn_in": args.burn_in, "beta": prm.B, "psi": prm.Psi, "pi": prm.Pi, "sigma2": prm.sigma2}
    (out / "truth.json").write_text(json.dumps(truth, indent=2, default=_json_default) + "\n",
                                    encoding="utf-8")
    _emit(args, {"output": str(out), "n": n, "T": args.T, "p": prm.p},
          f"wrote panel.csv, regressors.csv, weights.csv, truth.json to {out} (n={n}, T={args.T})")
    return EXIT_OK


def cmd_fit(args) -> int:
    loaded = cio.load_panel(args.panel, args.basis, args.zero_policy, args.delta, args.frequency)
    X, names = cio.load_regressors(args.regressors, loaded, intercept=args.intercept)
    panel = type(loaded.panel)(loaded.panel.Y, loaded.panel.Y0, X, names)
    n = panel.n
    if args.rook is not None:
        if args.rook**2 != n:
            raise ValidationError(f"--rook {args.rook} gives {args.rook ** 2} units, panel has {n}")
        w = rook_grid(args.rook)
    elif args.adjacency is not None:
        w = cio.load_adjacency(args.adjacency, loaded.regions)
    else:
        if args.radius is None:
            raise ValidationError("--coords needs --radius")
        w = cio.load_distance_weights(args.coords, args.radius, loaded.regions)
    if not args.no_standardize:
        w = row_standardize(w)
    opts = FitOptions(
        max_iterations=args.max_iter,
        optimizer=args.optimizer.replace("-", "_"),
        psi_zero=args.psi_zero,
        pi_zero=args.pi_zero,
        likelihood=args.likelihood,
        compute_se=not args.no_se,
    )
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        result = fit(panel, w, opts)
    for c in caught:
        print(f"warning: {c.message}", file=sys.stderr)
    if args.output is not None:
        cio.save_fit(result, args.output)
    payload = {
        "loglik": result.loglik,
        "likelihood": result.loglik_form,
        "converged": result.converged,
        "iterations": result.iterations,
        "messages": result.messages,
        "basis": loaded.basis.mode,
        "parts": list(loaded.parts),
        "zero_replaced": loaded.zero_replaced,
        "coefficients": [
            {"block": b, "coef": c, "estimate": _num(e), "std_error": _num(s), "t_stat": _num(t)}
            for b, c, e, s, t in result.table()
        ],
    }
    _emit(args, payload, fit_table(result))
    if not result.converged:
        print("error: optimizer did not converge; table written but flagged", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


def cmd_mc(args) -> int:
    if args.config:
        cfg = load_config(args.config)
    elif args.preset:
        cfg = McConfig.from_preset(args.preset)
    else:
        cfg = McConfig(preset="full")
    changes = {"seed": args.seed, "workers": args.threads}
    if args.config and args.preset:
        raise ValidationError("give either --config or --preset, not both")
    if args.design:
        changes["params"] = DESIGNS[args.design]
    prm = changes.get("params", cfg.params)
    if args.sigma2 is not None:
        changes["params"] = prm.replace(sigma2=args.sigma2)
    for flag, key in (("sides", "grid_sides"), ("horizons", "horizons"),
                      ("replications", "replications"), ("burn_in", "burn_in")):
        v = getattr(args, flag)
        if v is not None:
            changes[key] = v
    from dataclasses import replace

    cfg = replace(cfg, **changes)
    res = run_study(cfg)
    out = args.output or "mc_rmse.csv"
    manifest = cio.save_mc(res, out, {"design": args.design or ("config" if args.config else "reference")})
    table = summarize(res)
    avg = table[table.param == "average"]
    if args.json:
        payload = {"output": str(out), "manifest": str(manifest), "exclusion_rate": res.exclusion_rate(),
                   "group_averages": avg.drop(columns="param").to_dict(orient="records")}
        print(json.dumps(payload, indent=2, default=_json_default))
    else:
        wide = avg.pivot_table(index=["side", "T"], columns="param_group", values="rmse")
        print("Group-average RMSE")
        print(wide.to_string(float_format=lambda v: f"{v:.4f}"))
        print(f"exclusion rate {res.exclusion_rate():.1%}; wrote {out} and {manifest}")
    return EXIT_OK


COMMANDS = {"transform": cmd_transform, "weights": cmd_weights, "simulate": cmd_simulate,
            "fit": cmd_fit, "mc": cmd_mc}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except CompostarError as exc:
        code = EXIT_NUMERIC if isinstance(exc, NumericalError) else EXIT_VALIDATION
        print(f"error: {exc}", file=sys.stderr)
        for rec in getattr(exc, "records", ()):
            print(f"  {rec}", file=sys.stderr)
        return code
    except (ValueError, np.linalg.LinAlgError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC if isinstance(exc, np.linalg.LinAlgError) else EXIT_VALIDATION
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
