"""Command-line interface: ``robfunc {fit,predict,select,simulate,benchmark}``.

Options may also come from a flat ``key = value`` file passed with
``--config``; keys are the long flag names (dashes or underscores) and
flags given on the command line win over the file. The worker count is
``--threads``, then ``ROBFUNC_THREADS``, then 1.

Exit codes: 0 on success, 2 for unusable input (bad flags, missing or
malformed files), 3 when estimation fails.
"""

from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
import warnings
from pathlib import Path

import numpy as np

from .diagnostics import fgg_detect, mspe
from .errors import CSVFormatError, RobFuncError
from .fd import read_csv, write_csv
from .model import TermSet, fit_prepared, load_model, predict, prepare, save_model
from .selection import _default_alpha, _record, forward_select, rbic_search, write_rbic_table
from .simlab import VARIANTS, DGPConfig, FitOptions, generate, run_experiment

log = logging.getLogger("robfunc")

EXIT_INPUT = 2
EXIT_ESTIMATION = 3


class InputError(Exception):
    """Problem with the command line, a config file or an input file."""


# -- config handling -------------------------------------------------------

def read_config(path) -> dict:
    """Parse a ``key = value`` file; ``#`` starts a comment."""
    path = Path(path)
    if not path.is_file():
        raise InputError(f"config file not found: {path}")
    out = {}
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep or not key.strip():
            raise InputError(f"{path}:{lineno}: expected key = value")
        out[key.strip().replace("-", "_")] = value.strip()
    return out


def _threads(value) -> int:
    if value is None:
        value = os.environ.get("ROBFUNC_THREADS", "1")
    try:
        n = int(value)
    except ValueError:
        raise InputError(f"thread count must be an integer, got {value!r}") from None
    if n < 1:
        raise InputError("thread count must be at least 1")
    return n


def _k_value(text):
    if text is None or str(text).lower() == "auto":
        return "auto"
    try:
        k = int(text)
    except ValueError:
        raise InputError(f"truncation must be a positive integer or 'auto', got {text!r}") from None
    if k < 1:
        raise InputError("truncation must be a positive integer")
    return k


def _alpha(text):
    if text is None:
        return None
    a = float(text)
    if not 0 < a <= 1:
        raise InputError("alpha must lie in (0, 1]")
    return a


def _float_list(text):
    return [float(x) for x in str(text).split(",") if x.strip()]


def _int_list(text):
    return [int(x) for x in str(text).split(",") if x.strip()]


# -- input files -----------------------------------------------------------

def _existing(path, what):
    if path is None:
        raise InputError(f"--{what} is required")
    p = Path(path)
    if not p.is_file():
        raise InputError(f"{what} file not found: {p}")
    return p


def _load_predictors(text):
    if not text:
        raise InputError("--predictors is required")
    return [read_csv(_existing(p.strip(), "predictors")) for p in str(text).split(",") if p.strip()]


def _load_inputs(args):
    Y = read_csv(_existing(args.response, "response"))
    X = _load_predictors(args.predictors)
    bad = [x.label for x in X if x.n != Y.n]
    if bad:
        raise InputError(f"row count differs from the response ({Y.n}) in: {', '.join(bad)}")
    return Y, X


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


# -- shared pipeline --------------------------------------------------------

def _terms_arg(text, P):
    text = (text or "select").strip().lower()
    if text == "select":
        return None
    if text == "main":
        return TermSet.main_only(P)
    if text == "full":
        return TermSet.full(P)
    try:
        ts = TermSet.parse(text)
        ts.validate(P)
    except (ValueError, RobFuncError) as exc:
        raise InputError(str(exc)) from None
    return ts


def _truncation(args, Y, X, prep, terms):
    ky, kx = _k_value(args.ky), _k_value(args.kx)
    if (ky == "auto") != (kx == "auto"):
        raise InputError("--ky and --kx must both be integers or both be 'auto'")
    if ky == "auto":
        best, table = rbic_search(Y, X, terms, alpha=args.alpha, method=args.method,
                                  seed=args.seed, prepared=prep)
        return best.K_Y, best.K_X, best, table
    if ky > prep.K_Y_max or kx > prep.K_X_max:
        raise InputError(f"requested ({ky}, {kx}) exceeds the admissible ({prep.K_Y_max}, {prep.K_X_max})")
    alpha = _default_alpha(args.method) if args.alpha is None else args.alpha
    rec, _ = _record(prep, Y, ky, kx, terms, alpha, ky * kx + 1, args.seed, None)
    return ky, kx, rec, [rec]


def _write_terms(path, terms, trace):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["stage", "term", "rbic", "accepted"])
        for s in trace:
            term = s.term if isinstance(s.term, int) else f"{s.term[0]}:{s.term[1]}"
            w.writerow([s.stage, term, f"{s.rbic:.10g}", int(s.accepted)])
        w.writerow(["final", str(terms), "", 1])
    return path


def _select(args, Y, X):
    P = len(X)
    explicit = _terms_arg(args.terms, P)
    kmax = (None, None)
    ky, kx = _k_value(args.ky), _k_value(args.kx)
    if ky != "auto" and kx != "auto":
        kmax = (ky, kx)
    prep = prepare(Y, X, args.method, *kmax, seed=args.seed)
    base = explicit if explicit is not None else TermSet.main_only(P)
    ky, kx, rec, table = _truncation(args, Y, X, prep, base)
    trace = []
    if explicit is None:
        terms = forward_select(Y, X, ky, kx, args.alpha, args.method, args.seed,
                               prepared=prep, trace=trace)
        if terms.is_empty():
            terms = TermSet.main_only(P)
    else:
        terms = explicit
    return prep, ky, kx, rec, table, terms, trace


# -- commands ---------------------------------------------------------------

def cmd_fit(args):
    Y, X = _load_inputs(args)
    out = _out_dir(args)
    prep, ky, kx, rec, table, terms, trace = _select(args, Y, X)
    f = fit_prepared(prep, ky, kx, terms, seed=args.seed)
    save_model(f, out / "model.json")
    write_rbic_table(table, out / "rbic.csv", rec)
    _write_terms(out / "terms.csv", terms, trace)
    res = Y.with_values(Y.values - f.fitted)
    rep = fgg_detect(res, n_boot=args.n_boot, seed=args.seed)
    rep.to_csv(out / "depth.csv")
    print(f"K_Y={ky} K_X={kx} terms={terms} in-sample MSPE={mspe(Y.values, f.fitted):.6g} "
          f"flagged={int(rep.flagged.sum())}")
    return 0


def cmd_select(args):
    Y, X = _load_inputs(args)
    out = _out_dir(args)
    _, ky, kx, rec, table, terms, trace = _select(args, Y, X)
    write_rbic_table(table, out / "rbic.csv", rec)
    _write_terms(out / "terms.csv", terms, trace)
    print(f"K_Y={ky} K_X={kx} terms={terms}")
    return 0


def cmd_predict(args):
    model_path = _existing(args.model, "model")
    try:
        f = load_model(model_path)
    except (ValueError, KeyError) as exc:
        raise InputError(f"{model_path}: {exc}") from None
    X = _load_predictors(args.predictors)
    if len({x.n for x in X}) > 1:
        raise InputError("predictor files have different row counts")
    out = _out_dir(args)
    pred = predict(f, X)
    write_csv(pred, out / "prediction.csv")
    if args.response:
        Y = read_csv(_existing(args.response, "response"))
        if Y.n != pred.n:
            raise InputError("response and predictors have different row counts")
        print(f"MSPE={mspe(Y.values, pred.values):.6g}")
    return 0


def _dgp(args, n=None, cl=None, sigma=None):
    return DGPConfig(n=int(n if n is not None else args.n), n_test=int(args.n_test), P=int(args.P),
                     noise_sigma=float(sigma if sigma is not None else args.sigma),
                     contamination=float(cl if cl is not None else args.cl),
                     seed=int(args.seed), J=int(args.J),
                     disjoint_contamination=bool(args.disjoint))


def cmd_simulate(args):
    try:
        cfg = _dgp(args, n=_int_list(args.n)[0], cl=_float_list(args.cl)[0],
                   sigma=_float_list(args.sigma)[0])
    except ValueError as exc:
        raise InputError(str(exc)) from None
    out = _out_dir(args)
    data = generate(cfg, int(args.rep))
    write_csv(data.train_Y, out / "Y.csv")
    for p, x in enumerate(data.train_X, start=1):
        write_csv(x, out / f"X{p}.csv")
    write_csv(data.test_Y, out / "Y_test.csv")
    for p, x in enumerate(data.test_X, start=1):
        write_csv(x, out / f"X{p}_test.csv")
    np.savetxt(out / "labels.csv", data.truth.labels.astype(int), fmt="%d", header="outlier",
               comments="")
    print(f"wrote n={cfg.n} training and n={cfg.n_test} test curves to {out}")
    return 0


def cmd_benchmark(args):
    try:
        cfgs = [_dgp(args, n, cl, sg) for n in _int_list(args.n)
                for sg in _float_list(args.sigma) for cl in _float_list(args.cl)]
    except ValueError as exc:
        raise InputError(str(exc)) from None
    methods = tuple(m.strip() for m in args.methods.split(",") if m.strip())
    variants = tuple(v.strip() for v in args.variants.split(",") if v.strip())
    if not set(methods) <= {"robust", "classical"}:
        raise InputError(f"unknown method in {args.methods!r}")
    if not set(variants) <= set(VARIANTS):
        raise InputError(f"variants must be drawn from {', '.join(VARIANTS)}")
    ky, kx = _k_value(args.ky), _k_value(args.kx)
    if (ky == "auto") != (kx == "auto"):
        raise InputError("--ky and --kx must both be integers or both be 'auto'")
    opts = FitOptions(truncation="rbic" if ky == "auto" else (ky, kx), alpha=args.alpha,
                      n_boot=args.n_boot)
    out = _out_dir(args)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        rep = run_experiment(cfgs, int(args.reps), methods, variants, opts,
                             n_jobs=_threads(args.threads))
    rep.write_csv(out / "summary.csv")
    rep.write_rows_csv(out / "replications.csv")
    (out / "table.txt").write_text(rep.to_text())
    sys.stdout.write(rep.to_text())
    return 0


# -- parser -----------------------------------------------------------------

def _common(p, data=True):
    p.add_argument("--config", help="key = value file with default option values")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", default=None, help="worker count (default: ROBFUNC_THREADS or 1)")
    p.add_argument("--out", default=".", help="output directory")
    if data:
        p.add_argument("--method", choices=("robust", "classical"), default="robust")
        p.add_argument("--ky", default="auto", help="response truncation or 'auto'")
        p.add_argument("--kx", default="auto", help="predictor truncation or 'auto'")
        p.add_argument("--alpha", type=_alpha, default=None,
                       help="trimming proportion of the RBIC likelihood")


def _sim_flags(p):
    p.add_argument("--n", default="100", help="training sample size (comma list for benchmark)")
    p.add_argument("--n-test", dest="n_test", type=int, default=100)
    p.add_argument("--P", type=int, default=6, help="number of functional predictors")
    p.add_argument("--J", type=int, default=101, help="grid size")
    p.add_argument("--sigma", default="0.5", help="noise standard deviation (comma list)")
    p.add_argument("--cl", default="0", help="contamination level (comma list)")
    p.add_argument("--disjoint", action="store_true",
                   help="contaminate predictors and response on different subjects")


def build_parser():
    ap = argparse.ArgumentParser(prog="robfunc", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)
    ap.commands = {}

    for name, helptext in (("fit", "fit a model and write archive, RBIC table, terms and depth report"),
                           ("select", "choose truncation and terms without writing a model")):
        p = ap.commands[name] = sub.add_parser(name, help=helptext)
        _common(p)
        p.add_argument("--response", help="response CSV (header row = grid)")
        p.add_argument("--predictors", help="comma-separated predictor CSVs")
        p.add_argument("--terms", default="select",
                       help="'select', 'main', 'full' or an explicit set such as '1,2;1:1,1:2'")
        if name == "fit":
            p.add_argument("--n-boot", dest="n_boot", type=int, default=200)

    p = ap.commands["predict"] = sub.add_parser("predict", help="predict responses from a saved model")
    _common(p, data=False)
    p.add_argument("--model", help="model archive written by fit")
    p.add_argument("--predictors", help="comma-separated predictor CSVs")
    p.add_argument("--response", help="optional observed responses for an MSPE report")

    p = ap.commands["simulate"] = sub.add_parser("simulate", help="write one simulated data set as CSV files")
    _common(p, data=False)
    _sim_flags(p)
    p.add_argument("--rep", type=int, default=0, help="replication index")

    p = ap.commands["benchmark"] = sub.add_parser("benchmark", help="run the Monte-Carlo experiment grid")
    _common(p)
    _sim_flags(p)
    p.add_argument("--reps", type=int, default=10)
    p.add_argument("--methods", default="robust,classical")
    p.add_argument("--variants", default="True")
    p.add_argument("--n-boot", dest="n_boot", type=int, default=200)
    return ap


def parse_args(argv=None):
    ap = build_parser()
    args = ap.parse_args(argv)
    if getattr(args, "config", None):
        cfg = read_config(args.config)
        sub = ap.commands[args.command]
        known = {a.dest for a in sub._actions}
        unknown = sorted(set(cfg) - known)
        if unknown:
            raise InputError(f"{args.config}: unknown keys {', '.join(unknown)}")
        for a in sub._actions:
            if a.dest in cfg and a.type is not None:
                try:
                    cfg[a.dest] = a.type(cfg[a.dest])
                except (ValueError, InputError) as exc:
                    raise InputError(f"{args.config}: {a.dest}: {exc}") from None
            elif a.dest in cfg and isinstance(a, argparse._StoreTrueAction):
                cfg[a.dest] = cfg[a.dest].lower() in ("1", "true", "yes", "on")
        sub.set_defaults(**cfg)
        args = ap.parse_args(argv)
    return args


COMMANDS = {"fit": cmd_fit, "select": cmd_select, "predict": cmd_predict,
            "simulate": cmd_simulate, "benchmark": cmd_benchmark}


def main(argv=None) -> int:
    try:
        args = parse_args(argv)
    except InputError as exc:
        print(f"robfunc: error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (InputError, CSVFormatError) as exc:
        print(f"robfunc: error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except RobFuncError as exc:
        print(f"robfunc: estimation failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ESTIMATION


if __name__ == "__main__":
    sys.exit(main())
