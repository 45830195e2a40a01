"""Command-line front end: ``pertgibbs <subcommand> [options]``.

Every subcommand writes one table, as RFC 4180 CSV (default) or JSON Lines
(one object per record). Floats are written with 12 significant digits, so
the same flags and ``--seed`` always give byte-identical files.

Exit codes: 0 on success, 2 for usage or validation errors, 3 when a
budget cap stops the run (the rows finished so far are still written).
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from contextlib import contextmanager
from pathlib import Path

import numpy as np

from . import coupling, measures, pseudo_marginal as pm, tree_ising, worked_examples as wx
from .errors import BudgetExceededError, PertGibbsError
from .factor_graph import ENUMERATION_CAP, FactorGraph, FactorizationStructure, gibbs_measure, validate_factorization
from .gibbs import gibbs_kernel
from .random_models import random_kernel, random_tree_pair

EXIT_OK, EXIT_USAGE, EXIT_BUDGET = 0, 2, 3

HEADERS = {
    "two-state": ("two_state", wx.TwoStateRecord.CSV_FIELDS),
    "birth-death": ("birth_death", wx.BirthDeathRecord.CSV_FIELDS),
    "product-bernoulli": ("product_bernoulli", wx.ProductBernoulliRecord.CSV_FIELDS),
    "tree-decay": ("decay", ("j", "exact_tv", "bound", "beta")),
    "tree-scaling": ("scaling", tree_ising.ScalingRecord.CSV_FIELDS),
    "subadditivity": ("subadditivity", ("pair", "lhs", "rhs", "gap")),
    "coupling": ("coupling", ("t", "survival")),
    "audit-kernel": ("audit", ("check", "value", "pass")),
}
DECAY_FIT_FIELDS = ("r", "distance", "fitted_m", "fitted_C1")


class UsageError(Exception):
    pass


# --------------------------------------------------------------------------
# formatting


def format_value(x):
    """Text form of one cell: 12 significant digits for floats."""
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        x = float(x)
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        if x == 0:
            return "0"
        return f"{x:.12g}"
    return str(x)


def _json_value(x):
    if isinstance(x, (bool, np.bool_)):
        return bool(x)
    if isinstance(x, (int, np.integer)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        if math.isnan(x) or math.isinf(x):
            return format_value(x)
        return float(format_value(x))
    if isinstance(x, (list, tuple)):
        return [_json_value(v) for v in x]
    return x


def render(rows, fields, fmt):
    """Serialize ``rows`` (dicts) as CSV with header ``fields`` or as JSON Lines."""
    buf = io.StringIO()
    if fmt == "csv":
        w = csv.writer(buf, lineterminator="\r\n")
        w.writerow(fields)
        for r in rows:
            w.writerow([format_value(r[k]) for k in fields])
    else:
        for r in rows:
            buf.write(json.dumps({k: _json_value(v) for k, v in r.items()}, sort_keys=True) + "\n")
    return buf.getvalue()


def render_svg(rows, fields, title):
    """Static line plot of every numeric column against the first one."""
    try:
        import matplotlib

        matplotlib.use("svg")
        import matplotlib.pyplot as plt
    except ImportError as exc:
        raise UsageError("--svg needs matplotlib (pip install pertgibbs[plot])") from exc
    matplotlib.rcParams["svg.hashsalt"] = "pertgibbs"
    x = [float(r[fields[0]]) for r in rows]
    fig, ax = plt.subplots(figsize=(6, 4))
    for k in fields[1:]:
        try:
            y = [float(r[k]) for r in rows]
        except (TypeError, ValueError):
            continue
        ax.plot(x, y, marker="o", label=k)
    ax.set_xlabel(fields[0])
    ax.set_title(title)
    ax.legend()
    buf = io.StringIO()
    fig.savefig(buf, format="svg", metadata={"Date": None})
    plt.close(fig)
    return buf.getvalue()


class Output:
    """Resolves ``--out`` (a file, a directory, or stdout) and writes tables."""

    def __init__(self, args, main_stem):
        self.args = args
        self.main_stem = main_stem
        self.written = []

    def path(self, stem):
        ext = "csv" if self.args.format == "csv" else "json"
        out = self.args.out
        if out is None:
            return None
        out = Path(out)
        if out.suffix:
            if stem == self.main_stem:
                return out
            return out.with_name(f"{stem}.{ext}")
        out.mkdir(parents=True, exist_ok=True)
        return out / f"{stem}.{ext}"

    def table(self, stem, rows, fields):
        text = render(rows, fields, self.args.format)
        path = self.path(stem)
        if path is None:
            sys.stdout.write(text)
        else:
            path.parent.mkdir(parents=True, exist_ok=True)
            with open(path, "w", newline="", encoding="utf-8") as fh:
                fh.write(text)
            self.written.append(path)
        if self.args.svg and rows:
            svg = render_svg(rows, fields, stem)
            target = path.with_suffix(".svg") if path is not None else Path(f"{stem}.svg")
            target.write_text(svg, encoding="utf-8")
            self.written.append(target)


# --------------------------------------------------------------------------
# subcommands


def _rng(args, *key):
    return np.random.default_rng(np.random.SeedSequence([args.seed, *key]))


def _cap(args, default):
    return default if args.budget is None else args.budget


@contextmanager
def _tables(out, *tables):
    """Write ``(stem, rows, fields)`` tables on success, and also when a budget cap stops the run."""
    try:
        yield
    except BudgetExceededError:
        for t in tables:
            out.table(*t)
        raise
    for t in tables:
        out.table(*t)


def _grid(fn, combos, out, stem, fields):
    rows = []
    with _tables(out, (stem, rows, fields)):
        for c in combos:
            rows.append(fn(*c).as_row())


def cmd_two_state(args, out):
    combos = [(p, C) for p in args.p for C in args.C]
    _grid(lambda p, C: wx.two_state_analysis(p, C, args.eps), combos, out, *HEADERS["two-state"])


def cmd_birth_death(args, out):
    cap = _cap(args, wx.BIRTH_DEATH_CAP)
    combos = [(n, p, c) for n in args.n for p in args.p for c in args.Cn]
    _grid(lambda n, p, c: wx.birth_death_analysis(n, p, c, args.eps, cap=cap), combos, out,
          *HEADERS["birth-death"])


def cmd_product_bernoulli(args, out):
    combos = [(n, p, pt) for n in args.n for p in args.p for pt in args.ptilde]
    _grid(wx.product_bernoulli_analysis, combos, out, *HEADERS["product-bernoulli"])


def cmd_tree_decay(args, out):
    stem, fields = HEADERS["tree-decay"]
    rows = []
    fit_rows = []
    tables = [(stem, rows, fields)] + ([("decay_fit", fit_rows, DECAY_FIT_FIELDS)] if args.radii else [])
    with _tables(out, *tables):
        for beta in args.beta:
            _, Z = tree_ising.generate(args.depth, beta, args.delta, args.counts, _rng(args, 0))
            path = tree_ising.root_to_leaf(args.depth, args.leaf)
            for j, tv, bound in tree_ising.path_decay_check(
                args.depth, beta, args.delta, Z, path, cap=_cap(args, ENUMERATION_CAP)
            ):
                rows.append({"j": j, "exact_tv": tv, "bound": bound, "beta": beta})
            if args.radii:
                g = tree_ising.posterior_graph(args.depth, beta, args.delta, Z)
                fs = tree_ising.tree_structure(args.depth)
                blocks = None if args.block is None else [args.block]
                est = coupling.worst_block_decay(
                    g, fs, args.radii, blocks, cap=_cap(args, ENUMERATION_CAP), rng=_rng(args, 1)
                )
                for r, d, _ in est.rows:
                    fit_rows.append({"r": r, "distance": d, "fitted_m": est.fitted_m, "fitted_C1": est.fitted_C1})


def cmd_tree_scaling(args, out):
    if args.rule == "fixed":
        rule = tree_ising.fixed_m(args.m)
    else:
        rule = tree_ising.perturbation_target(args.c)
    cap = _cap(args, tree_ising.SIGMA_ENUMERATION_CAP)
    records = tree_ising.scaling_study(
        args.depths, args.beta, args.delta, rule, args.replicas, args.steps, args.seed,
        counts=args.counts, threads=args.threads, max_steps=args.max_steps, cap=cap,
    )
    stem, fields = HEADERS["tree-scaling"]
    if args.format == "csv":
        out.table(stem, [r.as_row() for r in records], fields)
    else:
        out.table(stem, [r.to_json() for r in records], fields)
    if any(r.status == "budget" for r in records):
        raise BudgetExceededError("simulation step budget exhausted", args.max_steps)


def cmd_subadditivity(args, out):
    stem, fields = HEADERS["subadditivity"]
    cap = _cap(args, ENUMERATION_CAP)
    rows = []
    with _tables(out, (stem, rows, fields)):
        if args.mu or args.nu:
            if not (args.mu and args.nu):
                raise UsageError("--mu and --nu must be given together")
            g1 = FactorGraph.from_json(_load(args.mu))
            g2 = FactorGraph.from_json(_load(args.nu))
            if args.structure:
                obj = _load(args.structure)
                fs = FactorizationStructure(tuple((set(S), set(P)) for S, P in obj["blocks"]))
            else:
                fs = FactorizationStructure.from_tree([tuple(e) for e in g1.edges], g1.vertices[0])
            pairs = [(g1, g2, fs)]
        else:
            rng = _rng(args, 0)
            pairs = (random_tree_pair(args.vertices, args.q, rng, args.scale) for _ in range(args.pairs))
        for i, (g1, g2, fs) in enumerate(pairs):
            lhs, rhs = measures.subadditivity_gap(gibbs_measure(g1, cap), gibbs_measure(g2, cap), fs)
            rows.append({"pair": i, "lhs": lhs, "rhs": rhs, "gap": rhs - lhs})


def cmd_coupling(args, out):
    stem, fields = HEADERS["coupling"]
    if args.kernel:
        K = measures.kernel_from_json(_load(args.kernel))
    else:
        K = random_kernel(args.states, _rng(args, 0), args.concentration)
    for s in (args.x, args.y):
        if not 0 <= s < K.size:
            raise UsageError(f"start state {s} is outside 0..{K.size - 1}")
    surv = coupling.coupling_tail(K, args.x, args.y, args.t_max, args.replicas, _rng(args, 1))
    out.table(stem, [{"t": t, "survival": s} for t, s in enumerate(surv)], fields)


def cmd_audit_kernel(args, out):
    stem, fields = HEADERS["audit-kernel"]
    g = FactorGraph.from_json(_load(args.graph))
    rows = []

    def check(name, value, ok=True):
        rows.append({"check": name, "value": value, "pass": ok})

    with _tables(out, (stem, rows, fields)):
        if args.obs:
            Z = pm.ObservationSet.from_json(_load(args.obs), g.vertices, g.q)
            m = args.m if len(args.m) > 1 else args.m[0]
            nu_hat, nu = pm.exact_targets(g, Z, m, cap=_cap(args, pm.AUGMENTED_CAP))
            K = pm.alternating_kernel(g, Z, m, cap=_cap(args, pm.KERNEL_CAP))
            drift = float(np.abs(nu_hat.mass @ K.rows - nu_hat.mass).sum())
            check("stationarity_l1", drift, drift <= args.tol)
            post = gibbs_measure(pm.posterior_graph(g, Z), _cap(args, ENUMERATION_CAP))
            check("tv_to_posterior", measures.tv_distance(post, nu))
            if g.edges:
                fs = FactorizationStructure.from_tree([tuple(e) for e in g.edges], g.vertices[0])
                ok = bool(validate_factorization(nu, fs))
                check("factorizes", float(ok), ok)
            sup = pm.perturbation_sup(g, Z, m, measures.Metric.parse(args.metric), cap=_cap(args, pm.AUGMENTED_CAP))
            check("perturbation_sup", sup)
        else:
            mu = gibbs_measure(g, _cap(args, ENUMERATION_CAP))
            Q = gibbs_kernel(g, _cap(args, 2**12))
            K = measures.kernel_from_json(_load(args.kernel)) if args.kernel else Q
            if K.index != Q.index:
                if [tuple(x) if isinstance(x, (list, tuple)) else x for x in K.index.labels()] != Q.index.labels():
                    raise UsageError("kernel states must be the graph's configurations in row-major order")
                K = measures.StochasticKernel(K.rows, Q.index)
            rowsum = float(np.abs(K.rows.sum(axis=1) - 1).max())
            check("row_sums", rowsum, rowsum <= args.tol)
            drift = float(np.abs(mu.mass @ K.rows - mu.mass).sum())
            check("stationarity_l1", drift, drift <= args.tol)
            flow = mu.mass[:, None] * K.rows
            db = float(np.abs(flow - flow.T).max())
            check("detailed_balance", db, db <= args.tol)
            dist = measures.kernel_distance(Q, K, measures.Metric.parse(args.metric))
            check("distance_to_gibbs", dist)
            check("mixing_time", measures.mixing_time(K, pi=mu))


def _load(path):
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read {path}: {exc}") from exc


# --------------------------------------------------------------------------
# argument parsing


def _positive_int(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be a positive integer")
    return v


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="master seed (default 0)")
    common.add_argument("--out", help="output file or directory (default: stdout)")
    common.add_argument("--format", choices=("csv", "json"), default="csv")
    common.add_argument("--threads", type=_positive_int, default=None,
                        help="worker threads (default: all cores); never changes results")
    common.add_argument("--budget", type=_positive_int, default=None, help="state-space cap override")
    common.add_argument("--svg", action="store_true", help="also write a line plot next to each table")

    parser = argparse.ArgumentParser(prog="pertgibbs", description=__doc__.splitlines()[0], parents=[common])
    sub = parser.add_subparsers(dest="command", metavar="subcommand")
    sub.required = True

    p = sub.add_parser("two-state", parents=[common], help="two-state sharpness example")
    p.add_argument("--p", type=float, nargs="+", default=[0.1])
    p.add_argument("--C", type=float, nargs="+", default=[2.0])
    p.add_argument("--eps", type=float, default=0.25)
    p.set_defaults(func=cmd_two_state)

    p = sub.add_parser("birth-death", parents=[common], help="drifting walk with teleport")
    p.add_argument("--n", type=_positive_int, nargs="+", default=[400])
    p.add_argument("--p", type=float, nargs="+", default=[0.25])
    p.add_argument("--Cn", type=float, nargs="+", default=[20.0])
    p.add_argument("--eps", type=float, default=0.25)
    p.set_defaults(func=cmd_birth_death)

    p = sub.add_parser("product-bernoulli", parents=[common], help="product Bernoulli example")
    p.add_argument("--n", type=_positive_int, nargs="+", default=[10])
    p.add_argument("--p", type=float, nargs="+", default=[0.4])
    p.add_argument("--ptilde", type=float, nargs="+", default=[0.41])
    p.set_defaults(func=cmd_product_bernoulli)

    p = sub.add_parser("tree-decay", parents=[common], help="root-clamp influence along a tree path")
    p.add_argument("--depth", type=int, default=4)
    p.add_argument("--beta", type=float, nargs="+", default=[0.1])
    p.add_argument("--delta", type=float, default=0.2)
    p.add_argument("--counts", type=int, default=5)
    p.add_argument("--leaf", type=int, default=None)
    p.add_argument("--radii", type=_positive_int, nargs="*", default=[],
                   help="also fit ball-radius decay for --block (writes decay_fit)")
    p.add_argument("--block", type=int, default=None, help="block index (default: the slowest block)")
    p.set_defaults(func=cmd_tree_decay)

    p = sub.add_parser("tree-scaling", parents=[common], help="Hellinger error across tree sizes")
    p.add_argument("--depths", type=int, nargs="+", default=[2, 3, 4, 5, 6])
    p.add_argument("--beta", type=float, default=0.1)
    p.add_argument("--delta", type=float, default=0.4)
    p.add_argument("--counts", type=_positive_int, default=8)
    p.add_argument("--rule", choices=("target", "fixed"), default="target")
    p.add_argument("--c", type=float, default=5.0, help="target constant for --rule target")
    p.add_argument("--m", type=_positive_int, default=2, help="subsample size for --rule fixed")
    p.add_argument("--replicas", type=_positive_int, default=32)
    p.add_argument("--steps", type=_positive_int, default=10**6)
    p.add_argument("--max-steps", type=_positive_int, default=None, help="total simulation step budget")
    p.set_defaults(func=cmd_tree_scaling)

    p = sub.add_parser("subadditivity", parents=[common], help="Hellinger subadditivity check")
    p.add_argument("--pairs", type=_positive_int, default=200)
    p.add_argument("--vertices", type=_positive_int, default=6)
    p.add_argument("--q", type=int, default=2)
    p.add_argument("--scale", type=float, default=1.0)
    p.add_argument("--mu", help="factor-graph JSON for the first measure")
    p.add_argument("--nu", help="factor-graph JSON for the second measure")
    p.add_argument("--structure", help='JSON {"blocks": [[S, Pi], ...]} (default: tree of --mu)')
    p.set_defaults(func=cmd_subadditivity)

    p = sub.add_parser("coupling", parents=[common], help="greedy coupling survival curve")
    p.add_argument("--kernel", help="kernel JSON (default: seeded random kernel)")
    p.add_argument("--states", type=_positive_int, default=8)
    p.add_argument("--concentration", type=float, default=1.0)
    p.add_argument("--x", type=int, default=0)
    p.add_argument("--y", type=int, default=1)
    p.add_argument("--t-max", type=_positive_int, default=20)
    p.add_argument("--replicas", type=_positive_int, default=10**4)
    p.set_defaults(func=cmd_coupling)

    p = sub.add_parser("audit-kernel", parents=[common], help="exact checks on a Gibbs or alternating kernel")
    p.add_argument("--graph", required=True, help="factor-graph JSON")
    p.add_argument("--kernel", help="kernel JSON to audit against the graph (default: its Gibbs kernel)")
    p.add_argument("--obs", help="observation-set JSON; audits the alternating sampler instead")
    p.add_argument("--m", type=_positive_int, nargs="+", default=[1], help="subsample size, or one size per vertex")
    p.add_argument("--metric", default="tv", help="tv, hellinger or l2")
    p.add_argument("--tol", type=float, default=1e-10)
    p.set_defaults(func=cmd_audit_kernel)
    return parser


def run_experiment(argv):
    """Run one subcommand; returns the process exit code."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    out = Output(args, HEADERS[args.command][0])
    try:
        args.func(args, out)
    except BudgetExceededError as exc:
        print(f"pertgibbs: budget exhausted: {exc}", file=sys.stderr)
        return EXIT_BUDGET
    except (UsageError, PertGibbsError, ValueError) as exc:
        print(f"pertgibbs: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    return EXIT_OK


def main():
    sys.exit(run_experiment(sys.argv[1:]))


if __name__ == "__main__":
    main()
