"""
Command-line experiment harness.

Subcommands::

    generate   write a synthetic translated-histogram dataset as CSV
    learn      run a solver and write a run directory
    eval       ASW and Dunn index of a distance matrix against labels
    heatmap    render a distance matrix as a grayscale SVG
    report     summarize a run directory

Configuration is flat ``key = value`` text with section prefixes
(``data.``, ``method.``, ``reference.``, ``solver.``, ``output.``). Values
given with ``--set key=value`` override the file. A run can be repeated
exactly with ``learn --from-report RUN/report.json``.

The graph-Laplacian method stores its Perron matrix densely, with
``m (m - 1) / 2`` unknowns; keep ``m`` below about 200.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .core import FEATURES, SAMPLES, Dataset, scaled_identity_reference, scaled_l1_reference
from .data import SyntheticSpec, format_float, generate_synthetic, load_csv, read_matrix_csv, synthetic_matrix, write_matrix_csv
from .errors import ConfigError, MetricLearnError, ParseError
from .evaluation import asw, dunn_index, euclidean_baseline
from .laplacian import solve_laplacian
from .mahalanobis import KernelGroundMap, RadialKernel
from .ot import OtGroundMap, SinkhornParams
from .solvers import EarlyStop, SolverConfig, Verdict, solve

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2
EXIT_MAX_ITERS = 3
EXIT_DIVERGED = 4

THREADS_ENV = "METRIC_EIGENLEARN_THREADS"

METHODS = ("sinkhorn", "exact-ot", "mahalanobis", "graph-laplacian")

# every recognised key with its default; the type of the default drives parsing
DEFAULTS = {
    "data.source": "synthetic",
    "data.shape": "h1",
    "data.n": 40,
    "data.m": 32,
    "data.peak_width": 400.0,
    "data.path": "",
    "data.exp_transform": False,
    "data.samples_as_rows": True,
    "data.labels": "",
    "method.name": "sinkhorn",
    "method.epsilon": 5e-2,
    "method.kernel": "gaussian",
    "method.kernel_param": 1.0,
    "method.normalized": False,
    "method.split": 0.5,
    "reference.family": "auto",
    "reference.tau": 1e-2,
    "solver.algorithm": "normalized",
    "solver.alpha": 0.9,
    "solver.gamma_f": 0.75,
    "solver.gamma_g": 0.75,
    "solver.tol_residual": 1e-8,
    "solver.max_iters": 15,
    "solver.seed": 0,
    "solver.batch_fraction": 1.0,
    "solver.symmetric_updates": True,
    "solver.order": "gauss-seidel",
    "solver.early_stop_patience": 0,
    "output.dir": "run",
    "output.distances": True,
}


# ---------------------------------------------------------------------------
# config


def _coerce(key, raw):
    default = DEFAULTS[key]
    if not isinstance(raw, str):
        raw = str(raw).lower() if isinstance(raw, bool) else str(raw)
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            v = float(raw)
            if not math.isfinite(v):
                raise ValueError(raw)
            return v
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {type(default).__name__}") from None
    return raw


def parse_config_text(text: str) -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in DEFAULTS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        out[key] = _coerce(key, value)
    return out


def resolve_config(overrides: dict) -> dict:
    """Defaults updated by ``overrides``, validated.

    The graph-Laplacian method resolves ``solver.algorithm`` to ``eigen``.
    """
    cfg = dict(DEFAULTS)
    for k, v in overrides.items():
        if k not in DEFAULTS:
            raise ConfigError(f"unknown key {k!r}")
        cfg[k] = v if k == "solver.algorithm" and v == "eigen" else _coerce(k, v)
    if cfg["method.name"] == "graph-laplacian" and "solver.algorithm" not in overrides:
        cfg["solver.algorithm"] = "eigen"
    _check_config(cfg)
    return cfg


def _check_config(cfg):
    if cfg["method.name"] not in METHODS:
        raise ConfigError(f"method.name must be one of {METHODS}")
    if cfg["data.source"] not in ("synthetic", "csv"):
        raise ConfigError("data.source must be 'synthetic' or 'csv'")
    if cfg["data.source"] == "csv" and not cfg["data.path"]:
        raise ConfigError("data.path is required for data.source = csv")
    if cfg["reference.family"] not in ("auto", "l1", "identity", "none"):
        raise ConfigError("reference.family must be auto, l1, identity or none")
    laplacian = cfg["method.name"] == "graph-laplacian"
    if laplacian != (cfg["solver.algorithm"] == "eigen"):
        # the Laplacian maps are linear and are solved through the Perron vector
        raise ConfigError("graph-laplacian pairs only with solver.algorithm = eigen, and vice versa")
    if cfg["solver.early_stop_patience"] > 0 and not cfg["data.labels"]:
        raise ConfigError("early stopping needs data.labels")
    if laplacian:
        if not 0.0 < cfg["method.split"] < 1.0:
            raise ConfigError("method.split must lie in (0, 1)")
        return
    try:
        _solver_config(cfg)
    except ValueError as e:
        raise ConfigError(str(e)) from None


def _parse_set(items):
    out = {}
    for item in items or ():
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        out[k.strip()] = v.strip()
    return out


# ---------------------------------------------------------------------------
# building blocks


def load_dataset(cfg) -> Dataset:
    if cfg["data.source"] == "synthetic":
        spec = SyntheticSpec(cfg["data.n"], cfg["data.m"], cfg["data.shape"], cfg["data.peak_width"])
        return generate_synthetic(spec)
    return load_csv(cfg["data.path"], exp_transform=cfg["data.exp_transform"],
                    transpose=cfg["data.samples_as_rows"])


def load_labels(path):
    try:
        with open(path, encoding="utf-8") as fh:
            labels = [ln.strip() for ln in fh if ln.strip()]
    except OSError as e:
        raise ConfigError(f"cannot read labels: {e}") from None
    return np.array(labels)


def _references(cfg, data):
    fam = cfg["reference.family"]
    if fam == "auto":
        fam = "identity" if cfg["method.name"] == "mahalanobis" else "l1"
    tau = cfg["reference.tau"]
    if fam == "none":
        return None, None
    if fam == "identity":
        # the map onto the sample side works on n x n matrices
        return scaled_identity_reference(data.n, tau), scaled_identity_reference(data.m, tau)
    return scaled_l1_reference(data, SAMPLES, tau), scaled_l1_reference(data, FEATURES, tau)


def build_maps(cfg, data, jobs=1):
    """``(F, G)`` for the configured method."""
    name = cfg["method.name"]
    RF, RG = _references(cfg, data)
    if name in ("sinkhorn", "exact-ot"):
        variant = "sinkhorn" if name == "sinkhorn" else "exact"
        p = SinkhornParams(epsilon=cfg["method.epsilon"])
        return (OtGroundMap(SAMPLES, variant, p, RF, jobs=jobs),
                OtGroundMap(FEATURES, variant, p, RG, jobs=jobs))
    if name == "mahalanobis":
        kernel = RadialKernel(cfg["method.kernel"], cfg["method.kernel_param"])
        clamp = cfg["solver.algorithm"] == "rfi"
        nz = cfg["method.normalized"]
        return (KernelGroundMap(kernel, SAMPLES, RF, nz, clamp_negative=clamp),
                KernelGroundMap(kernel, FEATURES, RG, nz, clamp_negative=clamp))
    raise ConfigError(f"{name} has no iterative maps")


def _solver_config(cfg, labels=None, distance=None):
    es = None
    if cfg["solver.early_stop_patience"] > 0 and labels is not None:
        es = EarlyStop(tuple(labels), cfg["solver.early_stop_patience"], distance)
    return SolverConfig(
        algorithm=cfg["solver.algorithm"],
        alpha=cfg["solver.alpha"],
        gamma_f=cfg["solver.gamma_f"],
        gamma_g=cfg["solver.gamma_g"],
        tol_residual=cfg["solver.tol_residual"],
        max_iters=cfg["solver.max_iters"],
        seed=cfg["solver.seed"],
        batch_fraction=cfg["solver.batch_fraction"],
        early_stop=es,
        symmetric_updates=cfg["solver.symmetric_updates"],
        order=cfg["solver.order"],
    )


def sample_distances(cfg, data, A, B):
    """Learned distances between samples.

    For the transport methods this is ``B`` itself; for the Mahalanobis and
    Laplacian methods it is ``M_A`` over the sample vectors.
    """
    if cfg["method.name"] in ("sinkhorn", "exact-ot"):
        return np.asarray(B, dtype=float)
    Z = data.vectors(SAMPLES, normalized=cfg["method.normalized"])
    return np.sqrt(_clamped_forms(np.asarray(A, dtype=float), Z))


def _clamped_forms(A, Z):
    # entrywise updates can leave A slightly outside the PSD cone
    iu, ju = np.triu_indices(Z.shape[0], 1)
    diff = Z[iu] - Z[ju]
    q = np.maximum(np.einsum("pd,pd->p", diff @ A, diff), 0.0)
    Q = np.zeros((Z.shape[0], Z.shape[0]))
    Q[iu, ju] = q
    Q[ju, iu] = q
    return Q


def _jobs(arg):
    env = os.environ.get(THREADS_ENV)
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ConfigError(f"{THREADS_ENV} must be an integer, got {env!r}") from None
    return max(1, int(arg or 1))


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (np.bool_, bool)):
        return bool(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return x if math.isfinite(x) else str(x)
    if hasattr(x, "value") and not isinstance(x, (int, str)):
        return x.value
    return x


def _write_json(path, obj):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(_jsonable(obj), fh, indent=2, sort_keys=True)
        fh.write("\n")


# ---------------------------------------------------------------------------
# learn


TRACE_COLUMNS = ("iter", "residual_A", "residual_B", "hilbert_A", "gamma_f", "gamma_g", "asw")


def write_trace(path, trace):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(",".join(TRACE_COLUMNS) + "\n")
        for r in trace:
            row = [str(r.iteration), format_float(r.residual_A), format_float(r.residual_B),
                   format_float(r.hilbert_A), format_float(r.gamma_f), format_float(r.gamma_g),
                   "" if r.asw is None else format_float(r.asw)]
            fh.write(",".join(row) + "\n")


def run_learn(cfg, jobs=1, out=sys.stdout) -> int:
    data = load_dataset(cfg)
    labels = load_labels(cfg["data.labels"]) if cfg["data.labels"] else None
    if labels is not None and labels.size != data.n:
        raise ConfigError(f"{labels.size} labels for {data.n} samples")
    run_dir = Path(cfg["output.dir"])
    run_dir.mkdir(parents=True, exist_ok=True)
    report = {"version": __version__, "seed": cfg["solver.seed"], "config": cfg,
              "data": {"m": data.m, "n": data.n,
                       "dropped_rows": list(data.dropped_rows), "dropped_cols": list(data.dropped_cols)}}

    if cfg["method.name"] == "graph-laplacian":
        res = solve_laplacian(data, normalized=cfg["method.normalized"], split=cfg["method.split"],
                              seed=cfg["solver.seed"])
        A, B = res.A, res.B
        with open(run_dir / "trace.csv", "w", encoding="utf-8", newline="") as fh:
            fh.write("iter,residual\n")
            for i, r in enumerate(res.power.history, 1):
                fh.write(f"{i},{format_float(r)}\n")
        report["result"] = {
            "verdict": Verdict.CONVERGED.value,
            "eigenvalue": res.eigenvalue,
            "lambda_f": res.lambda_f,
            "lambda_g": res.lambda_g,
            "perron_residual": res.power.residual,
            "power_iterations": res.power.iterations,
            "eigen_residual": res.eigen_residual,
            "strict_positivity": res.system.strict_positivity,
            "cross_check_error": res.system.cross_check_error,
            "metric_matrix_check": {"ok": res.metric.ok, "hypothesis_ok": res.metric.hypothesis_ok,
                                    "witness": res.metric.witness},
        }
        code = EXIT_OK
    else:
        F, G = build_maps(cfg, data, jobs)
        distance = (lambda A_, B_: sample_distances(cfg, data, A_, B_))
        scfg = _solver_config(cfg, labels, distance)
        rr = solve(F, G, data, scfg)
        A, B = rr.A, rr.B
        if rr.best is not None and rr.verdict is Verdict.EARLY_STOPPED:
            A, B = rr.best["A"], rr.best["B"]
        write_trace(run_dir / "trace.csv", rr.trace)
        summary = rr.summary()
        summary["config"].pop("early_stop", None)
        report["result"] = summary
        code = {Verdict.CONVERGED: EXIT_OK, Verdict.EARLY_STOPPED: EXIT_OK,
                Verdict.MAX_ITERS: EXIT_MAX_ITERS, Verdict.DIVERGED: EXIT_DIVERGED}[rr.verdict]

    write_matrix_csv(run_dir / "A.csv", A)
    write_matrix_csv(run_dir / "B.csv", B)
    if cfg["output.distances"]:
        D = sample_distances(cfg, data, A, B)
        write_matrix_csv(run_dir / "distances.csv", D)
        if labels is not None:
            report["metrics"] = _metrics(D, labels)
    _write_json(run_dir / "report.json", report)
    res = report["result"]
    print(f"{cfg['method.name']}: {res['verdict']} -> {run_dir}", file=out)
    return code


def _metrics(D, labels):
    return {"asw": asw(D, labels), "dunn": dunn_index(D, labels), "n": int(len(labels)),
            "classes": int(np.unique(labels).size)}


# ---------------------------------------------------------------------------
# heatmap


def heatmap_svg(D, cell: int = 10) -> str:
    """Standalone SVG 1.1: one rect per entry, gray level linear from 0 (white) to max (black)."""
    D = np.atleast_2d(np.asarray(D, dtype=float))
    rows, cols = D.shape
    top = float(np.max(D)) if D.size else 0.0
    lines = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{cols * cell}" '
        f'height="{rows * cell}" viewBox="0 0 {cols * cell} {rows * cell}">',
    ]
    for i in range(rows):
        for j in range(cols):
            frac = D[i, j] / top if top > 0 else 0.0
            g = int(round(255 * (1.0 - min(max(frac, 0.0), 1.0))))
            lines.append(f'<rect x="{j * cell}" y="{i * cell}" width="{cell}" height="{cell}" '
                         f'fill="#{g:02x}{g:02x}{g:02x}"/>')
    lines.append("</svg>")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# commands


def cmd_generate(args, out=sys.stdout) -> int:
    spec = SyntheticSpec(args.n, args.m, args.shape, args.peak_width)
    X = synthetic_matrix(spec)
    write_matrix_csv(args.output, X)
    print(f"wrote {X.shape[0]}x{X.shape[1]} {spec.shape.value} dataset to {args.output}", file=out)
    return EXIT_OK


def _learn_overrides(args):
    over = {}
    if args.from_report:
        with open(args.from_report, encoding="utf-8") as fh:
            over.update(json.load(fh)["config"])
    if args.config:
        over.update(parse_config_text(Path(args.config).read_text(encoding="utf-8")))
    over.update(_parse_set(args.set))
    if args.output:
        over["output.dir"] = args.output
    return over


def cmd_learn(args, out=sys.stdout) -> int:
    cfg = resolve_config(_learn_overrides(args))
    return run_learn(cfg, jobs=_jobs(args.jobs), out=out)


def cmd_eval(args, out=sys.stdout) -> int:
    D = read_matrix_csv(args.distances)
    if D.shape[0] != D.shape[1]:
        raise ConfigError(f"distance matrix must be square, got {D.shape[0]}x{D.shape[1]}")
    labels = load_labels(args.labels)
    if labels.size != D.shape[0]:
        raise ConfigError(f"{labels.size} labels for a {D.shape[0]}x{D.shape[0]} distance matrix")
    metrics = _metrics(D, labels)
    _write_json(args.output, metrics)
    print(f"asw={metrics['asw']:.6f} dunn={metrics['dunn']:.6f} -> {args.output}", file=out)
    return EXIT_OK


def cmd_heatmap(args, out=sys.stdout) -> int:
    D = read_matrix_csv(args.distances)
    Path(args.output).write_text(heatmap_svg(D, args.cell), encoding="utf-8")
    print(f"wrote {D.shape[0]}x{D.shape[1]} heatmap to {args.output}", file=out)
    return EXIT_OK


def cmd_report(args, out=sys.stdout) -> int:
    run_dir = Path(args.run_dir)
    try:
        with open(run_dir / "report.json", encoding="utf-8") as fh:
            rep = json.load(fh)
    except OSError as e:
        raise ConfigError(f"cannot read report: {e}") from None
    cfg, res = rep["config"], rep["result"]
    rows = [("method", cfg["method.name"]), ("verdict", res["verdict"]), ("version", rep["version"])]
    if "iterations" in res:
        rows += [("algorithm", cfg["solver.algorithm"]), ("iterations", res["iterations"]),
                 ("final residual_A", res["final_residual_A"])]
        c = res.get("contraction") or {}
        for key in ("L_T", "L_T_normalized", "L_stochastic"):
            if c.get(key) is not None:
                rows.append((key, c[key]))
    else:
        rows += [("eigenvalue", res["eigenvalue"]), ("perron residual", res["perron_residual"]),
                 ("metric check", res["metric_matrix_check"]["ok"])]
    labels_path = args.labels or cfg.get("data.labels")
    if labels_path and (run_dir / "distances.csv").exists():
        labels = load_labels(labels_path)
        D = read_matrix_csv(run_dir / "distances.csv")
        learned = _metrics(D, labels)
        base = _metrics(euclidean_baseline(load_dataset(cfg)), labels)
        rows += [("ASW learned", learned["asw"]), ("ASW euclidean", base["asw"]),
                 ("Dunn learned", learned["dunn"]), ("Dunn euclidean", base["dunn"])]
    width = max(len(k) for k, _ in rows)
    for k, v in rows:
        v = f"{v:.6g}" if isinstance(v, float) else v
        print(f"{k.ljust(width)}  {v}", file=out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="metric-eigenlearn", description="Unsupervised ground metric learning.")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a synthetic dataset (samples as rows)")
    g.add_argument("--shape", choices=("h1", "h2", "h3"), default="h1")
    g.add_argument("--n", type=int, default=100)
    g.add_argument("--m", type=int, default=80)
    g.add_argument("--peak-width", type=float, default=400.0)
    g.add_argument("-o", "--output", default="data.csv")
    g.set_defaults(func=cmd_generate)

    lr = sub.add_parser("learn", help="learn a ground metric and write a run directory")
    lr.add_argument("-c", "--config", help="flat key = value config file")
    lr.add_argument("--from-report", help="repeat the run recorded in a report.json")
    lr.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key")
    lr.add_argument("-o", "--output", help="run directory (same as --set output.dir=...)")
    lr.add_argument("--jobs", type=int, default=1, help=f"threads for pairwise evaluation ({THREADS_ENV} wins)")
    lr.set_defaults(func=cmd_learn)

    e = sub.add_parser("eval", help="ASW and Dunn index of a distance matrix")
    e.add_argument("distances")
    e.add_argument("labels", help="one label per line")
    e.add_argument("-o", "--output", default="metrics.json")
    e.set_defaults(func=cmd_eval)

    h = sub.add_parser("heatmap", help="render a distance matrix as SVG")
    h.add_argument("distances")
    h.add_argument("output")
    h.add_argument("--cell", type=int, default=10, help="cell size in pixels")
    h.set_defaults(func=cmd_heatmap)

    r = sub.add_parser("report", help="summarize a run directory")
    r.add_argument("run_dir")
    r.add_argument("--labels", help="labels for ASW/Dunn against the Euclidean baseline")
    r.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args, out=sys.stdout)
    except (ConfigError, ParseError, ValueError, OSError, KeyError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except MetricLearnError as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
