"""
Fixed-point solvers for the coupled problem between a feature cost ``A``
(``m x m``) and a sample cost ``B`` (``n x n``).

``F`` maps ``A`` to the sample side, ``G`` maps ``B`` back to the feature
side. Four schemes are provided:

normalized
    ``B = F(A) / |F(A)|``, ``A = G(B) / |G(B)|`` (max-norms).
relaxed
    ``B = gF F(A)``, ``A = (1 - alpha) A + alpha gG G(B)``.
rfi
    The relaxed step applied to a random subset of entries per iteration.
adaptive
    The relaxed step with the step sizes divided by the current fixed-point
    residuals after every iteration.
"""

from __future__ import annotations

import enum
import math
import time
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from .core import GroundMetricMap, MatrixClass, max_norm, validate_class
from .errors import ZeroNorm
from .evaluation import asw as average_silhouette

ALGORITHMS = ("normalized", "relaxed", "rfi", "adaptive")
ORDERS = ("gauss-seidel", "jacobi")
RESCALE_FLOOR = 1e-15
# log-ratio spreads below this are indistinguishable from rounding of the inputs
HILBERT_SNAP = 4 * np.finfo(float).eps


class Verdict(str, enum.Enum):
    CONVERGED = "Converged"
    MAX_ITERS = "MaxIters"
    EARLY_STOPPED = "EarlyStopped"
    DIVERGED = "Diverged"


@dataclass(frozen=True)
class EarlyStop:
    """Stop when the ASW of the sample distances has not improved for ``patience`` iterations.

    ``distance`` turns ``(A, B)`` into a sample distance matrix; the default
    uses ``B`` itself, which suits the transport maps.
    """

    labels: tuple
    patience: int = 10
    distance: Optional[Callable] = None

    def distances(self, A, B):
        return B if self.distance is None else self.distance(A, B)


@dataclass(frozen=True)
class SolverConfig:
    algorithm: str = "relaxed"
    alpha: float = 1.0
    gamma_f: float = 1.0
    gamma_g: float = 1.0
    tol_residual: float = 1e-8
    max_iters: int = 400
    seed: int = 0
    batch_fraction: float = 1.0
    early_stop: Optional[EarlyStop] = None
    symmetric_updates: bool = True
    order: str = "gauss-seidel"
    validate_every: int = 10
    class_tol: Optional[float] = None
    divergence_window: int = 20
    divergence_factor: float = 10.0

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"algorithm must be one of {ALGORITHMS}, got {self.algorithm!r}")
        if not 0.0 < self.alpha <= 1.0:
            raise ValueError("alpha must lie in (0, 1]")
        if not (self.gamma_f > 0 and self.gamma_g > 0):
            raise ValueError("gamma_f and gamma_g must be positive")
        if not self.tol_residual > 0:
            raise ValueError("tol_residual must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")
        if not 0.0 < self.batch_fraction <= 1.0:
            raise ValueError("batch_fraction must lie in (0, 1]")
        if self.order not in ORDERS:
            raise ValueError(f"order must be one of {ORDERS}")

    def as_dict(self):
        d = asdict(self)
        if self.early_stop is not None:
            d["early_stop"] = {"patience": self.early_stop.patience, "n_labels": len(self.early_stop.labels)}
        return d


@dataclass(frozen=True)
class IterationRecord:
    iteration: int
    residual_A: float
    residual_B: float
    hilbert_A: float
    gamma_f: float
    gamma_g: float
    asw: Optional[float] = None
    distance_sq: Optional[float] = None


@dataclass(frozen=True)
class ContractionReport:
    L_F: Optional[float]
    L_G: Optional[float]
    gamma_f: float
    gamma_g: float
    alpha: float
    L_T: Optional[float] = None
    satisfied: Optional[bool] = None
    C_F: Optional[float] = None
    C_G: Optional[float] = None
    L_T_normalized: Optional[float] = None
    satisfied_banach: Optional[bool] = None
    satisfied_quarter: Optional[bool] = None
    L_stochastic: Optional[float] = None
    stochastic_gamma_bounds: Optional[tuple] = None
    stochastic_satisfied: Optional[bool] = None


@dataclass
class RunReport:
    config: SolverConfig
    trace: list
    A: np.ndarray
    B: np.ndarray
    verdict: Verdict
    wall_clock: float
    contraction: ContractionReport
    best: Optional[dict] = None
    class_checks: list = field(default_factory=list)
    message: str = ""

    @property
    def iterations(self) -> int:
        return len(self.trace)

    def residuals(self, key="residual_A") -> np.ndarray:
        return np.array([getattr(r, key) for r in self.trace], dtype=float)

    def summary(self) -> dict:
        return {
            "verdict": self.verdict.value,
            "iterations": self.iterations,
            "final_residual_A": self.trace[-1].residual_A if self.trace else None,
            "wall_clock": self.wall_clock,
            "contraction": asdict(self.contraction),
            "config": self.config.as_dict(),
            "message": self.message,
            "best_iteration": None if self.best is None else self.best["iteration"],
            "class_checks": self.class_checks,
        }


# ---------------------------------------------------------------------------
# diagnostics


def hilbert_offdiag(prev, nxt) -> float:
    """Spread of off-diagonal log-ratios ``log(prev / next)``; ``inf`` unless all are positive."""
    P = np.asarray(prev, dtype=float)
    Q = np.asarray(nxt, dtype=float)
    if P.shape != Q.shape:
        raise ValueError(f"shapes differ: {P.shape} vs {Q.shape}")
    off = ~np.eye(P.shape[0], dtype=bool)
    p, q = P[off], Q[off]
    if p.size == 0:
        return 0.0
    if np.any(p <= 0) or np.any(q <= 0):
        return math.inf
    # the ratio of extreme ratios carries only division round-off, whatever the scale
    with np.errstate(over="ignore", under="ignore"):
        r = p / q
        spread = float(np.log(r.max() / r.min()))
    if not math.isfinite(spread):
        lr = np.log(p) - np.log(q)
        spread = float(lr.max() - lr.min())
    return 0.0 if spread <= HILBERT_SNAP else spread


def residual_diagnostics(prev, nxt):
    """``(max_norm(prev - next), hilbert_offdiag(prev, next))``."""
    return max_norm(np.asarray(prev, dtype=float) - np.asarray(nxt, dtype=float)), hilbert_offdiag(prev, nxt)


def _relax(A, target, alpha):
    # shared by the relaxed and RFI paths so full-batch RFI matches bit for bit
    return (1.0 - alpha) * A + alpha * target


def _lipschitz(mp: GroundMetricMap, data, other: GroundMetricMap):
    floor = None
    if getattr(other, "reference", None) is not None:
        floor = float(np.linalg.eigvalsh(np.asarray(other.reference, dtype=float))[0])
    try:
        return mp.lipschitz_constant(data, input_floor=floor)
    except TypeError:
        return mp.lipschitz_constant(data)


def contraction_report(F: GroundMetricMap, G: GroundMetricMap, data, cfg: SolverConfig) -> ContractionReport:
    """Lipschitz-based convergence certificates for the configured scheme."""
    LF = _lipschitz(F, data, G)
    LG = _lipschitz(G, data, F)
    kw = dict(L_F=LF, L_G=LG, gamma_f=cfg.gamma_f, gamma_g=cfg.gamma_g, alpha=cfg.alpha)
    if LF is None or LG is None:
        return ContractionReport(**kw)
    if cfg.algorithm == "normalized":
        CF = F.norm_lower_bound(data)
        CG = G.norm_lower_bound(data)
        if CF > 0 and CG > 0:
            Lt = 4.0 * LF * LG / (CF * CG)
            return ContractionReport(**kw, C_F=CF, C_G=CG, L_T_normalized=Lt,
                                     satisfied_banach=Lt < 1.0, satisfied_quarter=Lt < 0.25 * CF * CG)
        return ContractionReport(**kw, C_F=CF, C_G=CG)
    prod = LF * LG * cfg.gamma_f * cfg.gamma_g
    L_T = 1.0 - cfg.alpha * (1.0 - prod)
    extra = {}
    if cfg.algorithm == "rfi":
        m = G.output_dim(data)
        n = F.output_dim(data)
        extra = stochastic_rate(LF, LG, cfg.gamma_f, cfg.gamma_g, cfg.alpha, m, n)
    return ContractionReport(**kw, L_T=L_T, satisfied=prod < 1.0, **extra)


def stochastic_rate(LF, LG, gf, gg, alpha, m, n) -> dict:
    """Per-step rate of the single-entry stochastic iteration and its step-size bounds."""
    a = (1.0 + alpha * gg**2 * LG**2)
    L = max(1.0 - alpha / m**2 + a * gf**2 * LF**2, a * (1.0 - 1.0 / n**2))
    # a constant map puts no limit on its step size
    bounds = (math.sqrt(alpha) / (math.sqrt(2.0) * m * LF) if LF > 0 else math.inf,
              1.0 / (n * LG) if LG > 0 else math.inf)
    return {
        "L_stochastic": L,
        "stochastic_gamma_bounds": bounds,
        "stochastic_satisfied": gf <= bounds[0] and gg <= bounds[1],
    }


# ---------------------------------------------------------------------------
# driver


def default_initial(mp: GroundMetricMap, data, dim: int) -> np.ndarray:
    """The map's reference matrix, or a unit-norm class member when there is none."""
    if mp.reference is not None:
        return np.array(mp.reference_array(data), dtype=float)
    if mp.output_class in (MatrixClass.PSD, MatrixClass.GRAPH_LAPLACIAN):
        return np.eye(dim)
    return np.ones((dim, dim)) - np.eye(dim)


class _Loop:
    """State shared by all schemes: trace, stopping rules, class checks."""

    def __init__(self, F, G, data, cfg, reference_point):
        self.F, self.G, self.data, self.cfg = F, G, data, cfg
        self.ref = reference_point
        self.trace = []
        self.class_checks = []
        self.best = None
        self.min_res = math.inf
        self.above = 0
        self.since_best = 0
        self.t0 = time.perf_counter()

    def record(self, t, A_old, A, B_old, B, gf, gg):
        resA = max_norm(A - A_old)
        resB = max_norm(B - B_old) if B_old is not None else math.nan
        hil = hilbert_offdiag(A_old, A)
        score = None
        es = self.cfg.early_stop
        if es is not None:
            score = average_silhouette(es.distances(A, B), np.asarray(es.labels))
            if self.best is None or score > self.best["asw"]:
                self.best = {"iteration": t, "asw": score, "A": A.copy(), "B": B.copy()}
                self.since_best = 0
            else:
                self.since_best += 1
        dist = None
        if self.ref is not None:
            As, Bs = self.ref
            dist = float(np.sum((A - As) ** 2) + np.sum((B - Bs) ** 2))
        self.trace.append(IterationRecord(t, resA, resB, hil, gf, gg, score, dist))
        if self.cfg.validate_every and t % self.cfg.validate_every == 0:
            self._validate(t, A, B)
        return resA

    def _validate(self, t, A, B):
        for name, M, tag in (("A", A, self.G.output_class), ("B", B, self.F.output_class)):
            if tag is MatrixClass.UNCHECKED:
                continue
            v = validate_class(M, tag, tol=self.cfg.class_tol, limit=5)
            if not v.ok:
                self.class_checks.append({"iteration": t, "matrix": name, "class": tag.value,
                                          "violations": [x.detail for x in v.violations]})

    def diverged(self, res):
        if not math.isfinite(res):
            return True
        self.min_res = min(self.min_res, res)
        # growth below the tolerance is round-off, not divergence
        if res > self.cfg.divergence_factor * self.min_res and res > self.cfg.tol_residual:
            self.above += 1
        else:
            self.above = 0
        return self.above >= self.cfg.divergence_window

    def early_stopped(self):
        es = self.cfg.early_stop
        return es is not None and self.since_best >= es.patience

    def report(self, A, B, verdict, contraction, message=""):
        return RunReport(
            config=self.cfg, trace=self.trace, A=A, B=B, verdict=verdict,
            wall_clock=time.perf_counter() - self.t0, contraction=contraction,
            best=self.best, class_checks=self.class_checks, message=message,
        )


def _check_dims(F, G, data, A0):
    m = G.output_dim(data)
    if F.input_dim(data) != m or G.input_dim(data) != F.output_dim(data):
        raise ValueError("F and G do not map between the two sides of the data")
    if A0.shape != (m, m):
        raise ValueError(f"A0 must be {m}x{m}, got {A0.shape}")


def _prepare(F, G, data, A0):
    m = G.output_dim(data)
    A = default_initial(G, data, m) if A0 is None else np.array(A0, dtype=float)
    _check_dims(F, G, data, A)
    return A


def solve_normalized(F, G, data, cfg: SolverConfig, A0=None) -> RunReport:
    """Iterate ``B = F(A)/|F(A)|``, ``A = G(B)/|G(B)|`` until ``|A_t - A_t+1| <= tol``.

    A Converged verdict means both relations hold within ``10 * tol``.

    Raises
    ------
    ZeroNorm
        If a map returns the zero matrix.
    """
    cfg = replace(cfg, algorithm="normalized")
    A = _prepare(F, G, data, A0)
    loop = _Loop(F, G, data, cfg, None)
    contraction = contraction_report(F, G, data, cfg)
    tol = cfg.tol_residual

    def normalized(M, name):
        s = max_norm(M)
        if s == 0.0:
            raise ZeroNorm(f"{name} returned the zero matrix")
        return M / s

    B = None
    FA = F.apply(A, data)
    for t in range(1, cfg.max_iters + 1):
        B_new = normalized(FA, "F")
        GB = G.apply(B_new if cfg.order == "gauss-seidel" or B is None else B, data)
        A_new = normalized(GB, "G")
        res = loop.record(t, A, A_new, B, B_new, 1.0, 1.0)
        A, B = A_new, B_new
        FA = F.apply(A, data)
        if res <= tol:
            # A = G(B)/|G(B)| holds by construction; check the B relation at the new A
            if max_norm(B - normalized(FA, "F")) <= 10 * tol:
                return loop.report(A, B, Verdict.CONVERGED, contraction)
        if loop.early_stopped():
            return loop.report(A, B, Verdict.EARLY_STOPPED, contraction)
        if loop.diverged(res):
            return loop.report(A, B, Verdict.DIVERGED, contraction)
    return loop.report(A, B, Verdict.MAX_ITERS, contraction)


def _relations_hold(F, G, data, A, B, gf, gg, tol, FA=None, GB=None):
    FA = F.apply(A, data) if FA is None else FA
    GB = G.apply(B, data) if GB is None else GB
    return max_norm(B - gf * FA) <= 10 * tol and max_norm(A - gg * GB) <= 10 * tol


def solve_relaxed(F, G, data, cfg: SolverConfig, A0=None, reference_point=None) -> RunReport:
    """Iterate ``B = gF F(A)``, ``A = (1 - alpha) A + alpha gG G(B)``.

    Stops when ``|A_t - A_t+1| <= tol`` and both fixed-point relations hold
    within ``10 * tol``. Diverged is declared when the residual stays above
    ten times its running minimum for 20 consecutive iterations.
    """
    cfg = replace(cfg, algorithm="relaxed")
    return _relaxed_loop(F, G, data, cfg, _prepare(F, G, data, A0), reference_point, adaptive=False)


def solve_adaptive_gamma(F, G, data, cfg: SolverConfig, A0=None, reference_point=None) -> RunReport:
    """Relaxed iteration with ``gF /= |B - F(A)|`` and ``gG /= |A - G(B)|`` after every step.

    When a denominator falls below 1e-15 the relations are checked and the
    run ends Converged if they hold; otherwise that rescale is skipped.
    """
    cfg = replace(cfg, algorithm="adaptive")
    return _relaxed_loop(F, G, data, cfg, _prepare(F, G, data, A0), reference_point, adaptive=True)


def _relaxed_loop(F, G, data, cfg, A, reference_point, adaptive):
    loop = _Loop(F, G, data, cfg, reference_point)
    contraction = contraction_report(F, G, data, cfg)
    gf, gg, alpha, tol = cfg.gamma_f, cfg.gamma_g, cfg.alpha, cfg.tol_residual
    B = None
    FA = F.apply(A, data)
    for t in range(1, cfg.max_iters + 1):
        B_new = gf * FA
        GB = G.apply(B_new if cfg.order == "gauss-seidel" or B is None else B, data)
        A_new = _relax(A, gg * GB, alpha)
        res = loop.record(t, A, A_new, B, B_new, gf, gg)
        A, B = A_new, B_new
        FA = F.apply(A, data)
        if cfg.order == "jacobi":
            GB = G.apply(B, data)
        if adaptive:
            dF = max_norm(B - FA)
            dG = max_norm(A - GB)
            if min(dF, dG) < RESCALE_FLOOR:
                if _relations_hold(F, G, data, A, B, gf, gg, tol, FA, GB):
                    return loop.report(A, B, Verdict.CONVERGED, contraction,
                                       "rescale denominator vanished at a fixed point")
            if dF >= RESCALE_FLOOR:
                gf = gf / dF
            if dG >= RESCALE_FLOOR:
                gg = gg / dG
        if res <= tol and _relations_hold(F, G, data, A, B, gf, gg, tol, FA, GB):
            return loop.report(A, B, Verdict.CONVERGED, contraction)
        if loop.early_stopped():
            return loop.report(A, B, Verdict.EARLY_STOPPED, contraction)
        if loop.diverged(res):
            return loop.report(A, B, Verdict.DIVERGED, contraction)
    return loop.report(A, B, Verdict.MAX_ITERS, contraction)


# ---------------------------------------------------------------------------
# random function iteration


def _step_rng(seed, t, stream):
    # counter-based: the draw for step t does not depend on earlier draws
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(t), int(stream)])))


class _EntrySampler:
    def __init__(self, dim, fraction, symmetric):
        self.dim = dim
        if symmetric:
            self.rows, self.cols = np.triu_indices(dim)
        else:
            self.rows, self.cols = np.divmod(np.arange(dim * dim), dim)
        self.total = len(self.rows)
        self.count = min(self.total, max(1, int(round(fraction * self.total))))
        self.symmetric = symmetric

    @property
    def full(self):
        return self.count == self.total

    def draw(self, rng):
        idx = rng.choice(self.total, size=self.count, replace=False)
        return self.rows[idx], self.cols[idx]


def _update_entries(M, rows, cols, vals, symmetric):
    out = M.copy()
    out[rows, cols] = vals
    if symmetric:
        out[cols, rows] = vals
    return out


def solve_rfi(F, G, data, cfg: SolverConfig, A0=None, B0=None, reference_point=None) -> RunReport:
    """Random function iteration: relaxed updates on random entry subsets.

    Each step draws ``batch_fraction`` of the entries of ``B`` and of ``A``
    without replacement, sets the drawn ``B`` entries to ``gF F(A)`` and then
    the drawn ``A`` entries to ``(1 - alpha) A + alpha gG G(B)``. With
    ``symmetric_updates`` an entry and its mirror move together. When the
    whole matrix is drawn the step is the relaxed step, bit for bit.

    ``reference_point=(A*, B*)`` adds ``|A - A*|_F^2 + |B - B*|_F^2`` to the
    trace. Convergence is declared when the residual has stayed below tol
    over one sweep's worth of steps and both relations verify.
    """
    cfg = replace(cfg, algorithm="rfi")
    A = _prepare(F, G, data, A0)
    n = F.output_dim(data)
    m = A.shape[0]
    gf, gg, alpha, tol = cfg.gamma_f, cfg.gamma_g, cfg.alpha, cfg.tol_residual
    B = gf * F.apply(A, data) if B0 is None else np.array(B0, dtype=float)
    if B.shape != (n, n):
        raise ValueError(f"B0 must be {n}x{n}, got {B.shape}")
    sb = _EntrySampler(n, cfg.batch_fraction, cfg.symmetric_updates)
    sa = _EntrySampler(m, cfg.batch_fraction, cfg.symmetric_updates)
    window = max(math.ceil(sb.total / sb.count), math.ceil(sa.total / sa.count))
    loop = _Loop(F, G, data, cfg, reference_point)
    contraction = contraction_report(F, G, data, cfg)
    recent = []
    # with a defaulted B0 the first B residual is undefined, as in the relaxed scheme
    B_prev = None if B0 is None else B

    for t in range(1, cfg.max_iters + 1):
        if sb.full:
            B_new = gf * F.apply(A, data)
        else:
            r, c = sb.draw(_step_rng(cfg.seed, t, 0))
            B_new = _update_entries(B, r, c, gf * F.apply_entries(A, data, r, c), sb.symmetric)
        B_src = B_new if cfg.order == "gauss-seidel" else B
        if sa.full:
            A_new = _relax(A, gg * G.apply(B_src, data), alpha)
        else:
            r, c = sa.draw(_step_rng(cfg.seed, t, 1))
            target = gg * G.apply_entries(B_src, data, r, c)
            A_new = _update_entries(A, r, c, _relax(A[r, c], target, alpha), sa.symmetric)
        res = loop.record(t, A, A_new, B_prev, B_new, gf, gg)
        A, B = A_new, B_new
        B_prev = B
        recent.append(res)
        if len(recent) > window:
            recent.pop(0)
        if len(recent) == window and max(recent) <= tol and _relations_hold(F, G, data, A, B, gf, gg, tol):
            return loop.report(A, B, Verdict.CONVERGED, contraction)
        if loop.early_stopped():
            return loop.report(A, B, Verdict.EARLY_STOPPED, contraction)
        # single steps may leave A nearly unchanged, so divergence is judged on
        # the largest residual of each disjoint sweep
        if t % window == 0 and loop.diverged(max(recent)):
            return loop.report(A, B, Verdict.DIVERGED, contraction)
    return loop.report(A, B, Verdict.MAX_ITERS, contraction)


def solve(F, G, data, cfg: SolverConfig, A0=None, B0=None, reference_point=None) -> RunReport:
    """Dispatch on ``cfg.algorithm``."""
    if cfg.algorithm == "normalized":
        return solve_normalized(F, G, data, cfg, A0)
    if cfg.algorithm == "relaxed":
        return solve_relaxed(F, G, data, cfg, A0, reference_point)
    if cfg.algorithm == "adaptive":
        return solve_adaptive_gamma(F, G, data, cfg, A0, reference_point)
    return solve_rfi(F, G, data, cfg, A0, B0, reference_point)
