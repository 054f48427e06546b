"""Optimization steps built on the group-level curvature system.

``partitioned_newton_step`` solves the S x S system hbar * eta = gbar and
moves the parameters by the gradient elementwise-scaled with the per-group
learning rates eta.  With the discrete partition (S = P, all gradient entries
nonzero) it reproduces dense Newton; with the trivial partition (S = 1) it
reproduces Cauchy's steepest descent with exact quadratic-model step size.
``gd_step``, ``cauchy_step``, and dense ``newton_step`` are the baselines.

Degenerate systems are handled by one fixed policy: groups with exactly zero
pseudo-gradient are dropped (their rows and columns vanish identically) and
get eta = 0; a failed factorization or a non-descending solution climbs a
ladder of increasing diagonal shifts; if the ladder is exhausted the step
falls back to the Cauchy solution embedded in R^S (optional, on by default).
"""

from __future__ import annotations

import csv
import io
import json
import math
import time
import warnings
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np
import scipy.linalg

from . import engine
from .engine import Expr, ParamVector, PassCounts, evaluate, gradient, gradient_of_nested
from .partition import Partition, broadcast
from .summaries import PseudoSystem, pseudo_hessian, regularization_vector

__all__ = [
    "METHODS",
    "SolverError",
    "NonFiniteLossError",
    "StepConfig",
    "StepTrace",
    "RunResult",
    "solve_pseudo_system",
    "partitioned_newton_step",
    "cauchy_step",
    "newton_step",
    "gd_step",
    "run",
    "traces_to_csv",
    "traces_to_json",
]

METHODS = ("gd", "cauchy", "newton", "partitioned")

DEFAULT_LADDER = tuple(1e-8 * 10.0 ** k for k in range(17))


class SolverError(RuntimeError):
    """Linear solve failed beyond recovery; carries the system diagnostics."""

    def __init__(self, message: str, system: PseudoSystem | None = None) -> None:
        super().__init__(message)
        self.system = system


class NonFiniteLossError(ValueError):
    """A step produced a NaN/Inf loss; the run loop aborts on it."""


@dataclass(frozen=True)
class StepConfig:
    """Knobs shared by all step rules.

    ``damping`` scales every second-order displacement (1.0 keeps the raw
    update); ``regularization_eps`` switches on the third-order diagonal
    regularizer; the ladder entries are tried in order when a solve fails or
    produces a non-descent direction.
    """

    damping: float = 1.0
    regularization_eps: float = 0.0
    ladder: tuple[float, ...] = DEFAULT_LADDER
    cauchy_on_failure: bool = True
    max_iterations: int = 100
    grad_tolerance: float = 1e-8
    backtracking: bool = False
    reg_mode: str = "exact"
    reg_samples: int = 256
    dense_budget: int = 512

    def __post_init__(self) -> None:
        if not self.damping > 0:
            raise ValueError("damping must be positive")
        if self.regularization_eps < 0:
            raise ValueError("regularization_eps must be non-negative")
        ladder = tuple(float(x) for x in self.ladder)
        if any(b <= a for a, b in zip(ladder, ladder[1:])) or any(x <= 0 for x in ladder):
            raise ValueError("ladder must be strictly increasing and positive")
        object.__setattr__(self, "ladder", ladder)


@dataclass(frozen=True)
class StepTrace:
    iteration: int
    loss_before: float
    loss_after: float
    grad_norm: float
    eta: tuple[float, ...]
    status: str
    passes: PassCounts
    wall_time: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.loss_before) and math.isfinite(self.loss_after)):
            raise NonFiniteLossError("trace loss fields must be finite")


@dataclass(frozen=True)
class RunResult:
    traces: tuple[StepTrace, ...]
    theta_final: ParamVector
    termination: str  # converged | max-iterations | aborted-nonfinite


# ---------------------------------------------------------------------------
# linear algebra helpers
# ---------------------------------------------------------------------------


def _sym_solve(m: np.ndarray, b: np.ndarray) -> np.ndarray | None:
    """Symmetric-indefinite solve (LAPACK Bunch-Kaufman); None on failure."""
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            x = scipy.linalg.solve(m, b, assume_a="sym")
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgError, ValueError):
        return None
    if not np.all(np.isfinite(x)):
        return None
    return x


def _ladder_solve(m: np.ndarray, b: np.ndarray, cfg: StepConfig):
    """Solve m x = b, requiring descent (x . b > 0); climb the shift ladder
    on failure.  Returns (x, eps_used) or (None, None)."""
    x = _sym_solve(m, b)
    if x is not None and float(x @ b) > 0.0:
        return x, None
    eye = np.eye(m.shape[0])
    for eps in cfg.ladder:
        x = _sym_solve(m + eps * eye, b)
        if x is not None and float(x @ b) > 0.0:
            return x, eps
    return None, None


def _format_dropped(dropped: Sequence[int], total: int) -> str:
    if len(dropped) == total:
        return "zero-groups-dropped(all)"
    return "zero-groups-dropped(" + ",".join(str(s + 1) for s in dropped) + ")"


def solve_pseudo_system(system: PseudoSystem, cfg: StepConfig | None = None,
                        r: np.ndarray | None = None) -> tuple[np.ndarray, str]:
    """Per-group learning rates solving (hbar + eps * Diag(r)) eta = gbar.

    Groups with exactly zero pseudo-gradient are dropped with eta = 0 (their
    hbar rows and columns are identically zero).  A failed factorization or a
    non-descent solution climbs the shift ladder; an exhausted ladder returns
    the Cauchy solution (all entries g.g / g.H.g, both recoverable from the
    system) when the fallback is enabled, otherwise raises SolverError.
    """
    cfg = cfg or StepConfig()
    s_count = system.size
    gbar = system.gbar
    eta = np.zeros(s_count)

    active = np.flatnonzero(gbar != 0.0)
    dropped = [s for s in range(s_count) if gbar[s] == 0.0]
    if active.size == 0:
        return eta, _format_dropped(dropped, s_count)

    m = system.hbar[np.ix_(active, active)]
    b = gbar[active]
    if cfg.regularization_eps > 0.0:
        if r is None:
            raise ValueError("regularization_eps > 0 requires the r vector")
        r = np.asarray(r, dtype=np.float64)
        m = m + cfg.regularization_eps * np.diag(r[active])

    x, eps_used = _ladder_solve(m, b, cfg)
    if x is not None:
        eta[active] = x
        if eps_used is not None:
            return eta, f"regularized({eps_used:g})"
        if dropped:
            return eta, _format_dropped(dropped, s_count)
        return eta, "clean"

    if cfg.cauchy_on_failure:
        denom = float(np.sum(system.hbar))  # = g^T H g
        num = float(np.sum(gbar))           # = g^T g
        if denom > 0.0:
            eta[:] = num / denom
            return eta, "cauchy-fallback"
        # non-positive total curvature: same remedy as cauchy_step, a plain
        # gradient step (eta = 1 makes the update damping * g)
        eta[:] = 1.0
        return eta, "gd-fallback"
    raise SolverError(
        f"pseudo-system solve failed after the full ladder (S={s_count}, "
        f"|gbar|={np.linalg.norm(gbar):.3e}, |hbar|={np.linalg.norm(system.hbar):.3e})",
        system)


# ---------------------------------------------------------------------------
# step rules
# ---------------------------------------------------------------------------


def _as_pv(theta) -> ParamVector:
    if isinstance(theta, ParamVector):
        return theta
    return ParamVector.flat(np.asarray(theta, dtype=np.float64))


def _finish(iteration, loss_before, loss_after, grad_norm, eta, status, before, t0):
    return StepTrace(
        iteration=iteration,
        loss_before=loss_before,
        loss_after=loss_after,
        grad_norm=grad_norm,
        eta=tuple(float(x) for x in np.atleast_1d(eta)),
        status=status,
        passes=engine.counter.snapshot() - before,
        wall_time=time.perf_counter() - t0,
    )


def partitioned_newton_step(f: Expr, theta, part: Partition,
                            cfg: StepConfig | None = None,
                            iteration: int = 0) -> tuple[ParamVector, StepTrace]:
    """One partitioned second-order step:
    theta' = theta - damping * (g * broadcast(eta)) with eta from the
    group-level system at theta."""
    cfg = cfg or StepConfig()
    theta = _as_pv(theta)
    t0 = time.perf_counter()
    before = engine.counter.snapshot()

    loss_before = evaluate(f, theta)
    g = gradient(f, theta)
    system = pseudo_hessian(f, theta, part)
    r = None
    if cfg.regularization_eps > 0.0:
        r = np.asarray(regularization_vector(
            f, theta, part, mode=cfg.reg_mode, samples=cfg.reg_samples))
    eta, status = solve_pseudo_system(system, cfg, r)

    theta2 = theta.with_values(theta.values - cfg.damping * g * broadcast(eta, part))
    loss_after = evaluate(f, theta2)
    trace = _finish(iteration, loss_before, loss_after, float(np.linalg.norm(g)),
                    eta, status, before, t0)
    return theta2, trace


def cauchy_step(f: Expr, theta, cfg: StepConfig | None = None,
                iteration: int = 0) -> tuple[ParamVector, StepTrace]:
    """Steepest descent with the exact quadratic-model step size
    g.g / g.H.g, the curvature obtained from a single Hessian-vector
    product.  Non-positive curvature falls back to a fixed gradient step of
    size ``damping``, flagged in the status."""
    cfg = cfg or StepConfig()
    theta = _as_pv(theta)
    t0 = time.perf_counter()
    before = engine.counter.snapshot()

    loss_before = evaluate(f, theta)
    g = gradient(f, theta)
    gg = float(g @ g)
    if gg == 0.0:
        return theta, _finish(iteration, loss_before, loss_before, 0.0,
                              [0.0], "clean", before, t0)
    ghg = float(g @ gradient_of_nested(f, theta, [g]))
    if ghg <= 0.0:
        theta2 = theta.with_values(theta.values - cfg.damping * g)
        step_size, status = cfg.damping, "gd-fallback"
    else:
        step_size, status = gg / ghg, "clean"
        theta2 = theta.with_values(theta.values - step_size * g)
    loss_after = evaluate(f, theta2)
    return theta2, _finish(iteration, loss_before, loss_after, math.sqrt(gg),
                           [step_size], status, before, t0)


def newton_step(f: Expr, theta, cfg: StepConfig | None = None,
                iteration: int = 0) -> tuple[ParamVector, StepTrace]:
    """Damped dense Newton step; the Hessian is assembled column by column
    from P Hessian-vector products, so a budget guard keeps P small."""
    cfg = cfg or StepConfig()
    theta = _as_pv(theta)
    p = theta.size
    if p > cfg.dense_budget:
        raise SolverError(
            f"dense Newton assembles the full Hessian; P={p} exceeds the "
            f"budget of {cfg.dense_budget}")
    t0 = time.perf_counter()
    before = engine.counter.snapshot()

    loss_before = evaluate(f, theta)
    g = gradient(f, theta)
    gn = float(np.linalg.norm(g))
    if gn == 0.0:
        return theta, _finish(iteration, loss_before, loss_before, 0.0,
                              [cfg.damping], "clean", before, t0)
    h = np.empty((p, p))
    for j in range(p):
        e = np.zeros(p)
        e[j] = 1.0
        h[:, j] = gradient_of_nested(f, theta, [e])
    h = 0.5 * (h + h.T)
    direction, eps_used = _ladder_solve(h, g, cfg)
    if direction is None:
        raise SolverError("Newton system singular after the full ladder")
    status = "clean" if eps_used is None else f"regularized({eps_used:g})"
    theta2 = theta.with_values(theta.values - cfg.damping * direction)
    loss_after = evaluate(f, theta2)
    return theta2, _finish(iteration, loss_before, loss_after, gn,
                           [cfg.damping], status, before, t0)


def gd_step(f: Expr, theta, cfg: StepConfig | None = None,
            iteration: int = 0) -> tuple[ParamVector, StepTrace]:
    """Plain gradient descent with step size ``damping``."""
    cfg = cfg or StepConfig()
    theta = _as_pv(theta)
    t0 = time.perf_counter()
    before = engine.counter.snapshot()

    loss_before = evaluate(f, theta)
    g = gradient(f, theta)
    theta2 = theta.with_values(theta.values - cfg.damping * g)
    loss_after = evaluate(f, theta2)
    return theta2, _finish(iteration, loss_before, loss_after,
                           float(np.linalg.norm(g)), [cfg.damping], "clean", before, t0)


# ---------------------------------------------------------------------------
# run loop
# ---------------------------------------------------------------------------


def _one_step(f, theta, method, part, cfg, iteration):
    if method == "partitioned":
        return partitioned_newton_step(f, theta, part, cfg, iteration)
    if method == "cauchy":
        return cauchy_step(f, theta, cfg, iteration)
    if method == "newton":
        return newton_step(f, theta, cfg, iteration)
    return gd_step(f, theta, cfg, iteration)


def run(f: Expr, theta0, method: str, part: Partition | None = None,
        cfg: StepConfig | None = None) -> RunResult:
    """Iterate one step rule until the gradient norm drops below the
    configured tolerance, the iteration cap is reached, or the loss turns
    non-finite (the trace then ends at the last good step)."""
    cfg = cfg or StepConfig()
    if method not in METHODS:
        raise ValueError(f"unknown method '{method}'; valid methods: {', '.join(METHODS)}")
    if method == "partitioned" and part is None:
        raise ValueError("the partitioned method needs a partition")
    theta = _as_pv(theta0)

    traces: list[StepTrace] = []
    termination = "max-iterations"
    for it in range(cfg.max_iterations):
        g = gradient(f, theta)
        if float(np.linalg.norm(g)) <= cfg.grad_tolerance:
            termination = "converged"
            break
        try:
            theta2, trace = _one_step(f, theta, method, part, cfg, it)
        except NonFiniteLossError:
            termination = "aborted-nonfinite"
            break
        if not np.all(np.isfinite(theta2.values)):
            termination = "aborted-nonfinite"
            break
        if cfg.backtracking and trace.loss_after > trace.loss_before:
            theta2, trace = _backtrack(f, theta, theta2, trace)
        traces.append(trace)
        theta = theta2
    return RunResult(tuple(traces), theta, termination)


def _backtrack(f, theta: ParamVector, theta2: ParamVector, trace: StepTrace,
               max_halvings: int = 30):
    """Halve the displacement until the loss decreases (plumbing behind the
    ``backtracking`` flag; off by default)."""
    delta = theta2.values - theta.values
    scale = 1.0
    for _ in range(max_halvings):
        scale *= 0.5
        cand = theta.with_values(theta.values + scale * delta)
        loss = evaluate(f, cand)
        if math.isfinite(loss) and loss <= trace.loss_before:
            return cand, replace(trace, loss_after=loss)
    return theta, replace(trace, loss_after=trace.loss_before)


# ---------------------------------------------------------------------------
# trace serialization
# ---------------------------------------------------------------------------


def traces_to_csv(traces: Sequence[StepTrace]) -> str:
    """One row per step: iter, loss, grad_norm, status, eta_1..eta_S."""
    width = max((len(t.eta) for t in traces), default=0)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["iter", "loss", "grad_norm", "status"]
                    + [f"eta_{i + 1}" for i in range(width)])
    for t in traces:
        eta = list(t.eta) + [""] * (width - len(t.eta))
        writer.writerow([t.iteration, repr(t.loss_before), repr(t.grad_norm), t.status]
                        + [repr(x) if x != "" else "" for x in eta])
    return buf.getvalue()


def traces_to_json(traces: Sequence[StepTrace]) -> str:
    rows = []
    for t in traces:
        rows.append({
            "iteration": t.iteration,
            "loss_before": t.loss_before,
            "loss_after": t.loss_after,
            "grad_norm": t.grad_norm,
            "eta": list(t.eta),
            "status": t.status,
            "passes": {"forward": t.passes.forward,
                       "backward": t.passes.backward,
                       "passes": t.passes.passes},
            "wall_time": t.wall_time,
        })
    return json.dumps(rows, indent=2, sort_keys=True)
