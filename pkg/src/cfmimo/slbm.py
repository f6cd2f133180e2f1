"""Block-alternating power control via successive lower-bound maximization.

Both optimizers sweep the APs cyclically.  For each AP's power block the
non-concave rate objective is replaced by the first-order surrogate from
:mod:`cfmimo.linkmodel` (g2 linearized at the current block value), the
surrogate problem over the capped simplex

    { eta_m : eta_{k,m} >= eps_floor,  sum_k eta_{k,m} <= P_max }

is solved by projected gradient ascent with Armijo backtracking (one
variable: golden-section search), and the surrogate is re-expanded at the
solution until the sequential loop converges.

The surrogate is tight and gradient-matched at its expansion point, but
with instantaneous complex link gains it is not a guaranteed global lower
bound (power contributions from different APs can combine destructively,
which breaks the concavity of the linearized part).  A block update is
therefore accepted only when the true objective does not decrease; this
enforces the monotone, convergent trace the optimizers advertise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .config import OptimizerOptions  # noqa: F401  (re-exported: options belong to the solver)
from .errors import ConfigurationError, DomainError
from .linkmodel import (
    LN2,
    LinkGains,
    PowerMatrix,
    block_dc_grads,
    composite_all,
    dc_parts_from_composite,
    logdet_hpd,
    m1_from_composite,
)

__all__ = [
    "OptimizerOptions",
    "OptTrace",
    "RateContext",
    "BlockContext",
    "SubproblemInfo",
    "BoundReport",
    "project_capped_simplex",
    "solve_subproblem_sumrate",
    "solve_subproblem_maxmin",
    "optimize_sumrate",
    "optimize_maxmin",
    "verify_bound_properties",
    "uniform_power",
]

_TINY = 1e-300

# relative window defining "near-active" users of the pointwise-min objective
_ACTIVE_WINDOW = 1e-3


@dataclass
class TraceRecord:
    outer: int
    block: str
    objective: float
    residual: float


@dataclass
class OptTrace:
    """Objective/feasibility history of one optimizer run."""

    records: list = field(default_factory=list)
    converged: bool = False
    warnings: int = 0

    def append(self, outer: int, block: str, objective: float, residual: float) -> None:
        self.records.append(TraceRecord(outer, block, float(objective), float(residual)))

    def objectives(self) -> np.ndarray:
        return np.array([r.objective for r in self.records])

    def __len__(self) -> int:
        return len(self.records)

    def to_csv(self) -> str:
        lines = ["iteration,block,objective,residual"]
        for r in self.records:
            lines.append(f"{r.outer},{r.block},{r.objective!r},{r.residual!r}")
        return "\n".join(lines) + "\n"

    def summary(self) -> dict:
        return {"iterations": len(self.records), "converged": self.converged,
                "warnings": self.warnings}


@dataclass(frozen=True)
class RateContext:
    """Fixed data of one power-control problem."""

    link_gains: LinkGains
    sigma_z2: float
    W: float
    p_max_w: float


def project_capped_simplex(v: np.ndarray, p_max: float, eps_floor: float) -> np.ndarray:
    """Euclidean projection onto {x >= eps_floor, sum(x) <= p_max}.

    Exact (sort-based) solution of the projection QP.
    """
    v = np.asarray(v, dtype=float)
    n = v.size
    if not p_max > n * eps_floor:
        raise ConfigurationError("p_max must exceed len(v) * eps_floor")
    u = v - eps_floor
    total = p_max - n * eps_floor
    w = np.maximum(u, 0.0)
    if w.sum() <= total:
        return eps_floor + w
    # active budget: project u onto the simplex {y >= 0, sum(y) = total}
    us = np.sort(u)[::-1]
    css = np.cumsum(us)
    idx = np.arange(1, n + 1)
    cond = us - (css - total) / idx > 0
    rho = int(np.nonzero(cond)[0][-1])
    lam = (css[rho] - total) / (rho + 1)
    return eps_floor + np.maximum(u - lam, 0.0)


def uniform_power(cluster, p_max_w: float) -> PowerMatrix:
    """The baseline allocation: each AP splits its budget evenly."""
    return PowerMatrix.uniform(cluster, p_max_w)


class BlockContext:
    """Rate evaluation as a function of one AP's (sub)block of powers.

    ``users`` lists the MS indices whose powers on AP ``block_m`` are free
    (default: the whole served set K(m)); everything else, including other
    users' powers on the same AP, is frozen into a fixed composite term.
    ``budget`` is the power left for the free variables.
    """

    def __init__(self, link_gains: LinkGains, eta, block_m: int, sigma_z2: float,
                 W: float, p_max_w: float, users=None):
        eta = eta.eta if isinstance(eta, PowerMatrix) else np.asarray(eta, dtype=float)
        self.link = link_gains
        self.m = int(block_m)
        served = list(link_gains.cluster.served_by_ap[self.m])
        self.users = served if users is None else [int(u) for u in users]
        if any(u not in served for u in self.users):
            raise ConfigurationError("block users must be served by the block AP")
        self.sigma_z2 = float(sigma_z2)
        self.W = float(W)
        self.lhl = link_gains.lhl()
        self.p_max_w = float(p_max_w)
        fixed_on_m = float(eta[served, self.m].sum() - eta[self.users, self.m].sum())
        # the block's own feasible share; never below what it already holds
        # (guards roundoff when the rest of the AP exhausts the budget)
        self.budget = max(self.p_max_w - fixed_on_m,
                          float(eta[self.users, self.m].sum()))
        sq = np.sqrt(np.maximum(eta, 0.0))
        sq[self.users, self.m] = 0.0
        self.bfix = np.einsum("jm,kjmpq->kjpq", sq, link_gains.a)
        self.a_m = link_gains.a[:, self.users, self.m]       # (K, n, P, P)

    @property
    def n_vars(self) -> int:
        return len(self.users)

    def composites(self, x: np.ndarray) -> np.ndarray:
        b = self.bfix.copy()
        b[:, self.users] += np.sqrt(x)[None, :, None, None] * self.a_m
        return b

    def dc_parts(self, x: np.ndarray):
        """(g1, g2) for every user at block powers x."""
        return dc_parts_from_composite(self.composites(x), self.sigma_z2,
                                       self.lhl, self.W)

    def rates(self, x: np.ndarray) -> np.ndarray:
        g1, g2 = self.dc_parts(x)
        return g1 - g2

    def dc_grads(self, x: np.ndarray):
        """(grad g1, grad g2), each (K, n_vars), at block powers x (> 0)."""
        b = self.composites(x)
        return block_dc_grads(self.link, b, self.m, self.users,
                              np.asarray(x, dtype=float), self.sigma_z2,
                              self.lhl, self.W)

    def g1_eval(self, x: np.ndarray, need_grad: bool):
        """Per-user g1 values and optionally their block gradients.

        The line searches only ever need g1 (the surrogate's linearized g2
        is an affine bookkeeping term), so this path skips everything else.
        """
        b = self.composites(x)
        m1 = m1_from_composite(b, self.sigma_z2, self.lhl)
        g1 = self.W * logdet_hpd(m1) / LN2
        if not need_grad:
            return g1, None
        bu = b[:, self.users]
        sol = np.linalg.solve(m1[:, None, :, :], self.a_m)
        t = np.real(np.einsum("knpq,knpq->kn", sol, bu.conj()))
        dg1 = (self.W / LN2) * t / np.sqrt(x)[None, :]
        return g1, dg1

    def expand(self, x0: np.ndarray):
        """Linearization data of g2 at x0: per-user values and block gradients."""
        x0 = np.asarray(x0, dtype=float)
        b0 = self.composites(x0)
        _, g2_0 = dc_parts_from_composite(b0, self.sigma_z2, self.lhl, self.W)
        _, dg2_0 = block_dc_grads(self.link, b0, self.m, self.users, x0,
                                  self.sigma_z2, self.lhl, self.W)
        return _Expansion(x0=x0, g2_0=g2_0, dg2_0=dg2_0)

    def bound_rates(self, x: np.ndarray, expansion: "_Expansion") -> np.ndarray:
        """Per-user surrogate rates at x for the given expansion."""
        g1, _ = self.dc_parts(x)
        return g1 - expansion.g2_0 - expansion.dg2_0 @ (x - expansion.x0)


@dataclass(frozen=True)
class _Expansion:
    x0: np.ndarray
    g2_0: np.ndarray      # (K,)
    dg2_0: np.ndarray     # (K, n_vars)


@dataclass
class SubproblemInfo:
    bound_value: float
    iterations: int
    stationary: bool
    line_search_failed: bool


def _pg_ascent(value_fn, grad_fn, x0: np.ndarray, budget: float, floor: float,
               opts: OptimizerOptions):
    """Maximize an objective over the capped simplex by projected gradient
    (or supergradient) ascent with Armijo backtracking.

    The line search evaluates values only; a fresh gradient is computed
    once per accepted step.  Exits on the projected-gradient stationarity
    test, on a relative-improvement floor (``progress_tol``), or with a
    warning flag when no ascent step can be found.  Never returns a point
    with a lower objective than the start.
    """
    x = project_capped_simplex(x0, budget, floor)
    f = value_fn(x)
    warn = False
    stationary = False
    step = None
    it = 0
    for it in range(1, opts.max_pg + 1):
        g = grad_fn(x)
        gnorm = float(np.linalg.norm(g))
        probe = budget / (gnorm + _TINY)
        if step is None:
            step = opts.step_init * probe
        s_test = min(step, probe)
        x_probe = project_capped_simplex(x + s_test * g, budget, floor)
        if float(np.linalg.norm(x - x_probe)) <= opts.pg_tol * s_test * max(gnorm, 1.0):
            stationary = True
            break
        accepted = False
        s = step
        fallback = None
        for _ in range(opts.max_backtracks):
            x_new = project_capped_simplex(x + s * g, budget, floor)
            d = x_new - x
            dn = float(np.linalg.norm(d))
            if dn == 0.0 or dn <= opts.pg_tol * budget:
                break
            f_new = value_fn(x_new)
            if f_new >= f + opts.armijo_c * float(g @ d):
                accepted = True
                break
            if f_new > f and (fallback is None or f_new > fallback[1]):
                fallback = (x_new, f_new)
            s *= opts.step_shrink
        if not accepted:
            if fallback is not None:
                # ascent without sufficient increase: typical at a kink of a
                # pointwise-min objective; still a valid monotone step
                x_new, f_new = fallback
            else:
                warn = bool(np.linalg.norm(x - project_capped_simplex(
                    x + s * g, budget, floor)) > opts.pg_tol * budget)
                stationary = not warn
                break
        gain = f_new - f
        x, f = x_new, f_new
        step = s * opts.step_grow
        if gain <= opts.progress_tol * max(1.0, abs(f)):
            break
    return x, f, SubproblemInfo(bound_value=float(f), iterations=it,
                                stationary=stationary, line_search_failed=warn)


def _project_simplex_sum1(v: np.ndarray) -> np.ndarray:
    """Euclidean projection onto the probability simplex {x >= 0, sum(x) = 1}."""
    n = v.size
    us = np.sort(v)[::-1]
    css = np.cumsum(us) - 1.0
    idx = np.arange(1, n + 1)
    rho = int(np.nonzero(us - css / idx > 0)[0][-1])
    return np.maximum(v - css[rho] / (rho + 1), 0.0)


def _min_norm_direction(grads: np.ndarray) -> np.ndarray:
    """Minimum-norm element of the convex hull of the rows of ``grads``.

    This is the steepest-ascent direction of a pointwise-min of smooth
    functions whose active gradients are the rows; a vanishing result
    certifies first-order stationarity.
    """
    n_active = grads.shape[0]
    if n_active == 1:
        return grads[0]
    if n_active == 2:
        diff = grads[0] - grads[1]
        dd = float(diff @ diff)
        t = 0.5 if dd == 0.0 else min(1.0, max(0.0, float(grads[0] @ diff) / dd))
        return grads[0] - t * diff
    q = grads @ grads.T
    lam = np.full(n_active, 1.0 / n_active)
    lip = 2.0 * float(np.linalg.norm(q, 2)) + _TINY
    for _ in range(200):
        lam = _project_simplex_sum1(lam - 2.0 * (q @ lam) / lip)
    return lam @ grads


def _golden_max(fun, lo: float, hi: float, tol: float, max_iter: int = 200):
    """Golden-section maximization on [lo, hi]; returns the best point seen."""
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = fun(c), fun(d)
    best_x, best_f = (c, fc) if fc >= fd else (d, fd)
    it = 0
    while b - a > tol and it < max_iter:
        it += 1
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = fun(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = fun(d)
        if fc > best_f:
            best_x, best_f = c, fc
        if fd > best_f:
            best_x, best_f = d, fd
    for cand in (lo, hi):
        fcand = fun(cand)
        if fcand > best_f:
            best_x, best_f = cand, fcand
    return best_x, best_f, it


def _resolve_floor(opts: OptimizerOptions, p_max_w: float) -> float:
    return opts.eps_floor if opts.eps_floor is not None else 1e-12 * p_max_w


def solve_subproblem_sumrate(eta_m0: np.ndarray, context: BlockContext,
                             opts: OptimizerOptions | None = None):
    """Maximize the summed surrogate rates over the block's capped simplex.

    Returns (eta_m_star, info); the surrogate is expanded at ``eta_m0`` and
    the achieved surrogate value is never below its value at the start.
    """
    opts = opts or OptimizerOptions()
    floor = _resolve_floor(opts, context.p_max_w)
    budget = max(context.budget, context.n_vars * floor * (1.0 + 1e-9))
    x0 = project_capped_simplex(np.asarray(eta_m0, dtype=float), budget, floor)
    exp = context.expand(x0)
    d_sum = exp.dg2_0.sum(axis=0)
    c_sum = float(exp.g2_0.sum())

    if context.n_vars == 1:
        def fun(t):
            g1, _ = context.g1_eval(np.array([t]), need_grad=False)
            return float(g1.sum()) - c_sum - float(d_sum[0]) * (t - x0[0])
        hi = max(budget, floor)
        tol = max(opts.pg_tol * (hi - floor), 1e-15 * max(hi, 1.0))
        t_star, f_star, it = _golden_max(fun, floor, hi, tol)
        if fun(x0[0]) > f_star:
            t_star, f_star = x0[0], fun(x0[0])
        return np.array([t_star]), SubproblemInfo(f_star, it, True, False)

    def value_fn(x):
        g1, _ = context.g1_eval(x, need_grad=False)
        return float(g1.sum()) - c_sum - float(d_sum @ (x - x0))

    def grad_fn(x):
        _, dg1 = context.g1_eval(x, need_grad=True)
        return dg1.sum(axis=0) - d_sum

    x, _, info = _pg_ascent(value_fn, grad_fn, x0, budget, floor, opts)
    return x, info


def solve_subproblem_maxmin(eta_m0: np.ndarray, context: BlockContext,
                            opts: OptimizerOptions | None = None):
    """Maximize the minimum surrogate rate over the block's capped simplex.

    Projected supergradient ascent on the concave pointwise minimum; the
    supergradient comes from the lowest-index user within ``inner_tol``
    (relative) of the minimum.  Returns (eta_m_star, t_star, info) with
    t_star the achieved minimum surrogate rate.
    """
    opts = opts or OptimizerOptions()
    floor = _resolve_floor(opts, context.p_max_w)
    budget = max(context.budget, context.n_vars * floor * (1.0 + 1e-9))
    x0 = project_capped_simplex(np.asarray(eta_m0, dtype=float), budget, floor)
    exp = context.expand(x0)

    def bound_vals(x, need_grad=False):
        g1, dg1 = context.g1_eval(x, need_grad)
        return g1 - exp.g2_0 - exp.dg2_0 @ (x - x0), dg1

    if context.n_vars == 1:
        def fun(t):
            vals, _ = bound_vals(np.array([t]))
            return float(vals.min())
        hi = max(budget, floor)
        tol = max(opts.pg_tol * (hi - floor), 1e-15 * max(hi, 1.0))
        t_star, f_star, it = _golden_max(fun, floor, hi, tol)
        if fun(x0[0]) > f_star:
            t_star, f_star = x0[0], fun(x0[0])
        return (np.array([t_star]), f_star,
                SubproblemInfo(f_star, it, True, False))

    def value_fn(x):
        vals, _ = bound_vals(x)
        return float(vals.min())

    def grad_fn(x):
        # ascent direction: steepest ascent of the pointwise minimum over
        # the near-active users (single active user reduces to the plain
        # lowest-index supergradient the stationarity test is defined with);
        # the activity window is fixed so tightening inner_tol cannot
        # degenerate the direction into a zigzagging single gradient
        vals, dg1 = bound_vals(x, need_grad=True)
        fmin = float(vals.min())
        thresh = fmin + _ACTIVE_WINDOW * max(1.0, abs(fmin))
        active = np.nonzero(vals <= thresh)[0]
        return _min_norm_direction(dg1[active] - exp.dg2_0[active])

    x, t_star, info = _pg_ascent(value_fn, grad_fn, x0, budget, floor, opts)
    return x, float(t_star), info


def _feasibility_residual(eta: np.ndarray, p_max_w: float) -> float:
    over = float(np.maximum(eta.sum(axis=0) - p_max_w, 0.0).max(initial=0.0))
    neg = float(np.maximum(-eta, 0.0).max(initial=0.0))
    return over + neg


def _blocks(link_gains: LinkGains, granularity: str):
    served = link_gains.cluster.served_by_ap
    if granularity == "ap":
        return [(m, list(users), f"ap{m}") for m, users in enumerate(served) if users]
    return [(m, [k], f"ap{m}:ms{k}")
            for m, users in enumerate(served) for k in users]


def _optimize(kind: str, eta_init, context: RateContext,
              opts: OptimizerOptions | None):
    opts = opts or OptimizerOptions()
    opts.validate()
    link = context.link_gains
    cluster = link.cluster
    p_max = context.p_max_w
    floor = _resolve_floor(opts, p_max)

    if eta_init is None:
        eta_init = PowerMatrix.uniform(cluster, p_max)
    eta = np.array(eta_init.eta if isinstance(eta_init, PowerMatrix) else eta_init,
                   dtype=float)
    # lift on-support powers to the floor so every sqrt derivative exists
    for m, users in enumerate(cluster.served_by_ap):
        if users:
            eta[list(users), m] = project_capped_simplex(eta[list(users), m],
                                                         p_max, floor)

    def objective(rates: np.ndarray) -> float:
        return float(rates.sum()) if kind == "sumrate" else float(rates.min())

    from .linkmodel import all_user_rates

    trace = OptTrace()
    obj = objective(all_user_rates(link, eta, context.sigma_z2, context.W).per_user)
    trace.append(0, "init", obj, _feasibility_residual(eta, p_max))

    blocks = _blocks(link, opts.block_granularity)
    converged = False
    for outer in range(1, opts.max_outer + 1):
        obj_sweep = obj
        for m, users, label in blocks:
            bctx = BlockContext(link, eta, m, context.sigma_z2, context.W,
                                p_max, users=users)
            x = eta[users, m]
            for _ in range(opts.max_inner):
                if kind == "sumrate":
                    x_new, info = solve_subproblem_sumrate(x, bctx, opts)
                else:
                    x_new, _, info = solve_subproblem_maxmin(x, bctx, opts)
                if info.line_search_failed:
                    trace.warnings += 1
                obj_new = objective(bctx.rates(x_new))
                if obj_new < obj - 1e-12 * max(1.0, abs(obj)):
                    # the surrogate overshot the true objective (it is only a
                    # bound at the expansion point); damp the step -- the
                    # surrogate is tangent there, so a short enough move in
                    # the same direction still ascends the true objective
                    d = x_new - x
                    for _damp in range(12):
                        d *= 0.5
                        x_try = x + d
                        obj_try = objective(bctx.rates(x_try))
                        if obj_try > obj + 1e-12 * max(1.0, abs(obj)):
                            x_new, obj_new = x_try, obj_try
                            break
                    else:
                        break  # block-wise stall: keep the current value
                moved = float(np.linalg.norm(x_new - x))
                x = x_new
                rel = abs(obj_new - obj) / max(1.0, abs(obj))
                obj = obj_new
                eta[users, m] = x
                trace.append(outer, label, obj, _feasibility_residual(eta, p_max))
                if rel <= opts.inner_tol or moved == 0.0:
                    break
            eta[users, m] = x
        if abs(obj - obj_sweep) <= opts.outer_tol * max(abs(obj_sweep), _TINY):
            converged = True
            break
    trace.converged = converged

    # snap numerically-floored powers to exact zero (revert if that would
    # take the objective below the last recorded value)
    snapped = eta.copy()
    snapped[snapped < 10.0 * floor] = 0.0
    obj_snapped = objective(all_user_rates(link, snapped, context.sigma_z2,
                                           context.W).per_user)
    if obj_snapped >= obj - 1e-9 * max(1.0, abs(obj)):
        eta = snapped
    return PowerMatrix(eta=eta), trace


def optimize_sumrate(eta_init, context: RateContext,
                     opts: OptimizerOptions | None = None):
    """Block-alternating sum-rate maximization; returns (PowerMatrix, OptTrace).

    The recorded true sum-rate never decreases along the trace; the
    ``converged`` flag on the trace is False if the outer iteration cap was
    reached first.
    """
    return _optimize("sumrate", eta_init, context, opts)


def optimize_maxmin(eta_init, context: RateContext,
                    opts: OptimizerOptions | None = None):
    """Block-alternating minimum-rate maximization; returns (PowerMatrix, OptTrace)."""
    return _optimize("maxmin", eta_init, context, opts)


@dataclass(frozen=True)
class BoundReport:
    """Measured surrogate properties around one expansion point.

    All quantities are relative: ``p2_gap`` is the tightness mismatch at the
    expansion point, ``p1_violation`` the largest amount by which the
    surrogate exceeded the true rate over the sampled feasible points, and
    ``p3_mismatch`` the gradient disagreement with central finite
    differences of the true rate.
    """

    p1_violation: float
    p2_gap: float
    p3_mismatch: float
    n_samples: int


def sample_capped_simplex(rng: np.random.Generator, n: int, budget: float,
                          floor: float, n_samples: int) -> np.ndarray:
    """Uniform samples from {x >= floor, sum(x) <= budget}, shape (n_samples, n)."""
    total = budget - n * floor
    if total < 0:
        raise DomainError("budget too small for the floor")
    e = rng.exponential(size=(n_samples, n + 1))
    return floor + total * e[:, :n] / e.sum(axis=1, keepdims=True)


def verify_bound_properties(context: BlockContext, eta_m0: np.ndarray,
                            n_samples: int, seed) -> BoundReport:
    """Sample the surrogate around ``eta_m0`` and report its properties.

    ``eta_m0`` must be feasible for the block with entries well above the
    power floor (the gradient check perturbs each coordinate).
    """
    rng = np.random.default_rng(seed)
    x0 = np.asarray(eta_m0, dtype=float)
    exp = context.expand(x0)
    rates0 = context.rates(x0)
    bound0 = context.bound_rates(x0, exp)

    def denom(*vals):
        return max(1e-12, *(abs(v) for v in vals))

    p2 = max(abs(bound0[k] - rates0[k]) / denom(rates0[k])
             for k in range(rates0.size))

    floor = 1e-12 * context.budget
    samples = sample_capped_simplex(rng, context.n_vars, context.budget,
                                    floor, n_samples)
    p1 = 0.0
    for x in samples:
        rates = context.rates(x)
        bound = context.bound_rates(x, exp)
        for k in range(rates.size):
            p1 = max(p1, (bound[k] - rates[k]) / denom(rates[k], rates0[k]))

    dg1_0, _ = context.dc_grads(x0)
    analytic = dg1_0 - exp.dg2_0                       # (K, n)
    fd = np.zeros_like(analytic)
    for i in range(context.n_vars):
        h = 1e-6 * max(x0[i], 1e-2 * context.budget)
        h = min(h, 0.5 * x0[i]) if x0[i] > 0 else h
        xp = x0.copy(); xp[i] += h
        xm = x0.copy(); xm[i] -= h
        fd[:, i] = (context.rates(xp) - context.rates(xm)) / (2.0 * h)
    p3 = 0.0
    for k in range(analytic.shape[0]):
        scale = max(float(np.linalg.norm(fd[k])), 1e-12)
        p3 = max(p3, float(np.linalg.norm(analytic[k] - fd[k])) / scale)

    return BoundReport(p1_violation=float(max(p1, 0.0)), p2_gap=float(p2),
                       p3_mismatch=float(p3), n_samples=int(n_samples))
