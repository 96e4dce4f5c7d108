"""Three-level block coordinate solver for sparse-group penalized losses.

Outer level: build the quadratic model of the loss at the iterate, let the
middle level minimize the penalized model, then take an Armijo backtracking
step on the true objective along the resulting direction.

Middle level: cyclic block coordinate descent on the penalized quadratic
model.  Each visit either zeroes the block (subdifferential test), runs the
inner loop, or skips the block entirely when the screening bound shows the
test cannot fail yet.

Inner level: cyclic one-dimensional minimizations inside an active block,
with a proximal escape step for the nonsmooth stall at zero.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from .blocks import BlockStructure, BlockVector
from .penalty import (
    block_is_zero,
    lambda_max,
    penalty_value,
    screening_threshold,
    soft_threshold,
    soft_threshold_normsq,
)

__all__ = [
    "SolverConfig",
    "SolveResult",
    "FitPath",
    "MiddleStats",
    "coordinate_min",
    "armijo_search",
    "inner_loop",
    "middle_loop",
    "kkt_residual",
    "solve_single",
    "fit_path",
    "default_lambda_grid",
]


@dataclass(frozen=True)
class SolverConfig:
    """Tolerances, line search constants, and feature switches.

    ``tol_outer`` is relative: the solve stops when the optimality residual
    drops below ``tol_outer`` times the sup norm of the starting gradient
    (floored at 1).  The middle and inner tolerances are absolute caps on the
    largest parameter move in a sweep.  ``inner_epsilon`` scales the
    stuck-at-zero radius of the inner loop by the block gradient magnitude.
    """

    tol_outer: float = 1e-5
    tol_middle: float = 1e-7
    tol_inner: float = 1e-9
    inner_epsilon: float = 1e-4
    armijo_a: float = 0.1
    armijo_b: float = 0.5
    armijo_t0: float = 1.0
    max_outer: int = 100
    max_middle: int = 15
    max_inner: int = 40
    use_hessian_bound: bool = True
    use_diagonal_hessian: bool = False
    audit_screening: bool = False
    n_lambda: int = 100
    lambda_min_ratio: float = 1e-4

    def __post_init__(self):
        if not 0.0 < self.armijo_a < 0.5:
            raise ValueError("armijo_a must lie in (0, 0.5), got %r" % (self.armijo_a,))
        if not 0.0 < self.armijo_b < 1.0:
            raise ValueError("armijo_b must lie in (0, 1), got %r" % (self.armijo_b,))
        if self.armijo_t0 <= 0.0:
            raise ValueError("armijo_t0 must be positive")
        for name in ("tol_outer", "tol_middle", "tol_inner", "inner_epsilon"):
            if getattr(self, name) <= 0.0:
                raise ValueError("%s must be positive" % name)
        for name in ("max_outer", "max_middle", "max_inner", "n_lambda"):
            if getattr(self, name) < 1:
                raise ValueError("%s must be at least 1" % name)
        if not 0.0 < self.lambda_min_ratio < 1.0:
            raise ValueError("lambda_min_ratio must lie in (0, 1)")


@njit(cache=True)
def coordinate_min(c, h, group_w, l1_w, r_sq):
    """Minimize ``c*x + h*x**2/2 + group_w*sqrt(x**2 + r_sq) + l1_w*|x|``.

    The one-dimensional subproblem of the inner loop: ``c`` collects the
    block gradient plus the off-coordinate quadratic coupling, ``h`` is the
    Hessian diagonal entry, ``r_sq`` the squared norm of the block's other
    coordinates.  A flat coordinate (h <= 0) stays put.
    """
    if group_w < 0.0 or l1_w < 0.0 or r_sq < 0.0:
        raise ValueError("group_w, l1_w and r_sq must be nonnegative")
    if h <= 0.0:
        return 0.0
    if group_w == 0.0 or r_sq == 0.0:
        # the group term degenerates to an extra |x| weight
        t = l1_w + group_w
        if c > t:
            return (t - c) / h
        if c < -t:
            return -(c + t) / h
        return 0.0
    a = abs(c) - l1_w
    if a <= 0.0:
        # group term is differentiable at 0 here, so 0 is stationary
        return 0.0
    # solve phi(u) = a + h*u + group_w*u/sqrt(u**2 + r_sq) = 0 on [-a/h, 0];
    # phi is strictly increasing with phi(-a/h) < 0 < phi(0) = a, so the root
    # is unique and a bracketed Newton iteration is safe
    lo = -a / h
    hi = 0.0
    u = 0.5 * lo
    tol = 1e-12 * max(1.0, a)
    for _ in range(200):
        s = math.sqrt(u * u + r_sq)
        phi = a + h * u + group_w * u / s
        if abs(phi) <= tol:
            break
        if phi > 0.0:
            hi = u
        else:
            lo = u
        slope = h + group_w * r_sq / (s * s * s)
        step = u - phi / slope
        if lo < step and step < hi:
            u = step
        else:
            u = 0.5 * (lo + hi)
        if hi - lo <= 1e-16 * max(1.0, -lo):
            break
    if c > 0.0:
        return u
    return -u


def armijo_search(objective, start_value, slope, config):
    """Backtracking line search with the sufficient-decrease rule.

    Returns ``(t, objective(t))`` for the first ``t`` in ``t0, t0*b, ...``
    with ``objective(t) <= start_value + t * a * slope``, or ``(None, None)``
    when the step underflows the stall floor.  ``slope`` must be negative.
    """
    if not slope < 0.0:
        raise ValueError("armijo search needs a negative slope, got %r" % (slope,))
    t = config.armijo_t0
    while t >= 1e-14:
        val = objective(t)
        if val <= start_value + t * config.armijo_a * slope:
            return t, val
        t *= config.armijo_b
    return None, None


@njit(cache=True)
def _inner_kernel(g, H, group_w, l1_w, z, eps, tol_inner, a, b, t0, max_inner):
    k = z.shape[0]
    sweeps = 0
    while sweeps < max_inner:
        sweeps += 1
        Hz = H @ z
        ssq = 0.0
        for j in range(k):
            ssq += z[j] * z[j]
        max_step = 0.0
        for j in range(k):
            zj = z[j]
            hj = H[j, j]
            c = g[j] + Hz[j] - hj * zj
            r = ssq - zj * zj
            if r < 0.0:
                r = 0.0
            znew = coordinate_min(c, hj, group_w, l1_w[j], r)
            if znew != zj:
                dz = znew - zj
                for i in range(k):
                    Hz[i] += H[i, j] * dz
                ssq += znew * znew - zj * zj
                z[j] = znew
                adz = abs(dz)
                if adz > max_step:
                    max_step = adz
        nrm = 0.0
        for j in range(k):
            nrm += z[j] * z[j]
        nrm = math.sqrt(nrm)
        if nrm < eps:
            Hz = H @ z
            rel = group_w * nrm
            for j in range(k):
                rel += g[j] * z[j] + 0.5 * z[j] * Hz[j] + l1_w[j] * abs(z[j])
            if rel >= 0.0:
                # no better than z = 0: escape along the minimal-norm
                # subdifferential direction, step sized in closed form
                kappa = np.empty(k)
                knormsq = 0.0
                for j in range(k):
                    gj = g[j]
                    w = l1_w[j]
                    if gj > w:
                        kj = gj - w
                    elif gj < -w:
                        kj = gj + w
                    else:
                        kj = 0.0
                    kappa[j] = kj
                    knormsq += kj * kj
                knorm = math.sqrt(knormsq)
                if knorm <= group_w:
                    for j in range(k):
                        z[j] = 0.0
                    return sweeps
                slope = knorm * (group_w - knorm)
                curv = 0.0
                for i in range(k):
                    row = 0.0
                    for j in range(k):
                        row += H[i, j] * kappa[j]
                    curv += kappa[i] * row
                t = t0
                if curv > 0.0:
                    t_max = 2.0 * (1.0 - a) * (-slope) / curv
                    while t > t_max and t > 1e-18:
                        t *= b
                for j in range(k):
                    z[j] = -t * kappa[j]
                continue
        if max_step < tol_inner:
            break
    return sweeps


def inner_loop(g, H, group_w, l1_w, z, config):
    """Cyclic coordinate minimization of one block's model, in place.

    Minimizes ``g @ z + z @ H @ z / 2 + group_w * ||z|| + l1_w @ |z|`` over
    ``z``.  Coordinatewise steps alone can stall at z = 0 where the group
    term is nonsmooth; when a sweep ends inside the zero radius with no
    improvement over z = 0, a line search along the soft-thresholded
    negative gradient restarts progress.  Returns the sweep count.
    """
    g = np.ascontiguousarray(g, dtype=np.float64)
    H = np.ascontiguousarray(H, dtype=np.float64)
    l1 = np.ascontiguousarray(np.broadcast_to(l1_w, z.shape), dtype=np.float64)
    eps = config.inner_epsilon * max(1.0, float(np.max(np.abs(g))))
    return int(
        _inner_kernel(
            g,
            H,
            float(group_w),
            l1,
            z,
            eps,
            config.tol_inner,
            config.armijo_a,
            config.armijo_b,
            config.armijo_t0,
            config.max_inner,
        )
    )


@dataclass
class MiddleStats:
    sweeps: int = 0
    inner_sweeps: int = 0
    screened: int = 0
    full_tests: int = 0
    converged: bool = False


def middle_loop(state, penalty, lam, config):
    """Block coordinate descent on the penalized quadratic model.

    ``state`` anchors the model (gradient, block Hessians, running offset).
    Returns ``(x, stats)`` with ``x`` the flat minimizer.

    Screening: a block sitting exactly at zero stays zero whenever the cheap
    bound on ``[H delta]_J`` is strictly below the block's gradient
    perturbation threshold, so neither the Hessian product nor the zero test
    is computed.  Thresholds depend only on the anchor gradient and are
    computed once per call.
    """
    structure = penalty.structure
    m = structure.m
    x = state.base.copy()
    stats = MiddleStats()
    screen = config.use_hessian_bound
    slices = [structure.slice(J) for J in range(m)]
    unpen = penalty.unpenalized
    radii = lam * (1.0 - penalty.alpha) * penalty.gamma
    xiw = lam * penalty.alpha * penalty.xi
    thresholds = None
    if screen:
        thresholds = np.zeros(m)
        for J in range(m):
            if not unpen[J]:
                thresholds[J] = screening_threshold(penalty, lam, J, state.q[slices[J]])
    # sweeps alternate between full passes and passes over the currently
    # nonzero blocks; convergence is only declared by a quiet full pass
    mode_full = True
    active = []
    while stats.sweeps < config.max_middle:
        stats.sweeps += 1
        max_change = 0.0
        for J in range(m) if mode_full else active:
            sl = slices[J]
            xJ = x[sl]
            if screen and not unpen[J] and thresholds[J] > 0.0 and not xJ.any():
                bound = state.bound_coeff(J)
                if bound < thresholds[J]:
                    stats.screened += 1
                    if config.audit_screening:
                        gJ = state.q[sl] + state.hess_delta_block_fresh(J)
                        if not block_is_zero(penalty, lam, J, gJ):
                            raise RuntimeError(
                                "screening misfire on block %d: bound %g < "
                                "threshold %g but the zero test fails" % (J, bound, thresholds[J])
                            )
                    continue
            H = state.hessian_block(J)
            g = state.q[sl] + state.hess_delta_block(J) - H @ xJ
            stats.full_tests += 1
            if not unpen[J] and math.sqrt(soft_threshold_normsq(g, xiw[sl])) <= radii[J]:
                znew = np.zeros(xJ.shape[0])
            else:
                znew = xJ.copy()
                stats.inner_sweeps += inner_loop(g, H, radii[J], xiw[sl], znew, config)
            change = float(np.max(np.abs(znew - xJ), initial=0.0))
            if change > 0.0:
                state.apply_block_change(J, znew - xJ)
                x[sl] = znew
                if change > max_change:
                    max_change = change
        if mode_full:
            active = [J for J in range(m) if x[slices[J]].any()]
            if max_change < config.tol_middle:
                stats.converged = True
                break
            mode_full = False
        elif max_change < config.tol_middle:
            mode_full = True
    return x, stats


def kkt_residual(penalty, lam, grad, beta):
    """Sup-norm violation of the first-order optimality conditions.

    Zero exactly at a minimizer of ``loss + lam * penalty``: active blocks
    are measured coordinatewise against the penalty subdifferential, blocks
    at zero through the slack of the zero test, unpenalized blocks by their
    plain gradient norm.
    """
    structure = penalty.structure
    grad = structure.check_flat(getattr(grad, "values", grad))
    beta = structure.check_flat(getattr(beta, "values", beta))
    worst = 0.0
    for J in range(structure.m):
        sl = structure.slice(J)
        g = grad[sl]
        b = beta[sl]
        if penalty.unpenalized[J]:
            r = float(np.max(np.abs(g), initial=0.0))
        else:
            v = lam * penalty.alpha * penalty.xi_block(J)
            radius = lam * (1.0 - penalty.alpha) * penalty.gamma[J]
            if not b.any():
                r = max(0.0, math.sqrt(soft_threshold_normsq(g, v)) - radius)
            else:
                nrm = float(np.linalg.norm(b))
                nz = b != 0.0
                stat = g[nz] + radius * b[nz] / nrm + v[nz] * np.sign(b[nz])
                r = float(np.max(np.abs(stat)))
                if not np.all(nz):
                    slack = np.abs(g[~nz]) - v[~nz]
                    r = max(r, float(np.max(slack, initial=0.0)))
                    r = max(r, 0.0)
        if r > worst:
            worst = r
    return worst


@dataclass
class SolveResult:
    """One penalized solve: final iterate plus convergence diagnostics."""

    beta: np.ndarray
    lam: float
    objective: float
    kkt: float
    status: str  # 'converged' | 'max_outer' | 'stalled'
    n_outer: int
    middle_sweeps: int
    inner_sweeps: int
    screened: int
    full_tests: int
    objective_trace: list
    step_sizes: list


def solve_single(loss, penalty, lam, beta0=None, config=None, kkt_scale=None):
    """Minimize ``loss(beta) + lam * penalty(beta)`` from a warm start.

    ``kkt_scale`` fixes the stopping scale; by default it is taken from the
    starting gradient, path drivers pass one shared scale so every point on
    the path stops at the same absolute residual.  Status 'stalled' means
    the objective stopped improving before the residual tolerance was met.
    """
    if config is None:
        config = SolverConfig()
    if lam < 0.0:
        raise ValueError("lam must be nonnegative")
    structure = loss.structure
    if beta0 is None:
        beta = np.zeros(structure.n)
    else:
        beta = structure.check_flat(getattr(beta0, "values", beta0)).copy()
    grad = loss.gradient(beta)
    if kkt_scale is None:
        kkt_scale = max(1.0, float(np.max(np.abs(grad), initial=0.0)))
    obj = loss.value(beta) + lam * penalty_value(penalty, beta)
    trace = [obj]
    steps = []
    n_outer = 0
    middle_sweeps = inner_sweeps = screened = full_tests = 0
    stalled = False
    while True:
        kkt = kkt_residual(penalty, lam, grad, beta)
        if kkt <= config.tol_outer * kkt_scale:
            status = "converged"
            break
        if stalled:
            status = "stalled"
            break
        if n_outer >= config.max_outer:
            status = "max_outer"
            break
        n_outer += 1
        state = loss.quadratic_state(beta, diagonal=config.use_diagonal_hessian)
        xhat, mstats = middle_loop(state, penalty, lam, config)
        middle_sweeps += mstats.sweeps
        inner_sweeps += mstats.inner_sweeps
        screened += mstats.screened
        full_tests += mstats.full_tests
        delta = xhat - beta
        if not delta.any():
            stalled = True
            continue
        slope = float(grad @ delta) + lam * (
            penalty_value(penalty, xhat) - penalty_value(penalty, beta)
        )
        if slope >= 0.0:
            stalled = True
            continue
        feval = loss.objective_evaluator(beta, delta)

        def trial(t, feval=feval, beta=beta, delta=delta):
            return feval(t) + lam * penalty_value(penalty, beta + t * delta)

        t, new_obj = armijo_search(trial, obj, slope, config)
        if t is None:
            stalled = True
            continue
        beta = beta + t * delta
        grad = loss.gradient(beta)
        steps.append(t)
        trace.append(new_obj)
        # numerically frozen objective: a further outer round cannot help
        if abs(obj - new_obj) <= 1e-14 * max(1.0, abs(obj)):
            stalled = True
        obj = new_obj
    return SolveResult(
        beta=beta,
        lam=float(lam),
        objective=obj,
        kkt=kkt,
        status=status,
        n_outer=n_outer,
        middle_sweeps=middle_sweeps,
        inner_sweeps=inner_sweeps,
        screened=screened,
        full_tests=full_tests,
        objective_trace=trace,
        step_sizes=steps,
    )


def default_lambda_grid(lam_max, n_lambda, min_ratio):
    """Log-spaced grid of ``n_lambda`` values from ``lam_max`` down to
    ``lam_max * min_ratio``, endpoints exact."""
    if lam_max <= 0.0:
        raise ValueError("lam_max must be positive, got %r" % (lam_max,))
    if n_lambda == 1:
        return np.array([float(lam_max)])
    expo = np.arange(n_lambda) / (n_lambda - 1.0)
    return lam_max * min_ratio ** expo


@dataclass
class FitPath:
    """Solutions along a decreasing lambda grid.

    Flat parameter vectors are stored one row per lambda; the helpers split
    off the intercept block.  ``theta`` and ``pi`` count nonzero feature
    blocks and nonzero feature parameters (the intercept never counts).
    """

    lambdas: np.ndarray
    betas: np.ndarray
    objective: np.ndarray
    kkt: np.ndarray
    statuses: list
    n_outer: np.ndarray
    middle_sweeps: np.ndarray
    inner_sweeps: np.ndarray
    screened: np.ndarray
    full_tests: np.ndarray
    theta: np.ndarray
    pi: np.ndarray
    structure: BlockStructure
    intercept_block: object = None

    @property
    def n_lambda(self):
        return int(self.lambdas.size)

    @property
    def feature_blocks(self):
        return [J for J in range(self.structure.m) if J != self.intercept_block]

    @property
    def feature_structure(self):
        return BlockStructure(tuple(self.structure.dims[J] for J in self.feature_blocks))

    def intercept(self, i):
        if self.intercept_block is None:
            return None
        return self.betas[i, self.structure.slice(self.intercept_block)].copy()

    def feature_flat(self, i):
        parts = [self.betas[i, self.structure.slice(J)] for J in self.feature_blocks]
        return np.concatenate(parts)

    def feature_vector(self, i):
        return BlockVector(self.feature_structure, self.feature_flat(i))


def fit_path(loss, penalty, config=None, lambdas=None):
    """Fit the penalized loss along a lambda path with warm starts.

    The intercept block (when the loss has one) starts at its closed-form
    optimum; the first grid point is the lambda_max computed from the
    gradient there, so the path opens at the null model.  An explicit
    ``lambdas`` grid is sorted decreasing and used as given.
    """
    if config is None:
        config = SolverConfig()
    structure = loss.structure
    beta = np.zeros(structure.n)
    if loss.intercept_block is not None:
        b0 = loss.optimize_intercept()
        if b0 is not None:
            beta[structure.slice(loss.intercept_block)] = b0
    grad0 = loss.gradient(beta)
    kkt_scale = max(1.0, float(np.max(np.abs(grad0), initial=0.0)))
    if lambdas is None:
        lam_top = lambda_max(penalty, grad0)
        lams = default_lambda_grid(lam_top, config.n_lambda, config.lambda_min_ratio)
    else:
        lams = np.asarray(lambdas, dtype=float)
        if lams.ndim != 1 or lams.size == 0:
            raise ValueError("lambda grid must be a nonempty 1-d sequence")
        if np.any(lams < 0.0):
            raise ValueError("lambda values must be nonnegative")
        lams = np.sort(lams)[::-1].copy()
    d = lams.size
    feature_blocks = [J for J in range(structure.m) if J != loss.intercept_block]
    betas = np.zeros((d, structure.n))
    objective = np.zeros(d)
    kkt = np.zeros(d)
    statuses = []
    n_outer = np.zeros(d, dtype=int)
    middle_sweeps = np.zeros(d, dtype=int)
    inner_sweeps = np.zeros(d, dtype=int)
    screened = np.zeros(d, dtype=int)
    full_tests = np.zeros(d, dtype=int)
    theta = np.zeros(d, dtype=int)
    pi = np.zeros(d, dtype=int)
    for i, lam in enumerate(lams):
        res = solve_single(
            loss, penalty, float(lam), beta0=beta, config=config, kkt_scale=kkt_scale
        )
        beta = res.beta
        betas[i] = beta
        objective[i] = res.objective
        kkt[i] = res.kkt
        statuses.append(res.status)
        n_outer[i] = res.n_outer
        middle_sweeps[i] = res.middle_sweeps
        inner_sweeps[i] = res.inner_sweeps
        screened[i] = res.screened
        full_tests[i] = res.full_tests
        for J in feature_blocks:
            blk = beta[structure.slice(J)]
            if blk.any():
                theta[i] += 1
                pi[i] += int(np.count_nonzero(blk))
    return FitPath(
        lambdas=lams,
        betas=betas,
        objective=objective,
        kkt=kkt,
        statuses=statuses,
        n_outer=n_outer,
        middle_sweeps=middle_sweeps,
        inner_sweeps=inner_sweeps,
        screened=screened,
        full_tests=full_tests,
        theta=theta,
        pi=pi,
        structure=structure,
        intercept_block=loss.intercept_block,
    )
