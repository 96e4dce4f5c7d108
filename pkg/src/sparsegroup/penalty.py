"""Penalty values and the closed-form subdifferential calculus behind them.

For a block with group weight ``a = lam * (1 - alpha) * gamma_J`` and
parameterwise thresholds ``v = lam * alpha * xi``, the subdifferential of the
penalized block objective at zero is the set ``a*B + z + diag(v)*T`` (B the
unit euclidean ball, T the unit box, z the smooth-part gradient).  Everything
the solver needs reduces to the entrywise soft-threshold map and the squared
norm of its output:

* zero lies in the set iff the squared norm is at most ``a**2`` (the block
  zero test),
* otherwise the minimal-norm point of the set is an explicit shrink of the
  soft-thresholded gradient (used for descent directions at zero),
* the boundary cases in ``lam`` and in a gradient-perturbation radius are
  piecewise quadratic scalar equations, walked breakpoint by breakpoint for
  ``lambda_max`` and the screening threshold.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

__all__ = [
    "penalty_value",
    "soft_threshold",
    "soft_threshold_normsq",
    "min_norm_point",
    "block_is_zero",
    "lambda_max",
    "screening_threshold",
    "PiecewiseQuadratic",
]


def penalty_value(pen, beta):
    """Evaluate the sparse group penalty at a flat vector or BlockVector."""
    values = getattr(beta, "values", beta)
    values = pen.structure.check_flat(values)
    group = 0.0
    for J in range(pen.structure.m):
        gJ = pen.gamma[J]
        if gJ != 0.0:
            group += gJ * math.sqrt(
                float(np.dot(values[pen.structure.slice(J)], values[pen.structure.slice(J)]))
            )
    l1 = float(np.dot(pen.xi, np.abs(values)))
    return (1.0 - pen.alpha) * group + pen.alpha * l1


def soft_threshold(z, thresh):
    """Entrywise shrink of ``z`` toward zero by ``thresh`` (clipped at zero).

    Returns the minimal-norm point of the box ``z + diag(thresh) * [-1, 1]^n``.
    """
    z = np.asarray(z, dtype=float)
    thresh = np.broadcast_to(np.asarray(thresh, dtype=float), z.shape)
    return np.sign(z) * np.maximum(np.abs(z) - thresh, 0.0)


@njit(cache=True)
def _shrunk_normsq(z, thresh):
    s = 0.0
    for i in range(z.shape[0]):
        a = abs(z[i]) - thresh[i]
        if a > 0.0:
            s += a * a
    return s


def soft_threshold_normsq(z, thresh):
    """Squared euclidean norm of ``soft_threshold(z, thresh)``."""
    z = np.ascontiguousarray(z, dtype=float)
    thresh = np.ascontiguousarray(np.broadcast_to(np.asarray(thresh, dtype=float), z.shape))
    return float(_shrunk_normsq(z, thresh))


def min_norm_point(radius, thresh, z):
    """Minimal-norm point of ``radius*B + z + diag(thresh)*T``.

    ``B`` is the unit euclidean ball and ``T`` the unit box.  Zero when the
    set contains the origin, otherwise the soft-thresholded ``z`` scaled by
    ``1 - radius / ||soft_threshold(z, thresh)||``.
    """
    if radius < 0:
        raise ValueError("radius must be nonnegative")
    kap = soft_threshold(z, thresh)
    normsq = float(np.dot(kap, kap))
    if normsq <= radius * radius:
        return np.zeros_like(kap)
    return (1.0 - radius / math.sqrt(normsq)) * kap


def block_is_zero(pen, lam, J, grad_J):
    """Whether zero is optimal for block ``J`` given its smooth gradient.

    Always false for an unpenalized block (such blocks are never screened;
    their optimality is a plain zero-gradient condition handled by the
    solver).
    """
    if lam < 0:
        raise ValueError("lam must be nonnegative")
    if pen.unpenalized[J]:
        return False
    grad_J = np.asarray(grad_J, dtype=float)
    v = lam * pen.alpha * pen.xi_block(J)
    a = lam * (1.0 - pen.alpha) * pen.gamma[J]
    return math.sqrt(soft_threshold_normsq(grad_J, v)) <= a


@dataclass(frozen=True)
class PiecewiseQuadratic:
    """Continuous piecewise quadratic on [0, inf).

    ``breakpoints`` holds the interval boundaries ``0 = b_0 <= b_1 < ...``;
    ``coeffs[k]`` is the (a, b, c) triple of ``a*x**2 + b*x + c`` on the
    interval starting at ``breakpoints[k]`` (the last interval is unbounded).
    """

    breakpoints: np.ndarray
    coeffs: np.ndarray

    def __post_init__(self):
        bp = np.ascontiguousarray(self.breakpoints, dtype=float)
        co = np.ascontiguousarray(self.coeffs, dtype=float)
        if bp.ndim != 1 or bp.size == 0 or bp[0] != 0.0:
            raise ValueError("breakpoints must start at 0")
        if np.any(np.diff(bp) <= 0):
            raise ValueError("breakpoints must be strictly increasing")
        if co.shape != (bp.size, 3):
            raise ValueError("need one (a, b, c) row per interval")
        bp.setflags(write=False)
        co.setflags(write=False)
        object.__setattr__(self, "breakpoints", bp)
        object.__setattr__(self, "coeffs", co)

    def value(self, x):
        x = float(x)
        if x < 0:
            raise ValueError("defined on [0, inf) only")
        k = int(np.searchsorted(self.breakpoints, x, side="right")) - 1
        a, b, c = self.coeffs[k]
        return (a * x + b) * x + c

    def _interval_root(self, k, lo, hi, increasing):
        """Root of interval k's quadratic inside [lo, hi], crossing zero in
        the direction given by ``increasing``.  Falls back to bisection when
        the closed form degenerates numerically."""
        a, b, c = self.coeffs[k]
        tol = 1e-9 * max(1.0, abs(lo), abs(hi))
        roots = []
        if abs(a) > 1e-14 * max(1.0, abs(b), abs(c)):
            disc = b * b - 4.0 * a * c
            if disc >= 0:
                s = math.sqrt(disc)
                # numerically stable pair
                q = -0.5 * (b + math.copysign(s, b))
                cand = {q / a}
                if q != 0.0:
                    cand.add(c / q)
                roots = [r for r in cand if lo - tol <= r <= hi + tol]
        elif abs(b) > 0:
            r = -c / b
            if lo - tol <= r <= hi + tol:
                roots = [r]
        if roots:
            pick = min(roots) if not increasing else max(roots)
            return float(min(max(pick, lo), hi))
        # degenerate coefficients but a sign change was detected: bisect
        f = self.value
        a_, b_ = lo, hi
        fa = f(a_)
        for _ in range(200):
            mid = 0.5 * (a_ + b_)
            fm = f(mid)
            if (fm <= 0) == (fa <= 0):
                a_, fa = mid, fm
            else:
                b_ = mid
            if b_ - a_ <= 1e-12 * max(1.0, abs(b_)):
                break
        return 0.5 * (a_ + b_)

    def first_nonpositive(self):
        """Smallest x >= 0 with value(x) <= 0, for a nonincreasing function.

        Returns None when the function stays positive.
        """
        bp = self.breakpoints
        for k in range(bp.size):
            lo = bp[k]
            hi = bp[k + 1] if k + 1 < bp.size else math.inf
            if self.value(lo) <= 0.0:
                return float(lo)
            a, b, c = self.coeffs[k]
            if math.isinf(hi):
                # nonincreasing tail: nonpositive eventually iff it decays
                if a < 0 or (a == 0 and b < 0):
                    return self._interval_root(k, lo, max(lo, 1.0) * 4.0 + _tail_bound(a, b, c), False)
                return None
            if self.value(hi) <= 0.0:
                return self._interval_root(k, lo, hi, False)
        return None

    def last_nonpositive(self):
        """Largest x with value <= 0, for a nondecreasing function that starts
        nonpositive and eventually turns positive.

        Returns None when value(0) > 0, inf when the function never turns
        positive.
        """
        if self.value(0.0) > 0.0:
            return None
        bp = self.breakpoints
        for k in range(bp.size):
            lo = bp[k]
            hi = bp[k + 1] if k + 1 < bp.size else math.inf
            a, b, c = self.coeffs[k]
            if math.isinf(hi):
                if self.value(lo) > 0.0:
                    return float(lo)
                if a > 0 or (a == 0 and b > 0):
                    return self._interval_root(k, lo, max(lo, 1.0) * 4.0 + _tail_bound(a, b, c), True)
                return math.inf
            if self.value(hi) > 0.0:
                if self.value(lo) > 0.0:
                    return float(lo)
                return self._interval_root(k, lo, hi, True)
        return math.inf


def _tail_bound(a, b, c):
    """Crude magnitude bound on the root of a*x^2+b*x+c in the tail."""
    if a != 0.0:
        return 2.0 * (abs(b) + math.sqrt(abs(c) * abs(a) + 1.0)) / abs(a) + 1.0
    if b != 0.0:
        return abs(c) / abs(b) + 1.0
    return 1.0


def _lambda_condition_pwq(alpha, gamma_J, xi_J, g_J):
    """psi(lam) = ||soft_threshold(g, lam*alpha*xi)||^2 - lam^2*(1-alpha)^2*gamma^2
    as a PiecewiseQuadratic in lam (nonincreasing)."""
    g = np.abs(np.asarray(g_J, dtype=float))
    w = alpha * np.asarray(xi_J, dtype=float)
    a_pen = (1.0 - alpha) * gamma_J

    live = (w > 0.0) & (g > 0.0)  # thresholded away at lam >= g_i / w_i
    fixed = (w == 0.0) & (g > 0.0)  # never thresholded away
    c_fixed = float(np.dot(g[fixed], g[fixed]))

    bps_sorted = np.sort(g[live] / w[live])
    order = np.argsort(g[live] / w[live], kind="stable")
    gs = g[live][order]
    ws = w[live][order]
    # suffix sums: coordinate at sorted position i is active on lam < bps_sorted[i]
    suf_w2 = np.concatenate([np.cumsum((ws * ws)[::-1])[::-1], [0.0]])
    suf_gw = np.concatenate([np.cumsum((gs * ws)[::-1])[::-1], [0.0]])
    suf_g2 = np.concatenate([np.cumsum((gs * gs)[::-1])[::-1], [0.0]])

    starts = np.concatenate([[0.0], np.unique(bps_sorted)])
    coeffs = np.empty((len(starts), 3))
    for row, s in enumerate(starts):
        i0 = int(np.searchsorted(bps_sorted, s, side="right"))
        coeffs[row, 0] = suf_w2[i0] - a_pen * a_pen
        coeffs[row, 1] = -2.0 * suf_gw[i0]
        coeffs[row, 2] = suf_g2[i0] + c_fixed
    return PiecewiseQuadratic(starts, coeffs)


def lambda_max(pen, grad0):
    """Smallest lam at which every penalized block is optimal at zero.

    ``grad0`` is the loss gradient at the path start (unpenalized blocks
    already at their optimum, penalized blocks at zero).  Raises when the
    structure has no penalized block, or when some block can never be zeroed
    (a zero-weight coordinate with a nonzero gradient inside a penalized
    block).
    """
    grad0 = pen.structure.check_flat(getattr(grad0, "values", grad0))
    blocks = pen.penalized_blocks()
    if not blocks:
        raise ValueError("no penalized blocks: lambda_max is undefined")
    out = 0.0
    for J in blocks:
        g = grad0[pen.structure.slice(J)]
        if not np.any(g):
            continue
        pwq = _lambda_condition_pwq(pen.alpha, pen.gamma[J], pen.xi_block(J), g)
        lam_J = pwq.first_nonpositive()
        if lam_J is None:
            raise ValueError(
                "block %d can never be zero under this penalty "
                "(zero-weight coordinate with nonzero gradient)" % J
            )
        out = max(out, lam_J)
    return out


def screening_threshold(pen, lam, J, q_J):
    """Largest uniform gradient perturbation keeping block ``J`` zero.

    The value t_J such that the block zero test still passes when ``|q_J|``
    grows entrywise by any x <= t_J.  Zero when the test already fails at
    x = 0.
    """
    if pen.unpenalized[J]:
        raise ValueError("block %d is unpenalized and is never screened" % J)
    q = np.abs(np.asarray(q_J, dtype=float))
    v = lam * pen.alpha * pen.xi_block(J)
    radius = lam * (1.0 - pen.alpha) * pen.gamma[J]
    if math.sqrt(soft_threshold_normsq(q, v)) > radius:
        return 0.0
    # psi(x) = ||soft_threshold(|q| + x, v)||^2 - radius^2, nondecreasing
    d = v - q  # coordinate i activates once x > d_i
    starts = [0.0]
    starts.extend(float(x) for x in np.unique(d[d > 0.0]))
    coeffs = np.empty((len(starts), 3))
    for row, lo in enumerate(starts):
        act = d <= lo
        k = int(np.count_nonzero(act))
        s1 = float(np.sum(-d[act]))  # sum of (q_i - v_i)
        s2 = float(np.dot(d[act], d[act]))
        coeffs[row] = (k, 2.0 * s1, s2 - radius * radius)
    pwq = PiecewiseQuadratic(np.asarray(starts), coeffs)
    t = pwq.last_nonpositive()
    if t is None:  # condition held at x=0 by construction; numeric guard
        return 0.0
    return t
