"""Self-contained dense solvers for the allocation problems.

- A two-phase primal simplex for linear programs in the form
      min c'x  s.t.  A x = b,  l <= x <= u  (all bounds finite),
  with Bland's rule throughout, so runs are deterministic and finite.
- A primal active-set method for strictly convex quadratic programs
      min 1/2 x'H x + g'x  s.t.  A x = b,  l <= x <= u.

Problem sizes here are tiny (a handful of rows, ~2n+1 variables), so bases
are refactorized with dense solves every iteration; no updates, no sparsity.
"""

from dataclasses import dataclass

import numpy as np

from .errors import Infeasible

BASIC = -1
LOWER = 0
UPPER = 1

_TOL = 1e-9


@dataclass
class SimplexResult:
    x: np.ndarray
    objective: float
    status: str  # always 'optimal'; infeasibility raises
    iterations: int
    residual: float
    warm: tuple  # (basis, vstat, art_signs) for re-solves on the same rows


def _phase(c, a, b, lower, upper, basis, vstat, max_iter):
    """Bland-rule pivoting to optimality; mutates basis and vstat in place."""
    m, ntot = a.shape
    iters = 0
    while True:
        if iters > max_iter:
            raise RuntimeError("simplex iteration limit exceeded")
        iters += 1
        x = np.where(vstat == UPPER, upper, lower)
        x[basis] = 0.0
        bmat = a[:, basis]
        xb = np.linalg.solve(bmat, b - a @ x)
        x[basis] = xb

        y = np.linalg.solve(bmat.T, c[basis])
        reduced = c - a.T @ y

        entering = -1
        for j in range(ntot):
            if vstat[j] == BASIC or lower[j] == upper[j]:
                continue
            if vstat[j] == LOWER and reduced[j] < -_TOL:
                entering = j
                break
            if vstat[j] == UPPER and reduced[j] > _TOL:
                entering = j
                break
        if entering < 0:
            return x, iters

        sigma = 1.0 if vstat[entering] == LOWER else -1.0
        w = np.linalg.solve(bmat, a[:, entering])

        t_best = upper[entering] - lower[entering]  # bound-flip step
        leave_pos = -1
        hit_upper = False
        for i in range(m):
            denom = sigma * w[i]
            vi = basis[i]
            if denom > _TOL:
                t = (xb[i] - lower[vi]) / denom
                goes_upper = False
            elif denom < -_TOL:
                t = (upper[vi] - xb[i]) / (-denom)
                goes_upper = True
            else:
                continue
            t = max(t, 0.0)
            if t < t_best - 1e-12 or (
                t <= t_best + 1e-12 and leave_pos >= 0 and vi < basis[leave_pos]
            ):
                t_best = t
                leave_pos = i
                hit_upper = goes_upper

        if leave_pos < 0:
            vstat[entering] = UPPER if vstat[entering] == LOWER else LOWER
            continue
        leaving = basis[leave_pos]
        vstat[leaving] = UPPER if hit_upper else LOWER
        basis[leave_pos] = entering
        vstat[entering] = BASIC


def _extend(a, art_signs):
    m = a.shape[0]
    return np.hstack([a, np.diag(art_signs)])


def solve_bounded_lp(c, a, b, lower, upper, warm=None, max_iter=5000):
    """Two-phase bounded-variable simplex.

    warm, when given, is the SimplexResult.warm of a previous solve over the
    same constraint rows; phase 1 is skipped and pivoting resumes from that
    basis (the old point must still satisfy the current bounds).  Raises
    Infeasible with the offending rows when the constraints cannot be met.
    """
    c = np.asarray(c, dtype=float)
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    lower = np.asarray(lower, dtype=float).copy()
    upper = np.asarray(upper, dtype=float).copy()
    m, n = a.shape
    if np.any(lower > upper + 1e-12):
        raise Infeasible("a variable's lower bound exceeds its upper bound")

    total_iters = 0
    if warm is None:
        vstat = np.full(n, LOWER, dtype=int)
        vstat[np.abs(upper) < np.abs(lower)] = UPPER
        x0 = np.where(vstat == UPPER, upper, lower)
        resid = b - a @ x0
        art_signs = np.where(resid >= 0.0, 1.0, -1.0)
        a_ext = _extend(a, art_signs)
        lower_ext = np.concatenate([lower, np.zeros(m)])
        upper_ext = np.concatenate([upper, np.abs(resid) + 1.0])
        c1 = np.concatenate([np.zeros(n), np.ones(m)])
        basis = np.arange(n, n + m)
        vstat = np.concatenate([vstat, np.full(m, BASIC, dtype=int)])

        x, it1 = _phase(c1, a_ext, b, lower_ext, upper_ext, basis, vstat, max_iter)
        total_iters += it1
        infeas = float(np.sum(x[n:]))
        if infeas > 1e-7 * max(1.0, float(np.abs(b).max(initial=0.0))):
            rows = tuple(int(j - n) for j in range(n, n + m) if x[j] > 1e-9)
            raise Infeasible(
                f"equality constraints cannot be met (residual {infeas:.3e})",
                rows=rows,
                residual=infeas,
            )
        # freeze artificials at zero; they stay in the tableau but are inert
        lower_ext[n:] = 0.0
        upper_ext[n:] = 0.0
    else:
        basis, vstat, art_signs = warm
        basis = np.array(basis, dtype=int)
        vstat = np.array(vstat, dtype=int)
        a_ext = _extend(a, art_signs)
        lower_ext = np.concatenate([lower, np.zeros(m)])
        upper_ext = np.concatenate([upper, np.zeros(m)])

    c_ext = np.concatenate([c, np.zeros(m)])
    x, it2 = _phase(c_ext, a_ext, b, lower_ext, upper_ext, basis, vstat, max_iter)
    total_iters += it2
    xs = x[:n]
    return SimplexResult(
        x=xs,
        objective=float(c @ xs),
        status="optimal",
        iterations=total_iters,
        residual=float(np.abs(a @ xs - b).max(initial=0.0)),
        warm=(basis, vstat, art_signs),
    )


def feasible_point(a, b, lower, upper):
    """A vertex of {A x = b, l <= x <= u}, via the phase-1 simplex."""
    n = np.asarray(a).shape[1]
    return solve_bounded_lp(np.zeros(n), a, b, lower, upper).x


@dataclass
class QPResult:
    x: np.ndarray
    objective: float
    status: str
    lam_eq: np.ndarray
    kkt_residual: float
    iterations: int


def solve_box_qp(h, g, a, b, lower, upper, x0=None, max_iter=300):
    """Primal active-set method for a strictly convex box/equality QP."""
    h = np.asarray(h, dtype=float)
    g = np.asarray(g, dtype=float)
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    m, n = a.shape

    if x0 is None:
        x = feasible_point(a, b, lower, upper)
    else:
        x = np.asarray(x0, dtype=float).copy()
    x = np.clip(x, lower, upper)

    bound_tol = 1e-10
    active = {}
    for i in range(n):
        if x[i] - lower[i] <= bound_tol:
            active[i] = LOWER
            x[i] = lower[i]
        elif upper[i] - x[i] <= bound_tol:
            active[i] = UPPER
            x[i] = upper[i]

    lam = np.zeros(m)
    for it in range(1, max_iter + 1):
        free = np.array([i for i in range(n) if i not in active], dtype=int)
        grad = h @ x + g
        p = np.zeros(n)
        solved = False
        if free.size:
            hff = h[np.ix_(free, free)]
            af = a[:, free]
            kkt = np.block([[hff, af.T], [af, np.zeros((m, m))]])
            rhs = np.concatenate([-grad[free], np.zeros(m)])
            try:
                sol = np.linalg.solve(kkt, rhs)
                if np.all(np.isfinite(sol)):
                    p[free] = sol[: free.size]
                    # the KKT block yields grad + H p = -A^T sol_lam on the
                    # free set; negate so that grad = A^T lam holds there and
                    # the reduced costs below read grad - A^T lam
                    lam = -sol[free.size :]
                    solved = True
            except np.linalg.LinAlgError:
                solved = False
        if not solved:
            # too few usable free directions: keep x, fit multipliers instead
            lam = np.linalg.lstsq(a.T, grad, rcond=None)[0]
            p[:] = 0.0

        if np.abs(p).max(initial=0.0) > 1e-11:
            alpha = 1.0
            blocker = -1
            blocker_side = LOWER
            for i in free:
                if p[i] > 1e-14:
                    room = (upper[i] - x[i]) / p[i]
                    side = UPPER
                elif p[i] < -1e-14:
                    room = (lower[i] - x[i]) / p[i]
                    side = LOWER
                else:
                    continue
                if room < alpha - 1e-14:
                    alpha = max(room, 0.0)
                    blocker = i
                    blocker_side = side
            x = x + alpha * p
            if blocker >= 0:
                active[blocker] = blocker_side
                x[blocker] = upper[blocker] if blocker_side == UPPER else lower[blocker]
            continue

        grad = h @ x + g
        mu = grad - a.T @ lam
        # lowest-index drop (Bland-style) so degenerate points cannot cycle
        drop = -1
        for i in sorted(active):
            viol = -mu[i] if active[i] == LOWER else mu[i]
            if viol > 1e-9:
                drop = i
                break
        if drop < 0:
            return QPResult(
                x=x,
                objective=float(0.5 * x @ h @ x + g @ x),
                status="optimal",
                lam_eq=lam,
                kkt_residual=_qp_kkt_residual(h, g, a, b, x, lam, active),
                iterations=it,
            )
        del active[drop]

    # Out of iterations: the current iterate is feasible, just not proven
    # optimal.  Callers on the control path need a usable point, not a crash.
    return QPResult(
        x=x,
        objective=float(0.5 * x @ h @ x + g @ x),
        status="iteration_limit",
        lam_eq=lam,
        kkt_residual=_qp_kkt_residual(h, g, a, b, x, lam, active),
        iterations=max_iter,
    )


def _qp_kkt_residual(h, g, a, b, x, lam, active):
    grad = h @ x + g
    mu = grad - a.T @ lam
    res = float(np.abs(a @ x - b).max(initial=0.0))
    for i in range(len(x)):
        if i in active:
            viol = -mu[i] if active[i] == LOWER else mu[i]
            res = max(res, viol, 0.0)
        else:
            res = max(res, abs(mu[i]))
    return res
