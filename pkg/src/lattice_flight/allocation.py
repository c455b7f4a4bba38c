"""Thrust allocation: map a commanded wrench onto per-agent thrusts.

The allocation matrix couples per-agent vertical thrusts to the body torques
(x, y) and the collective thrust.  Four metrics are offered for resolving the
redundancy: plain pseudo-inverse, minimax thrust (ft), a maneuvering
efficiency blend (fe), and battery-aware quadratic weighting (fb).  The LP
and QP solves use the in-package dense solvers; problems are tiny (n <= 8
agents in practice).
"""

import enum
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import BatteryBelowCutoff, Infeasible, RankDeficient, RankDeficientWarning
from .solvers import solve_bounded_lp, solve_box_qp

# agents sitting within 1 cm of a torque axis get their f_M reciprocal
# clamped at 1/ARM_MIN so the efficiency LP stays bounded
ARM_MIN = 0.01


class Metric(str, enum.Enum):
    PSEUDO_INVERSE = "pinv"
    FT = "ft"
    FE = "fe"
    FB = "fb"


@dataclass
class MetricParams:
    epsilon: float = 0.67
    alpha_min: float = 0.1
    alpha_max: float = 1.0
    tau_x_max: float = 0.09
    tau_y_max: float = 0.09
    delta_volt: float = 2.6
    batteries: np.ndarray | None = None

    def __post_init__(self):
        if not 0.0 <= self.epsilon <= 1.0:
            raise ValueError(f"epsilon must lie in [0, 1], got {self.epsilon}")
        if not 0.0 <= self.alpha_min < self.alpha_max <= 1.0:
            raise ValueError(
                f"need 0 <= alpha_min < alpha_max <= 1, got "
                f"({self.alpha_min}, {self.alpha_max})"
            )
        if self.tau_x_max <= 0.0 or self.tau_y_max <= 0.0:
            raise ValueError("torque normalizers must be positive")
        if self.batteries is not None:
            self.batteries = np.asarray(self.batteries, dtype=float)


@dataclass
class AllocationProblem:
    gamma: np.ndarray  # 3 x n; rows: y-arms, negated x-arms, ones
    rhs: np.ndarray  # (tau_x^c, tau_y^c, T^d)
    t_max: float
    metric: Metric = Metric.FT
    params: MetricParams = field(default_factory=MetricParams)

    def __post_init__(self):
        self.gamma = np.asarray(self.gamma, dtype=float)
        self.rhs = np.asarray(self.rhs, dtype=float)
        if self.gamma.ndim != 2 or self.gamma.shape[0] != 3:
            raise ValueError(f"gamma must be 3 x n, got shape {self.gamma.shape}")
        if self.n < 3:
            raise ValueError(f"allocation needs at least 3 agents, got {self.n}")
        if self.rhs.shape != (3,) or not np.all(np.isfinite(self.rhs)):
            raise ValueError("rhs must be 3 finite values (tau_x, tau_y, T_total)")
        if not self.t_max > 0.0:
            raise ValueError(f"t_max must be positive, got {self.t_max}")
        self.metric = Metric(self.metric)

    @property
    def n(self) -> int:
        return self.gamma.shape[1]


@dataclass
class AllocationResult:
    thrusts: np.ndarray
    moments: np.ndarray
    objective: float
    residual: float
    status: str  # 'optimal' or 'degraded'


def build_gamma(geometry) -> np.ndarray:
    """Allocation matrix from resolved geometry.

    Column i is [y_i, -x_i, 1] with (x_i, y_i) the agent displacement from
    the mass center in the structure frame: the torque each unit of vertical
    thrust produces about the body x and y axes, plus its unit share of the
    collective.  Warns when agents are collinear through the mass center
    (rank < 3): torque about one horizontal axis is then uncontrollable.
    """
    disp = np.asarray(geometry.displacements, dtype=float)
    n = disp.shape[0]
    gamma = np.vstack([disp[:, 1], -disp[:, 0], np.ones(n)])
    if np.linalg.matrix_rank(gamma) < 3:
        warnings.warn(
            "allocation matrix is rank deficient: agents are collinear "
            "through the mass center",
            RankDeficientWarning,
            stacklevel=2,
        )
    return gamma


def _clamped_result(thrusts, gamma, rhs, objective):
    t = np.asarray(thrusts, dtype=float)
    residual = float(np.abs(gamma @ t - rhs).max(initial=0.0))
    status = "optimal" if residual <= 1e-9 else "degraded"
    return AllocationResult(
        thrusts=t,
        moments=np.zeros(t.size),
        objective=objective,
        residual=residual,
        status=status,
    )


def solve_pseudo_inverse(problem: AllocationProblem) -> AllocationResult:
    """Minimum-Euclidean-norm thrusts, clamped to [0, t_max] afterward.

    Clamping can break the wrench equality; the residual reports that
    honestly and the status drops to 'degraded' when it exceeds 1e-9.
    """
    gamma, rhs = problem.gamma, problem.rhs
    gram = gamma @ gamma.T
    if np.linalg.matrix_rank(gamma) < 3:
        raise RankDeficient("allocation matrix has rank < 3; pseudo-inverse undefined")
    t = gamma.T @ np.linalg.solve(gram, rhs)
    t = np.clip(t, 0.0, problem.t_max)
    return _clamped_result(t, gamma, rhs, objective=float(t @ t))


def _epigraph_arrays(problem):
    """LP data over variables [T_0..T_{n-1}, t, s_0..s_{n-1}] with
    rows Gamma T = rhs and T_i - t + s_i = 0 (so s_i >= 0 encodes T_i <= t)."""
    n = problem.n
    a = np.zeros((3 + n, 2 * n + 1))
    a[:3, :n] = problem.gamma
    a[3:, :n] = np.eye(n)
    a[3:, n] = -1.0
    a[3:, n + 1 :] = np.eye(n)
    b = np.concatenate([problem.rhs, np.zeros(n)])
    lower = np.zeros(2 * n + 1)
    upper = np.full(2 * n + 1, problem.t_max)
    return a, b, lower, upper


def _row_labels(n):
    return ["tau_x", "tau_y", "thrust_sum"] + [f"T_{i}<=t" for i in range(n)]


def _solve_epigraph(problem, cost):
    a, b, lower, upper = _epigraph_arrays(problem)
    try:
        return solve_bounded_lp(cost, a, b, lower, upper), a, b, lower, upper
    except Infeasible as exc:
        labels = _row_labels(problem.n)
        named = tuple(labels[r] for r in exc.rows)
        raise Infeasible(
            f"no thrust vector in [0, {problem.t_max}]^{problem.n} meets the "
            f"commanded wrench; conflicting rows: {named}",
            rows=exc.rows,
            residual=exc.residual,
        ) from None


def solve_ft(problem: AllocationProblem) -> AllocationResult:
    """Minimize the worst-case thrust max_i T_i subject to the wrench.

    Epigraph LP (minimize t with T_i <= t), then a deterministic tie-break:
    among vertices attaining the same minimax value, pick the
    lexicographically smallest thrust vector by re-minimizing T_0, T_1, ...
    in turn with each preceding coordinate pinned.  The collective-thrust row
    already fixes the total, so a plain sum tie-break would be vacuous.
    """
    n = problem.n
    cost = np.zeros(2 * n + 1)
    cost[n] = 1.0
    res, a, b, lower, upper = _solve_epigraph(problem, cost)
    t_star = res.x[n]
    lower[n] = upper[n] = t_star
    for k in range(n):
        stage = np.zeros(2 * n + 1)
        stage[k] = 1.0
        res = solve_bounded_lp(stage, a, b, lower, upper, warm=res.warm)
        lower[k] = upper[k] = res.x[k]
    thrusts = res.x[:n].copy()
    out = _clamped_result(thrusts, problem.gamma, problem.rhs, objective=float(t_star))
    return out


def saturation(x: float, alpha_min: float, alpha_max: float) -> float:
    """0 below alpha_min, 1 above alpha_max, linear ramp between."""
    if x <= alpha_min:
        return 0.0
    if x >= alpha_max:
        return 1.0
    return (x - alpha_min) / (alpha_max - alpha_min)


def maneuver_activations(problem: AllocationProblem) -> tuple[float, float]:
    """(eps_x, eps_y): how hard the commanded roll/pitch torques push against
    their normalizers, each passed through the saturation ramp."""
    p = problem.params
    eps_x = saturation(abs(problem.rhs[0]) / p.tau_x_max, p.alpha_min, p.alpha_max)
    eps_y = saturation(abs(problem.rhs[1]) / p.tau_y_max, p.alpha_min, p.alpha_max)
    return eps_x, eps_y


def solve_fe(problem: AllocationProblem) -> AllocationResult:
    """Maneuvering-efficiency blend: eps*max_i T_i + (1-eps)*f_M.

    f_M charges each agent's thrust by the inverse of its torque arms, scaled
    by how saturated the commanded torques are; pushing thrust toward
    long-arm agents buys control authority during maneuvers.  When the f_M
    term vanishes (hover, or eps = 1) this is exactly the minimax problem,
    so we delegate to solve_ft including its tie-break.
    """
    n = problem.n
    eps = problem.params.epsilon
    eps_x, eps_y = maneuver_activations(problem)
    if eps == 1.0 or (eps_x == 0.0 and eps_y == 0.0):
        return solve_ft(problem)
    arms_x = np.maximum(np.abs(problem.gamma[0]), ARM_MIN)
    arms_y = np.maximum(np.abs(problem.gamma[1]), ARM_MIN)
    fm = eps_x / arms_x + eps_y / arms_y
    cost = np.zeros(2 * n + 1)
    cost[:n] = (1.0 - eps) * fm
    cost[n] = eps
    res, _, _, _, _ = _solve_epigraph(problem, cost)
    thrusts = res.x[:n].copy()
    return _clamped_result(
        thrusts, problem.gamma, problem.rhs, objective=float(res.objective)
    )


def battery_weights(batteries: np.ndarray, delta_volt: float) -> np.ndarray:
    """w_i = 1/(1 - e^(delta - B_i)); grows without bound as B_i -> delta."""
    b = np.asarray(batteries, dtype=float)
    low = np.flatnonzero(b <= delta_volt)
    if low.size:
        raise BatteryBelowCutoff(
            f"agents {low.tolist()} at or below the {delta_volt} V cutoff "
            f"(readings {b[low].tolist()})"
        )
    return 1.0 / (1.0 - np.exp(delta_volt - b))


def solve_fb(problem: AllocationProblem) -> AllocationResult:
    """Battery-aware allocation: minimize sum_i w_i T_i^2.

    Weights blow up as an agent's voltage approaches the cutoff, shifting
    load onto healthier agents.  Solved as a box-constrained QP.
    """
    p = problem.params
    if p.batteries is None:
        raise ValueError("the battery metric needs per-agent voltage readings")
    if p.batteries.shape != (problem.n,):
        raise ValueError(
            f"expected {problem.n} battery readings, got {p.batteries.shape}"
        )
    w = battery_weights(p.batteries, p.delta_volt)
    n = problem.n
    h = 2.0 * np.diag(w)
    qp = solve_box_qp(
        h,
        np.zeros(n),
        problem.gamma,
        problem.rhs,
        np.zeros(n),
        np.full(n, problem.t_max),
    )
    out = _clamped_result(
        qp.x, problem.gamma, problem.rhs, objective=float(qp.objective)
    )
    return out


_SOLVERS = {
    Metric.PSEUDO_INVERSE: solve_pseudo_inverse,
    Metric.FT: solve_ft,
    Metric.FE: solve_fe,
    Metric.FB: solve_fb,
}


# When the commanded wrench (tau_x, tau_y, sum T) is unattainable, give up
# collective thrust before roll/pitch torque: a thrust shortfall sags the
# altitude loop, but a torque shortfall tips the vehicle over.
_FALLBACK_PRIORITY = np.array([10.0, 10.0, 1.0])


def _least_squares_fallback(problem: AllocationProblem) -> AllocationResult:
    """Closest box point to the commanded wrench (weighted ridge LS QP)."""
    gamma, rhs, n = problem.gamma, problem.rhs, problem.n
    row_scale = np.linalg.norm(gamma, axis=1)
    row_scale[row_scale < 1e-12] = 1.0
    w = _FALLBACK_PRIORITY / row_scale
    gw = gamma * w[:, None]
    rw = rhs * w
    ridge = 1e-6 * max(float(np.trace(gw.T @ gw)) / n, 1e-12)
    h = 2.0 * (gw.T @ gw + ridge * np.eye(n))
    g = -2.0 * gw.T @ rw
    x0 = np.clip(np.linalg.lstsq(gamma, rhs, rcond=None)[0], 0.0, problem.t_max)
    qp = solve_box_qp(
        h, g, np.zeros((0, n)), np.zeros(0), np.zeros(n), np.full(n, problem.t_max), x0=x0
    )
    err = gamma @ qp.x - rhs
    return AllocationResult(
        thrusts=qp.x,
        moments=np.zeros(n),
        objective=float(err @ err),
        residual=float(np.abs(err).max(initial=0.0)),
        status="degraded",
    )


def allocate(problem: AllocationProblem) -> AllocationResult:
    """Solve under the problem's metric; on an infeasible wrench, fall back
    to the least-squares box projection and mark the result degraded.
    (A flying system must always output something.)"""
    try:
        return _SOLVERS[problem.metric](problem)
    except Infeasible:
        return _least_squares_fallback(problem)


def total_yaw_and_distribute(
    tau_z: float, thrusts, geometry, flex, m_max: float = 0.005
) -> np.ndarray:
    """Per-agent yaw moments M_i.

    Bent rods make each vertical thrust leak a yaw torque zeta_i*T_i
    (zeta_i = gamma_i*(y_i cos a_i - x_i sin a_i)); the rotor moments must
    supply what remains of the commanded yaw torque.  The sum is split
    equally, each share clamped to the hardware moment limit.
    """
    t = np.asarray(thrusts, dtype=float)
    disp = np.asarray(geometry.displacements, dtype=float)
    alphas = np.asarray(geometry.alphas, dtype=float)
    gam = np.asarray(flex.gamma, dtype=float)
    zeta = gam * (disp[:, 1] * np.cos(alphas) - disp[:, 0] * np.sin(alphas))
    total = tau_z - float(zeta @ t)
    share = np.clip(total / t.size, -m_max, m_max)
    return np.full(t.size, share)
