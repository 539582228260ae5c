"""Offline solvers and robustness checkers.

Implements exact brute force, plain greedy, the slack-tolerant approximate
greedy rule (pick anything within r_j of the best gain), its distorted
counterpart for BP objectives, and the closed-form approximation ratios the
robustness guarantees are checked against.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import combinations
from typing import Optional, Sequence

import numpy as np

from .bp import BPObjective
from .errors import OracleInputError, SearchSpaceTooLargeError
from .oracles import GroundSet, SetFunctionOracle

BRUTE_FORCE_CAP = 2_000_000

SLACK_POLICIES = ("zero", "worst-feasible", "random-feasible")


@dataclass
class SlackSchedule:
    """Per-step slack radii r_j >= 0 plus the rule for picking inside the slack ball.

    worst-feasible takes the minimum-gain item still within r_j of the best
    (the adversarial reading); random-feasible draws uniformly among them.
    """

    r: Sequence[float]
    policy: str = "worst-feasible"

    def __post_init__(self):
        self.r = [float(x) for x in self.r]
        if any(x < 0 for x in self.r):
            raise OracleInputError("slack radii must be nonnegative")
        if self.policy not in SLACK_POLICIES:
            raise OracleInputError(f"unknown slack policy {self.policy!r}")

    @classmethod
    def zero(cls, k: int) -> "SlackSchedule":
        return cls([0.0] * k, "zero")

    def radius(self, j: int) -> float:
        if self.policy == "zero":
            return 0.0
        return self.r[j]


@dataclass
class AlphaRatios:
    """Offline approximation ratios used as alpha-regret scalings."""

    alpha_bp: float
    alpha_ws: float
    alpha_dist: float
    alpha_dist_weak: float
    alpha_naive: float


def alpha_ratios(kappa_f: float, kappa_g: float, gamma: float, zeta: float) -> AlphaRatios:
    """Closed forms with the singular limits (kappa_f or zeta -> 0) taken analytically."""
    for label, x in (("kappa_f", kappa_f), ("kappa_g", kappa_g),
                     ("gamma", gamma), ("zeta", zeta)):
        if not 0.0 <= x <= 1.0:
            raise OracleInputError(f"{label} = {x} outside [0, 1]")
    if kappa_f == 0.0:
        bp = 1.0 - kappa_g
    else:
        bp = -math.expm1(-(1.0 - kappa_g) * kappa_f) / kappa_f
    if zeta == 0.0:
        ws = gamma
    else:
        ws = -math.expm1(-zeta * gamma) / zeta
    dist = min(1.0 - kappa_f / math.e, 1.0 - kappa_g)
    dist_weak = min(1.0 - 1.0 / math.e, 1.0 - kappa_g)
    naive = -math.expm1(-(1.0 - kappa_g))
    return AlphaRatios(bp, ws, dist, dist_weak, naive)


def brute_force_opt(h: SetFunctionOracle, V: GroundSet, k: int) -> tuple[frozenset, float]:
    """Exact maximizer over sets of size exactly k (WLOG for monotone h).

    Ties break to the lexicographically smallest id sequence, which is the
    enumeration order of itertools.combinations.
    """
    n = V.n
    if k > n:
        raise OracleInputError(f"k = {k} exceeds ground set size {n}")
    if k == 0:
        return frozenset(), h(())
    if math.comb(n, k) > BRUTE_FORCE_CAP:
        raise SearchSpaceTooLargeError(
            f"C({n}, {k}) = {math.comb(n, k)} exceeds cap {BRUTE_FORCE_CAP}")
    best_set, best_val = None, -np.inf
    for ids in combinations(range(n), k):
        val = h(ids)
        if val > best_val:
            best_set, best_val = ids, val
    return frozenset(best_set), float(best_val)


def greedy(h: SetFunctionOracle, V: GroundSet, k: int) -> list[int]:
    """Plain greedy: argmax marginal gain each step, lowest id on ties."""
    sel, _ = approximate_greedy(h, V, k, SlackSchedule.zero(k), rng=None)
    return sel


def approximate_greedy(h: SetFunctionOracle, V: GroundSet, k: int,
                       slack: SlackSchedule,
                       rng: Optional[np.random.Generator]) -> tuple[list[int], list[float]]:
    """Greedy under the slack rule: any v with h(v|S) >= max gain - r_j is legal.

    Returns the ordered selection and the realized slacks (max gain minus the
    chosen gain, the quantity the robustness bounds accumulate).
    """
    n = V.n
    if k > n:
        raise OracleInputError(f"k = {k} exceeds ground set size {n}")
    if len(slack.r) < k and slack.policy != "zero":
        raise OracleInputError("slack schedule shorter than k")
    selected: list[int] = []
    mask = 0
    realized: list[float] = []
    pool = list(range(n))
    for j in range(k):
        gains = [(h.gain_mask(v, mask), v) for v in pool]
        chosen = _slack_select(gains, slack.radius(j), slack.policy, rng)
        gmax = max(gv for gv, _ in gains)
        gain_chosen = next(gv for gv, v in gains if v == chosen)
        realized.append(gmax - gain_chosen)
        selected.append(chosen)
        mask |= 1 << chosen
        pool.remove(chosen)
    return selected, realized


def distorted_greedy(bp: BPObjective, V: GroundSet, k: int,
                     slack: SlackSchedule,
                     rng: Optional[np.random.Generator]) -> tuple[list[int], list[float]]:
    """Approximate greedy on the distorted gains pi_j instead of the raw BP gains."""
    n = V.n
    if k > n:
        raise OracleInputError(f"k = {k} exceeds ground set size {n}")
    dob = bp.distorted(k)
    selected: list[int] = []
    mask = 0
    realized: list[float] = []
    pool = list(range(n))
    for j in range(k):
        gains = [(dob.pi_gain_mask(v, mask, j), v) for v in pool]
        chosen = _slack_select(gains, slack.radius(j), slack.policy, rng)
        gmax = max(gv for gv, _ in gains)
        gain_chosen = next(gv for gv, v in gains if v == chosen)
        realized.append(gmax - gain_chosen)
        selected.append(chosen)
        mask |= 1 << chosen
        pool.remove(chosen)
    return selected, realized


def _slack_select(gains: list[tuple[float, int]], radius: float, policy: str,
                  rng: Optional[np.random.Generator]) -> int:
    gmax = max(gv for gv, _ in gains)
    if radius == 0.0:
        # zero slack degenerates to greedy; canonicalize to the lowest-id argmax
        return min(v for gv, v in gains if gv == gmax)
    feasible = sorted((gv, v) for gv, v in gains if gv >= gmax - radius)
    if policy == "worst-feasible":
        return feasible[0][1]
    if policy == "random-feasible":
        if rng is None:
            raise OracleInputError("random-feasible policy needs an rng")
        if len(feasible) == 1:
            return feasible[0][1]
        return feasible[int(rng.integers(len(feasible)))][1]
    return min(v for gv, v in gains if gv == gmax)


@dataclass
class RobustBoundReport:
    """Outcome of repeated slack-injected runs against one instance."""

    which: str
    alpha: float
    h_opt: float
    rows: list[dict] = field(default_factory=list)
    violations: int = 0
    tightest_margin: float = float("inf")


def check_robust_bound(instance, V: GroundSet, k: int, trials: int,
                       policy: str, which: str,
                       rng: np.random.Generator,
                       slack_scale: Optional[float] = None,
                       constants: Optional[dict] = None) -> RobustBoundReport:
    """Stress one of the robustness guarantees on a single instance.

    which = "bp":   approximate greedy vs alpha_bp   (instance: BPObjective)
    which = "ws":   approximate greedy vs alpha_ws   (instance: oracle; gamma/zeta
                    brute-forced unless passed in constants)
    which = "dist": distorted greedy   vs alpha_dist (instance: BPObjective)

    Each trial draws fresh slack radii, runs the slack-injected algorithm and
    checks h(S) + sum of realized slacks >= alpha * h(S*).
    """
    from .curvature import weak_submod_report

    constants = constants or {}
    if which in ("bp", "dist"):
        if not isinstance(instance, BPObjective):
            raise OracleInputError(f"which={which!r} expects a BPObjective")
        h = instance.total
        kf, kg = instance.curvatures()
        ratios = alpha_ratios(kf, kg, 1.0, 0.0)
        alpha = ratios.alpha_bp if which == "bp" else ratios.alpha_dist
    elif which == "ws":
        h = instance
        if "gamma" in constants:
            gamma, zeta = constants["gamma"], constants["zeta"]
        else:
            rep = weak_submod_report(h, V)
            gamma, zeta = rep.gamma, rep.zeta
        alpha = alpha_ratios(0.0, 0.0, gamma, zeta).alpha_ws
    else:
        raise OracleInputError(f"unknown bound {which!r}")

    _, h_opt = brute_force_opt(h, V, k)
    if slack_scale is None:
        slack_scale = 0.5 * max(h.gain_mask(v, 0) for v in range(V.n))
    report = RobustBoundReport(which=which, alpha=alpha, h_opt=h_opt)
    tol = 1e-9 * max(1.0, abs(alpha * h_opt))
    for trial in range(trials):
        r = rng.uniform(0.0, slack_scale, size=k)
        schedule = SlackSchedule(r, policy)
        if which == "dist":
            sel, realized = distorted_greedy(instance, V, k, schedule, rng)
        else:
            sel, realized = approximate_greedy(h, V, k, schedule, rng)
        h_alg = h(sel)
        slack_sum = float(sum(realized))
        margin = h_alg + slack_sum - alpha * h_opt
        if margin < -tol:
            report.violations += 1
        report.tightest_margin = min(report.tightest_margin, margin)
        report.rows.append({
            "trial": trial, "alpha": alpha, "h_opt": h_opt, "h_alg": h_alg,
            "slack_sum": slack_sum, "margin": margin,
        })
    return report
