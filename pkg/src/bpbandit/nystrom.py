"""Sketched Gaussian-process posterior over a Nystrom subset of the history.

The state maintains, for the stored subset G of the observation history X:

    Lambda   = (K_GX K_XG + lam * K_GG)^-1
    y_proj   = K_GX y
    K_GG^-1

These defining identities are the contract and are tested against dense batch
recomputation.  Internally the state carries Cholesky factors of
A = K_GX K_XG + lam K_GG and of K_GG rather than explicit inverses: rank-one
factor updates and bordered appends are backward stable, whereas
Sherman-Morrison style inverse updates compound rounding error over long
runs.  Lambda and K_GG^-1 are materialized from the factors on demand.
Per-round arithmetic touches matrices of side |G| only, plus length-t kernel
columns against the full history in the rounds where G grows.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.linalg import solve_triangular

from .errors import NumericalError, OracleInputError
from .kernels import ContextPoint, KernelSpec, PointBlock, kernel_eval

JITTER_SCALE = 1e-10
VARIANCE_TOL = -1e-10
REDUNDANCY_TOL = 1e-8  # see NystromState.nystrom_select


@dataclass
class BetaSchedule:
    """Exploration coefficient beta_t.

    theoretical: sqrt(lam) * B + sqrt(4 log T + log(e + e t / lam) * d_eff);
    constant: a tuned constant, the default in simulations.
    """

    mode: str = "constant"
    value: float = 1.0
    B: float = 1.0
    lam: float = 1.0
    horizon: int = 1
    d_eff: float = 0.0

    def __post_init__(self):
        if self.mode not in ("constant", "theoretical"):
            raise OracleInputError(f"unknown beta mode {self.mode!r}")
        if self.mode == "constant" and self.value <= 0:
            raise OracleInputError("constant beta must be > 0")


def beta(schedule: BetaSchedule, t: int) -> float:
    if schedule.mode == "constant":
        return schedule.value
    if schedule.horizon < 1:
        raise OracleInputError("theoretical beta needs horizon T >= 1")
    if t < 0:
        raise OracleInputError("round index must be >= 0")
    lam, B = schedule.lam, schedule.B
    inner = 4.0 * math.log(schedule.horizon) + \
        math.log(math.e + math.e * t / lam) * schedule.d_eff
    return math.sqrt(lam) * B + math.sqrt(inner)


@dataclass
class PosteriorEstimate:
    """Posterior mean and standard deviation per candidate."""

    mean: np.ndarray
    std: np.ndarray


class NystromState:
    """Online sketched-GP state for one simulation run (mutate sequentially)."""

    def __init__(self, kernel: KernelSpec, lam: float, eta: float, b: float):
        if lam <= 0:
            raise OracleInputError("regularization lam must be > 0")
        if eta < 0 or b < 0:
            raise OracleInputError("eta and budget b must be >= 0")
        self.kernel = kernel
        self.lam = float(lam)
        self.eta = float(eta)
        self.b = float(b)

        self.G = PointBlock()            # stored points
        self.clipped_scores: list[float] = []   # min(b * tau, 1) at storage time
        self.score_log: list[float] = []        # every tau_hat, stored or not
        self.X = PointBlock()            # full history
        self.y = np.zeros(0)
        self.t = 0

        self.K_gg = np.zeros((0, 0))
        self.y_proj = np.zeros(0)
        self.K_xg = np.zeros((0, 0))     # t x |G| cross matrix
        self._chol_A = np.zeros((0, 0))  # chol of K_GX K_XG + lam K_GG
        self._chol_K = np.zeros((0, 0))  # chol of K_GG
        self._chol_P = np.zeros((0, 0))  # chol of diag(s) K_GG diag(s) + lam I

        self._pending_grew = False
        self._new_cross: Optional[tuple[np.ndarray, float]] = None
        self._round_mark: Optional[tuple[int, int]] = None
        self.counters = {"kernel_evals": 0, "mult_adds": 0,
                         "variance_clamps": 0, "redundant_skips": 0}
        self.round_log: list[dict] = []

    # -- defining identities, materialized from the factors -------------------

    @property
    def Lambda(self) -> np.ndarray:
        """(K_GX K_XG + lam K_GG)^-1."""
        return self._inv_from_chol(self._chol_A)

    @property
    def K_gg_inv(self) -> np.ndarray:
        return self._inv_from_chol(self._chol_K)

    @staticmethod
    def _inv_from_chol(L: np.ndarray) -> np.ndarray:
        g = L.shape[0]
        if g == 0:
            return np.zeros((0, 0))
        Z = solve_triangular(L, np.eye(g), lower=True)
        out = Z.T @ Z
        return 0.5 * (out + out.T)

    def _solve_A(self, rhs: np.ndarray) -> np.ndarray:
        z = solve_triangular(self._chol_A, rhs, lower=True)
        return solve_triangular(self._chol_A.T, z, lower=False)

    # -- leverage scores and point selection ----------------------------------

    def leverage_score(self, x: ContextPoint) -> float:
        """Estimated ridge leverage of x against the weighted stored set.

        With w = s * k_G(x) (s the stored clipped scores), P = diag(s) K_GG
        diag(s) + lam I and d = k(x,x) - w' P^-1 w, the score reduces to
        (1 + eta) * d / (d + lam); the empty-G case gives d = k(x,x).
        """
        g = len(self.G)
        c = kernel_eval(self.kernel, x, x)
        self.counters["kernel_evals"] += 1
        if g == 0:
            d = c
            a = np.zeros(0)
        else:
            a = self.G.cross(self.kernel, x)
            self.counters["kernel_evals"] += g
            w = np.asarray(self.clipped_scores) * a
            z = solve_triangular(self._chol_P, w, lower=True)
            self.counters["mult_adds"] += g * g + 2 * g
            d = c - float(z @ z)
        d = max(d, 0.0)
        self._last_query = (x, a, c)
        return (1.0 + self.eta) * d / (d + self.lam)

    def nystrom_select(self, x: ContextPoint, rng: np.random.Generator) -> bool:
        """Score x, flip the storage coin, and grow G on success.

        The score is always appended to the log.  Probability min(b * tau, 1);
        coins are only drawn for probabilities strictly inside (0, 1), so b = 0
        and b = inf consume no randomness.

        A point whose kernel column is (numerically) inside the span of the
        stored set is declined even when the coin says store: kernels with a
        finite-dimensional component make K_GG exactly singular on such
        points, and storing them leaves the projected posterior unchanged
        anyway.
        """
        if self._pending_grew:
            raise OracleInputError("previous selection has no observation yet")
        self._round_mark = (self.counters["kernel_evals"], self.counters["mult_adds"])
        tau = self.leverage_score(x)
        self.score_log.append(tau)
        if math.isinf(self.b):
            p = 1.0
        else:
            p = min(self.b * tau, 1.0)
        grew = p >= 1.0 or (p > 0.0 and float(rng.random()) < p)
        if grew:
            a, c = self._last_query[1], self._last_query[2]
            if len(self.G) and self._is_redundant(a, c):
                self.counters["redundant_skips"] += 1
                grew = False
        if grew:
            self._grow(x, a, c, p)
        return grew

    def _is_redundant(self, a: np.ndarray, c: float) -> bool:
        g = len(self.G)
        w = solve_triangular(self._chol_K, a, lower=True)
        self.counters["mult_adds"] += g * g
        resid = c - float(w @ w)
        return resid <= REDUNDANCY_TOL * max(c, 1.0)

    def _grow(self, x: ContextPoint, a: np.ndarray, c: float, clipped: float) -> None:
        g = len(self.G)
        s_old = np.asarray(self.clipped_scores)
        self.G.append(x)
        self.clipped_scores.append(clipped)
        self.K_gg = _bordered(self.K_gg, a, c)
        self._chol_K = _chol_append(self._chol_K, a, c)
        self._chol_P = _chol_append(self._chol_P, clipped * (s_old * a),
                                    clipped * clipped * c + self.lam)
        self.counters["mult_adds"] += 2 * g * g + 4 * g
        self._pending_grew = True
        self._new_cross = (a, c)

    # -- observation updates ---------------------------------------------------

    def update_observation(self, x: ContextPoint, y: float) -> None:
        """Fold (x, y) into the factors and y_proj, then append to history."""
        if self._pending_grew:
            a, c = self._new_cross
            self._update_grown(x, float(y), a, c)
            self._pending_grew = False
            self._new_cross = None
        else:
            g = len(self.G)
            last = getattr(self, "_last_query", None)
            if last is not None and last[0] is x and last[1].shape[0] == g:
                a = last[1]  # reuse the column the leverage pass computed
            elif g:
                a = self.G.cross(self.kernel, x)
                self.counters["kernel_evals"] += g
            else:
                a = np.zeros(0)
            if g:
                self._chol_A = _chol_rank_one_update(self._chol_A, a)
                self.y_proj = self.y_proj + y * a
                self.counters["mult_adds"] += 3 * g * g + 2 * g
            self.K_xg = _append_row(self.K_xg, a)
        self.X.append(x)
        self.y = np.append(self.y, float(y))
        self.t += 1
        mark = self._round_mark or (0, 0)
        self.round_log.append({
            "t": self.t, "g": len(self.G), "grew": self._last_round_grew(),
            "kernel_evals": self.counters["kernel_evals"] - mark[0],
            "mult_adds": self.counters["mult_adds"] - mark[1],
        })
        self._round_mark = None

    def _update_grown(self, x: ContextPoint, y: float, a: np.ndarray, c: float) -> None:
        g_old = len(self.G) - 1
        t_old = self.t
        # kernel column of the new stored point against the full old history
        u = self.X.cross(self.kernel, x) if t_old else np.zeros(0)
        self.counters["kernel_evals"] += t_old

        # A' = [[A + a a', K_GX u + (c + lam) a], [..., u'u + c^2 + lam c]]
        if g_old:
            self._chol_A = _chol_rank_one_update(self._chol_A, a)
        q = self.K_xg.T @ u + (c + self.lam) * a
        corner = float(u @ u) + c * c + self.lam * c
        self._chol_A = _chol_append(self._chol_A, q, corner)
        self.counters["mult_adds"] += (g_old * t_old + 2 * t_old
                                       + 5 * g_old * g_old + 4 * g_old)

        # y_proj gains the new observation and the new projection row K_X(x)' y
        tail = float(u @ self.y) + c * y
        self.y_proj = np.concatenate([self.y_proj + y * a, [tail]])

        self.K_xg = _append_col(self.K_xg, u)
        self.K_xg = _append_row(self.K_xg, np.concatenate([a, [c]]))

    def _last_round_grew(self) -> bool:
        return len(self.G) > 0 and self.G.points[-1] is self.X.points[-1]

    # -- posterior --------------------------------------------------------------

    def mv_calc(self, user: Optional[np.ndarray], selected,
                candidates: Sequence[int],
                item_features: Optional[np.ndarray] = None) -> PosteriorEstimate:
        """Posterior mean / std for every candidate v at context z = (user, selected).

        mean(v) = k_G(x_v)' Lambda y_proj
        var(v)  = k(x_v, x_v) / lam + k_G(x_v)' (Lambda - K_GG^-1 / lam) k_G(x_v)
        """
        g = len(self.G)
        if g == 0:
            raise OracleInputError("posterior undefined with an empty Nystrom set")
        points = [candidate_point(user, selected, v, item_features) for v in candidates]
        K_gc = np.column_stack([self.G.cross(self.kernel, p) for p in points])
        diag = np.array([kernel_eval(self.kernel, p, p) for p in points])
        self.counters["kernel_evals"] += (g + 1) * len(points)
        w_y = self._solve_A(self.y_proj)
        mean = K_gc.T @ w_y
        S_a = solve_triangular(self._chol_A, K_gc, lower=True)
        S_k = solve_triangular(self._chol_K, K_gc, lower=True)
        var = diag / self.lam + (S_a * S_a).sum(axis=0) - (S_k * S_k).sum(axis=0) / self.lam
        self.counters["mult_adds"] += 2 * g * g * len(points) + 2 * g * g
        scale = max(1.0, float(diag.max(initial=0.0)) / self.lam)
        if (var < -1e-3 * scale).any():
            raise NumericalError(f"posterior variance {var.min()} is badly negative")
        beyond_tol = var < VARIANCE_TOL * scale
        if beyond_tol.any():
            self.counters["variance_clamps"] += int(beyond_tol.sum())
        var = np.clip(var, 0.0, None)
        return PosteriorEstimate(mean=mean, std=np.sqrt(var))

    # -- diagnostics -------------------------------------------------------------

    def snapshot(self) -> dict:
        g = len(self.G)
        out = {"t": self.t, "g_size": g, "lam": self.lam, "eta": self.eta,
               "b": self.b, "kernel_evals": self.counters["kernel_evals"],
               "mult_adds": self.counters["mult_adds"],
               "redundant_skips": self.counters["redundant_skips"]}
        if g:
            diag_a = np.diag(self._chol_A)
            diag_k = np.diag(self._chol_K)
            out["cond_A_est"] = float((diag_a.max() / diag_a.min()) ** 2)
            out["cond_K_gg_est"] = float((diag_k.max() / diag_k.min()) ** 2)
        return out

    def dump_score_log(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["round", "tau_hat"])
            for i, tau in enumerate(self.score_log, start=1):
                w.writerow([i, repr(tau)])


def candidate_point(user: Optional[np.ndarray], selected, v: int,
                    item_features: Optional[np.ndarray]) -> ContextPoint:
    vec = None if item_features is None else item_features[v]
    return ContextPoint(user_features=user, selected=frozenset(selected),
                        item=int(v), item_features=vec)


def exact_posterior(X: Sequence[ContextPoint], y: Sequence[float],
                    kernel: KernelSpec, lam: float,
                    x: ContextPoint) -> tuple[float, float]:
    """Dense kernel-ridge posterior, the test oracle for the sketched path.

    mean = k_X(x)' (K_XX + lam I)^-1 y
    var  = (k(x,x) - k_X(x)' (K_XX + lam I)^-1 k_X(x)) / lam
    """
    if len(X) == 0:
        raise OracleInputError("exact posterior needs at least one observation")
    block = PointBlock()
    for p in X:
        block.append(p)
    K = np.empty((len(X), len(X)))
    for j, p in enumerate(X):
        K[:, j] = block.cross(kernel, p)
    kx = block.cross(kernel, x)
    c = kernel_eval(kernel, x, x)
    A = K + lam * np.eye(len(X))
    try:
        sol = np.linalg.solve(A, np.column_stack([np.asarray(y, dtype=float), kx]))
    except np.linalg.LinAlgError:
        A = A + JITTER_SCALE * (np.trace(A) / len(X)) * np.eye(len(X))
        try:
            sol = np.linalg.solve(A, np.column_stack([np.asarray(y, dtype=float), kx]))
        except np.linalg.LinAlgError as exc:
            raise NumericalError("posterior solve is singular after jitter") from exc
    mean = float(kx @ sol[:, 0])
    var = (c - float(kx @ sol[:, 1])) / lam
    return mean, max(var, 0.0)


# -- small dense-linear-algebra helpers ---------------------------------------

def _chol_rank_one_update(L: np.ndarray, x: np.ndarray) -> np.ndarray:
    """chol(L L' + x x') via Givens sweeps; stable for rank-one additions."""
    L = L.copy()
    x = np.asarray(x, dtype=float).copy()
    n = L.shape[0]
    for k in range(n):
        lkk = L[k, k]
        r = math.hypot(lkk, x[k])
        if r == 0.0:
            raise NumericalError("zero pivot in rank-one factor update")
        c = r / lkk
        s = x[k] / lkk
        L[k, k] = r
        if k + 1 < n:
            L[k + 1:, k] = (L[k + 1:, k] + s * x[k + 1:]) / c
            x[k + 1:] = c * x[k + 1:] - s * L[k + 1:, k]
    return L


def _chol_append(L: np.ndarray, col: np.ndarray, diag: float) -> np.ndarray:
    """Factor of [[M, col], [col', diag]] given L = chol(M); jitters a
    nonpositive pivot at the scale the defining matrices carry."""
    g = L.shape[0]
    if g == 0:
        if diag <= 0:
            diag += JITTER_SCALE
            if diag <= 0:
                raise NumericalError("nonpositive pivot in factor append")
        return np.array([[math.sqrt(diag)]])
    w = solve_triangular(L, col, lower=True)
    d = diag - float(w @ w)
    if d <= 0:
        d += JITTER_SCALE * (float((L * L).sum()) + diag) / (g + 1)
        if d <= 0:
            raise NumericalError("factor lost positive definiteness after jitter")
    out = np.zeros((g + 1, g + 1))
    out[:g, :g] = L
    out[g, :g] = w
    out[g, g] = math.sqrt(d)
    return out


def _bordered(M: np.ndarray, col: np.ndarray, corner: float) -> np.ndarray:
    g = M.shape[0]
    out = np.zeros((g + 1, g + 1))
    out[:g, :g] = M
    out[:g, g] = col
    out[g, :g] = col
    out[g, g] = corner
    return out


def _append_row(M: np.ndarray, row: np.ndarray) -> np.ndarray:
    t, g = M.shape
    if row.shape[0] != g:
        raise OracleInputError("row width disagrees with the cross matrix")
    out = np.empty((t + 1, g))
    out[:t] = M
    out[t] = row
    return out


def _append_col(M: np.ndarray, col: np.ndarray) -> np.ndarray:
    t, g = M.shape
    if col.shape[0] != t:
        raise OracleInputError("column height disagrees with the cross matrix")
    out = np.empty((t, g + 1))
    out[:, :g] = M
    out[:, g] = col
    return out
