"""Interactive environment and the online UCB algorithms.

One run is strictly sequential (bandit feedback); trials across seeds share
only immutable oracles and can execute concurrently.  Selection ties always
break to the lowest item id, and the very first action of a run is uniform
over the arriving context's pool.
"""
from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .bp import BPObjective
from .curvature import weak_submod_report
from .errors import FeedbackError, InfeasibleBaselineError, OracleInputError
from .instances import DeskInstance
from .kernels import ContextPoint, KernelSpec, effective_dimension, kernel_eval
from .nystrom import BetaSchedule, NystromState, beta, candidate_point
from .offline import alpha_ratios, brute_force_opt, greedy

FEEDBACK_MODES = ("monolithic", "separate", "submodular_only")
ARRIVALS = ("round_robin", "iid_uniform", "trace")
ALGORITHMS = ("mnn_ucb", "mnn_ucb_separate", "mnn_ucb_separate_no_l1",
              "sm_ucb_ablation", "offline_greedy", "offline_distorted")
EXACT_BASELINE_CAP = 100_000  # per-size combination count for "auto" baselines


@dataclass
class FeedbackRecord:
    """One round of environment feedback; true_gain is for evaluation only."""

    y: float
    y_f: Optional[float] = None
    y_g: Optional[float] = None
    true_gain: float = 0.0


class Environment:
    """Context arrivals, per-context growing selections, and noisy gain feedback."""

    def __init__(self, objectives: Sequence, ground, contexts: np.ndarray,
                 T: int, arrival: str = "round_robin",
                 T_q: Optional[Sequence[int]] = None,
                 trace: Optional[Sequence[int]] = None,
                 noise_sigma: float = 0.0,
                 feedback_mode: str = "monolithic", seed: int = 0):
        if len(objectives) < 1:
            raise OracleInputError("need at least one context objective")
        if feedback_mode not in FEEDBACK_MODES:
            raise OracleInputError(f"unknown feedback mode {feedback_mode!r}")
        if arrival not in ARRIVALS:
            raise OracleInputError(f"unknown arrival model {arrival!r}")
        self.objectives = list(objectives)
        self.is_bp = isinstance(self.objectives[0], BPObjective)
        if feedback_mode in ("separate", "submodular_only") and not self.is_bp:
            raise FeedbackError(f"{feedback_mode} feedback needs BP objectives")
        self.ground = ground
        self.contexts = np.asarray(contexts, dtype=float)
        self.m = len(self.objectives)
        self.n = ground.n
        self.T = int(T)
        self.noise_sigma = float(noise_sigma)
        self.feedback_mode = feedback_mode
        self.T_q = list(T_q) if T_q is not None else None
        self.rng = np.random.default_rng(seed)
        self.arrivals = self._build_arrivals(arrival, trace)
        self.selected: list[list[int]] = [[] for _ in range(self.m)]
        self.masks = [0] * self.m
        self.pools = [list(range(self.n)) for _ in range(self.m)]
        self.clock = 0

    def _build_arrivals(self, arrival: str, trace) -> list[int]:
        caps = self.T_q if self.T_q is not None else [self.n] * self.m
        if len(caps) != self.m:
            raise OracleInputError("T_q needs one entry per context")
        if any(c > self.n for c in caps):
            raise OracleInputError("per-context budget exceeds the ground set")
        if arrival == "trace":
            if trace is None or len(trace) != self.T:
                raise OracleInputError("trace arrival needs a length-T context list")
            out = [int(u) for u in trace]
            if any(not 0 <= u < self.m for u in out):
                raise OracleInputError("trace entries must be context indices")
            counts = np.bincount(out, minlength=self.m)
            if self.T_q is not None and list(counts) != list(self.T_q):
                raise OracleInputError("trace context counts disagree with T_q")
            return out
        if arrival == "round_robin":
            if self.T_q is not None and sum(self.T_q) != self.T:
                raise OracleInputError("round_robin needs sum(T_q) == T")
            out, counts = [], [0] * self.m
            while len(out) < self.T:
                progressed = False
                for q in range(self.m):
                    if len(out) >= self.T:
                        break
                    if counts[q] < caps[q]:
                        out.append(q)
                        counts[q] += 1
                        progressed = True
                if not progressed:
                    raise OracleInputError("not enough context capacity for horizon T")
            return out
        # iid_uniform among contexts that still have capacity
        out, counts = [], [0] * self.m
        for _ in range(self.T):
            open_q = [q for q in range(self.m) if counts[q] < caps[q]]
            if not open_q:
                raise OracleInputError("not enough context capacity for horizon T")
            q = open_q[int(self.rng.integers(len(open_q)))]
            out.append(q)
            counts[q] += 1
        return out

    def arrival_at(self, t: int) -> int:
        return self.arrivals[t - 1]

    def pool(self, q: int) -> list[int]:
        return self.pools[q]

    def selected_of(self, q: int) -> frozenset:
        return frozenset(self.selected[q])

    def l1_weights(self, q: int) -> np.ndarray:
        if not self.is_bp:
            raise FeedbackError("modular lower bound is only defined for BP objectives")
        return self.objectives[q].l1_weights()

    def step(self, t: int, v: int) -> FeedbackRecord:
        """Commit action v for the round-t context and return noisy feedback."""
        if t != self.clock + 1:
            raise FeedbackError(f"round {t} played out of order (expected {self.clock + 1})")
        if t > self.T:
            raise FeedbackError("horizon exhausted")
        q = self.arrivals[t - 1]
        if not 0 <= v < self.n:
            raise FeedbackError(f"action {v} out of range")
        if v in self.selected[q]:
            raise FeedbackError(f"item {v} already selected for context {q}")
        if not self.pools[q]:
            raise FeedbackError(f"context {q} has an exhausted candidate pool")
        mask = self.masks[q]
        eps = self.noise_sigma * float(self.rng.standard_normal()) \
            if self.noise_sigma > 0 else 0.0
        if self.is_bp:
            obj = self.objectives[q]
            f_gain = obj.submodular_part.gain_mask(v, mask)
            g_gain = obj.supermodular_part.gain_mask(v, mask)
            true_gain = f_gain + g_gain
            if self.feedback_mode == "separate":
                rec = FeedbackRecord(y=true_gain + eps, y_f=f_gain + eps / 2.0,
                                     y_g=g_gain + eps / 2.0, true_gain=true_gain)
            elif self.feedback_mode == "submodular_only":
                rec = FeedbackRecord(y=f_gain + eps, true_gain=true_gain)
            else:
                rec = FeedbackRecord(y=true_gain + eps, true_gain=true_gain)
        else:
            true_gain = self.objectives[q].gain_mask(v, mask)
            rec = FeedbackRecord(y=true_gain + eps, true_gain=true_gain)
        self.selected[q].append(v)
        self.masks[q] |= 1 << v
        self.pools[q].remove(v)
        self.clock = t
        return rec


def env_step(env: Environment, t: int, v: int) -> FeedbackRecord:
    return env.step(t, v)


@dataclass
class RegretTrace:
    """Per-round log plus cumulative alpha-regret and reward curves."""

    rows: list[dict]
    cum_regret: dict[str, np.ndarray]
    cum_reward: np.ndarray
    alphas: dict[str, list[float]]
    baseline_kind: list[str]
    baseline_tables: list[np.ndarray]
    final_values: list[float]
    selections: list[list[int]]
    algorithm: str = ""

    def final_regret(self, kind: str) -> float:
        return float(self.cum_regret[kind][-1])


# -- baselines ----------------------------------------------------------------

def baseline_tables(desk: DeskInstance, mode: str = "auto",
                    cap: int = EXACT_BASELINE_CAP):
    """Per-context tables of the comparator value at every set size <= T_q.

    mode "exact" brute-forces every size and errors when infeasible;
    "greedy_surrogate" uses the true-oracle greedy prefix values; "auto"
    prefers exact when the largest size stays under the cap.  Tables are
    cached on the instance and shared across seeds and algorithms.
    """
    key = (mode, cap)
    hit = desk._baseline_cache.get(key)
    if hit is not None:
        return hit
    tables, kinds = [], []
    combo_cache: dict[int, list] = {}
    for q in range(desk.m):
        h = desk.total_oracle(q)
        k = desk.T_q[q]
        feasible = max(math.comb(desk.ground.n, s) for s in range(1, k + 1)) <= cap
        if mode == "exact" and not feasible:
            raise InfeasibleBaselineError(
                f"context {q}: exact baseline infeasible for k = {k}")
        if mode in ("exact", "auto") and feasible:
            obj = desk.objectives[q]
            if isinstance(obj, BPObjective):
                vals = [0.0] + [_best_value_bp(obj, desk.ground.n, s, combo_cache)
                                for s in range(1, k + 1)]
            else:
                vals = [0.0] + [brute_force_opt(h, desk.ground, s)[1]
                                for s in range(1, k + 1)]
            kinds.append("exact")
        else:
            order = greedy(h, desk.ground, k)
            vals, cur = [0.0], []
            for v in order:
                cur.append(v)
                vals.append(h(cur))
            kinds.append("greedy_surrogate")
        tables.append(np.asarray(vals))
    desk._baseline_cache[key] = (tables, kinds)
    return tables, kinds


def _best_value_bp(obj: BPObjective, n: int, size: int, cache: dict) -> float:
    """Exhaustive max of a BP objective at one set size, sharing the f/g value
    arrays across contexts that reuse the same component oracles."""
    import itertools
    entry = cache.get(size)
    if entry is None:
        combos = list(itertools.combinations(range(n), size))
        cache[size] = entry = (combos, {})
    combos, comp_vals = entry
    fg_key = (id(obj.f), id(obj.g))
    fg = comp_vals.get(fg_key)
    if fg is None:
        fg = (np.array([obj.f(c) for c in combos]),
              np.array([obj.g(c) for c in combos]))
        comp_vals[fg_key] = fg
    fv, gv = fg
    mod = np.asarray(obj.modular)[np.array(combos)].sum(axis=1)
    total = mod + obj.scale_f * fv + obj.scale_g * gv
    return float(total.max())


def regret_alphas(desk: DeskInstance) -> dict[str, list[float]]:
    """Per-context alpha constants for every regret kind the family supports."""
    out: dict[str, list[float]] = {}
    if desk.kind == "bp":
        for key in ("bp", "bp2", "bp3"):
            out[key] = []
        for obj in desk.objectives:
            kf, kg = obj.curvatures()
            r = alpha_ratios(kf, kg, 1.0, 0.0)
            out["bp"].append(r.alpha_bp)
            out["bp2"].append(r.alpha_dist)
            out["bp3"].append(r.alpha_dist_weak)
    else:
        out["ws"] = []
        for q, obj in enumerate(desk.objectives):
            if desk.ws_constants is not None:
                gamma, zeta = desk.ws_constants[q]
            else:
                rep = weak_submod_report(obj, desk.ground)
                gamma, zeta = rep.gamma, rep.zeta
            out["ws"].append(alpha_ratios(0.0, 0.0, gamma, zeta).alpha_ws)
    return out


def compute_regret(rows: list[dict], desk: DeskInstance,
                   baseline: str = "auto",
                   kinds: Optional[Sequence[str]] = None) -> RegretTrace:
    """Replay a selection log into cumulative alpha-regret and reward curves.

    The comparator is the offline optimum over the full ground set at each
    context's current set size (or its greedy surrogate, labeled as such).
    """
    tables, table_kinds = baseline_tables(desk, baseline)
    alphas = regret_alphas(desk)
    if kinds is not None:
        alphas = {k: alphas[k] for k in kinds}
    T = len(rows)
    masks = [0] * desk.m
    sizes = [0] * desk.m
    cur_vals = [0.0] * desk.m
    orders: list[list[int]] = [[] for _ in range(desk.m)]
    cum = {k: np.zeros(T) for k in alphas}
    reward = np.zeros(T)
    reg_t = {k: 0.0 for k in alphas}
    reward_t = 0.0
    for i, row in enumerate(rows):
        q, v = row["u"], row["v"]
        h = desk.total_oracle(q)
        new_val = h.value_mask(masks[q] | (1 << v))
        delta_val = new_val - cur_vals[q]
        delta_base = tables[q][sizes[q] + 1] - tables[q][sizes[q]]
        for k, alf in alphas.items():
            reg_t[k] += alf[q] * delta_base - delta_val
            cum[k][i] = reg_t[k]
        reward_t += delta_val
        reward[i] = reward_t
        masks[q] |= 1 << v
        sizes[q] += 1
        cur_vals[q] = new_val
        orders[q].append(v)
    final_values = [desk.total_oracle(q).value_mask(masks[q]) for q in range(desk.m)]
    return RegretTrace(rows=rows, cum_regret=cum, cum_reward=reward,
                       alphas=alphas, baseline_kind=table_kinds,
                       baseline_tables=tables, final_values=final_values,
                       selections=orders)


# -- online algorithms --------------------------------------------------------

def _prior_ucb(kernel: KernelSpec, user, selected, pool, item_feats, lam, bt):
    # empty Nystrom set: the GP prior has mean 0 and variance k(x,x)/lam
    stds = []
    for v in pool:
        p = candidate_point(user, selected, v, item_feats)
        stds.append(math.sqrt(max(kernel_eval(kernel, p, p), 0.0) / lam))
    return np.zeros(len(pool)), np.asarray(stds)


def run_mnn_ucb(env: Environment, kernel: KernelSpec, nystrom: dict,
                beta_schedule: BetaSchedule, rng: np.random.Generator,
                desk: Optional[DeskInstance] = None,
                baseline: str = "auto", separate: bool = False,
                l1_known: bool = True, algorithm: str = "mnn_ucb") -> RegretTrace:
    """MNN-UCB (and its separate-feedback variant when separate=True).

    Per round: posterior over the arriving context's remaining candidates from
    the sketched GP, pick argmax mean + beta_t * std (lowest id on ties),
    observe feedback, then update the Nystrom sketch.  The first round of a
    run picks uniformly at random.
    """
    if separate:
        if env.feedback_mode != "separate":
            raise FeedbackError("separate-feedback run needs a separate-feedback environment")
        if env.T_q is None:
            raise FeedbackError("separate-feedback run needs per-context budgets T_q")
    state = NystromState(kernel, **nystrom)
    item_feats = env.ground.item_features
    rows = []
    sched = beta_schedule
    if sched.mode == "theoretical":
        # the effective dimension entering beta_t is estimated from the Gram
        # of the stored points, refreshed whenever G has grown noticeably
        sched = replace(beta_schedule,
                        horizon=max(beta_schedule.horizon, env.T))
        deff_at = 0
    for t in range(1, env.T + 1):
        q = env.arrival_at(t)
        pool = env.pool(q)
        if not pool:
            raise FeedbackError(f"context {q} has an exhausted candidate pool")
        user = env.contexts[q]
        selected = env.selected_of(q)
        if sched.mode == "theoretical" and len(state.G) >= max(1, deff_at +
                                                               deff_at // 4 + 1):
            sched.d_eff = effective_dimension(state.K_gg, state.lam)
            deff_at = len(state.G)
        bt = beta(sched, t)
        if t == 1:
            v = pool[int(rng.integers(len(pool)))]
        else:
            if len(state.G) == 0:
                mean, std = _prior_ucb(kernel, user, selected, pool, item_feats,
                                       state.lam, bt)
            else:
                post = state.mv_calc(user, selected, pool, item_feats)
                mean, std = post.mean, post.std
            ucb = mean + bt * std
            v = pool[int(np.argmax(ucb))]  # pools are sorted: first max = lowest id
        rec = env.step(t, v)
        if separate:
            T_u = env.T_q[q]
            D = (1.0 - 1.0 / T_u) ** (T_u - len(selected) - 1)
            y_signal = D * rec.y_f + rec.y_g
            if l1_known:
                y_signal += (1.0 - D) * float(env.l1_weights(q)[v])
        else:
            y_signal = rec.y
        x = ContextPoint(user_features=user, selected=selected, item=v,
                         item_features=None if item_feats is None else item_feats[v])
        state.nystrom_select(x, rng)
        state.update_observation(x, y_signal)
        rows.append({"t": t, "u": q, "v": v, "y": y_signal, "beta": bt,
                     "g_size": len(state.G)})
    trace = compute_regret(rows, desk or _desk_from_env(env), baseline)
    trace.algorithm = algorithm
    trace.selections = [list(s) for s in env.selected]
    return trace


def run_mnn_ucb_separate(env: Environment, kernel: KernelSpec, nystrom: dict,
                         beta_schedule: BetaSchedule, rng: np.random.Generator,
                         l1_known: bool = True, desk: Optional[DeskInstance] = None,
                         baseline: str = "auto") -> RegretTrace:
    """Distortion-aggregated separate feedback: the learner models
    D_t y_f + y_g (+ (1 - D_t) l1(v) when the modular lower bound is known)."""
    name = "mnn_ucb_separate" if l1_known else "mnn_ucb_separate_no_l1"
    return run_mnn_ucb(env, kernel, nystrom, beta_schedule, rng, desk=desk,
                       baseline=baseline, separate=True, l1_known=l1_known,
                       algorithm=name)


def run_oracle_policy(env: Environment, rng: np.random.Generator,
                      distorted: bool = False,
                      desk: Optional[DeskInstance] = None,
                      baseline: str = "auto") -> RegretTrace:
    """Full-knowledge greedy reference traced through the same arrival schedule.

    With distorted=True the step-j choice maximizes the distorted gain pi_j
    (j = current set size, k = T_q), otherwise the raw marginal gain.
    """
    if distorted and env.T_q is None:
        raise FeedbackError("distorted oracle policy needs per-context budgets T_q")
    rows = []
    dobs = {}
    for t in range(1, env.T + 1):
        q = env.arrival_at(t)
        pool = env.pool(q)
        if not pool:
            raise FeedbackError(f"context {q} has an exhausted candidate pool")
        mask = env.masks[q]
        if distorted:
            obj = env.objectives[q]
            dob = dobs.get(q)
            if dob is None:
                dob = obj.distorted(env.T_q[q])
                dobs[q] = dob
            j = len(env.selected[q])
            gains = [dob.pi_gain_mask(v, mask, j) for v in pool]
        else:
            h = env.objectives[q].total if env.is_bp else env.objectives[q]
            gains = [h.gain_mask(v, mask) for v in pool]
        v = pool[int(np.argmax(gains))]
        rec = env.step(t, v)
        rows.append({"t": t, "u": q, "v": v, "y": rec.y, "beta": 0.0, "g_size": 0})
    trace = compute_regret(rows, desk or _desk_from_env(env), baseline)
    trace.algorithm = "offline_distorted" if distorted else "offline_greedy"
    trace.selections = [list(s) for s in env.selected]
    return trace


def _desk_from_env(env: Environment) -> DeskInstance:
    kind = "bp" if env.is_bp else "ws"
    return DeskInstance(kind, env.ground, env.objectives, env.contexts,
                        env.T_q or [env.n] * env.m)


# -- multi-seed orchestration -------------------------------------------------

PRIMARY_METRIC = {
    "mnn_ucb": ("bp", "ws"),
    "sm_ucb_ablation": ("bp", "ws"),
    "offline_greedy": ("bp", "ws"),
    "mnn_ucb_separate": ("bp2", None),
    "mnn_ucb_separate_no_l1": ("bp3", None),
    "offline_distorted": ("bp2", None),
}

ALGORITHM_FEEDBACK = {
    "mnn_ucb": "monolithic",
    "sm_ucb_ablation": "submodular_only",
    "mnn_ucb_separate": "separate",
    "mnn_ucb_separate_no_l1": "separate",
    "offline_greedy": "monolithic",
    "offline_distorted": "monolithic",
}


@dataclass
class TrialAggregate:
    """Across-seed summary for one algorithm."""

    algorithm: str
    metric: str
    seeds: list[int]
    cum_regret: np.ndarray      # n_seeds x T
    cum_reward: np.ndarray      # n_seeds x T
    traces: list[RegretTrace] = field(repr=False, default_factory=list)

    def rows(self) -> list[dict]:
        mean_r = self.cum_regret.mean(axis=0)
        std_r = self.cum_regret.std(axis=0)
        mean_w = self.cum_reward.mean(axis=0)
        std_w = self.cum_reward.std(axis=0)
        return [{"t": t + 1, "mean_cum_regret": mean_r[t], "std_cum_regret": std_r[t],
                 "algorithm": self.algorithm, "seed_count": len(self.seeds),
                 "mean_cum_reward": mean_w[t], "std_cum_reward": std_w[t]}
                for t in range(len(mean_r))]


def _max_workers(n_tasks: int) -> int:
    cap = os.environ.get("BPB_THREADS")
    if cap is not None:
        try:
            return max(1, min(n_tasks, int(cap)))
        except ValueError:
            pass
    return max(1, min(n_tasks, os.cpu_count() or 1))


def run_trials(desk: DeskInstance, algorithms: Sequence[str], kernel: KernelSpec,
               nystrom: dict, beta_schedule: BetaSchedule, seeds: Sequence[int],
               baseline: str = "auto", arrival: str = "round_robin",
               noise_sigma: Optional[float] = None,
               trace_arrivals: Optional[Sequence[int]] = None,
               horizon: Optional[int] = None) -> dict[str, TrialAggregate]:
    """Run every requested algorithm for every seed and aggregate per round.

    Baselines are computed once up front; individual (algorithm, seed) runs
    are independent and dispatched on a thread pool capped by BPB_THREADS.
    """
    for a in algorithms:
        if a not in ALGORITHMS:
            raise OracleInputError(f"unknown algorithm {a!r}")
    T = desk.horizon if horizon is None else int(horizon)
    sigma = desk.noise_sigma if noise_sigma is None else noise_sigma
    baseline_tables(desk, baseline)  # warm the shared cache before threading
    regret_alphas_cache = regret_alphas(desk)
    del regret_alphas_cache
    if desk.kind == "bp":
        for obj in desk.objectives:
            obj.curvatures()
            obj.l1_weights()

    def one(algorithm: str, seed: int) -> RegretTrace:
        env = Environment(desk.objectives, desk.ground, desk.contexts,
                          T, arrival=arrival, T_q=desk.T_q,
                          trace=trace_arrivals, noise_sigma=sigma,
                          feedback_mode=ALGORITHM_FEEDBACK[algorithm],
                          seed=int(np.random.SeedSequence([seed, 17]).generate_state(1)[0]))
        rng = np.random.default_rng([seed, 31])
        if algorithm == "offline_greedy":
            return run_oracle_policy(env, rng, distorted=False, desk=desk,
                                     baseline=baseline)
        if algorithm == "offline_distorted":
            return run_oracle_policy(env, rng, distorted=True, desk=desk,
                                     baseline=baseline)
        if algorithm in ("mnn_ucb_separate", "mnn_ucb_separate_no_l1"):
            return run_mnn_ucb_separate(env, kernel, nystrom, beta_schedule, rng,
                                        l1_known=algorithm == "mnn_ucb_separate",
                                        desk=desk, baseline=baseline)
        trace = run_mnn_ucb(env, kernel, nystrom, beta_schedule, rng, desk=desk,
                            baseline=baseline, algorithm=algorithm)
        return trace

    out: dict[str, TrialAggregate] = {}
    tasks = [(a, s) for a in algorithms for s in seeds]
    with ThreadPoolExecutor(max_workers=_max_workers(len(tasks))) as pool:
        results = list(pool.map(lambda p: one(*p), tasks))
    idx = 0
    for a in algorithms:
        traces = results[idx:idx + len(seeds)]
        idx += len(seeds)
        metric = PRIMARY_METRIC[a][0] if desk.kind == "bp" else PRIMARY_METRIC[a][1]
        if metric is None or metric not in traces[0].cum_regret:
            raise FeedbackError(f"algorithm {a!r} has no regret metric for "
                                f"{desk.kind!r} instances")
        out[a] = TrialAggregate(
            algorithm=a, metric=metric, seeds=list(seeds),
            cum_regret=np.vstack([tr.cum_regret[metric] for tr in traces]),
            cum_reward=np.vstack([tr.cum_reward for tr in traces]),
            traces=traces)
    return out
