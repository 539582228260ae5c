"""Synthetic problem instances, deterministically regenerable from
(kind, n, seed, parameters), plus the desk-scale multi-context bundles the
simulator runs on.

Pure-dispersion supermodular parts have kappa_g = 1 (worthless singletons),
which makes every BP bound vacuous; generated BP instances therefore mix a
modular floor into the supermodular side most of the time so the sweeps
exercise kappa_g strictly inside (0, 1).
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .bp import BPObjective
from .curvature import weak_submod_report
from .errors import ConfigError
from .oracles import (GroundSet, SetFunctionOracle, make_concave_over_modular,
                      make_facility_location, make_modular, make_naive_bayes_al,
                      make_power_cardinality, make_sum_dispersion, sum_oracles)

SIMPLE_KINDS = ("facility_location", "concave_over_modular", "sum_dispersion",
                "naive_bayes_al", "square_cardinality", "modular")
INSTANCE_KINDS = SIMPLE_KINDS + ("bp_random", "ws_random", "bp_desk", "ws_desk")


def make_instance(kind: str, n: int, seed: int, params: Optional[dict] = None):
    """Registry entry point: returns an oracle, a BPObjective, or a DeskInstance."""
    params = dict(params or {})
    rng = np.random.default_rng(seed)
    if kind == "facility_location":
        scale = params.pop("scale", 1.0)
        _reject_unknown(kind, params)
        return make_facility_location(scale * rng.random((n, n)))
    if kind == "concave_over_modular":
        return _random_com(rng, n, **params)
    if kind == "sum_dispersion":
        scale = params.pop("scale", 1.0)
        _reject_unknown(kind, params)
        return make_sum_dispersion(_random_pair_weights(rng, n, scale))
    if kind == "naive_bayes_al":
        n_cells = params.pop("n_cells", max(2, n // 2))
        _reject_unknown(kind, params)
        feats = rng.integers(n_cells, size=n)
        labels = rng.integers(2, size=n)
        return make_naive_bayes_al(feats, labels)
    if kind == "square_cardinality":
        power = params.pop("power", 2.0)
        scale = params.pop("scale", 1.0)
        _reject_unknown(kind, params)
        return make_power_cardinality(n, power, scale)
    if kind == "modular":
        weights = params.pop("weights", None)
        _reject_unknown(kind, params)
        w = np.asarray(weights, dtype=float) if weights is not None \
            else rng.uniform(0.5, 2.0, size=n)
        return make_modular(w)
    if kind == "bp_random":
        obj, _ = random_bp_instance(rng, n=n, **params)
        return obj
    if kind == "ws_random":
        return random_ws_instance(rng, n=n, **params)
    if kind == "bp_desk":
        return build_bp_desk(seed, n=n, **params)
    if kind == "ws_desk":
        return build_ws_desk(seed, n=n, **params)
    raise ConfigError([f"instance.kind: unknown kind {kind!r}"])


def instance_to_json(kind: str, n: int, seed: int, params: Optional[dict] = None) -> str:
    if kind not in INSTANCE_KINDS:
        raise ConfigError([f"instance.kind: unknown kind {kind!r}"])
    return json.dumps({"kind": kind, "n": n, "seed": seed,
                       "parameters": params or {}}, sort_keys=True)


def instance_from_json(doc: str):
    d = json.loads(doc)
    return make_instance(d["kind"], d["n"], d["seed"], d.get("parameters"))


def _reject_unknown(kind, params):
    if params:
        raise ConfigError([f"instance.parameters: unknown keys {sorted(params)} "
                           f"for kind {kind!r}"])


def _random_pair_weights(rng, n, scale=1.0, sparsity=0.5):
    B = scale * rng.random((n, n))
    B *= rng.random((n, n)) < sparsity
    B = np.triu(B, 1)
    return B + B.T


def _random_com(rng, n, n_genres=4, tau=None):
    mem = (rng.random((n, n_genres)) < 0.45).astype(float)
    # every item needs at least one genre
    for i in range(n):
        if mem[i].sum() == 0:
            mem[i, rng.integers(n_genres)] = 1.0
    ratings = rng.uniform(1.0, 5.0, size=n)
    if tau is None:
        tau = float(np.median(ratings))
    return make_concave_over_modular(mem, ratings, tau)


def random_bp_instance(rng: np.random.Generator, n: Optional[int] = None,
                       n_range=(5, 8), k_range=(1, 3),
                       modular_floor: Optional[bool] = None) -> tuple[BPObjective, int]:
    """A random BP objective plus a cardinality budget for the bound sweeps.

    f alternates between facility location and concave-over-modular; g is
    sum-sum-dispersion, with a modular floor mixed in roughly two thirds of
    the time so kappa_g < 1.
    """
    if n is None:
        n = int(rng.integers(n_range[0], n_range[1] + 1))
    k = int(rng.integers(k_range[0], min(k_range[1], n) + 1))
    if rng.random() < 0.5:
        f = make_facility_location(rng.random((n, n)))
    else:
        f = _random_com(rng, n)
    disp = make_sum_dispersion(_random_pair_weights(rng, n, scale=0.6))
    if modular_floor is None:
        modular_floor = rng.random() < 2.0 / 3.0
    if modular_floor:
        g = sum_oracles(make_modular(rng.uniform(0.2, 1.0, size=n)), disp,
                        name="modular+dispersion")
    else:
        g = disp
    modular = rng.uniform(0.0, 1.5, size=n)
    scale_f = float(rng.uniform(0.5, 1.5))
    scale_g = float(rng.uniform(0.3, 1.0))
    return BPObjective(modular, f, g, scale_f, scale_g), k


def random_ws_instance(rng: np.random.Generator, n: Optional[int] = None,
                       n_range=(5, 8), card_scale=(0.05, 0.4),
                       weights: Optional[np.ndarray] = None,
                       f_scale: float = 1.0) -> SetFunctionOracle:
    """Monotone weakly-submodular mixture: modular + submodular + a |S|^p term."""
    if n is None:
        n = int(rng.integers(n_range[0], n_range[1] + 1))
    f = make_facility_location(f_scale * rng.random((n, n)))
    power = float(rng.uniform(1.3, 2.0))
    scale = float(rng.uniform(*card_scale))
    bump = make_power_cardinality(n, power, scale)
    parts = [f, bump]
    if weights is not None:
        parts.append(make_modular(weights))
    return sum_oracles(*parts, name=f"ws(p={power:.2f})")


@dataclass
class DeskInstance:
    """A multi-context bandit problem: objectives, contexts, schedule, features."""

    kind: str                      # "bp" or "ws"
    ground: GroundSet
    objectives: list               # BPObjective per context, or oracles for ws
    contexts: np.ndarray           # m x d_user
    T_q: list[int]
    noise_sigma: float = 0.1
    ws_constants: Optional[list[tuple[float, float]]] = None  # (gamma, zeta) per q
    _baseline_cache: dict = field(default_factory=dict, repr=False)

    @property
    def m(self) -> int:
        return len(self.objectives)

    @property
    def horizon(self) -> int:
        return int(sum(self.T_q))

    def total_oracle(self, q: int) -> SetFunctionOracle:
        obj = self.objectives[q]
        return obj.total if isinstance(obj, BPObjective) else obj


def build_bp_desk(seed: int, n: int = 30, m_exact: int = 12, m_large: int = 28,
                  k_exact: int = 4, k_large: int = 9,
                  noise_sigma: float = 0.2, scale_f: float = 0.012,
                  lam2: float = 0.9, disp_level: float = 0.07) -> DeskInstance:
    """Desk-scale BP recommendation instance.

    Items live in feature clusters and split into three populations: flashy
    (high rating, worthless supermodular floor), sleepers (modest rating,
    high floor: the truly best picks), and duds.  A learner fed only the
    submodular channel ranks flashy items first and pays for it; the floor
    also keeps kappa_g well below 1.  The submodular part is facility
    location on feature similarity, and dispersion rewards within-cluster
    complementarities.  A few contexts get small budgets (exact baselines
    are brute-forceable), the rest get large ones.
    """
    rng = np.random.default_rng(seed)
    n_clusters = 6
    d_item, d_user = 3, 3
    centers = rng.normal(size=(n_clusters, d_item)) * 2.0
    assign = np.sort(rng.integers(n_clusters, size=n))
    feats = centers[assign] + 0.35 * rng.normal(size=(n, d_item))
    ground = GroundSet(n, item_features=feats)

    d2 = ((feats[:, None, :] - feats[None, :, :]) ** 2).sum(-1)
    sim = np.exp(-0.5 * d2)
    f = make_facility_location(sim)

    # populations follow the feature clusters, so the value structure is
    # smooth in item features and the RBF item kernel is well specified
    pop = assign % 3
    base = np.where(pop == 0, 2.2 + 0.15 * rng.standard_normal(n),
                    np.where(pop == 1, 1.3 + 0.15 * rng.standard_normal(n),
                             0.6 + 0.1 * rng.standard_normal(n)))
    base = np.clip(base, 0.3, None)
    floor = np.where(pop == 0, 0.35, np.where(pop == 1, 2.6, 0.5))
    floor = floor * (1.0 + 0.06 * rng.standard_normal(n))
    floor = np.clip(floor, 0.1, None)

    # complementarities concentrate inside clusters; pair gains stay a small
    # multiple of the floor so kappa_g stays moderate
    same = (assign[:, None] == assign[None, :]).astype(float)
    B = same * np.exp(-0.3 * d2) * np.sqrt(np.outer(floor, floor))
    np.fill_diagonal(B, 0.0)
    pair_gain = 2.0 * B.sum(axis=1)
    B *= disp_level / max((pair_gain / floor).mean(), 1e-9)
    disp = make_sum_dispersion(B)
    g = sum_oracles(make_modular(floor), disp, name="floor+dispersion")

    m = m_exact + m_large
    contexts = rng.normal(size=(m, d_user)) * 0.8
    objectives = []
    for q in range(m):
        # multiplicative preference twist per context: cross-context transfer
        # still helps, but each context keeps an idiosyncratic ranking
        twist = 1.0 + 0.35 * np.tanh(feats @ contexts[q][:d_item])
        ratings = np.clip(base * twist, 0.05, None)
        objectives.append(BPObjective(ratings, f, g, scale_f, lam2,
                                      name=f"desk_bp[{q}]"))
    T_q = [k_exact] * m_exact + [k_large] * m_large
    return DeskInstance("bp", ground, objectives, contexts, T_q,
                        noise_sigma=noise_sigma)


def build_ws_desk(seed: int, n: int = 12, m: int = 50, k: int = 6,
                  n_distinct: int = 10, noise_sigma: float = 0.25) -> DeskInstance:
    """Desk-scale weakly-submodular instance; gamma/zeta stay brute-forceable.

    Contexts come in groups sharing one objective, with user features
    clustered by group so the user kernel can tell the groups apart.  A
    right-skewed modular part keeps uninformed play clearly below the offline
    optimum.
    """
    rng = np.random.default_rng(seed)
    d_item, d_user = 3, 3
    feats = rng.normal(size=(n, d_item))
    ground = GroundSet(n, item_features=feats)
    distinct = []
    constants = []
    for _ in range(n_distinct):
        w = 0.8 + 2.2 * rng.random(n) ** 2
        h = random_ws_instance(rng, n=n, card_scale=(0.03, 0.1), weights=w,
                               f_scale=0.12)
        rep = weak_submod_report(h, ground)
        distinct.append(h)
        constants.append((rep.gamma, rep.zeta))
    objectives = [distinct[q % n_distinct] for q in range(m)]
    ws_constants = [constants[q % n_distinct] for q in range(m)]
    group_centers = rng.normal(size=(n_distinct, d_user)) * 1.2
    contexts = group_centers[np.arange(m) % n_distinct] + \
        0.15 * rng.normal(size=(m, d_user))
    return DeskInstance("ws", ground, objectives, contexts, [k] * m,
                        noise_sigma=noise_sigma, ws_constants=ws_constants)
