"""Set-function oracles and synthetic objective generators.

Sets of item ids are represented externally as any iterable of ints and
internally as bitmasks, which double as memoization keys.  All generated
objectives are MNN: monotone non-decreasing and normalized (value 0 on the
empty set).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from .errors import GroundSetTooLargeError, OracleInputError

VERIFY_CAP = 10  # exhaustive property checks are O(2^n * n^2)


def mask_of(items: Iterable[int]) -> int:
    m = 0
    for v in items:
        m |= 1 << v
    return m


def items_of(mask: int) -> tuple[int, ...]:
    out = []
    v = 0
    while mask:
        if mask & 1:
            out.append(v)
        mask >>= 1
        v += 1
    return tuple(out)


@dataclass(frozen=True)
class GroundSet:
    """Finite ground set of n items, optionally with per-item feature vectors."""

    n: int
    item_features: Optional[np.ndarray] = None
    item_labels: Optional[Sequence[int]] = None

    def __post_init__(self):
        if self.n < 1:
            raise OracleInputError("ground set needs n >= 1")
        if self.item_features is not None:
            feats = np.asarray(self.item_features, dtype=float)
            if feats.ndim != 2 or feats.shape[0] != self.n:
                raise OracleInputError("item_features must be an (n, d) array")
            object.__setattr__(self, "item_features", feats)
        if self.item_labels is not None and len(self.item_labels) != self.n:
            raise OracleInputError("item_labels length must equal n")

    def items(self) -> range:
        return range(self.n)


class SetFunctionOracle:
    """Evaluates h(S) with memoization keyed by the bitmask of S.

    The evaluator receives a sorted tuple of item ids.  Memo writes are
    plain dict assignments, which is safe to share across threads under
    the GIL; the oracle itself is immutable after construction.
    """

    def __init__(self, n: int, evaluator: Callable[[tuple[int, ...]], float],
                 normalized: bool = True, name: str = ""):
        self.n = int(n)
        self._evaluator = evaluator
        self.normalized = normalized
        self.name = name
        self._memo: dict[int, float] = {}
        if normalized:
            empty = float(evaluator(()))
            if abs(empty) > 1e-12:
                raise OracleInputError(
                    f"oracle {name!r} marked normalized but h(empty) = {empty}")
            self._memo[0] = 0.0

    def value_mask(self, mask: int) -> float:
        v = self._memo.get(mask)
        if v is None:
            v = float(self._evaluator(items_of(mask)))
            self._memo[mask] = v
        return v

    def __call__(self, items: Iterable[int]) -> float:
        mask = self._check_mask(items)
        return self.value_mask(mask)

    def gain_mask(self, v: int, mask: int) -> float:
        if not 0 <= v < self.n:
            raise OracleInputError(f"item id {v} out of range [0, {self.n})")
        bit = 1 << v
        if mask & bit:
            raise OracleInputError(f"item {v} already in the set")
        return self.value_mask(mask | bit) - self.value_mask(mask)

    def gain(self, v: int, items: Iterable[int]) -> float:
        return self.gain_mask(v, self._check_mask(items))

    def all_values(self) -> np.ndarray:
        """Dense table h(S) over every mask, for exhaustive enumeration."""
        if self.n > 20:
            raise GroundSetTooLargeError(f"refusing 2^{self.n} enumeration")
        return np.array([self.value_mask(m) for m in range(1 << self.n)])

    def _check_mask(self, items: Iterable[int]) -> int:
        mask = 0
        for v in items:
            if not 0 <= v < self.n:
                raise OracleInputError(f"item id {v} out of range [0, {self.n})")
            mask |= 1 << v
        return mask


def marginal_gain(oracle: SetFunctionOracle, v: int, items: Iterable[int]) -> float:
    """h(v | S) = h(S + v) - h(S). Errors if v is already in S or out of range."""
    return oracle.gain(v, items)


def make_modular(weights: Sequence[float], name: str = "modular") -> SetFunctionOracle:
    w = np.asarray(weights, dtype=float)

    def ev(ids):
        return float(w[list(ids)].sum()) if ids else 0.0

    return SetFunctionOracle(len(w), ev, name=name)


def scale_oracle(oracle: SetFunctionOracle, c: float, name: str = "") -> SetFunctionOracle:
    if c < 0:
        raise OracleInputError("scaling an MNN oracle by a negative constant")
    return SetFunctionOracle(
        oracle.n, lambda ids: c * oracle(ids),
        normalized=oracle.normalized, name=name or f"{c}*{oracle.name}")


def sum_oracles(*oracles: SetFunctionOracle, name: str = "sum") -> SetFunctionOracle:
    ns = {o.n for o in oracles}
    if len(ns) != 1:
        raise OracleInputError("cannot sum oracles over different ground sets")
    return SetFunctionOracle(
        ns.pop(), lambda ids: sum(o(ids) for o in oracles),
        normalized=all(o.normalized for o in oracles), name=name)


def make_facility_location(similarity: np.ndarray) -> SetFunctionOracle:
    """f(S) = sum_i max_{v in S} sim(i, v); coverage value of the chosen facilities."""
    sim = np.asarray(similarity, dtype=float)
    if sim.ndim != 2 or sim.shape[0] != sim.shape[1]:
        raise OracleInputError("similarity matrix must be square")
    if (sim < 0).any():
        raise OracleInputError("similarity matrix has negative entries")
    n = sim.shape[0]

    def ev(ids):
        if not ids:
            return 0.0
        return float(sim[:, list(ids)].max(axis=1).sum())

    return SetFunctionOracle(n, ev, name="facility_location")


def make_concave_over_modular(genre_memberships: np.ndarray,
                              ratings: Sequence[float],
                              threshold: float) -> SetFunctionOracle:
    """Genre-balance objective: sum_g sqrt(1 + u_g(A)) shifted to 0 at the empty set.

    u_g(A) counts items of A above the rating threshold, each spreading unit
    weight across its genres.
    """
    mem = np.asarray(genre_memberships, dtype=float)
    if mem.ndim != 2:
        raise OracleInputError("genre membership must be an (n, L) 0/1 matrix")
    n, n_genres = mem.shape
    counts = mem.sum(axis=1)
    if (counts == 0).any():
        bad = int(np.argmin(counts))
        raise OracleInputError(f"item {bad} belongs to no genre")
    m = np.asarray(ratings, dtype=float)
    if m.shape != (n,):
        raise OracleInputError("ratings must have one entry per item")
    # per-item contribution to each genre accumulator
    contrib = mem / counts[:, None] * (m > threshold)[:, None]

    def ev(ids):
        if not ids:
            return 0.0
        u = contrib[list(ids)].sum(axis=0)
        return float(np.sqrt(1.0 + u).sum() - n_genres)

    return SetFunctionOracle(n, ev, name="concave_over_modular")


def make_sum_dispersion(pair_weights: np.ndarray) -> SetFunctionOracle:
    """g(A) = sum over ordered pairs of distinct items in A of B(v, w)."""
    B = np.asarray(pair_weights, dtype=float)
    if B.ndim != 2 or B.shape[0] != B.shape[1]:
        raise OracleInputError("pair-weight matrix must be square")
    if (B < 0).any():
        raise OracleInputError("pair weights must be nonnegative")
    if not np.allclose(B, B.T, atol=1e-12):
        raise OracleInputError("pair-weight matrix must be symmetric")
    if np.abs(np.diag(B)).max(initial=0.0) > 1e-12:
        raise OracleInputError("pair-weight matrix must have a zero diagonal")
    n = B.shape[0]

    def ev(ids):
        if len(ids) < 2:
            return 0.0
        idx = list(ids)
        return float(B[np.ix_(idx, idx)].sum())

    return SetFunctionOracle(n, ev, name="sum_dispersion")


def make_naive_bayes_al(features: Sequence[int], labels: Sequence[int]) -> SetFunctionOracle:
    """Count-matching objective for active learning over discretized features.

    f(S) = sum over (feature cell, label) of sqrt(count in V) * log(1 + count in S);
    the +1 shift normalizes f(empty) = 0 without changing any marginal gain.
    """
    feats = list(features)
    labs = list(labels)
    if len(feats) != len(labs):
        raise OracleInputError("features and labels must align")
    n = len(feats)
    cells = sorted({(x, y) for x, y in zip(feats, labs)})
    cell_index = {c: i for i, c in enumerate(cells)}
    item_cell = np.array([cell_index[(x, y)] for x, y in zip(feats, labs)])
    total = np.bincount(item_cell, minlength=len(cells)).astype(float)
    root_total = np.sqrt(total)

    def ev(ids):
        if not ids:
            return 0.0
        c = np.bincount(item_cell[list(ids)], minlength=len(cells))
        return float((root_total * np.log1p(c)).sum())

    return SetFunctionOracle(n, ev, name="naive_bayes_al")


def make_power_cardinality(n: int, power: float = 2.0, scale: float = 1.0) -> SetFunctionOracle:
    """h(S) = scale * |S|^power; supermodular for power >= 1."""
    if power < 1:
        raise OracleInputError("power must be >= 1 to stay supermodular")

    def ev(ids):
        return float(scale * len(ids) ** power)

    return SetFunctionOracle(n, ev, name=f"card^{power}")


@dataclass
class MnnCheckReport:
    """Outcome of one exhaustive structural check."""

    kind: str
    passed: bool
    counterexample: Optional[tuple] = None
    margin: float = field(default=float("inf"))


def verify_mnn_properties(oracle: SetFunctionOracle, V: GroundSet, kind: str) -> MnnCheckReport:
    """Exhaustively check monotone / submodular / supermodular structure (n <= 10).

    On failure the counterexample is (A, B, v) for the modularity checks, with
    B = A + {j}, or (A, v) for monotonicity.
    """
    n = V.n
    if n != oracle.n:
        raise OracleInputError("ground set size disagrees with the oracle")
    if n > VERIFY_CAP:
        raise GroundSetTooLargeError(f"exhaustive check capped at n <= {VERIFY_CAP}")
    if kind not in ("monotone", "submodular", "supermodular"):
        raise OracleInputError(f"unknown property kind {kind!r}")
    vals = oracle.all_values()
    tol = 1e-9 * max(1.0, float(np.abs(vals).max()))
    masks = np.arange(1 << n)
    worst = float("inf")
    counterexample = None

    if kind == "monotone":
        for v in range(n):
            bit = 1 << v
            wo = masks[(masks & bit) == 0]
            gains = vals[wo | bit] - vals[wo]
            i = int(np.argmin(gains))
            if gains[i] < worst:
                worst = float(gains[i])
                counterexample = (frozenset(items_of(int(wo[i]))), v)
        return MnnCheckReport(kind, worst >= -tol,
                              None if worst >= -tol else counterexample, worst)

    sign = 1.0 if kind == "submodular" else -1.0
    # diminishing (resp. increasing) returns along single-item extensions is
    # equivalent to the A-subset-of-B definition by transitivity
    for v in range(n):
        bitv = 1 << v
        for j in range(n):
            if j == v:
                continue
            bitj = 1 << j
            base = masks[((masks & bitv) == 0) & ((masks & bitj) == 0)]
            small = vals[base | bitv] - vals[base]
            large = vals[base | bitj | bitv] - vals[base | bitj]
            diff = sign * (small - large)
            i = int(np.argmin(diff))
            if diff[i] < worst:
                worst = float(diff[i])
                A = frozenset(items_of(int(base[i])))
                counterexample = (A, A | {j}, v)
    return MnnCheckReport(kind, worst >= -tol,
                          None if worst >= -tol else counterexample, worst)
