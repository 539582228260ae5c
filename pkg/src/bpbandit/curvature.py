"""Structural constants of set functions: curvatures, submodularity ratio,
generalized curvature, and the modular lower bound.

Conventions shared by every bound in the package:
  kappa_f  = 1 - min_v f(v | V-v) / f(v)            over v with f(v) > 0
  kappa_g  = 1 - min_v g(v) / g(v | V-v)            over v with g(v | V-v) > 0
  gamma    = min over pairs (A, S) with h(S|A) > 0 of sum_{v in S-A} h(v|A) / h(S|A)
  zeta     = 1 - min over (S, A, v in A-S) with h(v | A-v) > 0
                 of h(v | (A-v) + S) / h(v | A-v)
All four are clamped into [0, 1]; items hitting a zero denominator are skipped
(for MNN inputs the skipped ratios are vacuous).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import GroundSetTooLargeError, OracleInputError
from .oracles import GroundSet, SetFunctionOracle, items_of

ENUMERATION_CAP = 12  # gamma / zeta sweep every (A, S) pair: O(3^n) work


def _clamp01(x: float) -> float:
    return min(1.0, max(0.0, x))


@dataclass
class CurvatureReport:
    kappa_f: float
    kappa_g: float
    argmin_f: Optional[int]
    argmin_g: Optional[int]


@dataclass
class WeakSubmodReport:
    gamma: float
    zeta: float
    gamma_witness: Optional[tuple[frozenset, frozenset]]
    zeta_witness: Optional[tuple[frozenset, frozenset, int]]


def submodular_curvature(f: SetFunctionOracle, V: GroundSet) -> tuple[float, Optional[int]]:
    """Curvature of a submodular MNN f; 0 iff f is modular. Linear in n."""
    n = _check(f, V)
    full = (1 << n) - 1
    best, arg = np.inf, None
    for v in range(n):
        singleton = f.value_mask(1 << v)
        if singleton <= 0.0:
            continue  # forces f(v | V-v) = 0 as well; the ratio is vacuous
        ratio = f.gain_mask(v, full & ~(1 << v)) / singleton
        if ratio < best:
            best, arg = ratio, v
    if arg is None:
        raise OracleInputError("all singleton values are zero; curvature undefined")
    return _clamp01(1.0 - best), arg


def supermodular_curvature(g: SetFunctionOracle, V: GroundSet) -> tuple[float, Optional[int]]:
    """Curvature of a supermodular MNN g; 0 iff g is modular, 1 when some
    singleton is worthless on its own."""
    n = _check(g, V)
    full = (1 << n) - 1
    best, arg = np.inf, None
    for v in range(n):
        last = g.gain_mask(v, full & ~(1 << v))
        if last <= 0.0:
            continue
        ratio = g.value_mask(1 << v) / last
        if ratio < best:
            best, arg = ratio, v
    if arg is None:
        raise OracleInputError("all full-set marginals are zero; curvature undefined")
    return _clamp01(1.0 - best), arg


def curvature_report(f: SetFunctionOracle, g: SetFunctionOracle, V: GroundSet) -> CurvatureReport:
    kf, af = submodular_curvature(f, V)
    kg, ag = supermodular_curvature(g, V)
    return CurvatureReport(kf, kg, af, ag)


def modular_lower_bound(f: SetFunctionOracle, V: GroundSet):
    """l1(v) = f(v | V-v) per item, and the totally normalized f1 = f - l1.

    f1 is submodular, MNN, and has curvature exactly 1 whenever it is not
    identically zero.
    """
    n = _check(f, V)
    full = (1 << n) - 1
    l1 = np.array([f.gain_mask(v, full & ~(1 << v)) for v in range(n)])

    def ev(ids):
        return f(ids) - float(l1[list(ids)].sum()) if ids else 0.0

    f1 = SetFunctionOracle(n, ev, name=f"{f.name}-l1")
    return l1, f1


def submodularity_ratio(h: SetFunctionOracle, V: GroundSet) -> float:
    return weak_submod_report(h, V).gamma


def generalized_curvature(h: SetFunctionOracle, V: GroundSet) -> float:
    return weak_submod_report(h, V).zeta


def weak_submod_report(h: SetFunctionOracle, V: GroundSet) -> WeakSubmodReport:
    """Brute-force gamma and zeta with the witnesses attaining each extremum."""
    n = _check(h, V)
    if n > ENUMERATION_CAP:
        raise GroundSetTooLargeError(
            f"gamma/zeta enumeration capped at n <= {ENUMERATION_CAP}")
    vals = h.all_values()
    tol = 1e-9 * max(1.0, float(np.abs(vals).max()))
    gamma, gw = _gamma_enum(vals, n, tol)
    zeta, zw = _zeta_enum(vals, n, tol)
    return WeakSubmodReport(gamma, zeta, gw, zw)


def _gamma_enum(vals: np.ndarray, n: int, tol: float):
    # for the ratio only S \ A matters, so sweep A and S ranging over
    # subsets of the complement of A: 3^n pairs instead of 4^n
    best = np.inf
    witness = None
    bitmats = {}
    for A in range(1 << n):
        comp = [j for j in range(n) if not A >> j & 1]
        r = len(comp)
        if r == 0:
            continue
        gains = vals[A | (1 << np.array(comp))] - vals[A]
        M = bitmats.get(r)
        if M is None:
            local = np.arange(1 << r)
            M = (local[:, None] >> np.arange(r)) & 1
            bitmats[r] = M
        modsum = M @ gains
        smasks = M @ (1 << np.array(comp, dtype=np.int64))
        denom = vals[A + smasks] - vals[A]
        ok = denom > tol
        if not ok.any():
            continue
        ratios = modsum[ok] / denom[ok]
        i = int(np.argmin(ratios))
        if ratios[i] < best:
            best = float(ratios[i])
            S = int(smasks[ok][i])
            witness = (frozenset(items_of(A)), frozenset(items_of(S)))
    if witness is None:
        return 1.0, None
    if best >= 1.0 - 1e-12:  # enumeration noise floor on submodular inputs
        return 1.0, witness
    return _clamp01(best), witness


def _zeta_enum(vals: np.ndarray, n: int, tol: float):
    # reparametrize (S, A, v) as B = A - v contained in U = B + S: for each v,
    # minimize gain_v(U) / max over positive gain_v(B), B subset of U, via a
    # superset-max (zeta-transform) sweep
    masks = np.arange(1 << n)
    best = np.inf
    witness = None
    for v in range(n):
        bitv = 1 << v
        gv = np.full(1 << n, np.nan)
        wo = masks[(masks & bitv) == 0]
        gv[wo] = vals[wo | bitv] - vals[wo]
        maxb = np.where(np.nan_to_num(gv, nan=-np.inf) > tol, gv, -np.inf)
        argb = masks.copy()
        for j in range(n):
            if j == v:
                continue
            bitj = 1 << j
            dst = masks[((masks & bitv) == 0) & ((masks & bitj) != 0)]
            src = dst ^ bitj
            better = maxb[src] > maxb[dst]
            maxb[dst] = np.where(better, maxb[src], maxb[dst])
            argb[dst] = np.where(better, argb[src], argb[dst])
        usable = wo[np.isfinite(maxb[wo])]
        if usable.size == 0:
            continue
        ratios = gv[usable] / maxb[usable]
        i = int(np.argmin(ratios))
        if ratios[i] < best:
            best = float(ratios[i])
            U = int(usable[i])
            B = int(argb[U])
            witness = (frozenset(items_of(U & ~B)),       # S = U - B
                       frozenset(items_of(B | bitv)),     # A = B + v
                       v)
    if witness is None:
        return 0.0, None
    if best >= 1.0 - 1e-12:  # modular up to float noise
        return 0.0, witness
    return _clamp01(1.0 - best), witness


def _check(oracle: SetFunctionOracle, V: GroundSet) -> int:
    if V.n != oracle.n:
        raise OracleInputError("ground set size disagrees with the oracle")
    return V.n
