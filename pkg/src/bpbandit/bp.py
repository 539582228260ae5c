"""BP objectives: h(S) = sum_{v in S} m(v) + scale_f * f(S) + scale_g * g(S).

The working decomposition pairs the modular weights with the submodular term:
submodular side F = m + scale_f * f, supermodular side G = scale_g * g.  All
curvatures, modular lower bounds, and feedback channels refer to these sides.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .curvature import modular_lower_bound, submodular_curvature, supermodular_curvature
from .errors import OracleInputError
from .oracles import (GroundSet, SetFunctionOracle, make_modular, scale_oracle,
                      sum_oracles, verify_mnn_properties)


class BPObjective:
    def __init__(self, modular: Sequence[float], f: SetFunctionOracle,
                 g: SetFunctionOracle, scale_f: float = 1.0, scale_g: float = 1.0,
                 name: str = "bp"):
        self.modular = np.asarray(modular, dtype=float)
        if f.n != g.n or len(self.modular) != f.n:
            raise OracleInputError("modular weights, f and g must share a ground set")
        if (self.modular < 0).any():
            raise OracleInputError("modular weights must be nonnegative for MNN")
        if scale_f < 0 or scale_g < 0:
            raise OracleInputError("scales must be nonnegative")
        self.f = f
        self.g = g
        self.scale_f = float(scale_f)
        self.scale_g = float(scale_g)
        self.n = f.n
        self.name = name
        self._cache: dict = {}

    @property
    def ground(self) -> GroundSet:
        return GroundSet(self.n)

    @property
    def submodular_part(self) -> SetFunctionOracle:
        part = self._cache.get("F")
        if part is None:
            part = sum_oracles(make_modular(self.modular),
                               scale_oracle(self.f, self.scale_f),
                               name=f"{self.name}.F")
            self._cache["F"] = part
        return part

    @property
    def supermodular_part(self) -> SetFunctionOracle:
        part = self._cache.get("G")
        if part is None:
            part = scale_oracle(self.g, self.scale_g, name=f"{self.name}.G")
            self._cache["G"] = part
        return part

    @property
    def total(self) -> SetFunctionOracle:
        h = self._cache.get("h")
        if h is None:
            h = sum_oracles(self.submodular_part, self.supermodular_part,
                            name=f"{self.name}.h")
            self._cache["h"] = h
        return h

    def curvatures(self) -> tuple[float, float]:
        """(kappa_f, kappa_g) of the working decomposition, cached.

        An identically zero side counts as modular (curvature 0); the
        per-item ratios of the definitions are vacuous there.
        """
        pair = self._cache.get("curv")
        if pair is None:
            V = self.ground
            if self.submodular_part(range(self.n)) == 0.0:
                kf = 0.0
            else:
                kf, _ = submodular_curvature(self.submodular_part, V)
            if self.supermodular_part(range(self.n)) == 0.0:
                kg = 0.0
            else:
                kg, _ = supermodular_curvature(self.supermodular_part, V)
            pair = (kf, kg)
            self._cache["curv"] = pair
        return pair

    def l1_weights(self) -> np.ndarray:
        """Modular lower bound of the submodular side: l1(v) = F(v | V-v)."""
        l1 = self._cache.get("l1")
        if l1 is None:
            l1, _ = modular_lower_bound(self.submodular_part, self.ground)
            self._cache["l1"] = l1
        return l1

    def distorted(self, k: int) -> "DistortedObjective":
        return DistortedObjective(self.submodular_part, self.supermodular_part,
                                  self.l1_weights(), k)

    def verify(self) -> bool:
        """Exhaustively confirm that both sides are MNN (n <= 10 only)."""
        V = self.ground
        checks = [
            verify_mnn_properties(self.submodular_part, V, "monotone"),
            verify_mnn_properties(self.submodular_part, V, "submodular"),
            verify_mnn_properties(self.supermodular_part, V, "monotone"),
            verify_mnn_properties(self.supermodular_part, V, "supermodular"),
        ]
        return all(c.passed for c in checks)


@dataclass
class DistortedObjective:
    """Step-indexed distorted gains for a BP objective under cardinality k.

    pi_j(v | A) = (1 - 1/k)^(k-j-1) * f1(v | A) + G(v | A) + l1(v), with
    0-indexed steps j (the coefficient is 1 at the final step j = k-1) and
    f1 = F - l1 the totally normalized submodular side.
    """

    F: SetFunctionOracle
    G: SetFunctionOracle
    l1: np.ndarray
    k: int
    _l1_total: float = field(init=False)

    def __post_init__(self):
        if self.k < 1:
            raise OracleInputError("cardinality k must be >= 1")
        self._l1_total = float(self.l1.sum())

    def coefficient(self, j: int) -> float:
        # (1 - 1/k)^(k-j-1); at k = 1 this is 0^0 = 1 and the rule is plain greedy
        return (1.0 - 1.0 / self.k) ** (self.k - j - 1)

    def pi_gain_mask(self, v: int, mask: int, j: int) -> float:
        c = self.coefficient(j)
        f1_gain = self.F.gain_mask(v, mask) - self.l1[v]
        return c * f1_gain + self.G.gain_mask(v, mask) + self.l1[v]

    def pi_gain(self, v: int, items, j: int) -> float:
        from .oracles import mask_of
        return self.pi_gain_mask(v, mask_of(items), j)

    def pi_value(self, items, j: int) -> float:
        """Set-level pi_j(S) with coefficient (1 - 1/k)^(k-j); equals
        f1(S) + G(S) + l1(S) = h(S) at j = k."""
        ids = list(items)
        l1_S = float(self.l1[ids].sum()) if ids else 0.0
        f1_S = self.F(ids) - l1_S
        c = (1.0 - 1.0 / self.k) ** (self.k - j)
        return c * f1_S + self.G(ids) + l1_S
