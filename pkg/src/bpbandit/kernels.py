"""Kernels over context points (user features, selected-set history, candidate item).

A context point carries the pieces the composite kernel needs; a KernelSpec is
a small serializable tree (rbf / linear / jaccard_set, combined by sum or
product) with an operand selector saying which piece of the point each leaf
sees.  PointBlock provides vectorized kernel columns against a growing list of
points, which keeps the sketched-GP inner loops out of per-pair Python calls.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from .errors import NumericalError, OracleInputError

OPERANDS = ("user", "item", "set", "whole")
KINDS = ("rbf", "linear", "jaccard_set", "sum", "product")


@dataclass(frozen=True, eq=False)
class ContextPoint:
    """x = (user features, selected set, candidate item)."""

    user_features: Optional[np.ndarray] = None
    selected: frozenset = frozenset()
    item: Optional[int] = None
    item_features: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.user_features is not None:
            object.__setattr__(self, "user_features",
                               np.asarray(self.user_features, dtype=float).ravel())
        if self.item_features is not None:
            object.__setattr__(self, "item_features",
                               np.asarray(self.item_features, dtype=float).ravel())
        sel = frozenset(int(v) for v in self.selected)
        object.__setattr__(self, "selected", sel)
        if self.item is not None and self.item in sel:
            raise OracleInputError(f"candidate {self.item} already in the selected set")
        object.__setattr__(self, "selected_mask", _mask(sel))

    selected_mask: int = field(init=False, default=0)


@dataclass(frozen=True)
class KernelSpec:
    kind: str
    operand: str = "whole"
    bandwidth: Optional[float] = None
    weights: tuple[float, ...] = ()
    children: tuple["KernelSpec", ...] = ()

    def __post_init__(self):
        if self.kind not in KINDS:
            raise OracleInputError(f"unknown kernel kind {self.kind!r}")
        if self.kind == "rbf":
            if self.bandwidth is None or self.bandwidth <= 0:
                raise OracleInputError("rbf kernel needs bandwidth > 0")
        if self.kind == "jaccard_set" and self.operand != "set":
            object.__setattr__(self, "operand", "set")
        if self.kind in ("sum", "product"):
            if not self.children:
                raise OracleInputError(f"{self.kind} kernel needs children")
            if self.kind == "sum":
                if len(self.weights) != len(self.children):
                    raise OracleInputError("sum kernel needs one weight per child")
                if any(w <= 0 for w in self.weights):
                    raise OracleInputError("sum kernel weights must be > 0")
        elif self.operand not in OPERANDS:
            raise OracleInputError(f"unknown operand selector {self.operand!r}")

    def to_dict(self) -> dict:
        d: dict = {"kind": self.kind}
        if self.kind in ("sum", "product"):
            d["children"] = [c.to_dict() for c in self.children]
            if self.kind == "sum":
                d["weights"] = list(self.weights)
        else:
            d["operand"] = self.operand
            if self.bandwidth is not None:
                d["bandwidth"] = self.bandwidth
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "KernelSpec":
        kind = d.get("kind")
        if kind in ("sum", "product"):
            children = tuple(cls.from_dict(c) for c in d.get("children", []))
            weights = tuple(float(w) for w in d.get("weights", ()))
            if kind == "product":
                weights = ()
            return cls(kind=kind, weights=weights, children=children)
        return cls(kind=kind, operand=d.get("operand", "whole"),
                   bandwidth=d.get("bandwidth"))


def composite_kernel(k_user: float = 1.0, k_item: float = 1.0, k_set: float = 1.0,
                     bandwidth: float = 1.0) -> KernelSpec:
    """Default whole-point kernel: weighted sum of a linear kernel on user
    features, an RBF on item features, and Jaccard on the selection history."""
    return KernelSpec(
        kind="sum",
        weights=(k_user, k_item, k_set),
        children=(
            KernelSpec("linear", operand="user"),
            KernelSpec("rbf", operand="item", bandwidth=bandwidth),
            KernelSpec("jaccard_set", operand="set"),
        ),
    )


def _mask(items: Iterable[int]) -> int:
    m = 0
    for v in items:
        m |= 1 << v
    return m


def _jaccard(m1: int, m2: int) -> float:
    if m1 == 0 and m2 == 0:
        return 1.0  # empty histories count as maximally similar
    return (m1 & m2).bit_count() / (m1 | m2).bit_count()


def _vec(spec: KernelSpec, x: ContextPoint) -> np.ndarray:
    if spec.operand == "user":
        v = x.user_features
    elif spec.operand == "item":
        v = x.item_features
    else:  # whole
        parts = [p for p in (x.user_features, x.item_features) if p is not None]
        if not parts:
            raise OracleInputError("whole-point operand needs user or item features")
        return np.concatenate(parts)
    if v is None:
        raise OracleInputError(f"context point has no {spec.operand!r} features")
    return v


def kernel_eval(spec: KernelSpec, x: ContextPoint, y: ContextPoint) -> float:
    if spec.kind == "sum":
        return float(sum(w * kernel_eval(c, x, y)
                         for w, c in zip(spec.weights, spec.children)))
    if spec.kind == "product":
        out = 1.0
        for c in spec.children:
            out *= kernel_eval(c, x, y)
        return float(out)
    if spec.kind == "jaccard_set":
        return _jaccard(x.selected_mask, y.selected_mask)
    a, b = _vec(spec, x), _vec(spec, y)
    if a.shape != b.shape:
        raise OracleInputError(
            f"kernel operand dimension mismatch: {a.shape} vs {b.shape}")
    if spec.kind == "linear":
        return float(a @ b)
    d = a - b
    return float(np.exp(-spec.bandwidth * (d @ d)))


def gram(spec: KernelSpec, X: Sequence[ContextPoint],
         Y: Optional[Sequence[ContextPoint]] = None) -> np.ndarray:
    block = PointBlock()
    for x in X:
        block.append(x)
    cols = X if Y is None else Y
    out = np.empty((len(X), len(cols)))
    for j, y in enumerate(cols):
        out[:, j] = block.cross(spec, y)
    return out


class PointBlock:
    """Append-only stack of context points with cached per-operand arrays."""

    def __init__(self):
        self.points: list[ContextPoint] = []
        self.masks: list[int] = []
        self._stacks: dict[str, np.ndarray] = {}

    def __len__(self) -> int:
        return len(self.points)

    def append(self, x: ContextPoint) -> None:
        self.points.append(x)
        self.masks.append(x.selected_mask)
        self._stacks.clear()

    def _stack(self, spec: KernelSpec, upto: int) -> np.ndarray:
        key = spec.operand
        mat = self._stacks.get(key)
        if mat is None or mat.shape[0] < len(self.points):
            mat = np.vstack([_vec(spec, p)[None, :] for p in self.points])
            self._stacks[key] = mat
        return mat[:upto]

    def cross(self, spec: KernelSpec, x: ContextPoint,
              upto: Optional[int] = None) -> np.ndarray:
        """Vector [k(p_i, x)] over the first `upto` stored points."""
        g = len(self.points) if upto is None else upto
        if g == 0:
            return np.zeros(0)
        if spec.kind == "sum":
            out = np.zeros(g)
            for w, c in zip(spec.weights, spec.children):
                out += w * self.cross(c, x, g)
            return out
        if spec.kind == "product":
            out = np.ones(g)
            for c in spec.children:
                out *= self.cross(c, x, g)
            return out
        if spec.kind == "jaccard_set":
            xm = x.selected_mask
            return np.array([_jaccard(m, xm) for m in self.masks[:g]])
        mat = self._stack(spec, g)
        v = _vec(spec, x)
        if mat.shape[1] != v.shape[0]:
            raise OracleInputError("kernel operand dimension mismatch")
        if spec.kind == "linear":
            return mat @ v
        d = mat - v[None, :]
        return np.exp(-spec.bandwidth * (d * d).sum(axis=1))


def _psd_eigvals(K: np.ndarray) -> np.ndarray:
    K = np.asarray(K, dtype=float)
    if K.ndim != 2 or K.shape[0] != K.shape[1]:
        raise OracleInputError("Gram matrix must be square")
    w = np.linalg.eigvalsh(0.5 * (K + K.T))
    if w.min(initial=0.0) < -1e-6:
        raise NumericalError(f"matrix is not PSD: min eigenvalue {w.min()}")
    return np.clip(w, 0.0, None)


def effective_dimension(K: np.ndarray, lam: float) -> float:
    """d_eff = Tr(K (K + lam I)^-1) = sum_i w_i / (w_i + lam)."""
    if lam <= 0:
        raise OracleInputError("ridge parameter must be > 0")
    w = _psd_eigvals(K)
    return float((w / (w + lam)).sum())


def information_gain_bound(K: np.ndarray, lam: float) -> float:
    """Information-gain upper bound sum_i log(1 + w_i / lam) >= d_eff."""
    if lam <= 0:
        raise OracleInputError("ridge parameter must be > 0")
    w = _psd_eigvals(K)
    return float(np.log1p(w / lam).sum())
