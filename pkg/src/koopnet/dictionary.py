"""Observable dictionaries: coordinate maps followed by thin-plate RBFs or monomials.

A dictionary evaluated on a state ``(n,)`` returns ``(N,)``; on a batch
``(n, m)`` it returns ``(N, m)``.  Gradients carry the extra state axis:
``(N, n)`` or ``(N, n, m)``.  The first ``n`` observables are always the
coordinate maps, so the state is recovered from the first ``n`` lifted
entries.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .systems import Box


@dataclass(frozen=True, eq=False)
class Dictionary:
    """Coordinate maps plus one family of nonlinear observables.

    kind ``"rbf"``: thin-plate splines ``r^2 log r`` around ``centers``
    (shape ``(len(active), K)``) acting on the coordinates listed in ``active``.
    kind ``"monomial"``: products ``x**alpha`` for each row of ``exponents``
    beyond the linear ones.  kind ``"coordinate"``: identity lift.
    """

    dim_in: int
    kind: str
    centers: np.ndarray | None = None
    active: tuple[int, ...] | None = None
    exponents: np.ndarray | None = None
    include_constant: bool = False

    def __post_init__(self):
        if self.kind not in ("rbf", "monomial", "coordinate"):
            raise ValueError(f"unknown dictionary kind {self.kind!r}")
        if self.kind == "rbf":
            active = tuple(range(self.dim_in)) if self.active is None else tuple(int(a) for a in self.active)
            object.__setattr__(self, "active", active)
            object.__setattr__(self, "centers", np.asarray(self.centers, dtype=float).reshape(len(active), -1))

    @property
    def num_extra(self) -> int:
        if self.kind == "rbf":
            return self.centers.shape[1]
        if self.kind == "monomial":
            return self.exponents.shape[0]
        return 0

    @property
    def size(self) -> int:
        return self.dim_in + self.num_extra + int(self.include_constant)

    def _check(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape[0] != self.dim_in:
            raise ValueError(f"dictionary expects states of dimension {self.dim_in}, got {x.shape[0]}")
        return x

    def __call__(self, x: np.ndarray) -> np.ndarray:
        x = self._check(x)
        parts = [x]
        if self.kind == "rbf":
            parts.append(_thin_plate(x[list(self.active)], self.centers))
        elif self.kind == "monomial":
            parts.append(_monomials(x, self.exponents))
        if self.include_constant:
            parts.append(np.ones((1,) + x.shape[1:]))
        return np.concatenate(parts, axis=0)

    def gradient(self, x: np.ndarray) -> np.ndarray:
        x = self._check(x)
        n = self.dim_in
        eye = np.eye(n).reshape((n, n) + (1,) * (x.ndim - 1))
        parts = [np.broadcast_to(eye, (n, n) + x.shape[1:])]
        if self.kind == "rbf":
            ga = _thin_plate_grad(x[list(self.active)], self.centers)
            g = np.zeros((ga.shape[0], n) + x.shape[1:])
            g[:, list(self.active)] = ga
            parts.append(g)
        elif self.kind == "monomial":
            parts.append(_monomials_grad(x, self.exponents))
        if self.include_constant:
            parts.append(np.zeros((1, n) + x.shape[1:]))
        return np.concatenate(parts, axis=0)

    def generator_action(self, x: np.ndarray, w: np.ndarray) -> np.ndarray:
        """``<grad phi_k(x), w>`` for every observable; batched over trailing axes."""
        return np.einsum("ka...,a...->k...", self.gradient(x), np.asarray(w, dtype=float))

    def selector(self) -> np.ndarray:
        """The ``(n, N)`` matrix picking the coordinate maps out of a lifted state."""
        return np.eye(self.dim_in, self.size)

    def to_dict(self) -> dict:
        out = {"kind": self.kind, "dim_in": self.dim_in, "include_constant": self.include_constant}
        if self.kind == "rbf":
            out["active"] = list(self.active)
            out["centers"] = self.centers.tolist()
        elif self.kind == "monomial":
            out["exponents"] = self.exponents.tolist()
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "Dictionary":
        kind = data["kind"]
        kw = dict(dim_in=int(data["dim_in"]), kind=kind, include_constant=bool(data.get("include_constant", False)))
        if kind == "rbf":
            kw["active"] = tuple(data["active"])
            kw["centers"] = np.array(data["centers"], dtype=float)
        elif kind == "monomial":
            kw["exponents"] = np.array(data["exponents"], dtype=int).reshape(-1, kw["dim_in"])
        return cls(**kw)


def _thin_plate(x, centers):
    diff = x[:, None] - centers.reshape(centers.shape + (1,) * (x.ndim - 1))
    r2 = np.sum(diff * diff, axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        # r^2 log r = r^2 log(r^2) / 2, with the removable singularity set to 0
        return np.where(r2 > 0, 0.5 * r2 * np.log(np.where(r2 > 0, r2, 1.0)), 0.0)


def _thin_plate_grad(x, centers):
    diff = x[:, None] - centers.reshape(centers.shape + (1,) * (x.ndim - 1))
    r2 = np.sum(diff * diff, axis=0)
    scale = np.where(r2 > 0, np.log(np.where(r2 > 0, r2, 1.0)) + 1.0, 0.0)
    # (K, n_active, ...)
    return np.moveaxis(scale[None] * diff, 0, 1)


def _monomials(x, exponents):
    out = np.ones((exponents.shape[0],) + x.shape[1:])
    for k, alpha in enumerate(exponents):
        for a, p in enumerate(alpha):
            if p:
                out[k] = out[k] * x[a] ** p
    return out


def _monomials_grad(x, exponents):
    M, n = exponents.shape
    out = np.zeros((M, n) + x.shape[1:])
    for k, alpha in enumerate(exponents):
        for d in range(n):
            if alpha[d] == 0:
                continue
            term = alpha[d] * np.ones(x.shape[1:])
            for a, p in enumerate(alpha):
                q = p - 1 if a == d else p
                if q:
                    term = term * x[a] ** q
            out[k, d] = term
    return out


def monomial_exponents(n: int, max_degree: int) -> np.ndarray:
    """Multi-indices with ``1 <= |alpha| <= max_degree`` in graded lexicographic order."""
    rows = []
    for deg in range(1, max_degree + 1):
        level = [a for a in itertools.product(range(deg, -1, -1), repeat=n) if sum(a) == deg]
        rows.extend(sorted(level, reverse=True))
    return np.array(rows, dtype=int).reshape(-1, n)


def coordinate_dictionary(n: int) -> Dictionary:
    return Dictionary(n, "coordinate")


def make_monomial_dictionary(n: int, max_degree: int, include_constant: bool = False) -> Dictionary:
    if max_degree < 1:
        raise ValueError("max_degree must be at least 1")
    exps = monomial_exponents(n, max_degree)[n:]  # linear terms are the coordinate maps
    return Dictionary(n, "monomial", exponents=exps, include_constant=include_constant)


def make_thin_plate_rbf_dictionary(n: int, size: int, box: Box, seed, active=None,
                                   include_constant: bool = False) -> Dictionary:
    """Coordinate maps plus ``size - n`` thin-plate RBFs with uniform random centres on ``box``.

    ``active`` restricts the RBFs to a subset of coordinates (centres are then
    drawn on the corresponding faces of ``box``).
    """
    extra = size - n - int(include_constant)
    if extra < 1:
        raise ValueError(f"dictionary size {size} leaves no room for RBFs beyond {n} coordinate maps")
    active = tuple(range(n)) if active is None else tuple(active)
    rng = np.random.Generator(np.random.Philox(seed))
    low, high = box.low[list(active)], box.high[list(active)]
    centers = low[:, None] + (high - low)[:, None] * rng.random((len(active), extra))
    return Dictionary(n, "rbf", centers=centers, active=active, include_constant=include_constant)


def lift(d: Dictionary, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise ValueError("lift takes a single state; use lift_batch for data matrices")
    return d(x)


def lift_batch(d: Dictionary, X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise ValueError("lift_batch takes an (n, m) data matrix")
    return d(X)


def generator_action(d: Dictionary, x: np.ndarray, w: np.ndarray) -> np.ndarray:
    return d.generator_action(x, w)
