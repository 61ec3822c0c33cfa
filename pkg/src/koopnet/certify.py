"""Error-bound functionals of generator families and the network certificates built from them.

Matrix norms are induced one-norms (maximum absolute column sum), vector
norms are one-norms.  The functionals need the generator compression on the
dictionary span, which is unknown; callers pass a family fitted on a large
sample as a stand-in.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .graph import Condensation, Digraph, condensation, cycle_order, has_vertex_shared_by_cycles, topological_sort
from .learners import GeneratorFamily


def mat_norm(A: np.ndarray) -> float:
    return float(np.linalg.norm(A, 1)) if np.size(A) else 0.0


def vec_norm(v: np.ndarray) -> float:
    return float(np.sum(np.abs(v)))


@dataclass
class ErrorFunctionals:
    """Zero-estimation-error values of the bound functionals for every subsystem and arc.

    ``E[(i, j)]`` is the gain from the error of neighbour ``j`` into
    subsystem ``i``.  ``E_worst`` is the same gain with ``||z_i(0)||``
    maximised over the corners of the subsystem box.
    """

    T: float
    alpha: dict
    rho: dict
    E_V: dict
    eta: dict
    nu: dict
    E: dict
    E_worst: dict = field(default_factory=dict)
    P_norm: dict = field(default_factory=dict)
    surrogate_m: int | None = None

    def to_dict(self) -> dict:
        def arcs(d):
            return [{"i": i, "j": j, "value": v} for (i, j), v in sorted(d.items())]

        def verts(d):
            return {str(i): v for i, v in sorted(d.items())}
        return {"T": self.T, "surrogate_m": self.surrogate_m, "alpha": verts(self.alpha), "rho": verts(self.rho),
                "E_V": verts(self.E_V), "eta": verts(self.eta), "nu": verts(self.nu), "P_norm": verts(self.P_norm),
                "E": arcs(self.E), "E_worst": arcs(self.E_worst)}


def _sum_by_neighbour(fam: GeneratorFamily, fn) -> dict:
    out: dict = {}
    for (j, r), L in fam.Le.items():
        out[j] = out.get(j, 0.0) + fn(L)
    return out


def growth_rate(fam: GeneratorFamily, alpha: dict) -> float:
    """``||L0|| (1 + sum_j alpha_j) + sum_j alpha_j sum_r ||L^{e_j^r}||``."""
    nbrs = sorted({j for j, _ in fam.Le})
    le = _sum_by_neighbour(fam, mat_norm)
    return mat_norm(fam.L0) * (1.0 + sum(alpha[j] for j in nbrs)) + sum(alpha[j] * le[j] for j in nbrs)


def coupling_strength(fam: GeneratorFamily, j: int) -> float:
    """``sum_r ||L^{e_j^r} - L0||``."""
    return float(sum(mat_norm(D) for D in fam.coupling_blocks(j)))


def compute_functionals(families, graph: Digraph, domains, T: float, x0, dims,
                        surrogate_m: int | None = None) -> ErrorFunctionals:
    """Evaluate the bound functionals at zero estimation error.

    ``families[i - 1]`` is the reference generator family of subsystem ``i``;
    ``x0`` is the full initial state at which ``||z_i(0)||`` is taken.
    """
    alpha = {i: domains[i - 1].max_one_norm() for i in graph.vertices}
    offs = np.concatenate([[0], np.cumsum(dims)]).astype(int)
    x0 = np.asarray(x0, dtype=float)
    rho, E_V, eta, nu, P_norm, E, E_worst = {}, {}, {}, {}, {}, {}, {}
    for i in graph.vertices:
        fam = families[i - 1]
        d = fam.dictionary
        P_norm[i] = mat_norm(d.selector())
        rho[i] = growth_rate(fam, alpha)
        E_V[i] = rho[i]  # the functional at zero estimation error
        nu[i] = rho[i] + E_V[i]
        z0 = d(x0[offs[i - 1]:offs[i]])
        eta[i] = P_norm[i] * vec_norm(z0) * T
        corners = domains[i - 1].corners()
        zmax = max(vec_norm(d(c)) for c in corners.T)
        for j in graph.in_neighbours(i):
            c = coupling_strength(fam, j)
            E[(i, j)] = _scaled_exp(eta[i] * c, nu[i] * T)
            E_worst[(i, j)] = _scaled_exp(P_norm[i] * zmax * T * c, nu[i] * T)
    return ErrorFunctionals(T, alpha, rho, E_V, eta, nu, E, E_worst, P_norm, surrogate_m)


def _scaled_exp(a: float, x: float) -> float:
    """``a * exp(x)`` for ``a >= 0``, saturating to ``inf`` instead of warning."""
    if a == 0.0:
        return 0.0
    with np.errstate(over="ignore"):
        return float(np.exp(np.log(a) + x))


def general_functionals(fam: GeneratorFamily, alpha: dict, dL0: float, dLe: dict, T: float,
                        z0_norm: float, P_norm: float = 1.0) -> dict:
    """The bound functionals at nonzero estimation errors.

    ``dL0`` is ``||Delta L0||`` and ``dLe[(j, r)]`` is ``||Delta L^{e_j^r}||``.
    Returns ``E_delta_i``, ``E_delta_ij``, ``E_V``, ``E_i`` and ``E_ij``.
    """
    nbrs = sorted({j for j, _ in fam.Le})
    a = sum(alpha[j] for j in nbrs)
    E_delta_i = (1.0 + a) * dL0 + sum(alpha[k] * dLe[(k, r)] for (k, r) in fam.Le)
    E_delta_ij = {j: sum(dLe[(k, r)] + dL0 + mat_norm(fam.Le[(k, r)] - fam.L0) for (k, r) in fam.Le if k == j)
                  for j in nbrs}
    E_V = (dL0 + mat_norm(fam.L0)) * (1.0 + a) + sum(alpha[k] * (dLe[(k, r)] + mat_norm(fam.Le[(k, r)]))
                                                      for (k, r) in fam.Le)
    rho = growth_rate(fam, alpha)
    gain = P_norm * z0_norm * T * np.exp((rho + E_V) * T)
    return {"E_delta_i": E_delta_i, "E_delta_ij": E_delta_ij, "E_V": E_V, "E_i": gain * E_delta_i,
            "E_ij": {j: gain * v for j, v in E_delta_ij.items()}}


# ---- certificate regimes --------------------------------------------------------

@dataclass
class Verdict:
    passed: bool
    value: float | None = None
    detail: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"passed": bool(self.passed), "value": self.value, **self.detail}


def check_acyclic(graph: Digraph) -> Verdict:
    order = topological_sort(graph)
    return Verdict(order is not None, None, {"order": list(order) if order else None})


def check_weak_interconnection(func: ErrorFunctionals, graph: Digraph) -> Verdict:
    """``max_i sum_{j in out(i)} E_ji < 1``."""
    sums = {i: sum(func.E[(j, i)] for j in graph.out_neighbours(i)) for i in graph.vertices}
    eps = max(sums.values()) if sums else 0.0
    return Verdict(eps < 1.0, eps, {"per_vertex": {str(i): v for i, v in sums.items()}})


def check_condensation_weak(func: ErrorFunctionals, cond: Condensation, graph: Digraph) -> list[Verdict]:
    """The weak-interconnection sum restricted to each strong component (trivial ones pass)."""
    out = []
    for comp in cond.components:
        if len(comp) == 1:
            out.append(Verdict(True, 0.0, {"component": sorted(comp), "vacuous": True}))
            continue
        sums = {i: sum(func.E[(j, i)] for j in graph.out_neighbours(i) if j in comp) for i in sorted(comp)}
        eps = max(sums.values())
        out.append(Verdict(eps < 1.0, eps, {"component": sorted(comp)}))
    return out


def check_single_cycle_small_gain(func: ErrorFunctionals, cond: Condensation, graph: Digraph) -> list[Verdict]:
    """Product of the gains around each cycle, with the cycle error system checked for the M-matrix class."""
    if has_vertex_shared_by_cycles(graph):
        raise ValueError("small-gain product condition needs strong components that are single cycles")
    out = []
    for comp in cond.components:
        if len(comp) == 1:
            out.append(Verdict(True, None, {"component": sorted(comp), "vacuous": True}))
            continue
        seq = cycle_order(graph, comp)
        gains = [func.E[(seq[k], seq[k - 1])] for k in range(len(seq))]
        with np.errstate(over="ignore", invalid="ignore"):
            prod = float(np.prod(gains))
        A = cycle_matrix(gains)
        mm = m_matrix_membership(A)
        out.append(Verdict(prod < 1.0, prod, {"component": sorted(comp), "cycle": list(seq), "gains": gains,
                                              "m_matrix": mm.member, "pivots": mm.pivots}))
    return out


def cycle_matrix(gains) -> np.ndarray:
    """Error matrix of a cycle: ones on the diagonal, ``-gains[k]`` linking entry ``k`` to its predecessor."""
    n = len(gains)
    A = np.eye(n)
    for k in range(n):
        A[k, (k - 1) % n] -= gains[k]
    return A


@dataclass
class MembershipResult:
    member: bool
    pivots: list
    reason: str = ""


def m_matrix_membership(A: np.ndarray) -> MembershipResult:
    """Sign pattern (positive diagonal, nonpositive off-diagonal) plus positive Schur pivots."""
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError("square matrix required")
    n = A.shape[0]
    if np.any(np.diag(A) <= 0):
        return MembershipResult(False, [], "nonpositive diagonal entry")
    if np.any(A[~np.eye(n, dtype=bool)] > 0):
        return MembershipResult(False, [], "positive off-diagonal entry")
    pivots = []
    U = A.copy()
    while True:
        p = float(U[0, 0])
        pivots.append(p)
        if p <= 0:
            return MembershipResult(False, pivots, f"pivot {len(pivots)} is {p:g}")
        if U.shape[0] == 1:
            return MembershipResult(True, pivots)
        U = U[1:, 1:] - np.outer(U[1:, 0], U[0, 1:]) / p


def m_matrix_bound(A: np.ndarray, b: np.ndarray) -> np.ndarray:
    """``A^{-1} b``, the largest ``e`` with ``A e <= b`` for members of the class."""
    res = m_matrix_membership(A)
    if not res.member:
        raise ValueError(f"matrix is not in the M-matrix class: {res.reason}")
    b = np.asarray(b, dtype=float)
    if np.any(b < 0):
        raise ValueError("right-hand side must be nonnegative")
    return np.linalg.solve(A, b)


@dataclass
class Certificate:
    regime: str
    functionals: ErrorFunctionals
    acyclic: Verdict
    weak: Verdict
    condensation_weak: list
    small_gain: list | None
    shared_cycle_vertex: bool

    @property
    def small_gain_passed(self) -> bool | None:
        if self.small_gain is None:
            return None
        return all(v.passed for v in self.small_gain)

    def to_dict(self) -> dict:
        return {
            "regime": self.regime,
            "acyclic": self.acyclic.to_dict(),
            "weakly_interconnected": self.weak.to_dict(),
            "condensation_weak": [v.to_dict() for v in self.condensation_weak],
            "single_cycle_small_gain": None if self.small_gain is None else [v.to_dict() for v in self.small_gain],
            "vertex_shared_by_cycles": self.shared_cycle_vertex,
            "functionals": self.functionals.to_dict(),
        }


def certify(func: ErrorFunctionals, graph: Digraph) -> Certificate:
    """Evaluate every regime; ``regime`` names the first one that holds (or ``none``)."""
    cond = condensation(graph)
    acyc = check_acyclic(graph)
    weak = check_weak_interconnection(func, graph)
    cweak = check_condensation_weak(func, cond, graph)
    shared = has_vertex_shared_by_cycles(graph)
    sg = None if shared else check_single_cycle_small_gain(func, cond, graph)
    if acyc.passed:
        regime = "acyclic"
    elif weak.passed:
        regime = "weakly_interconnected"
    elif all(v.passed for v in cweak):
        regime = "condensation_weak"
    elif sg is not None and all(v.passed for v in sg):
        regime = "single_cycle_small_gain"
    else:
        regime = "none"
    return Certificate(regime, func, acyc, weak, cweak, sg, shared)
