"""Identification procedures: gEDMD, EDMD and the network variants built on them.

Convention: every fitted matrix acts on lifted column vectors from the left,
``z' ~ L z`` for generators and ``z+ ~ K z`` for operators.  Regressions are
``W = Y X^T (X X^T + ridge I)^+`` with targets ``Y`` and regressors ``X``
stored column-wise.

Kronecker blocks follow ``numpy.kron``: in ``x_j (x) z_i`` the product
``x_{j,r} z_{i,k}`` sits at (0-based) index ``r * N_i + k``.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .dictionary import Dictionary
from .graph import Digraph
from .sampling import (SnapshotSet, derive_seed, extract_local, flow_data, flow_data_local,
                       generator_data_local, sample_local_states)
from .systems import NetworkSystem, canonical_input

RCOND = 1e-10


def regress(Y: np.ndarray, X: np.ndarray, ridge: float = 0.0) -> np.ndarray:
    """Least-squares ``W`` with ``W X ~ Y`` through the truncated pseudo-inverse of the Gram matrix."""
    if X.shape[1] == 0:
        raise ValueError("empty data")
    gram = X @ X.T
    if ridge:
        gram = gram + ridge * np.eye(gram.shape[0])
    return (Y @ X.T) @ np.linalg.pinv(gram, rcond=RCOND, hermitian=True)


def kron_columns(x: np.ndarray, z: np.ndarray) -> np.ndarray:
    """Column-wise ``x (x) z`` for ``x`` of shape ``(n, m)`` and ``z`` of shape ``(N, m)``."""
    if x.ndim == 1:
        return np.kron(x, z)
    return (x[:, None, :] * z[None, :, :]).reshape(x.shape[0] * z.shape[0], -1)


def gedmd_fit(data: SnapshotSet, d: Dictionary, ridge: float = 0.0) -> np.ndarray:
    """Generator matrix ``L`` with ``d/dt Phi(x) ~ L Phi(x)`` from vector-field samples."""
    if data.m == 0:
        raise ValueError("empty data")
    return regress(d.generator_action(data.inputs, data.targets), d(data.inputs), ridge)


def edmd_fit(data: SnapshotSet, d: Dictionary, ridge: float = 0.0) -> np.ndarray:
    """Koopman matrix ``K`` with ``Phi(x(dt)) ~ K Phi(x(0))`` from flow pairs."""
    if data.m == 0:
        raise ValueError("empty data")
    return regress(d(data.targets), d(data.inputs), ridge)


def _mat_to_list(a):
    return np.asarray(a).tolist()


@dataclass
class GeneratorFamily:
    """Drift generator ``L0`` and one generator per canonical input ``e_j^r`` (keys ``(j, r)``, 1-based)."""

    subsystem: int
    L0: np.ndarray
    Le: dict
    dictionary: Dictionary
    m: int = 0

    def coupling_blocks(self, j: int) -> list[np.ndarray]:
        rs = sorted(r for (k, r) in self.Le if k == j)
        return [self.Le[(j, r)] - self.L0 for r in rs]

    def matrix(self, inputs: dict) -> np.ndarray:
        """``L0 + sum_{j,r} x_{j,r} (L^{e_j^r} - L0)`` for neighbour states ``inputs[j]``."""
        out = self.L0.copy()
        for (j, r), L in self.Le.items():
            out += inputs[j][r - 1] * (L - self.L0)
        return out

    def to_dict(self) -> dict:
        return {"subsystem": self.subsystem, "m": self.m, "L0": _mat_to_list(self.L0),
                "Le": [{"j": j, "r": r, "L": _mat_to_list(L)} for (j, r), L in sorted(self.Le.items())],
                "dictionary": self.dictionary.to_dict()}

    @classmethod
    def from_dict(cls, data: dict) -> "GeneratorFamily":
        return cls(int(data["subsystem"]), np.array(data["L0"], dtype=float),
                   {(int(e["j"]), int(e["r"])): np.array(e["L"], dtype=float) for e in data["Le"]},
                   Dictionary.from_dict(data["dictionary"]), int(data.get("m", 0)))


@dataclass
class OperatorFamily:
    """``K0`` and per-neighbour blocks ``K[j]`` of shape ``(N_i, n_j N_i)`` acting on ``x_j (x) z_i``."""

    subsystem: int
    K0: np.ndarray
    K: dict
    dictionary: Dictionary
    dt: float
    m: int = 0

    def step(self, z: np.ndarray, inputs: dict) -> np.ndarray:
        out = self.K0 @ z
        for j, Kj in self.K.items():
            out = out + Kj @ kron_columns(inputs[j], z)
        return out

    def to_dict(self) -> dict:
        return {"subsystem": self.subsystem, "m": self.m, "dt": self.dt, "K0": _mat_to_list(self.K0),
                "K": [{"j": j, "K": _mat_to_list(Kj)} for j, Kj in sorted(self.K.items())],
                "dictionary": self.dictionary.to_dict()}

    @classmethod
    def from_dict(cls, data: dict) -> "OperatorFamily":
        return cls(int(data["subsystem"]), np.array(data["K0"], dtype=float),
                   {int(e["j"]): np.array(e["K"], dtype=float) for e in data["K"]},
                   Dictionary.from_dict(data["dictionary"]), float(data["dt"]), int(data.get("m", 0)))


@dataclass
class LocalLinearFamily:
    """lEDMD blocks: ``z_i+ = A z_i + sum_j B[j] z_j``."""

    subsystem: int
    A: np.ndarray
    B: dict
    dictionary: Dictionary
    dt: float
    m: int = 0

    def to_dict(self) -> dict:
        return {"subsystem": self.subsystem, "m": self.m, "dt": self.dt, "A": _mat_to_list(self.A),
                "B": [{"j": j, "B": _mat_to_list(Bj)} for j, Bj in sorted(self.B.items())],
                "dictionary": self.dictionary.to_dict()}

    @classmethod
    def from_dict(cls, data: dict) -> "LocalLinearFamily":
        return cls(int(data["subsystem"]), np.array(data["A"], dtype=float),
                   {int(e["j"]): np.array(e["B"], dtype=float) for e in data["B"]},
                   Dictionary.from_dict(data["dictionary"]), float(data["dt"]), int(data.get("m", 0)))


@dataclass
class ExtendedPredictor:
    """Linear predictor on the stacked state of ``members`` (EDMD when members cover the network)."""

    members: tuple
    K: np.ndarray
    dictionary: Dictionary
    dt: float
    m: int = 0

    def to_dict(self) -> dict:
        return {"members": list(self.members), "m": self.m, "dt": self.dt, "K": _mat_to_list(self.K),
                "dictionary": self.dictionary.to_dict()}

    @classmethod
    def from_dict(cls, data: dict) -> "ExtendedPredictor":
        return cls(tuple(int(v) for v in data["members"]), np.array(data["K"], dtype=float),
                   Dictionary.from_dict(data["dictionary"]), float(data["dt"]), int(data.get("m", 0)))


_FAMILY_TYPES = {"mgedmd": GeneratorFamily, "medmd": OperatorFamily, "ledmd": LocalLinearFamily,
                 "sedmd": ExtendedPredictor, "edmd": ExtendedPredictor}


@dataclass
class NetworkKoopmanModel:
    """Fitted surrogate of a whole network.

    ``families[i - 1]`` describes subsystem ``i``; for ``edmd`` every entry is
    the same full-state predictor.  ``provenance`` records how each
    subsystem's model was obtained (fitted, copied, partially_refit).
    """

    kind: str
    graph: Digraph
    dims: tuple
    families: list
    dt: float | None = None
    provenance: dict = field(default_factory=dict)
    seed: int | None = None

    def __post_init__(self):
        if self.kind not in _FAMILY_TYPES:
            raise ValueError(f"unknown model kind {self.kind!r}")
        if not self.provenance:
            self.provenance = {i: "fitted" for i in self.graph.vertices}

    def validate(self) -> "NetworkKoopmanModel":
        """Check that every subsystem has a family whose neighbour keys match the graph."""
        if len(self.families) != self.graph.num_vertices or any(f is None for f in self.families):
            raise ValueError("one family per subsystem is required")
        for i, fam in enumerate(self.families, start=1):
            if self.kind == "mgedmd":
                keys = {j for j, _ in fam.Le}
            elif self.kind in ("medmd",):
                keys = set(fam.K)
            elif self.kind == "ledmd":
                keys = set(fam.B)
            else:
                continue
            if keys != set(self.graph.in_neighbours(i)):
                raise ValueError(f"family of subsystem {i} couples to {sorted(keys)}, "
                                 f"graph says {list(self.graph.in_neighbours(i))}")
        return self

    def family(self, i: int):
        return self.families[i - 1]

    def to_dict(self) -> dict:
        out = {"kind": self.kind, "graph": self.graph.to_dict(), "dims": list(self.dims), "dt": self.dt,
               "seed": self.seed, "provenance": {str(i): p for i, p in sorted(self.provenance.items())}}
        if self.kind == "edmd":
            out["families"] = [self.families[0].to_dict()]
        else:
            out["families"] = [f.to_dict() for f in self.families]
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "NetworkKoopmanModel":
        kind = data["kind"]
        graph = Digraph.from_dict(data["graph"])
        fams = [_FAMILY_TYPES[kind].from_dict(f) for f in data["families"]]
        if kind == "edmd":
            fams = fams * graph.num_vertices
        return cls(kind, graph, tuple(data["dims"]), fams, data.get("dt"),
                   {int(i): p for i, p in data.get("provenance", {}).items()}, data.get("seed"))


def input_directions(sys: NetworkSystem, i: int) -> list[tuple[int, int]]:
    """Canonical inputs ``(j, r)`` of subsystem ``i`` in fitting order."""
    return [(j, r) for j in sys.in_neighbours(i) for r in range(1, sys.dims[j - 1] + 1)]


def _states_for(sys, i, m, seed, label, states):
    if states is not None:
        return np.asarray(states, dtype=float)[sys.block(i)]
    return sample_local_states(sys, i, m, derive_seed(seed, i, label))


def active_inputs(sys: NetworkSystem, i: int, x: np.ndarray, tol: float = 0.0) -> set:
    """Input channels ``(j, r)`` whose coupling column is nonzero somewhere on the states ``x`` of subsystem ``i``."""
    out = set()
    for j in sys.in_neighbours(i):
        G = np.asarray(sys.coupling[(i, j)](x), dtype=float)
        G = G.reshape(G.shape[:2] + (-1,))
        for r in range(1, sys.dims[j - 1] + 1):
            if np.max(np.abs(G[:, r - 1]), initial=0.0) > tol:
                out.add((j, r))
    return out


def fit_generator_family(sys: NetworkSystem, i: int, d: Dictionary, m: int, seed: int,
                         ridge: float = 0.0, mode: str = "shared", states=None,
                         method: str = "exact", active: set | None = None) -> GeneratorFamily:
    """One gEDMD regression per input direction ``v in {0} U {e_j^r}``.

    ``mode="shared"`` reuses the same states for every direction (as when all
    regressions are fed from one data set); ``"independent"`` draws fresh
    states per direction from a seed derived from ``(seed, i, v-index)``.
    ``states`` optionally supplies full-system states to extract from.
    Directions outside ``active`` (when given) are not fitted: their
    generator is set to ``L0``, i.e. the channel is treated as not entering.
    """
    if mode not in ("shared", "independent"):
        raise ValueError(f"unknown sampling mode {mode!r}")
    x = _states_for(sys, i, m, seed, 0, states)
    L0 = gedmd_fit(generator_data_local(sys, i, None, x.shape[1], None, x=x, method=method), d, ridge)
    Le = {}
    for k, (j, r) in enumerate(input_directions(sys, i), start=1):
        if active is not None and (j, r) not in active:
            Le[(j, r)] = L0.copy()
            continue
        xv = x if mode == "shared" else _states_for(sys, i, m, seed, k, None)
        v = canonical_input(sys, i, j, r)
        Le[(j, r)] = gedmd_fit(generator_data_local(sys, i, v, xv.shape[1], None, x=xv, method=method), d, ridge)
    return GeneratorFamily(i, L0, Le, d, m=x.shape[1])


def mgedmd_fit(sys: NetworkSystem, dictionaries, m, seed: int, ridge: float = 0.0, mode: str = "shared",
               states=None, method: str = "exact", inputs: str = "all") -> NetworkKoopmanModel:
    """Fit every subsystem's generator family; ``m`` is an int or one count per subsystem.

    ``inputs="active"`` skips input channels whose coupling column vanishes on
    the training states (see :func:`active_inputs`).
    """
    if inputs not in ("all", "active"):
        raise ValueError(f"unknown input selection {inputs!r}")
    ms = _per_subsystem(m, sys.s)
    fams = []
    for i in sys.graph.vertices:
        act = None
        if inputs == "active":
            act = active_inputs(sys, i, _states_for(sys, i, ms[i - 1], seed, 0, states))
        fams.append(fit_generator_family(sys, i, dictionaries[i - 1], ms[i - 1], seed, ridge, mode, states,
                                         method, act))
    return NetworkKoopmanModel("mgedmd", sys.graph, sys.dims, fams, seed=seed)


def _per_subsystem(m, s):
    if np.ndim(m) == 0:
        return [int(m)] * s
    if len(m) != s:
        raise ValueError("need one sample count per subsystem")
    return [int(v) for v in m]


def operator_regressors(z: np.ndarray, neighbours: dict, order) -> np.ndarray:
    return np.concatenate([z] + [kron_columns(neighbours[j], z) for j in order], axis=0)


def _local_flow_pairs(sys, i, m, dt, seed, mode, snapshots):
    if mode == "extract":
        snaps = snapshots if snapshots is not None else flow_data(sys, m, dt, derive_seed(seed, 0))
        return extract_local(sys, snaps, i)
    if mode == "frozen":
        return flow_data_local(sys, i, m, dt, derive_seed(seed, i))
    raise ValueError(f"unknown sampling mode {mode!r}")


def medmd_fit(sys: NetworkSystem, dictionaries, m: int, dt: float, seed: int, ridge: float = 0.0,
              mode: str = "extract", snapshots: SnapshotSet | None = None) -> NetworkKoopmanModel:
    """Bilinear operator families from flow pairs.

    ``mode="extract"`` cuts the per-subsystem pairs out of full-system flow
    samples; ``"frozen"`` integrates each subsystem with uniformly drawn
    neighbour states held fixed over the step.
    """
    fams = []
    for i in sys.graph.vertices:
        local = _local_flow_pairs(sys, i, m, dt, seed, mode, snapshots)
        fams.append(fit_operator_family(i, local, dictionaries[i - 1], sys.in_neighbours(i), ridge))
    return NetworkKoopmanModel("medmd", sys.graph, sys.dims, fams, dt=dt, seed=seed)


def fit_operator_family(i: int, local: SnapshotSet, d: Dictionary, order, ridge: float = 0.0) -> OperatorFamily:
    N = d.size
    z0 = d(local.inputs)
    W = regress(d(local.targets), operator_regressors(z0, local.neighbours, order), ridge)
    K, off = {}, N
    for j in order:
        nj = local.neighbours[j].shape[0]
        K[j] = W[:, off:off + nj * N]
        off += nj * N
    return OperatorFamily(i, W[:, :N], K, d, local.dt, m=local.m)


def ledmd_fit(sys: NetworkSystem, dictionaries, m: int, dt: float, seed: int, ridge: float = 0.0,
              mode: str = "extract", snapshots: SnapshotSet | None = None) -> NetworkKoopmanModel:
    """Local linear predictors regressing ``z_i+`` on ``[z_i; z_j ...]``."""
    fams = []
    for i in sys.graph.vertices:
        local = _local_flow_pairs(sys, i, m, dt, seed, mode, snapshots)
        d = dictionaries[i - 1]
        order = sys.in_neighbours(i)
        X = np.concatenate([d(local.inputs)] + [dictionaries[j - 1](local.neighbours[j]) for j in order], axis=0)
        W = regress(d(local.targets), X, ridge)
        B, off = {}, d.size
        for j in order:
            Nj = dictionaries[j - 1].size
            B[j] = W[:, off:off + Nj]
            off += Nj
        fams.append(LocalLinearFamily(i, W[:, :d.size], B, d, dt, m=local.m))
    return NetworkKoopmanModel("ledmd", sys.graph, sys.dims, fams, dt=dt, seed=seed)


def extended_members(graph: Digraph, i: int) -> tuple[int, ...]:
    """Subsystem ``i`` together with everything that reaches it."""
    return tuple(sorted(set(graph.ancestors(i)) | {i}))


def _stack_blocks(sys, x, members):
    return np.concatenate([x[sys.block(j)] for j in members], axis=0)


def sedmd_fit(sys: NetworkSystem, dictionaries: dict, m: int, dt: float, seed: int, ridge: float = 0.0,
              snapshots: SnapshotSet | None = None) -> NetworkKoopmanModel:
    """EDMD on the in-closure of every subsystem.

    ``dictionaries[i]`` must act on the stacked states of
    :func:`extended_members` ``(graph, i)``.
    """
    snaps = snapshots if snapshots is not None else flow_data(sys, m, dt, derive_seed(seed, 0))
    fams = []
    for i in sys.graph.vertices:
        members = extended_members(sys.graph, i)
        if len(members) == sys.s and sys.s > 1:
            warnings.warn(f"extended state of subsystem {i} covers the whole network", stacklevel=2)
        data = SnapshotSet("flow", _stack_blocks(sys, snaps.inputs, members),
                           _stack_blocks(sys, snaps.targets, members), dt=dt)
        fams.append(ExtendedPredictor(members, edmd_fit(data, dictionaries[i], ridge), dictionaries[i], dt, snaps.m))
    return NetworkKoopmanModel("sedmd", sys.graph, sys.dims, fams, dt=dt, seed=seed)


def network_edmd_fit(sys: NetworkSystem, d: Dictionary, m: int, dt: float, seed: int, ridge: float = 0.0,
                     snapshots: SnapshotSet | None = None) -> NetworkKoopmanModel:
    """Plain EDMD on the full state, wrapped as a network model."""
    snaps = snapshots if snapshots is not None else flow_data(sys, m, dt, derive_seed(seed, 0))
    pred = ExtendedPredictor(tuple(sys.graph.vertices), edmd_fit(snaps, d, ridge), d, dt, snaps.m)
    return NetworkKoopmanModel("edmd", sys.graph, sys.dims, [pred] * sys.s, dt=dt, seed=seed)


# ---- transfer -----------------------------------------------------------------

def _with_family(model: NetworkKoopmanModel, graph: Digraph, dims, i: int, fam, how: str) -> NetworkKoopmanModel:
    fams = list(model.families) + [None] * (graph.num_vertices - len(model.families))
    fams[i - 1] = fam
    prov = dict(model.provenance)
    prov[i] = how
    return replace(model, graph=graph, dims=tuple(dims), families=fams, provenance=prov)


def _check_prerequisites(present: set, needed: set, i: int):
    missing = needed - present
    if missing:
        raise ValueError(f"subsystem {i} lacks fitted blocks for neighbours {sorted(missing)}")


def transfer_update_operator(model: NetworkKoopmanModel, i: int, j: int, data: SnapshotSet,
                             graph: Digraph | None = None, dims=None, ridge: float = 0.0,
                             provenance: str = "partially_refit") -> NetworkKoopmanModel:
    """Fit only the block of subsystem ``i`` that multiplies ``x_j (x) z_i``.

    The other blocks are kept; the regression target is the part of the
    lifted successor they leave unexplained.  ``lEDMD`` models get the
    analogous update of their ``B[j]`` block.
    """
    graph = graph or model.graph
    dims = dims or model.dims
    fam = model.family(i)
    others = [k for k in graph.in_neighbours(i) if k != j]
    d = fam.dictionary
    z0 = d(data.inputs)
    if model.kind == "medmd":
        _check_prerequisites(set(fam.K), set(others), i)
        explained = fam.K0 @ z0
        for k in others:
            explained = explained + fam.K[k] @ kron_columns(data.neighbours[k], z0)
        Kj = regress(d(data.targets) - explained, kron_columns(data.neighbours[j], z0), ridge)
        K = {k: fam.K[k] for k in others}
        K[j] = Kj
        new = OperatorFamily(i, fam.K0, dict(sorted(K.items())), d, fam.dt, fam.m)
    elif model.kind == "ledmd":
        _check_prerequisites(set(fam.B), set(others), i)
        dj = _neighbour_dictionary(model, j)
        explained = fam.A @ z0
        for k in others:
            explained = explained + fam.B[k] @ _neighbour_dictionary(model, k)(data.neighbours[k])
        Bj = regress(d(data.targets) - explained, dj(data.neighbours[j]), ridge)
        B = {k: fam.B[k] for k in others}
        B[j] = Bj
        new = LocalLinearFamily(i, fam.A, dict(sorted(B.items())), d, fam.dt, fam.m)
    else:
        raise ValueError(f"operator update does not apply to {model.kind} models")
    return _with_family(model, graph, dims, i, new, provenance)


def _neighbour_dictionary(model, j):
    if j > len(model.families) or model.families[j - 1] is None:
        raise ValueError(f"no dictionary known for subsystem {j}")
    return model.families[j - 1].dictionary


def transfer_update_generator(model: NetworkKoopmanModel, sys: NetworkSystem, i: int, j: int, m: int,
                              seed: int, ridge: float = 0.0, states=None,
                              provenance: str = "partially_refit") -> NetworkKoopmanModel:
    """Fit only the generators ``L^{e_j^r}`` of subsystem ``i`` on ``sys`` (the modified network)."""
    if model.kind != "mgedmd":
        raise ValueError("generator update needs an mgedmd model")
    fam = model.family(i)
    others = {k for k in sys.in_neighbours(i) if k != j}
    _check_prerequisites({k for k, _ in fam.Le}, others, i)
    if fam.dictionary.dim_in != sys.dims[i - 1]:
        raise ValueError(f"dictionary of subsystem {i} does not match its dimension in the new network")
    x = _states_for(sys, i, m, seed, 0, states)
    Le = {key: L for key, L in fam.Le.items() if key[0] in others}
    for r in range(1, sys.dims[j - 1] + 1):
        data = generator_data_local(sys, i, canonical_input(sys, i, j, r), x.shape[1], None, x=x)
        Le[(j, r)] = gedmd_fit(data, fam.dictionary, ridge)
    new = GeneratorFamily(i, fam.L0, dict(sorted(Le.items())), fam.dictionary, fam.m)
    return _with_family(model, sys.graph, sys.dims, i, new, provenance)


def copy_family(model: NetworkKoopmanModel, donor: int, recipient: int, channels: dict,
                graph: Digraph, dims, relabel: bool = True) -> NetworkKoopmanModel:
    """Reuse subsystem ``donor``'s model for ``recipient``.

    ``channels`` maps each recipient input channel ``(j', r')`` to the donor
    channel ``(j, r)`` it replaces.  Channels of a donor neighbour must all map
    to one recipient neighbour.  lEDMD input blocks act on the whole lifted
    neighbour state; with ``relabel=False`` they are carried over unchanged
    instead of having their columns permuted to the new channels.
    """
    fam = model.family(donor)
    if dims[recipient - 1] != model.dims[donor - 1]:
        raise ValueError(f"subsystem {recipient} has dimension {dims[recipient - 1]}, "
                         f"donor {donor} has {model.dims[donor - 1]}")
    rec_nbrs = {jp for jp, _ in channels}
    if rec_nbrs != set(graph.in_neighbours(recipient)):
        raise ValueError("channel map must cover exactly the recipient's in-neighbours")
    if model.kind == "mgedmd":
        Le = {(jp, rp): fam.Le[src] for (jp, rp), src in channels.items()}
        new = GeneratorFamily(recipient, fam.L0, dict(sorted(Le.items())), fam.dictionary, fam.m)
    elif model.kind == "medmd":
        N = fam.dictionary.size
        K = {}
        for jp in sorted(rec_nbrs):
            Kjp = np.zeros((N, dims[jp - 1] * N))
            for (jq, rp), (j, r) in channels.items():
                if jq == jp:
                    Kjp[:, (rp - 1) * N:rp * N] = fam.K[j][:, (r - 1) * N:r * N]
            K[jp] = Kjp
        new = OperatorFamily(recipient, fam.K0, K, fam.dictionary, fam.dt, fam.m)
    elif model.kind == "ledmd":
        B = {}
        for jp in sorted(rec_nbrs):
            mapping = {rp: src for (jq, rp), src in channels.items() if jq == jp}
            donors = {j for j, _ in mapping.values()}
            if len(donors) != 1:
                raise ValueError("a recipient neighbour must replace exactly one donor neighbour")
            (j,) = donors
            perm = {r: rp for rp, (_, r) in mapping.items()}
            if relabel:
                B[jp] = _permute_lifted_columns(fam.B[j], model.family(j).dictionary, perm)
            else:
                B[jp] = fam.B[j].copy()
        new = LocalLinearFamily(recipient, fam.A, B, fam.dictionary, fam.dt, fam.m)
    else:
        raise ValueError(f"copying is not supported for {model.kind} models")
    return _with_family(model, graph, dims, recipient, new, "copied")


def _permute_lifted_columns(B: np.ndarray, d: Dictionary, perm: dict) -> np.ndarray:
    """Re-express ``B z(x)`` as a matrix acting on ``z(x')`` where ``x'_{perm[r]} = x_r``.

    Only dictionaries closed under coordinate permutation (coordinate maps and
    monomials) can be re-indexed this way.
    """
    n = d.dim_in
    p = np.array([perm.get(r, r) - 1 for r in range(1, n + 1)])
    if np.all(p == np.arange(n)):
        return B.copy()
    if d.kind not in ("coordinate", "monomial"):
        raise ValueError("coordinate relabelling is only defined for coordinate and monomial dictionaries")
    # index of each observable after relabelling
    rows = [tuple(np.eye(n, dtype=int)[k]) for k in range(n)]
    if d.kind == "monomial":
        rows += [tuple(a) for a in d.exponents]
    pos = {a: k for k, a in enumerate(rows)}
    out = np.zeros_like(B)
    for k, a in enumerate(rows):
        b = [0] * n
        for r in range(n):
            b[p[r]] = a[r]
        out[:, pos[tuple(b)]] = B[:, k]
    if d.include_constant:
        out[:, -1] = B[:, -1]
    return out
