"""Interconnected ODE systems of the form ``x_i' = f_i(x_i) + sum_j G_ij(x_i) x_j``.

State arrays use a column layout: a single state is a vector of length ``n``;
a batch of ``m`` states is an ``(n, m)`` array.  Drift callables map an
``(n_i, ...)`` array to the same shape, coupling callables map it to
``(n_i, n_j, ...)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Mapping, Sequence

import numpy as np

from .graph import Digraph

Drift = Callable[[np.ndarray], np.ndarray]
Coupling = Callable[[np.ndarray], np.ndarray]


class IntegrationError(RuntimeError):
    """A trajectory produced a non-finite state."""

    def __init__(self, message: str, step: int | None = None, sample: int | None = None):
        super().__init__(message)
        self.step = step
        self.sample = sample


@dataclass(frozen=True)
class Box:
    """Axis-aligned box ``[low, high]`` (inclusive)."""

    low: np.ndarray
    high: np.ndarray

    def __post_init__(self):
        low = np.atleast_1d(np.asarray(self.low, dtype=float))
        high = np.atleast_1d(np.asarray(self.high, dtype=float))
        if low.shape != high.shape or low.ndim != 1:
            raise ValueError("box bounds must be 1-D arrays of equal length")
        if np.any(high < low):
            raise ValueError(f"box has negative width: low={low}, high={high}")
        object.__setattr__(self, "low", low)
        object.__setattr__(self, "high", high)

    @classmethod
    def cube(cls, dim: int, low: float, high: float) -> "Box":
        return cls(np.full(dim, low, dtype=float), np.full(dim, high, dtype=float))

    @property
    def dim(self) -> int:
        return self.low.size

    def max_one_norm(self) -> float:
        """``max_{x in box} ||x||_1``, attained at a corner."""
        return float(np.sum(np.maximum(np.abs(self.low), np.abs(self.high))))

    def corners(self) -> np.ndarray:
        """All ``2**dim`` corners as columns."""
        grids = np.meshgrid(*[(lo, hi) for lo, hi in zip(self.low, self.high)], indexing="ij")
        return np.stack([g.ravel() for g in grids])

    def contains(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        lo = self.low.reshape((-1,) + (1,) * (x.ndim - 1))
        hi = self.high.reshape((-1,) + (1,) * (x.ndim - 1))
        return np.all((x >= lo) & (x <= hi), axis=0)

    @staticmethod
    def product(boxes: Sequence["Box"]) -> "Box":
        return Box(np.concatenate([b.low for b in boxes]), np.concatenate([b.high for b in boxes]))

    def to_dict(self) -> dict:
        return {"low": self.low.tolist(), "high": self.high.tolist()}


@dataclass(frozen=True)
class NetworkSystem:
    """Interconnected system on a digraph.

    ``coupling[(i, j)]`` is ``G_ij`` for each arc ``j -> i``.  ``completion``
    optionally maps a sampled subsystem state onto the set the dynamics
    actually live on (used for output-augmented subsystems where the extra
    coordinates are functions of the original ones).
    """

    graph: Digraph
    dims: tuple[int, ...]
    drift: tuple[Drift, ...]
    coupling: Mapping[tuple[int, int], Coupling]
    domain: tuple[Box, ...]
    name: str = "custom"
    substeps: int = 10
    completion: Mapping[int, Callable[[np.ndarray], np.ndarray]] = field(default_factory=dict)
    free_coords: Mapping[int, tuple[int, ...]] = field(default_factory=dict)

    def __post_init__(self):
        s = self.graph.num_vertices
        if len(self.dims) != s or len(self.drift) != s or len(self.domain) != s:
            raise ValueError("dims, drift and domain need one entry per subsystem")
        expected = {(h, t) for t, h in self.graph.arcs}
        if set(self.coupling) != expected:
            raise ValueError(
                f"coupling keys {sorted(self.coupling)} do not match the arcs {sorted(expected)}"
            )
        for i, box in enumerate(self.domain, start=1):
            if box.dim != self.dims[i - 1]:
                raise ValueError(f"domain of subsystem {i} has dimension {box.dim}, expected {self.dims[i - 1]}")
        if self.substeps < 1:
            raise ValueError("substeps must be positive")

    @property
    def s(self) -> int:
        return self.graph.num_vertices

    @property
    def n(self) -> int:
        return int(sum(self.dims))

    @property
    def offsets(self) -> tuple[int, ...]:
        return tuple(int(v) for v in np.concatenate([[0], np.cumsum(self.dims)]))

    def block(self, i: int) -> slice:
        off = self.offsets
        return slice(off[i - 1], off[i])

    def split(self, x: np.ndarray) -> list[np.ndarray]:
        return [x[self.block(i)] for i in range(1, self.s + 1)]

    def in_neighbours(self, i: int) -> tuple[int, ...]:
        return self.graph.in_neighbours(i)

    def input_dim(self, i: int) -> int:
        return int(sum(self.dims[j - 1] for j in self.in_neighbours(i)))

    def full_domain(self) -> Box:
        return Box.product(self.domain)

    def free(self, i: int) -> tuple[int, ...]:
        """Coordinates of subsystem ``i`` that are independent states (not derived outputs)."""
        return tuple(self.free_coords.get(i, range(self.dims[i - 1])))

    def free_dims(self) -> tuple[int, ...]:
        return tuple(len(self.free(i)) for i in range(1, self.s + 1))

    def free_index(self) -> np.ndarray:
        """Positions of all free coordinates in the full state."""
        return np.concatenate([self.offsets[i - 1] + np.array(self.free(i), dtype=int)
                               for i in range(1, self.s + 1)])

    def embed_free(self, xf: np.ndarray) -> np.ndarray:
        """Full consistent state from values of the free coordinates only."""
        xf = np.asarray(xf, dtype=float)
        x = np.zeros((self.n,) + xf.shape[1:])
        x[self.free_index()] = xf
        return self.complete_full(x)

    def complete(self, i: int, xi: np.ndarray) -> np.ndarray:
        fn = self.completion.get(i)
        return xi if fn is None else fn(xi)

    def complete_full(self, x: np.ndarray) -> np.ndarray:
        if not self.completion:
            return x
        return np.concatenate([self.complete(i, xi) for i, xi in enumerate(self.split(x), start=1)])

    def local_field(self, i: int, xi: np.ndarray, inputs: Mapping[int, np.ndarray]) -> np.ndarray:
        """``f_i(x_i) + sum_j G_ij(x_i) x_j`` with neighbour states from ``inputs``."""
        out = np.array(self.drift[i - 1](xi), dtype=float)
        for j in self.in_neighbours(i):
            xj = inputs.get(j)
            if xj is None:
                continue
            G = self.coupling[(i, j)](xi)
            out = out + np.einsum("ab...,b...->a...", G, xj)
        return out

    def with_substeps(self, substeps: int) -> "NetworkSystem":
        return replace(self, substeps=substeps)


@dataclass
class Trajectory:
    """Uniformly sampled trajectory; ``states`` has shape ``(K+1, n)`` or ``(K+1, n, m)``."""

    times: np.ndarray
    states: np.ndarray

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0]) if self.times.size > 1 else 0.0


def full_vector_field(sys: NetworkSystem, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape[0] != sys.n:
        raise ValueError(f"state has {x.shape[0]} entries, system has {sys.n}")
    blocks = sys.split(x)
    out = [sys.local_field(i, blocks[i - 1], {j: blocks[j - 1] for j in sys.in_neighbours(i)})
           for i in range(1, sys.s + 1)]
    return np.concatenate(out, axis=0)


def rk4_step(rhs: Callable[[np.ndarray], np.ndarray], x: np.ndarray, h: float) -> np.ndarray:
    k1 = rhs(x)
    k2 = rhs(x + 0.5 * h * k1)
    k3 = rhs(x + 0.5 * h * k2)
    k4 = rhs(x + h * k3)
    return x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def rk4_rollout(rhs, x0: np.ndarray, dt: float, steps: int, substeps: int,
                blowup: float | None = None) -> np.ndarray:
    """Classical RK4 with ``substeps`` internal steps per output interval.

    Raises :class:`IntegrationError` at the first output step with a
    non-finite entry (or, with ``blowup``, an entry above that magnitude).
    """
    x = np.array(x0, dtype=float)
    out = np.empty((steps + 1,) + x.shape)
    out[0] = x
    h = dt / substeps
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(1, steps + 1):
            for _ in range(substeps):
                x = rk4_step(rhs, x, h)
            bad = ~np.isfinite(x)
            if blowup is not None:
                bad |= np.abs(np.where(np.isfinite(x), x, 0.0)) > blowup
            if bad.any():
                cols = np.nonzero(bad.reshape(bad.shape[0], -1).any(axis=0))[0] if x.ndim > 1 else None
                sample = int(cols[0]) if cols is not None and cols.size else None
                raise IntegrationError(
                    f"non-finite state at step {k} (t={k * dt:g})"
                    + (f", sample {sample}" if sample is not None else ""),
                    step=k, sample=sample,
                )
            out[k] = x
    return out


def integrate(sys: NetworkSystem, x0: np.ndarray, dt: float, steps: int,
              substeps: int | None = None) -> Trajectory:
    if dt <= 0:
        raise ValueError("dt must be positive")
    x0 = np.asarray(x0, dtype=float)
    states = rk4_rollout(lambda x: full_vector_field(sys, x), x0, dt, steps,
                         substeps or sys.substeps)
    return Trajectory(dt * np.arange(steps + 1), states)


def local_flow(sys: NetworkSystem, i: int, xi0: np.ndarray, v: np.ndarray | Mapping[int, np.ndarray] | None,
               dt: float, steps: int, substeps: int | None = None) -> Trajectory:
    """Flow of subsystem ``i`` with its neighbour inputs frozen at ``v``.

    ``v`` is either the stacked neighbour vector (neighbours in increasing
    index order), a mapping ``j -> x_j``, or ``None`` for zero input.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    inputs = split_inputs(sys, i, v)
    rhs = lambda xi: sys.local_field(i, xi, inputs)  # noqa: E731
    states = rk4_rollout(rhs, np.asarray(xi0, dtype=float), dt, steps, substeps or sys.substeps)
    return Trajectory(dt * np.arange(steps + 1), states)


def split_inputs(sys: NetworkSystem, i: int, v) -> dict[int, np.ndarray]:
    if v is None:
        return {}
    if isinstance(v, Mapping):
        return {int(j): np.asarray(x, dtype=float) for j, x in v.items()}
    v = np.asarray(v, dtype=float)
    if v.shape[0] != sys.input_dim(i):
        raise ValueError(f"input of subsystem {i} needs {sys.input_dim(i)} entries, got {v.shape[0]}")
    out, off = {}, 0
    for j in sys.in_neighbours(i):
        nj = sys.dims[j - 1]
        out[j] = v[off:off + nj]
        off += nj
    return out


def canonical_input(sys: NetworkSystem, i: int, j: int, r: int) -> np.ndarray:
    """Stacked neighbour vector ``e_j^r`` (unit in coordinate ``r`` of neighbour ``j``)."""
    v = np.zeros(sys.input_dim(i))
    off = 0
    for k in sys.in_neighbours(i):
        if k == j:
            v[off + r - 1] = 1.0
            return v
        off += sys.dims[k - 1]
    raise ValueError(f"{j} is not an in-neighbour of {i}")


@dataclass(frozen=True)
class OutputMap:
    """Differentiable output ``y_i = h(x_i)`` with its Jacobian ``dh/dx`` (shape ``(q, n_i, ...)``)."""

    h: Callable[[np.ndarray], np.ndarray]
    jacobian: Callable[[np.ndarray], np.ndarray] | None
    q: int
    box: Box | None = None


def lift_output_coupling(graph: Digraph, dims: Sequence[int], drift: Sequence[Drift],
                         output_coupling: Mapping[tuple[int, int], Coupling],
                         outputs: Mapping[int, OutputMap], domain: Sequence[Box],
                         name: str = "custom", substeps: int = 10) -> NetworkSystem:
    """Rewrite output-coupled subsystems in state-coupled form.

    ``output_coupling[(i, j)]`` maps ``x_i`` to an ``(n_i, q_j)`` matrix that
    multiplies the output ``y_j``.  Subsystems listed in ``outputs`` get the
    augmented state ``[x_i; y_i]`` whose extra coordinates follow
    ``y_i' = dh_i(x_i) x_i'``; subsystems without an output map expose their
    full state (``y_j = x_j``).
    """
    dims = list(dims)
    for i, om in outputs.items():
        if om.jacobian is None:
            raise ValueError(f"output map of subsystem {i} has no gradient")

    def aug_dim(i):
        return dims[i - 1] + (outputs[i].q if i in outputs else 0)

    def make_drift(i):
        f = drift[i - 1]
        if i not in outputs:
            return f
        om, ni = outputs[i], dims[i - 1]

        def ftilde(xt):
            x = xt[:ni]
            fx = f(x)
            return np.concatenate([fx, np.einsum("qa...,a...->q...", om.jacobian(x), fx)], axis=0)
        return ftilde

    def make_coupling(i, j):
        G = output_coupling[(i, j)]
        ni = dims[i - 1]
        nj = dims[j - 1]
        # the neighbour output occupies the trailing q_j coordinates of its augmented state
        lead = nj if j in outputs else 0

        def gtilde(xt):
            x = xt[:ni]
            g = np.asarray(G(x), dtype=float)
            if i in outputs:
                g = np.concatenate([g, np.einsum("qa...,ab...->qb...", outputs[i].jacobian(x), g)], axis=0)
            if lead:
                pad = np.zeros((g.shape[0], lead) + g.shape[2:])
                g = np.concatenate([pad, g], axis=1)
            return g
        return gtilde

    def make_completion(i):
        om, ni = outputs[i], dims[i - 1]

        def complete(xt):
            x = xt[:ni]
            return np.concatenate([x, om.h(x)], axis=0)
        return complete

    boxes = []
    for i in range(1, graph.num_vertices + 1):
        box = domain[i - 1]
        if i in outputs:
            ybox = outputs[i].box or _output_box(outputs[i], box)
            box = Box.product([box, ybox])
        boxes.append(box)

    return NetworkSystem(
        graph=graph,
        dims=tuple(aug_dim(i) for i in range(1, graph.num_vertices + 1)),
        drift=tuple(make_drift(i) for i in range(1, graph.num_vertices + 1)),
        coupling={key: make_coupling(*key) for key in output_coupling},
        domain=tuple(boxes),
        name=name,
        substeps=substeps,
        completion={i: make_completion(i) for i in outputs},
        free_coords={i: tuple(range(dims[i - 1])) for i in outputs},
    )


def _output_box(om: OutputMap, box: Box, grid: int = 41) -> Box:
    """Range box of ``h`` over ``box`` estimated on a tensor grid including the corners."""
    axes = [np.linspace(lo, hi, grid) for lo, hi in zip(box.low, box.high)]
    pts = np.stack([g.ravel() for g in np.meshgrid(*axes, indexing="ij")])
    y = np.atleast_2d(om.h(pts))
    return Box(y.min(axis=1), y.max(axis=1))
