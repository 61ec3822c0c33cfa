"""Seeded i.i.d. snapshot generation.

Every random draw goes through :func:`make_rng`, a Philox generator keyed by
a ``SeedSequence`` built from the master seed and a tuple of integer labels
(subsystem, input direction, ...), so tasks can run in any order and still
produce the same numbers.
"""
from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field

import numpy as np

from .systems import Box, NetworkSystem, rk4_rollout, full_vector_field, split_inputs, IntegrationError


def derive_seed(master: int, *labels: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(master)] + [int(v) for v in labels])


def make_rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.Generator(np.random.Philox(seed))


@dataclass
class SnapshotSet:
    """Aligned input/target columns.

    ``kind`` is ``"generator"`` (targets are vector-field values) or ``"flow"``
    (targets are states one step ``dt`` later).  ``neighbours`` holds the
    neighbour states paired with each column when the set is local.
    """

    kind: str
    inputs: np.ndarray
    targets: np.ndarray
    seed: object = None
    dt: float | None = None
    subsystem: int | None = None
    neighbours: dict = field(default_factory=dict)

    @property
    def m(self) -> int:
        return self.inputs.shape[1]

    def to_csv(self, directory: str) -> None:
        """Write ``inputs.csv`` and ``targets.csv`` with one row per snapshot."""
        os.makedirs(directory, exist_ok=True)
        for fname, arr, role in (("inputs.csv", self.inputs, "x"), ("targets.csv", self.targets,
                                                                    "dx" if self.kind == "generator" else "x_next")):
            with open(os.path.join(directory, fname), "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow([f"{role}_{k + 1}" for k in range(arr.shape[0])])
                for row in arr.T:
                    w.writerow([repr(float(v)) for v in row])


def sample_uniform(box: Box, m: int, seed) -> np.ndarray:
    """``m`` i.i.d. uniform draws on ``box`` as an ``(n, m)`` array."""
    if m < 1:
        raise ValueError("need at least one sample")
    rng = make_rng(seed)
    u = rng.random((box.dim, m))
    return box.low[:, None] + (box.high - box.low)[:, None] * u


def sample_states(sys: NetworkSystem, m: int, seed, box: Box | None = None) -> np.ndarray:
    """Uniform full states, with output-augmented coordinates made consistent."""
    x = sample_uniform(box or sys.full_domain(), m, seed)
    return sys.complete_full(x)


def sample_local_states(sys: NetworkSystem, i: int, m: int, seed, box: Box | None = None) -> np.ndarray:
    x = sample_uniform(box or sys.domain[i - 1], m, seed)
    return sys.complete(i, x)


def generator_data_local(sys: NetworkSystem, i: int, v, m: int, seed, x: np.ndarray | None = None,
                         method: str = "exact", fd_step: float = 1e-4) -> SnapshotSet:
    """Vector-field samples of subsystem ``i`` with neighbour input frozen at ``v``.

    ``x`` overrides the uniform draw (used when several input directions share
    the same states).  ``method="fd"`` replaces the exact field by a central
    difference of the local flow over ``fd_step``.
    """
    if x is None:
        x = sample_local_states(sys, i, m, seed)
    inputs = split_inputs(sys, i, v)
    if method == "exact":
        targets = sys.local_field(i, x, {j: _col(u, x) for j, u in inputs.items()})
    elif method == "fd":
        rhs = lambda xi: sys.local_field(i, xi, {j: _col(u, xi) for j, u in inputs.items()})  # noqa: E731
        fwd = rk4_rollout(rhs, x, fd_step, 1, 1)[-1]
        bwd = rk4_rollout(rhs, x, -fd_step, 1, 1)[-1]
        targets = (fwd - bwd) / (2 * fd_step)
    else:
        raise ValueError(f"unknown target method {method!r}")
    return SnapshotSet("generator", x, np.asarray(targets, dtype=float), seed=seed, subsystem=i)


def _col(u, x):
    u = np.asarray(u, dtype=float)
    if u.ndim == 1 and x.ndim == 2:
        return np.broadcast_to(u[:, None], (u.size, x.shape[1]))
    return u


def flow_data(sys: NetworkSystem, m: int, dt: float, seed, box: Box | None = None,
              substeps: int | None = None) -> SnapshotSet:
    """One-step flow pairs of the full system from uniform initial states."""
    x0 = sample_states(sys, m, seed, box)
    try:
        traj = rk4_rollout(lambda x: full_vector_field(sys, x), x0, dt, 1, substeps or sys.substeps)
    except IntegrationError as exc:
        raise IntegrationError(f"flow sample {exc.sample} blew up: {exc}", exc.step, exc.sample) from None
    return SnapshotSet("flow", x0, traj[-1], seed=seed, dt=dt)


def flow_data_local(sys: NetworkSystem, i: int, m: int, dt: float, seed, box: Box | None = None,
                    neighbour_box: dict | None = None, substeps: int | None = None) -> SnapshotSet:
    """Flow pairs of subsystem ``i`` with neighbour states drawn uniformly and frozen over the step."""
    ss = np.random.SeedSequence(seed) if not isinstance(seed, np.random.SeedSequence) else seed
    own, *others = ss.spawn(1 + len(sys.in_neighbours(i)))
    x0 = sample_local_states(sys, i, m, own, box)
    nb = {}
    for j, sj in zip(sys.in_neighbours(i), others):
        jb = (neighbour_box or {}).get(j)
        nb[j] = sample_local_states(sys, j, m, sj, jb)
    rhs = lambda xi: sys.local_field(i, xi, nb)  # noqa: E731
    try:
        x1 = rk4_rollout(rhs, x0, dt, 1, substeps or sys.substeps)[-1]
    except IntegrationError as exc:
        raise IntegrationError(f"flow sample {exc.sample} of subsystem {i} blew up: {exc}",
                               exc.step, exc.sample) from None
    return SnapshotSet("flow", x0, x1, seed=seed, dt=dt, subsystem=i, neighbours=nb)


def extract_local(sys: NetworkSystem, snaps: SnapshotSet, i: int) -> SnapshotSet:
    """Restrict full-system flow pairs to subsystem ``i`` (neighbour states taken at t=0)."""
    blocks = {j: snaps.inputs[sys.block(j)] for j in sys.in_neighbours(i)}
    return SnapshotSet(snaps.kind, snaps.inputs[sys.block(i)], snaps.targets[sys.block(i)],
                       seed=snaps.seed, dt=snaps.dt, subsystem=i, neighbours=blocks)
