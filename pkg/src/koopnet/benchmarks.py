"""Built-in benchmark networks: coupled Duffing and Van-der-Pol oscillators."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .graph import Digraph
from .systems import Box, NetworkSystem, OutputMap, lift_output_coupling


class ConfigError(ValueError):
    """Invalid experiment configuration."""


# Duffing network: alpha_2 = alpha_3 = 0.5 and gamma_2 = 0.5 gamma_3 = 0.25, i.e. gamma = (0.25, 0.5).
# The printed beta_1 = beta_3 = -1 leaves beta_2 unset; beta_2 = beta_3 = -1 is used.
DUFFING3 = dict(alpha=(0.5, 0.5), beta=(-1.0, -1.0), gamma=(0.25, 0.5))

VDP3 = dict(alpha=(5.2525, 196.848, 5266.8), beta=(1.0, 4.0, 4.0))

# (alpha_1, alpha_2, alpha_3, beta_1, beta_2, beta_3, gamma_2, gamma_3)
TRANSFER = (0.2, 0.06, 0.004, 0.1, 0.08, 0.03, 0.05, 0.001)
TRANSFER_EXTRA_GAIN = 0.08

BENCHMARKS = ("duffing3", "vdp3", "transfer_base", "transfer_add4", "transfer_mod3", "transfer_mod3_add4")


def _zero(x):
    return np.zeros_like(x[0])


def _mat(rows):
    """Stack nested lists of broadcastable arrays into an ``(a, b, ...)`` array."""
    flat = np.broadcast_arrays(*[e for row in rows for e in row])
    return np.stack(flat).reshape((len(rows), len(rows[0])) + flat[0].shape)


def _unit_gain(row: int, col: int, gain: float, shape=(2, 2)):
    """Constant coupling matrix with a single nonzero entry (1-based row/col)."""
    def G(x):
        z = _zero(x)
        rows = [[z for _ in range(shape[1])] for _ in range(shape[0])]
        rows[row - 1][col - 1] = z + gain
        return _mat(rows)
    return G


def _duffing3() -> NetworkSystem:
    (a2, a3), (b2, b3), (g2, g3) = DUFFING3["alpha"], DUFFING3["beta"], DUFFING3["gamma"]

    def f1(x):
        return np.stack([0.5 * x[1], -0.5 * x[1] - x[0] ** 3])

    def damped(alpha, beta):
        return lambda x: np.stack([alpha * x[1], -0.5 * x[1] - beta * x[0] ** 3])

    box = Box.cube(2, -1.5, 1.5)
    return NetworkSystem(
        graph=Digraph.from_arcs(3, [(1, 2), (1, 3)]),
        dims=(2, 2, 2),
        drift=(f1, damped(a2, b2), damped(a3, b3)),
        coupling={(2, 1): _unit_gain(2, 1, g2), (3, 1): _unit_gain(2, 1, g3)},
        domain=(box, box, box),
        name="duffing3",
    )


def _vdp3() -> NetworkSystem:
    (a1, a2, a3), (b1, b2, b3) = VDP3["alpha"], VDP3["beta"]

    def f1(x):
        return np.stack([x[1], 0.1 * (1.0 - a1 * x[0] ** 2 * x[1]) - b1 * x[0]])

    def fi(alpha, beta):
        # the +0.1 x_{i,2} part of the output-difference coupling is local
        return lambda x: np.stack([x[1], 0.01 * (1.0 - alpha * x[0] ** 2 * x[1]) - beta * x[0] + 0.1 * x[1]])

    y1 = OutputMap(
        h=lambda x: (x[0] * x[1])[None],
        jacobian=lambda x: _mat([[x[1], x[0]]]),
        q=1,
    )
    box = Box(np.array([-np.pi / 2, -1.0]), np.array([np.pi / 2, 1.0]))
    graph = Digraph.from_arcs(3, [(1, 2), (1, 3), (2, 3), (3, 2)])
    output_coupling = {
        (2, 1): _unit_gain(2, 1, 0.001, shape=(2, 1)),
        (3, 1): _unit_gain(2, 1, 0.001, shape=(2, 1)),
        # y_j = x_{j,2} enters with gain -0.1
        (2, 3): _unit_gain(2, 2, -0.1),
        (3, 2): _unit_gain(2, 2, -0.1),
    }
    return lift_output_coupling(
        graph, (2, 2, 2), (f1, fi(a2, b2), fi(a3, b3)), output_coupling,
        {1: OutputMap(y1.h, y1.jacobian, 1, Box(np.array([-np.pi / 2]), np.array([np.pi / 2])))},
        (box, box, box), name="vdp3",
    )


def _transfer_drift(alpha, beta):
    return lambda x: np.stack([alpha * x[1], -beta * x[0] ** 3])


def _bilinear_gain(gain):
    """``G(x_i)`` with ``G[2, 2] = gain * x_{i,2}`` (product coupling of the modified subsystem)."""
    def G(x):
        z = _zero(x)
        return _mat([[z, z], [z, gain * x[1]]])
    return G


def _transfer(name: str) -> NetworkSystem:
    a1, a2, a3, b1, b2, b3, g2, g3 = TRANSFER
    box = Box.cube(2, -1.5, 1.5)
    drift = [_transfer_drift(a1, b1), _transfer_drift(a2, b2), _transfer_drift(a3, b3)]
    arcs = [(1, 2), (1, 3)]
    coupling = {(2, 1): _unit_gain(2, 1, g2), (3, 1): _unit_gain(2, 1, g3)}
    if name in ("transfer_add4", "transfer_mod3_add4"):
        # subsystem 4 copies subsystem 2 and is driven by x_{3,2}
        drift.append(_transfer_drift(a2, b2))
        arcs.append((3, 4))
        coupling[(4, 3)] = _unit_gain(2, 2, g2)
    if name == "transfer_mod3":
        arcs.append((2, 3))
        coupling[(3, 2)] = _bilinear_gain(TRANSFER_EXTRA_GAIN)
    if name == "transfer_mod3_add4":
        arcs.append((4, 3))
        coupling[(3, 4)] = _bilinear_gain(TRANSFER_EXTRA_GAIN)
    s = len(drift)
    return NetworkSystem(
        graph=Digraph.from_arcs(s, arcs),
        dims=(2,) * s,
        drift=tuple(drift),
        coupling=coupling,
        domain=(box,) * s,
        name=name,
    )


def make_benchmark(name: str) -> NetworkSystem:
    if name == "duffing3":
        return _duffing3()
    if name == "vdp3":
        return _vdp3()
    if name in ("transfer_base", "transfer_add4", "transfer_mod3", "transfer_mod3_add4"):
        return _transfer(name)
    raise ConfigError(f"unknown benchmark {name!r}; choose one of {', '.join(BENCHMARKS)}")


@dataclass(frozen=True)
class Copy:
    """Reuse the model of ``donor`` for ``recipient``.

    ``channels`` maps each recipient input channel ``(j', r')`` to the donor
    channel ``(j, r)`` it plays the role of.
    """

    donor: int
    recipient: int
    channels: dict = field(default_factory=dict)


@dataclass(frozen=True)
class Refit:
    """Identify only the coupling of ``subsystem`` to its new in-neighbour ``neighbour``."""

    subsystem: int
    neighbour: int
    inherit_from: int


@dataclass(frozen=True)
class TransferScenario:
    name: str
    base: str
    target: str
    copies: tuple[Copy, ...] = ()
    refits: tuple[Refit, ...] = ()


# subsystem 2 is driven by x_{1,1}, subsystem 4 by x_{3,2}: swap the channel roles
_COPY_2_TO_4 = Copy(donor=2, recipient=4, channels={(3, 2): (1, 1), (3, 1): (1, 2)})

TRANSFER_SCENARIOS = {
    "transfer_add4": TransferScenario("transfer_add4", "transfer_base", "transfer_add4", copies=(_COPY_2_TO_4,)),
    "transfer_mod3": TransferScenario("transfer_mod3", "transfer_base", "transfer_mod3",
                                      refits=(Refit(3, 2, 3),)),
    "transfer_mod3_add4": TransferScenario("transfer_mod3_add4", "transfer_base", "transfer_mod3_add4",
                                           copies=(_COPY_2_TO_4,), refits=(Refit(3, 4, 3),)),
}
