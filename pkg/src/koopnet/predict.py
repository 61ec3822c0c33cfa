"""Rollouts of fitted network models and the log max-error metric.

All predictors accept a single initial state ``(n,)`` or a batch ``(n, m)``
and return a :class:`Prediction` whose ``states`` have shape ``(K+1, n, m)``.
Runs whose lifted state leaves ``BLOWUP`` (or turns non-finite) are frozen,
flagged in ``diverged`` and their states set to NaN from then on.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .learners import NetworkKoopmanModel, kron_columns
from .systems import Trajectory, rk4_step

BLOWUP = 1e12
LOG_FLOOR = -745.0


@dataclass
class Prediction:
    times: np.ndarray
    states: np.ndarray
    diverged: np.ndarray
    lifted: list | None = None

    def trajectory(self) -> Trajectory:
        return Trajectory(self.times, self.states)


def _as_batch(x0):
    x0 = np.asarray(x0, dtype=float)
    return (x0[:, None], True) if x0.ndim == 1 else (x0, False)


def _offsets(dims):
    return np.concatenate([[0], np.cumsum(dims)]).astype(int)


class _Guard:
    """Tracks diverged columns of a batched rollout."""

    def __init__(self, m):
        self.dead = np.zeros(m, dtype=bool)
        self.when = np.full(m, np.nan)

    def check(self, blocks, t):
        with np.errstate(over="ignore", invalid="ignore"):
            bad = np.zeros_like(self.dead)
            for z in blocks:
                bad |= ~np.all(np.isfinite(z), axis=0)
                bad |= np.max(np.abs(np.nan_to_num(z, nan=0.0, posinf=np.inf)), axis=0) > BLOWUP
        new = bad & ~self.dead
        self.when[new] = t
        self.dead |= bad
        for z in blocks:
            z[:, self.dead] = 0.0


def _finish(times, X, guard, single, lifted=None):
    states = np.stack(X)
    # runs stay NaN from the first output after their blow-up
    for c in np.nonzero(guard.dead)[0]:
        states[times >= guard.when[c] - 1e-12, :, c] = np.nan
    if single:
        states = states[..., 0]
    return Prediction(times, states, guard.dead.copy(), lifted)


def predict_generator(model: NetworkKoopmanModel, x0, T: float, dt_out: float, substeps: int = 10,
                      coupling: str = "continuous", keep_lifted: bool = False) -> Prediction:
    """Integrate the coupled bilinear lifted ODE ``z_i' = L_i(x_N(t)) z_i`` with RK4.

    With ``coupling="continuous"`` neighbour states are read from the current
    lifted state at every RK stage; ``"frozen"`` holds them at their value at
    the start of each output interval.
    """
    if model.kind != "mgedmd":
        raise ValueError("predict_generator needs an mgedmd model")
    if coupling not in ("continuous", "frozen"):
        raise ValueError(f"unknown coupling mode {coupling!r}")
    x0, single = _as_batch(x0)
    steps = int(round(T / dt_out)) if T > 0 else 0
    fams = model.families
    dims = model.dims
    off = _offsets(dims)
    sizes = [f.dictionary.size for f in fams]
    zoff = _offsets(sizes)
    diffs = [{key: L - f.L0 for key, L in f.Le.items()} for f in fams]

    def rhs(Z, held=None):
        out = np.empty_like(Z)
        src = Z if held is None else held
        for i, f in enumerate(fams):
            z = Z[zoff[i]:zoff[i + 1]]
            dz = f.L0 @ z
            for (j, r), D in diffs[i].items():
                dz += src[zoff[j - 1] + r - 1] * (D @ z)
            out[zoff[i]:zoff[i + 1]] = dz
        return out

    Z = np.concatenate([f.dictionary(x0[off[i]:off[i + 1]]) for i, f in enumerate(fams)], axis=0)
    guard = _Guard(x0.shape[1])
    X = [_read_states(Z, zoff, dims)]
    lifted = [Z.copy()] if keep_lifted else None
    h = dt_out / substeps
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(1, steps + 1):
            held = Z.copy() if coupling == "frozen" else None
            for _ in range(substeps):
                Z = rk4_step(lambda y: rhs(y, held), Z, h)
            blocks = [Z]
            guard.check(blocks, k * dt_out)
            X.append(_read_states(Z, zoff, dims))
            if keep_lifted:
                lifted.append(Z.copy())
    times = dt_out * np.arange(steps + 1)
    return _finish(times, X, guard, single, lifted)


def _read_states(Z, zoff, dims):
    return np.concatenate([Z[zoff[i]:zoff[i] + dims[i]] for i in range(len(dims))], axis=0).copy()


def predict_operator(model: NetworkKoopmanModel, x0, steps: int, keep_lifted: bool = False) -> Prediction:
    """Iterate ``z_i+ = K0 z_i + sum_j K_j ([I 0] z_j (x) z_i)`` for all subsystems together."""
    if model.kind != "medmd":
        raise ValueError("predict_operator needs an medmd model")
    x0, single = _as_batch(x0)
    dims = model.dims
    off = _offsets(dims)
    fams = model.families
    zs = [f.dictionary(x0[off[i]:off[i + 1]]) for i, f in enumerate(fams)]
    guard = _Guard(x0.shape[1])
    X = [np.concatenate([z[:dims[i]] for i, z in enumerate(zs)])]
    lifted = [np.concatenate(zs)] if keep_lifted else None
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(1, steps + 1):
            xs = {i + 1: z[:dims[i]] for i, z in enumerate(zs)}
            new = []
            for i, f in enumerate(fams):
                z = f.K0 @ zs[i]
                for j, Kj in f.K.items():
                    z = z + Kj @ kron_columns(xs[j], zs[i])
                new.append(z)
            zs = new
            guard.check(zs, k * (model.dt or 1.0))
            X.append(np.concatenate([z[:dims[i]] for i, z in enumerate(zs)]))
            if keep_lifted:
                lifted.append(np.concatenate(zs))
    times = (model.dt or 1.0) * np.arange(steps + 1)
    return _finish(times, X, guard, single, lifted)


def predict_baseline(model: NetworkKoopmanModel, x0, steps: int) -> Prediction:
    """Linear rollouts for ``edmd``, ``sedmd`` and ``ledmd`` models."""
    x0, single = _as_batch(x0)
    dims = model.dims
    off = _offsets(dims)
    guard = _Guard(x0.shape[1])
    if model.kind == "ledmd":
        fams = model.families
        zs = [f.dictionary(x0[off[i]:off[i + 1]]) for i, f in enumerate(fams)]
        X = [x0.copy()]
        with np.errstate(over="ignore", invalid="ignore"):
            for k in range(1, steps + 1):
                new = []
                for i, f in enumerate(fams):
                    z = f.A @ zs[i]
                    for j, Bj in f.B.items():
                        z = z + Bj @ zs[j - 1]
                    new.append(z)
                zs = new
                guard.check(zs, k * model.dt)
                X.append(np.concatenate([z[:dims[i]] for i, z in enumerate(zs)]))
    elif model.kind in ("edmd", "sedmd"):
        # one linear rollout per distinct predictor; subsystem i reads its own block
        preds = []
        for i, f in enumerate(model.families, start=1):
            if not any(p is f for p, _ in preds):
                preds.append((f, []))
            next(lst for p, lst in preds if p is f).append(i)
        states = [None] * len(preds)
        for q, (p, _) in enumerate(preds):
            xb = np.concatenate([x0[off[j - 1]:off[j]] for j in p.members], axis=0)
            states[q] = p.dictionary(xb)
        X = [x0.copy()]
        with np.errstate(over="ignore", invalid="ignore"):
            for k in range(1, steps + 1):
                states = [p.K @ z for (p, _), z in zip(preds, states)]
                guard.check(states, k * model.dt)
                x = np.empty_like(x0)
                for (p, owned), z in zip(preds, states):
                    moff = _offsets([dims[j - 1] for j in p.members])
                    for i in owned:
                        pos = p.members.index(i)
                        x[off[i - 1]:off[i]] = z[moff[pos]:moff[pos + 1]]
                X.append(x)
    else:
        raise ValueError(f"{model.kind} is not a baseline model")
    times = model.dt * np.arange(steps + 1)
    return _finish(times, X, guard, single)


def predict(model: NetworkKoopmanModel, x0, steps: int, dt: float, substeps: int = 10) -> Prediction:
    """Dispatch on the model kind; ``dt`` is the output spacing (must match discrete models)."""
    if model.kind == "mgedmd":
        return predict_generator(model, x0, steps * dt, dt, substeps)
    if model.dt is not None and not np.isclose(model.dt, dt):
        raise ValueError(f"model was fitted with dt={model.dt}, cannot predict on a grid of {dt}")
    if model.kind == "medmd":
        return predict_operator(model, x0, steps)
    return predict_baseline(model, x0, steps)


def prediction_error(truth: np.ndarray, predicted: np.ndarray, dims, truth_times=None, pred_times=None) -> np.ndarray:
    """``ln max_t ||x_i(t) - xhat_i(t)||_1`` per subsystem (rows) and run (columns).

    Arrays have shape ``(K+1, n)`` or ``(K+1, n, m)``.  Exact agreement gives
    the floor ``-745``; a diverged (NaN) prediction gives ``+inf``.
    """
    if truth_times is not None and pred_times is not None:
        if len(truth_times) != len(pred_times) or not np.allclose(truth_times, pred_times):
            raise ValueError("time grids of truth and prediction differ")
    truth = np.asarray(truth, dtype=float)
    predicted = np.asarray(predicted, dtype=float)
    if truth.shape != predicted.shape:
        raise ValueError(f"shape mismatch {truth.shape} vs {predicted.shape}")
    single = truth.ndim == 2
    if single:
        truth, predicted = truth[..., None], predicted[..., None]
    off = _offsets(dims)
    out = np.empty((len(dims), truth.shape[2]))
    for i in range(len(dims)):
        diff = np.abs(truth[:, off[i]:off[i + 1]] - predicted[:, off[i]:off[i + 1]]).sum(axis=1)
        worst = np.max(diff, axis=0)
        worst = np.where(np.isnan(diff).any(axis=0), np.inf, worst)
        with np.errstate(divide="ignore"):
            out[i] = np.maximum(np.log(worst), LOG_FLOOR)
    return out[:, 0] if single else out


def trajectory_to_csv(traj: Trajectory, dims, path: str) -> None:
    """Single trajectory as CSV with columns ``t, x_{i,k}``."""
    header = ["t"] + [f"x_{{{i},{k}}}" for i, n in enumerate(dims, start=1) for k in range(1, n + 1)]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for t, x in zip(traj.times, traj.states):
            w.writerow([repr(float(t))] + [repr(float(v)) for v in np.ravel(x)])
