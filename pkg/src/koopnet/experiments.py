"""Config-driven pipelines: sample, fit, roll out, score, certify, write CSV/JSON."""
from __future__ import annotations

import csv
import io
import json
import os
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import config as C
from .benchmarks import TRANSFER_SCENARIOS, ConfigError, make_benchmark
from .certify import certify, compute_functionals
from .dictionary import Dictionary, make_monomial_dictionary, make_thin_plate_rbf_dictionary
from .learners import (NetworkKoopmanModel, copy_family, extended_members, ledmd_fit, medmd_fit, mgedmd_fit,
                       network_edmd_fit, sedmd_fit, transfer_update_generator, transfer_update_operator)
from .predict import predict, prediction_error
from .sampling import derive_seed, extract_local, flow_data, sample_uniform
from .systems import Box, NetworkSystem, integrate

RESULT_HEADER = ["learner", "m", "sim", "subsystem", "log_err"]
SUMMARY_HEADER = ["learner", "m", "subsystem", "n", "n_diverged", "median", "q1", "q3", "whisker_low",
                  "whisker_high"]


# ---- dictionaries -------------------------------------------------------------

def _make(dcfg: dict, n: int, size: int | None, box: Box, seed, active) -> Dictionary:
    if dcfg["type"] == "monomial":
        return make_monomial_dictionary(n, dcfg["degree"], dcfg.get("constant", False))
    return make_thin_plate_rbf_dictionary(n, size, box, seed, active=active)


def _dict_seed(dcfg, cfg_seed, *labels):
    base = dcfg.get("seed", cfg_seed)
    return derive_seed(base, *labels)


def local_dictionaries(sys: NetworkSystem, dcfg: dict, seed: int) -> list[Dictionary]:
    """Per-subsystem dictionaries; an RBF ``size`` is the total over the network, split evenly."""
    size = dcfg.get("size", 0) // sys.s
    return [_make(dcfg, sys.dims[i - 1], size, sys.domain[i - 1], _dict_seed(dcfg, seed, C.DICT, i), sys.free(i))
            for i in sys.graph.vertices]


def extended_dictionaries(sys: NetworkSystem, dcfg: dict, seed: int) -> dict:
    size = dcfg.get("size", 0) // sys.s
    out = {}
    for i in sys.graph.vertices:
        members = extended_members(sys.graph, i)
        box = Box.product([sys.domain[j - 1] for j in members])
        active, off = [], 0
        for j in members:
            active += [off + c for c in sys.free(j)]
            off += sys.dims[j - 1]
        out[i] = _make(dcfg, box.dim, size, box, _dict_seed(dcfg, seed, C.SEDMD_DICT, i), tuple(active))
    return out


def full_dictionary(sys: NetworkSystem, dcfg: dict, seed: int) -> Dictionary:
    return _make(dcfg, sys.n, dcfg.get("size", 0), sys.full_domain(), _dict_seed(dcfg, seed, C.EDMD_DICT),
                 tuple(int(k) for k in sys.free_index()))


# ---- fitting --------------------------------------------------------------------

def fit_learner(name: str, sys: NetworkSystem, cfg: dict, m: int, snaps, seed: int) -> NetworkKoopmanModel:
    dcfg, ridge, dt = cfg["dictionary"], cfg["ridge"], cfg["dt"]
    fit_seed = C.seed_int(seed, C.FIT, m)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UserWarning)
        if name == "mgedmd":
            model = mgedmd_fit(sys, local_dictionaries(sys, dcfg, seed), m, fit_seed, ridge,
                               mode=cfg["mgedmd_mode"],
                               states=snaps.inputs if cfg["mgedmd_mode"] == "shared" else None,
                               inputs=cfg["mgedmd_inputs"])
        elif name == "medmd":
            model = medmd_fit(sys, local_dictionaries(sys, dcfg, seed), m, dt, fit_seed, ridge,
                              mode=cfg["medmd_mode"], snapshots=snaps)
        elif name == "ledmd":
            model = ledmd_fit(sys, local_dictionaries(sys, dcfg, seed), m, dt, fit_seed, ridge, snapshots=snaps)
        elif name == "sedmd":
            model = sedmd_fit(sys, extended_dictionaries(sys, dcfg, seed), m, dt, fit_seed, ridge, snapshots=snaps)
        elif name == "edmd":
            model = network_edmd_fit(sys, full_dictionary(sys, dcfg, seed), m, dt, fit_seed, ridge, snapshots=snaps)
        else:
            raise ConfigError(f"config.learners: unknown learner {name!r}")
    model.seed = seed
    return model


def training_data(sys: NetworkSystem, cfg: dict, m: int):
    return flow_data(sys, m, cfg["dt"], derive_seed(cfg["seed"], C.DATA, m), substeps=cfg["substeps"])


# ---- evaluation -------------------------------------------------------------------

def eval_box(sys: NetworkSystem, dcfg: dict) -> Box:
    k = len(sys.free_index())
    if "cube" in dcfg:
        return Box.cube(k, *dcfg["cube"])
    box = Box(np.array(dcfg["low"], dtype=float), np.array(dcfg["high"], dtype=float))
    if box.dim != k:
        raise ConfigError(f"config.eval_box: has {box.dim} coordinates, the network has {k} free states")
    return box


def initial_conditions(sys: NetworkSystem, cfg: dict) -> np.ndarray:
    xf = sample_uniform(eval_box(sys, cfg["eval_box"]), cfg["n_sims"], derive_seed(cfg["seed"], C.EVAL))
    return sys.embed_free(xf)


def evaluate(model: NetworkKoopmanModel, sys: NetworkSystem, x0: np.ndarray, truth: np.ndarray,
             steps: int, dt: float, substeps: int) -> np.ndarray:
    """Log max-errors on the free coordinates, shape ``(s, n_sims)``."""
    pred = predict(model, x0, steps, dt, substeps)
    idx = sys.free_index()
    return prediction_error(truth[:, idx], pred.states[:, idx], sys.free_dims())


def truth_rollout(sys: NetworkSystem, x0, steps, dt, substeps):
    return integrate(sys, x0, dt, steps, substeps).states


# ---- result tables -----------------------------------------------------------------

@dataclass
class Results:
    rows: list = field(default_factory=list)
    extra_columns: tuple = ()
    certificate: dict | None = None
    models: dict = field(default_factory=dict)

    def add(self, learner, m, errors, extra=()):
        for sim in range(errors.shape[1]):
            for i in range(errors.shape[0]):
                row = [learner, int(m), sim, i + 1, float(errors[i, sim])]
                row += [e(i + 1) if callable(e) else e for e in extra]
                self.rows.append(row)

    def header(self):
        return RESULT_HEADER + list(self.extra_columns)

    def errors(self, learner, m, subsystem) -> np.ndarray:
        return np.array([r[4] for r in self.rows if r[0] == learner and r[1] == m and r[3] == subsystem])

    def summary(self, exclude_diverged: bool = False) -> list:
        keys = []
        for r in self.rows:
            k = (r[0], r[1], r[3])
            if k not in keys:
                keys.append(k)
        out = []
        for learner, m, i in keys:
            e = self.errors(learner, m, i)
            out.append([learner, m, i] + summarize(e, exclude_diverged))
        return out

    def csv_text(self) -> str:
        return _csv(self.header(), self.rows)

    def summary_text(self, exclude_diverged=False) -> str:
        return _csv(SUMMARY_HEADER, self.summary(exclude_diverged))


def summarize(e: np.ndarray, exclude_diverged: bool = False) -> list:
    """Box-plot statistics: count, diverged count, median, quartiles, Tukey whiskers."""
    div = int(np.sum(~np.isfinite(e)))
    if exclude_diverged:
        e = e[np.isfinite(e)]
    if e.size == 0:
        return [0, div] + [float("nan")] * 5
    q1, med, q3 = (_quantile(e, q) for q in (0.25, 0.5, 0.75))
    with np.errstate(invalid="ignore"):
        iqr = q3 - q1
    if np.isfinite(iqr):
        inside = e[(e >= q1 - 1.5 * iqr) & (e <= q3 + 1.5 * iqr)]
        lo, hi = float(inside.min()), float(inside.max())
    else:
        lo, hi = float(e.min()), float(e.max())
    return [int(e.size), div, float(med), float(q1), float(q3), lo, hi]


def _quantile(e: np.ndarray, q: float) -> float:
    """Linear-interpolation quantile (numpy's default) that keeps ``inf`` instead of producing NaN."""
    e = np.sort(e)
    pos = q * (e.size - 1)
    lo, frac = int(np.floor(pos)), pos - np.floor(pos)
    if frac == 0.0 or e[lo] == e[lo + 1]:
        return float(e[lo])
    return float(e[lo] + frac * (e[lo + 1] - e[lo]))


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(v) for v in r])
    return buf.getvalue()


def write_outputs(res: Results, out_dir: str, cfg: dict) -> None:
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "results.csv"), "w") as fh:
        fh.write(res.csv_text())
    with open(os.path.join(out_dir, "summary.csv"), "w") as fh:
        fh.write(res.summary_text(cfg.get("exclude_diverged", False)))
    # whitespace-separated copy for gnuplot's candlesticks style
    with open(os.path.join(out_dir, "summary.dat"), "w") as fh:
        fh.write("# " + " ".join(SUMMARY_HEADER) + "\n")
        for r in res.summary(cfg.get("exclude_diverged", False)):
            fh.write(" ".join(_fmt(v) for v in r) + "\n")
    if res.certificate is not None:
        write_json(res.certificate, os.path.join(out_dir, "certificate.json"))


def write_json(obj, path):
    with open(path, "w") as fh:
        json.dump(_finite(obj), fh, indent=1, sort_keys=True, default=_json_default, allow_nan=False)
        fh.write("\n")


def _finite(obj):
    """Replace non-finite floats by the strings ``inf``, ``-inf``, ``nan`` so the output is strict JSON."""
    if isinstance(obj, dict):
        return {k: _finite(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_finite(v) for v in obj]
    if isinstance(obj, (float, np.floating)) and not np.isfinite(obj):
        return repr(float(obj))
    return obj


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.bool_):
        return bool(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"cannot serialise {type(o).__name__}")


def _map(fn, items, jobs):
    if jobs and jobs > 1 and len(items) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            return list(ex.map(fn, items))
    return [fn(it) for it in items]


# ---- benchmark ---------------------------------------------------------------------

def _bench_task(args):
    cfg, m = args
    sys = make_benchmark(cfg["benchmark"]).with_substeps(cfg["substeps"])
    steps = int(round(cfg["horizon"] / cfg["dt"]))
    x0 = initial_conditions(sys, cfg)
    truth = truth_rollout(sys, x0, steps, cfg["dt"], cfg["substeps"])
    snaps = training_data(sys, cfg, m)
    out = []
    for name in cfg["learners"]:
        model = fit_learner(name, sys, cfg, m, snaps, cfg["seed"])
        out.append((name, m, evaluate(model, sys, x0, truth, steps, cfg["dt"], cfg["substeps"])))
    return out


def run_benchmark(cfg: dict, jobs: int = 1) -> Results:
    """Fit each learner once per data budget and score it on ``n_sims`` rollouts."""
    cfg = C.resolve("bench", cfg)
    res = Results()
    for chunk in _map(_bench_task, [(cfg, m) for m in cfg["m"]], jobs):
        for name, m, err in chunk:
            res.add(name, m, err)
    # stable row order: learner order of the config, then budgets
    order = {n: k for k, n in enumerate(cfg["learners"])}
    res.rows.sort(key=lambda r: (order[r[0]], cfg["m"].index(r[1]), r[2], r[3]))
    return res


# ---- transfer ------------------------------------------------------------------------

def build_transfer_model(name: str, cfg: dict, m: int, base: NetworkSystem, target: NetworkSystem,
                         scenario) -> NetworkKoopmanModel:
    """Fit on the base network, then copy and partially refit for the target network."""
    seed = cfg["seed"]
    model = fit_learner(name, base, cfg, m, training_data(base, cfg, m), seed)
    for cp in scenario.copies:
        model = copy_family(model, cp.donor, cp.recipient, cp.channels, target.graph, target.dims,
                            relabel=cfg["ledmd_copy"] == "relabel")
    if scenario.refits:
        refit = flow_data(target, m, cfg["dt"], derive_seed(seed, C.REFIT, m), substeps=cfg["substeps"])
        for rf in scenario.refits:
            if name == "mgedmd":
                model = transfer_update_generator(model, target, rf.subsystem, rf.neighbour, m,
                                                  C.seed_int(seed, C.REFIT, m), cfg["ridge"], states=refit.inputs)
            else:
                local = extract_local(target, refit, rf.subsystem)
                model = transfer_update_operator(model, rf.subsystem, rf.neighbour, local, target.graph,
                                                 target.dims, cfg["ridge"])
    if not scenario.refits and not scenario.copies:
        raise ConfigError(f"scenario {scenario.name} changes nothing")
    model.graph = target.graph
    model.dims = target.dims
    return model.validate()


def _transfer_task(args):
    cfg, m = args
    scen = TRANSFER_SCENARIOS[cfg["scenario"]]
    base = make_benchmark(scen.base).with_substeps(cfg["substeps"])
    target = make_benchmark(scen.target).with_substeps(cfg["substeps"])
    x0 = initial_conditions(target, cfg)
    truth = truth_rollout(target, x0, cfg["steps"], cfg["dt"], cfg["substeps"])
    out = []
    for name in cfg["learners"]:
        model = build_transfer_model(name, cfg, m, base, target, scen)
        err = evaluate(model, target, x0, truth, cfg["steps"], cfg["dt"], cfg["substeps"])
        out.append((name, m, err, dict(model.provenance)))
    return out


def run_transfer(cfg: dict, jobs: int = 1) -> Results:
    cfg = C.resolve("transfer", cfg)
    res = Results(extra_columns=("provenance",))
    for chunk in _map(_transfer_task, [(cfg, m) for m in cfg["m"]], jobs):
        for name, m, err, prov in chunk:
            res.add(name, m, err, extra=(lambda i, p=prov: p.get(i, "fitted"),))
    order = {n: k for k, n in enumerate(cfg["learners"])}
    res.rows.sort(key=lambda r: (order[r[0]], cfg["m"].index(r[1]), r[2], r[3]))
    if cfg.get("certify"):
        cc = dict(cfg["certify"], benchmark=TRANSFER_SCENARIOS[cfg["scenario"]].target,
                  dictionary=cfg["dictionary"], seed=cfg["seed"], ridge=cfg["ridge"])
        res.certificate = run_certify(cc)
    return res


# ---- certificate ---------------------------------------------------------------------

def certificate_x0(sys: NetworkSystem, x0) -> np.ndarray:
    """Scalar ``x0`` means every free coordinate takes that value."""
    k = len(sys.free_index())
    xf = np.full(k, float(x0)) if np.ndim(x0) == 0 else np.asarray(x0, dtype=float)
    if xf.size != k:
        raise ConfigError(f"config.x0: needs {k} free coordinates, got {xf.size}")
    return sys.embed_free(xf)


def small_gain_horizon(families, sys: NetworkSystem, x0, T_hi: float = 10.0, tol: float = 1e-6) -> float | None:
    """Largest horizon at which every cycle product stays below one (bisection; products grow with T)."""
    def ok(T):
        f = compute_functionals(families, sys.graph, sys.domain, T, x0, sys.dims)
        sg = certify(f, sys.graph).small_gain
        return sg is not None and all(v.passed for v in sg)
    if certify(compute_functionals(families, sys.graph, sys.domain, 1.0, x0, sys.dims), sys.graph).small_gain is None:
        return None
    lo, hi = 0.0, T_hi
    if ok(hi):
        return hi
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        lo, hi = (mid, hi) if ok(mid) else (lo, mid)
    return lo


def run_certify(cfg: dict) -> dict:
    """Fit a large-sample generator surrogate and evaluate every certificate regime."""
    cfg = C.resolve("certify", cfg)
    sys = make_benchmark(cfg["benchmark"])
    dicts = local_dictionaries(sys, cfg["dictionary"], cfg["seed"])
    surrogate = mgedmd_fit(sys, dicts, cfg["surrogate_m"], C.seed_int(cfg["seed"], C.SURROGATE), cfg["ridge"])
    x0 = certificate_x0(sys, cfg["x0"])
    func = compute_functionals(surrogate.families, sys.graph, sys.domain, cfg["T"], x0, sys.dims,
                               surrogate_m=cfg["surrogate_m"])
    cert = certify(func, sys.graph)
    out = cert.to_dict()
    out["benchmark"] = cfg["benchmark"]
    out["x0"] = x0.tolist()
    out["small_gain_horizon"] = small_gain_horizon(surrogate.families, sys, x0)
    return out


# ---- fit / predict ----------------------------------------------------------------------

def run_fit(cfg: dict) -> NetworkKoopmanModel:
    cfg = C.resolve("fit", cfg)
    sys = make_benchmark(cfg["benchmark"]).with_substeps(cfg["substeps"])
    model = fit_learner(cfg["learner"], sys, cfg, cfg["m"], training_data(sys, cfg, cfg["m"]), cfg["seed"])
    return model


def run_predict(cfg: dict) -> tuple[Results, np.ndarray, np.ndarray]:
    """Roll a saved model out from sampled (or given) initial states; returns errors and the first trajectory."""
    cfg = C.resolve("predict", cfg)
    with open(cfg["model"]) as fh:
        model = NetworkKoopmanModel.from_dict(json.load(fh))
    sys = make_benchmark(cfg["benchmark"]).with_substeps(cfg["substeps"])
    if "x0" in cfg:
        x0 = np.asarray(cfg["x0"], dtype=float)
        x0 = sys.embed_free(x0 if x0.ndim == 2 else x0[:, None])
    else:
        x0 = initial_conditions(sys, cfg)
    truth = truth_rollout(sys, x0, cfg["steps"], cfg["dt"], cfg["substeps"])
    pred = predict(model, x0, cfg["steps"], cfg["dt"], cfg["substeps"])
    idx = sys.free_index()
    err = prediction_error(truth[:, idx], pred.states[:, idx], sys.free_dims())
    res = Results()
    res.add(model.kind, int(model.family(1).m), err)
    return res, pred.times, pred.states[..., 0]
