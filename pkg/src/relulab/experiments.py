"""Experiment registry, runner and verifier.

A run directory holds ``dataset.csv`` (or one dataset per sweep point),
one sub-directory per trajectory under ``runs/``, report JSONs, SVG plots
and, written last, ``manifest.json``. Every file carries the run hash.
``verify`` recomputes each acceptance predicate from the stored artifacts
and writes ``verdict.json``.
"""
from __future__ import annotations

import copy
import hashlib
import json
import math
import shutil
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import __version__
from .analysis import (count_loss_drops, equivalence_report, loss_superposition, plateau_duration,
                       structure_report)
from .datasets import (RNG_NAME, Dataset, check_symmetry, compute_stats, load_dataset, make_named,
                       make_symmetric_gaussian, save_dataset, whiten)
from .dynamics import (DIVERGENCE_THRESHOLD, TrainConfig, export_trajectory, integrate_linear,
                       load_trajectory, run_many, train)
from .errors import ConfigError, LabError, MissingArtifactError
from .model import (NetworkParams, init_gaussian, init_rank1_balanced, loss_and_gradients,
                    loss_value, predict)
from .numkit import derive_seed, make_rng
from .plots import line_plot
from .theory import (closed_form_spec, closed_form_w, decompose_two_layer, logistic_linear_solution,
                     max_margin_solution)

CONVENTIONS = {
    "sigma_prime_at_zero": "alpha (sigma'(0) := alpha, so ReLU uses 0)",
    "time": "t = step * eta (tau = 1/eta)",
    "rng": RNG_NAME,
    "l2": "penalty lambda_alpha ||W||^2 with lambda_alpha = lambda_raw (alpha+1)/2",
    "init": "N(0, w_init^2 / N_l) per layer, N_l = number of weights in layer l",
    "equivalence_reference": "linear net from sqrt((alpha+1)/2) W(0), eta_lin = eta (alpha+1)/2",
}
SOLVER_TOLERANCES = {"max_margin_tol": 1e-10, "logistic_newton_tol": 1e-12, "gradcheck_h": 1e-5}


# ---------------------------------------------------------------------------
# configuration

def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def apply_overrides(doc: dict, assignments) -> dict:
    """Apply ``dotted.path=value`` strings; values are parsed as JSON when possible."""
    doc = copy.deepcopy(doc)
    for item in assignments or ():
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        key, raw = item.split("=", 1)
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = doc
        parts = key.strip().split(".")
        for p in parts[:-1]:
            nxt = node.setdefault(p, {})
            if not isinstance(nxt, dict):
                raise ConfigError(f"override {key!r}: {p!r} is not a section")
            node = nxt
        node[parts[-1]] = value
    return doc


@dataclass
class ExperimentConfig:
    experiment: str
    dataset: dict = field(default_factory=dict)
    network: dict = field(default_factory=dict)
    train: dict = field(default_factory=dict)
    sweep: dict = field(default_factory=dict)
    tolerances: dict = field(default_factory=dict)
    seed: int = 0
    output: str = ""

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        if not isinstance(doc, dict) or "experiment" not in doc:
            raise ConfigError("config must be a JSON object with an 'experiment' key")
        name = doc["experiment"]
        if name not in EXPERIMENTS:
            raise ConfigError(f"unknown experiment {name!r}; choose from {sorted(EXPERIMENTS)}")
        known = {f for f in cls.__dataclass_fields__}
        extra = set(doc) - known
        if extra:
            raise ConfigError(f"unknown config keys {sorted(extra)}")
        full = _merge(EXPERIMENTS[name].defaults, doc)
        full.setdefault("output", f"runs/{name}")
        if not isinstance(full.get("seed", 0), int):
            raise ConfigError("seed must be an integer")
        cfg = cls(**full)
        for section in ("dataset", "network", "train", "sweep", "tolerances"):
            if not isinstance(getattr(cfg, section), dict):
                raise ConfigError(f"{section!r} must be an object")
        cfg.train_config()
        return cfg

    def to_dict(self) -> dict:
        return asdict(self)

    def run_hash(self) -> str:
        doc = {k: v for k, v in self.to_dict().items() if k != "output"}
        text = json.dumps(doc, sort_keys=True) + __version__
        return hashlib.sha256(text.encode()).hexdigest()[:16]

    def train_config(self, **over) -> TrainConfig:
        doc = dict(self.train, **over)
        doc.pop("steps_by", None)
        if "monitors" in doc:
            doc["monitors"] = tuple(doc["monitors"])
        try:
            return TrainConfig(**doc)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid train section: {exc}") from exc


# ---------------------------------------------------------------------------
# run directory helpers

@dataclass
class Predicate:
    name: str
    value: float
    threshold: str
    passed: bool
    detail: str = ""


def _check(name, value, lo=-math.inf, hi=math.inf, lo_strict=False, hi_strict=True) -> Predicate:
    value = float(value)
    ok = math.isfinite(value)
    ok = ok and (value > lo if lo_strict else value >= lo) and (value < hi if hi_strict else value <= hi)
    if lo == -math.inf:
        thr = f"{'<' if hi_strict else '<='} {hi:g}"
    elif hi == math.inf:
        thr = f"{'>' if lo_strict else '>='} {lo:g}"
    else:
        thr = f"in [{lo:g}, {hi:g}]"
    return Predicate(name, value, thr, bool(ok))


def _failed(name, exc) -> Predicate:
    return Predicate(name, float("nan"), "computable", False, f"{type(exc).__name__}: {exc}")


def _write_json(path: Path, doc: dict, manifest_hash: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(dict(doc, manifest=manifest_hash), indent=2, sort_keys=True, default=float))


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _dataset_from_spec(spec: dict, seed: int) -> Dataset:
    spec = dict(spec)
    kind = spec.pop("kind", "gaussian")
    seed = int(spec.pop("seed", seed))
    if kind == "gaussian":
        d = make_symmetric_gaussian(make_rng(seed), int(spec.get("n_pairs", 100)), int(spec.get("D", 10)),
                                    spec.get("teacher", "sin"))
        d.metadata["seed"] = seed
        if spec.get("whiten", False):
            d = whiten(d)
        return d
    if kind == "named":
        return make_named(spec["name"], spec.get("params", {}), seed=seed)
    raise ConfigError(f"unknown dataset kind {kind!r}")


def _steps(cfg: ExperimentConfig, key) -> int:
    by = cfg.train.get("steps_by", {})
    return int(by.get(str(key), cfg.train["steps"]))


# ---------------------------------------------------------------------------
# experiment definitions

@dataclass
class Experiment:
    defaults: dict
    points: Callable[[ExperimentConfig], list]
    run_point: Callable
    verify: Callable[[Path, ExperimentConfig], list]
    prepare: Callable | None = None


EXPERIMENTS: dict[str, Experiment] = {}


def _save_point_dataset(d: Dataset, out: Path, manifest_hash: str, name: str = "dataset") -> Path:
    return save_dataset(d, out / f"{name}.csv", manifest_hash)


def _loss_plot(out: Path, name: str, trajs: dict, manifest_hash: str, logx=False, logy=False):
    series = [(k, tr.time_array(), tr.loss_array()) for k, tr in trajs.items()]
    line_plot(out / "plots" / f"{name}.svg", series, title=name, ylabel="loss", logx=logx, logy=logy,
              manifest_hash=manifest_hash)


# --- leaky-ReLU / linear equivalence (fig2_equivalence, figC_variants) ------

def _equivalence_point(cfg: ExperimentConfig, out: Path, h: str, point: dict) -> dict:
    label, alpha = point["label"], float(point["alpha"])
    net_spec = _merge(cfg.network, point.get("network", {}))
    train_doc = _merge(cfg.train, point.get("train", {}))
    tcfg = cfg.train_config(**{k: v for k, v in train_doc.items() if k != "steps_by"})
    d = load_dataset(out / "dataset.csv")
    seed = derive_seed(cfg.seed, 2)
    net = init_gaussian(make_rng(seed), [d.D, int(net_spec["width"]), 1], float(net_spec["w_init"]), alpha)
    c = (alpha + 1.0) / 2.0
    relu = train(net, d, tcfg)
    lin = integrate_linear(net.scaled(math.sqrt(c)).replace(alpha=1.0), compute_stats(d, tcfg.reduction),
                           tcfg.with_(eta=tcfg.eta * c))
    export_trajectory(relu, out / "runs" / label / "relu", h)
    export_trajectory(lin, out / "runs" / label / "linear", h)
    rep = equivalence_report(relu, lin, alpha, {"relu": f"runs/{label}/relu", "linear": f"runs/{label}/linear"})
    _write_json(out / "reports" / f"equivalence_{label}.json", rep.to_json(), h)
    line_plot(out / "plots" / f"loss_{label}.svg",
              [("leaky ReLU, t' = (a+1)t/2", relu.time_array() * c, relu.loss_array()),
               ("linear", lin.time_array(), lin.loss_array())],
              title=f"loss, {label}", xlabel="rescaled t", ylabel="loss", logy=True, manifest_hash=h)
    line_plot(out / "plots" / f"error_{label}.svg", [("weight error", rep.time_grid, rep.weight_error),
                                                   ("loss gap", rep.time_grid, rep.loss_gap)],
              title=f"equivalence error, {label}", xlabel="t", ylabel="relative error", manifest_hash=h)
    return {label: {"seed": seed, "status": [relu.status, lin.status],
                    "stop_reason": [relu.stop_reason, lin.stop_reason]}}


def _equivalence_verify(out: Path, cfg: ExperimentConfig, points: list) -> list:
    preds = []
    for point in points:
        label, alpha = point["label"], float(point["alpha"])
        tol = point.get("tolerances", cfg.tolerances)
        try:
            rep = equivalence_report(load_trajectory(out / "runs" / label / "relu"),
                                     load_trajectory(out / "runs" / label / "linear"), alpha)
        except (LabError, ValueError, FileNotFoundError) as exc:
            preds.append(_failed(f"equivalence[{label}]", exc))
            continue
        if "weight_error" in tol:
            preds.append(_check(f"max_weight_error[{label}]", rep.max_weight_error, hi=tol["weight_error"]))
        if "loss_gap" in tol:
            preds.append(_check(f"max_loss_gap[{label}]", rep.max_loss_gap, hi=tol["loss_gap"]))
    return preds


def _prepare_single_dataset(cfg: ExperimentConfig, out: Path, h: str) -> dict:
    seed = derive_seed(cfg.seed, 1)
    d = _dataset_from_spec(cfg.dataset, seed)
    _save_point_dataset(d, out, h)
    return {"dataset": {"seed": int(cfg.dataset.get("seed", seed)), "sha256": _sha256(out / "dataset.csv")}}


def _fig2_points(cfg):
    return [{"label": f"alpha={a:g}", "alpha": a} for a in cfg.sweep["alpha"]]


EXPERIMENTS["fig2_equivalence"] = Experiment(
    defaults={
        "dataset": {"kind": "gaussian", "n_pairs": 1000, "D": 20, "teacher": "sin"},
        "network": {"width": 500, "w_init": 1e-8},
        "train": {"loss": "square", "reduction": "mean", "eta": 0.004, "steps": 30000,
                  "snapshot_every": 100, "monitors": []},
        "sweep": {"alpha": [0.0, 0.25, 0.5, 0.75, 1.0]},
        "tolerances": {"weight_error": 0.003, "loss_gap": 0.01},
    },
    points=_fig2_points,
    run_point=_equivalence_point,
    verify=lambda out, cfg: _equivalence_verify(out, cfg, _fig2_points(cfg)),
    prepare=_prepare_single_dataset,
)


def _figc_points(cfg):
    pts = []
    for name, variant in cfg.sweep["variants"].items():
        for a in cfg.sweep["alpha"]:
            pts.append({"label": f"{name}-alpha={a:g}", "alpha": a, "network": variant.get("network", {}),
                        "train": variant.get("train", {}), "tolerances": cfg.tolerances.get(name, {})})
    return pts


EXPERIMENTS["figC_variants"] = Experiment(
    defaults={
        "dataset": {"kind": "gaussian", "n_pairs": 200, "D": 10, "teacher": "sin"},
        "network": {"width": 200, "w_init": 1e-8},
        "train": {"loss": "square", "reduction": "mean", "eta": 0.004, "steps": 30000,
                  "snapshot_every": 100, "monitors": []},
        "sweep": {"alpha": [0.0, 0.5],
                  "variants": {"l2": {"train": {"l2": 0.2}},
                               "large_lr": {"train": {"eta": 0.6, "steps": 400, "snapshot_every": 1}},
                               "large_init": {"network": {"w_init": 0.5}, "train": {"steps": 20000}}}},
        "tolerances": {"l2": {"weight_error": 0.003, "loss_gap": 0.01},
                       "large_lr": {"loss_gap": 0.02},
                       "large_init": {"weight_error": 0.03, "loss_gap": 0.02}},
    },
    points=_figc_points,
    run_point=_equivalence_point,
    verify=lambda out, cfg: _equivalence_verify(out, cfg, _figc_points(cfg)),
    prepare=_prepare_single_dataset,
)


# --- closed form for white covariance ---------------------------------------

def _closed_form_point(cfg, out, h, point):
    alpha, label = float(point["alpha"]), point["label"]
    d = load_dataset(out / "dataset.csv")
    stats = compute_stats(d, cfg.train.get("reduction", "mean"))
    seed = derive_seed(cfg.seed, 2)
    rng = make_rng(seed)
    r = rng.standard_normal(d.D)
    r /= np.linalg.norm(r)
    if r @ stats.beta_hat < 0:
        r = -r
    net = init_rank1_balanced(rng, int(cfg.network["width"]), d.D, r, float(cfg.network["w_init"]), alpha)
    c = (alpha + 1.0) / 2.0
    tcfg = cfg.train_config()
    t_end = float(cfg.sweep["t_scaled"][1]) / stats.s / c
    tcfg = tcfg.with_(steps=int(math.ceil(t_end / tcfg.eta)) + 1)
    tr = train(net, d, tcfg)
    export_trajectory(tr, out / "runs" / label, h)
    return {label: {"seed": seed, "status": [tr.status], "stop_reason": [tr.stop_reason]}}


def _closed_form_errors(out, cfg, label, alpha):
    d = load_dataset(out / "dataset.csv")
    stats = compute_stats(d, cfg.train.get("reduction", "mean"))
    tr = load_trajectory(out / "runs" / label)
    spec = closed_form_spec(tr.snapshots[0], stats)
    c = (alpha + 1.0) / 2.0
    lo, hi = (float(v) / stats.s for v in cfg.sweep["t_scaled"])
    ts, errs = [], []
    for t, snap in zip(tr.snapshot_times(), tr.snapshots):
        if lo <= c * t <= hi:
            w_sim = decompose_two_layer(snap)[0]
            errs.append(np.linalg.norm(w_sim - closed_form_w(spec, t)) / np.linalg.norm(w_sim))
            ts.append(t)
    if not errs:
        raise ValueError("no snapshots inside the comparison window")
    return np.array(ts), np.array(errs), stats


def _closed_form_verify(out, cfg):
    preds = []
    for a in cfg.sweep["alpha"]:
        label = f"alpha={a:g}"
        try:
            _, errs, stats = _closed_form_errors(out, cfg, label, float(a))
        except (LabError, ValueError, FileNotFoundError) as exc:
            preds.append(_failed(f"closed_form[{label}]", exc))
            continue
        preds.append(_check(f"closed_form_rel_error[{label}]", errs.max(), hi=cfg.tolerances["rel_error"]))
    d = load_dataset(out / "dataset.csv")
    sigma = compute_stats(d, cfg.train.get("reduction", "mean")).sigma
    preds.append(_check("covariance_white", np.abs(sigma - np.eye(d.D)).max(), hi=cfg.tolerances["whiteness"]))
    return preds


EXPERIMENTS["closed_form_check"] = Experiment(
    defaults={
        "dataset": {"kind": "gaussian", "n_pairs": 200, "D": 5, "teacher": "linear", "whiten": True},
        "network": {"width": 10, "w_init": 1e-3},
        "train": {"loss": "square", "reduction": "mean", "eta": 0.001, "steps": 1,
                  "snapshot_every": 50, "monitors": []},
        "sweep": {"alpha": [0.0, 1.0], "t_scaled": [0.1, 10.0]},
        "tolerances": {"rel_error": 1e-2, "whiteness": 1e-2},
    },
    points=lambda cfg: [{"label": f"alpha={a:g}", "alpha": a} for a in cfg.sweep["alpha"]],
    run_point=_closed_form_point,
    verify=_closed_form_verify,
    prepare=_prepare_single_dataset,
)


# --- expressivity on the fan dataset ----------------------------------------

def misclassification(net: NetworkParams, d: Dataset) -> float:
    return float(np.mean(np.sign(predict(net, d.inputs)) != d.targets))


def _fig1_point(cfg, out, h, point):
    depth, label = int(point["depth"]), point["label"]
    d = load_dataset(out / "dataset.csv")
    seed = derive_seed(cfg.seed, 2, depth)
    shape = [d.D] + [int(cfg.network["width"])] * (depth - 1) + [1]
    net = init_gaussian(make_rng(seed), shape, float(cfg.network["w_init"]), float(cfg.network.get("alpha", 0.0)))
    steps = _steps(cfg, depth)
    tr = train(net, d, cfg.train_config(steps=steps, snapshot_every=max(steps // 20, 1)))
    export_trajectory(tr, out / "runs" / label, h)
    _loss_plot(out, f"loss_{label}", {label: tr}, h, logy=True)
    return {label: {"seed": seed, "status": [tr.status], "stop_reason": [tr.stop_reason]}}


def _fig1_verify(out, cfg):
    d = load_dataset(out / "dataset.csv")
    preds = []
    for depth in cfg.sweep["depth"]:
        label = f"depth={depth}"
        try:
            err = misclassification(load_trajectory(out / "runs" / label).final, d)
        except (LabError, ValueError, FileNotFoundError) as exc:
            preds.append(_failed(f"misclassification[{label}]", exc))
            continue
        tol = cfg.tolerances.get(str(depth), {})
        preds.append(_check(f"misclassification[{label}]", err, lo=tol.get("min", -math.inf),
                            hi=tol.get("max", math.inf), lo_strict=True))
    return preds


EXPERIMENTS["fig1_expressivity"] = Experiment(
    defaults={
        "dataset": {"kind": "named", "name": "fan"},
        "network": {"width": 100, "w_init": 1e-2, "alpha": 0.0},
        "train": {"loss": "logistic", "reduction": "mean", "eta": 0.2, "steps": 10000,
                  "steps_by": {"2": 10000, "3": 80000}, "monitors": []},
        "sweep": {"depth": [2, 3]},
        "tolerances": {"2": {"min": 0.25}, "3": {"max": 0.05}},
    },
    points=lambda cfg: [{"label": f"depth={k}", "depth": k} for k in cfg.sweep["depth"]],
    run_point=_fig1_point,
    verify=_fig1_verify,
    prepare=_prepare_single_dataset,
)


# --- orthogonal / XOR superposition -----------------------------------------

def _fig3_point(cfg, out, h, point):
    name, loss, label = point["dataset"], point["loss"], point["label"]
    d = make_named(name, seed=cfg.seed)
    _save_point_dataset(d, out / "runs" / label, h)
    seed = derive_seed(cfg.seed, 2)
    net = init_gaussian(make_rng(seed), [d.D, int(cfg.network["width"]), 1], float(cfg.network["w_init"]), 0.0)
    steps = int(cfg.train["steps"])
    tcfg = cfg.train_config(loss=loss, eta=float(cfg.sweep["eta"][loss]), snapshot_every=steps)
    relu = train(net, d, tcfg)
    export_trajectory(relu, out / "runs" / label / "relu", h)
    trajs = {"relu": relu}
    for i in range(d.P):
        # the linear component starts from the ReLU units active on point i
        act = net.layers[0] @ d.inputs[i] > 0
        sub = NetworkParams([net.layers[0][act], net.layers[1][:, act]], 1.0)
        comp = train(sub, d.subset([i]), tcfg)
        export_trajectory(comp, out / "runs" / label / f"component{i}", h)
        trajs[f"component {i}"] = comp
    _loss_plot(out, f"loss_{label}", trajs, h, logx=True)
    return {label: {"seed": seed, "status": [t.status for t in trajs.values()],
                    "stop_reason": [t.stop_reason for t in trajs.values()]}}


def _fig3_points(cfg):
    return [{"label": f"{n}-{l}", "dataset": n, "loss": l} for n in cfg.sweep["datasets"] for l in cfg.sweep["losses"]]


def _fig3_verify(out, cfg):
    preds = []
    for point in _fig3_points(cfg):
        label = point["label"]
        try:
            d = load_dataset(out / "runs" / label / "dataset.csv")
            relu = load_trajectory(out / "runs" / label / "relu")
            comps = [load_trajectory(out / "runs" / label / f"component{i}") for i in range(d.P)]
            gap = loss_superposition(relu, comps, transient=cfg.tolerances["transient"])
            drops = count_loss_drops(relu.losses, relu.times)
        except (LabError, ValueError, FileNotFoundError) as exc:
            preds.append(_failed(f"superposition[{label}]", exc))
            continue
        preds.append(_check(f"superposition_gap[{label}]", gap, hi=cfg.tolerances["gap"]))
        preds.append(_check(f"loss_drops_minus_components[{label}]", drops - d.P, lo=0, hi=0, hi_strict=False))
    return preds


EXPERIMENTS["fig3_ortho_xor"] = Experiment(
    defaults={
        "dataset": {"kind": "named", "names": ["ortho2", "xor4"]},
        "network": {"width": 60, "w_init": 1e-6},
        "train": {"loss": "square", "reduction": "sum", "eta": 0.001, "steps": 60000, "monitors": []},
        "sweep": {"datasets": ["ortho2", "xor4"], "losses": ["square", "logistic"],
                  "eta": {"square": 0.001, "logistic": 0.004}},
        "tolerances": {"gap": 0.05, "transient": 0.05},
    },
    points=_fig3_points,
    run_point=_fig3_point,
    verify=_fig3_verify,
)


# --- deep networks: low-rank structure --------------------------------------

def _fig5_points(cfg):
    return [{"label": f"L={L}-alpha={a:g}", "depth": L, "alpha": a}
            for L in cfg.sweep["depth"] for a in cfg.sweep["alpha"]]


def _fig5_point(cfg, out, h, point):
    L, alpha, label = int(point["depth"]), float(point["alpha"]), point["label"]
    d = load_dataset(out / "dataset.csv")
    seed = derive_seed(cfg.seed, 2, L)
    shape = [d.D] + [int(cfg.network["width"])] * (L - 1) + [1]
    net = init_gaussian(make_rng(seed), shape, float(cfg.network["w_init"]), alpha)
    steps = int(cfg.train["steps"])
    tr = train(net, d, cfg.train_config(snapshot_every=max(steps // 20, 1)))
    export_trajectory(tr, out / "runs" / label, h)
    rep = structure_report(tr.final)
    _write_json(out / "reports" / f"structure_{label}.json", rep.to_json(), h)
    _loss_plot(out, f"loss_{label}", {label: tr}, h, logy=True)
    line_plot(out / "plots" / f"singular_values_{label}.svg",
              [(f"W{l + 1}", np.arange(1, len(sv) + 1), np.maximum(sv, 1e-300))
               for l, sv in enumerate(rep.singular_values)],
              title=f"singular values, {label}", xlabel="index", ylabel="sigma", logy=True, manifest_hash=h)
    return {label: {"seed": seed, "status": [tr.status], "stop_reason": [tr.stop_reason]}}


def _fig5_verify(out, cfg):
    tol, preds = cfg.tolerances, []
    for point in _fig5_points(cfg):
        label, alpha = point["label"], float(point["alpha"])
        try:
            rep = structure_report(load_trajectory(out / "runs" / label).final, rank_tol=tol["rank_tol"])
        except (LabError, ValueError, FileNotFoundError) as exc:
            preds.append(_failed(f"structure[{label}]", exc))
            continue
        L = len(rep.numerical_ranks)
        if alpha == 1.0:
            for l, rank in enumerate(rep.numerical_ranks):
                preds.append(_check(f"rank_W{l + 1}[{label}]", rank, lo=1, hi=1, hi_strict=False))
            continue
        preds.append(_check(f"rank_W1[{label}]", rep.numerical_ranks[0], lo=1, hi=1, hi_strict=False))
        preds.append(_check(f"rank_W{L}[{label}]", rep.numerical_ranks[-1], lo=1, hi=1, hi_strict=False))
        for l in range(1, L - 1):
            preds.append(_check(f"negative_mass_W{l + 1}[{label}]", rep.negative_mass[l], hi=tol["negative_mass"]))
            preds.append(_check(f"rank_W{l + 1}[{label}]", rep.numerical_ranks[l], hi=2, hi_strict=False))
        preds.append(_check(f"effective_coefficient[{label}]", rep.effective_coefficient,
                            lo=tol["coefficient"][0], hi=tol["coefficient"][1], hi_strict=False))
        for l, ratio in enumerate(rep.pos_neg_ratio):
            preds.append(_check(f"pos_neg_ratio_r{l + 1}[{label}]", ratio, lo=tol["ratio"][0],
                                hi=tol["ratio"][1], hi_strict=False))
    return preds


EXPERIMENTS["fig5_deep_structure"] = Experiment(
    defaults={
        "dataset": {"kind": "gaussian", "n_pairs": 1000, "D": 20, "teacher": "linear"},
        "network": {"width": 100, "w_init": 1e-2},
        "train": {"loss": "square", "reduction": "mean", "eta": 0.1, "steps": 20000, "monitors": []},
        "sweep": {"depth": [3], "alpha": [0.0, 1.0]},
        "tolerances": {"rank_tol": 1e-2, "negative_mass": 1e-3, "coefficient": [0.49, 0.51],
                       "ratio": [0.9, 1.1]},
    },
    points=_fig5_points,
    run_point=_fig5_point,
    verify=_fig5_verify,
    prepare=_prepare_single_dataset,
)


# --- plateau length on the perturbed six-point set ---------------------------

def _fig7_point(cfg, out, h, point):
    delta, label = float(point["delta"]), point["label"]
    d = make_named("asym6", {"delta": delta})
    _save_point_dataset(d, out / "runs" / label, h)
    seed = derive_seed(cfg.seed, 2)
    net = init_gaussian(make_rng(seed), [2, int(cfg.network["width"]), 1], float(cfg.network["w_init"]), 0.0)
    steps = int(cfg.train["steps"])
    tr = train(net, d, cfg.train_config(snapshot_every=steps))
    export_trajectory(tr, out / "runs" / label, h)
    return {label: {"seed": seed, "status": [tr.status], "stop_reason": [tr.stop_reason]}}


def plateau_scaling(deltas, durations) -> float:
    """Least-squares slope of log(duration) against log(delta)."""
    return float(np.polyfit(np.log(deltas), np.log(durations), 1)[0])


def _fig7_verify(out, cfg):
    preds, deltas, durations = [], [], []
    for delta in cfg.sweep["delta"]:
        label = f"delta={delta:g}"
        try:
            tr = load_trajectory(out / "runs" / label)
            dur = plateau_duration(tr.losses, tr.times, eps=cfg.tolerances["plateau_eps"])
        except (LabError, ValueError, FileNotFoundError) as exc:
            preds.append(_failed(f"plateau[{label}]", exc))
            continue
        preds.append(_check(f"plateau_duration[{label}]", dur, lo=0, lo_strict=True))
        deltas.append(float(delta))
        durations.append(dur)
    if len(durations) >= 2 and all(x > 0 for x in durations):
        lo, hi = cfg.tolerances["slope"]
        preds.append(_check("plateau_loglog_slope", plateau_scaling(deltas, durations), lo=lo, hi=hi,
                            hi_strict=False))
    else:
        preds.append(Predicate("plateau_loglog_slope", float("nan"), "needs two positive durations", False))
    return preds


def _fig7_plot(out, cfg, h):
    series = []
    for delta in cfg.sweep["delta"]:
        tr = load_trajectory(out / "runs" / f"delta={delta:g}")
        series.append((f"delta={delta:g}", tr.time_array(), tr.loss_array()))
    line_plot(out / "plots" / "loss_curves.svg", series, title="asym6 loss", ylabel="loss", logx=True,
              manifest_hash=h)


EXPERIMENTS["fig7_plateau"] = Experiment(
    defaults={
        "dataset": {"kind": "named", "name": "asym6"},
        "network": {"width": 100, "w_init": 1e-3},
        "train": {"loss": "square", "reduction": "mean", "eta": 0.025, "steps": 200000, "monitors": []},
        "sweep": {"delta": [0.05, 0.1, 0.2, 0.4]},
        "tolerances": {"slope": [-1.25, -0.8], "plateau_eps": 1e-4},
    },
    points=lambda cfg: [{"label": f"delta={x:g}", "delta": x} for x in cfg.sweep["delta"]],
    run_point=_fig7_point,
    verify=_fig7_verify,
)


# --- label-flip noise and the max-margin limit ------------------------------

def _labelflip_points(cfg):
    return [{"label": f"flips={k}", "flips": int(k)} for k in cfg.sweep["flips"]]


def _labelflip_point(cfg, out, h, point):
    label = point["label"]
    spec = dict(cfg.dataset, params=dict(cfg.dataset.get("params", {}), flips=point["flips"]))
    d = _dataset_from_spec(spec, derive_seed(cfg.seed, 1))
    _save_point_dataset(d, out / "runs" / label, h)
    seed = derive_seed(cfg.seed, 2)
    net = init_gaussian(make_rng(seed), [d.D, int(cfg.network["width"]), 1], float(cfg.network["w_init"]), 0.0)
    steps = int(cfg.train["steps"])
    tr = train(net, d, cfg.train_config(snapshot_every=max(steps // 20, 1)))
    export_trajectory(tr, out / "runs" / label / "relu", h)
    _loss_plot(out, f"loss_{label}", {label: tr}, h, logx=True, logy=True)
    return {label: {"seed": seed, "status": [tr.status], "stop_reason": [tr.stop_reason]}}


def _cosine(a, b) -> float:
    return float(a @ b / (np.linalg.norm(a) * np.linalg.norm(b)))


def _labelflip_verify(out, cfg):
    tol, preds = cfg.tolerances, []
    for point in _labelflip_points(cfg):
        label = point["label"]
        try:
            d = load_dataset(out / "runs" / label / "dataset.csv")
            net = load_trajectory(out / "runs" / label / "relu").final
            w_eff, even = decompose_two_layer(net)
            if point["flips"] == 0:
                sol = max_margin_solution(d, tol=SOLVER_TOLERANCES["max_margin_tol"])
                preds.append(_check(f"max_margin_cosine[{label}]", _cosine(w_eff, sol.w), lo=tol["cosine"]))
                continue
            w_lin = logistic_linear_solution(d, tol=SOLVER_TOLERANCES["logistic_newton_tol"])
            odd = d.inputs @ w_eff
            flipped = np.asarray(d.metadata["flipped_indices"], dtype=int)
            flipped = np.concatenate([flipped, flipped + d.P // 2])
            fit = np.sign(predict(net, d.inputs[flipped])) == d.targets[flipped]
            lin_fit = np.sign(d.inputs[flipped] @ w_lin) == d.targets[flipped]
        except (LabError, ValueError, FileNotFoundError, KeyError) as exc:
            preds.append(_failed(f"labelflip[{label}]", exc))
            continue
        preds.append(_check(f"linear_solution_cosine[{label}]", _cosine(w_eff, w_lin), lo=tol["cosine"]))
        preds.append(_check(f"even_part_ratio[{label}]",
                            np.linalg.norm(even(d.inputs)) / np.linalg.norm(odd), hi=tol["even_ratio"]))
        # the net may fit a flipped point only where the linear optimum does too
        extra = _check(f"flipped_fit_beyond_linear[{label}]", int(np.sum(fit & ~lin_fit)), lo=0, hi=0,
                       hi_strict=False)
        extra.detail = f"net fits {int(fit.sum())}, linear optimum fits {int(lin_fit.sum())} of {fit.size}"
        preds.append(extra)
    return preds


EXPERIMENTS["appG_labelflip"] = Experiment(
    defaults={
        "dataset": {"kind": "named", "name": "labelflip", "params": {"n_half": 10}, "seed": 3},
        "network": {"width": 50, "w_init": 1e-3},
        "train": {"loss": "logistic", "reduction": "mean", "eta": 5.0, "steps": 60000, "monitors": []},
        "sweep": {"flips": [0, 2]},
        "tolerances": {"cosine": 0.999, "even_ratio": 1e-3},
    },
    points=_labelflip_points,
    run_point=_labelflip_point,
    verify=_labelflip_verify,
)


# --- gradient check -----------------------------------------------------------

def finite_difference_error(net: NetworkParams, d: Dataset, loss: str, reduction: str, l2: float,
                            h: float = 1e-5) -> float:
    """Relative error between backprop gradients and central differences."""
    _, grads = loss_and_gradients(net, d, loss, reduction, l2)
    num, ana = [], []
    for l, w in enumerate(net.layers):
        for idx in np.ndindex(w.shape):
            layers_p = [x.copy() for x in net.layers]
            layers_m = [x.copy() for x in net.layers]
            layers_p[l][idx] += h
            layers_m[l][idx] -= h
            fp = loss_value(net.replace(layers_p), d, loss, reduction, l2)
            fm = loss_value(net.replace(layers_m), d, loss, reduction, l2)
            num.append((fp - fm) / (2 * h))
            ana.append(grads[l][idx])
    num, ana = np.array(num), np.array(ana)
    return float(np.linalg.norm(num - ana) / max(np.linalg.norm(ana), 1e-12))


def _gradcheck_cases(cfg):
    cases = []
    for loss in cfg.sweep["loss"]:
        for alpha in cfg.sweep["alpha"]:
            for depth in cfg.sweep["depth"]:
                for reduction, l2 in cfg.sweep["reduction_l2"]:
                    cases.append({"label": f"{loss}-a{alpha:g}-L{depth}-{reduction}-l2{l2:g}", "loss": loss,
                                  "alpha": alpha, "depth": depth, "reduction": reduction, "l2": l2})
    return cases


def _gradcheck_point(cfg, out, h, point):
    d = load_dataset(out / "dataset.csv")
    seed = derive_seed(cfg.seed, 2)
    rng = make_rng(seed)
    for k, case in enumerate(_gradcheck_cases(cfg)):
        shape = [d.D] + [int(cfg.network["width"])] * (case["depth"] - 1) + [1]
        net = init_gaussian(rng, shape, float(cfg.network["w_init"]), case["alpha"])
        _write_json(out / "cases" / f"{k:03d}.json", dict(case, network=net.to_json()), h)
    return {"gradcheck": {"seed": seed, "status": ["ok"], "stop_reason": ["n/a"]}}


def _gradcheck_verify(out, cfg):
    d = load_dataset(out / "dataset.csv")
    preds = []
    for path in sorted((out / "cases").glob("*.json")):
        case = json.loads(path.read_text())
        net = NetworkParams.from_json(case["network"])
        err = finite_difference_error(net, d, case["loss"], case["reduction"], case["l2"],
                                      SOLVER_TOLERANCES["gradcheck_h"])
        preds.append(_check(f"gradient_rel_error[{case['label']}]", err, hi=cfg.tolerances["rel_error"]))
    if not preds:
        raise MissingArtifactError(f"no gradient-check cases under {out / 'cases'}")
    return preds


EXPERIMENTS["gradcheck"] = Experiment(
    defaults={
        "dataset": {"kind": "gaussian", "n_pairs": 5, "D": 3, "teacher": "sin"},
        "network": {"width": 4, "w_init": 1.0},
        "train": {"monitors": []},
        "sweep": {"loss": ["square", "logistic"], "alpha": [0.0, 0.3, 1.0], "depth": [2, 3, 4],
                  "reduction_l2": [["mean", 0.0], ["sum", 0.1]]},
        "tolerances": {"rel_error": 1e-6},
    },
    points=lambda cfg: [{"label": "gradcheck"}],
    run_point=_gradcheck_point,
    verify=_gradcheck_verify,
    prepare=_prepare_single_dataset,
)


# ---------------------------------------------------------------------------
# run / verify

def _point_worker(args):
    cfg_doc, out, h, point = args
    cfg = ExperimentConfig(**cfg_doc)
    return EXPERIMENTS[cfg.experiment].run_point(cfg, Path(out), h, point)


def run(config: ExperimentConfig, out_dir=None, threads: int | None = None) -> Path:
    """Execute every sweep point and write the run directory; the manifest is written last."""
    exp = EXPERIMENTS[config.experiment]
    out = Path(out_dir or config.output)
    if out.exists():
        if any(out.iterdir()) and not (out / "manifest.json").exists() and not (out / "runs").exists():
            raise ConfigError(f"{out} exists and is not a run directory")
        shutil.rmtree(out)
    out.mkdir(parents=True)
    h = config.run_hash()
    seeds = {"base": config.seed}
    if exp.prepare is not None:
        seeds.update(exp.prepare(config, out, h))
    points = exp.points(config)
    results = run_many(_point_worker, [(config.to_dict(), str(out), h, p) for p in points], threads)
    runs = {}
    for res in results:
        runs.update(res)
    if config.experiment == "fig7_plateau":
        _fig7_plot(out, config, h)
    diverged = sorted(k for k, v in runs.items() if any(s != "ok" for s in v["status"]))
    files = {str(p.relative_to(out)): _sha256(p) for p in sorted(out.rglob("*")) if p.is_file()}
    manifest = {
        "hash": h,
        "experiment": config.experiment,
        "version": __version__,
        "config": config.to_dict(),
        "conventions": CONVENTIONS,
        "solver_tolerances": SOLVER_TOLERANCES,
        "divergence_threshold": DIVERGENCE_THRESHOLD,
        "reduction": config.train.get("reduction", "mean"),
        "seeds": seeds,
        "runs": runs,
        "status": "diverged" if diverged else "ok",
        "diverged": diverged,
        "files": files,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return out


def _file_hash_tag(path: Path) -> str | None:
    """Manifest hash embedded in an artifact, or None when absent."""
    if path.suffix == ".json":
        try:
            return json.loads(path.read_text()).get("manifest")
        except (json.JSONDecodeError, AttributeError):
            return None
    with path.open() as fh:
        for line in fh:
            line = line.strip()
            if line.startswith("# manifest "):
                return line.split()[2]
            if line.startswith("<!-- manifest "):
                return line.split()[2]
            if not (line.startswith("#") or line.startswith("<svg")):
                return None
    return None


def verify(run_dir) -> dict:
    """Re-evaluate every predicate of the run and write ``verdict.json``."""
    out = Path(run_dir)
    mpath = out / "manifest.json"
    if not mpath.exists():
        raise MissingArtifactError(f"{mpath} not found (incomplete or missing run)")
    manifest = json.loads(mpath.read_text())
    h = manifest["hash"]
    missing = [f for f in manifest["files"] if not (out / f).exists()]
    if missing:
        raise MissingArtifactError(f"missing artifacts: {missing[:5]}")
    cfg = ExperimentConfig(**manifest["config"])
    preds = []
    present = [p for p in sorted(out.rglob("*")) if p.is_file() and p.name not in ("manifest.json", "verdict.json")]
    foreign = [str(p.relative_to(out)) for p in present
               if str(p.relative_to(out)) not in manifest["files"] or _file_hash_tag(p) != h]
    preds.append(Predicate("single_run", len(foreign), "== 0", not foreign, ", ".join(foreign[:5])))
    changed = [f for f, digest in manifest["files"].items() if _sha256(out / f) != digest]
    preds.append(Predicate("artifacts_unmodified", len(changed), "== 0", not changed, ", ".join(changed[:5])))
    preds.append(Predicate("runs_completed", len(manifest["diverged"]), "== 0", not manifest["diverged"],
                           ", ".join(manifest["diverged"])))
    try:
        preds.extend(EXPERIMENTS[cfg.experiment].verify(out, cfg))
    except MissingArtifactError:
        raise
    except (LabError, ValueError, FileNotFoundError, KeyError) as exc:
        preds.append(_failed("experiment_predicates", exc))
    verdict = {"experiment": cfg.experiment, "manifest": h, "passed": all(p.passed for p in preds),
               "predicates": [asdict(p) for p in preds]}
    (out / "verdict.json").write_text(json.dumps(verdict, indent=2, default=float))
    return verdict
