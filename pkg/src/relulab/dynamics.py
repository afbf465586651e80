"""Gradient-flow integration by explicit Euler steps.

Simulated time is ``t = step * eta`` (time measured in units of the time
constant ``tau = 1/eta``), so a run at learning rate ``eta`` for ``n`` steps
covers ``t in [0, n * eta]``.
"""
from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .datasets import Dataset, DataStats
from .errors import PreconditionError, ShapeError
from .model import NetworkParams, l2_coefficient, loss_and_gradients

DIVERGENCE_THRESHOLD = 1e6


@dataclass(frozen=True)
class TrainConfig:
    loss: str = "square"
    reduction: str = "mean"
    eta: float = 0.004
    steps: int = 1000
    l2: float = 0.0
    snapshot_every: int = 100
    seed: int = 0
    monitor_every: int = 1
    monitors: tuple = ("norms",)
    converge_tol: float | None = None
    converge_window: int = 1000

    def __post_init__(self):
        if not self.eta > 0:
            raise ValueError("eta must be positive")
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if self.loss not in ("square", "logistic"):
            raise ValueError(f"unknown loss {self.loss!r}")
        if self.reduction not in ("mean", "sum"):
            raise ValueError(f"unknown reduction {self.reduction!r}")
        if self.snapshot_every < 1 or self.monitor_every < 1:
            raise ValueError("cadences must be >= 1")
        object.__setattr__(self, "monitors", tuple(self.monitors))

    @property
    def tau(self) -> float:
        return 1.0 / self.eta

    def with_(self, **kw) -> "TrainConfig":
        return TrainConfig(**{**asdict(self), **kw})


@dataclass
class Trajectory:
    times: list = field(default_factory=list)
    steps: list = field(default_factory=list)
    losses: list = field(default_factory=list)
    snapshot_steps: list = field(default_factory=list)
    snapshots: list = field(default_factory=list)
    monitor_times: list = field(default_factory=list)
    monitors: dict = field(default_factory=dict)
    status: str = "ok"
    stop_reason: str = "steps"
    eta: float = 1.0
    meta: dict = field(default_factory=dict)

    @property
    def final(self) -> NetworkParams:
        return self.snapshots[-1]

    @property
    def final_loss(self) -> float:
        return self.losses[-1]

    def loss_array(self) -> np.ndarray:
        return np.asarray(self.losses)

    def time_array(self) -> np.ndarray:
        return np.asarray(self.times)

    def snapshot_times(self) -> np.ndarray:
        return np.asarray(self.snapshot_steps, dtype=np.float64) * self.eta

    def monitor(self, name: str) -> np.ndarray:
        return np.asarray(self.monitors[name])


# ---------------------------------------------------------------------------
# monitors

def _norm_monitors(net: NetworkParams) -> dict:
    return {f"norm_W{i + 1}": float(np.linalg.norm(w)) for i, w in enumerate(net.layers)}


def _balancedness(net: NetworkParams) -> dict:
    if net.depth != 2:
        return {}
    w1, w2 = net.layers
    return {"balancedness": float(np.linalg.norm(w1 @ w1.T - w2.T @ w2))}


def _linear_map(net: NetworkParams) -> dict:
    coef = (net.alpha + 1.0) / 2.0 if net.depth == 2 else 1.0
    m = coef * net.product()[0]
    return {f"map_{i}": float(v) for i, v in enumerate(m)}


MONITORS: dict[str, Callable[[NetworkParams], dict]] = {
    "norms": _norm_monitors,
    "balancedness": _balancedness,
    "linear_map": _linear_map,
}


# ---------------------------------------------------------------------------
# generic Euler driver

def _euler(net: NetworkParams, cfg: TrainConfig,
           loss_and_update: Callable[[list], tuple[float, list]], label: str) -> Trajectory:
    """Run ``W <- W + eta * update(W)`` recording loss, monitors and snapshots.

    ``loss_and_update`` returns the loss at ``W`` and the descent direction
    (minus the gradient) for every layer.
    """
    traj = Trajectory(eta=cfg.eta, meta={"integrator": label, "divergence_threshold": DIVERGENCE_THRESHOLD})
    for name in cfg.monitors:
        if name not in MONITORS:
            raise ValueError(f"unknown monitor {name!r}")
    ws = [np.array(w) for w in net.layers]
    alpha = net.alpha

    def record(step, loss, state):
        traj.steps.append(step)
        traj.times.append(step * cfg.eta)
        traj.losses.append(loss)
        if step % cfg.monitor_every == 0 or step == cfg.steps:
            current = NetworkParams(state, alpha) if cfg.monitors else None
            traj.monitor_times.append(step * cfg.eta)
            for name in cfg.monitors:
                for k, v in MONITORS[name](current).items():
                    traj.monitors.setdefault(k, []).append(v)

    def snapshot(step, state):
        traj.snapshot_steps.append(step)
        traj.snapshots.append(NetworkParams([w.copy() for w in state], alpha))

    step = 0
    while True:
        loss, update = loss_and_update(ws)
        if not np.isfinite(loss) or loss > DIVERGENCE_THRESHOLD or not all(np.all(np.isfinite(u)) for u in update):
            traj.status = "diverged"
            traj.stop_reason = f"loss {loss!r} exceeded threshold at step {step}"
            break
        record(step, float(loss), ws)
        last = step == cfg.steps
        if cfg.converge_tol is not None and step >= cfg.converge_window and step % cfg.converge_window == 0:
            prev = traj.losses[-1 - cfg.converge_window]
            if abs(prev - loss) <= cfg.converge_tol * max(abs(loss), 1e-300):
                traj.stop_reason = "converged"
                last = True
        if step % cfg.snapshot_every == 0 or last:
            snapshot(step, ws)
        if last:
            break
        ws = [w + cfg.eta * u for w, u in zip(ws, update)]
        step += 1
    return traj


def train(net: NetworkParams, data: Dataset, cfg: TrainConfig) -> Trajectory:
    """Full-batch gradient descent on the per-sample network."""
    if data.D != net.input_dim:
        raise ShapeError(f"data has D={data.D}, network expects {net.input_dim}")

    def step(ws):
        value, grads = loss_and_gradients(NetworkParams(ws, net.alpha), data, cfg.loss,
                                          cfg.reduction, cfg.l2)
        return value, [-g for g in grads]

    traj = _euler(net, cfg, step, "full")
    traj.meta.update(alpha=net.alpha, loss=cfg.loss, reduction=cfg.reduction,
                     sigma_prime_at_zero=net.alpha, dataset=data.name)
    return traj


# ---------------------------------------------------------------------------
# reduced ODEs driven by data statistics

def _quadratic_loss(stats: DataStats, m: np.ndarray) -> float:
    """Square loss of the linear map ``m`` (1 x D) from second moments."""
    m = m.reshape(-1)
    return 0.5 * (stats.y_sq - 2.0 * m @ stats.beta + m @ stats.sigma @ m)


def _check_two_layer(net: NetworkParams, stats: DataStats):
    if net.depth != 2:
        raise ShapeError("expected a two-layer network")
    if net.input_dim != stats.beta.shape[0]:
        raise ShapeError("statistics and network dimensions differ")


def integrate_reduced_two_layer(net: NetworkParams, stats: DataStats, cfg: TrainConfig) -> Trajectory:
    """Euler on the reduced two-layer dynamics with coefficient c = (alpha+1)/2::

        tau dW1 = c W2^T beta^T - c^2 W2^T W2 W1 Sigma
        tau dW2 = c beta^T W1^T - c^2 W2 W1 Sigma W1^T
    """
    _check_two_layer(net, stats)
    c = (net.alpha + 1.0) / 2.0
    lam = l2_coefficient(cfg.l2, net.alpha)
    bt, sig = stats.beta[None, :], stats.sigma

    def step(ws):
        w1, w2 = ws
        m = w2 @ w1
        loss = _quadratic_loss(stats, c * m) + lam * (np.sum(w1 * w1) + np.sum(w2 * w2))
        err = c * bt - c * c * m @ sig
        return loss, [w2.T @ err - 2 * lam * w1, err @ w1.T - 2 * lam * w2]

    traj = _euler(net, cfg, step, "reduced_two_layer")
    traj.meta.update(alpha=net.alpha)
    return traj


def integrate_linear(net: NetworkParams, stats: DataStats, cfg: TrainConfig) -> Trajectory:
    """Two-layer linear network ODE (the ``alpha = 1`` case of the reduced flow)."""
    return integrate_reduced_two_layer(net.replace(alpha=1.0), stats, cfg)


def _chain(ws, lo, hi, d):
    """Ordered product ``W_hi ... W_lo`` (1-based, inclusive); identity of size d if empty."""
    out = None
    for w in ws[lo - 1:hi]:
        out = w if out is None else w @ out
    return np.eye(d) if out is None else out


def integrate_deep_linear(net: NetworkParams, stats: DataStats, cfg: TrainConfig) -> Trajectory:
    """Euler on the deep linear ODE
    ``tau dW_l = (W_L..W_{l+1})^T (beta^T - W_L..W_1 Sigma) (W_{l-1}..W_1)^T``."""
    if net.depth < 2:
        raise ShapeError("deep linear dynamics need at least two layers")
    L = net.depth
    bt, sig = stats.beta[None, :], stats.sigma

    def step(ws):
        total = _chain(ws, 1, L, stats.beta.size)
        err = bt - total @ sig
        ups = []
        for l in range(1, L + 1):
            left = _chain(ws, l + 1, L, 1) if l < L else np.eye(1)
            right = _chain(ws, 1, l - 1, stats.beta.size)
            ups.append(left.T @ err @ right.T)
        return _quadratic_loss(stats, total), ups

    traj = _euler(net.replace(alpha=1.0), cfg, step, "deep_linear")
    traj.meta.update(alpha=1.0)
    return traj


def sign_masks(net: NetworkParams, r=None):
    """Per hidden layer, boolean masks of units active on the probes ``+r`` and ``-r``.

    ``r`` defaults to the leading right singular vector of ``W_1``, oriented so
    the network output on ``+r`` is non-negative.
    """
    if r is None:
        _, _, vt = np.linalg.svd(net.layers[0])
        r = vt[0]
    r = np.asarray(r, dtype=np.float64)
    from .model import forward

    plus, minus = forward(net, r).preactivations, forward(net, -r).preactivations
    if plus[-1][0] < minus[-1][0]:
        plus, minus, r = minus, plus, -r
    return [h > 0 for h in plus[:-1]], [h > 0 for h in minus[:-1]], r


def integrate_deep_reduced_relu(net: NetworkParams, stats: DataStats, cfg: TrainConfig) -> Trajectory:
    """Reduced deep ReLU dynamics for weights in the block rank-one/rank-two form.

    Inputs in the half space ``r^T x > 0`` (resp. ``< 0``) see a linear network
    whose hidden units are gated by fixed masks ``M^+`` (resp. ``M^-``).
    Averaging the two gated linear flows with equal weight gives::

        tau dW_l = 1/2 sum_s (W_L M^s .. W_{l+1} M^s_l)^T (beta^T - A_s Sigma) (M^s_{l-1} W_{l-1} .. M^s_1 W_1)^T

    with ``A_s`` the gated product. For the first and last layer this is
    ``(prod_{>l} W)^T (beta^T/2 - prod W Sigma / 4) (prod_{<l} W)^T`` because the
    two gated products add up to the ungated one; for intermediate layers the
    gating keeps the off-diagonal blocks at zero. The effective linear map is
    monitored as ``prod W / 2``.
    """
    if net.depth < 2:
        raise ShapeError("need at least two layers")
    plus, minus, _ = sign_masks(net)
    L, D = net.depth, stats.beta.size
    bt, sig = stats.beta[None, :], stats.sigma

    def gated(ws, masks, lo, hi):
        # product W_hi M_{hi-1} ... M_lo W_lo with masks applied after each W_l, l < L
        out = None
        for l in range(lo, hi + 1):
            w = ws[l - 1] if out is None else ws[l - 1] @ out
            out = w * masks[l - 1][:, None] if l < L else w
        return out

    def step(ws):
        ups = [np.zeros_like(w) for w in ws]
        loss = 0.0
        for masks in (plus, minus):
            a = gated(ws, masks, 1, L)
            loss += 0.5 * _quadratic_loss(stats, a)
            err = bt - a @ sig
            for l in range(1, L + 1):
                # layers above l, including layer l's own gate
                left = _gated_above(ws, masks, l, L) * masks[l - 1][None, :] if l < L else np.eye(1)
                right = gated(ws, masks, 1, l - 1) if l > 1 else np.eye(D)
                ups[l - 1] += 0.5 * left.T @ err @ right.T
        return loss, ups

    traj = _euler(net, cfg, step, "deep_reduced_relu")
    traj.meta.update(alpha=0.0, effective_coefficient=0.5)
    return traj


def _gated_above(ws, masks, l, L):
    """``W_L M_{L-1} W_{L-1} ... M_{l+1} W_{l+1}`` (1 x H_l)."""
    out = ws[L - 1]
    for k in range(L - 1, l, -1):
        out = (out * masks[k - 1][None, :]) @ ws[k - 1]
    return out


def integrate_ortho_norm(u0: float, beta_norm: float, P: int, cfg: TrainConfig):
    """Euler on ``tau du = u (||beta|| - u^2 / P)``; returns ``(times, u)``."""
    if not u0 > 0:
        raise ValueError("u0 must be positive")
    u = np.empty(cfg.steps + 1)
    u[0] = u0
    for k in range(cfg.steps):
        u[k + 1] = u[k] + cfg.eta * u[k] * (beta_norm - u[k] ** 2 / P)
    return np.arange(cfg.steps + 1) * cfg.eta, u


def monitor_norm_bound(traj: Trajectory, stats: DataStats, w_init: float | None = None,
                       rate_scale: float = 1.0):
    """Check ``max(||W1||, ||W2||) <= w_init exp((s + Tr Sigma) t)`` inside the
    window ``t < ln(1/w_init) / (s + Tr Sigma)`` (times in units of tau).

    Returns ``(times, u, bound, ok)`` restricted to the window. ``rate_scale``
    multiplies ``s + Tr Sigma`` and exists to check that the test can fail.
    """
    if "norm_W1" not in traj.monitors or "norm_W2" not in traj.monitors:
        raise PreconditionError("trajectory lacks weight-norm monitors")
    t = np.asarray(traj.monitor_times)
    u = np.maximum(traj.monitor("norm_W1"), traj.monitor("norm_W2"))
    if w_init is None:
        w_init = float(u[0])
    rate = rate_scale * (stats.s + stats.trace_sigma)
    horizon = np.log(1.0 / w_init) / (stats.s + stats.trace_sigma)
    keep = t < horizon
    bound = w_init * np.exp(rate * t[keep])
    ok = u[keep] <= bound * (1.0 + 1e-12)
    return t[keep], u[keep], bound, ok


# ---------------------------------------------------------------------------
# export

def export_trajectory(traj: Trajectory, run_dir, manifest_hash: str = "") -> Path:
    """``trajectory.csv`` (step,t,loss,<monitors>) plus numbered snapshot JSON files."""
    run_dir = Path(run_dir)
    (run_dir / "snapshots").mkdir(parents=True, exist_ok=True)
    names = sorted(traj.monitors)
    mon_index = {round(t / traj.eta): i for i, t in enumerate(traj.monitor_times)}
    with (run_dir / "trajectory.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if manifest_hash:
            fh.write(f"# manifest {manifest_hash}\n")
        w.writerow(["step", "t", "loss", *names])
        for step, t, loss in zip(traj.steps, traj.times, traj.losses):
            i = mon_index.get(step)
            mons = [repr(traj.monitors[n][i]) if i is not None else "" for n in names]
            w.writerow([step, repr(t), repr(loss), *mons])
    for step, net in zip(traj.snapshot_steps, traj.snapshots):
        doc = dict(net.to_json(), step=step, manifest=manifest_hash)
        (run_dir / "snapshots" / f"{step:09d}.json").write_text(json.dumps(doc))
    meta = dict(traj.meta, status=traj.status, stop_reason=traj.stop_reason, eta=traj.eta,
                manifest=manifest_hash, monitors=names)
    (run_dir / "trajectory.json").write_text(json.dumps(meta, indent=2, sort_keys=True, default=str))
    return run_dir / "trajectory.csv"


def read_trajectory_csv(path):
    """Load ``trajectory.csv`` into a dict of numpy columns (comment lines skipped)."""
    with Path(path).open() as fh:
        rows = [row for row in csv.reader(line for line in fh if not line.startswith("#"))]
    header, body = rows[0], rows[1:]
    cols = {}
    for j, name in enumerate(header):
        cols[name] = np.array([float(r[j]) if r[j] != "" else np.nan for r in body])
    return cols


def load_trajectory(run_dir) -> Trajectory:
    """Rebuild a ``Trajectory`` from the files written by ``export_trajectory``."""
    run_dir = Path(run_dir)
    for name in ("trajectory.csv", "trajectory.json"):
        if not (run_dir / name).exists():
            raise FileNotFoundError(f"missing {run_dir / name}")
    meta = json.loads((run_dir / "trajectory.json").read_text())
    cols = read_trajectory_csv(run_dir / "trajectory.csv")
    traj = Trajectory(eta=float(meta.pop("eta")), status=meta.pop("status"), stop_reason=meta.pop("stop_reason"))
    names = meta.pop("monitors", [])
    traj.meta = meta
    traj.steps = [int(s) for s in cols["step"]]
    traj.times = cols["t"].tolist()
    traj.losses = cols["loss"].tolist()
    if names:
        have = ~np.isnan(cols[names[0]])
        traj.monitor_times = cols["t"][have].tolist()
        traj.monitors = {n: cols[n][have].tolist() for n in names}
    for path in sorted((run_dir / "snapshots").glob("*.json")):
        doc = json.loads(path.read_text())
        traj.snapshot_steps.append(int(doc["step"]))
        traj.snapshots.append(NetworkParams.from_json(doc))
    return traj


def interpolate_snapshot(traj: Trajectory, t: float) -> NetworkParams:
    """Piecewise-linear interpolation in weight space between snapshots."""
    ts = traj.snapshot_times()
    if t < ts[0] - 1e-12 or t > ts[-1] + 1e-12:
        raise ValueError(f"time {t} outside snapshot range [{ts[0]}, {ts[-1]}]")
    j = int(np.searchsorted(ts, t))
    if j < len(ts) and abs(ts[j] - t) <= 1e-9 * max(1.0, abs(t)):
        return traj.snapshots[j]
    j = min(max(j, 1), len(ts) - 1)
    lo, hi = traj.snapshots[j - 1], traj.snapshots[j]
    a = (t - ts[j - 1]) / (ts[j] - ts[j - 1])
    return lo.replace([(1 - a) * wl + a * wh for wl, wh in zip(lo.layers, hi.layers)])


def run_many(fn: Callable, args: Sequence, threads: int | None = None) -> list:
    """Map ``fn`` over ``args`` with a process pool capped by ``threads``."""
    import os
    from concurrent.futures import ProcessPoolExecutor

    threads = threads or int(os.environ.get("LAB_THREADS", "1"))
    if threads <= 1 or len(args) <= 1:
        return [fn(a) for a in args]
    with ProcessPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, args))
