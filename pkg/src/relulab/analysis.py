"""Quantitative comparisons between trajectories and structural summaries of
trained weights."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .dynamics import Trajectory, interpolate_snapshot
from .errors import PreconditionError
from .model import NetworkParams, forward, predict
from .numkit import singular_values

MAX_SNAPSHOT_CADENCE = 100
RANK_TOL = 1e-2


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    return obj


# ---------------------------------------------------------------------------
# leaky-ReLU vs linear equivalence


@dataclass
class EquivalenceReport:
    alpha: float
    time_grid: np.ndarray
    weight_error: np.ndarray
    loss_gap: np.ndarray
    max_weight_error: float
    max_loss_gap: float
    provenance: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return _jsonable(asdict(self))


def _check_cadence(traj: Trajectory):
    gaps = np.diff(traj.snapshot_steps)
    if gaps.size and gaps.max() > MAX_SNAPSHOT_CADENCE:
        raise PreconditionError(f"snapshot cadence {gaps.max()} exceeds {MAX_SNAPSHOT_CADENCE} steps")


def equivalence_report(relu_traj: Trajectory, lin_traj: Trajectory, alpha: float,
                       provenance: dict | None = None) -> EquivalenceReport:
    """Error ``||sqrt((a+1)/2) W(2t/(a+1)) - W_lin(t)|| / ||W_lin(t)||`` on the
    linear run's snapshot times, plus the relative loss gap at matched times.

    Weights are all layers stacked; ReLU snapshots are interpolated linearly.
    """
    _check_cadence(relu_traj)
    _check_cadence(lin_traj)
    c = (alpha + 1.0) / 2.0
    t_lin = lin_traj.snapshot_times()
    t_relu_end = relu_traj.snapshot_times()[-1]
    keep = t_lin / c <= t_relu_end * (1 + 1e-12)
    if not np.any(keep):
        raise ValueError("trajectories do not overlap in rescaled time")
    grid = t_lin[keep]
    errors, gaps = [], []
    relu_t, relu_l = relu_traj.time_array(), relu_traj.loss_array()
    lin_t, lin_l = lin_traj.time_array(), lin_traj.loss_array()
    for t, snap in zip(grid, [s for s, k in zip(lin_traj.snapshots, keep) if k]):
        w = interpolate_snapshot(relu_traj, min(t / c, t_relu_end))
        lin = snap.flat()
        errors.append(np.linalg.norm(np.sqrt(c) * w.flat() - lin) / np.linalg.norm(lin))
        lr = np.interp(t / c, relu_t, relu_l)
        ll = np.interp(t, lin_t, lin_l)
        gaps.append(abs(lr - ll) / abs(ll))
    errors, gaps = np.asarray(errors), np.asarray(gaps)
    if not (np.all(np.isfinite(errors)) and np.all(np.isfinite(gaps))):
        raise PreconditionError("non-finite error series")
    return EquivalenceReport(float(alpha), grid, errors, gaps, float(errors.max()), float(gaps.max()),
                             dict(provenance or {}))


# ---------------------------------------------------------------------------
# weight structure


@dataclass
class StructureReport:
    singular_values: list
    numerical_ranks: list
    negative_mass: list
    offdiag_mass: list
    pos_neg_ratio: list
    effective_map: np.ndarray
    effective_coefficient: float
    rank_tol: float = RANK_TOL

    def to_json(self) -> dict:
        return _jsonable(asdict(self))


def _probe_direction(net: NetworkParams) -> np.ndarray:
    _, _, vt = np.linalg.svd(net.layers[0])
    r = vt[0]
    return r if forward(net, r).output >= forward(net, -r).output else -r


def unit_signs(net: NetworkParams, r=None) -> list[np.ndarray]:
    """Sign of every hidden unit: +1 if it responds more to ``+r`` than ``-r``."""
    if r is None:
        r = _probe_direction(net)
    hp, hm = forward(net, r).preactivations, forward(net, -r).preactivations
    return [np.where(a - b >= 0, 1, -1) for a, b in zip(hp[:-1], hm[:-1])]


def effective_map(net: NetworkParams) -> np.ndarray:
    """Odd part of the network on the basis probes, ``(f(e_i) - f(-e_i)) / 2``."""
    eye = np.eye(net.input_dim)
    return 0.5 * (predict(net, eye) - predict(net, -eye))


def structure_report(net: NetworkParams, sign_reference: NetworkParams | None = None,
                     rank_tol: float = RANK_TOL) -> StructureReport:
    """Singular values, sign pattern and block structure of every layer.

    Hidden units are split by the sign they take with respect to the leading
    input direction (of ``sign_reference`` when given). For layers between two
    hidden layers the off-diagonal block mass is ``||W[+,-]|| + ||W[-,+]||``
    relative to ``||W||``. ``pos_neg_ratio`` tracks ``||r_l^+|| / ||r_l^-||``:
    from the row norms of ``W_1`` for the first hidden layer, then through the
    diagonal block norms layer by layer.
    """
    ref = sign_reference or net
    signs = unit_signs(ref)
    svs, ranks, neg, off, ratios = [], [], [], [], []
    for l, w in enumerate(net.layers):
        sv = singular_values(w)
        svs.append(sv.tolist())
        ranks.append(int(np.sum(sv > rank_tol * sv[0])) if sv[0] > 0 else 0)
        norm = np.linalg.norm(w)
        neg.append(float(np.linalg.norm(np.minimum(w, 0.0)) / norm) if norm else 0.0)
    for l in range(1, net.depth - 1):
        w = net.layers[l]
        po, pi = signs[l] > 0, signs[l - 1] > 0
        blocks = np.linalg.norm(w[np.ix_(po, ~pi)]) ** 2 + np.linalg.norm(w[np.ix_(~po, pi)]) ** 2
        off.append(float(np.sqrt(blocks) / np.linalg.norm(w)))
    if net.depth > 1:
        w1, pos = net.layers[0], signs[0] > 0
        minus = np.linalg.norm(w1[~pos])
        ratio = float(np.linalg.norm(w1[pos]) / minus) if minus else np.inf
        ratios.append(ratio)
        for l in range(1, net.depth - 1):
            w = net.layers[l]
            po, pi = signs[l] > 0, signs[l - 1] > 0
            mm = np.linalg.norm(w[np.ix_(~po, ~pi)])
            block_ratio = np.linalg.norm(w[np.ix_(po, pi)]) / mm if mm else np.inf
            ratio = float(block_ratio / ratio)
            ratios.append(ratio)
    emap = effective_map(net)
    prod = net.product()[0]
    denom = float(prod @ prod)
    coef = float(emap @ prod / denom) if denom else float("nan")
    return StructureReport(svs, ranks, neg, off, ratios, emap, coef, rank_tol)


# ---------------------------------------------------------------------------
# loss-curve measurements


def fit_exponential_rate(times, series, window=None) -> float:
    """Least-squares slope of ``log(series)`` against ``times`` inside ``window``."""
    t = np.asarray(times, dtype=np.float64)
    y = np.asarray(series, dtype=np.float64)
    if window is not None:
        m = (t >= window[0]) & (t <= window[1])
        t, y = t[m], y[m]
    if t.size < 2:
        raise ValueError("need at least two samples in the window")
    if np.any(y <= 0):
        raise ValueError("series must be strictly positive in the window")
    return float(np.polyfit(t, np.log(y), 1)[0])


def _low_slope_runs(losses, times, eps):
    L = np.asarray(losses, dtype=np.float64)
    t = np.asarray(times, dtype=np.float64)
    span = L.max() - L.min()
    if span == 0 or L.size < 3:
        return L, t, span, np.zeros(max(L.size - 1, 0), dtype=bool)
    slope = np.abs(np.diff(L) / np.diff(t))
    return L, t, span, slope < eps * span


def plateau_duration(losses, times, eps: float = 1e-4, drop_frac: float = 0.1) -> float:
    """Length of the longest low-slope stretch after the first major drop.

    Low slope means ``|dL/dt| < eps * (max L - min L)``. The first major drop
    is complete once the loss has fallen by ``drop_frac`` of its range; a
    stretch that runs to the end of the series is the converged tail, not a
    plateau, and is ignored.
    """
    L, t, span, low = _low_slope_runs(losses, times, eps)
    if span == 0 or not low.size:
        return 0.0
    start = int(np.argmax(L <= L[0] - drop_frac * span))
    best, i, n = 0.0, start, low.size
    while i < n:
        if not low[i]:
            i += 1
            continue
        j = i
        while j < n and low[j]:
            j += 1
        if j < n:
            best = max(best, t[j] - t[i])
        i = j
    return float(best)


def count_loss_drops(losses, times, eps: float = 0.3, per_decade: int = 50,
                     min_share: float = 0.05) -> int:
    """Number of separate descents of a loss curve seen on a log-time axis.

    The curve is resampled on ``per_decade`` points per decade of time and the
    drop rate ``-dL/dlog t`` is split into runs above ``eps`` times its
    maximum. Runs that carry less than ``min_share`` of the total decrease
    are ignored.
    """
    L = np.asarray(losses, dtype=np.float64)
    t = np.asarray(times, dtype=np.float64)
    m = t > 0
    L, t = L[m], t[m]
    grid = np.logspace(np.log10(t[0]), np.log10(t[-1]), int(per_decade * np.log10(t[-1] / t[0])) + 2)
    Lg = np.interp(grid, t, L)
    rate = -np.diff(Lg)
    total = Lg[0] - Lg[-1]
    if total <= 0:
        return 0
    active = rate > eps * rate.max()
    count, i = 0, 0
    while i < rate.size:
        if not active[i]:
            i += 1
            continue
        j = i
        while j < rate.size and active[j]:
            j += 1
        if rate[i:j].sum() >= min_share * total:
            count += 1
        i = j
    return count


def resample(times, values, grid):
    return np.interp(grid, np.asarray(times, dtype=np.float64), np.asarray(values, dtype=np.float64))


def loss_superposition(relu_traj, component_trajs, transient: float = 0.05) -> float:
    """Largest gap between a loss curve and the sum of component loss curves.

    Each argument is a ``Trajectory`` or a ``(times, losses)`` pair. The
    summed components are shifted vertically to start at the target's initial
    loss; the gap is measured on the target's time grid after the first
    ``transient`` fraction of the horizon, relative to the initial loss.
    """
    def unpack(tr):
        if isinstance(tr, Trajectory):
            return tr.time_array(), tr.loss_array()
        return np.asarray(tr[0], dtype=np.float64), np.asarray(tr[1], dtype=np.float64)

    t, target = unpack(relu_traj)
    total = np.zeros_like(target)
    for comp in component_trajs:
        ct, cl = unpack(comp)
        if ct[-1] < t[-1] - 1e-12 or ct[0] > t[0] + 1e-12:
            raise ValueError("component does not cover the target's time range")
        total += resample(ct, cl, t)
    total += target[0] - total[0]
    mask = t >= t[0] + transient * (t[-1] - t[0])
    return float(np.max(np.abs(target[mask] - total[mask])) / abs(target[0]))
