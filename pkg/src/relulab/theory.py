"""Analytic predictions that do not touch the simulator.

These serve as independent oracles for the integrators: early-phase
exponential growth, the white-covariance closed form for rank-one balanced
starts, the OLS / max-margin endpoints and the odd/even split of a
two-layer network.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .datasets import Dataset, DataStats, check_symmetry
from .errors import (InfeasibleError, PreconditionError, RankDeficiencyError, ShapeError,
                     SingularSpecError, WindowError)
from .model import NetworkParams, predict

# ---------------------------------------------------------------------------
# early phase


@dataclass(frozen=True)
class EarlyPhaseSpec:
    r1: np.ndarray
    s: float
    beta_hat: np.ndarray
    alpha: float
    tau: float
    w_init: float
    trace_sigma: float = 0.0

    @property
    def rate(self) -> float:
        """Growth rate ``(alpha+1) s / (2 tau)`` of the aligned mode."""
        return (self.alpha + 1.0) * self.s / (2.0 * self.tau)

    @property
    def horizon(self) -> float:
        """End of the validity window ``tau ln(1/w_init) / (s + Tr Sigma)``."""
        return self.tau * np.log(1.0 / self.w_init) / (self.s + self.trace_sigma)


def early_phase_spec(net: NetworkParams, stats: DataStats, tau: float = 1.0,
                     w_init: float | None = None) -> EarlyPhaseSpec:
    """Spec for a two-layer start: ``r1 = (W1(0) beta_hat + W2(0)^T) / 2``."""
    if net.depth != 2:
        raise ShapeError("early-phase prediction is for two-layer networks")
    w1, w2 = net.layers
    r1 = 0.5 * (w1 @ stats.beta_hat + w2[0])
    if w_init is None:
        w_init = float(np.linalg.norm(w1))
    return EarlyPhaseSpec(r1, stats.s, stats.beta_hat, net.alpha, tau, w_init, stats.trace_sigma)


def early_phase_weights(spec: EarlyPhaseSpec, t: float):
    """Dominant-term prediction ``(e^{g t} r1 beta_hat^T, e^{g t} r1^T)``."""
    if t < 0 or t >= spec.horizon:
        raise WindowError(f"t={t} outside the early-phase window [0, {spec.horizon})")
    g = np.exp(spec.rate * t)
    r1 = np.asarray(spec.r1, dtype=np.float64)
    return g * np.outer(r1, spec.beta_hat), g * r1[None, :]


# ---------------------------------------------------------------------------
# closed form for white covariance


@dataclass(frozen=True)
class ClosedFormSpec:
    r: np.ndarray
    w_init: float
    s: float
    beta_hat: np.ndarray
    alpha: float = 0.0
    tau: float = 1.0

    @property
    def q1(self) -> float:
        return 1.0 - float(np.dot(self.r, self.beta_hat))

    @property
    def q2(self) -> float:
        return 1.0 + float(np.dot(self.r, self.beta_hat))

    def to_json(self) -> dict:
        return {"r": list(map(float, self.r)), "w_init": self.w_init, "s": self.s,
                "beta_hat": list(map(float, self.beta_hat)), "alpha": self.alpha, "tau": self.tau}

    @classmethod
    def from_json(cls, doc: dict) -> "ClosedFormSpec":
        if "beta" in doc and "beta_hat" not in doc:
            beta = np.asarray(doc["beta"], dtype=np.float64)
            doc = dict(doc, s=float(np.linalg.norm(beta)), beta_hat=beta / np.linalg.norm(beta))
            doc.pop("beta")
        r = np.asarray(doc["r"], dtype=np.float64)
        return cls(r / np.linalg.norm(r), float(doc["w_init"]), float(doc["s"]),
                   np.asarray(doc["beta_hat"], dtype=np.float64),
                   float(doc.get("alpha", 0.0)), float(doc.get("tau", 1.0)))


def closed_form_spec(net: NetworkParams, stats: DataStats, tau: float = 1.0) -> ClosedFormSpec:
    """Spec matching a rank-one balanced two-layer start ``W1 = v r^T, W2 = v^T``.

    The norm stored is that of the equivalent linear network,
    ``sqrt((alpha+1)/2) ||W1(0)||``, so that ``w(0)`` equals the network's
    initial linear map exactly.
    """
    w1 = net.layers[0]
    _, sv, vt = np.linalg.svd(w1)
    r = vt[0]
    if net.layers[1] @ w1 @ r < 0:
        r = -r
    w_init = np.sqrt((net.alpha + 1.0) / 2.0) * float(np.linalg.norm(w1))
    return ClosedFormSpec(r, w_init, stats.s, stats.beta_hat, net.alpha, tau)


def closed_form_w(spec: ClosedFormSpec, t: float) -> np.ndarray:
    """Linear map ``w(t)`` of a rank-one balanced start under white covariance."""
    q1, q2 = spec.q1, spec.q2
    if q2 <= 1e-9:
        raise SingularSpecError("r is anti-aligned with beta; closed form is singular")
    s, bh, r = spec.s, np.asarray(spec.beta_hat), np.asarray(spec.r)
    tt = (spec.alpha + 1.0) * t / (2.0 * spec.tau)
    e1, e2 = np.exp(-s * tt), np.exp(-2.0 * s * tt)
    rb = float(r @ bh)
    ratio = q1 / q2
    direction = bh * (1.0 - ratio * e2) + (2.0 / q2) * (r - bh * rb) * e1
    denom = (4.0 / q2 ** 2) * (spec.w_init ** -2 + (1.0 - rb ** 2) * tt) * e2 \
        + (1.0 / s) * (1.0 + ratio ** 2 * e2) * (1.0 - e2)
    return (1.0 + ratio * e2) * direction / denom


# ---------------------------------------------------------------------------
# converged solutions


def ols_solution(stats: DataStats) -> np.ndarray:
    """``Sigma^{-1} beta`` through a Cholesky solve."""
    evals = np.linalg.eigvalsh(stats.sigma)
    if evals[0] <= 0 or evals[-1] / evals[0] > 1e12:
        raise RankDeficiencyError("covariance is singular or too ill-conditioned")
    c = np.linalg.cholesky(stats.sigma)
    return np.linalg.solve(c.T, np.linalg.solve(c, stats.beta))


@dataclass(frozen=True)
class MarginSolution:
    w: np.ndarray
    dual: np.ndarray
    sweeps: int
    kkt_residual: float

    @property
    def direction(self) -> np.ndarray:
        return self.w / np.linalg.norm(self.w)


def max_margin_solution(data: Dataset, tol: float = 1e-10, max_sweeps: int = 100_000,
                        seed: int = 0, dual_cap: float = 1e8) -> MarginSolution:
    """Hard-margin problem ``min ||w||^2 s.t. y_i w^T x_i >= 1`` (no bias) by dual
    coordinate ascent with a fresh random order every sweep."""
    x, y = data.inputs, data.targets
    if not np.all(np.isin(y, (-1.0, 1.0))):
        raise ValueError("labels must be +1 or -1")
    z = y[:, None] * x
    sq = np.sum(z * z, axis=1)
    if np.any(sq == 0):
        raise InfeasibleError("a zero input cannot satisfy a margin constraint")
    a = np.zeros(len(y))
    w = np.zeros(x.shape[1])
    rng = np.random.default_rng(seed)
    converged = False
    for sweep in range(1, max_sweeps + 1):
        biggest = 0.0
        for i in rng.permutation(len(y)):
            new = max(0.0, a[i] + (1.0 - z[i] @ w) / sq[i])
            step = new - a[i]
            if step:
                w += step * z[i]
                a[i] = new
                biggest = max(biggest, abs(step))
        if a.sum() > dual_cap:
            raise InfeasibleError("dual variables diverge; data are not linearly separable")
        if biggest <= tol * max(1.0, a.max()):
            converged = True
            break
    w = z.T @ a
    margins = z @ w
    kkt = max(float(np.max(np.maximum(0.0, 1.0 - margins))),
              float(np.max(np.abs(a * (margins - 1.0)))))
    if not converged and kkt > 1e-6:
        raise InfeasibleError(f"no convergence after {sweep} sweeps (KKT residual {kkt:.2e})")
    return MarginSolution(w, a, sweep, kkt)


def max_margin(data: Dataset, **kw) -> np.ndarray:
    """Unit direction of the hard-margin solution."""
    return max_margin_solution(data, **kw).direction


def logistic_linear_solution(data: Dataset, tol: float = 1e-12, max_iter: int = 100) -> np.ndarray:
    """Minimiser of ``<ln(1 + exp(-y w^T x))>`` over linear maps, by Newton steps.

    Only defined when the data are not linearly separable; separable data make
    the iterates grow without bound and raise ``InfeasibleError``.
    """
    x, y = data.inputs, data.targets
    w = np.zeros(x.shape[1])
    for _ in range(max_iter):
        m = y * (x @ w)
        p = 0.5 * (1.0 - np.tanh(0.5 * m))          # sigmoid(-m), overflow free
        grad = -(x.T @ (y * p)) / len(y)
        hess = (x.T * (p * (1.0 - p))) @ x / len(y)
        step = np.linalg.solve(hess + 1e-300 * np.eye(len(w)), grad)
        w = w - step
        if np.linalg.norm(w) > 1e8 or np.all(y * (x @ w) > 0):
            raise InfeasibleError("data are linearly separable; no finite minimiser")
        if np.linalg.norm(step) <= tol * max(1.0, np.linalg.norm(w)):
            return w
    raise InfeasibleError("Newton iteration did not converge")


# ---------------------------------------------------------------------------
# odd/even structure


def decompose_two_layer(net: NetworkParams):
    """``(w_eff, even_part)`` with ``f(x) = w_eff^T x + even_part(x)``.

    Uses ``sigma(z) = (1+alpha)/2 z + (1-alpha)/2 |z|``.
    """
    if net.depth != 2:
        raise ShapeError("decomposition is defined for two-layer networks")
    w1, w2 = net.layers
    a = net.alpha
    w_eff = (1.0 + a) / 2.0 * (w2 @ w1)[0]

    def even_part(x):
        x = np.asarray(x, dtype=np.float64)
        h = np.abs(x @ w1.T)
        return (1.0 - a) / 2.0 * (h @ w2[0])

    return w_eff, even_part


def _relu(z):
    return np.maximum(z, 0.0)


def depth_sep_g(x) -> float:
    """``relu(relu(x1) - relu(x2)) - relu(relu(-x1) - relu(-x2))``: odd and
    positively homogeneous, yet not linear."""
    x1, x2 = np.asarray(x, dtype=np.float64).reshape(2)
    return float(_relu(_relu(x1) - _relu(x2)) - _relu(_relu(-x1) - _relu(-x2)))


def depth_sep_network() -> NetworkParams:
    """Three-layer bias-free ReLU network computing ``depth_sep_g`` exactly."""
    w1 = np.array([[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0], [0.0, -1.0]])
    w2 = np.array([[1.0, -1.0, 0.0, 0.0], [0.0, 0.0, 1.0, -1.0]])
    w3 = np.array([[1.0, -1.0]])
    return NetworkParams([w1, w2, w3], 0.0)


def symmetric_loss_split(net: NetworkParams, data: Dataset):
    """``(1/2 <(y - w_eff^T x)^2>, 1/2 <f_e(x)^2>)`` on a symmetric dataset.

    The cross term vanishes because ``y - w_eff^T x`` is odd and ``f_e`` even,
    so the two parts add up to the square loss (mean reduction).
    """
    bad = check_symmetry(data)
    if bad is not None:
        raise PreconditionError(f"dataset is not symmetric (index {bad})")
    w_eff, even = decompose_two_layer(net)
    r = data.targets - data.inputs @ w_eff
    fe = even(data.inputs)
    return 0.5 * float(np.mean(r * r)), 0.5 * float(np.mean(fe * fe))


def odd_part(net: NetworkParams) -> Callable:
    def f(x):
        x = np.atleast_2d(x)
        return 0.5 * (predict(net, x) - predict(net, -x))
    return f
