"""Bias-free (leaky) ReLU networks: forward pass, backprop and initialisation."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .datasets import Dataset
from .errors import ShapeError
from .numkit import as_matrix, gaussian_matrix

LOSSES = ("square", "logistic")


@dataclass(frozen=True)
class NetworkParams:
    """Weights ``W_1 (H_1 x D), ..., W_L (1 x H_{L-1})`` and leaky slope ``alpha``.

    ``alpha = 0`` is ReLU, ``alpha = 1`` a linear network.
    """

    layers: tuple
    alpha: float = 0.0

    def __post_init__(self):
        layers = tuple(as_matrix(w) for w in self.layers)
        if not layers:
            raise ShapeError("a network needs at least one layer")
        for lo, hi in zip(layers[:-1], layers[1:]):
            if hi.shape[1] != lo.shape[0]:
                raise ShapeError(f"layer shapes do not chain: {lo.shape} -> {hi.shape}")
        if layers[-1].shape[0] != 1:
            raise ShapeError("final layer must have a single output row")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")
        for w in layers:
            w.setflags(write=False)
        object.__setattr__(self, "layers", layers)
        object.__setattr__(self, "alpha", float(self.alpha))

    @property
    def depth(self) -> int:
        return len(self.layers)

    @property
    def input_dim(self) -> int:
        return self.layers[0].shape[1]

    @property
    def widths(self) -> list[int]:
        return [w.shape[0] for w in self.layers[:-1]]

    def replace(self, layers=None, alpha=None) -> "NetworkParams":
        return NetworkParams(self.layers if layers is None else layers,
                             self.alpha if alpha is None else alpha)

    def scaled(self, factor: float) -> "NetworkParams":
        return self.replace([factor * w for w in self.layers])

    def product(self) -> np.ndarray:
        """Ordered product ``W_L ... W_1`` as a 1 x D matrix."""
        out = self.layers[0]
        for w in self.layers[1:]:
            out = w @ out
        return out

    def flat(self) -> np.ndarray:
        return np.concatenate([w.ravel() for w in self.layers])

    def norm(self) -> float:
        return float(np.sqrt(sum(np.sum(w * w) for w in self.layers)))

    def to_json(self) -> dict:
        return {
            "alpha": self.alpha,
            "shapes": [list(w.shape) for w in self.layers],
            "weights": [w.ravel().tolist() for w in self.layers],
        }

    @classmethod
    def from_json(cls, doc: dict) -> "NetworkParams":
        layers = [np.array(v, dtype=np.float64).reshape(shape)
                  for shape, v in zip(doc["shapes"], doc["weights"])]
        return cls(layers, doc["alpha"])


@dataclass(frozen=True)
class ForwardTrace:
    preactivations: list = field(default_factory=list)
    output: float = 0.0


def activation(z, alpha: float):
    # max(z, alpha z) equals the leaky ReLU for alpha in [0, 1]
    z = np.asarray(z, dtype=np.float64)
    out = z * alpha
    np.maximum(out, z, out=out)
    return out


def activation_grad(z, alpha: float):
    # sigma'(0) := alpha, i.e. 0 for ReLU
    on = np.asarray(z) > 0
    out = on.astype(np.float64)
    if alpha:
        np.copyto(out, alpha, where=~on)
    return out


def forward(net: NetworkParams, x) -> ForwardTrace:
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    if x.shape[0] != net.input_dim:
        raise ShapeError(f"input has dimension {x.shape[0]}, network expects {net.input_dim}")
    hs = [net.layers[0] @ x]
    for w in net.layers[1:]:
        hs.append(w @ activation(hs[-1], net.alpha))
    return ForwardTrace(hs, float(hs[-1][0]))


def _forward_batch(net: NetworkParams, x: np.ndarray):
    hs = [x @ net.layers[0].T]
    acts = [x]
    for w in net.layers[1:]:
        a = activation(hs[-1], net.alpha)
        acts.append(a)
        hs.append(a @ w.T)
    return hs, acts


def predict(net: NetworkParams, x) -> np.ndarray:
    """Network outputs for a P x D batch."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if x.shape[1] != net.input_dim:
        raise ShapeError(f"inputs have dimension {x.shape[1]}, network expects {net.input_dim}")
    return _forward_batch(net, x)[0][-1][:, 0]


def _loss_and_dloss(f, y, loss: str, n: float):
    if loss == "square":
        r = y - f
        return 0.5 * float(r @ r) / n, -r / n
    if loss == "logistic":
        m = y * f
        value = float(np.sum(np.logaddexp(0.0, -m))) / n
        # d/df ln(1 + e^{-y f}) = -y / (1 + e^{y f})
        return value, -y * np.exp(-np.logaddexp(0.0, m)) / n
    raise ValueError(f"unknown loss {loss!r}")


def _normaliser(P: int, reduction: str) -> float:
    if reduction == "mean":
        return float(P)
    if reduction == "sum":
        return 1.0
    raise ValueError(f"unknown reduction {reduction!r}")


def l2_coefficient(l2: float, alpha: float) -> float:
    """Regulariser weight actually applied: ``l2 * (alpha + 1) / 2``."""
    return float(l2) * (alpha + 1.0) / 2.0


def loss_value(net: NetworkParams, data: Dataset, loss: str = "square",
               reduction: str | None = None, l2: float = 0.0) -> float:
    f = predict(net, data.inputs)
    n = _normaliser(data.P, reduction or data.reduction)
    value, _ = _loss_and_dloss(f, data.targets, loss, n)
    if l2:
        value += l2_coefficient(l2, net.alpha) * net.norm() ** 2
    return value


def loss_and_gradients(net: NetworkParams, data: Dataset, loss: str = "square",
                       reduction: str | None = None, l2: float = 0.0):
    """Loss and its exact gradient with respect to every layer."""
    if data.D != net.input_dim:
        raise ShapeError(f"data has D={data.D}, network expects {net.input_dim}")
    n = _normaliser(data.P, reduction or data.reduction)
    hs, acts = _forward_batch(net, data.inputs)
    value, g = _loss_and_dloss(hs[-1][:, 0], data.targets, loss, n)
    delta = g[:, None]
    grads = [None] * net.depth
    for l in range(net.depth - 1, -1, -1):
        grads[l] = delta.T @ acts[l]
        if l > 0:
            w = net.layers[l]
            # an inner dimension of 1 is an outer product; broadcasting is much faster
            back = delta * w if w.shape[0] == 1 else delta @ w
            back *= activation_grad(hs[l - 1], net.alpha)
            delta = back
    if l2:
        lam = l2_coefficient(l2, net.alpha)
        value += lam * net.norm() ** 2
        grads = [gw + 2.0 * lam * w for gw, w in zip(grads, net.layers)]
    return value, grads


def gradients(net: NetworkParams, data: Dataset, loss: str = "square",
              reduction: str | None = None, l2: float = 0.0) -> list[np.ndarray]:
    return loss_and_gradients(net, data, loss, reduction, l2)[1]


# ---------------------------------------------------------------------------
# initialisation

def init_gaussian(rng, shape, w_init: float, alpha: float = 0.0) -> NetworkParams:
    """Layer sizes ``shape = [D, H_1, ..., H_{L-1}, 1]``; entries N(0, w_init^2 / N_l)
    where ``N_l`` is the number of weights in layer ``l``."""
    if w_init < 0:
        raise ValueError("w_init must be non-negative")
    shape = [int(s) for s in shape]
    layers = []
    for fan_in, fan_out in zip(shape[:-1], shape[1:]):
        n = fan_in * fan_out
        layers.append(gaussian_matrix(rng, fan_out, fan_in, w_init / np.sqrt(n)))
    return NetworkParams(layers, alpha)


def _balanced_signed(rng, n: int) -> np.ndarray:
    """Unit vector of ``n`` (even) entries in +a_i, -a_i pairs."""
    if n % 2:
        raise ValueError("need an even number of units for sign balance")
    a = np.abs(rng.standard_normal(n // 2)) + 1e-3
    v = np.empty(n)
    v[0::2], v[1::2] = a, -a
    return v / np.linalg.norm(v)


def init_rank1_balanced(rng, H: int, D: int, r, scale: float, alpha: float = 0.0) -> NetworkParams:
    """Two-layer weights ``W_1 = v r^T``, ``W_2 = v^T`` with ``||v^+|| = ||v^-||``
    and ``||W_1|| = scale``."""
    if H % 2:
        raise ValueError("H must be even")
    r = np.asarray(r, dtype=np.float64).reshape(-1)
    if r.shape[0] != D or not np.isclose(np.linalg.norm(r), 1.0, atol=1e-12):
        raise ValueError("r must be a unit vector of length D")
    v = scale * _balanced_signed(rng, H)
    return NetworkParams([np.outer(v, r), v[None, :]], alpha)


def init_conjecture_form(rng, widths, D: int, r, u: float) -> NetworkParams:
    """Deep ReLU weights in the block rank-one / rank-two form.

    ``widths = [H_1, ..., H_{L-1}]`` (each even). Hidden layer ``l`` has unit
    vector ``r_l`` whose first half is positive and second half negative with
    ``||r_l^+|| = ||r_l^-||``; ``W_1 = u r_1 r^T``, intermediate layers are
    ``u sqrt2 blockdiag(r_l^+ r_{l-1}^+T, r_l^- r_{l-1}^-T)`` and ``W_L = u r_{L-1}^T``.
    """
    r = np.asarray(r, dtype=np.float64).reshape(-1)
    if r.shape[0] != D:
        raise ShapeError("r must have length D")
    r = r / np.linalg.norm(r)
    vecs = []
    for h in widths:
        if h % 2:
            raise ValueError("hidden widths must be even")
        a = np.abs(rng.standard_normal(h // 2)) + 0.1
        b = np.abs(rng.standard_normal(h // 2)) + 0.1
        v = np.concatenate([a / np.linalg.norm(a), -b / np.linalg.norm(b)]) / np.sqrt(2.0)
        vecs.append(v)
    layers = [u * np.outer(vecs[0], r)]
    for prev, cur in zip(vecs[:-1], vecs[1:]):
        hp, hc = prev.size // 2, cur.size // 2
        w = np.zeros((cur.size, prev.size))
        w[:hc, :hp] = np.outer(cur[:hc], prev[:hp])
        w[hc:, hp:] = np.outer(cur[hc:], prev[hp:])
        layers.append(u * np.sqrt(2.0) * w)
    layers.append(u * vecs[-1][None, :])
    return NetworkParams(layers, 0.0)


def save_network(net: NetworkParams, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(net.to_json()))
    return path


def load_network(path) -> NetworkParams:
    return NetworkParams.from_json(json.loads(Path(path).read_text()))


def init_mirrored_gaussian(rng, D: int, H: int, w_init: float, alpha: float = 0.0) -> NetworkParams:
    """Two-layer Gaussian start whose hidden units come in sign-flipped pairs
    ``(w_1h, w_2h)`` and ``(-w_1h, -w_2h)``.

    Entries have the same marginal law as ``init_gaussian``; the pairing makes
    the positive and negative halves of the growing mode equal in norm.
    """
    if H % 2:
        raise ValueError("H must be even")
    half = init_gaussian(rng, [D, H // 2, 1], w_init, alpha)
    w1, w2 = half.layers
    scale = np.sqrt(H // 2) / np.sqrt(H)
    return NetworkParams([scale * np.vstack([w1, -w1]), scale * np.hstack([w2, -w2])], alpha)
