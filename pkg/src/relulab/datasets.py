"""Dataset families and their second-order statistics."""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DegenerateHalfspaceError, NonFiniteError, PreconditionError, ShapeError
from .numkit import GAUSSIAN_METHOD, RNG_NAME, make_rng

NAMED_FAMILIES = ("fan", "circle", "ortho2", "ortho_highD", "xor4", "asym6", "labelflip")


@dataclass(frozen=True)
class Dataset:
    """``inputs`` is P x D (rows are samples); ``targets`` has length P."""

    inputs: np.ndarray
    targets: np.ndarray
    name: str = "dataset"
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        x = np.array(self.inputs, dtype=np.float64)
        y = np.array(self.targets, dtype=np.float64).reshape(-1)
        if x.ndim == 1:
            x = x.reshape(-1, 1)
        if x.ndim != 2 or x.shape[0] < 1 or x.shape[1] < 1:
            raise ShapeError(f"inputs must be P x D with P, D >= 1, got {x.shape}")
        if y.shape[0] != x.shape[0]:
            raise ShapeError(f"{x.shape[0]} inputs but {y.shape[0]} targets")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
            raise NonFiniteError("dataset contains NaN or Inf")
        x.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "inputs", x)
        object.__setattr__(self, "targets", y)
        object.__setattr__(self, "metadata", dict(self.metadata))

    @property
    def P(self) -> int:
        return self.inputs.shape[0]

    @property
    def D(self) -> int:
        return self.inputs.shape[1]

    @property
    def reduction(self) -> str:
        return self.metadata.get("reduction", "mean")

    def subset(self, idx, name: str | None = None) -> "Dataset":
        idx = np.asarray(idx)
        meta = dict(self.metadata, parent=self.name, subset=[int(i) for i in np.atleast_1d(idx)])
        return Dataset(self.inputs[idx], self.targets[idx], name or f"{self.name}[subset]", meta)


@dataclass(frozen=True)
class DataStats:
    sigma: np.ndarray
    beta: np.ndarray
    s: float
    beta_hat: np.ndarray
    trace_sigma: float
    reduction: str = "mean"
    P: int = 0
    y_sq: float = float("nan")

    @classmethod
    def from_moments(cls, sigma, beta, reduction="mean", P=0, y_sq=float("nan")) -> "DataStats":
        sigma = np.asarray(sigma, dtype=np.float64)
        sigma = 0.5 * (sigma + sigma.T)
        beta = np.asarray(beta, dtype=np.float64).reshape(-1)
        s = float(np.linalg.norm(beta))
        beta_hat = beta / s if s > 0 else np.zeros_like(beta)
        return cls(sigma, beta, s, beta_hat, float(np.trace(sigma)), reduction, P, float(y_sq))


def _normaliser(P: int, reduction: str) -> float:
    if reduction == "mean":
        return float(P)
    if reduction == "sum":
        return 1.0
    raise ValueError(f"unknown reduction {reduction!r}")


def compute_stats(data: Dataset, reduction: str | None = None) -> DataStats:
    """Input covariance ``<x x^T>`` and input-output correlation ``<y x>``."""
    reduction = reduction or data.reduction
    x, y = data.inputs, data.targets
    n = _normaliser(data.P, reduction)
    return DataStats.from_moments(x.T @ x / n, x.T @ y / n, reduction, data.P, y @ y / n)


def halfspace_stats(data: Dataset, r, reduction: str = "mean") -> DataStats:
    """Statistics averaged only over samples with ``r^T x > 0``.

    The conditional average divides by the number of samples in the half space
    when ``reduction == 'mean'``. Any sample on the hyperplane is an error.
    """
    r = np.asarray(r, dtype=np.float64).reshape(-1)
    if r.shape[0] != data.D:
        raise ShapeError("normal vector has the wrong dimension")
    proj = data.inputs @ r
    if np.any(proj == 0.0):
        i = int(np.flatnonzero(proj == 0.0)[0])
        raise DegenerateHalfspaceError(f"sample {i} lies on the hyperplane r^T x = 0")
    keep = proj > 0
    if not np.any(keep):
        raise DegenerateHalfspaceError("half space contains no samples")
    x, y = data.inputs[keep], data.targets[keep]
    # mirrored samples of the other half contribute equally, hence the factor 2
    n = x.shape[0] if reduction == "mean" else 0.5
    return DataStats.from_moments(x.T @ x / n, x.T @ y / n, reduction, int(keep.sum()), y @ y / n)


def symmetrize(data: Dataset) -> Dataset:
    x = np.vstack([data.inputs, -data.inputs])
    y = np.concatenate([data.targets, -data.targets])
    return Dataset(x, y, f"{data.name}+mirror", dict(data.metadata, symmetrized=True))


def check_symmetry(data: Dataset, tol: float = 1e-12) -> int | None:
    """Return ``None`` if every sample has a mirrored partner with negated
    target, else the index of the first sample without one."""
    x, y = data.inputs, data.targets
    used = np.zeros(data.P, dtype=bool)
    for i in range(data.P):
        if used[i]:
            continue
        used[i] = True
        mirror = (np.max(np.abs(x + x[i]), axis=1) <= tol) & (np.abs(y + y[i]) <= tol) & ~used
        match = np.flatnonzero(mirror)
        if match.size:
            used[match[0]] = True
        elif not (np.all(np.abs(x[i]) <= tol) and abs(y[i]) <= tol):
            return i
    return None


def make_symmetric_gaussian(rng, n_pairs: int, D: int, teacher: str = "sin", w=None) -> Dataset:
    """``n_pairs`` Gaussian inputs and their negatives with an odd teacher.

    teacher ``"sin"``: y = w^T x + sin(4 w^T x); ``"linear"``: y = w^T x.
    ``w`` defaults to a draw from U[-0.5, 0.5]^D.
    """
    if n_pairs < 1:
        raise ValueError("n_pairs must be >= 1")
    if w is None:
        w = rng.uniform(-0.5, 0.5, size=D)
    w = np.asarray(w, dtype=np.float64).reshape(-1)
    half = rng.standard_normal((n_pairs, D))
    x = np.vstack([half, -half])
    z = x @ w
    if teacher == "sin":
        y = z + np.sin(4.0 * z)
    elif teacher == "linear":
        y = z
    else:
        raise ValueError(f"unknown teacher {teacher!r}")
    meta = {
        "generator": "symmetric_gaussian",
        "n_pairs": n_pairs,
        "D": D,
        "teacher": teacher,
        "teacher_w": w.tolist(),
        "rng": RNG_NAME,
        "gaussian": GAUSSIAN_METHOD,
        "reduction": "mean",
    }
    return Dataset(x, y, f"symmetric_gaussian_{teacher}", meta)


def whiten(data: Dataset) -> Dataset:
    """Linearly transform inputs so that the (mean) covariance is exactly I."""
    st = compute_stats(data, "mean")
    evals, evecs = np.linalg.eigh(st.sigma)
    if evals[0] <= 0:
        raise PreconditionError("covariance is singular, cannot whiten")
    transform = evecs @ np.diag(evals ** -0.5) @ evecs.T
    return Dataset(data.inputs @ transform, data.targets, f"{data.name}+white",
                   dict(data.metadata, whitened=True))


# ---------------------------------------------------------------------------
# named families

def _fan(params, rng):
    sectors = int(params.get("sectors", 6))
    if sectors % 2 or (sectors // 2) % 2 == 0:
        raise ValueError("fan needs 2k sectors with k odd so labels are odd")
    radii = params.get("radii", [1.0, 2.0])
    per = int(params.get("per_sector", 10))
    width = 2 * np.pi / sectors
    # angles strictly inside each sector
    frac = (np.arange(per) + 0.5) / per
    xs, ys = [], []
    for k in range(sectors // 2):
        label = 1.0 if k % 2 == 0 else -1.0
        for rad in radii:
            ang = (k + 0.1 + 0.8 * frac) * width
            pts = rad * np.column_stack([np.cos(ang), np.sin(ang)])
            xs.append(pts)
            ys.append(np.full(per, label))
    x = np.vstack(xs)
    y = np.concatenate(ys)
    x, y = np.vstack([x, -x]), np.concatenate([y, -y])
    return x, y, {"sectors": sectors, "radii": list(radii), "per_sector": per}


def _circle(params, rng):
    n = int(params.get("n", 120))
    r0 = float(params.get("r_inner", 1.0))
    r1, r2 = params.get("annulus", [1.5, 2.0])
    n_in = n // 2
    ang = rng.uniform(0, 2 * np.pi, n)
    rad = np.concatenate([r0 * np.sqrt(rng.uniform(0.05, 1.0, n_in)),
                          rng.uniform(r1, r2, n - n_in)])
    x = rad[:, None] * np.column_stack([np.cos(ang), np.sin(ang)])
    y = np.concatenate([np.ones(n_in), -np.ones(n - n_in)])
    return x, y, {"n": n, "r_inner": r0, "annulus": [r1, r2]}


def _ortho_highD(params, rng):
    n = int(params.get("n", 20))
    big, small = float(params.get("norm_pos", 2.0)), float(params.get("norm_neg", 1.0))
    x = np.eye(n)
    y = np.array([1.0 if i % 2 == 0 else -1.0 for i in range(n)])
    x[y > 0] *= big
    x[y < 0] *= small
    return x, y, {"n": n, "norm_pos": big, "norm_neg": small}


def _labelflip(params, rng):
    n_half = int(params.get("n_half", 20))
    w = np.asarray(params.get("w", [1.0, 0.5]), dtype=np.float64)
    w = w / np.linalg.norm(w)
    flips = int(params.get("flips", 2))
    pts = []
    while len(pts) < n_half:
        p = rng.uniform(-2, 2, 2)
        if abs(p @ w) > 0.3:
            pts.append(p)
    x = np.array(pts)
    y = np.sign(x @ w)
    flip_idx = np.argsort(np.abs(x @ w))[::-1][:flips]
    y[flip_idx] *= -1
    x, y = np.vstack([x, -x]), np.concatenate([y, -y])
    return x, y, {"n_half": n_half, "w": w.tolist(), "flips": flips,
                  "flipped_indices": [int(i) for i in flip_idx]}


def make_named(name: str, params: dict | None = None, seed: int = 0) -> Dataset:
    params = dict(params or {})
    rng = make_rng(seed)
    reduction = "mean"
    if name == "fan":
        x, y, meta = _fan(params, rng)
    elif name == "circle":
        x, y, meta = _circle(params, rng)
    elif name == "ortho2":
        x = np.array([[-0.5, 1.0], [2.0, 1.0]])
        y = np.array([1.0, -1.0])
        meta, reduction = {}, "sum"
    elif name == "ortho_highD":
        x, y, meta = _ortho_highD(params, rng)
        reduction = "sum"
    elif name == "xor4":
        x = np.array([[0.0, 1.0], [2.0, 0.0], [0.0, -3.0], [-4.0, 0.0]])
        y = np.array([1.0, -1.0, 1.0, -1.0])
        meta = {"labels": "+1 on vertical axis, -1 on horizontal axis"}
        reduction = "sum"
    elif name == "asym6":
        delta = float(params.get("delta", 0.1))
        if delta < 0:
            raise ValueError("asym6 needs delta >= 0")
        x = np.array([[1, 1], [-1, -1], [1, -1], [-1, 1], [1, delta], [-1, 0]], dtype=np.float64)
        y = np.array([1.0, -1.0, 1.0, -1.0, -1.0, 1.0])
        meta = {"delta": delta,
                "labels": "+1 at (1,1),(1,-1),(-1,0); -1 at their mirrors / (1,delta)"}
    elif name == "labelflip":
        x, y, meta = _labelflip(params, rng)
    else:
        raise ValueError(f"unknown dataset family {name!r}; choose from {NAMED_FAMILIES}")
    meta = dict(meta, generator=name, seed=seed, rng=RNG_NAME,
                reduction=params.get("reduction", reduction))
    return Dataset(x, y, name, meta)


# ---------------------------------------------------------------------------
# persistence

def save_dataset(data: Dataset, path, manifest_hash: str = "") -> Path:
    """Write ``path`` (CSV, header x0..x{D-1},y) and a sibling ``.json`` with metadata.

    A non-empty ``manifest_hash`` is written as a leading ``# manifest`` line
    and as a ``manifest`` metadata key.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        if manifest_hash:
            fh.write(f"# manifest {manifest_hash}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"x{i}" for i in range(data.D)] + ["y"])
        for xi, yi in zip(data.inputs, data.targets):
            w.writerow([repr(float(v)) for v in xi] + [repr(float(yi))])
    meta = dict(data.metadata, name=data.name, P=data.P, D=data.D)
    if manifest_hash:
        meta["manifest"] = manifest_hash
    path.with_suffix(".json").write_text(json.dumps(meta, indent=2, sort_keys=True))
    return path


def load_dataset(path) -> Dataset:
    path = Path(path)
    with path.open(newline="") as fh:
        rows = list(csv.reader(line for line in fh if not line.startswith("#")))
    if not rows:
        raise ShapeError(f"{path} has no header")
    header, body = rows[0], rows[1:]
    if header[-1] != "y" or any(h != f"x{i}" for i, h in enumerate(header[:-1])):
        raise ShapeError(f"unexpected CSV header {header}")
    arr = np.array(body, dtype=np.float64).reshape(len(body), len(header))
    meta_path = path.with_suffix(".json")
    meta = json.loads(meta_path.read_text()) if meta_path.exists() else {}
    name = meta.pop("name", path.stem)
    meta.pop("P", None)
    meta.pop("D", None)
    meta.pop("manifest", None)
    return Dataset(arr[:, :-1], arr[:, -1], name, meta)
