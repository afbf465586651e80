"""Dense numeric substrate: validated float64 matrices, seeded sampling and
singular values by one-sided Jacobi rotations.

Matrices are plain ``numpy.ndarray`` objects of dtype float64. ``as_matrix``
is the single entry point that enforces shape and finiteness.
"""
from __future__ import annotations

import numpy as np

from .errors import NonFiniteError, ShapeError

RNG_NAME = "numpy.PCG64"
GAUSSIAN_METHOD = "numpy.Generator.standard_normal (ziggurat)"


def as_matrix(a, rows: int | None = None, cols: int | None = None) -> np.ndarray:
    """Return ``a`` as a 2-D float64 array, rejecting NaN/Inf and bad shapes."""
    m = np.array(a, dtype=np.float64)
    if m.ndim == 1:
        m = m.reshape(1, -1)
    if m.ndim != 2:
        raise ShapeError(f"expected a 2-D matrix, got ndim={m.ndim}")
    if rows is not None and m.shape[0] != rows:
        raise ShapeError(f"expected {rows} rows, got {m.shape[0]}")
    if cols is not None and m.shape[1] != cols:
        raise ShapeError(f"expected {cols} cols, got {m.shape[1]}")
    if not np.all(np.isfinite(m)):
        raise NonFiniteError("matrix contains NaN or Inf")
    return m


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError("matmul expects two 2-D matrices")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape} by {b.shape}")
    return a @ b


def make_rng(seed: int) -> np.random.Generator:
    """Seeded generator; identical seeds give identical streams."""
    return np.random.Generator(np.random.PCG64(int(seed)))


def derive_seed(seed: int, *offsets: int) -> int:
    """Deterministic child seed for sweep point ``offsets`` of run ``seed``."""
    ss = np.random.SeedSequence([int(seed), *[int(o) for o in offsets]])
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))


def gaussian_matrix(rng: np.random.Generator, rows: int, cols: int, std: float) -> np.ndarray:
    if std < 0:
        raise ValueError("std must be non-negative")
    z = rng.standard_normal((rows, cols))
    return z * float(std)


def frobenius(a: np.ndarray) -> float:
    return float(np.sqrt(np.sum(np.asarray(a, dtype=np.float64) ** 2)))


def _round_robin(n: int):
    """Yield rounds of disjoint index pairs covering every pair once (circle method)."""
    m = n + (n % 2)
    idx = list(range(m))
    for _ in range(m - 1):
        left = np.array(idx[: m // 2])
        right = np.array(idx[m // 2 :][::-1])
        keep = (left < n) & (right < n)
        p, q = np.minimum(left, right)[keep], np.maximum(left, right)[keep]
        yield p, q
        idx = [idx[0], idx[-1], *idx[1:-1]]


def singular_values(a, tol: float = 1e-15, max_sweeps: int = 60) -> np.ndarray:
    """Singular values of ``a`` in descending order.

    One-sided (Hestenes) Jacobi: columns are orthogonalised pairwise by plane
    rotations until every pair is orthogonal to relative precision ``tol``;
    the column norms are then the singular values. Each round of the
    round-robin schedule rotates disjoint pairs at once.
    """
    m = as_matrix(a)
    if m.size == 0:
        raise ShapeError("singular_values of an empty matrix")
    if m.shape[1] > m.shape[0]:
        m = m.T.copy()
    n = m.shape[1]
    if n == 1:
        return np.array([np.linalg.norm(m[:, 0])])
    scale = np.max(np.abs(m))
    if scale == 0.0:
        return np.zeros(n)
    u = m / scale
    for _ in range(max_sweeps):
        rotated = False
        for p, q in _round_robin(n):
            up, uq = u[:, p], u[:, q]
            alpha = np.sum(up * up, axis=0)
            beta = np.sum(uq * uq, axis=0)
            gamma = np.sum(up * uq, axis=0)
            active = np.abs(gamma) > tol * np.sqrt(alpha * beta)
            if not np.any(active):
                continue
            rotated = True
            p, q = p[active], q[active]
            alpha, beta, gamma = alpha[active], beta[active], gamma[active]
            with np.errstate(over="ignore"):
                # |zeta| = inf gives t = 0, the correct limit
                zeta = (beta - alpha) / (2.0 * gamma)
                t = np.sign(zeta) / (np.abs(zeta) + np.hypot(1.0, zeta))
            t[zeta == 0] = 1.0
            c = 1.0 / np.sqrt(1.0 + t * t)
            s = c * t
            up, uq = u[:, p], u[:, q]
            u[:, p] = c * up - s * uq
            u[:, q] = s * up + c * uq
        if not rotated:
            break
    sv = np.sqrt(np.sum(u * u, axis=0)) * scale
    return np.sort(sv)[::-1]


def numerical_rank(a, rel_tol: float = 1e-2) -> int:
    sv = singular_values(a)
    if sv[0] == 0:
        return 0
    return int(np.sum(sv > rel_tol * sv[0]))


def tune_allocator(threshold: int = 32 << 20) -> bool:
    """Keep freed large blocks in the heap instead of returning them to the OS.

    Training loops allocate and free the same few arrays every step; with
    glibc's default mmap threshold each one costs fresh page faults. Only
    affects glibc; returns False when the call is unavailable.
    """
    import ctypes
    import ctypes.util

    name = ctypes.util.find_library("c")
    if not name:
        return False
    try:
        libc = ctypes.CDLL(name)
        m_trim_threshold, m_top_pad, m_mmap_threshold = -1, -2, -3
        ok = (libc.mallopt(m_mmap_threshold, threshold) and libc.mallopt(m_trim_threshold, 1 << 30)
              and libc.mallopt(m_top_pad, 2 * threshold))
    except (OSError, AttributeError):
        return False
    return bool(ok)
