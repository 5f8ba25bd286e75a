"""Dense linear algebra, splittable random streams, and gradient checking.

Matrices throughout the package are dense row-major float64 ``np.ndarray``
values; nothing here wraps them in a custom type.  The eigensolver is a
cyclic Jacobi iteration, which is simple and robust at the small sizes used
here (feature covariances up to 64x64, property tests up to 16x16).
"""

from __future__ import annotations

import hashlib
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import (
    InsufficientDataError,
    NotPSDError,
    NumericError,
    PreconditionError,
)

SYMMETRY_TOL = 1e-10
PSD_CLAMP_TOL = 1e-10
JACOBI_OFFDIAG_TOL = 1e-12
MAX_JACOBI_SWEEPS = 60
GRAD_CHECK_STEP = 1e-5


class Rng:
    """Deterministic random stream with named, independent sub-streams.

    Each stream is a counter-based Philox generator keyed by a SHA-256 hash
    of the root seed and the stream's path of names, so any consumer can
    derive its own stream from the root seed without coordinating draw
    order with anyone else.  Equal seeds and paths give bit-identical
    sequences.

    Sampling methods (``normal``, ``random``, ``integers``, ``permutation``,
    ...) are delegated to the underlying ``numpy.random.Generator``.
    """

    def __init__(self, seed: int, _path: tuple[str, ...] = ()):
        self.seed = int(seed)
        self.path = _path
        self._gen = np.random.Generator(np.random.Philox(key=_philox_key(self.seed, _path)))

    def stream(self, name: str) -> "Rng":
        """Return an independent child stream identified by ``name``."""
        return Rng(self.seed, self.path + (str(name),))

    def __getattr__(self, attr: str):
        return getattr(self._gen, attr)

    def __repr__(self) -> str:
        return f"Rng(seed={self.seed}, path={'/'.join(self.path) or '<root>'})"


def _philox_key(seed: int, path: tuple[str, ...]) -> np.ndarray:
    h = hashlib.sha256()
    h.update(str(seed).encode())
    for name in path:
        h.update(b"/")
        h.update(name.encode())
    return np.frombuffer(h.digest()[:16], dtype=np.uint64).copy()


def _check_square_symmetric(m: np.ndarray, tol: float) -> np.ndarray:
    a = np.asarray(m, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise PreconditionError(f"expected a square matrix, got shape {a.shape}")
    if not np.isfinite(a).all():
        raise PreconditionError("matrix has non-finite entries")
    asym = np.abs(a - a.T).max() if a.size else 0.0
    scale = max(1.0, np.abs(a).max()) if a.size else 1.0
    if asym > tol * scale:
        raise PreconditionError(f"matrix is not symmetric: max asymmetry {asym:.3e}")
    return (a + a.T) / 2.0


def eig_sym(m: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.

    Returns ``(eigenvalues, eigenvectors)`` with eigenvalues sorted in
    descending order and eigenvectors as orthonormal columns in matching
    order, so ``V @ diag(w) @ V.T`` reconstructs the input.

    Raises ``PreconditionError`` for non-symmetric input and
    ``NumericError`` if the off-diagonal norm has not fallen below the
    convergence threshold after ``MAX_JACOBI_SWEEPS`` sweeps.
    """
    a = _check_square_symmetric(m, SYMMETRY_TOL)
    n = a.shape[0]
    v = np.eye(n)
    if n <= 1:
        return np.diag(a).copy(), v
    scale = max(1.0, np.linalg.norm(a))

    def offdiag_norm() -> float:
        # summed from the off-diagonal entries themselves; the algebraic
        # shortcut |A|_F^2 - |diag|^2 cancels catastrophically near
        # convergence and floors at sqrt(eps)*|A|
        off = a - np.diag(np.diag(a))
        return float(np.sqrt(np.sum(off * off)))

    sweeps = 0
    while offdiag_norm() > JACOBI_OFFDIAG_TOL * scale:
        if sweeps >= MAX_JACOBI_SWEEPS:
            raise NumericError(
                f"Jacobi eigensolver did not converge in {sweeps} sweeps "
                f"(off-diagonal norm {offdiag_norm():.3e})"
            )
        sweeps += 1
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if abs(apq) <= 1e-300:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                if abs(theta) > 1e150:
                    t = 1.0 / (2.0 * theta)
                else:
                    t = np.sign(theta) / (abs(theta) + np.hypot(theta, 1.0))
                    if t == 0.0:
                        t = 1.0
                c = 1.0 / np.hypot(t, 1.0)
                s = t * c
                colp = a[:, p].copy()
                colq = a[:, q].copy()
                a[:, p] = c * colp - s * colq
                a[:, q] = s * colp + c * colq
                rowp = a[p, :].copy()
                rowq = a[q, :].copy()
                a[p, :] = c * rowp - s * rowq
                a[q, :] = s * rowp + c * rowq
                colp = v[:, p].copy()
                colq = v[:, q].copy()
                v[:, p] = c * colp - s * colq
                v[:, q] = s * colp + c * colq
    w = np.diag(a).copy()
    order = np.argsort(w)[::-1]
    return w[order], v[:, order]


def sqrtm_psd(m: np.ndarray) -> np.ndarray:
    """Symmetric square root of a positive semi-definite matrix.

    Eigenvalues in ``[-PSD_CLAMP_TOL, 0)`` are treated as rounding noise and
    clamped to zero; anything more negative raises ``NotPSDError``.
    """
    w, v = eig_sym(m)
    scale = max(1.0, abs(w[0])) if w.size else 1.0
    if w.size and w[-1] < -PSD_CLAMP_TOL * scale:
        raise NotPSDError(f"matrix is not PSD: smallest eigenvalue {w[-1]:.3e}")
    w = np.clip(w, 0.0, None)
    root = (v * np.sqrt(w)) @ v.T
    return (root + root.T) / 2.0


def gaussian_stats(features: Iterable[Sequence[float]] | np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Sample mean and unbiased covariance of a set of feature vectors.

    Needs at least two vectors; the covariance uses the n-1 normalization
    and is symmetrized against rounding.
    """
    x = np.asarray(list(features) if not isinstance(features, np.ndarray) else features, dtype=np.float64)
    if x.ndim != 2:
        raise PreconditionError(f"expected a 2-d array of feature vectors, got ndim {x.ndim}")
    n = x.shape[0]
    if n < 2:
        raise InsufficientDataError(f"need at least 2 feature vectors, got {n}")
    mu = x.mean(axis=0)
    xc = x - mu
    cov = (xc.T @ xc) / (n - 1)
    return mu, (cov + cov.T) / 2.0


def grad_check(
    f: Callable[[np.ndarray], tuple[float, np.ndarray]],
    params: np.ndarray,
    indices: Sequence[int],
    step: float = GRAD_CHECK_STEP,
) -> float:
    """Compare an analytic gradient against central finite differences.

    ``f`` maps a parameter vector to ``(value, gradient)``.  For each sampled
    index the relative error is
    ``|analytic - numeric| / max(1, |analytic|, |numeric|)``;
    the maximum over the sampled indices is returned.
    """
    p = np.asarray(params, dtype=np.float64)
    value, grad = f(p)
    if not np.isfinite(value) or not np.isfinite(grad).all():
        raise NumericError("function value or gradient is non-finite at the center point")
    worst = 0.0
    for i in indices:
        e = np.zeros_like(p)
        e[i] = step
        up, _ = f(p + e)
        dn, _ = f(p - e)
        if not (np.isfinite(up) and np.isfinite(dn)):
            raise NumericError(f"function value is non-finite at perturbed index {i}")
        numeric = (up - dn) / (2.0 * step)
        analytic = grad[i]
        err = abs(analytic - numeric) / max(1.0, abs(analytic), abs(numeric))
        worst = max(worst, err)
    return worst
