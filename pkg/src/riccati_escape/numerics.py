"""Small dense-matrix primitives and the Lambert W function.

Everything here accepts stacked inputs (leading batch axes) so the escape-time
and Monte Carlo code can push thousands of small matrices through numpy at
once.
"""

import numpy as np

__all__ = [
    "DimensionError",
    "matrix_exp",
    "lambert_w0",
    "spectral_norm",
    "min_singular_value",
    "is_singular",
    "SINGULAR_RTOL",
]

# U is treated as singular below this fraction of max(1, ||U||).
SINGULAR_RTOL = 1e-9

# Taylor core: after scaling ||X||_1 <= _THETA, degree 14 leaves a remainder
# below 0.5**15 / 15! ~ 2e-17.
_THETA = 0.5
_DEGREE = 14


class DimensionError(ValueError):
    """Raised when matrix shapes are inconsistent with an operation."""


def _as_matrix(M, name="M"):
    M = np.asarray(M, dtype=float)
    if M.ndim < 2:
        raise DimensionError(f"{name} must be at least 2-D, got shape {M.shape}")
    if not np.all(np.isfinite(M)):
        raise ValueError(f"{name} contains non-finite entries")
    return M


def _require_square(M, name="M"):
    if M.shape[-1] != M.shape[-2]:
        raise DimensionError(f"{name} must be square, got shape {M.shape[-2:]}")


def matrix_exp(A, t=1.0):
    """Matrix exponential ``exp(A t)`` by scaling and squaring.

    Parameters
    ----------
    A : array_like, shape (..., d, d)
        Square matrix or stack of square matrices.
    t : float or array_like
        Time factor, broadcast against the batch axes of `A`.

    Returns
    -------
    ndarray, shape broadcast(...) + (d, d)
    """
    A = _as_matrix(A, "A")
    _require_square(A, "A")
    t = np.asarray(t, dtype=float)
    if not np.all(np.isfinite(t)):
        raise ValueError("t must be finite")
    X = A * t[..., None, None]
    d = X.shape[-1]
    eye = np.eye(d)

    norms = np.abs(X).sum(axis=-2).max(axis=-1)
    with np.errstate(divide="ignore"):
        s = np.ceil(np.log2(np.maximum(norms, 1e-300) / _THETA))
    s = np.maximum(s, 0).astype(int)
    X = X / np.ldexp(1.0, s)[..., None, None]

    # Horner form of sum_{j<=_DEGREE} X^j / j!
    E = eye + X / _DEGREE
    for j in range(_DEGREE - 1, 0, -1):
        E = eye + (X @ E) / j

    smax = int(s.max()) if s.size else 0
    for i in range(smax):
        if s.ndim == 0:
            E = E @ E
        else:
            mask = (s > i)[..., None, None]
            E = np.where(mask, E @ E, E)
    return E


def lambert_w0(x, tol=1e-12, maxiter=50):
    """Principal branch of Lambert W on ``[0, inf)``.

    Solves ``w * exp(w) = x`` with Halley's iteration seeded at ``log1p(x)``.
    Works elementwise on arrays; scalars in give a float out.
    """
    xa = np.asarray(x, dtype=float)
    if np.any(np.isnan(xa)):
        raise ValueError("lambert_w0 received NaN")
    if np.any(xa < 0):
        raise ValueError("lambert_w0 is only defined here for x >= 0")
    scalar = xa.ndim == 0
    xa = np.atleast_1d(xa)
    w = np.log1p(xa)
    # large x: log(x) - log(log(x)) is a much better start
    big = xa > 3.0
    if np.any(big):
        lx = np.log(xa[big])
        w[big] = lx - np.log(lx)
    for _ in range(maxiter):
        ew = np.exp(w)
        f = w * ew - xa
        wp1 = w + 1.0
        dw = f / (ew * wp1 - (w + 2.0) * f / (2.0 * wp1))
        w = w - dw
        if np.all(np.abs(dw) <= tol * np.maximum(np.abs(w), 1e-300)):
            break
    w = np.where(xa == 0, 0.0, w)
    return float(w[0]) if scalar else w


def spectral_norm(M):
    """Largest singular value, over the last two axes."""
    M = _as_matrix(M)
    if M.shape[-1] == 0 or M.shape[-2] == 0:
        raise DimensionError("spectral_norm of an empty matrix")
    if M.shape[-1] == 1 or M.shape[-2] == 1:
        out = np.sqrt(np.sum(M * M, axis=(-2, -1)))
    else:
        out = np.linalg.svd(M, compute_uv=False)[..., 0]
    return float(out) if out.ndim == 0 else out


def min_singular_value(M):
    """Smallest singular value of a square matrix (or stack)."""
    M = _as_matrix(M)
    _require_square(M)
    if M.shape[-1] == 1:
        out = np.abs(M[..., 0, 0])
    else:
        out = np.linalg.svd(M, compute_uv=False)[..., -1]
    return float(out) if out.ndim == 0 else out


def is_singular(U, rtol=SINGULAR_RTOL):
    """Scale-aware singularity test used for the chart block ``U``."""
    smin = min_singular_value(U)
    smax = spectral_norm(U)
    return smin < rtol * np.maximum(1.0, smax)
