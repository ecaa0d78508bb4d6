"""Dense numerics: fixed-step RK4, the Lyapunov matrix equation, symmetric eigenvalue extremes."""

from __future__ import annotations

import math
from typing import Callable, Sequence, Tuple

import numpy as np

from .errors import DefinitionError, NumericalError

Field = Callable[[float, np.ndarray], np.ndarray]


def _checked(f: Field, t: float, x: np.ndarray) -> np.ndarray:
    d = f(t, x)
    if not np.all(np.isfinite(d)):
        raise NumericalError(f"non-finite derivative at t={t!r}", t)
    return d


def rk4_step(f: Field, t: float, x: np.ndarray, h: float,
             f_end: Field | None = None) -> np.ndarray:
    """One classical RK4 step.

    ``f_end`` (defaults to ``f``) evaluates the last stage at ``t + h``; the
    flow engine passes a left-limit variant so a step never reads an input
    value that only starts at the right end of the step.
    """
    k1 = _checked(f, t, x)
    k2 = _checked(f, t + 0.5 * h, x + (0.5 * h) * k1)
    k3 = _checked(f, t + 0.5 * h, x + (0.5 * h) * k2)
    k4 = _checked(f_end or f, t + h, x + h * k3)
    return x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def snapped_grid(a: float, b: float, step: float) -> np.ndarray:
    """Uniform grid on ``[a, b]`` with spacing at most ``step``; both ends exact."""
    if not b > a:
        raise ValueError("grid needs a < b")
    n = max(1, math.ceil((b - a) / step - 1e-9))
    grid = a + (b - a) * (np.arange(n + 1) / n)
    grid[-1] = b
    return grid


def rk4_integrate(f: Field, x0, t0: float, t1: float, grid: Sequence[float] | None = None,
                  step: float = 1e-3, f_end: Field | None = None) -> Tuple[np.ndarray, np.ndarray]:
    """Integrate ``x' = f(t, x)`` on ``[t0, t1]`` with classical RK4.

    Parameters
    ----------
    f : callable
        ``f(t, x) -> dx/dt``.
    x0 : array_like
        Initial state at ``t0``.
    t0, t1 : float
        Interval ends, ``t0 < t1``.
    grid : sequence of float, optional
        Step nodes. Must start at ``t0`` and end at ``t1``. When omitted,
        :func:`snapped_grid` with ``step`` is used.
    f_end : callable, optional
        Last-stage field, see :func:`rk4_step`.

    Returns
    -------
    times, states : ndarray
        ``states[i]`` approximates ``x(times[i])``.

    Raises
    ------
    NumericalError
        If any stage evaluates a non-finite derivative.
    """
    if not t1 > t0:
        raise ValueError("rk4_integrate needs t0 < t1")
    times = snapped_grid(t0, t1, step) if grid is None else np.asarray(grid, dtype=float)
    if times[0] != t0 or times[-1] != t1 or np.any(np.diff(times) <= 0):
        raise ValueError("grid must be increasing from t0 to t1")
    x = np.array(x0, dtype=float).reshape(-1)
    out = np.empty((times.shape[0], x.shape[0]))
    out[0] = x
    for i in range(times.shape[0] - 1):
        x = rk4_step(f, times[i], x, times[i + 1] - times[i], f_end)
        out[i + 1] = x
    return times, out


def _as_square(A) -> np.ndarray:
    M = np.atleast_2d(np.asarray(A, dtype=float))
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError("expected a square matrix")
    if not np.all(np.isfinite(M)):
        raise ValueError("matrix has non-finite entries")
    return M


def sym_eig_extremes(P, off_tol: float = 1e-12, max_sweeps: int = 100) -> Tuple[float, float]:
    """Smallest and largest eigenvalue of a symmetric matrix via cyclic Jacobi rotations.

    Rotations stop once the Frobenius norm of the off-diagonal part is at
    most ``off_tol`` times the matrix's Frobenius norm (absolute for the zero
    matrix).
    """
    S = _as_square(P)
    if np.max(np.abs(S - S.T), initial=0.0) > 1e-10:
        raise ValueError("sym_eig_extremes needs a symmetric matrix")
    S = 0.5 * (S + S.T)
    n = S.shape[0]
    scale = max(np.linalg.norm(S), 1.0)
    for _ in range(max_sweeps):
        off = float(np.linalg.norm(S - np.diag(np.diag(S))))
        if off <= off_tol * scale:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = S[p, q]
                if apq == 0.0:
                    continue
                theta = (S[q, q] - S[p, p]) / (2.0 * apq)
                if abs(theta) > 1e150:
                    # theta^2 would overflow; tan of the rotation angle is ~1/(2 theta)
                    t = 0.5 / theta
                else:
                    t = math.copysign(1.0, theta) / (abs(theta) + math.sqrt(theta * theta + 1.0))
                c = 1.0 / math.sqrt(t * t + 1.0)
                s = t * c
                rp, rq = S[p, :].copy(), S[q, :].copy()
                S[p, :] = c * rp - s * rq
                S[q, :] = s * rp + c * rq
                cp, cq = S[:, p].copy(), S[:, q].copy()
                S[:, p] = c * cp - s * cq
                S[:, q] = s * cp + c * cq
    else:
        raise NumericalError("Jacobi iteration did not converge")
    d = np.diag(S)
    return float(d.min()), float(d.max())


def solve_lyapunov(A) -> np.ndarray:
    """Solve ``P A + A^T P = -I`` for a Hurwitz ``A``.

    The equation is vectorized as ``(I kron A^T + A^T kron I) vec(P) = -vec(I)``
    and solved densely; the result is symmetrized and checked for positive
    definiteness, which is how a non-Hurwitz ``A`` is detected.

    Raises
    ------
    DefinitionError
        When the linear system is singular or the solution is not positive definite.
    """
    M = _as_square(A)
    s = M.shape[0]
    eye = np.eye(s)
    K = np.kron(eye, M.T) + np.kron(M.T, eye)
    try:
        vecP = np.linalg.solve(K, -eye.reshape(-1))
    except np.linalg.LinAlgError:
        raise DefinitionError("Lyapunov equation is singular; A is not Hurwitz") from None
    P = vecP.reshape(s, s)
    P = 0.5 * (P + P.T)
    lo, _ = sym_eig_extremes(P)
    if not lo > 0.0:
        raise DefinitionError(f"Lyapunov solution is not positive definite (min eig {lo:.3e}); "
                              "A is not Hurwitz")
    return P


def lyapunov_residual(P, A) -> float:
    """Max-entry residual of ``P A + A^T P + I``."""
    P, A = _as_square(P), _as_square(A)
    return float(np.max(np.abs(P @ A + A.T @ P + np.eye(A.shape[0]))))
