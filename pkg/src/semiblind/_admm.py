"""ADMM for the elastic-net topology subproblem.

Every topology step in the package is an instance of

    min  1/2 ||S - A0 S - A1 P||_F^2
         + l1 ||A0||_1 + l2/2 ||A0||_F^2 + beta/2 ||A0 - Q0||_F^2
         + l1 ||A1||_1 + l2/2 ||A1||_F^2 + beta/2 ||A1 - Q1||_F^2
    s.t. diag(A0) = 0

with ``S`` (current slots) and ``P`` (previous slots) stored column-wise.
The splitting introduces sparse copies ``C0, C1`` with ``A0 = C0 - diag(C0)``
and ``A1 = C1``; ``C0`` and ``C1`` are what we return since they carry the
exact sparsity pattern and the exact zero diagonal.

Callers translate their own normalisation into ``(l1, l2, beta)``; the
objective above is half of theirs.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .exceptions import ConvergenceWarning, InvalidSpecError


def soft_threshold(x, alpha):
    """Elementwise ``sign(x) * max(|x| - alpha, 0)``."""
    if np.any(np.asarray(alpha) < 0):
        raise InvalidSpecError("soft-threshold level must be nonnegative")
    x = np.asarray(x, dtype=float)
    out = np.sign(x) * np.maximum(np.abs(x) - alpha, 0.0)
    return out if out.ndim else float(out)


def _shrink(x, alpha):
    # soft threshold without argument checks, for the inner loop
    return x - np.clip(x, -alpha, alpha)


@dataclass
class AdmmState:
    """Primal, auxiliary and dual iterates; reusable as a warm start."""

    a0: np.ndarray
    c0: np.ndarray
    u0: np.ndarray
    a1: Optional[np.ndarray] = None
    c1: Optional[np.ndarray] = None
    u1: Optional[np.ndarray] = None

    @classmethod
    def zeros(cls, n, lagged):
        z = lambda: np.zeros((n, n))  # noqa: E731
        if lagged:
            return cls(z(), z(), z(), z(), z(), z())
        return cls(z(), z(), z())

    def copy(self):
        return AdmmState(*(None if v is None else v.copy() for v in
                           (self.a0, self.c0, self.u0, self.a1, self.c1, self.u1)))


@dataclass
class AdmmResult:
    a0: np.ndarray
    a1: Optional[np.ndarray]
    state: AdmmState
    iterations: int
    converged: bool
    primal_residual: float
    dual_residual: float


def _right_solver(gram, shift):
    """Return ``f(rhs) = rhs @ inv(gram + shift I)``.

    The inverse is formed once from a Cholesky factor; ``shift >= rho > 0``
    bounds its condition number, and a matrix product per iteration is much
    cheaper than repeated triangular solves.
    """
    n = gram.shape[0]
    factor = cho_factor(gram + shift * np.eye(n))
    inv = cho_solve(factor, np.eye(n))
    inv = (inv + inv.T) / 2
    return lambda rhs: rhs @ inv


def elastic_net_admm(
    current,
    previous=None,
    *,
    l1,
    l2,
    rho=1.0,
    beta=0.0,
    prior0=None,
    prior1=None,
    tol=1e-6,
    max_iter=1000,
    state=None,
    warn=True,
):
    """Run the two-block (or single-block when ``previous`` is None) ADMM.

    Parameters
    ----------
    current : ndarray of shape (N, T)
        Slots ``s(1..T)`` (or all SEM slots).
    previous : ndarray of shape (N, T), optional
        Slots ``s(0..T-1)``. Omit for the SEM problem (``A1 = 0``).
    l1, l2 : float
        Halved-normalisation weights, see module docstring.
    rho : float
        Fixed penalty parameter.
    beta, prior0, prior1 :
        Optional proximal pull towards ``prior0``/``prior1``.
    tol : float
        Absolute tolerance on the primal residual ``||A - C||_F`` and the
        dual residual ``rho ||C[k] - C[k-1]||_F``.
    state : AdmmState, optional
        Warm start. All-zero initialisation otherwise.
    """
    if rho <= 0:
        raise InvalidSpecError("ADMM penalty rho must be positive")
    if l1 < 0 or l2 < 0 or beta < 0:
        raise InvalidSpecError("regularisation weights must be nonnegative")
    s = np.asarray(current, dtype=float)
    n = s.shape[0]
    lagged = previous is not None
    if lagged:
        p = np.asarray(previous, dtype=float)
    st = AdmmState.zeros(n, lagged) if state is None else state.copy()
    if lagged and st.a1 is None:
        st.a1, st.c1, st.u1 = np.zeros((n, n)), np.zeros((n, n)), np.zeros((n, n))

    gram0 = s @ s.T
    shift = l2 + beta + rho
    solve0 = _right_solver(gram0, shift)
    pull0 = beta * prior0 if (beta and prior0 is not None) else 0.0
    if lagged:
        cross = s @ p.T
        solve1 = _right_solver(p @ p.T, shift)
        pull1 = beta * prior1 if (beta and prior1 is not None) else 0.0

    kappa = l1 / rho
    diag = np.arange(n)
    r_norm = d_norm = np.inf
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        rhs0 = gram0 - st.u0 + rho * st.c0 + pull0
        if lagged:
            rhs0 = rhs0 - st.a1 @ cross.T
        st.a0 = solve0(rhs0)
        if lagged:
            st.a1 = solve1(cross - st.a0 @ cross - st.u1 + rho * st.c1 + pull1)

        c0_old = st.c0
        v = st.a0 + st.u0 / rho
        st.c0 = _shrink(v, kappa)
        st.c0[diag, diag] = 0.0
        r = (st.a0 - st.c0).ravel()
        d = (st.c0 - c0_old).ravel()
        r2, d2 = r @ r, d @ d
        st.u0 = st.u0 + rho * (st.a0 - st.c0)
        if lagged:
            c1_old = st.c1
            st.c1 = _shrink(st.a1 + st.u1 / rho, kappa)
            r = (st.a1 - st.c1).ravel()
            d = (st.c1 - c1_old).ravel()
            r2 += r @ r
            d2 += d @ d
            st.u1 = st.u1 + rho * (st.a1 - st.c1)

        r_norm = np.sqrt(r2)
        d_norm = rho * np.sqrt(d2)
        if r_norm < tol and d_norm < tol:
            converged = True
            break

    if not converged and warn:
        warnings.warn(
            f"ADMM stopped after {max_iter} iterations "
            f"(primal {r_norm:.2e}, dual {d_norm:.2e}, tol {tol:.1e})",
            ConvergenceWarning,
            stacklevel=3,
        )
    return AdmmResult(
        a0=st.c0.copy(),
        a1=st.c1.copy() if lagged else None,
        state=st,
        iterations=it,
        converged=converged,
        primal_residual=float(r_norm),
        dual_residual=float(d_norm),
    )
