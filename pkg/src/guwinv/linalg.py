"""Dense linear-algebra kernels with exact forward-mode derivatives.

The solvers here are the numerical foundation for the semi-analytical wave
elements: a deterministic eigendecomposition, Lyapunov/Sylvester solvers
built on that decomposition, an algebraic Riccati solver using invariant
subspace selection, and a guarded linear solve.  Every kernel accepts either
plain ndarrays or :class:`~guwinv.dual.Dual` operands; derivatives of the
matrix-equation solvers are obtained by differentiating the defining
equation and re-solving with the same coefficient spectrum, never by
differentiating the eigendecomposition path itself.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .dual import Dual, is_dual, value
from .errors import (
    NearDefectiveSpectrum,
    SelectionAmbiguity,
    SingularPairing,
    SingularSystem,
)

__all__ = [
    "EigDecomposition",
    "eig_right",
    "eig_derivative",
    "eig_dual",
    "solve_lyapunov",
    "solve_sylvester_t",
    "solve_riccati",
    "linear_solve",
    "solve_batched",
]

# Relative gap below which two eigenvalues count as numerically coincident.
DEFECT_TOL = 1e-10
# Relative margin for invariant-subspace selection.
SPLIT_TOL = 1e-10


@dataclass
class EigDecomposition:
    """Right eigendecomposition A V = V diag(w).

    Eigenvalues are sorted by (Re, Im); eigenvectors have unit 2-norm and the
    largest-magnitude component rotated to the positive real axis, so two
    calls on identical input produce identical output.
    """

    eigenvalues: np.ndarray       # (..., n)
    eigenvectors: np.ndarray      # (..., n, n), columns
    condition_estimate: np.ndarray | float
    near_defective: np.ndarray | bool
    matrix_norm: np.ndarray | float

    @property
    def inverse_vectors(self) -> np.ndarray:
        """V^{-1}, computed lazily and cached."""
        if not hasattr(self, "_vinv"):
            self._vinv = np.linalg.inv(self.eigenvectors)
        return self._vinv


def eig_right(A, compute_condition: bool = True) -> EigDecomposition:
    """Deterministic right eigendecomposition of a general square matrix.

    Accepts stacked input (..., n, n).  The ``near_defective`` flag marks a
    minimum pairwise eigenvalue gap below ``1e-10 * ||A||``; derivative
    formulas are invalid in that case and :func:`eig_derivative` refuses to
    run on flagged input.
    """
    A = np.asarray(A)
    w, V = np.linalg.eig(A)

    order = _lex_order(w)
    w = np.take_along_axis(w, order, axis=-1)
    V = np.take_along_axis(V, order[..., None, :], axis=-1)

    # Unit norm, then rotate the largest component onto the positive real axis.
    V = V / np.linalg.norm(V, axis=-2, keepdims=True)
    pivot = np.argmax(np.abs(V), axis=-2)
    piv_val = np.take_along_axis(V, pivot[..., None, :], axis=-2)
    phase = piv_val / np.abs(piv_val)
    V = V * np.conj(phase)

    anorm = np.linalg.norm(A, axis=(-2, -1))
    gap = _min_pair_gap(w)
    near_def = gap < DEFECT_TOL * np.maximum(anorm, np.finfo(float).tiny)

    if compute_condition:
        cond = np.linalg.cond(V)
    else:
        cond = np.ones(A.shape[:-2])
    if A.ndim == 2:
        cond = float(cond)
        near_def = bool(near_def)
        anorm = float(anorm)
    return EigDecomposition(w, V, cond, near_def, anorm)


def _lex_order(w: np.ndarray) -> np.ndarray:
    """Sort order by (Re, Im), stable, batch-aware."""
    flat = w.reshape(-1, w.shape[-1])
    idx = np.empty_like(flat, dtype=np.intp)
    for i, row in enumerate(flat):
        idx[i] = np.lexsort((row.imag, row.real))
    return idx.reshape(w.shape)


def _min_pair_gap(w: np.ndarray) -> np.ndarray:
    d = np.abs(w[..., :, None] - w[..., None, :])
    n = w.shape[-1]
    d[..., np.arange(n), np.arange(n)] = np.inf
    return d.min(axis=(-2, -1))


def eig_derivative(A, dA, decomp: EigDecomposition | None = None):
    """Directional derivatives of eigenvalues and eigenvectors.

    Parameters:
        A: (..., n, n) matrix (value part).
        dA: tangent(s); either the same shape as ``A`` or with one extra
            leading axis stacking several directions.
        decomp: optional precomputed :func:`eig_right` result.

    Returns:
        (dw, dV) with the same leading layout as ``dA``.  The eigenvector
        tangent is gauge-fixed to have zero projection onto its own
        eigenvector, which preserves the unit norm.

    Raises:
        NearDefectiveSpectrum: if the decomposition is flagged near-defective,
            where the first-order formulas break down.
    """
    A = np.asarray(A)
    if decomp is None:
        decomp = eig_right(A, compute_condition=False)
    if np.any(decomp.near_defective):
        raise NearDefectiveSpectrum(
            "eigenvalue gap below 1e-10*||A||; eigen derivatives are not defined"
        )
    dA = np.asarray(dA)
    stacked = dA.ndim == A.ndim + 1
    dAs = dA if stacked else dA[None]

    w, V = decomp.eigenvalues, decomp.eigenvectors
    Vinv = decomp.inverse_vectors

    M = Vinv @ dAs @ V                              # (k, ..., n, n)
    dw = np.diagonal(M, axis1=-2, axis2=-1)

    denom = w[..., None, :] - w[..., :, None]       # lambda_j - lambda_i
    n = w.shape[-1]
    eye = np.eye(n, dtype=bool)
    denom = np.where(eye, 1.0, denom)
    F = np.where(eye, 0.0, M / denom)
    dV = V @ F
    # Remove the component along each eigenvector (norm-preserving gauge).
    c = np.einsum("...ij,k...ij->k...j", np.conj(V), dV)
    dV = dV - V * c[..., None, :]

    if not stacked:
        return dw[0], dV[0]
    return dw, dV


def eig_dual(A):
    """Eigendecomposition of a dual matrix: returns (w, V) as Duals."""
    if not is_dual(A):
        dec = eig_right(A, compute_condition=False)
        return dec.eigenvalues, dec.eigenvectors, dec
    dec = eig_right(A.val, compute_condition=False)
    dw, dV = eig_derivative(A.val, A.tan, dec)
    return Dual(dec.eigenvalues, dw), Dual(dec.eigenvectors, dV), dec


# -- Lyapunov / Sylvester ------------------------------------------------------


def _diag_pair_solve(d_left, d_right, C, anorm):
    """Solve d_left[i] X_ij + X_ij d_right[j] = -C_ij elementwise."""
    denom = d_left[..., :, None] + d_right[..., None, :]
    bad = np.abs(denom) < 1e-12 * np.maximum(anorm, np.finfo(float).tiny)
    if np.any(bad):
        raise SingularPairing(
            "eigenvalue pair sums to zero within tolerance; equation is singular"
        )
    return -C / denom


def solve_lyapunov(A, C):
    """Solve A X + X A^H + C = 0 through the eigendecomposition of A.

    With A = V D V^{-1} the transformed unknown Xt = V^{-1} X V^{-H}
    satisfies D Xt + Xt D^H + Ct = 0 with Ct = V^{-1} C V^{-H}, which is
    solved per entry; the solution is recovered as X = V Xt V^H.

    Both operands may be Dual; the tangent then solves the same Lyapunov
    equation with right-hand side dA X + X dA^H + dC, reusing the spectrum
    of the value part.
    """
    Av, Cv = value(A), value(C)
    dec = eig_right(Av, compute_condition=False)
    w, V = dec.eigenvalues, dec.eigenvectors
    Vinv = dec.inverse_vectors

    def _solve_one(Crhs):
        Ct = Vinv @ Crhs @ np.conj(Vinv).mT if Crhs.ndim > 2 else Vinv @ Crhs @ np.conj(Vinv.T)
        Xt = _diag_pair_solve(w, np.conj(w), Ct, dec.matrix_norm)
        return V @ Xt @ np.conj(V).mT if Crhs.ndim > 2 else V @ Xt @ np.conj(V.T)

    X = _solve_one(np.asarray(Cv))
    if not (is_dual(A) or is_dual(C)):
        return X

    ndir = A.ndir if is_dual(A) else C.ndir
    dA = A.tan if is_dual(A) else np.zeros((ndir,) + np.shape(Av), dtype=complex)
    dC = C.tan if is_dual(C) else np.zeros((ndir,) + np.shape(Cv), dtype=complex)
    rhs = dA @ X + X @ np.conj(np.swapaxes(dA, -1, -2)) + dC
    dX = np.stack([_solve_one(r) for r in rhs])
    return Dual(X, dX)


def solve_sylvester_t(A, C):
    """Solve A^T X + X A + C = 0 (transpose pairing, not conjugate).

    This is the pairing produced by differentiating/expanding symmetric
    matrix equations with a real coefficient A, where A^H and A^T coincide.
    Implemented through the same spectral splitting as
    :func:`solve_lyapunov`: with A = V D V^{-1}, Xt = V^T X V satisfies
    D Xt + Xt D + Ct = 0, Ct = V^T C V, and X = V^{-T} Xt V^{-1}.
    """
    Av, Cv = value(A), value(C)
    dec = eig_right(Av, compute_condition=False)
    w, V = dec.eigenvalues, dec.eigenvectors
    Vinv = dec.inverse_vectors

    def _solve_one(Crhs):
        Ct = V.mT @ Crhs @ V if Crhs.ndim > 2 else V.T @ Crhs @ V
        Xt = _diag_pair_solve(w, w, Ct, dec.matrix_norm)
        return Vinv.mT @ Xt @ Vinv if Crhs.ndim > 2 else Vinv.T @ Xt @ Vinv

    X = _solve_one(np.asarray(Cv))
    if not (is_dual(A) or is_dual(C)):
        return X

    ndir = A.ndir if is_dual(A) else C.ndir
    dA = A.tan if is_dual(A) else np.zeros((ndir,) + np.shape(Av), dtype=complex)
    dC = C.tan if is_dual(C) else np.zeros((ndir,) + np.shape(Cv), dtype=complex)
    rhs = np.swapaxes(dA, -1, -2) @ X + X @ dA + dC
    dX = np.stack([_solve_one(r) for r in rhs])
    return Dual(X, dX)


# -- Riccati -------------------------------------------------------------------


def solve_riccati(G, B, C):
    """Stabilising solution of X G X + X B + B^T X + C = 0.

    ``G`` and ``C`` must be symmetric.  The solution is built from the
    eigendecomposition of the double-size state matrix::

        H = [[B, G], [-C, -B^T]]

    by selecting the invariant subspace with Re(lambda) > 0, which makes the
    closed-loop matrix G X + B have its spectrum in the right half plane.

    Dual operands are supported; the tangent solves the Sylvester equation
    A^T dX + dX A + (X dG X + X dB + dB^T X + dC) = 0 with A = G X + B.
    """
    Gv, Bv, Cv = value(G), value(B), value(C)
    n = Bv.shape[-1]
    H = np.block([[Bv, Gv], [-Cv, -Bv.T]])
    dec = eig_right(H, compute_condition=False)
    w, V = dec.eigenvalues, dec.eigenvectors

    margin = SPLIT_TOL * max(dec.matrix_norm, np.finfo(float).tiny)
    if np.any(np.abs(w.real) < margin):
        raise SelectionAmbiguity(
            "eigenvalue of the state matrix lies on the selection boundary"
        )
    sel = w.real > 0.0
    if int(sel.sum()) != n:
        raise SelectionAmbiguity(
            f"expected {n} right-half-plane eigenvalues, found {int(sel.sum())}"
        )
    V1 = V[:n, sel]
    V2 = V[n:, sel]
    try:
        X = np.linalg.solve(V1.T, V2.T).T
    except np.linalg.LinAlgError as exc:
        raise SelectionAmbiguity("selected subspace is not a graph over the state") from exc
    X = 0.5 * (X + X.T)
    if not np.iscomplexobj(Gv) and not np.iscomplexobj(Bv) and not np.iscomplexobj(Cv):
        X = X.real if np.allclose(X.imag, 0, atol=1e-8 * (1 + np.abs(X.real).max())) else X

    if not (is_dual(G) or is_dual(B) or is_dual(C)):
        return X

    ndir = next(op.ndir for op in (G, B, C) if is_dual(op))
    dG = G.tan if is_dual(G) else np.zeros((ndir, n, n))
    dB = B.tan if is_dual(B) else np.zeros((ndir, n, n))
    dC = C.tan if is_dual(C) else np.zeros((ndir, n, n))
    Acl = Gv @ X + Bv
    rhs = X @ dG @ X + X @ dB + np.swapaxes(dB, -1, -2) @ X + dC
    dX = np.stack([solve_sylvester_t(Acl, r) for r in rhs])
    return Dual(X, dX)


# -- Linear solve --------------------------------------------------------------


def solve_batched(A, B):
    """Broadcasting linear solve with forward-mode tangents.

    Thin wrapper over np.linalg.solve for inner loops; no conditioning
    diagnostics.  Tangents follow dX = A^{-1} (dB - dA X).
    """
    Av, Bv = value(A), value(B)
    X = np.linalg.solve(Av, Bv)
    if not (is_dual(A) or is_dual(B)):
        return X
    ndir = A.ndir if is_dual(A) else B.ndir
    if is_dual(B):
        rhs = B._tan_for(X.shape).astype(X.dtype, copy=True)
    else:
        rhs = np.zeros((ndir,) + X.shape, dtype=X.dtype)
    if is_dual(A):
        rhs = rhs - (A @ X).tan
    if X.ndim >= 2:
        # fold the directions into extra right-hand-side columns so the
        # factorization of each batch entry happens once, not ndir times
        k = X.shape[-1]
        cols = np.moveaxis(rhs, 0, -1).reshape(X.shape[:-1] + (k * ndir,))
        sol = np.linalg.solve(Av, cols)
        tan = np.moveaxis(sol.reshape(X.shape + (ndir,)), -1, 0)
        return Dual(X, tan)
    return Dual(X, np.linalg.solve(Av, rhs))


def linear_solve(S, f, warn_condition: float = 1e12, logger=None):
    """Solve S u = f with a cheap reciprocal-condition estimate.

    Raises SingularSystem when the factorisation fails; logs a warning when
    the 1-norm condition estimate exceeds ``warn_condition``.  Dual operands
    propagate through du = S^{-1} (df - dS u).
    """
    Sv = np.asarray(value(S), dtype=complex)
    fv = np.asarray(value(f), dtype=complex)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", scipy.linalg.LinAlgWarning)
            lu, piv = scipy.linalg.lu_factor(Sv)
    except (scipy.linalg.LinAlgError, ValueError) as exc:
        raise SingularSystem(str(exc)) from exc
    if not np.all(np.isfinite(lu)):
        raise SingularSystem("factorisation produced non-finite entries")

    anorm = np.linalg.norm(Sv, 1)
    gecon = scipy.linalg.get_lapack_funcs("gecon", (Sv,))
    rcond, info = gecon(lu, anorm)
    if rcond == 0.0:
        raise SingularSystem("matrix is singular to working precision")
    if rcond < 1.0 / warn_condition and logger is not None:
        logger.warning("linear_solve: condition estimate %.3e exceeds %.1e",
                       1.0 / rcond, warn_condition)

    u = scipy.linalg.lu_solve((lu, piv), fv)
    if not (is_dual(S) or is_dual(f)):
        return u

    ndir = S.ndir if is_dual(S) else f.ndir
    dS = S.tan if is_dual(S) else np.zeros((ndir,) + Sv.shape, dtype=complex)
    df = f.tan if is_dual(f) else np.zeros((ndir,) + fv.shape, dtype=complex)
    du = np.stack([scipy.linalg.lu_solve((lu, piv), df[k] - dS[k] @ u)
                   for k in range(ndir)])
    return Dual(u, du)
