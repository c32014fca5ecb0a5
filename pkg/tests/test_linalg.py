import numpy as np
import pytest
import scipy.linalg

from guwinv.dual import Dual, value
from guwinv.errors import NearDefectiveSpectrum, SelectionAmbiguity, SingularPairing, SingularSystem
from guwinv.linalg import (
    eig_derivative,
    eig_dual,
    eig_right,
    linear_solve,
    solve_lyapunov,
    solve_riccati,
    solve_sylvester_t,
)


# ---------------------------------------------------------------- eig_right


def test_eig_sorted_and_deterministic():
    A = np.diag([3.0, 1.0, 2.0]).astype(complex)
    dec = eig_right(A)
    assert np.allclose(dec.eigenvalues, [1.0, 2.0, 3.0])
    # unit columns, deterministic repeat
    dec2 = eig_right(A)
    assert np.array_equal(dec.eigenvectors, dec2.eigenvectors)
    assert np.allclose(np.linalg.norm(dec.eigenvectors, axis=0), 1.0)
    assert dec.condition_estimate >= 1.0


def test_eig_identity_flagged_near_defective():
    dec = eig_right(np.eye(3, dtype=complex))
    assert dec.near_defective
    assert np.allclose(dec.eigenvalues, 1.0)


def test_eig_reconstructs_matrix():
    rng = np.random.default_rng(0)
    for _ in range(25):
        n = rng.integers(2, 9)
        A = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
        dec = eig_right(A)
        R = dec.eigenvectors @ np.diag(dec.eigenvalues) @ dec.inverse_vectors
        assert np.allclose(R, A, atol=1e-10 * np.linalg.norm(A))


def test_eig_batched():
    rng = np.random.default_rng(1)
    A = rng.normal(size=(5, 4, 4)) + 1j * rng.normal(size=(5, 4, 4))
    dec = eig_right(A, compute_condition=False)
    for i in range(5):
        di = eig_right(A[i], compute_condition=False)
        assert np.allclose(dec.eigenvalues[i], di.eigenvalues)
        assert np.allclose(dec.eigenvectors[i], di.eigenvectors)


# ---------------------------------------------------------- eig_derivative


def _fd_eig(A, dA, h=1e-6):
    """Central-difference oracle for eigenvalue/eigenvector derivatives.

    Eigenvectors of the perturbed matrices are aligned in phase and scale to
    the unperturbed basis before differencing.
    """
    dp = eig_right(A + h * dA, compute_condition=False)
    dm = eig_right(A - h * dA, compute_condition=False)
    d0 = eig_right(A, compute_condition=False)

    def align(dec):
        s = np.einsum("ij,ij->j", np.conj(d0.eigenvectors), dec.eigenvectors)
        return dec.eigenvectors / s * np.abs(s) ** 0  # divide by projection
    Vp = align(dp)
    Vm = align(dm)
    dw = (dp.eigenvalues - dm.eigenvalues) / (2 * h)
    dV = (Vp - Vm) / (2 * h)
    # project out the along-eigenvector component to match the analytic gauge
    c = np.einsum("ij,ij->j", np.conj(d0.eigenvectors), dV)
    dV = dV - d0.eigenvectors * c
    return dw, dV, d0


def test_eig_derivative_matches_fd():
    rng = np.random.default_rng(2)
    for _ in range(10):
        n = rng.integers(2, 7)
        A = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
        dA = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
        dw_fd, dV_fd, d0 = _fd_eig(A, dA)
        dw, dV = eig_derivative(A, dA, d0)
        assert np.allclose(dw, dw_fd, atol=1e-5, rtol=1e-5)
        assert np.allclose(dV, dV_fd, atol=1e-4, rtol=1e-4)


def test_eig_derivative_gauge_zero_projection():
    rng = np.random.default_rng(3)
    A = rng.normal(size=(5, 5)) + 1j * rng.normal(size=(5, 5))
    dA = rng.normal(size=(5, 5)) + 0j
    dec = eig_right(A)
    _, dV = eig_derivative(A, dA, dec)
    proj = np.einsum("ij,ij->j", np.conj(dec.eigenvectors), dV)
    assert np.allclose(proj, 0.0, atol=1e-12)


def test_eig_derivative_rejects_defective():
    with pytest.raises(NearDefectiveSpectrum):
        eig_derivative(np.eye(3, dtype=complex), np.eye(3, dtype=complex))


def test_eig_dual_consistency():
    rng = np.random.default_rng(4)
    A0 = rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4))
    dA = rng.normal(size=(2, 4, 4)) + 0j
    w, V, _ = eig_dual(Dual(A0, dA))
    dw, dV = eig_derivative(A0, dA)
    assert np.allclose(w.tan, dw)
    assert np.allclose(V.tan, dV)


# ------------------------------------------------------------ solve_lyapunov


def _random_stable(rng, n):
    A = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
    w = np.linalg.eigvals(A)
    return A - (w.real.max() + rng.uniform(0.5, 2.0)) * np.eye(n)


def test_lyapunov_diagonal_closed_form():
    a = np.array([-1.0 + 2.0j, -3.0 - 1.0j, -0.5 + 0.0j])
    A = np.diag(a)
    rng = np.random.default_rng(5)
    C = rng.normal(size=(3, 3)) + 1j * rng.normal(size=(3, 3))
    X = solve_lyapunov(A, C)
    Xref = -C / (a[:, None] + np.conj(a)[None, :])
    assert np.allclose(X, Xref, rtol=1e-13, atol=1e-13)


def test_lyapunov_residual_random_stable():
    rng = np.random.default_rng(6)
    for _ in range(30):
        n = int(rng.integers(2, 17))
        A = _random_stable(rng, n)
        C = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
        X = solve_lyapunov(A, C)
        res = A @ X + X @ np.conj(A.T) + C
        assert np.linalg.norm(res) <= 1e-10 * np.linalg.norm(C)


def test_lyapunov_matches_scipy():
    rng = np.random.default_rng(7)
    A = _random_stable(rng, 6)
    C = rng.normal(size=(6, 6)) + 1j * rng.normal(size=(6, 6))
    X = solve_lyapunov(A, C)
    # scipy solves A X + X A^H = Q
    Xref = scipy.linalg.solve_sylvester(A, np.conj(A.T), -C)
    assert np.allclose(X, Xref, atol=1e-10 * np.linalg.norm(C))


def test_lyapunov_singular_pairing_raises():
    A = np.diag([1.0 + 0j, -1.0 + 0j])  # 1 + conj(-1) = 0
    C = np.eye(2, dtype=complex)
    with pytest.raises(SingularPairing):
        solve_lyapunov(A, C)


def test_lyapunov_dual_matches_fd():
    rng = np.random.default_rng(8)
    A0 = _random_stable(rng, 5)
    C0 = rng.normal(size=(5, 5)) + 1j * rng.normal(size=(5, 5))
    dA = rng.normal(size=(1, 5, 5)) + 0j
    dC = rng.normal(size=(1, 5, 5)) + 0j
    X = solve_lyapunov(Dual(A0, dA), Dual(C0, dC))
    h = 1e-6
    Xp = solve_lyapunov(A0 + h * dA[0], C0 + h * dC[0])
    Xm = solve_lyapunov(A0 - h * dA[0], C0 - h * dC[0])
    assert np.allclose(X.tan[0], (Xp - Xm) / (2 * h), atol=1e-5, rtol=1e-5)


def test_sylvester_t_residual_and_dual():
    rng = np.random.default_rng(9)
    A0 = rng.normal(size=(6, 6)) + 2.0 * np.eye(6)  # spectrum pushed right
    C0 = rng.normal(size=(6, 6))
    X = solve_sylvester_t(A0, C0)
    assert np.linalg.norm(A0.T @ X + X @ A0 + C0) < 1e-10 * np.linalg.norm(C0)

    dA = rng.normal(size=(1, 6, 6))
    X = solve_sylvester_t(Dual(A0 + 0j, dA + 0j), C0 + 0j)
    h = 1e-6
    fd = (solve_sylvester_t(A0 + h * dA[0], C0) - solve_sylvester_t(A0 - h * dA[0], C0)) / (2 * h)
    assert np.allclose(X.tan[0], fd, atol=1e-5, rtol=1e-5)


# ------------------------------------------------------------- solve_riccati


def test_riccati_scalar_stabilising_root():
    # x^2 + 2*b*x + c = 0 with b = 2, c = 3: roots -1 and -3.
    # The stabilising one makes the closed loop g*x + b positive: x = -1.
    X = solve_riccati(np.eye(1), 2.0 * np.eye(1), 3.0 * np.eye(1))
    assert np.allclose(X, -1.0)


def test_riccati_identity_coefficients():
    # X^2 = I with stabilising branch X = I
    n = 3
    X = solve_riccati(np.eye(n), np.zeros((n, n)), -np.eye(n))
    assert np.linalg.norm(X @ X - np.eye(n)) < 1e-9
    assert np.allclose(X, np.eye(n), atol=1e-9)


def _constructed_riccati(rng, n):
    """Build (G, B, C) with a known stabilising solution."""
    Xs = rng.normal(size=(n, n))
    Xs = 0.5 * (Xs + Xs.T)
    G = rng.normal(size=(n, n))
    G = G @ G.T + n * np.eye(n)
    Q = scipy.linalg.qr(rng.normal(size=(n, n)))[0]
    T = Q @ np.diag(rng.uniform(0.5, 3.0, size=n)) @ Q.T  # spectrum in (0, 3]
    B = T - G @ Xs
    C = -(Xs @ G @ Xs + Xs @ B + B.T @ Xs)
    return G, B, C, Xs


def test_riccati_constructed_solutions():
    rng = np.random.default_rng(10)
    for _ in range(10):
        G, B, C, Xs = _constructed_riccati(rng, 4)
        X = solve_riccati(G, B, C)
        res = X @ G @ X + X @ B + B.T @ X + C
        assert np.linalg.norm(res) < 1e-9 * max(1.0, np.linalg.norm(C))
        assert np.allclose(X, Xs, atol=1e-7 * max(1.0, np.abs(Xs).max()))
        cl = np.linalg.eigvals(G @ X + B)
        assert np.all(cl.real > 0)


def test_riccati_selection_ambiguity():
    # b = 0, c = 0 puts state-matrix eigenvalues at exactly 0
    with pytest.raises(SelectionAmbiguity):
        solve_riccati(np.eye(1), np.zeros((1, 1)), np.zeros((1, 1)))


def test_riccati_dual_matches_fd():
    rng = np.random.default_rng(11)
    G, B, C, _ = _constructed_riccati(rng, 3)
    dB = rng.normal(size=(1, 3, 3))
    X = solve_riccati(G, Dual(B, dB), C)
    h = 1e-6
    fd = (solve_riccati(G, B + h * dB[0], C) - solve_riccati(G, B - h * dB[0], C)) / (2 * h)
    assert np.allclose(X.tan[0], fd, atol=1e-5, rtol=1e-4)


# -------------------------------------------------------------- linear_solve


def test_linear_solve_basic():
    S = np.array([[2.0, 0.0], [0.0, 4.0]])
    f = np.array([2.0, 8.0])
    u = linear_solve(S, f)
    assert np.allclose(u, [1.0, 2.0])


def test_linear_solve_singular_raises():
    with pytest.raises(SingularSystem):
        linear_solve(np.zeros((2, 2)), np.ones(2))


def test_linear_solve_condition_warning(caplog):
    import logging
    logger = logging.getLogger("guwinv.test.cond")
    S = np.array([[1.0, 0.0], [0.0, 1e-14]])
    with caplog.at_level(logging.WARNING, logger=logger.name):
        linear_solve(S, np.ones(2), logger=logger)
    assert any("condition" in r.message for r in caplog.records)


def test_linear_solve_dual_matches_fd():
    rng = np.random.default_rng(12)
    S0 = rng.normal(size=(4, 4)) + np.eye(4) * 4.0 + 0j
    f0 = rng.normal(size=4) + 0j
    dS = rng.normal(size=(2, 4, 4)) + 0j
    df = rng.normal(size=(2, 4)) + 0j
    u = linear_solve(Dual(S0, dS), Dual(f0, df))
    h = 1e-7
    for k in range(2):
        up = linear_solve(S0 + h * dS[k], f0 + h * df[k])
        um = linear_solve(S0 - h * dS[k], f0 - h * df[k])
        assert np.allclose(u.tan[k], (up - um) / (2 * h), atol=1e-6)
    assert np.allclose(value(u), np.linalg.solve(S0, f0))
