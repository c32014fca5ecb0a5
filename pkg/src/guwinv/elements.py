"""Wave super elements: prismatic guides and star-convex polygons.

Two element families cover the whole model.  Prismatic elements treat the
axial direction analytically through the modal decomposition of the
cross-section wave equation, so a finite prism of any length costs the same
and a semi-infinite prism absorbs outgoing waves exactly.  Polygon elements
scale a boundary line mesh toward an interior center; their dynamic
stiffness is a static Riccati solution plus a frequency power series whose
coefficients solve a chain of shifted Lyapunov equations.  All builders
accept Dual geometry (lengths, node coordinates, scaling centers) and
propagate exact tangents.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .crosssection import (
    B1_OP,
    B2_OP,
    CrossSectionMesh,
    MaterialIso,
    coefficient_matrices,
    gauss_lobatto_basis,
)
from .dual import (
    Dual,
    dual_array,
    dual_block2,
    dual_concat,
    is_dual,
    nd,
    tangent,
    value,
)
from .errors import (
    InvalidNode,
    ModeSelectionAmbiguity,
    SelectionAmbiguity,
    SingularPairing,
    StarConvexityViolation,
)
from .linalg import eig_dual, eig_right, solve_batched, solve_sylvester_t

__all__ = [
    "WaveModes",
    "wave_modes",
    "semi_infinite_stiffness",
    "finite_prism_stiffness",
    "PrismaticElement",
    "prismatic_stiffness",
    "PolygonMesh",
    "insert_double_node",
    "polygon_coefficient_matrices",
    "polygon_static_stiffness",
    "PolygonOperator",
    "polygon_operator",
    "PolygonElement",
    "polygon_stiffness",
]

# Margin (relative to the eigenvalue scale) below which the decay/growth
# classification of an axial mode counts as ambiguous.
SPLIT_MARGIN = 1e-12

# Exponents with |lambda| below this (the spectrum is dimensionless) belong
# to the rigid-body cluster of the scaled-boundary static eigenproblem.
RIGID_TOL = 1e-4

DEFAULT_CF_ORDER = 4


def _mt(x):
    return x.mT if is_dual(x) else np.swapaxes(x, -1, -2)


def _exp(x):
    return x.exp() if is_dual(x) else np.exp(x)


def _bto(x, shape):
    """Broadcast a plain or Dual array to the given value shape."""
    if is_dual(x):
        shape = tuple(shape)
        pad = (1,) * (len(shape) - x.val.ndim)
        tan = x.tan.reshape((x.ndir,) + pad + x.val.shape)
        return Dual(np.broadcast_to(x.val, shape),
                    np.broadcast_to(tan, (x.ndir,) + shape))
    return np.broadcast_to(np.asarray(x), shape)


# -- prismatic elements ----------------------------------------------------------


@dataclass
class WaveModes:
    """Axial modes of one cross-section over a batch of frequencies.

    lam has shape (nb, 2n) sorted by ascending real part: the first n modes
    decay toward +x (outgoing there), the last n decay toward -x.  phi and
    psi hold the matching displacement and force mode shapes as columns.
    """

    lam: object
    phi: object
    psi: object
    n: int

    @property
    def lam_fwd(self):
        return self.lam[..., : self.n]

    @property
    def lam_bwd(self):
        return self.lam[..., self.n:]

    @property
    def phi_fwd(self):
        return self.phi[..., : self.n]

    @property
    def phi_bwd(self):
        return self.phi[..., self.n:]

    @property
    def psi_fwd(self):
        return self.psi[..., : self.n]

    @property
    def psi_bwd(self):
        return self.psi[..., self.n:]


def wave_modes(mats, omegas) -> WaveModes:
    """Solve the axial eigenproblem of a cross-section at damped frequencies.

    Frequencies are expected in the lower half plane (Im omega < 0); the
    damping then strictly separates modes decaying toward +x from those
    decaying toward -x, which is the outgoing/incoming split used by every
    prism builder.  Raises ModeSelectionAmbiguity when the separation margin
    degenerates (e.g. for undamped real frequencies).
    """
    omegas = np.atleast_1d(np.asarray(omegas, dtype=complex))
    n = mats.n_dof
    e0, e1, e2, m0 = mats.e0, mats.e1, mats.e2, mats.m0

    eye = np.eye(n)
    e0_inv = solve_batched(e0, eye)
    w2 = omegas**2
    nb = omegas.shape[0]
    lower_left = e0_inv @ (e2 - w2[:, None, None] * m0)
    lower_right = _bto(-(e0_inv @ (e1.T - e1)), (nb, n, n))
    zero = np.zeros((nb, n, n), dtype=complex)
    upper = dual_concat([zero, np.broadcast_to(eye, (nb, n, n))], axis=-1)
    lower = dual_concat([lower_left, lower_right], axis=-1)
    A = dual_concat([upper, lower], axis=-2)

    if is_dual(A):
        lam, V, _ = eig_dual(A)
    else:
        dec = eig_right(A, compute_condition=False)
        lam, V = dec.eigenvalues, dec.eigenvectors

    lam_v = value(lam)
    scale = np.abs(lam_v).max(axis=-1, keepdims=True)
    re = lam_v.real
    if (np.any(re[..., :n] >= 0) or np.any(re[..., n:] <= 0)
            or np.any(np.abs(re) < SPLIT_MARGIN * scale)):
        raise ModeSelectionAmbiguity(
            "axial modes do not split cleanly into decaying/growing sets; "
            "is the frequency damped (Im omega < 0)?")

    phi = V[..., :n, :]
    psi = e0 @ phi * lam[..., None, :] + e1.T @ phi
    return WaveModes(lam, phi, psi, n)


def semi_infinite_stiffness(modes: WaveModes, direction: int = 1,
                            symmetrize: bool = True):
    """Dynamic stiffness of a half-infinite prism on its single interface.

    direction +1 means the element occupies [x0, +inf); only modes decaying
    into the element survive, which is what makes the boundary absorbing.
    """
    if direction not in (1, -1):
        raise ValueError("direction must be +1 or -1")
    if direction == 1:
        S = -_mt(solve_batched(_mt(modes.phi_fwd), _mt(modes.psi_fwd)))
    else:
        S = _mt(solve_batched(_mt(modes.phi_bwd), _mt(modes.psi_bwd)))
    return (S + _mt(S)) * 0.5 if symmetrize else S


def finite_prism_stiffness(modes: WaveModes, length, symmetrize: bool = True):
    """Dynamic stiffness of a finite prism on its two end cross-sections.

    Both mode families are propagated with bounded exponentials (forward
    modes from the left end, backward modes from the right end), so the
    matrix stays well conditioned for any length.  Interface order: left
    cross-section block first, right second.
    """
    if not value(length) > 0:
        raise ValueError("prism length must be positive")
    d_fwd = _exp(modes.lam_fwd * length)      # decay left -> right
    d_bwd = _exp(-(modes.lam_bwd * length))   # decay right -> left
    phi_f, phi_b = modes.phi_fwd, modes.phi_bwd
    psi_f, psi_b = modes.psi_fwd, modes.psi_bwd

    U = dual_block2([
        [phi_f, phi_b * d_bwd[..., None, :]],
        [phi_f * d_fwd[..., None, :], phi_b],
    ])
    F = dual_block2([
        [-psi_f, -(psi_b * d_bwd[..., None, :])],
        [psi_f * d_fwd[..., None, :], psi_b],
    ])
    S = _mt(solve_batched(_mt(U), _mt(F)))
    return (S + _mt(S)) * 0.5 if symmetrize else S


@dataclass
class PrismaticElement:
    """Constant cross-section guide, finite or half infinite.

    length None marks the semi-infinite variant; direction tells which way
    it extends (+1 toward +x).
    """

    cross_section: CrossSectionMesh
    material: MaterialIso
    length: object = None
    direction: int = 1


def prismatic_stiffness(elem: PrismaticElement, omegas, symmetrize: bool = True):
    """Dynamic stiffness of a prismatic element over a frequency batch."""
    mats = coefficient_matrices(elem.cross_section, elem.material)
    modes = wave_modes(mats, omegas)
    if elem.length is None:
        return semi_infinite_stiffness(modes, elem.direction, symmetrize)
    return finite_prism_stiffness(modes, elem.length, symmetrize)


# -- polygon elements --------------------------------------------------------------


@dataclass
class PolygonMesh:
    """Chain of line elements bounding a star-convex region.

    nodes is (n, 2) (plain or Dual); elements lists node indices per segment
    in walking order.  A closed chain loops back to node 0; an open chain
    (after a double-node insertion) starts and ends on coincident but
    distinct nodes, leaving the seam toward the scaling center traction
    free.
    """

    nodes: object
    elements: np.ndarray
    degree: int
    closed: bool = True
    double_nodes: list = field(default_factory=list)

    @property
    def n_nodes(self) -> int:
        return value(self.nodes).shape[0]

    @property
    def n_dof(self) -> int:
        return 2 * self.n_nodes

    @classmethod
    def from_corners(cls, corners, subdivisions, degree: int) -> "PolygonMesh":
        """Closed boundary through the given corners (counterclockwise).

        subdivisions gives the element count of each corner-to-corner
        segment; interior nodes sit at mapped Gauss-Lobatto points.  Corner
        coordinates may be Dual scalars.
        """
        if is_dual(corners):
            corners = [[corners[i, 0], corners[i, 1]]
                       for i in range(corners.val.shape[0])]
        m = len(corners)
        if len(subdivisions) != m:
            raise ValueError("need one subdivision count per polygon side")
        basis = gauss_lobatto_basis(degree)
        fracs = ((basis.nodes + 1.0) / 2.0)[1:]  # skip segment start node

        points = [list(corners[0])]
        for s in range(m):
            a = corners[s]
            b = corners[(s + 1) % m]
            for e in range(subdivisions[s]):
                t0 = e / subdivisions[s]
                t1 = (e + 1) / subdivisions[s]
                for fr in fracs:
                    t = t0 + (t1 - t0) * fr
                    points.append([a[0] + (b[0] - a[0]) * t,
                                   a[1] + (b[1] - a[1]) * t])
        points.pop()  # chain closes onto node 0

        n_el = int(sum(subdivisions))
        p = degree
        elements = np.array([
            [(e * p + i) % (n_el * p) for i in range(p + 1)]
            for e in range(n_el)
        ])
        return cls(dual_array(points), elements, degree, closed=True)


def insert_double_node(mesh: PolygonMesh, node: int) -> PolygonMesh:
    """Duplicate a corner node shared by two adjacent boundary elements.

    The chain is rotated to start at the duplicated node, so the two copies
    become its free ends; connected through the scaling center they bound a
    traction-free seam.  DOF count grows by two.
    """
    owners = [e for e in range(mesh.elements.shape[0])
              if node in mesh.elements[e]]
    ends = [e for e in owners
            if node in (mesh.elements[e][0], mesh.elements[e][-1])]
    if not mesh.closed:
        raise InvalidNode("chain is already open; only one seam per polygon")
    if len(owners) != 2 or len(ends) != 2:
        raise InvalidNode("node must be shared by exactly two adjacent elements")

    start = next(e for e in owners if mesh.elements[e][0] == node)
    order = [(start + i) % mesh.elements.shape[0]
             for i in range(mesh.elements.shape[0])]
    elements = mesh.elements[order].copy()

    dup = mesh.n_nodes
    if is_dual(mesh.nodes):
        nodes = Dual(
            np.concatenate([mesh.nodes.val, mesh.nodes.val[[node]]], axis=0),
            np.concatenate([mesh.nodes.tan, mesh.nodes.tan[:, [node]]], axis=1))
    else:
        nodes = np.concatenate([mesh.nodes, mesh.nodes[[node]]], axis=0)
    last = elements[-1]
    last[last == node] = dup
    return PolygonMesh(nodes, elements, mesh.degree, closed=False,
                       double_nodes=mesh.double_nodes + [(node, dup)])


def polygon_coefficient_matrices(mesh: PolygonMesh, center, mat: MaterialIso):
    """Boundary-integrated coefficient matrices about the scaling center.

    Every integrand separates into a geometric scalar (possibly Dual) times
    a constant node-pattern matrix, which keeps the assembly generic in the
    tangents.  Star-convexity is enforced through the sign of the boundary
    Jacobian at every quadrature point.
    """
    basis = gauss_lobatto_basis(mesh.degree)
    D = mat.elasticity
    K11 = B1_OP.T @ D @ B1_OP
    K12 = B1_OP.T @ D @ B2_OP
    K21 = K12.T
    K22 = B2_OP.T @ D @ B2_OP
    w, L = basis.weights, basis.derivs
    p1 = mesh.degree + 1
    nd_ = mesh.n_dof

    xs = mesh.nodes[:, 0] - center[0]
    ys = mesh.nodes[:, 1] - center[1]

    e0 = e1 = e2 = 0.0
    m0 = 0.0
    eye2 = np.eye(2)
    for ei, conn in enumerate(mesh.elements):
        xe, ye = xs[conn], ys[conn]
        loc0 = loc1 = loc2 = locm = 0.0
        for q in range(p1):
            x, y = xe[q], ye[q]
            xp = L[q] @ xe
            yp = L[q] @ ye
            jac = x * yp - y * xp
            if not value(jac) > 0:
                raise StarConvexityViolation(
                    f"boundary element {ei} is not visible from the scaling "
                    f"center (jacobian {complex(value(jac)).real:.3e})")
            eq = np.outer(np.eye(p1)[q], np.eye(p1)[q])
            lq = np.outer(L[q], np.eye(p1)[q])
            ll = np.outer(L[q], L[q])
            # radial strain operator: y' B1 - x' B2; circumferential: -y B1 + x B2
            loc0 = loc0 + (w[q] / jac) * (
                yp * yp * np.kron(eq, K11) - yp * xp * np.kron(eq, K12 + K21)
                + xp * xp * np.kron(eq, K22))
            loc1 = loc1 + (w[q] / jac) * (
                -(y * yp) * np.kron(lq, K11) + (y * xp) * np.kron(lq, K12)
                + (x * yp) * np.kron(lq, K21) - (x * xp) * np.kron(lq, K22))
            loc2 = loc2 + (w[q] / jac) * (
                y * y * np.kron(ll, K11) - x * y * np.kron(ll, K12 + K21)
                + x * x * np.kron(ll, K22))
            locm = locm + (w[q] * jac * mat.rho) * np.kron(eq, eye2)
        dof_idx = np.stack([2 * conn, 2 * conn + 1], axis=1).ravel()
        P = np.zeros((dof_idx.size, nd_))
        P[np.arange(dof_idx.size), dof_idx] = 1.0
        e0 = e0 + P.T @ loc0 @ P
        e1 = e1 + P.T @ loc1 @ P
        e2 = e2 + P.T @ loc2 @ P
        m0 = m0 + P.T @ locm @ P
    return e0, e1, e2, m0


def polygon_static_stiffness(e0, e1, e2):
    """Static boundary stiffness of the scaled polygon.

    Power solutions u ~ xi^lambda of the radial equation give a quadratic
    eigenproblem whose bounded branch (Re lambda > 0 plus the two rigid
    translations, which sit in a defective zero cluster) assembles the
    stiffness.  That construction solves the algebraic Riccati equation
    (K - e1) e0^{-1} (K - e1') = e2 on the stabilizing branch while staying
    robust to the rigid-mode degeneracy.  Tangents come from implicit
    differentiation of the Riccati equation in the eigenbasis of
    L = e0^{-1}(K - e1'), with the translation-pair entries pinned to zero
    (rigid modes carry no force for any geometry).
    """
    e0v, e1v, e2v = value(e0), value(e1), value(e2)
    n = e0v.shape[0]
    G = np.linalg.inv(e0v)
    Z = np.block([
        [-G @ e1v.T, G],
        [e2v - e1v @ G @ e1v.T, e1v @ G],
    ])
    dec = eig_right(Z, compute_condition=False)
    lam, V = dec.eigenvalues, dec.eigenvectors

    rigid = np.abs(lam) < RIGID_TOL
    if np.count_nonzero(rigid) != 4:
        raise SelectionAmbiguity(
            f"expected a rigid cluster of 4 exponents, found "
            f"{np.count_nonzero(rigid)}")
    pos = (~rigid) & (lam.real > 0)
    if np.count_nonzero(pos) != n - 2:
        raise SelectionAmbiguity(
            f"expected {n - 2} bounded exponents, found {np.count_nonzero(pos)}")

    t_x = np.zeros(n)
    t_x[0::2] = 1.0
    t_y = np.zeros(n)
    t_y[1::2] = 1.0
    Phi = np.column_stack([V[:n, pos], t_x, t_y])
    Psi = np.column_stack([V[n:, pos], np.zeros((n, 2))])
    K = np.linalg.solve(Phi.T, Psi.T).T
    K = 0.5 * (K + K.T)
    if np.abs(K.imag).max() > 1e-8 * np.abs(K.real).max():
        raise SelectionAmbiguity("static stiffness came out non-real")
    K = K.real

    resid = np.linalg.norm((K - e1v) @ G @ (K - e1v.T) - e2v)
    if resid > 1e-8 * np.linalg.norm(e2v):
        raise SelectionAmbiguity(
            f"static stiffness residual {resid:.3e} exceeds tolerance")

    if not (is_dual(e0) or is_dual(e1) or is_dual(e2)):
        return K

    ndir = next(m.ndir for m in (e0, e1, e2) if is_dual(m))
    dE0 = tangent(e0, ndir)
    dE1 = tangent(e1, ndir)
    dE2 = tangent(e2, ndir)
    Lc = G @ (K - e1v.T)
    dl, Vl = np.linalg.eig(Lc)
    # implicit differentiation of the Riccati equation:
    # L' dK + dK L = dE2 + dE1 L + L' dE1' + L' dE0 L
    rhs = dE2 + dE1 @ Lc + Lc.T @ np.swapaxes(dE1, -1, -2) + Lc.T @ dE0 @ Lc
    Ct = np.swapaxes(Vl, -1, -2) @ rhs @ Vl     # V' C V per direction
    den = dl[:, None] + dl[None, :]
    dead = np.abs(den) < 1e-6
    if np.any(np.abs(Ct[:, dead]) > 1e-6 * max(np.abs(Ct).max(), 1e-30)):
        raise SingularPairing(
            "nonzero tangent load on a rigid translation pair")
    den = np.where(dead, 1.0, den)
    Xt = np.where(dead, 0.0, Ct / den)
    Vl_invT = np.linalg.inv(Vl).T
    dK = Vl_invT @ Xt @ Vl_invT.T
    dK = 0.5 * (dK + np.swapaxes(dK, -1, -2))
    if np.abs(dK.imag).max() > 1e-6 * max(np.abs(dK.real).max(), 1e-30):
        raise SingularPairing("stiffness tangent came out non-real")
    return Dual(K, dK.real)


@dataclass
class PolygonOperator:
    """Frequency expansion of a polygon's dynamic stiffness.

    stiffness(omega) = k_static - sum_j (omega/omega_ref)^(2(j+1)) w_terms[j];
    the coefficients are frequency independent, so a geometry is expanded
    once and evaluated at any number of frequencies for free.
    """

    k_static: object
    w_terms: list
    omega_ref: float

    def stiffness(self, omegas):
        omegas = np.atleast_1d(np.asarray(omegas, dtype=complex))
        r2 = (omegas / self.omega_ref) ** 2
        # stack the coefficients once so the whole series collapses into a
        # single (n_bins, J) x (J, m*m) product instead of J broadcast passes
        powers = r2[:, None] ** np.arange(1, len(self.w_terms) + 1)
        Wv = np.stack([value(w) for w in self.w_terms])
        Sv = value(self.k_static) - np.tensordot(powers, Wv, axes=1)
        ndir = max(nd(self.k_static), max(nd(w) for w in self.w_terms))
        if ndir == 0:
            return Sv
        Kt = tangent(self.k_static, ndir)
        Wt = [tangent(w, ndir) for w in self.w_terms]
        St = np.empty((ndir,) + Sv.shape, dtype=complex)
        for k in range(ndir):
            St[k] = Kt[k] - np.tensordot(
                powers, np.stack([w[k] for w in Wt]), axes=1)
        return Dual(Sv, St)


def polygon_operator(e0, e1, e2, m0, cf_order: int = DEFAULT_CF_ORDER,
                     omega_ref: float = 2 * np.pi * 200e3) -> PolygonOperator:
    """Expand the polygon dynamic stiffness about omega = 0.

    The static term solves the scaled-boundary Riccati equation; each
    frequency-power coefficient then solves one shifted Lyapunov equation

        (L' + (j+1) I) W_j + W_j (L + (j+1) I) = d_{j0} M0 + sum W_a G W_b

    (a + b = j - 1), all sharing L = e0^{-1}(K - e1').  Coefficients are
    stored against the reference frequency to keep their magnitudes tame.
    """
    if cf_order < 1:
        raise ValueError("expansion order must be at least 1")
    K = polygon_static_stiffness(e0, e1, e2)
    eye = np.eye(value(e0).shape[0])
    G = solve_batched(e0, eye)
    L = G @ (K - _mt(e1))
    terms = []
    for j in range(cf_order):
        rhs = omega_ref**2 * m0 if j == 0 else 0.0
        for a in range(j):
            b = j - 1 - a
            rhs = rhs + terms[a] @ G @ terms[b]
        A = L + (j + 1) * eye
        terms.append(solve_sylvester_t(A, -1.0 * rhs))
    return PolygonOperator(K, terms, omega_ref)


@dataclass
class PolygonElement:
    """Star-convex polygon super element."""

    mesh: PolygonMesh
    scaling_center: object
    material: MaterialIso
    cf_order: int = DEFAULT_CF_ORDER
    omega_ref: float = 2 * np.pi * 200e3

    def operator(self) -> PolygonOperator:
        e0, e1, e2, m0 = polygon_coefficient_matrices(
            self.mesh, self.scaling_center, self.material)
        return polygon_operator(e0, e1, e2, m0, self.cf_order, self.omega_ref)


def polygon_stiffness(elem: PolygonElement, omegas, symmetrize: bool = True):
    """Dynamic stiffness of a polygon element over a frequency batch."""
    S = elem.operator().stiffness(omegas)
    return (S + _mt(S)) * 0.5 if symmetrize else S
