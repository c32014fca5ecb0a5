"""Cross-section discretization of the plate waveguide.

A waveguide cross-section is a line mesh through the thickness (the y
direction), discretized with spectral Lagrange elements on Gauss-Lobatto
nodes.  This module generates the four coefficient matrices that the wave
elements are built from (axial stiffness, coupling, transverse stiffness,
mass) and provides dispersion and group-velocity analysis of the pristine
guide.

Node coordinates may carry forward-mode tangents (Dual), in which case the
coefficient matrices do too; this is how geometry derivatives of thinned
cross-sections reach the forward operator.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial import legendre

from .dual import is_dual, value
from .errors import DegenerateElement, ModeNotPropagating, ModeTrackingLoss

__all__ = [
    "MaterialIso",
    "gauss_lobatto_basis",
    "CrossSectionMesh",
    "CrossSectionMatrices",
    "coefficient_matrices",
    "state_matrix",
    "DispersionTable",
    "dispersion",
    "group_velocity_at",
]

MAX_DEGREE = 20

# Strain composition for plane problems with x the propagation direction and
# y the through-thickness direction: eps = b1 du/dx + b2 du/dy for the strain
# ordering (eps_xx, eps_yy, gamma_xy).
B1_OP = np.array([[1.0, 0.0], [0.0, 0.0], [0.0, 1.0]])
B2_OP = np.array([[0.0, 0.0], [0.0, 1.0], [1.0, 0.0]])


@dataclass(frozen=True)
class MaterialIso:
    """Isotropic linear-elastic material (plane strain throughout)."""

    E: float
    nu: float
    rho: float

    def __post_init__(self):
        if not self.E > 0:
            raise ValueError("Young's modulus must be positive")
        if not 0.0 <= self.nu < 0.5:
            raise ValueError("Poisson ratio must lie in [0, 0.5)")
        if not self.rho > 0:
            raise ValueError("density must be positive")

    @property
    def elasticity(self) -> np.ndarray:
        """Plane-strain elasticity matrix for (eps_xx, eps_yy, gamma_xy)."""
        E, nu = self.E, self.nu
        c = E / ((1.0 + nu) * (1.0 - 2.0 * nu))
        return c * np.array([
            [1.0 - nu, nu, 0.0],
            [nu, 1.0 - nu, 0.0],
            [0.0, 0.0, 0.5 * (1.0 - 2.0 * nu)],
        ])

    @property
    def c_longitudinal(self) -> float:
        lam = self.E * self.nu / ((1.0 + self.nu) * (1.0 - 2.0 * self.nu))
        mu = 0.5 * self.E / (1.0 + self.nu)
        return np.sqrt((lam + 2.0 * mu) / self.rho)

    @property
    def c_transverse(self) -> float:
        mu = 0.5 * self.E / (1.0 + self.nu)
        return np.sqrt(mu / self.rho)


@dataclass(frozen=True)
class LobattoBasis:
    """Gauss-Lobatto nodes, quadrature weights and nodal differentiation."""

    degree: int
    nodes: np.ndarray     # (p+1,) on [-1, 1]
    weights: np.ndarray   # (p+1,) quadrature weights at the nodes
    values: np.ndarray    # (p+1, p+1) basis j evaluated at node q
    derivs: np.ndarray    # (p+1, p+1) d(basis j)/dxi at node q


def gauss_lobatto_basis(degree: int) -> LobattoBasis:
    """Lagrange basis on the Gauss-Lobatto points of given degree.

    Quadrature uses the same p+1 points (the spectral convention), so the
    returned ``values`` array is the identity and products of two basis
    functions integrate to a diagonal, i.e. mass matrices come out lumped.
    """
    p = int(degree)
    if p < 1:
        raise ValueError("degree must be at least 1")
    if p > MAX_DEGREE:
        raise ValueError(f"degree {p} exceeds supported maximum {MAX_DEGREE}")

    if p == 1:
        nodes = np.array([-1.0, 1.0])
    else:
        # interior nodes are the roots of P_p'
        cp = np.zeros(p + 1)
        cp[p] = 1.0
        interior = legendre.legroots(legendre.legder(cp))
        nodes = np.concatenate(([-1.0], np.sort(interior.real), [1.0]))

    cp = np.zeros(p + 1)
    cp[p] = 1.0
    pn = legendre.legval(nodes, cp)
    weights = 2.0 / (p * (p + 1) * pn**2)

    # barycentric differentiation matrix at the nodes
    diff = nodes[:, None] - nodes[None, :]
    np.fill_diagonal(diff, 1.0)
    bary = 1.0 / np.prod(diff, axis=1)
    D = np.zeros((p + 1, p + 1))
    for q in range(p + 1):
        for i in range(p + 1):
            if i != q:
                D[q, i] = (bary[i] / bary[q]) / (nodes[q] - nodes[i])
        D[q, q] = -np.sum(D[q])

    return LobattoBasis(p, nodes, weights, np.eye(p + 1), D)


@dataclass
class CrossSectionMesh:
    """Line mesh through the plate thickness.

    ``node_y`` holds nodal y positions (possibly with Dual tangents),
    ``elements`` the per-element node indices in ascending local order, and
    ``double_nodes`` records (original, duplicate) pairs that split the
    section into disconnected faces (used for delaminated regions).
    """

    node_y: object
    elements: np.ndarray
    degree: int
    double_nodes: list = field(default_factory=list)

    @property
    def n_nodes(self) -> int:
        return value(self.node_y).shape[0]

    @property
    def n_dof(self) -> int:
        return 2 * self.n_nodes

    @classmethod
    def uniform(cls, y_bottom, y_top, n_elements: int, degree: int,
                split_at=()) -> "CrossSectionMesh":
        """Equal-length elements between y_bottom and y_top.

        ``split_at`` lists y values (matching element boundaries) where the
        node is duplicated; elements above the split reference the copy.
        """
        basis = gauss_lobatto_basis(degree)
        p = degree
        t = np.linspace(0.0, 1.0, n_elements + 1)
        # element-local Gauss-Lobatto points mapped to [0, 1] per element
        coords = []
        for e in range(n_elements):
            frac = t[e] + (t[e + 1] - t[e]) * 0.5 * (basis.nodes + 1.0)
            coords.append(frac if e == 0 else frac[1:])
        frac_all = np.concatenate(coords)
        node_y = y_bottom + (y_top - y_bottom) * frac_all

        elements = np.array([
            [e * p + i for i in range(p + 1)] for e in range(n_elements)
        ])

        mesh = cls(node_y, elements, degree)
        y_val = value(node_y)
        span = abs(y_val[-1] - y_val[0])
        for ys in split_at:
            hits = np.nonzero(np.abs(y_val[elements[:, 0]] - ys) < 1e-9 * span)[0]
            if hits.size == 0:
                raise ValueError(f"split position {ys} is not an element boundary")
            mesh = mesh.split_node(elements[hits[0], 0])
        return mesh

    def split_node(self, node: int) -> "CrossSectionMesh":
        """Duplicate a shared node so the mesh separates into two faces."""
        owners = [e for e in range(self.elements.shape[0])
                  if node in self.elements[e]]
        if len(owners) != 2:
            raise ValueError("only a node shared by exactly two elements can split")
        dup = self.n_nodes
        if is_dual(self.node_y):
            node_y = np.concatenate([self.node_y.val, self.node_y.val[[node]]])
            tan = np.concatenate([self.node_y.tan, self.node_y.tan[:, [node]]],
                                 axis=1)
            from .dual import Dual
            node_y = Dual(node_y, tan)
        else:
            node_y = np.concatenate([self.node_y, [self.node_y[node]]])
        elements = self.elements.copy()
        upper = max(owners, key=lambda e: value(self.node_y)[elements[e]].mean())
        elements[upper][elements[upper] == node] = dup
        return CrossSectionMesh(node_y, elements, self.degree,
                                self.double_nodes + [(node, dup)])


@dataclass
class CrossSectionMatrices:
    """Coefficient matrices of the cross-section.

    e0: axial stiffness, e1: axial/transverse coupling, e2: transverse
    stiffness, m0: mass.  All are (2n, 2n) with the (ux, uy) dof pair per
    node; Dual-valued when the mesh geometry carries tangents.
    """

    e0: object
    e1: object
    e2: object
    m0: object
    n_dof: int


def _gather(n_local, n_global, idx):
    P = np.zeros((n_local, n_global))
    P[np.arange(n_local), idx] = 1.0
    return P


def coefficient_matrices(mesh: CrossSectionMesh, mat: MaterialIso) -> CrossSectionMatrices:
    """Assemble the four cross-section coefficient matrices.

    The integrands live on the line mesh: with N the nodal basis and D the
    elasticity matrix,

        e0 = int (b1 N)' D (b1 N) dy        e1 = int (b2 N,y)' D (b1 N) dy
        e2 = int (b2 N,y)' D (b2 N,y) dy    m0 = int rho N' N dy

    evaluated with Gauss-Lobatto quadrature on the basis nodes, which makes
    e0 and m0 block diagonal (lumped).
    """
    basis = gauss_lobatto_basis(mesh.degree)
    D = mat.elasticity
    k_e0 = B1_OP.T @ D @ B1_OP   # diag(lambda + 2 mu, mu)
    k_e1 = B2_OP.T @ D @ B1_OP   # [[0, mu], [lambda, 0]]
    k_e2 = B2_OP.T @ D @ B2_OP   # diag(mu, lambda + 2 mu)

    w = basis.weights
    L = basis.derivs             # L[q, i] = dN_i/dxi at node q
    n_dof = mesh.n_dof

    # element matrices split by their Jacobian power so Dual geometry flows
    # through as scalar factors: e0, m0 ~ J, e1 ~ J^0, e2 ~ 1/J
    e0_u = np.kron(np.diag(w), k_e0)
    m0_u = np.kron(np.diag(w), np.eye(2)) * mat.rho
    e1_u = np.kron(L.T * w[None, :], k_e1)        # sum_q w_q L[q,i] delta_qj
    e2_u = np.kron(L.T @ np.diag(w) @ L, k_e2)

    e0 = e1 = e2 = m0 = 0.0
    for conn in mesh.elements:
        y = mesh.node_y[conn]
        jac = (y[-1] - y[0]) / 2.0
        if not value(jac) > 0.0:
            raise DegenerateElement(
                f"element with nodes {conn.tolist()} has nonpositive length")
        dof_idx = np.stack([2 * conn, 2 * conn + 1], axis=1).ravel()
        P = _gather(dof_idx.size, n_dof, dof_idx)
        e0 = e0 + P.T @ (jac * e0_u) @ P
        m0 = m0 + P.T @ (jac * m0_u) @ P
        e1 = e1 + P.T @ e1_u @ P
        e2 = e2 + P.T @ ((1.0 / jac) * e2_u) @ P

    return CrossSectionMatrices(e0, e1, e2, m0, n_dof)


def state_matrix(mats: CrossSectionMatrices, omega) -> np.ndarray:
    """First-order form of the guided-wave eigenproblem at one frequency.

    Modes u(x) = phi exp(lambda x) of the cross-section wave equation are
    eigenpairs of the returned 2n x 2n matrix; the lower block row encodes
    e0 u'' + (e1' - e1) u' - (e2 - omega^2 m0) u = 0.
    """
    e0, e1, e2, m0 = mats.e0, mats.e1, mats.e2, mats.m0
    n = mats.n_dof
    e0v = value(e0)
    e0_inv = np.linalg.inv(e0v)
    if is_dual(e0):
        from .dual import Dual
        tan = np.stack([-e0_inv @ t @ e0_inv for t in e0.tan])
        e0_inv = Dual(e0_inv, tan)
    zero = np.zeros((n, n))
    eye = np.eye(n)
    lower_left = e0_inv @ (e2 - omega**2 * m0)
    lower_right = -(e0_inv @ (e1.T - e1))
    if is_dual(lower_left) or is_dual(lower_right):
        from .dual import Dual
        ll, lr = lower_left, lower_right
        if not is_dual(ll):
            ll = Dual(ll, np.zeros((lr.ndir,) + ll.shape, complex))
        if not is_dual(lr):
            lr = Dual(lr, np.zeros((ll.ndir,) + lr.shape, complex))
        val = np.block([[zero, eye], [ll.val, lr.val]])
        tan = np.stack([
            np.block([[zero, zero], [ll.tan[k], lr.tan[k]]])
            for k in range(ll.ndir)
        ])
        return Dual(val, tan)
    return np.block([[zero, eye], [lower_left, lower_right]])


# -- Dispersion analysis --------------------------------------------------------


@dataclass
class DispersionTable:
    """Propagating-mode kinematics over a frequency sweep.

    Per frequency: real wavenumbers k > 0, phase velocities omega/k, group
    velocities domega/dk, and labels from {S0, A0, higher}.
    """

    frequencies: np.ndarray
    wavenumbers: list
    phase_velocities: list
    group_velocities: list
    labels: list

    def rows(self):
        """Flat (frequency, label, k, c_phase, c_group) records."""
        out = []
        for i, f in enumerate(self.frequencies):
            for j, lab in enumerate(self.labels[i]):
                out.append((float(f), lab, float(self.wavenumbers[i][j]),
                            float(self.phase_velocities[i][j]),
                            float(self.group_velocities[i][j])))
        return out


def _mirror_permutation(node_y: np.ndarray) -> np.ndarray:
    """Index map sending each node to its mid-plane mirror image."""
    mid = 0.5 * (node_y.min() + node_y.max())
    span = node_y.max() - node_y.min()
    perm = np.full(node_y.shape[0], -1, dtype=int)
    for i, y in enumerate(node_y):
        target = 2.0 * mid - y
        j = np.argmin(np.abs(node_y - target))
        if abs(node_y[j] - target) > 1e-9 * span:
            raise ModeTrackingLoss(
                "cross-section mesh is not mirror symmetric about the mid-plane")
        perm[i] = j
    return perm


def _symmetry_label(phi: np.ndarray, perm: np.ndarray) -> str:
    """Classify a mode shape as symmetric or antisymmetric about mid-plane.

    Under the mirror map y -> -y a symmetric (S) Lamb mode has even ux and
    odd uy; antisymmetric (A) is the reverse.
    """
    n = perm.shape[0]
    mirrored = np.empty_like(phi)
    mirrored[2 * perm] = phi[2 * np.arange(n)]
    mirrored[2 * perm + 1] = -phi[2 * np.arange(n) + 1]
    scale = np.linalg.norm(phi)
    s_sym = np.linalg.norm(mirrored - phi) / scale
    s_anti = np.linalg.norm(mirrored + phi) / scale
    if s_sym < 0.1 * s_anti:
        return "S"
    if s_anti < 0.1 * s_sym:
        return "A"
    raise ModeTrackingLoss(
        f"mode symmetry ambiguous (residuals {s_sym:.3e} / {s_anti:.3e})")


def dispersion(mesh: CrossSectionMesh, mat: MaterialIso, frequencies) -> DispersionTable:
    """Propagating modes of the pristine guide over a list of frequencies.

    Solves the cross-section eigenproblem at each (real) frequency, keeps
    modes with real positive wavenumber, and labels the fundamental pair by
    mid-plane symmetry; any further propagating modes are labeled 'higher'.
    Group velocities come from the paired-mode perturbation formula, which
    is exact for the discrete problem.
    """
    frequencies = np.atleast_1d(np.asarray(frequencies, dtype=float))
    if np.any(frequencies <= 0):
        raise ValueError("frequencies must be positive")
    mats = coefficient_matrices(mesh, mat)
    perm = _mirror_permutation(value(mesh.node_y))
    e0, e1, m0 = value(mats.e0), value(mats.e1), value(mats.m0)
    n = mats.n_dof

    ks, cps, cgs, labs = [], [], [], []
    for f in frequencies:
        omega = 2.0 * np.pi * f
        A = state_matrix(mats, omega)
        lam, V = np.linalg.eig(A)
        scale = np.abs(lam).max()
        prop = (np.abs(lam.real) < 1e-6 * scale) & (lam.imag > 1e-9 * scale)

        k_f, cp_f, cg_f, lab_f = [], [], [], []
        order = np.argsort(-lam.imag[prop])
        idx_prop = np.nonzero(prop)[0][order]
        for idx in idx_prop:
            k = lam[idx].imag
            phi = V[:n, idx]
            # paired mode at -lambda supplies the left eigenvector
            jdx = np.argmin(np.abs(lam + lam[idx]))
            phi_m = V[:n, jdx]
            num = phi_m @ m0 @ phi
            den = phi_m @ ((2.0 * lam[idx]) * e0 + e1.T - e1) @ phi
            dlam_domega = -2.0 * omega * num / den
            dk_domega = (-1j * dlam_domega).real
            cg = 1.0 / dk_domega
            k_f.append(k)
            cp_f.append(omega / k)
            cg_f.append(cg)
            lab_f.append(_symmetry_label(phi, perm))

        # fundamental mode = largest wavenumber within each symmetry family
        chosen = {}
        for fam in ("S", "A"):
            members = [i for i, s in enumerate(lab_f) if s == fam]
            if members:
                chosen[fam] = max(members, key=lambda i: k_f[i])
        out_labels = [f"{s}0" if chosen.get(s) == i else "higher"
                      for i, s in enumerate(lab_f)]

        ks.append(np.array(k_f))
        cps.append(np.array(cp_f))
        cgs.append(np.array(cg_f))
        labs.append(out_labels)

    return DispersionTable(frequencies, ks, cps, cgs, labs)


def group_velocity_at(table: DispersionTable, mode: str, f: float) -> float:
    """Group velocity of a labeled mode at frequency f, linearly interpolated."""
    freqs = table.frequencies
    pts = []
    for i, fi in enumerate(freqs):
        if mode in table.labels[i]:
            j = table.labels[i].index(mode)
            pts.append((fi, table.group_velocities[i][j]))
    if not pts:
        raise ModeNotPropagating(f"mode {mode} not present in the table")
    pf = np.array([p[0] for p in pts])
    pc = np.array([p[1] for p in pts])
    if f < pf.min() - 1e-9 or f > pf.max() + 1e-9:
        raise ModeNotPropagating(
            f"mode {mode} not tabulated as propagating at {f} Hz")
    cg = float(np.interp(f, pf, pc))
    if cg <= 0:
        raise ModeNotPropagating(f"mode {mode} has nonpositive group velocity at {f} Hz")
    return cg
