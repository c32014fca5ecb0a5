"""Global system assembly and per-frequency solves.

A model is a flat list of super elements, each carrying a stiffness provider
and the global DOF indices of its interface/boundary nodes.  Assembly is a
dense scatter-add (systems here stay in the low hundreds of DOFs); solves are
batched over frequency bins.
"""

import numpy as np
from dataclasses import dataclass

from .dual import Dual, is_dual, value
from .errors import DofMismatch, SingularSystem

__all__ = ["ElementBlock", "ModelGraph", "assemble", "assemble_batch",
           "solve_frequency", "solve_batch", "condense"]


@dataclass
class ElementBlock:
    """One super element mapped into the global system.

    stiffness is a callable (omegas) -> (nb, m, m) returning the dynamic
    stiffness on the element's own DOFs; dofs maps those onto global indices.
    """

    stiffness: object
    dofs: np.ndarray
    label: str = ""
    element: object = None


@dataclass
class ModelGraph:
    """Scattered super elements plus excitation and observation metadata.

    load is the consistent nodal load template of the traction patch (unit
    traction amplitude); the frequency content multiplies it later.  sensor
    is the observed global DOF (a y-displacement by convention).
    """

    elements: list
    dof_count: int
    load: np.ndarray
    sensor: int
    node_xy: np.ndarray = None

    def __post_init__(self):
        for el in self.elements:
            d = np.asarray(el.dofs)
            if d.min() < 0 or d.max() >= self.dof_count:
                raise DofMismatch(
                    f"element '{el.label}' references DOFs outside the "
                    f"global range 0..{self.dof_count - 1}")
        if not 0 <= self.sensor < self.dof_count:
            raise DofMismatch("sensor DOF outside the global range")
        if self.load.shape != (self.dof_count,):
            raise DofMismatch("load template length does not match dofCount")


def glue_nodes(xy_a, xy_b, tol=1e-9):
    """Verify two interface node sets coincide; return the a->b permutation."""
    xy_a, xy_b = np.asarray(xy_a, float), np.asarray(xy_b, float)
    if xy_a.shape != xy_b.shape:
        raise DofMismatch(
            f"interface node counts differ: {xy_a.shape[0]} vs {xy_b.shape[0]}")
    perm = []
    for p in xy_a:
        d = np.linalg.norm(xy_b - p, axis=1)
        j = int(np.argmin(d))
        if d[j] > tol:
            raise DofMismatch(
                f"interface nodes misaligned by {d[j]:.3e} at {p}")
        perm.append(j)
    if len(set(perm)) != len(perm):
        raise DofMismatch("interface node matching is not one-to-one")
    return np.array(perm)


def assemble_batch(model: ModelGraph, omegas):
    """Global dynamic stiffness for a batch of frequencies, (nb, n, n)."""
    omegas = np.atleast_1d(np.asarray(omegas, dtype=complex))
    nb, n = omegas.shape[0], model.dof_count
    out = np.zeros((nb, n, n), dtype=complex)
    tans = None
    for el in model.elements:
        S = el.stiffness(omegas)
        idx = np.ix_(range(nb), el.dofs, el.dofs)
        out[idx] += value(S)
        if is_dual(S):
            if tans is None:
                tans = np.zeros((S.ndir, nb, n, n), dtype=complex)
            tans[(slice(None),) + idx] += S.tan
    if tans is None:
        return out
    return Dual(out, tans)


def assemble(model: ModelGraph, omega):
    """Global stiffness at a single frequency plus the load template."""
    S = assemble_batch(model, [omega])
    return S[0], model.load.copy()


def solve_batch(model: ModelGraph, omegas, rhs=None):
    """Displacement solutions for all frequencies at once, (nb, n)."""
    S = assemble_batch(model, omegas)
    nb = value(S).shape[0]
    if rhs is None:
        rhs = np.broadcast_to(model.load.astype(complex),
                              (nb, model.dof_count))
    try:
        if is_dual(S) or is_dual(rhs):
            from .linalg import solve_batched
            u = solve_batched(S, _as_col(rhs))
            return u[..., 0]
        return np.linalg.solve(S, rhs[..., None])[..., 0]
    except np.linalg.LinAlgError as exc:
        raise SingularSystem(f"frequency sweep solve failed: {exc}") from exc


def _as_col(rhs):
    if is_dual(rhs):
        return rhs.reshape(rhs.val.shape + (1,))
    return rhs[..., None]


def solve_frequency(model: ModelGraph, omega, tau):
    """Sensor displacement at one frequency, scaled by the excitation."""
    u = solve_batch(model, [omega])
    return tau * u[..., 0, model.sensor]


def condense(S, f, keep):
    """Schur-eliminate all DOFs outside `keep` from S u = f, batched.

    Returns (S_kk - S_ki S_ii^{-1} S_ik, f_k - S_ki S_ii^{-1} f_i); exact for
    any partition because the eliminated DOFs carry no external coupling.
    """
    n = S.shape[-1]
    keep = np.asarray(keep)
    drop = np.setdiff1d(np.arange(n), keep)
    S_kk = S[..., keep[:, None], keep[None, :]]
    S_ki = S[..., keep[:, None], drop[None, :]]
    S_ii = S[..., drop[:, None], drop[None, :]]
    S_ik = S[..., drop[:, None], keep[None, :]]
    f_k = f[..., keep]
    f_i = f[..., drop]
    X = np.linalg.solve(S_ii, np.concatenate([S_ik, f_i[..., None]], axis=-1))
    S_red = S_kk - S_ki @ X[..., :-1]
    f_red = f_k - (S_ki @ X[..., -1:])[..., 0]
    return S_red, f_red
