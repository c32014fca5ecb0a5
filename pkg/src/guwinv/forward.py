"""The forward operator F: scaled defect parameters -> envelope at the sensor.

The pipeline per evaluation is: scale q, rebuild the defect geometry, sweep
the relevant damped frequencies, multiply by the excitation spectrum,
transform back and take the envelope.  Everything that does not depend on q
is computed once per (template, config) pair and reused:

  * the excitation spectrum and its relevant frequency bins,
  * the axial modes of the pristine cross-section at those frequencies,
  * the entire region left of the sensor, condensed onto the sensor
    interface (the defect only ever sits to the right),
  * the absorbing boundary behind the defect.

Tangent seeds ride through the same code path, so the Jacobian costs one
extra right-hand side per parameter instead of d extra sweeps.
"""

import logging
from dataclasses import dataclass, replace
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import scenarios
from .assembly import condense, solve_batch
from .crosssection import coefficient_matrices
from .dual import Dual, dual_concat, is_dual, value
from .elements import (PolygonElement, PrismaticElement, WaveModes,
                       finite_prism_stiffness, polygon_stiffness,
                       semi_infinite_stiffness, wave_modes)
from .errors import NearDefectiveSpectrum
from .linalg import solve_batched
from .scenarios import LEFT_LABELS, build_model, scale_params
from .signal import (EnvelopeSignal, EwmSpectrum, TimeGrid, TimeSignal,
                     envelope, ewm_forward, ewm_inverse, excitation_pulse)

__all__ = ["SimConfig", "ForwardOperator", "forward", "jacobian"]

log = logging.getLogger(__name__)

RETRY_SHIFTS = (1e-9, 3e-9)    # relative omega bumps around eigenvalue collisions


@dataclass(frozen=True)
class SimConfig:
    """Simulation settings shared by forward and Jacobian evaluations."""

    grid: TimeGrid = TimeGrid()
    carrier: float = 200e3       # excitation center frequency [Hz]
    t_center: float = None       # pulse center; None -> 5 periods
    eta: float = None            # EWM damping; None -> grid default
    threshold: float = 1e-3      # spectral relevance cutoff
    window_start: float = None   # objective window; None -> excitation end
    threads: int = 1

    @property
    def pulse_center(self) -> float:
        return 5.0 / self.carrier if self.t_center is None else self.t_center

    @property
    def excitation_end(self) -> float:
        """The excitation has decayed to ~3e-4 of its peak past this time."""
        return self.pulse_center + 4.0 / self.carrier

    @property
    def objective_start(self) -> float:
        return (self.excitation_end if self.window_start is None
                else self.window_start)


def _modes_with_retry(mats, omegas):
    """Axial modes over a frequency batch, nudging bins that hit collisions."""
    omegas = np.atleast_1d(np.asarray(omegas, dtype=complex))
    try:
        return wave_modes(mats, omegas)
    except NearDefectiveSpectrum:
        pass
    parts = []
    for i, w in enumerate(omegas):
        for shift in (0.0,) + RETRY_SHIFTS:
            try:
                parts.append(wave_modes(mats, [w * (1.0 + shift)]))
                if shift:
                    log.warning("eigenvalue collision at bin %d; retried with "
                                "relative shift %g", i, shift)
                break
            except NearDefectiveSpectrum:
                if shift == RETRY_SHIFTS[-1]:
                    raise
    n = parts[0].n
    return WaveModes(dual_concat([p.lam for p in parts], axis=0),
                     dual_concat([p.phi for p in parts], axis=0),
                     dual_concat([p.psi for p in parts], axis=0), n)


def _live_dirs(*parts):
    """Global tangent directions that are actually nonzero in any input."""
    mask = None
    for p in parts:
        if is_dual(p):
            hit = np.any(p.tan.reshape(p.ndir, -1) != 0, axis=1)
            mask = hit if mask is None else mask | hit
    return None if mask is None else np.flatnonzero(mask)


def _narrow(x, dirs):
    """Copy of ``x`` keeping only the listed tangent directions."""
    if not is_dual(x):
        return x
    return x.val if dirs.size == 0 else Dual(x.val, x.tan[dirs])


def _widen(x, src, dst):
    """Re-embed a dual narrowed to ``src`` into the direction set ``dst``."""
    if not is_dual(x) or np.array_equal(src, dst):
        return x
    tan = np.zeros((dst.size,) + x.val.shape, dtype=x.tan.dtype)
    tan[np.searchsorted(dst, src)] = x.tan
    return Dual(x.val, tan)


def _solve_chunked(S, rhs, threads):
    """Per-bin solves, optionally fanned out over a thread pool.

    The bins are independent and each result lands in its own slot, so the
    output is bit-identical for any worker count.
    """
    if threads <= 1 or value(S).shape[0] < 2 * threads:
        return solve_batched(S, rhs)
    nb = value(S).shape[0]
    bounds = np.linspace(0, nb, threads + 1).astype(int)
    chunks = [slice(a, b) for a, b in zip(bounds[:-1], bounds[1:]) if b > a]

    def run(sl):
        return solve_batched(S[sl], rhs[sl])

    with ThreadPoolExecutor(max_workers=threads) as pool:
        results = list(pool.map(run, chunks))
    if any(is_dual(r) for r in results):
        return dual_concat(results, axis=0)
    return np.concatenate(results, axis=0)


class ForwardOperator:
    """F and dF/dq for one defect template under one simulation config."""

    def __init__(self, template, config: SimConfig = None):
        self.template = template
        self.config = config or SimConfig()
        cfg = self.config

        pulse = excitation_pulse(cfg.grid, cfg.carrier, cfg.t_center)
        self.excitation = pulse
        spec = ewm_forward(pulse, eta=cfg.eta, threshold=cfg.threshold)
        self.freq = spec.freq
        self.rel_idx = np.nonzero(spec.freq.relevant)[0]
        self.omegas = spec.freq.omegas[self.rel_idx]
        self.tau = spec.coeffs[self.rel_idx]

        # q-independent heavy lifting, shared by every evaluation
        q_mid = np.full(template.n_params, 1.5)
        probe = build_model(template, scale_params(template, q_mid))
        self._n_if = 2 * (scenarios.CS_ELEMS * scenarios.DEGREE + 1)
        mats = coefficient_matrices(self._full_cs(probe), scenarios.PLATE)
        self.modes = _modes_with_retry(mats, self.omegas)
        self._semi_right = semi_infinite_stiffness(self.modes, direction=1)
        self._left = self._condense_left(probe)
        self._right_map, self._n_right = self._build_right_map(probe)
        self._sensor_red = self._right_map[probe.sensor]

    # -- construction helpers ------------------------------------------------

    @staticmethod
    def _full_cs(model):
        for el in model.elements:
            if el.label == "absorber-left":
                return el.element.cross_section
        raise ValueError("model has no left absorber")

    def _left_stiffness(self, block):
        el = block.element
        if isinstance(el, PolygonElement):
            return polygon_stiffness(el, self.omegas)
        if el.length is None:
            return semi_infinite_stiffness(self.modes, el.direction)
        return finite_prism_stiffness(self.modes, el.length)

    def _condense_left(self, model):
        """Assemble everything left of the sensor and fold it onto it."""
        left = [el for el in model.elements if el.label in LEFT_LABELS]
        n_left = max(int(el.dofs.max()) for el in left) + 1
        nb = self.omegas.shape[0]
        S = np.zeros((nb, n_left, n_left), dtype=complex)
        for el in left:
            S[np.ix_(range(nb), el.dofs, el.dofs)] += self._left_stiffness(el)
        f = np.broadcast_to(model.load[:n_left].astype(complex),
                            (nb, n_left))
        return condense(S, f, np.arange(self._n_if))

    def _build_right_map(self, model):
        """Global-to-reduced DOF map for the sensor interface + right side."""
        n = model.dof_count
        n_if = self._n_if
        right = [el for el in model.elements if el.label not in LEFT_LABELS]
        used = np.zeros(n, dtype=bool)
        used[:n_if] = True
        for el in right:
            used[el.dofs] = True
        mapping = np.full(n, -1, dtype=int)
        order = np.nonzero(used)[0]
        mapping[order] = np.arange(order.size)
        if np.any(mapping[:n_if] != np.arange(n_if)):
            raise ValueError("sensor interface must occupy the first DOFs")
        return mapping, order.size

    # -- per-q evaluation ------------------------------------------------------

    def _right_stiffness(self, block, thin_memo):
        """One right-side block, tangents narrowed to its live directions.

        Returns (S, dirs): dirs is None for a plain block, otherwise the
        global parameter directions the dual's tangent axes map to.  Most
        blocks depend on one or two of the d parameters, so propagating
        only those directions skips the zero tangent traffic.
        """
        el = block.element
        if isinstance(el, PolygonElement):
            center = tuple(el.scaling_center)
            dirs = _live_dirs(el.mesh.nodes, *center)
            if dirs is not None:
                el = replace(
                    el,
                    mesh=replace(el.mesh, nodes=_narrow(el.mesh.nodes, dirs)),
                    scaling_center=tuple(_narrow(c, dirs) for c in center))
                dirs = dirs if dirs.size else None
            return polygon_stiffness(el, self.omegas), dirs
        if el.length is None:
            return self._semi_right, None
        if block.label == "approach":
            dirs = _live_dirs(el.length)
            return (finite_prism_stiffness(self.modes,
                                           _narrow(el.length, dirs)),
                    dirs if dirs is not None and dirs.size else None)
        # thin prism: the mode families follow the (possibly dual) section
        cs = el.cross_section
        cs_dirs = _live_dirs(cs.node_y)
        key = id(cs)
        if key not in thin_memo:
            cs_n = (cs if cs_dirs is None
                    else replace(cs, node_y=_narrow(cs.node_y, cs_dirs)))
            mats = coefficient_matrices(cs_n, scenarios.PLATE)
            thin_memo[key] = _modes_with_retry(mats, self.omegas)
        modes = thin_memo[key]
        len_dirs = _live_dirs(el.length)
        stacks = [d for d in (cs_dirs, len_dirs) if d is not None]
        if not stacks:
            return finite_prism_stiffness(modes, el.length), None
        dirs = np.unique(np.concatenate(stacks))
        if cs_dirs is not None and not np.array_equal(cs_dirs, dirs):
            modes = WaveModes(_widen(modes.lam, cs_dirs, dirs),
                              _widen(modes.phi, cs_dirs, dirs),
                              _widen(modes.psi, cs_dirs, dirs), modes.n)
        return (finite_prism_stiffness(modes, _narrow(el.length, dirs)),
                dirs if dirs.size else None)

    def transfer(self, phys):
        """Sensor displacement coefficients at the relevant bins (unit drive)."""
        model = build_model(self.template, phys)
        ndir = max((p.ndir for p in phys if is_dual(p)), default=0)
        nb = self.omegas.shape[0]
        nr = self._n_right
        S_left, f_left = self._left
        n_if = self._n_if
        S = np.zeros((nb, nr, nr), dtype=complex)
        S[:, :n_if, :n_if] += S_left
        tans = None
        thin_memo = {}
        for el in model.elements:
            if el.label in LEFT_LABELS:
                continue
            Sk, dirs = self._right_stiffness(el, thin_memo)
            idx = np.ix_(range(nb), self._right_map[el.dofs],
                         self._right_map[el.dofs])
            S[idx] += value(Sk)
            if is_dual(Sk):
                if tans is None:
                    tans = np.zeros((ndir, nb, nr, nr), dtype=complex)
                for k, g in enumerate(dirs):
                    tans[g][idx] += Sk.tan[k]
        rhs = np.zeros((nb, nr, 1), dtype=complex)
        rhs[:, :n_if, 0] = f_left
        if tans is not None:
            S = Dual(S, tans)
        u = _solve_chunked(S, rhs, self.config.threads)
        return u[..., self._sensor_red, 0]

    def _dress(self, coeffs):
        """Scale by the excitation and transform back to a time trace."""
        n_bins = self.freq.n_bins
        vals = np.zeros(n_bins, dtype=complex)
        weighted = coeffs * self.tau
        vals[self.rel_idx] = value(weighted)
        if is_dual(weighted):
            tans = np.zeros((weighted.ndir, n_bins), dtype=complex)
            tans[:, self.rel_idx] = weighted.tan
            full = Dual(vals, tans)
        else:
            full = vals
        return ewm_inverse(EwmSpectrum(self.freq, full))

    def response(self, q) -> TimeSignal:
        """Raw displacement trace at the sensor for scaled parameters q."""
        phys = scale_params(self.template, q)
        return self._dress(self.transfer(phys))

    def forward(self, q) -> EnvelopeSignal:
        return envelope(self.response(q))

    def forward_with_jacobian(self, q):
        """Envelope and its Jacobian (n_samples, d) in one sweep."""
        d = self.template.n_params
        qd = Dual(np.asarray(q, dtype=float), np.eye(d))
        phys = scale_params(self.template, qd)
        env = envelope(self._dress(self.transfer(phys)))
        J = np.real(env.samples.tan).T
        return EnvelopeSignal(env.grid, value(env.samples)), J

    def objective_mask(self):
        return self.config.grid.times > self.config.objective_start

    def objective(self, q, target: EnvelopeSignal) -> float:
        """Squared envelope mismatch over the post-excitation window."""
        y = self.forward(q)
        r = (y.samples - target.samples)[self.objective_mask()]
        return float(np.sum(r * r))


_OPERATORS = {}


def _operator(template, config) -> ForwardOperator:
    key = (template, config or SimConfig())
    if key not in _OPERATORS:
        _OPERATORS[key] = ForwardOperator(*key)
    return _OPERATORS[key]


def forward(template, q, config: SimConfig = None) -> EnvelopeSignal:
    """Evaluate F(q) for a defect template."""
    return _operator(template, config).forward(q)


def jacobian(template, q, config: SimConfig = None) -> np.ndarray:
    """dF/dq with one column per scaled parameter."""
    _, J = _operator(template, config).forward_with_jacobian(q)
    return J
