"""Defect reconstruction: initial guesses plus the regularized Gauss-Newton loop.

The pipeline has three stages. First the dominant echo delay gives the
defect position: the out-and-back travel satisfies L/c_p + L/c_n = T for the
excited mode going out and the (always slower) converted A0 mode coming
back, so L = T c_p c_n / (c_p + c_n). Second, the remaining coordinates are
probed with M random samples followed by a coordinate-wise bracketed grid
search. Third, the Gauss-Newton iteration with a decaying Tikhonov term
anchored at the initial guess polishes all coordinates simultaneously.
"""

import logging
from dataclasses import dataclass, field

import numpy as np

from .crosssection import CrossSectionMesh, dispersion, group_velocity_at
from .errors import NoDistinctMaximum, SingularSystem
from .forward import SimConfig, _operator
from .scenarios import CS_ELEMS, DEGREE, HALF_THICKNESS, PLATE, SENSOR_X
from .signal import time_of_flight

__all__ = ["InitialGuessConfig", "IRGNMConfig", "ReconstructionTrace",
           "defect_distance", "initial_position_guess",
           "refined_initial_guess", "irgnm", "reconstruct",
           "default_guess_config"]

log = logging.getLogger(__name__)

Q1_STARTS = np.linspace(1.1, 1.9, 5)    # fallback when no echo is found


@dataclass(frozen=True)
class InitialGuessConfig:
    """Settings for the sampling + line-search stage."""

    samples: int = 10        # random probes of the non-position coordinates
    points: int = 7          # grid points per line-search level
    levels: int = 3          # bracketed refinement levels
    sweeps: int = 4          # coordinate-descent passes over all coordinates
    seed: int = 0

    def __post_init__(self):
        if self.samples < 1:
            raise ValueError("need at least one random sample")
        if self.points < 3 or self.levels < 1:
            raise ValueError("line search needs >= 3 points and >= 1 level")
        if self.sweeps < 1:
            raise ValueError("need at least one line-search sweep")

    @property
    def resolution(self) -> float:
        """Grid spacing of the last refinement level."""
        shrink = 2.0 / (self.points - 1)
        return shrink ** (self.levels - 1) / (self.points - 1)


def default_guess_config(template, seed: int = 0) -> InitialGuessConfig:
    """Template default: corrosion gets a denser random stage."""
    m = 100 if template.kind == "corrosion" else 10
    return InitialGuessConfig(samples=m, seed=seed)


@dataclass(frozen=True)
class IRGNMConfig:
    """Gauss-Newton settings: alpha_n = alpha0 * gamma^n, step-norm stop."""

    alpha0: float = 1e-2
    gamma: float = 2.0 / 3.0
    epsilon: float = 1e-6
    maxiter: int = 50
    bounds: tuple = (1.0, 2.0)   # None disables the box clamp

    def __post_init__(self):
        if self.alpha0 < 0 or not 0 < self.gamma < 1:
            raise ValueError("need alpha0 >= 0 and 0 < gamma < 1")
        if self.epsilon <= 0 or self.maxiter < 1:
            raise ValueError("need epsilon > 0 and maxiter >= 1")


@dataclass
class ReconstructionTrace:
    """Per-iterate reconstruction history; the final iterate is q_min."""

    iterates: list = field(default_factory=list)
    objectives: list = field(default_factory=list)
    step_norms: list = field(default_factory=list)
    alphas: list = field(default_factory=list)
    errors: list = None          # ||q_n - q*||, only when q* is known
    max_iter_reached: bool = False

    @property
    def n_steps(self) -> int:
        return len(self.step_norms)


# -- stage 1: position from the echo delay ------------------------------------------


_SPEEDS = {}


def _mode_speeds(carrier: float) -> dict:
    """Group velocities of the fundamental modes at the carrier frequency."""
    if carrier not in _SPEEDS:
        mesh = CrossSectionMesh.uniform(-HALF_THICKNESS, HALF_THICKNESS,
                                        CS_ELEMS, DEGREE)
        table = dispersion(mesh, PLATE, [carrier])
        _SPEEDS[carrier] = {m: group_velocity_at(table, m, carrier)
                            for m in ("S0", "A0")}
    return _SPEEDS[carrier]


def defect_distance(t_diff: float, c_p: float, c_n: float) -> float:
    """Distance from the sensor given the echo delay and the two speeds."""
    return t_diff * c_p * c_n / (c_p + c_n)


def initial_position_guess(y_meas, template, config: SimConfig = None) -> float:
    """Scaled q1 estimate from the dominant reflection delay.

    The delay is measured against the direct packet, so the correlation gate
    sits right behind its passage at the sensor; NoDistinctMaximum (no echo
    stands out) propagates to the caller, which falls back to multi-start.
    """
    cfg = config or SimConfig()
    speeds = _mode_speeds(cfg.carrier)
    c_p = speeds[template.excitation]
    c_n = speeds["A0"]
    gate = cfg.pulse_center + SENSOR_X / c_p + 5.0 / cfg.carrier
    t_diff = time_of_flight(y_meas, gate)
    dist = defect_distance(t_diff, c_p, c_n)
    lo, hi = template.ranges[0]
    q1 = 1.0 + (SENSOR_X + dist - lo) / (hi - lo)
    return float(np.clip(q1, 1.0, 2.0))


# -- stage 2: sampling plus coordinate-wise line search ------------------------------


def _line_search(op, y_meas, q, best_val, coord, cfg):
    """Bracketed grid refinement along one coordinate; never worsens q."""
    best_q = q.copy()
    lo, hi = 1.0, 2.0
    pts = np.linspace(lo, hi, cfg.points)
    span = (hi - lo) / (cfg.points - 1)
    for level in range(cfg.levels):
        for p in pts:
            if p == best_q[coord]:
                continue
            trial = best_q.copy()
            trial[coord] = p
            val = op.objective(trial, y_meas)
            if val < best_val:
                best_q, best_val = trial, val
        center = best_q[coord]
        pts = np.clip(np.linspace(center - span, center + span, cfg.points),
                      lo, hi)
        span = 2.0 * span / (cfg.points - 1)
    return best_q, best_val


def refined_initial_guess(template, y_meas, cfg: InitialGuessConfig = None,
                          sim_config: SimConfig = None) -> np.ndarray:
    """Initial iterate q0: echo-based position, random probing, line search.

    The line search walks the coordinates in reverse order (shape parameters
    first, the already well-estimated position last), and the objective is
    non-increasing through every stage. The coordinate cycle repeats until
    the iterate stops moving at the finest grid resolution: the shape
    coordinates are strongly coupled, so a single pass can strand the guess
    on the shallow plateau around the valley and a later pass, run with the
    other coordinates already improved, pulls it in.
    """
    if hasattr(template, "kind"):
        op = _operator(template, sim_config)
    else:
        op = template
        template = op.template
    cfg = cfg or default_guess_config(template)
    rng = np.random.default_rng(cfg.seed)
    d = template.n_params

    try:
        q1_starts = [initial_position_guess(y_meas, template, op.config)]
    except NoDistinctMaximum:
        log.warning("no distinct correlation peak; multi-starting q1 over %s",
                    np.round(Q1_STARTS, 3).tolist())
        q1_starts = list(Q1_STARTS)

    best_q, best_val = None, np.inf
    for q1 in q1_starts:
        for _ in range(cfg.samples):
            q = np.empty(d)
            q[0] = q1
            q[1:] = rng.uniform(1.0, 2.0, d - 1)
            val = op.objective(q, y_meas)
            if val < best_val:
                best_q, best_val = q, val

    coords = list(range(d - 1, 0, -1)) + [0]
    for sweep in range(cfg.sweeps):
        before = best_q.copy()
        for coord in coords:
            best_q, best_val = _line_search(op, y_meas, best_q, best_val,
                                            coord, cfg)
        moved = float(np.max(np.abs(best_q - before)))
        log.debug("line-search sweep %d: q=%s objective=%.3e moved=%.3g",
                  sweep, np.round(best_q, 4).tolist(), best_val, moved)
        # sweep 0 places the sampled coordinates; a tiny move there says
        # nothing about convergence, so the stop only arms afterwards
        if sweep > 0 and moved < cfg.resolution:
            break
    return best_q


# -- stage 3: iteratively regularized Gauss-Newton ----------------------------------


def irgnm(template, y_meas, q0, cfg: IRGNMConfig = None,
          sim_config: SimConfig = None, q_star=None):
    """Gauss-Newton iteration with a decaying Tikhonov anchor at q0.

    Accepts a defect template or any operator exposing forward_with_jacobian
    / objective_mask / objective. Returns (q_min, trace); hitting maxiter
    sets trace.max_iter_reached and returns the best iterate seen.
    """
    cfg = cfg or IRGNMConfig()
    if hasattr(template, "forward_with_jacobian"):
        op = template
    else:
        op = _operator(template, sim_config)
    mask = op.objective_mask()
    y = np.asarray(y_meas.samples)[mask]
    # alpha_n weighs against J'J, so the data scale must not leak into the
    # balance: normalize by the measurement peak (physical traces are ~1e-15)
    scale = float(np.abs(np.asarray(y_meas.samples)).max()) or 1.0
    q0 = np.asarray(q0, dtype=float)
    q = q0.copy()
    d = q.size

    trace = ReconstructionTrace(errors=[] if q_star is not None else None)

    def record(qn, obj):
        trace.iterates.append(qn.copy())
        trace.objectives.append(float(obj))
        if trace.errors is not None:
            trace.errors.append(float(np.linalg.norm(qn - q_star)))

    converged = False
    for n in range(cfg.maxiter):
        env, J = op.forward_with_jacobian(q)
        r = y - np.asarray(env.samples)[mask]
        record(q, r @ r)
        rn = r / scale
        Jn = J[mask] / scale
        alpha = cfg.alpha0 * cfg.gamma ** n
        A = Jn.T @ Jn + alpha * np.eye(d)
        b = Jn.T @ rn + alpha * (q0 - q)
        try:
            step = np.linalg.solve(A, b)
        except np.linalg.LinAlgError as exc:
            raise SingularSystem(
                f"normal equations singular at iteration {n} "
                f"(alpha={alpha:g})") from exc
        q_new = q + step
        if cfg.bounds is not None:
            q_new = np.clip(q_new, *cfg.bounds)
        applied = float(np.linalg.norm(q_new - q))
        trace.step_norms.append(applied)
        trace.alphas.append(alpha)
        q = q_new
        if applied < cfg.epsilon:
            converged = True
            break

    record(q, op.objective(q, y_meas))
    if not converged:
        trace.max_iter_reached = True
        best = int(np.argmin(trace.objectives))
        if best != len(trace.iterates) - 1:
            log.warning("maxiter reached; returning iterate %d of %d",
                        best, len(trace.iterates) - 1)
            record(trace.iterates[best], trace.objectives[best])
            q = trace.iterates[-1]
    return q, trace


def reconstruct(template, y_meas, guess_cfg: InitialGuessConfig = None,
                irgnm_cfg: IRGNMConfig = None, sim_config: SimConfig = None,
                q_star=None):
    """Full pipeline: initial guess stages followed by the Gauss-Newton loop."""
    q0 = refined_initial_guess(template, y_meas, guess_cfg, sim_config)
    return irgnm(template, y_meas, q0, irgnm_cfg, sim_config, q_star)
