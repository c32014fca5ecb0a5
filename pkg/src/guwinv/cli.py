"""Command-line front end: simulate, invert, and export plot-ready files.

Verbs:
  dispersion         propagating-mode table for the configured plate
  simulate           one forward run; writes displacement and envelope
  objective-surface  misfit grid over two chosen parameters
  reconstruct        full inversion from a file or synthesized measurement
  noise-study        median parameter errors across noise levels and seeds

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
All files carry '#' headers with the config hash and seed; identical
configs and seeds reproduce them byte for byte, so volatile values
(wall-clock timings) go to stdout instead.
"""

import argparse
import logging
import os
import sys
import time

import numpy as np

from .config import default_config, load_config
from .crosssection import CrossSectionMesh, dispersion
from .errors import ConfigError, GuwinvError
from .forward import ForwardOperator
from .inversion import irgnm, refined_initial_guess
from .io import read_table, write_dispersion, write_signal, write_table, \
    write_trace
from .scenarios import CS_ELEMS, DEGREE, build_model, scale_params
from .signal import EnvelopeSignal, TimeGrid, add_noise, envelope

__all__ = ["main"]

THREADS_ENV = "GUWINV_THREADS"

log = logging.getLogger(__name__)


def _threads(args):
    raw = os.environ.get(THREADS_ENV)
    if raw is None:
        return args.threads
    try:
        return int(raw)
    except ValueError:
        raise ConfigError(f"{THREADS_ENV} must be an integer, got {raw!r}")


def _seed(cfg, args):
    return cfg.seed if args.seed is None else args.seed


def _target(args, cfg, required=True):
    if args.target is None:
        if required:
            raise ConfigError("this command needs --target \"q1,q2[,q3]\"")
        return None
    parts = args.target.split(",")
    try:
        q = np.array([float(p) for p in parts])
    except ValueError:
        raise ConfigError(f"could not parse --target {args.target!r}")
    d = cfg.template.n_params
    if q.size != d:
        raise ConfigError(f"{cfg.kind} takes {d} parameters, "
                          f"got {q.size} in --target")
    return q


def _require_reference_plate(cfg):
    if not cfg.reference_plate:
        raise ConfigError(
            "the defect scenarios are calibrated for the 5 mm "
            "structural-steel guide; non-default material or thickness "
            "is only supported by the dispersion command")


def _meta(cfg, seed, **extra):
    meta = {"config": cfg.hash, "seed": seed, "scenario": cfg.kind}
    meta.update(extra)
    return meta


def _operator(cfg, args):
    _require_reference_plate(cfg)
    return ForwardOperator(cfg.template, cfg.sim_config(_threads(args)))


def _synthesize(op, q_star, noise, seed):
    clean = op.response(q_star)
    return envelope(add_noise(clean, noise, seed,
                              t_ex=op.config.excitation_end))


# -- verbs ---------------------------------------------------------------------------


def cmd_dispersion(cfg, args):
    half = 0.5 * cfg.thickness
    mesh = CrossSectionMesh.uniform(-half, half, CS_ELEMS, DEGREE)
    table = dispersion(mesh, cfg.material, list(cfg.frequencies))
    path = os.path.join(args.out, "dispersion.txt")
    write_dispersion(path, table, _meta(
        cfg, _seed(cfg, args), thickness=cfg.thickness,
        youngs_modulus=cfg.material.E, poisson_ratio=cfg.material.nu,
        density=cfg.material.rho))
    print(f"wrote {path} ({len(table.rows())} mode points, "
          f"{len(cfg.frequencies)} frequencies)")


def cmd_simulate(cfg, args):
    q = _target(args, cfg)
    op = _operator(cfg, args)
    dofs = build_model(cfg.template, scale_params(cfg.template, q)).dof_count
    t0 = time.perf_counter()
    u = op.response(q)
    env = envelope(u)
    runtime = time.perf_counter() - t0
    meta = _meta(cfg, _seed(cfg, args), target=args.target, dof_count=dofs)
    sig_path = os.path.join(args.out, "signal.txt")
    env_path = os.path.join(args.out, "envelope.txt")
    write_signal(sig_path, u, meta)
    write_signal(env_path, env, meta, name="envelope")
    print(f"wrote {sig_path} and {env_path} "
          f"(dof_count={dofs}, runtime={runtime:.2f} s)")


def cmd_objective_surface(cfg, args):
    q_star = _target(args, cfg)
    op = _operator(cfg, args)
    seed = _seed(cfg, args)
    y = _synthesize(op, q_star, args.noise, seed)
    ia, ib = (c - 1 for c in cfg.surface_coords)
    grid = np.linspace(1.0, 2.0, cfg.surface_points)
    rows = []
    for qa in grid:
        for qb in grid:
            q = q_star.copy()
            q[ia], q[ib] = qa, qb
            rows.append((qa, qb, op.objective(q, y)))
    path = os.path.join(args.out, "surface.txt")
    write_table(path, [f"q{ia + 1}", f"q{ib + 1}", "objective"], rows,
                _meta(cfg, seed, target=args.target, noise=args.noise,
                      points=cfg.surface_points))
    print(f"wrote {path} ({len(rows)} grid cells)")


def _load_measurement(cfg, path):
    _, names, rows = read_table(path)
    if not rows:
        raise ConfigError(f"{path}: no samples")
    samples = np.array([row[-1] for row in rows], dtype=float)
    grid = TimeGrid(cfg.dt, cfg.samples)
    if samples.size != grid.n:
        raise ConfigError(f"{path}: {samples.size} samples, but the "
                          f"configured grid has {grid.n}")
    return EnvelopeSignal(grid, np.abs(samples))


def cmd_reconstruct(cfg, args):
    op = _operator(cfg, args)
    seed = _seed(cfg, args)
    q_star = _target(args, cfg, required=args.measurement is None)
    if args.measurement is not None:
        y = _load_measurement(cfg, args.measurement)
    else:
        y = _synthesize(op, q_star, args.noise, seed)
    q0 = refined_initial_guess(op, y, cfg.guess_config(seed))
    q_min, trace = irgnm(op, y, q0, cfg.irgnm_config(), q_star=q_star)

    meta = _meta(cfg, seed, noise=args.noise,
                 measurement=args.measurement or "synthesized",
                 iterations=trace.n_steps,
                 max_iter_reached=trace.max_iter_reached)
    err = None
    if q_star is not None:
        err = float(np.linalg.norm(q_min - q_star))
        meta["error"] = err
    names = [f"q{i + 1}" for i in range(q_min.size)]
    rec_path = os.path.join(args.out, "reconstruction.txt")
    write_table(rec_path, names, [list(q_min)], meta)
    trace_path = os.path.join(args.out, "trace.txt")
    write_trace(trace_path, trace, meta)

    state = "maxiter reached" if trace.max_iter_reached else "converged"
    line = (f"q_min = {np.array2string(q_min, precision=6)} "
            f"after {trace.n_steps} steps ({state})")
    if err is not None:
        line += f", error = {err:.3e}"
    print(line)
    print(f"wrote {rec_path} and {trace_path}")


def cmd_noise_study(cfg, args):
    q_star = _target(args, cfg)
    op = _operator(cfg, args)
    base_seed = _seed(cfg, args)
    d = q_star.size
    rows = []
    for level in cfg.noise_levels:
        errs = []
        for rep in range(cfg.repetitions):
            seed = base_seed + rep
            try:
                y = _synthesize(op, q_star, level, seed)
                q0 = refined_initial_guess(op, y, cfg.guess_config(seed))
                q_min, _ = irgnm(op, y, q0, cfg.irgnm_config())
                errs.append(np.abs(q_min - q_star))
            except GuwinvError as exc:
                log.warning("noise %g rep %d failed: %s", level, rep, exc)
        ok = len(errs)
        med = (np.median(np.array(errs), axis=0) if ok
               else np.full(d, np.nan))
        for i in range(d):
            rows.append((level, i + 1, med[i], ok))
        print(f"noise {level:g}: {ok}/{cfg.repetitions} runs, "
              f"median errors {np.array2string(med, precision=3)}")
    path = os.path.join(args.out, "noise_study.txt")
    write_table(path, ["noise", "parameter", "median_error", "runs_ok"],
                rows, _meta(cfg, base_seed, target=args.target,
                            repetitions=cfg.repetitions))
    print(f"wrote {path} ({len(rows)} rows)")


# -- argument plumbing ---------------------------------------------------------------


_COMMANDS = {
    "dispersion": cmd_dispersion,
    "simulate": cmd_simulate,
    "objective-surface": cmd_objective_surface,
    "reconstruct": cmd_reconstruct,
    "noise-study": cmd_noise_study,
}


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="guwinv",
        description="Guided-wave simulation and defect reconstruction "
                    "in a plate waveguide.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, doc in [
            ("dispersion", "export the propagating-mode table"),
            ("simulate", "run one forward simulation"),
            ("objective-surface", "grid-scan the misfit over two parameters"),
            ("reconstruct", "invert a measured or synthesized envelope"),
            ("noise-study", "median reconstruction errors vs noise level")]:
        sp = sub.add_parser(name, help=doc)
        sp.add_argument("--config", help="scenario YAML file")
        sp.add_argument("--out", default=".", help="output directory")
        sp.add_argument("--seed", type=int, default=None,
                        help="override the config seed")
        sp.add_argument("--threads", type=int, default=1,
                        help=f"solver threads (env {THREADS_ENV} overrides)")
        if name in ("simulate", "objective-surface", "reconstruct",
                    "noise-study"):
            sp.add_argument("--target", default=None,
                            help="scaled parameters, e.g. \"1.5,1.5,1.5\"")
        if name in ("objective-surface", "reconstruct"):
            sp.add_argument("--noise", type=float, default=1e-5,
                            help="relative noise for synthesized data")
        if name == "reconstruct":
            sp.add_argument("--measurement", default=None,
                            help="envelope file to invert instead of "
                                 "synthesizing one")
    return parser


def main(argv=None) -> int:
    try:
        args = _build_parser().parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 2
    try:
        cfg = load_config(args.config) if args.config else default_config()
        _COMMANDS[args.command](cfg, args)
        return 0
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except GuwinvError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:       # noqa: BLE001 - CLI boundary
        log.exception("unhandled failure")
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
