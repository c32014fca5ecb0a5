"""Scenario configuration: strict YAML schema, defaults, and hashing.

Every run is described by one ScenarioConfig. Parsing is deliberately
strict: the schema is versioned, unknown keys anywhere in the tree are
rejected, and all values are type- and range-checked, so a typo in a config
file fails loudly instead of silently running with defaults. The sha256
hash of the resolved settings is stamped into every output file header,
which ties results back to the exact configuration that made them.
"""

import hashlib
from dataclasses import dataclass, fields

import numpy as np
import yaml

from .crosssection import MaterialIso
from .errors import ConfigError
from .forward import SimConfig
from .inversion import InitialGuessConfig, IRGNMConfig, default_guess_config
from .scenarios import HALF_THICKNESS, PLATE, TEMPLATES
from .signal import TimeGrid

__all__ = ["ScenarioConfig", "load_config", "default_config",
           "SCHEMA_VERSION", "REFERENCE_THICKNESS"]

SCHEMA_VERSION = 1
REFERENCE_THICKNESS = 2.0 * HALF_THICKNESS

# default sweep for the dispersion command: covers both fundamental modes
# well past the first higher-order cutoffs
_DEF_FREQS = tuple(np.arange(25e3, 500e3 + 1, 25e3))

_DEF_NOISE_LEVELS = (0.0, 1e-5, 1e-4, 1e-3, 1e-2, 3e-2)


@dataclass(frozen=True)
class ScenarioConfig:
    """Resolved settings for one scenario run."""

    version: int = SCHEMA_VERSION
    kind: str = "crack"
    material: MaterialIso = PLATE
    thickness: float = REFERENCE_THICKNESS
    dt: float = 1e-6
    samples: int = 4096
    carrier: float = 200e3
    threshold: float = 1e-3
    frequencies: tuple = _DEF_FREQS
    seed: int = 0
    guess_samples: int = None      # None -> template default (10, corrosion 100)
    guess_points: int = 7
    guess_levels: int = 3
    guess_sweeps: int = 4
    alpha0: float = 1e-2
    gamma: float = 2.0 / 3.0
    epsilon: float = 1e-6
    maxiter: int = 50
    noise_levels: tuple = _DEF_NOISE_LEVELS
    repetitions: int = 5
    surface_coords: tuple = (1, 2)
    surface_points: int = 41

    def __post_init__(self):
        if self.version != SCHEMA_VERSION:
            raise ConfigError(f"unsupported schema version {self.version}; "
                              f"this build reads version {SCHEMA_VERSION}")
        if self.kind not in TEMPLATES:
            raise ConfigError(f"unknown scenario kind {self.kind!r}; "
                              f"choose from {sorted(TEMPLATES)}")
        if self.repetitions < 5:
            raise ConfigError("noise studies need at least 5 repetitions "
                              "per level for a stable median")
        d = self.template.n_params
        if (len(self.surface_coords) != 2
                or not all(1 <= c <= d for c in self.surface_coords)
                or self.surface_coords[0] == self.surface_coords[1]):
            raise ConfigError(f"surface coords must be two distinct indices "
                              f"in 1..{d}, got {self.surface_coords}")
        if self.surface_points < 2:
            raise ConfigError("surface grid needs at least 2 points per axis")
        # delegate the numeric checks to the component configs
        TimeGrid(self.dt, self.samples)
        self.guess_config()
        self.irgnm_config()

    @property
    def template(self):
        return TEMPLATES[self.kind]

    @property
    def reference_plate(self) -> bool:
        """Whether material and thickness match the calibrated scenarios."""
        return (self.material == PLATE
                and self.thickness == REFERENCE_THICKNESS)

    def sim_config(self, threads: int = 1) -> SimConfig:
        return SimConfig(grid=TimeGrid(self.dt, self.samples),
                         carrier=self.carrier, threshold=self.threshold,
                         threads=threads)

    def guess_config(self, seed: int = None) -> InitialGuessConfig:
        m = self.guess_samples
        if m is None:
            m = default_guess_config(self.template).samples
        return InitialGuessConfig(samples=m, points=self.guess_points,
                                  levels=self.guess_levels,
                                  sweeps=self.guess_sweeps,
                                  seed=self.seed if seed is None else seed)

    def irgnm_config(self) -> IRGNMConfig:
        return IRGNMConfig(alpha0=self.alpha0, gamma=self.gamma,
                           epsilon=self.epsilon, maxiter=self.maxiter)

    @property
    def hash(self) -> str:
        """Short digest of the resolved settings for output headers."""
        parts = []
        for f in sorted(fields(self), key=lambda f: f.name):
            parts.append(f"{f.name}={getattr(self, f.name)!r}")
        digest = hashlib.sha256("\n".join(parts).encode())
        return digest.hexdigest()[:12]


def default_config(kind: str = "crack") -> ScenarioConfig:
    return ScenarioConfig(kind=kind)


# -- strict YAML parsing -------------------------------------------------------------


def _require_map(node, path):
    if not isinstance(node, dict):
        raise ConfigError(f"{path}: expected a mapping, got "
                          f"{type(node).__name__}")
    return node


def _check_keys(node, path, allowed):
    unknown = sorted(set(node) - set(allowed))
    if unknown:
        raise ConfigError(f"{path}: unknown key(s) {unknown}; "
                          f"allowed: {sorted(allowed)}")


def _number(node, path, cls=float):
    if isinstance(node, str):
        # YAML 1.1 floats need a signed exponent, so 200e3 or 150.0e3
        # arrive as strings; accept anything that parses as a number
        try:
            node = float(node)
        except ValueError:
            pass
    if isinstance(node, bool) or not isinstance(node, (int, float)):
        raise ConfigError(f"{path}: expected a number, got {node!r}")
    if cls is int and int(node) != node:
        raise ConfigError(f"{path}: expected an integer, got {node!r}")
    return cls(node)


def _number_list(node, path):
    if not isinstance(node, list):
        raise ConfigError(f"{path}: expected a list of numbers")
    return tuple(_number(v, f"{path}[{i}]") for i, v in enumerate(node))


def _int_pair(node, path):
    if not isinstance(node, list) or len(node) != 2:
        raise ConfigError(f"{path}: expected a pair of indices")
    return tuple(_number(v, f"{path}[{i}]", int) for i, v in enumerate(node))


def _section(raw, name, spec, out):
    """Parse one nested mapping; spec maps yaml key -> (field, converter)."""
    if name not in raw:
        return
    node = _require_map(raw[name], name)
    _check_keys(node, name, spec)
    for key, (field_name, conv) in spec.items():
        if key in node:
            out[field_name] = conv(node[key], f"{name}.{key}")


_INT = lambda v, p: _number(v, p, int)
_FLT = _number


def load_config(path) -> ScenarioConfig:
    """Read and validate a scenario file, returning the resolved config."""
    with open(path) as fh:
        try:
            raw = yaml.safe_load(fh)
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path}: not valid YAML ({exc})") from exc
    if raw is None:
        raw = {}
    _require_map(raw, "top level")
    _check_keys(raw, "top level",
                ["version", "scenario", "material", "plate", "time",
                 "excitation", "spectrum", "dispersion", "seed", "guess",
                 "gauss_newton", "noise_study", "surface"])
    if "version" not in raw:
        raise ConfigError("config must state a schema version")

    out = {"version": _INT(raw["version"], "version")}
    if "scenario" in raw:
        if not isinstance(raw["scenario"], str):
            raise ConfigError("scenario: expected a template name string")
        out["kind"] = raw["scenario"]
    if "seed" in raw:
        out["seed"] = _INT(raw["seed"], "seed")

    if "material" in raw:
        node = _require_map(raw["material"], "material")
        _check_keys(node, "material",
                    ["youngs_modulus", "poisson_ratio", "density"])
        try:
            out["material"] = MaterialIso(
                E=_FLT(node.get("youngs_modulus", PLATE.E), "material"),
                nu=_FLT(node.get("poisson_ratio", PLATE.nu), "material"),
                rho=_FLT(node.get("density", PLATE.rho), "material"))
        except ValueError as exc:
            raise ConfigError(f"material: {exc}") from exc

    _section(raw, "plate", {"thickness": ("thickness", _FLT)}, out)
    _section(raw, "time", {"dt": ("dt", _FLT),
                           "samples": ("samples", _INT)}, out)
    _section(raw, "excitation", {"carrier": ("carrier", _FLT)}, out)
    _section(raw, "spectrum", {"threshold": ("threshold", _FLT)}, out)
    _section(raw, "dispersion",
             {"frequencies": ("frequencies", _number_list)}, out)
    _section(raw, "guess", {"samples": ("guess_samples", _INT),
                            "points": ("guess_points", _INT),
                            "levels": ("guess_levels", _INT),
                            "sweeps": ("guess_sweeps", _INT)}, out)
    _section(raw, "gauss_newton", {"alpha0": ("alpha0", _FLT),
                                   "gamma": ("gamma", _FLT),
                                   "epsilon": ("epsilon", _FLT),
                                   "maxiter": ("maxiter", _INT)}, out)
    _section(raw, "noise_study",
             {"levels": ("noise_levels", _number_list),
              "repetitions": ("repetitions", _INT)}, out)
    _section(raw, "surface",
             {"coords": ("surface_coords", _int_pair),
              "points": ("surface_points", _INT)}, out)

    try:
        return ScenarioConfig(**out)
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from exc
