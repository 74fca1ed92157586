"""Experiment configuration: TOML in, validated dataclasses out.

Schema (all tables optional unless a suite needs them; unknown keys are
errors everywhere)::

    label = "h1-kernel"          # run name echoed into reports

    [group]
    preset = "heisenberg:1"      # euclidean:n | heisenberg:d | free-step2:q
    # or explicit structure constants instead of a preset:
    # n = 3, q = 2, b = [[[...]]]   (n-q stacked q x q antisymmetric layers)

    [engine]
    kind = "quadrature"          # auto | closed-form | quadrature | monte-carlo
    seed = 7                     # REQUIRED for monte-carlo
    samples = 1000000            # monte-carlo draws per t
    substeps = 64                # weak-Euler steps per draw

    [grid]                       # box for indicator / function rasterization
    box = [[-1.8, 1.8], [-1.8, 1.8], [-1.7, 1.7]]
    shape = [48, 48, 48]

    [times]                      # geometric grid t0 * ratio^k, k < count
    start = 0.06                 # largest time, > 0
    ratio = 0.72                 # in (0, 1) so the grid decreases strictly
    count = 8
    order = 2                    # extrapolation order in sqrt(t)

    [region]                     # for perimeter-type suites
    kind = "euclidean-ball"      # euclidean-ball | vertical-halfspace
    center = [0.0, 0.0, 0.0]
    radius = 0.7
    # halfspace: nu = [..], offset = 0.0, window = [[lo, hi], ..]

    [function]                   # for variation / commutator / coarea suites
    kind = "mollified-ball"      # mollified-ball | gaussian-bump | cone | radial-bump
    radius = 0.75                # mollified-ball, cone
    width = 0.25                 # mollified-ball ramp half-width
    sigma = 0.5                  # gaussian-bump
    center = [0.0, 0.0, 0.0]

    [ledoux]                     # quadrature rule knobs (deterministic engines)
    nr = 14
    nz = 10
    nang = 10
    umax = 6.5

    [coarea]
    tau_count = 201              # uniform level grid on (margin, 1 - margin)
    tau_margin = 2e-3
    refine = 1                   # boundary quadrature refinement

    [commutator]
    residual_t = 0.1             # time for the commutation-residual check
    halving = false              # also run the half-resolution comparison

    [tolerances]                 # per-suite thresholds; missing keys use the
    mass_rel = 5e-3              # defaults listed in DEFAULT_TOLERANCES

Every suite reads only the tables it needs; ``parse_config`` validates all
of them up front so a typo fails fast with the offending key path.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import tomli

from . import regions as rg
from .groups import GroupSpec, group_from_arrays, group_from_preset
from .heat import build_engine
from .semigroup import GridFunction, grid_from_callable

__all__ = [
    "ConfigError", "TimeGrid", "ExperimentConfig", "load_config",
    "parse_config", "DEFAULT_TOLERANCES", "materialize_function",
]


class ConfigError(ValueError):
    """Malformed configuration (bad TOML, unknown key, invalid value)."""


DEFAULT_TOLERANCES = {
    # kernel suite
    "mass_rel": 5e-3,
    "symmetry_rel": 1e-6,
    "homogeneity_rel": 1e-6,
    "agreement_rel": 0.05,
    # variation suite
    "de_giorgi_rel": 0.02,
    "ledoux_rel": 0.05,
    "phi_constancy": 1e-3,
    # perimeter suite
    "limit_rel": 0.05,
    "identity_rel": 1e-3,
    # commutator suite
    "mean_rel": 1e-3,
    "spread_rel": 1e-3,
    "tail_rel": 1e-4,
    "reconstruction": 1e-6,
    "residual_rel": 1e-2,
    # coarea suite
    "coarea_rel": 0.01,
}

_TABLE_KEYS = {
    "": {"label", "group", "engine", "grid", "times", "region", "function",
         "ledoux", "coarea", "commutator", "tolerances"},
    "group": {"preset", "n", "q", "b"},
    "engine": {"kind", "seed", "samples", "substeps"},
    "grid": {"box", "shape"},
    "times": {"start", "ratio", "count", "order"},
    "region": {"kind", "center", "radius", "nu", "offset", "window"},
    "function": {"kind", "radius", "width", "sigma", "center"},
    "ledoux": {"nr", "nz", "nang", "umax"},
    "coarea": {"tau_count", "tau_margin", "refine"},
    "commutator": {"residual_t", "halving"},
}


def _check_keys(table, mapping):
    allowed = _TABLE_KEYS[table] if table != "tolerances" else set(DEFAULT_TOLERANCES)
    unknown = set(mapping) - allowed
    if unknown:
        where = f"[{table}]" if table else "top level"
        raise ConfigError(f"unknown key(s) {sorted(unknown)} in {where}; "
                          f"allowed: {sorted(allowed)}")


@dataclass(frozen=True)
class TimeGrid:
    """Strictly decreasing geometric time grid start * ratio^k."""

    start: float
    ratio: float
    count: int
    order: int = 2

    def __post_init__(self):
        if not (self.start > 0 and 0 < self.ratio < 1 and self.count >= 1):
            raise ConfigError("times: need start > 0, 0 < ratio < 1, count >= 1")
        if self.order < 1:
            raise ConfigError("times: extrapolation order must be >= 1")

    def values(self):
        return tuple(self.start * self.ratio ** k for k in range(self.count))


@dataclass
class ExperimentConfig:
    """Validated run description; ``raw`` echoes the parsed TOML verbatim."""

    label: str = "run"
    group: dict = field(default_factory=lambda: {"preset": "heisenberg:1"})
    engine: dict = field(default_factory=lambda: {"kind": "auto"})
    grid: dict | None = None
    times: TimeGrid = TimeGrid(0.1, 0.7, 6)
    region: dict | None = None
    function: dict | None = None
    ledoux: dict = field(default_factory=dict)
    coarea: dict = field(default_factory=dict)
    commutator: dict = field(default_factory=dict)
    tolerances: dict = field(default_factory=dict)
    raw: dict = field(default_factory=dict)

    def tolerance(self, name):
        if name not in DEFAULT_TOLERANCES:
            raise KeyError(f"unknown tolerance {name!r}")
        return float(self.tolerances.get(name, DEFAULT_TOLERANCES[name]))

    def build_group(self) -> GroupSpec:
        g = self.group
        if "preset" in g:
            if len(g) > 1:
                raise ConfigError("group: give either a preset or n/q/b, not both")
            return group_from_preset(g["preset"])
        try:
            return group_from_arrays(int(g["n"]), int(g["q"]), g["b"])
        except KeyError as e:
            raise ConfigError(f"group: missing key {e.args[0]!r}") from None
        except ValueError as e:
            raise ConfigError(f"group: {e}") from None

    def build_engine(self, spec: GroupSpec, seed_override: int | None = None):
        e = self.engine
        kind = e.get("kind", "auto")
        seed = seed_override if seed_override is not None else e.get("seed")
        try:
            return build_engine(spec, kind, seed=seed,
                                samples=int(e.get("samples", 1_000_000)),
                                substeps=int(e.get("substeps", 64)))
        except ValueError as err:
            raise ConfigError(f"engine: {err}") from None

    def build_grid_box(self, spec: GroupSpec):
        if self.grid is None:
            raise ConfigError("this suite needs a [grid] table (box + shape)")
        box = tuple(tuple(float(v) for v in pair) for pair in self.grid["box"])
        shape = tuple(int(m) for m in self.grid["shape"])
        if len(box) != spec.n or len(shape) != spec.n:
            raise ConfigError(f"grid: box/shape must have {spec.n} axes")
        if any(len(p) != 2 or p[0] >= p[1] for p in box):
            raise ConfigError("grid: box axes must be (lo, hi) with lo < hi")
        if any(m < 4 for m in shape):
            raise ConfigError("grid: need at least 4 cells per axis")
        return box, shape

    def build_region(self, spec: GroupSpec):
        r = self.region
        if r is None:
            raise ConfigError("this suite needs a [region] table")
        kind = r.get("kind")
        if kind == "euclidean-ball":
            center = tuple(float(v) for v in r.get("center", (0.0,) * spec.n))
            if len(center) != spec.n or float(r.get("radius", 0)) <= 0:
                raise ConfigError("region: euclidean-ball needs an n-vector "
                                  "center and radius > 0")
            return rg.EuclideanBall(center=center, radius=float(r["radius"]))
        if kind == "vertical-halfspace":
            if "nu" not in r:
                raise ConfigError("region: vertical-halfspace needs nu")
            window = r.get("window")
            kw = {} if window is None else {
                "window": tuple(tuple(float(v) for v in p) for p in window)}
            return rg.VerticalHalfspace(nu=tuple(float(v) for v in r["nu"]),
                                        offset=float(r.get("offset", 0.0)), **kw)
        raise ConfigError(f"region: unknown kind {kind!r}")


def load_config(path) -> ExperimentConfig:
    with open(path, "rb") as fh:
        try:
            data = tomli.load(fh)
        except tomli.TOMLDecodeError as e:
            raise ConfigError(f"bad TOML in {path}: {e}") from None
    return parse_config(data)


def parse_config(data: dict) -> ExperimentConfig:
    _check_keys("", data)
    for name in ("group", "engine", "grid", "times", "region", "function",
                 "ledoux", "coarea", "commutator", "tolerances"):
        if name in data:
            if not isinstance(data[name], dict):
                raise ConfigError(f"[{name}] must be a table")
            _check_keys(name, data[name])

    times = TimeGrid(
        start=float(data.get("times", {}).get("start", 0.1)),
        ratio=float(data.get("times", {}).get("ratio", 0.7)),
        count=int(data.get("times", {}).get("count", 6)),
        order=int(data.get("times", {}).get("order", 2)))

    cfg = ExperimentConfig(
        label=str(data.get("label", "run")),
        group=dict(data.get("group", {"preset": "heisenberg:1"})),
        engine=dict(data.get("engine", {"kind": "auto"})),
        grid=dict(data["grid"]) if "grid" in data else None,
        times=times,
        region=dict(data["region"]) if "region" in data else None,
        function=dict(data["function"]) if "function" in data else None,
        ledoux=dict(data.get("ledoux", {})),
        coarea=dict(data.get("coarea", {})),
        commutator=dict(data.get("commutator", {})),
        tolerances=dict(data.get("tolerances", {})),
        raw=data)

    if cfg.engine.get("kind") == "monte-carlo" and "seed" not in cfg.engine:
        raise ConfigError("engine: monte-carlo requires an explicit seed")
    cfg.build_group()  # fail fast on group errors
    return cfg


# ---------------------------------------------------------------------------
# function shapes
# ---------------------------------------------------------------------------

def smoothstep(u):
    """Quintic smoothstep: 0 -> 1 on [0, 1] with two flat derivatives."""
    u = np.clip(u, 0.0, 1.0)
    return u * u * u * (10.0 + u * (-15.0 + 6.0 * u))


def d_smoothstep(u):
    u = np.clip(u, 0.0, 1.0)
    return 30.0 * u * u * (1.0 - u) * (1.0 - u)


def mollified_ball_profile(radius: float, width: float):
    """(profile, dprofile): 1 inside radius - width, 0 outside radius + width,
    quintic ramp across the 2*width window."""
    def profile(rho):
        return 1.0 - smoothstep((np.asarray(rho) - (radius - width)) / (2 * width))

    def dprofile(rho):
        return -d_smoothstep((np.asarray(rho) - (radius - width))
                             / (2 * width)) / (2 * width)

    return profile, dprofile


def materialize_function(spec: GroupSpec, fn: dict, box, shape):
    """Rasterize a [function] table onto the grid.

    Returns ``(grid_function, dprofile, support_radius)``; ``dprofile`` is
    the radial derivative when the shape is radial in the Euclidean norm
    (used for quadrature references), else None.
    """
    kind = fn.get("kind")
    center = np.asarray(fn.get("center", (0.0,) * spec.n), dtype=float)
    if center.shape != (spec.n,):
        raise ConfigError(f"function: center must be an {spec.n}-vector")

    def radial(values_of_rho):
        return grid_from_callable(
            box, shape,
            lambda p: values_of_rho(np.sqrt(((p - center) ** 2).sum(-1))))

    if kind == "mollified-ball":
        radius = float(fn.get("radius", 0.75))
        width = float(fn.get("width", 0.25))
        if not 0 < width < radius:
            raise ConfigError("function: mollified-ball needs 0 < width < radius")
        profile, dprofile = mollified_ball_profile(radius, width)
        return radial(profile), dprofile, radius + width
    if kind == "gaussian-bump":
        sigma = float(fn.get("sigma", 0.5))
        if sigma <= 0:
            raise ConfigError("function: gaussian-bump needs sigma > 0")
        prof = lambda rho: np.exp(-rho * rho / (2 * sigma * sigma))
        dprof = lambda rho: -(np.asarray(rho) / sigma**2) * np.exp(
            -np.asarray(rho) ** 2 / (2 * sigma * sigma))
        return radial(prof), dprof, math.inf
    if kind == "cone":
        radius = float(fn.get("radius", 1.0))
        if radius <= 0:
            raise ConfigError("function: cone needs radius > 0")
        prof = lambda rho: np.clip(1.0 - np.asarray(rho) / radius, 0.0, None)
        dprof = lambda rho: np.where(np.asarray(rho) < radius, -1.0 / radius, 0.0)
        return radial(prof), dprof, radius
    if kind == "radial-bump":
        radius = float(fn.get("radius", 1.0))
        prof = lambda rho: np.clip(1.0 - (np.asarray(rho) / radius) ** 2,
                                   0.0, None) ** 2
        dprof = lambda rho: np.where(
            np.asarray(rho) < radius,
            -4.0 * (np.asarray(rho) / radius**2)
            * np.clip(1.0 - (np.asarray(rho) / radius) ** 2, 0.0, None), 0.0)
        return radial(prof), dprof, radius
    raise ConfigError(f"function: unknown kind {kind!r}")
