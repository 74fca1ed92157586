"""Command-line harness: five suites, each a thin wrapper over the library.

    carnotheat kernel     --config cfg.toml --out outdir [--seed N] [--threads K]
    carnotheat variation  ...
    carnotheat perimeter  ...
    carnotheat commutator ...
    carnotheat coarea     ...

Each run writes ``report.json`` and ``report.csv`` into ``--out`` and prints
one line per check.  Exit status: 0 all checks passed, 1 at least one check
failed, 2 configuration or I/O error.  Reports are deterministic functions
of the config (and seed): quadrature suites reproduce bit-identically,
Monte Carlo runs are pinned by the counter-based generator.

``--seed`` overrides the config's engine seed; ``--threads`` caps the
compiled convolution cores' thread pool (they are currently single-threaded,
so this is a recorded no-op beyond 1).
"""

from __future__ import annotations

import argparse
import math
import sys
import time
import warnings

import numpy as np
from scipy.integrate import dblquad, quad

from . import commutators as cm
from . import functionals as fx
from . import regions as rg
from .config import (ConfigError, ExperimentConfig, load_config,
                     materialize_function)
from .groups import GroupSpec, dilate
from .heat import (HeisenbergQuadrature, MonteCarloStep2, QuadratureError,
                   build_engine, gaussian_bound_fit, heisenberg_layers,
                   kernel_mass)
from .reports import RunReport, check_close, check_ge, check_le
from .semigroup import l1_norm

__all__ = ["main", "run_kernel_suite", "run_variation_sweep",
           "run_perimeter_sweep", "run_commutator_suite", "run_coarea_check"]


def _sphere_area(n):
    """Surface measure of the unit (n-1)-sphere in R^n."""
    return 2.0 * math.pi ** (n / 2.0) / math.gamma(n / 2.0)


def _radial_grad_reference(spec, dprofile, support, box):
    """|grad_X f|_1 for f = profile(|x - center|) by quadrature.

    Euclidean: the gradient is profile'(rho) radially.  heisenberg:1: the
    horizontal projection carries the weight (w/rho) sqrt(1 + z^2/4).  Both
    need the shape centered at the origin of the group; enforced upstream.
    """
    rmax = min(support, max(hi - lo for lo, hi in box))
    if spec.is_abelian:
        val, err = quad(lambda r: abs(dprofile(r)) * r ** (spec.n - 1),
                        0.0, rmax, limit=200)
        return _sphere_area(spec.n) * val
    if heisenberg_layers(spec) == 1 and spec.n == 3:
        with warnings.catch_warnings():
            # |profile'| kinks trip quadpack's roundoff heuristic; the
            # returned error estimate is verified below instead
            warnings.simplefilter("ignore")
            val, err = dblquad(
                lambda z, w: 2 * math.pi * w * abs(dprofile(math.hypot(w, z)))
                * (w / math.hypot(w, z)) * math.sqrt(1 + z * z / 4),
                0.0, rmax, lambda w: -rmax, lambda w: rmax, epsabs=1e-10)
        if err > 1e-5 * max(val, 1e-300):
            raise ConfigError("radial gradient reference quadrature did not "
                              f"converge (err {err:.2g})")
        return val
    raise ConfigError("radial gradient references cover euclidean:n and "
                      "heisenberg:1 only")


def _require_centered(spec, fn):
    center = fn.get("center", (0.0,) * spec.n)
    if not spec.is_abelian and any(c != 0.0 for c in center):
        raise ConfigError("function: reference formulas on non-abelian groups "
                          "need center at the group origin")


def _engine_nodes(engine):
    if isinstance(engine, MonteCarloStep2):
        return engine.samples
    if isinstance(engine, HeisenbergQuadrature):
        p = engine.params
        return p.nr * p.nz
    return 0


def _new_report(suite, cfg: ExperimentConfig) -> RunReport:
    return RunReport(suite=suite, label=cfg.label, config=cfg.raw)


# ---------------------------------------------------------------------------
# suites
# ---------------------------------------------------------------------------

def run_kernel_suite(cfg: ExperimentConfig, *, seed=None, threads=1) -> RunReport:
    """Kernel sanity: unit mass, inversion symmetry, parabolic scaling, and
    Gaussian sandwich constants; Monte Carlo engines are instead compared
    pointwise against the matching deterministic engine."""
    start = time.perf_counter()
    spec = cfg.build_group()
    engine = cfg.build_engine(spec, seed)
    box, shape = cfg.build_grid_box(spec)
    rep = _new_report("kernel", cfg)
    rng = np.random.default_rng(int(cfg.engine.get("seed", 0) if seed is None
                                    else seed))
    lo = np.array([p[0] for p in box])
    hi = np.array([p[1] for p in box])
    pts = rng.uniform(0.35 * lo, 0.35 * hi, size=(50, spec.n))

    if isinstance(engine, MonteCarloStep2):
        twin_kind = ("closed-form" if spec.is_abelian else
                     "quadrature" if heisenberg_layers(spec) == 1 else None)
        if twin_kind is None:
            raise ConfigError("monte-carlo agreement check needs a "
                              "deterministic twin engine for this group")
        twin = build_engine(spec, twin_kind)
        probe = pts[:10]
        got = np.asarray(engine.eval(1.0, probe))
        want = np.asarray(twin.eval(1.0, probe))
        rel = float(np.max(np.abs(got - want) / want))
        rep.add(check_le("mc_vs_deterministic_rel", rel,
                         cfg.tolerance("agreement_rel"),
                         note=f"{len(probe)} points at t=1"))
    else:
        mass = kernel_mass(engine, 1.0, box, shape)
        rep.add(check_le("mass_defect", abs(mass - 1.0),
                         cfg.tolerance("mass_rel"), note=f"mass={mass!r}"))

        h0 = float(np.asarray(engine.eval(1.0, np.zeros((1, spec.n))))[0])
        sym = float(np.max(np.abs(np.asarray(engine.eval(1.0, pts))
                                  - np.asarray(engine.eval(1.0, -pts)))))
        rep.add(check_le("inversion_symmetry", sym,
                         cfg.tolerance("symmetry_rel") * h0,
                         note=f"h(1,0)={h0!r}"))

        base = np.asarray(engine.eval(1.0, pts))
        worst = 0.0
        for lam in (0.5, 2.0):
            scaled = np.asarray(engine.eval(lam * lam,
                                            dilate(spec, lam, pts)))
            worst = max(worst, float(np.max(np.abs(
                scaled * lam ** spec.hom_dim - base) / base)))
        rep.add(check_le("parabolic_scaling_rel", worst,
                         cfg.tolerance("homogeneity_rel")))

        try:
            c_lo, c_up = gaussian_bound_fit(engine, [0.5, 1.0, 2.0],
                                            pts)
            rep.add(check_le("gaussian_sandwich_c", max(c_lo, c_up), 1e6,
                             note=f"c_lower={c_lo:.4g} c_upper={c_up:.4g}"))
            rep.scalars["gaussian_c_lower"] = c_lo
            rep.scalars["gaussian_c_upper"] = c_up
        except QuadratureError as e:
            rep.add(check_le("gaussian_sandwich_c", math.inf, 1e6,
                             note=str(e)))

    rep.wall_clock = time.perf_counter() - start
    rep.sample_count = _engine_nodes(engine)
    rep.scalars["threads"] = threads
    return rep


def run_variation_sweep(cfg: ExperimentConfig, *, seed=None, threads=1) -> RunReport:
    """Smoothed-gradient and shift-difference sweeps over the time grid,
    extrapolated to t = 0 and compared against the quadrature reference
    |grad_X f|_1 (times the kernel's first-layer marginal for the shifts)."""
    start = time.perf_counter()
    spec = cfg.build_group()
    engine = cfg.build_engine(spec, seed)
    if isinstance(engine, MonteCarloStep2):
        raise ConfigError("variation sweeps need a deterministic engine "
                          "(the smoothed gradient is a convolution)")
    box, shape = cfg.build_grid_box(spec)
    if cfg.function is None:
        raise ConfigError("variation sweep needs a [function] table")
    _require_centered(spec, cfg.function)
    f, dprof, support = materialize_function(spec, cfg.function, box, shape)
    if dprof is None:
        raise ConfigError("variation references need a radial function kind")
    ref = _radial_grad_reference(spec, dprof, support, box)

    rep = _new_report("variation", cfg)
    ts = cfg.times.values()
    order = cfg.times.order

    dg = fx.sweep_report("de_giorgi", ts,
                         lambda t: fx.de_giorgi_functional(spec, f, t, engine),
                         reference=ref, order=order)
    rep.sweeps.append(dg.as_dict())
    if cfg.function["kind"] == "mollified-ball":
        # indicator-like profiles approach the limit from below and then
        # saturate at the grid's resolution floor; the liminf is estimated
        # by the plateau, not by extrapolating a sqrt(t) model through it
        liminf = max(dg.values)
        bar = abs(dg.values[-1] - dg.values[-2])
        rep.add(check_close("de_giorgi_liminf", liminf, ref,
                            cfg.tolerance("de_giorgi_rel"), error=bar,
                            note="plateau estimate; extrapolated limit in "
                                 "the sweep table"))
    else:
        rep.add(check_close("de_giorgi_limit", dg.limit, ref,
                            cfg.tolerance("de_giorgi_rel"),
                            error=dg.limit_error))

    phi_vals = []
    for k in range(8):
        ang = math.pi * k / 4.0
        nu = np.zeros(spec.q)
        nu[0], nu[1 % spec.q] = math.cos(ang), math.sin(ang)
        phi_vals.append(fx.phi_g(spec, nu, engine))
    phi = phi_vals[0]
    rep.add(check_le("phi_direction_spread", max(phi_vals) - min(phi_vals),
                     cfg.tolerance("phi_constancy") * phi))

    rule = None
    if not isinstance(engine, MonteCarloStep2):
        led_kw = {k: cfg.ledoux[k] for k in ("nr", "nz", "nang", "umax")
                  if k in cfg.ledoux}
        rule = fx.ledoux_rule(spec, engine, **led_kw)
    led = fx.sweep_report(
        "ledoux", ts,
        lambda t: fx.ledoux_functional(spec, f, t, engine, rule=rule),
        reference=phi * ref, order=order)
    rep.sweeps.append(led.as_dict())
    rep.add(check_close("ledoux_limit", led.limit, phi * ref,
                        cfg.tolerance("ledoux_rel"), error=led.limit_error))

    rep.scalars.update(grad_reference=ref, phi=phi, threads=threads)
    rep.wall_clock = time.perf_counter() - start
    rep.sample_count = _engine_nodes(engine)
    return rep


def run_perimeter_sweep(cfg: ExperimentConfig, *, seed=None, threads=1) -> RunReport:
    """Half-heat content sweep against the weighted-perimeter limit, the
    exchange identity at every time, and the uniform perimeter bound."""
    start = time.perf_counter()
    spec = cfg.build_group()
    engine = cfg.build_engine(spec, seed)
    if isinstance(engine, MonteCarloStep2):
        raise ConfigError("perimeter sweeps need a deterministic engine")
    box, shape = cfg.build_grid_box(spec)
    region = cfg.build_region(spec)

    rep = _new_report("perimeter", cfg)
    per = rg.perimeter_smooth(spec, region, refine=2)
    phi = fx.phi_g(spec, np.eye(spec.q)[0], engine)
    # phi is direction-independent for these groups (checked in the
    # variation suite); the weighted boundary integral collapses to phi * P
    ref = phi * per

    ts = cfg.times.values()
    values, errors, gaps = [], [], []
    for t in ts:
        half, absf, gap = fx.half_heat_identity_gap(spec, region, t, engine,
                                                    box, shape)
        values.append(half)
        errors.append(abs(half - absf))
        gaps.append(gap)
    lim, lim_err = fx.richardson_limit(ts, values, order=cfg.times.order)
    lim_err += max(errors)
    rep.sweeps.append(fx.VariationReport(
        label="half_heat", t_grid=tuple(ts), values=tuple(values),
        errors=tuple(errors), limit=lim, limit_error=lim_err,
        reference=ref, ratio=lim / ref).as_dict())
    rep.add(check_close("half_heat_limit", lim, ref,
                        cfg.tolerance("limit_rel"), error=lim_err))
    rep.add(check_le("exchange_identity_gap", max(gaps),
                     cfg.tolerance("identity_rel"),
                     note="max over the time grid"))

    marc = fx.marc_bound_check(spec, region, ts, engine, box, shape)
    rep.add(check_ge("perimeter_bound_slack", marc.slack, 0.0,
                     note="min over t of c_g - (value + bar) / perimeter"))
    rep.sweeps.append({"label": "perimeter_bound_ratio",
                       "t_grid": list(marc.t_grid),
                       "values": list(marc.ratios),
                       "errors": [e / marc.perimeter for e in marc.lhs_errors],
                       "limit": marc.ratio_limit,
                       "limit_error": marc.ratio_limit_error})
    rep.scalars.update(perimeter=per, phi=phi, weighted_perimeter=ref,
                       c_g=marc.c_g, bound_ratio_limit=marc.ratio_limit,
                       threads=threads)
    rep.wall_clock = time.perf_counter() - start
    rep.sample_count = _engine_nodes(engine)
    return rep


def run_commutator_suite(cfg: ExperimentConfig, *, seed=None, threads=1) -> RunReport:
    """Commutator-kernel properties (zero mean, t-invariant mass, Gaussian
    tail), the vertical-divergence reconstruction identity, and the
    semigroup commutation residual with its exchange-correction bound."""
    start = time.perf_counter()
    spec = cfg.build_group()
    engine = cfg.build_engine(spec, seed)
    if not isinstance(engine, HeisenbergQuadrature):
        raise ConfigError("commutator suite needs the quadrature engine "
                          "(term-encoded kernels)")
    rep = _new_report("commutator", cfg)

    gap = cm.reconstruction_gap(spec, engine)
    rep.add(check_le("vertical_divergence_reconstruction", gap,
                     cfg.tolerance("reconstruction")))

    ts = cfg.times.values()
    props = cm.check_g_properties(spec, engine, ts)
    rep.add(check_le("kernel_mean_over_l1",
                     max(abs(v) for v in props.mean_over_l1.values()),
                     cfg.tolerance("mean_rel")))
    rep.add(check_le("kernel_l1_spread", props.l1_spread,
                     cfg.tolerance("spread_rel")))
    rep.add(check_le("kernel_tail_over_l1",
                     max(props.tail_over_l1.values()),
                     cfg.tolerance("tail_rel"),
                     note=f"Euclidean radius {props.tail_radius} at t=1; the "
                          "measured tail sits near 8e-3 (known failure at "
                          "the 1e-4 default)"))
    rep.add(check_le("gaussian_envelope_c",
                     max(props.envelope_c.values()), 1e6, note="existence"))
    rep.scalars["kernel_l1_max"] = max(max(v) for v in props.l1.values())

    if cfg.function is not None and cfg.grid is not None:
        box, shape = cfg.build_grid_box(spec)
        f, _, _ = materialize_function(spec, cfg.function, box, shape)
        t_res = float(cfg.commutator.get("residual_t", min(ts)))
        resid, grad_l1 = cm.commutator_residual(spec, 0, f, t_res, engine)
        rep.add(check_le("commutation_residual_rel", resid / grad_l1,
                         cfg.tolerance("residual_rel"), note=f"t={t_res}"))
        if cfg.commutator.get("halving", False):
            half_shape = tuple(max(m // 2, 8) for m in shape)
            f2, _, _ = materialize_function(spec, cfg.function, box, half_shape)
            resid2, grad2 = cm.commutator_residual(spec, 0, f2, t_res, engine)
            rep.add(check_ge("residual_halving_gain",
                             (resid2 / grad2) / (resid / grad_l1), 2.0,
                             note="coarse/fine relative residual"))

        gmax = rep.scalars["kernel_l1_max"]
        worst = 0.0
        for t in ts:
            for i in range(spec.q):
                mu = cm.mu_t(spec, i, f, t, engine)
                mu_l1 = float((np.abs(mu.values) * f.weight_field()).sum())
                worst = max(worst, mu_l1 / (spec.q * gmax * grad_l1))
        rep.add(check_le("exchange_correction_bound", worst, 1.0,
                         note="max_t |mu|_1 / (q |G|_1 |grad f|_1)"))

    rep.wall_clock = time.perf_counter() - start
    rep.sample_count = _engine_nodes(engine)
    rep.scalars["threads"] = threads
    return rep


def run_coarea_check(cfg: ExperimentConfig, *, seed=None, threads=1) -> RunReport:
    """Layer-cake consistency: gradient mass vs integrated level-set
    perimeters for a radial profile with known level sets."""
    start = time.perf_counter()
    spec = cfg.build_group()
    box, shape = cfg.build_grid_box(spec)
    if cfg.function is None:
        raise ConfigError("coarea check needs a [function] table")
    _require_centered(spec, cfg.function)
    fn = cfg.function
    f, _, support = materialize_function(spec, fn, box, shape)
    if not math.isfinite(support):
        raise ConfigError("coarea check needs a compactly supported function")
    center = tuple(float(v) for v in fn.get("center", (0.0,) * spec.n))
    radius = float(fn.get("radius", 1.0))

    kind = fn["kind"]
    if kind == "cone":
        level = lambda tau: rg.EuclideanBall(center, radius * (1.0 - tau))
    elif kind == "radial-bump":
        level = lambda tau: rg.EuclideanBall(
            center, radius * math.sqrt(1.0 - math.sqrt(tau)))
    elif kind == "mollified-ball":
        width = float(fn.get("width", 0.25))
        from .config import smoothstep

        def level(tau, _r=radius, _w=width):
            lo, hi = 0.0, 1.0
            for _ in range(60):  # invert the quintic ramp: profile(rho) = tau
                mid = 0.5 * (lo + hi)
                if 1.0 - smoothstep(mid) > tau:
                    lo = mid
                else:
                    hi = mid
            return rg.EuclideanBall(center, (_r - _w) + 2.0 * _w * 0.5 * (lo + hi))
    else:
        raise ConfigError(f"coarea check has no level-set map for {kind!r}")

    margin = float(cfg.coarea.get("tau_margin", 2e-3))
    count = int(cfg.coarea.get("tau_count", 201))
    taus = np.linspace(margin, 1.0 - margin, count)
    coarea = fx.coarea_check(spec, f, taus, level,
                             refine=int(cfg.coarea.get("refine", 1)))

    rep = _new_report("coarea", cfg)
    rep.add(check_le("coarea_rel_gap", coarea.rel_gap,
                     cfg.tolerance("coarea_rel")))
    rep.scalars.update(gradient_mass=coarea.lhs,
                       perimeter_integral=coarea.rhs, threads=threads)
    rep.sweeps.append({"label": "level_perimeters",
                       "t_grid": list(coarea.tau_grid),
                       "values": list(coarea.perimeters),
                       "errors": [0.0] * len(coarea.tau_grid)})
    rep.wall_clock = time.perf_counter() - start
    return rep


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

_SUITES = {
    "kernel": run_kernel_suite,
    "variation": run_variation_sweep,
    "perimeter": run_perimeter_sweep,
    "commutator": run_commutator_suite,
    "coarea": run_coarea_check,
}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="carnotheat",
        description="Heat-semigroup BV functionals on step-2 Carnot groups")
    sub = parser.add_subparsers(dest="suite", required=True)
    for name, fn in _SUITES.items():
        sp = sub.add_parser(name, help=fn.__doc__.splitlines()[0].lower())
        sp.add_argument("--config", required=True, help="TOML experiment file")
        sp.add_argument("--out", default=".", help="report directory")
        sp.add_argument("--seed", type=int, default=None,
                        help="override the engine seed")
        sp.add_argument("--threads", type=int, default=1,
                        help="thread cap for compiled kernels")
    args = parser.parse_args(argv)

    if args.threads < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return 2
    if args.threads > 1:
        import numba
        numba.set_num_threads(min(args.threads,
                                  numba.config.NUMBA_NUM_THREADS))

    try:
        cfg = load_config(args.config)
        report = _SUITES[args.suite](cfg, seed=args.seed, threads=args.threads)
        jpath, cpath = report.write(args.out)
    except (ConfigError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2

    for line in report.summary_lines():
        print(line)
    status = "PASS" if report.passed else "FAIL"
    print(f"{status} {report.suite} [{report.label}] in "
          f"{report.wall_clock:.1f}s -> {jpath}")
    return 0 if report.passed else 1


if __name__ == "__main__":
    sys.exit(main())
