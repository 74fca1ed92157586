"""Heat kernel engines for step-2 Carnot groups.

Three interchangeable evaluators for the fundamental solution h(t, x) of
the heat operator d/dt - sum_{j<=q} X_j^2:

* :class:`EuclideanClosedForm` -- the exact Gaussian
  ``(4 pi t)^{-n/2} exp(-|x|^2 / (4t))`` for abelian specs.  The generator
  is ``sum_j d_j^2`` (no 1/2 in front), so each coordinate carries variance
  ``2t``; every downstream constant depends on this normalization.
* :class:`HeisenbergQuadrature` -- tabulated quadrature of the classical
  one-dimensional integral representation of the Heisenberg kernel

      h(1, (w, z)) = (pi (4 pi)^d)^{-1} *
          int_0^inf cos(lam z) (lam/sinh lam)^d
                    exp(-(lam coth lam) |w|^2 / 4) dlam

  on H^d = R^{2d+1}.  Values at general t come from the dilation scaling
  ``h(t, x) = t^{-Q/2} h(1, D(1/sqrt t) x)`` rather than re-quadrature, so
  homogeneity holds exactly by construction; evenness of the tables in z
  makes the inverse symmetry h(t, x^{-1}) = h(t, x) exact as well.
* :class:`MonteCarloStep2` -- kernel-density estimates from group-composed
  weak-Euler samples.  Works for any step-2 spec and is meant for
  cross-validation of the other two engines, not for production accuracy.

The module-level helpers :func:`eval_kernel`, :func:`kernel_mass`,
:func:`sample_heat` and :func:`gaussian_bound_fit` provide a uniform
front-end over the engines.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.special import erf

from .groups import GroupSpec, compose, derive_coeff_tables, dilate

__all__ = [
    "QuadratureError",
    "QuadParams",
    "EuclideanClosedForm",
    "HeisenbergQuadrature",
    "MonteCarloStep2",
    "build_engine",
    "eval_kernel",
    "eval_kernel_grad",
    "kernel_mass",
    "sample_heat",
    "gaussian_bound_fit",
    "export_kernel_csv",
]


class QuadratureError(RuntimeError):
    """Quadrature self-check failed; message carries the achieved error."""


def _check_t(t: float) -> float:
    t = float(t)
    if not t > 0.0:
        raise ValueError(f"t must be positive, got {t}")
    return t


# ---------------------------------------------------------------------------
# closed form (abelian)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EuclideanClosedForm:
    """Exact Gaussian kernel for abelian specs."""

    spec: GroupSpec

    def __post_init__(self):
        if not self.spec.is_abelian:
            raise ValueError("EuclideanClosedForm requires an abelian spec")

    def eval(self, t, x):
        t = _check_t(t)
        x = np.asarray(x, dtype=float)
        n = self.spec.n
        return (4.0 * np.pi * t) ** (-n / 2.0) * np.exp(
            -np.sum(x * x, axis=-1) / (4.0 * t))

    def grad(self, t, x):
        """Horizontal (= full) gradient, shape (..., n)."""
        x = np.asarray(x, dtype=float)
        return -x / (2.0 * _check_t(t)) * self.eval(t, x)[..., None]

    def box_mass(self, t, box):
        """Exact integral of h(t, .) over an axis-aligned box (erf product)."""
        t = _check_t(t)
        s = 2.0 * math.sqrt(t)  # per-axis std deviation sqrt(2t) * sqrt2
        out = 1.0
        for lo, hi in box:
            out *= 0.5 * (erf(hi / s) - erf(lo / s))
        return out


# ---------------------------------------------------------------------------
# Heisenberg quadrature tables
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class QuadParams:
    """Quadrature-rule and table-resolution knobs for the Heisenberg engine.

    The lambda integral is cut at ``lam_max`` (integrand decays like
    ``2^d lam^d e^{-d lam}``, so 50 leaves a tail below 1e-18) and evaluated
    by composite Gauss-Legendre panels; the oscillation cos(lam z) stays
    resolved as long as ``panel * zmax`` is a few radians per panel.
    """

    lam_max: float = 50.0
    panel: float = 0.25
    order: int = 10
    rmax: float = 10.0
    zmax: float = 9.0
    nr: int = 801
    nz: int = 721


def _gl_rule(lam_max: float, panel: float, order: int):
    x, w = np.polynomial.legendre.leggauss(order)
    nseg = int(round(lam_max / panel))
    mids = (np.arange(nseg) + 0.5) * panel
    half = 0.5 * panel
    lam = (mids[:, None] + half * x[None, :]).ravel()
    wt = np.tile(half * w, nseg)
    return lam, wt


def _raw_h(d: int, r, z, lam_max: float, panel: float, order: int):
    """Direct quadrature of the integral representation (no tables)."""
    lam, wt = _gl_rule(lam_max, panel, order)
    u = lam / np.tanh(lam)
    s = (lam / np.sinh(lam)) ** d
    pref = 1.0 / (np.pi * (4.0 * np.pi) ** d)
    r = np.atleast_1d(np.asarray(r, dtype=float))
    z = np.atleast_1d(np.asarray(z, dtype=float))
    A = s[None, :] * np.exp(-np.outer(r * r, u) / 4.0)
    return pref * np.einsum("pl,pl,l->p", A, np.cos(np.outer(z, lam)), wt)


def raw_term_values(d: int, r, z, p: QuadParams = QuadParams()):
    """(H, Hs, Hz) at arbitrary (r, z) by direct quadrature, no tables.

    Same integrals as the table build, evaluated pointwise: smooth in both
    arguments (the interpolation floor of the tables, ~1e-5, does not
    apply), at the cost of a full lambda quadrature per call.  Used where
    difference quotients need more smoothness than bilinear tables give.
    """
    lam, wt = _gl_rule(p.lam_max, p.panel, p.order)
    u = lam / np.tanh(lam)
    s = (lam / np.sinh(lam)) ** d
    pref = 1.0 / (np.pi * (4.0 * np.pi) ** d)
    r = np.atleast_1d(np.asarray(r, dtype=float))
    z = np.atleast_1d(np.asarray(z, dtype=float))
    A = s[None, :] * np.exp(-np.outer(r * r, u) / 4.0)
    C = np.cos(np.outer(z, lam))
    S = np.sin(np.outer(z, lam))
    H = pref * ((A * C) @ wt)
    Hs = -0.5 * pref * ((A * u[None, :] * C) @ wt)
    Hz = -pref * ((A * lam[None, :] * S) @ wt)
    return H, Hs, Hz


@lru_cache(maxsize=4)
def _kernel_tables(d: int, p: QuadParams):
    """Tables of h(1, .) on H^d over (r, z) in [0, rmax] x [0, zmax].

    Returns (rs, zs, H, Hs, Hz) where Hs = (d_r h)/r (smooth through r=0)
    and Hz = d_z h.  H and Hs are even in z, Hz is odd; callers fold the
    sign of z before interpolating.
    """
    lam, wt = _gl_rule(p.lam_max, p.panel, p.order)
    u = lam / np.tanh(lam)
    s = (lam / np.sinh(lam)) ** d
    rs = np.linspace(0.0, p.rmax, p.nr)
    zs = np.linspace(0.0, p.zmax, p.nz)
    pref = 1.0 / (np.pi * (4.0 * np.pi) ** d)
    A = s[None, :] * np.exp(-np.outer(rs * rs, u) / 4.0)  # (nr, nlam)
    C = wt[:, None] * np.cos(np.outer(lam, zs))           # (nlam, nz)
    S = wt[:, None] * np.sin(np.outer(lam, zs))
    H = pref * (A @ C)
    Hs = -0.5 * pref * ((A * u[None, :]) @ C)
    Hz = -pref * ((A * lam[None, :]) @ S)
    return rs, zs, H, Hs, Hz


def _interp_tables(tables, r, za, dr, dz, nr, nz):
    """Shared bilinear interpolation; returns one array per table.

    Points with r >= rmax or |z| >= zmax fall outside the tabulated window
    and evaluate to 0 (the kernel there is below ~1e-11).
    """
    fr = r / dr
    fz = za / dz
    ir = np.minimum(fr.astype(np.int64), nr - 2)
    iz = np.minimum(fz.astype(np.int64), nz - 2)
    wr = fr - ir
    wz = fz - iz
    inside = (fr < nr - 1) & (fz < nz - 1)
    ir = np.where(inside, ir, 0)
    iz = np.where(inside, iz, 0)
    out = []
    for tab in tables:
        v = ((1 - wr) * (1 - wz) * tab[ir, iz]
             + wr * (1 - wz) * tab[ir + 1, iz]
             + (1 - wr) * wz * tab[ir, iz + 1]
             + wr * wz * tab[ir + 1, iz + 1])
        out.append(np.where(inside, v, 0.0))
    return out


def heisenberg_layers(spec: GroupSpec) -> int:
    """Return d if spec carries the standard H^d structure constants, else 0."""
    d, r = divmod(spec.n, 2)
    if r != 1 or spec.nv != 1 or d < 1:
        return 0
    b0 = np.zeros((2 * d, 2 * d))
    for i in range(d):
        b0[i, d + i] = 1.0
        b0[d + i, i] = -1.0
    return d if np.array_equal(spec.b[0], b0) else 0


class HeisenbergQuadrature:
    """Table-backed evaluator of the H^d heat kernel.

    The kernel is a function of (|w|, z) only (horizontal rotation
    invariance), so a single 2D table pair per derivative suffices.  The
    build runs a self-check against an independent finer rule and raises
    :class:`QuadratureError` if the two disagree beyond ``check_tol``.
    """

    def __init__(self, spec: GroupSpec, params: QuadParams = QuadParams(),
                 check_tol: float = 1e-9):
        d = heisenberg_layers(spec)
        if d == 0:
            raise ValueError(
                "HeisenbergQuadrature needs a heisenberg:d spec; "
                "use MonteCarloStep2 for general step-2 groups")
        self.spec = spec
        self.d = d
        self.params = params
        self.rs, self.zs, self.H, self.Hs, self.Hz = _kernel_tables(d, params)
        self._dr = self.rs[1] - self.rs[0]
        self._dz = self.zs[1] - self.zs[0]
        # cumulative z-primitive of H, for exact-in-z fiber integrals
        self.Hc = np.zeros_like(self.H)
        self.Hc[:, 1:] = np.cumsum(
            0.5 * (self.H[:, 1:] + self.H[:, :-1]) * self._dz, axis=1)
        # lightweight convergence check: probe values against a finer rule
        pr = np.array([0.0, 0.5, 1.5, 3.0, 0.0, 2.0])
        pz = np.array([0.0, 0.0, 1.0, 2.0, 3.0, 4.0])
        coarse = _raw_h(d, pr, pz, params.lam_max, params.panel, params.order)
        fine = _raw_h(d, pr, pz, params.lam_max * 1.2, params.panel / 2, params.order + 4)
        self.quad_error = float(np.abs(coarse - fine).max())
        if self.quad_error > check_tol:
            raise QuadratureError(
                f"lambda-rule self-check failed: achieved {self.quad_error:.3e}, "
                f"requested {check_tol:.3e}")
        if d == 1:
            exact = abs(self.H[0, 0] - 1.0 / 16.0)
            if exact > 1e-12:
                raise QuadratureError(
                    f"h(1,0) deviates from the exact 1/16 by {exact:.3e}")

    # -- scaling helpers ---------------------------------------------------

    def _split(self, t, x):
        """Dilate to t=1 coordinates and fold the z sign; returns (r, |z|, sign z, w)."""
        x = np.asarray(x, dtype=float)
        s = math.sqrt(t)
        w = x[..., :-1] / s
        z = x[..., -1] / t
        return np.sqrt(np.sum(w * w, axis=-1)), np.abs(z), np.sign(z), w

    def eval(self, t, x):
        t = _check_t(t)
        r, za, _, _ = self._split(t, x)
        (v,) = _interp_tables((self.H,), r, za, self._dr, self._dz,
                              self.params.nr, self.params.nz)
        return t ** (-self.spec.hom_dim / 2.0) * v

    def grad(self, t, x):
        """Horizontal gradient (X_1 h, ..., X_q h)(t, x), shape (..., q).

        At t=1, d_{w_i} h = w_i * Hs and d_z h = Hz, so
        X_i h = w_i Hs + q_i(w) Hz with q_i(w) = -(1/2)(b w)_i the vertical
        field coefficient; general t by the weight-1 operator scaling
        X_i h(t, .) = t^{-(Q+1)/2} (X_i h(1, .)) o D(1/sqrt t).
        """
        t = _check_t(t)
        r, za, sz, w = self._split(t, x)
        hs, hz = _interp_tables((self.Hs, self.Hz), r, za, self._dr, self._dz,
                                self.params.nr, self.params.nz)
        hz = hz * sz
        qv = -0.5 * np.einsum("ij,...j->...i", self.spec.b[0], w)
        scale = t ** (-(self.spec.hom_dim + 1) / 2.0)
        return scale * (w * hs[..., None] + qv * hz[..., None])

    def grad_norm(self, t, x):
        """|nabla_X h|(t, x): equals r sqrt(Hs^2 + Hz^2/4) by H-type algebra."""
        t = _check_t(t)
        r, za, _, _ = self._split(t, x)
        hs, hz = _interp_tables((self.Hs, self.Hz), r, za, self._dr, self._dz,
                                self.params.nr, self.params.nz)
        scale = t ** (-(self.spec.hom_dim + 1) / 2.0)
        return scale * r * np.sqrt(hs * hs + 0.25 * hz * hz)

    def _cum_at(self, r, z):
        """Odd-extended bilinear lookup of the cumulative z-table.

        Returns integral of h(1, (w, .)) from 0 to z at |w| = r; saturates at
        the table edge (the kernel beyond is below ~1e-11).
        """
        nr, nz = self.params.nr, self.params.nz
        r, z = np.broadcast_arrays(np.asarray(r, float), np.asarray(z, float))
        fr = r / self._dr
        rin = fr < nr - 1
        ir = np.where(rin, np.minimum(fr.astype(np.int64), nr - 2), 0)
        wr = np.where(rin, fr - ir, 0.0)
        fz = np.minimum(np.abs(z) / self._dz, nz - 1.0)
        iz = np.minimum(fz.astype(np.int64), nz - 2)
        wz = fz - iz
        v = ((1 - wr) * (1 - wz) * self.Hc[ir, iz]
             + wr * (1 - wz) * self.Hc[ir + 1, iz]
             + (1 - wr) * wz * self.Hc[ir, iz + 1]
             + wr * wz * self.Hc[ir + 1, iz + 1])
        return np.sign(z) * np.where(rin, v, 0.0)

    def z_fiber_integral(self, t, w, z_lo, z_hi):
        """Integral of h(t, (w, .)) over [z_lo, z_hi], exact in z.

        The vertical coordinate has homogeneity degree 2, so the kernel's
        z-scale is t rather than sqrt(t): pointwise z-sampling on a fixed
        lattice aliases the kernel away once the spacing passes ~t.  Fiber
        integrals from the cumulative table avoid that failure mode entirely.
        """
        t = _check_t(t)
        w = np.atleast_2d(np.asarray(w, dtype=float))
        r = np.sqrt(np.sum(w * w, axis=-1)) / math.sqrt(t)
        val = (self._cum_at(r, np.asarray(z_hi, float) / t)
               - self._cum_at(r, np.asarray(z_lo, float) / t))
        return t ** (1.0 - self.spec.hom_dim / 2.0) * val


# ---------------------------------------------------------------------------
# Monte Carlo sampler / KDE engine
# ---------------------------------------------------------------------------

@dataclass
class MonteCarloStep2:
    """Weak-Euler sampler of the heat flow on any step-2 spec.

    A path of ``substeps`` horizontal Gaussian increments with per-step
    variance 2t/substeps is composed through the group law; the second
    layer picks up the discrete Levy area automatically.  The scheme is
    first-order weak in 1/substeps.  One counter-based generator
    (``numpy`` Philox) keyed by ``seed`` drives everything, so results are
    reproducible and independent of threading.
    """

    spec: GroupSpec
    samples: int = 1_000_000
    substeps: int = 64
    seed: int = 0
    kde_bandwidth: float | None = None  # None -> Scott's rule
    _cache: dict = field(default_factory=dict, repr=False)

    def sample(self, t, count=None):
        t = _check_t(t)
        if self.substeps < 1:
            raise ValueError("substeps must be >= 1")
        count = self.samples if count is None else int(count)
        rng = np.random.Generator(np.random.Philox(self.seed))
        pts = np.zeros((count, self.spec.n))
        sd = math.sqrt(2.0 * t / self.substeps)
        step = np.zeros((count, self.spec.n))
        for _ in range(self.substeps):
            step[:, :self.spec.q] = rng.normal(0.0, sd, size=(count, self.spec.q))
            pts = compose(self.spec, pts, step)
        return pts

    def _samples_for(self, t):
        key = float(t)
        if key not in self._cache:
            self._cache[key] = self.sample(t)
        return self._cache[key]

    def eval(self, t, x):
        """Kernel-density estimate of h(t, x); cross-validation accuracy only.

        For heisenberg:1 specs the sampler law is exactly invariant under
        horizontal rotations and z-reflection paired with w-reflection, so
        the estimate runs in (|w|, z) with mirrored z, dividing out the
        2 pi r ring measure.  A two-bandwidth Richardson step removes the
        leading O(bandwidth^2) KDE bias.  Other specs use a plain product
        KDE in R^n.
        """
        t = _check_t(t)
        x = np.asarray(x, dtype=float)
        pts = self._samples_for(t)
        if heisenberg_layers(self.spec) == 1:
            return self._eval_rz(pts, x)
        return self._eval_product(pts, x)

    _CHUNK = 200_000  # samples per block; keeps KDE temporaries ~ tens of MB

    def _eval_rz(self, pts, x):
        single = x.ndim == 1
        x = np.atleast_2d(x)
        r0 = np.hypot(x[:, 0], x[:, 1])
        if np.any(r0 < 1e-9):
            raise ValueError("(r,z) density estimate is singular on the z-axis; "
                             "evaluate at r = |w| > 0")
        z0 = x[:, 2]
        r = np.hypot(pts[:, 0], pts[:, 1])
        z = pts[:, 2]
        n = len(pts)
        bw = self.kde_bandwidth
        if bw is None:
            # 2x Scott's 2D rate: the Richardson step below removes the
            # leading bias, so a wider kernel trades unremovable O(bw^4)
            # bias for a variance cut
            bw = 2.0 * n ** (-1.0 / 6.0)
        br, bz = bw * max(r.std(), 1e-12), bw * max(z.std(), 1e-12)

        def density(sr, sz):
            # mirrored in z: even extension halves the variance and enforces
            # the exact z-symmetry of the law
            tot = np.zeros(len(r0))
            for a in range(0, n, self._CHUNK):
                rr, zz = r[a:a + self._CHUNK], z[a:a + self._CHUNK]
                dr = (rr[None, :] - r0[:, None]) / sr
                acc = np.exp(-0.5 * dr * dr)
                dz1 = (zz[None, :] - z0[:, None]) / sz
                dz2 = (zz[None, :] + z0[:, None]) / sz
                acc *= 0.5 * (np.exp(-0.5 * dz1 * dz1) + np.exp(-0.5 * dz2 * dz2))
                tot += acc.sum(axis=1)
            return tot / (n * 2.0 * np.pi * sr * sz)

        coarse = density(br, bz)
        fine = density(br / math.sqrt(2.0), bz / math.sqrt(2.0))
        p = 2.0 * fine - coarse
        out = p / (2.0 * np.pi * r0)
        return out[0] if single else out

    def _eval_product(self, pts, x):
        single = x.ndim == 1
        x = np.atleast_2d(x)
        n, dim = pts.shape
        bw = self.kde_bandwidth or n ** (-1.0 / (dim + 4))
        sig = bw * np.maximum(pts.std(axis=0), 1e-12)
        tot = np.zeros(len(x))
        for a in range(0, n, self._CHUNK):
            u = (pts[None, a:a + self._CHUNK, :] - x[:, None, :]) / sig
            tot += np.exp(-0.5 * np.sum(u * u, axis=-1)).sum(axis=1)
        out = tot / (n * (2 * np.pi) ** (dim / 2) * np.prod(sig))
        return out[0] if single else out

    def grad(self, t, x, step=5e-2):
        """Horizontal gradient by 4th-order differences of the KDE (noisy)."""
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        x = np.atleast_2d(x)
        cols = []
        for i in range(self.spec.q):
            e = np.zeros(self.spec.n)
            e[i] = 1.0
            vals = [self.eval(t, compose(self.spec, x, s * step * e))
                    for s in (2, 1, -1, -2)]
            cols.append((-vals[0] + 8 * vals[1] - 8 * vals[2] + vals[3])
                        / (12 * step))
        out = np.stack(cols, axis=-1)
        return out[0] if single else out


# ---------------------------------------------------------------------------
# uniform front-end
# ---------------------------------------------------------------------------

def build_engine(spec: GroupSpec, kind: str = "auto", *, seed: int | None = None,
                 samples: int = 1_000_000, substeps: int = 64,
                 quad: QuadParams = QuadParams()):
    """Construct an engine by name: auto | closed-form | quadrature | monte-carlo."""
    if kind == "auto":
        if spec.is_abelian:
            kind = "closed-form"
        elif heisenberg_layers(spec):
            kind = "quadrature"
        else:
            kind = "monte-carlo"
    if kind == "closed-form":
        return EuclideanClosedForm(spec)
    if kind == "quadrature":
        return HeisenbergQuadrature(spec, quad)
    if kind == "monte-carlo":
        if seed is None:
            raise ValueError("monte-carlo engine requires an explicit seed")
        return MonteCarloStep2(spec, samples=samples, substeps=substeps, seed=seed)
    raise ValueError(f"unknown engine kind {kind!r}")


def eval_kernel(engine, t, x):
    """h(t, x) through whichever engine; validates t > 0."""
    return engine.eval(_check_t(t), x)


def eval_kernel_grad(engine, t, x):
    """(X_1 h, ..., X_q h)(t, x) through whichever engine."""
    return engine.grad(_check_t(t), x)


def kernel_mass(engine, t, box, shape):
    """Quadrature of h(t, .) over a box; contract: close to 1 and stable in t.

    ``box`` is a sequence of (lo, hi) pairs, ``shape`` per-axis counts.  The
    closed-form engine integrates exactly.  The Heisenberg engine combines
    the horizontal trapezoid lattice with exact vertical fiber integrals
    (see :meth:`HeisenbergQuadrature.z_fiber_integral`); plain pointwise
    quadrature would lose the kernel's degree-2 vertical scale at small t.
    Other engines (KDE) fall back to pointwise trapezoid quadrature.
    """
    t = _check_t(t)
    if isinstance(engine, EuclideanClosedForm):
        return engine.box_mass(t, box)
    if isinstance(engine, HeisenbergQuadrature):
        *wbox, (z_lo, z_hi) = box
        axes = [np.linspace(lo, hi, m) for (lo, hi), m in zip(wbox, shape[:-1])]
        pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
        fib = engine.z_fiber_integral(t, pts.reshape(-1, len(wbox)), z_lo, z_hi)
        fib = fib.reshape(pts.shape[:-1])
        for ax in reversed(range(len(axes))):
            fib = np.trapezoid(fib, axes[ax], axis=ax)
        return float(fib)
    axes = [np.linspace(lo, hi, m) for (lo, hi), m in zip(box, shape)]
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
    vals = engine.eval(t, grid.reshape(-1, len(box))).reshape(grid.shape[:-1])
    for ax in reversed(range(len(axes))):
        vals = np.trapezoid(vals, axes[ax], axis=ax)
    return float(vals)


def sample_heat(engine, t, count):
    """Draw approximate h(t, .) samples; only the MC engine can."""
    if not isinstance(engine, MonteCarloStep2):
        raise TypeError("sample_heat requires a MonteCarloStep2 engine")
    return engine.sample(_check_t(t), count)


def gaussian_bound_fit(engine, t_grid, x_grid, c_max=1e6, iters=80):
    """Smallest sandwich constants over a sampled lattice.

    Returns (c_lower, c_upper) with
    ``c_lower^{-1} t^{-Q/2} exp(-c_lower |x|^2 / t) <= h(t,x)`` and
    ``h(t,x) <= c_upper t^{-Q/2} exp(-|x|^2 / (c_upper t))`` at every lattice
    point.  This is a sanity fit on the given lattice, not a proof.  Raises
    :class:`QuadratureError` if either constant exceeds ``c_max``, which
    callers treat as an engine defect.
    """
    Q = engine.spec.hom_dim
    lo_all, up_all = 1e-12, 1e-12
    for t in np.atleast_1d(t_grid):
        t = _check_t(t)
        x = np.atleast_2d(np.asarray(x_grid, dtype=float))
        h = np.asarray(engine.eval(t, x), dtype=float)
        keep = h > 1e-300
        h, xx = h[keep], np.sum(x[keep] ** 2, axis=-1)
        tq = t ** (-Q / 2.0)

        def solve(fn):
            # fn(c) is monotone in c; bisect for fn(c) = 0 per point
            lo = np.full_like(h, 1e-12)
            hi = np.full_like(h, c_max)
            for _ in range(iters):
                mid = 0.5 * (lo + hi)
                good = fn(mid) >= 0.0
                hi = np.where(good, mid, hi)
                lo = np.where(good, lo, mid)
            return hi.max()

        up = solve(lambda c: np.log(c * tq) - xx / (c * t) - np.log(h))
        lo_c = solve(lambda c: np.log(h) - (np.log(tq / c) - c * xx / t))
        if up >= c_max * 0.99 or lo_c >= c_max * 0.99:
            raise QuadratureError(
                f"gaussian bound fit exceeded ceiling {c_max:g}: "
                f"c_lower={lo_c:.3g}, c_upper={up:.3g}")
        lo_all, up_all = max(lo_all, lo_c), max(up_all, up)
    return lo_all, up_all


def truncation_radius(t, eps, c):
    """Kernel support radius so the Gaussian tail mass is below eps."""
    return math.sqrt(c * _check_t(t) * math.log(1.0 / eps))


def export_kernel_csv(engine, t, points, path):
    """Write rows (t, x_1..x_n, h) for the given evaluation points."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    vals = engine.eval(_check_t(t), points)
    n = points.shape[1]
    header = "t," + ",".join(f"x{i + 1}" for i in range(n)) + ",h"
    data = np.column_stack([np.full(len(points), t), points, vals])
    np.savetxt(path, data, delimiter=",", header=header, comments="")
