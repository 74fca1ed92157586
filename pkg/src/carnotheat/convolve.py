"""Direct group-convolution cores and kernel term encodings.

Group convolution on a step-2 group is not a Euclidean convolution in the
second layer (the twist ``u = y^{-1} o x`` couples the layers), so there is
no FFT shortcut; we do a direct truncated sum.  Correctness first: the
kernel is truncated at its tabulated support, every output point sees the
same deterministic summation order, the vertical (degree-2) direction is
integrated exactly over grid cells rather than point-sampled, and the cost
is O(N * |ball|).

Kernels are encoded as short sums of terms

    K(t, u) = t^{-deg/2} * sum_m  c_m * u1h^{a_m} u2h^{b_m} * T_m(rh, zh)

with ``uh = D(1/sqrt t) u`` the dilated difference, ``rh = |uh_horizontal|``,
``zh`` the dilated vertical part, and T_m one of the Heisenberg tables
H, Hs = (d_r h)/r, Hz = d_z h.  This covers h itself, its left/right
horizontal derivatives, and the first-derivative commutator kernels; the
encoding is produced from the group's coefficient tables by a tiny
polynomial algebra so no formula is hard-coded.

The numba core is specialized to heisenberg:1 (the only non-abelian group
the table engine serves); abelian convolutions use the separable closed
form in :mod:`carnotheat.semigroup`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from .groups import GroupSpec, derive_coeff_tables
from .heat import HeisenbergQuadrature, heisenberg_layers

TAB_H, TAB_HS, TAB_HZ = 0, 1, 2


@dataclass(frozen=True)
class TermKernel:
    """Sum-of-terms encoding of a convolution kernel (see module docstring)."""

    coefs: tuple
    pows1: tuple
    pows2: tuple
    tabs: tuple
    degree: int  # homogeneity degree: K(t,u) = t^{-degree/2} K(1, D(1/sqrt t)u)

    def arrays(self):
        return (np.asarray(self.coefs, dtype=np.float64),
                np.asarray(self.pows1, dtype=np.int64),
                np.asarray(self.pows2, dtype=np.int64),
                np.asarray(self.tabs, dtype=np.int64))


def _collect(terms, degree):
    """Merge duplicate monomial/table pairs and drop zeros."""
    acc = {}
    for c, a, b, tid in terms:
        key = (a, b, tid)
        acc[key] = acc.get(key, 0.0) + c
    kept = [(c, a, b, tid) for (a, b, tid), c in sorted(acc.items()) if c != 0.0]
    return TermKernel(tuple(k[0] for k in kept), tuple(k[1] for k in kept),
                      tuple(k[2] for k in kept), tuple(k[3] for k in kept), degree)


def _require_h1(spec: GroupSpec):
    if heisenberg_layers(spec) != 1:
        raise ValueError("term-encoded kernels are implemented for heisenberg:1")


def kernel_h(spec: GroupSpec) -> TermKernel:
    """Encoding of the heat kernel itself."""
    _require_h1(spec)
    return _collect([(1.0, 0, 0, TAB_H)], spec.hom_dim)


def _derive_h_terms(spec, i, right):
    """Terms of X_i h (left) or X_i^R h (right) from the field coefficients.

    d_{u_i} h = u_i * Hs and d_z h = Hz, and the vertical coefficient of the
    invariant field is linear: -+ (1/2) sum_j b[0, i, j] u_j.
    """
    sign = 0.5 if right else -0.5
    terms = [(1.0, 1 if i == 0 else 0, 1 if i == 1 else 0, TAB_HS)]
    for j in range(spec.q):
        c = sign * spec.b[0, i, j]
        if c != 0.0:
            terms.append((c, 1 if j == 0 else 0, 1 if j == 1 else 0, TAB_HZ))
    return terms


def kernel_grad_h(spec: GroupSpec, i: int) -> TermKernel:
    """Encoding of X_i h (left-invariant horizontal derivative)."""
    _require_h1(spec)
    return _collect(_derive_h_terms(spec, i, right=False), spec.hom_dim + 1)


def kernel_right_grad_h(spec: GroupSpec, i: int) -> TermKernel:
    """Encoding of X_i^R h (right-invariant horizontal derivative)."""
    _require_h1(spec)
    return _collect(_derive_h_terms(spec, i, right=True), spec.hom_dim + 1)


def kernel_commutator(spec: GroupSpec, i: int, j: int) -> TermKernel:
    """Encoding of the commutator kernel with output index i and sum index j.

    Step-2 specialization: one right-derivative layer applied to the
    products c_i^k * h,

        G_j^i = sum_{k} sum_{m} theta^k_{j m} X_m^R (c_i^k h).

    The product rule closes inside the {H, Hs, Hz} table set because only h
    itself is differentiated once.
    """
    _require_h1(spec)
    tables = derive_coeff_tables(spec)
    terms = []
    for k in range(spec.nv):
        # c_i^k(u) = sum_j cpoly[k, i, j] u_j  (linear in the first layer)
        cpoly_row = tables.cpoly[k, i]
        for m in range(spec.q):
            th = tables.theta[k, j, m]
            if th == 0.0:
                continue
            # X_m^R (c h) = (d_m c) h + c u_m Hs + qbar_m c Hz with
            # qbar_m(u) = (1/2) sum_l b[0, m, l] u_l
            terms.append((th * cpoly_row[m], 0, 0, TAB_H))
            for a in range(spec.q):
                ca = cpoly_row[a]
                if ca == 0.0:
                    continue
                mono1 = (1 if a == 0 else 0) + (1 if m == 0 else 0)
                mono2 = (1 if a == 1 else 0) + (1 if m == 1 else 0)
                terms.append((th * ca, mono1, mono2, TAB_HS))
                for l in range(spec.q):
                    qb = 0.5 * spec.b[0, m, l]
                    if qb == 0.0:
                        continue
                    p1 = (1 if a == 0 else 0) + (1 if l == 0 else 0)
                    p2 = (1 if a == 1 else 0) + (1 if l == 1 else 0)
                    terms.append((th * ca * qb, p1, p2, TAB_HZ))
    return _collect(terms, spec.hom_dim)


# ---------------------------------------------------------------------------
# numba core (heisenberg:1)
# ---------------------------------------------------------------------------

@njit(cache=True, inline="always")
def _cum1(cum, x, dz, odd_ext):
    """Linear lookup of a cumulative z-profile, extended to x < 0.

    ``odd_ext`` picks the parity of the extension: the primitive of an even
    profile is odd, the primitive of an odd profile is even.  Saturates at
    the table edge (the profile beyond is treated as zero).
    """
    ax = -x if x < 0.0 else x
    f = ax / dz
    n = cum.shape[0]
    if f >= n - 1:
        v = cum[n - 1]
    else:
        i = int(f)
        w = f - i
        v = (1.0 - w) * cum[i] + w * cum[i + 1]
    if odd_ext and x < 0.0:
        return -v
    return v


@njit(cache=True, fastmath=True)
def _conv_h1_core(fw, x1, x2, x3, coefs, pows1, pows2, tabs,
                  TH, THS, THZ, dr, dz, t, trunc_r, pref, z_avg):
    """out[i] = sum_y fw[y] * K(t, y^{-1} o x_i), kernel truncated at its table.

    fw carries the quadrature weights.  Loop order: horizontal offset
    outermost, so the r-dependent table rows collapse to two 1D z-profiles
    (even part from H/Hs terms, odd part from Hz terms) shared by every
    output column; the vertical pass is then a short 1D correlation.  The
    fixed iteration order makes results bitwise reproducible.

    With ``z_avg`` the kernel is integrated exactly over each vertical cell
    (via cumulative profiles) instead of point-sampled.  This is essential:
    the kernel's vertical scale is t, not sqrt(t), so point samples on a
    fixed lattice alias once the z-spacing passes ~t, while cell averages
    keep the vertical quadrature exact for piecewise-constant data at every
    t (pure-vertical aliasing modes cancel identically).  Without ``z_avg``
    the kernel is point-sampled (only safe when d3 << t; kept for tests).
    """
    n1, n2, n3 = fw.shape
    out = np.zeros((n1, n2, n3))
    d1 = x1[1] - x1[0]
    d2 = x2[1] - x2[0]
    d3 = x3[1] - x3[0]
    st = math.sqrt(t)
    nterm = coefs.shape[0]
    nzt = TH.shape[1]
    zmax_t = (nzt - 1) * dz  # table support in zh units
    K1 = int(trunc_r * st / d1)
    K2 = int(trunc_r * st / d2)
    even = np.empty(nzt)
    odd = np.empty(nzt)
    cum_e = np.empty(nzt)
    cum_o = np.empty(nzt)
    vals = np.empty(2 * n3 + 1)
    for o1 in range(-K1, K1 + 1):
        u1 = o1 * d1
        u1h = u1 / st
        for o2 in range(-K2, K2 + 1):
            u2 = o2 * d2
            u2h = u2 / st
            rh = math.sqrt(u1h * u1h + u2h * u2h)
            if rh >= trunc_r:
                continue
            fr = rh / dr
            ir = int(fr)
            wr = fr - ir
            # fold the monomial coefficients into two z-profiles
            for izz in range(nzt):
                even[izz] = 0.0
                odd[izz] = 0.0
            for m in range(nterm):
                c = coefs[m]
                for _ in range(pows1[m]):
                    c *= u1h
                for _ in range(pows2[m]):
                    c *= u2h
                if c == 0.0:
                    continue
                tid = tabs[m]
                if tid == 0:
                    for izz in range(nzt):
                        even[izz] += c * ((1.0 - wr) * TH[ir, izz] + wr * TH[ir + 1, izz])
                elif tid == 1:
                    for izz in range(nzt):
                        even[izz] += c * ((1.0 - wr) * THS[ir, izz] + wr * THS[ir + 1, izz])
                else:
                    for izz in range(nzt):
                        odd[izz] += c * ((1.0 - wr) * THZ[ir, izz] + wr * THZ[ir + 1, izz])
            if z_avg:
                cum_e[0] = 0.0
                cum_o[0] = 0.0
                for izz in range(1, nzt):
                    cum_e[izz] = cum_e[izz - 1] + 0.5 * (even[izz - 1] + even[izz]) * dz
                    cum_o[izz] = cum_o[izz - 1] + 0.5 * (odd[izz - 1] + odd[izz]) * dz
            # vertical pass per output column
            zwin = zmax_t * t + (0.5 * d3 if z_avg else 0.0)
            for i1 in range(n1):
                j1 = i1 - o1
                if j1 < 0 or j1 >= n1:
                    continue
                for i2 in range(n2):
                    j2 = i2 - o2
                    if j2 < 0 or j2 >= n2:
                        continue
                    S = 0.5 * (u1 * x2[i2] - u2 * x1[i1])
                    # u3 = k*d3 + S for k = i3 - j3; keep |u3| inside the table
                    kmin = int(math.ceil((-zwin - S) / d3))
                    kmax = int(math.floor((zwin - S) / d3))
                    if kmin < 1 - n3:
                        kmin = 1 - n3
                    if kmax > n3 - 1:
                        kmax = n3 - 1
                    if kmin > kmax:
                        continue
                    if z_avg:
                        scale = pref * t / d3
                        za = (kmin * d3 + S - 0.5 * d3) / t
                        ea = _cum1(cum_e, za, dz, True)
                        oa = _cum1(cum_o, za, dz, False)
                        for k in range(kmin, kmax + 1):
                            zb = (k * d3 + S + 0.5 * d3) / t
                            eb = _cum1(cum_e, zb, dz, True)
                            ob = _cum1(cum_o, zb, dz, False)
                            vals[k - kmin] = scale * (eb - ea + ob - oa)
                            ea = eb
                            oa = ob
                    else:
                        for k in range(kmin, kmax + 1):
                            zh = (k * d3 + S) / t
                            az = abs(zh)
                            fz = az / dz
                            iz = int(fz)
                            if iz >= nzt - 1:
                                vals[k - kmin] = 0.0
                                continue
                            wz = fz - iz
                            e = (1.0 - wz) * even[iz] + wz * even[iz + 1]
                            o = (1.0 - wz) * odd[iz] + wz * odd[iz + 1]
                            vals[k - kmin] = pref * (e + o if zh >= 0.0 else e - o)
                    for k in range(kmin, kmax + 1):
                        v = vals[k - kmin]
                        if v == 0.0:
                            continue
                        j3lo = -k if k < 0 else 0
                        j3hi = n3 - k if k > 0 else n3
                        for j3 in range(j3lo, j3hi):
                            out[i1, i2, j3 + k] += v * fw[j1, j2, j3]
    return out


def convolve_h1(values_weighted, axes, kernel: TermKernel,
                engine: HeisenbergQuadrature, t: float,
                trunc_r: float | None = None, z_average: bool = True):
    """Convolve pre-weighted grid values with a term-encoded kernel.

    ``values_weighted`` must already include the per-point quadrature
    weights; ``axes`` are the three uniform coordinate axes (shared by input
    and output).  ``trunc_r`` truncates the kernel at horizontal radius
    trunc_r * sqrt(t) in dilated units (default: the table's full range).
    ``z_average`` integrates the kernel exactly over vertical cells rather
    than point-sampling it; leave it on except when cross-checking against a
    pointwise reference on a grid that resolves the kernel (d3 << t).
    """
    if t <= 0:
        raise ValueError("t must be positive")
    x1, x2, x3 = (np.ascontiguousarray(a, dtype=np.float64) for a in axes)
    rmax = engine.rs[-1] - 2 * engine._dr
    trunc_r = rmax if trunc_r is None else min(trunc_r, rmax)
    coefs, p1, p2, tabs = kernel.arrays()
    pref = t ** (-kernel.degree / 2.0)
    return _conv_h1_core(
        np.ascontiguousarray(values_weighted, dtype=np.float64), x1, x2, x3,
        coefs, p1, p2, tabs, engine.H, engine.Hs, engine.Hz,
        engine._dr, engine._dz, float(t), float(trunc_r), pref, z_average)


@dataclass(frozen=True)
class KernelIntegrals:
    """Quadrature summary of a kernel at t=1 (scale-invariant quantities)."""

    l1: float          # integral of |K(1, .)|
    mean: float        # integral of K(1, .)
    tail_l1: float     # part of l1 beyond Euclidean radius tail_radius
    tail_radius: float


def kernel_integrals(kernel: TermKernel, engine: HeisenbergQuadrature,
                     t: float = 1.0, tail_radius: float = 6.0,
                     rmax: float = 9.5, zmax: float = 8.9,
                     nr: int = 601, nz: int = 601, nang: int = 48):
    """Integrals of a term-encoded kernel over R^3 by polar-ring quadrature.

    The nodes sit at D(sqrt t) of a fixed dilated lattice and the measure
    carries the matching t^{Q/2} Jacobian, so the homogeneity change of
    variables is realized exactly and the returned values are t-invariant
    up to roundoff.  The angular midpoint rule is exact for the signed mean
    (the integrand is a low-degree trig polynomial in the angle) and
    spectrally accurate for |K| away from its kink lines.

    ``tail_l1`` reports the part of the |K| integral beyond Euclidean
    radius ``tail_radius`` (measured in the dilated coordinates, i.e. at
    the t=1 scale).
    """
    if t <= 0:
        raise ValueError("t must be positive")
    st = math.sqrt(t)
    rs = np.linspace(0.0, rmax, nr)
    zs = np.linspace(-zmax, zmax, nz)
    wr = np.full(nr, rs[1] - rs[0]); wr[0] = wr[-1] = wr[0] / 2
    wz = np.full(nz, zs[1] - zs[0]); wz[0] = wz[-1] = wz[0] / 2
    R, Z = np.meshgrid(rs, zs, indexing="ij")
    # du = t^{Q/2} * (2 pi r dr dz) in dilated polar coordinates
    W = t ** (engine.spec.hom_dim / 2.0) * (2 * np.pi * rs * wr)[:, None] * wz[None, :]

    angs = (np.arange(nang) + 0.5) / nang * 2 * np.pi
    acc_abs = np.zeros((nr, nz))
    acc = np.zeros((nr, nz))
    for ang in angs:
        pts = np.stack([st * R * math.cos(ang), st * R * math.sin(ang), t * Z],
                       axis=-1)
        vals = eval_term_kernel(kernel, engine, t, pts.reshape(-1, 3)).reshape(nr, nz)
        acc_abs += np.abs(vals)
        acc += vals
    acc_abs /= nang
    acc /= nang
    l1 = float((acc_abs * W).sum())
    mean = float((acc * W).sum())
    tail = float((acc_abs * W)[R * R + Z * Z > tail_radius ** 2].sum())
    return KernelIntegrals(l1=l1, mean=mean, tail_l1=tail, tail_radius=tail_radius)


def eval_term_kernel(kernel: TermKernel, engine: HeisenbergQuadrature,
                     t: float, pts, raw: bool = False):
    """Pointwise evaluation of a term-encoded kernel (numpy, vectorized).

    ``raw`` evaluates the table functions by direct lambda quadrature
    instead of bilinear lookup: slower, but smooth enough to sit under
    difference quotients.
    """
    if t <= 0:
        raise ValueError("t must be positive")
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    st = math.sqrt(t)
    u1h = pts[:, 0] / st
    u2h = pts[:, 1] / st
    zh = pts[:, 2] / t
    rh = np.hypot(u1h, u2h)
    if raw:
        from .heat import raw_term_values
        tabs = raw_term_values(engine.d, rh, zh, engine.params)
    else:
        az = np.abs(zh)
        sz = np.where(zh >= 0, 1.0, -1.0)
        from .heat import _interp_tables
        TH, THS, THZ = _interp_tables(
            (engine.H, engine.Hs, engine.Hz), rh, az, engine._dr, engine._dz,
            engine.params.nr, engine.params.nz)
        THZ = THZ * sz
        tabs = (TH, THS, THZ)
    out = np.zeros(len(pts))
    for c, a, b, tid in zip(kernel.coefs, kernel.pows1, kernel.pows2, kernel.tabs):
        out += c * u1h ** a * u2h ** b * tabs[tid]
    return t ** (-kernel.degree / 2.0) * out
