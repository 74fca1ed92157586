"""Smooth regions, their boundary quadrature, and the horizontal perimeter.

A region is one of three dataclass variants: a vertical halfspace (defined by
a first-layer normal, so it contains every vertical direction), a Euclidean
ball, or a smooth level set star-shaped around an anchor.  Each supports a
membership test and a boundary parametrization with Euclidean unit normal and
area weights; the horizontal perimeter is the surface integral of |v| where
v projects the Euclidean normal onto the moving horizontal frame,

    v_i(x) = sum_j q_i^j(x) (n_E)_j ,

which vanishes at characteristic points (the integrand is continuous there,
so no special handling is needed).

Orientation: n_E is everywhere the INWARD Euclidean normal.  The perimeter
integrand |v| and the phi_G weight are even in the normal, so the choice is
observable only in the blow-up model S_G^+(v/|v|) = {<pi x, v/|v|> >= 0} --
and inward is the orientation that makes a vertical halfspace a fixed point
of its own blow-up.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .groups import GroupSpec, compose, derive_coeff_tables, dilate, field_matrix
from .semigroup import GridFunction


@dataclass(frozen=True)
class VerticalHalfspace:
    """E = {x : <pi x, nu> >= offset} with nu a unit first-layer vector.

    ``window`` bounds the boundary patch used for surface quadrature: one
    (lo, hi) pair per boundary coordinate (q-1 first-layer tangents, then
    the n-q vertical coordinates).
    """

    nu: tuple
    offset: float = 0.0
    window: tuple = ((-1.0, 1.0), (-1.0, 1.0))


@dataclass(frozen=True)
class EuclideanBall:
    center: tuple
    radius: float


@dataclass(frozen=True)
class SmoothLevelSet:
    """E = {x : phi(x) < 0}, star-shaped around ``anchor`` (phi(anchor) < 0).

    ``phi`` and ``grad_phi`` act on point arrays of shape (..., n); the
    boundary is found by radial bisection from the anchor.
    """

    phi: Callable
    grad_phi: Callable
    anchor: tuple
    rmax: float = 10.0


def _unit(vec):
    v = np.asarray(vec, dtype=float)
    norm = np.linalg.norm(v)
    if not np.isfinite(norm) or norm == 0:
        raise ValueError("normal vector must be nonzero")
    return v / norm


def _halfspace_nu(spec: GroupSpec, region: VerticalHalfspace):
    nu = _unit(region.nu)
    if nu.shape != (spec.q,):
        raise ValueError(f"halfspace normal must be a {spec.q}-vector")
    return nu


def membership(spec: GroupSpec, region, pts):
    """Boolean membership of points (..., n) in the region."""
    pts = np.asarray(pts, dtype=float)
    if isinstance(region, VerticalHalfspace):
        nu = _halfspace_nu(spec, region)
        return pts[..., :spec.q] @ nu >= region.offset
    if isinstance(region, EuclideanBall):
        c = np.asarray(region.center, dtype=float)
        return np.sum((pts - c) ** 2, axis=-1) < region.radius ** 2
    if isinstance(region, SmoothLevelSet):
        return np.asarray(region.phi(pts)) < 0.0
    raise TypeError(f"unknown region type {type(region).__name__}")


def indicator_grid(spec: GroupSpec, region, box, shape, rule="midpoint",
                   antialias: int = 0) -> GridFunction:
    """Sample the region's indicator on a grid.

    ``antialias = k`` replaces each node value by the membership fraction
    over a k-per-axis subcell lattice (cell-fraction indicator); 0 keeps the
    sharp 0/1 sample.  Sharp samples preserve algebraic identities (the
    indicator is an actual characteristic function of a grid set);
    antialiased samples reduce O(d) perimeter-sampling noise in t-limits.
    """
    g = GridFunction(box, np.zeros(shape), rule)
    pts = g.mesh()
    if antialias <= 1:
        vals = membership(spec, region, pts).astype(float)
        return g.like(vals)
    offs = (np.arange(antialias) + 0.5) / antialias - 0.5
    sub = np.stack(np.meshgrid(*([offs] * g.n), indexing="ij"),
                   axis=-1).reshape(-1, g.n)
    h = np.asarray(g.spacing())
    acc = np.zeros(shape)
    for s in sub:
        acc += membership(spec, region, pts + s * h)
    return g.like(acc / len(sub))


# ---------------------------------------------------------------------------
# boundary quadrature
# ---------------------------------------------------------------------------

def _complete_frame(nu):
    """Orthonormal basis of nu's orthogonal complement in R^q."""
    q = len(nu)
    basis = np.linalg.qr(np.column_stack([nu, np.eye(q)]))[0]
    # first column is +-nu; the rest span the complement
    return basis[:, 1:q].T


def boundary_quadrature(spec: GroupSpec, region, refine: int = 1):
    """Nodes, unit Euclidean normals and area weights covering the boundary.

    Returns (points (m, n), inward normals (m, n), weights (m,)) with
    sum(weights) ~ the boundary's surface measure (halfspaces: restricted to
    the region's window).  ``refine`` multiplies the angular/lattice node
    counts; doubling it is the standard self-convergence check.
    """
    if isinstance(region, VerticalHalfspace):
        nu = _halfspace_nu(spec, region)
        window = region.window
        ndim = (spec.q - 1) + (spec.n - spec.q)
        if len(window) != ndim:
            raise ValueError(f"halfspace window needs {ndim} (lo, hi) pairs")
        frame = np.zeros((ndim, spec.n))
        frame[:spec.q - 1, :spec.q] = _complete_frame(nu)
        for k in range(spec.n - spec.q):
            frame[spec.q - 1 + k, spec.q + k] = 1.0
        m = 24 * refine
        axes, steps = [], []
        for lo, hi in window:
            h = (hi - lo) / m
            axes.append(lo + (np.arange(m) + 0.5) * h)
            steps.append(h)
        mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, ndim)
        pts = mesh @ frame
        pts[:, :spec.q] += region.offset * nu
        normals = np.broadcast_to(np.concatenate([nu, np.zeros(spec.n - spec.q)]),
                                  pts.shape).copy()
        weights = np.full(len(pts), float(np.prod(steps)))
        return pts, normals, weights

    if isinstance(region, EuclideanBall):
        c = np.asarray(region.center, dtype=float)
        r = float(region.radius)
        if spec.n == 1:
            pts = np.array([[c[0] - r], [c[0] + r]])
            normals = np.array([[1.0], [-1.0]])
            return pts, normals, np.ones(2)
        if spec.n == 2:
            m = 256 * refine
            ang = (np.arange(m) + 0.5) / m * 2 * np.pi
            out = np.column_stack([np.cos(ang), np.sin(ang)])
            return c + r * out, -out, np.full(m, 2 * np.pi * r / m)
        if spec.n == 3:
            mth, mph = 96 * refine, 192 * refine
            th = (np.arange(mth) + 0.5) / mth * np.pi
            ph = (np.arange(mph) + 0.5) / mph * 2 * np.pi
            TH, PH = np.meshgrid(th, ph, indexing="ij")
            out = np.stack([np.sin(TH) * np.cos(PH),
                            np.sin(TH) * np.sin(PH),
                            np.cos(TH)], axis=-1).reshape(-1, 3)
            w = (r * r * np.sin(TH) * (np.pi / mth) * (2 * np.pi / mph)).reshape(-1)
            return c + r * out, -out, w
        raise NotImplementedError("ball boundary quadrature covers n in {2, 3}")

    if isinstance(region, SmoothLevelSet):
        return _level_set_boundary(spec, region, refine)
    raise TypeError(f"unknown region type {type(region).__name__}")


def _level_set_boundary(spec: GroupSpec, region: SmoothLevelSet, refine: int):
    if spec.n != 3:
        raise NotImplementedError("level-set boundary quadrature covers n = 3")
    a = np.asarray(region.anchor, dtype=float)
    if not np.asarray(region.phi(a[None])).item() < 0:
        raise ValueError("anchor must lie inside the region (phi < 0)")
    mth, mph = 64 * refine, 128 * refine
    th = (np.arange(mth) + 0.5) / mth * np.pi
    ph = (np.arange(mph) + 0.5) / mph * 2 * np.pi
    TH, PH = np.meshgrid(th, ph, indexing="ij")
    dirs = np.stack([np.sin(TH) * np.cos(PH), np.sin(TH) * np.sin(PH),
                     np.cos(TH)], axis=-1)
    flat = dirs.reshape(-1, 3)
    lo = np.zeros(len(flat))
    hi = np.full(len(flat), float(region.rmax))
    bad = np.asarray(region.phi(a + hi[:, None] * flat)) < 0
    if bad.any():
        raise ValueError("region boundary not captured within rmax along "
                         f"{int(bad.sum())} rays")
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        inside = np.asarray(region.phi(a + mid[:, None] * flat)) < 0
        lo = np.where(inside, mid, lo)
        hi = np.where(inside, hi, mid)
    R = (0.5 * (lo + hi)).reshape(mth, mph)
    P = a + R[..., None] * dirs
    # area element from the angular parametrization: |dP/dth x dP/dph|
    dth = np.gradient(P, th, axis=0)
    dph = np.gradient(P, ph, axis=1)
    area = np.linalg.norm(np.cross(dth, dph), axis=-1) * (np.pi / mth) * (2 * np.pi / mph)
    grads = np.asarray(region.grad_phi(P.reshape(-1, 3)), dtype=float)
    norms = np.linalg.norm(grads, axis=-1, keepdims=True)
    if (norms < 1e-12).any():
        raise ValueError("grad_phi vanishes on the boundary parametrization")
    return P.reshape(-1, 3), -grads / norms, area.reshape(-1)


def boundary_normal(spec: GroupSpec, region, x0):
    """Inward Euclidean unit normal at a single boundary point."""
    x0 = np.asarray(x0, dtype=float)
    if isinstance(region, VerticalHalfspace):
        nu = _halfspace_nu(spec, region)
        return np.concatenate([nu, np.zeros(spec.n - spec.q)])
    if isinstance(region, EuclideanBall):
        return _unit(np.asarray(region.center, dtype=float) - x0)
    if isinstance(region, SmoothLevelSet):
        return -_unit(np.asarray(region.grad_phi(x0[None]), dtype=float)[0])
    raise TypeError(f"unknown region type {type(region).__name__}")


def horizontal_normal(spec: GroupSpec, region, x0):
    """v(x0) = q(x0) n_E(x0): the unnormalized horizontal normal (q-vector)."""
    x0 = np.asarray(x0, dtype=float)
    n_e = boundary_normal(spec, region, x0)
    rows = field_matrix(spec, derive_coeff_tables(spec), x0[None])[0]
    return rows @ n_e


def perimeter_smooth(spec: GroupSpec, region, refine: int = 1,
                     weight: Callable | None = None) -> float:
    """Horizontal perimeter by surface quadrature of |v| (see module docs).

    ``weight`` optionally multiplies the integrand by a function of the
    horizontal unit normal nu_E = v/|v| (used for the phi_G-weighted
    boundary integral); characteristic points contribute zero either way.
    """
    pts, normals, w = boundary_quadrature(spec, region, refine)
    rows = field_matrix(spec, derive_coeff_tables(spec), pts)
    v = np.einsum("pqn,pn->pq", rows, normals)
    vnorm = np.sqrt(np.sum(v * v, axis=-1))
    if weight is None:
        return float((vnorm * w).sum())
    mask = vnorm > 1e-14
    vals = np.zeros_like(vnorm)
    vals[mask] = weight(v[mask] / vnorm[mask, None]) * vnorm[mask]
    return float((vals * w).sum())


# ---------------------------------------------------------------------------
# blow-up
# ---------------------------------------------------------------------------

def halfspace_from_horizontal_normal(spec: GroupSpec, nu) -> VerticalHalfspace:
    """S_G^+(nu) = {<pi x, nu> >= 0}, the blow-up model halfspace."""
    return VerticalHalfspace(nu=tuple(_unit(nu)), offset=0.0)


def blowup_distance(spec: GroupSpec, region, x0, r: float,
                    window=((-1.0, 1.0),) * 3, shape=(64, 64, 64)) -> float:
    """L^1 window distance between the r-blow-up of E at x0 and its model
    halfspace S_G^+(nu_E(x0)).

    The blow-up E_{r,x0} = D(1/r)(x0^{-1} o E) is sampled through the
    equivalent membership test x0 o D(r) y in E.  Characteristic points
    (v(x0) = 0) are rejected: the model halfspace is undefined there.
    """
    if r <= 0:
        raise ValueError("blow-up scale r must be positive")
    x0 = np.asarray(x0, dtype=float)
    v = horizontal_normal(spec, region, x0)
    vnorm = np.linalg.norm(v)
    if vnorm < 1e-10:
        raise ValueError(
            f"characteristic boundary point (|v| = {vnorm:.2e}): "
            "the blow-up halfspace is undefined")
    model = halfspace_from_horizontal_normal(spec, v / vnorm)
    g = GridFunction(window, np.zeros(shape), rule="midpoint")
    pts = g.mesh().reshape(-1, spec.n)
    blown = membership(spec, region, compose(spec, x0, dilate(spec, r, pts)))
    half = membership(spec, model, pts)
    cell = float(np.prod(g.spacing()))
    return float(np.sum(blown != half)) * cell
