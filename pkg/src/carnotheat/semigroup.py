"""Grid representation of L^1 functions and the heat semigroup W_t f = f * h_t.

A :class:`GridFunction` is a scalar field sampled on a uniform axis-aligned
grid with either trapezoid (endpoint-inclusive) or midpoint (cell-centered)
quadrature weights.  Functions are extended by zero outside their box; the
operations that can lose mass through the boundary report it so callers can
budget truncation error.

The semigroup itself is a group convolution: W_t f(x) = sum_y w_y f(y)
h(t, y^{-1} o x).  Abelian specs use exact separable 1D Gaussian factors;
heisenberg:1 uses the truncated direct core from :mod:`carnotheat.convolve`.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field as dc_field

import numpy as np

from . import convolve
from .groups import GroupSpec, compose, derive_coeff_tables, dilate, field_matrix
from .heat import EuclideanClosedForm, HeisenbergQuadrature

_MAGIC = b"CHGF"


@dataclass
class GridFunction:
    """Scalar samples on a uniform grid over an axis-aligned box."""

    box: tuple
    values: np.ndarray
    rule: str = "midpoint"  # midpoint | trapezoid

    def __post_init__(self):
        self.box = tuple((float(lo), float(hi)) for lo, hi in self.box)
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != len(self.box):
            raise ValueError("values rank must match box dimension")
        if self.rule not in ("midpoint", "trapezoid"):
            raise ValueError(f"unknown quadrature rule {self.rule!r}")
        if self.rule == "trapezoid" and any(m < 2 for m in self.values.shape):
            raise ValueError("trapezoid rule needs at least 2 nodes per axis")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("grid values must be finite")

    # -- geometry ----------------------------------------------------------

    @property
    def n(self):
        return len(self.box)

    @property
    def shape(self):
        return self.values.shape

    def axes(self):
        out = []
        for (lo, hi), m in zip(self.box, self.shape):
            if self.rule == "trapezoid":
                out.append(np.linspace(lo, hi, m))
            else:
                h = (hi - lo) / m
                out.append(lo + (np.arange(m) + 0.5) * h)
        return out

    def spacing(self):
        return tuple(
            (hi - lo) / (m - 1 if self.rule == "trapezoid" else m)
            for (lo, hi), m in zip(self.box, self.shape))

    def weights_1d(self):
        out = []
        for h, m in zip(self.spacing(), self.shape):
            w = np.full(m, h)
            if self.rule == "trapezoid":
                w[0] = w[-1] = h / 2
            out.append(w)
        return out

    def weight_field(self):
        w = None
        for w1 in self.weights_1d():
            w = w1 if w is None else np.multiply.outer(w, w1)
        return w

    def mesh(self):
        """All grid points, shape (*shape, n)."""
        return np.stack(np.meshgrid(*self.axes(), indexing="ij"), axis=-1)

    def like(self, values):
        return GridFunction(self.box, values, self.rule)

    # -- calculus ----------------------------------------------------------

    def integral(self):
        return float((self.values * self.weight_field()).sum())

    def interp(self, pts):
        """Multilinear interpolation, zero outside the sampled hull."""
        pts = np.asarray(pts, dtype=float)
        single = pts.ndim == 1
        pts = np.atleast_2d(pts)
        axs = self.axes()
        idx, frac, inside = [], [], np.ones(len(pts), dtype=bool)
        for a in range(self.n):
            ax = axs[a]
            f = (pts[:, a] - ax[0]) / (ax[1] - ax[0])
            tol = 1e-9 * len(ax)
            inside &= (f >= -tol) & (f <= len(ax) - 1 + tol)
            i = np.clip(f.astype(np.int64), 0, len(ax) - 2)
            idx.append(i)
            frac.append(np.clip(f - i, 0.0, 1.0))
        out = np.zeros(len(pts))
        for corner in range(1 << self.n):
            w = np.ones(len(pts))
            ix = []
            for a in range(self.n):
                if corner >> a & 1:
                    w = w * frac[a]
                    ix.append(idx[a] + 1)
                else:
                    w = w * (1.0 - frac[a])
                    ix.append(idx[a])
            out += w * self.values[tuple(ix)]
        out = np.where(inside, out, 0.0)
        return out[0] if single else out

    # -- IO ------------------------------------------------------------------

    def to_csv(self, path):
        axs = self.axes()
        with open(path, "w") as fh:
            fh.write("# carnotheat grid v1\n")
            fh.write(f"# rule: {self.rule}\n")
            fh.write("# box: " + ";".join(f"{lo},{hi}" for lo, hi in self.box) + "\n")
            fh.write("# shape: " + ",".join(str(m) for m in self.shape) + "\n")
            fh.write(",".join(f"x{i + 1}" for i in range(self.n)) + ",value\n")
            pts = self.mesh().reshape(-1, self.n)
            vals = self.values.reshape(-1)
            np.savetxt(fh, np.column_stack([pts, vals]), delimiter=",")

    @classmethod
    def from_csv(cls, path):
        rule, box, shape = None, None, None
        with open(path) as fh:
            for line in fh:
                if line.startswith("# rule:"):
                    rule = line.split(":", 1)[1].strip()
                elif line.startswith("# box:"):
                    box = [tuple(map(float, p.split(",")))
                           for p in line.split(":", 1)[1].strip().split(";")]
                elif line.startswith("# shape:"):
                    shape = tuple(int(s) for s in line.split(":", 1)[1].split(","))
                elif not line.startswith("#"):
                    break
        if rule is None or box is None or shape is None:
            raise ValueError(f"{path}: missing grid header")
        data = np.loadtxt(path, delimiter=",", skiprows=5)
        return cls(box, data[:, -1].reshape(shape), rule)

    def to_binary(self, path):
        with open(path, "wb") as fh:
            fh.write(_MAGIC)
            fh.write(struct.pack("<BB", 1, 0 if self.rule == "midpoint" else 1))
            fh.write(struct.pack("<I", self.n))
            for (lo, hi), m in zip(self.box, self.shape):
                fh.write(struct.pack("<ddI", lo, hi, m))
            fh.write(np.ascontiguousarray(self.values, dtype="<f8").tobytes())

    @classmethod
    def from_binary(cls, path):
        with open(path, "rb") as fh:
            if fh.read(4) != _MAGIC:
                raise ValueError(f"{path}: not a carnotheat grid file")
            _, rule_id = struct.unpack("<BB", fh.read(2))
            (n,) = struct.unpack("<I", fh.read(4))
            box, shape = [], []
            for _ in range(n):
                lo, hi, m = struct.unpack("<ddI", fh.read(20))
                box.append((lo, hi))
                shape.append(m)
            vals = np.frombuffer(fh.read(), dtype="<f8").reshape(shape)
            return cls(tuple(box), vals.copy(),
                       "midpoint" if rule_id == 0 else "trapezoid")


def grid_from_callable(box, shape, fn, rule="midpoint"):
    g = GridFunction(box, np.zeros(shape), rule)
    pts = g.mesh()
    return g.like(np.asarray(fn(pts.reshape(-1, len(box)))).reshape(shape))


# ---------------------------------------------------------------------------
# horizontal gradient and L1 calculus
# ---------------------------------------------------------------------------

@dataclass
class HorizontalField:
    """q-component vector field on a grid, valid away from a stencil margin."""

    grid: GridFunction           # geometry carrier (values unused)
    components: np.ndarray       # (q, *shape)
    margin: int
    excluded_mass: float         # integral of |f| in the excluded margin

    def norm_values(self):
        return np.sqrt(np.sum(self.components ** 2, axis=0))


def _partial_4th(values, axis, h):
    """4th-order central difference, zero on the 2-cell margin."""
    out = np.zeros_like(values)
    sl = [slice(None)] * values.ndim

    def shifted(k):
        s = list(sl)
        s[axis] = slice(2 + k, values.shape[axis] - 2 + k)
        return values[tuple(s)]

    core = (-shifted(2) + 8 * shifted(1) - 8 * shifted(-1) + shifted(-2)) / (12 * h)
    s = list(sl)
    s[axis] = slice(2, -2)
    out[tuple(s)] = core
    return out


def _interior_mask(shape, margin):
    m = np.zeros(shape, dtype=bool)
    m[tuple(slice(margin, s - margin) for s in shape)] = True
    return m


def horizontal_gradient(spec: GroupSpec, f):
    """(X_1 f, ..., X_q f) as a :class:`HorizontalField` (grid functions) or a
    point-callable (analytic closures).

    Grid case: 4th-order stencils, components zeroed on the 2-cell margin
    whose |f| mass is reported as ``excluded_mass``.
    """
    tables = derive_coeff_tables(spec)
    if callable(f):
        def grad(pts, step=1e-4):
            pts = np.asarray(pts, dtype=float)
            rows = field_matrix(spec, tables, pts)  # (..., q, n)
            eps = np.zeros(spec.n)
            parts = []
            for a in range(spec.n):
                eps[:] = 0.0
                eps[a] = step
                parts.append((-f(pts + 2 * eps) + 8 * f(pts + eps)
                              - 8 * f(pts - eps) + f(pts - 2 * eps)) / (12 * step))
            pg = np.stack(parts, axis=-1)
            return np.einsum("...qn,...n->...q", rows, pg)
        return grad

    if f.n != spec.n:
        raise ValueError("grid dimension does not match the group")
    hs = f.spacing()
    partials = [_partial_4th(f.values, a, hs[a]) for a in range(spec.n)]
    rows = field_matrix(spec, tables, f.mesh())  # (*shape, q, n)
    comps = np.einsum("...qn,n...->q...", rows, np.stack(partials))
    mask = _interior_mask(f.shape, 2)
    comps = comps * mask
    excluded = float((np.abs(f.values) * f.weight_field() * ~mask).sum())
    return HorizontalField(grid=f, components=comps, margin=2,
                           excluded_mass=excluded)


def l1_norm(obj):
    """L^1 norm of a GridFunction or a HorizontalField (pointwise |.|_2)."""
    if isinstance(obj, GridFunction):
        return float((np.abs(obj.values) * obj.weight_field()).sum())
    if isinstance(obj, HorizontalField):
        return float((obj.norm_values() * obj.grid.weight_field()).sum())
    raise TypeError(f"cannot take the L1 norm of {type(obj).__name__}")


def group_shift_l1(spec: GroupSpec, f: GridFunction, z, t: float,
                   return_tail: bool = False):
    """(1/t) * integral of |f(x o D(t) z) - f(x)| dx.

    The shifted evaluation uses multilinear interpolation with zero
    extension; the |f| mass whose shifted argument leaves the box is
    reported as the tail when ``return_tail`` is set.
    """
    if t <= 0:
        raise ValueError("t must be positive")
    z = np.asarray(z, dtype=float)
    pts = f.mesh().reshape(-1, spec.n)
    shifted_pts = compose(spec, pts, dilate(spec, t, z))
    shifted = f.interp(shifted_pts)
    w = f.weight_field().reshape(-1)
    vals = np.abs(shifted - f.values.reshape(-1))
    out = float((vals * w).sum()) / t
    if not return_tail:
        return out
    lo = np.array([b[0] for b in f.box])
    hi = np.array([b[1] for b in f.box])
    outside = np.any((shifted_pts < lo) | (shifted_pts > hi), axis=1)
    tail = float((np.abs(f.values.reshape(-1)) * w * outside).sum()) / t
    return out, tail


# ---------------------------------------------------------------------------
# the semigroup
# ---------------------------------------------------------------------------

def _gauss_1d_matrix(x_out, x_in, w_in, t, derivative=False):
    d = x_out[:, None] - x_in[None, :]
    g = (4.0 * np.pi * t) ** -0.5 * np.exp(-d * d / (4.0 * t))
    if derivative:
        g = g * (-d / (2.0 * t))
    return g * w_in[None, :]


def _apply_separable(f: GridFunction, t, grad_axis=None):
    axs = f.axes()
    ws = f.weights_1d()
    vals = f.values
    for a in range(f.n):
        K = _gauss_1d_matrix(axs[a], axs[a], ws[a], t, derivative=(a == grad_axis))
        vals = np.moveaxis(np.tensordot(K, np.moveaxis(vals, a, 0), axes=1), 0, a)
    return vals


def apply_heat(spec: GroupSpec, f: GridFunction, t: float, engine,
               trunc_r: float | None = None) -> GridFunction:
    """W_t f on f's own grid.  Contract: ||W_t f||_1 <= ||f||_1 and
    W_t f -> f in L^1 as t decreases (positivity + unit mass of h)."""
    if t <= 0:
        raise ValueError("t must be positive")
    if isinstance(engine, EuclideanClosedForm):
        return f.like(_apply_separable(f, t))
    if isinstance(engine, HeisenbergQuadrature):
        if engine.d != 1:
            raise NotImplementedError("grid convolution is specialized to heisenberg:1")
        fw = f.values * f.weight_field()
        out = convolve.convolve_h1(fw, f.axes(), convolve.kernel_h(spec),
                                   engine, t, trunc_r)
        return f.like(out)
    raise TypeError("apply_heat needs a pointwise kernel engine "
                    "(closed form or quadrature), not "
                    f"{type(engine).__name__}")


def apply_kernel(spec: GroupSpec, f: GridFunction, t: float, engine,
                 kernel: convolve.TermKernel, trunc_r: float | None = None
                 ) -> GridFunction:
    """Convolve f with any term-encoded kernel (heisenberg:1 engines)."""
    if t <= 0:
        raise ValueError("t must be positive")
    if not isinstance(engine, HeisenbergQuadrature) or engine.d != 1:
        raise TypeError("term-kernel convolution requires the heisenberg:1 "
                        "quadrature engine")
    fw = f.values * f.weight_field()
    return f.like(convolve.convolve_h1(fw, f.axes(), kernel, engine, t, trunc_r))


def heat_gradient(spec: GroupSpec, f: GridFunction, t: float, engine,
                  trunc_r: float | None = None) -> HorizontalField:
    """(X_1 W_t f, ..., X_q W_t f) by convolving f against the kernel's
    horizontal derivatives: X_i (f * h_t) = f * (X_i h_t)."""
    if t <= 0:
        raise ValueError("t must be positive")
    if isinstance(engine, EuclideanClosedForm):
        comps = np.stack([_apply_separable(f, t, grad_axis=a) for a in range(f.n)])
        return HorizontalField(grid=f, components=comps, margin=0, excluded_mass=0.0)
    if isinstance(engine, HeisenbergQuadrature) and engine.d == 1:
        fw = f.values * f.weight_field()
        comps = np.stack([
            convolve.convolve_h1(fw, f.axes(), convolve.kernel_grad_h(spec, i),
                                 engine, t, trunc_r)
            for i in range(spec.q)])
        return HorizontalField(grid=f, components=comps, margin=0, excluded_mass=0.0)
    raise TypeError("heat_gradient needs a closed-form or heisenberg:1 engine")
