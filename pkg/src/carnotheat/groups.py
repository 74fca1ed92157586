"""Step-2 stratified (Carnot) group structure on R^n in exponential coordinates.

A step-2 stratified group is R^n split as a horizontal layer (coordinates
1..q, weight 1) and a vertical layer (coordinates q+1..n, weight 2).  The
structure is fixed by antisymmetric constants ``b[k][i][j]`` (i, j horizontal,
k vertical) through the commutators [X_i, X_j] = sum_k b[k][i][j] X_k of the
left-invariant horizontal fields.  Composition follows the closed-form
Baker-Campbell-Hausdorff product, exact at step 2:

    (g1 o g2)_i = g1_i + g2_i                                   (i <= q)
    (g1 o g2)_k = g1_k + g2_k + 1/2 sum_ij b[k][i][j] g1_i g2_j (k > q)

so the identity is 0, inverses are negatives, and the anisotropic dilations
``dilate`` are group automorphisms.  The homogeneous dimension is
Q = q + 2(n-q).

Left/right invariant fields agreeing with d/dx_i at the origin come out
triangular with coefficients linear in the horizontal coordinates:

    X_i   = d_i - 1/2 sum_{k>q} (sum_j b[k][i][j] x_j) d_k
    X_i^R = d_i + 1/2 sum_{k>q} (sum_j b[k][i][j] x_j) d_k

(``left_field``/``right_field`` compute them as difference quotients along the
translated curve, which is the defining property and the arbiter for the sign
convention).  ``derive_coeff_tables`` produces the linear-coefficient tables
for both families plus two derived objects used by the convolution calculus:

* ``cpoly``: the polynomials c_i^k with X_i f = X_i^R f + sum_{k>q} X_k^R(c_i^k f);
  at step 2 these are c_i^k(x) = -sum_j b[k][i][j] x_j.
* ``theta``: antisymmetric coefficients with X_k^R = sum θ^k_{ij} X_i^R X_j^R
  for vertical k, obtained from a least-squares solve over the bracket
  relations of the right fields (the solve doubles as the bracket-generating
  rank check).

Points are plain float arrays of shape (..., n); every operation broadcasts.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

__all__ = [
    "GroupSpec",
    "CoeffTables",
    "group_from_preset",
    "group_from_arrays",
    "compose",
    "inverse",
    "dilate",
    "derive_coeff_tables",
    "field_matrix",
    "c_values",
    "left_field",
    "right_field",
]


@dataclass(frozen=True)
class GroupSpec:
    """Structure data of a step-2 stratified group on R^n.

    Attributes
    ----------
    n, q : int
        Total dimension and horizontal dimension (q = n means Euclidean).
    b : ndarray, shape (n - q, q, q)
        Structure constants, antisymmetric in the last two axes;
        ``b[k - q - 1][i][j]`` in 0-based indexing is b[k][i][j].
    name : str
        Optional preset label (informational only).
    """

    n: int
    q: int
    b: np.ndarray
    name: str = ""

    def __post_init__(self):
        if not (1 <= self.q <= self.n):
            raise ValueError(f"need 1 <= q <= n, got q={self.q}, n={self.n}")
        b = np.asarray(self.b, dtype=float)
        nv = self.n - self.q
        if b.shape != (nv, self.q, self.q):
            raise ValueError(
                f"structure constants must have shape {(nv, self.q, self.q)}, "
                f"got {b.shape}"
            )
        if nv and not np.array_equal(b, -np.swapaxes(b, 1, 2)):
            raise ValueError("structure constants must be antisymmetric in (i, j)")
        if nv:
            flat = b.reshape(nv, -1)
            if np.linalg.matrix_rank(flat) < nv:
                raise ValueError(
                    "structure constants are rank deficient: the brackets of the "
                    "horizontal layer do not span the vertical layer"
                )
        object.__setattr__(self, "b", b)

    @property
    def nv(self) -> int:
        """Vertical-layer dimension n - q."""
        return self.n - self.q

    @cached_property
    def weights(self) -> np.ndarray:
        """Dilation weights (1 on the horizontal layer, 2 on the vertical)."""
        w = np.ones(self.n)
        w[self.q:] = 2.0
        return w

    @property
    def hom_dim(self) -> int:
        """Homogeneous dimension Q = q + 2(n - q)."""
        return self.q + 2 * self.nv

    @property
    def is_abelian(self) -> bool:
        return self.nv == 0


def group_from_arrays(n: int, q: int, b, name: str = "") -> GroupSpec:
    """Build a GroupSpec from raw arrays (validates shape/antisymmetry/rank)."""
    return GroupSpec(n=n, q=q, b=np.asarray(b, dtype=float), name=name)


def group_from_preset(preset: str) -> GroupSpec:
    """Named presets: ``euclidean:n``, ``heisenberg:d``, ``free-step2:q``.

    * ``euclidean:n``  - abelian R^n (q = n, no vertical layer).
    * ``heisenberg:d`` - H^d on R^(2d+1): [X_i, X_{d+i}] = X_{2d+1}.
    * ``free-step2:q`` - free step-2 group on q generators,
      n = q + q(q-1)/2, one vertical coordinate per pair i < j.
    """
    try:
        kind, _, arg = preset.partition(":")
        m = int(arg)
        if m <= 0:
            raise ValueError
    except ValueError:
        raise ValueError(f"bad preset {preset!r}; expected e.g. 'heisenberg:1'") from None

    if kind == "euclidean":
        return GroupSpec(n=m, q=m, b=np.zeros((0, m, m)), name=preset)
    if kind == "heisenberg":
        d = m
        q = 2 * d
        b = np.zeros((1, q, q))
        for i in range(d):
            b[0, i, d + i] = 1.0
            b[0, d + i, i] = -1.0
        return GroupSpec(n=q + 1, q=q, b=b, name=preset)
    if kind == "free-step2":
        q = m
        if q < 2:
            raise ValueError("free-step2 needs at least 2 generators")
        pairs = [(i, j) for i in range(q) for j in range(i + 1, q)]
        b = np.zeros((len(pairs), q, q))
        for p, (i, j) in enumerate(pairs):
            b[p, i, j] = 1.0
            b[p, j, i] = -1.0
        return GroupSpec(n=q + len(pairs), q=q, b=b, name=preset)
    raise ValueError(f"unknown preset kind {kind!r}")


# ---------------------------------------------------------------------------
# group operations
# ---------------------------------------------------------------------------

def compose(spec: GroupSpec, g1, g2) -> np.ndarray:
    """Group product g1 o g2 (broadcasts over leading axes)."""
    g1 = np.asarray(g1, dtype=float)
    g2 = np.asarray(g2, dtype=float)
    out = g1 + g2
    if spec.nv:
        w1 = g1[..., : spec.q]
        w2 = g2[..., : spec.q]
        quad = 0.5 * np.einsum("kij,...i,...j->...k", spec.b, w1, w2)
        out = np.concatenate([out[..., : spec.q], out[..., spec.q:] + quad], axis=-1)
    return out


def inverse(spec: GroupSpec, g) -> np.ndarray:
    """Group inverse; in exponential coordinates simply -g."""
    return -np.asarray(g, dtype=float)


def dilate(spec: GroupSpec, lam, g) -> np.ndarray:
    """Anisotropic dilation: coordinate i scales by lam**weight_i."""
    g = np.asarray(g, dtype=float)
    lam = np.asarray(lam, dtype=float)
    return g * lam[..., None] ** spec.weights if lam.ndim else g * lam ** spec.weights


# ---------------------------------------------------------------------------
# coefficient tables
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CoeffTables:
    """Linear-coefficient tables of the invariant-field calculus.

    Each table T has shape (nv, q, q); the associated polynomial at x is
    ``sum_j T[k, i, j] * x_j`` (degree-1 homogeneous in the horizontal
    coordinates, matching the weight gap between the layers).

    qpoly : vertical coefficients of the left fields X_i
    qbar  : vertical coefficients of the right fields X_i^R
    cpoly : c_i^k with X_i = X_i^R + sum_k X_k^R (c_i^k ·)
    theta : antisymmetric (in i, j) with X_k^R = sum_ij theta[k,i,j] X_i^R X_j^R
    """

    qpoly: np.ndarray
    qbar: np.ndarray
    cpoly: np.ndarray
    theta: np.ndarray


def derive_coeff_tables(spec: GroupSpec, *, residual_tol: float = 1e-10) -> CoeffTables:
    """Derive all coefficient tables from the structure constants.

    The theta solve uses the bracket relations of the right fields: with
    antisymmetric theta, sum theta^k_{ij} X_i^R X_j^R reduces to a combination
    of first-order fields, and matching it to X_k^R is the linear system

        sum_{i<j} theta^k_{ij} * b[m][i][j] = -delta_{km}.

    Solved by least squares (minimum-norm); a residual above ``residual_tol``
    means the brackets do not span the vertical layer and is an error.
    """
    nv, q = spec.nv, spec.q
    qpoly = -0.5 * spec.b
    qbar = 0.5 * spec.b
    cpoly = -spec.b
    theta = np.zeros((nv, q, q))
    if nv:
        pairs = [(i, j) for i in range(q) for j in range(i + 1, q)]
        B = np.stack([spec.b[:, i, j] for (i, j) in pairs], axis=1)  # (nv, npairs)
        sol, *_ = np.linalg.lstsq(B, -np.eye(nv), rcond=None)       # (npairs, nv)
        resid = np.abs(B @ sol + np.eye(nv)).max()
        if resid > residual_tol:
            raise ValueError(
                f"theta solve residual {resid:.2e}: structure constants do not "
                "span the vertical layer"
            )
        for p, (i, j) in enumerate(pairs):
            theta[:, i, j] = sol[p]
            theta[:, j, i] = -sol[p]
    return CoeffTables(qpoly=qpoly, qbar=qbar, cpoly=cpoly, theta=theta)


def field_matrix(spec: GroupSpec, tables: CoeffTables, x, *, right: bool = False) -> np.ndarray:
    """Coefficient rows of the horizontal invariant fields at x.

    Returns shape (..., q, n): row i holds the coefficients of X_i (or X_i^R
    with ``right=True``) on (d_1, ..., d_n).  The first-layer block is the
    identity; vertical entries are linear in the horizontal coordinates of x.
    """
    x = np.asarray(x, dtype=float)
    poly = tables.qbar if right else tables.qpoly
    lead = x.shape[:-1]
    out = np.zeros(lead + (spec.q, spec.n))
    out[..., :, : spec.q] = np.eye(spec.q)
    if spec.nv:
        out[..., :, spec.q:] = np.einsum("kij,...j->...ik", poly, x[..., : spec.q])
    return out


def c_values(spec: GroupSpec, tables: CoeffTables, x) -> np.ndarray:
    """Evaluate the c_i^k polynomials at x; shape (..., q, nv)."""
    x = np.asarray(x, dtype=float)
    return np.einsum("kij,...j->...ik", tables.cpoly, x[..., : spec.q])


def _curve_quotient(f, points_pm, step: float) -> np.ndarray:
    """Fourth-order central difference from f at curve(+-h), curve(+-2h)."""
    fp2, fp1, fm1, fm2 = (np.asarray(f(p), dtype=float) for p in points_pm)
    return (-fp2 + 8.0 * fp1 - 8.0 * fm1 + fm2) / (12.0 * step)


def left_field(spec: GroupSpec, f, x, i: int, *, step: float = 1e-4) -> np.ndarray:
    """Apply the left-invariant field X_i to a callable f at points x.

    Computed as the fourth-order difference quotient of s -> f(x o (s e_i)),
    which is the defining characterization of X_i.
    """
    x = np.asarray(x, dtype=float)
    e = np.zeros(spec.n)
    e[i] = 1.0
    pts = [compose(spec, x, s * e) for s in (2 * step, step, -step, -2 * step)]
    return _curve_quotient(f, pts, step)


def right_field(spec: GroupSpec, f, x, i: int, *, step: float = 1e-4) -> np.ndarray:
    """Apply the right-invariant field X_i^R to a callable f at points x
    (difference quotient of s -> f((s e_i) o x))."""
    x = np.asarray(x, dtype=float)
    e = np.zeros(spec.n)
    e[i] = 1.0
    pts = [compose(spec, s * e, x) for s in (2 * step, step, -step, -2 * step)]
    return _curve_quotient(f, pts, step)
