"""C1 piecewise-cubic interpolation of scattered 2-D data.

Each Delaunay triangle is split at its centroid into three cubic Bezier
patches (the classic Clough-Tocher macro-element). Vertex values and
gradients fix 18 of the 19 distinct control points up to seven unknowns
(three interior points, three ring points, the center); those are solved
per triangle from the C1 conditions across the internal edges plus a
linear-normal-derivative condition on each outer edge. The latter makes
the normal derivative along a shared edge depend only on data at its two
endpoints, so adjacent macro-triangles join C1 as well.

Vertex gradients, when not supplied, are estimated by a distance-weighted
least-squares plane fit over the Delaunay neighbors: exact for affine
data, and local, so perturbing one point only affects patches within two
rings of it.
"""

from __future__ import annotations

import numpy as np
from scipy.spatial import Delaunay

from .errors import ContractError

# canonical ordering of the 10 cubic control points b_ijk, i+j+k = 3
_IDX3 = [
    (3, 0, 0), (2, 1, 0), (2, 0, 1), (1, 2, 0), (1, 1, 1),
    (1, 0, 2), (0, 3, 0), (0, 2, 1), (0, 1, 2), (0, 0, 3),
]
_POS = {ijk: i for i, ijk in enumerate(_IDX3)}
_IDX2 = [(2, 0, 0), (1, 1, 0), (1, 0, 1), (0, 2, 0), (0, 1, 1), (0, 0, 2)]

_FACT = [1, 1, 2, 6]


def _bern3(lam):
    """Cubic Bernstein basis values at barycentric lam, canonical order."""
    out = np.empty(10)
    for p, (i, j, k) in enumerate(_IDX3):
        out[p] = 6.0 / (_FACT[i] * _FACT[j] * _FACT[k]) * lam[0] ** i * lam[1] ** j * lam[2] ** k
    return out


def _bern3_grad(lam, dlam):
    """Per-control-point gradient coefficients: (10, 2) matrix G with
    grad u(x) = G.T @ b for control vector b. ``dlam`` is the (3, 2)
    matrix of barycentric coordinate gradients."""
    out = np.zeros((10, 2))
    for p, (i, j, k) in enumerate(_IDX3):
        for m, down in enumerate(((i - 1, j, k), (i, j - 1, k), (i, j, k - 1))):
            if min(down) < 0:
                continue
            a, b, c = down
            b2 = 2.0 / (_FACT[a] * _FACT[b] * _FACT[c]) * lam[0] ** a * lam[1] ** b * lam[2] ** c
            out[p] += 3.0 * b2 * dlam[m]
    return out


def _bary_transform(verts):
    """Affine map x -> barycentric: returns (A, b) with lam = A @ x + b,
    plus the constant gradient rows A (3, 2)."""
    p0, p1, p2 = verts
    m = np.column_stack([p1 - p0, p2 - p0])
    minv = np.linalg.inv(m)
    a12 = minv  # rows give lam1, lam2 gradients
    a = np.vstack([-(a12[0] + a12[1]), a12[0], a12[1]])
    b = np.array([1.0, 0.0, 0.0]) - a @ p0
    return a, b


def estimate_gradients(points, neighbors, values):
    """Weighted least-squares plane fit per vertex over its neighbor set.

    ``neighbors`` maps vertex index -> array of neighbor indices. Exact
    for affine fields whenever a vertex has two non-collinear neighbors
    (always true for triangulation vertices).
    """
    n = len(points)
    grads = np.zeros((n, 2))
    for v in range(n):
        nbr = neighbors[v]
        d = points[nbr] - points[v]
        w = 1.0 / np.maximum(np.einsum("ij,ij->i", d, d), 1e-300)
        df = values[nbr] - values[v]
        a = (d * w[:, None]).T @ d
        rhs = (d * w[:, None]).T @ df
        grads[v] = np.linalg.lstsq(a, rhs, rcond=None)[0]
    return grads


class CloughTocher:
    """Scattered-data C1 cubic interpolant; NaN outside the convex hull.

    The geometry work (triangulation, constraint solves, point location)
    is independent of the data values, so rebuilding with new values on
    the same sites is cheap via :meth:`with_values`.
    """

    def __init__(self, points, values, gradients=None):
        points = np.asarray(points, dtype=np.float64)
        if points.ndim != 2 or points.shape[1] != 2 or len(points) < 3:
            raise ContractError("CloughTocher needs >= 3 distinct 2-D points")
        self.points = points
        self.tri = Delaunay(points)
        if self.tri.simplices.size == 0:
            raise ContractError("degenerate (collinear) point set")
        self._neighbors = self._vertex_neighbors()
        self._geom = [self._triangle_geometry(s) for s in self.tri.simplices]
        self.set_data(values, gradients)

    def _vertex_neighbors(self):
        indptr, indices = self.tri.vertex_neighbor_vertices
        return [indices[indptr[v]:indptr[v + 1]] for v in range(len(self.points))]

    # -- geometry: constraint system per macro-triangle ------------------

    def _triangle_geometry(self, simplex):
        verts = self.points[simplex]
        center = verts.mean(axis=0)
        minis = []
        for e in range(3):
            mverts = np.array([verts[e], verts[(e + 1) % 3], center])
            a, b = _bary_transform(mverts)
            minis.append((mverts, a, b))

        # unknown layout: [a0 a1 a2 r0 r1 r2 c]
        # patch e unknown slots: b111 -> a_e, b102 -> r_e, b012 -> r_{e+1}, b003 -> c
        def unknown_cols(e):
            return {_POS[(1, 1, 1)]: e, _POS[(1, 0, 2)]: 3 + e,
                    _POS[(0, 1, 2)]: 3 + (e + 1) % 3, _POS[(0, 0, 3)]: 6}

        rows_m = []

        def grad_row(e, point):
            _, a, b = minis[e]
            lam = a @ point + b
            return _bern3_grad(lam, a)  # (10, 2)

        # outer-edge condition: normal derivative along edge is linear,
        # i.e. its second difference over t = 0, 1/2, 1 vanishes
        for e in range(3):
            v0, v1 = verts[e], verts[(e + 1) % 3]
            edge = v1 - v0
            nrm = np.array([-edge[1], edge[0]])
            nrm /= np.linalg.norm(nrm)
            coeff = np.zeros((10,))
            for t, wgt in ((0.0, 1.0), (0.5, -2.0), (1.0, 1.0)):
                coeff += wgt * (grad_row(e, (1 - t) * v0 + t * v1) @ nrm)
            rows_m.append(("patch", e, coeff))

        # internal-edge C1: gradients of the two adjacent patches agree at
        # the edge midpoint and at the center (true at the outer vertex by
        # construction, and a quadratic with three roots is zero)
        for m in range(3):
            pa, pb = m, (m - 1) % 3
            for t in (0.5, 1.0):
                point = (1 - t) * verts[m] + t * center
                ga = grad_row(pa, point)
                gb = grad_row(pb, point)
                for comp in range(2):
                    rows_m.append(("pair", (pa, pb), (ga[:, comp], gb[:, comp])))

        # assemble M (rows x 7) acting on unknowns, and the row operators
        # acting on the known control points (linear in data)
        n_rows = len(rows_m)
        m_mat = np.zeros((n_rows, 7))
        known_ops = []  # list of (patch, coeffs) pairs summed per row
        for ri, row in enumerate(rows_m):
            if row[0] == "patch":
                _, e, coeff = row
                cols = unknown_cols(e)
                parts = [(e, coeff)]
            else:
                _, (pa, pb), (ca, cb) = row
                coeff_a, coeff_b = ca.copy(), -cb
                parts = [(pa, coeff_a), (pb, coeff_b)]
                cols = None
            for patch, coeff in parts:
                cmap = unknown_cols(patch)
                for slot, ucol in cmap.items():
                    m_mat[ri, ucol] += coeff[slot]
            known_ops.append(parts)
        pinv = np.linalg.pinv(m_mat)
        return {"verts": verts, "center": center, "minis": minis,
                "pinv": pinv, "known_ops": known_ops,
                "unknown_cols": [unknown_cols(e) for e in range(3)]}

    @staticmethod
    def _known_controls(geom, f, g):
        """The 6 data-determined control points per patch (others zero)."""
        verts, center = geom["verts"], geom["center"]
        ctrl = np.zeros((3, 10))
        for e in range(3):
            i, j = e, (e + 1) % 3
            ctrl[e, _POS[(3, 0, 0)]] = f[i]
            ctrl[e, _POS[(0, 3, 0)]] = f[j]
            ctrl[e, _POS[(2, 1, 0)]] = f[i] + g[i] @ (verts[j] - verts[i]) / 3.0
            ctrl[e, _POS[(1, 2, 0)]] = f[j] + g[j] @ (verts[i] - verts[j]) / 3.0
            ctrl[e, _POS[(2, 0, 1)]] = f[i] + g[i] @ (center - verts[i]) / 3.0
            ctrl[e, _POS[(0, 2, 1)]] = f[j] + g[j] @ (center - verts[j]) / 3.0
        return ctrl

    def _solve_triangle(self, geom, f, g):
        ctrl = self._known_controls(geom, f, g)
        rhs = np.empty(len(geom["known_ops"]))
        for ri, parts in enumerate(geom["known_ops"]):
            acc = 0.0
            for patch, coeff in parts:
                acc += coeff @ ctrl[patch]
            rhs[ri] = -acc
        unknowns = geom["pinv"] @ rhs
        for e in range(3):
            for slot, ucol in geom["unknown_cols"][e].items():
                ctrl[e, slot] = unknowns[ucol]
        return ctrl

    # -- data binding and evaluation --------------------------------------

    def set_data(self, values, gradients=None):
        values = np.asarray(values, dtype=np.float64)
        if values.shape != (len(self.points),):
            raise ContractError(
                f"values shape {values.shape} != ({len(self.points)},)"
            )
        self.values = values
        if gradients is None:
            gradients = estimate_gradients(self.points, self._neighbors, values)
        self.gradients = np.asarray(gradients, dtype=np.float64)
        self._ctrl = [
            self._solve_triangle(geom, values[simplex], self.gradients[simplex])
            for geom, simplex in zip(self._geom, self.tri.simplices)
        ]

    def with_values(self, values, gradients=None) -> "CloughTocher":
        self.set_data(values, gradients)
        return self

    def __call__(self, xy):
        xy = np.atleast_2d(np.asarray(xy, dtype=np.float64))
        out = np.full(len(xy), np.nan)
        simplex = self.tri.find_simplex(xy)
        for i, (point, s) in enumerate(zip(xy, simplex)):
            if s < 0:
                continue
            geom = self._geom[s]
            # pick the mini-triangle whose barycentric coords are most interior
            best_e, best_lam, best_min = 0, None, -np.inf
            for e in range(3):
                _, a, b = geom["minis"][e]
                lam = a @ point + b
                low = lam.min()
                if low > best_min:
                    best_e, best_lam, best_min = e, lam, low
            out[i] = _bern3(best_lam) @ self._ctrl[s][best_e]
        return out
