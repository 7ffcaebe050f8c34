"""Discrete Riemann surfaces used as fibre and base factors.

Two backends share one interface.  :class:`TorusCurve` samples a flat
torus on a uniform periodic grid and differentiates with Fourier
multipliers.  :class:`MeshCurve` is a closed triangulated surface with
first-order finite elements (cotangent Laplacian, lumped mass, angle-defect
curvature).

Conventions
-----------
Every curve carries a reference area form ``dA`` and a complex derivative
``d/dz`` in a unitary frame, so the reference form is ``(i/2) dz ^ dzbar``.
The Laplacian is the positive operator ``lap = -2 d/dz d/dzbar``, i.e. half of
minus the Laplace-Beltrami operator.  With this choice the first eigenvalue
of the unit square torus is ``2 pi^2``.

Operators act along one axis of an array so that fields on a product grid,
stored as ``(..., n_base, n_fibre)``, can be differentiated in either factor
without copying into per-point loops.
"""
from __future__ import annotations

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp


class GridError(ValueError):
    """Invalid grid or mesh input."""


class Curve:
    """Shared behaviour of the curve backends."""

    kind = "curve"
    n: int
    mass: np.ndarray
    K_ref: np.ndarray
    global_frame = True

    # -- to be provided by subclasses --------------------------------------
    def lap(self, F, axis=-1):
        raise NotImplementedError

    def dz(self, F, axis=-1):
        raise NotImplementedError

    def dzbar(self, F, axis=-1):
        raise NotImplementedError

    def lap_T(self, F, axis=-1):
        """Plain (unweighted) transpose of ``lap``."""
        raise NotImplementedError

    def dz_T(self, F, axis=-1):
        raise NotImplementedError

    def dzbar_T(self, F, axis=-1):
        raise NotImplementedError

    def filter(self, F, axis=-1):
        return F

    # -- shared ------------------------------------------------------------
    @property
    def area(self):
        return float(self.mass.sum())

    @property
    def euler_characteristic(self):
        return int(round(np.sum(self.K_ref * self.mass) / (2 * np.pi)))

    @property
    def genus(self):
        return (2 - self.euler_characteristic) // 2

    def d_real(self, F, axis=-1):
        """Real-coordinate derivatives ``(d/dx, d/dy)`` in the unitary frame."""
        a = self.dz(F, axis)
        b = self.dzbar(F, axis)
        dx, dy = a + b, 1j * (a - b)
        if np.isrealobj(F):
            dx, dy = dx.real, dy.real
        return dx, dy

    def dense(self, name):
        """Dense matrix of one of the linear operators (small curves only)."""
        cache = self.__dict__.setdefault("_dense", {})
        if name not in cache:
            eye = np.eye(self.n)
            cache[name] = np.ascontiguousarray(getattr(self, name)(eye, axis=-1).T)
        return cache[name]

    def stiffness(self):
        """Symmetric matrix ``M lap`` (dense)."""
        S = self.mass[:, None] * self.dense("lap").real
        return 0.5 * (S + S.T)

    def eig_laplacian(self, weight=None):
        """Generalized eigenpairs of ``lap / weight``.

        Returns ``(values, vectors)`` with ``vectors.T @ diag(mass*weight) @
        vectors = I``.
        """
        w = np.ones(self.n) if weight is None else np.asarray(weight, float)
        vals, vecs = sla.eigh(self.stiffness(), np.diag(self.mass * w))
        vals[np.abs(vals) < 1e-10 * max(1.0, abs(vals).max())] = 0.0
        return vals, vecs

    def resolved_basis(self):
        """Orthonormal basis (columns) of the resolved function space.

        First derivatives on both backends are centred, so a few
        highest-frequency modes (Nyquist rows of the torus, parity patterns of
        a regular triangulation) are annihilated by ``d/dz`` without being
        constant.  Operators built from first derivatives only are studied on
        the orthogonal complement of those modes; constants stay inside.
        """
        if "_resolved" not in self.__dict__:
            Dz = self.dense("dz")
            D = np.vstack([Dz.real, Dz.imag])
            _, s, vh = np.linalg.svd(D)
            null = vh[np.sum(s > 1e-9 * s.max()):].T
            one = np.ones((self.n, 1)) / np.sqrt(self.n)
            spurious = null - one @ (one.T @ null)
            u, sv, _ = np.linalg.svd(spurious, full_matrices=False)
            spurious = u[:, sv > 1e-8]
            u, sv, _ = np.linalg.svd(np.eye(self.n) - spurious @ spurious.T)
            self.__dict__["_resolved"] = u[:, sv > 0.5]
            self.__dict__["_spurious"] = spurious
        return self.__dict__["_resolved"]


def _along(F, axis, func):
    """Apply ``func`` to an array whose last axis is ``axis`` of ``F``."""
    F = np.asarray(F)
    if axis in (-1, F.ndim - 1):
        return func(F)
    G = np.moveaxis(F, axis, -1)
    return np.moveaxis(func(G), -1, axis)


class TorusCurve(Curve):
    """Flat torus ``C / (Z + tau Z)`` on a uniform ``n1 x n2`` periodic grid.

    Grid point ``(i, j)`` sits at ``z = i/n1 + tau j/n2``.  Odd derivatives
    drop the Nyquist rows so that they stay real and skew; the Laplacian keeps
    them, so its kernel is exactly the constants.
    """

    kind = "torus"

    def __init__(self, shape=(16, 16), tau=1j):
        n1, n2 = (int(s) for s in shape)
        if n1 < 8 or n2 < 8 or n1 % 2 or n2 % 2:
            raise GridError(f"torus grid must have even dimensions >= 8, got {shape}")
        tau = complex(tau)
        if tau.imag <= 0:
            raise GridError("torus modulus must lie in the upper half plane")
        self.shape = (n1, n2)
        self.tau = tau
        self.n = n1 * n2
        self.mass = np.full(self.n, tau.imag / self.n)
        self.K_ref = np.zeros(self.n)
        k1 = np.fft.fftfreq(n1, 1.0 / n1)[:, None]
        k2 = np.fft.fftfreq(n2, 1.0 / n2)[None, :]
        o1 = np.where(np.abs(k1) == n1 // 2, 0.0, k1)
        o2 = np.where(np.abs(k2) == n2 // 2, 0.0, k2)
        tb = tau.conjugate()
        self._mz = 2j * np.pi * (tb * o1 - o2) / (tb - tau)
        self._mzb = 2j * np.pi * (tau * o1 - o2) / (tau - tb)
        self._mlap = 2 * np.pi**2 * np.abs(tau * k1 - k2) ** 2 / tau.imag**2
        self._nyq = (np.abs(k1) == n1 // 2) | (np.abs(k2) == n2 // 2)
        u, v = np.meshgrid(np.arange(n1) / n1, np.arange(n2) / n2, indexing="ij")
        self.uv = np.stack([u.ravel(), v.ravel()])
        self.z = (u + tau * v).ravel()

    def __repr__(self):
        return f"TorusCurve(shape={self.shape}, tau={self.tau})"

    def _mult(self, F, mult, axis, real_out):
        def go(G):
            lead = G.shape[:-1]
            H = G.reshape(lead + self.shape)
            H = np.fft.ifft2(np.fft.fft2(H) * mult)
            H = H.reshape(lead + (self.n,))
            return H.real if real_out else H

        return _along(F, axis, go)

    def lap(self, F, axis=-1):
        return self._mult(F, self._mlap, axis, np.isrealobj(F))

    lap_T = lap

    def dz(self, F, axis=-1):
        return self._mult(F, self._mz, axis, False)

    def dzbar(self, F, axis=-1):
        return self._mult(F, self._mzb, axis, False)

    def dz_T(self, F, axis=-1):
        return -self.dz(F, axis)

    def dzbar_T(self, F, axis=-1):
        return -self.dzbar(F, axis)

    def filter(self, F, axis=-1):
        return self._mult(F, ~self._nyq, axis, np.isrealobj(F))

    def shift(self, F, di, dj, axis=-1):
        """Translate a field by whole grid steps."""
        def go(G):
            lead = G.shape[:-1]
            H = np.roll(G.reshape(lead + self.shape), (di, dj), axis=(-2, -1))
            return H.reshape(lead + (self.n,))

        return _along(F, axis, go)


class MeshCurve(Curve):
    """Closed oriented triangle mesh with first-order finite elements.

    Parameters
    ----------
    faces : (F, 3) int array, counter-clockwise.
    corner_z : (F, 3) complex array
        Corner positions of every face developed into a face chart.
    rotation : (F, 3) complex array, optional
        Unit complex numbers taking a face-chart tangent vector to the
        frame at the corresponding vertex.  ``None`` means all charts share one
        global coordinate (translation surfaces), which makes ``d/dz`` a global
        holomorphic frame away from the cone points.
    """

    kind = "mesh"

    def __init__(self, faces, corner_z, rotation=None, positions=None,
                 metric_factor=None, name="mesh"):
        faces = np.asarray(faces, dtype=np.int64)
        corner_z = np.asarray(corner_z, dtype=complex)
        self.faces = faces
        self.corner_z = corner_z
        self.name = name
        self.global_frame = rotation is None
        n = int(faces.max()) + 1
        self.n = n
        self._check_topology()
        z0, z1, z2 = corner_z.T
        area = 0.5 * np.imag(np.conj(z1 - z0) * (z2 - z0))
        if np.any(area <= 0):
            raise GridError("degenerate or inverted triangle in mesh")
        self.face_area = area
        edges = np.stack([z2 - z1, z0 - z2, z1 - z0], axis=1)
        self.mass = np.bincount(faces.ravel(), np.repeat(area / 3, 3), minlength=n)
        angle_sum = np.zeros(n)
        I, J, W = [], [], []
        for c in range(3):
            a = corner_z[:, (c + 1) % 3] - corner_z[:, c]
            b = corner_z[:, (c + 2) % 3] - corner_z[:, c]
            q = np.conj(a) * b
            angle_sum += np.bincount(faces[:, c], np.angle(q), minlength=n)
            w = 0.5 * q.real / q.imag
            j, k = faces[:, (c + 1) % 3], faces[:, (c + 2) % 3]
            I += [j, k, j, k]
            J += [k, j, j, k]
            W += [-w, -w, w, w]
        S = sp.csr_matrix((np.concatenate(W), (np.concatenate(I), np.concatenate(J))), shape=(n, n))
        self.angle_sum = angle_sum
        self.K_ref = (2 * np.pi - angle_sum) / self.mass
        self._lap = sp.diags(0.5 / self.mass) @ S
        self._lap_T = self._lap.T.tocsr()
        rot = np.ones_like(corner_z) if rotation is None else np.asarray(rotation, complex)
        dzb = -1j * np.conj(edges) / (4 * area[:, None])
        rows, cols, vals = [], [], []
        for c in range(3):
            v = faces[:, c]
            wgt = (area / 3) / self.mass[v] * np.conj(rot[:, c])
            for u in range(3):
                rows.append(v)
                cols.append(faces[:, u])
                vals.append(wgt * dzb[:, u])
        self._dz = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n))
        self._dzbar = self._dz.conj()
        self._dz_T = self._dz.T.tocsr()
        self._dzbar_T = self._dzbar.T.tocsr()
        self.positions = positions
        self.metric_factor = None if metric_factor is None else np.asarray(metric_factor, float)
        self.cone_vertices = np.flatnonzero(np.abs(angle_sum - 2 * np.pi) > 1e-8)

    def __repr__(self):
        return f"MeshCurve({self.name!r}, vertices={self.n}, faces={len(self.faces)})"

    def _check_topology(self):
        f = self.faces
        directed = np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]])
        if np.unique(directed, axis=0).shape[0] != directed.shape[0]:
            raise GridError("mesh is not consistently oriented or has non-manifold edges")
        und = np.sort(directed, axis=1)
        _, counts = np.unique(und, axis=0, return_counts=True)
        if np.any(counts != 2):
            raise GridError("mesh has boundary edges")
        if np.unique(f).size != self.n:
            raise GridError("mesh has unreferenced vertices")
        self.n_edges = counts.size

    @property
    def euler_characteristic(self):
        return int(self.n - self.n_edges + len(self.faces))

    @staticmethod
    def _sparse(A, F, axis):
        def go(G):
            lead = G.shape[:-1]
            X = G.reshape(-1, G.shape[-1]).T
            return np.asarray(A @ X).T.reshape(lead + (A.shape[0],))

        return _along(F, axis, go)

    def lap(self, F, axis=-1):
        return self._sparse(self._lap, F, axis)

    def lap_T(self, F, axis=-1):
        return self._sparse(self._lap_T, F, axis)

    def dz(self, F, axis=-1):
        return self._sparse(self._dz, F, axis)

    def dzbar(self, F, axis=-1):
        return self._sparse(self._dzbar, F, axis)

    def dz_T(self, F, axis=-1):
        return self._sparse(self._dz_T, F, axis)

    def dzbar_T(self, F, axis=-1):
        return self._sparse(self._dzbar_T, F, axis)

    @classmethod
    def from_embedding(cls, vertices, faces, metric_factor=None, name="embedded"):
        """Mesh with the conformal structure induced from an embedding in R^3."""
        P = np.asarray(vertices, float)
        faces = np.asarray(faces, dtype=np.int64)
        p0, p1, p2 = (P[faces[:, c]] for c in range(3))
        e1 = p1 - p0
        nrm = np.cross(p1 - p0, p2 - p0)
        f1 = e1 / np.linalg.norm(e1, axis=1, keepdims=True)
        fn = nrm / np.linalg.norm(nrm, axis=1, keepdims=True)
        f2 = np.cross(fn, f1)
        corner = np.stack([np.einsum("ij,ij->i", p - p0, f1) + 1j * np.einsum("ij,ij->i", p - p0, f2)
                           for p in (p0, p1, p2)], axis=1)
        n = P.shape[0]
        vn = np.zeros((n, 3))
        for c in range(3):
            np.add.at(vn, faces[:, c], nrm)
        vn /= np.linalg.norm(vn, axis=1, keepdims=True)
        first = np.zeros(n, dtype=np.int64)
        first[faces[::-1].ravel()] = np.repeat(np.arange(len(faces))[::-1], 3)
        t = f1[first] - np.einsum("ij,ij->i", f1[first], vn)[:, None] * vn
        ve1 = t / np.linalg.norm(t, axis=1, keepdims=True)
        ve2 = np.cross(vn, ve1)
        rot = np.empty(faces.shape, complex)
        for c in range(3):
            v = faces[:, c]
            a = np.einsum("ij,ij->i", f1, ve1[v]) + 1j * np.einsum("ij,ij->i", f1, ve2[v])
            rot[:, c] = a / np.abs(a)
        return cls(faces, corner, rotation=rot, positions=P, metric_factor=metric_factor, name=name)


def origami_curve(cells=4, right=(1, 0, 2), up=(2, 1, 0),
                  squares=((0, 0), (1, 0), (0, 1)), side=1.0):
    """Square-tiled translation surface triangulated on a uniform sub-grid.

    ``right[a]`` and ``up[a]`` name the square glued to the right and top edge
    of square ``a``.  The default three-square L-shaped tiling has genus two
    and a single cone point of angle ``6 pi``.
    """
    m = int(cells)
    if m < 3:
        # coarser sub-grids glue two triangles along the same pair of vertices
        raise GridError("origami needs at least three cells per square side")
    ns = len(squares)
    side_n = m + 1
    parent = np.arange(ns * side_n * side_n)

    def node(a, i, j):
        return (a * side_n + i) * side_n + j

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    def union(x, y):
        rx, ry = find(x), find(y)
        if rx != ry:
            parent[max(rx, ry)] = min(rx, ry)

    for a in range(ns):
        for k in range(side_n):
            union(node(a, m, k), node(right[a], 0, k))
            union(node(a, k, m), node(up[a], k, 0))
    roots = np.array([find(x) for x in range(parent.size)])
    _, label = np.unique(roots, return_inverse=True)
    faces, corners = [], []
    for a, (x0, y0) in enumerate(squares):
        for i in range(m):
            for j in range(m):
                ids = [node(a, i, j), node(a, i + 1, j), node(a, i + 1, j + 1), node(a, i, j + 1)]
                zs = [complex(x0 + (i + di) / m, y0 + (j + dj) / m) * side
                      for di, dj in ((0, 0), (1, 0), (1, 1), (0, 1))]
                for tri in ((0, 1, 2), (0, 2, 3)):
                    faces.append([label[ids[t]] for t in tri])
                    corners.append([zs[t] for t in tri])
    faces = np.array(faces)
    corners = np.array(corners)
    pos = np.zeros(label.max() + 1, complex)
    pos[faces.ravel()] = corners.ravel()
    curve = MeshCurve(faces, corners, positions=pos, name=f"origami{ns}x{m}")
    return curve


def voxel_surface(genus=2, subdivisions=1):
    """Boundary of a slab of unit cubes with ``genus`` square holes.

    A convenient closed embedded surface of any genus for exercising the mesh
    reader and the uniformization solver.
    """
    g = int(genus)
    s = int(subdivisions)
    nx, ny = 2 * g + 1, 3
    filled = np.ones((nx, ny, 1), bool)
    for k in range(g):
        filled[2 * k + 1, 1, 0] = False
    verts = {}
    faces = []

    def vid(p):
        key = tuple(int(round(c * s)) for c in p)
        if key not in verts:
            verts[key] = len(verts)
        return verts[key]

    def occupied(i, j, k):
        return 0 <= i < nx and 0 <= j < ny and 0 <= k < 1 and filled[i, j, k]

    unit = np.eye(3)
    for i, j, k in zip(*np.nonzero(filled)):
        p = np.array([i, j, k], float)
        for ax in range(3):
            b, c = unit[(ax + 1) % 3], unit[(ax + 2) % 3]
            for sign in (1, -1):
                q = np.array([i, j, k]) + sign * unit[ax].astype(int)
                if occupied(*q):
                    continue
                base = p + (unit[ax] if sign > 0 else 0)
                for u in range(s):
                    for v in range(s):
                        quad = [base + b * (u + du) / s + c * (v + dv) / s
                                for du, dv in ((0, 0), (1, 0), (1, 1), (0, 1))]
                        if sign < 0:
                            quad = quad[::-1]
                        ids = [vid(x) for x in quad]
                        faces += [[ids[0], ids[1], ids[2]], [ids[0], ids[2], ids[3]]]
    P = np.zeros((len(verts), 3))
    for key, idx in verts.items():
        P[idx] = np.array(key, float) / s
    return P, np.array(faces)


def read_off(path):
    """Read an ASCII OFF triangle mesh.

    An optional fourth number on each vertex line is read as a positive
    reference metric factor.  Returns ``(vertices, faces, factor)`` where
    ``factor`` is ``None`` when absent.
    """
    with open(path) as fh:
        lines = [ln.split("#", 1)[0].strip() for ln in fh]
    lines = [ln for ln in lines if ln]
    if not lines or not lines[0].startswith("OFF"):
        raise GridError(f"{path}: missing OFF header")
    head = lines[0][3:].split()
    if not head:
        lines.pop(0)
        head = lines[0].split()
    nv, nf = int(head[0]), int(head[1])
    body = lines[1:]
    if len(body) < nv + nf:
        raise GridError(f"{path}: truncated OFF file")
    rows = [list(map(float, ln.split())) for ln in body[:nv]]
    width = {len(r) for r in rows}
    if width not in ({3}, {4}):
        raise GridError(f"{path}: vertex lines need 3 or 4 numbers")
    V = np.array(rows)
    faces = []
    for ln in body[nv:nv + nf]:
        parts = [int(x) for x in ln.split()]
        if parts[0] != 3 or len(parts) < 4:
            raise GridError(f"{path}: only triangle faces are supported")
        faces.append(parts[1:4])
    factor = V[:, 3].copy() if V.shape[1] == 4 else None
    if factor is not None and np.any(factor <= 0):
        raise GridError(f"{path}: metric factors must be positive")
    return V[:, :3], np.array(faces, dtype=np.int64), factor


def write_off(path, vertices, faces, factor=None):
    """Write an ASCII OFF triangle mesh, optionally with a metric factor column."""
    V = np.asarray(vertices, float)
    F = np.asarray(faces, dtype=np.int64)
    with open(path, "w") as fh:
        fh.write("OFF\n")
        fh.write(f"{len(V)} {len(F)} 0\n")
        for i, p in enumerate(V):
            extra = f" {factor[i]:.17g}" if factor is not None else ""
            fh.write(f"{p[0]:.17g} {p[1]:.17g} {p[2]:.17g}{extra}\n")
        for f in F:
            fh.write(f"3 {f[0]} {f[1]} {f[2]}\n")


def load_mesh(path, genus=None):
    """Read an OFF file into a :class:`MeshCurve`, checking the genus if asked."""
    V, F, factor = read_off(path)
    curve = MeshCurve.from_embedding(V, F, metric_factor=factor, name=str(path))
    check_genus(curve, genus)
    return curve


def check_genus(curve, genus=None, minimum=None):
    chi = curve.euler_characteristic
    if genus is not None and chi != 2 - 2 * genus:
        raise GridError(f"{curve!r} has Euler characteristic {chi}, expected {2 - 2 * genus}")
    if minimum is not None and (2 - chi) // 2 < minimum:
        raise GridError(f"{curve!r} has genus {(2 - chi) // 2} < {minimum}")
    return curve
