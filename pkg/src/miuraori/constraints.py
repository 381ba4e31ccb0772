"""Constraint residuals, objective function and analytic first derivatives.

The unknown vector q concatenates per-vertex variables in grid order: free
vertices contribute (x, y, z), attached vertices their surface parameters
(r, s). The residual vector stacks the quad planarity rows, then the
developability rows, then the flat-foldability rows, then any scalar pin
rows. All derivatives are analytic; attached-vertex columns go through the
surface partials by the chain rule.
"""

from __future__ import annotations

import warnings

import numpy as np
import scipy.sparse as sp

from .errors import AssemblyError, DegeneracyError
from .tessellation import FREE, LOWER, UPPER, Mesh, dof_report

TWO_PI = 2.0 * np.pi


# ---------------------------------------------------------------------------
# Geometric kernels (single-instance reference implementations)
# ---------------------------------------------------------------------------


def planarity_residual(X1, X2, X4, X5):
    """Signed volume (X2-X1) x (X4-X1) . (X5-X1); zero iff the quad is planar."""
    X1, X2, X4, X5 = (np.asarray(p, dtype=float) for p in (X1, X2, X4, X5))
    return float(np.cross(X2 - X1, X4 - X1) @ (X5 - X1))


def planarity_gradient(X1, X2, X4, X5):
    """Exact gradient of the triple product w.r.t. each of the four points."""
    X1, X2, X4, X5 = (np.asarray(p, dtype=float) for p in (X1, X2, X4, X5))
    u, v, w = X2 - X1, X4 - X1, X5 - X1
    g2 = np.cross(v, w)
    g4 = np.cross(w, u)
    g5 = np.cross(u, v)
    return -(g2 + g4 + g5), g2, g4, g5


def sector_angle(X1, X2, X3, eps=1e-12):
    """Angle at X1 between the rays to X2 and X3, clamped before arccos."""
    X1, X2, X3 = (np.asarray(p, dtype=float) for p in (X1, X2, X3))
    e2, e3 = X2 - X1, X3 - X1
    n2, n3 = np.linalg.norm(e2), np.linalg.norm(e3)
    if n2 <= eps or n3 <= eps:
        raise DegeneracyError(f"zero-length edge at sector angle (norms {n2:g}, {n3:g})")
    c = np.clip(e2 @ e3 / (n2 * n3), -1.0, 1.0)
    return float(np.arccos(c))


def sector_angle_gradient(X1, X2, X3, eps=1e-12):
    """d(angle)/d(X1, X2, X3) via the triangle-normal formulas."""
    X1, X2, X3 = (np.asarray(p, dtype=float) for p in (X1, X2, X3))
    e2, e3 = X2 - X1, X3 - X1
    cr = np.cross(e2, e3)
    cn = np.linalg.norm(cr)
    if cn <= eps:
        raise DegeneracyError("degenerate triangle in sector angle gradient")
    n = cr / cn
    g2 = -np.cross(n, e2) / (e2 @ e2)
    g3 = np.cross(n, e3) / (e3 @ e3)
    return -(g2 + g3), g2, g3


def developability_residual(angles):
    """Sum of the six fan angles minus 2*pi."""
    angles = np.asarray(angles, dtype=float)
    if angles.shape[-1] != 6:
        raise ValueError("a fan has exactly 6 sector angles")
    return float(np.sum(angles)) - TWO_PI


FLAT_TRIPLES = {"even": (2, 3, 5), "odd": (0, 2, 3)}


def flat_foldability_residual(angles, parity):
    """Whole quad sector plus the two halves of the opposite split quad, minus pi.

    ``parity`` is the row parity tag of the interior vertex ('even'/'odd');
    it selects which alternating triple of the anticlockwise fan is summed.
    """
    angles = np.asarray(angles, dtype=float)
    if angles.shape[-1] != 6:
        raise ValueError("a fan has exactly 6 sector angles")
    triple = FLAT_TRIPLES[parity]
    return float(angles[..., triple].sum()) - np.pi


# ---------------------------------------------------------------------------
# Vectorized batch kernels
# ---------------------------------------------------------------------------


def _batch_angles_and_grads(P, c_idx, p_idx, q_idx, eps):
    """Angles and per-point gradients for many (center, p, q) triangles."""
    e2 = P[p_idx] - P[c_idx]
    e3 = P[q_idx] - P[c_idx]
    n2 = np.einsum("ij,ij->i", e2, e2)
    n3 = np.einsum("ij,ij->i", e3, e3)
    if np.any(n2 <= eps * eps) or np.any(n3 <= eps * eps):
        bad = int(np.argmax((n2 <= eps * eps) | (n3 <= eps * eps)))
        raise DegeneracyError(f"zero-length fan edge at interior vertex id {int(c_idx[bad])}")
    l2 = np.sqrt(n2)
    l3 = np.sqrt(n3)
    cosang = np.clip(np.einsum("ij,ij->i", e2, e3) / (l2 * l3), -1.0, 1.0)
    ang = np.arccos(cosang)
    cr = np.cross(e2, e3)
    cn = np.linalg.norm(cr, axis=1)
    if np.any(cn <= eps):
        bad = int(np.argmax(cn <= eps))
        raise DegeneracyError(f"collapsed sector triangle at interior vertex id {int(c_idx[bad])}")
    nrm = cr / cn[:, None]
    gp = -np.cross(nrm, e2) / n2[:, None]
    gq = np.cross(nrm, e3) / n3[:, None]
    gc = -(gp + gq)
    return ang, gc, gp, gq


# ---------------------------------------------------------------------------
# Entry pattern: fixed (row, vertex) incidence expanded to variable columns
# ---------------------------------------------------------------------------


class _EntryPattern:
    """Precomputed scatter of per-vertex 3-gradients into a sparse matrix.

    The incidence (row, vertex) pairs are fixed at assembly; each evaluation
    supplies the gradient 3-vectors in the same order and the chain-rule
    surface partials for attached vertices.
    """

    def __init__(self, rows, verts, offsets, attached_mask, shape):
        rows = np.asarray(rows, dtype=np.int64)
        verts = np.asarray(verts, dtype=np.int64)
        self.shape = shape
        self.free_sel = np.flatnonzero(~attached_mask[verts])
        self.att_sel = np.flatnonzero(attached_mask[verts])
        self.free_verts = verts[self.free_sel]
        self.att_verts = verts[self.att_sel]
        free_cols = offsets[self.free_verts][:, None] + np.arange(3)[None, :]
        att_cols = offsets[self.att_verts][:, None] + np.arange(2)[None, :]
        self.coo_rows = np.concatenate(
            [np.repeat(rows[self.free_sel], 3), np.repeat(rows[self.att_sel], 2)]
        )
        self.coo_cols = np.concatenate([free_cols.ravel(), att_cols.ravel()])

    def matrix(self, grads, Pr, Ps, extra=None):
        """Sparse CSR from gradient vectors; duplicate entries accumulate."""
        gfree = grads[self.free_sel].ravel()
        ga = grads[self.att_sel]
        datt = np.stack(
            [
                np.einsum("ij,ij->i", ga, Pr[self.att_verts]),
                np.einsum("ij,ij->i", ga, Ps[self.att_verts]),
            ],
            axis=1,
        ).ravel()
        rows, cols, data = self.coo_rows, self.coo_cols, np.concatenate([gfree, datt])
        if extra is not None:
            er, ec, ed = extra
            rows = np.concatenate([rows, er])
            cols = np.concatenate([cols, ec])
            data = np.concatenate([data, ed])
        return sp.coo_matrix((data, (rows, cols)), shape=self.shape).tocsr()


# ---------------------------------------------------------------------------
# The assembled system
# ---------------------------------------------------------------------------


class ConstraintSystem:
    """Flattened residual c(q), Jacobian J(q), objective f(q) and gradient.

    Built once per mesh; evaluation methods are pure functions of q and may
    be called concurrently.
    """

    def __init__(self, mesh: Mesh):
        self.mesh = mesh
        V = mesh.n_vertices

        # variable layout
        kinds = np.array([b.kind for b in mesh.bindings])
        self.attached_mask = kinds != FREE
        widths = np.where(self.attached_mask, 2, 3)
        self.offsets = np.concatenate([[0], np.cumsum(widths)[:-1]]).astype(np.int64)
        self.n_variables = int(np.sum(widths))
        self.free_ids = np.flatnonzero(~self.attached_mask)
        self.lower_ids = np.flatnonzero(kinds == LOWER)
        self.upper_ids = np.flatnonzero(kinds == UPPER)
        self.report = dof_report(mesh)
        if self.report.infeasible_by_count:
            warnings.warn(
                f"more constraints ({self.report.n_constraints}) than variables "
                f"({self.report.n_variables}); the optimization is over-constrained",
                stacklevel=2,
            )

        # reference data
        self.edges = np.asarray(mesh.edges(), dtype=np.int64)
        self.aux_edges = np.asarray(mesh.aux_edges(), dtype=np.int64)
        self.all_edges = np.vstack([self.edges, self.aux_edges])
        X0 = mesh.initial_positions
        self.X0 = X0.copy()
        L0_all = np.linalg.norm(X0[self.all_edges[:, 0]] - X0[self.all_edges[:, 1]], axis=1)
        if np.any(L0_all <= 0.0):
            bad = int(np.argmax(L0_all <= 0.0))
            raise AssemblyError(f"zero reference length on edge {self.all_edges[bad].tolist()}")
        self.L0 = L0_all
        n_real = len(self.edges)
        self.L_c = float(np.sum(self.L0[:n_real]) / n_real)
        self.eps_len = 1e-12 * self.L_c

        # constraint row structure
        quads = np.asarray(mesh.quads(), dtype=np.int64)
        self.quadsA, self.quadsB, self.quadsC, self.quadsD = quads.T
        self.n_planarity = len(quads)
        fans = mesh.interior_fans()
        self.fan_centers = np.array([f["center"] for f in fans], dtype=np.int64)
        nbrs = np.array([f["neighbors"] for f in fans], dtype=np.int64)
        self.fan_nbrs = nbrs
        self.n_fans = len(fans)
        self.tri_c = np.repeat(self.fan_centers, 6)
        self.tri_p = nbrs.ravel()
        self.tri_q = np.roll(nbrs, -1, axis=1).ravel()
        flat_mask = np.zeros((self.n_fans, 6), dtype=bool)
        for f_i, f in enumerate(fans):
            flat_mask[f_i, list(f["flat_triple"])] = True
        self.flat_mask = flat_mask.ravel()

        # pins
        pin_rows = []
        for v, b in enumerate(mesh.bindings):
            if b.plane_pin is not None:
                if b.attached:
                    raise AssemblyError(f"vertex id {v}: plane pin on an attached vertex")
                pin_rows.append((v, int(b.plane_pin[0]), float(b.plane_pin[1]), "plane"))
            if b.param_pin is not None:
                if not b.attached:
                    raise AssemblyError(f"vertex id {v}: parameter pin on a free vertex")
                pin_rows.append((v, 1, float(b.param_pin), "param"))
        self.pins = pin_rows
        self.n_pins = len(pin_rows)
        self.n_rows = self.n_planarity + 2 * self.n_fans + self.n_pins

        self.row_class_slices = {
            "planarity": slice(0, self.n_planarity),
            "developability": slice(self.n_planarity, self.n_planarity + self.n_fans),
            "flat_foldability": slice(self.n_planarity + self.n_fans, self.n_planarity + 2 * self.n_fans),
            "pins": slice(self.n_planarity + 2 * self.n_fans, self.n_rows),
        }
        # per-row scaling used by the solver: volumes scale as length^3,
        # angle rows are already dimensionless, plane pins as length
        scale = np.ones(self.n_rows)
        scale[self.row_class_slices["planarity"]] = 1.0 / self.L_c**3
        for k, (v, axis, value, kind) in enumerate(pin_rows):
            if kind == "plane":
                scale[self.n_planarity + 2 * self.n_fans + k] = 1.0 / self.L_c
        self.row_scale = scale

        self._build_jacobian_patterns()

    # -- layout helpers ---------------------------------------------------

    def q0(self):
        """Initial unknown vector from the mesh's current state."""
        q = np.empty(self.n_variables)
        mesh = self.mesh
        for v, b in enumerate(mesh.bindings):
            o = self.offsets[v]
            if b.attached:
                q[o : o + 2] = b.rs
            else:
                q[o : o + 3] = mesh.positions[v]
        return q

    def positions(self, q):
        """Vertex positions for a variable vector; attachment is exact."""
        V = self.mesh.n_vertices
        P = np.empty((V, 3))
        if len(self.free_ids):
            cols = self.offsets[self.free_ids][:, None] + np.arange(3)[None, :]
            P[self.free_ids] = q[cols]
        for ids, kind in ((self.lower_ids, LOWER), (self.upper_ids, UPPER)):
            if len(ids) == 0:
                continue
            surf = self.mesh.surface_for(kind)
            r = q[self.offsets[ids]]
            s = q[self.offsets[ids] + 1]
            P[ids] = surf.point(r, s)
        return P

    def _surface_partials(self, q):
        """(V,3) arrays dX/dr and dX/ds; rows for free vertices are unused."""
        V = self.mesh.n_vertices
        Pr = np.zeros((V, 3))
        Ps = np.zeros((V, 3))
        for ids, kind in ((self.lower_ids, LOWER), (self.upper_ids, UPPER)):
            if len(ids) == 0:
                continue
            surf = self.mesh.surface_for(kind)
            r = q[self.offsets[ids]]
            s = q[self.offsets[ids] + 1]
            dr, ds = surf.partials(r, s)
            Pr[ids] = dr
            Ps[ids] = ds
        return Pr, Ps

    # -- constraint residual and Jacobian ---------------------------------

    def residual(self, q, positions=None):
        """Stacked constraint vector c(q)."""
        P = self.positions(q) if positions is None else positions
        u = P[self.quadsB] - P[self.quadsA]
        v = P[self.quadsD] - P[self.quadsA]
        w = P[self.quadsC] - P[self.quadsA]
        c_pl = np.einsum("ij,ij->i", np.cross(u, v), w)
        ang, _, _, _ = _batch_angles_and_grads(P, self.tri_c, self.tri_p, self.tri_q, self.eps_len)
        ang6 = ang.reshape(self.n_fans, 6)
        c_dev = ang6.sum(axis=1) - TWO_PI
        c_flat = ang.reshape(-1)[self.flat_mask].reshape(self.n_fans, 3).sum(axis=1) - np.pi
        c_pin = np.array(
            [q[self.offsets[v_] + axis] - value for (v_, axis, value, kind) in self.pins]
        )
        return np.concatenate([c_pl, c_dev, c_flat, c_pin])

    def _build_jacobian_patterns(self):
        K, Fn = self.n_planarity, self.n_fans
        rows_pl = np.tile(np.arange(K, dtype=np.int64), 4)
        verts_pl = np.concatenate([self.quadsA, self.quadsB, self.quadsC, self.quadsD])
        dev_rows_per_tri = K + np.repeat(np.arange(Fn, dtype=np.int64), 6)
        rows_dev = np.tile(dev_rows_per_tri, 3)
        verts_dev = np.concatenate([self.tri_c, self.tri_p, self.tri_q])
        flat_rows_per_tri = (K + Fn + np.repeat(np.arange(Fn, dtype=np.int64), 6))[self.flat_mask]
        rows_flat = np.tile(flat_rows_per_tri, 3)
        verts_flat = np.concatenate(
            [self.tri_c[self.flat_mask], self.tri_p[self.flat_mask], self.tri_q[self.flat_mask]]
        )
        rows = np.concatenate([rows_pl, rows_dev, rows_flat])
        verts = np.concatenate([verts_pl, verts_dev, verts_flat])
        # pin rows are constant single entries
        pin_rows = []
        pin_cols = []
        base = K + 2 * Fn
        for k, (v, axis, value, kind) in enumerate(self.pins):
            pin_rows.append(base + k)
            pin_cols.append(self.offsets[v] + axis)
        self._pin_extra = (
            np.asarray(pin_rows, dtype=np.int64),
            np.asarray(pin_cols, dtype=np.int64),
            np.ones(len(pin_rows)),
        )
        self._c_pattern = _EntryPattern(
            rows, verts, self.offsets, self.attached_mask, (self.n_rows, self.n_variables)
        )

        # objective residual pattern: edge rows then anchor rows
        M = len(self.all_edges)
        V = self.mesh.n_vertices
        rows_e = np.tile(np.arange(M, dtype=np.int64), 2)
        verts_e = np.concatenate([self.all_edges[:, 0], self.all_edges[:, 1]])
        rows_a = M + np.arange(3 * V, dtype=np.int64)
        verts_a = np.repeat(np.arange(V, dtype=np.int64), 3)
        self.n_obj_rows = M + 3 * V
        self._f_pattern = _EntryPattern(
            np.concatenate([rows_e, rows_a]),
            np.concatenate([verts_e, verts_a]),
            self.offsets,
            self.attached_mask,
            (self.n_obj_rows, self.n_variables),
        )
        eye = np.eye(3)
        self._anchor_grads = np.tile(eye, (V, 1)) / self.L_c

    def jacobian(self, q, positions=None, partials=None):
        """Sparse N_rows x N_f Jacobian of the constraint vector."""
        P = self.positions(q) if positions is None else positions
        Pr, Ps = self._surface_partials(q) if partials is None else partials
        u = P[self.quadsB] - P[self.quadsA]
        v = P[self.quadsD] - P[self.quadsA]
        w = P[self.quadsC] - P[self.quadsA]
        gB = np.cross(v, w)
        gD = np.cross(w, u)
        gC = np.cross(u, v)
        gA = -(gB + gC + gD)
        _, gc, gp, gq = _batch_angles_and_grads(P, self.tri_c, self.tri_p, self.tri_q, self.eps_len)
        fm = self.flat_mask
        grads = np.concatenate([gA, gB, gC, gD, gc, gp, gq, gc[fm], gp[fm], gq[fm]])
        return self._c_pattern.matrix(grads, Pr, Ps, extra=self._pin_extra)

    # -- objective ---------------------------------------------------------

    def objective_residuals(self, q, positions=None):
        """Least-squares form of the objective: f(q) = ||F(q)||^2.

        Edge rows are L/L0 - 1 over E plus the auxiliary contour edges;
        anchor rows are the componentwise deviations (X - X0)/L_c.
        """
        P = self.positions(q) if positions is None else positions
        d = P[self.all_edges[:, 0]] - P[self.all_edges[:, 1]]
        L = np.linalg.norm(d, axis=1)
        if np.any(L <= self.eps_len):
            bad = int(np.argmax(L <= self.eps_len))
            raise DegeneracyError(f"collapsed edge {self.all_edges[bad].tolist()}")
        F_edges = L / self.L0 - 1.0
        F_anchor = ((P - self.X0) / self.L_c).ravel()
        return np.concatenate([F_edges, F_anchor])

    def objective_jacobian(self, q, positions=None, partials=None):
        P = self.positions(q) if positions is None else positions
        Pr, Ps = self._surface_partials(q) if partials is None else partials
        d = P[self.all_edges[:, 0]] - P[self.all_edges[:, 1]]
        L = np.linalg.norm(d, axis=1)
        unit = d / (L[:, None] * self.L0[:, None])
        grads = np.concatenate([unit, -unit, self._anchor_grads])
        return self._f_pattern.matrix(grads, Pr, Ps)

    def objective(self, q, positions=None):
        F = self.objective_residuals(q, positions=positions)
        return float(F @ F)

    def gradient(self, q, positions=None, partials=None):
        """Analytic gradient of the objective."""
        F = self.objective_residuals(q, positions=positions)
        JF = self.objective_jacobian(q, positions=positions, partials=partials)
        return 2.0 * (JF.T @ F)

    def objective_and_gradient(self, q):
        return self.objective(q), self.gradient(q)

    # -- diagnostics -------------------------------------------------------

    def residual_report(self, q):
        """Max/mean absolute residual per constraint class (JSON-ready)."""
        c = self.residual(q)
        out = {}
        for name, sl in self.row_class_slices.items():
            block = np.abs(c[sl])
            out[name] = {
                "count": int(block.size),
                "max": float(block.max()) if block.size else 0.0,
                "mean": float(block.mean()) if block.size else 0.0,
            }
        out["all"] = {"count": int(c.size), "max": float(np.abs(c).max()), "mean": float(np.abs(c).mean())}
        return out


def assemble(mesh: Mesh) -> ConstraintSystem:
    """Build the flattened constraint system for a bound mesh."""
    if not mesh.bindings:
        raise AssemblyError("mesh has no vertex bindings")
    return ConstraintSystem(mesh)
