"""Initial Miura-like tessellation on one or two target surfaces.

The mesh is a (2m+1) x (2n+1) vertex grid, 1-based indices (i, j) with i
along r and j along s. Construction: sample the lower surface on an
equispaced parameter grid, shift the even-j rows along r, then either lift
the even-i lines off the surface along its normal (single-surface mode) or
move them onto the upper surface (two-surface mode). Quads are triangulated
with a diagonal direction that alternates with row parity.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .errors import BindingError, ConstructionError
from .surface import ParametricSurface, surface_from_spec

FREE = "free"
LOWER = "lower"
UPPER = "upper"

# vertex axes for plane pins
_AXES = {"x": 0, "y": 1, "z": 2}


@dataclass(frozen=True)
class VertexBinding:
    """How one vertex enters the unknown vector.

    Free vertices contribute (x, y, z); attached vertices slide on a target
    surface and contribute their parameter pair (r, s). A plane pin fixes
    one Cartesian axis of a free vertex; a parameter pin fixes s of an
    attached vertex. Pins become extra linear constraint rows.
    """

    kind: str  # FREE | LOWER | UPPER
    rs: Optional[tuple] = None
    plane_pin: Optional[tuple] = None  # (axis index, value)
    param_pin: Optional[float] = None  # pinned s value

    def __post_init__(self):
        if self.kind == FREE:
            if self.rs is not None or self.param_pin is not None:
                raise BindingError("free vertex cannot carry surface parameters")
        elif self.kind in (LOWER, UPPER):
            if self.rs is None:
                raise BindingError("attached vertex needs parameter coordinates")
            if self.plane_pin is not None:
                raise BindingError("attached vertex takes a parameter pin, not a plane pin")
        else:
            raise BindingError(f"unknown binding kind {self.kind!r}")

    @property
    def attached(self):
        return self.kind != FREE

    @property
    def n_pins(self):
        return int(self.plane_pin is not None) + int(self.param_pin is not None)


@dataclass(frozen=True)
class DofReport:
    """Constraint/variable counts and the resulting slack."""

    n_constraints: int
    n_variables: int
    excess: int
    n_free: int
    n_lower: int
    n_upper: int
    n_pins: int

    @property
    def infeasible_by_count(self):
        return self.excess < 0


@dataclass
class Mesh:
    m: int
    n: int
    lower: ParametricSurface
    upper: Optional[ParametricSurface]
    grid: tuple  # (r0, r1, s0, s1) of the design patch
    l_p: float
    l_h: float
    lift_direction: int
    positions: np.ndarray  # (V, 3) current vertex positions
    initial_positions: np.ndarray  # (V, 3) construction reference
    params: np.ndarray  # (V, 2) construction parameters (after shift)
    bindings: list = field(default_factory=list)

    # -- indexing -------------------------------------------------------

    @property
    def cols(self):
        return 2 * self.m + 1

    @property
    def rows(self):
        return 2 * self.n + 1

    @property
    def n_vertices(self):
        return self.cols * self.rows

    def vid(self, i, j):
        """Flat vertex id for 1-based grid indices."""
        if not (1 <= i <= self.cols and 1 <= j <= self.rows):
            raise IndexError(f"grid index ({i}, {j}) outside {self.cols}x{self.rows}")
        return (j - 1) * self.cols + (i - 1)

    def ij(self, v):
        return v % self.cols + 1, v // self.cols + 1

    def surface_for(self, kind):
        if kind == LOWER:
            return self.lower
        if kind == UPPER:
            if self.upper is None:
                raise BindingError("mesh has no upper surface")
            return self.upper
        raise BindingError(f"no surface for binding kind {kind!r}")

    # -- topology (pure functions of m, n) --------------------------------

    def quads(self):
        """2m x 2n quads as (A, B, C, D) ids in cyclic order, row-major.

        A=(a,b), B=(a+1,b), C=(a+1,b+1), D=(a,b+1); the orientation is
        counterclockwise in the parameter plane.
        """
        out = []
        for b in range(1, self.rows):
            for a in range(1, self.cols):
                out.append((self.vid(a, b), self.vid(a + 1, b), self.vid(a + 1, b + 1), self.vid(a, b + 1)))
        return out

    def quad_diagonal(self, quad_index):
        """Which corner pair carries the diagonal: 'bd' on odd rows, 'ac' on even."""
        b = quad_index // (self.cols - 1) + 1
        return "bd" if b % 2 == 1 else "ac"

    def triangles(self):
        """Two triangles per quad following the alternating diagonal rule."""
        tris = []
        for q, (A, B, C, D) in enumerate(self.quads()):
            if self.quad_diagonal(q) == "bd":
                tris.append((A, B, D))
                tris.append((B, C, D))
            else:
                tris.append((A, B, C))
                tris.append((A, C, D))
        return tris

    def edges(self):
        """All crease/boundary edges of the triangulated mesh, canonical order.

        Grid edges in both directions plus one diagonal per quad; pairs are
        (low id, high id), sorted.
        """
        es = set()
        for j in range(1, self.rows + 1):
            for i in range(1, self.cols):
                es.add(tuple(sorted((self.vid(i, j), self.vid(i + 1, j)))))
        for j in range(1, self.rows):
            for i in range(1, self.cols + 1):
                es.add(tuple(sorted((self.vid(i, j), self.vid(i, j + 1)))))
        for q, (A, B, C, D) in enumerate(self.quads()):
            if self.quad_diagonal(q) == "bd":
                es.add(tuple(sorted((B, D))))
            else:
                es.add(tuple(sorted((A, C))))
        return sorted(es)

    def aux_edges(self):
        """Cell contour segments joining the four corners of each design cell."""
        es = set()
        for J in range(1, self.n + 1):
            for I in range(1, self.m + 1):
                c1 = self.vid(2 * I - 1, 2 * J - 1)
                c3 = self.vid(2 * I + 1, 2 * J - 1)
                c9 = self.vid(2 * I + 1, 2 * J + 1)
                c7 = self.vid(2 * I - 1, 2 * J + 1)
                for a, b in ((c1, c3), (c3, c9), (c9, c7), (c7, c1)):
                    es.add(tuple(sorted((a, b))))
        return sorted(es)

    def interior_fans(self):
        """Per interior vertex: 6 neighbor ids anticlockwise plus parity data.

        Returns a list of dicts with keys ``center``, ``neighbors`` (6 ids,
        anticlockwise starting from the -s neighbor), ``parity`` ('even' or
        'odd' from the 1-based j index) and ``flat_triple`` (the three sector
        slots whose angles must sum to pi for flat-foldability).
        """
        fans = []
        for j in range(2, self.rows):
            for i in range(2, self.cols):
                if j % 2 == 0:
                    nbrs = [(i, j - 1), (i + 1, j - 1), (i + 1, j), (i + 1, j + 1), (i, j + 1), (i - 1, j)]
                    parity, triple = "even", (2, 3, 5)
                else:
                    nbrs = [(i, j - 1), (i + 1, j), (i, j + 1), (i - 1, j + 1), (i - 1, j), (i - 1, j - 1)]
                    parity, triple = "odd", (0, 2, 3)
                fans.append(
                    {
                        "center": self.vid(i, j),
                        "neighbors": [self.vid(*p) for p in nbrs],
                        "parity": parity,
                        "flat_triple": triple,
                    }
                )
        return fans

    # -- derived --------------------------------------------------------

    def characteristic_length(self):
        """Mean initial length over the real edge set E (aux edges excluded)."""
        e = np.array(self.edges())
        d = self.initial_positions[e[:, 0]] - self.initial_positions[e[:, 1]]
        return float(np.mean(np.linalg.norm(d, axis=1)))

    def copy(self):
        return replace(
            self,
            positions=self.positions.copy(),
            initial_positions=self.initial_positions.copy(),
            params=self.params.copy(),
            bindings=list(self.bindings),
        )


# ---------------------------------------------------------------------------
# Construction
# ---------------------------------------------------------------------------


def _sample_grid(surface, m, n, grid, l_p):
    """Parameter samples after the even-row r-shift, with domain check."""
    r0, r1, s0, s1 = grid
    dr = (r1 - r0) / (2 * m)
    ds = (s1 - s0) / (2 * n)
    cols, rows = 2 * m + 1, 2 * n + 1
    params = np.empty((cols * rows, 2))
    v = 0
    for j in range(1, rows + 1):
        s = s0 + (j - 1) * ds
        for i in range(1, cols + 1):
            r = r0 + (i - 1) * dr
            if j % 2 == 0:
                r += l_p
            params[v] = (r, s)
            v += 1
    dom_r0, dom_r1, dom_s0, dom_s1 = surface.domain
    if r1 + l_p > dom_r1 + 1e-12 * (dom_r1 - dom_r0) or r0 < dom_r0 - 1e-12 * (dom_r1 - dom_r0):
        raise ConstructionError(
            f"grid r-range [{r0:g}, {r1:g}] plus shift {l_p:g} leaves the domain of "
            f"surface {surface.name!r} [{dom_r0:g}, {dom_r1:g}]; "
            f"shrink the grid to r <= {dom_r1 - l_p:g}"
        )
    if s0 < dom_s0 - 1e-12 or s1 > dom_s1 + 1e-12:
        raise ConstructionError(
            f"grid s-range [{s0:g}, {s1:g}] leaves the domain of surface "
            f"{surface.name!r} [{dom_s0:g}, {dom_s1:g}]"
        )
    return params, dr, ds


def build_initial_single(
    surface: ParametricSurface,
    m: int,
    n: int,
    l_p_factor: float = 1.0,
    l_h_factor: float = 1.8,
    grid: Optional[tuple] = None,
    lift_direction: int = 1,
) -> Mesh:
    """Initial tessellation over one target surface.

    Vertices on even-j rows are shifted by l_p = l_p_factor*dr along r;
    vertices on even-i lines are lifted off the surface by
    l_h = l_h_factor*dr along +-normal. Corner vertices (odd i, odd j) are
    attached to the surface.
    """
    if m < 1 or n < 1:
        raise ConstructionError(f"cell counts must be positive, got {m}x{n}")
    if grid is None:
        grid = surface.default_grid
    dr = (grid[1] - grid[0]) / (2 * m)
    l_p = l_p_factor * dr
    l_h = l_h_factor * dr
    params, dr, ds = _sample_grid(surface, m, n, grid, l_p)
    pts = surface.point(params[:, 0], params[:, 1])
    cols = 2 * m + 1
    lifted = (np.arange(len(params)) % cols) % 2 == 1  # even 1-based i
    if abs(l_h) > 0 and np.any(lifted):
        normals = surface.normal(params[lifted, 0], params[lifted, 1])
        pts[lifted] += lift_direction * l_h * normals
    mesh = Mesh(
        m=m,
        n=n,
        lower=surface,
        upper=None,
        grid=tuple(float(g) for g in grid),
        l_p=l_p,
        l_h=l_h,
        lift_direction=lift_direction,
        positions=pts,
        initial_positions=pts.copy(),
        params=params,
        bindings=[],
    )
    return default_attachment_single(mesh)


def build_initial_double(
    lower: ParametricSurface,
    upper: ParametricSurface,
    m: int,
    n: int,
    l_p_factor: float = 1.0,
    grid: Optional[tuple] = None,
) -> Mesh:
    """Initial tessellation spanning a lower and an upper target surface.

    The base mesh and the even-row r-shift follow the single-surface
    construction on the lower surface; vertices on even-i lines are then
    moved to the upper surface, evaluated at the same (r, s).
    """
    if m < 1 or n < 1:
        raise ConstructionError(f"cell counts must be positive, got {m}x{n}")
    if grid is None:
        grid = lower.default_grid
    dr = (grid[1] - grid[0]) / (2 * m)
    l_p = l_p_factor * dr
    params, dr, ds = _sample_grid(lower, m, n, grid, l_p)
    pts = lower.point(params[:, 0], params[:, 1])
    cols = 2 * m + 1
    lifted = (np.arange(len(params)) % cols) % 2 == 1
    try:
        pts[lifted] = upper.point(params[lifted, 0], params[lifted, 1])
    except Exception as exc:
        raise ConstructionError(f"upper surface not evaluable at lifted vertices: {exc}") from exc
    mesh = Mesh(
        m=m,
        n=n,
        lower=lower,
        upper=upper,
        grid=tuple(float(g) for g in grid),
        l_p=l_p,
        l_h=0.0,
        lift_direction=1,
        positions=pts,
        initial_positions=pts.copy(),
        params=params,
        bindings=[],
    )
    return default_attachment_double(mesh)


def default_attachment_single(mesh: Mesh) -> Mesh:
    """Attach the cell corners (odd i, odd j) to the lower surface."""
    out = mesh.copy()
    bindings = []
    for v in range(mesh.n_vertices):
        i, j = mesh.ij(v)
        if i % 2 == 1 and j % 2 == 1:
            bindings.append(VertexBinding(LOWER, rs=tuple(mesh.params[v])))
        else:
            bindings.append(VertexBinding(FREE))
    out.bindings = bindings
    return out


def default_attachment_double(mesh: Mesh) -> Mesh:
    """Corners to the lower surface, cell centers (even, even) to the upper."""
    out = mesh.copy()
    bindings = []
    for v in range(mesh.n_vertices):
        i, j = mesh.ij(v)
        if i % 2 == 1 and j % 2 == 1:
            bindings.append(VertexBinding(LOWER, rs=tuple(mesh.params[v])))
        elif i % 2 == 0 and j % 2 == 0:
            bindings.append(VertexBinding(UPPER, rs=tuple(mesh.params[v])))
        else:
            bindings.append(VertexBinding(FREE))
    out.bindings = bindings
    return out


def project_to_surface(surface: ParametricSurface, point, search_box, grid_res: int = 64, steps: int = 20):
    """Nearest-point parameters on ``surface`` for a 3D point.

    Coarse grid search over ``search_box`` followed by damped Gauss-Newton
    refinement of the squared distance, clamped to the surface domain.
    """
    r0, r1, s0, s1 = search_box
    rr, ss = np.meshgrid(np.linspace(r0, r1, grid_res), np.linspace(s0, s1, grid_res), indexing="ij")
    pts = surface.point(rr.ravel(), ss.ravel())
    d2 = np.sum((pts - np.asarray(point)) ** 2, axis=1)
    if not np.any(np.isfinite(d2)):
        raise BindingError(f"projection failed: no finite candidate in {search_box}")
    best = int(np.argmin(d2))
    r, s = float(rr.ravel()[best]), float(ss.ravel()[best])
    dom = surface.domain
    lo_r, hi_r = max(dom[0], min(r0, r1)), min(dom[1], max(r0, r1))
    lo_s, hi_s = max(dom[2], min(s0, s1)), min(dom[3], max(s0, s1))
    target = np.asarray(point, dtype=float)
    mu = 1e-10
    for _ in range(steps):
        X = surface.point(r, s)
        dr_vec, ds_vec = surface.partials(r, s)
        res = X - target
        J = np.stack([dr_vec, ds_vec], axis=1)  # 3x2
        g = J.T @ res
        H = J.T @ J + mu * np.eye(2)
        step = np.linalg.solve(H, -g)
        new_r = min(max(r + step[0], lo_r), hi_r)
        new_s = min(max(s + step[1], lo_s), hi_s)
        new_d2 = float(np.sum((surface.point(new_r, new_s) - target) ** 2))
        if new_d2 <= float(res @ res):
            r, s = new_r, new_s
            mu = max(mu / 4.0, 1e-14)
        else:
            mu *= 10.0
    return r, s


def set_attachment(mesh: Mesh, assignments) -> Mesh:
    """Rebind vertices; OnSurface targets get (r, s) by nearest-point projection.

    ``assignments`` is a list of ((i, j), kind) or ((i, j), VertexBinding).
    Projection searches the mesh's shifted parameter range.
    """
    out = mesh.copy()
    r0, r1, s0, s1 = mesh.grid
    box = (r0, r1 + mesh.l_p, s0, s1)
    for (i, j), target in assignments:
        v = mesh.vid(i, j)
        if isinstance(target, VertexBinding):
            out.bindings[v] = target
            continue
        if target == FREE:
            out.bindings[v] = VertexBinding(FREE)
            continue
        surf = mesh.surface_for(target)
        dom = surf.domain
        search = (max(box[0], dom[0]), min(box[1], dom[1]), max(box[2], dom[2]), min(box[3], dom[3]))
        if not (search[0] < search[1] and search[2] < search[3]):
            raise BindingError(f"vertex ({i},{j}): surface domain excludes the design patch")
        rs = project_to_surface(surf, mesh.positions[v], search)
        out.bindings[v] = VertexBinding(target, rs=rs)
        out.positions[v] = surf.point(*rs)
    return out


def apply_boundary_pins(mesh: Mesh, edge: str, axis: str, value: float) -> Mesh:
    """Pin one boundary row: plane pins for free vertices, parameter pins
    (s fixed at the row parameter) for attached ones."""
    if edge not in ("bottom", "top"):
        raise BindingError(f"pin edge must be 'bottom' or 'top', got {edge!r}")
    if axis not in _AXES:
        raise BindingError(f"pin axis must be one of x, y, z, got {axis!r}")
    out = mesh.copy()
    j = 1 if edge == "bottom" else mesh.rows
    for i in range(1, mesh.cols + 1):
        v = mesh.vid(i, j)
        b = out.bindings[v]
        if b.attached:
            out.bindings[v] = replace(b, param_pin=float(mesh.params[v, 1]))
        else:
            out.bindings[v] = replace(b, plane_pin=(_AXES[axis], float(value)))
    return out


def dof_report(mesh: Mesh) -> DofReport:
    """Constraint and variable counts; excess < 0 flags an over-constrained setup."""
    m, n = mesh.m, mesh.n
    n_c = 12 * m * n - 4 * m - 4 * n + 2
    n_free = sum(1 for b in mesh.bindings if b.kind == FREE)
    n_lower = sum(1 for b in mesh.bindings if b.kind == LOWER)
    n_upper = sum(1 for b in mesh.bindings if b.kind == UPPER)
    n_pins = sum(b.n_pins for b in mesh.bindings)
    n_f = 3 * n_free + 2 * (n_lower + n_upper) - n_pins
    return DofReport(
        n_constraints=n_c,
        n_variables=n_f,
        excess=n_f - n_c,
        n_free=n_free,
        n_lower=n_lower,
        n_upper=n_upper,
        n_pins=n_pins,
    )


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------


def mesh_to_dict(mesh: Mesh) -> dict:
    """JSON-ready mesh description (grid dims, surfaces, positions, bindings,
    topology)."""
    bindings = []
    for b in mesh.bindings:
        d = {"kind": b.kind}
        if b.rs is not None:
            d["rs"] = [float(b.rs[0]), float(b.rs[1])]
        if b.plane_pin is not None:
            d["plane_pin"] = [int(b.plane_pin[0]), float(b.plane_pin[1])]
        if b.param_pin is not None:
            d["param_pin"] = float(b.param_pin)
        bindings.append(d)
    return {
        "m": mesh.m,
        "n": mesh.n,
        "grid": list(mesh.grid),
        "l_p": mesh.l_p,
        "l_h": mesh.l_h,
        "lift_direction": mesh.lift_direction,
        "surfaces": {
            "lower": copy.deepcopy(mesh.lower.spec),
            "upper": copy.deepcopy(mesh.upper.spec) if mesh.upper is not None else None,
        },
        "positions": mesh.positions.tolist(),
        "initial_positions": mesh.initial_positions.tolist(),
        "params": mesh.params.tolist(),
        "bindings": bindings,
        "topology": {
            "quads": [list(q) for q in mesh.quads()],
            "edges": [list(e) for e in mesh.edges()],
            "aux_edges": [list(e) for e in mesh.aux_edges()],
        },
    }


def mesh_from_dict(data: dict) -> Mesh:
    """Inverse of mesh_to_dict; the topology block is validated, not trusted."""
    lower = surface_from_spec(data["surfaces"]["lower"])
    upper_spec = data["surfaces"]["upper"]
    upper = surface_from_spec(upper_spec) if upper_spec is not None else None
    bindings = []
    for d in data["bindings"]:
        bindings.append(
            VertexBinding(
                kind=d["kind"],
                rs=tuple(d["rs"]) if "rs" in d else None,
                plane_pin=(int(d["plane_pin"][0]), float(d["plane_pin"][1])) if "plane_pin" in d else None,
                param_pin=float(d["param_pin"]) if "param_pin" in d else None,
            )
        )
    mesh = Mesh(
        m=int(data["m"]),
        n=int(data["n"]),
        lower=lower,
        upper=upper,
        grid=tuple(float(g) for g in data["grid"]),
        l_p=float(data["l_p"]),
        l_h=float(data["l_h"]),
        lift_direction=int(data["lift_direction"]),
        positions=np.asarray(data["positions"], dtype=float),
        initial_positions=np.asarray(data["initial_positions"], dtype=float),
        params=np.asarray(data["params"], dtype=float),
        bindings=bindings,
    )
    if len(mesh.bindings) != mesh.n_vertices:
        raise ConstructionError("binding list length does not match vertex count")
    topo = data.get("topology")
    if topo is not None and [list(q) for q in mesh.quads()] != topo["quads"]:
        raise ConstructionError("serialized topology does not match grid dimensions")
    return mesh
