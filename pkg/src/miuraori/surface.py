"""Parametric target surfaces: builtins, NACA airfoil shells, user expressions.

A surface maps parameters (r, s) on a rectangular domain to points in 3D.
Evaluation is vectorized: scalar arguments give shape-(3,) points, array
arguments give shape (..., 3).
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Callable, Optional

import numpy as np

from . import expressions
from .errors import DomainError, ExpressionError, RegistryError, SingularityError

_FD_REL_STEP = 1e-6


def _stack3(x, y, z, like):
    """Stack three components, broadcasting constants against ``like``."""
    shape = np.shape(like)
    out = np.empty(shape + (3,))
    out[..., 0] = x
    out[..., 1] = y
    out[..., 2] = z
    return out


@dataclass
class ParametricSurface:
    """A map (r, s) -> R^3 over a rectangle, with optional analytic partials.

    ``evaluator`` and ``partials_fn`` take (r, s) as scalars or arrays and
    return component tuples; analytic partials are preferred, otherwise
    central finite differences with relative step 1e-6 of the domain span
    (one-sided at the boundary) are used.
    """

    name: str
    domain: tuple  # (r_min, r_max, s_min, s_max)
    evaluator: Callable
    partials_fn: Optional[Callable] = None
    default_grid: Optional[tuple] = None
    spec: dict = field(default_factory=dict)

    def __post_init__(self):
        r0, r1, s0, s1 = self.domain
        if not (r0 < r1 and s0 < s1):
            raise DomainError(f"surface {self.name!r}: empty domain {self.domain}")
        if self.default_grid is None:
            self.default_grid = self.domain

    # -- domain ---------------------------------------------------------

    def check_domain(self, r, s):
        r0, r1, s0, s1 = self.domain
        slack_r = 1e-12 * (r1 - r0)
        slack_s = 1e-12 * (s1 - s0)
        r = np.asarray(r)
        s = np.asarray(s)
        if np.any(r < r0 - slack_r) or np.any(r > r1 + slack_r):
            bad = float(np.atleast_1d(r)[np.argmax((r < r0 - slack_r) | (r > r1 + slack_r))])
            raise DomainError(
                f"surface {self.name!r}: r={bad:g} outside [{r0:g}, {r1:g}]"
            )
        if np.any(s < s0 - slack_s) or np.any(s > s1 + slack_s):
            bad = float(np.atleast_1d(s)[np.argmax((s < s0 - slack_s) | (s > s1 + slack_s))])
            raise DomainError(
                f"surface {self.name!r}: s={bad:g} outside [{s0:g}, {s1:g}]"
            )

    # -- evaluation -----------------------------------------------------

    def point(self, r, s):
        """Evaluate X(r, s); out-of-domain parameters raise DomainError."""
        self.check_domain(r, s)
        x, y, z = self.evaluator(r, s)
        return _stack3(x, y, z, np.asarray(r, dtype=float))

    def partials(self, r, s):
        """Return (dX/dr, dX/ds), analytic when available."""
        self.check_domain(r, s)
        if self.partials_fn is not None:
            dr, ds = self.partials_fn(r, s)
            like = np.asarray(r, dtype=float)
            return _stack3(*dr, like), _stack3(*ds, like)
        return self._fd_partials(r, s)

    def _fd_partials(self, r, s):
        r0, r1, s0, s1 = self.domain
        r = np.asarray(r, dtype=float)
        s = np.asarray(s, dtype=float)
        hr = _FD_REL_STEP * (r1 - r0)
        hs = _FD_REL_STEP * (s1 - s0)
        # one-sided at the boundary, central inside
        r_plus = np.minimum(r + hr, r1)
        r_minus = np.maximum(r - hr, r0)
        s_plus = np.minimum(s + hs, s1)
        s_minus = np.maximum(s - hs, s0)
        dXdr = (self.point(r_plus, s) - self.point(r_minus, s)) / (r_plus - r_minus)[..., None]
        dXds = (self.point(r, s_plus) - self.point(r, s_minus)) / (s_plus - s_minus)[..., None]
        return dXdr, dXds

    def normal(self, r, s):
        """Unit normal dX/dr x dX/ds, oriented by parameter order."""
        dr, ds = self.partials(r, s)
        n = np.cross(dr, ds)
        norm = np.linalg.norm(n, axis=-1)
        if np.any(norm <= 1e-12):
            loc = np.argmax(np.atleast_1d(norm) <= 1e-12)
            rr = float(np.atleast_1d(np.asarray(r, dtype=float))[loc])
            ss = float(np.atleast_1d(np.asarray(s, dtype=float))[loc])
            raise SingularityError(
                f"surface {self.name!r}: degenerate tangent plane at (r={rr:g}, s={ss:g})"
            )
        return n / norm[..., None]


# ---------------------------------------------------------------------------
# Builtin registry
# ---------------------------------------------------------------------------

_WIDE = (-50.0, 50.0, -50.0, 50.0)
_SQUARE = (-1.0, 1.0, -1.0, 1.0)


def _plane(offset=0.0):
    return dict(
        domain=_WIDE,
        default_grid=_SQUARE,
        evaluator=lambda r, s: (r, s, offset + 0.0 * r),
        partials_fn=lambda r, s: ((1.0, 0.0, 0.0), (0.0, 1.0, 0.0)),
    )


def _graph(zfn, dzdr, dzds, grid=_SQUARE):
    return dict(
        domain=_WIDE,
        default_grid=grid,
        evaluator=lambda r, s: (r, s, zfn(r, s)),
        partials_fn=lambda r, s: ((1.0, 0.0, dzdr(r, s)), (0.0, 1.0, dzds(r, s))),
    )


def _cylinder():
    return dict(
        domain=(-np.pi, np.pi, -50.0, 50.0),
        default_grid=_SQUARE,
        evaluator=lambda r, s: (np.cos(r), np.sin(r), s + 0.0 * r),
        partials_fn=lambda r, s: ((-np.sin(r), np.cos(r), 0.0), (0.0, 0.0, 1.0)),
    )


def _sphere(scale=1.0):
    return dict(
        domain=(-np.pi, np.pi, -1.45, 1.45),
        default_grid=(-1.2, 1.2, -1.2, 1.2),
        evaluator=lambda r, s: (
            scale * np.cos(s) * np.cos(r),
            scale * np.cos(s) * np.sin(r),
            scale * np.sin(s) + 0.0 * r,
        ),
        partials_fn=lambda r, s: (
            (-scale * np.cos(s) * np.sin(r), scale * np.cos(s) * np.cos(r), 0.0 * r),
            (-scale * np.sin(s) * np.cos(r), -scale * np.sin(s) * np.sin(r), scale * np.cos(s) + 0.0 * r),
        ),
    )


def _hyperboloid(k=1.0):
    def g(s):
        return np.sqrt(k + s * s)

    return dict(
        domain=(-np.pi, np.pi, -50.0, 50.0),
        default_grid=_SQUARE,
        evaluator=lambda r, s: (g(s) * np.cos(r), g(s) * np.sin(r), s + 0.0 * r),
        partials_fn=lambda r, s: (
            (-g(s) * np.sin(r), g(s) * np.cos(r), 0.0 * r),
            (s / g(s) * np.cos(r), s / g(s) * np.sin(r), 1.0 + 0.0 * r),
        ),
    )


_BUILTINS = {
    "plane": lambda: _plane(),
    "plane_offset": lambda offset=0.0: _plane(offset),
    "saddle_half": lambda offset=0.0: _graph(
        lambda r, s: r * s / 2.0 + offset, lambda r, s: s / 2.0, lambda r, s: r / 2.0
    ),
    "hyperbolic_paraboloid": lambda: _graph(lambda r, s: r * s, lambda r, s: s + 0.0 * r, lambda r, s: r + 0.0 * s),
    "saddle_quarter": lambda offset=0.0: _graph(
        lambda r, s: r * s / 4.0 + offset, lambda r, s: s / 4.0, lambda r, s: r / 4.0
    ),
    "paraboloid_bowl": lambda offset=0.0: _graph(
        lambda r, s: -(r * r + s * s) / 5.0 + offset,
        lambda r, s: -2.0 * r / 5.0,
        lambda r, s: -2.0 * s / 5.0,
    ),
    "cylinder": _cylinder,
    "sphere": _sphere,
    "hyperboloid": _hyperboloid,
}


def builtin_surface(name, **params):
    """Construct a registry surface; unknown names list the valid ones."""
    if name not in _BUILTINS:
        valid = ", ".join(sorted(_BUILTINS))
        raise RegistryError(f"unknown surface {name!r}; valid names: {valid}")
    try:
        parts = _BUILTINS[name](**params)
    except TypeError as exc:
        raise RegistryError(f"surface {name!r}: bad parameters {params}: {exc}") from None
    return ParametricSurface(
        name=name,
        spec={"builtin": name, "params": dict(params)},
        **parts,
    )


# ---------------------------------------------------------------------------
# NACA four-digit airfoil shells
# ---------------------------------------------------------------------------

_THICKNESS_COEFFS = (0.2969, -0.126, -0.3537, 0.2843, -0.1015)


@dataclass(frozen=True)
class AirfoilParams:
    """Four-digit airfoil family parameters plus the two section chords."""

    eps: float = 0.02  # camber magnitude
    p: float = 0.4  # camber position
    tau: float = 0.12  # thickness ratio
    chord_bottom: float = 1.0
    chord_tip: float = 0.6
    span: float = 2.0
    tip_offset: float = 0.8

    def __post_init__(self):
        if not 0.0 < self.p < 1.0:
            raise DomainError(f"camber position p={self.p} must lie in (0, 1)")
        if self.tau <= 0.0:
            raise DomainError(f"thickness ratio tau={self.tau} must be positive")
        if self.chord_bottom <= 0.0 or self.chord_tip <= 0.0:
            raise DomainError("section chords must be positive")


def naca_camber_and_thickness(r, params: AirfoilParams, c):
    """Camber y_c(r), thickness y_t(r) and slope angle theta at chord fraction r.

    The camber polynomial switches branch at r = p (the branches agree
    there); theta = arctan of the piecewise camber slope.
    """
    r = np.asarray(r, dtype=float)
    if np.any(r < 0.0) or np.any(r > 1.0):
        raise DomainError(f"chordwise parameter r must lie in [0, 1], got {r}")
    eps, p = params.eps, params.p
    front = r <= p
    y_c = np.where(
        front,
        eps * c * r / p**2 * (2.0 * p - r),
        eps * c * (1.0 - r) / (1.0 - p) ** 2 * (1.0 + r - 2.0 * p),
    )
    a0, a1, a2, a3, a4 = _THICKNESS_COEFFS
    y_t = 10.0 * params.tau * c * (a0 * np.sqrt(r) + a1 * r + a2 * r**2 + a3 * r**3 + a4 * r**4)
    slope = np.where(front, 2.0 * eps * (p - r) / p**2, 2.0 * eps * (p - r) / (1.0 - p) ** 2)
    theta = np.arctan(slope)
    return y_c, y_t, theta


def _naca_derivatives(r, params: AirfoilParams, c):
    """d(y_c)/dr, d(y_t)/dr, d(theta)/dr; the sqrt term is singular at r=0."""
    r = np.asarray(r, dtype=float)
    eps, p = params.eps, params.p
    front = r <= p
    dyc = np.where(front, eps * c * 2.0 * (p - r) / p**2, eps * c * 2.0 * (p - r) / (1.0 - p) ** 2)
    a0, a1, a2, a3, a4 = _THICKNESS_COEFFS
    with np.errstate(divide="ignore"):
        dyt = 10.0 * params.tau * c * (
            a0 / (2.0 * np.sqrt(r)) + a1 + 2.0 * a2 * r + 3.0 * a3 * r**2 + 4.0 * a4 * r**3
        )
    slope = np.where(front, 2.0 * eps * (p - r) / p**2, 2.0 * eps * (p - r) / (1.0 - p) ** 2)
    dslope = np.where(front, -2.0 * eps / p**2, -2.0 * eps / (1.0 - p) ** 2)
    dtheta = dslope / (1.0 + slope**2)
    return dyc, dyt, dtheta


def _airfoil_section(r, params, c, side):
    """(x, z) of one cross-section curve; side=-1 lower, +1 upper."""
    y_c, y_t, theta = naca_camber_and_thickness(r, params, c)
    x = c * r - side * 0.5 * y_t * np.sin(theta)
    z = y_c + side * 0.5 * y_t * np.cos(theta)
    return x, z


def _airfoil_section_deriv(r, params, c, side):
    y_c, y_t, theta = naca_camber_and_thickness(r, params, c)
    dyc, dyt, dtheta = _naca_derivatives(r, params, c)
    dx = c - side * 0.5 * (dyt * np.sin(theta) + y_t * np.cos(theta) * dtheta)
    dz = dyc + side * 0.5 * (dyt * np.cos(theta) - y_t * np.sin(theta) * dtheta)
    return dx, dz


def airfoil_surface(side: str, params: AirfoilParams = AirfoilParams()) -> ParametricSurface:
    """Ruled surface between the bottom and tip airfoil sections.

    X(r, s) = (1-s) Xb(r) + s Xt(r) with the bottom section (chord
    ``chord_bottom``) in the y=0 plane and the tip section (chord
    ``chord_tip``, shifted by ``tip_offset`` in x) at y=``span``.
    """
    if side not in ("lower", "upper"):
        raise RegistryError(f"airfoil side must be 'lower' or 'upper', got {side!r}")
    sgn = -1.0 if side == "lower" else 1.0

    def evaluator(r, s):
        xb, zb = _airfoil_section(r, params, params.chord_bottom, sgn)
        xt, zt = _airfoil_section(r, params, params.chord_tip, sgn)
        xt = xt + params.tip_offset
        x = (1.0 - s) * xb + s * xt
        z = (1.0 - s) * zb + s * zt
        y = params.span * s + 0.0 * np.asarray(r, dtype=float)
        return x, y, z

    def partials_fn(r, s):
        xb, zb = _airfoil_section(r, params, params.chord_bottom, sgn)
        xt, zt = _airfoil_section(r, params, params.chord_tip, sgn)
        xt = xt + params.tip_offset
        dxb, dzb = _airfoil_section_deriv(r, params, params.chord_bottom, sgn)
        dxt, dzt = _airfoil_section_deriv(r, params, params.chord_tip, sgn)
        zero = 0.0 * np.asarray(r, dtype=float)
        dr = ((1.0 - s) * dxb + s * dxt, zero, (1.0 - s) * dzb + s * dzt)
        ds = (xt - xb, params.span + zero, zt - zb)
        return dr, ds

    return ParametricSurface(
        name=f"naca_{side}",
        domain=(0.0, 1.0, 0.0, 1.0),
        default_grid=(0.02, 0.85, 0.0, 1.0),
        evaluator=evaluator,
        partials_fn=partials_fn,
        spec={"airfoil": {"side": side, **asdict(params)}},
    )


# ---------------------------------------------------------------------------
# Expression-defined surfaces
# ---------------------------------------------------------------------------


def parse_surface_expr(x_expr: str, y_expr: str, z_expr: str, domain) -> ParametricSurface:
    """Build a surface from coordinate expressions over r and s.

    Parsing failures carry character positions; the compiled surface is
    probed at the domain corners and center and rejected if any component
    is non-finite there. Partials fall back to finite differences.
    """
    fns = [expressions.compile_expr(e) for e in (x_expr, y_expr, z_expr)]
    r0, r1, s0, s1 = (float(v) for v in domain)

    def evaluator(r, s):
        zero = 0.0 * np.asarray(r, dtype=float)
        return tuple(fn(r, s) + zero for fn in fns)

    surf = ParametricSurface(
        name="expr",
        domain=(r0, r1, s0, s1),
        evaluator=evaluator,
        spec={"expr": {"x": x_expr, "y": y_expr, "z": z_expr}, "domain": [r0, r1, s0, s1]},
    )
    probe_r = np.array([r0, r0, r1, r1, 0.5 * (r0 + r1)])
    probe_s = np.array([s0, s1, s0, s1, 0.5 * (s0 + s1)])
    pts = surf.point(probe_r, probe_s)
    if not np.all(np.isfinite(pts)):
        bad = int(np.argmax(~np.all(np.isfinite(pts), axis=-1)))
        raise ExpressionError(
            f"expression is not finite at (r={probe_r[bad]:g}, s={probe_s[bad]:g})"
        )
    return surf


def surface_from_spec(spec: dict) -> ParametricSurface:
    """Rebuild a surface from its serialized spec dict."""
    if "builtin" in spec:
        return builtin_surface(spec["builtin"], **spec.get("params", {}))
    if "expr" in spec:
        e = spec["expr"]
        return parse_surface_expr(e["x"], e["y"], e["z"], spec["domain"])
    if "airfoil" in spec:
        a = dict(spec["airfoil"])
        side = a.pop("side")
        return airfoil_surface(side, AirfoilParams(**a))
    raise RegistryError(f"unrecognized surface spec {spec!r}")
