"""Finger surface parameterization.

The sensorized surface is a hemispherical tip on top of a cylinder. Points
are addressed in a planar (A, B) space measured in millimetres: the tip is
the square ``|A|, |B| <= L`` (an equal-area square-to-hemisphere map), and
the sensorized front half of the cylinder is covered by two parallelograms
("green" and "blue") glued to the ``B = -L`` and ``A = L`` edges of that
square. Both parallelograms extend along the (1, -1) diagonal; a point there
is projected back onto the square edge and the projection distance, scaled
by ``gamma``, becomes the depth below the equator.

Because the tip map is area preserving and the parallelogram depth is sized
to match the lateral cylinder area, one square millimetre in (A, B) is one
square millimetre of finger surface everywhere on the domain.

Cartesian frame: origin at the hemisphere centre, +z along the finger axis
towards the tip, cylinder occupying ``-cyl_height_mm <= z <= 0``. The
sensorized cylinder half spans azimuths [-135 deg, 45 deg].
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "FingerDims",
    "Region",
    "ABPoint",
    "SurfacePoint",
    "GeometryError",
    "OutOfDomain",
    "NotOnSurface",
    "UnsensedRegion",
    "classify",
    "ab_to_xyz",
    "xyz_to_ab",
    "ab_to_xyz_array",
    "xyz_to_ab_array",
    "surface_distance",
    "geodesic_xyz",
    "geodesic_path",
    "localization_error_mm",
    "sample_uniform_ab",
    "quadrature_grid",
]

_ON_SURFACE_TOL = 1e-6
_DOMAIN_TOL = 1e-9


class GeometryError(ValueError):
    pass


class OutOfDomain(GeometryError):
    pass


class NotOnSurface(GeometryError):
    pass


class UnsensedRegion(GeometryError):
    pass


class Region(str, enum.Enum):
    TIP = "tip"
    GREEN = "green"
    BLUE = "blue"


_REGION_CODES = (Region.TIP, Region.GREEN, Region.BLUE)


@dataclass(frozen=True)
class FingerDims:
    radius_mm: float = 18.0
    cyl_height_mm: float = 72.0
    waveguide_thickness_mm: float = 7.0

    def __post_init__(self):
        for name in ("radius_mm", "cyl_height_mm", "waveguide_thickness_mm"):
            value = getattr(self, name)
            if not (value > 0 and math.isfinite(value)):
                raise ValueError(f"{name} must be positive and finite, got {value!r}")

    @property
    def L_mm(self) -> float:
        """Half side of the tip square, r*sqrt(pi/2)."""
        return self.radius_mm * math.sqrt(math.pi / 2.0)

    @property
    def diag_extent(self) -> float:
        """Diagonal offset T of the cylinder parallelograms.

        Chosen so each parallelogram (area 2*L*T) equals a quarter of the
        lateral cylinder area, pi*r*H/2.
        """
        return math.pi * self.radius_mm * self.cyl_height_mm / (4.0 * self.L_mm)

    @property
    def seam_length(self) -> float:
        """Length of the segment shared by the green and blue regions."""
        return math.sqrt(2.0) * self.diag_extent

    @property
    def gamma(self) -> float:
        return self.cyl_height_mm / self.seam_length

    @property
    def sensorized_area(self) -> float:
        r = self.radius_mm
        return 2.0 * math.pi * r * r + math.pi * r * self.cyl_height_mm


@dataclass(frozen=True)
class ABPoint:
    a: float
    b: float
    region: Region = field(default=Region.TIP)

    @classmethod
    def at(cls, a: float, b: float, dims: FingerDims | None = None) -> "ABPoint":
        dims = dims or FingerDims()
        return cls(float(a), float(b), classify(a, b, dims))

    def as_tuple(self) -> tuple[float, float]:
        return (self.a, self.b)


@dataclass(frozen=True)
class SurfacePoint:
    ab: ABPoint
    xyz: tuple[float, float, float]
    normal: tuple[float, float, float]


# ---------------------------------------------------------------------------
# Region classification
# ---------------------------------------------------------------------------

def _region_codes(a, b, dims: FingerDims, tol: float = _DOMAIN_TOL) -> np.ndarray:
    """0 = tip, 1 = green, 2 = blue, -1 = outside."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    L = dims.L_mm
    T = dims.diag_extent
    s = a + b
    code = np.full(np.broadcast(a, b).shape, -1, dtype=np.int8)
    tip = (np.abs(a) <= L + tol) & (np.abs(b) <= L + tol)
    green = (~tip) & (b < -L) & (b >= -L - T - tol) & (s >= -2 * L - tol) & (s <= tol)
    blue = (~tip) & (~green) & (a > L) & (a <= L + T + tol) & (s >= -tol) & (s <= 2 * L + tol)
    code[tip] = 0
    code[green] = 1
    code[blue] = 2
    return code


def classify(a: float, b: float, dims: FingerDims | None = None) -> Region:
    dims = dims or FingerDims()
    code = int(_region_codes(a, b, dims))
    if code < 0:
        raise OutOfDomain(f"(A, B) = ({a}, {b}) lies outside the sensorized domain")
    return _REGION_CODES[code]


def _check_point(p: ABPoint, dims: FingerDims) -> int:
    code = int(_region_codes(p.a, p.b, dims))
    if code < 0:
        raise OutOfDomain(f"(A, B) = ({p.a}, {p.b}) lies outside the sensorized domain")
    return code


# ---------------------------------------------------------------------------
# Forward map
# ---------------------------------------------------------------------------

def _tip_map(a, b, r, d):
    """Equal-area square-to-hemisphere map, lowered by ``d`` along z."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    branch1 = np.abs(b) <= np.abs(a)
    # the driving coordinate (the larger one in magnitude) and the ratio angle
    big = np.where(branch1, a, b)
    small = np.where(branch1, b, a)
    safe_big = np.where(big == 0.0, 1.0, big)
    ang = small * math.pi / (4.0 * safe_big)
    rad = (2.0 * big / math.pi) * np.sqrt(np.maximum(math.pi - big * big / (r * r), 0.0))
    cos_t = np.cos(ang)
    sin_t = np.sin(ang)
    x = np.where(branch1, rad * cos_t, rad * sin_t)
    y = np.where(branch1, rad * sin_t, rad * cos_t)
    z = r - 2.0 * big * big / (math.pi * r) - d
    pole = big == 0.0
    x = np.where(pole, 0.0, x)
    y = np.where(pole, 0.0, y)
    return x, y, z


def ab_to_xyz_array(a, b, dims: FingerDims | None = None, check: bool = True):
    """Vectorized forward map.

    Returns ``(xyz, normals, codes)`` with ``xyz`` and ``normals`` of shape
    ``(..., 3)`` and integer region codes (0 tip, 1 green, 2 blue).
    """
    dims = dims or FingerDims()
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    a, b = np.broadcast_arrays(a, b)
    codes = _region_codes(a, b, dims)
    if check and np.any(codes < 0):
        bad = np.argwhere(codes < 0)[0]
        raise OutOfDomain(
            f"(A, B) = ({a[tuple(bad)]}, {b[tuple(bad)]}) lies outside the sensorized domain"
        )
    L = dims.L_mm
    r = dims.radius_mm
    ap = a.copy()
    bp = b.copy()
    green = codes == 1
    blue = codes == 2
    ap[green] = L + a[green] + b[green]
    bp[green] = -L
    ap[blue] = L
    bp[blue] = a[blue] + b[blue] - L
    d = dims.gamma * np.hypot(ap - a, bp - b)
    x, y, z = _tip_map(ap, bp, r, d)
    xyz = np.stack([x, y, z], axis=-1)
    normals = xyz.copy()
    cyl = codes > 0
    normals[..., 2] = np.where(cyl, 0.0, normals[..., 2])
    normals /= np.linalg.norm(normals, axis=-1, keepdims=True)
    return xyz, normals, codes


def ab_to_xyz(p: ABPoint, dims: FingerDims | None = None) -> SurfacePoint:
    dims = dims or FingerDims()
    code = _check_point(p, dims)
    xyz, nrm, _ = ab_to_xyz_array(p.a, p.b, dims)
    ab = p if p.region == _REGION_CODES[code] else ABPoint(p.a, p.b, _REGION_CODES[code])
    return SurfacePoint(ab, tuple(float(v) for v in xyz), tuple(float(v) for v in nrm))


# ---------------------------------------------------------------------------
# Inverse map
# ---------------------------------------------------------------------------

def xyz_to_ab_array(xyz, dims: FingerDims | None = None, tol: float = _ON_SURFACE_TOL):
    """Vectorized inverse map; returns ``(a, b, codes)``.

    Raises NotOnSurface / UnsensedRegion if any point is invalid.
    """
    dims = dims or FingerDims()
    q = np.asarray(xyz, dtype=float)
    x, y, z = q[..., 0], q[..., 1], q[..., 2]
    r = dims.radius_mm
    L = dims.L_mm
    rho = np.hypot(x, y)
    on_tip = z >= 0.0
    radial = np.where(on_tip, np.sqrt(rho * rho + z * z), rho)
    if np.any(np.abs(radial - r) > tol) or np.any(z < -dims.cyl_height_mm - tol):
        raise NotOnSurface("point is not on the finger surface within tolerance")

    a = np.zeros_like(x)
    b = np.zeros_like(x)
    codes = np.zeros(x.shape, dtype=np.int8)

    # tip: invert the z relation for the driving coordinate, then the angle
    zt = np.where(on_tip, z, 0.0)
    one_minus = rho * rho / (r + zt)  # r - z, stable near the pole
    m = np.sqrt(math.pi * r * one_minus / 2.0)
    xdom = np.abs(x) >= np.abs(y)
    safe_x = np.where(x == 0.0, 1.0, x)
    safe_y = np.where(y == 0.0, 1.0, y)
    a1 = np.copysign(m, x)
    b2 = np.copysign(m, y)
    # the ratio can overflow on the dominated branch; arctan(inf) is fine and
    # that branch is discarded by the where below
    with np.errstate(over="ignore", divide="ignore"):
        b1 = a1 * (4.0 / math.pi) * np.arctan(y / safe_x)
        a2 = b2 * (4.0 / math.pi) * np.arctan(x / safe_y)
    ta = np.where(xdom, a1, a2)
    tb = np.where(xdom, b1, b2)
    pole = rho == 0.0
    ta = np.where(pole, 0.0, ta)
    tb = np.where(pole, 0.0, tb)

    # cylinder: azimuth picks the edge, depth gives the diagonal offset
    phi = np.arctan2(y, x)
    ang_tol = tol / r
    t = np.where(on_tip, 0.0, -z) / (dims.gamma * math.sqrt(2.0))
    is_blue = (~on_tip) & (phi >= -math.pi / 4) & (phi <= math.pi / 4 + ang_tol)
    is_green = (~on_tip) & (phi < -math.pi / 4) & (phi >= -3 * math.pi / 4 - ang_tol)
    if np.any((~on_tip) & ~(is_blue | is_green)):
        raise UnsensedRegion("point lies on the unsensed back half of the cylinder")
    bp = np.clip(phi, -math.pi / 4, math.pi / 4) * 4.0 * L / math.pi
    ap = np.clip(phi + math.pi / 2, -math.pi / 4, math.pi / 4) * 4.0 * L / math.pi

    a = np.where(on_tip, ta, np.where(is_blue, L + t, ap + t))
    b = np.where(on_tip, tb, np.where(is_blue, bp - t, -L - t))
    codes = np.where(on_tip, 0, np.where(is_blue, 2, 1)).astype(np.int8)
    # points exactly on the equator are tip points; t == 0 there anyway
    return a, b, codes


def xyz_to_ab(q, dims: FingerDims | None = None) -> ABPoint:
    dims = dims or FingerDims()
    a, b, codes = xyz_to_ab_array(np.asarray(q, dtype=float).reshape(3), dims)
    return ABPoint(float(a), float(b), _REGION_CODES[int(codes)])


# ---------------------------------------------------------------------------
# Distances
# ---------------------------------------------------------------------------

def _wrap(angle):
    return (angle + math.pi) % (2.0 * math.pi) - math.pi


def _sphere_dist(p, q, r):
    cross = np.linalg.norm(np.cross(p, q), axis=-1)
    dot = np.sum(p * q, axis=-1)
    return r * np.arctan2(cross, dot)


def _crossing_objective(phi, sin_t, phi_p, phi_c, z_c, r):
    return r * np.arccos(np.clip(sin_t * np.cos(phi - phi_p), -1.0, 1.0)) + np.hypot(
        r * (phi_c - phi), z_c
    )


def _best_crossing(sin_t, phi_p, phi_c, z_c, r, n_coarse=33, n_golden=48):
    """Equator azimuth minimising tip-to-cylinder path length (vectorized).

    ``phi_c`` must already be unwrapped relative to ``phi_p``.
    """
    lo = np.minimum(phi_p, phi_c)
    hi = np.maximum(phi_p, phi_c)
    span = hi - lo
    steps = np.linspace(0.0, 1.0, n_coarse)
    grid = lo[..., None] + span[..., None] * steps
    vals = _crossing_objective(
        grid, sin_t[..., None], phi_p[..., None], phi_c[..., None], z_c[..., None], r
    )
    k = np.argmin(vals, axis=-1)
    h = span / (n_coarse - 1)
    left = np.maximum(lo, lo + (k - 1) * h)
    right = np.minimum(hi, lo + (k + 1) * h)
    g = (math.sqrt(5.0) - 1.0) / 2.0
    x1 = right - g * (right - left)
    x2 = left + g * (right - left)
    f1 = _crossing_objective(x1, sin_t, phi_p, phi_c, z_c, r)
    f2 = _crossing_objective(x2, sin_t, phi_p, phi_c, z_c, r)
    for _ in range(n_golden):
        go_left = f1 < f2
        right = np.where(go_left, x2, right)
        left = np.where(go_left, left, x1)
        probe = np.where(go_left, right - g * (right - left), left + g * (right - left))
        fp = _crossing_objective(probe, sin_t, phi_p, phi_c, z_c, r)
        x1, x2, f1, f2 = (
            np.where(go_left, probe, x2),
            np.where(go_left, x1, probe),
            np.where(go_left, fp, f2),
            np.where(go_left, f1, fp),
        )
    phi = 0.5 * (left + right)
    return phi, _crossing_objective(phi, sin_t, phi_p, phi_c, z_c, r)


def _mixed_terms(p_tip, q_cyl, r):
    rho = np.hypot(p_tip[..., 0], p_tip[..., 1])
    sin_t = np.clip(rho / r, 0.0, 1.0)
    phi_p = np.arctan2(p_tip[..., 1], p_tip[..., 0])
    phi_c = np.arctan2(q_cyl[..., 1], q_cyl[..., 0])
    phi_c = phi_p + _wrap(phi_c - phi_p)
    return sin_t, phi_p, phi_c, q_cyl[..., 2]


def geodesic_xyz(p, q, dims: FingerDims | None = None) -> np.ndarray:
    """Shortest path length over the finger surface between Cartesian points.

    Broadcasts over leading dimensions. Tip-tip pairs follow great circles,
    cylinder-cylinder pairs are straight lines on the unrolled cylinder and
    mixed pairs minimise over the azimuth at which the path crosses the
    equator.
    """
    dims = dims or FingerDims()
    r = dims.radius_mm
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    p, q = np.broadcast_arrays(p, q)
    shape = p.shape[:-1]
    p = p.reshape(-1, 3)
    q = q.reshape(-1, 3)
    out = np.empty(p.shape[0])
    tp = p[:, 2] >= 0.0
    tq = q[:, 2] >= 0.0

    both = tp & tq
    if np.any(both):
        out[both] = _sphere_dist(p[both], q[both], r)

    neither = ~tp & ~tq
    if np.any(neither):
        dphi = _wrap(np.arctan2(q[neither, 1], q[neither, 0]) - np.arctan2(p[neither, 1], p[neither, 0]))
        out[neither] = np.hypot(r * dphi, q[neither, 2] - p[neither, 2])

    mixed = tp ^ tq
    if np.any(mixed):
        tip_pts = np.where(tp[mixed, None], p[mixed], q[mixed])
        cyl_pts = np.where(tp[mixed, None], q[mixed], p[mixed])
        _, best = _best_crossing(*_mixed_terms(tip_pts, cyl_pts, r), r)
        out[mixed] = best
    return out.reshape(shape)


def surface_distance(p1: ABPoint, p2: ABPoint, dims: FingerDims | None = None) -> float:
    dims = dims or FingerDims()
    _check_point(p1, dims)
    _check_point(p2, dims)
    xyz, _, _ = ab_to_xyz_array([p1.a, p2.a], [p1.b, p2.b], dims)
    return float(geodesic_xyz(xyz[0], xyz[1], dims))


def _slerp(p, q, n, r):
    """``n`` points along the great circle from p to q (inclusive)."""
    pu = p / np.linalg.norm(p)
    qu = q / np.linalg.norm(q)
    omega = math.atan2(np.linalg.norm(np.cross(pu, qu)), float(np.dot(pu, qu)))
    s = np.linspace(0.0, 1.0, n)
    if omega < 1e-12:
        pts = pu[None, :] * (1 - s[:, None]) + qu[None, :] * s[:, None]
        return r * pts / np.linalg.norm(pts, axis=1, keepdims=True)
    w1 = np.sin((1 - s) * omega) / math.sin(omega)
    w2 = np.sin(s * omega) / math.sin(omega)
    return r * (w1[:, None] * pu + w2[:, None] * qu)


def _helix(p, q, n, r):
    phi_p = math.atan2(p[1], p[0])
    phi_q = phi_p + float(_wrap(math.atan2(q[1], q[0]) - phi_p))
    s = np.linspace(0.0, 1.0, n)
    phi = phi_p + s * (phi_q - phi_p)
    z = p[2] + s * (q[2] - p[2])
    return np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)


def geodesic_path(p, q, n: int = 65, dims: FingerDims | None = None) -> np.ndarray:
    """``n`` points evenly spaced (by arc length) along the geodesic p -> q."""
    dims = dims or FingerDims()
    r = dims.radius_mm
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    p_tip = p[2] >= 0.0
    q_tip = q[2] >= 0.0
    if p_tip and q_tip:
        return _slerp(p, q, n, r)
    if not p_tip and not q_tip:
        return _helix(p, q, n, r)
    tip_pt, cyl_pt = (p, q) if p_tip else (q, p)
    terms = _mixed_terms(tip_pt[None], cyl_pt[None], r)
    phi, _ = _best_crossing(*terms, r)
    e = np.array([r * math.cos(phi[0]), r * math.sin(phi[0]), 0.0])
    len_a = float(_sphere_dist(tip_pt, e, r))
    len_b = float(np.hypot(r * (terms[2][0] - phi[0]), cyl_pt[2]))
    total = len_a + len_b
    s = np.linspace(0.0, total, n)
    dense_a = _slerp(tip_pt, e, 257, r)
    dense_b = _helix(e, cyl_pt, 257, r)
    pts = np.empty((n, 3))
    in_a = s <= len_a
    if len_a > 0:
        idx = s[in_a] / len_a * 256
    else:
        idx = np.zeros(int(in_a.sum()))
    pts[in_a] = _interp_rows(dense_a, idx)
    if len_b > 0:
        idx_b = (s[~in_a] - len_a) / len_b * 256
    else:
        idx_b = np.full(int((~in_a).sum()), 256.0)
    pts[~in_a] = _interp_rows(dense_b, idx_b)
    if not p_tip:
        pts = pts[::-1]
    return pts


def _interp_rows(dense, idx):
    lo = np.clip(np.floor(idx).astype(int), 0, dense.shape[0] - 2)
    w = (idx - lo)[:, None]
    return dense[lo] * (1 - w) + dense[lo + 1] * w


def localization_error_mm(pred: ABPoint, truth: ABPoint, dims: FingerDims | None = None) -> float:
    """Chordal distance between the Cartesian images of two AB points."""
    dims = dims or FingerDims()
    _check_point(pred, dims)
    _check_point(truth, dims)
    xyz, _, _ = ab_to_xyz_array([pred.a, truth.a], [pred.b, truth.b], dims)
    return float(np.linalg.norm(xyz[0] - xyz[1]))


def clamp_to_domain(a, b, dims: FingerDims | None = None):
    """Project AB coordinates onto the closest point of the convex domain.

    Network predictions may stray slightly outside the hexagon; they are
    pulled back before being mapped to Cartesian space.
    """
    dims = dims or FingerDims()
    a = np.asarray(a, dtype=float).copy()
    b = np.asarray(b, dtype=float).copy()
    inside = _region_codes(a, b, dims) >= 0
    if np.all(inside):
        return a, b
    verts = _hexagon(dims)
    pa = a[~inside]
    pb = b[~inside]
    pts = np.stack([pa, pb], axis=-1)
    best = None
    best_d = None
    for i in range(len(verts)):
        v0 = verts[i]
        v1 = verts[(i + 1) % len(verts)]
        e = v1 - v0
        t = np.clip(((pts - v0) @ e) / (e @ e), 0.0, 1.0)
        proj = v0 + t[:, None] * e
        dist = np.linalg.norm(pts - proj, axis=1)
        if best is None:
            best, best_d = proj, dist
        else:
            better = dist < best_d
            best[better] = proj[better]
            best_d = np.where(better, dist, best_d)
    # nudge onto the closed domain
    a[~inside] = best[:, 0]
    b[~inside] = best[:, 1]
    return a, b


def _hexagon(dims: FingerDims) -> np.ndarray:
    L = dims.L_mm
    T = dims.diag_extent
    return np.array(
        [
            [-L, -L],
            [-L + T, -L - T],
            [L + T, -L - T],
            [L + T, L - T],
            [L, L],
            [-L, L],
        ]
    )


def sample_uniform_ab(n: int, rng: np.random.Generator, dims: FingerDims | None = None) -> np.ndarray:
    """``n`` points drawn uniformly (by surface area) over the domain, shape (n, 2)."""
    dims = dims or FingerDims()
    L = dims.L_mm
    T = dims.diag_extent
    tip_area = 4 * L * L
    par_area = 2 * L * T
    total = tip_area + 2 * par_area
    region = rng.choice(3, size=n, p=[tip_area / total, par_area / total, par_area / total])
    u = rng.random((n, 2))
    out = np.empty((n, 2))
    edge = -L + 2 * L * u[:, 0]
    t = T * u[:, 1]
    tip = region == 0
    out[tip, 0] = -L + 2 * L * u[tip, 0]
    out[tip, 1] = -L + 2 * L * u[tip, 1]
    green = region == 1
    out[green, 0] = edge[green] + t[green]
    out[green, 1] = -L - t[green]
    blue = region == 2
    out[blue, 0] = L + t[blue]
    out[blue, 1] = edge[blue] - t[blue]
    return out


def _cell_points(dims: FingerDims, spacing_mm: float, n_sub: int):
    """AB points of the quadrature lattice; shape (n_cells, n_sub**2, 2).

    With ``n_sub == 1`` these are the cell centres. Larger values give an
    evenly spaced sub-lattice inside each cell, in the same cell order.
    """
    L = dims.L_mm
    T = dims.diag_extent
    r = dims.radius_mm
    frac = (np.arange(n_sub) + 0.5) / n_sub - 0.5
    fu, fv = np.meshgrid(frac, frac, indexing="ij")
    fu = fu.ravel()
    fv = fv.ravel()

    n_tip = max(1, round(2 * L / spacing_mm))
    h = 2 * L / n_tip
    c = -L + h * (np.arange(n_tip) + 0.5)
    ta, tb = np.meshgrid(c, c, indexing="ij")
    ta = ta.ravel()[:, None] + h * fu
    tb = tb.ravel()[:, None] + h * fv
    tip = np.stack([ta, tb], axis=-1)

    # parallelogram cells: edge coordinate spans a 90 deg arc, t spans the height
    n_arc = max(1, round(math.pi * r / 2 / spacing_mm))
    n_ax = max(1, round(dims.cyl_height_mm / spacing_mm))
    he = 2 * L / n_arc
    ht = T / n_ax
    ec = -L + he * (np.arange(n_arc) + 0.5)
    tc = ht * (np.arange(n_ax) + 0.5)
    ee, tt = np.meshgrid(ec, tc, indexing="ij")
    ee = ee.ravel()[:, None] + he * fu
    tt = tt.ravel()[:, None] + ht * fv
    green = np.stack([ee + tt, -L - tt], axis=-1)
    blue = np.stack([L + tt, ee - tt], axis=-1)
    weights = np.concatenate(
        [np.full(tip.shape[0], h * h), np.full(green.shape[0], he * ht), np.full(blue.shape[0], he * ht)]
    )
    return np.concatenate([tip, green, blue]), weights


def quadrature_grid(dims: FingerDims | None = None, spacing_mm: float = 1.0):
    """Cell-centred surface grid with ~``spacing_mm`` resolution.

    Returns ``(ab, xyz, weights)`` where weights are cell areas in mm^2 and
    sum to the sensorized surface area (AB area equals surface area).
    """
    dims = dims or FingerDims()
    pts, weights = _cell_points(dims, spacing_mm, 1)
    ab = pts[:, 0, :]
    xyz, _, _ = ab_to_xyz_array(ab[:, 0], ab[:, 1], dims)
    return ab, xyz, weights


def quadrature_subsamples(dims: FingerDims | None = None, spacing_mm: float = 1.0, n_sub: int = 5) -> np.ndarray:
    """Cartesian sub-sample points of each quadrature cell, (n_cells, n_sub**2, 3)."""
    dims = dims or FingerDims()
    pts, _ = _cell_points(dims, spacing_mm, n_sub)
    xyz, _, _ = ab_to_xyz_array(pts[..., 0], pts[..., 1], dims)
    return xyz
