"""Indenter tips, the deformation they impose, and the resulting normal force."""

from __future__ import annotations

import configparser
import enum
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .geometry import ABPoint, FingerDims, OutOfDomain, ab_to_xyz_array, geodesic_xyz, _region_codes

__all__ = [
    "TipKind",
    "TipShape",
    "DEFAULT_TIPS",
    "ForceModel",
    "DeformationField",
    "LoadCellOverrange",
    "deformation",
    "force",
    "measured_force",
    "load_tip_catalog",
]

SKIRT_MM = 1.0
HEMISPHERE_RADIUS_MM = 5.0


class LoadCellOverrange(RuntimeError):
    pass


class TipKind(str, enum.Enum):
    HEMISPHERE = "hemisphere"
    PLANAR = "planar"
    EDGE_H = "edge_h"
    EDGE_V = "edge_v"
    CORNER = "corner"


@dataclass(frozen=True)
class TipShape:
    kind: TipKind
    size_mm: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "kind", TipKind(self.kind))
        if self.kind is not TipKind.CORNER and not self.size_mm > 0:
            raise ValueError(f"{self.kind.value} tip needs a positive size")

    @property
    def name(self) -> str:
        return self.kind.value


DEFAULT_TIPS = {
    TipKind.HEMISPHERE: TipShape(TipKind.HEMISPHERE, 10.0),  # diameter
    TipKind.PLANAR: TipShape(TipKind.PLANAR, 15.0),  # disc radius
    TipKind.EDGE_H: TipShape(TipKind.EDGE_H, 12.0),  # edge length
    TipKind.EDGE_V: TipShape(TipKind.EDGE_V, 12.0),
    TipKind.CORNER: TipShape(TipKind.CORNER, 0.0),
}


def tip(kind) -> TipShape:
    return DEFAULT_TIPS[TipKind(kind)]


@dataclass(frozen=True)
class ForceModel:
    stiffness_n_per_mm: float = 2.8
    tip_factor: dict = field(
        default_factory=lambda: {
            TipKind.HEMISPHERE: 1.0,
            TipKind.PLANAR: 3.0,
            TipKind.EDGE_H: 1.8,
            TipKind.EDGE_V: 1.8,
            TipKind.CORNER: 0.6,
        }
    )
    load_cell_min_n: float = 0.2
    load_cell_max_n: float = 44.5

    def __post_init__(self):
        if not self.stiffness_n_per_mm > 0:
            raise ValueError("stiffness must be positive")
        if any(not v > 0 for v in self.tip_factor.values()):
            raise ValueError("tip factors must be positive")


def force(depth_mm: float, tip_shape: TipShape, model: ForceModel | None = None) -> float:
    """Ground-truth normal force in newtons; linear in positive depth."""
    model = model or ForceModel()
    return max(0.0, float(depth_mm)) * model.stiffness_n_per_mm * model.tip_factor[tip_shape.kind]


def measured_force(depth_mm: float, tip_shape: TipShape, model: ForceModel | None = None) -> float:
    """Force as the load cell would report it."""
    model = model or ForceModel()
    f = force(depth_mm, tip_shape, model)
    if f > model.load_cell_max_n:
        raise LoadCellOverrange(f"{f:.2f} N exceeds load cell rating {model.load_cell_max_n} N")
    return 0.0 if f < model.load_cell_min_n else f


def _tangent_frame(c: np.ndarray, on_tip: bool):
    """Unit (horizontal, vertical) tangent directions at surface point ``c``.

    Horizontal follows the circumference, vertical follows the finger axis /
    meridian. At the pole the frame is aligned with the x/y axes.
    """
    phi = math.atan2(c[1], c[0])
    horiz = np.array([-math.sin(phi), math.cos(phi), 0.0])
    normal = c / np.linalg.norm(c) if on_tip else np.array([c[0], c[1], 0.0]) / math.hypot(c[0], c[1])
    vert = np.cross(normal, horiz)
    return horiz, vert


@dataclass(frozen=True)
class DeformationField:
    """Indentation depth u(q) >= 0 produced by one tip pressed at ``center``."""

    center: ABPoint
    depth_mm: float
    tip: TipShape
    dims: FingerDims = field(default_factory=FingerDims)

    @property
    def center_xyz(self) -> np.ndarray:
        xyz, _, _ = ab_to_xyz_array(self.center.a, self.center.b, self.dims)
        return xyz

    @property
    def in_contact(self) -> bool:
        return self.depth_mm > 0

    def support_radius(self) -> float:
        """Geodesic radius beyond which u is identically zero."""
        d = max(self.depth_mm, 0.0)
        kind = self.tip.kind
        if kind is TipKind.HEMISPHERE:
            return math.sqrt(2.0 * self.tip.size_mm / 2.0 * d)
        if kind is TipKind.PLANAR:
            return self.tip.size_mm + SKIRT_MM
        if kind in (TipKind.EDGE_H, TipKind.EDGE_V):
            # the far end of the skirt lies on the edge axis
            return self.tip.size_mm / 2.0 + SKIRT_MM
        return SKIRT_MM

    def evaluate_xyz(self, xyz, s=None) -> np.ndarray:
        """u at Cartesian surface points; ``s`` optionally supplies geodesic
        distances to the centre (saves recomputation across depths)."""
        xyz = np.asarray(xyz, dtype=float)
        d = float(self.depth_mm)
        if d <= 0:
            return np.zeros(xyz.shape[:-1])
        c = self.center_xyz
        if s is None:
            s = geodesic_xyz(xyz, c, self.dims)
        return self._profile(xyz, s, d)

    def _profile(self, xyz, s, d):
        kind = self.tip.kind
        if kind is TipKind.HEMISPHERE:
            radius = self.tip.size_mm / 2.0
            return np.maximum(0.0, d - s * s / (2.0 * radius))
        if kind is TipKind.PLANAR:
            delta = np.maximum(s - self.tip.size_mm, 0.0)
        elif kind is TipKind.CORNER:
            delta = s
        else:
            delta = self._edge_distance(xyz, s)
        return d * np.maximum(0.0, 1.0 - (delta / SKIRT_MM) ** 2)

    def _edge_distance(self, xyz, s):
        c = self.center_xyz
        horiz, vert = _tangent_frame(c, c[2] >= 0.0)
        v = xyz - c
        xi = v @ horiz
        eta = v @ vert
        planar = np.hypot(xi, eta)
        scale = np.where(planar > 0, s / np.where(planar > 0, planar, 1.0), 0.0)
        xi = xi * scale
        eta = eta * scale
        along, across = (xi, eta) if self.tip.kind is TipKind.EDGE_H else (eta, xi)
        half = self.tip.size_mm / 2.0
        return np.hypot(np.maximum(np.abs(along) - half, 0.0), across)

    def evaluate(self, q: ABPoint) -> float:
        xyz, _, _ = ab_to_xyz_array(q.a, q.b, self.dims)
        return float(self.evaluate_xyz(xyz[None])[0])

    def with_depth(self, depth_mm: float) -> "DeformationField":
        return DeformationField(self.center, depth_mm, self.tip, self.dims)


def deformation(center: ABPoint, depth_mm: float, tip_shape: TipShape, dims: FingerDims | None = None) -> DeformationField:
    dims = dims or FingerDims()
    if int(_region_codes(center.a, center.b, dims)) < 0:
        raise OutOfDomain(f"indentation centre ({center.a}, {center.b}) is outside the domain")
    return DeformationField(center, float(depth_mm), tip_shape, dims)


def load_tip_catalog(path: str | Path, model: ForceModel | None = None):
    """Read tip overrides from an INI-style file.

    Each section is a tip kind with optional ``size_mm`` and ``factor`` keys.
    Returns ``(tips, force_model)``.
    """
    model = model or ForceModel()
    parser = configparser.ConfigParser()
    parser.read(path)
    tips = dict(DEFAULT_TIPS)
    factors = dict(model.tip_factor)
    for section in parser.sections():
        kind = TipKind(section)
        sec = parser[section]
        if "size_mm" in sec:
            tips[kind] = TipShape(kind, sec.getfloat("size_mm"))
        if "factor" in sec:
            factors[kind] = sec.getfloat("factor")
    return tips, ForceModel(model.stiffness_n_per_mm, factors, model.load_cell_min_n, model.load_cell_max_n)
