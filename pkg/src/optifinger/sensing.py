"""Phenomenological light-transport model of the sensorized finger.

Every LED/photodiode pair carries one signal. Indenting the waveguide
changes that signal through two linear kernels over the surface:

* a *boost* term, a Gaussian of geodesic distance to the nearer of the two
  terminals (deformation next to a terminal couples extra light in/out);
* a *block* term, a Gaussian of geodesic distance to the geodesic joining the
  two terminals (deformation on the light path blocks it). The block term is
  tapered to zero at the terminals themselves.

The integral over the surface is a weighted sum on a fixed ~1 mm quadrature
grid, so the transport change is a matrix-vector product ``K @ u``.
Calibration sets a per-pair gain so the undisturbed reading sits at ADC
mid-scale; the gain is inversely proportional to the baseline transmission.
"""

from __future__ import annotations

import csv
import hashlib
import io
import math
from dataclasses import asdict, dataclass, field, fields
from importlib import resources
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .geometry import (
    ABPoint,
    FingerDims,
    ab_to_xyz_array,
    classify,
    geodesic_path,
    geodesic_xyz,
    quadrature_grid,
    quadrature_subsamples,
    xyz_to_ab,
)

__all__ = [
    "Terminal",
    "SensorLayout",
    "OpticalParams",
    "CalibrationTable",
    "SignalFrame",
    "UnreachablePair",
    "EmptyDataset",
    "N_LEDS",
    "N_DIODES",
    "N_PAIRS",
    "N_FEATURES",
    "default_layout",
    "generate_layout",
    "baseline_transmission",
    "calibrate",
    "respond",
    "SensingModel",
    "useful_signal_count",
]

N_LEDS = 32
N_DIODES = 30
N_PAIRS = N_LEDS * N_DIODES
N_FEATURES = N_PAIRS + N_DIODES


class UnreachablePair(RuntimeError):
    pass


class EmptyDataset(ValueError):
    pass


@dataclass(frozen=True)
class Terminal:
    kind: str  # "led" or "diode"
    id: int
    ab: ABPoint
    axis: str = "normal"  # LEDs only: "normal" or "tangential"


@dataclass(frozen=True)
class SensorLayout:
    leds: tuple
    diodes: tuple
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "leds", tuple(self.leds))
        object.__setattr__(self, "diodes", tuple(self.diodes))
        for group, kind in ((self.leds, "led"), (self.diodes, "diode")):
            ids = [t.id for t in group]
            if len(set(ids)) != len(ids):
                raise ValueError(f"duplicate {kind} ids in layout")
            if any(t.kind != kind for t in group):
                raise ValueError(f"terminal of wrong kind in {kind} list")

    @property
    def n_leds(self) -> int:
        return len(self.leds)

    @property
    def n_diodes(self) -> int:
        return len(self.diodes)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["kind", "id", "a", "b", "axis"])
        for t in self.leds + self.diodes:
            w.writerow([t.kind, t.id, repr(t.ab.a), repr(t.ab.b), t.axis])
        return buf.getvalue()

    def digest(self) -> str:
        return hashlib.sha256(self.to_csv().encode()).hexdigest()

    def save(self, path) -> None:
        Path(path).write_text(self.to_csv())

    @classmethod
    def from_csv(cls, text: str, dims: FingerDims | None = None, seed: int = 0) -> "SensorLayout":
        dims = dims or FingerDims()
        leds, diodes = [], []
        for row in csv.DictReader(io.StringIO(text)):
            a, b = float(row["a"]), float(row["b"])
            term = Terminal(row["kind"], int(row["id"]), ABPoint(a, b, classify(a, b, dims)), row.get("axis") or "normal")
            (leds if term.kind == "led" else diodes).append(term)
        return cls(leds, diodes, seed)

    @classmethod
    def load(cls, path, dims: FingerDims | None = None) -> "SensorLayout":
        return cls.from_csv(Path(path).read_text(), dims)

    def xyz(self, dims: FingerDims | None = None):
        """(led_xyz, diode_xyz) arrays."""
        dims = dims or FingerDims()
        led = ab_to_xyz_array([t.ab.a for t in self.leds], [t.ab.b for t in self.leds], dims)[0]
        dio = ab_to_xyz_array([t.ab.a for t in self.diodes], [t.ab.b for t in self.diodes], dims)[0]
        return led, dio


def generate_layout(dims: FingerDims | None = None, seed: int = 0, jitter_mm: float = 0.0) -> SensorLayout:
    """Build the default 32 LED / 30 photodiode arrangement.

    Cylinder: 8 azimuthal columns x 5 rows in a checkerboard of LEDs and
    diodes; two side-firing LEDs on the outermost faces; tip: an outer ring
    of 12 and an inner ring of 8 terminals, alternating kinds. Optional
    seeded jitter moves each terminal by up to ``jitter_mm`` in (A, B).
    """
    dims = dims or FingerDims()
    r = dims.radius_mm
    H = dims.cyl_height_mm
    sites = []  # (kind, xyz, axis)
    for k in range(8):
        phi = math.radians(-135.0 + (k + 0.5) * 22.5)
        for j in range(5):
            z = -(j + 0.5) * H / 5
            kind = "led" if (k + j) % 2 == 0 else "diode"
            sites.append((kind, (r * math.cos(phi), r * math.sin(phi), z), "normal"))
    for phi_deg in (-134.0, 44.0):
        phi = math.radians(phi_deg)
        sites.append(("led", (r * math.cos(phi), r * math.sin(phi), -H / 2), "tangential"))
    for polar_deg, count, offset in ((55.0, 12, 0.0), (25.0, 8, 22.5)):
        th = math.radians(polar_deg)
        for i in range(count):
            phi = math.radians(offset + i * 360.0 / count)
            kind = "led" if i % 2 == 0 else "diode"
            xyz = (r * math.sin(th) * math.cos(phi), r * math.sin(th) * math.sin(phi), r * math.cos(th))
            sites.append((kind, xyz, "normal"))

    rng = np.random.default_rng(seed)
    leds, diodes = [], []
    for kind, xyz, axis in sites:
        ab = xyz_to_ab(np.array(xyz), dims)
        if jitter_mm > 0:
            for _ in range(100):
                da, db = rng.uniform(-jitter_mm, jitter_mm, size=2)
                try:
                    ab = ABPoint(ab.a + da, ab.b + db, classify(ab.a + da, ab.b + db, dims))
                    break
                except ValueError:
                    continue
        group = leds if kind == "led" else diodes
        group.append(Terminal(kind, len(group), ab, axis if kind == "led" else "normal"))
    return SensorLayout(leds, diodes, seed)


def default_layout(dims: FingerDims | None = None) -> SensorLayout:
    """The shipped layout file (generated by ``generate_layout()``)."""
    text = resources.files("optifinger.data").joinpath("default_layout.csv").read_text()
    return SensorLayout.from_csv(text, dims)


@dataclass(frozen=True)
class OpticalParams:
    attenuation_len_mm: float = 25.0
    path_kernel_width_mm: float = 8.0
    near_kernel_width_mm: float = 5.0
    block_weight: float = 1.0
    boost_weight: float = 0.4
    noise_sigma_lsb: float = 2.0
    tangential_reach_mm: float = 60.0
    # transmission change per mm^3 of kernel-weighted indentation
    coupling_per_mm3: float = 3e-4
    dark_offset_lsb: float = 8.0
    full_scale: int = 4095

    def __post_init__(self):
        for name in (
            "attenuation_len_mm",
            "path_kernel_width_mm",
            "near_kernel_width_mm",
            "tangential_reach_mm",
            "coupling_per_mm3",
        ):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.noise_sigma_lsb < 0:
            raise ValueError("noise_sigma_lsb must be >= 0")

    def to_text(self) -> str:
        return "".join(f"{k} = {v!r}\n" for k, v in asdict(self).items())

    @classmethod
    def from_mapping(cls, mapping) -> "OpticalParams":
        kwargs = {}
        for f in fields(cls):
            if f.name in mapping:
                kwargs[f.name] = int(mapping[f.name]) if f.name == "full_scale" else float(mapping[f.name])
        return cls(**kwargs)


@dataclass
class CalibrationTable:
    gains: np.ndarray  # (n_leds, n_diodes)
    dark_offsets: np.ndarray  # (n_diodes,)
    full_scale: int = 4095

    @property
    def mid_scale(self) -> int:
        return int(round(self.full_scale / 2))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["led", "diode", "gain"])
        for i in range(self.gains.shape[0]):
            for j in range(self.gains.shape[1]):
                w.writerow([i, j, repr(float(self.gains[i, j]))])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str, dark_offsets, full_scale: int = 4095) -> "CalibrationTable":
        rows = list(csv.DictReader(io.StringIO(text)))
        n_l = 1 + max(int(r["led"]) for r in rows)
        n_d = 1 + max(int(r["diode"]) for r in rows)
        gains = np.zeros((n_l, n_d))
        for r in rows:
            gains[int(r["led"]), int(r["diode"])] = float(r["gain"])
        return cls(gains, np.asarray(dark_offsets, dtype=float), full_scale)


@dataclass
class SignalFrame:
    pair_readings: np.ndarray  # (960,) int, LED-major
    ambient: np.ndarray  # (30,) int
    frame_id: int = 0
    timestamp_us: int = 0

    def flat(self) -> np.ndarray:
        return np.concatenate([self.pair_readings, self.ambient]).astype(np.int64)

    def features(self) -> np.ndarray:
        """Ambient-subtracted pair signals followed by the raw ambient readings."""
        n_d = self.ambient.shape[0]
        sub = self.pair_readings.reshape(-1, n_d) - self.ambient[None, :]
        return np.concatenate([sub.ravel(), self.ambient]).astype(float)

    @classmethod
    def from_features(cls, features, frame_id: int = 0, timestamp_us: int = 0, n_diodes: int = N_DIODES) -> "SignalFrame":
        feats = np.rint(np.asarray(features, dtype=float)).astype(np.int64)
        ambient = feats[-n_diodes:]
        pairs = (feats[:-n_diodes].reshape(-1, n_diodes) + ambient[None, :]).ravel()
        return cls(pairs, ambient, frame_id, timestamp_us)

    def __eq__(self, other):
        if not isinstance(other, SignalFrame):
            return NotImplemented
        return (
            self.frame_id == other.frame_id
            and self.timestamp_us == other.timestamp_us
            and np.array_equal(self.pair_readings, other.pair_readings)
            and np.array_equal(self.ambient, other.ambient)
        )


def _effective_distance(g, tangential, optics: OpticalParams):
    return np.where(tangential, np.maximum(g - optics.tangential_reach_mm, 0.0), g)


def _pair_geodesics(layout: SensorLayout, dims: FingerDims):
    led, dio = layout.xyz(dims)
    return geodesic_xyz(led[:, None, :], dio[None, :, :], dims)


def baseline_transmission(led: Terminal, diode: Terminal, layout: SensorLayout, optics: OpticalParams, dims: FingerDims | None = None) -> float:
    """exp(-g / lambda) for the geodesic terminal separation g."""
    dims = dims or FingerDims()
    if led not in layout.leds or diode not in layout.diodes:
        raise ValueError("terminals are not part of this layout")
    xyz, _, _ = ab_to_xyz_array([led.ab.a, diode.ab.a], [led.ab.b, diode.ab.b], dims)
    g = float(geodesic_xyz(xyz[0], xyz[1], dims))
    g_eff = float(_effective_distance(g, led.axis == "tangential", optics))
    return math.exp(-g_eff / optics.attenuation_len_mm)


def _transmission_table(layout: SensorLayout, optics: OpticalParams, dims: FingerDims) -> np.ndarray:
    g = _pair_geodesics(layout, dims)
    tangential = np.array([t.axis == "tangential" for t in layout.leds])[:, None]
    return np.exp(-_effective_distance(g, tangential, optics) / optics.attenuation_len_mm)


def calibrate(layout: SensorLayout, optics: OpticalParams | None = None, dims: FingerDims | None = None) -> CalibrationTable:
    """Per-pair gains placing every undisturbed reading at ADC mid-scale."""
    optics = optics or OpticalParams()
    dims = dims or FingerDims()
    trans = _transmission_table(layout, optics, dims)
    mid = int(round(optics.full_scale / 2))
    with np.errstate(divide="ignore", over="ignore"):
        gains = mid / trans
    if not np.all(np.isfinite(gains)) or np.any(trans <= 0):
        i, j = np.argwhere(~np.isfinite(gains) | (trans <= 0))[0]
        raise UnreachablePair(f"baseline transmission of pair L{i}-P{j} underflows")
    dark = np.full(layout.n_diodes, float(optics.dark_offset_lsb))
    return CalibrationTable(gains, dark, optics.full_scale)


class SensingModel:
    """Cached kernel matrix for one (layout, optics, dims) combination.

    Immutable after construction; ``respond`` is a pure function of its
    arguments and the seed.
    """

    def __init__(self, layout: SensorLayout, optics: OpticalParams | None = None, dims: FingerDims | None = None, grid_spacing_mm: float = 1.0, path_samples: int = 65, n_sub: int = 5):
        self.layout = layout
        self.optics = optics or OpticalParams()
        self.dims = dims or FingerDims()
        self.grid_ab, self.grid_xyz, self.grid_w = quadrature_grid(self.dims, grid_spacing_mm)
        # u is averaged over sub-samples of each cell; the kernels are smooth
        # on the cell scale but small indenters are not
        self.sub_xyz = quadrature_subsamples(self.dims, grid_spacing_mm, n_sub)
        self._cell_reach = 1.5 * grid_spacing_mm
        self.path_samples = path_samples
        self.transmission = _transmission_table(layout, self.optics, self.dims)
        self.kernel = self._build_kernel()
        self.kernel.setflags(write=False)

    # -- construction -----------------------------------------------------
    def terminal_distances(self):
        led, dio = self.layout.xyz(self.dims)
        q = self.grid_xyz
        d_led = geodesic_xyz(q[None, :, :], led[:, None, :], self.dims)
        d_dio = geodesic_xyz(q[None, :, :], dio[:, None, :], self.dims)
        return d_led, d_dio

    def path_distances(self):
        """Geodesic distance from each grid point to each pair's light path,
        and arc length from the foot point to the nearer terminal.

        Shapes ``(n_pairs, n_grid)``.
        """
        led, dio = self.layout.xyz(self.dims)
        q = self.grid_xyz
        n_l, n_d = len(led), len(dio)
        n = self.path_samples
        h = np.empty((n_l * n_d, q.shape[0]))
        ell = np.empty_like(h)
        g_pairs = _pair_geodesics(self.layout, self.dims)
        q_sq = np.sum(q * q, axis=1)
        for i in range(n_l):
            feet = np.empty((n_d, q.shape[0], 3))
            for j in range(n_d):
                path = geodesic_path(led[i], dio[j], n, self.dims)
                chord2 = q_sq[:, None] - 2.0 * q @ path.T + np.sum(path * path, axis=1)[None, :]
                k = np.argmin(chord2, axis=1)
                feet[j] = path[k]
                frac = k / (n - 1)
                ell[i * n_d + j] = np.minimum(frac, 1.0 - frac) * g_pairs[i, j]
            h[i * n_d : (i + 1) * n_d] = geodesic_xyz(q[None, :, :], feet, self.dims)
        return h, ell

    def _build_kernel(self) -> np.ndarray:
        o = self.optics
        d_led, d_dio = self.terminal_distances()
        n_l, n_d = d_led.shape[0], d_dio.shape[0]
        near = np.minimum(d_led[:, None, :], d_dio[None, :, :]).reshape(n_l * n_d, -1)
        g_near = np.exp(-0.5 * (near / o.near_kernel_width_mm) ** 2)
        del near
        h, ell = self.path_distances()
        taper = 1.0 - np.exp(-0.5 * (ell / o.near_kernel_width_mm) ** 2)
        g_path = np.exp(-0.5 * (h / o.path_kernel_width_mm) ** 2) * taper
        del h, ell, taper
        kernel = o.boost_weight * g_near
        kernel -= o.block_weight * g_path
        kernel *= o.coupling_per_mm3 * self.grid_w[None, :]
        return kernel

    # -- evaluation -------------------------------------------------------
    def delta_transmission(self, u: np.ndarray) -> np.ndarray:
        """Transport change for displacement field(s) sampled on the grid.

        ``u`` has shape (n_grid,) or (n_grid, k); returns (n_pairs,) or
        (n_pairs, k).
        """
        u = np.asarray(u, dtype=float)
        support = np.flatnonzero(u if u.ndim == 1 else np.any(u != 0, axis=1))
        if support.size == 0:
            return np.zeros((self.kernel.shape[0],) + u.shape[1:])
        return self.kernel[:, support] @ u[support]

    def _near_cells(self, field_, radius):
        c = field_.center_xyz
        chord = np.linalg.norm(self.grid_xyz - c, axis=1)
        return np.flatnonzero(chord <= radius + self._cell_reach)

    def displacement_sweep(self, field_, depths) -> np.ndarray:
        """Cell-averaged indentation for one contact at several depths,
        shape (n_grid, len(depths))."""
        depths = np.asarray(depths, dtype=float)
        out = np.zeros((self.grid_xyz.shape[0], depths.size))
        active = depths > 0
        if not np.any(active):
            return out
        deepest = field_.with_depth(float(depths.max()))
        cells = self._near_cells(field_, deepest.support_radius())
        pts = self.sub_xyz[cells].reshape(-1, 3)
        s = geodesic_xyz(pts, field_.center_xyz, self.dims)
        for k in np.flatnonzero(active):
            u = field_.with_depth(float(depths[k])).evaluate_xyz(pts, s)
            out[cells, k] = u.reshape(cells.size, -1).mean(axis=1)
        return out

    def displacement(self, deformations) -> np.ndarray:
        """Superposed cell-averaged indentation on the grid."""
        if not isinstance(deformations, (list, tuple)):
            deformations = [deformations]
        u = np.zeros(self.grid_xyz.shape[0])
        for field_ in deformations:
            if field_.depth_mm > 0:
                u += self.displacement_sweep(field_, [field_.depth_mm])[:, 0]
        return u

    def noiseless_levels(self, u: np.ndarray, calib: CalibrationTable) -> np.ndarray:
        """Unquantized pair readings (LSB) before noise."""
        ds = self.delta_transmission(u)
        gains = calib.gains.ravel()
        base = gains * self.transmission.ravel()
        if ds.ndim == 2:
            return base[:, None] + gains[:, None] * ds
        return base + gains * ds

    def frames_from_levels(self, levels: np.ndarray, calib: CalibrationTable, rng_seed, frame_id: int = 0, timestamp_us: int = 0) -> SignalFrame:
        rng = np.random.default_rng(rng_seed)
        sigma = self.optics.noise_sigma_lsb
        pairs = levels + (rng.normal(0.0, sigma, levels.shape) if sigma > 0 else 0.0)
        amb = calib.dark_offsets + (rng.normal(0.0, sigma, calib.dark_offsets.shape) if sigma > 0 else 0.0)
        fs = calib.full_scale
        pairs = np.clip(np.rint(pairs), 0, fs).astype(np.int64)
        amb = np.clip(np.rint(amb), 0, fs).astype(np.int64)
        return SignalFrame(pairs, amb, frame_id, timestamp_us)

    def respond(self, deformations, calib: CalibrationTable, rng_seed=None, frame_id: int = 0, timestamp_us: int = 0) -> SignalFrame:
        u = self.displacement(deformations)
        return self.frames_from_levels(self.noiseless_levels(u, calib), calib, rng_seed, frame_id, timestamp_us)


_MODEL_CACHE: dict = {}


def model_for(layout: SensorLayout, optics: OpticalParams, dims: FingerDims) -> SensingModel:
    key = (layout.digest(), optics, dims)
    model = _MODEL_CACHE.get(key)
    if model is None:
        if len(_MODEL_CACHE) >= 4:
            _MODEL_CACHE.pop(next(iter(_MODEL_CACHE)))
        model = _MODEL_CACHE[key] = SensingModel(layout, optics, dims)
    return model


def respond(deformation, layout: SensorLayout, calib: CalibrationTable, optics: OpticalParams | None = None, dims: FingerDims | None = None, rng_seed=None, frame_id: int = 0, timestamp_us: int = 0) -> SignalFrame:
    """Simulated reading for a deformation field (or a list of superposed fields)."""
    optics = optics or OpticalParams()
    dims = dims or FingerDims()
    return model_for(layout, optics, dims).respond(deformation, calib, rng_seed, frame_id, timestamp_us)


def useful_signal_count(dataset: Iterable, baseline_frames: Sequence[SignalFrame], n_pairs: int = N_PAIRS) -> int:
    """Number of pair signals whose largest change over ``dataset`` exceeds
    three times their standard deviation in the undisturbed state.

    ``dataset`` items may be samples with a ``features`` attribute or raw
    feature vectors.
    """
    if len(baseline_frames) < 100:
        raise ValueError("need at least 100 undisturbed frames")
    base = np.array([f.features()[:n_pairs] for f in baseline_frames])
    mean = base.mean(axis=0)
    std = base.std(axis=0)
    rows = [np.asarray(getattr(s, "features", s), dtype=float)[:n_pairs] for s in dataset]
    if not rows:
        raise EmptyDataset("dataset is empty")
    change = np.max(np.abs(np.array(rows) - mean), axis=0)
    return int(np.count_nonzero(change > 3.0 * std))
