"""Simulated data collection: single-touch depth sweeps and multitouch presses."""

from __future__ import annotations

import hashlib
import io
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from . import __version__
from .geometry import (
    ABPoint,
    FingerDims,
    ab_to_xyz_array,
    classify,
    geodesic_xyz,
    sample_uniform_ab,
    xyz_to_ab,
)
from .mechanics import DEFAULT_TIPS, DeformationField, ForceModel, TipKind, TipShape, force
from .sensing import (
    N_DIODES,
    N_FEATURES,
    CalibrationTable,
    OpticalParams,
    SensorLayout,
    SignalFrame,
    model_for,
)

__all__ = [
    "IndentationSample",
    "MultitouchSample",
    "CampaignConfig",
    "SingleTouchDataset",
    "MultitouchDataset",
    "MultitouchGrid",
    "PackingExhausted",
    "sample_locations",
    "tip_locations",
    "depth_schedule",
    "run_single_touch",
    "run_multitouch",
    "split_by_location",
    "write_manifest",
]

FRAME_PERIOD_US = 1_000_000 / 60.0


class PackingExhausted(RuntimeError):
    pass


@dataclass(frozen=True)
class IndentationSample:
    a: float
    b: float
    depth_mm: float
    force_n: float
    tip: str
    features: np.ndarray


@dataclass(frozen=True)
class MultitouchSample:
    cells: np.ndarray  # (20,) bool
    features: np.ndarray


@dataclass(frozen=True)
class CampaignConfig:
    n_locations: int = 100
    min_separation_mm: float = 4.0
    depth_start: float = -1.0
    depth_end: float = 4.0
    planar_depth_end: float = 3.0
    depth_step: float = 0.1
    tips: tuple = ("hemisphere",)
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "tips", tuple(TipKind(t).value for t in self.tips))
        if not self.depth_step > 0:
            raise ValueError("depth_step must be positive")
        if self.min_separation_mm < 0:
            raise ValueError("min_separation_mm must be >= 0")
        if self.n_locations < 1:
            raise ValueError("n_locations must be >= 1")


def depth_schedule(start: float, end: float, step: float) -> np.ndarray:
    """Inclusive depth grid, rounded to clean decimals."""
    n = int(math.floor((end - start) / step + 1e-9)) + 1
    return np.round(start + step * np.arange(n), 10)


# fixed per-kind code so a tip's noise does not depend on which other tips run
_TIP_CODES = {kind: i for i, kind in enumerate(TipKind)}


def _tip_end(cfg: CampaignConfig, kind: TipKind) -> float:
    return cfg.planar_depth_end if kind is TipKind.PLANAR else cfg.depth_end


# ---------------------------------------------------------------------------
# Datasets
# ---------------------------------------------------------------------------

def _fmt(x: float) -> str:
    return repr(float(x))


@dataclass
class SingleTouchDataset:
    """Columnar store of indentation samples."""

    ab: np.ndarray  # (n, 2)
    depth: np.ndarray  # (n,)
    force: np.ndarray  # (n,)
    tip: np.ndarray  # (n,) str
    features: np.ndarray  # (n, 990)
    location: np.ndarray = None  # (n,) int, location index within the campaign

    def __post_init__(self):
        if self.location is None:
            self.location = _location_ids(self.ab)
        if self.features.ndim != 2 or self.features.shape[1] != N_FEATURES:
            raise ValueError(f"features must have {N_FEATURES} columns")

    def __len__(self) -> int:
        return self.depth.shape[0]

    def __getitem__(self, i: int) -> IndentationSample:
        return IndentationSample(
            float(self.ab[i, 0]), float(self.ab[i, 1]), float(self.depth[i]), float(self.force[i]), str(self.tip[i]), self.features[i]
        )

    def __iter__(self) -> Iterator[IndentationSample]:
        for i in range(len(self)):
            yield self[i]

    def subset(self, idx) -> "SingleTouchDataset":
        idx = np.asarray(idx)
        return SingleTouchDataset(self.ab[idx], self.depth[idx], self.force[idx], self.tip[idx], self.features[idx], self.location[idx])

    def by_tip(self) -> dict:
        return {t: self.subset(np.flatnonzero(self.tip == t)) for t in dict.fromkeys(self.tip.tolist())}

    @staticmethod
    def concat(parts: Sequence["SingleTouchDataset"]) -> "SingleTouchDataset":
        return SingleTouchDataset(
            np.concatenate([p.ab for p in parts]),
            np.concatenate([p.depth for p in parts]),
            np.concatenate([p.force for p in parts]),
            np.concatenate([p.tip for p in parts]),
            np.concatenate([p.features for p in parts]),
            np.concatenate([p.location for p in parts]),
        )

    def to_csv(self) -> str:
        header = ["a", "b", "depth_mm", "force_n", "tip"] + [f"r{k}" for k in range(1, N_FEATURES + 1)]
        lines = [",".join(header)]
        feats = self.features
        integral = np.all(feats == np.rint(feats))
        for i in range(len(self)):
            row = feats[i]
            cells = (str(int(v)) for v in row) if integral else (_fmt(v) for v in row)
            lines.append(
                ",".join(
                    [_fmt(self.ab[i, 0]), _fmt(self.ab[i, 1]), _fmt(self.depth[i]), _fmt(self.force[i]), str(self.tip[i])]
                )
                + ","
                + ",".join(cells)
            )
        return "\n".join(lines) + "\n"

    def save(self, path) -> str:
        text = self.to_csv()
        Path(path).write_text(text)
        return hashlib.sha256(text.encode()).hexdigest()

    @classmethod
    def load(cls, path) -> "SingleTouchDataset":
        import pandas as pd

        df = pd.read_csv(path, float_precision="round_trip")
        feats = df[[f"r{k}" for k in range(1, N_FEATURES + 1)]].to_numpy(dtype=float)
        return cls(
            df[["a", "b"]].to_numpy(dtype=float),
            df["depth_mm"].to_numpy(dtype=float),
            df["force_n"].to_numpy(dtype=float),
            df["tip"].astype(str).to_numpy(),
            feats,
        )


def _location_ids(ab: np.ndarray) -> np.ndarray:
    _, first, inverse = np.unique(ab, axis=0, return_index=True, return_inverse=True)
    # renumber by order of first appearance
    order = np.argsort(np.argsort(first))
    return order[np.asarray(inverse).ravel()]


@dataclass
class MultitouchDataset:
    cells: np.ndarray  # (n, 20) bool
    features: np.ndarray  # (n, 990)

    def __len__(self) -> int:
        return self.cells.shape[0]

    def __getitem__(self, i: int) -> MultitouchSample:
        return MultitouchSample(self.cells[i], self.features[i])

    def __iter__(self):
        for i in range(len(self)):
            yield self[i]

    def subset(self, idx) -> "MultitouchDataset":
        return MultitouchDataset(self.cells[idx], self.features[idx])

    def to_csv(self) -> str:
        n_cells = self.cells.shape[1]
        header = [f"c{k}" for k in range(1, n_cells + 1)] + [f"r{k}" for k in range(1, N_FEATURES + 1)]
        lines = [",".join(header)]
        for i in range(len(self)):
            lines.append(
                ",".join(str(int(v)) for v in self.cells[i]) + "," + ",".join(str(int(v)) for v in self.features[i])
            )
        return "\n".join(lines) + "\n"

    def save(self, path) -> str:
        text = self.to_csv()
        Path(path).write_text(text)
        return hashlib.sha256(text.encode()).hexdigest()

    @classmethod
    def load(cls, path) -> "MultitouchDataset":
        import pandas as pd

        df = pd.read_csv(path)
        cell_cols = [c for c in df.columns if c.startswith("c")]
        return cls(
            df[cell_cols].to_numpy(dtype=bool),
            df[[f"r{k}" for k in range(1, N_FEATURES + 1)]].to_numpy(dtype=float),
        )


# ---------------------------------------------------------------------------
# Location sampling
# ---------------------------------------------------------------------------

def sample_locations(cfg: CampaignConfig, dims: FingerDims | None = None, rng: np.random.Generator | None = None, max_rejections: int = 100_000) -> list[ABPoint]:
    """Uniform random locations with a minimum geodesic separation."""
    dims = dims or FingerDims()
    rng = rng if rng is not None else np.random.default_rng(cfg.seed)
    sep = cfg.min_separation_mm
    if cfg.n_locations > 1 and cfg.n_locations * math.pi * (sep / 2) ** 2 >= dims.sensorized_area:
        raise PackingExhausted("requested locations cannot be packed at this separation")
    accepted_ab: list[np.ndarray] = []
    accepted_xyz = np.empty((0, 3))
    rejections = 0
    while len(accepted_ab) < cfg.n_locations:
        cand = sample_uniform_ab(1, rng, dims)[0]
        xyz, _, _ = ab_to_xyz_array(cand[0], cand[1], dims)
        if accepted_xyz.shape[0] and sep > 0:
            # chord <= geodesic, so only near candidates need the exact check
            near = np.linalg.norm(accepted_xyz - xyz, axis=1) < sep
            if np.any(near) and np.min(geodesic_xyz(accepted_xyz[near], xyz, dims)) < sep:
                rejections += 1
                if rejections >= max_rejections:
                    raise PackingExhausted(f"{max_rejections} consecutive rejections")
                continue
        rejections = 0
        accepted_ab.append(cand)
        accepted_xyz = np.vstack([accepted_xyz, xyz])
    return [ABPoint(float(a), float(b), classify(a, b, dims)) for a, b in accepted_ab]


def tip_locations(cfg: CampaignConfig, tip_name: str, dims: FingerDims | None = None) -> list[ABPoint]:
    """The location set of one tip's own campaign.

    Each tip gets an independent draw seeded by (campaign seed, tip code), so
    a multi-tip run covers the surface with every tip's locations instead of
    repeating one set.
    """
    code = _TIP_CODES[TipKind(tip_name)]
    return sample_locations(cfg, dims, np.random.default_rng([cfg.seed, 1000 + code]))


# ---------------------------------------------------------------------------
# Single touch
# ---------------------------------------------------------------------------

def _features_from_levels(model, levels, calib, seeds, frame_ids):
    out = np.empty((levels.shape[1], N_FEATURES))
    for k in range(levels.shape[1]):
        frame = model.frames_from_levels(levels[:, k], calib, seeds[k], int(frame_ids[k]), int(frame_ids[k] * FRAME_PERIOD_US))
        out[k] = frame.features()
    return out


def run_single_touch(
    cfg: CampaignConfig,
    layout: SensorLayout,
    calib: CalibrationTable,
    optics: OpticalParams | None = None,
    dims: FingerDims | None = None,
    force_model: ForceModel | None = None,
    tips: dict | None = None,
    locations: Sequence[ABPoint] | None = None,
) -> SingleTouchDataset:
    """Depth sweeps at every location for every configured tip.

    Rows are ordered by (location, tip, depth). Frame noise is seeded per
    (campaign seed, location, tip kind, depth) so a tip's rows do not depend
    on evaluation order or on which other tips are simulated.
    """
    optics = optics or OpticalParams()
    dims = dims or FingerDims()
    force_model = force_model or ForceModel()
    tips = tips or DEFAULT_TIPS
    model = model_for(layout, optics, dims)
    if locations is None:
        locations = sample_locations(cfg, dims, np.random.default_rng(cfg.seed))

    ab_rows, depth_rows, force_rows, tip_rows, feat_rows, loc_rows = [], [], [], [], [], []
    frame_counter = 0
    for li, loc in enumerate(locations):
        for tip_name in cfg.tips:
            kind = TipKind(tip_name)
            ti = _TIP_CODES[kind]
            shape: TipShape = tips[kind]
            depths = depth_schedule(cfg.depth_start, _tip_end(cfg, kind), cfg.depth_step)
            field_ = DeformationField(loc, float(depths.max()), shape, dims)
            u = model.displacement_sweep(field_, depths)
            levels = model.noiseless_levels(u, calib)
            seeds = [[cfg.seed, li, ti, k] for k in range(depths.size)]
            frame_ids = frame_counter + np.arange(depths.size)
            frame_counter += depths.size
            feat_rows.append(_features_from_levels(model, levels, calib, seeds, frame_ids))
            ab_rows.append(np.tile([loc.a, loc.b], (depths.size, 1)))
            depth_rows.append(depths)
            force_rows.append(np.array([force(d, shape, force_model) for d in depths]))
            tip_rows.append(np.full(depths.size, kind.value, dtype=object))
            loc_rows.append(np.full(depths.size, li))
    return SingleTouchDataset(
        np.concatenate(ab_rows),
        np.concatenate(depth_rows),
        np.concatenate(force_rows),
        np.concatenate(tip_rows).astype(str),
        np.concatenate(feat_rows),
        np.concatenate(loc_rows),
    )


# ---------------------------------------------------------------------------
# Multitouch
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MultitouchGrid:
    """Cells on the sensorized cylinder: ``n_circ`` around x ``n_axial`` along.

    Cell index is row-major, ``circ * n_axial + axial``.
    """

    n_circ: int = 4
    n_axial: int = 5
    arc_start_deg: float = -135.0
    arc_span_deg: float = 180.0

    @property
    def n_cells(self) -> int:
        return self.n_circ * self.n_axial

    def centers(self, dims: FingerDims | None = None) -> list[ABPoint]:
        dims = dims or FingerDims()
        r = dims.radius_mm
        out = []
        for i in range(self.n_circ):
            phi = math.radians(self.arc_start_deg + (i + 0.5) * self.arc_span_deg / self.n_circ)
            for j in range(self.n_axial):
                z = -(j + 0.5) * dims.cyl_height_mm / self.n_axial
                out.append(xyz_to_ab(np.array([r * math.cos(phi), r * math.sin(phi), z]), dims))
        return out


def run_multitouch(
    n_samples: int,
    grid: MultitouchGrid,
    layout: SensorLayout,
    calib: CalibrationTable,
    optics: OpticalParams | None = None,
    dims: FingerDims | None = None,
    rng: np.random.Generator | None = None,
    depth_range: tuple = (1.0, 3.0),
    tip_shape: TipShape | None = None,
) -> MultitouchDataset:
    """One- or two-cell presses with a hemispherical tip at cell centres."""
    optics = optics or OpticalParams()
    dims = dims or FingerDims()
    rng = rng if rng is not None else np.random.default_rng(0)
    tip_shape = tip_shape or DEFAULT_TIPS[TipKind.HEMISPHERE]
    model = model_for(layout, optics, dims)
    centers = grid.centers(dims)
    cells = np.zeros((n_samples, grid.n_cells), dtype=bool)
    feats = np.empty((n_samples, N_FEATURES))
    for i in range(n_samples):
        count = int(rng.integers(1, 3))
        chosen = rng.choice(grid.n_cells, size=count, replace=False)
        depths = rng.uniform(depth_range[0], depth_range[1], size=count)
        noise_seed = int(rng.integers(0, 2**63 - 1))
        fields_ = [DeformationField(centers[c], float(d), tip_shape, dims) for c, d in zip(chosen, depths)]
        frame = model.respond(fields_, calib, noise_seed, frame_id=i, timestamp_us=int(i * FRAME_PERIOD_US))
        cells[i, chosen] = True
        feats[i] = frame.features()
    return MultitouchDataset(cells, feats)


# ---------------------------------------------------------------------------
# Splits and provenance
# ---------------------------------------------------------------------------

def split_by_location(dataset: SingleTouchDataset, test_fraction: float = 0.2, seed: int = 0):
    """Hold out whole indentation locations; returns (train_idx, test_idx)."""
    locs = np.unique(dataset.location)
    rng = np.random.default_rng(seed)
    order = rng.permutation(locs)
    n_test = max(1, int(round(test_fraction * locs.size))) if locs.size > 1 else 0
    test_locs = np.sort(order[:n_test])
    is_test = np.isin(dataset.location, test_locs)
    return np.flatnonzero(~is_test), np.flatnonzero(is_test)


def write_manifest(path, **entries) -> None:
    """JSON provenance record; dataclass values are expanded."""

    def expand(v):
        if hasattr(v, "__dataclass_fields__"):
            return {k: expand(x) for k, x in asdict(v).items()}
        if isinstance(v, dict):
            return {str(getattr(k, "value", k)): expand(x) for k, x in v.items()}
        if isinstance(v, (list, tuple)):
            return [expand(x) for x in v]
        if hasattr(v, "value"):
            return v.value
        return v

    record = {"package_version": __version__}
    record.update({k: expand(v) for k, v in entries.items()})
    Path(path).write_text(json.dumps(record, indent=2, sort_keys=True) + "\n")
