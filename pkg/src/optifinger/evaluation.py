"""Error statistics for trained models: force-binned localization and force
errors, leave-one-tip-out comparisons and multitouch accuracy."""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .geometry import FingerDims, _hexagon, ab_to_xyz_array, clamp_to_domain

__all__ = [
    "FORCE_BIN_EDGES",
    "ForceBins",
    "BinStats",
    "ErrorReport",
    "LooResult",
    "MultitouchReport",
    "localization_errors",
    "evaluate_single_touch",
    "evaluate_predictions",
    "leave_one_out",
    "evaluate_multitouch",
    "quiver_svg",
]

FORCE_BIN_EDGES = (0.2, 0.3, 0.5, 1.0, 3.0, 10.0)
REL_FORCE_FLOOR_N = 1e-6


@dataclass(frozen=True)
class ForceBins:
    """Coarse reporting force bins plus evenly spaced bins for error-versus-force curves.

    Bins are half-open ``[lo, hi)``. The top coarse bin is open-ended, so
    every force at or above the lowest edge falls in exactly one bin.
    """

    edges: tuple = FORCE_BIN_EDGES
    fine_width: float = 0.25
    fine_max: float = 16.0

    def __post_init__(self):
        e = np.asarray(self.edges, dtype=float)
        if e.ndim != 1 or e.size < 2 or np.any(np.diff(e) <= 0):
            raise ValueError("bin edges must be strictly increasing")

    @property
    def n_bins(self) -> int:
        return len(self.edges) - 1

    @property
    def labels(self) -> list[str]:
        e = self.edges
        return [f"{e[k]:g}-{e[k + 1]:g}" for k in range(self.n_bins)]

    def assign(self, force) -> np.ndarray:
        """Bin index per force value, -1 below the lowest edge."""
        f = np.asarray(force, dtype=float)
        idx = np.searchsorted(np.asarray(self.edges), f, side="right") - 1
        idx = np.where(f < self.edges[0], -1, np.minimum(idx, self.n_bins - 1))
        return idx

    @property
    def fine_edges(self) -> np.ndarray:
        n = int(round(self.fine_max / self.fine_width))
        return np.arange(n + 1) * self.fine_width

    def assign_fine(self, force) -> np.ndarray:
        f = np.asarray(force, dtype=float)
        idx = np.floor(f / self.fine_width).astype(int)
        return np.where((f < 0) | (f >= self.fine_max), -1, idx)


@dataclass(frozen=True)
class BinStats:
    lo: float
    hi: float
    n: int
    loc_mean: float
    loc_median: float
    loc_std: float
    force_abs_mean: float
    force_abs_median: float
    rel_mean: float
    rel_median: float
    rel_std: float

    @classmethod
    def of(cls, lo, hi, loc_err, abs_err, rel_err) -> "BinStats | None":
        n = int(loc_err.size)
        if n == 0:
            return None
        rel = rel_err[np.isfinite(rel_err)]

        def stat(fn, x):
            return float(fn(x)) if x.size else math.nan

        return cls(
            float(lo), float(hi), n,
            float(np.mean(loc_err)), float(np.median(loc_err)), float(np.std(loc_err)),
            float(np.mean(abs_err)), float(np.median(abs_err)),
            stat(np.mean, rel), stat(np.median, rel), stat(np.std, rel),
        )


def localization_errors(pred_ab, true_ab, dims: FingerDims | None = None) -> np.ndarray:
    """Cartesian chord error per row; predictions are first pulled into the domain."""
    dims = dims or FingerDims()
    pred_ab = np.asarray(pred_ab, dtype=float)
    true_ab = np.asarray(true_ab, dtype=float)
    a, b = clamp_to_domain(pred_ab[:, 0], pred_ab[:, 1], dims)
    p, _, _ = ab_to_xyz_array(a, b, dims)
    q, _, _ = ab_to_xyz_array(true_ab[:, 0], true_ab[:, 1], dims)
    return np.linalg.norm(p - q, axis=-1)


_STAT_FIELDS = [
    "n", "loc_mean", "loc_median", "loc_std", "force_abs_mean", "force_abs_median", "rel_mean", "rel_median", "rel_std",
]


def _fmt(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return "" if x is None or (isinstance(x, float) and math.isnan(x)) else repr(float(x))


@dataclass
class ErrorReport:
    true_ab: np.ndarray
    pred_ab: np.ndarray
    true_force: np.ndarray
    pred_force: np.ndarray
    depth: np.ndarray
    loc_error: np.ndarray
    bins: ForceBins = field(default_factory=ForceBins)

    @property
    def force_abs_error(self) -> np.ndarray:
        return np.abs(self.pred_force - self.true_force)

    @property
    def rel_force_error(self) -> np.ndarray:
        """Percent error; NaN where the true force is effectively zero."""
        f = self.true_force
        ok = f >= REL_FORCE_FLOOR_N
        out = np.full(f.shape, np.nan)
        out[ok] = np.abs(self.pred_force[ok] - f[ok]) / f[ok] * 100.0
        return out

    def _stats(self, mask, lo, hi):
        return BinStats.of(lo, hi, self.loc_error[mask], self.force_abs_error[mask], self.rel_force_error[mask])

    def table(self) -> list:
        """One :class:`BinStats` (or ``None`` when empty) per coarse force bin."""
        idx = self.bins.assign(self.true_force)
        e = self.bins.edges
        return [self._stats(idx == k, e[k], e[k + 1]) for k in range(self.bins.n_bins)]

    def curve(self) -> list:
        idx = self.bins.assign_fine(self.true_force)
        fe = self.bins.fine_edges
        return [self._stats(idx == k, fe[k], fe[k + 1]) for k in range(fe.size - 1)]

    def no_contact(self) -> BinStats | None:
        return self._stats(self.depth <= 0, -math.inf, 0.0)

    def where(self, mask) -> BinStats | None:
        return self._stats(np.asarray(mask, dtype=bool), math.nan, math.nan)

    def median_loc_error(self, min_force: float = 1.0) -> float:
        sel = self.true_force > min_force
        return float(np.median(self.loc_error[sel])) if sel.any() else math.nan

    def median_rel_force_error(self, lo: float = 2.0, hi: float = 9.0) -> float:
        sel = (self.true_force >= lo) & (self.true_force <= hi)
        return float(np.median(self.rel_force_error[sel])) if sel.any() else math.nan

    # -- serialization ----------------------------------------------------
    def points_csv(self) -> str:
        buf = io.StringIO()
        buf.write("true_a,true_b,pred_a,pred_b,depth,true_force,pred_force,loc_error,force_bin\n")
        fb = self.bins.assign(self.true_force)
        for k in range(self.loc_error.size):
            row = [
                self.true_ab[k, 0], self.true_ab[k, 1], self.pred_ab[k, 0], self.pred_ab[k, 1],
                self.depth[k], self.true_force[k], self.pred_force[k], self.loc_error[k],
            ]
            buf.write(",".join(_fmt(float(v)) for v in row) + f",{int(fb[k])}\n")
        return buf.getvalue()

    @staticmethod
    def _stats_csv(rows, labels) -> str:
        buf = io.StringIO()
        buf.write("bin,lo,hi," + ",".join(_STAT_FIELDS) + "\n")
        for label, s in zip(labels, rows):
            if s is None:
                continue
            buf.write(f"{label},{_fmt(s.lo)},{_fmt(s.hi)}," + ",".join(_fmt(getattr(s, f)) for f in _STAT_FIELDS) + "\n")
        return buf.getvalue()

    def table_csv(self) -> str:
        rows = self.table() + [self.no_contact()]
        return self._stats_csv(rows, self.bins.labels + ["no_contact"])

    def curve_csv(self) -> str:
        fe = self.bins.fine_edges
        labels = [f"{fe[k]:g}-{fe[k + 1]:g}" for k in range(fe.size - 1)]
        return self._stats_csv(self.curve(), labels)

    def quiver_csv(self) -> str:
        buf = io.StringIO()
        buf.write("true_a,true_b,pred_a,pred_b,force_bin\n")
        fb = self.bins.assign(self.true_force)
        for k in np.flatnonzero(fb >= 0):
            buf.write(",".join(_fmt(float(v)) for v in (*self.true_ab[k], *self.pred_ab[k])) + f",{int(fb[k])}\n")
        return buf.getvalue()

    def summary(self) -> str:
        lines = [f"rows: {self.loc_error.size}"]
        for label, s in zip(self.bins.labels, self.table()):
            if s is None:
                lines.append(f"  {label} N: no rows")
            else:
                lines.append(
                    f"  {label} N: n={s.n} loc mean {s.loc_mean:.2f} mm, median {s.loc_median:.2f} mm; "
                    f"force rel median {s.rel_median:.1f}%"
                )
        nc = self.no_contact()
        if nc is not None:
            lines.append(f"  no contact: n={nc.n} loc median {nc.loc_median:.2f} mm")
        lines.append(f"median localization error above 1 N: {self.median_loc_error():.3f} mm")
        lines.append(f"median relative force error 2-9 N: {self.median_rel_force_error():.2f} %")
        return "\n".join(lines) + "\n"

    def write(self, directory, dims: FingerDims | None = None) -> None:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        (d / "points.csv").write_text(self.points_csv())
        (d / "bins.csv").write_text(self.table_csv())
        (d / "curve.csv").write_text(self.curve_csv())
        (d / "quiver.csv").write_text(self.quiver_csv())
        (d / "quiver.svg").write_text(quiver_svg(self.true_ab, self.pred_ab, self.bins.assign(self.true_force), dims))
        (d / "summary.txt").write_text(self.summary())


def evaluate_predictions(pred_ab, pred_force, test_set, dims: FingerDims | None = None, bins: ForceBins | None = None) -> ErrorReport:
    pred_ab = np.asarray(pred_ab, dtype=float)
    err = localization_errors(pred_ab, test_set.ab, dims)
    return ErrorReport(
        np.asarray(test_set.ab, dtype=float), pred_ab, np.asarray(test_set.force, dtype=float),
        np.asarray(pred_force, dtype=float), np.asarray(test_set.depth, dtype=float), err, bins or ForceBins(),
    )


def evaluate_single_touch(model, test_set, dims: FingerDims | None = None, bins: ForceBins | None = None) -> ErrorReport:
    """Run ``model`` on every test row and collect the error report."""
    pred_ab, pred_force = model.predict(test_set.features)
    return evaluate_predictions(pred_ab, pred_force, test_set, dims, bins)


# ---------------------------------------------------------------------------
# Leave one tip out
# ---------------------------------------------------------------------------

@dataclass
class LooResult:
    """Per tip: report of the model that never saw the tip and of the model
    trained on every tip, both on that tip's held-out locations."""

    tips: list
    excluded: dict
    inclusive: dict
    bins: ForceBins = field(default_factory=ForceBins)

    MODELS = ("leave_one_out", "all_inclusive")
    STATS = ("mean", "median")

    def grid(self) -> np.ndarray:
        """Array ``(tips, bins, 2 stats, 2 models)``; NaN marks an empty bin."""
        out = np.full((len(self.tips), self.bins.n_bins, 2, 2), np.nan)
        for i, t in enumerate(self.tips):
            for m, rep in enumerate((self.excluded[t], self.inclusive[t])):
                for k, s in enumerate(rep.table()):
                    if s is not None:
                        out[i, k, 0, m] = s.loc_mean
                        out[i, k, 1, m] = s.loc_median
        return out

    def tip_averaged(self, stat: str = "median") -> np.ndarray:
        """Per-bin error averaged over the tips that have rows in that bin,
        shape ``(bins, 2 models)``."""
        g = self.grid()[:, :, self.STATS.index(stat), :]
        with np.errstate(invalid="ignore"):
            counts = np.sum(np.isfinite(g), axis=0)
            total = np.nansum(g, axis=0)
        return np.where(counts > 0, total / np.maximum(counts, 1), np.nan)

    def bin_averaged(self, stat: str = "median", n_bins: int | None = None) -> np.ndarray:
        """Mean over bins of :meth:`tip_averaged`, one value per model."""
        t = self.tip_averaged(stat)
        if n_bins is not None:
            t = t[:n_bins]
        return np.nanmean(t, axis=0)

    def to_csv(self) -> str:
        g = self.grid()
        buf = io.StringIO()
        buf.write("tip,bin,stat,model,loc_error_mm\n")
        for i, t in enumerate(self.tips):
            for k, label in enumerate(self.bins.labels):
                for s, sname in enumerate(self.STATS):
                    for m, mname in enumerate(self.MODELS):
                        buf.write(f"{t},{label},{sname},{mname},{_fmt(float(g[i, k, s, m]))}\n")
        return buf.getvalue()

    def summary(self) -> str:
        g = self.grid()
        lines = ["tip          " + "  ".join(f"{lab:>15}" for lab in self.bins.labels)]
        for i, t in enumerate(self.tips):
            cells = []
            for k in range(self.bins.n_bins):
                lo, inc = g[i, k, 1, 0], g[i, k, 1, 1]
                cells.append("              -" if np.isnan(lo) else f"{lo:6.2f} / {inc:6.2f}")
            lines.append(f"{t:<12} " + "  ".join(cells))
        avg = self.bin_averaged("median")
        lines.append(f"bin-averaged median (leave-one-out / all-inclusive): {avg[0]:.3f} / {avg[1]:.3f} mm")
        return "\n".join(lines) + "\n"

    def write(self, directory) -> None:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        (d / "loo_grid.csv").write_text(self.to_csv())
        (d / "summary.txt").write_text(self.summary())
        for t in self.tips:
            self.excluded[t].write(d / f"{t}_leave_one_out")
            self.inclusive[t].write(d / f"{t}_all_inclusive")


def leave_one_out(datasets_by_tip: dict, schedule=None, seed: int = 0, test_fraction: float = 0.2, dims: FingerDims | None = None, train_kwargs: dict | None = None, progress=None) -> LooResult:
    """Train one model per excluded tip plus one on every tip, and evaluate
    each tip's held-out locations under both."""
    from .campaign import SingleTouchDataset, split_by_location
    from .learn import train_multitask

    tips = list(datasets_by_tip)
    if len(tips) < 2:
        raise ValueError("leave-one-out needs at least two tips")
    train_kwargs = dict(train_kwargs or {})
    train_parts, test_parts = {}, {}
    for t in tips:
        ds = datasets_by_tip[t]
        tr, te = split_by_location(ds, test_fraction, seed)
        train_parts[t] = ds.subset(tr)
        test_parts[t] = ds.subset(te)

    def fit(parts, tag):
        data = SingleTouchDataset.concat(parts)
        if progress is not None:
            progress(f"training {tag} on {len(data)} rows")
        return train_multitask(data.features, data.ab, data.depth, data.force, schedule, seed=seed, **train_kwargs)

    inclusive_model = fit([train_parts[t] for t in tips], "all tips")
    excluded, inclusive = {}, {}
    for t in tips:
        model = fit([train_parts[o] for o in tips if o != t], f"without {t}")
        excluded[t] = evaluate_single_touch(model, test_parts[t], dims)
        inclusive[t] = evaluate_single_touch(inclusive_model, test_parts[t], dims)
    return LooResult(tips, excluded, inclusive)


# ---------------------------------------------------------------------------
# Multitouch
# ---------------------------------------------------------------------------

@dataclass
class MultitouchReport:
    probabilities: np.ndarray  # (n, cells)
    labels: np.ndarray  # (n, cells) bool

    @property
    def predicted(self) -> np.ndarray:
        # a probability of exactly 0.5 is never a touch
        return self.probabilities > 0.5

    @property
    def correct(self) -> np.ndarray:
        return np.all(self.predicted == self.labels, axis=1)

    @property
    def n_touches(self) -> np.ndarray:
        return self.labels.sum(axis=1)

    def accuracy(self, n_touches: int | None = None) -> float:
        sel = np.ones(self.labels.shape[0], bool) if n_touches is None else self.n_touches == n_touches
        return float(np.mean(self.correct[sel])) if sel.any() else math.nan

    @property
    def overall(self) -> float:
        return self.accuracy()

    @property
    def two_touch(self) -> float:
        return self.accuracy(2)

    def to_csv(self) -> str:
        n_cells = self.labels.shape[1]
        buf = io.StringIO()
        buf.write("sample,correct," + ",".join(f"label{c + 1}" for c in range(n_cells)) + "," + ",".join(f"p{c + 1}" for c in range(n_cells)) + "\n")
        for i in range(self.labels.shape[0]):
            buf.write(f"{i},{int(self.correct[i])}," + ",".join(str(int(v)) for v in self.labels[i]) + "," + ",".join(_fmt(float(p)) for p in self.probabilities[i]) + "\n")
        return buf.getvalue()

    def summary(self) -> str:
        return (
            f"samples: {self.labels.shape[0]}\n"
            f"all-cells accuracy: {self.overall * 100:.2f} %\n"
            f"single-touch accuracy: {self.accuracy(1) * 100:.2f} %\n"
            f"two-touch accuracy: {self.two_touch * 100:.2f} %\n"
        )

    def write(self, directory) -> None:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        (d / "probabilities.csv").write_text(self.to_csv())
        (d / "summary.txt").write_text(self.summary())


def evaluate_multitouch(model_or_probs, test_set) -> MultitouchReport:
    """``model_or_probs`` is a trained multitouch model or a probability array."""
    if hasattr(model_or_probs, "predict_proba"):
        probs = model_or_probs.predict_proba(test_set.features)
    else:
        probs = np.asarray(model_or_probs, dtype=float)
    labels = np.asarray(test_set.cells, dtype=bool)
    if probs.shape != labels.shape:
        raise ValueError(f"probabilities {probs.shape} vs labels {labels.shape}")
    return MultitouchReport(probs, labels)


# ---------------------------------------------------------------------------
# SVG
# ---------------------------------------------------------------------------

_BIN_COLOURS = ["#4575b4", "#91bfdb", "#fee090", "#fc8d59", "#d73027"]


def quiver_svg(true_ab, pred_ab, bin_index, dims: FingerDims | None = None, size_px: int = 640) -> str:
    """Arrows from true to predicted location in AB space over the domain outline."""
    dims = dims or FingerDims()
    verts = np.asarray(_hexagon(dims), dtype=float)
    lo = verts.min(axis=0) - 2.0
    hi = verts.max(axis=0) + 2.0
    scale = size_px / float(np.max(hi - lo))
    w, h = (hi - lo) * scale

    def px(a, b):
        return (a - lo[0]) * scale, (hi[1] - b) * scale

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{w:.0f}" height="{h:.0f}" viewBox="0 0 {w:.1f} {h:.1f}">',
        '<defs><marker id="head" markerWidth="6" markerHeight="6" refX="5" refY="3" orient="auto">'
        '<path d="M0,0 L6,3 L0,6 z" fill="#333"/></marker></defs>',
        '<polygon fill="none" stroke="#888" stroke-width="1" points="'
        + " ".join("{:.2f},{:.2f}".format(*px(a, b)) for a, b in verts)
        + '"/>',
    ]
    true_ab = np.asarray(true_ab, dtype=float)
    pred_ab = np.asarray(pred_ab, dtype=float)
    for k in np.flatnonzero(np.asarray(bin_index) >= 0):
        x0, y0 = px(*true_ab[k])
        x1, y1 = px(*pred_ab[k])
        colour = _BIN_COLOURS[int(bin_index[k]) % len(_BIN_COLOURS)]
        out.append(
            f'<line x1="{x0:.2f}" y1="{y0:.2f}" x2="{x1:.2f}" y2="{y1:.2f}" stroke="{colour}" '
            f'stroke-width="1" marker-end="url(#head)"/>'
        )
    out.append("</svg>")
    return "\n".join(out) + "\n"
