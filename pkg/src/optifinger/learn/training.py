"""Training loops for the multitask and multitouch networks."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .network import (
    AdamState,
    Network,
    adam_step,
    mse_loss,
    multitask_network,
    multitouch_network,
    sigmoid_xent_loss,
)

__all__ = [
    "EmptyAfterFilter",
    "EmptyDataset",
    "Standardizer",
    "TrainSchedule",
    "TrainHistory",
    "MultitaskModel",
    "MultitouchModel",
    "minibatches",
    "train_multitask",
    "train_multitouch",
]

STD_FLOOR = 1e-8


class EmptyAfterFilter(ValueError):
    pass


class EmptyDataset(ValueError):
    pass


@dataclass
class Standardizer:
    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, x) -> "Standardizer":
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == 1:
            x = x[:, None]
        if x.shape[0] == 0:
            raise EmptyDataset("cannot fit a standardizer on zero rows")
        return cls(x.mean(axis=0), np.maximum(x.std(axis=0), STD_FLOOR))

    def transform(self, x):
        return (np.asarray(x, dtype=np.float64) - self.mean) / self.std

    def inverse_transform(self, z):
        return np.asarray(z, dtype=np.float64) * self.std + self.mean

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, d) -> "Standardizer":
        return cls(np.asarray(d["mean"], dtype=np.float64), np.asarray(d["std"], dtype=np.float64))


@dataclass(frozen=True)
class TrainSchedule:
    epochs: int = 600
    batch_size: int = 128
    lr_initial: float = 1e-3
    lr_drop_epoch: int = 500
    lr_final: float = 1e-4
    loss: str = "mse_multitask"
    head_weights: dict = field(default_factory=lambda: {"location": 1.0, "force": 1.0})

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be at least 1")
        if not self.epochs > self.lr_drop_epoch:
            raise ValueError("epochs must exceed lr_drop_epoch")
        if self.loss not in ("mse_multitask", "sigmoid_xent"):
            raise ValueError(f"unknown loss {self.loss!r}")

    @classmethod
    def multitask(cls, **kw) -> "TrainSchedule":
        return cls(**kw)

    @classmethod
    def multitouch(cls, **kw) -> "TrainSchedule":
        base = dict(epochs=400, lr_drop_epoch=200, loss="sigmoid_xent", head_weights={"cells": 1.0})
        base.update(kw)
        return cls(**base)

    def lr_at(self, epoch: int) -> float:
        return self.lr_initial if epoch < self.lr_drop_epoch else self.lr_final

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TrainHistory:
    train_loss: list = field(default_factory=list)
    heldout_loss: list = field(default_factory=list)
    lr: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"train_loss": self.train_loss, "heldout_loss": self.heldout_loss, "lr": self.lr}


def minibatches(n: int, batch_size: int, rng: np.random.Generator, min_size: int = 1):
    """Shuffled index batches covering all ``n`` rows once.

    A trailing batch smaller than ``min_size`` is folded into the batch
    before it, so batch-normalized layers never see a single row.
    """
    order = rng.permutation(n)
    batches = [order[i : i + batch_size] for i in range(0, n, batch_size)]
    if len(batches) > 1 and batches[-1].size < min_size:
        tail = batches.pop()
        batches[-1] = np.concatenate([batches[-1], tail])
    return batches


def _has_bn(net: Network) -> bool:
    return any(layer.spec.batch_norm for layer in net.layers())


@dataclass
class MultitaskModel:
    """Network plus the standardizers needed to map raw features to outputs."""

    net: Network
    x_scaler: Standardizer
    loc_scaler: Standardizer
    force_scaler: Standardizer
    schedule: TrainSchedule | None = None
    history: TrainHistory | None = None
    seed: int = 0

    def predict(self, features, batch_size: int = 1024):
        """Returns ``(ab (n, 2), force (n,))`` in AB millimetres and newtons."""
        x = self.x_scaler.transform(features)
        self.net.eval()
        locs, forces = [], []
        for i in range(0, x.shape[0], batch_size):
            out = self.net.forward(x[i : i + batch_size])
            locs.append(out["location"])
            forces.append(out["force"])
        loc = self.loc_scaler.inverse_transform(np.concatenate(locs).astype(np.float64))
        frc = self.force_scaler.inverse_transform(np.concatenate(forces).astype(np.float64))
        return loc, frc[:, 0]


@dataclass
class MultitouchModel:
    net: Network
    x_scaler: Standardizer
    schedule: TrainSchedule | None = None
    history: TrainHistory | None = None
    seed: int = 0

    def predict_proba(self, features, batch_size: int = 1024):
        x = self.x_scaler.transform(features)
        self.net.eval()
        out = [self.net.forward(x[i : i + batch_size])["cells"] for i in range(0, x.shape[0], batch_size)]
        return np.concatenate(out).astype(np.float64)


def _multitask_losses(net, x, loc_t, force_t, mask, weights):
    out = net.forward(x)
    l_loc, g_loc = mse_loss(out["location"], loc_t, mask)
    l_frc, g_frc = mse_loss(out["force"], force_t)
    wl, wf = weights.get("location", 1.0), weights.get("force", 1.0)
    return wl * l_loc + wf * l_frc, {"location": wl * g_loc, "force": wf * g_frc}


def _eval_multitask_loss(net, x, loc_t, force_t, mask, weights, batch_size=2048):
    net.eval()
    total = 0.0
    n = x.shape[0]
    n_pos = max(int(np.count_nonzero(mask)), 1)
    sq_loc = 0.0
    sq_frc = 0.0
    for i in range(0, n, batch_size):
        sl = slice(i, i + batch_size)
        out = net.forward(x[sl])
        d = (out["location"] - loc_t[sl]) * mask[sl, None]
        sq_loc += float(np.sum(d * d))
        e = out["force"] - force_t[sl]
        sq_frc += float(np.sum(e * e))
    total = weights.get("location", 1.0) * sq_loc / (2 * n_pos) + weights.get("force", 1.0) * sq_frc / n
    net.train()
    return total


def train_multitask(
    features,
    ab,
    depth,
    force,
    schedule: TrainSchedule | None = None,
    seed: int = 0,
    heldout: tuple | None = None,
    dtype=np.float32,
    net: Network | None = None,
    progress=None,
) -> MultitaskModel:
    """Fit the two-head regressor.

    The location head only sees rows with positive depth; the force head
    sees all rows. Inputs and both targets are standardized on the training
    rows. ``heldout`` is an optional ``(features, ab, depth, force)`` tuple
    whose loss is recorded after each epoch.
    """
    schedule = schedule or TrainSchedule()
    features = np.asarray(features, dtype=np.float64)
    ab = np.asarray(ab, dtype=np.float64)
    depth = np.asarray(depth, dtype=np.float64)
    force = np.asarray(force, dtype=np.float64).reshape(-1, 1)
    if features.shape[0] == 0:
        raise EmptyDataset("no training rows")
    contact = depth > 0
    if not contact.any():
        raise EmptyAfterFilter("no rows with positive depth for the location head")

    x_scaler = Standardizer.fit(features)
    loc_scaler = Standardizer.fit(ab[contact])
    force_scaler = Standardizer.fit(force)
    x = x_scaler.transform(features).astype(dtype)
    loc_t = loc_scaler.transform(ab).astype(dtype)
    force_t = force_scaler.transform(force).astype(dtype)
    mask = contact.astype(dtype)

    rng = np.random.default_rng(seed)
    if net is None:
        net = multitask_network(n_inputs=features.shape[1], seed=int(rng.integers(2**31)), dtype=dtype)
    else:
        net.astype(dtype)
    net.train()
    params = net.params()
    state = AdamState.for_params(params)
    history = TrainHistory()
    min_size = 2 if _has_bn(net) else 1

    ho = None
    if heldout is not None:
        hf, hab, hd, hfr = (np.asarray(v, dtype=np.float64) for v in heldout)
        hfr = hfr.reshape(-1, 1)
        ho = (
            x_scaler.transform(hf).astype(dtype),
            loc_scaler.transform(hab).astype(dtype),
            force_scaler.transform(hfr).astype(dtype),
            (hd > 0).astype(dtype),
        )
        history.heldout_loss.append(_eval_multitask_loss(net, *ho, schedule.head_weights))

    for epoch in range(schedule.epochs):
        lr = schedule.lr_at(epoch)
        total, count = 0.0, 0
        for idx in minibatches(x.shape[0], schedule.batch_size, rng, min_size):
            loss, g = _multitask_losses(net, x[idx], loc_t[idx], force_t[idx], mask[idx], schedule.head_weights)
            grads = net.backward(g)
            adam_step(params, grads, state, lr)
            total += loss * idx.size
            count += idx.size
        history.train_loss.append(total / count)
        history.lr.append(lr)
        if ho is not None:
            history.heldout_loss.append(_eval_multitask_loss(net, *ho, schedule.head_weights))
        if progress is not None:
            progress(epoch, history)
    net.eval()
    return MultitaskModel(net, x_scaler, loc_scaler, force_scaler, schedule, history, seed)


def train_multitouch(
    features,
    cells,
    schedule: TrainSchedule | None = None,
    seed: int = 0,
    dtype=np.float32,
    net: Network | None = None,
    progress=None,
) -> MultitouchModel:
    """Fit the 20-output touch classifier with sigmoid cross-entropy."""
    schedule = schedule or TrainSchedule.multitouch()
    features = np.asarray(features, dtype=np.float64)
    cells = np.asarray(cells, dtype=np.float64)
    if features.shape[0] == 0:
        raise EmptyDataset("no training rows")
    x_scaler = Standardizer.fit(features)
    x = x_scaler.transform(features).astype(dtype)
    y = cells.astype(dtype)
    rng = np.random.default_rng(seed)
    if net is None:
        net = multitouch_network(n_inputs=features.shape[1], n_outputs=cells.shape[1], seed=int(rng.integers(2**31)), dtype=dtype)
    else:
        net.astype(dtype)
    net.train()
    head = net.heads["cells"][-1]
    params = net.params()
    state = AdamState.for_params(params)
    history = TrainHistory()
    for epoch in range(schedule.epochs):
        lr = schedule.lr_at(epoch)
        total, count = 0.0, 0
        for idx in minibatches(x.shape[0], schedule.batch_size, rng, 1):
            net.forward(x[idx])
            logits = head._cache[1]
            loss, g = sigmoid_xent_loss(logits, y[idx])
            grads = net.backward({"cells": g}, wrt_pre={"cells"})
            adam_step(params, grads, state, lr)
            total += loss * idx.size
            count += idx.size
        history.train_loss.append(total / count)
        history.lr.append(lr)
        if progress is not None:
            progress(epoch, history)
    net.eval()
    return MultitouchModel(net, x_scaler, schedule, history, seed)
