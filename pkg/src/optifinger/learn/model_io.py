"""Binary model container with a JSON sidecar.

Binary layout (little-endian)::

    b"PSKN1"  u32 format_version  u32 n_tensors
    n_tensors x [u16 name_len, name (utf-8), u8 ndim, ndim x u32 dims]
    tensor data, row-major float64, in table order

The sidecar ``<file>.json`` holds the architecture, the standardizers,
the schedule and the training history.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .network import DenseLayer, LayerSpec, Network, ShapeMismatch
from .training import MultitaskModel, MultitouchModel, Standardizer, TrainHistory, TrainSchedule

__all__ = ["MAGIC", "ModelFormatError", "save_model", "load_model", "write_tensors", "read_tensors"]

MAGIC = b"PSKN1"
FORMAT_VERSION = 1


class ModelFormatError(ValueError):
    pass


def write_tensors(tensors: list[tuple[str, np.ndarray]]) -> bytes:
    head = [MAGIC, struct.pack("<II", FORMAT_VERSION, len(tensors))]
    for name, arr in tensors:
        raw = name.encode("utf-8")
        head.append(struct.pack("<H", len(raw)) + raw + struct.pack("<B", arr.ndim))
        head.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
    body = [np.ascontiguousarray(arr, dtype="<f8").tobytes() for _, arr in tensors]
    return b"".join(head + body)


def read_tensors(blob: bytes) -> dict:
    if blob[:5] != MAGIC:
        raise ModelFormatError("not a PSKN1 model file")
    try:
        version, n = struct.unpack_from("<II", blob, 5)
        if version != FORMAT_VERSION:
            raise ModelFormatError(f"unsupported model format version {version}")
        pos = 13
        table = []
        for _ in range(n):
            (ln,) = struct.unpack_from("<H", blob, pos)
            pos += 2
            name = blob[pos : pos + ln].decode("utf-8")
            pos += ln
            (ndim,) = struct.unpack_from("<B", blob, pos)
            pos += 1
            shape = struct.unpack_from(f"<{ndim}I", blob, pos)
            pos += 4 * ndim
            table.append((name, shape))
        out = {}
        for name, shape in table:
            count = int(np.prod(shape)) if shape else 1
            nbytes = 8 * count
            if pos + nbytes > len(blob):
                raise ModelFormatError("model file is truncated")
            out[name] = np.frombuffer(blob, dtype="<f8", count=count, offset=pos).reshape(shape).astype(np.float64)
            pos += nbytes
    except struct.error as exc:
        raise ModelFormatError("model file is truncated") from exc
    if pos != len(blob):
        raise ModelFormatError("trailing bytes after tensor data")
    return out


def _architecture(net: Network) -> dict:
    def specs(layers):
        return [[l.spec.fan_in, l.spec.fan_out, l.spec.batch_norm, l.spec.activation] for l in layers]

    return {"name": net.name, "trunk": specs(net.trunk), "heads": [[h, specs(ls)] for h, ls in net.heads.items()]}


def _network_from(arch: dict, tensors: dict) -> Network:
    def build(prefix, rows):
        layers = []
        for i, (fi, fo, bn, act) in enumerate(rows):
            layer = DenseLayer(LayerSpec(int(fi), int(fo), bool(bn), act))
            for pname in layer.state_names():
                key = f"{prefix}.{i}.{pname}"
                if key not in tensors:
                    raise ModelFormatError(f"missing tensor {key}")
                arr = tensors[key]
                if arr.shape != getattr(layer, pname).shape:
                    raise ShapeMismatch(f"{key}: stored shape {arr.shape}")
                setattr(layer, pname, arr.copy())
            layers.append(layer)
        return layers

    trunk = build("trunk", arch["trunk"])
    # heads are stored as an ordered list so the tensor table order survives a reload
    heads = {h: build(h, rows) for h, rows in arch["heads"]}
    return Network(trunk, heads, arch["name"])


def save_model(model, path) -> None:
    """Write ``path`` (binary tensors) and ``path.json`` (everything else)."""
    path = Path(path)
    net = model.net
    tensors = []
    for lname, layer in net.named_layers():
        for pname in layer.state_names():
            tensors.append((f"{lname}.{pname}", np.asarray(getattr(layer, pname), dtype=np.float64)))
    path.write_bytes(write_tensors(tensors))
    side = {
        "format": "PSKN1",
        "task": "multitask" if isinstance(model, MultitaskModel) else "multitouch",
        "architecture": _architecture(net),
        "train_dtype": str(np.dtype(net.dtype)),
        "seed": model.seed,
        "schedule": model.schedule.to_dict() if model.schedule else None,
        "history": model.history.to_dict() if model.history else None,
        "x_scaler": model.x_scaler.to_dict(),
    }
    if isinstance(model, MultitaskModel):
        side["loc_scaler"] = model.loc_scaler.to_dict()
        side["force_scaler"] = model.force_scaler.to_dict()
    Path(str(path) + ".json").write_text(json.dumps(side, indent=1, sort_keys=True) + "\n")


def load_model(path):
    """Inverse of :func:`save_model`; the network is restored in the dtype it was trained in."""
    path = Path(path)
    tensors = read_tensors(path.read_bytes())
    side = json.loads(Path(str(path) + ".json").read_text())
    net = _network_from(side["architecture"], tensors)
    net.astype(np.dtype(side.get("train_dtype", "float64")))
    net.eval()
    sched = TrainSchedule(**side["schedule"]) if side.get("schedule") else None
    hist = TrainHistory(**side["history"]) if side.get("history") else None
    x_scaler = Standardizer.from_dict(side["x_scaler"])
    if side["task"] == "multitask":
        return MultitaskModel(
            net, x_scaler, Standardizer.from_dict(side["loc_scaler"]), Standardizer.from_dict(side["force_scaler"]), sched, hist, side["seed"]
        )
    return MultitouchModel(net, x_scaler, sched, hist, side["seed"])
