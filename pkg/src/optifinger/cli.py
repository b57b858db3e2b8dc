"""Command-line entry point.

    optifinger [--config FILE] [--seed N] [--threads N] COMMAND ...

Commands: geom, simulate, train, eval, stream, report. Exit status is 0 on
success, 1 on a usage error and 2 when a command fails at run time.
"""

from __future__ import annotations

import argparse
import configparser
import dataclasses
import hashlib
import json
import logging
import shutil
import sys
from pathlib import Path

import numpy as np

from . import __version__

log = logging.getLogger("optifinger")

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2
ALL_TIPS = ("hemisphere", "planar", "edge_h", "edge_v", "corner")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------

@dataclasses.dataclass
class RunConfig:
    """Everything a run depends on, resolvable entirely from defaults."""

    dims: object
    optics: object
    layout_path: str | None
    campaign: dict
    schedule: dict
    seed: int

    def layout(self):
        from .sensing import SensorLayout, default_layout

        return SensorLayout.load(self.layout_path) if self.layout_path else default_layout()

    def to_dict(self) -> dict:
        return {
            "dims": dataclasses.asdict(self.dims),
            "optics": dataclasses.asdict(self.optics),
            "layout_path": self.layout_path,
            "campaign": self.campaign,
            "schedule": self.schedule,
            "seed": self.seed,
        }


def _coerce(text: str):
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            pass
    return text


def load_config(path: str | None, seed: int | None) -> RunConfig:
    """Read an INI-style file with optional ``[dims]``, ``[optics]``,
    ``[layout]``, ``[campaign]`` and ``[schedule]`` sections."""
    from .geometry import FingerDims
    from .sensing import OpticalParams

    parser = configparser.ConfigParser()
    if path is not None:
        if not Path(path).is_file():
            raise UsageError(f"config file not found: {path}")
        parser.read(path)

    def section(name):
        return {k: _coerce(v) for k, v in parser[name].items()} if parser.has_section(name) else {}

    dims = FingerDims(**section("dims"))
    optics = OpticalParams.from_mapping(section("optics")) if section("optics") else OpticalParams()
    layout_path = section("layout").get("path")
    general = section("run")
    run_seed = seed if seed is not None else int(general.get("seed", 0))
    return RunConfig(dims, optics, layout_path, section("campaign"), section("schedule"), run_seed)


def _sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def update_manifest(directory, artifact: str, record: dict) -> None:
    """Merge one artifact's provenance into ``<directory>/manifest.json``."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    path = d / "manifest.json"
    data = json.loads(path.read_text()) if path.exists() else {"package_version": __version__, "artifacts": {}}
    data["artifacts"][artifact] = record
    path.write_text(json.dumps(data, indent=1, sort_keys=True) + "\n")


def _command_line(argv) -> str:
    return " ".join(["optifinger", *argv])


# ---------------------------------------------------------------------------
# geom
# ---------------------------------------------------------------------------

def _cmd_geom(args, cfg, argv):
    from .geometry import ab_to_xyz_array, xyz_to_ab

    dims = cfg.dims
    if args.geom_cmd == "ab2xyz":
        xyz, _, _ = ab_to_xyz_array(args.a, args.b, dims, check=True)
        print(",".join(repr(float(v)) for v in xyz))
    elif args.geom_cmd == "xyz2ab":
        p = xyz_to_ab(np.array([args.x, args.y, args.z]), dims)
        print(f"{p.a!r},{p.b!r},{p.region.value}")
    else:
        rows = geom_grid(args.n, dims)
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        with open(out, "w", newline="\n") as fh:
            fh.write("a,b,x,y,z,nx,ny,nz,region\n")
            for r in rows:
                fh.write(",".join(repr(float(v)) for v in r[:8]) + f",{r[8]}\n")
        update_manifest(out.parent, out.name, {"command": _command_line(argv), "n": args.n, "dims": dataclasses.asdict(dims), "sha256": _sha256(out)})
    return EXIT_OK


def geom_grid(n: int, dims):
    """Points of an ``n`` x ``n`` lattice over the tip square, continued with
    the same spacing over the two cylinder regions."""
    from .geometry import _region_codes, ab_to_xyz_array, _hexagon

    if n < 2:
        raise UsageError("--n must be at least 2")
    L = dims.L_mm
    h = 2 * L / (n - 1)
    verts = _hexagon(dims)
    lo, hi = verts.min(axis=0), verts.max(axis=0)
    ka = np.arange(np.floor((lo[0] + L) / h), np.ceil((hi[0] + L) / h) + 1)
    kb = np.arange(np.floor((lo[1] + L) / h), np.ceil((hi[1] + L) / h) + 1)
    A, B = np.meshgrid(-L + ka * h, -L + kb * h, indexing="ij")
    a, b = A.ravel(), B.ravel()
    codes = _region_codes(a, b, dims)
    keep = codes >= 0
    a, b, codes = a[keep], b[keep], codes[keep]
    xyz, nrm, _ = ab_to_xyz_array(a, b, dims)
    names = {0: "tip", 1: "green", 2: "blue"}
    return [(a[i], b[i], *xyz[i], *nrm[i], names[int(codes[i])]) for i in range(a.size)]


# ---------------------------------------------------------------------------
# simulate
# ---------------------------------------------------------------------------

def _cmd_simulate(args, cfg, argv):
    from .campaign import CampaignConfig, MultitouchGrid, run_multitouch, run_single_touch, tip_locations
    from .sensing import calibrate

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    layout = cfg.layout()
    calib = calibrate(layout, cfg.optics, cfg.dims)
    layout.save(out / "layout.csv")
    (out / "calibration.csv").write_text(calib.to_csv())
    (out / "optics.cfg").write_text(cfg.optics.to_text())
    tips = [t.strip() for t in args.tips.split(",") if t.strip()]
    for t in tips:
        if t not in ALL_TIPS:
            raise UsageError(f"unknown tip {t!r}; choose from {', '.join(ALL_TIPS)}")
    camp = dict(cfg.campaign)
    camp.update(n_locations=args.locations, seed=cfg.seed, tips=tuple(tips))
    ccfg = CampaignConfig(**camp)
    record = {
        "command": _command_line(argv),
        "config": cfg.to_dict(),
        "campaign": dataclasses.asdict(ccfg),
        "layout_sha256": layout.digest(),
    }
    if tips:
        for t in tips:
            # every tip is its own campaign with its own locations
            tcfg = dataclasses.replace(ccfg, tips=(t,))
            locations = tip_locations(tcfg, t, cfg.dims)
            ds = run_single_touch(tcfg, layout, calib, cfg.optics, cfg.dims, locations=locations)
            name = f"single_{t}.csv"
            digest = ds.save(out / name)
            update_manifest(out, name, {**record, "tip": t, "rows": len(ds), "sha256": digest})
            print(f"{out / name}: {len(ds)} rows")
    if args.multitouch:
        grid = MultitouchGrid()
        mt = run_multitouch(args.multitouch, grid, layout, calib, cfg.optics, cfg.dims, np.random.default_rng([cfg.seed, 1]))
        digest = mt.save(out / "multitouch.csv")
        update_manifest(out, "multitouch.csv", {**record, "grid": dataclasses.asdict(grid), "rows": len(mt), "sha256": digest})
        print(f"{out / 'multitouch.csv'}: {len(mt)} rows")
    return EXIT_OK


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------

def _schedule_from(args, cfg, task):
    from .learn import TrainSchedule

    base = TrainSchedule.multitask() if task == "multitask" else TrainSchedule.multitouch()
    over = {k: v for k, v in cfg.schedule.items() if k in ("epochs", "batch_size", "lr_initial", "lr_drop_epoch", "lr_final")}
    for flag, key in (("epochs", "epochs"), ("batch", "batch_size"), ("lr", "lr_initial"), ("lr_drop_epoch", "lr_drop_epoch"), ("lr_final", "lr_final")):
        v = getattr(args, flag, None)
        if v is not None:
            over[key] = v
    try:
        return dataclasses.replace(base, **over)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def split_rows(n: int, n_test: int, seed: int):
    """Seeded row split used for multitouch data; returns (train, test) indices."""
    order = np.random.default_rng(seed).permutation(n)
    return np.sort(order[n_test:]), np.sort(order[:n_test])


def _cmd_train(args, cfg, argv):
    from .campaign import MultitouchDataset, SingleTouchDataset, split_by_location
    from .learn import save_model, train_multitask, train_multitouch

    sched = _schedule_from(args, cfg, args.task)
    data_path = Path(args.data)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    data_sha = _sha256(data_path)
    dtype = np.float64 if args.float64 else np.float32
    if args.task == "multitask":
        ds = SingleTouchDataset.load(data_path)
        tr, te = split_by_location(ds, args.test_fraction, cfg.seed)
        part = ds.subset(tr)
        model = train_multitask(part.features, part.ab, part.depth, part.force, sched, seed=cfg.seed, dtype=dtype)
        split = {"kind": "location", "test_fraction": args.test_fraction, "test_locations": sorted(int(x) for x in np.unique(ds.location[te]))}
    else:
        ds = MultitouchDataset.load(data_path)
        n_test = args.test_size if args.test_size is not None else int(round(len(ds) * args.test_fraction))
        tr, te = split_rows(len(ds), n_test, cfg.seed)
        part = ds.subset(tr)
        model = train_multitouch(part.features, part.cells, sched, seed=cfg.seed, dtype=dtype)
        split = {"kind": "rows", "test_rows": [int(i) for i in te]}
    save_model(model, out)
    side_path = Path(str(out) + ".json")
    side = json.loads(side_path.read_text())
    side["data_sha256"] = data_sha
    side["split"] = split
    side_path.write_text(json.dumps(side, indent=1, sort_keys=True) + "\n")
    update_manifest(
        out.parent,
        out.name,
        {"command": _command_line(argv), "task": args.task, "data": str(data_path), "data_sha256": data_sha, "schedule": sched.to_dict(), "seed": cfg.seed, "sha256": _sha256(out)},
    )
    print(f"{out}: trained on {len(tr)} rows, held out {len(te)}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# eval
# ---------------------------------------------------------------------------

def _heldout(model_path, data_path, n_rows, location=None):
    """Rows to evaluate: the model's held-out split when it was trained on
    this very file, otherwise every row."""
    side = json.loads(Path(str(model_path) + ".json").read_text())
    if side.get("data_sha256") != _sha256(data_path):
        return np.arange(n_rows), False
    split = side.get("split", {})
    if split.get("kind") == "location":
        return np.flatnonzero(np.isin(location, split["test_locations"])), True
    return np.asarray(split.get("test_rows", []), dtype=int), True


def _cmd_eval(args, cfg, argv):
    from .campaign import MultitouchDataset, SingleTouchDataset
    from .evaluation import evaluate_multitouch, evaluate_single_touch, leave_one_out
    from .learn import load_model

    if args.eval_cmd == "single":
        model = load_model(args.model)
        ds = SingleTouchDataset.load(args.data)
        rows, held = _heldout(args.model, args.data, len(ds), ds.location)
        report = evaluate_single_touch(model, ds.subset(rows), cfg.dims)
        report.write(args.report, cfg.dims)
        update_manifest(args.report, "single", {"command": _command_line(argv), "model_sha256": _sha256(args.model), "data_sha256": _sha256(args.data), "heldout_only": held})
        sys.stdout.write(report.summary())
    elif args.eval_cmd == "multi":
        model = load_model(args.model)
        ds = MultitouchDataset.load(args.data)
        rows, held = _heldout(args.model, args.data, len(ds))
        report = evaluate_multitouch(model, ds.subset(rows))
        if args.report:
            report.write(args.report)
            update_manifest(args.report, "multi", {"command": _command_line(argv), "model_sha256": _sha256(args.model), "data_sha256": _sha256(args.data), "heldout_only": held})
        sys.stdout.write(report.summary())
    else:
        data_dir = Path(args.data_dir)
        files = sorted(data_dir.glob("single_*.csv"))
        if len(files) < 2:
            raise UsageError(f"need at least two single_<tip>.csv files in {data_dir}")
        by_tip = {f.stem[len("single_"):]: SingleTouchDataset.load(f) for f in files}
        by_tip = {t: by_tip[t] for t in ALL_TIPS if t in by_tip} | {t: d for t, d in by_tip.items() if t not in ALL_TIPS}
        sched = _schedule_from(args, cfg, "multitask")
        dtype = np.float64 if args.float64 else np.float32
        result = leave_one_out(by_tip, sched, cfg.seed, args.test_fraction, cfg.dims, {"dtype": dtype}, progress=lambda m: log.info(m))
        report_dir = Path(args.report or data_dir / "loo_report")
        result.write(report_dir)
        update_manifest(report_dir, "loo", {"command": _command_line(argv), "data": {f.name: _sha256(f) for f in files}, "schedule": sched.to_dict(), "seed": cfg.seed})
        sys.stdout.write(result.summary())
    return EXIT_OK


# ---------------------------------------------------------------------------
# stream
# ---------------------------------------------------------------------------

def _cmd_stream(args, cfg, argv):
    from . import stream

    if args.stream_cmd == "serve":
        if args.mode == "replay":
            if not args.data:
                raise UsageError("--data is required in replay mode")
            source = stream.replay_source(_load_features(args.data))
        else:
            from .sensing import calibrate, model_for

            layout = cfg.layout()
            calib = calibrate(layout, cfg.optics, cfg.dims)
            source = stream.live_source(model_for(layout, cfg.optics, cfg.dims), calib, cfg.seed)
        stream.serve(
            source,
            host=args.host,
            port=args.port,
            rate_hz=args.rate_hz,
            max_frames=args.frames,
            duration_s=args.duration,
            on_ready=lambda s: print(f"serving on {s.host}:{s.port}", file=sys.stderr, flush=True),
        )
    else:
        host, _, port = args.connect.rpartition(":")
        if not host or not port.isdigit():
            raise UsageError("--connect expects HOST:PORT")
        frames = stream.dump(host, int(port), args.n, args.out, timeout_s=args.timeout)
        print(f"received {len(frames)} frames")
    return EXIT_OK


def _load_features(path):
    import pandas as pd

    cols = pd.read_csv(path, nrows=0).columns
    feat_cols = [c for c in cols if c.startswith("r") and c[1:].isdigit()]
    if not feat_cols:
        raise UsageError(f"{path} has no r1..r990 feature columns")
    return pd.read_csv(path, usecols=feat_cols, float_precision="round_trip")[feat_cols].to_numpy(dtype=float)


# ---------------------------------------------------------------------------
# report
# ---------------------------------------------------------------------------

def _cmd_report(args, cfg, argv):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    index = []
    for src in args.inputs:
        src = Path(src)
        if not src.is_dir():
            raise UsageError(f"not a directory: {src}")
        for f in sorted(src.rglob("*")):
            if f.suffix.lower() in (".csv", ".svg", ".txt") and f.is_file():
                rel = f.relative_to(src)
                name = "__".join((src.name, *rel.parts))
                shutil.copyfile(f, out / name)
                index.append((name, _sha256(f)))
    with open(out / "index.csv", "w", newline="\n") as fh:
        fh.write("file,sha256\n")
        for name, digest in index:
            fh.write(f"{name},{digest}\n")
    update_manifest(out, "report", {"command": _command_line(argv), "inputs": [str(p) for p in args.inputs], "files": len(index)})
    print(f"{out}: {len(index)} files")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="optifinger", description="Simulated optical tactile finger: data, training, evaluation and streaming.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("--config", help="INI-style configuration file")
    p.add_argument("--seed", type=int, default=None, help="single source of all randomness (default 0)")
    p.add_argument("--threads", type=int, default=None, help="cap on BLAS worker threads")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="cmd", parser_class=_Parser)

    g = sub.add_parser("geom", help="coordinate conversions and surface grids")
    gs = g.add_subparsers(dest="geom_cmd", parser_class=_Parser, required=True)
    a2x = gs.add_parser("ab2xyz")
    a2x.add_argument("--a", type=float, required=True)
    a2x.add_argument("--b", type=float, required=True)
    x2a = gs.add_parser("xyz2ab")
    for k in ("x", "y", "z"):
        x2a.add_argument(f"--{k}", type=float, required=True)
    gr = gs.add_parser("grid")
    gr.add_argument("--n", type=int, required=True, help="lattice points along one side of the tip square")
    gr.add_argument("--out", required=True)

    s = sub.add_parser("simulate", help="generate indentation datasets")
    s.add_argument("--tips", default="hemisphere", help="comma-separated tip kinds, or '' for none")
    s.add_argument("--locations", type=int, default=100)
    s.add_argument("--multitouch", type=int, default=0, help="number of multitouch samples to add")
    s.add_argument("--out", default="data")

    t = sub.add_parser("train", help="train a network")
    t.add_argument("--task", choices=("multitask", "multitouch"), required=True)
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True)
    _schedule_flags(t)
    t.add_argument("--test-fraction", type=float, default=0.2)
    t.add_argument("--test-size", type=int, default=None, help="multitouch: number of held-out rows")

    e = sub.add_parser("eval", help="evaluate trained models")
    es = e.add_subparsers(dest="eval_cmd", parser_class=_Parser, required=True)
    e1 = es.add_parser("single")
    e1.add_argument("--model", required=True)
    e1.add_argument("--data", required=True)
    e1.add_argument("--report", required=True)
    e2 = es.add_parser("loo")
    e2.add_argument("--data-dir", required=True)
    e2.add_argument("--report", default=None)
    e2.add_argument("--test-fraction", type=float, default=0.2)
    _schedule_flags(e2)
    e3 = es.add_parser("multi")
    e3.add_argument("--model", required=True)
    e3.add_argument("--data", required=True)
    e3.add_argument("--report", default=None)

    st = sub.add_parser("stream", help="serve or record the frame stream")
    ss = st.add_subparsers(dest="stream_cmd", parser_class=_Parser, required=True)
    sv = ss.add_parser("serve")
    sv.add_argument("--host", default="127.0.0.1")
    sv.add_argument("--port", type=int, default=0)
    sv.add_argument("--mode", choices=("live", "replay"), default="live")
    sv.add_argument("--data", default=None)
    sv.add_argument("--rate-hz", type=float, default=60.0)
    sv.add_argument("--frames", type=int, default=None, help="stop after this many frames")
    sv.add_argument("--duration", type=float, default=None, help="stop after this many seconds")
    dp = ss.add_parser("dump")
    dp.add_argument("--connect", required=True, help="HOST:PORT")
    dp.add_argument("--n", type=int, default=None)
    dp.add_argument("--out", default=None)
    dp.add_argument("--timeout", type=float, default=None)

    r = sub.add_parser("report", help="bundle evaluation outputs into one directory")
    r.add_argument("inputs", nargs="+")
    r.add_argument("--out", required=True)
    return p


def _schedule_flags(p):
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--batch", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--lr-drop-epoch", type=int, default=None)
    p.add_argument("--lr-final", type=float, default=None)
    p.add_argument("--float64", action="store_true", help="train in double precision")


_COMMANDS = {
    "geom": _cmd_geom,
    "simulate": _cmd_simulate,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "stream": _cmd_stream,
    "report": _cmd_report,
}


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    if not argv:
        parser.print_help(sys.stderr)
        return EXIT_USAGE
    try:
        args = parser.parse_args(argv)
        if args.cmd is None:
            parser.print_help(sys.stderr)
            return EXIT_USAGE
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
        cfg = load_config(args.config, args.seed)
        if args.threads is not None:
            if args.threads < 1:
                raise UsageError("--threads must be positive")
            from threadpoolctl import threadpool_limits

            with threadpool_limits(limits=args.threads):
                return _COMMANDS[args.cmd](args, cfg, argv)
        return _COMMANDS[args.cmd](args, cfg, argv)
    except UsageError as exc:
        print(f"optifinger: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    except KeyboardInterrupt:
        return EXIT_RUNTIME
    except Exception as exc:  # noqa: BLE001 - reported, mapped to the runtime exit code
        log.debug("failure", exc_info=True)
        print(f"optifinger: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
