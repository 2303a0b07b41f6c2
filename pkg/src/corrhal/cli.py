"""Command-line entry point: ``corrhal {synth-gen,train,infer,pose,report}``.

Every command takes ``--seed``; failures exit non-zero and print an error
JSON ``{code, message, context}`` on stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
import time
from pathlib import Path

import numpy as np
import torch

from . import evaluation as ev
from .corrmap import read_maps, write_maps, write_pgm
from .errors import CorrhalError, EmptyBatch, EmptyDataset, FormatError, InvalidConfig
from .geometry import MapFrame, pose_error
from .net import load_checkpoint, save_checkpoint
from .pose import FAILED, GncSchedule, PoseConfig, estimate
from .synth import PairConfig, load_pair, make_pairs, write_dataset
from .train import PairSample, TrainConfig, train

log = logging.getLogger("corrhal")


def _load_json(path) -> dict:
    if not path:
        return {}
    with open(path) as fh:
        return json.load(fh)


def _manifest(data_dir) -> dict:
    path = Path(data_dir) / "manifest.json"
    if not path.exists():
        raise EmptyDataset("dataset has no manifest", path=str(path))
    return json.loads(path.read_text())


def _pair_ids(data_dir, split=None, pair=None) -> list[str]:
    entries = _manifest(data_dir)["pairs"]
    if pair:
        ids = [e["id"] for e in entries if e["id"] == pair]
        if not ids:
            raise InvalidConfig("unknown pair id", pair=pair)
        return ids
    return [e["id"] for e in entries if split is None or e["split"] == split]


def cmd_synth_gen(args) -> None:
    cfg_d = _load_json(args.config)
    counts = {"train": cfg_d.pop("n_train", 40), "val": cfg_d.pop("n_val", 8), "test": cfg_d.pop("n_test", 16)}
    cfg = PairConfig.from_dict({**PairConfig().to_dict(), **cfg_d})
    pairs, splits = [], {}
    for k, (split, n) in enumerate(counts.items()):
        ps = make_pairs(n, args.seed * 3 + k, cfg, prefix=f"{split}-")
        pairs.extend(ps)
        splits.update({p.pair_id: split for p in ps})
    write_dataset(pairs, cfg, args.out, splits)
    print(json.dumps({"pairs": len(pairs), **counts, "out": str(args.out)}))


def cmd_train(args) -> None:
    overrides = {"seed": args.seed, "gamma": args.gamma}
    d = _load_json(args.config)
    d.update({k: v for k, v in overrides.items() if v is not None})
    cfg = TrainConfig.from_dict(d)
    tr = [PairSample.from_pair(load_pair(Path(args.data) / "pairs" / i)) for i in _pair_ids(args.data, "train")]
    va = [PairSample.from_pair(load_pair(Path(args.data) / "pairs" / i)) for i in _pair_ids(args.data, "val")]
    if not tr:
        raise EmptyDataset("no training pairs in the dataset", data=str(args.data))
    res = train(cfg, tr, va)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(res.net, out / "checkpoint.bin", {"gamma": cfg.gamma, "best_epoch": res.best_epoch})
    (out / "metrics.csv").write_text(res.metrics_csv())
    print(json.dumps({"checkpoint": str(out / "checkpoint.bin"), "best_epoch": res.best_epoch}))


def cmd_infer(args) -> None:
    net, meta = load_checkpoint(args.ckpt)
    gamma = args.gamma if args.gamma is not None else meta.get("gamma", 0.5)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ids = _pair_ids(args.data, args.split, args.pair)
    for pid in ids:
        pair = load_pair(Path(args.data) / "pairs" / pid)
        kp = pair.keypoints
        if len(kp) == 0:
            raise EmptyBatch("pair has no valid keypoints", pair=pid)
        maps = net.predict(pair.source.image, pair.target.image, kp.p_s, gamma)
        frame = maps[0].frame
        stack = np.stack([m.values for m in maps])
        write_maps(out / f"{pid}.maps", stack, frame)
        for i in range(min(args.previews, len(maps))):
            write_pgm(out / f"{pid}_{i:03d}.pgm", stack[i])
    print(json.dumps({"pairs": len(ids), "out": str(out)}))


def _pose_config(d: dict, seed: int) -> PoseConfig:
    sched = GncSchedule(**d.get("schedule", {}))
    return PoseConfig(
        max_iters=int(d.get("max_iters", 5000)),
        top_fraction=float(d.get("top_fraction", 0.2)),
        threshold=d.get("threshold"),
        schedule=sched,
        seed=seed,
    )


def cmd_pose(args) -> None:
    cfg = _pose_config(_load_json(args.config), args.seed or 0)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    maps_dir = Path(args.maps)
    ids = _pair_ids(args.data, args.split, args.pair)
    for pid in ids:
        map_file = maps_dir / f"{pid}.maps"
        if not map_file.exists():
            raise FormatError("missing maps for pair", pair=pid, path=str(map_file))
        maps, frame = read_maps(map_file)
        pair = load_pair(Path(args.data) / "pairs" / pid)
        kp = pair.keypoints
        if len(maps) != len(kp):
            raise FormatError("map count does not match keypoints", pair=pid)
        t0 = time.perf_counter()
        est = estimate(maps, kp.p_s, kp.d_s, pair.source.camera, pair.target.camera, frame, cfg)
        rec = {"pair": pid, **est.to_dict()}
        if est.ok:
            r, t = pose_error(est.pose, pair.pose_ts)
            rec["rot_err_deg"], rec["trans_err"] = r, t
        if args.timing:
            rec["seconds"] = round(time.perf_counter() - t0, 4)
        (out / f"{pid}.json").write_text(json.dumps(rec, indent=1, sort_keys=True))
    print(json.dumps({"pairs": len(ids), "out": str(out)}))


def cmd_report(args) -> None:
    manifest = _manifest(args.data)
    cfg = PairConfig.from_dict(manifest["config"])
    ids = _pair_ids(args.data, args.split)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    all_maps, gts, labels, frame = [], [], [], None
    errors, overlaps = [], []
    for pid in ids:
        pair = load_pair(Path(args.data) / "pairs" / pid)
        if args.maps:
            map_file = Path(args.maps) / f"{pid}.maps"
            if map_file.exists():
                maps, frame = read_maps(map_file)
                all_maps.append(maps)
                gts.append(pair.keypoints.gt)
                labels.extend(pair.keypoints.labels.tolist())
        if args.results:
            res_file = Path(args.results) / f"{pid}.json"
            if res_file.exists():
                rec = json.loads(res_file.read_text())
                errors.append(None if rec["status"] == FAILED else (rec["rot_err_deg"], rec["trans_err"]))
                overlaps.append(pair.overlap)
    written = []
    if frame is not None:
        maps = np.concatenate(all_maps)
        gt = np.concatenate(gts)
        nre = ev.nre_histogram(maps, gt, labels, frame)
        arg = ev.argmax_error_histogram(maps, gt, labels, frame, seed=args.seed or 0)
        (out / "histograms.csv").write_text(ev.histograms_csv(nre, arg))
        (out / "summary.csv").write_text(ev.summary_csv(nre, arg))
        written += ["histograms.csv", "summary.csv"]
    if errors:
        scale = cfg.scene.scale
        thresholds = [(args.tau_t_frac * scale, args.tau_r)]
        curves = {th: ev.pose_precision_curve(errors, overlaps, *th) for th in thresholds}
        (out / "pose_curve.csv").write_text(ev.curve_csv(curves))
        written.append("pose_curve.csv")
    print(json.dumps({"written": written, "out": str(out)}))


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="corrhal", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="JSON config file")
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--out", required=True)
        return sp

    sp = common(sub.add_parser("synth-gen", help="generate a synthetic dataset"))
    sp.set_defaults(func=cmd_synth_gen)

    sp = common(sub.add_parser("train", help="train the network"))
    sp.add_argument("--data", required=True)
    sp.add_argument("--gamma", type=float)
    sp.set_defaults(func=cmd_train, seed=None)

    sp = common(sub.add_parser("infer", help="predict correspondence maps"))
    sp.add_argument("--ckpt", required=True)
    sp.add_argument("--data", required=True)
    sp.add_argument("--pair")
    sp.add_argument("--split", default="test")
    sp.add_argument("--gamma", type=float)
    sp.add_argument("--previews", type=int, default=2, help="graymap previews per pair")
    sp.set_defaults(func=cmd_infer)

    sp = common(sub.add_parser("pose", help="estimate poses from maps"))
    sp.add_argument("--maps", required=True)
    sp.add_argument("--data", required=True)
    sp.add_argument("--pair")
    sp.add_argument("--split", default="test")
    sp.add_argument("--timing", action="store_true", help="record wall time in the result JSON")
    sp.set_defaults(func=cmd_pose)

    sp = common(sub.add_parser("report", help="write evaluation tables"))
    sp.add_argument("--data", required=True)
    sp.add_argument("--maps")
    sp.add_argument("--results")
    sp.add_argument("--split", default="test")
    sp.add_argument("--tau-r", type=float, default=20.0)
    sp.add_argument("--tau-t-frac", type=float, default=0.05, help="translation threshold as a fraction of scene scale")
    sp.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    torch.set_num_threads(1)
    try:
        args.func(args)
    except CorrhalError as e:
        err = {"code": e.code, "message": str(e), "context": {k: _jsonable(v) for k, v in e.context.items()}}
        print(json.dumps(err), file=sys.stderr)
        return 2
    except OSError as e:
        err = {"code": "io_error", "message": str(e), "context": {"path": _jsonable(e.filename)}}
        print(json.dumps(err), file=sys.stderr)
        return 1
    except (ValueError, KeyError) as e:
        print(json.dumps({"code": "invalid_input", "message": str(e), "context": {}}), file=sys.stderr)
        return 1
    return 0


def _jsonable(v):
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (np.floating, float)):
        return float(v) if math.isfinite(v) else None
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, (str, int, bool)) or v is None:
        return v
    return str(v)


if __name__ == "__main__":
    sys.exit(main())
