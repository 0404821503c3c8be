"""Command-line harness: simulate | dataset | baseline | score | render.

Every run resolves its full configuration (defaults, then --config file,
then explicit flags) and writes it into a JSON manifest next to the
artifacts, so any tensor on disk can be regenerated bit-identically from
its manifest alone. Exit codes: 0 success, 2 config error, 3 numerical
guard tripped, 4 I/O error.
"""

import argparse
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import dataset as ds
from . import graingrowth as gg
from . import metrics
from . import spinodal as sp
from . import tensorio

try:
    _N_CORES = len(os.sched_getaffinity(0))
except AttributeError:
    _N_CORES = os.cpu_count() or 1


class ConfigError(ValueError):
    pass


def _load_config(path):
    if path is None:
        return {}
    with open(path) as fh:
        doc = json.load(fh)
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: config must be a JSON object")
    if "params" in doc and "sim_kind" in doc:
        # a trajectory manifest doubles as a config
        return dict(doc["params"])
    return doc


def _resolve(defaults, config, args, keys):
    """defaults <- config file <- explicit CLI flags (flags win)."""
    merged = dict(defaults)
    for key in config:
        if key not in defaults:
            raise ConfigError(f"unknown config key {key!r}")
        merged[key] = config[key]
    for key in keys:
        val = getattr(args, key.replace("-", "_"), None)
        if val is not None:
            merged[key] = val
    return merged


def _parse_grid(text):
    try:
        h, w = (int(p) for p in str(text).lower().replace("x", ",").split(","))
        return h, w
    except ValueError as exc:
        raise ConfigError(f"bad grid spec {text!r}; expected HxW") from exc


def _parse_int_list(text):
    try:
        return [int(p) for p in str(text).split(",") if p != ""]
    except ValueError as exc:
        raise ConfigError(f"bad index list {text!r}") from exc


# ---------------------------------------------------------------------------
# simulate

_GRAIN_DEFAULTS = {
    "kind": "grain-growth", "count": 1, "grid": [64, 64], "seed": 0,
    "frames": 200, "n_grains": 100, "m": 1.0, "kappa": 1.0, "mobility": 1.0,
    "dx": 1.0, "dy": 1.0, "dt": 0.1, "record_stride": 10, "gamma_c": 1.5,
    "rescan_interval": 100,
}

_SPINODAL_DEFAULTS = {
    "kind": "spinodal", "count": 1, "grid": [64, 64], "seed": 0,
    "frames": 100, "omega": 0.27397, "epsilon": 0.1682, "mobility": 1.0,
    "rt": 0.1, "c0": "mix", "noise_amp": 0.05, "dx": 1.0, "dy": 1.0,
    "frame_interval": 1500.0, "dt_max": 1.0,
}


def _grain_params(cfg, seed):
    return gg.GrainParams(
        n_grains=int(cfg["n_grains"]), m=cfg["m"], kappa=cfg["kappa"],
        mobility=cfg["mobility"], dx=cfg["dx"], dy=cfg["dy"], dt=cfg["dt"],
        grid=tuple(cfg["grid"]), frames_to_record=int(cfg["frames"]),
        record_stride=int(cfg["record_stride"]), seed=seed,
        gamma_c=cfg["gamma_c"], rescan_interval=int(cfg["rescan_interval"]),
    )


def _resolve_c0(policy, seed):
    if policy == "mix":
        rng = np.random.default_rng([seed, 17])
        if rng.random() < 0.5:
            return 0.5
        return float(rng.uniform(0.30, 0.40))
    return float(policy)


def _spinodal_params(cfg, seed):
    return sp.SpinodalParams(
        omega=cfg["omega"], epsilon=cfg["epsilon"], mobility=cfg["mobility"],
        rt=cfg["rt"], c0=_resolve_c0(cfg["c0"], seed), noise_amp=cfg["noise_amp"],
        dx=cfg["dx"], dy=cfg["dy"], grid=tuple(cfg["grid"]), seed=seed,
        frame_interval=cfg["frame_interval"], frames_to_record=int(cfg["frames"]),
        dt_max=cfg["dt_max"],
    )


def _simulate_one(cfg, seed):
    if cfg["kind"] == "grain-growth":
        traj = gg.simulate_grain_growth(_grain_params(cfg, seed))
    else:
        traj = sp.simulate_spinodal(_spinodal_params(cfg, seed))
    return traj.frames.astype("<f4")


def cmd_simulate(args):
    cfg = _resolve(
        dict(_GRAIN_DEFAULTS if args.kind == "grain-growth" else _SPINODAL_DEFAULTS,
             kind=args.kind),
        _load_config(args.config), args,
        [k for k in _GRAIN_DEFAULTS | _SPINODAL_DEFAULTS if k != "kind"],
    )
    if args.grid is not None:
        cfg["grid"] = list(_parse_grid(args.grid))
    else:
        cfg["grid"] = list(cfg["grid"]) if not isinstance(cfg["grid"], str) \
            else list(_parse_grid(cfg["grid"]))
    if cfg["kind"] not in ("grain-growth", "spinodal"):
        raise ConfigError(f"unknown simulation kind {cfg['kind']!r}")
    count = int(cfg["count"])
    if count < 1:
        raise ConfigError("count must be >= 1")
    seeds = [int(cfg["seed"]) + i for i in range(count)]
    for s in seeds:  # validate every parameter set before any file is written
        if cfg["kind"] == "grain-growth":
            _grain_params(cfg, s)
        else:
            _spinodal_params(cfg, s)

    workers = min(args.parallel or _N_CORES, count)
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            stacks = list(pool.map(_simulate_one, [cfg] * count, seeds))
    else:
        stacks = [_simulate_one(cfg, s) for s in seeds]
    stack = np.stack(stacks)
    b, t, h, w = stack.shape
    dims = (b, t, 1, h, w)

    os.makedirs(args.out, exist_ok=True)
    tensor_path = os.path.join(args.out, "trajectories.msev")
    manifest_path = os.path.join(args.out, "manifest.json")
    tensorio.write_tensor(tensor_path, dims, stack)
    frame_interval = (cfg["record_stride"] * cfg["dt"]
                      if cfg["kind"] == "grain-growth" else cfg["frame_interval"])
    tensorio.write_manifest(manifest_path, dims, cfg["seed"], cfg,
                            frame_interval, cfg["kind"], seeds=seeds)
    print(f"wrote {tensor_path} dims={dims}")
    return 0


# ---------------------------------------------------------------------------
# dataset

def cmd_dataset(args):
    cfg = _resolve(
        {"input_len": 10, "output_len": 90, "stride": 10, "test_stride": 10,
         "train": 0, "val": 0, "test": 0},
        _load_config(args.config), args,
        ["input_len", "output_len", "stride", "test_stride", "train", "val", "test"],
    )
    if not args.traj:
        raise ConfigError("at least one --traj tensor is required")
    frames = []
    for path in args.traj:
        dims, payload = tensorio.read_tensor(path)
        frames.extend(payload[b] for b in range(dims[0]))
    if not frames:
        raise ConfigError("no trajectories found")
    n_total = len(frames)
    splits = ds.split_trajectory_ids(n_total, int(cfg["train"]), int(cfg["val"]),
                                     int(cfg["test"]))
    spec = ds.ClipSpec(int(cfg["input_len"]), int(cfg["output_len"]), int(cfg["stride"]))
    test_spec = ds.ClipSpec(spec.input_len, spec.output_len, int(cfg["test_stride"]))

    os.makedirs(args.out, exist_ok=True)
    counts = {}
    for split, ids in splits.items():
        if not ids:
            continue
        split_spec = test_spec if split == "test" else spec
        frags = [ds.build_clips(frames[i], i, split_spec) for i in ids]
        if not any(len(f) for f in frags):
            counts[split] = 0
            continue
        clipset = ds.concat_clips(frags, split)
        ds.save_clip_dataset(
            clipset,
            os.path.join(args.out, f"{split}.inputs.msev"),
            os.path.join(args.out, f"{split}.targets.msev"),
            os.path.join(args.out, f"{split}.manifest.json"),
        )
        counts[split] = len(clipset)
        print(f"{split}: {len(clipset)} clips out of {len(ids)} trajectories")
    if not counts:
        raise ConfigError("all requested splits are empty")
    return 0


# ---------------------------------------------------------------------------
# baseline

def cmd_baseline(args):
    if args.kind != "persistence":
        raise ConfigError(f"unknown baseline kind {args.kind!r}")
    dims, inputs = tensorio.read_tensor(args.inputs)
    n, t_in, c, h, w = dims
    horizon = int(args.output_len)
    if horizon < 1:
        raise ConfigError("output length must be >= 1")
    preds = np.repeat(inputs[:, -1:, :, :, :], horizon, axis=1)
    os.makedirs(os.path.dirname(os.path.abspath(args.out)), exist_ok=True)
    tensorio.write_tensor(args.out, preds.shape, preds)
    tensorio.write_manifest(
        args.out + ".json", preds.shape, None,
        {"baseline": "persistence", "inputs": os.path.abspath(args.inputs),
         "output_len": horizon},
        None, "prediction",
    )
    print(f"wrote {args.out} dims={preds.shape}")
    return 0


# ---------------------------------------------------------------------------
# score

def cmd_score(args):
    pdims, pred = tensorio.read_tensor(args.pred)
    tdims, truth = tensorio.read_tensor(args.truth)
    if pdims != tdims:
        raise ConfigError(f"prediction dims {pdims} do not match truth {tdims}")
    seg = metrics.SegParams(threshold=args.threshold, connectivity=args.connectivity,
                            periodic=not args.no_periodic, min_area=args.min_area)
    gsd_frames = _parse_int_list(args.gsd_frames) if args.gsd_frames else None
    os.makedirs(args.out, exist_ok=True)
    rmse_acc = {}
    ssim_acc = {}
    for i in range(pdims[0]):
        report = metrics.score_prediction(
            pred[i, :, 0].astype(np.float64), truth[i, :, 0].astype(np.float64),
            every=args.every, seg=seg, gsd_frames=gsd_frames,
            mean_area_every=args.mean_area_every,
            grain_stats=not args.no_grain_stats,
        )
        report.save_json(os.path.join(args.out, f"clip{i:04d}.report.json"))
        if args.csv:
            report.write_series_csv(os.path.join(args.out, f"clip{i:04d}.series.csv"))
        for k, v in report.rmse_series:
            rmse_acc.setdefault(k, []).append(v)
        for k, v in report.ssim_series:
            ssim_acc.setdefault(k, []).append(v)
    mean_doc = {
        "n_clips": int(pdims[0]),
        "every": args.every,
        "rmse_series": [[k, float(np.mean(rmse_acc[k]))] for k in sorted(rmse_acc)],
        "ssim_series": [[k, float(np.mean(ssim_acc[k]))] for k in sorted(ssim_acc)],
    }
    with open(os.path.join(args.out, "mean.report.json"), "w") as fh:
        json.dump(mean_doc, fh, indent=2)
        fh.write("\n")
    print(f"scored {pdims[0]} clips -> {args.out}")
    return 0


# ---------------------------------------------------------------------------
# render

def cmd_render(args):
    dims, payload = tensorio.read_tensor(args.tensor)
    b, t = dims[0], dims[1]
    clips = _parse_int_list(args.clips) if args.clips else list(range(b))
    frames = _parse_int_list(args.frames)
    for i in clips:
        if not 0 <= i < b:
            raise ConfigError(f"clip {i} outside tensor with {b} clips")
    for k in frames:
        if not 0 <= k < t:
            raise ConfigError(f"frame {k} outside trajectory of {t} frames")
    clip_range = None
    if args.clip_range:
        parts = args.clip_range.split(",")
        if len(parts) != 2:
            raise ConfigError(f"bad clip range {args.clip_range!r}; expected LO,HI")
        clip_range = (float(parts[0]), float(parts[1]))
    os.makedirs(args.out, exist_ok=True)
    count = 0
    for i in clips:
        for k in frames:
            path = os.path.join(args.out, f"clip{i:03d}_frame{k:03d}.pgm")
            tensorio.export_image(payload[i, k, 0], path, clip_range)
            count += 1
    print(f"wrote {count} images -> {args.out}")
    return 0


# ---------------------------------------------------------------------------
# entry point

def _build_parser():
    parser = argparse.ArgumentParser(prog="msev",
                                     description="phase-field microstructure harness")
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="generate trajectories")
    sim.add_argument("--kind", required=True, choices=["grain-growth", "spinodal"])
    sim.add_argument("--config")
    sim.add_argument("--out", required=True)
    sim.add_argument("--seed", type=int)
    sim.add_argument("--count", type=int)
    sim.add_argument("--grid")
    sim.add_argument("--frames", type=int)
    sim.add_argument("--parallel", type=int, default=None)
    sim.add_argument("--n-grains", type=int)
    sim.add_argument("--m", type=float)
    sim.add_argument("--kappa", type=float)
    sim.add_argument("--mobility", type=float)
    sim.add_argument("--dx", type=float)
    sim.add_argument("--dy", type=float)
    sim.add_argument("--dt", type=float)
    sim.add_argument("--record-stride", type=int)
    sim.add_argument("--gamma-c", type=float)
    sim.add_argument("--rescan-interval", type=int)
    sim.add_argument("--omega", type=float)
    sim.add_argument("--epsilon", type=float)
    sim.add_argument("--rt", type=float)
    sim.add_argument("--c0")
    sim.add_argument("--noise-amp", type=float)
    sim.add_argument("--frame-interval", type=float)
    sim.add_argument("--dt-max", type=float)
    sim.set_defaults(func=cmd_simulate)

    dat = sub.add_parser("dataset", help="window trajectories into clips")
    dat.add_argument("--traj", action="append", required=True,
                     help="trajectory tensor (repeatable)")
    dat.add_argument("--config")
    dat.add_argument("--out", required=True)
    dat.add_argument("--input-len", type=int)
    dat.add_argument("--output-len", type=int)
    dat.add_argument("--stride", type=int)
    dat.add_argument("--test-stride", type=int)
    dat.add_argument("--train", type=int)
    dat.add_argument("--val", type=int)
    dat.add_argument("--test", type=int)
    dat.set_defaults(func=cmd_dataset)

    base = sub.add_parser("baseline", help="reference forecasts")
    base.add_argument("--kind", default="persistence")
    base.add_argument("--inputs", required=True)
    base.add_argument("--output-len", type=int, required=True)
    base.add_argument("--out", required=True)
    base.set_defaults(func=cmd_baseline)

    sco = sub.add_parser("score", help="evaluate predictions against truth")
    sco.add_argument("--pred", required=True)
    sco.add_argument("--truth", required=True)
    sco.add_argument("--out", required=True)
    sco.add_argument("--every", type=int, default=5)
    sco.add_argument("--gsd-frames")
    sco.add_argument("--mean-area-every", type=int, default=10)
    sco.add_argument("--threshold", type=float, default=0.5)
    sco.add_argument("--connectivity", type=int, default=4)
    sco.add_argument("--min-area", type=int, default=4)
    sco.add_argument("--no-periodic", action="store_true")
    sco.add_argument("--no-grain-stats", action="store_true")
    sco.add_argument("--csv", action="store_true")
    sco.set_defaults(func=cmd_score)

    ren = sub.add_parser("render", help="export frames as PGM images")
    ren.add_argument("--tensor", required=True)
    ren.add_argument("--frames", required=True)
    ren.add_argument("--clips")
    ren.add_argument("--clip-range")
    ren.add_argument("--out", required=True)
    ren.set_defaults(func=cmd_render)
    return parser


def main(argv=None):
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if exc.code is not None else 0
    try:
        return args.func(args)
    except (ConfigError, ValueError, KeyError, json.JSONDecodeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (gg.NumericalInstabilityError, sp.NumericalInstabilityError) as exc:
        print(f"numerical guard tripped: {exc}", file=sys.stderr)
        return 3
    except (OSError, tensorio.TensorFormatError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
