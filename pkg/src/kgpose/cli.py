"""Command-line entry point: ``kgpose {gen,train,infer,eval,gradcheck,render}``."""

from __future__ import annotations

import argparse
import csv
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import decode as D
from .checkpoint import load_checkpoint, save_checkpoint
from .config import RunConfig, load_config
from .data import (GeneratorConfig, generate_dataset, load_annotations, make_batch, pixel_mean,
                   read_dataset, read_mean, read_ppm, write_dataset, write_pgm, write_ppm)
from .errors import (CheckpointError, ConfigError, DimensionError, InvariantViolation,
                     NonFiniteError, ParseError)
from .metrics import EvalRecord, EmptyInputError, pck, pckh, pcp_strict, pdj_auc, write_report
from .network import FractalNet
from .gradcheck import TOLERANCE, run_network_suite, run_op_suite, tiny_network_config
from .projection import HeadConfig, ProjectionHead, verify_injected_gradient
from .skeleton import SKELETON
from .train import load_trunk, save_trunk, train_loop

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_IO = 3
EXIT_NUMERIC = 4
EXIT_CHECKPOINT = 5
EXIT_MISMATCH = 6
EXIT_INVARIANT = 7


class CommandError(Exception):
    def __init__(self, message, code):
        super().__init__(message)
        self.code = code


def _fail(message, code):
    raise CommandError(message, code)


def _config(path) -> RunConfig:
    if path is None:
        return RunConfig()
    try:
        return load_config(path)
    except FileNotFoundError:
        _fail(f"config file not found: {path}", EXIT_USAGE)


def _load_net(path) -> tuple[FractalNet, np.ndarray | None]:
    try:
        net = load_trunk(path)
        _, meta = load_checkpoint(path)
    except FileNotFoundError:
        _fail(f"checkpoint not found: {path}", EXIT_IO)
    except (CheckpointError, ConfigError, KeyError, ValueError) as exc:
        _fail(f"corrupt checkpoint {path}: {exc}", EXIT_CHECKPOINT)
    mean = np.array([float(v) for v in meta["mean"].split()]) if "mean" in meta else None
    return net, mean


# ------------------------------------------------------------------ gen


def cmd_gen(args):
    cfg = GeneratorConfig(image_size=args.size, distractors=args.distractors,
                          occluders=args.occluders)
    samples = generate_dataset(args.count, args.seed, cfg)
    try:
        write_dataset(args.out, samples)
    except OSError as exc:
        _fail(f"cannot write dataset to {args.out}: {exc}", EXIT_IO)
    print(f"wrote {len(samples)} images to {args.out}")


# ------------------------------------------------------------------ train


def _read_dataset(path):
    try:
        return read_dataset(path)
    except FileNotFoundError as exc:
        _fail(str(exc), EXIT_IO)
    except ParseError as exc:
        _fail(f"{path}: {exc}", EXIT_MISMATCH)


def cmd_train(args):
    cfg = _config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.steps is not None:
        cfg.steps = args.steps
    samples = _read_dataset(args.data)
    if not samples:
        _fail(f"dataset {args.data} is empty", EXIT_MISMATCH)
    mean = read_mean(args.data)
    if mean is None:
        mean = pixel_mean(samples)
    net_cfg = cfg.network()
    if samples[0].image.shape[-1] != net_cfg.input_size:
        _fail(f"images are {samples[0].image.shape[-1]}px, network expects {net_cfg.input_size}px",
              EXIT_MISMATCH)
    net = FractalNet(net_cfg, seed=cfg.seed)
    head = ProjectionHead(cfg.head(), seed=cfg.head_seed)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    log_path = args.log or str(out) + ".log.csv"
    run_log = str(out) + ".run.txt"
    ckpt_dir = args.epoch_checkpoints
    if ckpt_dir:
        os.makedirs(ckpt_dir, exist_ok=True)
    with open(run_log, "w") as fh:
        fh.write(cfg.to_text())
        fh.write(f"guidance = {'false' if args.no_guidance else 'true'}\n")
    dump_path = str(out) + ".nonfinite.ckpt"
    start = time.perf_counter()
    try:
        result = train_loop(samples, net, cfg.training(guidance=not args.no_guidance), head,
                            mean=mean, log_path=log_path, checkpoint_dir=ckpt_dir,
                            dump_path=dump_path)
    except NonFiniteError as exc:
        _fail(f"{exc}; state dumped to {dump_path}", EXIT_NUMERIC)
    mean_text = " ".join(repr(float(m)) for m in mean)
    save_trunk(out, net, {"mean": mean_text, "steps": str(len(result.log))})
    save_trunk_head(str(out) + ".head", head)
    elapsed = time.perf_counter() - start
    with open(run_log, "a") as fh:
        fh.write(f"# steps run: {len(result.log)}, seconds: {elapsed:.1f}\n")
    last = result.last
    print(f"trained {len(result.log)} steps; final total {last.get('total', float('nan')):.4g}; "
          f"checkpoint {out}")


def save_trunk_head(path, head):
    save_checkpoint(path, head.store.state(), {"kind": "projection_head"})


# ------------------------------------------------------------------ infer


def _decode_config(args):
    try:
        scales = tuple(float(s) for s in args.scales.split(",") if s.strip())
    except ValueError:
        _fail(f"bad --scales value {args.scales!r}", EXIT_USAGE)
    if not scales or any(s <= 0 for s in scales):
        _fail("--scales needs positive values", EXIT_USAGE)
    return D.DecodeConfig(scales=scales, flip=args.flip, nms=args.nms,
                          threshold=args.nms_threshold, radius=args.nms_radius)


def prediction_header(num_joints=SKELETON.num_joints):
    cols = ["image"]
    for j in range(num_joints):
        cols += [f"j{j}x", f"j{j}y", f"j{j}conf"]
    return cols


def cmd_infer(args):
    net, mean = _load_net(args.ckpt)
    try:
        records = load_annotations(Path(args.data) / "annotations.csv", net.config.num_joints)
    except FileNotFoundError as exc:
        _fail(str(exc), EXIT_IO)
    except ParseError as exc:
        _fail(str(exc), EXIT_MISMATCH)
    if mean is None:
        mean = read_mean(args.data)
    images = np.stack([read_ppm(p) for p, _ in records]) if records else None
    config = _decode_config(args)
    estimates = D.decode_images(images, D.net_predictor(net), config, mean) if records else []
    try:
        with open(args.out, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(prediction_header(net.config.num_joints))
            for (path, _), est in zip(records, estimates):
                row = [Path(path).name]
                for (x, y), c in zip(est.joints, est.confidence):
                    row += [repr(float(x)), repr(float(y)), repr(float(c))]
                w.writerow(row)
    except OSError as exc:
        _fail(f"cannot write {args.out}: {exc}", EXIT_IO)
    print(f"wrote {len(estimates)} predictions to {args.out}")


# ------------------------------------------------------------------ eval


def read_predictions(path, num_joints=SKELETON.num_joints):
    preds = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != prediction_header(num_joints):
            raise ParseError("unexpected prediction header", line=1)
        for line, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 1 + 3 * num_joints:
                raise ParseError(f"row has {len(row)} fields", line=line)
            vals = np.array([float(v) for v in row[1:]]).reshape(num_joints, 3)
            preds[Path(row[0]).stem] = vals[:, :2]
    return preds


METRICS = {
    "pck": (pck, 0.2),
    "pckh": (pckh, 0.5),
    "pcp": (pcp_strict, 0.5),
    "auc": (pdj_auc, None),
}


def cmd_eval(args):
    if args.metric not in METRICS:
        _fail(f"unknown metric {args.metric!r}; choose from {', '.join(METRICS)}", EXIT_USAGE)
    try:
        preds = read_predictions(args.pred)
        gts = load_annotations(args.gt, check_images=False)
    except FileNotFoundError as exc:
        _fail(str(exc), EXIT_IO)
    except (ParseError, ValueError) as exc:
        _fail(f"cannot parse input: {exc}", EXIT_MISMATCH)
    gt_by_id = {ann.image_id: ann for _, ann in gts}
    missing_pred = sorted(set(gt_by_id) - set(preds))
    missing_gt = sorted(set(preds) - set(gt_by_id))
    if missing_pred or missing_gt:
        parts = []
        if missing_pred:
            parts.append("no prediction for: " + ", ".join(missing_pred))
        if missing_gt:
            parts.append("no ground truth for: " + ", ".join(missing_gt))
        _fail("; ".join(parts), EXIT_MISMATCH)
    records = [EvalRecord(preds[i], gt_by_id[i].joints, gt_by_id[i].visibility)
               for i in sorted(gt_by_id)]
    fn, default_t = METRICS[args.metric]
    try:
        if args.metric == "auc":
            result = fn(records)
            total = result.auc
        else:
            t = args.threshold if args.threshold is not None else default_t
            if t <= 0:
                _fail("--threshold must be positive", EXIT_USAGE)
            result = fn(records, t)
            total = result.total
    except EmptyInputError as exc:
        _fail(str(exc), EXIT_MISMATCH)
    report = args.report or str(Path(args.pred).with_suffix("")) + f".{args.metric}.csv"
    try:
        write_report(report, result)
    except OSError as exc:
        _fail(f"cannot write {report}: {exc}", EXIT_IO)
    print(f"{args.metric} Total {100.0 * total:.1f} ({len(records)} images, "
          f"{result.excluded} excluded) report {report}")


# ------------------------------------------------------------------ gradcheck


def cmd_gradcheck(args):
    cfg = _config(args.config)
    seed = cfg.seed if args.seed is None else args.seed
    results = run_op_suite(seeds=args.seeds, base_seed=seed)
    results.append(run_network_suite(seeds=args.seeds, base_seed=seed))
    worst = max(results, key=lambda r: r.max_error)
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'} {r.name:<20} max rel error {r.max_error:.3e}")

    small = tiny_network_config()
    net = FractalNet(small, seed=seed, dtype=np.float64)
    head = ProjectionHead(HeadConfig.for_network(small), seed=seed + 1, dtype=np.float64)
    samples = generate_dataset(2, seed, GeneratorConfig(image_size=small.input_size))
    batch = make_batch(samples, pixel_mean(samples), small.heatmap_size, 1.0, np.float64)
    deviations = {}
    failed_identity = None
    for lam in (0.0, 0.3, 1.0):
        try:
            deviations[lam] = verify_injected_gradient(net, head, batch.images, batch.gt,
                                                       batch.weights, batch.knowledge, lam)
            print(f"PASS injected gradient lambda={lam:g} deviation {deviations[lam]:.3e}")
        except InvariantViolation as exc:
            failed_identity = f"injected gradient lambda={lam:g}: {exc}"
            print(f"FAIL {failed_identity}")
    if not worst.passed:
        _fail(f"gradient check failed; worst offender {worst.name} "
              f"(max rel error {worst.max_error:.3e} >= {TOLERANCE:g})", EXIT_INVARIANT)
    if failed_identity:
        _fail(failed_identity, EXIT_INVARIANT)
    print("all gradient checks passed")


# ------------------------------------------------------------------ render


def overlay_skeleton(image, joints, skeleton=SKELETON):
    """Copy of ``image`` with limbs drawn in white and joints in red."""
    out = np.array(image, dtype=np.float64, copy=True)
    size = out.shape[-1]
    for a, b in skeleton.limbs:
        p, q = joints[a], joints[b]
        n = int(max(abs(q[0] - p[0]), abs(q[1] - p[1]))) * 2 + 2
        for t in np.linspace(0.0, 1.0, n):
            x, y = np.rint(p + t * (q - p)).astype(int)
            if 0 <= x < size and 0 <= y < size:
                out[:, y, x] = 1.0
    for x, y in np.rint(joints).astype(int):
        if 0 <= x < size and 0 <= y < size:
            out[:, y, x] = (1.0, 0.0, 0.0)
    return out


def cmd_render(args):
    net, mean = _load_net(args.ckpt)
    try:
        image = read_ppm(args.image)
    except FileNotFoundError as exc:
        _fail(str(exc), EXIT_IO)
    except ParseError as exc:
        _fail(f"{args.image}: {exc}", EXIT_IO)
    if image.shape[-1] != net.config.input_size:
        _fail(f"image is {image.shape[-1]}px, network expects {net.config.input_size}px",
              EXIT_MISMATCH)
    x = image - mean[:, None, None] if mean is not None else image
    heatmaps, _ = net.forward(x[None], training=False)
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
        for s, stage in enumerate(heatmaps):
            for c in range(stage.shape[1]):
                write_pgm(out / f"stage{s}_ch{c:02d}.pgm", stage.data[0, c])
        est = D.heatmaps_to_pose(heatmaps[-1].data[0].astype(np.float64), D.PLAIN)
        write_ppm(out / "overlay.ppm", overlay_skeleton(image, est.joints))
    except OSError as exc:
        _fail(f"cannot write to {out}: {exc}", EXIT_IO)
    print(f"wrote {sum(h.shape[1] for h in heatmaps)} heatmaps and overlay to {out}")


# ------------------------------------------------------------------ parser


def build_parser():
    p = argparse.ArgumentParser(prog="kgpose", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate a synthetic stick-figure dataset")
    g.add_argument("--out", required=True)
    g.add_argument("--count", type=int, required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--size", type=int, default=64)
    g.add_argument("--distractors", action="store_true")
    g.add_argument("--occluders", action="store_true")
    g.set_defaults(func=cmd_gen)

    t = sub.add_parser("train", help="train a network on a dataset directory")
    t.add_argument("--config")
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--no-guidance", action="store_true")
    t.add_argument("--seed", type=int)
    t.add_argument("--steps", type=int)
    t.add_argument("--log")
    t.add_argument("--epoch-checkpoints", help="directory for per-epoch checkpoints")
    t.set_defaults(func=cmd_train)

    i = sub.add_parser("infer", help="predict joints for every image of a dataset")
    i.add_argument("--ckpt", required=True)
    i.add_argument("--data", required=True)
    i.add_argument("--out", required=True)
    i.add_argument("--scales", default="1.0")
    i.add_argument("--flip", action="store_true")
    i.add_argument("--nms", action="store_true", help="cross-heatmap suppression")
    i.add_argument("--nms-threshold", type=float, default=D.DecodeConfig.threshold)
    i.add_argument("--nms-radius", type=float, default=D.DecodeConfig.radius)
    i.add_argument("--seed", type=int, default=0, help="accepted for uniformity; inference is deterministic")
    i.set_defaults(func=cmd_infer)

    e = sub.add_parser("eval", help="score predictions against ground truth")
    e.add_argument("--pred", required=True)
    e.add_argument("--gt", required=True)
    e.add_argument("--metric", required=True)
    e.add_argument("--threshold", type=float)
    e.add_argument("--report")
    e.set_defaults(func=cmd_eval)

    c = sub.add_parser("gradcheck", help="finite-difference and injected-gradient checks")
    c.add_argument("--config")
    c.add_argument("--seed", type=int)
    c.add_argument("--seeds", type=int, default=20)
    c.set_defaults(func=cmd_gradcheck)

    r = sub.add_parser("render", help="export heatmaps and a skeleton overlay")
    r.add_argument("--ckpt", required=True)
    r.add_argument("--image", required=True)
    r.add_argument("--out", required=True)
    r.add_argument("--seed", type=int, default=0, help="accepted for uniformity; rendering is deterministic")
    r.set_defaults(func=cmd_render)
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    try:
        args.func(args)
    except CommandError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except CheckpointError as exc:
        print(f"checkpoint error: {exc}", file=sys.stderr)
        return EXIT_CHECKPOINT
    except (NonFiniteError, FloatingPointError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except InvariantViolation as exc:
        print(f"invariant violated: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    except DimensionError as exc:
        print(f"data mismatch: {exc}", file=sys.stderr)
        return EXIT_MISMATCH
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
