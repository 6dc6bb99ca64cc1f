"""``lavernet`` command line: degrade, infer, eval, train, inspect, gradcheck.

Every command writes a run manifest (argv, config, seed, version and
SHA-256 of inputs and outputs). ``LAVERNET_THREADS`` caps BLAS threads;
``LAVERNET_THREADS=1`` is the bit-reproducible mode.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from contextlib import nullcontext
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import __version__
from .accounting import count_flops, count_params, efficiency_table, format_table
from .checkpoint import CheckpointError, load_checkpoint
from .degradation import build_schedule, degrade_frame, parse_combo
from .frames import FrameError, frame_name, iter_frames, list_frames, read_frames, write_frame
from .gradcheck import GRADCHECK_CONFIG, gradcheck
from .metrics import evaluate_video
from .model import ModelConfig, init_params, lavernet_step
from .tensor import Tensor, no_grad
from .train import TrainConfig, config_dict, train

log = logging.getLogger("lavernet")
MAX_SEED = 2 ** 64 - 1


class CommandError(RuntimeError):
    pass


@dataclass
class RunManifest:
    command: str
    argv: list[str]
    seed: int | None
    config: dict
    version: str = __version__
    threads: str | None = field(default_factory=lambda: os.environ.get("LAVERNET_THREADS"))
    inputs: dict[str, str] = field(default_factory=dict)
    outputs: dict[str, str] = field(default_factory=dict)

    def hash_inputs(self, paths, root: Path) -> None:
        self.inputs.update({_rel(p, root): sha256_file(p) for p in paths})

    def hash_outputs(self, paths, root: Path) -> None:
        self.outputs.update({_rel(p, root): sha256_file(p) for p in paths})

    def write(self, path: Path) -> None:
        path.write_text(json.dumps(asdict(self), indent=2, sort_keys=True) + "\n")


def _rel(path: Path, root: Path) -> str:
    try:
        return str(Path(path).relative_to(root))
    except ValueError:
        return str(path)


def sha256_file(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


# -- argument types -----------------------------------------------------------

def seed_type(text: str) -> int:
    value = int(text, 0)
    if not 0 <= value <= MAX_SEED:
        raise argparse.ArgumentTypeError(f"seed must be an unsigned 64-bit integer, got {text}")
    return value


def resolution_type(text: str) -> tuple[int, int]:
    try:
        w, h = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"resolution must look like 856x480, got {text!r}") from None
    if w < 1 or h < 1:
        raise argparse.ArgumentTypeError("resolution must be positive")
    return w, h


def combo_type(text: str) -> tuple[str, ...]:
    try:
        return parse_combo(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return value


# -- commands -----------------------------------------------------------------

def cmd_degrade(args) -> int:
    out = _require_dir(args.out)
    paths = list_frames(args.inp)
    schedule = build_schedule(len(paths), args.interval, args.combo, args.seed)
    written = []
    for i, (path, frame) in enumerate(iter_frames(args.inp)):
        target = out / path.name
        write_frame(target, degrade_frame(frame.astype(np.float64), i, schedule))
        written.append(target)
    schedule.save(out / "schedule.json")
    written.append(out / "schedule.json")
    manifest = RunManifest("degrade", args.argv, args.seed, {"schedule": schedule.to_json()})
    manifest.hash_inputs(paths, Path(args.inp))
    manifest.hash_outputs(written, out)
    manifest.write(out / "manifest.json")
    print(f"degraded {len(paths)} frames into {len(schedule.segments)} segments -> {out}")
    return 0


def _pad_to_multiple(frame: np.ndarray, r: int) -> np.ndarray:
    h, w = frame.shape[-2:]
    ph, pw = (-h) % r, (-w) % r
    if not (ph or pw):
        return frame
    mode = "reflect" if min(h, w) > max(ph, pw) else "symmetric"
    return np.pad(frame, ((0, 0), (0, ph), (0, pw)), mode=mode)


def infer_stream(params, paths_and_frames, out_dir: Path):
    """Restore frames one at a time, holding only the propagation state."""
    r = params.config.downsample
    state = f_prev = None
    with no_grad():
        for i, (path, frame) in enumerate(paths_and_frames):
            h, w = frame.shape[-2:]
            x = Tensor(_pad_to_multiple(frame, r).astype(params.dtype, copy=False))
            y, f_prev, state = lavernet_step(x, state, f_prev, params)
            target = out_dir / (path.name if path is not None else frame_name(i))
            write_frame(target, y.data[:, :h, :w])
            yield target


def cmd_infer(args) -> int:
    if not args.ckpt:
        raise CommandError("--ckpt is required")
    params = load_checkpoint(args.ckpt)
    out = _require_dir(args.out)
    paths = list_frames(args.inp)
    written = list(infer_stream(params, iter_frames(args.inp), out))
    manifest = RunManifest("infer", args.argv, None, params.config.to_dict())
    manifest.hash_inputs([Path(args.ckpt)] + paths, Path(args.inp))
    manifest.hash_outputs(written, out)
    manifest.write(out / "manifest.json")
    print(f"restored {len(written)} frames -> {out}")
    return 0


def _flat_flops(config: ModelConfig, h: int, w: int) -> dict[str, int]:
    table = count_flops(config, h, w)
    return {**table.modules, "total": table.total}


def cmd_eval(args) -> int:
    if not args.ref:
        raise CommandError("--ref (ground-truth frame directory) is required")
    pred_paths, gt_paths = list_frames(args.inp), list_frames(args.ref)
    if len(pred_paths) != len(gt_paths):
        raise CommandError(f"frame count mismatch: {len(pred_paths)} predicted vs {len(gt_paths)} reference")
    pred, gt = read_frames(args.inp), read_frames(args.ref)
    if pred.shape != gt.shape:
        raise CommandError(f"resolution mismatch: {pred.shape[-1]}x{pred.shape[-2]} vs {gt.shape[-1]}x{gt.shape[-2]}")
    report = evaluate_video(pred.astype(np.float64), gt.astype(np.float64))
    if args.ckpt:
        cfg = load_checkpoint(args.ckpt).config
        report.config = cfg.to_dict()
        report.params = count_params(cfg)
        h, w = gt.shape[-2:]
        if h % cfg.downsample == 0 and w % cfg.downsample == 0:
            report.flops = _flat_flops(cfg, h, w)
    payload = report.to_json()
    _emit(payload, args)
    manifest = RunManifest("eval", args.argv, None, report.config or {})
    manifest.hash_inputs(pred_paths, Path(args.inp))
    manifest.hash_inputs(gt_paths, Path(args.ref).parent)
    _finish_manifest(manifest, args)
    if args.report:
        print(f"mean PSNR {report.mean_psnr:.4f} dB  mean SSIM {report.mean_ssim:.6f}")
    return 0


def load_dataset(root: str | Path) -> list[np.ndarray]:
    """Every sub-directory of PNGs is one clip; a flat directory is a single clip."""
    root = Path(root)
    subdirs = sorted((p for p in root.iterdir() if p.is_dir()), key=lambda p: p.name.encode("utf-8"))
    if not subdirs:
        return [read_frames(root)]
    return [read_frames(d) for d in subdirs]


def cmd_train(args) -> int:
    out = _require_dir(args.out)
    if not args.inp:
        raise CommandError("--in (training clip root) is required")
    dataset = load_dataset(args.inp)
    seed = args.seed if args.seed is not None else 0
    model_cfg = ModelConfig.variant(args.variant)
    cfg = TrainConfig(lr_init=args.lr, total_iters=args.iters, crop=args.crop, clip_frames=args.frames,
                      seed=seed, interval=args.interval, combo=args.combo)
    params = init_params(model_cfg, seed=seed % 2 ** 32)
    result = train(params, cfg, dataset=dataset, out_dir=out)
    manifest = RunManifest("train", args.argv, seed, {"model": model_cfg.to_dict(), "train": config_dict(cfg)})
    manifest.hash_outputs([out / "loss.csv", out / "checkpoint.lvnt"], out)
    manifest.write(out / "manifest.json")
    print(f"trained {cfg.total_iters} iterations; loss {result.losses[0]:.5f} -> {result.losses[-1]:.5f}")
    return 0


def cmd_inspect(args) -> int:
    cfg = ModelConfig.variant(args.variant)
    w, h = args.resolution
    report = efficiency_table(cfg, h, w)
    print(format_table(report))
    if args.report:
        Path(args.report).write_text(json.dumps(report, indent=2) + "\n")
    _finish_manifest(RunManifest("inspect", args.argv, None, cfg.to_dict()), args)
    return 0


def cmd_gradcheck(args) -> int:
    seed = args.seed if args.seed is not None else 0
    report = gradcheck(GRADCHECK_CONFIG, seed=seed % 2 ** 32)
    ok = report.passed()
    print(f"worst relative error {report.max_rel_error:.3e} at {report.worst_param} "
          f"over {report.checked} entries: {'PASS' if ok else 'FAIL'}")
    if args.report:
        Path(args.report).write_text(json.dumps({
            "max_rel_error": report.max_rel_error, "worst_param": report.worst_param,
            "checked": report.checked, "passed": ok,
            "entries": [dict(zip(("param", "index", "analytic", "numeric", "rel_error"), e))
                        for e in report.entries]}, indent=2) + "\n")
    _finish_manifest(RunManifest("gradcheck", args.argv, seed, GRADCHECK_CONFIG.to_dict()), args)
    return 0 if ok else 1


# -- plumbing -----------------------------------------------------------------

def _require_dir(path) -> Path:
    if not path:
        raise CommandError("--out is required")
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _emit(payload: dict, args) -> None:
    text = json.dumps(payload, indent=2) + "\n"
    if args.report:
        Path(args.report).write_text(text)
    else:
        sys.stdout.write(text)


def _finish_manifest(manifest: RunManifest, args) -> None:
    """Commands without an output directory put the manifest beside ``--report``."""
    if args.report:
        report = Path(args.report)
        manifest.hash_outputs([report], report.parent)
        manifest.write(report.with_name(report.name + ".manifest.json"))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lavernet", description="LaverNet video restoration toolkit")
    parser.add_argument("--version", action="version", version=f"lavernet {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, *flags):
        if "in" in flags:
            p.add_argument("--in", dest="inp", help="input frame directory")
        if "out" in flags:
            p.add_argument("--out", help="output directory")
        if "ckpt" in flags:
            p.add_argument("--ckpt", help="checkpoint file (.lvnt)")
        if "report" in flags:
            p.add_argument("--report", help="write the JSON report here")
        if "seed" in flags:
            p.add_argument("--seed", type=seed_type, default=None, help="unsigned 64-bit seed")
        if "schedule" in flags:
            p.add_argument("--combo", type=combo_type, default=("noise", "blur"),
                           help="degradation families joined by '+', e.g. noise+comp")
            p.add_argument("--interval", type=positive_int, default=6, help="frames per degradation segment")

    p = sub.add_parser("degrade", help="synthesize a time-varying degradation of a clean clip")
    common(p, "in", "out", "seed", "schedule")
    p.set_defaults(func=cmd_degrade)

    p = sub.add_parser("infer", help="restore a clip frame by frame")
    common(p, "in", "out", "ckpt")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("eval", help="PSNR/SSIM of predicted frames against references")
    common(p, "in", "ckpt", "report")
    p.add_argument("--ref", help="ground-truth frame directory")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("train", help="desk-scale training on a directory of clips")
    common(p, "in", "out", "seed", "schedule")
    p.add_argument("--variant", choices=("tiny", "base", "large"), default="tiny")
    p.add_argument("--iters", type=positive_int, default=2000)
    p.add_argument("--crop", type=positive_int, default=64)
    p.add_argument("--frames", type=positive_int, default=12, help="frames per training sample")
    p.add_argument("--lr", type=float, default=2e-4, help="initial learning rate")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("inspect", help="per-module parameter and FLOP table")
    common(p, "report")
    p.add_argument("--variant", choices=("tiny", "base", "large"), default="base")
    p.add_argument("--resolution", type=resolution_type, default=(856, 480), help="WxH")
    p.set_defaults(func=cmd_inspect)

    p = sub.add_parser("gradcheck", help="finite-difference check of the full model (exit 1 on failure)")
    common(p, "seed", "report")
    p.set_defaults(func=cmd_gradcheck)
    return parser


def _thread_limit():
    value = os.environ.get("LAVERNET_THREADS")
    if not value:
        return nullcontext()
    try:
        n = int(value)
    except ValueError:
        raise CommandError(f"LAVERNET_THREADS must be an integer, got {value!r}") from None
    if n < 1:
        raise CommandError("LAVERNET_THREADS must be >= 1")
    return threadpool_limits(limits=n)


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    args.argv = argv
    if args.command == "degrade" and args.seed is None:
        args.seed = 0
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(name)s: %(message)s")
    try:
        with _thread_limit():
            return args.func(args)
    except (CommandError, CheckpointError, FrameError, ValueError) as exc:
        print(f"lavernet {args.command}: error: {exc}", file=sys.stderr)
        return 2 if isinstance(exc, CommandError) else 1


if __name__ == "__main__":
    sys.exit(main())
