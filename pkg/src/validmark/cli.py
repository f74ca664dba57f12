"""Command-line surface: generate data, train, evaluate, fit poses, report.

Exit codes: 0 ok, 2 usage, 3 config schema, 4 data/file, 5 numeric failure.
All randomness is controlled by --seed; outputs are byte-reproducible for a
fixed seed (wall-clock columns in the training history excepted).
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from .augment import AugmentConfig, eval_crop
from .core import (DataError, DegenerateGeometryError, LandmarkSet, NumericError,
                   ParseError, SchemaError, ValidmarkError)
from .evaluate import (evaluate, read_summary_csv, write_records_csv,
                       write_summary_csv)
from .losses import LossConfig
from .net import MicroNet, NetConfig, OptimConfig, load_checkpoint, save_checkpoint
from .pose import (Template3D, euler_from_rotation, fit_head_pose,
                   load_template_csv, make_face_template, save_template_csv)
from .synth import GeneratedData, RenderStyle, SynthConfig, generate, load_dataset, save_dataset
from .train import TrainConfig, train

EXIT_USAGE = 2
EXIT_SCHEMA = 3
EXIT_DATA = 4
EXIT_NUMERIC = 5


# --- strict config parsing ----------------------------------------------------

def _coerce_dataclass(cls, data: dict, path: str):
    if not isinstance(data, dict):
        raise SchemaError(f"{path}: expected an object")
    allowed = {f.name: f for f in fields(cls)}
    unknown = sorted(set(data) - set(allowed))
    if unknown:
        raise SchemaError(f"{path}: unknown key(s) {', '.join(unknown)}")
    kwargs = {}
    for name, value in data.items():
        sub = f"{path}.{name}"
        if name in _NESTED:
            kwargs[name] = _coerce_dataclass(_NESTED[name], value, sub)
        elif isinstance(value, list):
            kwargs[name] = tuple(tuple(v) if isinstance(v, list) else v for v in value)
        else:
            kwargs[name] = value
    try:
        return cls(**kwargs)
    except (TypeError, DataError) as exc:
        raise SchemaError(f"{path}: {exc}") from None


_NESTED = {"style": RenderStyle}

_SECTIONS = {
    "synth": SynthConfig,
    "net": NetConfig,
    "optim": OptimConfig,
    "loss": LossConfig,
    "augment": AugmentConfig,
    "train": None,   # handled explicitly (epochs/balancing/... live here)
}

_TRAIN_KEYS = {"epochs", "balancing", "eval_every", "dedup", "exact_losses",
               "range_total"}


class RunConfig:
    def __init__(self, synth: SynthConfig, net: NetConfig, optim: OptimConfig,
                 loss: LossConfig, augment: AugmentConfig, train_block: dict,
                 seed: int):
        self.synth = synth
        self.net = net
        self.optim = optim
        self.loss = loss
        self.augment = augment
        self.train_block = train_block
        self.seed = seed

    def train_config(self, seed: int | None = None, threads: int = 1) -> TrainConfig:
        return TrainConfig(
            epochs=int(self.train_block.get("epochs", 50)),
            seed=self.seed if seed is None else seed,
            net=self.net,
            optim=self.optim,
            loss=self.loss,
            augment=self.augment,
            balancing=self.train_block.get("balancing", "loss-proportional"),
            eval_every=int(self.train_block.get("eval_every", 0)),
            dedup=bool(self.train_block.get("dedup", True)),
            exact_losses=bool(self.train_block.get("exact_losses", False)),
            range_total=int(self.train_block.get("range_total", 10_000)),
            threads=threads,
        )


def load_run_config(path, seed_override: int | None = None) -> RunConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    except FileNotFoundError:
        raise DataError(f"{path}: config file not found") from None
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(raw, dict):
        raise SchemaError(f"{path}: top level must be an object")
    unknown = sorted(set(raw) - set(_SECTIONS) - {"seed"})
    if unknown:
        raise SchemaError(f"{path}: unknown section(s) {', '.join(unknown)}")

    seed = int(raw.get("seed", 42)) if seed_override is None else seed_override

    synth = _coerce_dataclass(SynthConfig, {**raw.get("synth", {}), "seed": seed},
                              "synth")
    net_block = dict(raw.get("net", {}))
    net_block.setdefault("landmark_count", synth.landmark_count)
    if net_block["landmark_count"] != synth.landmark_count:
        raise SchemaError("net.landmark_count must match synth.landmark_count")
    net = _coerce_dataclass(NetConfig, net_block, "net")
    optim = _coerce_dataclass(OptimConfig, raw.get("optim", {}), "optim")
    loss = _coerce_dataclass(LossConfig, raw.get("loss", {}), "loss")
    aug_block = dict(raw.get("augment", {}))
    aug_block.setdefault("out_size", net.input_size)
    augment_cfg = _coerce_dataclass(AugmentConfig, aug_block, "augment")

    train_block = dict(raw.get("train", {}))
    unknown = sorted(set(train_block) - _TRAIN_KEYS)
    if unknown:
        raise SchemaError(f"train: unknown key(s) {', '.join(unknown)}")
    return RunConfig(synth, net, optim, loss, augment_cfg, train_block, seed)


# --- commands -------------------------------------------------------------------

def cmd_gen(args) -> int:
    cfg = load_run_config(args.config, args.seed)
    data: GeneratedData = generate(cfg.synth)
    out = Path(args.out)
    (out / "train").mkdir(parents=True, exist_ok=True)
    (out / "test").mkdir(parents=True, exist_ok=True)
    save_dataset(data.train, out / "train", data.poses)
    save_dataset(data.test, out / "test", data.poses)
    save_template_csv(data.template, out / "template.csv")
    if not args.quiet:
        print(f"wrote {len(data.train)} train / {len(data.test)} test samples to {out}")
    return 0


def cmd_train(args) -> int:
    cfg = load_run_config(args.config, args.seed)
    data_dir = Path(args.data)
    train_ds = load_dataset(data_dir / "train")
    val_ds = load_dataset(data_dir / "test") if (data_dir / "test").is_dir() else None
    tcfg = cfg.train_config(threads=args.threads)
    result = train(train_ds, val_ds, tcfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(result.net, out / "model.ckpt")
    result.history.to_csv(out / "history.csv")
    if not args.quiet:
        final = result.history.rows[-1]
        print(f"trained {tcfg.epochs} epochs; final mean loss {final.mean_loss:.6g}; "
              f"checkpoint at {out / 'model.ckpt'}")
    return 0


def cmd_eval(args) -> int:
    net = load_checkpoint(args.checkpoint)
    dataset = load_dataset(args.data)
    records, summary = evaluate(net, dataset)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_summary_csv(summary, out)
    records_path = out.with_name(out.stem + "_records" + out.suffix)
    write_records_csv(records, records_path)
    if not args.quiet:
        for row in summary:
            print(f"{row.subset}: NME {row.nme:.3f} "
                  f"(discard 10/20/30%: {row.nme_d10:.3f}/{row.nme_d20:.3f}/"
                  f"{row.nme_d30:.3f}) pearson {row.pearson:.3f}")
    return 0


def cmd_pose(args) -> int:
    template = load_template_csv(args.template) if args.template else None
    if args.checkpoint:
        if not args.data:
            raise DataError("--checkpoint requires --data")
        net = load_checkpoint(args.checkpoint)
        dataset = load_dataset(args.data)
        if template is None:
            template = make_face_template(net.cfg.landmark_count)
        rows = []
        size = net.cfg.input_size
        for sample in dataset:
            image, _ = eval_crop(sample, size)
            pred = net.predict_triplets(image.data[None] / 255.0)[0]
            landmarks = _crop_points_to_source(pred[:, :2], sample, size)
            weights = _validity_weights(pred[:, 2])
            rows.append((sample.id, landmarks, weights))
    else:
        if not args.data:
            raise DataError("pose needs --data (and optionally --checkpoint)")
        dataset = load_dataset(args.data)
        if template is None:
            template = make_face_template(dataset.landmark_count)
        rows = [(s.id, s.annotation.points, None) for s in dataset]

    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", encoding="utf-8") as fh:
        fh.write("sample_id,yaw_deg,pitch_deg,roll_deg,tx,ty,tz,residual,converged\n")
        for sample_id, pts, weights in rows:
            fit = fit_head_pose(LandmarkSet(pts), template, focal=args.focal,
                                weights=weights)
            yaw, pitch, roll, _ = euler_from_rotation(fit.transform.rotation)
            t = fit.transform.translation
            fh.write(f"{sample_id},{math.degrees(yaw):.9g},{math.degrees(pitch):.9g},"
                     f"{math.degrees(roll):.9g},{t[0]:.9g},{t[1]:.9g},{t[2]:.9g},"
                     f"{fit.residual_rms:.9g},{int(fit.converged)}\n")
    if not args.quiet:
        print(f"wrote {len(rows)} pose rows to {out}")
    return 0


def _crop_points_to_source(points: np.ndarray, sample, out_size: int) -> np.ndarray:
    """Map predictions from the eval-crop frame back into image coordinates."""
    bx, by, bw, bh = sample.face_box
    half = (out_size - 1) / 2.0
    out = np.empty_like(points)
    out[:, 0] = (points[:, 0] - half) * (bw / out_size) + bx + (bw - 1.0) / 2.0
    out[:, 1] = (points[:, 1] - half) * (bh / out_size) + by + (bh - 1.0) / 2.0
    return out


def _validity_weights(signals: np.ndarray, bad_frac: float = 0.2) -> np.ndarray:
    """Down-weight to zero the least reliable fraction of landmarks."""
    n = len(signals)
    drop = int(bad_frac * n)
    weights = np.ones(n)
    if drop:
        worst = np.argsort(-signals, kind="stable")[:drop]
        weights[worst] = 0.0
    if (weights > 0).sum() < 4:
        return np.ones(n)
    return weights


def cmd_report(args) -> int:
    tables = []
    for path in args.summaries:
        rows = read_summary_csv(path)
        tables.append((Path(path).stem, {row.subset: row for row in rows}))
    subsets = ["common", "challenging", "full"]
    lines = []
    header = f"{'method':<24}" + "".join(f"{s:>14}" for s in subsets)
    lines.append("NME (x100; lower is better)")
    lines.append(header)
    for name, rows in tables:
        cells = [f"{rows[s].nme:>14.3f}" if s in rows else f"{'-':>14}" for s in subsets]
        lines.append(f"{name:<24}" + "".join(cells))
    lines.append("")
    lines.append("NME after discarding the worst 10/20/30% by validation signal")
    lines.append(f"{'discard':<10}{'method':<24}" + "".join(f"{s:>14}" for s in subsets))
    for frac, attr in ((10, "nme_d10"), (20, "nme_d20"), (30, "nme_d30")):
        for name, rows in tables:
            cells = [f"{getattr(rows[s], attr):>14.3f}" if s in rows else f"{'-':>14}"
                     for s in subsets]
            lines.append(f"{f'{frac}%':<10}{name:<24}" + "".join(cells))
    text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(text, encoding="utf-8")
    if not args.quiet:
        sys.stdout.write(text)
    return 0


# --- entry point -----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="validmark",
        description="Landmark regression with a self-assessed validity output, "
                    "loss-proportional batch balancing, and head-pose recovery.",
        epilog="exit codes: 0 ok, 2 usage, 3 config schema, 4 data, 5 numeric",
    )
    parser.add_argument("--seed", type=int, default=None,
                        help="override the config seed (default 42)")
    parser.add_argument("--threads", type=int, default=1,
                        help="augmentation parallelism; results do not depend on it")
    parser.add_argument("--quiet", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a synthetic dataset")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("train", help="train a model on a generated dataset")
    p.add_argument("--config", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset directory")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="summary CSV path")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("pose", help="fit 6D head poses from landmarks")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--checkpoint", help="use predicted landmarks instead of annotations")
    p.add_argument("--template", help="template CSV (default: bundled synthetic face)")
    p.add_argument("--focal", type=float, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_pose)

    p = sub.add_parser("report", help="side-by-side table from eval summary CSVs")
    p.add_argument("summaries", nargs="+")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except SchemaError as exc:
        print(f"validmark: error[schema]: {exc}", file=sys.stderr)
        return EXIT_SCHEMA
    except (ParseError, DataError, DegenerateGeometryError, OSError) as exc:
        print(f"validmark: error[data]: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericError, FloatingPointError) as exc:
        print(f"validmark: error[numeric]: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValidmarkError as exc:
        print(f"validmark: error[data]: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
