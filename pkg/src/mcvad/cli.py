"""Command-line entry points: generate, train, eval, ablate, plot."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np
import torch

from . import datagen, evaluation, plotting
from .config import ABLATION_ROWS, RunConfig, load_config
from .context_vit import mask_tensor, object_seed, sample_mask
from .objectives import ScoreWeights
from .training import TrainConfig, load_checkpoint, save_checkpoint, train_appearance, train_motion

log = logging.getLogger("mcvad")

APPEARANCE_CKPT = "appearance.pt"
MOTION_CKPT = "motion.pt"


def _split_seed(seed: int, split: str) -> int:
    return int(np.random.SeedSequence([seed, 0 if split == "train" else 1]).generate_state(1)[0])


def _prepare_out(out) -> Path:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _train_config(cfg: RunConfig, seed: int | None = None) -> TrainConfig:
    return replace(cfg.train, seed=cfg.seed if seed is None else seed)


# ------------------------------------------------------------------ generate


def cmd_generate(cfg: RunConfig, out, force: bool = False) -> dict:
    out = _prepare_out(out)
    d = cfg.data
    stats = {}
    for split, n_videos in (("train", d.n_train_videos), ("test", d.n_test_videos)):
        seed = _split_seed(cfg.seed, split)
        rate = d.anomaly_rate if split == "test" else 0.0
        cubes, flows, labels = datagen.build_split(split, n_videos, seed, d.n_frames, d.n_sprites, rate, d.flow_mode)
        manifest = datagen.make_manifest(split, cubes, labels, d.flow_mode, {
            "seed": seed, "n_videos": n_videos, "n_frames": d.n_frames,
            "n_sprites": d.n_sprites, "anomaly_rate": rate,
        })
        datagen.write_dataset(cubes, flows, manifest, out / split, force=force)
        stats[split] = {"cubes": len(cubes), "abnormal_cubes": int(sum(c.label for c in cubes))}
        log.info("%s: %d cubes", split, len(cubes))
    cfg.save(out / "config.json")
    return stats


# --------------------------------------------------------------------- train


def cmd_train(cfg: RunConfig, data, out, seed: int | None = None) -> dict:
    out = _prepare_out(out)
    ds = datagen.read_dataset(Path(data) / "train") if (Path(data) / "train").exists() else datagen.read_dataset(data)
    if ds.manifest.split != "train":
        raise datagen.DatasetError(f"{ds.root} is a {ds.manifest.split} split; training needs the train split")
    cubes, flows = ds.arrays()
    ids = [Path(e["cube"]).stem for e in ds.manifest.entries]
    tcfg = _train_config(cfg, seed)
    written = {}
    result = train_appearance(cubes, tcfg, cfg.vit_config(), ids=ids, labels=ds.labels)
    save_checkpoint(out / APPEARANCE_CKPT, result.model, {"train": _jsonable(tcfg)})
    result.write_log(out / "appearance_log.jsonl")
    written["appearance"] = str(out / APPEARANCE_CKPT)
    if cfg.model.motion:
        result = train_motion(flows, tcfg, cfg.cae_config(), ids=ids, labels=ds.labels)
        save_checkpoint(out / MOTION_CKPT, result.model, {"train": _jsonable(tcfg)})
        result.write_log(out / "motion_log.jsonl")
        written["motion"] = str(out / MOTION_CKPT)
    cfg.save(out / "config.json")
    return written


def _jsonable(obj):
    return json.loads(json.dumps(obj.__dict__, default=list))


# ---------------------------------------------------------------------- eval


def _load_models(ckpt):
    ckpt = Path(ckpt)
    appearance = load_checkpoint(ckpt / APPEARANCE_CKPT, "context_vit") if (ckpt / APPEARANCE_CKPT).exists() else None
    motion = load_checkpoint(ckpt / MOTION_CKPT, "motion_cae") if (ckpt / MOTION_CKPT).exists() else None
    if appearance is None and motion is None:
        raise FileNotFoundError(f"no checkpoints found in {ckpt}")
    return appearance, motion


def _test_split(data):
    root = Path(data) / "test" if (Path(data) / "test").exists() else Path(data)
    return datagen.read_dataset(root)


def cmd_eval(cfg: RunConfig, data, ckpt, out) -> dict:
    out = _prepare_out(out)
    ds = _test_split(data)
    appearance, motion = _load_models(ckpt)
    if not cfg.model.motion:
        motion = None
    weights = cfg.weights()
    records = evaluation.score_dataset(ds, appearance, motion, weights, cfg.eval.mask_draws)
    (out / "scores.csv").write_text(evaluation.records_to_csv(records))

    labels = ds.manifest.frame_labels
    kw = {"how": cfg.eval.aggregate, "normalize": cfg.eval.normalize}
    fused, series = evaluation.evaluate(records, labels, **kw)
    summary = {"auroc": fused, "weights": [weights.lambda_a, weights.lambda_o],
               "mask_draws": cfg.eval.mask_draws, **kw}
    if appearance is not None:
        summary["auroc_appearance"] = evaluation.evaluate(records, labels, ScoreWeights(1.0, 0.0), **kw)[0]
    if motion is not None:
        summary["auroc_flow"] = evaluation.evaluate(records, labels, ScoreWeights(0.0, 1.0), **kw)[0]
    summary["inputs"] = {"data": str(Path(data).resolve()), "ckpt": str(Path(ckpt).resolve())}
    summary["series"] = {v: [list(r) for r in rows] for v, rows in series.items()}
    (out / "summary.json").write_text(json.dumps(summary, indent=1, sort_keys=True) + "\n")
    cfg.save(out / "config.json")
    if cfg.eval.plots:
        render_plots(cfg, out, ds, records, series, appearance)
    return {k: v for k, v in summary.items() if k.startswith("auroc")}


def render_plots(cfg: RunConfig, out, ds, records, series, appearance=None) -> list[Path]:
    out = Path(out)
    written = []
    curves = out / "curves"
    curves.mkdir(exist_ok=True)
    for video_id, rows in series.items():
        path = curves / f"{video_id}.png"
        plotting.save_score_curve(path, rows, title=video_id)
        written.append(path)
    if appearance is None:
        return written
    maps = out / "error_maps"
    maps.mkdir(exist_ok=True)
    index = {(e["video_id"], e["frame_index"], e["track_id"]): i for i, e in enumerate(ds.manifest.entries)}
    ranked = sorted(records, key=lambda r: -r.score)
    chosen = ranked[: cfg.eval.n_error_maps // 2] + ranked[-(cfg.eval.n_error_maps - cfg.eval.n_error_maps // 2):]
    for rec in chosen:
        cube = ds.cube(index[(rec.video_id, rec.frame_index, rec.track_id)])
        target, prediction = _prediction_for_map(appearance, cube)
        emap = evaluation.error_map(prediction, target)
        path = maps / f"{rec.video_id}_{rec.frame_index:04d}.png"
        plotting.save_error_map(path, target, prediction, emap, vmax=max(1e-6, float(emap.max())),
                                title=f"{rec.video_id} frame {rec.frame_index} ({'abnormal' if rec.label else 'normal'})")
        written.append(path)
    return written


@torch.no_grad()
def _prediction_for_map(model, cube):
    """Future-frame prediction (whole, else partial) or the first masked reconstruction."""
    x = torch.from_numpy(cube.frames)[None]
    mask = None
    if model.config.uses_mask:
        mask = mask_tensor([sample_mask(model.config.mask_ratio, object_seed(cube.video_id, cube.frame_index, cube.track_id))])
    bundle = model(x[:, :4], mask)
    for pred in (bundle.whole_future, bundle.partial_future):
        if pred is not None:
            return cube.frames[4], pred[0].numpy()
    m = int(torch.nonzero(bundle.mask[0])[0])
    return cube.frames[m], bundle.decoded[0, m].numpy()


def cmd_plot(eval_dir, out=None) -> list[Path]:
    eval_dir = Path(eval_dir)
    summary = json.loads((eval_dir / "summary.json").read_text())
    cfg = load_config(eval_dir / "config.json")
    cfg = replace(cfg, eval=replace(cfg.eval, plots=True))
    records = evaluation.records_from_csv((eval_dir / "scores.csv").read_text())
    series = {v: [tuple(r) for r in rows] for v, rows in summary["series"].items()}
    ds = _test_split(summary["inputs"]["data"])
    appearance, _ = _load_models(summary["inputs"]["ckpt"])
    return render_plots(cfg, _prepare_out(out or eval_dir), ds, records, series, appearance)


# -------------------------------------------------------------------- ablate


def cmd_ablate(cfg: RunConfig, out, data=None, seeds: int | None = None, rows=None) -> dict:
    """Train and score every ablation row for several seeds on one dataset.

    Finished runs are reused when their checkpoint already exists.
    """
    out = _prepare_out(out)
    if data is None:
        data = out / "data"
        if not (data / "test" / "manifest.json").exists():
            cmd_generate(cfg, data, force=True)
    train_ds = datagen.read_dataset(Path(data) / "train")
    test_ds = _test_split(data)
    train_arrays = train_ds.arrays()
    test_arrays = test_ds.arrays()
    labels = test_ds.manifest.frame_labels
    n_seeds = seeds or cfg.ablation_seeds
    rows = rows or list(ABLATION_ROWS)
    kw = {"how": cfg.eval.aggregate, "normalize": cfg.eval.normalize}
    results = []
    for k in range(n_seeds):
        seed = cfg.seed + k
        tcfg = _train_config(cfg, seed)
        motion = None
        if cfg.model.motion:
            path = out / "runs" / f"motion_seed{seed}" / MOTION_CKPT
            motion = _cached_or_train(path, lambda: train_motion(train_arrays[1], tcfg, cfg.cae_config()))
        for row in rows:
            row_cfg = replace(cfg, model=replace(cfg.model, streams=ABLATION_ROWS[row]))
            path = out / "runs" / f"{row}_seed{seed}" / APPEARANCE_CKPT
            model = _cached_or_train(path, lambda: train_appearance(train_arrays[0], tcfg, row_cfg.vit_config()))
            records = evaluation.score_dataset(test_ds, model, motion, cfg.weights(), cfg.eval.mask_draws,
                                               arrays=test_arrays)
            entry = {"setting": row, "seed": seed,
                     **{s: int(s in ABLATION_ROWS[row]) for s in ("masked", "whole", "partial")},
                     "auroc_appearance": evaluation.evaluate(records, labels, ScoreWeights(1.0, 0.0), **kw)[0]}
            if motion is not None:
                entry["auroc_flow"] = evaluation.evaluate(records, labels, ScoreWeights(0.0, 1.0), **kw)[0]
                entry["auroc_fused"] = evaluation.evaluate(records, labels, cfg.weights(), **kw)[0]
            results.append(entry)
            log.info("ablation %s", entry)
    summary = summarize_ablation(results)
    _write_ablation(out, results, summary)
    cfg.save(out / "config.json")
    return summary


def _cached_or_train(path: Path, train_fn):
    if path.exists():
        return load_checkpoint(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    result = train_fn()
    save_checkpoint(path, result.model)
    result.write_log(path.with_suffix(".jsonl"))
    return result.model


def summarize_ablation(results) -> dict:
    summary = {}
    for row in dict.fromkeys(r["setting"] for r in results):
        sel = [r for r in results if r["setting"] == row]
        summary[row] = {k: float(np.mean([r[k] for r in sel])) for k in sel[0] if k.startswith("auroc")}
        summary[row]["seeds"] = [r["seed"] for r in sel]
    return summary


def _write_ablation(out: Path, results, summary) -> None:
    keys = list(results[0])
    for r in results:
        keys += [k for k in r if k not in keys]
    lines = [",".join(keys)]
    for r in results:
        lines.append(",".join(repr(r[k]) if isinstance(r.get(k), float) else str(r.get(k, "")) for k in keys))
    (out / "ablation.csv").write_text("\n".join(lines) + "\n")
    (out / "ablation.json").write_text(json.dumps({"runs": results, "mean": summary}, indent=1) + "\n")
    table = {}
    for r in results:
        table.setdefault(r["setting"], []).append(r["auroc_appearance"])
    plotting.save_ablation_bars(out / "ablation.png", table)


# ---------------------------------------------------------------------- main


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON run configuration")
    common.add_argument("--seed", type=int)
    common.add_argument("--out", type=Path, required=True)
    common.add_argument("--streams", help="comma list of masked,whole,partial, or 'none'")
    common.add_argument("--motion", choices=("on", "off"))
    common.add_argument("--mask-ratio", type=float)
    common.add_argument("--lambda-a", type=float)
    common.add_argument("--lambda-o", type=float)
    common.add_argument("--mask-draws", type=int)
    common.add_argument("--epochs", type=int)
    common.add_argument("--batch-size", type=int)
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="mcvad", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("generate", parents=[common], help="write a synthetic dataset")
    p.add_argument("--force", action="store_true", help="overwrite existing manifests")
    p = sub.add_parser("train", parents=[common], help="train the appearance and motion models")
    p.add_argument("--data", type=Path, required=True)
    p = sub.add_parser("eval", parents=[common], help="score a test split")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--ckpt", type=Path, required=True)
    p.add_argument("--plots", action="store_true")
    p = sub.add_parser("ablate", parents=[common], help="run the stream ablation over several seeds")
    p.add_argument("--data", type=Path)
    p.add_argument("--seeds", type=int)
    p = sub.add_parser("plot", help="render figures for an eval directory")
    p.add_argument("--eval", dest="eval_dir", type=Path, required=True)
    p.add_argument("--out", type=Path)
    p.add_argument("-v", "--verbose", action="store_true")
    return parser


def resolve_config(args) -> RunConfig:
    cfg = load_config(getattr(args, "config", None))
    if getattr(args, "seed", None) is not None:
        cfg = replace(cfg, seed=args.seed)
    model, train, ev = cfg.model, cfg.train, cfg.eval
    if getattr(args, "streams", None) is not None:
        streams = () if args.streams in ("", "none") else tuple(s.strip() for s in args.streams.split(","))
        model = replace(model, streams=streams)
    if getattr(args, "motion", None) is not None:
        model = replace(model, motion=args.motion == "on")
    if getattr(args, "mask_ratio", None) is not None:
        train = replace(train, masking_ratio=args.mask_ratio)
    if getattr(args, "epochs", None) is not None:
        train = replace(train, epochs=args.epochs)
    if getattr(args, "batch_size", None) is not None:
        train = replace(train, batch_size=args.batch_size)
    for flag, name in (("lambda_a", "lambda_a"), ("lambda_o", "lambda_o"), ("mask_draws", "mask_draws")):
        if getattr(args, flag, None) is not None:
            ev = replace(ev, **{name: getattr(args, flag)})
    if getattr(args, "plots", False):
        ev = replace(ev, plots=True)
    cfg = replace(cfg, model=model, train=train, eval=ev)
    cfg.vit_config()
    cfg.weights()
    return cfg


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    torch.set_num_threads(max(1, torch.get_num_threads()))
    try:
        if args.command == "plot":
            result = [str(p) for p in cmd_plot(args.eval_dir, args.out)]
        else:
            cfg = resolve_config(args)
            if args.command == "generate":
                result = cmd_generate(cfg, args.out, force=args.force)
            elif args.command == "train":
                result = cmd_train(cfg, args.data, args.out)
            elif args.command == "eval":
                result = cmd_eval(cfg, args.data, args.ckpt, args.out)
            else:
                result = cmd_ablate(cfg, args.out, args.data, args.seeds)
    except Exception as exc:  # noqa: BLE001
        json.dump({"error": type(exc).__name__, "message": str(exc), "command": args.command}, sys.stderr)
        sys.stderr.write("\n")
        return 1
    json.dump(result, sys.stdout, indent=1, default=str)
    sys.stdout.write("\n")
    return 0


if __name__ == "__main__":
    sys.exit(main())
