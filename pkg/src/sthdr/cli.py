"""Command-line interface.

Subcommands: ``train``, ``eval``, ``infer``, ``summary`` and
``make-fixture``.  Exit codes: 0 success, 2 configuration error, 3 data
error, 4 numeric abort.
"""

import argparse
import ast
import csv
import logging
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError, NumericAbort

log = logging.getLogger("sthdr")

EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 2, 3, 4


def parse_config_file(path):
    """Flat ``key = value`` text; ``#`` starts a comment.

    Values are Python literals where possible (``1e-4``, ``true``), and
    comma-separated lists become tuples.
    """
    from .model import ModelConfig
    from .trainer import TrainConfig

    model_keys = {f.name for f in fields(ModelConfig)}
    train_keys = {f.name for f in fields(TrainConfig)}
    model_kw, train_kw = {}, {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        value = _parse_value(value)
        if key in model_keys:
            model_kw[key] = value
        elif key in train_keys:
            train_kw[key] = value
        else:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
    return model_kw, train_kw


def _parse_value(text):
    lowered = text.lower()
    if lowered in ("true", "yes", "on"):
        return True
    if lowered in ("false", "no", "off"):
        return False
    if "," in text:
        return tuple(_parse_value(t.strip()) for t in text.split(",") if t.strip())
    try:
        return ast.literal_eval(text)
    except (ValueError, SyntaxError):
        return text


def cmd_train(args):
    from .data_io import resolve_data_root
    from .model import ModelConfig
    from .plotting import plot_history
    from .trainer import TrainConfig, run

    model_kw, train_kw = parse_config_file(args.config) if args.config else ({}, {})
    variant = args.variant or model_kw.pop("variant", "SCM_MS")
    model_kw.pop("variant", None)
    if args.steps is not None:
        train_kw["max_steps"] = args.steps
    if args.finetune_steps is not None:
        train_kw["finetune_steps"] = args.finetune_steps
    if args.seed is not None:
        train_kw["seed"] = args.seed
    mcfg = ModelConfig.for_variant(variant, tiny=args.tiny, **model_kw)
    cfg = TrainConfig.tiny(**train_kw) if args.tiny else TrainConfig(**train_kw)
    root = resolve_data_root(args.data)
    out = Path(args.out or f"runs/{variant}")
    result = run(cfg, mcfg, root, out, resume=args.resume, log_every=args.log_every,
                 command=" ".join(args.argv))
    if not args.no_figures:
        plot_history(result.history_path, out / "history.png")
    print(f"checkpoint: {result.checkpoint}")
    if result.best_checkpoint:
        print(f"best checkpoint: {result.best_checkpoint}")
    return 0


def _load_model(ckpt, variant=None):
    from .trainer import load_checkpoint

    if not Path(ckpt).is_file():
        raise ConfigError(f"checkpoint not found: {ckpt}")
    state, _ = load_checkpoint(ckpt)
    model = state.model
    if variant and variant != model.config.variant:
        raise ConfigError(f"checkpoint holds variant {model.config.variant}, not {variant}")
    model.eval()
    return model


def save_preview(path, hdr, mu):
    """8-bit mu-law PNG preview of a linear HDR image (display only)."""
    import torch
    from PIL import Image

    from .objective import tonemap

    img = tonemap(torch.from_numpy(np.clip(hdr, 0, 1)), mu).numpy()
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(np.rint(img * 255).astype(np.uint8)).save(path)


def cmd_eval(args):
    from .data_io import load_split, resolve_data_root
    from .inference import evaluate_scenes
    from .manifest import write_manifest
    from .objective import MetricReport, average_reports
    from .rgbe import write_hdr

    model = _load_model(args.ckpt, args.variant)
    root = resolve_data_root(args.data)
    scenes = load_split(root, args.split, require_gt=True)
    results = evaluate_scenes(model, scenes, self_test=args.self_test)
    reports = [r for r, _ in results]
    avg = average_reports(reports)

    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with out.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(MetricReport.FIELDS)
        for r in reports + [avg]:
            writer.writerow(r.row())
    write_manifest(out.with_suffix(".manifest.json"), "eval", {
        "ckpt": str(args.ckpt), "data_root": str(root), "split": args.split,
        "self_test": args.self_test, "model": model.config.to_dict()})

    if args.dump_dir:
        dump = Path(args.dump_dir)
        for (report, pred) in results:
            write_hdr(dump / f"{report.scene_id}.hdr", pred)
            save_preview(dump / f"{report.scene_id}.png", pred, model.config.mu)

    if not args.no_figures:
        from .plotting import plot_metrics, plot_scene

        fig_dir = Path(args.figures or out.with_name(out.stem + "_figures"))
        plot_metrics(reports, fig_dir / "metrics.png",
                     title="self-test" if args.self_test else model.config.variant)
        for stack, (report, pred) in zip(scenes, results):
            plot_scene(stack, pred, fig_dir / f"{report.scene_id}.png", model.config.mu)
        if model.config.variant.startswith("SCM") and scenes:
            _plot_alignment(model, scenes[0], fig_dir / "scm_stages.png")

    for r in reports + [avg]:
        print(f"{r.scene_id:>20s}  PSNR-mu {r.psnr_mu:7.3f}  PSNR-L {r.psnr_l:7.3f}  "
              f"SSIM-mu {r.ssim_mu:.4f}  SSIM-L {r.ssim_l:.4f}")
    return 0


def _plot_alignment(model, stack, path, size=128):
    from .data_io import crop_stack
    from .plotting import plot_scm_stages
    import torch

    h, w = stack.shape
    side = min(size, h, w)
    side -= side % model.config.required_multiple
    if side <= 0:
        return
    patch = crop_stack(stack, (h - side) // 2, (w - side) // 2, side, model.config.gamma)
    x = torch.from_numpy(patch.inputs).unsqueeze(1)
    plot_scm_stages(model, x[0], x[1], x[2], path)


def cmd_infer(args):
    from .data_io import load_scene
    from .inference import predict_stack
    from .manifest import write_manifest
    from .rgbe import write_hdr

    model = _load_model(args.ckpt)
    stack = load_scene(args.scene)
    pred = predict_stack(model, stack)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_hdr(out, pred)
    preview = Path(args.preview) if args.preview else out.with_suffix(".png")
    save_preview(preview, pred, model.config.mu)
    write_manifest(out.with_suffix(".manifest.json"), "infer", {
        "ckpt": str(args.ckpt), "scene": str(args.scene), "model": model.config.to_dict()})
    print(f"wrote {out} ({pred.shape[0]}x{pred.shape[1]}) and preview {preview}")
    return 0


def cmd_summary(args):
    from .model import ModelConfig, build, count_parameters, parameter_breakdown, shared_weight_map

    cfg = ModelConfig.for_variant(args.variant, tiny=args.tiny)
    model = build(cfg, seed=0)
    total = count_parameters(model)
    print(f"variant {cfg.variant}  scales {cfg.n_scales}  width {cfg.base_channels}"
          f"{'  (tiny profile)' if args.tiny else ''}")
    print(f"parameters: {total}  ({total / 1e6:.4f} M)")
    print("breakdown:")
    for name, n in parameter_breakdown(model).items():
        print(f"  {name:<24s} {n:>10d}")
    print("shared weights (uses per forward pass):")
    for name, uses in shared_weight_map(model).items():
        print(f"  {name:<24s} x{uses}")
    if args.manifest:
        from .manifest import write_manifest

        write_manifest(args.manifest, "summary", {"model": cfg.to_dict(), "parameters": total})
    return 0


def cmd_make_fixture(args):
    from .manifest import write_manifest
    from .synthetic import make_dataset

    try:
        h, w = (int(v) for v in args.size.lower().split("x"))
    except ValueError:
        raise ConfigError(f"--size must look like 128x128, got {args.size!r}") from None
    dirs = make_dataset(args.out, args.train, args.test, h, w, seed=args.seed, motion=args.motion)
    write_manifest(Path(args.out) / "manifest.json", "make-fixture", {
        "train": args.train, "test": args.test, "size": [h, w], "motion": args.motion}, seed=args.seed)
    print(f"wrote {len(dirs)} scenes under {args.out}")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(prog="sthdr", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model")
    p.add_argument("--data", help="dataset root (default: $STHDR_DATA)")
    p.add_argument("--variant", help="HSS, SS, MS, SCM_SS or SCM_MS (default SCM_MS)")
    p.add_argument("--config", help="key = value config file")
    p.add_argument("--resume", help="checkpoint to resume from")
    p.add_argument("--tiny", action="store_true", help="CPU smoke-test profile")
    p.add_argument("--steps", type=int, help="override main-phase steps")
    p.add_argument("--finetune-steps", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="run directory (default runs/<variant>)")
    p.add_argument("--log-every", type=int, default=10)
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a checkpoint on a dataset split")
    p.add_argument("--data")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--out", required=True, help="CSV path")
    p.add_argument("--split", default="Test")
    p.add_argument("--variant", help="fail unless the checkpoint holds this variant")
    p.add_argument("--self-test", action="store_true", help="score GT against itself")
    p.add_argument("--dump-dir", help="write predictions as .hdr plus PNG previews")
    p.add_argument("--figures", help="figure directory (default <csv stem>_figures)")
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("infer", help="predict one scene")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--scene", required=True)
    p.add_argument("--out", required=True, help="output .hdr path")
    p.add_argument("--preview", help="PNG preview path (default next to --out)")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("summary", help="parameter counts of a variant")
    p.add_argument("--variant", default="SCM_MS")
    p.add_argument("--tiny", action="store_true")
    p.add_argument("--manifest", help="also write a run manifest here")
    p.set_defaults(func=cmd_summary)

    p = sub.add_parser("make-fixture", help="write a synthetic dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--train", type=int, default=2)
    p.add_argument("--test", type=int, default=2)
    p.add_argument("--size", default="128x128")
    p.add_argument("--motion", type=int, default=2)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_make_fixture)
    return parser


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    args.argv = argv
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericAbort as exc:
        print(f"numeric abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
