"""Command-line interface.

Exit codes: 0 success, 1 numeric or protocol failure, 2 usage or I/O error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import __version__
from .active_imaging import active_image, normalize_active
from .activations import KINDS, ActivationKind, activation_curve, activation_curve_csv
from .checks import run_scope
from .data import load_manifest, synth_dataset
from .errors import ConfigError, FormatError, ManifestError, NumericError, ProtocolError, StateError
from .experiment import RunConfig, entry_sample, eval_loso, fit, format_config, load_config, parse_config
from .io import RAW_SUFFIX, is_video, load_video, write_image, write_raw_sequence
from .model import WEIGHTS_MAGIC, build, deserialize, save_weights

log = logging.getLogger("originet")

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


def _out_dir(path: str | None, default: str) -> Path:
    out = Path(path or default)
    out.mkdir(parents=True, exist_ok=True)
    return out


# ---------------------------------------------------------------- commands
def cmd_active_image(args) -> int:
    src = Path(args.input)
    if not src.exists():
        raise FileNotFoundError(f"input not found: {src}")
    if is_video(src):
        videos = [src]
    else:
        videos = sorted(p for p in src.iterdir() if is_video(p))
        if not videos:
            raise FormatError(f"{src}: neither a video nor a directory of videos")
    single = len(videos) == 1 and is_video(src)
    out = Path(args.out or ".")
    if single and out.suffix.lower() in (".png", ".pgm"):
        targets = [out]
        out.parent.mkdir(parents=True, exist_ok=True)
    else:
        out.mkdir(parents=True, exist_ok=True)
        targets = [out / f"{v.name.removesuffix(RAW_SUFFIX)}.png" for v in videos]
    for video, target in zip(videos, targets):
        seq = load_video(video, grayscale=args.grayscale)
        img = normalize_active(active_image(seq, args.ft1_mode, args.abs_diff))
        write_image(target, img.pixels)
        if args.raw:
            write_raw_sequence(target.with_suffix(RAW_SUFFIX), img.pixels[None])
        print(f"{video} -> {target}")
    return EXIT_OK


def cmd_synth(args) -> int:
    manifest = synth_dataset(
        _out_dir(args.out, "synth"),
        num_subjects=args.subjects,
        videos_per_subject=args.videos,
        num_classes=args.classes,
        frames=args.frames,
        size=args.size,
        seed=args.seed or 0,
        label_shuffle=args.shuffle_labels,
    )
    print(f"wrote {len(manifest.entries)} videos for {len(manifest.subjects)} subjects to {manifest.root / 'manifest.csv'}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = load_config(args.config, seed=args.seed)
    manifest = load_manifest(args.manifest)
    out = _out_dir(args.out, "run")
    samples = [entry_sample(manifest, e, cfg) for e in manifest.entries]
    log_path = out / "train_log.jsonl"
    with log_path.open("w") as fh:
        def emit(rec):
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
            fh.flush()
            log.info("epoch %d loss %.4f train %.3f val %.3f", rec["epoch"], rec["train_loss"], rec["train_acc"], rec["val_acc"])

        fitted = fit(samples, cfg, manifest.num_classes, log_fn=emit)
    save_weights(fitted.result.model, out / "model.weights")
    (out / "config.txt").write_text(format_config(cfg))
    if not args.no_figures:
        from .plotting import plot_training_log

        plot_training_log(fitted.result.log, out / "training.png")
    last = fitted.result.log[-1]
    print(f"trained {len(fitted.result.log)} epochs, best epoch {fitted.result.best_epoch}; final train acc {last['train_acc']:.4f}")
    print(f"weights: {out / 'model.weights'}  log: {log_path}")
    return EXIT_OK


def cmd_eval_loso(args) -> int:
    cfg = load_config(args.config, seed=args.seed)
    manifest = load_manifest(args.manifest)
    out = _out_dir(args.out, "loso")
    report = eval_loso(manifest, cfg, jobs=args.jobs, log_path=out / "train_log.jsonl")
    (out / "report.json").write_text(report.to_json())
    if not args.no_figures:
        from .plotting import plot_confusion, plot_fold_accuracy

        plot_confusion(report.confusion, report.label_names, out / "confusion.png", f"LOSO accuracy {report.mean_accuracy:.3f}")
        plot_fold_accuracy(report.folds, report.mean_accuracy, out / "folds.png")
    for f in report.folds:
        print(f"  {f['test_subject']:>10}: {f['correct']}/{f['n_test']}")
    print(f"mean LOSO accuracy {report.mean_accuracy:.4f} ({report.aggregation})")
    print(f"report: {out / 'report.json'}")
    return EXIT_OK


def cmd_inspect(args) -> int:
    target = Path(args.target) if args.target else (Path(args.config) if args.config else None)
    if target is None:
        model_cfg = RunConfig().model_config(args.num_classes or 4)
        source = "default config"
    else:
        data = target.read_bytes()
        if data.startswith(WEIGHTS_MAGIC):
            model = deserialize(data, str(target))
            model_cfg, source = model.config, f"weight file {target}"
        else:
            try:
                text = data.decode("utf-8")
            except UnicodeDecodeError:
                raise FormatError(f"{target}: neither a weight file nor a text config") from None
            run_cfg = parse_config(text)
            model_cfg = run_cfg.model_config(args.num_classes or run_cfg.num_classes or 4)
            source = f"config {target}"
    model = build(model_cfg, 0)
    rows = model.layer_table()
    print(f"OrigiNet from {source}")
    print(f"{'layer':<16} {'type':<44} {'output':<16} {'params':>12}")
    for name, kind, shape, n in rows:
        print(f"{name:<16} {kind:<44} {'x'.join(map(str, shape)):<16} {n:>12,}")
    total = model.param_count()
    weight_layers = 2 * len(model_cfg.block_depths) + 2
    print(f"weight layers: {weight_layers} (conv {2 * len(model_cfg.block_depths)}, fc stage 1, classifier 1)")
    print(f"param_count: {total:,}")
    print(f"float32 memory: {total * 4 / 1e6:.2f} MB ({total * 4 / 2**20:.2f} MiB)")
    return EXIT_OK


def cmd_activations(args) -> int:
    out = _out_dir(args.out, "activations")
    kinds = [ActivationKind.parse(k) for k in (args.kinds.split(",") if args.kinds else KINDS)]
    lo, hi = args.range
    curves = {}
    for kind in kinds:
        path = activation_curve_csv(kind, lo, hi, args.steps, out / f"{kind.name}.csv")
        curves[str(kind)] = activation_curve(kind, lo, hi, args.steps)
        print(path)
    if not args.no_figures:
        from .plotting import plot_activation_curves

        print(plot_activation_curves(curves, out / "activations.png"))
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    scopes = ["activation", "layer", "model"] if args.scope == "all" else [args.scope]
    seed = args.seed or 0
    ok = True
    for scope in scopes:
        results, tol = run_scope(scope, seed, fault=args.plant_fault)
        worst = max(results, key=results.get)
        status = "PASS" if results[worst] < tol else "FAIL"
        ok &= status == "PASS"
        for name, err in results.items():
            if args.verbose:
                print(f"  {scope:<10} {name:<28} {err:.3e}")
        print(f"{status} {scope}: max discrepancy {results[worst]:.3e} at {worst} (tolerance {tol:.0e})")
    return EXIT_OK if ok else EXIT_FAIL


# ------------------------------------------------------------------ parser
def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="random seed (overrides the config file)")
    common.add_argument("--config", default=None, help="flat key = value config file")
    common.add_argument("--out", default=None, help="output file or directory")
    common.add_argument("--no-figures", action="store_true", help="skip the matplotlib figures")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="originet", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("active-image", parents=[common], help="summarise video(s) into normalised active image(s)")
    p.add_argument("input", help="frame directory, .fseq file, or directory of videos")
    p.add_argument("--ft1-mode", choices=("zero", "first_frame"), default="zero")
    p.add_argument("--abs-diff", action="store_true", help="use absolute frame differences")
    p.add_argument("--grayscale", action="store_true", help="convert colour frames to luma first")
    p.add_argument("--raw", action="store_true", help="also dump the float64 image as .fseq")
    p.set_defaults(func=cmd_active_image)

    p = sub.add_parser("synth", parents=[common], help="write a synthetic micro-motion dataset")
    p.add_argument("--subjects", type=int, default=8)
    p.add_argument("--videos", type=int, default=6, help="videos per subject")
    p.add_argument("--classes", type=int, default=4)
    p.add_argument("--frames", type=int, default=8)
    p.add_argument("--size", type=int, default=32)
    p.add_argument("--shuffle-labels", action="store_true", help="permute labels (chance-level control)")
    p.set_defaults(func=cmd_synth)

    for name, func, helptext in (
        ("train", cmd_train, "train one model on a manifest"),
        ("eval-loso", cmd_eval_loso, "leave-one-subject-out evaluation"),
    ):
        p = sub.add_parser(name, parents=[common], help=helptext)
        p.add_argument("--manifest", required=True)
        if name == "eval-loso":
            p.add_argument("--jobs", type=int, default=1, help="folds run in parallel processes")
        p.set_defaults(func=func)

    p = sub.add_parser("inspect", parents=[common], help="layer table and parameter count")
    p.add_argument("target", nargs="?", help="config or weight file (default: built-in defaults)")
    p.add_argument("--num-classes", type=int, default=None)
    p.set_defaults(func=cmd_inspect)

    p = sub.add_parser("activations", parents=[common], help="export activation curves as CSV")
    p.add_argument("--kinds", default=None, help=f"comma list from {','.join(KINDS)} (default: all)")
    p.add_argument("--range", type=float, nargs=2, default=(-5.0, 5.0), metavar=("MIN", "MAX"))
    p.add_argument("--steps", type=int, default=201)
    p.set_defaults(func=cmd_activations)

    p = sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient checks")
    p.add_argument("--scope", choices=("activation", "layer", "model", "all"), default="all")
    p.add_argument("--plant-fault", action="store_true", help="double one analytic gradient (harness self-test)")
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (NumericError, ProtocolError, StateError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL
    except (OSError, FormatError, ManifestError, ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
