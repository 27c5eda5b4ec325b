"""Command-line surface: compress, decompress, inspect, train, evaluate, rd-sweep.

Exit codes: 0 success, 1 usage error, 2 data/format error, 3 numerical
failure. Outputs are written atomically (temp file + rename) so a failing
command never leaves partial files behind. DSIC_THREADS caps the per-image
parallelism of evaluate and rd-sweep.
"""

from __future__ import annotations

import argparse
import os
import sys
import tempfile
from dataclasses import dataclass
from pathlib import Path


from . import codec, container, metrics, rangecoder, training
from .dataio import (
    CorruptFileError,
    EmptyCorpusError,
    UnsupportedFormatError,
    load_image,
    save_image,
    scan_corpus,
    split,
)
from .density import NumericalError
from .networks import InputError, preset
from .nn.checkpoint import KIND_FC, CheckpointError, read_structure

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3

_DATA_ERRORS = (
    container.FormatError,
    rangecoder.DecodeError,
    CheckpointError,
    CorruptFileError,
    UnsupportedFormatError,
    EmptyCorpusError,
    InputError,
    training.ConfigError,
    metrics.MetricError,
    FileNotFoundError,
    IsADirectoryError,
    ValueError,
)


@dataclass
class CommandOutcome:
    exit_code: int
    summary: str
    report_path: str | None = None


class CliUsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliUsageError(message)


def _atomic_write(path, data):
    path = Path(path)
    fd, tmp = tempfile.mkstemp(prefix=path.name + ".", dir=path.parent or ".")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data if isinstance(data, bytes) else data.encode())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _atomic_save_image(path, image):
    path = Path(path)
    fd, tmp = tempfile.mkstemp(prefix=path.name + ".", suffix=path.suffix, dir=path.parent or ".")
    os.close(fd)
    try:
        save_image(tmp, image)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _workers():
    try:
        return max(1, int(os.environ.get("DSIC_THREADS", "1")))
    except ValueError:
        return 1


def _infer_num_classes(ckpt_bytes):
    fc_shapes = [r["shapes"][0] for r in read_structure(ckpt_bytes) if r["kind"] == KIND_FC]
    if not fc_shapes:
        raise CheckpointError("checkpoint carries no fully connected layers; cannot infer class count")
    return int(fc_shapes[-1][0])


def _load_model(model_path, preset_name, num_classes=None):
    data = Path(model_path).read_bytes()
    if num_classes is None:
        num_classes = _infer_num_classes(data)
    model, density = training.load_checkpoint(data, preset(preset_name), num_classes)
    return model, density


def _semantic_lines(payload):
    lines = [f"class: {payload.class_id}"]
    ranked = ", ".join(
        f"{cid}:{prob / 255.0:.3f}" for cid, prob in zip(payload.top5_ids, payload.top5_probs)
    )
    lines.append(f"top5: {ranked}")
    return lines


def _result_lines(result):
    lines = [f"class: {result.class_id}"]
    ranked = ", ".join(f"{cid}:{prob:.3f}" for cid, prob in result.top_k)
    lines.append(f"top5: {ranked}")
    return lines


def cmd_compress(args) -> CommandOutcome:
    model, _ = _load_model(args.model, args.preset)
    image = load_image(args.input)
    blob = codec.compress_array(image, model, variant=args.variant)
    data = container.serialize(blob)
    _atomic_write(args.out, data)
    rate = len(data) * 8.0 / (blob.orig_width * blob.orig_height)
    summary = f"wrote {args.out}: {len(data)} bytes, {rate:.4f} bpp"
    if args.variant == "pre":
        summary += f", class {blob.semantics.class_id}"
    print(summary)
    return CommandOutcome(EXIT_OK, summary)


def cmd_decompress(args) -> CommandOutcome:
    blob = container.parse(Path(args.input).read_bytes())
    model, _ = _load_model(args.model, container.PRESET_NAMES.get(blob.preset_id, "?"), blob.num_classes)
    image, semantics = codec.decompress_blob(blob, model, with_semantics=args.semantics)
    _atomic_save_image(args.out, image)
    summary = f"wrote {args.out}: {blob.orig_width}x{blob.orig_height}"
    print(summary)
    if args.semantics:
        lines = (
            _semantic_lines(semantics)
            if blob.variant == container.VARIANT_PRE
            else _result_lines(semantics)
        )
        print("\n".join(lines))
    return CommandOutcome(EXIT_OK, summary)


def cmd_inspect(args) -> CommandOutcome:
    blob = container.parse(Path(args.input).read_bytes())
    lines = [
        f"version: {blob.version}",
        f"variant: {'pre' if blob.variant == container.VARIANT_PRE else 'post'}",
        f"coded dims: {blob.width}x{blob.height}",
        f"original dims: {blob.orig_width}x{blob.orig_height}",
        f"preset: {blob.preset_name}",
        f"bits: {blob.bits}",
        f"classes: {blob.num_classes}",
        f"entropy payload: {len(blob.entropy_payload)} bytes",
        f"semantic overhead: {container.semantic_overhead_bits(blob)} bits",
    ]
    if blob.semantics is not None:
        lines.extend(_semantic_lines(blob.semantics))
    print("\n".join(lines))
    return CommandOutcome(EXIT_OK, f"{args.input}: valid {blob.preset_name} blob")


def cmd_train(args) -> CommandOutcome:
    config = training.parse_config_file(args.config)
    if args.seed is not None:
        config.seed = args.seed
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    ckpt_path = out_dir / "model.dsicw"
    history_path = out_dir / "history.csv"

    def progress(step, entry):
        if step % 100 == 0:
            print(f"step {step}: L={entry.total:.4f} R={entry.rate_bits:.1f} D={entry.distortion:.5f} Lsem={entry.semantic:.4f}")

    try:
        result = training.train(config, progress=progress if args.verbose else None)
    except training.TrainingDiverged as exc:
        _atomic_write(ckpt_path, exc.last_good_checkpoint)
        rows = [training.LossBreakdown.CSV_HEADER] + [e.csv_row(i) for i, e in enumerate(exc.history)]
        _atomic_write(history_path, "\n".join(rows) + "\n")
        summary = f"diverged at step {exc.step}; last good checkpoint kept at {ckpt_path}"
        print(summary, file=sys.stderr)
        return CommandOutcome(EXIT_NUMERIC, summary)
    _atomic_write(ckpt_path, training.serialize_layers(training.model_layers(result.model, result.density)))
    _atomic_write(history_path, result.history_csv())
    result.corpus.write_labels()
    summary = f"trained {config.steps} steps; checkpoint {ckpt_path}, history {history_path}"
    print(summary)
    return CommandOutcome(EXIT_OK, summary, str(history_path))


def _test_samples(corpus_dir, seed):
    corpus = split(scan_corpus(corpus_dir, seed=seed), (0.8, 0.1, 0.1), seed=seed)
    return corpus, corpus.subset("test")


def cmd_evaluate(args) -> CommandOutcome:
    model, _ = _load_model(args.model, args.preset)
    corpus, samples = _test_samples(args.corpus, args.seed if args.seed is not None else 0)
    point = metrics.evaluate_corpus(samples, model, variant=args.variant, workers=_workers())
    csv = metrics.rd_csv([point])
    _atomic_write(args.report, csv)
    summary = (
        f"{point.preset}/{point.variant} on {len(samples)} images: {point.bpp:.4f} bpp, "
        f"{point.psnr_db:.2f} dB, ms-ssim {point.ms_ssim:.4f}, top1 {point.top1:.3f}"
    )
    print(summary)
    return CommandOutcome(EXIT_OK, summary, args.report)


def cmd_rd_sweep(args) -> CommandOutcome:
    pairs = []
    for spec_item in args.model:
        name, _, path = spec_item.partition("=")
        if not path:
            raise CliUsageError(f"--model expects preset=path, got {spec_item!r}")
        if name not in container.PRESET_IDS:
            raise CliUsageError(f"unknown preset {name!r} in --model {spec_item!r}")
        pairs.append((name, path))
    if len(pairs) < 2:
        raise CliUsageError("rd-sweep needs checkpoints for at least 2 presets")
    corpus, samples = _test_samples(args.corpus, args.seed if args.seed is not None else 0)
    points = []
    for name, path in sorted(pairs, key=lambda p: container.PRESET_IDS[p[0]]):
        model, _ = _load_model(path, name)
        points.append(metrics.evaluate_corpus(samples, model, variant=args.variant, workers=_workers()))
    csv = metrics.rd_csv(points)
    _atomic_write(args.report, csv)
    plot_path = str(Path(args.report).with_suffix(".png"))
    _write_rd_plot(points, plot_path)
    summary = f"swept {len(points)} presets over {len(samples)} images; report {args.report}, plot {plot_path}"
    print(summary)
    return CommandOutcome(EXIT_OK, summary, args.report)


def _write_rd_plot(points, path):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.5))
    xs = [p.bpp for p in points]
    ax1.plot(xs, [p.ms_ssim for p in points], "o-")
    ax1.set_xlabel("bpp")
    ax1.set_ylabel("MS-SSIM")
    ax2.plot(xs, [p.psnr_db for p in points], "o-")
    ax2.set_xlabel("bpp")
    ax2.set_ylabel("PSNR (dB)")
    for ax in (ax1, ax2):
        for p in points:
            ax.annotate(p.preset, (p.bpp, p.ms_ssim if ax is ax1 else p.psnr_db))
    fig.tight_layout()
    fd, tmp = tempfile.mkstemp(suffix=".png", dir=str(Path(path).parent or "."))
    os.close(fd)
    fig.savefig(tmp, dpi=110)
    plt.close(fig)
    os.replace(tmp, path)


def build_parser():
    parser = _Parser(prog="dsic", description="Semantic image codec")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("compress", help="compress an image into a blob")
    p.add_argument("input")
    p.add_argument("--model", required=True)
    p.add_argument("--preset", choices=("lo", "mid", "hi"), required=True)
    p.add_argument("--variant", choices=("pre", "post"), default="post")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_compress)

    p = sub.add_parser("decompress", help="reconstruct an image from a blob")
    p.add_argument("input")
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--semantics", action="store_true")
    p.set_defaults(fn=cmd_decompress)

    p = sub.add_parser("inspect", help="print blob header fields")
    p.add_argument("input")
    p.set_defaults(fn=cmd_inspect)

    p = sub.add_parser("train", help="train a model from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--verbose", action="store_true")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("evaluate", help="measure rate/quality/accuracy on a corpus test split")
    p.add_argument("corpus")
    p.add_argument("--model", required=True)
    p.add_argument("--preset", choices=("lo", "mid", "hi"), required=True)
    p.add_argument("--variant", choices=("pre", "post"), default="post")
    p.add_argument("--report", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(fn=cmd_evaluate)

    p = sub.add_parser("rd-sweep", help="rate-distortion sweep over preset checkpoints")
    p.add_argument("corpus")
    p.add_argument("--model", action="append", required=True, metavar="PRESET=PATH")
    p.add_argument("--variant", choices=("pre", "post"), default="post")
    p.add_argument("--report", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(fn=cmd_rd_sweep)
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        outcome = args.fn(args)
        return outcome.exit_code
    except CliUsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except _DATA_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
