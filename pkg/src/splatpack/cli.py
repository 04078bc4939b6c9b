"""Command-line interface.

Subcommands: pipeline, prune, qat, encode, decode, render, inspect, metrics.
Exit codes: 0 success, 1 usage, 2 I/O, 3 data/format, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import codec, metrics as metrics_mod, pipeline, ply, prune, quant, render, views as views_io
from .scene import ATTRIBUTE_NAMES

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_IO = 2
EXIT_DATA = 3
EXIT_NUMERICAL = 4


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _load_scene_or_container(path):
    """Return (scene, container_or_none) from a .ply or container file."""
    data = Path(path).read_bytes()
    if data[:4] == codec.MAGIC:
        qscene = codec.decode(data)
        return quant.dequantize_scene(qscene), qscene
    return ply.read_scene(data), None


def _load_config(args, need_seed: bool):
    overrides = {
        key: getattr(args, key, None)
        for key in ("seed", "gamma_iter", "gamma_target", "rounds", "qat_steps")
    }
    if args.config:
        return pipeline.PipelineConfig.from_json_file(args.config, overrides)
    merged = {k: v for k, v in overrides.items() if v is not None}
    if need_seed and "seed" not in merged:
        raise UsageError("a seed is required: pass --config or --seed")
    merged.setdefault("seed", 0)
    if merged.get("gamma_iter") is None and merged.get("gamma_target") is None:
        merged["gamma_iter"] = 0.0
    return pipeline.PipelineConfig.from_dict(merged)


def _emit(args, payload: dict):
    text = json.dumps(payload, indent=None if args.json else 2, sort_keys=False)
    print(text)


def cmd_pipeline(args) -> int:
    cfg = _load_config(args, need_seed=True)
    scene = ply.read_scene(Path(args.input).read_bytes())
    views = views_io.load_views(args.views)
    result = pipeline.run_pipeline(scene, views, cfg)
    Path(args.output).write_bytes(result.container)
    if args.report:
        Path(args.report).write_text(json.dumps(result.report, indent=2))
    _emit(args, result.report)
    return EXIT_OK


def cmd_prune(args) -> int:
    cfg = _load_config(args, need_seed=True)
    scene = ply.read_scene(Path(args.input).read_bytes())
    views = views_io.load_views(args.views)
    prune_cfg = prune.PruneConfig(
        gamma_iter=cfg.effective_gamma_iter,
        prune_interval=cfg.prune_interval,
        rounds=cfg.rounds,
        final_finetune_steps=cfg.final_finetune_steps,
    )
    pruned, reports = prune.prune_finetune_loop(
        scene, views, prune_cfg, seed=cfg.seed, learning_rates=cfg.learning_rates
    )
    Path(args.output).write_bytes(ply.write_scene(pruned))
    _emit(args, {
        "input_count": scene.count,
        "final_count": pruned.count,
        "rounds": [r.to_dict() for r in reports],
    })
    return EXIT_OK


def cmd_qat(args) -> int:
    cfg = _load_config(args, need_seed=True)
    scene = ply.read_scene(Path(args.input).read_bytes())
    views = views_io.load_views(args.views)
    tuned, states = quant.qat_finetune(
        scene, views, quant.default_states(cfg.bits), cfg.qat_steps,
        learning_rates=cfg.learning_rates, seed=cfg.seed,
    )
    Path(args.output).write_bytes(ply.write_scene(tuned))
    _emit(args, {
        "steps": cfg.qat_steps,
        "quantizers": {
            name: {"bits": qs.bits, "signed": qs.signed, "step": qs.step}
            for name, qs in states.items()
        },
    })
    return EXIT_OK


def cmd_encode(args) -> int:
    cfg = _load_config(args, need_seed=False)
    scene = ply.read_scene(Path(args.input).read_bytes())
    qscene = quant.quantize_scene(scene, quant.default_states(cfg.bits))
    order = "original" if args.no_morton or not cfg.morton else "morton"
    container = codec.encode(qscene, order=order, level=cfg.deflate_level)
    Path(args.output).write_bytes(container)
    _emit(args, {
        "count": qscene.count,
        "order": order,
        "container_bytes": len(container),
    })
    return EXIT_OK


def cmd_decode(args) -> int:
    qscene = codec.decode(Path(args.input).read_bytes())
    scene = quant.dequantize_scene(qscene)
    Path(args.output).write_bytes(ply.write_scene(scene))
    _emit(args, {"count": scene.count, "morton_ordered": qscene.morton_ordered})
    return EXIT_OK


def cmd_render(args) -> int:
    scene, _ = _load_scene_or_container(args.input)
    camera = views_io.load_camera(args.camera, args.view_index)
    image = render.rasterize(scene, camera)
    views_io.save_image(args.output, image)
    return EXIT_OK


def _value_entropy(values: np.ndarray):
    flat = np.asarray(values, dtype=np.float32).reshape(-1)
    if flat.size == 0:
        return None
    return codec.entropy_bits(flat.view(np.uint32))


def cmd_inspect(args) -> int:
    scene, qscene = _load_scene_or_container(args.input)
    alpha = scene.activated_opacity()
    hist, _ = np.histogram(alpha, bins=64, range=(0.0, 1.0))
    info = {
        "count": scene.count,
        "file_bytes": Path(args.input).stat().st_size,
        "opacity_histogram_64": [int(v) for v in hist],
        "attribute_ranges": {
            name: (
                [float(scene.attribute(name).min()), float(scene.attribute(name).max())]
                if scene.count else None
            )
            for name in ATTRIBUTE_NAMES
        },
    }
    if qscene is not None:
        info["morton_ordered"] = qscene.morton_ordered
        info["entropy_bits"] = {
            name: codec.entropy_bits(qscene.codes[name]) if qscene.count else None
            for name in ATTRIBUTE_NAMES
        }
        info["quantizers"] = {
            name: {"bits": qs.bits, "signed": qs.signed, "step": qs.step}
            for name, qs in qscene.states.items()
        }
    else:
        info["entropy_bits"] = {
            name: _value_entropy(scene.attribute(name)) for name in ATTRIBUTE_NAMES
        }
    _emit(args, info)
    return EXIT_OK


def cmd_metrics(args) -> int:
    a = views_io.load_image(args.image_a)
    b = views_io.load_image(args.image_b)
    p = metrics_mod.psnr(a, b)
    out = {"psnr": "inf" if p == float("inf") else p, "ssim": metrics_mod.ssim(a, b)}
    if args.raw and args.compressed:
        raw = Path(args.raw).stat().st_size
        comp = Path(args.compressed).stat().st_size
        out.update(metrics_mod.size_report(comp, raw))
    _emit(args, out)
    return EXIT_OK


def build_parser() -> _Parser:
    parser = _Parser(prog="splatpack", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, views=False, config=True, output=True):
        if config:
            p.add_argument("--config", help="JSON config file")
            p.add_argument("--seed", type=int, default=None)
        if views:
            p.add_argument("--views", required=True, help="view directory")
        if output:
            p.add_argument("--output", required=True)
        p.add_argument("--json", action="store_true", help="compact JSON to stdout")

    p = sub.add_parser("pipeline", help="prune + QAT + encode")
    p.add_argument("input", help="input checkpoint PLY")
    common(p, views=True)
    p.add_argument("--report", help="also write the JSON report here")
    p.add_argument("--gamma-iter", dest="gamma_iter", type=float, default=None)
    p.add_argument("--gamma-target", dest="gamma_target", type=float, default=None)
    p.add_argument("--rounds", type=int, default=None)
    p.add_argument("--qat-steps", dest="qat_steps", type=int, default=None)
    p.set_defaults(fn=cmd_pipeline)

    p = sub.add_parser("prune", help="gradient/opacity-aware prune + fine-tune")
    p.add_argument("input")
    common(p, views=True)
    p.add_argument("--gamma-iter", dest="gamma_iter", type=float, default=None)
    p.add_argument("--gamma-target", dest="gamma_target", type=float, default=None)
    p.add_argument("--rounds", type=int, default=None)
    p.set_defaults(fn=cmd_prune)

    p = sub.add_parser("qat", help="quantization-aware fine-tune")
    p.add_argument("input")
    common(p, views=True)
    p.add_argument("--qat-steps", dest="qat_steps", type=int, default=None)
    p.set_defaults(fn=cmd_qat)

    p = sub.add_parser("encode", help="quantize at initial steps and encode")
    p.add_argument("input")
    common(p)
    p.add_argument("--no-morton", action="store_true")
    p.set_defaults(fn=cmd_encode)

    p = sub.add_parser("decode", help="container -> PLY with dequantized values")
    p.add_argument("input")
    common(p, config=False)
    p.set_defaults(fn=cmd_decode)

    p = sub.add_parser("render", help="rasterize a PLY or container")
    p.add_argument("input")
    p.add_argument("--camera", required=True, help="camera JSON file")
    p.add_argument("--view-index", dest="view_index", type=int, default=0)
    common(p, config=False)
    p.set_defaults(fn=cmd_render)

    p = sub.add_parser("inspect", help="summarize a PLY or container")
    p.add_argument("input")
    common(p, config=False, output=False)
    p.set_defaults(fn=cmd_inspect)

    p = sub.add_parser("metrics", help="PSNR/SSIM between two PNGs")
    p.add_argument("image_a")
    p.add_argument("image_b")
    p.add_argument("--raw", help="original file for the size report")
    p.add_argument("--compressed", help="compressed file for the size report")
    common(p, config=False, output=False)
    p.set_defaults(fn=cmd_metrics)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.fn(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FileNotFoundError, IsADirectoryError, PermissionError, OSError) as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ply.PlyError, codec.ContainerError, ValueError, KeyError, json.JSONDecodeError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (FloatingPointError, ArithmeticError) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


def entrypoint() -> None:
    sys.exit(main())
