"""Command-line entry point orchestrating every pipeline stage: corpus
synthesis, detection/alignment preprocessing, training, sampling from a
checkpoint, parameter counting, dataset splitting, and loss reporting.

Exit codes: 0 success, 2 usage or invalid arguments, 3 input/output
failure, 4 numerical failure (non-finite loss). The seed for a command
comes from, in order of precedence: the --seed flag, the config file,
the STARGAN_DESK_SEED environment variable, and finally 0.
"""

import argparse
import json
import os
import sys
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
from PIL import Image

from . import dataset as ds
from . import facepipe as fp
from . import imaging
from . import report as rp
from . import trainer as tr
from .networks import count_params

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_IO = 3
EXIT_NUMERICAL = 4


def _now():
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _env_seed():
    raw = os.environ.get("STARGAN_DESK_SEED")
    if raw is None:
        return None
    try:
        return int(raw)
    except ValueError:
        raise ValueError(f"STARGAN_DESK_SEED must be an integer, got {raw!r}") from None


def _resolve_seed(flag_value, config_value=None):
    for candidate in (flag_value, config_value, _env_seed()):
        if candidate is not None:
            return int(candidate)
    return 0


def _write_run_manifest(out_dir, command, config, seed, outputs, started):
    payload = {
        "command": command,
        "config": config,
        "seed": seed,
        "started": started,
        "finished": _now(),
        "outputs": [str(p) for p in outputs],
    }
    path = Path(out_dir) / "run_manifest.json"
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    os.replace(tmp, path)
    return path


# ---------------------------------------------------------------------------
# config files: flat "key = value" lines

def parse_config_text(text):
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep or not key.strip():
            raise ValueError(f"config line {lineno}: expected 'key = value', got {raw!r}")
        out[key.strip()] = value.strip()
    return out


def coerce_config_values(raw):
    """Cast raw config strings to the types of the TrainConfig fields."""
    defaults = tr.TrainConfig()
    known = set(defaults.to_dict())
    out = {}
    for key, value in raw.items():
        if key not in known:
            raise ValueError(f"unknown config key {key!r}")
        target = type(getattr(defaults, key))
        try:
            out[key] = target(value)
        except (TypeError, ValueError):
            raise ValueError(f"config key {key!r}: cannot read {value!r} as {target.__name__}") from None
    return out


def load_train_config(config_path, overrides, seed_flag):
    values = {}
    if config_path is not None:
        values.update(coerce_config_values(parse_config_text(Path(config_path).read_text(encoding="utf-8"))))
    for item in overrides or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise ValueError(f"--override needs KEY=VALUE, got {item!r}")
        values.update(coerce_config_values({key.strip(): value.strip()}))
    values["seed"] = _resolve_seed(seed_flag, values.get("seed"))
    return tr.TrainConfig.from_dict(values)


# ---------------------------------------------------------------------------
# subcommands

def cmd_synth_data(args):
    started = _now()
    seed = _resolve_seed(args.seed)
    out = Path(args.out)
    manifest = ds.synth_sprites(args.identities, args.frames, args.size, seed, out)
    outputs = [out / "manifest.csv", out / ds.FACE_BOX_SIDECAR]
    _write_run_manifest(
        out,
        "synth-data",
        {"identities": args.identities, "frames": args.frames, "size": args.size},
        seed,
        outputs,
        started,
    )
    print(f"frames: {len(manifest)}")
    print(f"manifest: {out / 'manifest.csv'}")
    return EXIT_OK


def _build_scorers(kind):
    if kind == "template":
        scorer = fp.TemplateScorer.for_sprites()
    else:
        scorer = fp.RejectAllScorer()
    return [scorer, scorer, scorer]


def cmd_preprocess(args):
    started = _now()
    manifest = ds.load_manifest(Path(args.in_dir) / "manifest.csv")
    scorers = _build_scorers(args.scorer)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    kept = []
    for record in manifest.records:
        src_path = manifest.root / record.frame_path
        with Image.open(src_path) as img:
            arr = np.asarray(img.convert("RGB"))
        detections = []
        try:
            detections = fp.cascade_detect(arr, scorers)
        except ValueError:
            pass  # image smaller than the detectable face size
        if args.debug:
            info = {"frame": record.frame_path, "detections": len(detections)}
            if detections:
                box, _, score = detections[0]
                info["box"] = [round(v, 2) for v in (box.x1, box.y1, box.x2, box.y2)]
                info["score"] = round(score, 4)
            print(json.dumps(info, sort_keys=True))
        if not detections or detections[0][1] is None:
            continue
        _, landmarks, _ = detections[0]
        aligned = fp.align_face(arr, landmarks, out_size=args.size)
        pixels = np.floor(np.clip(aligned, 0.0, 255.0) + 0.5).astype(np.uint8)
        dest = out / record.frame_path
        dest.parent.mkdir(parents=True, exist_ok=True)
        Image.fromarray(pixels, "RGB").save(dest, format="PNG")
        kept.append(record)

    aligned_manifest = ds.DatasetManifest(kept, root=out)
    ds.save_manifest(aligned_manifest, out / "manifest.csv")
    _write_run_manifest(
        out,
        "preprocess",
        {"in": str(args.in_dir), "size": args.size, "scorer": args.scorer},
        0,
        [out / "manifest.csv"],
        started,
    )
    print(f"kept: {len(kept)}/{len(manifest)}")
    print(f"manifest: {out / 'manifest.csv'}")
    return EXIT_OK


def cmd_train(args):
    started = _now()
    config = load_train_config(args.config, args.override, args.seed)
    manifest = ds.load_manifest(args.manifest)
    g, d = tr.build_networks(config)
    out = Path(args.out)
    final = tr.run(config, manifest, g, d, out, echo=not args.quiet)
    ckpt_path = out / f"checkpoint_{final.iteration:06d}.ckpt"
    _write_run_manifest(out, "train", config.to_dict(), config.seed, [ckpt_path, out / "train.log"], started)
    print(f"checkpoint: {ckpt_path}")
    return EXIT_OK


def cmd_sample(args):
    try:
        ckpt = tr.load_checkpoint(args.checkpoint)
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_IO
    config = tr.TrainConfig.from_dict(ckpt.config)
    g, d = tr.build_networks(config)
    tr.restore_networks(ckpt, g, d)

    inputs_dir = Path(args.inputs)
    if not inputs_dir.is_dir():
        print(f"error: {inputs_dir} is not a directory", file=sys.stderr)
        return EXIT_IO
    paths = sorted(inputs_dir.rglob("*.png"))[: args.rows]
    if not paths:
        print(f"error: no PNG inputs under {inputs_dir}", file=sys.stderr)
        return EXIT_IO

    tiles = []
    size = config.image_size
    for p in paths:
        with Image.open(p) as img:
            resized = img.convert("RGB").resize((size, size), Image.BILINEAR)
        tiles.append(imaging.image_to_tensor(np.asarray(resized)))
    png = imaging.compose_grid(tiles, g, domain_count=g.cfg.c_dim)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_bytes(png)
    print(f"grid: {out}")
    return EXIT_OK


def cmd_count_params(args):
    config = load_train_config(args.config, None, None)
    g, d = tr.build_networks(config)
    print(f"G: {count_params(g)}")
    print(f"D: {count_params(d)}")
    return EXIT_OK


def cmd_split(args):
    manifest = ds.load_manifest(args.manifest, check_files=False)
    seed = _resolve_seed(args.seed)
    train, test = tr.split_dataset(manifest, ratio=args.ratio, seed=seed)
    out = Path(args.out) if args.out else Path(args.manifest).parent
    out.mkdir(parents=True, exist_ok=True)
    ds.save_manifest(train, out / "manifest_train.csv")
    ds.save_manifest(test, out / "manifest_test.csv")
    print(f"train: {len(train.identities())} identities, {len(train)} frames")
    print(f"test: {len(test.identities())} identities, {len(test)} frames")
    return EXIT_OK


def cmd_report(args):
    started = _now()
    try:
        result = rp.generate_report(args.log, args.out)
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_IO
    _write_run_manifest(
        Path(args.out),
        "report",
        {"log": str(args.log)},
        0,
        [result["csv"], *result["figures"]],
        started,
    )
    print(f"rows: {result['rows']}")
    print(f"csv: {result['csv']}")
    for fig in result["figures"]:
        print(f"figure: {fig}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser

def build_parser():
    parser = argparse.ArgumentParser(
        prog="stargan-desk",
        description="Desk-scale multi-domain expression translation pipeline.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth-data", help="render a synthetic sprite corpus")
    p.add_argument("--identities", type=int, required=True, help="number of sprite identities")
    p.add_argument("--frames", type=int, required=True, help="frames per identity and expression")
    p.add_argument("--size", type=int, default=64, help="square frame size in pixels")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True, help="output corpus directory")
    p.set_defaults(func=cmd_synth_data)

    p = sub.add_parser("preprocess", help="detect, align, and re-emit a corpus")
    p.add_argument("--in", dest="in_dir", required=True, help="corpus directory with manifest.csv")
    p.add_argument("--out", required=True, help="aligned output directory")
    p.add_argument("--size", type=int, default=64, help="aligned output size")
    p.add_argument("--scorer", choices=("template", "reject"), default="template")
    p.add_argument("--debug", action="store_true", help="print one JSON line per image")
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("train", help="run the training schedule")
    p.add_argument("--manifest", required=True, help="training manifest CSV")
    p.add_argument("--config", default=None, help="flat key = value config file")
    p.add_argument("--out", required=True, help="run output directory")
    p.add_argument("--seed", type=int, default=None, help="overrides the config file seed")
    p.add_argument("--override", action="append", metavar="KEY=VALUE", help="config override, repeatable")
    p.add_argument("--quiet", action="store_true", help="do not echo log lines to stdout")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sample", help="translate held-out inputs with a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--inputs", required=True, help="directory of input PNGs")
    p.add_argument("--out", required=True, help="output grid PNG path")
    p.add_argument("--rows", type=int, default=4, help="maximum input rows")
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("count-params", help="print generator/discriminator parameter totals")
    p.add_argument("--config", default=None)
    p.set_defaults(func=cmd_count_params)

    p = sub.add_parser("split", help="identity-level train/test split")
    p.add_argument("--manifest", required=True)
    p.add_argument("--ratio", type=float, default=0.9)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default=None, help="defaults to the manifest's directory")
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("report", help="render loss curves and a CSV from a train.log")
    p.add_argument("--log", required=True, help="path to train.log")
    p.add_argument("--out", required=True, help="report output directory")
    p.set_defaults(func=cmd_report)

    return parser


def entry(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return int(args.func(args) or EXIT_OK)
    except tr.NonFiniteLossError as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERICAL
    except ds.ManifestError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_IO
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_IO
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    raise SystemExit(entry())
