"""Command-line interface: training, every generation op, metrics, service."""

from __future__ import annotations

import argparse
import json
import os
import sys

from . import apps
from .bundle import load_bundle
from .config import build_config
from .identity import blend_constant, constant_id, load_id_map
from .metrics import (StubFeatureExtractor, evaluate_samples, fit_niqe_model,
                      load_niqe_model)
from .pyramid import load_image, save_image
from .training import ConfigurationError, train_all


def _add_common(p):
    p.add_argument("--config", help="flat key=value config file")
    p.add_argument("--seed", type=int, default=None, help="root RNG seed")
    p.add_argument("--out-dir", default=".", help="where outputs are written")
    p.add_argument("--device", default="cpu", help="compute device (cpu)")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override a single config key")


def _overrides(args) -> dict:
    out = {}
    for item in args.set:
        if "=" not in item:
            raise ConfigurationError(f"--set expects KEY=VALUE, got {item!r}")
        key, value = item.split("=", 1)
        out[key.strip()] = value.strip()
    if args.seed is not None:
        out["seed"] = args.seed
    return out


def _config(args):
    if args.device not in ("cpu", "auto"):
        raise ConfigurationError(f"only cpu execution is supported, got --device {args.device}")
    return build_config(args.config, _overrides(args))


def _parse_size(text):
    if text is None:
        return None
    h, _, w = text.partition("x")
    return (int(h), int(w))


def _extractor(name: str, seed: int = 0):
    if name == "stub":
        return StubFeatureExtractor(seed=seed)
    if name == "inception":
        from .metrics import InceptionFeatureExtractor

        return InceptionFeatureExtractor()
    raise ConfigurationError(f"unknown feature extractor {name!r}")


def _id_arg(bundle, args):
    if getattr(args, "id_map", None):
        return load_id_map(args.id_map, K=bundle.K)
    if getattr(args, "blend", None):
        weights = [float(v) for v in args.blend.split(",")]
        return blend_constant(weights, bundle.plan.sizes[0])
    k = getattr(args, "id", 0) or 0
    return constant_id(int(k), bundle.K, bundle.plan.sizes[0])


def _save(args, name, image):
    os.makedirs(args.out_dir, exist_ok=True)
    path = os.path.join(args.out_dir, name)
    save_image(image, path)
    print(path)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="patchblend",
                                     description="identity-conditioned multi-scale patch GAN toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model on a few images")
    _add_common(p)
    p.add_argument("--images", nargs="+", required=True)

    p = sub.add_parser("sample", help="draw random samples")
    _add_common(p)
    p.add_argument("--bundle", required=True)
    p.add_argument("--id", type=int, default=0)
    p.add_argument("--blend", help="comma weights for a constant blend map")
    p.add_argument("--id-map", help="identity map file (indexed PNG or raster)")
    p.add_argument("--size", help="HxW output size")
    p.add_argument("--n", type=int, default=1)

    p = sub.add_parser("reconstruct", help="regenerate a training image")
    _add_common(p)
    p.add_argument("--bundle", required=True)
    p.add_argument("--id", type=int, default=0)

    p = sub.add_parser("meld", help="widened transition between two identities")
    _add_common(p)
    p.add_argument("--bundle", required=True)
    p.add_argument("--left", type=int, default=0)
    p.add_argument("--right", type=int, default=1)
    p.add_argument("--width", type=int, required=True)
    p.add_argument("--frac", type=float, default=1.0 / 3.0)

    p = sub.add_parser("morph", help="interpolate identities over time")
    _add_common(p)
    p.add_argument("--bundle", required=True)
    p.add_argument("--weights", required=True,
                   help="comma positions between id 0 and 1, e.g. 0.2,0.4,0.6,0.8")
    p.add_argument("--noise", choices=["reconstruction", "random"], default="reconstruction")

    p = sub.add_parser("fuse", help="structure from one identity, texture from another")
    _add_common(p)
    p.add_argument("--bundle", required=True)
    p.add_argument("--structure", type=int, required=True)
    p.add_argument("--texture", type=int, required=True)
    p.add_argument("--scale", type=int, required=True)

    p = sub.add_parser("spatial", help="sample under a painted identity mask")
    _add_common(p)
    p.add_argument("--bundle", required=True)
    p.add_argument("--mask", required=True)
    p.add_argument("--faithful", help="comma identity indices kept faithful")

    p = sub.add_parser("edit", help="re-render an edited image through fine scales")
    _add_common(p)
    p.add_argument("--bundle", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--scale", type=int, default=None)
    p.add_argument("--id", type=int, default=0)

    p = sub.add_parser("eval", help="diversity/SIFID(/NIQE) over random samples")
    _add_common(p)
    p.add_argument("--bundle", required=True)
    p.add_argument("--id", type=int, default=0)
    p.add_argument("--n", type=int, default=50)
    p.add_argument("--extractor", default="stub")
    p.add_argument("--niqe-model", default=None)

    p = sub.add_parser("bench-memory", help="peak step memory vs image size")
    _add_common(p)
    p.add_argument("--sides", default="256,384,512")
    p.add_argument("--crop", type=int, default=128)
    p.add_argument("--channels", type=int, default=32)

    p = sub.add_parser("experiment", help="trend experiments")
    _add_common(p)
    p.add_argument("kind", choices=["panorama", "capacity", "cropping"])
    p.add_argument("--image", help="panorama or single training image")
    p.add_argument("--images", nargs="*", help="image pool for capacity")
    p.add_argument("--crops", type=int, default=6)
    p.add_argument("--overlap", type=float, default=0.5)
    p.add_argument("--replicates", type=int, default=1)
    p.add_argument("--ks", default="1,2,4")
    p.add_argument("--channels", default="32,64")
    p.add_argument("--n", type=int, default=50)
    p.add_argument("--extractor", default="stub")

    p = sub.add_parser("serve", help="HTTP inference service")
    _add_common(p)
    p.add_argument("--bundles", required=True, help="directory of bundle directories")
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--host", default="127.0.0.1")

    p = sub.add_parser("niqe-fit", help="fit NIQE pristine-model coefficients")
    _add_common(p)
    p.add_argument("--images", nargs="+", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--block-size", type=int, default=96)

    return parser


def _cmd_train(args) -> int:
    cfg = _config(args)
    images = [load_image(p, max_dim=cfg.max_dim) for p in args.images]

    def progress(level, it, rec):
        if it % 100 == 0 or it == cfg.iterations - 1:
            print(f"scale {level} iter {it}: d={rec['d_loss']:.4f} "
                  f"adv={rec['g_adv']:.4f} rec={rec['g_rec']:.5f}")

    bundle = train_all(images, cfg, out_dir=args.out_dir, progress=progress,
                       image_sources=list(args.images))
    print(f"trained {bundle.plan.n_levels} scales -> {args.out_dir}")
    return 0


def _cmd_sample(args) -> int:
    bundle = load_bundle(args.bundle)
    ids = _id_arg(bundle, args)
    size = _parse_size(args.size)
    seed = args.seed or 0
    for i in range(args.n):
        img = apps.sample(bundle, ids, size=size, seed=seed + i)
        _save(args, f"sample_{i:03d}.png", img)
    return 0


def _cmd_reconstruct(args) -> int:
    bundle = load_bundle(args.bundle)
    _save(args, f"reconstruct_{args.id}.png", apps.reconstruct(bundle, args.id))
    return 0


def _cmd_meld(args) -> int:
    bundle = load_bundle(args.bundle)
    img = apps.meld(bundle, args.left, args.right, args.width,
                    transition_frac=args.frac, seed=args.seed or 0)
    _save(args, f"meld_{args.left}_{args.right}.png", img)
    return 0


def _cmd_morph(args) -> int:
    bundle = load_bundle(args.bundle)
    positions = [float(v) for v in args.weights.split(",")]
    weights = apps.morph_pair_weights(positions, K=bundle.K)
    frames = apps.morph(bundle, weights, noise_mode=args.noise, seed=args.seed or 0)
    for i, frame in enumerate(frames):
        _save(args, f"morph_{i:03d}.png", frame)
    return 0


def _cmd_fuse(args) -> int:
    bundle = load_bundle(args.bundle)
    img = apps.fuse(bundle, args.structure, args.texture, args.scale, seed=args.seed or 0)
    _save(args, f"fuse_s{args.structure}_t{args.texture}_sc{args.scale}.png", img)
    return 0


def _cmd_spatial(args) -> int:
    bundle = load_bundle(args.bundle)
    mask = load_id_map(args.mask, K=bundle.K)
    faithful = [int(v) for v in args.faithful.split(",")] if args.faithful else None
    img = apps.spatial_sample(bundle, mask, faithful=faithful, seed=args.seed or 0)
    _save(args, "spatial.png", img)
    return 0


def _cmd_edit(args) -> int:
    bundle = load_bundle(args.bundle)
    edited = load_image(args.image)
    img = apps.edit(bundle, edited, inject_scale=args.scale, k=args.id,
                    seed=args.seed or 0)
    _save(args, "edit.png", img)
    return 0


def _cmd_eval(args) -> int:
    bundle = load_bundle(args.bundle)
    extractor = _extractor(args.extractor)
    idm = constant_id(args.id, bundle.K, bundle.plan.sizes[0])
    seed = args.seed or 0
    samples = [apps.sample(bundle, idm, seed=seed + i) for i in range(args.n)]
    model = load_niqe_model(args.niqe_model) if args.niqe_model else None
    report = evaluate_samples(samples, bundle.images[args.id], extractor, niqe_model=model)
    os.makedirs(args.out_dir, exist_ok=True)
    csv_path = os.path.join(args.out_dir, f"metrics_id{args.id}.csv")
    with open(csv_path, "w") as f:
        f.write(report.to_csv())
    json_path = os.path.join(args.out_dir, f"metrics_id{args.id}.json")
    with open(json_path, "w") as f:
        json.dump(report.to_dict(), f, indent=1)
    print(csv_path)
    return 0


def _cmd_bench_memory(args) -> int:
    from .memprof import curve_to_csv, memory_curve

    sides = [int(s) for s in args.sides.split(",")]
    rows = memory_curve(sides, args.crop, channels=args.channels, seed=args.seed or 0)
    os.makedirs(args.out_dir, exist_ok=True)
    path = os.path.join(args.out_dir, "memory_curve.csv")
    with open(path, "w") as f:
        f.write(curve_to_csv(rows))
    print(path)
    return 0


def _cmd_experiment(args) -> int:
    from .experiments import (capacity_experiment, cropping_comparison,
                              panorama_experiment, write_json, write_rows_csv)

    cfg = _config(args)
    extractor = _extractor(args.extractor)
    os.makedirs(args.out_dir, exist_ok=True)
    if args.kind == "panorama":
        pano = load_image(args.image)
        curve = panorama_experiment(pano, args.crops, args.overlap, cfg, extractor,
                                    n_samples=args.n, replicates=args.replicates)
        rows = [{"crop_index": i, "sifid_mean": s} for i, s in curve]
        path = os.path.join(args.out_dir, "panorama_sifid.csv")
        write_rows_csv(rows, path)
    elif args.kind == "capacity":
        images = [load_image(p, max_dim=cfg.max_dim) for p in args.images]
        rows = capacity_experiment(images, [int(k) for k in args.ks.split(",")],
                                   [int(c) for c in args.channels.split(",")],
                                   cfg, extractor, n_samples=args.n)
        path = os.path.join(args.out_dir, "capacity_grid.csv")
        write_rows_csv(rows, path)
    else:
        image = load_image(args.image, max_dim=cfg.max_dim)
        results = cropping_comparison(image, cfg, extractor, n_samples=args.n)
        path = os.path.join(args.out_dir, "cropping_comparison.json")
        write_json({k: v.to_dict() for k, v in results.items()}, path)
    print(path)
    return 0


def _cmd_serve(args) -> int:
    import uvicorn

    from .server import create_app

    app = create_app(args.bundles)
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


def _cmd_niqe_fit(args) -> int:
    images = [load_image(p) for p in args.images]
    fit_niqe_model(images, args.out, block_size=args.block_size)
    print(args.out)
    return 0


_COMMANDS = {
    "train": _cmd_train,
    "sample": _cmd_sample,
    "reconstruct": _cmd_reconstruct,
    "meld": _cmd_meld,
    "morph": _cmd_morph,
    "fuse": _cmd_fuse,
    "spatial": _cmd_spatial,
    "edit": _cmd_edit,
    "eval": _cmd_eval,
    "bench-memory": _cmd_bench_memory,
    "experiment": _cmd_experiment,
    "serve": _cmd_serve,
    "niqe-fit": _cmd_niqe_fit,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except (ConfigurationError, ValueError, RuntimeError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
