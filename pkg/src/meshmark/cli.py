"""Command-line surface: dataset synthesis, training, embed/extract, attack
application, robustness sweeps, and distortion reports.

Every command is deterministic given an explicit --seed, exits nonzero with
a one-line diagnostic on error, and writes outputs via temp-then-rename so
no partial files are left behind.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from pathlib import Path

import numpy as np

from . import attacks as atk
from . import metrics
from .attacks import AttackConfig
from .mesh import Mesh, build_neighborhood, laplacian_matrix, normalize_unit_cube, \
    parse_obj, write_obj
from .model import NetFlags, Watermark, decode_bits, embed, extract
from .synth import SynthSpec, load_dataset, write_dataset
from .train import TrainConfig, evaluate, load_checkpoint, save_checkpoint, train

DEFAULT_GRIDS: list[tuple[str, list[float]]] = [
    ("rotation", [0, 5, 10, 15, 20, 25, 30]),
    ("noise", [0, 0.01, 0.02, 0.03, 0.04, 0.05]),
    ("smoothing", [0, 0.2, 0.4, 0.6, 0.8, 1.0]),
    ("cropping", [0.3, 0.5, 0.7, 0.8, 0.9, 1.0]),
]

SWEEP_HEADER = "attack,intensity,bit_acc_mean,bit_acc_std,hd_mean,mrms_mean,lcur_mean"


class CliError(ValueError):
    """Usage or input error surfaced as a one-line diagnostic."""


def _write_text(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    tmp.replace(path)


def _load_mesh(path: str) -> Mesh:
    try:
        return parse_obj(Path(path).read_text())
    except OSError as e:
        raise CliError(f"cannot read mesh {path}: {e.strerror or e}") from None


def _load_config_file(path: str) -> dict:
    text = Path(path).read_bytes()
    if path.endswith(".toml"):
        try:
            import tomllib
        except ImportError:
            import tomli as tomllib
        return tomllib.loads(text.decode("utf-8"))
    return json.loads(text)


def _config_from(args, file_values: dict) -> TrainConfig:
    """File values fill in anything the flags left unset."""
    attack_values = file_values.pop("attack", {})
    merged = dict(file_values)
    for key in ("learning_rate", "batch_size", "epochs", "lambda1", "lambda2",
                "lambda3", "watermark_length", "seed", "precision"):
        v = getattr(args, key, None)
        if v is not None:
            merged[key] = v
    for key in ("no_attack_layers", "no_degree_norm", "no_batch_norm",
                "no_curvature_loss"):
        if getattr(args, key, False):
            merged[key] = True
    try:
        attack = AttackConfig(**{k: tuple(v) if k == "enabled" else v
                                 for k, v in attack_values.items()})
        return TrainConfig(attack=attack, **merged)
    except (TypeError, ValueError) as e:
        raise CliError(f"invalid config: {e}") from None


def cmd_synth(args) -> int:
    spec = SynthSpec(level=args.level, count=args.count,
                     amplitude=args.amplitude, frequency=args.frequency,
                     seed=args.seed)
    paths = write_dataset(spec, args.out)
    print(f"wrote {len(paths)} meshes + manifest to {args.out}")
    return 0


def cmd_train(args) -> int:
    file_values = _load_config_file(args.config) if args.config else {}
    config = _config_from(args, file_values)
    dataset = load_dataset(args.data)
    dataset = [normalize_unit_cube(m)[0] for m in dataset]
    result = train(config, dataset)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    save_checkpoint(out_dir / "checkpoint.mmk", result.params,
                    config=result.config, optimizer=result.optimizer,
                    rng_state=result.rng_state)
    _write_text(out_dir / "train_log.csv", result.log_csv())
    last = result.log[-1] if result.log else None
    tail = f"; final bit_acc {last.bit_acc:.2f}" if last else ""
    print(f"trained {config.epochs} epochs on {len(dataset)} meshes{tail}; "
          f"checkpoint + train_log.csv in {out_dir}")
    return 0


def _flags_from_manifest(manifest: dict) -> NetFlags:
    """Replay the forward-pass switches the checkpoint was trained with."""
    cfg = manifest.get("config") or {}
    return NetFlags(degree_normalize=not cfg.get("no_degree_norm", False),
                    batch_norm=not cfg.get("no_batch_norm", False))


def _parse_bits(args, length: int) -> Watermark:
    if args.bits is not None:
        return Watermark.from_hex(args.bits, length)
    if args.random:
        rng = np.random.Generator(np.random.PCG64(args.seed))
        return Watermark.random(length, rng)
    raise CliError("provide --bits HEX or --random")


def cmd_embed(args) -> int:
    params, _, manifest = load_checkpoint(args.checkpoint)
    w = _parse_bits(args, params.watermark_length)
    mesh_in = _load_mesh(args.mesh)
    normalized, transform = normalize_unit_cube(mesh_in)
    nbhd = build_neighborhood(normalized)
    mesh_wm = embed(params, normalized, nbhd, w, _flags_from_manifest(manifest))
    # hand the user's frame back
    out_mesh = Mesh(transform.to_original(mesh_wm.vertices), mesh_wm.faces)
    out_path = Path(args.out)
    _write_text(out_path, write_obj(out_mesh))
    digest = hashlib.sha256(Path(args.checkpoint).read_bytes()).hexdigest()
    sidecar = {"bits": w.to_hex(), "length": len(w), "checkpoint_sha256": digest}
    _write_text(out_path.with_suffix(out_path.suffix + ".json"),
                json.dumps(sidecar, indent=2) + "\n")
    print(f"embedded {len(w)} bits -> {out_path}")
    return 0


def cmd_extract(args) -> int:
    params, _, manifest = load_checkpoint(args.checkpoint)
    mesh_in = _load_mesh(args.mesh)
    normalized, _ = normalize_unit_cube(mesh_in)
    nbhd = build_neighborhood(normalized)
    w_ext = extract(params, normalized, nbhd, _flags_from_manifest(manifest))
    bits = decode_bits(w_ext)
    print(bits.to_hex())
    report = {"bits": bits.to_hex(), "length": len(bits),
              "confidence": [float(x) for x in w_ext]}
    if args.report:
        _write_text(Path(args.report), json.dumps(report, indent=2) + "\n")
    else:
        print(json.dumps(report))
    return 0


def cmd_attack(args) -> int:
    mesh_in = _load_mesh(args.mesh)
    inst = _fixed_attack_from(args)
    nbhd = build_neighborhood(mesh_in)
    lap = laplacian_matrix(nbhd)
    rng = np.random.Generator(np.random.PCG64(args.seed))
    from .autodiff import DiffArray

    v_att, faces_att, _ = atk.apply(DiffArray(mesh_in.vertices.copy()),
                                    mesh_in.faces, lap, inst, rng)
    _write_text(Path(args.out), write_obj(Mesh(v_att.data, faces_att)))
    print(f"applied {inst.kind} -> {args.out}")
    return 0


def _fixed_attack_from(args) -> atk.AttackInstance:
    kind = args.kind
    if kind == "identity":
        return atk.fixed_instance("identity", 0.0)
    if kind == "rotation":
        if args.theta is None:
            raise CliError("rotation needs --theta DEGREES")
        angles = np.zeros(3)
        axes = {"x": [0], "y": [1], "z": [2], "all": [0, 1, 2]}[args.axis]
        if not -180.0 <= args.theta <= 180.0:
            raise CliError(f"rotation angle {args.theta} out of [-180, 180]")
        angles[axes] = args.theta
        return atk.AttackInstance("rotation", angles_deg=angles)
    if kind == "noise":
        if args.sigma is None:
            raise CliError("noise needs --sigma VALUE")
        return atk.fixed_instance("noise", args.sigma)
    if kind == "smoothing":
        if args.alpha is None:
            raise CliError("smoothing needs --alpha VALUE")
        return atk.fixed_instance("smoothing", args.alpha)
    if kind == "cropping":
        if args.beta is None:
            raise CliError("cropping needs --beta VALUE")
        return atk.fixed_instance("cropping", args.beta)
    raise CliError(f"unknown attack kind {kind!r}")


def cmd_sweep(args) -> int:
    params, _, manifest = load_checkpoint(args.checkpoint)
    dataset = [normalize_unit_cube(m)[0] for m in load_dataset(args.data)]
    grid: list[tuple[str, float]] = []
    for kind, values in DEFAULT_GRIDS:
        if args.attacks and kind not in args.attacks:
            continue
        grid += [(kind, v) for v in values]
    rows = evaluate(params, dataset, grid, seed=args.seed,
                    flags=_flags_from_manifest(manifest))
    lines = [SWEEP_HEADER]
    lines += [f"{r.attack},{r.intensity:g},{r.bit_acc_mean:.4f},"
              f"{r.bit_acc_std:.4f},{r.hd_mean:.6f},{r.mrms_mean:.6f},"
              f"{r.lcur_mean:.6f}" for r in rows]
    _write_text(Path(args.out), "\n".join(lines) + "\n")
    print(f"wrote {len(rows)} rows to {args.out}")
    return 0


def cmd_metrics(args) -> int:
    a = _load_mesh(args.mesh_a)
    b = _load_mesh(args.mesh_b)
    report = metrics.distortion_report(a, b)
    payload = {"hd": report.hd, "mrms": report.mrms, "l_cur": report.l_cur}
    print(json.dumps(payload))
    if args.per_vertex:
        lines = ["vertex,displacement"]
        lines += [f"{i},{d:.9g}" for i, d in enumerate(report.displacement)]
        _write_text(Path(args.per_vertex), "\n".join(lines) + "\n")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="meshmark",
                                description="blind robust 3D mesh watermarking")
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("synth", help="generate a synthetic dataset")
    sp.add_argument("--level", type=int, default=3)
    sp.add_argument("--count", type=int, default=100)
    sp.add_argument("--amplitude", type=float, default=0.2)
    sp.add_argument("--frequency", type=int, default=3)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_synth)

    tp = sub.add_parser("train", help="train embedder + extractor")
    tp.add_argument("--data", required=True, help="directory of OBJ files")
    tp.add_argument("--out", required=True, help="output directory")
    tp.add_argument("--config", help="JSON or TOML config file")
    tp.add_argument("--learning-rate", dest="learning_rate", type=float)
    tp.add_argument("--batch-size", dest="batch_size", type=int)
    tp.add_argument("--epochs", type=int)
    tp.add_argument("--lambda1", type=float)
    tp.add_argument("--lambda2", type=float)
    tp.add_argument("--lambda3", type=float)
    tp.add_argument("--watermark-length", dest="watermark_length", type=int)
    tp.add_argument("--seed", type=int)
    tp.add_argument("--precision", choices=["float32", "float64"])
    tp.add_argument("--no-attack-layers", dest="no_attack_layers", action="store_true")
    tp.add_argument("--no-degree-norm", dest="no_degree_norm", action="store_true")
    tp.add_argument("--no-batch-norm", dest="no_batch_norm", action="store_true")
    tp.add_argument("--no-curvature-loss", dest="no_curvature_loss", action="store_true")
    tp.set_defaults(func=cmd_train)

    ep = sub.add_parser("embed", help="embed watermark bits into a mesh")
    ep.add_argument("--checkpoint", required=True)
    ep.add_argument("--mesh", required=True)
    ep.add_argument("--out", required=True)
    ep.add_argument("--bits", help="hex string of L/4 characters")
    ep.add_argument("--random", action="store_true")
    ep.add_argument("--seed", type=int, default=0)
    ep.set_defaults(func=cmd_embed)

    xp = sub.add_parser("extract", help="extract watermark bits from a mesh")
    xp.add_argument("--checkpoint", required=True)
    xp.add_argument("--mesh", required=True)
    xp.add_argument("--report", help="write the JSON report here")
    xp.set_defaults(func=cmd_extract)

    ap = sub.add_parser("attack", help="apply a fixed-intensity attack")
    ap.add_argument("--mesh", required=True)
    ap.add_argument("--out", required=True)
    ap.add_argument("--kind", required=True,
                    choices=["identity", "rotation", "noise", "smoothing", "cropping"])
    ap.add_argument("--theta", type=float, help="rotation angle in degrees")
    ap.add_argument("--axis", choices=["x", "y", "z", "all"], default="all")
    ap.add_argument("--sigma", type=float, help="noise standard deviation")
    ap.add_argument("--alpha", type=float, help="smoothing level")
    ap.add_argument("--beta", type=float, help="cropping retention ratio")
    ap.add_argument("--seed", type=int, default=0)
    ap.set_defaults(func=cmd_attack)

    wp = sub.add_parser("sweep", help="robustness sweep over attack grids")
    wp.add_argument("--checkpoint", required=True)
    wp.add_argument("--data", required=True)
    wp.add_argument("--out", required=True)
    wp.add_argument("--seed", type=int, default=0)
    wp.add_argument("--attacks", nargs="*",
                    choices=["rotation", "noise", "smoothing", "cropping"])
    wp.set_defaults(func=cmd_sweep)

    mp = sub.add_parser("metrics", help="distortion report between two meshes")
    mp.add_argument("mesh_a")
    mp.add_argument("mesh_b")
    mp.add_argument("--per-vertex", dest="per_vertex",
                    help="write per-vertex displacement CSV here")
    mp.set_defaults(func=cmd_metrics)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, RuntimeError, FileNotFoundError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
