"""Command-line entry point: ``stainbench <subcommand> ...``.

Exit codes: 0 success, 1 validation failure, 2 usage or input error.
Settings resolve as built-in defaults < ``--config`` JSON < explicit flags.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from .core import (
    FormatError,
    Her2Level,
    LandmarkSet,
    dumps,
    load_image,
    loads,
    read_tensor,
    save_image,
    write_tensor,
)

log = logging.getLogger("stainbench")


class InputError(Exception):
    """Bad user input detected after argument parsing (exit 2)."""


DEFAULTS: dict[str, dict] = {
    "register": {"spacing": 64.0, "levels": 3, "iterations": 200, "step": 0.5},
    "patchify": {"size": 1024, "stride": None, "sat_thresh": 0.07, "frac_thresh": 0.5, "ncc_thresh": 0.2},
    "evaluate": {"ssim": "windowed"},
    "validate": {"blur_thresh": None, "max_blurry_fraction": 0.10},
    "demo": {"size": 2048, "patch_size": 1024, "spacing": 64.0, "levels": 3, "iterations": 200, "step": 0.5},
}


def _write_json(obj, out: str | None) -> None:
    text = dumps(obj)
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _resolve_threads(value: int | None) -> int:
    if value is None:
        env = os.environ.get("STAINBENCH_THREADS")
        if env is not None:
            try:
                value = int(env)
            except ValueError:
                raise InputError(f"STAINBENCH_THREADS must be an integer, got {env!r}") from None
        else:
            value = 1
    if value < 0:
        raise InputError("--threads must be >= 0")
    return value if value > 0 else (os.cpu_count() or 1)


def _merge_settings(args: argparse.Namespace) -> dict:
    """defaults < config file (top level or per-subcommand section) < flags."""
    merged = dict(DEFAULTS.get(args.command, {}))
    if args.config:
        try:
            cfg = loads(Path(args.config).read_text())
        except OSError as exc:
            raise InputError(f"cannot read config: {exc}") from exc
        if not isinstance(cfg, dict):
            raise InputError("config must be a JSON object")
        section = cfg.get(args.command, {})
        merged.update({k: v for k, v in cfg.items() if k in merged})
        merged.update({k: v for k, v in section.items() if k in merged})
    for key in merged:
        val = getattr(args, key, None)
        if val is not None:
            merged[key] = val
    return merged


def _deformable_cfg(s: dict, seed: int):
    from .registration import DeformableConfig

    return DeformableConfig(
        spacing=float(s["spacing"]),
        pyramid_levels=int(s["levels"]),
        iterations=int(s["iterations"]),
        step=float(s["step"]),
        seed=seed,
    )


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def cmd_register(args, s) -> int:
    from .registration import register_wsi_pair, render_overlay

    he = load_image(args.he)
    ihc = load_image(args.ihc)
    lm = LandmarkSet.from_json(loads(Path(args.landmarks).read_text()))
    out, report = register_wsi_pair(he, ihc, lm, _deformable_cfg(s, args.seed), workers=args.threads)
    save_image(out, args.out)
    if args.overlay:
        save_image(render_overlay(out, ihc), args.overlay)
    _write_json(report.to_json(), args.report)
    return 0


def cmd_patchify(args, s) -> int:
    from .patches import build_manifest, patchify, screen

    he = load_image(args.he)
    ihc = load_image(args.ihc)
    size = int(s["size"])
    stride = int(s["stride"]) if s["stride"] else size
    pairs = patchify(he, ihc, size, stride)
    patches = screen(
        args.wsi_id, pairs, s["sat_thresh"], s["frac_thresh"], s["ncc_thresh"], workers=args.threads
    )
    if args.drop_failed:
        patches = [p for p in patches if p.tissue_pass and p.alignment_pass]
    manifest = build_manifest(patches, {args.wsi_id: Her2Level.parse(args.her2)}, {args.wsi_id: args.split}, size, stride)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for p in patches:
        save_image(p.he, out / f"{p.patch_id}_HE.png")
        save_image(p.ihc, out / f"{p.patch_id}_IHC.png")
    (out / "manifest.json").write_text(manifest.dumps())
    log.info("wrote %d patch pairs to %s", len(patches), out)
    return 0


def cmd_evaluate(args, s) -> int:
    from .metrics import evaluate_set

    if s["ssim"] not in ("windowed", "global"):
        raise InputError(f"--ssim must be windowed or global, got {s['ssim']!r}")
    for d in (args.pred, args.gt):
        if not Path(d).is_dir():
            raise InputError(f"not a directory: {d}")
    report = evaluate_set(args.pred, args.gt, s["ssim"], workers=args.threads)
    obj = report.to_json()
    if args.team:
        obj["team"] = args.team
    _write_json(obj, args.out)
    return 0


def cmd_rank(args, s) -> int:
    from .harness import entries_from_json, leaderboard_json, rank_teams

    entries = []
    for f in args.inputs:
        path = Path(f)
        try:
            obj = loads(path.read_text())
        except OSError as exc:
            raise InputError(f"cannot read {f}: {exc}") from exc
        entries.extend(entries_from_json(obj, default_team=path.stem))
    _write_json(leaderboard_json(rank_teams(entries)), args.out)
    return 0


def cmd_validate(args, s) -> int:
    from .harness import BLUR_THRESHOLD, load_manifest, validate_submission

    manifest = load_manifest(args.manifest)
    thresh = BLUR_THRESHOLD if s["blur_thresh"] is None else float(s["blur_thresh"])
    verdict = validate_submission(
        args.pred, manifest, thresh, float(s["max_blurry_fraction"]), workers=args.threads
    )
    _write_json(verdict.to_json(), args.out)
    return 0 if verdict.valid else 1


def _load_params(path: str | None) -> dict:
    if not path:
        return {}
    obj = loads(Path(path).read_text())
    if not isinstance(obj, dict):
        raise InputError("params must be a JSON object")
    return obj


def _need(inputs: list, n: int, name: str) -> list[np.ndarray]:
    if len(inputs) != n:
        raise InputError(f"loss {name} takes {n} input tensors, got {len(inputs)}")
    return [read_tensor(p).astype(np.float64) for p in inputs]


def _run_loss(name: str, inputs: list, prm: dict, args) -> dict:
    from . import losses as L

    extra: dict = {}
    if name == "softmax":
        (z,) = _need(inputs, 1, name)
        return {"value": L.softmax_probs(z).tolist()}
    if name == "focal":
        (z,) = _need(inputs, 1, name)
        p = L.FocalParams(alpha=prm.get("alpha", [1.0] * z.size), gamma=prm.get("gamma", 2.0))
        value = L.focal_loss(z, int(prm["y"]), p)
    elif name == "cosine":
        a, b = _need(inputs, 2, name)
        value = L.cosine_sim_loss(a, b)
    elif name == "mae":
        value = L.mae_content(*_need(inputs, 4, name))
    elif name == "ssim":
        value = L.ssim_loss(*_need(inputs, 2, name))
    elif name == "cycle":
        value = L.cycle_l1(*_need(inputs, 2, name))
    elif name == "patchgan":
        side = prm.get("side", "generator")
        if side == "generator":
            ff, fh = _need(inputs, 2, name)
            value = L.patchgan_ms_loss(None, {"full": ff, "half": fh}, side)
        else:
            rf, rh, ff, fh = _need(inputs, 4, name)
            value = L.patchgan_ms_loss({"full": rf, "half": rh}, {"full": ff, "half": fh}, side)
    elif name == "combine":
        w = L.LossWeights.preset(prm["preset"]) if "preset" in prm else L.LossWeights()
        w = L.LossWeights({**w.weights, **prm.get("weights", {})})
        value = L.combine_weighted(prm.get("terms", {}), w)
    elif name == "infonce":
        q, kp, kn = _need(inputs, 3, name)
        value = L.infonce_loss(q, kp, np.atleast_2d(kn), float(prm.get("tau", 0.07)))
    elif name == "wecrest":
        src, tgt, hist = _need(inputs, 3, name)
        value = L.wecrest_qi(src, tgt, np.atleast_2d(hist), int(prm.get("i", 0)))
    elif name == "style-adv":
        pr, pf = _need(inputs, 2, name)
        value = L.style_adversarial_loss(pr, int(prm["real_style"]), pf, int(prm["fake_index"]))
    elif name == "pix2pix-gen":
        pred, gt = _need(inputs, 2, name)
        value = L.pix2pix_gen_loss(float(prm["d_fake"]), pred, gt, float(prm.get("lambda", 100.0)))
    elif name == "pix2pix-dis":
        _need(inputs, 0, name)
        value = L.pix2pix_dis_loss(float(prm["d_real"]), float(prm["d_fake"]), float(prm.get("lambda", 1.0)))
    elif name == "dwt":
        (img,) = _need(inputs, 1, name)
        planes = L.dwt_haar(img, per_channel=bool(prm.get("per_channel", False)))
        if args.tensor_out:
            write_tensor(planes, args.tensor_out)
        value = float(np.sum(planes**2))
        extra = {"shape": list(planes.shape), "quantity": "coefficient energy"}
    else:
        raise InputError(f"unknown loss {name!r}")
    return {"value": value, **extra}


LOSS_NAMES = (
    "softmax", "focal", "cosine", "mae", "ssim", "cycle", "patchgan", "combine",
    "infonce", "wecrest", "style-adv", "pix2pix-gen", "pix2pix-dis", "dwt",
)


def cmd_loss(args, s) -> int:
    from .losses import ClampWarning

    prm = _load_params(args.params)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", ClampWarning)
        try:
            result = _run_loss(args.name, args.inputs or [], prm, args)
        except KeyError as exc:
            raise InputError(f"missing parameter {exc}") from None
    clamped = any(issubclass(w.category, ClampWarning) for w in caught)
    _write_json({"loss": args.name, "clamped": clamped, **result}, args.out)
    return 0


def cmd_overlay(args, s) -> int:
    from .registration import render_overlay

    save_image(render_overlay(load_image(args.a), load_image(args.b)), args.out)
    return 0


def cmd_demo(args, s) -> int:
    from .demo import run_demo

    report = run_demo(
        size=int(s["size"]),
        seed=args.seed,
        cfg=_deformable_cfg(s, args.seed),
        patch_size=int(s["patch_size"]),
        workers=args.threads,
        image_dir=args.images,
    )
    _write_json(report, args.out)
    return 0 if report["passed"] else 1


COMMANDS = {
    "register": cmd_register,
    "patchify": cmd_patchify,
    "evaluate": cmd_evaluate,
    "rank": cmd_rank,
    "validate": cmd_validate,
    "loss": cmd_loss,
    "overlay": cmd_overlay,
    "demo": cmd_demo,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--threads", type=int, default=None, help="worker count, 0 = auto (env STAINBENCH_THREADS)")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--config", help="JSON settings file")
    common.add_argument("--log-level", default="WARNING")

    parser = argparse.ArgumentParser(prog="stainbench", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("register", parents=[common], help="align an H&E slide to its IHC slide")
    p.add_argument("--he", required=True)
    p.add_argument("--ihc", required=True)
    p.add_argument("--landmarks", required=True, help='{"pairs": [{"moving": [x, y], "fixed": [x, y]}, ...]}')
    p.add_argument("--out", required=True, help="registered H&E image (.png or .trc)")
    p.add_argument("--report", help="registration report JSON (stdout if omitted)")
    p.add_argument("--overlay", help="optional 50/50 overlay image")
    p.add_argument("--spacing", type=float)
    p.add_argument("--levels", type=int)
    p.add_argument("--iterations", type=int)
    p.add_argument("--step", type=float)

    p = sub.add_parser("patchify", parents=[common], help="cut a registered pair into screened patches")
    p.add_argument("--he", required=True)
    p.add_argument("--ihc", required=True)
    p.add_argument("--wsi-id", required=True)
    p.add_argument("--her2", required=True, choices=[lv.value for lv in Her2Level])
    p.add_argument("--split", required=True, choices=["train", "val", "test"])
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--size", type=int)
    p.add_argument("--stride", type=int)
    p.add_argument("--sat-thresh", dest="sat_thresh", type=float)
    p.add_argument("--frac-thresh", dest="frac_thresh", type=float)
    p.add_argument("--ncc-thresh", dest="ncc_thresh", type=float)
    p.add_argument("--drop-failed", action="store_true", help="omit patches failing either filter")

    p = sub.add_parser("evaluate", parents=[common], help="PSNR/SSIM of predictions against ground truth")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--ssim", choices=["windowed", "global"])
    p.add_argument("--team", help="team name recorded in the report")
    p.add_argument("--out")

    p = sub.add_parser("rank", parents=[common], help="weighted final ranking of team reports")
    p.add_argument("--in", dest="inputs", nargs="+", required=True)
    p.add_argument("--out")

    p = sub.add_parser("validate", parents=[common], help="screen a submission directory")
    p.add_argument("--pred", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--blur-thresh", dest="blur_thresh", type=float)
    p.add_argument("--max-blurry-fraction", dest="max_blurry_fraction", type=float)
    p.add_argument("--out")

    p = sub.add_parser("loss", parents=[common], help="evaluate one loss formula on tensor files")
    p.add_argument("name", choices=LOSS_NAMES)
    p.add_argument("--inputs", nargs="*", default=[])
    p.add_argument("--params")
    p.add_argument("--tensor-out", dest="tensor_out", help="dwt: write coefficient planes here")
    p.add_argument("--out")

    p = sub.add_parser("overlay", parents=[common], help="50/50 blend of two images")
    p.add_argument("--a", required=True)
    p.add_argument("--b", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("demo", parents=[common], help="synthetic end-to-end run with known warps")
    p.add_argument("--size", type=int)
    p.add_argument("--patch-size", dest="patch_size", type=int)
    p.add_argument("--spacing", type=float)
    p.add_argument("--levels", type=int)
    p.add_argument("--iterations", type=int)
    p.add_argument("--step", type=float)
    p.add_argument("--images", help="directory for the synthetic and registered images")
    p.add_argument("--out")
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.WARNING), stream=sys.stderr)
    try:
        args.threads = _resolve_threads(args.threads)
        settings = _merge_settings(args)
        return COMMANDS[args.command](args, settings)
    except (InputError, FormatError, ValueError, FileNotFoundError) as exc:
        print(f"stainbench {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
