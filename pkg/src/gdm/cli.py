"""Command-line entry point.

Subcommands: preprocess, train, denoise, evaluate, synth. Every run writes
a JSON manifest recording the resolved configuration, seeds, inputs,
outputs, toolkit version, and wall-clock time; feeding a manifest's config
block back through ``--config`` reproduces the run. The environment
variable GDM_SEED supplies the seed when no --seed flag is given.

Outputs are staged to temporary names and renamed only when the whole
command succeeds, so a failing run leaves no partial files behind.
"""

from __future__ import annotations

import argparse
import json
import os
import pathlib
import sys
import time

import numpy as np

from . import __version__
from .errors import GdmError
from .imagecore import GrayImage, load_image, save_image
from .metrics import evaluate_pair
from .model import denoise_image, load_checkpoint, save_checkpoint
from .objective import ChannelWeights
from .preprocess import (
    AFM_DARK_PERCENTILE,
    AFM_DC_RADIUS,
    AFM_NOTCH_HALF_WIDTH,
    AFM_SMOOTH_SIGMA,
    SEM_INPAINT_RADIUS,
    SEM_THRESHOLD_8BIT,
    STM_R_HIGH,
    STM_R_LOW,
    STM_THETA_MARGIN_DEG,
    afm_notch_clean,
    sem_clean,
    stm_bandpass_enhance,
)
from .synth import ArtifactSpec, QpiParams, add_bright_strips, add_gaussian_noise, add_scanlines, simulate_lattice, simulate_qpi
from .trainer import ChannelSpec, TrainConfig, train, write_history_csv

_SEED_ENV = "GDM_SEED"


def _resolve_seed(value: int | None) -> int:
    if value is not None:
        return value
    env = os.environ.get(_SEED_ENV)
    return int(env) if env else 0


class _OutputStager:
    """Write outputs via temporary names; commit renames them atomically."""

    def __init__(self) -> None:
        self._staged: list[tuple[pathlib.Path, pathlib.Path]] = []

    def stage(self, final: pathlib.Path) -> pathlib.Path:
        final = pathlib.Path(final)
        final.parent.mkdir(parents=True, exist_ok=True)
        # keep the suffix so format-sniffing writers still work
        tmp = final.with_name(f".tmp-{final.name}")
        self._staged.append((tmp, final))
        return tmp

    def commit(self) -> list[str]:
        for tmp, final in self._staged:
            tmp.replace(final)
        return [str(final) for _, final in self._staged]

    def abort(self) -> None:
        for tmp, _ in self._staged:
            tmp.unlink(missing_ok=True)


def _write_manifest(
    stager: _OutputStager,
    manifest_path: pathlib.Path,
    command: str,
    config: dict,
    seeds: dict,
    inputs: list[str],
    outputs: list[str],
    started: float,
) -> None:
    manifest = {
        "command": command,
        "config": config,
        "seeds": seeds,
        "inputs": inputs,
        "outputs": outputs,
        "toolkit_version": __version__,
        "timings": {"wall_seconds": time.perf_counter() - started},
    }
    stager.stage(manifest_path).write_text(json.dumps(manifest, indent=2, sort_keys=True))


def _config_file_defaults(argv: list[str], parser: argparse.ArgumentParser) -> None:
    """Apply --config JSON values as parser defaults (flags still override)."""
    probe = argparse.ArgumentParser(add_help=False)
    probe.add_argument("--config", default=None)
    known, _ = probe.parse_known_args(argv)
    if known.config:
        blob = json.loads(pathlib.Path(known.config).read_text())
        if isinstance(blob.get("config"), dict) and "command" in blob:
            blob = blob["config"]  # a run manifest nests its flag values
        valid = {a.dest for a in parser._actions}
        parser.set_defaults(**{k: v for k, v in blob.items() if k in valid})


def _public_config(args: argparse.Namespace) -> dict:
    cfg = {k: v for k, v in vars(args).items() if k not in ("func", "config")}
    return {k: (str(v) if isinstance(v, pathlib.Path) else v) for k, v in cfg.items()}


def _save_grayscale(stager: _OutputStager, img: GrayImage, final: pathlib.Path) -> None:
    tmp = stager.stage(final)
    save_image(img, tmp)


# ---------------------------------------------------------------- preprocess


def cmd_preprocess(args: argparse.Namespace) -> int:
    started = time.perf_counter()
    if args.mode not in ("stm", "afm", "sem"):
        raise GdmError("--mode {stm,afm,sem} is required (flag or config file)")
    img = load_image(args.input)
    out_dir = pathlib.Path(args.out_dir) if args.out_dir else pathlib.Path(args.input).parent
    stem = pathlib.Path(args.input).stem
    stager = _OutputStager()
    try:
        if args.mode == "stm":
            cleaned = stm_bandpass_enhance(
                img, r_low=args.r_low, r_high=args.r_high, theta_margin_deg=args.theta_margin
            )
            _save_grayscale(stager, cleaned, out_dir / f"{stem}.cleaned.png")
        elif args.mode == "afm":
            result = afm_notch_clean(
                img,
                dc_radius=args.dc_radius,
                smooth_sigma=args.smooth_sigma,
                notch_half_width=args.notch_half_width,
                dark_percentile=args.dark_percentile,
            )
            _save_grayscale(stager, result.cleaned, out_dir / f"{stem}.cleaned.png")
            _save_grayscale(stager, result.dark_masked, out_dir / f"{stem}.darkmask.png")
            _save_grayscale(stager, result.merged, out_dir / f"{stem}.merged.png")
        else:  # sem
            mask, cleaned = sem_clean(img, threshold_8bit=args.threshold, radius=args.radius)
            _save_grayscale(stager, mask, out_dir / f"{stem}.stripmask.png")
            _save_grayscale(stager, cleaned, out_dir / f"{stem}.cleaned.png")
        _write_manifest(
            stager,
            out_dir / f"{stem}.preprocess.manifest.json",
            command="preprocess",
            config=_public_config(args),
            seeds={},
            inputs=[str(args.input)],
            outputs=[str(f) for _, f in stager._staged],
            started=started,
        )
        stager.commit()
    except BaseException:
        stager.abort()
        raise
    return 0


# --------------------------------------------------------------------- train


def cmd_train(args: argparse.Namespace) -> int:
    started = time.perf_counter()
    if not args.ch1 and not args.ch2:
        raise GdmError("at least one channel image (--ch1 or --ch2) is required")
    seed = _resolve_seed(args.seed)

    w1, w2 = args.w1, args.w2
    if w1 is None and w2 is None:
        w1 = 1.0 if args.ch1 else 0.0
        w2 = 1.0 - w1
    elif w1 is None:
        w1 = 1.0 - w2
    elif w2 is None:
        w2 = 1.0 - w1
    config = TrainConfig(
        patch_size=args.patch_size,
        batch_size=args.batch_size,
        learning_rate=args.lr,
        mask_fraction=args.mask_fraction,
        epochs=args.epochs,
        weights=ChannelWeights(w1, w2),
        reduction=args.reduction,
        fft_loss_enabled=not args.no_fft,
        seed=seed,
        stride=args.stride,
    )
    channels = []
    if args.ch1:
        channels.append(ChannelSpec(channel_id=1, image=load_image(args.ch1), weight=w1))
    if args.ch2:
        channels.append(ChannelSpec(channel_id=2, image=load_image(args.ch2), weight=w2))

    result = train(channels, config)

    out_dir = pathlib.Path(args.out_dir)
    stager = _OutputStager()
    try:
        meta = dict(result.metadata)
        meta["channel_paths"] = {"ch1": args.ch1, "ch2": args.ch2}
        weights_tmp = stager.stage(out_dir / f"{args.name}.pt")
        meta_tmp = stager.stage(out_dir / f"{args.name}.json")
        # save_checkpoint names both files from one dot-free base; rename
        # them into the staged slots so commit stays atomic
        staging_base = out_dir / f"{args.name}__staging"
        wp, mp = save_checkpoint(result.model, meta, staging_base)
        wp.replace(weights_tmp)
        mp.replace(meta_tmp)
        csv_tmp = stager.stage(out_dir / f"{args.name}.loss.csv")
        write_history_csv(result.history, csv_tmp)
        _write_manifest(
            stager,
            out_dir / f"{args.name}.manifest.json",
            command="train",
            config=_public_config(args) | {"w1": w1, "w2": w2, "seed": seed},
            seeds={"train_seed": seed, "init_seed": result.metadata["init_seed"]},
            inputs=[p for p in (args.ch1, args.ch2) if p],
            outputs=[str(f) for _, f in stager._staged],
            started=started,
        )
        stager.commit()
    except BaseException:
        stager.abort()
        raise
    return 0


# ------------------------------------------------------------------- denoise


def cmd_denoise(args: argparse.Namespace) -> int:
    started = time.perf_counter()
    if not args.ckpt or not args.in_path or not args.out:
        raise GdmError("--ckpt, --in, and --out are required (flags or config file)")
    model, _meta = load_checkpoint(args.ckpt)
    img = load_image(args.in_path)
    out = denoise_image(model, img)
    out_path = pathlib.Path(args.out)
    stager = _OutputStager()
    try:
        _save_grayscale(stager, out, out_path)
        _write_manifest(
            stager,
            out_path.with_name(out_path.stem + ".denoise.manifest.json"),
            command="denoise",
            config=_public_config(args),
            seeds={},
            inputs=[str(args.ckpt), str(args.in_path)],
            outputs=[str(f) for _, f in stager._staged],
            started=started,
        )
        stager.commit()
    except BaseException:
        stager.abort()
        raise
    return 0


# ------------------------------------------------------------------ evaluate


def _plot_overlays(
    stager: _OutputStager, img: GrayImage, label: str, report, out_dir: pathlib.Path
) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    pnr = getattr(report, f"pnr_{label}")
    lines = getattr(report, f"lines_{label}")

    fig, ax = plt.subplots(figsize=(5, 5))
    ax.imshow(pnr.log_spectrum, cmap="viridis")
    if pnr.peak_coords:
        peaks = np.asarray(pnr.peak_coords)
        ax.plot(peaks[:, 1], peaks[:, 0], "r+", markersize=10)
    ax.set_title(f"{label}: log spectrum, PNR {pnr.pnr_db:.2f} dB")
    ax.axis("off")
    fig.savefig(stager.stage(out_dir / f"{label}.spectrum.png"), dpi=120)
    plt.close(fig)

    fig, ax = plt.subplots(figsize=(5, 5))
    ax.imshow(img.pixels, cmap="gray", vmin=0, vmax=1)
    for segment, angle in zip(lines.segments, lines.angles_deg):
        (x1, y1), (x2, y2) = segment
        in_range = report.theta1 < angle <= report.theta2
        ax.plot([x1, x2], [y1, y2], color="red" if in_range else "cyan", linewidth=1.2)
    ax.set_title(f"{label}: detected segments (red = in angle range)")
    ax.axis("off")
    fig.savefig(stager.stage(out_dir / f"{label}.lines.png"), dpi=120)
    plt.close(fig)


def cmd_evaluate(args: argparse.Namespace) -> int:
    started = time.perf_counter()
    if not args.noisy or not args.denoised:
        raise GdmError("--noisy and --denoised are required (flags or config file)")
    seed = _resolve_seed(args.seed)
    noisy = load_image(args.noisy)
    denoised = load_image(args.denoised)
    theta1, theta2 = args.theta
    report = evaluate_pair(
        noisy, denoised, modality=args.modality, angle_range=(theta1, theta2), seed=seed
    )
    out_dir = pathlib.Path(args.out_dir)
    csv_path = pathlib.Path(args.out_csv) if args.out_csv else out_dir / "evaluate.csv"
    stager = _OutputStager()
    try:
        csv_tmp = stager.stage(csv_path)
        with open(csv_tmp, "w") as fh:
            fh.write(
                "image,pnr_db_noisy,pnr_db_denoised,line_len_noisy,line_len_denoised,"
                "theta1,theta2\n"
            )
            fh.write(
                f"{pathlib.Path(args.noisy).name},{report.pnr_noisy.pnr_db:.6g},"
                f"{report.pnr_denoised.pnr_db:.6g},{report.line_len_noisy:.6g},"
                f"{report.line_len_denoised:.6g},{theta1:.6g},{theta2:.6g}\n"
            )
        _plot_overlays(stager, noisy, "noisy", report, out_dir)
        _plot_overlays(stager, denoised, "denoised", report, out_dir)
        _write_manifest(
            stager,
            out_dir / "evaluate.manifest.json",
            command="evaluate",
            config=_public_config(args) | {"seed": seed},
            seeds={"hough_seed": seed},
            inputs=[str(args.noisy), str(args.denoised)],
            outputs=[str(f) for _, f in stager._staged],
            started=started,
        )
        stager.commit()
    except BaseException:
        stager.abort()
        raise
    return 0


# --------------------------------------------------------------------- synth


def cmd_synth(args: argparse.Namespace) -> int:
    started = time.perf_counter()
    seed = _resolve_seed(args.seed)
    root = np.random.SeedSequence(seed)
    gen_ss, scan_ss, strip_ss, noise_ss = root.spawn(4)
    gen_seed = int(gen_ss.generate_state(1)[0])
    sub_seeds = {
        "generator": gen_seed,
        "scanlines": int(scan_ss.generate_state(1)[0]),
        "bright_strips": int(strip_ss.generate_state(1)[0]),
        "gaussian_noise": int(noise_ss.generate_state(1)[0]),
    }

    sidecar: dict = {"generator": args.generator, "seed": seed, "sub_seeds": sub_seeds}
    if args.generator == "qpi":
        params = QpiParams(
            effective_mass_ratio=args.mass_ratio,
            chemical_potential_ev=args.mu,
            image_size_px=args.size,
            field_of_view_nm=args.fov_nm,
            n_scatterers=args.n_scatterers,
            decay_exponent=args.decay,
            amplitude=args.amplitude,
            seed=gen_seed,
        )
        img = simulate_qpi(params)
        sidecar["qpi_params"] = params.to_json()
    else:
        img = simulate_lattice(args.size, args.period)
        sidecar["lattice"] = {"size_px": args.size, "period_px": args.period}

    applied = []
    if args.scanlines is not None:
        spec = ArtifactSpec(
            kind="scanlines", amplitude=args.scanlines, seed=sub_seeds["scanlines"]
        )
        img = add_scanlines(img, spec)
        applied.append({"kind": "scanlines", "amplitude": args.scanlines})
    if args.strips is not None:
        spec = ArtifactSpec(
            kind="bright_strips", amplitude=args.strips, seed=sub_seeds["bright_strips"]
        )
        img = add_bright_strips(img, spec)
        applied.append({"kind": "bright_strips", "amplitude": args.strips})
    if args.noise is not None:
        spec = ArtifactSpec(
            kind="gaussian_noise", sigma=args.noise, seed=sub_seeds["gaussian_noise"]
        )
        img = add_gaussian_noise(img, spec)
        applied.append({"kind": "gaussian_noise", "sigma": args.noise})
    sidecar["artifacts"] = applied

    out_path = pathlib.Path(args.out)
    stager = _OutputStager()
    try:
        _save_grayscale(stager, img, out_path)
        stager.stage(out_path.with_suffix(".json")).write_text(
            json.dumps(sidecar, indent=2, sort_keys=True)
        )
        _write_manifest(
            stager,
            out_path.with_name(out_path.stem + ".synth.manifest.json"),
            command="synth",
            config=_public_config(args) | {"seed": seed},
            seeds=sub_seeds | {"base": seed},
            inputs=[],
            outputs=[str(f) for _, f in stager._staged],
            started=started,
        )
        stager.commit()
    except BaseException:
        stager.abort()
        raise
    return 0


# ---------------------------------------------------------------------- main


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gdm",
        description=(
            "Self-supervised denoising for scanning-microscopy images: "
            "preprocess training channels, train the compact U-Net, denoise, "
            "evaluate, and generate synthetic fixtures."
        ),
    )
    parser.add_argument("--version", action="version", version=f"gdm {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    fmt = argparse.ArgumentDefaultsHelpFormatter

    p = sub.add_parser(
        "preprocess",
        formatter_class=fmt,
        help="modality-specific FFT cleanup of a training image",
        description=(
            "Prepare a training image. stm keeps an annulus of frequencies "
            "(radii 20..60 px) away from the vertical axis (margin 30 deg); "
            "afm notches prominent spectrum columns, then derives a dark mask "
            "(50th percentile) and a merged overlay; sem masks bright pixels "
            "(8-bit intensity above 130) and inpaints them (radius 3)."
        ),
    )
    p.add_argument("input", help="input image (8/16-bit PNG or TIFF)")
    p.add_argument("--mode", default=None, choices=("stm", "afm", "sem"),
                   help="preprocessing pipeline (required here or in --config)")
    p.add_argument("--config", default=None, help="JSON file of flag defaults")
    p.add_argument("--out-dir", default=None, help="output directory (default: input's)")
    p.add_argument("--r-low", type=float, default=STM_R_LOW, help="stm: inner radius, px")
    p.add_argument("--r-high", type=float, default=STM_R_HIGH, help="stm: outer radius, px")
    p.add_argument(
        "--theta-margin", type=float, default=STM_THETA_MARGIN_DEG,
        help="stm: degrees excluded around the vertical frequency axis",
    )
    p.add_argument(
        "--dc-radius", type=float, default=AFM_DC_RADIUS,
        help="afm: preserved low-frequency disk radius, px",
    )
    p.add_argument(
        "--smooth-sigma", type=float, default=AFM_SMOOTH_SIGMA,
        help="afm: Gaussian sigma for the column energy profile, px",
    )
    p.add_argument(
        "--notch-half-width", type=int, default=AFM_NOTCH_HALF_WIDTH,
        help="afm: half-width of each zeroed column band, px",
    )
    p.add_argument(
        "--dark-percentile", type=float, default=AFM_DARK_PERCENTILE,
        help="afm: intensity percentile below which pixels enter the dark mask",
    )
    p.add_argument(
        "--threshold", type=float, default=SEM_THRESHOLD_8BIT,
        help="sem: 8-bit intensity above which pixels are masked",
    )
    p.add_argument(
        "--radius", type=int, default=SEM_INPAINT_RADIUS, help="sem: inpainting radius, px"
    )
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser(
        "train",
        formatter_class=fmt,
        help="train the compact U-Net on one or two channel images",
        description=(
            "Blind-spot training: patches are corrupted at a masked pixel "
            "fraction (default 0.1) and the network minimizes masked MSE "
            "divided by (1 + FFT cosine similarity), channel-weighted, with "
            "Adam; the learning rate halves every 10 epochs."
        ),
    )
    p.add_argument("--ch1", default=None, help="channel 1 image path")
    p.add_argument("--ch2", default=None, help="channel 2 image path")
    p.add_argument("--config", default=None, help="JSON file of flag defaults")
    p.add_argument("--w1", type=float, default=None, help="channel 1 weight (w1 + w2 = 1)")
    p.add_argument("--w2", type=float, default=None, help="channel 2 weight (w1 + w2 = 1)")
    p.add_argument("--patch-size", type=int, default=128, help="square patch side, px")
    p.add_argument("--batch-size", type=int, default=8, help="patches per channel per step")
    p.add_argument("--lr", type=float, default=1e-4, help="base Adam learning rate")
    p.add_argument(
        "--mask-fraction", type=float, default=0.1, help="fraction of patch pixels masked"
    )
    p.add_argument("--epochs", type=int, default=50, help="training epochs")
    p.add_argument(
        "--stride", type=int, default=None,
        help="patch grid stride, px (default: the patch size)",
    )
    p.add_argument("--reduction", choices=("mean", "sum"), default="mean",
                   help="batch reduction for both loss terms")
    p.add_argument("--no-fft", action="store_true",
                   help="ablation: train on the masked MSE alone")
    p.add_argument("--seed", type=int, default=None,
                   help=f"RNG seed (default: ${_SEED_ENV} or 0)")
    p.add_argument("--out-dir", default=".", help="output directory")
    p.add_argument("--name", default="run", help="basename for checkpoint files")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser(
        "denoise",
        formatter_class=fmt,
        help="run a trained checkpoint on an image",
        description="Whole-image inference; output is clamped to [0, 1].",
    )
    p.add_argument("--ckpt", default=None, help="checkpoint basename or .pt path")
    p.add_argument("--in", dest="in_path", default=None, help="input image")
    p.add_argument("--out", default=None, help="output image path")
    p.add_argument("--config", default=None, help="JSON file of flag defaults")
    p.set_defaults(func=cmd_denoise)

    p = sub.add_parser(
        "evaluate",
        formatter_class=fmt,
        help="PNR and line-length metrics for a noisy/denoised pair",
        description=(
            "Writes a CSV row (both PNRs, both angle-filtered line lengths) "
            "plus overlay PNGs: the log spectrum with detected peaks, and "
            "detected segments with the in-range ones highlighted."
        ),
    )
    p.add_argument("--noisy", default=None, help="noisy image path")
    p.add_argument("--denoised", default=None, help="denoised image path")
    p.add_argument("--config", default=None, help="JSON file of flag defaults")
    p.add_argument("--modality", choices=("stm", "afm", "sem"), default="stm",
                   help="detector parameter preset")
    p.add_argument("--theta", type=float, nargs=2, default=(-30.0, 30.0),
                   metavar=("T1", "T2"), help="angle range for the line-length sum, deg")
    p.add_argument("--out-csv", default=None, help="CSV path (default: out-dir/evaluate.csv)")
    p.add_argument("--out-dir", default=".", help="directory for overlays and manifest")
    p.add_argument("--seed", type=int, default=None,
                   help=f"Hough seed (default: ${_SEED_ENV} or 0)")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser(
        "synth",
        formatter_class=fmt,
        help="generate synthetic fixtures with optional artifacts",
        description=(
            "qpi renders standing-wave ripples around random scatterers "
            "(effective mass ratio 0.38, chemical potential 0.45 eV by "
            "default); lattice renders a hexagonal cosine texture. Optional "
            "artifact flags corrupt the result in order: scanlines, strips, "
            "noise."
        ),
    )
    p.add_argument("generator", choices=("qpi", "lattice"))
    p.add_argument("--config", default=None, help="JSON file of flag defaults")
    p.add_argument("--size", type=int, default=256, help="image side, px")
    p.add_argument("--fov-nm", type=float, default=30.0, help="qpi: field of view, nm")
    p.add_argument("--n-scatterers", type=int, default=8, help="qpi: point defect count")
    p.add_argument("--decay", type=float, default=0.5,
                   help="qpi: ripple envelope decay exponent")
    p.add_argument("--mass-ratio", type=float, default=0.38,
                   help="qpi: effective mass over the electron mass")
    p.add_argument("--mu", type=float, default=0.45, help="qpi: chemical potential, eV")
    p.add_argument("--amplitude", type=float, default=1.0, help="qpi: ripple amplitude")
    p.add_argument("--period", type=float, default=8.0, help="lattice: period, px")
    p.add_argument("--scanlines", type=float, default=None, metavar="AMP",
                   help="add scan-line artifacts with this amplitude")
    p.add_argument("--strips", type=float, default=None, metavar="AMP",
                   help="add bright strips with this amplitude")
    p.add_argument("--noise", type=float, default=None, metavar="SIGMA",
                   help="add Gaussian noise with this sigma")
    p.add_argument("--seed", type=int, default=None,
                   help=f"RNG seed (default: ${_SEED_ENV} or 0)")
    p.add_argument("--out", default="synth.png", help="output image path")
    p.set_defaults(func=cmd_synth)

    return parser


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    # apply --config file values as defaults for the chosen subcommand
    if argv and argv[0] in {"preprocess", "train", "denoise", "evaluate", "synth"}:
        sub_actions = next(
            a for a in parser._actions if isinstance(a, argparse._SubParsersAction)
        )
        _config_file_defaults(argv[1:], sub_actions.choices[argv[0]])
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except GdmError as exc:
        print(f"gdm: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
