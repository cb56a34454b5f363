"""Command-line front end wiring the measurement pipeline together.

Subcommands: extract-frames, train, predict, measure, summarize, cmc-fit.
Defaults can be collected in a ``key = value`` config file (``--config``);
explicit flags override file values. All randomness funnels through the
single ``seed`` value.
"""

from __future__ import annotations

import contextlib
import csv
from pathlib import Path

import click
import numpy as np

from . import area as area_mod
from . import cmc as cmc_mod
from . import ingestion, training
from .loss import LossConfig
from .model import (ModelConfig, build_model, load_checkpoint, predict_mask,
                    save_checkpoint)

CONFIG_VERSION = 1

CONFIG_DEFAULTS = {
    "seed": 0,
    "epochs": 50,
    "learning_rate": 1e-3,
    "side": 1024,
    "depth": 6,
    "base_channels": 16,
    "edge_weight": 1.0,
    "train_fraction": 0.8,
    "microns_per_pixel": 10.0,
    "fps": 30.0,
    "stride": 1,
    "window_fraction": 0.1,
    "flatness_tol": 0.05,
    "cmc": 80.0,
}

_INT_KEYS = {"seed", "epochs", "side", "depth", "base_channels", "stride"}


def load_run_config(path) -> dict:
    """Parse a versioned ``key = value`` run-config file."""
    values = dict(CONFIG_DEFAULTS)
    seen_version = False
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise click.ClickException(f"{path}:{lineno}: expected 'key = value'")
        key, _, raw = line.partition("=")
        key, raw = key.strip(), raw.strip()
        if key == "config_version":
            if int(raw) != CONFIG_VERSION:
                raise click.ClickException(
                    f"{path}: unsupported config_version {raw} "
                    f"(this build reads version {CONFIG_VERSION})")
            seen_version = True
            continue
        if key not in CONFIG_DEFAULTS:
            raise click.ClickException(f"{path}:{lineno}: unknown key {key!r}")
        values[key] = int(raw) if key in _INT_KEYS else float(raw)
    if not seen_version:
        raise click.ClickException(f"{path}: missing 'config_version = {CONFIG_VERSION}'")
    return values


def _resolve(config_path, overrides: dict) -> dict:
    values = load_run_config(config_path) if config_path else dict(CONFIG_DEFAULTS)
    for key, value in overrides.items():
        if value is not None:
            values[key] = value
    return values


@contextlib.contextmanager
def _output_guard(*paths):
    """Remove the named outputs if the wrapped command fails part-way."""
    try:
        yield
    except Exception:
        for p in paths:
            path = Path(p)
            if path.is_file():
                path.unlink()
            elif path.is_dir():
                for child in path.glob("*"):
                    if child.is_file():
                        child.unlink()
        raise


def _fail(message: str):
    raise click.ClickException(str(message))


@click.group()
def main():
    """Quantify surfactant-driven droplet spreading from video footage."""


@main.command("extract-frames")
@click.option("--video", required=True, type=click.Path())
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--stride", type=int, default=1, show_default=True)
@click.option("--fps", type=float, default=30.0, show_default=True)
def extract_frames_cmd(video, out_dir, stride, fps):
    """Decode a video into frame_%06d.png files plus a frames.csv sidecar."""
    try:
        records = ingestion.extract_frames(video, out_dir, stride=stride, fps=fps)
    except (ingestion.IngestionError, ValueError) as exc:
        _fail(exc)
    click.echo(f"wrote {len(records)} frames to {out_dir}")


@main.command("train")
@click.option("--config", "config_path", type=click.Path(exists=True))
@click.option("--annotations", required=True, type=click.Path())
@click.option("--checkpoint", "checkpoint_path", required=True, type=click.Path())
@click.option("--history", "history_path", required=True, type=click.Path())
@click.option("--epochs", type=int)
@click.option("--learning-rate", "learning_rate", type=float)
@click.option("--seed", type=int)
@click.option("--side", type=int)
@click.option("--depth", type=int)
@click.option("--base-channels", "base_channels", type=int)
@click.option("--edge-weight", "edge_weight", type=float)
@click.option("--train-fraction", "train_fraction", type=float)
def train_cmd(config_path, annotations, checkpoint_path, history_path, **overrides):
    """Train on an annotated image/mask directory; write checkpoint + history CSV."""
    cfg = _resolve(config_path, overrides)
    try:
        samples = training.load_annotated(annotations)
    except training.DatasetError as exc:
        _fail(exc)
    if not samples:
        _fail(f"no annotated samples in {annotations}")
    with _output_guard(checkpoint_path, history_path):
        try:
            samples = [training.resize_to_grid(s, cfg["side"]) for s in samples]
            augmented = [v for s in samples for v in training.augment(s)]
            train_set, val_set = training.split(
                augmented, cfg["train_fraction"], seed=cfg["seed"])
            params = build_model(
                ModelConfig(pyramid_depth=cfg["depth"],
                            base_channels=cfg["base_channels"]),
                seed=cfg["seed"])
            loss_cfg = LossConfig(edge_weight=cfg["edge_weight"])
            params, history = training.train(
                params, train_set, val_set, epochs=cfg["epochs"],
                learning_rate=cfg["learning_rate"], seed=cfg["seed"],
                loss_cfg=loss_cfg)
        except (ValueError, FloatingPointError) as exc:
            _fail(exc)
        save_checkpoint(params, checkpoint_path)
        with open(history_path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["epoch", "train_loss", "val_loss"])
            for i, (tr, va) in enumerate(zip(history.train_loss, history.val_loss)):
                writer.writerow([i, f"{tr:.9g}", f"{va:.9g}"])
    click.echo(f"trained {history.epochs} epochs; checkpoint at {checkpoint_path}")


@main.command("predict")
@click.option("--checkpoint", "checkpoint_path", required=True, type=click.Path())
@click.option("--image", "image_path", required=True, type=click.Path())
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--side", type=int, default=1024, show_default=True)
def predict_cmd(checkpoint_path, image_path, out_path, side):
    """Segment one image; write the binary wet mask as an 8-bit PNG."""
    from PIL import Image

    try:
        params = load_checkpoint(checkpoint_path)
        image = training.load_image(Path(image_path))
        resized, _ = training.resize_image_to_grid(image, side)
        mask = predict_mask(params, resized)
    except Exception as exc:
        _fail(exc)
    with _output_guard(out_path):
        Image.fromarray(mask * 255).save(out_path)
    click.echo(f"wrote mask to {out_path}")


@main.command("measure")
@click.option("--config", "config_path", type=click.Path(exists=True))
@click.option("--checkpoint", "checkpoint_path", required=True, type=click.Path())
@click.option("--frames", "frames_dir", required=True, type=click.Path())
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--concentration", type=float, required=True,
              help="surfactant concentration of this run, ul/l")
@click.option("--microns-per-pixel", "microns_per_pixel", type=float)
@click.option("--fps", type=float)
@click.option("--stride", type=int)
@click.option("--side", type=int)
@click.option("--overlay-dir", "overlay_dir", type=click.Path())
def measure_cmd(config_path, checkpoint_path, frames_dir, out_path, concentration,
                overlay_dir, **overrides):
    """Measure the wet-area time series of one frame directory."""
    cfg = _resolve(config_path, overrides)
    try:
        params = load_checkpoint(checkpoint_path)
        records = ingestion.index_frame_dir(frames_dir, fps=cfg["fps"],
                                            stride=cfg["stride"])
        scale = area_mod.OpticsScale(cfg["microns_per_pixel"])
    except Exception as exc:
        _fail(exc)

    sink = None
    if overlay_dir:
        from PIL import Image

        overlay = Path(overlay_dir)
        overlay.mkdir(parents=True, exist_ok=True)

        def sink(rec, mask):
            with Image.open(rec.image_path) as img:
                frame = img.convert("RGB").resize(mask.shape[::-1])
            panel = np.concatenate(
                [np.asarray(frame), np.repeat(mask[:, :, None] * 255, 3, axis=2)],
                axis=1).astype(np.uint8)
            Image.fromarray(panel).save(overlay / f"overlay_{rec.index:06d}.png")

    with _output_guard(out_path, *( [overlay_dir] if overlay_dir else [] )):
        try:
            samples = area_mod.measure_series(records, params, scale,
                                              grid_side=cfg["side"], mask_sink=sink)
        except Exception as exc:
            _fail(exc)
        area_mod.write_series(samples, out_path, metadata={
            "concentration_ul_per_l": concentration,
            "microns_per_pixel": cfg["microns_per_pixel"],
            "fps": cfg["fps"],
            "stride": cfg["stride"],
        })
    click.echo(f"wrote {len(samples)}-row series to {out_path}")


@main.command("summarize")
@click.argument("series_files", nargs=-1, required=True, type=click.Path(exists=True))
@click.option("--config", "config_path", type=click.Path(exists=True))
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--plot-dir", "plot_dir", type=click.Path())
@click.option("--cmc", type=float)
@click.option("--window-fraction", "window_fraction", type=float)
@click.option("--flatness-tol", "flatness_tol", type=float)
def summarize_cmd(series_files, config_path, out_path, plot_dir, **overrides):
    """Plateau max-area estimates for one or more measured series."""
    cfg = _resolve(config_path, overrides)
    estimates = []
    curves = []
    for path in series_files:
        try:
            samples, metadata = area_mod.read_series(path)
        except (ValueError, OSError) as exc:
            _fail(f"{path}: {exc}")
        if "concentration_ul_per_l" not in metadata:
            _fail(f"{path}: series file lacks concentration metadata "
                  "(# concentration_ul_per_l = ...)")
        conc = float(metadata["concentration_ul_per_l"])
        try:
            est = area_mod.estimate_max_area(
                samples, window_fraction=cfg["window_fraction"],
                flatness_tol=cfg["flatness_tol"])
        except ValueError as exc:
            _fail(f"{path}: {exc}")
        est.concentration_ul_per_l = conc
        est.concentration_cmc_fraction = area_mod.cmc_fraction(conc, cfg["cmc"])
        estimates.append(est)
        curves.append((conc, samples))
    estimates.sort(key=lambda e: e.concentration_ul_per_l)

    plot_paths = []
    if plot_dir:
        Path(plot_dir).mkdir(parents=True, exist_ok=True)
        plot_paths = [Path(plot_dir) / "max_area_vs_cmc_fraction.png",
                      Path(plot_dir) / "area_vs_time.png"]
    with _output_guard(out_path, *plot_paths):
        area_mod.write_summary(estimates, out_path)
        if plot_dir:
            _write_summary_plots(estimates, curves, plot_paths)
    click.echo(f"wrote {len(estimates)}-row summary to {out_path}")


def _write_summary_plots(estimates, curves, plot_paths):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots()
    fractions = [e.concentration_cmc_fraction for e in estimates]
    ax.errorbar(fractions, [e.max_area_mm2 for e in estimates],
                yerr=[e.error_mm2 for e in estimates], fmt="o", capsize=4)
    ax.set_xlabel("concentration (fraction of CMC)")
    ax.set_ylabel("max wet area (mm$^2$)")
    fig.savefig(plot_paths[0], dpi=150)
    plt.close(fig)

    fig, ax = plt.subplots()
    for conc, samples in sorted(curves):
        ax.plot([s.timestamp_s for s in samples], [s.area_mm2 for s in samples],
                label=f"{conc:g} ul/l")
    ax.set_xlabel("time (s)")
    ax.set_ylabel("wet area (mm$^2$)")
    ax.legend()
    fig.savefig(plot_paths[1], dpi=150)
    plt.close(fig)


@main.command("cmc-fit")
@click.option("--input", "input_path", required=True, type=click.Path())
@click.option("--out", "out_path", type=click.Path())
def cmc_fit_cmd(input_path, out_path):
    """Fit the two-regime tensiometry curve and report the CMC."""
    try:
        points = cmc_mod.read_tensiometry_csv(input_path)
        result = cmc_mod.fit_two_regimes(points)
    except (cmc_mod.FitError, ValueError, OSError) as exc:
        _fail(exc)
    report = cmc_mod.format_report(result)
    if out_path:
        with _output_guard(out_path):
            Path(out_path).write_text(report)
    click.echo(report, nl=False)


if __name__ == "__main__":
    main()
