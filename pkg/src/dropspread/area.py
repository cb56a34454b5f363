"""Wet-area measurement: pixel counting, physical conversion, time series,
plateau/maximum estimation and small-sample uncertainty.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from scipy import stats

from . import training
from .ingestion import FrameRecord
from .model import ModelParameters, predict_mask

SERIES_COLUMNS = ("frame_index", "timestamp_s", "wet_pixels", "area_mm2")
SUMMARY_COLUMNS = ("concentration_ul_per_l", "cmc_fraction",
                   "max_area_mm2", "error_mm2", "no_plateau")


@dataclass(frozen=True)
class OpticsScale:
    """Side length of one pixel on the object plane, in microns."""

    microns_per_pixel: float

    def __post_init__(self):
        if self.microns_per_pixel <= 0:
            raise ValueError(
                f"microns_per_pixel must be positive, got {self.microns_per_pixel}")


@dataclass(frozen=True)
class AreaSample:
    timestamp_s: float
    wet_pixels: int
    area_mm2: float


@dataclass
class MaxAreaEstimate:
    max_area_mm2: float
    error_mm2: float                     # half of the plateau's min-to-max range
    plateau_span: tuple[float, float]    # (t_start, t_end)
    no_plateau: bool = False
    concentration_ul_per_l: float | None = None
    concentration_cmc_fraction: float | None = None


def count_wet_pixels(mask: np.ndarray) -> int:
    mask = np.asarray(mask)
    if not np.isin(mask, (0, 1)).all():
        raise ValueError("mask must be binary (0/1)")
    return int(np.count_nonzero(mask))


def pixels_to_area(count: int, scale: OpticsScale) -> float:
    """Pixel count to mm^2: count * (um/px)^2 / 1e6."""
    if count < 0:
        raise ValueError(f"pixel count must be >= 0, got {count}")
    return count * scale.microns_per_pixel ** 2 / 1e6


def measure_series(frames: list[FrameRecord], params: ModelParameters,
                   scale: OpticsScale, grid_side: int = 1024,
                   mask_sink=None) -> list[AreaSample]:
    """Segment each frame and record its wet area, ordered by time.

    Frames are resized to the model grid; the optics scale is corrected by
    the per-axis resize factors so the reported area refers to the original
    footage. ``mask_sink(record, mask)``, when given, receives every
    predicted mask (used by the CLI for overlay output).
    """
    samples = []
    for rec in frames:
        try:
            image = training.load_image(rec.image_path)
            resized, (sy, sx) = training.resize_image_to_grid(image, grid_side)
            mask = predict_mask(params, resized)
        except Exception as exc:
            raise RuntimeError(f"frame {rec.index} ({rec.image_path.name}): {exc}") from exc
        wet = count_wet_pixels(mask)
        # one grid pixel covers sy*sx original pixels
        area = wet * sy * sx * scale.microns_per_pixel ** 2 / 1e6
        samples.append(AreaSample(rec.timestamp_s, wet, area))
        if mask_sink is not None:
            mask_sink(rec, mask)
    return sorted(samples, key=lambda s: s.timestamp_s)


def estimate_max_area(series: list[AreaSample], window_fraction: float = 0.1,
                      flatness_tol: float = 0.05) -> MaxAreaEstimate:
    """Locate the plateau at the series maximum and report mean +/- half-range.

    The plateau is the longest contiguous window whose relative spread is at
    most ``flatness_tol``, whose mean lies within ``flatness_tol`` of the
    series maximum, and which persists for at least ``window_fraction`` of
    the series. Series that never flatten near their maximum (low surfactant
    concentration: the droplet keeps creeping) fall back to the final
    ``window_fraction`` of samples and are flagged ``no_plateau``.
    """
    if len(series) < 5:
        raise ValueError(f"need at least 5 samples, got {len(series)}")
    if not 0.0 < window_fraction <= 1.0:
        raise ValueError("window_fraction must lie in (0, 1]")
    if flatness_tol < 0:
        raise ValueError("flatness_tol must be >= 0")
    areas = np.array([s.area_mm2 for s in series])
    times = np.array([s.timestamp_s for s in series])
    peak = areas.max()
    n = len(areas)

    peak_ref = abs(peak) if peak != 0 else 1.0
    min_len = max(2, int(round(window_fraction * n)))
    best: tuple[int, int] | None = None
    for start in range(n):
        lo = hi = areas[start]
        total = 0.0
        for end in range(start, n):
            lo = min(lo, areas[end])
            hi = max(hi, areas[end])
            total += areas[end]
            length = end - start + 1
            mean = total / length
            if (hi - lo) > flatness_tol * (abs(mean) if mean != 0 else 1.0):
                break  # window can only get less flat from here
            if abs(mean - peak) > flatness_tol * peak_ref:
                continue
            if length >= min_len and (best is None or length > best[1] - best[0] + 1):
                best = (start, end)

    if best is None:
        window = slice(n - min_len, n)
        flagged = True
    else:
        window = slice(best[0], best[1] + 1)
        flagged = False
    w = areas[window]
    return MaxAreaEstimate(
        max_area_mm2=float(w.mean()),
        error_mm2=float((w.max() - w.min()) / 2.0),
        plateau_span=(float(times[window][0]), float(times[window][-1])),
        no_plateau=flagged,
    )


def cmc_fraction(concentration_ul_per_l: float, cmc_ul_per_l: float) -> float:
    if cmc_ul_per_l <= 0:
        raise ValueError(f"cmc must be positive, got {cmc_ul_per_l}")
    return concentration_ul_per_l / cmc_ul_per_l


def student_interval(repeated_measurements, confidence: float = 0.95):
    """Small-sample mean and t-based confidence half-width."""
    values = np.asarray(repeated_measurements, dtype=float)
    if values.ndim != 1 or values.size < 2:
        raise ValueError("need at least 2 repeated measurements")
    if not 0.0 < confidence < 1.0:
        raise ValueError("confidence must lie in (0, 1)")
    n = values.size
    mean = float(values.mean())
    s = float(values.std(ddof=1))
    t = stats.t.ppf((1.0 + confidence) / 2.0, df=n - 1)
    return mean, float(t * s / np.sqrt(n))


def write_series(samples: list[AreaSample], path,
                 metadata: dict | None = None) -> None:
    """Series CSV; run metadata goes into leading ``# key = value`` comments."""
    frames = list(range(len(samples)))
    with open(path, "w", newline="") as fh:
        for key, value in (metadata or {}).items():
            fh.write(f"# {key} = {value}\n")
        writer = csv.writer(fh)
        writer.writerow(SERIES_COLUMNS)
        for idx, s in zip(frames, samples):
            writer.writerow([idx, f"{s.timestamp_s:.6f}", s.wet_pixels,
                             f"{s.area_mm2:.9g}"])


def read_series(path):
    """Returns (samples, metadata dict)."""
    metadata: dict[str, str] = {}
    rows = []
    with open(path, newline="") as fh:
        for line in fh:
            if line.startswith("#"):
                if "=" in line:
                    key, _, value = line[1:].partition("=")
                    metadata[key.strip()] = value.strip()
                continue
            rows.append(line)
    reader = csv.DictReader(rows)
    if reader.fieldnames is None or set(SERIES_COLUMNS) - set(reader.fieldnames):
        raise ValueError(f"{path}: malformed series file "
                         f"(expected columns {','.join(SERIES_COLUMNS)})")
    samples = [AreaSample(float(r["timestamp_s"]), int(r["wet_pixels"]),
                          float(r["area_mm2"])) for r in reader]
    return samples, metadata


def write_summary(estimates: list[MaxAreaEstimate], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(SUMMARY_COLUMNS)
        for e in estimates:
            writer.writerow([
                f"{e.concentration_ul_per_l:.9g}",
                f"{e.concentration_cmc_fraction:.9g}",
                f"{e.max_area_mm2:.9g}",
                f"{e.error_mm2:.9g}",
                int(e.no_plateau),
            ])
