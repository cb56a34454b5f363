"""Turn spreading-video footage into an ordered, timestamped frame sequence.

Video decoding itself is delegated to ffmpeg; the measurement pipeline only
ever consumes directories of losslessly stored frame images plus a
``frames.csv`` sidecar (``index,timestamp_s,filename``).
"""

from __future__ import annotations

import csv
import shutil
import subprocess
from dataclasses import dataclass
from pathlib import Path

IMAGE_EXTENSIONS = (".png", ".tif", ".tiff", ".bmp", ".jpg", ".jpeg")
FRAME_PATTERN = "frame_%06d.png"
SIDECAR_NAME = "frames.csv"


class IngestionError(RuntimeError):
    pass


@dataclass(frozen=True)
class FrameRecord:
    index: int            # original frame index in the source footage
    timestamp_s: float    # seconds from the first frame (= index / fps)
    image_path: Path


def index_frame_dir(dir_path, fps: float, stride: int = 1) -> list[FrameRecord]:
    """Index every stride-th frame of a lexicographically ordered frame dir."""
    if fps <= 0:
        raise ValueError(f"fps must be positive, got {fps}")
    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")
    root = Path(dir_path)
    if not root.is_dir():
        raise IngestionError(f"frame directory not found: {root}")
    files = sorted(p for p in root.iterdir()
                   if p.suffix.lower() in IMAGE_EXTENSIONS)
    if not files:
        raise IngestionError(f"no frame images in {root}")
    records = []
    for original_index in range(0, len(files), stride):
        path = files[original_index]
        if not path.is_file():
            raise IngestionError(f"unreadable frame file: {path}")
        records.append(FrameRecord(
            index=original_index,
            timestamp_s=original_index / fps,
            image_path=path,
        ))
    return records


def write_sidecar(records: list[FrameRecord], out_dir) -> Path:
    path = Path(out_dir) / SIDECAR_NAME
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["index", "timestamp_s", "filename"])
        for rec in records:
            writer.writerow([rec.index, f"{rec.timestamp_s:.6f}", rec.image_path.name])
    return path


def extract_frames(video_path, out_dir, stride: int = 1,
                   fps: float = 30.0) -> list[FrameRecord]:
    """Decode a video to lossless PNG frames, then index them.

    Requires ffmpeg on PATH. If it is missing, no output is produced and the
    error explains how to pre-extract frames and use the directory interface
    instead.
    """
    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")
    video = Path(video_path)
    if not video.is_file():
        raise IngestionError(f"video file not found: {video}")
    if shutil.which("ffmpeg") is None:
        raise IngestionError(
            "ffmpeg not found on PATH; install it, or pre-extract the frames "
            "with another tool and point the pipeline at the frame directory "
            "(see index_frame_dir / the measure subcommand)")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cmd = [
        "ffmpeg", "-hide_banner", "-loglevel", "error",
        "-i", str(video),
        "-vf", f"select=not(mod(n\\,{stride}))",
        "-fps_mode", "vfr",
        "-start_number", "0",
        str(out / FRAME_PATTERN),
    ]
    result = subprocess.run(cmd, capture_output=True, text=True)
    if result.returncode != 0:
        for leftover in out.glob("frame_*.png"):
            leftover.unlink()
        raise IngestionError(f"ffmpeg failed on {video}: {result.stderr.strip()}")
    # ffmpeg numbers the kept frames consecutively; rename to original indices
    produced = sorted(out.glob("frame_*.png"))
    if not produced:
        raise IngestionError(f"ffmpeg produced no frames from {video}")
    # descending order so a rename never clobbers a not-yet-renamed source
    for kept_pos in range(len(produced) - 1, -1, -1):
        path = produced[kept_pos]
        target = out / (FRAME_PATTERN % (kept_pos * stride))
        if path != target:
            path.rename(target)
    records = index_frame_dir(out, fps=fps, stride=1)
    # records are the kept frames only; restore original indices/timestamps
    records = [FrameRecord(index=i * stride, timestamp_s=i * stride / fps,
                           image_path=r.image_path)
               for i, r in enumerate(records)]
    write_sidecar(records, out)
    return records
