"""Frame/flow ingestion and sliding-window clip construction.

On-disk layout for a split::

    <root>/<split>/<video_id>/000000.png ...      frames (png or jpg)
    <root>/<split>/<video_id>/flow/000000.flo ... flow from frame k to k+1
    <root>/<split>/<video_id>/labels.txt          test only, one 0/1 per line

A clip's flow entry ``t`` is the motion that produced input frame ``t``
(the file of the preceding frame), so no flow ever reaches into the
prediction target. The first frame of a video has no predecessor and gets
zero flow.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Optional

import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image

from .flo import read_flo

log = logging.getLogger(__name__)

FRAME_SUFFIXES = (".png", ".jpg", ".jpeg", ".tif", ".tiff", ".bmp")
FLOW_SCALE = 20.0


@dataclass
class FrameClip:
    frames: torch.Tensor  # [T, 3, H, W] in [-1, 1]
    target: torch.Tensor  # [3, H, W] in [-1, 1]
    video_id: str
    frame_index: int
    label: Optional[int] = None


@dataclass
class FlowField:
    flow: torch.Tensor  # [T, 2, H, W], pixels per frame step


@dataclass
class VideoEntry:
    video_id: str
    frame_paths: list[Path]
    flow_dir: Optional[Path] = None
    label_file: Optional[Path] = None

    def __len__(self):
        return len(self.frame_paths)

    def flow_path(self, k: int) -> Path:
        return (self.flow_dir or self.frame_paths[0].parent / "flow") / f"{k:06d}.flo"

    def labels(self) -> Optional[np.ndarray]:
        if self.label_file is None:
            return None
        labels = np.loadtxt(self.label_file, dtype=np.int64, ndmin=1)
        if len(labels) != len(self.frame_paths):
            raise ValueError(
                f"{self.label_file}: {len(labels)} labels for {len(self.frame_paths)} frames"
            )
        if not np.isin(labels, (0, 1)).all():
            raise ValueError(f"{self.label_file}: labels must be 0 or 1")
        return labels


@dataclass
class VideoDataset:
    root: Path
    split: str
    videos: list[VideoEntry]
    clip_length: int = 4
    stride: int = 1
    resolution: int = 256
    synthetic: bool = False

    def __post_init__(self):
        if self.split not in ("train", "test"):
            raise ValueError(f"split must be 'train' or 'test', got {self.split!r}")
        if self.split == "train" and any(v.label_file is not None for v in self.videos):
            raise ValueError("training split must not carry anomaly labels")
        if self.clip_length < 1 or self.stride < 1:
            raise ValueError("clip_length and stride must be positive")


def load_dataset(root, split: str, clip_length: int = 4, stride: int = 1,
                 resolution: int = 256) -> VideoDataset:
    """Scan ``<root>/<split>`` for video directories."""
    root = Path(root)
    split_dir = root / split
    if not split_dir.is_dir():
        raise FileNotFoundError(f"no split directory at {split_dir}")
    videos = []
    for vdir in sorted(p for p in split_dir.iterdir() if p.is_dir()):
        frames = sorted(p for p in vdir.iterdir() if p.suffix.lower() in FRAME_SUFFIXES)
        if not frames:
            continue
        label_file = vdir / "labels.txt"
        videos.append(VideoEntry(
            video_id=vdir.name,
            frame_paths=frames,
            flow_dir=vdir / "flow",
            label_file=label_file if split == "test" and label_file.exists() else None,
        ))
    synthetic = (root / "scene.yaml").exists()
    return VideoDataset(root, split, videos, clip_length, stride, resolution, synthetic)


def normalize_frame(image, out_size=(256, 256)) -> torch.Tensor:
    """Resize a ``[3, H0, W0]`` raster bilinearly and map [0, 255] to [-1, 1]."""
    x = torch.as_tensor(np.array(image))
    if x.ndim != 3 or x.shape[0] != 3:
        raise ValueError(f"expected a [3, H, W] raster, got shape {tuple(x.shape)}")
    if x.shape[1] < 1 or x.shape[2] < 1:
        raise ValueError(f"raster has empty spatial dimensions {tuple(x.shape)}")
    x = x.to(torch.float32)
    if tuple(x.shape[1:]) != tuple(out_size):
        x = F.interpolate(x[None], size=tuple(out_size), mode="bilinear", align_corners=False)[0]
    return (x / 127.5 - 1.0).clamp_(-1.0, 1.0)


def resize_flow(flow, out_size) -> torch.Tensor:
    """Resize a ``[2, H0, W0]`` flow field, rescaling displacements to the new grid."""
    flow = torch.as_tensor(np.asarray(flow), dtype=torch.float32)
    h0, w0 = flow.shape[1:]
    h, w = out_size
    if (h0, w0) == (h, w):
        return flow
    out = F.interpolate(flow[None], size=(h, w), mode="bilinear", align_corners=False)[0]
    out[0] *= w / w0
    out[1] *= h / h0
    return out


def normalize_flow(flow: torch.Tensor, scale: float = FLOW_SCALE) -> torch.Tensor:
    """Bring flow into the frame range: divide by ``scale`` and clamp to [-1, 1]."""
    return (flow / scale).clamp(-1.0, 1.0)


def read_raster(path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB")).transpose(2, 0, 1)


@dataclass
class VideoTensors:
    """One video fully loaded: normalized frames and per-frame raw flow."""
    video_id: str
    frames: torch.Tensor  # [n, 3, H, W]
    flow: torch.Tensor  # [n, 2, H, W]; entry k is the motion from frame k-1 to k
    labels: Optional[np.ndarray] = None


def load_video(entry: VideoEntry, resolution: int) -> VideoTensors:
    size = (resolution, resolution)
    frames = torch.stack([normalize_frame(read_raster(p), size) for p in entry.frame_paths])
    n = len(entry.frame_paths)
    flow = torch.zeros(n, 2, *size)
    # file k (k -> k+1) lands at index k+1; the last file would only feed the final target
    for k in range(n - 2):
        path = entry.flow_path(k)
        if not path.exists():
            raise FileNotFoundError(f"missing flow sidecar for video {entry.video_id}: {path}")
        flow[k + 1] = resize_flow(read_flo(path), size)
    return VideoTensors(entry.video_id, frames, flow, entry.labels())


def clip_targets(n_frames: int, clip_length: int, stride: int) -> list[int]:
    """Target frame indices for every sliding window over a video."""
    return list(range(clip_length, n_frames, stride))


def clip_index(dataset: VideoDataset) -> tuple[list[tuple[int, int]], int]:
    """Return ``(video position, target index)`` pairs and the count of skipped short videos."""
    index, skipped = [], 0
    for vi, v in enumerate(dataset.videos):
        if len(v) < dataset.clip_length + 1:
            skipped += 1
            log.warning("skipping video %s: %d frames < clip length %d + 1",
                        v.video_id, len(v), dataset.clip_length)
            continue
        index.extend((vi, t) for t in clip_targets(len(v), dataset.clip_length, dataset.stride))
    return index, skipped


def slice_clip(video: VideoTensors, target: int, clip_length: int) -> tuple[FrameClip, FlowField]:
    start = target - clip_length
    label = None if video.labels is None else int(video.labels[target])
    clip = FrameClip(video.frames[start:target], video.frames[target], video.video_id, target, label)
    return clip, FlowField(video.flow[start:target])


@dataclass
class ClipStream:
    """Iterable of ``(FrameClip, FlowField)`` over a dataset.

    ``skipped`` counts videos too short for a single window.
    """
    dataset: VideoDataset
    seed: Optional[int] = None
    skipped: int = field(init=False, default=0)

    def __iter__(self) -> Iterator[tuple[FrameClip, FlowField]]:
        index, self.skipped = clip_index(self.dataset)
        if self.seed is not None:
            order = np.random.default_rng(self.seed).permutation(len(index))
            index = [index[i] for i in order]
        cache: dict[int, VideoTensors] = {}
        for vi, target in index:
            if vi not in cache:
                if len(cache) >= 8:
                    cache.clear()
                cache[vi] = load_video(self.dataset.videos[vi], self.dataset.resolution)
            yield slice_clip(cache[vi], target, self.dataset.clip_length)


def build_clips(dataset: VideoDataset, seed: Optional[int] = None) -> ClipStream:
    """Sliding windows of ``clip_length`` frames, each predicting the next frame.

    Ordering is video-major and temporal unless ``seed`` is given, in which
    case it is a seeded permutation.
    """
    return ClipStream(dataset, seed)


class ClipTensorDataset(torch.utils.data.Dataset):
    """In-memory clip dataset for training and evaluation loops.

    Items are ``(frames [T,3,H,W], flow [T,2,H,W], target [3,H,W], label, video_pos, frame_index)``
    with raw (pixel) flow; label is -1 when unknown.
    """

    def __init__(self, dataset: VideoDataset, videos: Optional[list[VideoTensors]] = None):
        self.dataset = dataset
        self.index, self.skipped = clip_index(dataset)
        if videos is None:
            videos = [
                load_video(v, dataset.resolution) if len(v) >= dataset.clip_length + 1 else None
                for v in dataset.videos
            ]
        self.videos = videos
        if not self.index:
            raise ValueError(f"dataset at {dataset.root}/{dataset.split} yields no clips")

    def __len__(self):
        return len(self.index)

    def __getitem__(self, i):
        vi, target = self.index[i]
        video = self.videos[vi]
        t = self.dataset.clip_length
        label = -1 if video.labels is None else int(video.labels[target])
        return (video.frames[target - t:target], video.flow[target - t:target],
                video.frames[target], label, vi, target)

    def video_ids(self) -> list[str]:
        return [v.video_id for v in self.dataset.videos]
