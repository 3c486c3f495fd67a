"""Synthetic sprite scenes with exact flow and scripted anomalies.

Normal sprites are squares and discs in a fixed palette, moving horizontally
in lanes above and below a forbidden band at speeds up to ``max_speed``
pixels per frame, bouncing off the canvas edges. Anomalies are extra sprites
present only on their scripted frames:

* ``appearance_only``: a novel shape in a novel colour, normal lane motion.
* ``motion_only``: a normal-looking sprite moving at ``anomaly_speed``.
* ``joint``: a normal-looking sprite at normal speed that travels vertically
  through the forbidden band.

All positions are integers, so the rendered frames and flow are exact.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import NamedTuple, Optional

import numpy as np
import yaml
from PIL import Image

from .data import VideoDataset, load_dataset
from .flo import write_flo

ANOMALY_KINDS = ("appearance_only", "motion_only", "joint")
NORMAL_SHAPES = ("square", "disc")
NORMAL_COLORS = ((60, 110, 235), (40, 205, 205), (225, 225, 215))
ANOMALY_SHAPE = "cross"
ANOMALY_COLOR = (235, 35, 35)


@dataclass
class AnomalyScript:
    video: int
    start: int
    end: int  # inclusive
    kind: str


@dataclass
class SyntheticSceneConfig:
    canvas: int = 64
    frames_per_video: int = 32
    train_videos: int = 20
    test_videos: int = 10
    sprite_count: int = 3
    sprite_size: int = 8
    max_speed: int = 2
    anomaly_speed: int = 6
    # None means one scripted anomaly per test video, kinds cycling
    anomalies: Optional[list[AnomalyScript]] = None
    seed: int = 0
    normal_shapes: tuple = NORMAL_SHAPES
    normal_colors: tuple = NORMAL_COLORS

    def __post_init__(self):
        if self.anomalies is not None:
            self.anomalies = [a if isinstance(a, AnomalyScript) else AnomalyScript(**a)
                              for a in self.anomalies]
        self.normal_shapes = tuple(self.normal_shapes)
        self.normal_colors = tuple(tuple(c) for c in self.normal_colors)

    @property
    def band(self) -> tuple[int, int]:
        """Rows ``[top, bottom)`` of the forbidden band."""
        top = (self.canvas - self.sprite_size) // 2
        return top, top + self.sprite_size

    def lanes(self) -> list[int]:
        top, bottom = self.band
        step = self.sprite_size + 1
        upper = list(range(1, top - self.sprite_size + 1, step))
        lower = list(range(bottom + 1, self.canvas - self.sprite_size + 1, step))
        return upper + lower

    def scripts(self) -> list[AnomalyScript]:
        if self.anomalies is not None:
            return self.anomalies
        return default_anomaly_scripts(self.test_videos, self.frames_per_video, self.seed)

    def validate(self):
        if self.canvas < 4 * self.sprite_size:
            raise ValueError("canvas too small for the sprite size")
        if self.max_speed < 1 or self.anomaly_speed <= self.max_speed:
            raise ValueError("anomaly_speed must exceed max_speed >= 1")
        if self.sprite_count + 1 > len(self.lanes()):
            raise ValueError(f"sprite_count {self.sprite_count} needs more than "
                             f"{len(self.lanes()) - 1} free lanes")
        seen: dict[int, list[AnomalyScript]] = {}
        for a in self.scripts():
            if a.kind not in ANOMALY_KINDS:
                raise ValueError(f"unknown anomaly kind {a.kind!r}")
            if not 0 <= a.video < self.test_videos:
                raise ValueError(f"anomaly video {a.video} outside 0..{self.test_videos - 1}")
            if not 0 <= a.start <= a.end < self.frames_per_video:
                raise ValueError(f"anomaly frames {a.start}-{a.end} outside video length "
                                 f"{self.frames_per_video}")
            for b in seen.get(a.video, []):
                if a.start <= b.end and b.start <= a.end:
                    raise ValueError(f"overlapping anomaly scripts on video {a.video}: "
                                     f"{b.start}-{b.end} and {a.start}-{a.end}")
            seen.setdefault(a.video, []).append(a)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["normal_shapes"] = list(self.normal_shapes)
        d["normal_colors"] = [list(c) for c in self.normal_colors]
        d["anomalies"] = [asdict(a) for a in self.scripts()]
        return d


def default_anomaly_scripts(test_videos: int, frames: int, seed: int) -> list[AnomalyScript]:
    if frames < 16:
        raise ValueError(f"default anomaly scripts need at least 16 frames per video, got {frames}; "
                         "pass explicit anomalies for shorter videos")
    rng = np.random.default_rng([seed, 7])
    scripts = []
    for v in range(test_videos):
        length = int(rng.integers(frames // 4, frames // 3 + 1))
        start = int(rng.integers(6, frames - length - 2))
        scripts.append(AnomalyScript(v, start, start + length - 1, ANOMALY_KINDS[v % 3]))
    return scripts


def bounce(p0: int, v: int, k, limit: int):
    """Position after ``k`` steps of speed ``v`` reflecting inside ``[0, limit]``."""
    if limit <= 0:
        return np.zeros_like(np.asarray(k))
    m = np.mod(p0 + v * np.asarray(k), 2 * limit)
    return np.where(m <= limit, m, 2 * limit - m)


def shape_mask(shape: str, size: int) -> np.ndarray:
    yy, xx = np.mgrid[:size, :size]
    c = (size - 1) / 2
    if shape == "square":
        return np.ones((size, size), bool)
    if shape == "disc":
        return (yy - c) ** 2 + (xx - c) ** 2 <= (size / 2) ** 2
    if shape == "cross":
        w = max(1, size // 4)
        return (np.abs(yy - c) < w) | (np.abs(xx - c) < w)
    if shape == "triangle":
        return np.abs(xx - c) <= yy / 2 + 0.5
    raise ValueError(f"unknown sprite shape {shape!r}")


@dataclass
class Sprite:
    shape: str
    color: tuple
    x0: int
    y0: int
    vx: int
    vy: int
    first: int = 0
    last: int = 10**9
    # reference frame for the trajectory (joint anomalies are centred on their span)
    origin: int = 0

    def position(self, k, canvas: int, size: int):
        t = np.asarray(k) - self.origin
        return (bounce(self.x0, self.vx, t, canvas - size),
                bounce(self.y0, self.vy, t, canvas - size))

    def present(self, k: int) -> bool:
        return self.first <= k <= self.last


def background(cfg: SyntheticSceneConfig) -> np.ndarray:
    rng = np.random.default_rng([cfg.seed, 1])
    n = cfg.canvas
    blocks = rng.integers(-12, 13, size=(n // 4 + 1, n // 4 + 1))
    texture = np.kron(blocks, np.ones((4, 4), dtype=np.int64))[:n, :n]
    bg = np.empty((n, n, 3), np.int64)
    bg[:] = (100, 100, 100)
    top, bottom = cfg.band
    bg[top:bottom] = (95, 120, 55)
    return np.clip(bg + texture[..., None], 0, 255).astype(np.uint8)


def scene_sprites(cfg: SyntheticSceneConfig, split: str, video: int) -> list[Sprite]:
    rng = np.random.default_rng([cfg.seed, 0 if split == "train" else 1, video])
    lanes = cfg.lanes()
    lane_order = rng.permutation(len(lanes))
    limit = cfg.canvas - cfg.sprite_size
    speeds = [s for s in range(-cfg.max_speed, cfg.max_speed + 1) if s != 0]
    sprites = []
    for i in range(cfg.sprite_count):
        sprites.append(Sprite(
            shape=cfg.normal_shapes[rng.integers(len(cfg.normal_shapes))],
            color=cfg.normal_colors[rng.integers(len(cfg.normal_colors))],
            x0=int(rng.integers(0, limit + 1)),
            y0=lanes[lane_order[i]],
            vx=int(rng.choice(speeds)),
            vy=0,
        ))
    if split == "train":
        return sprites
    free_lane = lanes[lane_order[cfg.sprite_count]]
    top, bottom = cfg.band
    for a in cfg.scripts():
        if a.video != video:
            continue
        shape = cfg.normal_shapes[rng.integers(len(cfg.normal_shapes))]
        color = cfg.normal_colors[rng.integers(len(cfg.normal_colors))]
        x0 = int(rng.integers(0, limit + 1))
        sign = int(rng.choice([-1, 1]))
        if a.kind == "appearance_only":
            s = Sprite(ANOMALY_SHAPE, ANOMALY_COLOR, x0, free_lane, sign * cfg.max_speed, 0,
                       origin=a.start)
        elif a.kind == "motion_only":
            s = Sprite(shape, color, x0, free_lane, sign * cfg.anomaly_speed, 0, origin=a.start)
        else:
            # crosses the band at its temporal midpoint
            mid = (a.start + a.end) // 2
            s = Sprite(shape, color, x0, top, 0, sign * cfg.max_speed, origin=mid)
        s.first, s.last = a.start, a.end
        sprites.append(s)
    return sprites


class RenderedVideo(NamedTuple):
    frames: np.ndarray  # [n, H, W, 3] uint8
    flow: np.ndarray  # [n - 1, 2, H, W] float32, frame k -> k+1
    labels: np.ndarray  # [n] int
    sprite_mask: np.ndarray  # [n, H, W] bool, any sprite pixel
    moving_mask: np.ndarray  # [n, H, W] bool, sprite pixels displaced toward frame k+1


def render_video(cfg: SyntheticSceneConfig, split: str, video: int) -> RenderedVideo:
    n, size, canvas = cfg.frames_per_video, cfg.sprite_size, cfg.canvas
    bg = background(cfg)
    sprites = scene_sprites(cfg, split, video)
    masks = [shape_mask(s.shape, size) for s in sprites]
    frames = np.repeat(bg[None], n, axis=0)
    flow = np.zeros((n, 2, canvas, canvas), np.float32)
    sprite_mask = np.zeros((n, canvas, canvas), bool)
    for k in range(n):
        for s, m in zip(sprites, masks):
            if not s.present(k):
                continue
            x, y = (int(p) for p in s.position(k, canvas, size))
            x1, y1 = (int(p) for p in s.position(k + 1, canvas, size))
            region = (slice(y, y + size), slice(x, x + size))
            frames[k][region][m] = s.color
            sprite_mask[k][region] |= m
            flow[k, 0][region][m] = x1 - x
            flow[k, 1][region][m] = y1 - y
    labels = np.zeros(n, np.int64)
    if split == "test":
        for a in cfg.scripts():
            if a.video == video:
                labels[a.start:a.end + 1] = 1
    moving = sprite_mask & (np.abs(flow).sum(1) > 0)
    return RenderedVideo(frames, flow[:-1], labels, sprite_mask, moving)


def video_id(split: str, video: int) -> str:
    return f"{split}_{video:03d}"


class SyntheticScene(NamedTuple):
    train: VideoDataset
    test: VideoDataset


def generate_synthetic_scene(cfg: SyntheticSceneConfig, root, clip_length: int = 4,
                             stride: int = 1) -> SyntheticScene:
    """Write a train/test scene under ``root`` and return both splits.

    Regenerating with the same config produces byte-identical files.
    """
    cfg.validate()
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    for split, count in (("train", cfg.train_videos), ("test", cfg.test_videos)):
        for v in range(count):
            r = render_video(cfg, split, v)
            vdir = root / split / video_id(split, v)
            (vdir / "flow").mkdir(parents=True, exist_ok=True)
            for k, frame in enumerate(r.frames):
                Image.fromarray(frame).save(vdir / f"{k:06d}.png", optimize=False)
            for k, f in enumerate(r.flow):
                write_flo(vdir / "flow" / f"{k:06d}.flo", f)
            if split == "test":
                (vdir / "labels.txt").write_text("".join(f"{int(l)}\n" for l in r.labels))
    (root / "scene.yaml").write_text(yaml.safe_dump(cfg.to_dict(), sort_keys=True))
    return SyntheticScene(
        load_dataset(root, "train", clip_length, stride, resolution=cfg.canvas),
        load_dataset(root, "test", clip_length, stride, resolution=cfg.canvas),
    )


def load_scene_config(root) -> SyntheticSceneConfig:
    d = yaml.safe_load((Path(root) / "scene.yaml").read_text())
    return SyntheticSceneConfig(**d)


def warp_forward(frame: np.ndarray, flow: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Forward-warp ``[H, W, 3]`` by integer ``[2, H, W]`` flow.

    Returns the warped frame and a mask of disoccluded pixels (moved away
    from and not covered by anything), whose content flow cannot predict.
    """
    h, w = frame.shape[:2]
    out = frame.copy()
    ys, xs = np.nonzero(np.abs(flow).sum(0) > 0)
    dx = np.rint(flow[0, ys, xs]).astype(int)
    dy = np.rint(flow[1, ys, xs]).astype(int)
    tx, ty = xs + dx, ys + dy
    ok = (tx >= 0) & (tx < w) & (ty >= 0) & (ty < h)
    written = np.zeros((h, w), bool)
    written[ty[ok], tx[ok]] = True
    out[ty[ok], tx[ok]] = frame[ys[ok], xs[ok]]
    vacated = np.zeros((h, w), bool)
    vacated[ys, xs] = True
    return out, vacated & ~written
