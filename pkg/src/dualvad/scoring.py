"""Per-frame regularity scores and frame-level ROC AUC."""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import torch
from PIL import Image

from .data import ClipTensorDataset
from .training import collate, model_inputs

log = logging.getLogger(__name__)

PSNR_CEILING = 100.0
CSV_FIELDS = ("video_id", "frame_index", "psnr", "mem_distance", "regularity", "label")


def psnr(pred, target, ceiling: float = PSNR_CEILING):
    """PSNR in dB of frames in [-1, 1], computed on their [0, 1] rescaling.

    Leading dimensions beyond the last three are treated as a batch.
    """
    pred, target = torch.as_tensor(pred), torch.as_tensor(target)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch {tuple(pred.shape)} vs {tuple(target.shape)}")
    mse = ((pred - target) / 2).square().flatten(-3).mean(-1)
    out = 10 * torch.log10(1.0 / mse.clamp_min(1e-300))
    return out.clamp(max=ceiling)


def memory_distance(queries, items, reduce: str = "mean") -> float:
    from .memory import distance
    return float(distance(torch.as_tensor(queries), torch.as_tensor(items), reduce))


def minmax(x) -> np.ndarray:
    """Min-max normalize to [0, 1]; a constant series maps to all zeros."""
    x = np.asarray(x, dtype=np.float64)
    lo, hi = x.min(), x.max()
    if hi - lo <= 0:
        return np.zeros_like(x)
    return (x - lo) / (hi - lo)


def regularity_score(psnr_series, dist_series=None, tau: float = 0.7) -> np.ndarray:
    """Blend normalized PSNR (high is regular) and memory distance (high is irregular).

    Without a distance series (memory disabled) the score is the normalized
    PSNR alone.
    """
    p = np.asarray(psnr_series, dtype=np.float64)
    if dist_series is None:
        return np.clip(minmax(p), 0.0, 1.0)
    d = np.asarray(dist_series, dtype=np.float64)
    if p.shape != d.shape:
        raise ValueError(f"psnr series length {p.shape} != distance series length {d.shape}")
    r = 1.0 - tau * (1.0 - minmax(p)) - (1.0 - tau) * minmax(d)
    return np.clip(r, 0.0, 1.0)


def roc_auc(scores, labels) -> float:
    """Trapezoidal area under the ROC curve; tied scores form a single threshold."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels).astype(bool)
    if s.shape != y.shape:
        raise ValueError("scores and labels differ in length")
    n_pos, n_neg = int(y.sum()), int((~y).sum())
    if n_pos == 0:
        raise ValueError("labels contain no positive (anomalous) frames")
    if n_neg == 0:
        raise ValueError("labels contain no negative (normal) frames")
    order = np.argsort(-s, kind="mergesort")
    s, y = s[order], y[order]
    # cut only between distinct scores
    cuts = np.r_[np.nonzero(np.diff(s))[0], len(s) - 1]
    tps = np.cumsum(y)[cuts]
    fps = np.cumsum(~y)[cuts]
    tpr = np.r_[0.0, tps / n_pos]
    fpr = np.r_[0.0, fps / n_neg]
    return float(np.trapezoid(tpr, fpr))


@dataclass
class ScoreSeries:
    video_id: str
    frame_index: list = field(default_factory=list)
    psnr: list = field(default_factory=list)
    memory_distance: Optional[list] = None
    regularity: list = field(default_factory=list)
    labels: Optional[list] = None

    def rows(self):
        dist = self.memory_distance or [float("nan")] * len(self.psnr)
        labels = self.labels or [""] * len(self.psnr)
        for row in zip(self.frame_index, self.psnr, dist, self.regularity, labels):
            yield (self.video_id, *row)


@dataclass
class EvalResult:
    series: list
    auc: Optional[float]


def anomaly_scores(series: Sequence[ScoreSeries]):
    """Concatenate ``1 - R_t`` and labels over videos (R is already per-video normalized)."""
    scores = np.concatenate([1.0 - np.asarray(s.regularity) for s in series])
    labels = np.concatenate([np.asarray(s.labels) for s in series])
    return scores, labels


def overall_auc(series: Sequence[ScoreSeries]) -> Optional[float]:
    if any(s.labels is None for s in series):
        log.warning("labels missing for some videos; AUC skipped")
        return None
    scores, labels = anomaly_scores(series)
    return roc_auc(scores, labels)


def rescore(series: Sequence[ScoreSeries], tau: float) -> None:
    for s in series:
        s.regularity = regularity_score(s.psnr, s.memory_distance, tau).tolist()


@torch.no_grad()
def predict_video_stats(model, clips: ClipTensorDataset, batch_size: int = 16,
                        flow_scale: float = 20.0, distance_reduce: str = "mean",
                        error_map_dir=None):
    """Run the frozen model over every clip; collect per-frame PSNR and memory distance."""
    model.eval()
    stats: dict[int, dict] = {}
    for start in range(0, len(clips), batch_size):
        frames, flow, target, label, vpos, fidx = collate(
            [clips[i] for i in range(start, min(start + batch_size, len(clips)))])
        out = model(*model_inputs(frames, flow, flow_scale))
        p = psnr(out.prediction, target)
        d = model.memory.distance(out.query, distance_reduce) if model.memory is not None else None
        for j in range(len(p)):
            vi = int(vpos[j])
            rec = stats.setdefault(vi, dict(frame_index=[], psnr=[], dist=[], labels=[]))
            rec["frame_index"].append(int(fidx[j]))
            rec["psnr"].append(float(p[j]))
            rec["dist"].append(None if d is None else float(d[j]))
            rec["labels"].append(int(label[j]))
            if error_map_dir is not None:
                vid = clips.videos[vi].video_id
                write_error_map(Path(error_map_dir) / vid / f"err_{int(fidx[j]):06d}.png",
                                out.prediction[j], target[j])
    return stats


def write_error_map(path: Path, pred: torch.Tensor, target: torch.Tensor):
    """Grayscale |pred - truth| averaged over channels, on the [0, 1] pixel scale."""
    err = ((pred - target).abs() / 2).mean(0).clamp(0, 1)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray((err.numpy() * 255).round().astype(np.uint8), mode="L").save(path)


def evaluate(model, clips: ClipTensorDataset, out_dir=None, tau: float = 0.7,
             distance_reduce: str = "mean", error_maps: bool = False,
             flow_scale: float = 20.0, batch_size: int = 16) -> EvalResult:
    """Score every test frame and compute the frame-level AUC when labels exist."""
    err_dir = Path(out_dir) / "error_maps" if out_dir is not None and error_maps else None
    stats = predict_video_stats(model, clips, batch_size, flow_scale, distance_reduce, err_dir)
    series = []
    for vi in sorted(stats):
        rec = stats[vi]
        dist = None if rec["dist"][0] is None else rec["dist"]
        labels = None if -1 in rec["labels"] else rec["labels"]
        series.append(ScoreSeries(
            video_id=clips.videos[vi].video_id,
            frame_index=rec["frame_index"],
            psnr=rec["psnr"],
            memory_distance=dist,
            regularity=regularity_score(rec["psnr"], dist, tau).tolist(),
            labels=labels,
        ))
    auc = overall_auc(series)
    if out_dir is not None:
        write_scores_csv(Path(out_dir) / "scores.csv", series)
    return EvalResult(series, auc)


def write_scores_csv(path, series: Sequence[ScoreSeries]):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(CSV_FIELDS)
        for s in series:
            for row in s.rows():
                w.writerow([row[0], row[1], repr(row[2]), repr(row[3]), repr(row[4]), row[5]])


def read_scores_csv(path) -> list[ScoreSeries]:
    by_video: dict[str, ScoreSeries] = {}
    with open(path, newline="") as f:
        for row in csv.DictReader(f):
            s = by_video.setdefault(row["video_id"], ScoreSeries(row["video_id"], memory_distance=[],
                                                                 labels=[]))
            s.frame_index.append(int(row["frame_index"]))
            s.psnr.append(float(row["psnr"]))
            s.memory_distance.append(float(row["mem_distance"]))
            s.regularity.append(float(row["regularity"]))
            s.labels.append(None if row["label"] == "" else int(row["label"]))
    for s in by_video.values():
        if any(np.isnan(s.memory_distance)):
            s.memory_distance = None
        if any(l is None for l in s.labels):
            s.labels = None
    return list(by_video.values())
