"""Losses, optimization loop, checkpoints."""
from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Union

import numpy as np
import torch

from .backbone import DualStreamPredictor, ModelOutput, ModelVariant, NetworkConfig
from .data import FLOW_SCALE, ClipTensorDataset, VideoDataset, normalize_flow
from .memory import compactness_loss, separateness_loss

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "dualvad-checkpoint/1"


@dataclass
class TrainConfig:
    lambda_int: float = 0.8
    lambda_sep: float = 3e-4
    lambda_compact: float = 1e-3
    delta: float = 0.1
    lr: float = 2e-4
    betas: tuple = (0.9, 0.999)
    batch_size: int = 8
    epochs: int = 20
    seed: int = 0
    checkpoint_every: int = 0  # steps between intermediate checkpoints; 0 disables
    max_steps: Optional[int] = None
    intensity_reduction: str = "mean"  # or "sum"
    negate_compactness: bool = False
    flow_scale: float = FLOW_SCALE

    def __post_init__(self):
        self.betas = tuple(self.betas)
        if min(self.lambda_int, self.lambda_sep, self.lambda_compact) < 0:
            raise ValueError("loss weights must be non-negative")
        if self.lr <= 0:
            raise ValueError("learning rate must be positive")
        if self.intensity_reduction not in ("mean", "sum"):
            raise ValueError("intensity_reduction must be 'mean' or 'sum'")

    def to_dict(self):
        d = asdict(self)
        d["betas"] = list(self.betas)
        return d


@dataclass
class LossBreakdown:
    intensity: float
    separateness: float
    compactness: float
    total: float

    def as_record(self, step: int, lr: float) -> dict:
        return dict(step=step, intensity=self.intensity, separateness=self.separateness,
                    compactness=self.compactness, total=self.total, lr=lr)


class TrainingDiverged(RuntimeError):
    def __init__(self, step: int, breakdown: LossBreakdown):
        super().__init__(f"non-finite loss at step {step}: {asdict(breakdown)}")
        self.step = step
        self.breakdown = breakdown


def intensity_loss(pred: torch.Tensor, target: torch.Tensor, reduction: str = "mean") -> torch.Tensor:
    """Squared L2 distance between predicted and true frames, averaged over pixels by default."""
    if pred.shape != target.shape:
        raise ValueError(f"prediction {tuple(pred.shape)} and target {tuple(target.shape)} differ")
    sq = (pred - target).square()
    return sq.mean() if reduction == "mean" else sq.sum()


def total_loss(intensity, separateness, compactness, cfg: TrainConfig):
    return (cfg.lambda_int * intensity + cfg.lambda_sep * separateness
            + cfg.lambda_compact * compactness)


def compute_losses(out: ModelOutput, target: torch.Tensor, cfg: TrainConfig):
    """Return the differentiable total and a float breakdown."""
    l_int = intensity_loss(out.prediction, target, cfg.intensity_reduction)
    if out.weights is not None:
        l_sep = separateness_loss(out.weights)
        l_com = compactness_loss(out.query, out.read, cfg.delta, cfg.negate_compactness)
    else:
        l_sep = l_com = torch.zeros((), dtype=l_int.dtype)
    total = total_loss(l_int, l_sep, l_com, cfg)
    parts = LossBreakdown(l_int.item(), l_sep.item(), l_com.item(), total.item())
    return total, parts


def model_inputs(frames, flow, flow_scale: float = FLOW_SCALE):
    return frames, normalize_flow(flow, flow_scale)


def save_checkpoint(path, model: DualStreamPredictor, optimizer=None, step: int = 0,
                    train_cfg: Optional[TrainConfig] = None):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save({
        "format": CHECKPOINT_FORMAT,
        "network_config": model.cfg.to_dict(),
        "variant": model.variant.to_dict(),
        "state_dict": model.state_dict(),
        "optimizer": None if optimizer is None else optimizer.state_dict(),
        "step": step,
        "train_config": None if train_cfg is None else train_cfg.to_dict(),
    }, path)
    return path


def load_checkpoint(path, map_location="cpu"):
    """Rebuild the model from a checkpoint; returns ``(model, raw checkpoint dict)``."""
    ckpt = torch.load(path, map_location=map_location, weights_only=False)
    if ckpt.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path}: unsupported checkpoint format {ckpt.get('format')!r}")
    model = DualStreamPredictor(NetworkConfig(**ckpt["network_config"]),
                                ModelVariant(**ckpt["variant"]))
    model.load_state_dict(ckpt["state_dict"])
    return model, ckpt


def epoch_order(n: int, seed: int, epoch: int) -> np.ndarray:
    return np.random.default_rng([seed, epoch]).permutation(n)


def collate(items):
    frames, flow, target, label, vpos, fidx = zip(*items)
    return (torch.stack(frames), torch.stack(flow), torch.stack(target),
            torch.tensor(label), torch.tensor(vpos), torch.tensor(fidx))


@dataclass
class TrainResult:
    model: DualStreamPredictor
    checkpoint: Optional[Path]
    history: list = field(default_factory=list)


def train(data: Union[VideoDataset, ClipTensorDataset], net_cfg: NetworkConfig,
          cfg: TrainConfig, variant: ModelVariant, out_dir=None,
          resume=None, log_path=None) -> TrainResult:
    """Fit the predictor on normal clips.

    Each step runs forward, the weighted loss, an Adam step, then the memory
    update with the step's (detached) queries. Batch order is a function of
    ``(seed, epoch)`` so a resumed run replays the same stream.
    """
    clips = data if isinstance(data, ClipTensorDataset) else ClipTensorDataset(data)
    if len(clips) == 0:
        raise ValueError("training set is empty")
    torch.manual_seed(cfg.seed)
    model = DualStreamPredictor(net_cfg, variant)
    opt = torch.optim.Adam(model.parameters(), lr=cfg.lr, betas=cfg.betas)
    step = 0
    if resume is not None:
        ckpt = torch.load(resume, map_location="cpu", weights_only=False)
        model.load_state_dict(ckpt["state_dict"])
        if ckpt.get("optimizer"):
            opt.load_state_dict(ckpt["optimizer"])
        step = ckpt["step"]

    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        log_path = log_path or out_dir / "train_log.jsonl"
    log_file = open(log_path, "a") if log_path is not None else None

    per_epoch = math.ceil(len(clips) / cfg.batch_size)
    total_steps = cfg.epochs * per_epoch
    if cfg.max_steps is not None:
        total_steps = min(total_steps, cfg.max_steps)
    history = []
    model.train()
    try:
        while step < total_steps:
            epoch, offset = divmod(step, per_epoch)
            order = epoch_order(len(clips), cfg.seed, epoch)
            idx = order[offset * cfg.batch_size:(offset + 1) * cfg.batch_size]
            frames, flow, target, *_ = collate([clips[i] for i in idx])
            frames, flow = model_inputs(frames, flow, cfg.flow_scale)
            out = model(frames, flow)
            loss, parts = compute_losses(out, target, cfg)
            if not math.isfinite(parts.total):
                raise TrainingDiverged(step, parts)
            opt.zero_grad(set_to_none=True)
            loss.backward()
            opt.step()
            if model.memory is not None:
                model.memory.update(out.query)
            step += 1
            record = parts.as_record(step, cfg.lr)
            history.append(record)
            if log_file is not None:
                log_file.write(json.dumps(record) + "\n")
            if out_dir is not None and cfg.checkpoint_every and step % cfg.checkpoint_every == 0:
                save_checkpoint(out_dir / f"step_{step:06d}.pt", model, opt, step, cfg)
            if step % per_epoch == 0:
                log.info("epoch %d step %d loss %.5f", step // per_epoch, step, parts.total)
    finally:
        if log_file is not None:
            log_file.close()
    final = save_checkpoint(out_dir / "final.pt", model, opt, step, cfg) if out_dir is not None else None
    model.eval()
    return TrainResult(model, final, history)
