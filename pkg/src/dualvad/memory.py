"""Prototype memory of normal patterns: cosine-softmax read and update."""
from typing import Optional

import torch
import torch.nn as nn
import torch.nn.functional as F

EPS = 1e-12


def cosine_matrix(a: torch.Tensor, b: torch.Tensor, eps: float = EPS) -> torch.Tensor:
    """Pairwise cosine similarity between rows of ``a`` [K, C] and ``b`` [N, C]."""
    denom = a.norm(dim=1, keepdim=True) * b.norm(dim=1, keepdim=True).T
    return (a @ b.T) / denom.clamp_min(eps)


def to_queries(y: torch.Tensor) -> torch.Tensor:
    """Flatten a ``[B, C, H, W]`` feature map into ``[B, H*W, C]`` queries."""
    b, c = y.shape[:2]
    return y.reshape(b, c, -1).transpose(1, 2)


def read(y: torch.Tensor, items: torch.Tensor):
    """Re-express each query as a softmax(cosine)-weighted sum of memory items.

    Returns ``y_hat`` in the layout of ``y`` and read weights ``[B, H*W, N]``.
    """
    if y.shape[1] != items.shape[1]:
        raise ValueError(f"query dim {y.shape[1]} != memory item dim {items.shape[1]}")
    q = to_queries(y)
    b, k, c = q.shape
    w = F.softmax(cosine_matrix(q.reshape(b * k, c), items), dim=1)
    y_hat = (w @ items).reshape(b, k, c).transpose(1, 2).reshape(y.shape)
    return y_hat, w.reshape(b, k, -1)


def update(items: torch.Tensor, queries: torch.Tensor) -> torch.Tensor:
    """Move each item toward its softmax(cosine)-weighted query mix, then renormalize.

    ``queries`` is ``[K, C]``. Items whose pre-normalization sum vanishes are
    left unchanged.
    """
    v = F.softmax(cosine_matrix(items, queries), dim=1)
    raw = items + v @ queries
    norm = raw.norm(dim=1, keepdim=True)
    ok = norm > EPS
    return torch.where(ok, raw / norm.clamp_min(EPS), items)


def distance(queries: torch.Tensor, items: torch.Tensor, reduce: str = "mean") -> torch.Tensor:
    """L2 distance from each query to its closest item, reduced over queries."""
    if items.numel() == 0:
        raise ValueError("memory bank is empty")
    # exact pairwise differences; the matmul shortcut loses precision near zero distance
    dists = torch.cdist(queries, items, compute_mode="donot_use_mm_for_euclid_dist")
    nearest = dists.min(dim=1).values
    if reduce == "mean":
        return nearest.mean()
    if reduce == "max":
        return nearest.max()
    raise ValueError(f"unknown reduction {reduce!r}")


def separateness_loss(w: torch.Tensor) -> torch.Tensor:
    """Mean entropy (nats) of the per-query read weight rows."""
    w = w.reshape(-1, w.shape[-1])
    return -torch.special.xlogy(w, w).sum(dim=1).mean()


def compactness_loss(y: torch.Tensor, y_hat: torch.Tensor, delta: float = 0.1,
                     negate: bool = False) -> torch.Tensor:
    """Hinge on the per-query cosine between reads and queries.

    Default penalizes ``|cos| - delta`` above zero. ``negate=True`` flips the
    hinge to penalize dissimilarity instead: ``(1 - |cos|) - delta``.
    """
    if y.shape != y_hat.shape:
        raise ValueError(f"shape mismatch {tuple(y.shape)} vs {tuple(y_hat.shape)}")
    q = to_queries(y).reshape(-1, y.shape[1])
    r = to_queries(y_hat).reshape(-1, y.shape[1])
    cos = (q * r).sum(1) / (q.norm(dim=1) * r.norm(dim=1)).clamp_min(EPS)
    sim = cos.abs()
    if negate:
        sim = 1.0 - sim
    return F.relu(sim - delta).mean()


class MemoryBank(nn.Module):
    """``N x C`` unit-norm items stored as a buffer (updated by rule, not gradient)."""

    def __init__(self, n_items: int = 10, dim: int = 512, seed: Optional[int] = 0):
        super().__init__()
        gen = torch.Generator().manual_seed(seed) if seed is not None else None
        items = torch.randn(n_items, dim, generator=gen)
        self.register_buffer("items", F.normalize(items, dim=1))

    def read(self, y):
        return read(y, self.items)

    @torch.no_grad()
    def update(self, y: torch.Tensor):
        """Update from a feature map ``[B, C, H, W]`` or a query matrix ``[K, C]``."""
        q = y if y.ndim == 2 else to_queries(y).reshape(-1, y.shape[1])
        self.items.copy_(update(self.items, q.detach().to(self.items.dtype)))

    def distance(self, y: torch.Tensor, reduce: str = "mean") -> torch.Tensor:
        """Per-sample memory distance for a ``[B, C, H, W]`` feature map."""
        q = to_queries(y)
        return torch.stack([distance(qb, self.items, reduce) for qb in q])
