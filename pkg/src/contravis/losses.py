"""Contrastive losses and their similarity kernels.

A batch of 2b output vectors is arranged so that rows (2t, 2t+1) are the two
views of source image t; every row is one directed anchor, its positive
partner is the row with index i XOR 1, and both losses average the per-anchor
terms over all 2b anchors. The sum in each denominator runs over all k != i,
including the positive partner.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

LOSS_KINDS = ("infonce_cosine", "cauchy")


@dataclass
class LossConfig:
    kind: str = "cauchy"
    temperature: float = 0.5

    def __post_init__(self) -> None:
        if self.kind not in LOSS_KINDS:
            raise ValueError(f"unknown loss kind {self.kind!r}, expected one of {LOSS_KINDS}")
        if self.temperature <= 0:
            raise ValueError(f"temperature must be positive, got {self.temperature}")


def cosine_similarity(x, y) -> float:
    """x.y / (|x| |y|); raises on zero vectors."""
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    nx = np.linalg.norm(x)
    ny = np.linalg.norm(y)
    if nx == 0.0 or ny == 0.0:
        raise ValueError("cosine similarity is undefined for a zero vector")
    return float(np.clip(np.dot(x, y) / (nx * ny), -1.0, 1.0))


def cauchy_similarity(x, y) -> float:
    """Heavy-tailed kernel 1 / (1 + |x - y|^2); equals 1 iff x == y."""
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    d2 = float(np.sum((x - y) ** 2))
    return 1.0 / (1.0 + d2)


def _as_tensor(z) -> torch.Tensor:
    if isinstance(z, torch.Tensor):
        t = z
    else:
        t = torch.as_tensor(np.asarray(z))
    if t.ndim != 2:
        raise ValueError(f"batch must be 2-D (2b, dim), got shape {tuple(t.shape)}")
    if t.shape[0] < 2 or t.shape[0] % 2 != 0:
        raise ValueError(f"batch must contain an even number >= 2 of vectors, got {t.shape[0]}")
    if not t.is_floating_point():
        t = t.double()
    return t


def _partner_index(n: int, device) -> torch.Tensor:
    idx = torch.arange(n, device=device)
    return idx ^ 1


def infonce_loss(z, temperature: float = 0.5) -> torch.Tensor:
    """InfoNCE with cosine similarity, averaged over all 2b directed positive pairs.

    Computed with log-sum-exp max subtraction for stability. Scale-free in z.
    """
    z = _as_tensor(z)
    if temperature <= 0:
        raise ValueError(f"temperature must be positive, got {temperature}")
    norms = torch.linalg.vector_norm(z, dim=1, keepdim=True)
    if bool((norms == 0).any()):
        raise ValueError("zero vector in batch; cosine similarity undefined")
    zn = z / norms
    logits = (zn @ zn.T) / temperature
    n = z.shape[0]
    eye = torch.eye(n, dtype=torch.bool, device=z.device)
    neg_inf = torch.finfo(logits.dtype).min
    masked = logits.masked_fill(eye, neg_inf)
    log_denom = torch.logsumexp(masked, dim=1)
    pos = logits[torch.arange(n, device=z.device), _partner_index(n, z.device)]
    return (log_denom - pos).mean()


def cauchy_infonce_loss(z) -> torch.Tensor:
    """Contrastive loss with the Cauchy kernel, averaged over all 2b directed pairs.

    Operates on raw (unnormalized) vectors of any dimension; invariant to
    global translation and rotation of the batch, not to scaling.
    """
    z = _as_tensor(z)
    sq = (z * z).sum(dim=1)
    d2 = (sq[:, None] + sq[None, :] - 2.0 * (z @ z.T)).clamp_min(0.0)
    n = z.shape[0]
    eye = torch.eye(n, dtype=torch.bool, device=z.device)
    # Repulsion in log space: the kernel is bounded in (0, 1], so log-sum-exp
    # needs no rescaling, and the single-pair case cancels exactly.
    log_q = (-torch.log1p(d2)).masked_fill(eye, torch.finfo(d2.dtype).min)
    log_denom = torch.logsumexp(log_q, dim=1)
    pos_d2 = d2[torch.arange(n, device=z.device), _partner_index(n, z.device)]
    attract = torch.log1p(pos_d2)
    return (attract + log_denom).mean()


def contrastive_loss(z, cfg: LossConfig) -> torch.Tensor:
    if cfg.kind == "infonce_cosine":
        return infonce_loss(z, cfg.temperature)
    return cauchy_infonce_loss(z)
