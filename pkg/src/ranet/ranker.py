"""Answer ranker, scaled-IoU supervision and the training objective."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .candidate_map import CandidateMap, TimeSpan, candidate_to_span
from .errors import InvalidArgument


@dataclass
class LabelMap:
    g: np.ndarray
    theta: np.ndarray
    theta_min: float
    theta_max: float


@dataclass(frozen=True)
class Prediction:
    span: TimeSpan
    score: float
    rank: int
    flat_id: int = -1

    def to_dict(self) -> dict:
        return {"t_s": self.span.t_s, "t_e": self.span.t_e, "score": self.score}


class AnswerRanker(nn.Module):
    """``sigmoid(conv1x1([relation ; query-aware]))`` per candidate."""

    def __init__(self, C_in: int, bias_init: float = -3.0):
        super().__init__()
        self.conv = nn.Conv1d(C_in, 1, 1)
        # most candidates carry a zero label; start from a low prior score
        nn.init.constant_(self.conv.bias, bias_init)

    def logits(self, fused: torch.Tensor, related: torch.Tensor | None = None) -> torch.Tensor:
        if related is not None:
            if related.shape != fused.shape:
                raise InvalidArgument(f"shape mismatch {tuple(related.shape)} vs {tuple(fused.shape)}")
            fused = torch.cat([related, fused], dim=1)
        return self.conv(fused).squeeze(1)

    def forward(self, fused, related=None) -> torch.Tensor:
        return torch.sigmoid(self.logits(fused, related))


def _check_thresholds(theta_min: float, theta_max: float):
    if not (0.0 <= theta_min < theta_max <= 1.0):
        raise InvalidArgument(f"need 0 <= theta_min < theta_max <= 1, got ({theta_min}, {theta_max})")


def scale_iou(theta: np.ndarray, theta_min: float, theta_max: float) -> np.ndarray:
    _check_thresholds(theta_min, theta_max)
    theta = np.asarray(theta, dtype=np.float64)
    g = (theta - theta_min) / (theta_max - theta_min)
    g = np.where(theta <= theta_min, 0.0, g)
    return np.where(theta >= theta_max, 1.0, g)


def scale_labels(theta, theta_min: float, theta_max: float) -> LabelMap:
    theta = np.asarray(theta, dtype=np.float64)
    if theta.size and (theta.min() < 0.0 or theta.max() > 1.0):
        raise InvalidArgument("IoU values must lie in [0, 1]")
    return LabelMap(scale_iou(theta, theta_min, theta_max), theta, theta_min, theta_max)


def bce_loss(p: torch.Tensor, g: torch.Tensor) -> torch.Tensor:
    """Mean binary cross-entropy of probabilities ``p`` against soft labels ``g``.

    Averages over the last axis and then over any leading batch axes.
    """
    if p.shape != g.shape:
        raise InvalidArgument(f"length mismatch {tuple(p.shape)} vs {tuple(g.shape)}")
    return -(g * torch.log(p) + (1 - g) * torch.log1p(-p)).mean()


def bce_loss_with_logits(logits: torch.Tensor, g: torch.Tensor) -> torch.Tensor:
    """Same value as ``bce_loss(sigmoid(logits), g)``, computed stably."""
    if logits.shape != g.shape:
        raise InvalidArgument(f"length mismatch {tuple(logits.shape)} vs {tuple(g.shape)}")
    return F.binary_cross_entropy_with_logits(logits, g, reduction="mean")


def rank_choices(p, cmap: CandidateMap, duration: float, K: int) -> list[Prediction]:
    if K < 1:
        raise InvalidArgument(f"K must be >= 1, got {K}")
    p = np.asarray(p.detach().cpu() if isinstance(p, torch.Tensor) else p, dtype=np.float64)
    if p.shape != (cmap.N,):
        raise InvalidArgument(f"expected {cmap.N} scores, got {p.shape}")
    # stable sort on -p keeps smaller flat ids first among ties
    order = np.argsort(-p, kind="stable")[:K]
    return [
        Prediction(candidate_to_span(cmap, *cmap.flat_to_pair(int(k)), duration), float(p[k]), r + 1, int(k))
        for r, k in enumerate(order)
    ]
