"""Choice-query interaction: sentence-level (coarse) and token-level (fine) fusion."""
from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn

from .errors import InvalidArgument


@dataclass
class FusionOutput:
    F1: torch.Tensor | None  # (B, C, N)
    F2: torch.Tensor | None  # (B, C, N)
    R: torch.Tensor | None  # (B, N, L)
    fused: torch.Tensor  # (B, C, N)


def token_mask(lengths, L: int, device=None) -> torch.Tensor:
    """(B, L) bool mask, True on real tokens."""
    lengths = torch.as_tensor(list(lengths), device=device)
    return torch.arange(L, device=device)[None, :] < lengths[:, None]


def masked_max(q: torch.Tensor, mask: torch.Tensor | None) -> torch.Tensor:
    """Channel-wise max over the token axis of ``q`` (B, C, L)."""
    if mask is not None:
        q = q.masked_fill(~mask[:, None, :], float("-inf"))
    return q.max(dim=-1).values


def coarse_fuse(q: torch.Tensor, fa: torch.Tensor, proj: nn.Module, mask=None, eps: float = 1e-6) -> torch.Tensor:
    g = masked_max(q, mask)
    return F.normalize(g.unsqueeze(-1) * proj(fa), p=2, dim=1, eps=eps)


def fine_fuse(q, fa, proj_a, proj_q, mask=None, softmax: bool = False, normalize: bool = True, eps: float = 1e-6):
    a = proj_a(fa)  # (B, C, N)
    qp = proj_q(q)  # (B, C, L)
    R = torch.bmm(a.transpose(1, 2), qp)  # (B, N, L)
    if softmax:
        if mask is not None:
            R = R.masked_fill(~mask[:, None, :], float("-inf"))
        R = R.softmax(dim=-1)
    elif mask is not None:
        R = R * mask[:, None, :].to(R.dtype)
    F2 = a * torch.bmm(qp, R.transpose(1, 2))
    if normalize:
        # the raw triple product is orders of magnitude below F1 at init
        F2 = F.normalize(F2, p=2, dim=1, eps=eps)
    return R, F2


def fuse(F1: torch.Tensor, F2: torch.Tensor) -> torch.Tensor:
    if F1.shape != F2.shape:
        raise InvalidArgument(f"cannot fuse {tuple(F1.shape)} with {tuple(F2.shape)}")
    return F1 + F2


class ChoiceQueryInteractor(nn.Module):
    """Produces the query-aware candidate features ``F1 + F2``.

    Either branch can be switched off for ablations; at least one must stay on.
    """

    def __init__(self, C: int, C_choice: int, use_f1=True, use_f2=True, eps=1e-6, r_softmax=False):
        super().__init__()
        if not (use_f1 or use_f2):
            raise InvalidArgument("at least one of F1/F2 must be enabled")
        self.use_f1, self.use_f2 = use_f1, use_f2
        self.eps = eps
        self.r_softmax = r_softmax
        if use_f1:
            self.proj_coarse = nn.Conv1d(C_choice, C, 1)
        if use_f2:
            self.proj_fine = nn.Conv1d(C_choice, C, 1)
            self.proj_query = nn.Conv1d(C, C, 1)

    def forward(self, q: torch.Tensor, fa: torch.Tensor, mask: torch.Tensor | None = None) -> FusionOutput:
        F1 = coarse_fuse(q, fa, self.proj_coarse, mask, self.eps) if self.use_f1 else None
        R = F2 = None
        if self.use_f2:
            R, F2 = fine_fuse(q, fa, self.proj_fine, self.proj_query, mask, self.r_softmax, eps=self.eps)
        if F1 is not None and F2 is not None:
            fused = fuse(F1, F2)
        else:
            fused = F1 if F1 is not None else F2
        return FusionOutput(F1, F2, R, fused)
