"""Multi-choice generator: the T x T lattice of moment candidates.

A candidate ``(i, j)`` covers snippets ``i..j`` inclusive on a grid of ``T``
equal-width snippets.  Valid candidates are flattened (row-major in ``i`` then
``j``) into ids ``0..N-1``; every downstream tensor of per-candidate values is
laid out along that flat axis.
"""
from __future__ import annotations

import enum
import json
from dataclasses import dataclass

import numpy as np
import torch

from .errors import InvalidArgument

SPARSE_BUCKET = 16


class InitKind(str, enum.Enum):
    POOLING = "pooling"
    SAMPLING = "sampling"
    ADDITION = "addition"
    CONCATENATION = "concatenation"


@dataclass(frozen=True)
class TimeSpan:
    t_s: float
    t_e: float

    def __post_init__(self):
        if not (0.0 <= self.t_s < self.t_e):
            raise InvalidArgument(f"invalid span [{self.t_s}, {self.t_e}]")

    @property
    def length(self) -> float:
        return self.t_e - self.t_s


def sparse_stride(length: int) -> int:
    """Sampling stride for candidates spanning ``length`` snippets.

    Doubles for every factor of two the length exceeds the bucket size of 16.
    """
    stride = 1
    while SPARSE_BUCKET * stride < length:
        stride *= 2
    return stride


def is_sparse_valid(i: int, j: int) -> bool:
    if i > j:
        return False
    stride = sparse_stride(j - i + 1)
    return i % stride == 0 and (j + 1) % stride == 0


def default_strategy(T: int) -> str:
    return "sparse" if T > 32 else "dense"


@dataclass(frozen=True, eq=False)
class CandidateMap:
    T: int
    strategy: str
    valid: np.ndarray  # (T, T) bool
    starts: np.ndarray  # (N,) int64
    ends: np.ndarray  # (N,) int64
    index: np.ndarray  # (T, T) int64, -1 where invalid

    @property
    def N(self) -> int:
        return int(self.starts.shape[0])

    def pair_to_flat(self, i: int, j: int) -> int:
        if not (0 <= i < self.T and 0 <= j < self.T) or not self.valid[i, j]:
            raise InvalidArgument(f"({i}, {j}) is not a valid candidate for T={self.T}")
        return int(self.index[i, j])

    def flat_to_pair(self, k: int) -> tuple[int, int]:
        if not 0 <= k < self.N:
            raise InvalidArgument(f"flat id {k} out of range 0..{self.N - 1}")
        return int(self.starts[k]), int(self.ends[k])

    def pairs(self) -> list[tuple[int, int]]:
        return list(zip(self.starts.tolist(), self.ends.tolist()))

    def to_dict(self) -> dict:
        return {
            "T": self.T,
            "strategy": self.strategy,
            "valid_cells": [[i, j] for i, j in self.pairs()],
        }

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(), **kwargs)

    @classmethod
    def from_dict(cls, d: dict) -> "CandidateMap":
        return build_candidate_map(int(d["T"]), d["strategy"])


def build_candidate_map(T: int, strategy: str = "dense") -> CandidateMap:
    if not isinstance(T, (int, np.integer)) or T < 1:
        raise InvalidArgument(f"T must be a positive integer, got {T!r}")
    if strategy not in ("dense", "sparse"):
        raise InvalidArgument(f"unknown strategy {strategy!r}")
    T = int(T)
    valid = np.zeros((T, T), dtype=bool)
    for i in range(T):
        for j in range(i, T):
            valid[i, j] = strategy == "dense" or is_sparse_valid(i, j)
    starts, ends = np.nonzero(valid)
    index = np.full((T, T), -1, dtype=np.int64)
    index[starts, ends] = np.arange(starts.shape[0])
    valid.setflags(write=False)
    index.setflags(write=False)
    return CandidateMap(T, strategy, valid, starts.astype(np.int64), ends.astype(np.int64), index)


def candidate_to_span(cmap: CandidateMap, i: int, j: int, duration: float) -> TimeSpan:
    if duration <= 0:
        raise InvalidArgument(f"duration must be positive, got {duration}")
    cmap.pair_to_flat(i, j)
    unit = duration / cmap.T
    return TimeSpan(i * unit, (j + 1) * unit)


def candidate_spans(cmap: CandidateMap, duration: float) -> np.ndarray:
    """(N, 2) array of [t_s, t_e] in seconds for every valid candidate."""
    if duration <= 0:
        raise InvalidArgument(f"duration must be positive, got {duration}")
    unit = duration / cmap.T
    return np.stack([cmap.starts * unit, (cmap.ends + 1) * unit], axis=1).astype(np.float64)


def init_choice_features(v: torch.Tensor, cmap: CandidateMap, psi: InitKind | str) -> torch.Tensor:
    """Build per-candidate features from snippet features.

    ``v`` has shape ``(..., C, T)``; the result has shape ``(..., C', N)``
    with ``C' = 2C`` for concatenation and ``C`` otherwise.
    """
    psi = InitKind(psi)
    if v.dim() < 2 or v.shape[-1] != cmap.T:
        raise InvalidArgument(f"expected (..., C, {cmap.T}) features, got {tuple(v.shape)}")
    starts = torch.as_tensor(cmap.starts, device=v.device)
    ends = torch.as_tensor(cmap.ends, device=v.device)
    if psi is InitKind.CONCATENATION:
        return torch.cat([v[..., starts], v[..., ends]], dim=-2)
    if psi is InitKind.ADDITION:
        return v[..., starts] + v[..., ends]
    if psi is InitKind.SAMPLING:
        zero = torch.zeros_like(v[..., :1])
        csum = torch.cat([zero, v.cumsum(dim=-1)], dim=-1)
        lengths = (ends - starts + 1).to(v.dtype)
        return (csum[..., ends + 1] - csum[..., starts]) / lengths
    # pooling: running max over growing windows, one slice per window length
    lengths = ends - starts
    running = v
    by_length = [running]
    for d in range(1, int(lengths.max()) + 1):
        running = torch.maximum(running[..., :-1], v[..., d:])
        by_length.append(running)
    pieces, order = [], []
    for d, window in enumerate(by_length):
        sel = torch.nonzero(lengths == d).flatten()
        if sel.numel():
            pieces.append(window[..., starts[sel]])
            order.append(sel)
    inverse = torch.argsort(torch.cat(order))
    return torch.cat(pieces, dim=-1)[..., inverse]
