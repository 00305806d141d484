"""Criss-cross relation graph over moment candidates and graph attention on it."""
from __future__ import annotations

import functools
import math
from collections import Counter
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .candidate_map import CandidateMap


@dataclass(eq=False)
class Adjacency:
    """Candidates sharing a start or an end index, self included.

    ``neighbors[n]`` is sorted.  ``index``/``mask`` are the same lists padded
    to the maximum degree, for batched gathers.
    """

    neighbors: tuple[tuple[int, ...], ...]
    index: torch.Tensor  # (N, D) long
    mask: torch.Tensor  # (N, D) bool

    @property
    def N(self) -> int:
        return len(self.neighbors)

    @property
    def edge_count(self) -> int:
        return sum(len(n) for n in self.neighbors)

    def degrees(self) -> list[int]:
        return [len(n) for n in self.neighbors]

    def degree_histogram(self) -> dict[int, int]:
        return dict(sorted(Counter(self.degrees()).items()))

    def to_dict(self) -> dict[str, list[int]]:
        return {str(n): list(nb) for n, nb in enumerate(self.neighbors)}

    def dense(self) -> np.ndarray:
        A = np.zeros((self.N, self.N), dtype=bool)
        for n, nb in enumerate(self.neighbors):
            A[n, list(nb)] = True
        return A

    @functools.cached_property
    def dense_mask(self) -> torch.Tensor:
        return torch.as_tensor(self.dense())

    def permuted(self, perm) -> "Adjacency":
        """Relabel nodes so that new node ``k`` is old node ``perm[k]``."""
        perm = list(perm)
        inv = {old: new for new, old in enumerate(perm)}
        return _from_lists([sorted(inv[m] for m in self.neighbors[old]) for old in perm])


def _from_lists(lists) -> Adjacency:
    D = max(len(nb) for nb in lists)
    index = torch.zeros(len(lists), D, dtype=torch.long)
    mask = torch.zeros(len(lists), D, dtype=torch.bool)
    for n, nb in enumerate(lists):
        index[n, : len(nb)] = torch.as_tensor(nb, dtype=torch.long)
        mask[n, : len(nb)] = True
    return Adjacency(tuple(tuple(nb) for nb in lists), index, mask)


def build_adjacency(cmap: CandidateMap) -> Adjacency:
    by_start: dict[int, list[int]] = {}
    by_end: dict[int, list[int]] = {}
    for k, (i, j) in enumerate(cmap.pairs()):
        by_start.setdefault(i, []).append(k)
        by_end.setdefault(j, []).append(k)
    lists = [sorted(set(by_start[i]) | set(by_end[j])) for i, j in cmap.pairs()]
    return _from_lists(lists)


class GATLayer(nn.Module):
    """Scaled dot-product attention restricted to each node's neighbourhood, with a residual add.

    Logits are computed for all node pairs and non-edges are masked to -inf
    before the softmax, so only criss-cross neighbours receive weight.
    """

    def __init__(self, C: int, key_dim: int | None = None):
        super().__init__()
        key_dim = key_dim or C
        self.query = nn.Conv1d(C, key_dim, 1)
        # a key bias only shifts each softmax row by a constant, so it is omitted
        self.key = nn.Conv1d(C, key_dim, 1, bias=False)
        self.value = nn.Conv1d(C, C, 1)
        self.temperature = math.sqrt(key_dim)

    def attention(self, x: torch.Tensor, adj: Adjacency) -> torch.Tensor:
        """(B, N, N) attention weights; row n is zero outside nbrs(n)."""
        q = self.query(x)  # (B, K, N)
        k = self.key(x)
        logits = torch.bmm(q.transpose(1, 2), k) / self.temperature
        logits = logits.masked_fill(~adj.dense_mask, float("-inf"))
        return logits.softmax(dim=-1)

    def forward(self, x: torch.Tensor, adj: Adjacency) -> torch.Tensor:
        alpha = self.attention(x, adj)
        return x + torch.bmm(self.value(x), alpha.transpose(1, 2))


class RelationConstructor(nn.Module):
    """1x1 conv, stacked GAT layers over the criss-cross graph, 1x1 conv."""

    def __init__(self, C: int, layers: int = 2):
        super().__init__()
        self.conv_in = nn.Conv1d(C, C, 1)
        self.gat = nn.ModuleList(GATLayer(C) for _ in range(layers))
        self.conv_out = nn.Conv1d(C, C, 1)

    def forward(self, x: torch.Tensor, adj: Adjacency) -> torch.Tensor:
        x = self.conv_in(x)
        for layer in self.gat:
            x = layer(x, adj)
        return self.conv_out(x)


class Conv2dRelationHead(nn.Module):
    """Stacked masked 2D convolutions over the T x T lattice.

    Reference head of equal channel width used only for parameter-count
    comparison against :class:`RelationConstructor`.
    """

    def __init__(self, C: int, cmap: CandidateMap, layers: int = 4, kernel: int = 9):
        super().__init__()
        self.cmap = cmap
        self.convs = nn.ModuleList(nn.Conv2d(C, C, kernel, padding=kernel // 2) for _ in range(layers))
        self.register_buffer("valid", torch.as_tensor(np.array(cmap.valid)), persistent=False)

    def forward(self, x: torch.Tensor, adj: Adjacency | None = None) -> torch.Tensor:
        B, C, _ = x.shape
        T = self.cmap.T
        starts = torch.as_tensor(self.cmap.starts)
        ends = torch.as_tensor(self.cmap.ends)
        grid = x.new_zeros(B, C, T, T)
        grid[:, :, starts, ends] = x
        mask = self.valid.to(x.dtype)
        for conv in self.convs:
            grid = torch.relu(conv(grid)) * mask
        return grid[:, :, starts, ends]
