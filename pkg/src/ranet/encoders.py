"""Modality-wise encoders for snippet features and query tokens."""
from __future__ import annotations

import functools
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn
from torch.nn.utils.rnn import pack_padded_sequence, pad_packed_sequence

from .errors import DataError, InvalidArgument


@dataclass
class VideoFeatures:
    features: np.ndarray  # (n_v, C_in)
    duration: float
    id: str = ""

    def __post_init__(self):
        self.features = np.asarray(self.features)
        if self.features.ndim != 2 or self.features.shape[0] < 1:
            raise InvalidArgument(f"video {self.id!r}: expected (n_v >= 1, C_in) features, got {self.features.shape}")
        if not np.all(np.isfinite(self.features)):
            raise DataError(f"video {self.id!r}: non-finite features")

    @property
    def n_v(self) -> int:
        return self.features.shape[0]


@dataclass
class QueryTokens:
    ids: list[int]
    raw_text: str = ""

    @property
    def L(self) -> int:
        return len(self.ids)


@dataclass
class EncoderParams:
    C_in: int
    C: int = 64
    T: int = 16
    vocab_size: int = 1
    word_dim: int = 50
    recurrent_layers: int = 3
    lstm_hidden: int | None = None  # per direction; None means C // 2
    use_semantic_branch: bool = True
    use_position_embedding: bool = False
    knn: int = 4
    max_query_len: int = 32

    def __post_init__(self):
        if self.C <= 0 or self.T <= 0:
            raise InvalidArgument("C and T must be positive")


@functools.lru_cache(maxsize=256)
def _pooling_matrix(n_v: int, T: int) -> torch.Tensor:
    P = torch.zeros(n_v, T, dtype=torch.float64)
    for t in range(T):
        lo = (t * n_v) // T
        hi = max(((t + 1) * n_v) // T, lo + 1)
        P[lo:hi, t] = 1.0 / (hi - lo)
    return P


def pooling_matrix(n_v: int, T: int, dtype=torch.float32) -> torch.Tensor:
    """(n_v, T) averaging matrix; column t averages the rows of bucket t.

    Bucket t covers rows ``floor(t*n_v/T) .. floor((t+1)*n_v/T) - 1``, widened
    to one row when that range is empty (only happens for n_v < T).
    """
    return _pooling_matrix(n_v, T).to(dtype)


def bucket_rows(n_v: int, T: int) -> list[range]:
    out = []
    for t in range(T):
        lo = (t * n_v) // T
        out.append(range(lo, max(((t + 1) * n_v) // T, lo + 1)))
    return out


class GCBlock(nn.Module):
    """Reduced GC-NeXt block: a temporal branch plus a feature-space kNN branch.

    The semantic branch links every snippet to its ``k`` nearest other snippets
    (Euclidean distance) and aggregates ``W_a x_t + W_b mean_m(x_m - x_t)``.
    """

    def __init__(self, C: int, k: int = 4, semantic: bool = True):
        super().__init__()
        self.k = k
        self.semantic = semantic
        self.temporal = nn.Conv1d(C, C, 3, padding=1, padding_mode="replicate")
        if semantic:
            self.sem_self = nn.Conv1d(C, C, 1)
            self.sem_diff = nn.Conv1d(C, C, 1, bias=False)

    def neighbours(self, x: torch.Tensor) -> torch.Tensor:
        # x: (B, C, T) -> (B, T, k) indices, self excluded
        T = x.shape[-1]
        with torch.no_grad():
            pts = x.transpose(1, 2)
            dist = torch.cdist(pts, pts)
            dist = dist + torch.eye(T, dtype=x.dtype) * torch.finfo(x.dtype).max
            k = min(self.k, T - 1)
            return dist.topk(k, dim=-1, largest=False, sorted=True).indices

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        out = self.temporal(x)
        if self.semantic and x.shape[-1] > 1:
            idx = self.neighbours(x)  # (B, T, k)
            B, C, T = x.shape
            gathered = torch.gather(
                x.unsqueeze(2).expand(B, C, T, T), 3, idx.unsqueeze(1).expand(B, C, T, idx.shape[-1])
            )  # (B, C, T, k)
            diff = (gathered - x.unsqueeze(-1)).mean(dim=-1)
            out = out + self.sem_self(x) + self.sem_diff(diff)
        elif self.semantic:
            out = out + self.sem_self(x)
        return F.relu(out)


class VideoEncoder(nn.Module):
    def __init__(self, params: EncoderParams):
        super().__init__()
        self.params = params
        self.T = params.T
        self.mapping = nn.Conv1d(params.C_in, params.C, 3, padding=1, padding_mode="replicate")
        self.gc = GCBlock(params.C, params.knn, params.use_semantic_branch)
        if params.use_position_embedding:
            self.position = nn.Parameter(torch.randn(params.C, params.T) * 0.02)
        else:
            self.register_parameter("position", None)

    def pool(self, x: torch.Tensor, lengths: Sequence[int]) -> torch.Tensor:
        P = torch.zeros(x.shape[0], x.shape[-1], self.T, dtype=x.dtype, device=x.device)
        for b, n in enumerate(lengths):
            P[b, :n] = pooling_matrix(int(n), self.T, dtype=x.dtype)
        return torch.bmm(x, P)

    def forward(self, feats: torch.Tensor, lengths: Sequence[int] | None = None) -> torch.Tensor:
        """``feats``: (B, n_max, C_in), rows past each length edge-padded.

        Returns (B, C, T).
        """
        if feats.shape[1] < 1:
            raise InvalidArgument("empty video")
        if lengths is None:
            lengths = [feats.shape[1]] * feats.shape[0]
        x = self.mapping(feats.transpose(1, 2))
        x = self.pool(x, lengths)
        x = self.gc(x)
        if self.position is not None:
            x = x + self.position
        return x


class QueryEncoder(nn.Module):
    def __init__(self, params: EncoderParams, embeddings: np.ndarray | torch.Tensor | None = None):
        super().__init__()
        self.params = params
        hidden = params.lstm_hidden or params.C // 2
        if embeddings is not None:
            emb = torch.as_tensor(np.asarray(embeddings), dtype=torch.get_default_dtype())
            self.embedding = nn.Embedding.from_pretrained(emb, freeze=False)
        else:
            # unit-variance rows, roughly the per-coordinate scale of GloVe vectors
            self.embedding = nn.Embedding(params.vocab_size, params.word_dim)
        self.lstm = nn.LSTM(
            self.embedding.embedding_dim, hidden, num_layers=params.recurrent_layers,
            batch_first=True, bidirectional=True,
        )
        self.out = nn.Linear(2 * hidden, params.C) if 2 * hidden != params.C else None

    def forward(self, ids: torch.Tensor, lengths: Sequence[int] | None = None) -> torch.Tensor:
        """``ids``: (B, L_max) token ids.  Returns (B, C, L_max); padded columns are zero."""
        V = self.embedding.num_embeddings
        if ids.numel() and (int(ids.max()) >= V or int(ids.min()) < 0):
            raise DataError(f"token id out of vocabulary of size {V}")
        if lengths is None:
            lengths = [ids.shape[1]] * ids.shape[0]
        emb = self.embedding(ids)
        packed = pack_padded_sequence(emb, torch.as_tensor(list(lengths)), batch_first=True, enforce_sorted=False)
        h, _ = self.lstm(packed)
        h, _ = pad_packed_sequence(h, batch_first=True, total_length=ids.shape[1])
        if self.out is not None:
            h = self.out(h)
        return h.transpose(1, 2)


def read_vocab(path: str | Path) -> list[str]:
    with open(path, encoding="utf-8") as fh:
        return [line.rstrip("\n") for line in fh if line.strip()]


def load_embedding_table(path: str | Path, vocab: Sequence[str], seed: int = 0) -> np.ndarray:
    """Read a GloVe-style text file into a (len(vocab), D) float32 table.

    Tokens absent from the file get rows from a seeded uniform(-0.1, 0.1).
    """
    found: dict[str, np.ndarray] = {}
    wanted = set(vocab)
    dim = None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.rstrip().split(" ")
            if not parts or parts == [""]:
                continue
            if len(parts) < 2:
                raise DataError(f"{path}:{lineno}: malformed embedding line")
            try:
                vec = np.asarray([float(x) for x in parts[1:]], dtype=np.float32)
            except ValueError as e:
                raise DataError(f"{path}:{lineno}: malformed embedding line ({e})") from None
            if dim is None:
                dim = vec.shape[0]
            elif vec.shape[0] != dim:
                raise DataError(f"{path}:{lineno}: expected {dim} values, got {vec.shape[0]}")
            if parts[0] in wanted:
                found[parts[0]] = vec
    if dim is None:
        raise DataError(f"{path}: no embedding vectors")
    rng = np.random.default_rng(seed)
    table = rng.uniform(-0.1, 0.1, size=(len(vocab), dim)).astype(np.float32)
    for row, tok in enumerate(vocab):
        if tok in found:
            table[row] = found[tok]
    return table
