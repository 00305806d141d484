"""Full relation-aware grounding network."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .candidate_map import CandidateMap, InitKind, build_candidate_map, init_choice_features
from .encoders import EncoderParams, QueryEncoder, VideoEncoder
from .interactor import ChoiceQueryInteractor, FusionOutput, token_mask
from .ranker import AnswerRanker
from .relation_graph import Adjacency, Conv2dRelationHead, RelationConstructor, build_adjacency


@dataclass
class ModelOutput:
    logits: torch.Tensor  # (B, N)
    fusion: FusionOutput
    related: torch.Tensor | None

    @property
    def scores(self) -> torch.Tensor:
        return torch.sigmoid(self.logits)


class RaNet(nn.Module):
    def __init__(
        self,
        enc: EncoderParams,
        cmap: CandidateMap | None = None,
        psi: InitKind | str = InitKind.CONCATENATION,
        use_f1: bool = True,
        use_f2: bool = True,
        relation: str = "gat",
        gat_layers: int = 2,
        eps: float = 1e-6,
        r_softmax: bool = False,
        embeddings: np.ndarray | None = None,
    ):
        super().__init__()
        self.cmap = cmap or build_candidate_map(enc.T)
        if self.cmap.T != enc.T:
            raise ValueError(f"candidate map has T={self.cmap.T}, encoder T={enc.T}")
        self.adj: Adjacency = build_adjacency(self.cmap)
        self.psi = InitKind(psi)
        C = enc.C
        C_choice = 2 * C if self.psi is InitKind.CONCATENATION else C
        self.video = VideoEncoder(enc)
        self.query = QueryEncoder(enc, embeddings)
        self.interactor = ChoiceQueryInteractor(C, C_choice, use_f1, use_f2, eps, r_softmax)
        if relation == "gat":
            self.relation = RelationConstructor(C, gat_layers)
        elif relation == "conv2d":
            self.relation = Conv2dRelationHead(C, self.cmap)
        elif relation == "none":
            self.relation = None
        else:
            raise ValueError(f"unknown relation kind {relation!r}")
        self.ranker = AnswerRanker(2 * C if self.relation is not None else C)

    def forward(self, feats, feat_lengths, ids, id_lengths) -> ModelOutput:
        v = self.video(feats, feat_lengths)
        q = self.query(ids, id_lengths)
        fa = init_choice_features(v, self.cmap, self.psi)
        fusion = self.interactor(q, fa, token_mask(id_lengths, ids.shape[1], ids.device))
        related = self.relation(fusion.fused, self.adj) if self.relation is not None else None
        return ModelOutput(self.ranker.logits(fusion.fused, related), fusion, related)


def count_parameters(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters())


def parameter_report(model: RaNet) -> dict[str, int]:
    parts = {
        "video_encoder": model.video,
        "query_encoder": model.query,
        "interactor": model.interactor,
        "ranker": model.ranker,
    }
    out = {name: count_parameters(m) for name, m in parts.items()}
    out["relation"] = count_parameters(model.relation) if model.relation is not None else 0
    out["total"] = count_parameters(model)
    return out
