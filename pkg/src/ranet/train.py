"""Training loop, evaluation, checkpoints and the component ablation harness."""
from __future__ import annotations

import copy
import csv
import json
import logging
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from .candidate_map import build_candidate_map
from .config import ExperimentConfig
from .data import Dataset, collate, load_dataset, make_labels
from .encoders import EncoderParams, load_embedding_table
from .errors import InvalidArgument, TrainingError
from .evaluation import MetricReport, build_report
from .model import RaNet, parameter_report
from .ranker import Prediction, bce_loss_with_logits, rank_choices

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1
VAL_MUS = (0.3, 0.5, 0.7)


def seed_everything(seed: int, deterministic: bool = True) -> None:
    random.seed(seed)
    np.random.seed(seed % 2**32)
    torch.manual_seed(seed)
    torch.use_deterministic_algorithms(deterministic, warn_only=True)


def build_model(cfg: ExperimentConfig, C_in: int, vocab: Sequence[str], embeddings: np.ndarray | None = None) -> RaNet:
    enc = EncoderParams(
        C_in=C_in, C=cfg.C, T=cfg.T, vocab_size=len(vocab), word_dim=cfg.word_dim,
        recurrent_layers=cfg.recurrent_layers, lstm_hidden=cfg.lstm_hidden or None,
        use_semantic_branch=cfg.use_semantic_branch, use_position_embedding=cfg.use_position_embedding,
        knn=cfg.knn,
    )
    return RaNet(
        enc, build_candidate_map(cfg.T, cfg.strategy), cfg.psi, cfg.use_f1, cfg.use_f2, cfg.relation,
        cfg.gat_layers, cfg.eps, cfg.r_softmax, embeddings,
    )


@dataclass
class TrainResult:
    model: RaNet
    checkpoint: Path | None
    log_path: Path | None
    final_loss: float
    best_epoch: int
    best_val: dict[str, float] = field(default_factory=dict)
    params: dict[str, int] = field(default_factory=dict)


def _batches(n: int, batch_size: int, gen: torch.Generator, shuffle: bool = True):
    order = torch.randperm(n, generator=gen).tolist() if shuffle else list(range(n))
    for k in range(0, n, batch_size):
        yield order[k:k + batch_size]


def predict(model: RaNet, dataset: Dataset, K: int = 5, batch_size: int = 64) -> list[list[Prediction]]:
    model.eval()
    out = []
    dtype = next(model.parameters()).dtype
    with torch.no_grad():
        for k in range(0, len(dataset), batch_size):
            chunk = dataset.samples[k:k + batch_size]
            batch = collate(chunk, model.cmap, labels=[np.zeros(model.cmap.N)] * len(chunk), dtype=dtype)
            scores = model(batch.feats, batch.feat_lengths, batch.ids, batch.id_lengths).scores
            for b, s in enumerate(chunk):
                out.append(rank_choices(scores[b], model.cmap, s.record.duration, K))
    return out


def evaluate_model(model: RaNet, dataset: Dataset, ks=(1, 5), mus=VAL_MUS) -> tuple[MetricReport, list[list[Prediction]]]:
    preds = predict(model, dataset, max(ks))
    gts = [s.record.gt_span for s in dataset]
    return build_report(preds, gts, ks, mus), preds


def _parameter_norms(model: RaNet) -> dict[str, float]:
    return {name: float(p.detach().norm()) for name, p in model.named_parameters()}


def train(cfg: ExperimentConfig, save: bool = True, train_set: Dataset | None = None,
          val_set: Dataset | None = None) -> TrainResult:
    seed_everything(cfg.seed, cfg.deterministic)
    if cfg.threads:
        torch.set_num_threads(cfg.threads)
    unk = cfg.unk_token or None
    train_set = train_set or load_dataset(cfg.train_manifest, unk=unk)
    if val_set is None and cfg.val_manifest:
        val_set = load_dataset(cfg.val_manifest, unk=unk)
    if len(train_set) == 0:
        raise InvalidArgument("empty training set")
    emb_path = cfg.embedding_file or train_set.embedding_file
    embeddings = load_embedding_table(emb_path, train_set.vocab, cfg.seed) if emb_path else None
    C_in = train_set[0].video.features.shape[1]
    model = build_model(cfg, C_in, train_set.vocab, embeddings)
    cmap = model.cmap
    labels = [make_labels(s.record, cmap, (cfg.theta_min, cfg.theta_max)).g for s in train_set]
    opt = torch.optim.Adam(model.parameters(), lr=cfg.lr)
    gen = torch.Generator().manual_seed(cfg.seed)

    out_dir = cfg.output_dir if save else None
    rows = []
    best_state, best_epoch, best_val = copy.deepcopy(model.state_dict()), 0, {}
    best_key = -1.0
    loss_value = float("nan")
    for epoch in range(1, cfg.epochs + 1):
        model.train()
        losses = []
        for idx in _batches(len(train_set), cfg.batch_size, gen):
            batch = collate([train_set[i] for i in idx], cmap, labels=[labels[i] for i in idx])
            out = model(batch.feats, batch.feat_lengths, batch.ids, batch.id_lengths)
            loss = bce_loss_with_logits(out.logits, batch.labels)
            if not torch.isfinite(loss):
                norms = _parameter_norms(model)
                worst = sorted(norms.items(), key=lambda kv: -kv[1] if np.isfinite(kv[1]) else -np.inf)[:5]
                raise TrainingError(
                    f"non-finite loss at epoch {epoch}; batch videos "
                    f"{[r.video_id for r in batch.records]}; largest parameter norms {worst}"
                )
            opt.zero_grad()
            loss.backward()
            opt.step()
            losses.append(loss.item())
        loss_value = losses[-1]
        row = {"epoch": epoch, "mean_loss": float(np.mean(losses)), "last_loss": loss_value}
        if val_set is not None and len(val_set):
            report, _ = evaluate_model(model, val_set, ks=(1,), mus=VAL_MUS)
            for mu in VAL_MUS:
                row[f"val_R1@{mu}"] = report.get(1, mu)
            key = row["val_R1@0.5"]
        else:
            key = -row["mean_loss"]
        if key > best_key:
            best_key, best_epoch = key, epoch
            best_state = copy.deepcopy(model.state_dict())
            best_val = {k: v for k, v in row.items() if k.startswith("val_")}
        rows.append(row)
        log.info("epoch %d %s", epoch, row)

    final_state = model.state_dict()
    if cfg.epochs > 0:
        model.load_state_dict(best_state)
    params = parameter_report(model)
    result = TrainResult(model, None, None, loss_value, best_epoch, best_val, params)
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        result.log_path = out_dir / "train_log.csv"
        with open(result.log_path, "w", newline="") as fh:
            fields = list(rows[0]) if rows else ["epoch", "mean_loss", "last_loss"]
            w = csv.DictWriter(fh, fieldnames=fields)
            w.writeheader()
            w.writerows(rows)
        result.checkpoint = out_dir / "checkpoint.pt"
        save_checkpoint(result.checkpoint, model, cfg, train_set.vocab, C_in, best_epoch, loss_value, final_state)
        (out_dir / "params.json").write_text(json.dumps(params, indent=1))
    return result


def save_checkpoint(path, model: RaNet, cfg: ExperimentConfig, vocab, C_in: int, epoch: int,
                    final_loss: float, final_state=None) -> None:
    torch.save({
        "version": CHECKPOINT_VERSION,
        "config": cfg.to_dict(),
        "seed": cfg.seed,
        "vocab": list(vocab),
        "C_in": C_in,
        "epoch": epoch,
        "final_loss": final_loss,
        "state_dict": model.state_dict(),
        "final_state_dict": final_state,
    }, path)


def load_checkpoint(path, cfg: ExperimentConfig | None = None) -> tuple[RaNet, ExperimentConfig, dict]:
    blob = torch.load(path, map_location="cpu", weights_only=False)
    if blob.get("version") != CHECKPOINT_VERSION:
        raise InvalidArgument(f"unsupported checkpoint version {blob.get('version')}")
    saved = ExperimentConfig.from_dict(blob["config"])
    cfg = cfg or saved
    model = build_model(cfg, blob["C_in"], blob["vocab"])
    try:
        model.load_state_dict(blob["state_dict"])
    except RuntimeError as e:
        raise InvalidArgument(f"checkpoint does not match config: {e}") from None
    return model, cfg, blob


def write_prediction_dump(path, dataset: Dataset, preds: list[list[Prediction]]) -> None:
    with open(path, "w") as fh:
        for s, p in zip(dataset, preds):
            fh.write(json.dumps({
                "video_id": s.record.video_id,
                "query_id": s.record.query_id,
                "predictions": [x.to_dict() for x in p],
            }) + "\n")


def read_prediction_dump(path) -> dict[tuple[str, str], list[tuple[float, float]]]:
    out = {}
    with open(path) as fh:
        for line in fh:
            if line.strip():
                d = json.loads(line)
                out[(d["video_id"], d["query_id"])] = [(p["t_s"], p["t_e"]) for p in d["predictions"]]
    return out


def evaluate(cfg: ExperimentConfig, checkpoint, split_manifest: str | None = None,
             out_dir: Path | None = None) -> MetricReport:
    model, cfg, _ = load_checkpoint(checkpoint, cfg)
    manifest = split_manifest or cfg.test_manifest
    dataset = load_dataset(manifest, unk=cfg.unk_token or None)
    report, preds = evaluate_model(model, dataset, tuple(cfg.eval_ks), tuple(cfg.eval_mus))
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        write_prediction_dump(out_dir / "predictions.jsonl", dataset, preds)
        report.write_metrics_csv(out_dir / "metrics.csv")
        report.write_sweep_csv(out_dir / "sweep.csv")
    return report


ABLATION_ROWS = (
    ("F1", dict(use_f1=True, use_f2=False, use_relation=False)),
    ("F2", dict(use_f1=False, use_f2=True, use_relation=False)),
    ("F1+F2", dict(use_f1=True, use_f2=True, use_relation=False)),
    ("F1+R", dict(use_f1=True, use_f2=False, use_relation=True)),
    ("F1+F2+R", dict(use_f1=True, use_f2=True, use_relation=True)),
)
PSI_ROWS = tuple((k, dict(psi=k)) for k in ("pooling", "sampling", "addition", "concatenation"))


@dataclass
class AblationRow:
    name: str
    report: MetricReport
    final_loss: float
    params: int


def run_ablation(cfg: ExperimentConfig, rows=ABLATION_ROWS, out_csv: Path | None = None,
                 datasets: tuple[Dataset, Dataset | None, Dataset] | None = None) -> list[AblationRow]:
    """Train and test one model per row, all from the same seed."""
    unk = cfg.unk_token or None
    if datasets is None:
        datasets = (
            load_dataset(cfg.train_manifest, unk=unk),
            load_dataset(cfg.val_manifest, unk=unk) if cfg.val_manifest else None,
            load_dataset(cfg.test_manifest, unk=unk),
        )
    train_set, val_set, test_set = datasets
    results = []
    for name, changes in rows:
        row_cfg = cfg.replace(**changes, name=f"{cfg.name}-{name}")
        res = train(row_cfg, save=False, train_set=train_set, val_set=val_set)
        report, _ = evaluate_model(res.model, test_set, tuple(cfg.eval_ks), tuple(cfg.eval_mus))
        results.append(AblationRow(name, report, res.final_loss, res.params["total"]))
        log.info("ablation %s: %s", name, report.table)
    if out_csv is not None:
        write_ablation_csv(out_csv, results)
    return results


def write_ablation_csv(path, rows: list[AblationRow]) -> None:
    keys = sorted(rows[0].report.table) if rows else []
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["row"] + [f"R{k}@{mu:.1f}" for k, mu in keys] + ["final_loss", "params"])
        for r in rows:
            w.writerow([r.name] + [f"{r.report.table[key]:.2f}" for key in keys]
                       + [f"{r.final_loss:.6f}", r.params])
