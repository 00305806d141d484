"""Synthetic grounding data, on-disk dataset format and batch assembly.

Dataset directory layout::

    manifest.json        {"features_dir", "annotations", "vocab", "embedding_file"?}
    annotations.jsonl    {"video_id", "query", "t_s", "t_e", "duration"} per line
    vocab.txt            one token per line, line number = id
    features/<id>.bin    little-endian float32, row-major (n_v, C_in)
    features/<id>.json   {"shape": [n_v, C_in], "dtype": "<f4"}
    layout.jsonl         generator log: every event span placed in each video
"""
from __future__ import annotations

import json
import random
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np
import torch

from .candidate_map import CandidateMap, TimeSpan, candidate_spans
from .encoders import QueryTokens, VideoFeatures, read_vocab
from .errors import DataError, GenerationError
from .evaluation import iou_matrix
from .ranker import LabelMap, scale_labels

EVENTS = ("jump", "run", "swim", "throw", "climb", "dance")
MODIFIERS = ("long", "short", "first", "second")
FILLER = ("<pad>", "the")


@dataclass(frozen=True)
class AnnotationRecord:
    video_id: str
    query_text: str
    gt_span: TimeSpan
    duration: float
    query_id: str = ""

    def __post_init__(self):
        if self.duration <= 0 or self.gt_span.t_e > self.duration + 1e-9:
            raise DataError(
                f"{self.video_id}: span [{self.gt_span.t_s}, {self.gt_span.t_e}] outside video of {self.duration}s"
            )

    def to_json(self) -> dict:
        return {
            "video_id": self.video_id,
            "query_id": self.query_id,
            "query": self.query_text,
            "t_s": self.gt_span.t_s,
            "t_e": self.gt_span.t_e,
            "duration": self.duration,
        }


@dataclass(frozen=True)
class Sample:
    video: VideoFeatures
    query: QueryTokens
    record: AnnotationRecord


@dataclass
class SyntheticSpec:
    n_samples: int = 600
    T_raw: int = 32
    C_in: int = 32
    events: Sequence[str] = EVENTS
    modifiers: Sequence[str] = MODIFIERS
    noise_std: float = 0.05
    distractor_rate: float = 0.7
    seed: int = 0
    align: int = 2  # spans start and end on multiples of this many raw snippets
    short_lengths: Sequence[int] = (6, 8)
    long_lengths: Sequence[int] = (12, 14, 16)
    clutter_spans: int = 1
    gap: int = 2
    snippet_seconds: float = 1.0
    prototype_seed: int | None = None  # event feature prototypes; defaults to seed

    def __post_init__(self):
        if not 0.0 <= self.distractor_rate <= 1.0:
            raise GenerationError("distractor_rate must lie in [0, 1]")
        if self.noise_std < 0:
            raise GenerationError("noise_std must be non-negative")
        if len(self.events) < 2:
            raise GenerationError("need at least two event types")

    @property
    def vocab(self) -> list[str]:
        return list(FILLER) + list(self.events) + list(self.modifiers)


def event_prototypes(spec: SyntheticSpec) -> np.ndarray:
    """(n_events + 1, C_in) unit-norm prototypes; the last row is background."""
    seed = spec.seed if spec.prototype_seed is None else spec.prototype_seed
    rng = np.random.default_rng([seed, 7919])
    protos = rng.standard_normal((len(spec.events) + 1, spec.C_in))
    return protos / np.linalg.norm(protos, axis=1, keepdims=True)


def _place(rng: random.Random, lengths: list[int], spec: SyntheticSpec) -> list[int]:
    """Non-overlapping aligned start positions for spans of the given lengths, in the given order."""
    slack = spec.T_raw - sum(lengths) - spec.gap * (len(lengths) - 1)
    if slack < 0:
        raise GenerationError(f"spans {lengths} do not fit in {spec.T_raw} snippets")
    # distribute free snippets (in units of align) into len+1 gaps
    units = slack // spec.align
    cuts = sorted(rng.randint(0, units) for _ in lengths)
    starts, pos, prev = [], 0, 0
    for length, cut in zip(lengths, cuts):
        pos += (cut - prev) * spec.align
        prev = cut
        starts.append(pos)
        pos += length + spec.gap
    return starts


def _sample_layout(rng: random.Random, spec: SyntheticSpec, distract: bool):
    n_ev = len(spec.events)
    event = rng.randrange(n_ev)
    modifier = rng.choice(list(spec.modifiers))
    mid_lengths = sorted(set(spec.short_lengths) | set(spec.long_lengths))
    if distract:
        if modifier in ("long", "short"):
            pair = [rng.choice(list(spec.short_lengths)), rng.choice(list(spec.long_lengths))]
            rng.shuffle(pair)
        else:
            fitting = [(a, b) for a in mid_lengths for b in mid_lengths if a + b + spec.gap <= spec.T_raw]
            if not fitting:
                raise GenerationError(f"two spans do not fit in {spec.T_raw} snippets")
            pair = list(rng.choice(fitting))
        spans = [(event, pair[0]), (event, pair[1])]
    else:
        spans = [(event, rng.choice(mid_lengths))]
    others = [e for e in range(n_ev) if e != event]
    for _ in range(spec.clutter_spans):
        spans.append((rng.choice(others), rng.choice(list(spec.short_lengths))))
    rng.shuffle(spans)
    # drop clutter that does not fit, never the queried spans
    while True:
        lengths = [ln for _, ln in spans]
        try:
            starts = _place(rng, lengths, spec)
            break
        except GenerationError:
            clutter = [k for k, (e, _) in enumerate(spans) if e != event]
            if not clutter:
                raise
            spans.pop(clutter[-1])
    placed = [(e, s, s + ln) for (e, ln), s in zip(spans, starts)]
    same = [p for p in placed if p[0] == event]
    if len(same) == 1:
        target = same[0]
    elif modifier == "long":
        target = max(same, key=lambda p: p[2] - p[1])
    elif modifier == "short":
        target = min(same, key=lambda p: p[2] - p[1])
    elif modifier == "first":
        target = min(same, key=lambda p: p[1])
    else:
        target = max(same, key=lambda p: p[1])
    return event, modifier, placed, target


def resolve_query(placed, event: int, modifier: str):
    """Span selected by (event, modifier) among placed spans; None when ambiguous or absent."""
    same = sorted((p for p in placed if p[0] == event), key=lambda p: p[1])
    if not same:
        return None
    if len(same) == 1:
        return same[0]
    if len(same) != 2:
        return None
    a, b = same
    if modifier == "first":
        return a
    if modifier == "second":
        return b
    la, lb = a[2] - a[1], b[2] - b[1]
    if la == lb:
        return None
    longer, shorter = (a, b) if la > lb else (b, a)
    return longer if modifier == "long" else shorter


def generate_synthetic(spec: SyntheticSpec, out_dir: str | Path) -> Path:
    """Write a synthetic dataset to ``out_dir`` and return the manifest path."""
    out = Path(out_dir)
    feat_dir = out / "features"
    feat_dir.mkdir(parents=True, exist_ok=True)
    if spec.T_raw < max(spec.long_lengths, default=0) or spec.T_raw < 1:
        raise GenerationError(f"T_raw={spec.T_raw} cannot hold spans of length {max(spec.long_lengths)}")
    rng = random.Random(spec.seed)
    noise_rng = np.random.default_rng(spec.seed)
    protos = event_prototypes(spec)
    background = len(spec.events)
    duration = spec.T_raw * spec.snippet_seconds
    ann_lines, layout_lines = [], []
    width = len(str(max(spec.n_samples - 1, 0)))
    for n in range(spec.n_samples):
        distract = rng.random() < spec.distractor_rate
        event, modifier, placed, target = _sample_layout(rng, spec, distract)
        labels = np.full(spec.T_raw, background)
        for e, s, t in placed:
            labels[s:t] = e
        feats = protos[labels] + spec.noise_std * noise_rng.standard_normal((spec.T_raw, spec.C_in))
        vid = f"v{n:0{width}d}"
        feats = feats.astype("<f4")
        feats.tofile(feat_dir / f"{vid}.bin")
        (feat_dir / f"{vid}.json").write_text(json.dumps({"shape": list(feats.shape), "dtype": "<f4"}))
        record = AnnotationRecord(
            vid,
            f"the {modifier} {spec.events[event]}",
            TimeSpan(target[1] * spec.snippet_seconds, target[2] * spec.snippet_seconds),
            duration,
            query_id=f"q{n:0{width}d}",
        )
        ann_lines.append(json.dumps(record.to_json()))
        layout_lines.append(json.dumps({
            "video_id": vid,
            "event": spec.events[event],
            "modifier": modifier,
            "distractor": distract,
            "spans": [[spec.events[e], s, t] for e, s, t in placed],
        }))
    (out / "annotations.jsonl").write_text("".join(line + "\n" for line in ann_lines))
    (out / "layout.jsonl").write_text("".join(line + "\n" for line in layout_lines))
    (out / "vocab.txt").write_text("".join(tok + "\n" for tok in spec.vocab))
    spec_dict = asdict(spec)
    spec_dict = {k: list(v) if isinstance(v, tuple) else v for k, v in spec_dict.items()}
    (out / "spec.json").write_text(json.dumps(spec_dict, indent=1))
    manifest = {"features_dir": "features", "annotations": "annotations.jsonl", "vocab": "vocab.txt"}
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=1))
    return path


def generate_splits(spec: SyntheticSpec, out_dir: str | Path, sizes: dict[str, int]) -> dict[str, Path]:
    """One dataset per split, each sampled from its own seed derived from ``spec.seed``.

    All splits share the event prototypes of ``spec``.
    """
    paths = {}
    proto = spec.seed if spec.prototype_seed is None else spec.prototype_seed
    for k, (name, n) in enumerate(sizes.items()):
        split_spec = SyntheticSpec(
            **{**asdict(spec), "n_samples": n, "seed": spec.seed * 1000 + k, "prototype_seed": proto}
        )
        paths[name] = generate_synthetic(split_spec, Path(out_dir) / name)
    return paths


def read_features(path: str | Path) -> np.ndarray:
    path = Path(path)
    sidecar = path.with_suffix(".json")
    if not path.exists() or not sidecar.exists():
        raise DataError(f"missing feature file {path}")
    meta = json.loads(sidecar.read_text())
    arr = np.fromfile(path, dtype=np.dtype(meta.get("dtype", "<f4")))
    shape = tuple(meta["shape"])
    if arr.size != int(np.prod(shape)):
        raise DataError(f"{path}: {arr.size} values do not match shape {shape}")
    return arr.reshape(shape)


def write_features(path: str | Path, feats: np.ndarray) -> None:
    path = Path(path)
    feats = np.asarray(feats, dtype="<f4")
    feats.tofile(path)
    path.with_suffix(".json").write_text(json.dumps({"shape": list(feats.shape), "dtype": "<f4"}))


def tokenize(text: str, vocab_index: dict[str, int], unk: str | None = None) -> list[int]:
    ids = []
    for tok in text.split():
        if tok in vocab_index:
            ids.append(vocab_index[tok])
        elif unk is not None and unk in vocab_index:
            ids.append(vocab_index[unk])
        else:
            raise DataError(f"token {tok!r} not in vocabulary")
    return ids


@dataclass
class Dataset:
    samples: list[Sample]
    vocab: list[str]
    root: Path
    manifest: dict = field(default_factory=dict)

    def __iter__(self) -> Iterator[Sample]:
        return iter(self.samples)

    def __len__(self) -> int:
        return len(self.samples)

    def __getitem__(self, k):
        return self.samples[k]

    @property
    def embedding_file(self) -> Path | None:
        name = self.manifest.get("embedding_file")
        return (self.root / name) if name else None


def load_dataset(manifest_path: str | Path, shuffle_seed: int | None = None, unk: str | None = None) -> Dataset:
    manifest_path = Path(manifest_path)
    if manifest_path.is_dir():
        manifest_path = manifest_path / "manifest.json"
    if not manifest_path.exists():
        raise DataError(f"missing manifest {manifest_path}")
    root = manifest_path.parent
    manifest = json.loads(manifest_path.read_text())
    for key in ("features_dir", "annotations", "vocab"):
        if key not in manifest:
            raise DataError(f"manifest lacks {key!r}")
    vocab_path = root / manifest["vocab"]
    ann_path = root / manifest["annotations"]
    for p in (vocab_path, ann_path):
        if not p.exists():
            raise DataError(f"missing file {p}")
    vocab = read_vocab(vocab_path)
    index = {tok: k for k, tok in enumerate(vocab)}
    feat_dir = root / manifest["features_dir"]
    samples = []
    cache: dict[str, np.ndarray] = {}
    with open(ann_path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                a = json.loads(line)
                vid = a["video_id"]
                rec = AnnotationRecord(
                    vid, a["query"], TimeSpan(float(a["t_s"]), float(a["t_e"])), float(a["duration"]),
                    query_id=a.get("query_id", f"{vid}#{lineno}"),
                )
            except (KeyError, ValueError, json.JSONDecodeError) as e:
                raise DataError(f"{ann_path}:{lineno}: bad annotation ({e})") from None
            if vid not in cache:
                cache[vid] = read_features(feat_dir / f"{vid}.bin")
            video = VideoFeatures(cache[vid], rec.duration, vid)
            query = QueryTokens(tokenize(rec.query_text, index, unk), rec.query_text)
            samples.append(Sample(video, query, rec))
    if shuffle_seed is not None:
        random.Random(shuffle_seed).shuffle(samples)
    return Dataset(samples, vocab, root, manifest)


def make_labels(record: AnnotationRecord, cmap: CandidateMap, thresholds: tuple[float, float]) -> LabelMap:
    gt = record.gt_span
    if gt.t_s < 0 or gt.t_e > record.duration + 1e-9:
        raise DataError(f"{record.video_id}: ground truth outside video")
    theta = iou_matrix(candidate_spans(cmap, record.duration), gt)
    return scale_labels(np.clip(theta, 0.0, 1.0), *thresholds)


@dataclass
class Batch:
    feats: torch.Tensor  # (B, n_max, C_in), rows past each length repeat the last real row
    feat_lengths: list[int]
    ids: torch.Tensor  # (B, L_max), zero padded
    id_lengths: list[int]
    labels: torch.Tensor  # (B, N)
    records: list[AnnotationRecord]
    cmap: CandidateMap

    def __len__(self) -> int:
        return len(self.records)

    def unpad(self) -> list[tuple[np.ndarray, list[int]]]:
        return [
            (self.feats[b, : self.feat_lengths[b]].numpy(), self.ids[b, : self.id_lengths[b]].tolist())
            for b in range(len(self))
        ]


def collate(
    samples: Sequence[Sample],
    cmap: CandidateMap,
    thresholds: tuple[float, float] = (0.5, 1.0),
    labels: Sequence[np.ndarray] | None = None,
    dtype=torch.float32,
) -> Batch:
    n_max = max(s.video.n_v for s in samples)
    l_max = max(s.query.L for s in samples)
    C_in = samples[0].video.features.shape[1]
    feats = np.empty((len(samples), n_max, C_in), dtype=np.float64)
    ids = np.zeros((len(samples), l_max), dtype=np.int64)
    for b, s in enumerate(samples):
        f = s.video.features
        feats[b, : f.shape[0]] = f
        feats[b, f.shape[0]:] = f[-1]
        ids[b, : s.query.L] = s.query.ids
    if labels is None:
        labels = [make_labels(s.record, cmap, thresholds).g for s in samples]
    return Batch(
        torch.as_tensor(feats, dtype=dtype),
        [s.video.n_v for s in samples],
        torch.as_tensor(ids),
        [s.query.L for s in samples],
        torch.as_tensor(np.stack(labels), dtype=dtype),
        [s.record for s in samples],
        cmap,
    )
